import math

import numpy as np
import pytest
from scipy.special import beta as beta_fn

from bubblelab.grid import build_ball_rule, unit_sphere_area
from bubblelab.fields import Bubble, ConstantField, aubin_talenti, ball_rule_for
from bubblelab.concentration import (
    BudgetError,
    QuantizationConfig,
    bubble_energy_constant,
    bubble_energy_limit,
    bubbling_energy,
    detect_sigma,
    energy_in,
    make_sequence,
    neck_energy,
    quantization_report,
    read_sequence_spec,
    report_to_json,
    rescale,
    scaled_measure,
    theta_estimate,
)


def lambda0_oracle(n: int) -> float:
    """Closed form via beta functions, independent of the quadrature path."""
    c2 = (n * (n - 2)) ** ((n - 2) / 2)
    return (
        unit_sphere_area(n)
        * c2
        * (n - 2)
        * 0.5
        * ((n - 2) * beta_fn((n + 2) / 2, (n - 2) / 2) + n * beta_fn(n / 2, n / 2))
    )


def single_bubble_seq(n=3, base=4.0, budget=1e4):
    return make_sequence([(np.zeros(n), base, 1.0)], budget=budget, n=n)


# ---------------------------------------------------------------------------
# the bubble energy constant
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_bubble_constant_matches_closed_form(n):
    lam = bubble_energy_constant(n)
    assert lam.value == pytest.approx(lambda0_oracle(n), rel=1e-10)
    assert lam.error_bound < 1e-6 * lam.value


def test_bubble_constant_stable_under_doubling():
    a = bubble_energy_constant(3, radial_order=32)
    b = bubble_energy_constant(3, radial_order=64)
    assert b.value == pytest.approx(a.value, rel=1e-6)


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------


def test_make_sequence_valid_specs():
    seq = single_bubble_seq()
    assert seq.scales(0)[0] == 1.0
    assert seq.scales(3)[0] == pytest.approx(4.0**-3)
    two = make_sequence(
        [(np.zeros(3), 4.0, 1.0), (np.zeros(3), 16.0, 1.0)], budget=1e4, n=3
    )
    assert two.scales(2)[1] == pytest.approx(16.0**-2)


def test_make_sequence_rejects_constant_schedule():
    with pytest.raises(ValueError):
        make_sequence([(np.zeros(3), lambda k: 1.0, 1.0)], budget=1.0, n=3)


def test_make_sequence_rejects_nonseparating_tower():
    # two same-center entries with identical schedules never separate
    with pytest.raises(ValueError):
        make_sequence(
            [(np.zeros(3), 4.0, 1.0), (np.zeros(3), 4.0, 1.0)], budget=1.0, n=3
        )


def test_make_sequence_rejects_base_below_one():
    with pytest.raises(ValueError):
        make_sequence([(np.zeros(3), 0.5, 1.0)], budget=1.0, n=3)


def test_budget_verification_values_bounded():
    seq = single_bubble_seq()
    vals = seq.verify_budget([0, 4, 8])
    assert all(np.isfinite(v) and v > 0 for v in vals.values())


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------


def test_energy_in_zero_field():
    rule = build_ball_rule(3, 0, 1.0, order=8)
    assert energy_in(ConstantField(3, 0.0), rule) == 0.0


def gradient_tail_bound(n: int, s: float) -> float:
    """Closed-form unweighted energy outside radius s for the unit bubble."""
    c2 = (n * (n - 2)) ** ((n - 2) / 2)
    return unit_sphere_area(n) * c2 * (n - 2) * (s ** (2 - n) + s ** (-n))


def test_energy_in_bubble_approaches_weighted_constant():
    # int e(U) over R^n = (n-1)/(2n) * Lambda_0 since the two halves of
    # Lambda_0 are equal for the exact profile
    n = 3
    u = aubin_talenti(n)
    lam0 = lambda0_oracle(n)
    vals = [
        energy_in(u, ball_rule_for(u, np.zeros(n), R, order=32))
        for R in (10.0, 100.0, 1000.0)
    ]
    assert vals[0] < vals[1] < vals[2]
    assert vals[2] == pytest.approx((n - 1) / (2 * n) * lam0, rel=1e-2)


def test_energy_concentrates_at_small_scale():
    # the inner ball already carries everything but the closed-form tail
    delta = 1e-3
    u = aubin_talenti(3, delta)
    small = bubbling_energy(u, np.zeros(3), 0.1, order=32)
    large = bubbling_energy(u, np.zeros(3), 1.0, order=32)
    assert 0 < large - small <= gradient_tail_bound(3, 0.1 / delta) * 1.01
    # in n=3 the slow 1/s gradient tail needs a finer scale for 1e-4 relative
    v = aubin_talenti(3, 1e-5)
    small = bubbling_energy(v, np.zeros(3), 0.1, order=32)
    large = bubbling_energy(v, np.zeros(3), 1.0, order=32)
    assert large == pytest.approx(small, rel=1e-4)


# ---------------------------------------------------------------------------
# detection
# ---------------------------------------------------------------------------


def test_detect_zero_field_empty():
    seq = make_sequence([(np.zeros(3), 4.0, 0.0)], budget=10.0, n=3)  # weight 0
    lam0 = lambda0_oracle(3)
    pts = detect_sigma(seq, 8, [0.05, 0.15, 0.45], lam0 / 10)
    assert pts == []


def test_detect_single_bubble_monotonicity_detector():
    lam0 = lambda0_oracle(3)
    pts = detect_sigma(
        single_bubble_seq(), 8, [0.05, 0.15, 0.45], lam0 / 10, detector="monotonicity"
    )
    assert len(pts) == 1
    assert np.linalg.norm(pts[0]) <= 2 * 0.45


def test_detect_two_points_and_nothing_else():
    seq = make_sequence(
        [([0.5, 0, 0], 4.0, 1.0), ([-0.5, 0, 0], 4.0, 1.0)], budget=1e4, n=3
    )
    lam0 = lambda0_oracle(3)
    for detector in ("monotonicity", "ball-energy"):
        pts = sorted(
            detect_sigma(seq, 8, [0.05, 0.15, 0.45], lam0 / 10, detector=detector),
            key=lambda p: p[0],
        )
        assert len(pts) == 2
        assert np.allclose(pts[0], [-0.5, 0, 0], atol=1e-12)
        assert np.allclose(pts[1], [0.5, 0, 0], atol=1e-12)


def test_detect_stability_across_threshold_range():
    # halving eps0 inside [lam0/20, lam0/5] leaves the detected set unchanged
    lam0 = lambda0_oracle(3)
    seqs = [
        single_bubble_seq(),
        make_sequence(
            [(np.zeros(3), 4.0, 1.0), (np.zeros(3), 16.0, 1.0)], budget=1e4, n=3
        ),
    ]
    for seq in seqs:
        sets = []
        for eps0 in (lam0 / 5, lam0 / 10, lam0 / 20):
            pts = detect_sigma(
                seq, 8, [0.05, 0.15, 0.45], eps0, detector="ball-energy"
            )
            sets.append(tuple(sorted(tuple(np.round(p, 8)) for p in pts)))
        assert sets[0] == sets[1] == sets[2]


def test_detect_rejects_nonpositive_threshold():
    with pytest.raises(ValueError):
        detect_sigma(single_bubble_seq(), 4, [0.1], 0.0)


# ---------------------------------------------------------------------------
# rescaling and bubble-scale energies
# ---------------------------------------------------------------------------


def test_rescale_inverts_bubble_construction():
    u = Bubble(3, np.array([0.2, 0.1, 0.0]), 0.01)
    v = rescale(u, u.center, u.scale)
    ref = aubin_talenti(3)
    pts = np.random.default_rng(0).standard_normal((100, 3)) * 3
    assert np.max(np.abs(v.evaluate(pts) - ref.evaluate(pts))) < 1e-12


def test_rescale_zero_field():
    v = rescale(ConstantField(3, 0.0), np.zeros(3), 0.5)
    assert np.all(v.evaluate(np.zeros((4, 3))) == 0.0)


def test_rescale_two_scale_superposition_converges_to_profile():
    seq = make_sequence(
        [(np.zeros(3), 4.0, 1.0), (np.zeros(3), 16.0, 1.0)], budget=1e4, n=3
    )
    ref = aubin_talenti(3)
    pts = np.random.default_rng(1).standard_normal((200, 3)) * 5
    sups = []
    for k in (2, 4, 6):
        v = rescale(seq.field(k), np.zeros(3), seq.scales(k)[1])  # finer scale
        sups.append(np.max(np.abs(v.evaluate(pts) - ref.evaluate(pts))))
    # the leftover coarse bubble enters at amplitude (delta_f/delta_c)^((n-2)/2)
    assert sups[0] > sups[1] > sups[2]
    assert sups[2] < 2.0 ** -6 * aubin_talenti(3)(np.zeros(3)) * 1.05


def test_bubble_energy_limit_k_independent():
    seq = single_bubble_seq()
    vals = [bubble_energy_limit(seq, 10.0, k, order=48) for k in (2, 4, 6)]
    assert vals[1] == pytest.approx(vals[0], rel=1e-8)
    assert vals[2] == pytest.approx(vals[0], rel=1e-8)


def test_bubble_energy_limit_growth_matches_analytic_tail():
    seq = single_bubble_seq()
    v10 = bubble_energy_limit(seq, 10.0, 4, order=48)
    v100 = bubble_energy_limit(seq, 100.0, 4, order=48)
    v1000 = bubble_energy_limit(seq, 1000.0, 4, order=48)
    assert v10 < v100 < v1000
    expected = gradient_tail_bound(3, 10.0) - gradient_tail_bound(3, 100.0)
    assert v100 - v10 == pytest.approx(expected, rel=0.02)
    # the leading 1/s gradient tail makes the step to the next decade < 1%
    assert (v1000 - v100) / v1000 < 0.01


def test_bubble_energy_limit_zero_weight():
    seq = make_sequence([(np.zeros(3), 4.0, 0.0)], budget=10.0, n=3)
    assert bubble_energy_limit(seq, 10.0, 3) == 0.0


# ---------------------------------------------------------------------------
# neck energies
# ---------------------------------------------------------------------------


def test_neck_zero_field():
    seq = make_sequence([(np.zeros(3), 10.0, 0.0)], budget=10.0, n=3)
    assert neck_energy(seq, 3, R=100.0).total == 0.0


def test_neck_small_and_decreasing_in_R():
    seq = make_sequence([(np.zeros(3), 10.0, 1.0)], budget=1e4, n=3)
    lam0 = lambda0_oracle(3)
    totals = [neck_energy(seq, 3, R=R, outer=0.5).total for R in (10.0, 30.0, 100.0)]
    assert totals[0] > totals[1] > totals[2]
    assert totals[2] < 0.01 * lam0


def test_neck_dyadic_shells_dominated_by_tail_bound():
    # closed-form tail of the bubble density: surf * c^2 (n-2)(a^(2-n) + a^-n)
    n = 3
    seq = make_sequence([(np.zeros(n), 10.0, 1.0)], budget=1e4, n=n)
    k, R = 3, 30.0
    delta = seq.scales(k)[0]
    rep = neck_energy(seq, k, R=R, outer=0.5)
    c2 = (n * (n - 2)) ** ((n - 2) / 2)

    def tail(a_phys):
        a = a_phys / delta  # rescaled inner radius
        return unit_sphere_area(n) * c2 * (n - 2) * (a ** (2 - n) + a ** (-n))

    for a, b, val in rep.shells:
        assert val <= tail(a) * 1.01
    assert rep.total <= tail(rep.inner) * 1.01


def test_neck_max_shell_vanishes_with_R():
    seq = make_sequence([(np.zeros(3), 10.0, 1.0)], budget=1e4, n=3)
    maxima = [
        max(s[2] for s in neck_energy(seq, 3, R=R, outer=0.5).shells)
        for R in (10.0, 30.0, 100.0)
    ]
    assert maxima[0] > maxima[1] > maxima[2]


def test_neck_rejects_degenerate_annulus():
    seq = single_bubble_seq()
    with pytest.raises(ValueError):
        neck_energy(seq, 2, inner=0.6, outer=0.5)


# ---------------------------------------------------------------------------
# Theta and the scaled measure
# ---------------------------------------------------------------------------


def test_theta_single_bubble_near_lambda0():
    est = theta_estimate(single_bubble_seq(), np.zeros(3), 0.05, 8)
    assert est.stable
    assert est.value / lambda0_oracle(3) == pytest.approx(1.0, abs=0.05)


def test_theta_two_scale_tower_near_two():
    seq = make_sequence(
        [(np.zeros(3), 4.0, 1.0), (np.zeros(3), 16.0, 1.0)], budget=1e4, n=3
    )
    est = theta_estimate(seq, np.zeros(3), 0.05, 10)
    assert est.stable
    assert 1.9 <= est.value / lambda0_oracle(3) <= 2.1


def test_theta_carries_weak_limit_field():
    est = theta_estimate(single_bubble_seq(), np.zeros(3), 0.05, 8)
    assert est.weak_limit_energy == 0.0


def test_scaled_measure_identity_at_unit_scale():
    u = aubin_talenti(3)
    rule = build_ball_rule(3, 0, 0.7, order=32)
    direct = energy_in(u, rule)
    assert scaled_measure(u, np.zeros(3), 1.0, 0.7) == pytest.approx(direct, rel=1e-8)


def test_scaled_measure_change_of_variables():
    u = aubin_talenti(3, delta=0.3, y=[0.1, 0, 0])
    y = np.array([0.05, 0.0, 0.0])
    for lam, r in ((0.5, 0.8), (0.25, 1.2)):
        lhs = scaled_measure(u, y, lam, r, order=48)
        rule = build_ball_rule(3, y, lam * r, order=48)
        assert lhs == pytest.approx(energy_in(u, rule), rel=1e-8)


def test_scaled_measure_constant_at_matched_product():
    # chi(B_r) independent of r when lam*r is held fixed
    u = aubin_talenti(3, delta=1e-2)
    rho = 0.2
    vals = [scaled_measure(u, np.zeros(3), rho / r, r, order=48) for r in (0.5, 1.0, 2.0)]
    assert vals[1] == pytest.approx(vals[0], rel=1e-8)
    assert vals[2] == pytest.approx(vals[0], rel=1e-8)


def test_scaled_measure_zero_field():
    assert scaled_measure(ConstantField(3, 0.0), np.zeros(3), 0.5, 1.0) == 0.0


def test_scaled_measure_rejects_bad_args():
    with pytest.raises(ValueError):
        scaled_measure(aubin_talenti(3), np.zeros(3), 0.0, 1.0)


# ---------------------------------------------------------------------------
# the full pipeline
# ---------------------------------------------------------------------------


def test_quantization_single_bubble():
    rep = quantization_report(single_bubble_seq(), QuantizationConfig(k_max=8))
    assert len(rep.points) == 1
    p = rep.points[0]
    assert p.n_hat == 1
    assert abs(p.ratio - 1.0) <= 0.05
    assert len(p.inventory) == 1
    delta, center, energy = p.inventory[0]
    assert delta == pytest.approx(4.0**-8, rel=1e-3)
    assert energy == pytest.approx(rep.lambda0.value)
    # inventory energies sum to Theta within the reported cross-term budget
    assert abs(p.n_hat * rep.lambda0.value - p.theta) <= 0.05 * rep.lambda0.value


def test_quantization_zero_sequence_empty_report():
    seq = make_sequence([(np.zeros(3), 4.0, 0.0)], budget=10.0, n=3)
    rep = quantization_report(seq, QuantizationConfig(k_max=6))
    assert rep.points == []


def test_quantization_budget_violation_rejected():
    seq = single_bubble_seq(budget=1e-3)
    with pytest.raises(BudgetError):
        quantization_report(seq, QuantizationConfig(k_max=6))


def test_report_json_schema():
    rep = quantization_report(single_bubble_seq(), QuantizationConfig(k_max=8))
    doc = report_to_json(rep)
    assert doc["schema"] == "bubble-lab/1"
    for key in ("sigma_points", "theta", "n_hat", "ratios", "necks", "tolerances"):
        assert key in doc
    assert doc["n_hat"] == [1]
    assert len(doc["necks"][0]) == 9  # 3 R values x 3 k values


def test_sequence_spec_roundtrip(tmp_path):
    spec = tmp_path / "seq.ini"
    spec.write_text(
        "[sequence]\nn = 3\nk_max = 6\nbudget = 500\ndescription = tower\n\n"
        "[bubble:coarse]\ncenter = 0 0 0\nbase = 4\nweight = 1\n\n"
        "[bubble:fine]\ncenter = 0 0 0\nbase = 16\nweight = 1\n"
    )
    seq, extras = read_sequence_spec(spec)
    assert seq.dimension == 3
    assert len(seq.entries) == 2
    assert extras["k_max"] == 6
    assert seq.budget == 500
    assert seq.scales(2)[1] == pytest.approx(16.0**-2)


def test_sequence_spec_requires_section(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[nope]\nn = 3\n")
    with pytest.raises(ValueError):
        read_sequence_spec(bad)
