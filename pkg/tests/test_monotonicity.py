import numpy as np
import pytest

from bubblelab.grid import RadialGrid, unit_ball_volume, unit_sphere_area
from bubblelab.fields import BubbleConfiguration, Bubble, ConstantField, RescaledField, aubin_talenti
from bubblelab.monotonicity import (
    DegenerateEnergyError,
    check_monotone,
    check_positive,
    energy_E,
    energy_bound_check,
    eps_regularity_check,
    formulation_diagnostics,
    profile,
    write_profile_csv,
)


def test_energy_zero_field():
    z = ConstantField(3, 0.0)
    for r in (0.3, 1.0, 4.0):
        assert energy_E(z, np.zeros(3), r) == 0.0


def test_energy_rejects_nonpositive_radius():
    with pytest.raises(ValueError):
        energy_E(aubin_talenti(3), np.zeros(3), 0.0)
    with pytest.raises(ValueError):
        energy_E(aubin_talenti(3), np.zeros(3), -1.0)


@pytest.mark.parametrize("r", [1.0, 2.0])
def test_formulations_agree_on_exact_solution(r):
    u = aubin_talenti(3)
    vals = {f: energy_E(u, np.zeros(3), r, f) for f in "ABC"}
    for f in "AC":
        assert vals[f] == pytest.approx(vals["B"], rel=1e-5)


def test_formulation_agreement_off_center():
    u = aubin_talenti(4)
    x = np.array([0.4, -0.3, 0.0, 0.0])
    for r in (0.5, 2.0):
        b = energy_E(u, x, r, "B")
        for f in "AC":
            assert abs(energy_E(u, x, r, f) - b) <= 1e-4 * (1 + abs(b))


def test_constant_field_closed_form():
    # hand evaluation: gradient term zero, volume term from the ball measure,
    # boundary term from the sphere measure
    n, c, r = 3, 0.7, 1.3
    u = ConstantField(n, c)
    p = 2 * n / (n - 2)
    expected = (
        -(n - 2) / (2 * n) * c**p * unit_ball_volume(n) * r**n
        + (n - 2) / (4 * r) * c**2 * unit_sphere_area(n) * r ** (n - 1)
    )
    assert energy_E(u, np.zeros(n), r, "B") == pytest.approx(expected, rel=1e-10)


def test_formulation_diagnostics_identifies_consistent_displays():
    d = formulation_diagnostics(aubin_talenti(3), np.zeros(3), 2.0)
    assert d["dev_A_vs_B"] <= 1e-4 * (1 + abs(d["B"]))
    assert d["dev_C_vs_B"] <= 1e-4 * (1 + abs(d["B"]))
    # the literal printed variants disagree, and the diagnostics expose that
    assert d["dev_derivation_literal_vs_B"] > 0.1
    assert d["dev_printed_literal_vs_B"] > 0.1


def test_profile_zero_field():
    prof = profile(ConstantField(3, 0.0), np.zeros(3), np.geomspace(0.1, 2, 10))
    assert np.all(prof.values == 0.0)
    assert check_monotone(prof).passed
    assert check_positive(prof).passed


def test_profile_bubble_centered_monotone_positive():
    u = aubin_talenti(3)
    prof = profile(u, np.zeros(3), RadialGrid.log_spaced(0.05, 5.0, 40))
    assert np.all(np.isfinite(prof.values))
    slack = 1e-6 * np.max(np.abs(prof.values))
    assert check_monotone(prof, slack).passed
    assert check_positive(prof, slack).passed


def test_profile_bubble_off_center_monotone_positive():
    u = aubin_talenti(3)
    prof = profile(u, np.array([0.3, 0.0, 0.0]), RadialGrid.log_spaced(0.05, 5.0, 40))
    assert check_monotone(prof).passed
    assert check_positive(prof).passed


def test_two_bubble_profile_dominates_single():
    # needs well-separated scales: the sextic cross terms enter E with a
    # negative sign and would swamp a barely-separated second bubble
    x = np.zeros(3)
    radii = np.geomspace(0.2, 3.0, 8)
    single = profile(aubin_talenti(3), x, radii)
    double = profile(
        BubbleConfiguration([Bubble(3, x, 1.0), Bubble(3, x, 1e-4)]), x, radii
    )
    assert np.all(np.isfinite(double.values))
    assert np.all(double.values > single.values)


def test_two_bubble_positivity_report_is_informational():
    cfg = BubbleConfiguration([Bubble(3, np.zeros(3), 1.0), Bubble(3, np.zeros(3), 0.02)])
    prof = profile(cfg, np.zeros(3), np.geomspace(0.05, 5, 15))
    rep = check_positive(prof)
    # approximate solutions may violate; the report lists radii, not raises
    assert isinstance(rep.violations, list)
    for r_lo, _, magnitude in rep.violations:
        assert magnitude > 0


def test_check_monotone_flags_decreases():
    prof = profile(aubin_talenti(3), np.zeros(3), np.geomspace(0.1, 2, 6))
    broken = type(prof)(
        center=prof.center,
        radii=prof.radii,
        values=prof.values[::-1].copy(),
        components=prof.components,
    )
    rep = check_monotone(broken)
    assert not rep.passed
    assert rep.violations


def test_integral_mean_inequality():
    # (1/R) int_0^R E <= E(R), using E(r) <= E(r1) on the unsampled head
    u = aubin_talenti(3)
    prof = profile(u, np.zeros(3), np.geomspace(0.05, 4.0, 30))
    r, v = prof.radii, prof.values
    head = r[0] * v[0]
    mean = (head + np.trapezoid(v, r)) / r[-1]
    assert mean <= v[-1] * (1 + 1e-9)


def test_scale_covariance():
    u = aubin_talenti(3)
    delta = 0.25
    u_scaled = RescaledField(u, np.zeros(3), delta)  # delta^((n-2)/2) u(delta x)
    for r in (0.5, 1.0, 3.0):
        a = energy_E(u, np.zeros(3), r, "B", order=48)
        b = energy_E(u_scaled, np.zeros(3), r / delta, "B", order=48)
        assert b == pytest.approx(a, rel=1e-8)


def test_energy_bound_zero_convention():
    assert energy_bound_check(ConstantField(3, 0.0), np.zeros(3), 0.3, 2.0) == 0.0


def test_energy_bound_bubble_sweep_stable_under_refinement():
    u = aubin_talenti(3)
    sweep = np.linspace(0.05, 0.5, 8)

    def max_ratio(order):
        return max(energy_bound_check(u, np.zeros(3), r, 2.0, order=order) for r in sweep)

    coarse, fine = max_ratio(24), max_ratio(48)
    assert np.isfinite(coarse)
    assert fine == pytest.approx(coarse, rel=0.02)


def test_energy_bound_ratio_scale_invariant():
    u = aubin_talenti(3)
    v = aubin_talenti(3, delta=0.25)
    sweep = np.linspace(0.05, 0.5, 8)
    m1 = max(energy_bound_check(u, np.zeros(3), r, 2.0) for r in sweep)
    m2 = max(energy_bound_check(v, np.zeros(3), r / 4, 0.5) for r in sweep)
    assert m2 == pytest.approx(m1, rel=0.01)


def test_energy_bound_rejects_bad_radii():
    with pytest.raises(ValueError):
        energy_bound_check(aubin_talenti(3), np.zeros(3), 1.5, 2.0)


def test_eps_regularity_zero_field():
    rep = eps_regularity_check(ConstantField(3, 0.0), np.zeros(3), 1.0, 0.5, 0.1)
    assert rep.applicable
    assert rep.c_meas == 0.0


def test_eps_regularity_far_field_decreasing():
    u = aubin_talenti(3)
    rep5 = eps_regularity_check(u, np.array([5.0, 0, 0]), 1.0, 0.5, epsilon=0.1)
    rep10 = eps_regularity_check(u, np.array([10.0, 0, 0]), 1.0, 0.5, epsilon=0.1)
    assert rep5.applicable and rep10.applicable
    assert 0 < rep10.c_meas < rep5.c_meas


def test_eps_regularity_core_not_applicable():
    u = aubin_talenti(3, delta=0.01)
    rep = eps_regularity_check(u, np.zeros(3), 1.0, 0.5, epsilon=0.1)
    assert not rep.applicable
    assert rep.energy > 0.1
    assert np.isnan(rep.c_meas)


def test_degenerate_energy_reported():
    # a field with boundary mass but negative-definite bulk: force E < 0 by
    # inverting the sign structure is impossible for real fields, so check
    # the zero-vs-energy mismatch branch instead
    class Spike(ConstantField):
        pass

    with pytest.raises(DegenerateEnergyError):
        # constant field has E < 0 for large r (volume term dominates)
        energy_bound_check(ConstantField(3, 1.0), np.zeros(3), 4.0, 10.0)


def test_profile_csv_columns(tmp_path):
    prof = profile(aubin_talenti(3), np.zeros(3), np.geomspace(0.1, 1.0, 5))
    path = tmp_path / "profile.csv"
    write_profile_csv(path, prof)
    lines = path.read_bytes().split(b"\r\n")
    assert lines[0] == b"r,E,term_volume,term_boundary_derivative,term_boundary_over_r"
    assert len(lines) == 7  # header + 5 rows + trailing empty
