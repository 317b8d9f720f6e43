import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bubblelab.grid import unit_ball_volume
from bubblelab.fields import aubin_talenti, ConstantField
from bubblelab.lorentz import (
    LorentzIndex,
    RearrangementTable,
    SampledFunction,
    duality_product_check,
    lorentz_norm,
    power_rule_check,
    read_samples_csv,
    rearrange,
    sample_radial,
    tail_decay_check,
    write_samples_csv,
    write_table_csv,
)

L2 = LorentzIndex(2.0, 2.0)
L21 = LorentzIndex(2.0, 1.0)
L2INF = LorentzIndex(2.0, float("inf"))


def sampled(values, measures=None):
    values = np.asarray(values, dtype=float)
    if measures is None:
        measures = np.ones_like(values)
    return SampledFunction(values, np.asarray(measures, dtype=float))


finite_vals = st.lists(
    st.floats(min_value=-100, max_value=100, allow_nan=False), min_size=1, max_size=30
)
pos_meas = st.lists(
    st.floats(min_value=0.01, max_value=10, allow_nan=False), min_size=1, max_size=30
)


# ---------------------------------------------------------------------------
# rearrangement
# ---------------------------------------------------------------------------


def test_indicator_rearrangement():
    vol = 4 * np.pi / 3
    f = sampled(np.ones(8), np.full(8, vol / 8))
    table = rearrange(f)
    assert np.all(table.levels == 1.0)
    assert table.total_measure == pytest.approx(vol, rel=1e-14)
    assert table(np.array([vol / 2]))[0] == 1.0
    assert table(np.array([vol * 1.01]))[0] == 0.0


def test_rearrangement_positive_homogeneity():
    rng = np.random.default_rng(0)
    f = sampled(rng.standard_normal(20), rng.random(20) + 0.1)
    t1, t2 = rearrange(f), rearrange(f.scaled(2.0))
    assert np.array_equal(t2.levels, 2.0 * t1.levels)
    assert np.array_equal(t2.breaks, t1.breaks)


def test_radial_power_against_distribution_oracle():
    # meas{|x|^(-n/2) >= lam} = omega_n lam^-2 shifted by the excised core
    n, rho = 3, 0.05
    f = sample_radial(lambda r: r ** (-n / 2), n, rho, 20.0, 4000)
    table = rearrange(f)
    vol = unit_ball_volume(n)
    v_rho = vol * rho**n
    ts = np.array([0.5, 2.0, 20.0, 200.0])
    exact = np.sqrt(vol / (ts + v_rho))
    got = table(ts)
    assert np.all(np.abs(got - exact) <= 0.02 * exact)


@given(finite_vals)
@settings(max_examples=60, deadline=None)
def test_equimeasurability_exact(vals):
    f = sampled(vals)
    table = rearrange(f)
    # identical sorted multisets
    assert np.array_equal(np.sort(np.abs(f.values)), np.sort(table.levels))
    for lam in np.abs(f.values):
        direct = float(f.measures[np.abs(f.values) > lam].sum())
        assert table.super_level_measure(lam) == pytest.approx(direct, abs=1e-12)


@given(finite_vals)
@settings(max_examples=40, deadline=None)
def test_rearrangement_monotone(vals):
    f = sampled(vals)
    g = sampled(np.abs(np.asarray(vals)) + 0.5)
    # |f| <= g pointwise implies f* <= g* pointwise
    tf, tg = rearrange(f), rearrange(g)
    assert np.all(tf.levels <= tg.levels + 1e-12)


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


def test_l22_equals_l2():
    rng = np.random.default_rng(1)
    f = sampled(rng.standard_normal(50), rng.random(50) + 0.05)
    direct = np.sqrt(np.sum(f.values**2 * f.measures))
    assert lorentz_norm(f, L2) == pytest.approx(direct, rel=1e-10)


def test_weak_norm_of_inv_sqrt_profile():
    n = 3
    f = sample_radial(lambda r: r ** (-n / 2), n, 1e-3, 10.0, 100_000)
    expect = np.sqrt(unit_ball_volume(n))
    assert lorentz_norm(f, L2INF) == pytest.approx(expect, rel=0.02)


def test_zero_field_all_indices():
    f = sampled(np.zeros(5))
    for idx in (L2, L21, L2INF, LorentzIndex(0.5, 3.0)):
        assert lorentz_norm(f, idx) == 0.0


def test_norm_positive_homogeneity_exact():
    rng = np.random.default_rng(2)
    f = sampled(rng.standard_normal(30), rng.random(30) + 0.1)
    for idx in (L2, L21, L2INF, LorentzIndex(4.0, 1.5)):
        assert lorentz_norm(f.scaled(-3.0), idx) == pytest.approx(
            3.0 * lorentz_norm(f, idx), rel=1e-14
        )


@given(finite_vals, st.floats(min_value=1.1, max_value=8.0))
@settings(max_examples=40, deadline=None)
def test_nesting_between_secondary_indices(vals, q2):
    # ||f||_{p,q2} <= (q1/p)^(1/q1 - 1/q2) ||f||_{p,q1} for q1 < q2
    f = sampled(vals)
    p, q1 = 2.0, 1.0
    bound = (q1 / p) ** (1 / q1 - 1 / q2) * lorentz_norm(f, LorentzIndex(p, q1))
    assert lorentz_norm(f, LorentzIndex(p, q2)) <= bound * (1 + 1e-10)
    weak_bound = (q1 / p) ** (1 / q1) * lorentz_norm(f, LorentzIndex(p, q1))
    assert lorentz_norm(f, LorentzIndex(p, float("inf"))) <= weak_bound * (1 + 1e-10)


def test_invalid_indices_rejected():
    with pytest.raises(ValueError):
        LorentzIndex(0.0, 2.0)
    with pytest.raises(ValueError):
        LorentzIndex(2.0, -1.0)


# ---------------------------------------------------------------------------
# duality
# ---------------------------------------------------------------------------


def test_duality_zero_factor():
    f = sampled([1.0, 2.0, 3.0])
    g = sampled([0.0, 0.0, 0.0])
    prod, n21, n2inf = duality_product_check(f, g)
    assert prod == 0.0
    assert n2inf == 0.0
    assert n21 > 0.0


def test_duality_indicator_closed_form():
    f = sampled(np.ones(4), np.full(4, 0.25))  # indicator of a measure-1 set
    prod, n21, n2inf = duality_product_check(f, f)
    assert prod == pytest.approx(1.0, rel=1e-14)
    assert n21 == pytest.approx(2.0, rel=1e-14)  # int_0^1 t^(-1/2) dt
    assert n2inf == pytest.approx(1.0, rel=1e-14)


@given(finite_vals, st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_duality_inequality_random(vals, seed):
    rng = np.random.default_rng(seed)
    meas = rng.random(len(vals)) + 0.05
    f = sampled(vals, meas)
    g = sampled(rng.standard_normal(len(vals)) * 10 ** rng.uniform(-2, 2), meas)
    prod, n21, n2inf = duality_product_check(f, g)
    assert prod <= n21 * n2inf * (1 + 1e-12)


def test_duality_mismatched_cells_rejected():
    with pytest.raises(ValueError):
        duality_product_check(sampled([1.0, 2.0]), sampled([1.0]))
    with pytest.raises(ValueError):
        duality_product_check(
            sampled([1.0, 2.0], [1.0, 1.0]), sampled([1.0, 2.0], [1.0, 2.0])
        )


# ---------------------------------------------------------------------------
# power rule
# ---------------------------------------------------------------------------


def test_power_rule_identity():
    f = sampled([3.0, 1.0, 2.0])
    lhs, rhs = power_rule_check(f, 1.0, L2)
    assert lhs == rhs


def test_power_rule_indicator_fixed_point():
    f = sampled(np.ones(6), np.full(6, 0.5))
    for alpha in (0.5, 2.0, 3.0):
        lhs, rhs = power_rule_check(f, alpha, LorentzIndex(4.0, 2.0))
        assert lhs == pytest.approx(rhs, rel=1e-14)


def test_power_rule_square_exact_table_identity():
    rng = np.random.default_rng(3)
    f = sampled(rng.random(40) * 5, rng.random(40) + 0.1)
    squared_table = rearrange(f.power(2.0))
    base_table = rearrange(f)
    assert np.array_equal(squared_table.levels, base_table.levels**2)
    lhs, rhs = power_rule_check(f, 2.0, LorentzIndex(4.0, 2.0))
    assert lhs == pytest.approx(rhs, rel=1e-12)
    assert np.isfinite(lhs)


def test_power_rule_rejects_negative_fractional():
    with pytest.raises(ValueError):
        power_rule_check(sampled([-1.0, 2.0]), 0.5, L2)


# ---------------------------------------------------------------------------
# tail decay / weak-L2 bridge
# ---------------------------------------------------------------------------


def test_tail_decay_zero_field():
    rep = tail_decay_check(ConstantField(3, 0.0), 0.1, 1.0)
    assert rep.sup_decay == 0.0
    assert rep.weak_norm == 0.0


def test_tail_decay_shrinks_with_bubble_scale():
    rep2 = tail_decay_check(aubin_talenti(3, 1e-2), 0.1, 1.0)
    rep3 = tail_decay_check(aubin_talenti(3, 1e-3), 0.1, 1.0)
    assert 0 < rep3.sup_decay < rep2.sup_decay
    assert np.isfinite(rep2.weak_norm)


def test_tail_decay_weak_norm_within_bound():
    for delta in (1e-2, 3e-3, 1e-3):
        rep = tail_decay_check(aubin_talenti(3, delta), 0.1, 1.0)
        assert rep.weak_norm <= rep.weak_bound * 1.05


def test_tail_decay_rejects_bad_annulus():
    with pytest.raises(ValueError):
        tail_decay_check(aubin_talenti(3), 1.0, 0.5)


# ---------------------------------------------------------------------------
# validation and io
# ---------------------------------------------------------------------------


def test_sampled_function_validation():
    with pytest.raises(ValueError):
        SampledFunction(np.ones(3), np.array([1.0, -1.0, 1.0]))
    with pytest.raises(ValueError):
        SampledFunction(np.ones(3), np.ones(2))
    with pytest.raises(ValueError):
        SampledFunction(np.ones(3), np.ones(3), expected_volume=4.0)
    SampledFunction(np.ones(4), np.ones(4), expected_volume=4.0)


def test_table_validation():
    with pytest.raises(ValueError):
        RearrangementTable(np.array([0.0, 1.0, 2.0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        RearrangementTable(np.array([0.5, 1.0]), np.array([1.0]))


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    f = sampled(rng.standard_normal(12), rng.random(12) + 0.2)
    path = tmp_path / "samples.csv"
    write_samples_csv(path, f)
    g = read_samples_csv(path)
    assert np.allclose(g.values, f.values)
    assert np.allclose(g.measures, f.measures)
    tpath = tmp_path / "table.csv"
    write_table_csv(tpath, rearrange(f))
    header = tpath.read_bytes().split(b"\r\n")[0]
    assert header == b"t_break,level"
