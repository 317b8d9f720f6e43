"""Synthetic concentrating sequences and the quantization pipeline.

A concentrating sequence is generated from bubble entries (center, scale
schedule, weight); its k-th field is the superposition at the k-th scales.
The pipeline detects concentration points by thresholding local energies
along the sequence, reads off the defect density Theta from small balls at
large k, extracts bubbles one at a time (half-threshold radius, blow-up
rescaling, least-squares profile fit, subtraction) and reports the bubble
count, neck energies and the ratio of Theta to the single-bubble energy
constant, which clusters at integers.

Two energy densities appear side by side:

* the weighted density  e(u) = |grad u|^2 / 2 + (n-2)/(2n) |u|^(2n/(n-2))
  carried by the energy measures (``energy_in``, ``scaled_measure``);
* the unweighted density  |grad u|^2 + |u|^(2n/(n-2))  entering the
  quantization bookkeeping (``bubbling_energy``, necks, Theta, Lambda_0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.special import roots_legendre

from .grid import (
    QuadratureRule,
    integrate,
    unit_ball_volume,
    unit_sphere_area,
)
from .fields import (
    Bubble,
    BubbleConfiguration,
    RescaledField,
    ScalarField,
    Superposition,
    _bubble_amplitude,
    _pts,
    annulus_rule_for,
    ball_rule_for,
    unit_sphere_directions_for_fit,
)
from .monotonicity import energy_E

__all__ = [
    "BubbleConstant",
    "ConcentrationSequence",
    "SequenceEntry",
    "EnergyMeasure",
    "DefectReport",
    "PointReport",
    "ThetaEstimate",
    "NeckReport",
    "QuantizationConfig",
    "BudgetError",
    "bubble_energy_constant",
    "make_sequence",
    "energy_in",
    "bubbling_energy",
    "detect_sigma",
    "rescale",
    "bubble_energy_limit",
    "neck_energy",
    "theta_estimate",
    "scaled_measure",
    "quantization_report",
    "report_to_json",
    "read_sequence_spec",
]


class BudgetError(ValueError):
    """A sequence violates its declared uniform norm budget."""


# ---------------------------------------------------------------------------
# the single-bubble energy constant
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BubbleConstant:
    """Lambda_0 = ||grad U||_2^2 + ||U||_{2n/(n-2)}^{2n/(n-2)} over R^n.

    Computed by paneled radial Gauss quadrature on [0, r_pivot] plus the
    substituted exact tail integral; never hard-coded.  ``error_bound`` is
    the observed change under doubling the radial order.
    """

    dimension: int
    value: float
    error_bound: float
    radial_order: int

    def __float__(self) -> float:
        return self.value


def _bubble_density_1d(n: int) -> Callable[[np.ndarray], np.ndarray]:
    """(|U'|^2 + U^(2n/(n-2)))(r) for the standard profile."""
    c2 = _bubble_amplitude(n) ** 2

    def dens(r):
        g = 1.0 + r**2
        return c2 * (n - 2) * g ** (-float(n)) * ((n - 2) * r**2 + n)

    return dens


def _radial_integral(dens, n: int, order: int, r_pivot: float = 16.0) -> float:
    """surf(S^{n-1}) * int_0^inf dens(r) r^(n-1) dr with an exact tail map."""
    x, w = roots_legendre(order)
    edges = [0.0]
    h = 1.0 / 64
    while edges[-1] < r_pivot:
        edges.append(min(edges[-1] + h, r_pivot) if edges[-1] == 0 else min(edges[-1] * 2, r_pivot))
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        half = 0.5 * (b - a)
        r = 0.5 * (a + b) + half * x
        total += float(np.dot(half * w, dens(r) * r ** (n - 1)))
    # tail: substitute r = r_pivot / s, s in (0, 1]
    s = 0.5 + 0.5 * x
    ws = 0.5 * w
    r = r_pivot / s
    total += float(np.dot(ws, dens(r) * r ** (n - 1) * r_pivot / s**2))
    return unit_sphere_area(n) * total


def bubble_energy_constant(n: int, radial_order: int = 64) -> BubbleConstant:
    if n < 3:
        raise ValueError("need n >= 3")
    dens = _bubble_density_1d(n)
    value = _radial_integral(dens, n, radial_order)
    refined = _radial_integral(dens, n, 2 * radial_order)
    return BubbleConstant(
        dimension=n,
        value=refined,
        error_bound=abs(refined - value) + 1e-14 * abs(refined),
        radial_order=radial_order,
    )


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SequenceEntry:
    """One bubble slot: center, scale schedule k -> delta_k, weight."""

    center: np.ndarray
    schedule: Callable[[int], float]
    weight: float = 1.0
    base: float | None = None  # set when the schedule is base**(-k)


def _as_schedule(spec) -> tuple[Callable[[int], float], float | None]:
    if callable(spec):
        return spec, None
    base = float(spec)
    if base <= 1.0:
        raise ValueError(f"geometric schedule base must exceed 1, got {base}")
    return (lambda k, b=base: b ** (-k)), base


class ConcentrationSequence:
    """k -> superposition of the entry bubbles at their k-th scales."""

    def __init__(
        self,
        n: int,
        entries: Sequence[SequenceEntry],
        budget: float,
        description: str = "",
        k_check: int = 8,
    ):
        if n < 3:
            raise ValueError("need n >= 3")
        if not entries:
            raise ValueError("a sequence needs at least one bubble entry")
        self.dimension = n
        self.entries = list(entries)
        self.budget = float(budget)
        self.description = description
        self._validate_schedules(k_check)

    def _validate_schedules(self, k_check: int) -> None:
        for e in self.entries:
            d = np.array([e.schedule(k) for k in range(k_check + 1)])
            if np.any(d <= 0):
                raise ValueError("scale schedules must stay positive")
            if np.any(np.diff(d) >= 0):
                raise ValueError("scale schedules must be strictly decreasing")
            if d[-1] > d[0] / 2:
                raise ValueError("scale schedule does not decay toward zero")
        # same-center towers must separate: adjacent scale ratios shrink
        by_center: dict[tuple, list[SequenceEntry]] = {}
        for e in self.entries:
            by_center.setdefault(tuple(np.round(e.center, 12)), []).append(e)
        for group in by_center.values():
            if len(group) < 2:
                continue
            group = sorted(group, key=lambda e: -e.schedule(k_check))
            for a, b in zip(group[:-1], group[1:]):
                r0 = b.schedule(0) / a.schedule(0)
                r1 = b.schedule(k_check) / a.schedule(k_check)
                if not (r1 < r0):
                    raise ValueError(
                        "same-center scale schedules must separate "
                        "(adjacent scale ratio must decrease in k)"
                    )

    def scales(self, k: int) -> np.ndarray:
        return np.array([e.schedule(k) for e in self.entries])

    def field(self, k: int) -> BubbleConfiguration:
        bubbles = [
            Bubble(self.dimension, e.center, e.schedule(k)) for e in self.entries
        ]
        return BubbleConfiguration(bubbles, [e.weight for e in self.entries])

    def verify_budget(self, ks: Sequence[int], order: int = 24) -> dict[int, float]:
        """||u_k||_{H^1(B_1)} + ||u_k||_{L^(2n/(n-2))(B_1)} per sampled k."""
        n = self.dimension
        p = 2.0 * n / (n - 2)
        out = {}
        for k in ks:
            u = self.field(k)
            rule = ball_rule_for(u, np.zeros(n), 1.0, order)

            def h1_dens(pts):
                g = u.gradient(pts)
                return u.evaluate(pts) ** 2 + np.einsum("mi,mi->m", g, g)

            h1 = math.sqrt(max(integrate(rule, h1_dens), 0.0))
            lp = integrate(rule, lambda pts: np.abs(u.evaluate(pts)) ** p) ** (1.0 / p)
            out[k] = h1 + lp
        return out


def make_sequence(
    spec: Sequence[tuple],
    budget: float,
    n: int | None = None,
    description: str = "",
) -> ConcentrationSequence:
    """Build a sequence from (center, schedule-or-base, weight) triples."""
    entries = []
    dim = n
    for item in spec:
        center, sched, weight = item
        c = np.asarray(center, dtype=float).reshape(-1)
        if dim is None:
            dim = c.size
        schedule, base = _as_schedule(sched)
        entries.append(
            SequenceEntry(center=c, schedule=schedule, weight=float(weight), base=base)
        )
    return ConcentrationSequence(dim, entries, budget, description)


# ---------------------------------------------------------------------------
# energy densities
# ---------------------------------------------------------------------------


def _weighted_density(u: ScalarField):
    n = u.dimension
    p = 2.0 * n / (n - 2)

    def dens(pts):
        g = u.gradient(pts)
        return 0.5 * np.einsum("mi,mi->m", g, g) + (n - 2) / (2.0 * n) * np.abs(
            u.evaluate(pts)
        ) ** p

    return dens


def _unweighted_density(u: ScalarField):
    n = u.dimension
    p = 2.0 * n / (n - 2)

    def dens(pts):
        g = u.gradient(pts)
        return np.einsum("mi,mi->m", g, g) + np.abs(u.evaluate(pts)) ** p

    return dens


@dataclass(frozen=True)
class EnergyMeasure:
    """The Radon measure with weighted density e(u) dx."""

    field: ScalarField

    def density(self, points: np.ndarray) -> np.ndarray:
        return _weighted_density(self.field)(points)

    def mass(self, rule: QuadratureRule, threads: int = 1) -> float:
        return integrate(rule, self.density, threads=threads)


def energy_in(u: ScalarField, rule: QuadratureRule, threads: int = 1) -> float:
    """Weighted energy  int e(u)  over the rule's region; nonnegative."""
    return integrate(rule, _weighted_density(u), threads=threads)


def bubbling_energy(
    u: ScalarField, x, r: float, order: int = 24, inner: float = 0.0
) -> float:
    """Unweighted energy int (|grad u|^2 + |u|^(2n/(n-2))) over a ball/annulus."""
    if inner > 0:
        rule = annulus_rule_for(u, x, inner, r, order)
    else:
        rule = ball_rule_for(u, x, r, order)
    return integrate(rule, _unweighted_density(u))


# ---------------------------------------------------------------------------
# detection of the concentration set
# ---------------------------------------------------------------------------


def _lattice(n: int, extent: float, spacing: float) -> np.ndarray:
    ticks = np.arange(-extent, extent + spacing / 2, spacing)
    if len(ticks) ** n > 100_000:
        raise ValueError(
            f"detection lattice would hold {len(ticks)}^{n} probes; "
            "coarsen lattice_spacing or shrink lattice_extent"
        )
    grids = np.meshgrid(*([ticks] * n), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _detection_quantity(detector: str, u: ScalarField, x, r: float, order: int) -> float:
    if detector == "monotonicity":
        return energy_E(u, x, r, "B", order)
    if detector == "ball-energy":
        return bubbling_energy(u, x, r, order)
    raise ValueError(f"unknown detector {detector!r}")


def _detect_detailed(
    seq: ConcentrationSequence,
    k_max: int,
    r_grid: Sequence[float],
    eps0: float,
    detector: str = "monotonicity",
    lattice_extent: float = 1.0,
    lattice_spacing: float = 0.5,
    order: int = 16,
):
    """Scan lattice + declared centers; liminf surrogate = min over the top
    half of the k range.  Returns (points, cluster sizes, scores)."""
    if eps0 <= 0:
        raise ValueError("eps0 must be positive")
    n = seq.dimension
    k0 = max(0, math.ceil(k_max / 2))
    ks = list(range(k0, k_max + 1))
    fields = {k: seq.field(k) for k in ks}
    candidates = [e.center for e in seq.entries]
    seen = {tuple(np.round(c, 10)) for c in candidates}
    for p in _lattice(n, lattice_extent, lattice_spacing):
        key = tuple(np.round(p, 10))
        if key not in seen:
            seen.add(key)
            candidates.append(p)

    hits, scores = [], []
    for x in candidates:
        score = np.inf
        ok = True
        for r in sorted(r_grid):  # smallest radius fails fastest off-points
            for k in ks:
                q = _detection_quantity(detector, fields[k], x, r, order)
                score = min(score, q)
                if q < eps0:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            hits.append(np.asarray(x, dtype=float))
            scores.append(score)

    # merge lattice-adjacent hits into clusters; keep the best-scoring member
    merged: list[np.ndarray] = []
    cluster_sizes: list[int] = []
    cluster_scores: list[float] = []
    used = [False] * len(hits)
    order_idx = sorted(range(len(hits)), key=lambda i: -scores[i])
    for i in order_idx:
        if used[i]:
            continue
        members = [i]
        used[i] = True
        for j in range(len(hits)):
            if not used[j] and np.linalg.norm(hits[i] - hits[j]) <= 1.5 * lattice_spacing:
                used[j] = True
                members.append(j)
        merged.append(hits[i])
        cluster_sizes.append(len(members))
        cluster_scores.append(scores[i])
    return merged, cluster_sizes, cluster_scores


def detect_sigma(
    seq: ConcentrationSequence,
    k_max: int,
    r_grid: Sequence[float],
    eps0: float,
    detector: str = "monotonicity",
    lattice_extent: float = 1.0,
    lattice_spacing: float = 0.5,
    order: int = 16,
) -> list[np.ndarray]:
    """Points where the chosen local energy stays >= eps0 for every radius
    in ``r_grid`` along the tail of the sequence."""
    points, _, _ = _detect_detailed(
        seq, k_max, r_grid, eps0, detector, lattice_extent, lattice_spacing, order
    )
    return points


# ---------------------------------------------------------------------------
# rescaling, bubble-scale energies, necks
# ---------------------------------------------------------------------------


def rescale(u: ScalarField, y, delta: float) -> RescaledField:
    """x -> delta^((n-2)/2) u(delta x + y)."""
    return RescaledField(u, y, delta)


def bubble_energy_limit(
    seq: ConcentrationSequence, R: float, k: int, entry: int = 0, order: int = 24
) -> float:
    """Unweighted energy over B(y, R * delta_k): the bubble-scale ball whose
    double limit (k then R) isolates one bubble's full energy."""
    if R <= 0:
        raise ValueError("R must be positive")
    e = seq.entries[entry]
    return bubbling_energy(seq.field(k), e.center, R * e.schedule(k), order)


@dataclass(frozen=True)
class NeckReport:
    inner: float
    outer: float
    total: float
    shells: list  # (a, b, energy) dyadic breakdown


def neck_energy(
    seq: ConcentrationSequence,
    k: int,
    inner: float | None = None,
    outer: float = 0.5,
    R: float = 100.0,
    entry: int = 0,
    order: int = 24,
) -> NeckReport:
    """Unweighted energy in the annulus between the bubble scale and the
    macroscopic scale, with its dyadic-shell breakdown."""
    e = seq.entries[entry]
    if inner is None:
        inner = R * e.schedule(k)
    if not (0 < inner < outer):
        raise ValueError(f"need 0 < inner < outer, got ({inner}, {outer})")
    u = seq.field(k)
    edges = [inner]
    while edges[-1] * 2 < outer:
        edges.append(edges[-1] * 2)
    edges.append(outer)
    shells = []
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val = bubbling_energy(u, e.center, b, order, inner=a)
        shells.append((a, b, val))
        total += val
    return NeckReport(inner=inner, outer=outer, total=total, shells=shells)


@dataclass(frozen=True)
class ThetaEstimate:
    """Defect density at a point, read from small balls at large k.

    ``samples`` maps probe radii to unweighted ball energies; when their
    spread exceeds 10% the estimate is flagged unstable and no value is
    asserted (value = nan).
    """

    value: float
    samples: dict
    stable: bool
    spread: float
    weak_limit_energy: float = 0.0


def theta_estimate(
    seq: ConcentrationSequence,
    x,
    r_small: float,
    k_large: int,
    order: int = 24,
    weak_limit_energy: float = 0.0,
) -> ThetaEstimate:
    """Unweighted energy of u_k over B(x, r) for r across a factor-2 range,
    minus the weak limit's energy (zero for purely concentrating specs)."""
    if not (r_small > 0):
        raise ValueError("r_small must be positive")
    u = seq.field(k_large)
    radii = [r_small / 2, r_small / math.sqrt(2.0), r_small]
    samples = {r: bubbling_energy(u, x, r, order) for r in radii}
    vals = np.array(list(samples.values()))
    mid = float(np.median(vals))
    spread = float((vals.max() - vals.min()) / mid) if mid > 0 else 0.0
    stable = spread <= 0.10
    value = samples[r_small] - weak_limit_energy if stable else float("nan")
    return ThetaEstimate(
        value=value,
        samples=samples,
        stable=stable,
        spread=spread,
        weak_limit_energy=weak_limit_energy,
    )


def scaled_measure(
    u: ScalarField, y, lam: float, r: float, order: int = 24
) -> float:
    """Weighted energy of the (y, lam)-rescaled field over B(0, r); equals
    the weighted energy of u over B(y, lam * r) by change of variables."""
    if not (lam > 0 and r > 0):
        raise ValueError("need lam > 0 and r > 0")
    v = rescale(u, y, lam)
    rule = ball_rule_for(v, np.zeros(u.dimension), r, order)
    return energy_in(v, rule)


# ---------------------------------------------------------------------------
# the quantization pipeline
# ---------------------------------------------------------------------------


@dataclass
class QuantizationConfig:
    """Pipeline thresholds and probe layout; None fields auto-resolve.

    eps0 defaults to Lambda_0/20 (detection + residual stop) and eps_n to
    Lambda_0/10 (the half-threshold bubble-extraction surrogate).  The
    ball-energy detector is the default because its single-bubble limit is
    the full Lambda_0 in every dimension, leaving a wide stable threshold
    band; the monotonicity detector (whose single-bubble limit decays like
    1/(2n)) remains available.
    """

    k_max: int = 8
    eps0: float | None = None
    eps_n: float | None = None
    r_grid: tuple = (0.05, 0.15, 0.45)
    detector: str = "ball-energy"
    r_small: float = 0.05
    lattice_extent: float = 1.0
    lattice_spacing: float = 0.5
    detection_order: int = 12
    order: int = 24
    max_bubbles: int = 8
    fit_tol: float = 1e-8
    neck_R: tuple = (10.0, 30.0, 100.0)
    neck_outer: float = 0.5
    seed: int = 0


@dataclass(frozen=True)
class PointReport:
    point: np.ndarray
    theta: float
    theta_stable: bool
    theta_samples: dict
    n_hat: int
    inventory: list  # (delta, center, energy) per extracted bubble
    ratio: float  # theta / Lambda_0
    integer_distance: float
    cross_term: float
    necks: dict  # R -> {k: neck energy}
    weak_limit_energy: float
    flags: list
    cluster_size: int = 1


@dataclass(frozen=True)
class DefectReport:
    dimension: int
    lambda0: BubbleConstant
    points: list  # of PointReport
    thresholds: dict
    budget: dict
    description: str = ""

    def validate(self) -> None:
        for p in self.points:
            if p.theta_stable and not (p.theta >= 0):
                raise ValueError("Theta estimates must be nonnegative")
            if p.n_hat < 1 and "no-bubble-extracted" not in p.flags:
                raise ValueError("detected points must carry at least one bubble")


def _half_threshold_radius(
    w: ScalarField, x, target: float, r_hi: float, order: int
) -> float | None:
    """Smallest radius where the unweighted ball energy reaches ``target``
    (log-bisection; None when even r_hi falls short)."""
    if bubbling_energy(w, x, r_hi, order) < target:
        return None
    lo, hi = r_hi, r_hi
    floor = max((w.finest_scale or 1e-12) * 1e-3, 1e-300)
    while lo > floor:
        cand = lo / 4.0
        if bubbling_energy(w, x, cand, order) < target:
            lo = cand
            break
        lo = cand
    for _ in range(48):
        mid = math.sqrt(lo * hi)
        if bubbling_energy(w, x, mid, order) >= target:
            hi = mid
        else:
            lo = mid
        if hi / lo < 1.0 + 1e-3:
            break
    return hi


_HALF_RADIUS_CACHE: dict[tuple[int, float], float] = {}


def _standard_halfball_radius(n: int, energy_target: float) -> float:
    """Radius s with int_{B_s}(|grad U|^2 + U^(2n/(n-2))) = energy_target
    for the standard profile; links the half-threshold radius of a
    concentrating field to its bubble scale."""
    key = (n, round(energy_target, 12))
    if key in _HALF_RADIUS_CACHE:
        return _HALF_RADIUS_CACHE[key]
    dens = _bubble_density_1d(n)
    x, w = roots_legendre(48)

    def ball(s):
        r = 0.5 * s * (x + 1.0)
        return unit_sphere_area(n) * 0.5 * s * float(np.dot(w, dens(r) * r ** (n - 1)))

    lo, hi = 1e-6, 1.0
    while ball(hi) < energy_target:
        hi *= 2.0
        if hi > 1e9:
            raise ValueError("energy target exceeds the single-bubble energy")
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if ball(mid) >= energy_target:
            hi = mid
        else:
            lo = mid
        if hi / lo < 1 + 1e-12:
            break
    _HALF_RADIUS_CACHE[key] = hi
    return hi


def _fit_sample_points(n: int, x: np.ndarray, scale: float) -> np.ndarray:
    radii = np.geomspace(scale / 30.0, 30.0 * scale, 24)
    dirs = unit_sphere_directions_for_fit(n)
    return (x[None, None, :] + radii[:, None, None] * dirs[None, :, :]).reshape(-1, n)


def _fit_bubble(
    w: ScalarField, x: np.ndarray, delta0: float, tol: float
) -> tuple[Bubble, dict]:
    """Least squares on (log delta, center) of a signed standard profile.

    The sample cloud spans radii delta0/30 .. 30*delta0 around the probe
    point and excludes the point itself, where imperfect cancellation of
    previously subtracted bubbles leaves a spurious spike.
    """
    n = w.dimension
    samples = _fit_sample_points(n, x, delta0)
    target = w.evaluate(samples)
    # sign read at the working scale, not at the contaminated center
    core = np.linalg.norm(samples - x, axis=1) <= delta0
    sign = 1.0 if float(np.mean(target[core])) >= 0 else -1.0
    scale_ref = np.abs(target).max()

    def resid(params):
        d = math.exp(params[0])
        b = Bubble(n, params[1:], d, sign)
        return (b.evaluate(samples) - target) / scale_ref

    p0 = np.concatenate([[math.log(delta0)], x])
    res = least_squares(resid, p0, method="lm", xtol=tol * 1e-4, ftol=tol * 1e-4,
                        gtol=tol * 1e-4, max_nfev=400)
    delta = math.exp(res.x[0])
    center = res.x[1:]
    # snap to the probe point when the offset is far below the bubble scale:
    # the fit cannot resolve it and an exact common center keeps the
    # subtracted superposition radially symmetric (cheap quadrature)
    if np.linalg.norm(center - x) < 1e-3 * delta:
        center = x.copy()
    rel_rms = math.sqrt(2.0 * res.cost / len(target))
    info = {
        "converged": bool(res.success) and rel_rms < 0.05,
        "cost": float(res.cost),
        "rel_rms": rel_rms,
        "nfev": int(res.nfev),
    }
    return Bubble(n, center, delta, sign), info


def quantization_report(
    seq: ConcentrationSequence, config: QuantizationConfig | None = None
) -> DefectReport:
    """Full pipeline: detect, extract bubbles until the residual energy
    drops below threshold, tabulate necks and integer ratios."""
    cfg = config or QuantizationConfig()
    n = seq.dimension
    lam0 = bubble_energy_constant(n)
    eps0 = cfg.eps0 if cfg.eps0 is not None else lam0.value / 20.0
    eps_n = cfg.eps_n if cfg.eps_n is not None else lam0.value / 10.0

    budget_vals = seq.verify_budget(
        sorted({0, cfg.k_max // 2, cfg.k_max}), order=cfg.detection_order
    )
    worst = max(budget_vals.values())
    if worst > seq.budget:
        raise BudgetError(
            f"sequence norm {worst:.6g} exceeds declared budget {seq.budget:.6g}"
        )

    points, cluster_sizes, _ = _detect_detailed(
        seq, cfg.k_max, cfg.r_grid, eps0, cfg.detector,
        cfg.lattice_extent, cfg.lattice_spacing, cfg.detection_order,
    )

    u_k = seq.field(cfg.k_max)
    reports = []
    for x, csize in zip(points, cluster_sizes):
        flags = [] if csize == 1 else [f"unresolved-cluster:{csize}"]
        theta = theta_estimate(seq, x, cfg.r_small, cfg.k_max, cfg.order)
        if not theta.stable:
            flags.append("theta-unstable")

        parts: list[ScalarField] = [u_k]
        weights: list[float] = [1.0]
        inventory = []
        half_radius_unit = _standard_halfball_radius(n, eps_n / 2.0)
        resid_energy = bubbling_energy(u_k, x, cfg.r_small, cfg.order)
        for _ in range(cfg.max_bubbles):
            w = parts[0] if len(parts) == 1 else Superposition(parts, weights)
            if resid_energy < eps0:
                break
            rho = _half_threshold_radius(w, x, eps_n / 2.0, cfg.r_small, cfg.order)
            if rho is None:
                flags.append("half-threshold-not-reached")
                break
            # the half-threshold radius of a concentrated bubble sits at a
            # known multiple of its scale; invert that for the initial guess
            bubble, info = _fit_bubble(w, x, rho / half_radius_unit, cfg.fit_tol)
            if not info["converged"]:
                flags.append("fit-not-converged")
                break
            trial = Superposition(parts + [bubble], weights + [-1.0])
            new_energy = bubbling_energy(trial, x, cfg.r_small, cfg.order)
            if new_energy > resid_energy - 0.25 * eps_n:
                flags.append("fit-removed-no-energy")
                break
            # an exact bubble's unweighted energy is scale invariant: Lambda_0
            inventory.append((bubble.scale, bubble.center, lam0.value))
            parts.append(bubble)
            weights.append(-1.0)
            resid_energy = new_energy
        else:
            flags.append("max-bubbles-reached")
        if not inventory:
            flags.append("no-bubble-extracted")

        # cross terms are measured, not assumed small: superposition energy
        # minus the sum of the parts' energies over the Theta ball
        part_sum = sum(
            bubbling_energy(Superposition([b], [wt]), x, cfg.r_small, cfg.order)
            for b, wt in zip(u_k.parts, u_k.weights)
        )
        cross = bubbling_energy(u_k, x, cfg.r_small, cfg.order) - part_sum

        entry_idx = int(
            np.argmin([np.linalg.norm(e.center - x) for e in seq.entries])
        )
        necks: dict = {}
        for R in cfg.neck_R:
            necks[R] = {}
            for k in sorted({max(0, cfg.k_max - 2), cfg.k_max - 1, cfg.k_max}):
                try:
                    necks[R][k] = neck_energy(
                        seq, k, outer=cfg.neck_outer, R=R,
                        entry=entry_idx, order=cfg.order,
                    ).total
                except ValueError:
                    necks[R][k] = float("nan")  # annulus degenerate at this (R, k)

        theta_val = theta.value if theta.stable else float("nan")
        ratio = theta_val / lam0.value if theta.stable else float("nan")
        reports.append(
            PointReport(
                point=x,
                theta=theta_val,
                theta_stable=theta.stable,
                theta_samples=theta.samples,
                n_hat=len(inventory),
                inventory=inventory,
                ratio=ratio,
                integer_distance=abs(ratio - round(ratio))
                if np.isfinite(ratio)
                else float("nan"),
                cross_term=cross,
                necks=necks,
                weak_limit_energy=theta.weak_limit_energy,
                flags=flags,
                cluster_size=csize,
            )
        )

    report = DefectReport(
        dimension=n,
        lambda0=lam0,
        points=reports,
        thresholds={
            "eps0": eps0,
            "eps_n": eps_n,
            "r_grid": list(cfg.r_grid),
            "r_small": cfg.r_small,
            "detector": cfg.detector,
            "k_max": cfg.k_max,
        },
        budget={str(k): v for k, v in budget_vals.items()},
        description=seq.description,
    )
    report.validate()
    return report


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def report_to_json(report: DefectReport) -> dict:
    """Schema "bubble-lab/1": plot-ready arrays plus per-point detail."""
    return {
        "schema": "bubble-lab/1",
        "n": report.dimension,
        "description": report.description,
        "lambda0": {
            "value": report.lambda0.value,
            "error_bound": report.lambda0.error_bound,
        },
        "sigma_points": [p.point.tolist() for p in report.points],
        "theta": [p.theta for p in report.points],
        "n_hat": [p.n_hat for p in report.points],
        "ratios": [p.ratio for p in report.points],
        "integer_distance": [p.integer_distance for p in report.points],
        "necks": [
            [
                {"R": R, "k": k, "energy": v}
                for R, per_k in sorted(p.necks.items())
                for k, v in sorted(per_k.items())
            ]
            for p in report.points
        ],
        "inventory": [
            [
                {"delta": d, "center": list(map(float, c)), "energy": e}
                for d, c, e in p.inventory
            ]
            for p in report.points
        ],
        "cross_terms": [p.cross_term for p in report.points],
        "weak_limit_energy": [p.weak_limit_energy for p in report.points],
        "flags": [p.flags for p in report.points],
        "cluster_sizes": [p.cluster_size for p in report.points],
        "tolerances": report.thresholds,
        "budget": report.budget,
    }


def read_sequence_spec(path) -> tuple[ConcentrationSequence, dict]:
    """Parse the key-value sequence spec document.

    Layout: a [sequence] section with n, k_max, budget and optional
    thresholds, plus one [bubble:NAME] section per entry carrying
    center (whitespace-separated), base and weight.
    """
    import configparser

    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    if "sequence" not in cp:
        raise ValueError("sequence spec needs a [sequence] section")
    sec = cp["sequence"]
    n = sec.getint("n")
    budget = sec.getfloat("budget", fallback=1e6)
    spec = []
    for name in cp.sections():
        if not name.startswith("bubble"):
            continue
        b = cp[name]
        center = np.array([float(t) for t in b.get("center", "0").split()])
        if center.size == 1 and n > 1:
            center = np.zeros(n)
        spec.append((center, b.getfloat("base", fallback=4.0),
                     b.getfloat("weight", fallback=1.0)))
    seq = make_sequence(spec, budget, n, description=sec.get("description", ""))
    extras = {"k_max": sec.getint("k_max", fallback=8)}
    for key in ("eps0", "eps_n", "r_small"):
        if key in sec:
            extras[key] = sec.getfloat(key)
    return seq, extras
