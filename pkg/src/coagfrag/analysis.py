"""Stationary references, entropy bookkeeping and decay-rate extraction.

The stationary density on the interior is obtained pointwise from the
pair balance between merges into the reservoir and splits out of it, so
it never requires solving anything.  Entropy is measured against such a
reference profile and its dissipation splits into three nonnegative
channels: interior pair balance, pairs whose merge product leaves the
unit interval, and direct exchange with the reservoir.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import boundary as bdy
from .errors import ConfigError, DomainError, FitError, InvalidScenarioError, SingularProfileError
from .kernels import FragKernel, eval_coag, eval_frag
from .state import Grid, StateMeasure, Trajectory, measure_below, moment_m

__all__ = [
    "f_infinity",
    "EquilibriumProfile",
    "equilibrium_profile",
    "DetailedBalanceReport",
    "check_detailed_balance",
    "entropy",
    "entropy_series",
    "DissipationRecord",
    "dissipation",
    "entropy_balance",
    "DecayFit",
    "fit_decay",
    "LedgerReport",
    "negative_moment_ledger",
    "gronwall_envelope",
    "gronwall_check",
    "SmallSizeReport",
    "small_size_check",
]

DEFAULT_PROBES = (1.25, 1.5, 2.0, 3.0, 5.0)


def _stationary_ratio(kernel, frag: FragKernel, reservoir: bdy.BoundaryDatum, x, probe: float):
    """Split-to-merge flux ratio at size x against one reservoir probe."""
    x = np.asarray(x, dtype=float)
    K = np.asarray(eval_coag(kernel, x, probe), dtype=float)
    if np.any(K <= 0):
        raise InvalidScenarioError(
            f"coagulation rate vanishes against reservoir probe y = {probe}; "
            "the stationary density is undefined there"
        )
    gy = bdy.eval_g(reservoir, 0.0, probe)
    if gy <= 0:
        raise InvalidScenarioError(f"reservoir density vanishes at probe y = {probe}")
    F = np.asarray(eval_frag(frag, x, np.full_like(x, probe)), dtype=float)
    gsum = np.asarray(bdy.eval_g(reservoir, 0.0, x + probe), dtype=float)
    return F * gsum / (K * gy)


def f_infinity(
    kernel,
    frag: FragKernel,
    reservoir: bdy.BoundaryDatum,
    x,
    probes=DEFAULT_PROBES,
):
    """Stationary interior density at x, with its spread across probes.

    Each probe y > 1 gives one candidate value from the pair balance;
    they agree (up to round-off) exactly when the kernels and reservoir
    are mutually consistent, so the relative spread doubles as a
    consistency diagnostic.  Returns (values, spread).
    """
    if frag is None or frag.is_zero:
        raise InvalidScenarioError("a stationary density requires a nonzero fragmentation rate")
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x_arr <= 0) or np.any(x_arr > 1):
        raise DomainError("stationary density is defined on (0, 1]")
    cand = np.stack([_stationary_ratio(kernel, frag, reservoir, x_arr, p) for p in probes])
    values = cand.mean(axis=0)
    denom = np.maximum(np.abs(values), 1e-300)
    spread = float(np.max((cand.max(axis=0) - cand.min(axis=0)) / denom))
    if np.ndim(x) == 0:
        return float(values[0]), spread
    return values, spread


@dataclasses.dataclass
class EquilibriumProfile:
    """Callable stationary density: pair-balance value inside (0, 1),
    reservoir profile from 1 outward."""

    kernel: object
    frag: FragKernel
    reservoir: bdy.BoundaryDatum
    probes: tuple
    pivots: np.ndarray
    values: np.ndarray
    spread: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xs = np.atleast_1d(x)
        out = np.empty_like(xs)
        inside = xs < 1.0
        if np.any(inside):
            out[inside], _ = f_infinity(
                self.kernel, self.frag, self.reservoir, xs[inside], self.probes
            )
        if np.any(~inside):
            out[~inside] = bdy.eval_g(self.reservoir, 0.0, xs[~inside])
        return float(out[0]) if scalar else out


def equilibrium_profile(
    kernel,
    frag: FragKernel,
    reservoir: bdy.BoundaryDatum,
    grid: Grid,
    probes=DEFAULT_PROBES,
) -> EquilibriumProfile:
    """Stationary reference density tabulated at the grid pivots."""
    if reservoir.modulation != "constant":
        raise ConfigError("a stationary reference requires a time-constant reservoir")
    values, spread = f_infinity(kernel, frag, reservoir, grid.pivots, probes)
    return EquilibriumProfile(
        kernel=kernel,
        frag=frag,
        reservoir=reservoir,
        probes=tuple(probes),
        pivots=grid.pivots,
        values=values,
        spread=spread,
    )


@dataclasses.dataclass(frozen=True)
class DetailedBalanceReport:
    max_residual: float
    mean_residual: float
    worst_x: float
    worst_y: float
    n_samples: int

    def consistent(self, tol: float = 1e-9) -> bool:
        return self.max_residual <= tol


def check_detailed_balance(
    kernel,
    frag: FragKernel,
    profile,
    n_samples: int = 512,
    seed: int = 0,
) -> DetailedBalanceReport:
    """Residual of K(x,y) Q(x) Q(y) = F(x,y) Q(x+y) over sampled pairs.

    The residual is relative to the merge-side flux K Q Q.  Samples mix
    log-uniform and uniform draws so both tiny and order-one sizes are
    probed; for truncated kernels the samples stay above the cutoff.
    """
    rng = np.random.default_rng(seed)
    lo = max(1e-3, float(getattr(kernel, "threshold", 0.0)) * (1.0 + 1e-9))
    half = n_samples // 2
    xs = np.concatenate(
        [
            np.exp(rng.uniform(math.log(lo), 0.0, size=half)),
            rng.uniform(lo, 1.0, size=n_samples - half),
        ]
    )
    ys = np.concatenate(
        [
            np.exp(rng.uniform(math.log(lo), math.log(2.0), size=half)),
            rng.uniform(lo, 2.0, size=n_samples - half),
        ]
    )
    merge = np.asarray(eval_coag(kernel, xs, ys), dtype=float) * profile(xs) * profile(ys)
    split = np.asarray(eval_frag(frag, xs, ys), dtype=float) * profile(xs + ys)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(merge - split) / np.abs(merge)
    rel = np.where(np.isfinite(rel), rel, np.inf)
    worst = int(np.argmax(rel))
    return DetailedBalanceReport(
        max_residual=float(rel[worst]),
        mean_residual=float(np.mean(rel)),
        worst_x=float(xs[worst]),
        worst_y=float(ys[worst]),
        n_samples=n_samples,
    )


def entropy(state: StateMeasure, profile) -> float:
    """Free-energy functional of the cell densities against a reference.

    Cells at the reference contribute zero; empty cells contribute the
    reference mass of the cell.  The endpoint atom is excluded: it sits
    outside the density description.
    """
    f = state.densities()
    if np.any(f < 0):
        raise DomainError("entropy requires a nonnegative state")
    q = np.asarray(profile(state.grid.pivots), dtype=float)
    if np.any(q <= 0):
        raise SingularProfileError("reference profile must be positive on the grid")
    terms = np.where(f > 0, f * (np.log(np.where(f > 0, f, 1.0) / q) - 1.0), 0.0) + q
    return float(terms @ state.grid.widths)


def entropy_series(traj: Trajectory, profile) -> np.ndarray:
    return np.array([entropy(s, profile) for s in traj.states])


def _flux_gap(a, b):
    """(a - b) log(a/b) elementwise; zero when both vanish, infinite when
    exactly one does."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    shape = np.broadcast_shapes(a.shape, b.shape)
    a = np.broadcast_to(a, shape)
    b = np.broadcast_to(b, shape)
    out = np.zeros(shape)
    both = (a > 0) & (b > 0)
    out[both] = (a[both] - b[both]) * (np.log(a[both]) - np.log(b[both]))
    out[(a > 0) ^ (b > 0)] = np.inf
    return out


@dataclasses.dataclass(frozen=True)
class DissipationRecord:
    """Nonnegative entropy production split by channel."""

    t: float
    interior: float  # merge/split balance of pairs staying inside (0, 1)
    overflow: float  # pairs whose merge product reaches the reservoir
    exchange: float  # direct reservoir exchange cell by cell

    @property
    def total(self) -> float:
        return self.interior + self.overflow + self.exchange


def dissipation(
    state: StateMeasure,
    kernel,
    frag: FragKernel,
    reservoir: bdy.BoundaryDatum,
    profile,
    t: float = 0.0,
) -> DissipationRecord:
    """Entropy production of a state against a stationary reference."""
    grid = state.grid
    x = grid.pivots
    w = grid.widths
    f = state.densities()
    q = np.asarray(profile(x), dtype=float)
    if np.any(q <= 0):
        raise SingularProfileError("reference profile must be positive on the grid")

    K = np.asarray(eval_coag(kernel, x[:, None], x[None, :]), dtype=float)
    V = x[:, None] + x[None, :]
    ww = np.outer(w, w)
    # Pair channels follow the merge stencil: on lattice grids the pairs
    # reproducing the boundary pivot stay interior (their reverse flux is
    # that pivot's fragmentation), everything beyond exits to the atom.
    if x[-1] >= 1.0 - 1e-12:
        inside = V <= 1.0 + 0.5 * float(grid.widths[-1])
    else:
        inside = V < 1.0

    d1 = 0.0
    if np.any(inside):
        xi, xj = np.broadcast_arrays(x[:, None], x[None, :])
        F_in = np.asarray(eval_frag(frag, xi[inside], xj[inside]), dtype=float)
        # Half-open cells (e_{k-1}, e_k]: a sum landing exactly on an edge
        # belongs to the left cell.  The relative shrink keeps sums that
        # round one ulp past an edge in that cell instead of the next one.
        cells = np.clip(
            np.searchsorted(grid.edges, V[inside] * (1.0 - 1e-12), side="left") - 1,
            0,
            grid.n - 1,
        )
        merge = K[inside] * np.outer(f, f)[inside]
        split = F_in * f[cells]
        d1 = 0.5 * float(np.sum(ww[inside] * _flux_gap(merge, split)))

    outflow = ~inside
    merge2 = np.outer(f, f)[outflow]
    ref2 = np.outer(q, q)[outflow]
    # Each unordered exiting pair appears twice in the full square, hence the 1/2;
    # without it the production integral double-counts this channel and the
    # entropy balance cannot close.
    d2 = 0.5 * float(np.sum(ww[outflow] * K[outflow] * _flux_gap(merge2, ref2)))

    W = np.asarray(bdy.eval_G(kernel, reservoir, t, x), dtype=float)
    d3 = float(np.sum(w * W * _flux_gap(f, q)))
    return DissipationRecord(t=t, interior=d1, overflow=d2, exchange=d3)


def entropy_balance(
    traj: Trajectory,
    kernel,
    frag: FragKernel,
    reservoir: bdy.BoundaryDatum,
    profile,
):
    """Entropy series, dissipation series and the defect of their balance.

    Returns (H, D, residual) where residual = |H(T) - H(0) + trapz(D)|;
    the production integral should consume exactly the entropy drop.
    """
    H = entropy_series(traj, profile)
    D = np.array(
        [
            dissipation(s, kernel, frag, reservoir, profile, t=t).total
            for t, s in zip(traj.times, traj.states)
        ]
    )
    integral = float(np.trapezoid(D, np.asarray(traj.times)))
    residual = abs(float(H[-1] - H[0]) + integral)
    return H, D, residual


@dataclasses.dataclass(frozen=True)
class DecayFit:
    """Least-squares fit of -log(moment) against t or log t."""

    rate: float
    intercept: float
    r_squared: float
    n_points: int
    lam: float
    mode: str
    window: tuple

    def predicted(self, t):
        u = np.log(t) if self.mode == "power" else np.asarray(t, dtype=float)
        return np.exp(-(self.intercept + self.rate * u))


def fit_decay(
    traj: Trajectory,
    lam: float = 0.0,
    window: tuple | None = None,
    mode: str = "exponential",
) -> DecayFit:
    """Fit moment decay on a time window; needs at least ten snapshots.

    mode "exponential" fits m(t) ~ A exp(-rate t); mode "power" fits
    m(t) ~ A t^(-rate) and requires strictly positive window times.
    """
    if mode not in ("exponential", "power"):
        raise ConfigError(f"unknown fit mode {mode!r}")
    times = np.asarray(traj.times)
    values = traj.moment_series(lam)
    if window is None:
        window = (float(times[0]), float(times[-1]))
    t0, t1 = float(window[0]), float(window[1])
    if not t1 > t0:
        raise FitError(f"empty fit window ({t0}, {t1})")
    mask = (times >= t0) & (times <= t1)
    if int(mask.sum()) < 10:
        raise FitError(f"fit window holds {int(mask.sum())} snapshots; at least 10 required")
    ts = times[mask]
    vs = values[mask]
    if np.any(vs <= 0):
        raise FitError("moment is not strictly positive on the fit window")
    if mode == "power":
        if ts[0] <= 0:
            raise FitError("power-law fit requires strictly positive times")
        u = np.log(ts)
    else:
        u = ts
    y = -np.log(vs)
    rate, intercept = np.polyfit(u, y, 1)
    resid = y - (intercept + rate * u)
    ss_res = float(resid @ resid)
    centered = y - y.mean()
    ss_tot = float(centered @ centered)
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res <= 1e-28 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return DecayFit(
        rate=float(rate),
        intercept=float(intercept),
        r_squared=float(r2),
        n_points=int(mask.sum()),
        lam=lam,
        mode=mode,
        window=(t0, t1),
    )


@dataclasses.dataclass(frozen=True)
class LedgerReport:
    """Count budget against the declared cross-term decay floor."""

    times: np.ndarray
    ledger: np.ndarray
    max_rel_excess: float

    def ok(self, tol: float = 1e-3) -> bool:
        return self.max_rel_excess <= tol


def negative_moment_ledger(
    traj: Trajectory, kernel, reservoir: bdy.BoundaryDatum
) -> LedgerReport:
    """Check that reservoir scavenging alone accounts for the count decay.

    The declared lower bound makes the reservoir sink at least
    K1 M_beta(t) x^-alpha, so the count plus the accumulated scavenged
    amount can never exceed its initial value; the report tracks the
    worst relative excess of that ledger.
    """
    K1 = getattr(kernel, "K1", None)
    if K1 is None:
        raise ConfigError("kernel declares no cross-term lower bound (K1)")
    alpha = float(kernel.alpha)
    beta = float(kernel.beta)
    times = np.asarray(traj.times)
    m0 = traj.moment_series(0.0)
    m_neg = traj.moment_series(-alpha)
    m_beta = np.array([bdy.moment_M(reservoir, beta, t) for t in times])
    integrand = K1 * m_neg * m_beta
    cum = np.concatenate(
        [[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(times))]
    )
    ledger = m0 + cum
    denom = max(float(m0[0]), 1e-300)
    excess = float(np.max(ledger - m0[0])) / denom
    return LedgerReport(times=times, ledger=ledger, max_rel_excess=max(excess, 0.0))


def _frag_constants(frag: FragKernel | None, reservoir: bdy.BoundaryDatum):
    if frag is None or frag.is_zero:
        return 0.0, 0.0, 0.0
    if frag.F0 is None:
        raise ConfigError("fragmentation kernel lacks a declared sum-power bound")
    m_gamma = bdy.uniform_moment(reservoir, float(frag.gamma))
    return float(frag.F0), float(frag.gamma), m_gamma


def gronwall_envelope(
    m0_init: float, frag: FragKernel | None, reservoir: bdy.BoundaryDatum, times
) -> np.ndarray:
    """A-priori ceiling on the total count from the declared split bound."""
    F0, _, m_gamma = _frag_constants(frag, reservoir)
    ts = np.asarray(times, dtype=float)
    return (m0_init + 2.0 * F0 * m_gamma * ts) * np.exp(F0 * ts)


def gronwall_check(traj: Trajectory, frag: FragKernel | None, reservoir: bdy.BoundaryDatum):
    """Worst excess of the count over its a-priori ceiling (<= 0 means clean)."""
    m0 = traj.moment_series(0.0)
    env = gronwall_envelope(float(m0[0]), frag, reservoir, traj.times)
    return float(np.max(m0 - env))


@dataclasses.dataclass(frozen=True)
class SmallSizeReport:
    deltas: np.ndarray
    excesses: np.ndarray  # growth of the count below each radius
    bounds: np.ndarray  # linear-in-delta ceiling for that growth

    def ok(self, slack: float = 1.0) -> bool:
        return bool(np.all(self.excesses <= slack * self.bounds + 1e-12))


def small_size_check(
    traj: Trajectory,
    frag: FragKernel | None,
    reservoir: bdy.BoundaryDatum,
    deltas,
) -> SmallSizeReport:
    """Growth of the count below dyadic radii against its linear ceiling.

    Only splitting and the reservoir source can push counts below a
    radius, both at a rate linear in it, so the growth over the initial
    value must vanish proportionally with delta.  The ceiling uses the
    smallest pivot at or above each radius (the resolvable radius) and
    carries a factor-three headroom for allocation spill at cell edges.
    """
    F0, _, m_gamma = _frag_constants(frag, reservoir)
    T = float(traj.times[-1])
    m0 = traj.moment_series(0.0)
    sup_count = float(np.max(gronwall_envelope(float(m0[0]), frag, reservoir, traj.times)))
    pivots = traj.grid.pivots
    deltas = np.asarray(deltas, dtype=float)
    excesses = np.empty_like(deltas)
    bounds = np.empty_like(deltas)
    for k, d in enumerate(deltas):
        eff = pivots[pivots >= d]
        d_eff = float(eff[0]) if len(eff) else 1.0
        below0 = measure_below(traj.states[0], d)
        worst = max(measure_below(s, d) - below0 for s in traj.states)
        excesses[k] = max(worst, 0.0)
        bounds[k] = 3.0 * F0 * T * (sup_count + m_gamma) * d_eff
    return SmallSizeReport(deltas=deltas, excesses=excesses, bounds=bounds)
