"""Discrete evolution operators on a sectional grid.

The right-hand side assembles six contributions: coagulation gain
(fixed-pivot two-point allocation), overflow of merge products at or
above unit size into the endpoint atom, coagulation loss, reservoir
sink, binary fragmentation (loss plus a mass-closing split table), and
the reservoir source.  All pair bookkeeping is precomputed into tables
so a single evaluation is a handful of vectorized array operations.

Conservation conventions:

* a merge with x_i + x_j < 1 conserves count and mass exactly through
  the two-point split (the right neighbour of the last pivot is the
  atom at 1);
* a merge with x_i + x_j >= 1 deposits one count into the atom and the
  mass excess x_i + x_j - 1 is tracked as exited mass;
* a fragmentation event destroys one parent and deposits a fragment
  pair whose joint allocation restores the parent mass exactly; the
  smaller fragment of a pair is clipped up to the first pivot when it
  would fall below it (the partner is shifted to compensate), and the
  smallest cell does not fragment at all since its fragments are below
  the resolved range.  Each event therefore changes the count by
  exactly +1 and the mass by exactly 0.

The endpoint atom is inert by default: it does not coagulate, fragment,
or feel the reservoir sink.  Test functions vanishing at 0 never move
it back into the interior cells.  An optional absorbing sink applies
the rate G(t, 1) to it for bookkeeping experiments.
"""

from __future__ import annotations

import dataclasses
import functools

import numpy as np

from . import boundary as bdy
from .errors import ConfigError
from .kernels import FragKernel, eval_coag, eval_frag
from .state import Grid, StateMeasure, Trajectory

__all__ = [
    "RhsTables",
    "RhsResult",
    "build_tables",
    "rhs",
    "apply_A",
    "apply_B",
    "weak_residual",
    "weak_residual_series",
]


@dataclasses.dataclass
class RhsTables:
    """Precomputed pair rates and allocation stencils for one grid/kernel set."""

    grid: Grid
    kernel: object
    frag: FragKernel | None
    reservoir: bdy.BoundaryDatum
    K: np.ndarray  # pairwise coagulation rates at pivots
    alloc_idx_l: np.ndarray  # merge target cells, n meaning the atom
    alloc_idx_r: np.ndarray
    alloc_w_l: np.ndarray
    alloc_w_r: np.ndarray
    overflow_excess: np.ndarray  # mass beyond 1 per overflow merge
    frag_loss: np.ndarray  # event rate per parent count
    frag_gain: np.ndarray  # frag_gain[j, l]: count rate into l per parent count in j
    boundary: bdy.BoundaryTables
    atom_sink: bool = False

    @property
    def n(self) -> int:
        return self.grid.n


@dataclasses.dataclass
class RhsResult:
    """Rate of change plus the pieces needed for budget accounting."""

    dc: np.ndarray
    datom: float
    exited_mass_rate: float
    source_mass_rate: float
    sink_mass_rate: float
    parts: dict | None = None

    def budget_mass_rate(self) -> float:
        """Expected d(m1)/dt: source minus sink minus overflow excess."""
        return self.source_mass_rate - self.sink_mass_rate - self.exited_mass_rate


def _merge_allocation(grid: Grid):
    """Two-point fixed-pivot stencil for every pivot pair.

    Products land at min(x_i + x_j, 1); the clamped mass excess is
    tracked separately so budgets close.  When the last pivot sits at 1
    (lattice grids) the pair sums reproducing it exactly stay on that
    pivot, which keeps the scheme in one-to-one correspondence with the
    integer-size system; sums beyond it charge the atom.
    """
    x = grid.pivots
    n = grid.n
    S = x[:, None] + x[None, :]
    V = np.minimum(S, 1.0)
    excess = S - V
    idx_l = np.empty((n, n), dtype=np.intp)
    idx_r = np.empty((n, n), dtype=np.intp)
    w_l = np.empty((n, n))
    w_r = np.empty((n, n))

    # Tolerance half the top cell width: captures only the diagonal that
    # reproduces the boundary pivot, never the next pair diagonal.
    top_at_one = x[n - 1] >= 1.0 - 1e-12
    if top_at_one:
        over = S > 1.0 + 0.5 * grid.widths[n - 1]
    else:
        over = S >= 1.0
    idx_l[over] = n
    idx_r[over] = n
    w_l[over] = 1.0
    w_r[over] = 0.0

    inter = ~over
    v = V[inter]
    left = np.searchsorted(x, v, side="right") - 1
    # v >= max(x_i, x_j) guarantees left >= 0.
    top = left == n - 1
    right = np.minimum(left + 1, n - 1)
    xl = x[left]
    if top_at_one:
        # In the top bracket v == x[n-1] exactly, so any xr > xl gives wl = 1.
        xr = np.where(top, xl + 1.0, x[right])
        idx_r[inter] = right
    else:
        xr = np.where(top, 1.0, x[right])
        idx_r[inter] = np.where(top, n, right)
    wl = (xr - v) / (xr - xl)
    idx_l[inter] = left
    w_l[inter] = wl
    w_r[inter] = 1.0 - wl
    return idx_l, idx_r, w_l, w_r, excess


def _two_point(grid: Grid, pos: np.ndarray):
    """Split positions in [x_1, x_n] between bracketing pivots."""
    x = grid.pivots
    left = np.clip(np.searchsorted(x, pos, side="right") - 1, 0, grid.n - 2)
    right = left + 1
    wl = (x[right] - pos) / (x[right] - x[left])
    wl = np.clip(wl, 0.0, 1.0)
    return left, right, wl


def _frag_tables(grid: Grid, frag: FragKernel):
    """Per-parent event rates and fragment split table.

    Fragment pairs (y, X - y) with y <= X/2 are enumerated over segments
    cut by the cell edges and their mirror images, so the midpoint rule
    sees one receiving cell per segment on both sides.  Uniform lattice
    grids instead pair pivots directly: fragments of the parent at pivot
    j land on pivots (k, j-1-k) whose sizes sum to the parent exactly,
    the same channels the merge stencil uses in reverse.
    """
    n = grid.n
    x = grid.pivots
    edges = grid.edges
    loss = np.zeros(n)
    gain = np.zeros((n, n))
    if frag is None or frag.is_zero:
        return loss, gain

    if grid.lattice and grid.kind == "uniform":
        w = float(grid.widths[0])
        for j in range(1, n):
            ks = np.arange(j)
            rates = w * np.asarray(eval_frag(frag, x[ks], x[j - 1 - ks]), dtype=float)
            lam = 0.5 * float(np.sum(rates))
            if lam == 0.0:
                continue
            loss[j] = lam
            gain[j, :j] = rates
        return loss, gain

    for j in range(1, n):  # the smallest cell does not fragment
        X = x[j]
        half = X / 2.0
        cuts = edges[(edges > 0.0) & (edges < X)]
        pts = np.concatenate([cuts, X - cuts])
        pts = pts[(pts > 0.0) & (pts < half)]
        pts = np.unique(np.concatenate([[0.0], pts, [half]]))
        mids = 0.5 * (pts[:-1] + pts[1:])
        widths = np.diff(pts)
        u = eval_frag(frag, X - mids, mids) * widths  # event rate per segment
        lam = float(np.sum(u))
        if lam == 0.0:
            continue
        loss[j] = lam

        small = np.maximum(mids, x[0])  # clip sub-pivot fragments up
        large = X - small
        for pos in (small, large):
            il, ir, wl = _two_point(grid, pos)
            np.add.at(gain[j], il, u * wl)
            np.add.at(gain[j], ir, u * (1.0 - wl))
    return loss, gain


def build_tables(
    grid: Grid,
    kernel,
    frag: FragKernel | None = None,
    reservoir: bdy.BoundaryDatum | None = None,
    atom_sink: bool = False,
) -> RhsTables:
    """Assemble all pair rates and allocation stencils for rhs evaluation."""
    if reservoir is None:
        reservoir = bdy.zero_reservoir()
    x = grid.pivots
    K = np.asarray(eval_coag(kernel, x[:, None], x[None, :]), dtype=float)
    idx_l, idx_r, w_l, w_r, excess = _merge_allocation(grid)
    frag_loss, frag_gain = _frag_tables(grid, frag)
    tables = bdy.precompute_tables(kernel, frag, reservoir, x)
    return RhsTables(
        grid=grid,
        kernel=kernel,
        frag=frag,
        reservoir=reservoir,
        K=K,
        alloc_idx_l=idx_l,
        alloc_idx_r=idx_r,
        alloc_w_l=w_l,
        alloc_w_r=w_r,
        overflow_excess=excess,
        frag_loss=frag_loss,
        frag_gain=frag_gain,
        boundary=tables,
        atom_sink=atom_sink,
    )


def rhs(state: StateMeasure, tables: RhsTables, t: float = 0.0, split: bool = False) -> RhsResult:
    """Time derivative of a state under the assembled tables.

    Returns per-cell rates, the atom rate, and the scalar budget pieces.
    With split=True the six contributions are reported separately.
    """
    if state.grid is not tables.grid and not np.array_equal(
        state.grid.edges, tables.grid.edges
    ):
        raise ConfigError("state grid differs from the grid the tables were built on")
    c = state.counts
    n = tables.n
    x = tables.grid.pivots
    widths = tables.grid.widths

    P = 0.5 * tables.K * np.outer(c, c)  # ordered-pair merge rates
    gain = np.bincount(
        tables.alloc_idx_l.ravel(), weights=(P * tables.alloc_w_l).ravel(), minlength=n + 1
    )
    gain += np.bincount(
        tables.alloc_idx_r.ravel(), weights=(P * tables.alloc_w_r).ravel(), minlength=n + 1
    )
    coag_gain = gain[:n]
    atom_gain = float(gain[n])
    coag_loss = c * (tables.K @ c)
    exited = float(np.sum(P * tables.overflow_excess))

    mod = bdy.modulation_factor(tables.reservoir, t)
    G = mod * tables.boundary.G0
    sink = G * c
    source = mod * tables.boundary.C0 * widths

    frag_gain = tables.frag_gain.T @ c
    frag_loss = tables.frag_loss * c

    dc = coag_gain - coag_loss - sink + frag_gain - frag_loss + source
    datom = atom_gain
    sink_mass = float(sink @ x)
    if tables.atom_sink and state.atom != 0.0:
        atom_rate = mod * tables.boundary.G0_at_one * state.atom
        datom -= atom_rate
        sink_mass += atom_rate

    result = RhsResult(
        dc=dc,
        datom=datom,
        exited_mass_rate=exited,
        source_mass_rate=float(source @ x),
        sink_mass_rate=sink_mass,
    )
    if split:
        result.parts = {
            "coag_gain": coag_gain,
            "coag_loss": coag_loss,
            "atom_gain": atom_gain,
            "sink": sink,
            "frag_gain": frag_gain,
            "frag_loss": frag_loss,
            "source": source,
        }
    return result


def apply_A(phi, x, y):
    """Merge increment phi(x + y, capped at 1) - phi(x) - phi(y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = phi(np.minimum(x + y, 1.0)) - phi(x) - phi(y)
    return out if np.ndim(out) else float(out)


@functools.lru_cache(maxsize=8)
def _leg_nodes(n: int):
    return np.polynomial.legendre.leggauss(n)


def apply_B(phi, frag: FragKernel | None, x, quad_n: int = 64):
    """Fragmentation increment (1/2) int_0^x F(x-y, y) (phi(x) - phi(x-y) - phi(y)) dy.

    The integrand is symmetric about x/2, so Gauss-Legendre nodes are
    placed on (0, x/2) only and the half-interval integral is taken once.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    xs = np.atleast_1d(x)
    if np.any(xs <= 0) or np.any(xs > 1.0):
        raise ConfigError("apply_B is defined for sizes in (0, 1]")
    if frag is None or frag.is_zero:
        out = np.zeros_like(xs)
        return float(out[0]) if scalar else out

    nodes, weights = _leg_nodes(quad_n)
    half = xs / 2.0
    ys = 0.5 * half[:, None] * (nodes[None, :] + 1.0)  # (m, q) nodes on (0, x/2)
    w = 0.5 * half[:, None] * weights[None, :]
    F = eval_frag(frag, xs[:, None] - ys, ys)
    dphi = phi(xs)[..., None] - phi(xs[:, None] - ys) - phi(ys)
    out = np.sum(F * dphi * w, axis=1)
    return float(out[0]) if scalar else out


def _pairing(state: StateMeasure, phi) -> float:
    return float(state.counts @ phi(state.grid.pivots) + state.atom * phi(1.0))


def weak_residual_series(traj: Trajectory, phi, tables: RhsTables, quad_n: int = 64) -> np.ndarray:
    """Residual of the time-integrated weak form at every snapshot time.

    The quadratic term is the double sum over interior cells (the atom is
    inert and does not pair), the linear sink/fragmentation term uses the
    continuous operators at pivots, and the time integral is a trapezoid
    over the snapshot times.
    """
    x = tables.grid.pivots
    widths = tables.grid.widths
    n = tables.n
    phi_x = phi(x)
    A = apply_A(phi, x[:, None], x[None, :])
    KA = tables.K * A
    B = apply_B(phi, tables.frag, x, quad_n=quad_n)

    times = np.asarray(traj.times)
    integrand = np.empty(len(times))
    for k, (t, s) in enumerate(zip(times, traj.states)):
        c = s.counts
        mod = bdy.modulation_factor(tables.reservoir, t)
        quad = 0.5 * float(c @ KA @ c)
        linear = float(c @ (mod * tables.boundary.G0 * phi_x + B))
        if tables.atom_sink:
            linear += mod * tables.boundary.G0_at_one * s.atom * phi(1.0)
        source = mod * float((tables.boundary.C0 * widths) @ phi_x)
        integrand[k] = quad - linear + source

    lhs = np.array([_pairing(s, phi) for s in traj.states])
    cumulative = np.concatenate(
        [[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(times))]
    )
    return np.abs(lhs - lhs[0] - cumulative)


def weak_residual(traj: Trajectory, phi, tables: RhsTables, t: float, quad_n: int = 64) -> float:
    """Weak-form residual |<mu_t, phi> - <mu_0, phi> - int_0^t (...) ds| at one time."""
    times = np.asarray(traj.times)
    k = int(np.argmin(np.abs(times - t)))
    if abs(times[k] - t) > 1e-9 * max(1.0, abs(t)):
        raise ConfigError(f"t = {t} is not a snapshot time")
    return float(weak_residual_series(traj, phi, tables, quad_n=quad_n)[k])
