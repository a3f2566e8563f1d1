"""Sectional grids on (0, 1], particle states, and test functions.

A state is a vector of per-cell counts plus a separate atom sitting at
the endpoint x = 1, which collects merge products that reach or exceed
unit size.  Cells are the half-open intervals (e_{i-1}, e_i]; each cell
is represented by a pivot inside it.
"""

from __future__ import annotations

import bisect
import csv
import dataclasses
import functools
import warnings

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "Grid",
    "StateMeasure",
    "TestFunction",
    "Trajectory",
    "build_grid",
    "cell_of",
    "from_density",
    "from_spikes",
    "moment_m",
    "pair_test",
    "measure_below",
    "piecewise_linear",
    "random_lipschitz",
    "function_battery",
    "save_state_csv",
    "load_state_csv",
]


@dataclasses.dataclass(frozen=True)
class Grid:
    """Partition 0 = e_0 < e_1 < ... < e_n = 1 with one pivot per cell."""

    edges: np.ndarray
    pivots: np.ndarray
    kind: str = "uniform"
    ratio: float | None = None
    lattice: bool = False

    @property
    def n(self) -> int:
        return len(self.pivots)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)


def build_grid(
    n: int, kind: str = "uniform", ratio: float | None = None, lattice: bool = False
) -> Grid:
    """Build a uniform or geometric grid of n cells on (0, 1].

    Geometric grids have edges e_i = ratio^(i-n), refining toward zero.
    Pivots sit at the geometric mean of their cell edges (first cell at
    e_1 / 2); the lattice flag forces pivots onto right edges instead,
    which makes merge products of equal cells land exactly on pivots.
    """
    if n < 2:
        raise ConfigError(f"grid needs at least 2 cells, got {n}")
    if kind == "uniform":
        edges = np.linspace(0.0, 1.0, n + 1)
    elif kind == "geometric":
        if ratio is None or ratio <= 1.0:
            raise ConfigError(f"geometric grid needs ratio > 1, got {ratio}")
        edges = np.empty(n + 1)
        edges[0] = 0.0
        edges[1:] = float(ratio) ** (np.arange(1, n + 1) - n)
    else:
        raise ConfigError(f"unknown grid kind {kind!r}")
    edges[-1] = 1.0

    if lattice:
        pivots = edges[1:].copy()
    else:
        pivots = np.empty(n)
        pivots[0] = edges[1] / 2.0
        pivots[1:] = np.sqrt(edges[1:-1] * edges[2:])
    return Grid(edges=edges, pivots=pivots, kind=kind, ratio=ratio, lattice=lattice)


def cell_of(grid: Grid, x: float) -> int:
    """Index of the cell (e_{i-1}, e_i] containing x, for x in (0, 1]."""
    if x <= 0.0 or x > 1.0:
        raise DomainError(f"size {x} outside (0, 1]")
    return int(np.searchsorted(grid.edges, x, side="left")) - 1


@dataclasses.dataclass
class StateMeasure:
    """Counts per grid cell plus an atom at the endpoint x = 1."""

    grid: Grid
    counts: np.ndarray
    atom: float = 0.0

    def copy(self) -> "StateMeasure":
        return StateMeasure(grid=self.grid, counts=self.counts.copy(), atom=self.atom)

    @property
    def total(self) -> float:
        """Total count including the atom (equals total variation when nonnegative)."""
        return float(self.counts.sum() + self.atom)

    def tv(self) -> float:
        """Total variation, valid also for signed intermediate states."""
        return float(np.abs(self.counts).sum() + abs(self.atom))

    def densities(self) -> np.ndarray:
        return self.counts / self.grid.widths


def _warn_if_piled(counts: np.ndarray, atom: float) -> None:
    total = counts.sum() + atom
    if total > 0 and counts[0] > 0.5 * total:
        warnings.warn(
            "more than half of the total count sits in the first cell; "
            "the grid under-resolves the small-size end",
            stacklevel=3,
        )


@functools.lru_cache(maxsize=8)
def _gauss_nodes(n: int):
    return np.polynomial.legendre.leggauss(n)


def from_density(grid: Grid, density, gauss_n: int = 16) -> StateMeasure:
    """Integrate a nonnegative density over each cell to get counts."""
    nodes, weights = _gauss_nodes(gauss_n)
    left = grid.edges[:-1][:, None]
    right = grid.edges[1:][:, None]
    half = (right - left) / 2.0
    xs = left + half * (nodes[None, :] + 1.0)
    vals = np.asarray(density(xs), dtype=float)
    if np.any(vals < 0):
        raise DomainError("initial density must be nonnegative")
    counts = (vals * weights[None, :] * half).sum(axis=1)
    _warn_if_piled(counts, 0.0)
    return StateMeasure(grid=grid, counts=counts, atom=0.0)


def from_spikes(grid: Grid, spikes) -> StateMeasure:
    """Place (size, count) spikes into their containing cells.

    A spike at exactly 1.0 goes to the last cell, not the atom; the atom
    is reserved for merge products tracked by the solver.  Spikes are
    deliberate point masses, so no resolution warning applies.
    """
    counts = np.zeros(grid.n)
    for pos, cnt in spikes:
        if cnt < 0:
            raise DomainError(f"spike count must be nonnegative, got {cnt}")
        counts[cell_of(grid, float(pos))] += float(cnt)
    return StateMeasure(grid=grid, counts=counts, atom=0.0)


def moment_m(state: StateMeasure, lam: float) -> float:
    """Moment of order lam: sum_i c_i x_i^lam plus the atom at 1."""
    return float(state.counts @ state.grid.pivots**lam + state.atom)


def pair_test(state: StateMeasure, phi) -> float:
    """Pairing <state, phi> = sum_i c_i phi(x_i) + atom * phi(1)."""
    return float(state.counts @ phi(state.grid.pivots) + state.atom * phi(1.0))


def measure_below(state: StateMeasure, delta: float) -> float:
    """Count carried by pivots strictly below delta (small-size tail mass)."""
    return float(state.counts[state.grid.pivots < delta].sum())


@dataclasses.dataclass(frozen=True)
class TestFunction:
    """Piecewise-linear function on (0, 1] vanishing at 0.

    Defined by breakpoints in (0, 1]; implied anchor (0, 0); constant
    extension past the last breakpoint and past x = 1.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __call__(self, x):
        out = np.interp(x, self._xs, self._ys)
        return out if np.ndim(out) else float(out)

    @functools.cached_property
    def _xs(self) -> np.ndarray:
        return np.concatenate([[0.0], self.breakpoints])

    @functools.cached_property
    def _ys(self) -> np.ndarray:
        return np.concatenate([[0.0], self.values])

    @property
    def lip(self) -> float:
        """Exact Lipschitz seminorm: the largest absolute segment slope."""
        return float(np.max(np.abs(np.diff(self._ys) / np.diff(self._xs))))

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self._ys)))


def piecewise_linear(breakpoints, values) -> TestFunction:
    bp = np.asarray(breakpoints, dtype=float)
    vals = np.asarray(values, dtype=float)
    if bp.ndim != 1 or bp.shape != vals.shape or len(bp) == 0:
        raise ConfigError("breakpoints and values must be matching 1-D sequences")
    if np.any(bp <= 0) or np.any(bp > 1.0):
        raise ConfigError("test-function breakpoints must lie in (0, 1]")
    if np.any(np.diff(bp) <= 0):
        raise ConfigError("test-function breakpoints must be strictly increasing")
    if not np.all(np.isfinite(vals)):
        raise ConfigError("test-function values must be finite")
    return TestFunction(breakpoints=bp, values=vals)


def random_lipschitz(rng: np.random.Generator, n_breaks: int = 12) -> TestFunction:
    """Random piecewise-linear member of Lip_0(0, 1], values in [-1, 1]."""
    bp = np.unique(rng.uniform(0.05, 1.0, size=n_breaks - 1))
    bp = np.append(bp, 1.0) if bp[-1] < 1.0 else bp
    vals = rng.uniform(-1.0, 1.0, size=len(bp))
    return piecewise_linear(bp, vals)


def function_battery(m: int = 20, seed: int = 7) -> list[TestFunction]:
    """Deterministic battery of sup-normalized test functions.

    The first entries are structured (identity ramp, parabola-like arch,
    steep near-indicator, hats); the rest are seeded random profiles.
    """
    battery: list[TestFunction] = [
        piecewise_linear([1.0], [1.0]),  # phi(x) = x
        piecewise_linear([0.5, 1.0], [1.0, 0.0]),  # arch peaking mid-interval
        piecewise_linear([0.01, 1.0], [1.0, 1.0]),  # steep ramp to a plateau
    ]
    centers = np.linspace(0.15, 0.9, 6)
    for c in centers:
        width = 0.1
        left = max(c - width, 1e-3)
        right = min(c + width, 1.0)
        if right < 1.0:
            battery.append(piecewise_linear([left, c, right, 1.0], [0.0, 1.0, 0.0, 0.0]))
        else:
            battery.append(piecewise_linear([left, c, 1.0], [0.0, 1.0, 0.0]))
    rng = np.random.default_rng(seed)
    while len(battery) < m:
        phi = random_lipschitz(rng)
        scale = phi.sup
        if scale == 0.0:
            continue
        battery.append(piecewise_linear(phi.breakpoints, phi.values / scale))
    return battery[:m]


@dataclasses.dataclass
class Trajectory:
    """Snapshots of a run at strictly increasing times on a fixed grid."""

    grid: Grid
    times: list = dataclasses.field(default_factory=list)
    states: list = dataclasses.field(default_factory=list)
    context: object = None

    def append(self, t: float, state: StateMeasure) -> None:
        if self.times and t <= self.times[-1]:
            raise ConfigError(f"snapshot times must increase, got {t} after {self.times[-1]}")
        if state.grid is not self.grid and not np.array_equal(state.grid.edges, self.grid.edges):
            raise ConfigError("snapshot grid differs from trajectory grid")
        self.times.append(float(t))
        self.states.append(state)

    def __len__(self) -> int:
        return len(self.times)

    def state_at(self, t: float) -> StateMeasure:
        i = bisect.bisect_left(self.times, t)
        for k in (i, i - 1, i + 1):
            if 0 <= k < len(self.times) and abs(self.times[k] - t) <= 1e-12 * max(1.0, abs(t)):
                return self.states[k]
        raise KeyError(f"no snapshot at t = {t}")

    def moment_series(self, lam: float) -> np.ndarray:
        return np.array([moment_m(s, lam) for s in self.states])


_ATOM_ROW = "atom"


def save_state_csv(state: StateMeasure, path) -> None:
    """Write cells as (cell_index, left_edge, right_edge, pivot, count) rows
    plus a final atom row; floats use shortest round-trip formatting."""
    g = state.grid
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_index", "left_edge", "right_edge", "pivot", "count"])
        for i in range(g.n):
            writer.writerow(
                [
                    i,
                    repr(float(g.edges[i])),
                    repr(float(g.edges[i + 1])),
                    repr(float(g.pivots[i])),
                    repr(float(state.counts[i])),
                ]
            )
        writer.writerow([_ATOM_ROW, "", "", repr(1.0), repr(float(state.atom))])


def load_state_csv(path, grid: Grid | None = None) -> StateMeasure:
    """Rebuild a state (and grid, unless one is supplied) from a state CSV."""
    lefts, rights, pivots, counts = [], [], [], []
    atom = 0.0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:1] != ["cell_index"]:
            raise ConfigError(f"not a state CSV: unexpected header {header!r}")
        for row in reader:
            if row[0] == _ATOM_ROW:
                atom = float(row[4])
                continue
            lefts.append(float(row[1]))
            rights.append(float(row[2]))
            pivots.append(float(row[3]))
            counts.append(float(row[4]))
    edges = np.array(lefts + [rights[-1]])
    if not np.allclose(edges[1:-1], rights[:-1], rtol=0, atol=0):
        raise ConfigError("state CSV cells are not contiguous")
    file_grid = Grid(edges=edges, pivots=np.array(pivots), kind="custom")
    if grid is not None:
        if not (
            np.array_equal(grid.edges, file_grid.edges)
            and np.array_equal(grid.pivots, file_grid.pivots)
        ):
            raise ConfigError("state CSV grid does not match the expected grid")
        file_grid = grid
    return StateMeasure(grid=file_grid, counts=np.array(counts), atom=atom)
