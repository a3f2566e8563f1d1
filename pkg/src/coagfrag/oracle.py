"""Independent reference implementations for cross-checking the solver.

A lattice birth-death system over integer multiples of a base size,
integrated with a classic fixed-step 4-stage Runge-Kutta method, and a
composite-trapezoid quadrature with Richardson extrapolation.  Nothing
here shares code with the sectional scheme on purpose.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "DiscreteSystem",
    "discrete_rhs",
    "integrate_discrete",
    "quad_oracle",
]


@dataclasses.dataclass
class DiscreteSystem:
    """Closed N-species system with pairwise merge and binary split rates.

    K and F are symmetric (N, N) matrices indexed by species pair (1-based
    sizes i+1, j+1 map to array indices i, j); source is a constant
    per-species inflow and sink a linear per-species outflow rate.
    Merge products beyond species N leave the system.
    """

    N: int
    K: np.ndarray
    F: np.ndarray | None = None
    source: np.ndarray | None = None
    sink: np.ndarray | None = None

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=float)
        if self.K.shape != (self.N, self.N):
            raise ConfigError(f"K must be ({self.N}, {self.N}), got {self.K.shape}")
        if not np.array_equal(self.K, self.K.T):
            raise ConfigError("K must be symmetric")
        if self.F is None:
            self.F = np.zeros((self.N, self.N))
        self.F = np.asarray(self.F, dtype=float)
        if self.F.shape != (self.N, self.N):
            raise ConfigError(f"F must be ({self.N}, {self.N}), got {self.F.shape}")
        if not np.array_equal(self.F, self.F.T):
            raise ConfigError("F must be symmetric")
        self.source = (
            np.zeros(self.N) if self.source is None else np.asarray(self.source, dtype=float)
        )
        self.sink = np.zeros(self.N) if self.sink is None else np.asarray(self.sink, dtype=float)
        if self.source.shape != (self.N,) or self.sink.shape != (self.N,):
            raise ConfigError("source and sink must be length-N vectors")


class _Work:
    """State-independent index tables for fast rhs evaluation."""

    def __init__(self, sys: DiscreteSystem):
        N = sys.N
        i = np.arange(N)
        # Merge product species (1-based): (i+1) + (j+1); keep <= N.
        prod = (i[:, None] + i[None, :] + 2).ravel()
        self.keep = prod <= N
        self.prod_idx = prod[self.keep] - 1
        # Split loss: 0.5 * sum_{j=1}^{i-1} F_{j, i-j} per species i.
        loss = np.zeros(N)
        for m in range(N):  # species m+1
            js = np.arange(1, m + 1)  # fragment sizes 1..m
            if len(js):
                loss[m] = 0.5 * np.sum(sys.F[js - 1, m + 1 - js - 1])
        self.split_loss = loss
        # Split gain matrix: gain_i = sum_j F[i, j] c_{i+j}  ->  SG @ c.
        SG = np.zeros((N, N))
        for m in range(N):  # receiving species m+1
            sizes = np.arange(1, N - m)  # partner sizes j with (m+1)+j <= N
            SG[m, m + sizes] = sys.F[m, sizes - 1]
        self.split_gain = SG


def discrete_rhs(sys: DiscreteSystem, c, work: _Work | None = None) -> np.ndarray:
    """Right-hand side of the lattice birth-death system.

    All pair sums start at species 1; there is no species 0.
    """
    c = np.asarray(c, dtype=float)
    if c.shape != (sys.N,):
        raise DomainError(f"state must have length {sys.N}, got {c.shape}")
    if work is None:
        work = _Work(sys)
    pair = 0.5 * sys.K * np.outer(c, c)
    gain = np.bincount(work.prod_idx, weights=pair.ravel()[work.keep], minlength=sys.N)
    merge_loss = c * (sys.K @ c)
    split_loss = work.split_loss * c
    split_gain = work.split_gain @ c
    return gain - merge_loss + split_gain - split_loss + sys.source - sys.sink * c


def _rk4(sys: DiscreteSystem, work: _Work, c0: np.ndarray, dt: float, steps: int, record: dict):
    c = c0.copy()
    t = 0.0
    for k in range(steps):
        k1 = discrete_rhs(sys, c, work)
        k2 = discrete_rhs(sys, c + 0.5 * dt * k1, work)
        k3 = discrete_rhs(sys, c + 0.5 * dt * k2, work)
        k4 = discrete_rhs(sys, c + dt * k3, work)
        c = c + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = (k + 1) * dt
        if (k + 1) in record:
            record[k + 1] = c.copy()
    return c


def integrate_discrete(
    sys: DiscreteSystem,
    c0,
    T: float,
    checkpoints=None,
    base_steps: int = 64,
    rtol: float = 1e-8,
    max_refine: int = 16,
):
    """Integrate to time T with a 4-stage explicit one-step method.

    The step count doubles until two successive refinements agree to
    rtol in the sup norm at T.  Returns (final_state, checkpoint_states)
    where checkpoint_states maps each requested time to its state.
    """
    c0 = np.asarray(c0, dtype=float)
    if T <= 0:
        raise ConfigError(f"horizon must be positive, got {T}")
    checkpoints = [] if checkpoints is None else list(checkpoints)
    work = _Work(sys)

    def run(steps: int):
        marks = {}
        for tc in checkpoints:
            idx = round(tc / (T / steps))
            if abs(idx * (T / steps) - tc) > 1e-9 * max(T, 1.0):
                raise ConfigError(f"checkpoint {tc} not resolvable with {steps} steps")
            marks[idx] = None
        final = _rk4(sys, work, c0, T / steps, steps, marks)
        return final, marks

    steps = base_steps
    prev, prev_marks = run(steps)
    for _ in range(max_refine):
        steps *= 2
        cur, cur_marks = run(steps)
        scale = max(float(np.max(np.abs(cur))), 1e-300)
        if float(np.max(np.abs(cur - prev))) <= rtol * scale:
            states = {tc: cur_marks[round(tc / (T / steps))] for tc in checkpoints}
            return cur, states
        prev = cur
    raise ConfigError("discrete oracle did not converge under step refinement")


def quad_oracle(fn, a: float, b: float, rtol: float = 1e-9, n0: int = 64, n_max: int = 10_000_000):
    """Composite trapezoid with doubling and a Richardson-extrapolated value.

    Returns (value, estimated_error); value is the Richardson combination
    of the two finest levels.
    """
    if not b > a:
        raise ConfigError(f"bad interval [{a}, {b}]")
    n = n0
    xs = np.linspace(a, b, n + 1)
    fs = np.asarray(fn(xs), dtype=float)
    coarse = np.trapezoid(fs, xs)
    while n < n_max:
        n *= 2
        xs = np.linspace(a, b, n + 1)
        fs = np.asarray(fn(xs), dtype=float)
        fine = np.trapezoid(fs, xs)
        err = abs(fine - coarse)
        if err <= rtol * max(abs(fine), 1e-300):
            return (4.0 * fine - coarse) / 3.0, err / 3.0
        coarse = fine
    raise ConfigError(f"quadrature did not reach rtol={rtol} within n={n_max}")
