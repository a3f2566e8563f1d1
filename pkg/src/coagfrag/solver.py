"""Time integration of the sectional system.

Two explicit one-step schemes (forward Euler and the trapezoidal
predictor-corrector) share an adaptive loop that enforces positivity by
construction: any stage whose net rate would drain a cell faster than
the safety fraction allows is rejected and retried with half the step.
A separate short-time route iterates the integral fixed-point map on a
uniform time grid and certifies contraction from declared kernel and
reservoir bounds.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import analysis, boundary as bdy, operators
from .errors import ConfigError, PicardError, StiffnessError
from .kernels import BoundedKernelParams, FragKernel, bounded_params, truncate
from .state import StateMeasure, Trajectory, moment_m, piecewise_linear

__all__ = [
    "SolverConfig",
    "RunContext",
    "StepRejected",
    "step",
    "run",
    "budget_residual",
    "ContractionParams",
    "contraction_params",
    "PicardResult",
    "picard_run",
]

_MIN_DT_FACTOR = 2.0**-20

_SCHEMES = ("euler", "heun")


@dataclasses.dataclass(frozen=True)
class SolverConfig:
    """Knobs for one adaptive run."""

    t_final: float
    dt_max: float
    scheme: str = "heun"
    safety: float = 0.9
    snapshot_stride: int = 1
    truncation_j: int | None = None
    atom_sink: bool = False
    quad_n: int = 64
    residual_phi1: bool = True

    def __post_init__(self):
        if self.scheme not in _SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; choose from {_SCHEMES}")
        if self.t_final < 0:
            raise ConfigError(f"t_final must be nonnegative, got {self.t_final}")
        if not self.dt_max > 0:
            raise ConfigError(f"dt_max must be positive, got {self.dt_max}")
        if not 0 < self.safety <= 1:
            raise ConfigError(f"safety must lie in (0, 1], got {self.safety}")
        if self.snapshot_stride < 1:
            raise ConfigError("snapshot_stride must be at least 1")


@dataclasses.dataclass
class RunContext:
    """Everything a finished run carries besides the snapshots."""

    tables: operators.RhsTables
    config: SolverConfig
    diagnostics: list[dict]
    exited_mass: float
    source_mass: float
    sink_mass: float
    n_steps: int
    n_rejected: int


class StepRejected(Exception):
    """A stage rate would violate the positivity bound at the current dt."""

    def __init__(self, cell_index: int, allowed_dt: float):
        super().__init__(f"positivity bound allows dt <= {allowed_dt}")
        self.cell_index = cell_index
        self.allowed_dt = allowed_dt


def _positivity_check(values: np.ndarray, rates: np.ndarray, dt: float, safety: float):
    """Reject if dt exceeds safety * value/|rate| on any draining entry."""
    draining = rates < 0.0
    if not np.any(draining):
        return
    with np.errstate(divide="ignore"):
        allowed = np.where(draining, values / -np.where(draining, rates, -1.0), np.inf)
    worst = int(np.argmin(allowed))
    bound = safety * float(allowed[worst])
    if dt > bound:
        raise StepRejected(worst, bound)


def _stage_vector(state: StateMeasure, res: operators.RhsResult):
    vals = np.concatenate([state.counts, [state.atom]])
    rates = np.concatenate([res.dc, [res.datom]])
    return vals, rates


def step(
    state: StateMeasure,
    tables: operators.RhsTables,
    dt: float,
    t: float = 0.0,
    scheme: str = "euler",
    safety: float = 0.9,
):
    """Advance one accepted step; raises StepRejected when dt is too large.

    Returns (new_state, budget) where budget holds the exited, source and
    sink mass increments of the step, accumulated with the same rule the
    scheme uses so the mass budget telescopes exactly.
    """
    if scheme not in _SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}")
    if dt < 0:
        raise ConfigError("dt must be nonnegative")
    if np.any(state.counts < 0) or state.atom < 0:
        raise ConfigError("step requires a nonnegative state")
    if dt == 0:
        return state.copy(), {"exited": 0.0, "source": 0.0, "sink": 0.0}

    r1 = operators.rhs(state, tables, t)
    vals, rates = _stage_vector(state, r1)
    _positivity_check(vals, rates, dt, safety)

    if scheme == "euler":
        new = StateMeasure(
            grid=state.grid,
            counts=state.counts + dt * r1.dc,
            atom=state.atom + dt * r1.datom,
        )
        budget = {
            "exited": dt * r1.exited_mass_rate,
            "source": dt * r1.source_mass_rate,
            "sink": dt * r1.sink_mass_rate,
        }
        return new, budget

    mid = StateMeasure(
        grid=state.grid,
        counts=state.counts + dt * r1.dc,
        atom=state.atom + dt * r1.datom,
    )
    r2 = operators.rhs(mid, tables, t + dt)
    dc = 0.5 * (r1.dc + r2.dc)
    da = 0.5 * (r1.datom + r2.datom)
    _positivity_check(vals, np.concatenate([dc, [da]]), dt, safety)
    new = StateMeasure(
        grid=state.grid, counts=state.counts + dt * dc, atom=state.atom + dt * da
    )
    budget = {
        "exited": 0.5 * dt * (r1.exited_mass_rate + r2.exited_mass_rate),
        "source": 0.5 * dt * (r1.source_mass_rate + r2.source_mass_rate),
        "sink": 0.5 * dt * (r1.sink_mass_rate + r2.sink_mass_rate),
    }
    return new, budget


def _diag_row(
    t: float,
    dt: float,
    state: StateMeasure,
    alpha: float,
    exited: float,
    entropy_profile,
) -> dict:
    row = {
        "t": t,
        "dt": dt,
        "m_neg1": moment_m(state, -1.0),
        "m_neg_alpha": moment_m(state, -alpha),
        "m0": moment_m(state, 0.0),
        "m1": moment_m(state, 1.0),
        "m2": moment_m(state, 2.0),
        "atom": state.atom,
        "exited_mass": exited,
        "entropy": math.nan,
        "residual_phi1": math.nan,
    }
    if entropy_profile is not None:
        row["entropy"] = analysis.entropy(state, entropy_profile)
    return row


def run(
    initial: StateMeasure,
    kernel,
    frag: FragKernel | None = None,
    reservoir: bdy.BoundaryDatum | None = None,
    config: SolverConfig | None = None,
    entropy_profile=None,
) -> Trajectory:
    """Integrate the sectional system to t_final with adaptive step control.

    Snapshots are kept every snapshot_stride accepted steps plus the
    initial and final states; per-snapshot diagnostics (moments, atom,
    cumulative exited mass, entropy against an optional reference
    profile, and the weak residual of the identity test function) ride
    along in the returned trajectory's context.
    """
    if config is None:
        raise ConfigError("run requires a SolverConfig")
    kernel_eff = truncate(kernel, config.truncation_j) if config.truncation_j else kernel
    tables = operators.build_tables(
        initial.grid, kernel_eff, frag, reservoir, atom_sink=config.atom_sink
    )
    alpha = float(getattr(kernel_eff, "alpha", 0.0) or 0.0)

    traj = Trajectory(grid=initial.grid)
    state = initial.copy()
    t = 0.0
    exited = source = sink = 0.0
    diagnostics = [_diag_row(0.0, 0.0, state, alpha, 0.0, entropy_profile)]
    traj.append(0.0, state.copy())

    dt = config.dt_max
    dt_min = config.dt_max * _MIN_DT_FACTOR
    n_steps = n_rejected = 0
    since_snapshot = 0
    T = config.t_final

    while t < T * (1.0 - 1e-14):
        dt = min(dt, T - t)
        try:
            state, budget = step(
                state, tables, dt, t, scheme=config.scheme, safety=config.safety
            )
        except StepRejected as rej:
            n_rejected += 1
            dt *= 0.5
            if dt < dt_min:
                raise StiffnessError(
                    f"step size underflowed at t = {t:.6g} (cell {rej.cell_index})",
                    cell_index=rej.cell_index,
                    t=t,
                ) from rej
            continue
        t += dt
        exited += budget["exited"]
        source += budget["source"]
        sink += budget["sink"]
        n_steps += 1
        since_snapshot += 1
        at_end = t >= T * (1.0 - 1e-14)
        if since_snapshot >= config.snapshot_stride or at_end:
            traj.append(t, state.copy())
            diagnostics.append(_diag_row(t, dt, state, alpha, exited, entropy_profile))
            since_snapshot = 0
        dt = min(dt * 2.0, config.dt_max)

    ctx = RunContext(
        tables=tables,
        config=config,
        diagnostics=diagnostics,
        exited_mass=exited,
        source_mass=source,
        sink_mass=sink,
        n_steps=n_steps,
        n_rejected=n_rejected,
    )
    traj.context = ctx
    if config.residual_phi1:
        ident = piecewise_linear([1.0], [1.0])
        res = operators.weak_residual_series(traj, ident, tables, quad_n=config.quad_n)
        for row, val in zip(diagnostics, res):
            row["residual_phi1"] = float(val)
    return traj


def budget_residual(traj: Trajectory) -> float:
    """|m1(T) - m1(0) - (source - sink - exited)| from the run accumulators."""
    ctx = traj.context
    if not isinstance(ctx, RunContext):
        raise ConfigError("trajectory does not carry a run context")
    drift = moment_m(traj.states[-1], 1.0) - moment_m(traj.states[0], 1.0)
    return abs(drift - (ctx.source_mass - ctx.sink_mass - ctx.exited_mass))


# ---------------------------------------------------------------------------
# Short-time fixed point


@dataclasses.dataclass(frozen=True)
class ContractionParams:
    """A-priori ball radius, admissible horizon and contraction factor."""

    radius: float
    tau: float
    lip_factor: float
    k_sup: float
    k_beta: float
    frag_bound: float
    m_beta_sup: float
    m_gamma_sup: float
    t_ref: float


def contraction_params(
    mu_norm: float,
    kernel_bounds: BoundedKernelParams,
    frag: FragKernel | None,
    reservoir: bdy.BoundaryDatum,
    t_ref: float,
) -> ContractionParams:
    """Horizon on which the integral map provably contracts.

    The ball radius combines the initial total count with the largest
    fragmentation-driven growth over the reference horizon; the horizon
    is 99 percent of the tighter of the self-map and contraction
    conditions, never exceeding t_ref.
    """
    if not t_ref > 0:
        raise ConfigError("t_ref must be positive")
    if frag is None or frag.is_zero:
        F0, gamma = 0.0, 0.0
    else:
        if frag.F0 is None:
            raise ConfigError("fragmentation kernel lacks a declared sum-power bound")
        F0, gamma = float(frag.F0), float(frag.gamma)
    k_sup = kernel_bounds.k_sup
    k_beta = kernel_bounds.k_beta
    m_beta = bdy.uniform_moment(reservoir, kernel_bounds.beta)
    m_gamma = bdy.uniform_moment(reservoir, gamma)

    R = (
        mu_norm
        + (F0 / (1.0 + gamma)) * (mu_norm + 2.0 * F0 * m_gamma * t_ref) * t_ref
        + 2.0 * F0 * m_gamma
    )
    denom_lip = 6.0 * k_sup + k_beta * m_beta + 3.0 * F0
    tau_map = math.inf
    if R > 0:
        denom_map = 6.0 * k_sup * R * R + 2.0 * (k_beta * m_beta + 3.0 * F0) * R + 2.0 * F0 * m_gamma
        if denom_map > 0:
            tau_map = R / denom_map
    tau_lip = 1.0 / denom_lip if denom_lip > 0 else math.inf
    tau = 0.99 * min(tau_map, tau_lip)
    tau = min(tau, t_ref)
    lip = denom_lip * tau
    return ContractionParams(
        radius=R,
        tau=tau,
        lip_factor=lip,
        k_sup=k_sup,
        k_beta=k_beta,
        frag_bound=F0,
        m_beta_sup=m_beta,
        m_gamma_sup=m_gamma,
        t_ref=t_ref,
    )


@dataclasses.dataclass
class PicardResult:
    """Fixed-point iteration outcome on a uniform grid over [0, tau]."""

    trajectory: Trajectory
    distances: list[float]
    contraction: ContractionParams
    n_iterations: int
    converged: bool


def picard_run(
    initial: StateMeasure,
    kernel,
    frag: FragKernel | None = None,
    reservoir: bdy.BoundaryDatum | None = None,
    tau: float | None = None,
    t_ref: float | None = None,
    n_grid: int = 129,
    max_iterations: int = 80,
    tol: float = 1e-10,
    truncation_j: int | None = None,
    atom_sink: bool = False,
) -> PicardResult:
    """Iterate the time-integrated map to its fixed point on [0, tau].

    tau defaults to the certified contraction horizon and may not exceed
    it.  Successive sup-in-time total-variation distances are recorded;
    a negative excursion beyond round-off aborts the run.
    """
    if reservoir is None:
        reservoir = bdy.zero_reservoir()
    kernel_eff = truncate(kernel, truncation_j) if truncation_j else kernel
    kb = bounded_params(kernel_eff)
    horizon = t_ref if t_ref is not None else (tau if tau is not None else 1.0)
    cp = contraction_params(initial.total, kb, frag, reservoir, horizon)
    if tau is None:
        tau = cp.tau
    elif tau > cp.tau * (1.0 + 1e-9):
        raise ConfigError(
            f"requested horizon {tau} exceeds the certified contraction horizon {cp.tau:.6g}"
        )
    if n_grid < 2:
        raise ConfigError("n_grid must be at least 2")

    tables = operators.build_tables(
        initial.grid, kernel_eff, frag, reservoir, atom_sink=atom_sink
    )
    ts = np.linspace(0.0, tau, n_grid)
    n = initial.grid.n
    base = np.concatenate([initial.counts, [initial.atom]])
    S = np.tile(base, (n_grid, 1))
    scale = max(1.0, float(np.max(np.abs(base))))

    def apply_map(S_cur: np.ndarray) -> np.ndarray:
        rates = np.empty_like(S_cur)
        for m in range(n_grid):
            st = StateMeasure(
                grid=initial.grid, counts=S_cur[m, :n].copy(), atom=float(S_cur[m, n])
            )
            r = operators.rhs(st, tables, float(ts[m]))
            rates[m, :n] = r.dc
            rates[m, n] = r.datom
        steps = 0.5 * (rates[1:] + rates[:-1]) * np.diff(ts)[:, None]
        out = np.empty_like(S_cur)
        out[0] = base
        out[1:] = base + np.cumsum(steps, axis=0)
        return out

    distances: list[float] = []
    converged = False
    for _ in range(max_iterations):
        S_new = apply_map(S)
        if float(np.min(S_new)) < -1e-8 * scale:
            raise PicardError("iterate left the nonnegative cone")
        d = float(np.max(np.sum(np.abs(S_new - S), axis=1)))
        distances.append(d)
        S = S_new
        if d < tol * scale:
            converged = True
            break
    if not converged:
        raise PicardError(
            f"no fixed point after {max_iterations} iterations (last distance {distances[-1]:.3g})"
        )

    traj = Trajectory(grid=initial.grid)
    for m in range(n_grid):
        traj.append(
            float(ts[m]),
            StateMeasure(
                grid=initial.grid,
                counts=np.maximum(S[m, :n], 0.0),
                atom=max(float(S[m, n]), 0.0),
            ),
        )
    traj.context = cp
    return PicardResult(
        trajectory=traj,
        distances=distances,
        contraction=cp,
        n_iterations=len(distances),
        converged=True,
    )
