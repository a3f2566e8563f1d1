"""TOML scenario files: loading, strict validation, and assembly.

A scenario fully determines a run: kernels, reservoir, grid, initial
state, solver knobs and requested diagnostics.  Loading is strict (no
unknown keys, no silently defaulted physics) and cross-validates the
pieces against each other, so a scenario that loads is a scenario that
runs.  Relative file references resolve against the scenario's folder.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import analysis, boundary as bdy, kernels, state
from .errors import ConfigError
from .solver import SolverConfig

__all__ = [
    "AnalysisOptions",
    "Scenario",
    "load_scenario",
    "builtin_scenarios_dir",
    "builtin_scenario",
    "resolve_scenario_path",
    "resolved_dict",
]


@dataclasses.dataclass(frozen=True)
class AnalysisOptions:
    entropy: bool = False
    dissipation: bool = False
    decay_fit: bool = False
    decay_lam: float = 0.0
    decay_window: tuple | None = None
    decay_mode: str = "exponential"
    probes: tuple = analysis.DEFAULT_PROBES


@dataclasses.dataclass
class Scenario:
    """A fully resolved run description."""

    name: str
    path: Path | None
    seed: int
    kernel: object
    frag: kernels.FragKernel | None
    reservoir: bdy.BoundaryDatum
    grid: state.Grid
    initial: state.StateMeasure
    solver: SolverConfig
    analysis: AnalysisOptions
    raw: dict


def _reject_unknown(section: dict, name: str, allowed: set):
    extra = set(section) - allowed
    if extra:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")


def _get_float(section: dict, key: str, default=None, name: str = "?") -> float:
    if key not in section:
        if default is None:
            raise ConfigError(f"[{name}] is missing required key {key!r}")
        return float(default)
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"[{name}] {key} must be a number, got {value!r}")
    return float(value)


def _build_kernel(section: dict, base_dir: Path):
    _reject_unknown(section, "kernel", {"kind", "scale", "alpha", "beta", "K0", "K1", "csv"})
    kind = section.get("kind")
    if kind == "constant":
        return kernels.constant_coag(_get_float(section, "scale", 1.0, "kernel"))
    if kind == "additive":
        return kernels.additive_coag(_get_float(section, "scale", 1.0, "kernel"))
    if kind == "multiplicative":
        return kernels.multiplicative_coag(_get_float(section, "scale", 1.0, "kernel"))
    if kind == "bound_form":
        K0 = _get_float(section, "K0", section.get("scale"), "kernel")
        return kernels.bound_form_coag(
            K0,
            _get_float(section, "alpha", None, "kernel"),
            _get_float(section, "beta", None, "kernel"),
        )
    if kind == "lower_form":
        K1 = _get_float(section, "K1", section.get("scale"), "kernel")
        return kernels.lower_form_coag(
            K1,
            _get_float(section, "alpha", None, "kernel"),
            _get_float(section, "beta", None, "kernel"),
        )
    if kind == "tabulated":
        if "csv" not in section:
            raise ConfigError("[kernel] tabulated kind requires a csv path")
        xs, ys, values = kernels.load_table_csv(base_dir / section["csv"])
        K0 = section.get("K0")
        return kernels.tabulated_coag(
            xs,
            ys,
            values,
            K0=None if K0 is None else float(K0),
            alpha=_get_float(section, "alpha", 0.0, "kernel"),
            beta=_get_float(section, "beta", 0.0, "kernel"),
        )
    raise ConfigError(f"[kernel] unknown kind {kind!r}")


def _build_frag(section: dict, kernel, base_dir: Path) -> kernels.FragKernel | None:
    _reject_unknown(
        section,
        "fragmentation",
        {"kind", "scale", "gamma", "F0", "csv", "profile", "amplitude", "rate"},
    )
    kind = section.get("kind", "none")
    if kind == "none":
        return None
    if kind == "constant":
        return kernels.constant_frag(_get_float(section, "scale", 1.0, "fragmentation"))
    if kind == "sum_power":
        return kernels.sum_power_frag(
            _get_float(section, "F0", section.get("scale"), "fragmentation"),
            _get_float(section, "gamma", None, "fragmentation"),
        )
    if kind == "product":
        return kernels.product_frag(_get_float(section, "scale", 1.0, "fragmentation"))
    if kind == "tabulated":
        if "csv" not in section:
            raise ConfigError("[fragmentation] tabulated kind requires a csv path")
        xs, ys, values = kernels.load_table_csv(base_dir / section["csv"])
        F0 = section.get("F0")
        return kernels.tabulated_frag(
            xs,
            ys,
            values,
            F0=None if F0 is None else float(F0),
            gamma=_get_float(section, "gamma", 0.0, "fragmentation"),
        )
    if kind == "detailed_balance":
        profile = section.get("profile", "exponential")
        if profile != "exponential":
            raise ConfigError(
                f"[fragmentation] detailed-balance profile {profile!r} is not supported; "
                "use 'exponential'"
            )
        amplitude = _get_float(section, "amplitude", 1.0, "fragmentation")
        rate = _get_float(section, "rate", 1.0, "fragmentation")
        if amplitude <= 0 or rate <= 0:
            raise ConfigError("[fragmentation] profile needs positive amplitude and rate")

        def profile_fn(x, _a=amplitude, _r=rate):
            return _a * np.exp(-_r * np.asarray(x, dtype=float))

        F0 = section.get("F0")
        return kernels.detailed_balance_frag(
            kernel,
            profile_fn,
            F0=None if F0 is None else float(F0),
            gamma=_get_float(section, "gamma", 0.0, "fragmentation"),
        )
    raise ConfigError(f"[fragmentation] unknown kind {kind!r}")


def _build_reservoir(section: dict, base_dir: Path) -> bdy.BoundaryDatum:
    _reject_unknown(
        section,
        "reservoir",
        {
            "profile",
            "amplitude",
            "decay",
            "tail",
            "modulation",
            "modulation_scale",
            "modulation_csv",
            "ymax",
        },
    )
    profile = section.get("profile", "zero")
    kw = {}
    modulation = section.get("modulation", "constant")
    if modulation not in ("constant", "decaying", "sampled"):
        raise ConfigError(f"[reservoir] unknown modulation {modulation!r}")
    kw["modulation"] = modulation
    if modulation == "decaying":
        kw["modulation_scale"] = _get_float(section, "modulation_scale", 1.0, "reservoir")
    if modulation == "sampled":
        if "modulation_csv" not in section:
            raise ConfigError("[reservoir] sampled modulation requires modulation_csv")
        times, values = bdy.modulation_from_csv(base_dir / section["modulation_csv"])
        kw["modulation_times"] = times
        kw["modulation_values"] = values
    if "ymax" in section:
        kw["ymax"] = _get_float(section, "ymax", None, "reservoir")

    if profile == "zero":
        return bdy.zero_reservoir()
    amplitude = _get_float(section, "amplitude", 1.0, "reservoir")
    if profile == "exponential":
        return bdy.exponential_reservoir(
            amplitude, _get_float(section, "decay", 1.0, "reservoir"), **kw
        )
    if profile == "power":
        return bdy.power_reservoir(amplitude, _get_float(section, "tail", None, "reservoir"), **kw)
    if profile == "power_exponential":
        return bdy.power_exponential_reservoir(
            amplitude,
            _get_float(section, "tail", 1.0, "reservoir"),
            _get_float(section, "decay", 1.0, "reservoir"),
            **kw,
        )
    raise ConfigError(f"[reservoir] unknown profile {profile!r}")


def _build_grid(section: dict) -> state.Grid:
    _reject_unknown(section, "grid", {"n", "kind", "ratio", "lattice"})
    n = section.get("n", 100)
    if isinstance(n, bool) or not isinstance(n, int):
        raise ConfigError(f"[grid] n must be an integer, got {n!r}")
    kind = section.get("kind", "uniform")
    ratio = section.get("ratio")
    lattice = section.get("lattice", False)
    if not isinstance(lattice, bool):
        raise ConfigError("[grid] lattice must be a boolean")
    return state.build_grid(n, kind=kind, ratio=None if ratio is None else float(ratio), lattice=lattice)


def _build_initial(section: dict, grid: state.Grid, base_dir: Path) -> state.StateMeasure:
    _reject_unknown(
        section,
        "initial",
        {"kind", "profile", "amplitude", "rate", "exponent", "support", "spikes", "csv"},
    )
    kind = section.get("kind", "density")
    if kind == "empty":
        return state.StateMeasure(grid=grid, counts=np.zeros(grid.n), atom=0.0)
    if kind == "spikes":
        spikes = section.get("spikes")
        if not spikes:
            raise ConfigError("[initial] spikes kind requires a nonempty spikes list")
        return state.from_spikes(grid, [(float(p), float(c)) for p, c in spikes])
    if kind == "csv":
        if "csv" not in section:
            raise ConfigError("[initial] csv kind requires a csv path")
        return state.load_state_csv(base_dir / section["csv"], grid=grid)
    if kind != "density":
        raise ConfigError(f"[initial] unknown kind {kind!r}")

    profile = section.get("profile", "uniform")
    amplitude = _get_float(section, "amplitude", 1.0, "initial")
    if amplitude < 0:
        raise ConfigError("[initial] amplitude must be nonnegative")
    support = section.get("support", [0.0, 1.0])
    if len(support) != 2:
        raise ConfigError("[initial] support must be a [lower, upper] pair")
    lo, hi = float(support[0]), float(support[1])
    if not (0.0 <= lo < hi <= 1.0):
        raise ConfigError(f"[initial] support must satisfy 0 <= lower < upper <= 1, got {support}")

    if profile == "uniform":
        base = lambda x: np.full_like(np.asarray(x, dtype=float), amplitude)
    elif profile == "exponential":
        rate = _get_float(section, "rate", 1.0, "initial")
        base = lambda x: amplitude * np.exp(-rate * np.asarray(x, dtype=float))
    elif profile == "power":
        exponent = _get_float(section, "exponent", 0.5, "initial")
        if not 0.0 <= exponent < 1.0:
            raise ConfigError(
                f"[initial] power exponent must lie in [0, 1) to keep the count finite, "
                f"got {exponent}"
            )
        base = lambda x: amplitude * np.asarray(x, dtype=float) ** -exponent
    else:
        raise ConfigError(f"[initial] unknown profile {profile!r}")

    def density(x, _lo=lo, _hi=hi, _base=base):
        x = np.asarray(x, dtype=float)
        return np.where((x >= _lo) & (x <= _hi), _base(x), 0.0)

    return state.from_density(grid, density)


def _build_solver(section: dict) -> SolverConfig:
    _reject_unknown(
        section,
        "solver",
        {
            "scheme",
            "t_final",
            "dt_max",
            "safety",
            "snapshot_stride",
            "truncation_j",
            "atom_sink",
            "quad_n",
            "residual_phi1",
        },
    )
    truncation_j = section.get("truncation_j")
    stride = section.get("snapshot_stride", 1)
    if isinstance(stride, bool) or not isinstance(stride, int):
        raise ConfigError("[solver] snapshot_stride must be an integer")
    atom_sink = section.get("atom_sink", False)
    residual_phi1 = section.get("residual_phi1", True)
    if not isinstance(atom_sink, bool) or not isinstance(residual_phi1, bool):
        raise ConfigError("[solver] atom_sink and residual_phi1 must be booleans")
    return SolverConfig(
        t_final=_get_float(section, "t_final", None, "solver"),
        dt_max=_get_float(section, "dt_max", None, "solver"),
        scheme=section.get("scheme", "heun"),
        safety=_get_float(section, "safety", 0.9, "solver"),
        snapshot_stride=stride,
        truncation_j=None if truncation_j is None else int(truncation_j),
        atom_sink=atom_sink,
        quad_n=int(section.get("quad_n", 64)),
        residual_phi1=residual_phi1,
    )


def _build_analysis(section: dict, solver: SolverConfig) -> AnalysisOptions:
    _reject_unknown(
        section,
        "analysis",
        {"entropy", "dissipation", "decay_fit", "decay_lam", "decay_window", "decay_mode", "probes"},
    )
    window = section.get("decay_window")
    if window is not None:
        if len(window) != 2:
            raise ConfigError("[analysis] decay_window must be a [start, end] pair")
        t0, t1 = float(window[0]), float(window[1])
        if not (0.0 <= t0 < t1 <= solver.t_final * (1.0 + 1e-12)):
            raise ConfigError(
                f"[analysis] decay_window {window} must lie inside [0, t_final = {solver.t_final}]"
            )
        window = (t0, t1)
    mode = section.get("decay_mode", "exponential")
    if mode not in ("exponential", "power"):
        raise ConfigError(f"[analysis] unknown decay_mode {mode!r}")
    probes = tuple(float(p) for p in section.get("probes", analysis.DEFAULT_PROBES))
    if any(p <= 1.0 for p in probes):
        raise ConfigError("[analysis] probes must lie strictly above 1")
    opts = AnalysisOptions(
        entropy=bool(section.get("entropy", False)),
        dissipation=bool(section.get("dissipation", False)),
        decay_fit=bool(section.get("decay_fit", False)),
        decay_lam=_get_float(section, "decay_lam", 0.0, "analysis"),
        decay_window=window,
        decay_mode=mode,
        probes=probes,
    )
    if opts.decay_fit and opts.decay_window is None:
        raise ConfigError("[analysis] decay_fit requires a decay_window")
    return opts


def _cross_validate(sc: Scenario) -> None:
    """Checks spanning several sections; anything that fails here would
    produce a run whose declared diagnostics are meaningless."""
    kernel_eff = sc.kernel
    if sc.solver.truncation_j:
        kernel_eff = kernels.truncate(sc.kernel, sc.solver.truncation_j)

    if not sc.reservoir.is_zero:
        growth = max(float(getattr(sc.kernel, "beta", 0.0)), 0.0)
        if sc.frag is not None:
            growth = max(growth, float(sc.frag.gamma))
        # Raises when the reservoir cannot pay for the declared growth.
        bdy.moment_M(sc.reservoir, growth, 0.0)

    if sc.analysis.entropy or sc.analysis.dissipation:
        if sc.frag is None or sc.frag.is_zero:
            raise ConfigError("entropy diagnostics require a nonzero fragmentation rate")
        if sc.reservoir.is_zero:
            raise ConfigError("entropy diagnostics require a nonzero reservoir")
        if sc.reservoir.modulation != "constant":
            raise ConfigError("entropy diagnostics require a time-constant reservoir")
        profile = analysis.equilibrium_profile(
            kernel_eff, sc.frag, sc.reservoir, sc.grid, sc.analysis.probes
        )
        if profile.spread > 1e-6:
            raise ConfigError(
                f"stationary density is probe-dependent (spread {profile.spread:.2e}); "
                "the kernels and reservoir are not mutually consistent"
            )
        report = analysis.check_detailed_balance(kernel_eff, sc.frag, profile)
        if report.max_residual > 1e-6:
            raise ConfigError(
                f"kernels violate pair balance against the stationary density "
                f"(residual {report.max_residual:.2e}); entropy diagnostics would be meaningless"
            )


def load_scenario(path) -> Scenario:
    """Load, validate and assemble a scenario from a TOML file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"scenario file {path} is not valid TOML: {exc}") from None

    _reject_unknown(
        raw,
        "scenario",
        {"seed", "kernel", "fragmentation", "reservoir", "grid", "initial", "solver", "analysis"},
    )
    if "kernel" not in raw:
        raise ConfigError("scenario is missing the [kernel] section")
    if "solver" not in raw:
        raise ConfigError("scenario is missing the [solver] section")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")

    base_dir = path.parent
    kernel = _build_kernel(raw["kernel"], base_dir)
    solver = _build_solver(raw["solver"])
    kernel_for_frag = (
        kernels.truncate(kernel, solver.truncation_j) if solver.truncation_j else kernel
    )
    frag = _build_frag(raw.get("fragmentation", {}), kernel_for_frag, base_dir)
    reservoir = _build_reservoir(raw.get("reservoir", {}), base_dir)
    grid = _build_grid(raw.get("grid", {}))
    initial = _build_initial(raw.get("initial", {}), grid, base_dir)
    opts = _build_analysis(raw.get("analysis", {}), solver)

    sc = Scenario(
        name=path.stem,
        path=path,
        seed=seed,
        kernel=kernel,
        frag=frag,
        reservoir=reservoir,
        grid=grid,
        initial=initial,
        solver=solver,
        analysis=opts,
        raw=raw,
    )
    _cross_validate(sc)
    return sc


def builtin_scenarios_dir() -> Path:
    return Path(__file__).parent / "scenarios"


def builtin_scenario(name: str) -> Path:
    path = builtin_scenarios_dir() / f"{name}.toml"
    if not path.exists():
        available = sorted(p.stem for p in builtin_scenarios_dir().glob("*.toml"))
        raise ConfigError(f"no builtin scenario {name!r}; available: {available}")
    return path


def resolve_scenario_path(spec: str) -> Path:
    """A filesystem path, or the name of a bundled scenario."""
    path = Path(spec)
    if path.exists():
        return path
    if path.suffix == "" and (builtin_scenarios_dir() / f"{spec}.toml").exists():
        return builtin_scenario(spec)
    raise ConfigError(f"scenario file not found: {spec}")


def _kernel_dict(kernel) -> dict:
    if isinstance(kernel, kernels.TruncatedKernel):
        out = _kernel_dict(kernel.base)
        out["truncation_j"] = kernel.j
        return out
    return {
        "kind": kernel.kind,
        "scale": kernel.scale,
        "alpha": kernel.alpha,
        "beta": kernel.beta,
        "K0": kernel.K0,
        "K1": kernel.K1,
    }


def resolved_dict(sc: Scenario) -> dict:
    """JSON-ready snapshot of every resolved parameter of a scenario."""
    frag = None
    if sc.frag is not None:
        frag = {
            "kind": sc.frag.kind,
            "scale": sc.frag.scale,
            "gamma": sc.frag.gamma,
            "F0": sc.frag.F0,
        }
    return {
        "name": sc.name,
        "seed": sc.seed,
        "kernel": _kernel_dict(sc.kernel),
        "fragmentation": frag,
        "reservoir": {
            "profile": sc.reservoir.profile,
            "amplitude": sc.reservoir.amplitude,
            "decay": sc.reservoir.decay,
            "tail": sc.reservoir.tail,
            "modulation": sc.reservoir.modulation,
            "modulation_scale": sc.reservoir.modulation_scale,
            "ymax": sc.reservoir.ymax,
        },
        "grid": {
            "n": sc.grid.n,
            "kind": sc.grid.kind,
            "ratio": sc.grid.ratio,
            "lattice": sc.grid.lattice,
        },
        "initial": {
            "total_count": sc.initial.total,
            "atom": sc.initial.atom,
        },
        "solver": dataclasses.asdict(sc.solver),
        "analysis": {
            "entropy": sc.analysis.entropy,
            "dissipation": sc.analysis.dissipation,
            "decay_fit": sc.analysis.decay_fit,
            "decay_lam": sc.analysis.decay_lam,
            "decay_window": list(sc.analysis.decay_window) if sc.analysis.decay_window else None,
            "decay_mode": sc.analysis.decay_mode,
            "probes": list(sc.analysis.probes),
        },
    }
