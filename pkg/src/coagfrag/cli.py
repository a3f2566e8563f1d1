"""Command-line front end.

Subcommands: run (one or many scenarios, optionally in parallel),
equilibrium (stationary density and pair-balance report), compare-oracle
(lattice run against the independent discrete integrator),
validate-kernel (declared growth bounds against samples) and decay-fit
(moment decay rate over a window).

Exit codes: 0 success, 2 configuration problems, 3 runtime failures
(step-size underflow, fixed-point breakdown).  All output files are
bitwise deterministic: floats are written with shortest round-trip
formatting, JSON keys are sorted and nothing records wall-clock time.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, analysis, boundary as bdy, kernels, oracle, scenario as scn, solver
from .errors import CoagFragError, ConfigError, PicardError, StiffnessError
from .state import moment_m, save_state_csv

DIAG_COLUMNS = (
    "t",
    "dt",
    "m_neg1",
    "m_neg_alpha",
    "m0",
    "m1",
    "m2",
    "atom",
    "exited_mass",
    "entropy",
    "residual_phi1",
)


def _fmt(value) -> str:
    return repr(float(value))


def _ensure_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_diagnostics(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DIAG_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in DIAG_COLUMNS])


def _effective_kernel(sc: scn.Scenario):
    if sc.solver.truncation_j:
        return kernels.truncate(sc.kernel, sc.solver.truncation_j)
    return sc.kernel


def _maybe_profile(sc: scn.Scenario):
    if sc.analysis.entropy or sc.analysis.dissipation:
        return analysis.equilibrium_profile(
            _effective_kernel(sc), sc.frag, sc.reservoir, sc.grid, sc.analysis.probes
        )
    return None


def _run_job(path_str: str, out_str: str | None, seed: int | None, stride: int | None):
    """One scenario, start to finish.  Returns (exit_code, message)."""
    try:
        sc = scn.load_scenario(scn.resolve_scenario_path(path_str))
        run_seed = sc.seed if seed is None else seed
        config = sc.solver
        if stride is not None:
            if stride < 1:
                raise ConfigError("--snapshots must be at least 1")
            config = dataclasses.replace(config, snapshot_stride=stride)
        profile = _maybe_profile(sc)
        traj = solver.run(
            sc.initial, sc.kernel, sc.frag, sc.reservoir, config, entropy_profile=profile
        )
        ctx = traj.context

        outdir = _ensure_dir(Path(out_str) if out_str else Path(f"out-{sc.name}"))
        snapshots = []
        for k, (t, st) in enumerate(zip(traj.times, traj.states)):
            fname = f"snapshot_{k:05d}.csv"
            save_state_csv(st, outdir / fname)
            snapshots.append({"index": k, "t": t, "file": fname})
        _write_diagnostics(outdir / "diagnostics.csv", ctx.diagnostics)

        fit_payload = None
        if sc.analysis.decay_fit:
            fit = analysis.fit_decay(
                traj, sc.analysis.decay_lam, sc.analysis.decay_window, sc.analysis.decay_mode
            )
            fit_payload = {
                "rate": fit.rate,
                "intercept": fit.intercept,
                "r_squared": fit.r_squared,
                "n_points": fit.n_points,
                "lam": fit.lam,
                "mode": fit.mode,
                "window": list(fit.window),
            }

        if sc.analysis.dissipation:
            with open(outdir / "dissipation.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["t", "interior", "overflow", "exchange", "total"])
                for t, st in zip(traj.times, traj.states):
                    rec = analysis.dissipation(
                        st, _effective_kernel(sc), sc.frag, sc.reservoir, profile, t=t
                    )
                    writer.writerow(
                        [_fmt(t), _fmt(rec.interior), _fmt(rec.overflow), _fmt(rec.exchange), _fmt(rec.total)]
                    )

        final = traj.states[-1]
        manifest = {
            "command": "run",
            "package_version": __version__,
            "seed": run_seed,
            "scenario": scn.resolved_dict(sc),
            "snapshots": snapshots,
            "decay_fit": fit_payload,
            "summary": {
                "n_steps": ctx.n_steps,
                "n_rejected": ctx.n_rejected,
                "n_snapshots": len(traj),
                "exited_mass": ctx.exited_mass,
                "source_mass": ctx.source_mass,
                "sink_mass": ctx.sink_mass,
                "final_t": traj.times[-1],
                "final_m0": moment_m(final, 0.0),
                "final_m1": moment_m(final, 1.0),
                "final_atom": final.atom,
            },
        }
        _write_manifest(outdir / "manifest.json", manifest)
        msg = (
            f"run {sc.name}: {ctx.n_steps} steps ({ctx.n_rejected} rejected), "
            f"{len(traj)} snapshots -> {outdir}"
        )
        if fit_payload:
            msg += f"; decay rate {fit_payload['rate']:.6g} (r2 {fit_payload['r_squared']:.4f})"
        return 0, msg
    except (StiffnessError, PicardError) as exc:
        return 3, f"error ({path_str}): {exc}"
    except CoagFragError as exc:
        return 2, f"error ({path_str}): {exc}"


def _cmd_run(args) -> int:
    specs = args.scenario
    if len(specs) > 1 and args.out is not None and not args.batch:
        raise ConfigError("--out with several scenarios requires --batch (per-scenario subfolders)")

    jobs = []
    for spec in specs:
        name = Path(spec).stem
        out = args.out
        if out is not None and len(specs) > 1:
            out = str(Path(out) / name)
        jobs.append((spec, out, args.seed, args.snapshots))

    results = []
    if args.batch and len(jobs) > 1:
        workers = os.environ.get("COAGFRAG_WORKERS")
        max_workers = int(workers) if workers else min(len(jobs), os.cpu_count() or 1)
        if max_workers < 1:
            raise ConfigError(f"COAGFRAG_WORKERS must be positive, got {workers!r}")
        with concurrent.futures.ProcessPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(_run_job, *zip(*jobs)))
    else:
        for job in jobs:
            results.append(_run_job(*job))

    code = 0
    for rc, msg in results:
        print(msg if rc == 0 else msg, file=sys.stdout if rc == 0 else sys.stderr)
        code = max(code, rc)
    return code


def _cmd_equilibrium(args) -> int:
    sc = scn.load_scenario(scn.resolve_scenario_path(args.scenario))
    kernel_eff = _effective_kernel(sc)
    profile = analysis.equilibrium_profile(
        kernel_eff, sc.frag, sc.reservoir, sc.grid, sc.analysis.probes
    )
    report = analysis.check_detailed_balance(kernel_eff, sc.frag, profile, seed=sc.seed)

    outdir = _ensure_dir(Path(args.out) if args.out else Path(f"out-{sc.name}"))
    with open(outdir / "equilibrium.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_index", "pivot", "stationary_density"])
        for i, (x, v) in enumerate(zip(profile.pivots, profile.values)):
            writer.writerow([i, _fmt(x), _fmt(v)])
    _write_manifest(
        outdir / "equilibrium.json",
        {
            "command": "equilibrium",
            "package_version": __version__,
            "scenario": scn.resolved_dict(sc),
            "probe_spread": profile.spread,
            "pair_balance": {
                "max_residual": report.max_residual,
                "mean_residual": report.mean_residual,
                "worst_x": report.worst_x,
                "worst_y": report.worst_y,
                "n_samples": report.n_samples,
            },
        },
    )
    print(
        f"equilibrium {sc.name}: probe spread {profile.spread:.3e}, "
        f"pair-balance residual {report.max_residual:.3e} -> {outdir}"
    )
    if report.max_residual > 1e-6:
        print(
            "note: kernels are not in pair balance; the tabulated density is "
            "a probe average, not a stationary state",
            file=sys.stderr,
        )
    return 0


def _cmd_compare_oracle(args) -> int:
    sc = scn.load_scenario(scn.resolve_scenario_path(args.scenario))
    if not sc.grid.lattice:
        raise ConfigError("oracle comparison requires a lattice grid ([grid] lattice = true)")
    if sc.frag is not None and not sc.frag.is_zero:
        raise ConfigError("oracle comparison requires zero fragmentation")
    if not sc.reservoir.is_zero and sc.reservoir.modulation != "constant":
        raise ConfigError("oracle comparison requires a time-constant reservoir")
    n = sc.grid.n
    if sc.initial.atom != 0.0:
        raise ConfigError("oracle comparison requires an empty atom initially")

    kernel_eff = _effective_kernel(sc)
    # The size-1 pivot is an ordinary species: merges reproducing it stay,
    # anything beyond leaves both systems.
    sizes = sc.grid.pivots
    K = np.asarray(kernels.eval_coag(kernel_eff, sizes[:, None], sizes[None, :]), dtype=float)
    sink = (
        np.zeros(n)
        if sc.reservoir.is_zero
        else np.asarray(bdy.eval_G(kernel_eff, sc.reservoir, 0.0, sizes), dtype=float)
    )
    system = oracle.DiscreteSystem(N=n, K=K, sink=sink)
    T = sc.solver.t_final
    # Dyadic checkpoints: resolvable on the oracle's halving step grids
    # and reached exactly by the sectional run's final-step clipping.
    checkpoints = [0.25 * T, 0.5 * T, T]
    ref, ref_marks = oracle.integrate_discrete(system, sc.initial.counts, T, checkpoints)
    ref_marks[0.0] = np.asarray(sc.initial.counts, dtype=float)

    got_marks = {0.0: sc.initial.counts.copy()}
    state, reached = sc.initial, 0.0
    for tc in checkpoints:
        seg = dataclasses.replace(sc.solver, t_final=tc - reached)
        state = solver.run(state, sc.kernel, sc.frag, sc.reservoir, seg).states[-1]
        got_marks[tc] = state.counts.copy()
        reached = tc
    got = got_marks[T]

    def _rel(a: float, b: float) -> float:
        return abs(a - b) / max(abs(b), 1e-300)

    moment_rows = []
    worst_moment = 0.0
    for tc in [0.0, *checkpoints]:
        r, g = ref_marks[tc], got_marks[tc]
        row = {
            "t": tc,
            "m0_rel_error": _rel(float(g.sum()), float(r.sum())),
            "m1_rel_error": _rel(float(g @ sizes), float(r @ sizes)),
        }
        worst_moment = max(worst_moment, row["m0_rel_error"], row["m1_rel_error"])
        moment_rows.append(row)
    passed = worst_moment < 1e-3

    scale = max(float(np.max(np.abs(ref))), 1e-300)
    sup_rel = float(np.max(np.abs(got - ref))) / scale
    l1_rel = float(np.sum(np.abs(got - ref))) / max(float(np.sum(np.abs(ref))), 1e-300)

    outdir = _ensure_dir(Path(args.out) if args.out else Path(f"out-{sc.name}"))
    with open(outdir / "comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["species", "size", "reference", "solver", "abs_error"])
        for i in range(n):
            writer.writerow(
                [i + 1, _fmt(sizes[i]), _fmt(ref[i]), _fmt(got[i]), _fmt(abs(got[i] - ref[i]))]
            )
    _write_manifest(
        outdir / "comparison.json",
        {
            "command": "compare-oracle",
            "package_version": __version__,
            "scenario": scn.resolved_dict(sc),
            "t_final": T,
            "n_species": n,
            "checkpoints": moment_rows,
            "passed": passed,
            "tolerance": 1e-3,
            "sup_rel_error": sup_rel,
            "l1_rel_error": l1_rel,
        },
    )
    for row in moment_rows:
        print(
            f"compare-oracle {sc.name}: t={row['t']:g} "
            f"m0 rel {row['m0_rel_error']:.3e}, m1 rel {row['m1_rel_error']:.3e}"
        )
    print(
        f"compare-oracle {sc.name}: {'PASS' if passed else 'FAIL'} at 1e-03; "
        f"final sup error {sup_rel:.3e}, l1 error {l1_rel:.3e} over {n} species -> {outdir}"
    )
    if not passed:
        print("error: solver disagrees with the discrete oracle", file=sys.stderr)
        return 2
    return 0


def _cmd_validate_kernel(args) -> int:
    sc = scn.load_scenario(scn.resolve_scenario_path(args.scenario))
    seed = sc.seed if args.seed is None else args.seed
    kernel_eff = _effective_kernel(sc)
    reports = {"coagulation": kernels.validate_bounds(kernel_eff, seed=seed)}
    if sc.frag is not None and not sc.frag.is_zero and sc.frag.F0 is not None:
        reports["fragmentation"] = kernels.validate_bounds(sc.frag, seed=seed)

    worst = 0.0
    payload = {"command": "validate-kernel", "package_version": __version__, "seed": seed}
    for label, rep in reports.items():
        print(
            f"validate-kernel {sc.name} [{label}]: max violation {rep.max_violation:.3e} "
            f"over {rep.n_samples} samples"
        )
        payload[label] = {
            "max_violation": rep.max_violation,
            "worst_x": rep.worst_x,
            "worst_y": rep.worst_y,
            "n_samples": rep.n_samples,
        }
        worst = max(worst, rep.max_violation)
    if args.out:
        outdir = _ensure_dir(Path(args.out))
        _write_manifest(outdir / "validate_kernel.json", payload)
    if worst > 1e-9:
        print("error: declared kernel bounds are violated", file=sys.stderr)
        return 2
    return 0


def _cmd_decay_fit(args) -> int:
    sc = scn.load_scenario(scn.resolve_scenario_path(args.scenario))
    if not sc.analysis.decay_fit:
        raise ConfigError("scenario does not enable decay_fit in its [analysis] section")
    profile = _maybe_profile(sc)
    traj = solver.run(sc.initial, sc.kernel, sc.frag, sc.reservoir, sc.solver, entropy_profile=profile)
    fit = analysis.fit_decay(
        traj, sc.analysis.decay_lam, sc.analysis.decay_window, sc.analysis.decay_mode
    )
    print(
        f"decay-fit {sc.name}: mode={fit.mode} lam={fit.lam:g} rate={fit.rate:.6g} "
        f"intercept={fit.intercept:.6g} r2={fit.r_squared:.6f} n={fit.n_points}"
    )
    if args.out:
        outdir = _ensure_dir(Path(args.out))
        _write_diagnostics(outdir / "diagnostics.csv", traj.context.diagnostics)
        _write_manifest(
            outdir / "decay_fit.json",
            {
                "command": "decay-fit",
                "package_version": __version__,
                "scenario": scn.resolved_dict(sc),
                "rate": fit.rate,
                "intercept": fit.intercept,
                "r_squared": fit.r_squared,
                "n_points": fit.n_points,
                "lam": fit.lam,
                "mode": fit.mode,
                "window": list(fit.window),
            },
        )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coagfrag",
        description="Sectional solver for size-bounded merge/split dynamics "
        "coupled to a prescribed reservoir.",
    )
    parser.add_argument("--version", action="version", version=f"coagfrag {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="integrate one or more scenarios")
    run_p.add_argument(
        "--scenario", nargs="+", required=True, help="scenario TOML path(s) or builtin name(s)"
    )
    run_p.add_argument("--out", default=None, help="output directory (default out-<name>)")
    run_p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run_p.add_argument(
        "--snapshots", type=int, default=None, help="override the snapshot stride (accepted steps)"
    )
    run_p.add_argument(
        "--batch",
        action="store_true",
        help="run scenarios in parallel processes (COAGFRAG_WORKERS limits the pool)",
    )
    run_p.set_defaults(func=_cmd_run)

    eq_p = sub.add_parser("equilibrium", help="tabulate the stationary density")
    eq_p.add_argument("--scenario", required=True)
    eq_p.add_argument("--out", default=None)
    eq_p.set_defaults(func=_cmd_equilibrium)

    cmp_p = sub.add_parser("compare-oracle", help="check a lattice run against the discrete oracle")
    cmp_p.add_argument("--scenario", required=True)
    cmp_p.add_argument("--out", default=None)
    cmp_p.set_defaults(func=_cmd_compare_oracle)

    val_p = sub.add_parser("validate-kernel", help="sample-check declared kernel bounds")
    val_p.add_argument("--scenario", required=True)
    val_p.add_argument("--seed", type=int, default=None)
    val_p.add_argument("--out", default=None)
    val_p.set_defaults(func=_cmd_validate_kernel)

    fit_p = sub.add_parser("decay-fit", help="fit the configured moment decay")
    fit_p.add_argument("--scenario", required=True)
    fit_p.add_argument("--out", default=None)
    fit_p.set_defaults(func=_cmd_decay_fit)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (StiffnessError, PicardError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except CoagFragError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
