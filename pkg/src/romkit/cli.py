"""Command-line driver.

Every subcommand reads one JSON run config (``--config``), writes into an
output directory (``--out`` or ``outputs.directory``) and consumes the
artifacts of earlier subcommands from that directory::

    romkit fom-run   --config run.json   # trajectory.romf, snapshots.romf
    romkit pod-build --config run.json   # basis.romf, singular_values.csv
    romkit rom-run   --config run.json   # rom_coords.romf, rom_run.csv
    romkit sweep     --config run.json --workers 4
    romkit verify    --config run.json   # verify.csv
    romkit cost      --config run.json   # cost.csv

Exit codes: 0 ok, 2 bad config, 3 solver failure, 4 missing artifact,
5 verification failure. CSV files are deterministic for a fixed config and
seed; wall-clock times go to separate ``*_timing.csv`` files.
"""

from __future__ import annotations

import argparse
import itertools
import sys as _sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, pipeline
from .basis import BlockLayout, TrialBasis
from .config import ConfigError, RunConfig, load_config
from .errors import RomkitError
from .io import read_matrix, write_csv, write_matrix
from .timeint import Trajectory

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_MISSING, EXIT_VERIFY = 0, 2, 3, 4, 5


class MissingArtifact(Exception):
    pass


# --------------------------------------------------------------------------
# artifact helpers
# --------------------------------------------------------------------------


def _load(path, produced_by):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"{path} not found (run '{produced_by}' first)")
    return read_matrix(path)


def _load_trajectory(out):
    X, meta = _load(out / "trajectory.romf", "fom-run")
    return Trajectory(np.asarray(meta["times"], dtype=float), X)


def _save_basis(path, basis):
    meta = {"layout": [[b.var, b.row_start, b.row_stop, b.n_cols] for b in basis.block_layout or ()]}
    sv = basis.singular_values
    if sv is not None:
        meta["singular_values"] = [np.asarray(s).tolist() for s in sv] if isinstance(sv, list) else [np.asarray(sv).tolist()]
    write_matrix(path, basis.V, meta)


def _load_basis(out):
    V, meta = _load(out / "basis.romf", "pod-build")
    layout = [BlockLayout(*row) for row in meta.get("layout", [])] or None
    return TrialBasis(V, layout)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_fom_run(cfg, out):
    sys, u0, _ = pipeline.build_problem(cfg.problem)
    spec = cfg.fom.spec()
    before = pipeline.conservation_totals(sys, u0)
    traj = pipeline.run_fom(sys, u0, spec, cfg.outputs.save_every)
    after = pipeline.conservation_totals(sys, traj.states[:, -1])
    meta = {"times": traj.times.tolist(), "dt": spec.dt, "scheme": spec.scheme.value}
    write_matrix(out / "trajectory.romf", traj.states, meta)
    snaps = pipeline.training_snapshots(traj)
    times = traj.times[1:] if traj.times.size > 1 else traj.times
    write_matrix(out / "snapshots.romf", snaps, {"times": times.tolist(), "dt": spec.dt})
    names = ["mass", "momentum", "energy"] if before.size == 3 else ["sum"]
    for name, b, a in zip(names, before, after):
        print(f"{name}: initial {b:.12g} final {a:.12g} drift {a - b:.3e}")
    print(f"wrote {snaps.shape[1]} snapshot columns of length {snaps.shape[0]}")
    return EXIT_OK


def cmd_pod_build(cfg, out):
    S, _ = _load(out / "snapshots.romf", "fom-run")
    _, _, n_vars = pipeline.build_problem(cfg.problem)
    kind, value = cfg.pod.rule
    if kind == "criterion":
        basis = pipeline.build_basis(S, n_vars, cfg.pod.layout, criterion=value)
    else:
        per = value * (n_vars if cfg.pod.layout == "per-variable" else 1)
        basis = pipeline.build_basis(S, n_vars, cfg.pod.layout, modes=per)
    _save_basis(out / "basis.romf", basis)
    sv = basis.singular_values if isinstance(basis.singular_values, list) else [basis.singular_values]
    rows = [(v, i, s) for v, sig in enumerate(sv) for i, s in enumerate(np.asarray(sig))]
    write_csv(out / "singular_values.csv", ["variable[-]", "index[-]", "sigma[state]"], rows)
    print(f"basis N={basis.N} K={basis.K}")
    return EXIT_OK


def _case_from_rom(cfg, K):
    r = cfg.rom
    it = r.integrator
    return pipeline.RomCase(
        method=r.method, K=K, dt=it.dt, scheme=it.scheme, tau=r.tau, C=r.C, jac_mode=r.jac_mode,
        hyper_r=cfg.hyper.r if cfg.hyper else None, hyper_Np=cfg.hyper.target_Np if cfg.hyper else None,
        jacobian_refresh=it.jacobian_refresh, newton_tol=it.newton_tol, tau_update=r.tau_update,
    )


def cmd_rom_run(cfg, out):
    basis = _load_basis(out)
    traj = _load_trajectory(out)
    sys, u0, _ = pipeline.build_problem(cfg.problem)
    case = _case_from_rom(cfg, basis.K)
    res = pipeline.run_case(case, sys, u0, basis, traj, cfg.rom.integrator.t_final)
    rec = res["record"]
    write_matrix(out / "rom_coords.romf", rec.coords, {"times": rec.times.tolist(), "tau": res["tau"], "stable": rec.stable})
    if res["hyper"] is not None:
        h = res["hyper"]
        write_matrix(out / "hyper.romf", h.U, {
            "sample_indices": h.sample_indices.tolist(), "stencil_indices": h.stencil_indices.tolist(),
        })
    idx = np.searchsorted(traj.times, rec.times - 1e-9)
    ok = idx < traj.times.size
    err = np.full(rec.times.size, np.nan)
    if ok.any():
        ref = basis.project(traj.states[:, idx[ok]])
        err[ok] = np.linalg.norm(rec.coords[:, ok] - ref, axis=0)
    rows = [(t, np.linalg.norm(rec.coords[:, j]), err[j]) for j, t in enumerate(rec.times)]
    write_csv(out / "rom_run.csv", ["t[time]", "coord_norm[state]", "error_l2[state]"], rows)
    write_csv(out / "rom_timing.csv", ["method", "K[-]", "wall_time[s]"], [(case.method, basis.K, rec.wall_time)])
    print(f"{case.method} K={basis.K} tau={res['tau']:.6g} stable={rec.stable} integrated_error={res['integrated_error']:.6g}")
    if not rec.stable:
        print(f"run failed: {rec.message}", file=_sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


# sweep workers keep the read-only artifacts in module globals
_SHARED = {}


def _sweep_init(problem_cfg, snaps, traj, layout, t_final, omega):
    sys, u0, n_vars = pipeline.build_problem(problem_cfg)
    _SHARED.update(sys=sys, u0=u0, n_vars=n_vars, snaps=snaps, traj=traj, layout=layout, t_final=t_final, omega=omega, bases={})


def _sweep_one(case):
    s = _SHARED
    if case.K not in s["bases"]:
        s["bases"][case.K] = pipeline.build_basis(s["snaps"], s["n_vars"], s["layout"], modes=case.K)
    try:
        res = pipeline.run_case(case, s["sys"], s["u0"], s["bases"][case.K], s["traj"], s["t_final"], s["omega"])
    except RomkitError as exc:
        # failures before time marching (e.g. tau heuristic) are still a row
        res = {"method": case.method, "scheme": case.scheme, "K": case.K, "dt": case.dt, "tau": float("nan"),
               "stable": False, "integrated_error": float("nan"), "flops": 0, "newton_iterations": 0,
               "gmres_iterations": 0, "wall_time": 0.0, "message": str(exc)}
    res.pop("record", None)
    res.pop("hyper", None)
    return res


def sweep_cases(sw):
    cases = []
    for K, method, dt in itertools.product(sw.K, sw.method, sw.dt):
        scheme = sw.implicit_scheme if method in sw.implicit_methods else sw.explicit_scheme
        for tau in sw.tau if method == "apg" else [0.0]:
            cases.append(pipeline.RomCase(method=method, K=K, dt=dt, scheme=scheme, tau=tau))
    return cases


def cmd_sweep(cfg, out, workers=1):
    S, _ = _load(out / "snapshots.romf", "fom-run")
    traj = _load_trajectory(out)
    cases = sweep_cases(cfg.sweep)
    args = (cfg.problem, S, traj, cfg.pod.layout, cfg.fom.t_final, cfg.cost.omega)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_sweep_init, initargs=args) as pool:
            results = list(pool.map(_sweep_one, cases))
    else:
        _sweep_init(*args)
        results = [_sweep_one(c) for c in cases]
    header = ["method", "scheme", "K[-]", "dt[time]", "tau[time]", "stable[bool]", "integrated_error[state]",
              "flops[flop]", "newton_iterations[-]", "gmres_iterations[-]"]
    keys = ["method", "scheme", "K", "dt", "tau", "stable", "integrated_error", "flops", "newton_iterations", "gmres_iterations"]
    write_csv(out / "sweep.csv", header, [[r[k] for k in keys] for r in results])
    write_csv(out / "sweep_timing.csv", ["method", "K[-]", "dt[time]", "tau[time]", "wall_time[s]"],
              [[r["method"], r["K"], r["dt"], r["tau"], r["wall_time"]] for r in results])
    n_bad = sum(not r["stable"] for r in results)
    print(f"{len(results)} runs, {n_bad} unstable")
    return EXIT_OK


def cmd_verify(cfg, out, seed):
    v = cfg.verify
    checks = []
    if cfg.problem.kind in ("lti-diffusion", "lti-file"):
        sys, _, _ = pipeline.build_problem(cfg.problem)
        rng = np.random.default_rng(seed)
        K = min(v.max_K, sys.dim - 1)
        V, _ = np.linalg.qr(rng.standard_normal((sys.dim, K)))
        t_grid = np.linspace(0.0, v.t_final, v.n_times)
        checks += analysis.lti_checks(sys, TrialBasis(V), rng.standard_normal(K), t_grid, label="problem ")
    checks += analysis.theorem_suite(v.n_systems, v.max_N, v.max_K, v.t_final, v.n_times, seed)
    write_csv(out / "verify.csv", ["name", "lhs", "rhs", "margin", "pass[bool]"],
              [(c.name, c.lhs, c.rhs, c.margin, c.passed) for c in checks])
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks)} checks, {len(failed)} failed")
    for c in failed:
        print(f"FAIL {c.name}: {c.lhs:.6g} > {c.rhs:.6g}")
    return EXIT_VERIFY if failed else EXIT_OK


def cost_rows(N, omega, K_max, eta_fractions):
    A = analysis.Algorithm
    rows = []
    for K in range(1, K_max + 1):
        m = analysis.CostModel(N=N, K=K, omega=omega)
        f = {a: analysis.flop_estimate(m, a) for a in (A.GALERKIN_EXPLICIT, A.APG_EXPLICIT, A.GALERKIN_IMPLICIT, A.APG_IMPLICIT, A.LSPG)}
        row = [K, f[A.GALERKIN_EXPLICIT], f[A.APG_EXPLICIT], f[A.APG_EXPLICIT] / f[A.GALERKIN_EXPLICIT],
               f[A.GALERKIN_IMPLICIT], f[A.APG_IMPLICIT], f[A.APG_IMPLICIT] / f[A.GALERKIN_IMPLICIT],
               f[A.LSPG], f[A.LSPG] / f[A.GALERKIN_IMPLICIT]]
        for frac in eta_fractions:
            eta = max(1, int(round(frac * K)))
            jf = analysis.flop_estimate(analysis.CostModel(N=N, K=K, omega=omega, eta=eta), A.APG_JFNK)
            row += [jf, jf / f[A.GALERKIN_IMPLICIT]]
        rows.append(row)
    header = ["K[-]", "galerkin_explicit[flop]", "apg_explicit[flop]", "apg_explicit_ratio[-]",
              "galerkin_implicit[flop]", "apg_implicit[flop]", "apg_implicit_ratio[-]", "lspg[flop]", "lspg_ratio[-]"]
    for frac in eta_fractions:
        header += [f"apg_jfnk_eta{frac:g}K[flop]", f"apg_jfnk_eta{frac:g}K_ratio[-]"]
    return header, rows


def cmd_cost(cfg, out):
    c = cfg.cost
    header, rows = cost_rows(c.N, c.omega, c.K_max, c.eta_fractions)
    write_csv(out / "cost.csv", header, rows)
    print(f"cost table for K=1..{c.K_max}, N={c.N}, omega={c.omega}")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

COMMANDS = ("fom-run", "pod-build", "rom-run", "sweep", "verify", "cost")


def build_parser():
    p = argparse.ArgumentParser(prog="romkit", description="Projection-based reduced-order modelling toolkit.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="JSON run config (defaults apply when omitted)")
    p.add_argument("--out", type=Path, help="output directory (overrides outputs.directory)")
    p.add_argument("--workers", type=int, default=1, help="parallel sweep workers")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
    except FileNotFoundError:
        print(f"config file {args.config} not found", file=_sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    if args.workers < 1:
        print("config error: --workers must be >= 1", file=_sys.stderr)
        return EXIT_CONFIG
    seed = cfg.seed if args.seed is None else args.seed
    out = args.out or Path(cfg.outputs.directory)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "fom-run":
            return cmd_fom_run(cfg, out)
        if args.command == "pod-build":
            return cmd_pod_build(cfg, out)
        if args.command == "rom-run":
            return cmd_rom_run(cfg, out)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, args.workers)
        if args.command == "verify":
            return cmd_verify(cfg, out, seed)
        return cmd_cost(cfg, out)
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=_sys.stderr)
        return EXIT_MISSING
    except (RomkitError, ValueError) as exc:
        # ValueError here comes from inconsistent sizes (e.g. K not divisible
        # by the variable count) discovered once artifacts are loaded
        print(f"solver error: {exc}", file=_sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    raise SystemExit(main())
