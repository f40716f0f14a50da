"""Glue shared by the command line and the experiment tests: build models
from config, march the FOM, build bases, and run one ROM case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import Algorithm, CostModel, error_norm, flop_estimate, refine_misfit_tau
from .basis import global_basis, per_variable_basis
from .dynamics import Euler1d, Euler1dConfig, LtiSystem, make_diffusion_lti
from .hyper import gappy_offline
from .io import read_matrix
from .rom import Method, RomMethod, RomProblem, run_rom, tau_heuristic
from .timeint import IntegratorSpec, Scheme, Trajectory, integrate, make_stepper

__all__ = [
    "build_problem",
    "run_fom",
    "training_snapshots",
    "build_basis",
    "RomCase",
    "run_case",
    "misfit_optimal_tau",
    "conservation_totals",
]


def build_problem(pcfg):
    """Return ``(system, u0, n_vars)`` for a problem config."""
    if pcfg.kind == "sod":
        sys = Euler1d(Euler1dConfig(n_cells=pcfg.n_cells, gamma=pcfg.gamma, entropy_fix=pcfg.entropy_fix))
        return sys, sys.initial_state(), 3
    if pcfg.kind == "lti-diffusion":
        n = pcfg.n
        dx = pcfg.dx if pcfg.dx is not None else 1.0 / (n + 1)
        sys = make_diffusion_lti(n, dx)
        x = np.arange(1, n + 1) * dx
        return sys, np.sin(np.pi * x) + np.exp(-200.0 * (x - 0.3) ** 2), 1
    A, meta = read_matrix(pcfg.path)
    sys = LtiSystem(A)
    u0 = np.asarray(meta.get("u0", np.ones(sys.dim)), dtype=float)
    return sys, u0, 1


def run_fom(sys, u0, spec, save_every=1):
    """March the full-order model; implicit schemes need an assembled Jacobian."""
    jac = None
    if spec.scheme.implicit:
        jac = lambda u: _dense(sys.jac_matrix(u))
    step = make_stepper(sys.rhs, spec, jac=jac, jvp=sys.jac_vec)
    return integrate(step, u0, spec.dt, spec.t_final, save_every)


def _dense(J):
    return J.toarray() if hasattr(J, "toarray") else np.asarray(J)


def training_snapshots(traj):
    """Saved states after t = 0; the initial state alone when no step was taken."""
    return traj.states[:, 1:] if traj.states.shape[1] > 1 else traj.states


def build_basis(snapshots, n_vars, layout="per-variable", modes=None, criterion=None):
    if layout == "per-variable" and n_vars > 1:
        if modes is not None and modes % n_vars:
            raise ValueError(f"K={modes} does not split evenly over {n_vars} variables")
        per = None if modes is None else modes // n_vars
        return per_variable_basis(snapshots, n_vars, modes=per, criterion=criterion)
    return global_basis(snapshots, modes=modes, criterion=criterion)


def conservation_totals(sys, u):
    """Cell-summed conserved quantities times dx (Euler) or the plain sum (LTI)."""
    if isinstance(sys, Euler1d):
        return (u.reshape(3, sys.n) * sys.cfg.dx).sum(axis=1)
    return np.array([u.sum()])


@dataclass
class RomCase:
    method: str
    K: int
    dt: float
    scheme: str
    tau: object = 0.0
    C: float = 0.2
    jac_mode: str = "fd"
    hyper_r: int | None = None
    hyper_Np: int | None = None
    jacobian_refresh: str = "lazy"
    newton_tol: float = 1e-8
    tau_update: bool = False


MISFIT_STRIDE = 10


def misfit_optimal_tau(case, sys, u0, basis, fom_traj, t_final=1.0):
    """Training-set tau: minimise the summed error at every 10th step over a tau grid.

    Runs APG with the case's scheme and step; returns ``(tau_opt, taus, values)``.
    """
    spec = IntegratorSpec(scheme=Scheme(case.scheme), dt=case.dt, t_final=t_final,
                          jacobian_refresh=case.jacobian_refresh, newton_tol=case.newton_tol)
    stride_dt = MISFIT_STRIDE * case.dt
    sample = stride_dt * np.arange(1, int(np.floor(t_final / stride_dt + 1e-9)) + 1)

    def factory(tau):
        method = RomMethod(Method.APG, tau=tau, jac_mode=case.jac_mode)
        return run_rom(RomProblem(sys, basis, method, spec), u0, MISFIT_STRIDE)

    return refine_misfit_tau(factory, fom_traj.times, fom_traj.states, basis, sample)


def run_case(case, sys, u0, basis, fom_traj, t_final=1.0, omega=50, save_dt=None):
    """Run one ROM case and score it against the FOM trajectory.

    Returns a dict of CSV-ready fields. ``save_dt`` defaults to the FOM
    output spacing so both trajectories share a time grid.
    """
    fom_times = fom_traj.times
    save_dt = save_dt if save_dt is not None else float(fom_times[1] - fom_times[0]) if fom_times.size > 1 else case.dt
    save_every = max(1, int(round(save_dt / case.dt)))
    tau = case.tau
    if case.method == "apg" and tau == "heuristic":
        tau = tau_heuristic(basis.project(u0), sys, basis, case.C)
    elif case.method == "apg" and tau == "misfit":
        tau = misfit_optimal_tau(case, sys, u0, basis, fom_traj, t_final)[0]
    tau = float(tau) if case.method == "apg" else 0.0
    kind = Method(case.method)
    scheme = Scheme(case.scheme)
    method = RomMethod(
        kind, tau=tau, jac_mode=case.jac_mode, scheme=scheme if kind is Method.LSPG else Scheme.IMPLICIT_EULER,
        tau_update=case.tau_update, C=case.C,
    )
    spec = IntegratorSpec(scheme=scheme, dt=case.dt, t_final=t_final, jacobian_refresh=case.jacobian_refresh, newton_tol=case.newton_tol)
    hyper = None
    if case.hyper_r:
        rhs_snaps = sys.rhs(training_snapshots(fom_traj))
        hyper = gappy_offline(rhs_snaps, case.hyper_r, case.hyper_Np or case.hyper_r, sys, basis)
    rec = run_rom(RomProblem(sys, basis, method, spec, hyper=hyper), u0, save_every)
    integrated = float("nan")
    if rec.stable:
        idx = np.searchsorted(fom_times, rec.times - 1e-9)
        integrated = error_norm(rec.times, rec.coords, fom_times[idx], fom_traj.states[:, idx], basis).integrated
    cm = CostModel(N=sys.dim, K=basis.K, omega=omega)
    alg = {
        ("galerkin", False): Algorithm.GALERKIN_EXPLICIT,
        ("apg", False): Algorithm.APG_EXPLICIT,
        ("galerkin", True): Algorithm.GALERKIN_IMPLICIT,
        ("apg", True): Algorithm.APG_IMPLICIT,
        ("lspg", True): Algorithm.LSPG,
    }[(case.method, scheme.implicit)]
    stages = 3 if scheme is Scheme.SSP_RK3 else 1
    work = sum(rec.newton_iterations) if scheme.implicit else int(round(t_final / case.dt)) * stages
    return {
        "method": case.method,
        "scheme": scheme.value,
        "K": basis.K,
        "dt": case.dt,
        "tau": tau,
        "stable": rec.stable,
        "integrated_error": integrated,
        "flops": flop_estimate(cm, alg) * work,
        "newton_iterations": int(sum(rec.newton_iterations)),
        "gmres_iterations": int(sum(rec.gmres_iterations)),
        "wall_time": rec.wall_time,
        "message": rec.message,
        "record": rec,
        "hyper": hyper,
    }
