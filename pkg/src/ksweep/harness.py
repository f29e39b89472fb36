"""Experiment orchestration: configs, CSV artifacts, and the study drivers.

Config files are flat INI text (sections: problem, mesh, scheme, solver,
output).  Every run writes steps.csv / iters.csv / summary.csv, a field.csv
point cloud of the final state, and a manifest recording every resolved
parameter.  Floats in CSV columns use uppercase scientific notation with six
significant digits so artifacts are byte-reproducible (wall-clock columns are
informative only).
"""

from __future__ import annotations

import configparser
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .mesh import PhaseField
from .problems import ProblemConfig, by_name
from .solver import SolverConfig, kappa_nest
from .timeloop import Simulation, StepRecord, TimeConfig, error_norms

LADDER_DEFAULT = range(1, 9)  # dt = T_f / 2^k
STUDY_METHODS = ("nls-pic", "nls-aa", "nls-pic+ddsa", "nls-aa+ddsa")


class ConfigError(ValueError):
    """Malformed or incomplete run configuration."""


def fmt(x: float) -> str:
    """Six significant digits, uppercase scientific."""
    return f"{x:.5E}"


@dataclass
class RunSpec:
    """Fully resolved parameters for one simulation run."""

    problem: str = "diode-single"
    eps: float | None = None
    nx: int | None = None
    nv: int | None = None
    scheme: str = "euler"
    dt: float | None = None
    t_final: float | None = None
    method: str = "nls-aa"
    ddsa: bool = False
    outer_tol: float | None = None
    inner_tol: float = 1e-10
    aa_window: int = 15
    aa_beta: float = 1.0
    max_sweeps: int = 50_000
    fc_enabled: bool = True
    out_dir: str = "out"

    def build_problem(self) -> ProblemConfig:
        return by_name(self.problem, self.eps)

    def build_solver_config(self, problem: ProblemConfig) -> SolverConfig:
        return SolverConfig(
            method=self.method, ddsa=self.ddsa,
            outer_tol=self.outer_tol if self.outer_tol is not None else 1e-8,
            inner_tol=self.inner_tol, aa_window=self.aa_window,
            aa_beta=self.aa_beta, max_sweeps_per_step=self.max_sweeps,
            fc_bounds=problem.fc_bounds if self.fc_enabled else None)

    def build_time_config(self, problem: ProblemConfig) -> TimeConfig:
        tf = problem.t_final if self.t_final is None else self.t_final
        dt = tf / 2.0 if self.dt is None else self.dt
        return TimeConfig(dt=dt, t_final=tf, scheme=self.scheme)


def load_config(path: str | Path) -> RunSpec:
    """Parse a key = value config file into a RunSpec."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    spec = RunSpec()
    try:
        if cp.has_section("problem"):
            sec = cp["problem"]
            spec.problem = sec.get("name", spec.problem)
            if "eps" in sec:
                spec.eps = sec.getfloat("eps")
        if cp.has_section("mesh"):
            sec = cp["mesh"]
            if "nx" in sec:
                spec.nx = sec.getint("nx")
            if "nv" in sec:
                spec.nv = sec.getint("nv")
        if cp.has_section("scheme"):
            sec = cp["scheme"]
            spec.scheme = sec.get("scheme", spec.scheme)
            if "dt" in sec:
                spec.dt = sec.getfloat("dt")
            if "t_final" in sec:
                spec.t_final = sec.getfloat("t_final")
        if cp.has_section("solver"):
            sec = cp["solver"]
            spec.method = sec.get("method", spec.method)
            spec.ddsa = sec.getboolean("ddsa", spec.ddsa)
            if "outer_tol" in sec:
                spec.outer_tol = sec.getfloat("outer_tol")
            if "inner_tol" in sec:
                spec.inner_tol = sec.getfloat("inner_tol")
            if "aa_window" in sec:
                spec.aa_window = sec.getint("aa_window")
            if "aa_beta" in sec:
                spec.aa_beta = sec.getfloat("aa_beta")
            if "max_sweeps_per_step" in sec:
                spec.max_sweeps = sec.getint("max_sweeps_per_step")
            if "fc_enabled" in sec:
                spec.fc_enabled = sec.getboolean("fc_enabled")
        if cp.has_section("output"):
            spec.out_dir = cp["output"].get("dir", spec.out_dir)
    except ValueError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    return spec


@dataclass
class RunResult:
    spec: RunSpec
    records: list[StepRecord]
    final: PhaseField | None
    sim: Simulation

    @property
    def status(self) -> str:
        return self.records[-1].outcome.status if self.records else "converged"

    @property
    def total_sweeps(self) -> int:
        return sum(r.outcome.sweeps for r in self.records)

    @property
    def total_iterations(self) -> int:
        return sum(r.outcome.iterations for r in self.records)

    @property
    def total_wall_ms(self) -> int:
        return int(round(1000 * sum(r.outcome.wall_time for r in self.records)))


def execute(spec: RunSpec, monitor_energy: bool = False) -> RunResult:
    problem = spec.build_problem()
    sim = Simulation(problem, spec.build_time_config(problem),
                     spec.build_solver_config(problem), spec.nx, spec.nv)
    if spec.outer_tol is not None:
        sim.tol = spec.outer_tol  # explicit setting beats problem overrides
    records, final = sim.run(monitor_energy=monitor_energy)
    return RunResult(spec, records, final, sim)


def write_artifacts(result: RunResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_steps(result, out / "steps.csv")
    _write_iters(result, out / "iters.csv")
    _write_summary(result, out / "summary.csv")
    write_manifest(result.spec, result.sim, out / "manifest.txt")
    if result.final is not None:
        write_field_csv(result.final, out / "field.csv")
    return out


def _write_steps(result: RunResult, path: Path):
    lines = ["step,t,iterations,sweeps,residual,status,wall_ms"]
    for r in result.records:
        o = r.outcome
        lines.append(f"{r.step},{fmt(r.t)},{o.iterations},{o.sweeps},"
                     f"{fmt(o.residual)},{o.status},{int(round(1000 * o.wall_time))}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_iters(result: RunResult, path: Path):
    lines = ["step,iter,residual"]
    for r in result.records:
        for k, res in enumerate(r.outcome.residual_history, start=1):
            lines.append(f"{r.step},{k},{fmt(res)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_summary(result: RunResult, path: Path):
    s = result.spec
    dt = s.dt if s.dt is not None else ""
    lines = ["problem,method,ddsa,scheme,dt,steps,total_iterations,"
             "total_sweeps,status,total_wall_ms",
             f"{s.problem},{s.method},{int(s.ddsa)},{s.scheme},"
             f"{fmt(result.sim.time_cfg.dt)},{len(result.records)},"
             f"{result.total_iterations},{result.total_sweeps},"
             f"{result.status},{result.total_wall_ms}"]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_manifest(spec: RunSpec, sim: Simulation, path: Path):
    p = sim.problem
    pairs = {
        "ksweep_version": __version__,
        "problem": p.name,
        "eps": p.eps,
        "theta": p.theta,
        "field_scale": p.field_scale,
        "load_scale": p.load_scale,
        "zeta": p.zeta,
        "omega_min": p.omega_min if p.omega_min is not None else 1.0,
        "transition_width": p.transition_width,
        "x_lo": p.x_lo, "x_hi": p.x_hi, "v_lo": p.v_lo, "v_hi": p.v_hi,
        "periodic": p.periodic,
        "nx": sim.mesh.nx, "nv": sim.mesh.nv,
        "dx": sim.mesh.dx, "dv": sim.mesh.dv,
        "scheme": sim.time_cfg.scheme,
        "bdf2_startup": "single implicit Euler step (flagged in step records)",
        "dt": sim.time_cfg.dt,
        "t_final": sim.time_cfg.t_final,
        "method": sim.solver_cfg.method,
        "ddsa": sim.solver_cfg.ddsa,
        "ddg_beta0": 2.0,
        "outer_tol": sim.tol,
        "inner_tol": sim.solver_cfg.inner_tol,
        "aa_window": sim.solver_cfg.aa_window,
        "aa_beta": sim.solver_cfg.aa_beta,
        "max_sweeps_per_step": sim.solver_cfg.max_sweeps_per_step,
        "fc_bounds": sim.solver_cfg.fc_bounds,
        "field_csv_oversampling": 2,
        "level_rule": "level L: cells 2^(L+2) per direction, dt = T_f * 2^-(L+2)",
    }
    path.write_text("".join(f"{k} = {v}\n" for k, v in pairs.items()),
                    encoding="utf-8")


def write_field_csv(f: PhaseField, path: Path, per_dir: int = 2):
    """Point samples of the DG field on an oversampled grid (x,v,value)."""
    mesh = f.mesh
    offs = (np.arange(per_dir) + 0.5) / per_dir - 0.5
    xs = (mesh.x_centers[:, None] + mesh.dx * offs[None, :]).ravel()
    vs = (mesh.v_centers[:, None] + mesh.dv * offs[None, :]).ravel()
    xh = np.tile(offs, mesh.nx)
    vh = np.tile(offs, mesh.nv)
    ix = np.repeat(np.arange(mesh.nx), per_dir)
    jv = np.repeat(np.arange(mesh.nv), per_dir)
    c = f.coeffs
    with path.open("w", encoding="utf-8") as fh:
        fh.write("x,v,value\n")
        for a, i, xhat in zip(xs, ix, xh):
            vals = c[i, jv, 0] + c[i, jv, 1] * xhat + c[i, jv, 2] * vh
            for b, val in zip(vs, vals):
                fh.write(f"{fmt(a)},{fmt(b)},{fmt(val)}\n")


def run(config: str | Path | RunSpec, out_dir: str | Path | None = None,
        **overrides) -> tuple[int, RunResult]:
    """Execute a configured run and write artifacts; returns (exit_code, result).

    Exit codes: 0 success, 3 divergence (INF), 4 sweep-budget exhaustion,
    5 false convergence.  Malformed configs raise ConfigError (CLI exit 2).
    """
    spec = config if isinstance(config, RunSpec) else load_config(config)
    for key, val in overrides.items():
        if val is not None:
            if not hasattr(spec, key):
                raise ConfigError(f"unknown option {key!r}")
            setattr(spec, key, val)
    try:
        spec.build_problem()
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    try:
        result = execute(spec)
    except NotImplementedError as exc:  # e.g. nested solver on periodic runs
        raise ConfigError(str(exc)) from exc
    write_artifacts(result, out_dir if out_dir is not None else spec.out_dir)
    status = result.status
    if status == "INF":
        return 3, result
    if status.startswith("R("):
        return 4, result
    if status == "FC":
        return 5, result
    return 0, result


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("KSWEEP_THREADS", "1")))
    except ValueError:
        return 1


def _run_cells(jobs, worker):
    n = _threads()
    if n == 1:
        return [worker(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(worker, jobs))


def efficiency_matrix(base: RunSpec, out_dir: str | Path,
                      methods=STUDY_METHODS, ladder=LADDER_DEFAULT) -> Path:
    """One summary row per (solver, dt); sub-run artifacts in cell directories.

    Mirrors the efficiency tables: a failed cell contributes its status code
    instead of sweep counts, and the matrix completes regardless.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = base.build_problem()
    tf = problem.t_final if base.t_final is None else base.t_final
    jobs = []
    for method in methods:
        name, _, dd = method.partition("+")
        for k in ladder:
            spec = replace(base, method=name, ddsa=(dd == "ddsa"),
                           dt=tf / 2 ** k, t_final=tf)
            jobs.append((method, k, spec))

    def worker(job):
        method, k, spec = job
        result = execute(spec)
        write_artifacts(result, out / f"{method}_dt{k}")
        return (method, k, result)

    cells = _run_cells(jobs, worker)
    rows = ["method,dt_exponent,dt,steps,total_sweeps,status,total_wall_ms"]
    for method, k, result in cells:
        rows.append(f"{method},{k},{fmt(tf / 2 ** k)},{len(result.records)},"
                    f"{result.total_sweeps},{result.status},{result.total_wall_ms}")
    (out / "matrix.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    _write_matrix_text(cells, list(methods), list(ladder), out / "matrix.txt")
    return out / "matrix.csv"


def _write_matrix_text(cells, methods, ladder, path: Path):
    table = {(m, k): r for m, k, r in cells}
    width = 16
    head = "dt".ljust(10) + "".join(m.ljust(width) for m in methods)
    lines = [head, "-" * len(head)]
    for k in ladder:
        row = f"T_f/2^{k}".ljust(10)
        for m in methods:
            r = table.get((m, k))
            cell = "-" if r is None else (
                str(r.total_sweeps) if r.status == "converged" else r.status)
            row += cell.ljust(width)
        lines.append(row)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def level_resolution(problem: ProblemConfig, level: int) -> tuple[int, float]:
    """Cells per direction and dt for a refinement level.

    Level L uses 2^(L+2) cells per direction and dt = T_f 2^-(L+2); the +2
    offset fixes the ladder's base resolution and is recorded in every
    manifest so studies are comparable across runs.
    """
    cells = 2 ** (level + 2)
    return cells, problem.t_final / 2 ** (level + 2)


def convergence_study(base: RunSpec, out_dir: str | Path,
                      levels=range(4, 7)) -> Path:
    """Refinement ladder on the manufactured problem; errors and rates."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = base.build_problem()
    if problem.exact_f is None or problem.exact_e is None:
        raise ConfigError("convergence study requires a problem with an exact solution")

    def worker(level):
        cells, dt = level_resolution(problem, level)
        spec = replace(base, nx=cells, nv=cells, dt=dt,
                       t_final=problem.t_final, fc_enabled=False)
        result = execute(spec)
        write_artifacts(result, out / f"level{level}")
        if result.final is None:
            return level, cells, dt, None, None
        e_vals = result.sim.final_efield(result.final).values
        ef, ee = error_norms(result.final, e_vals, problem.exact_f,
                             problem.exact_e, problem.t_final)
        return level, cells, dt, ef, ee

    rows = ["level,dx,dv,dt,err_f,rate_f,err_E,rate_E"]
    prev = None
    aborted = False
    for level in levels:
        lv, cells, dt, ef, ee = worker(level)
        if ef is None:
            aborted = True
            break
        mesh_dx = (problem.x_hi - problem.x_lo) / cells
        mesh_dv = (problem.v_hi - problem.v_lo) / cells
        rf = "" if prev is None else f"{np.log2(prev[0] / ef):.2f}"
        re_ = "" if prev is None else f"{np.log2(prev[1] / ee):.2f}"
        rows.append(f"{lv},{fmt(mesh_dx)},{fmt(mesh_dv)},{fmt(dt)},"
                    f"{fmt(ef)},{rf},{fmt(ee)},{re_}")
        prev = (ef, ee)
    path = out / "convergence.csv"
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    if aborted:
        raise RuntimeError(f"level failed to converge; partial output in {path}")
    return path


def contraction_study(base: RunSpec, out_dir: str | Path,
                      eps_list=(0.005, 0.002), dt: float = 0.0025,
                      tol: float = 1e-10, methods=STUDY_METHODS,
                      tail: int = 20) -> Path:
    """First-step residual histories, fitted rates, and sweep gains.

    Protocol: single-scale diode, implicit Euler, one time step of the given
    dt, iterating to the stated tolerance; the asymptotic ratio is a geometric
    fit over the last ``tail`` residuals and is compared against the analytic
    outer contraction estimate.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["eps,method,iterations,sweeps,status,kappa_fit,kappa_analytic,gain"]
    for eps in eps_list:
        results = {}
        for method in methods:
            name, _, dd = method.partition("+")
            spec = replace(base, problem="diode-single", eps=eps, method=name,
                           ddsa=(dd == "ddsa"), dt=dt, t_final=dt,
                           outer_tol=tol, fc_enabled=False)
            result = execute(spec)
            write_artifacts(result, out / f"eps{eps:g}_{method}")
            results[method] = result
        base_iters = results[methods[0]].total_iterations
        for method in methods:
            r = results[method]
            hist = r.records[0].outcome.residual_history if r.records else np.zeros(0)
            kfit = fit_contraction(hist, tail)
            kana = kappa_nest(eps, dt, 1.0)
            gain = base_iters / max(r.total_iterations, 1)
            rows.append(f"{eps:g},{method},{r.total_iterations},{r.total_sweeps},"
                        f"{r.status},{fmt(kfit) if np.isfinite(kfit) else 'NA'},"
                        f"{fmt(kana)},{gain:.1f}")
    path = out / "contraction.csv"
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


def fit_contraction(history: np.ndarray, tail: int = 20) -> float:
    """Geometric decay factor fitted to the last ``tail`` residuals."""
    h = np.asarray(history, dtype=float)
    h = h[np.isfinite(h) & (h > 0.0)]
    if h.size < 3:
        return np.nan
    h = h[-tail:]
    k = np.arange(h.size)
    slope = np.polyfit(k, np.log(h), 1)[0]
    return float(np.exp(slope))
