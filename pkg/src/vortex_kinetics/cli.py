"""Command line entry point: ``run``, ``verify``, ``coeffs`` and ``report``.

Exit codes: 0 success, 1 failed checks, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import subprocess
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .io import config_hash, emit, file_digest, read_json

log = logging.getLogger("vortex_kinetics")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class StageFailure(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage
        self.exc = exc


@dataclass
class RunManifest:
    config_hash: str
    version: str
    scenario: str
    config: dict
    stages: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)


class Pipeline:
    """Runs named stages, records timings and writes artifacts into the output directory."""

    def __init__(self, cfg: ExperimentConfig, out_dir: Path):
        self.cfg = cfg
        self.out = out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(config_hash(cfg.to_dict()), artifact_version(), cfg.scenario, cfg.to_dict())

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        except (ConfigError, StageFailure):
            raise
        except Exception as exc:  # numeric failures carry the stage name to the exit code
            self.manifest.stages.append({"name": name, "seconds": time.perf_counter() - start, "status": "failed"})
            raise StageFailure(name, exc) from exc
        self.manifest.stages.append({"name": name, "seconds": time.perf_counter() - start, "status": "ok"})

    def check(self, name: str, value, target: str, passed: bool):
        self.manifest.checks.append({"check": name, "value": value, "target": target, "passed": bool(passed)})

    def write(self, name: str, report, fmt: str, header=None):
        path = emit(report, fmt, self.out / name, header)
        self.manifest.artifacts[name] = file_digest(path)


def artifact_version() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# ---------------------------------------------------------------------------
# Builders from config sections
# ---------------------------------------------------------------------------


@contextmanager
def _spec(key: str):
    """Report malformed kernel or density specs as configuration errors."""
    from .kernels import KernelError

    try:
        yield
    except (KernelError, KeyError, TypeError, IndexError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(key, str(exc)) from exc


def _torus_kernel(cfg):
    from .kernels import make_torus_kernel

    with _spec("kernel.modes"):
        return make_torus_kernel(cfg.kernel["modes"])


def _torus_f0(cfg):
    from .nbody import TorusDensity

    entries = (cfg.f0 or {}).get("cosines", [])
    with _spec("f0.cosines"):
        return TorusDensity.from_cosines({(int(e[0]), int(e[1])): float(e[2]) for e in entries})


def _plane_kernel(cfg):
    from .kernels import make_plane_kernel, profile_from_spec

    with _spec("kernel"):
        return make_plane_kernel(profile_from_spec(cfg.kernel))


def _potential(cfg):
    from .kernels import make_external_potential, profile_from_spec

    if cfg.potential is None:
        raise ConfigError("potential", "this scenario needs an external potential")
    with _spec("potential"):
        return make_external_potential(profile_from_spec(cfg.potential))


def _positive_modes(f0):
    return [k for k in f0.modes() if k > (0, 0) and k[0] >= 0]


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------


def _uniform_wave(p: Pipeline, coeffs_only: bool):
    from .cumulants import exact_short_time_derivatives, finite_difference_derivatives
    from .effective.torus import diffusion_matrix_torus, next_order_B
    from .nbody import EnsembleConfig, run_ensemble

    cfg = p.cfg
    with p.stage("kernel"):
        kernel = _torus_kernel(cfg)
        f0 = _torus_f0(cfg)
        a = diffusion_matrix_torus(kernel)
        b = next_order_B(kernel)
        p.write("coefficients.json", {"A": a.matrix, "B": b.matrix}, "json")
    if coeffs_only:
        return
    h = cfg.h
    modes = _positive_modes(f0)
    rows, ok = [], True
    estimates = {}
    with p.stage("ensemble"):
        for n in cfg.n_particles:
            ens = EnsembleConfig(n, cfg.n_samples, cfg.seed, [-2 * h, -h, 0.0, h, 2 * h], single_modes=modes,
                                 block_size=cfg.block_size, n_workers=cfg.n_workers)
            estimates[n] = run_ensemble(ens, kernel, f0)
            p.write(f"moments_N{n}.json", estimates[n].to_json_dict(), "json")
    with p.stage("cumulants"):
        fds = {n: {k: finite_difference_derivatives(estimates[n], k, h) for k in modes} for n in cfg.n_particles}
    with p.stage("compare"):
        for n in cfg.n_particles:
            exact = exact_short_time_derivatives(f0, kernel, n)
            for k in modes:
                d2, d3 = fds[n][k]["d2"], fds[n][k]["d3"]
                dev = d2.value - exact.d2[k]
                good = (abs(dev.real) <= 3 * d2.se_re + d2.stencil_error
                        and abs(dev.imag) <= 3 * d2.se_im + d2.stencil_error
                        and abs(d3.value.real) <= 3 * d3.se_re + d3.stencil_error
                        and abs(d3.value.imag) <= 3 * d3.se_im + d3.stencil_error)
                ok = ok and good
                rows.append((n, k[0], k[1], d2.value.real, d2.value.imag, d2.se_re, d2.se_im, d2.stencil_error,
                             exact.d2[k].real, d3.value.real, d3.value.imag, d3.se_re, d3.se_im, d3.stencil_error))
        p.write("wave_law.csv", rows, "csv",
                ["N", "k1", "k2", "d2_re", "d2_im", "d2_se_re", "d2_se_im", "d2_stencil", "d2_exact",
                 "d3_re", "d3_im", "d3_se_re", "d3_se_im", "d3_stencil"])
        p.check("wave law within 3 se + stencil error", len(rows), "all rows", ok)


def _uniform_hierarchy(p: Pipeline, coeffs_only: bool):
    from .effective.torus import diffusion_matrix_torus
    from .hierarchy import FockBasis, build_operator, evolve, initial_state, spectral_diagnostics

    cfg = p.cfg
    with p.stage("kernel"):
        kernel = _torus_kernel(cfg)
        f0 = _torus_f0(cfg)
        a = diffusion_matrix_torus(kernel)
        p.write("coefficients.json", {"A": a.matrix}, "json")
    if coeffs_only:
        return
    with p.stage("operator"):
        basis = FockBasis(cfg.cutoff, cfg.max_level)
        op = build_operator(kernel, basis)
        adj = op.adjoint_residual()
        p.check("adjoint residual", adj, "<= 1e-12", adj <= 1e-12)
    taus = [0.0] + list(cfg.tau_grid)
    with p.stage("evolve"):
        g0 = initial_state(f0, basis)
        gs = evolve(op, g0, taus)
        drift = max(abs(g.norm() - g0.norm()) for g in gs) / g0.norm()
        p.check("norm drift", drift, "<= 1e-10", drift <= 1e-10)
        rows = [(t, k[0], k[1], g.data[basis.position(1, k, ())].real, g.data[basis.position(1, k, ())].imag)
                for t, g in zip(taus, gs) for k in basis.modes]
        p.write("tagged_series.csv", rows, "csv", ["tau", "k1", "k2", "re", "im"])
    with p.stage("diagnostics"):
        report = {"adjoint_residual": adj, "norm_drift": drift, "basis_size": basis.size}
        if basis.size <= 5000:
            rep = spectral_diagnostics(op, g0, g0, list(cfg.cesaro_T))
            report["spectral"] = rep.to_json_dict()
        p.write("diagnostics.json", report, "json")


def _cumulant_scaling(p: Pipeline, coeffs_only: bool):
    from .acceptance import scaling_pairs
    from .cumulants import invert_cluster, marginals_from_moments, scaling_report
    from .nbody import EnsembleConfig, run_ensemble

    cfg = p.cfg
    if len(set(cfg.n_particles)) < 3:
        raise ConfigError("n_particles", "the scaling fit needs at least three distinct particle numbers")
    with p.stage("kernel"):
        kernel = _torus_kernel(cfg)
        f0 = _torus_f0(cfg)
        pairs = scaling_pairs(f0.modes(), cfg.cutoff)
    if coeffs_only:
        return
    norms, ses = [], []
    with p.stage("ensemble"):
        estimates = {}
        for n in cfg.n_particles:
            ens = EnsembleConfig(n, cfg.n_samples, cfg.seed, [np.sqrt(n) * cfg.tau], pair_modes=pairs,
                                 block_size=cfg.block_size, n_workers=cfg.n_workers)
            estimates[n] = run_ensemble(ens, kernel, f0)
    with p.stage("cumulants"):
        for n in cfg.n_particles:
            est = estimates[n]
            g = invert_cluster(marginals_from_moments(est, 2), 2, est.times, n)
            nrm, se = g[1].norm()
            norms.append(float(nrm[0]))
            ses.append(float(se[0]))
    with p.stage("scaling"):
        rep = scaling_report(cfg.n_particles, norms, ses)
        p.write("scaling.csv", list(zip(cfg.n_particles, norms, ses)), "csv", ["N", "norm", "se"])
        p.write("scaling.json", {"slope": rep.slope, "slope_se": rep.slope_se, "intercept": rep.intercept,
                                 "keys": [list(map(list, k)) for k in pairs]}, "json")
        p.check("slope", rep.slope, "-0.5 +- 0.15", abs(rep.slope + 0.5) <= 0.15)


def _gaussian_case(p: Pipeline, coeffs_only: bool):
    from .acceptance import off_centre_gaussian
    from .effective.gaussian import diffusion_field_gaussian, gaussian_main_term, t_beta_operator
    from .meanfield import profile_from_omega
    from .quadrature import composite_gauss_legendre

    cfg = p.cfg
    R = cfg.R if cfg.R is not None else 1.0
    beta = cfg.beta
    if beta <= 0 or R <= 0:
        raise ConfigError("beta" if beta <= 0 else "R", "the Gaussian case needs beta > 0 and R > 0")
    with p.stage("profile"):
        kernel = _plane_kernel(cfg)
        grid = composite_gauss_legendre(0.0, 8.0 * max(1.0, 1.0 / np.sqrt(beta * R)), cfg.n_panels, 16)
        profile = profile_from_omega(lambda r: -R * np.ones_like(r), beta, grid)
    with p.stage("coefficient"):
        field_a = diffusion_field_gaussian(kernel, profile, R=R)
        p.write("A_field.csv", field_a.to_csv_rows(), "csv", ["r", "tangential", "normal", "cross"])
    if coeffs_only:
        return
    with p.stage("operator"):
        op = t_beta_operator(profile, kernel, cfg.n_angular, R=R)
        top = [float(np.max(np.abs(op.eig(n)[0]))) for n in range(1, 4)]
    with p.stage("main_term"):
        f0 = cfg.f0 or {}
        fn = off_centre_gaussian(f0.get("center", [1.0, 0.5]), float(f0.get("width", 0.5)))
        s_max = 0.75 * grid.r_max
        mt = gaussian_main_term(fn, profile, kernel, [0.0], cesaro_T=cfg.cesaro_T, s_max=s_max,
                                n_s=64, f_modes=24, n_max=cfg.n_angular, R=R)
        errs = mt.relative_cesaro_error()
        p.write("main_term.json", {"cesaro_T": cfg.cesaro_T, "relative_error": errs, "top_eigenvalues": top}, "json")
        p.check("Cesaro error at largest T", float(errs[-1]), "<= 0.02", errs[-1] <= 0.02)


def _nongaussian_fp(p: Pipeline, coeffs_only: bool):
    from .effective.fokker_planck import fp_evolve, gaussian_blob
    from .effective.resolvent import compute_a_beta
    from .meanfield import renormalized_potential, solve_mu_beta

    cfg = p.cfg
    with p.stage("profile"):
        kernel = _plane_kernel(cfg)
        potential = _potential(cfg)
        profile = solve_mu_beta(potential, kernel, cfg.beta)
        p.write("profile.csv", profile.to_csv_rows(), "csv", ["r", "mu", "omega"])
    with p.stage("renormalize"):
        wb = renormalized_potential(kernel, profile, n_modes=max(16, cfg.n_angular))
    with p.stage("coefficient"):
        coeff = compute_a_beta(profile, kernel, wb, cfg.eps_schedule, n_max=cfg.n_angular, n_panels=cfg.n_panels)
        p.write("a_beta.csv", coeff.to_csv_rows(), "csv", ["r", "a_beta", "stability_gap"])
        p.write("a_beta.json", {"eps_schedule": coeff.eps_schedule, "gaps": coeff.gaps, "flagged": coeff.flagged,
                                "resolvent_residual": coeff.resolvent_residual,
                                "max_neumann_ratio": coeff.max_neumann_ratio, "meta": coeff.meta}, "json")
        p.check("a_beta positive", float(np.min(coeff.values)), ">= -1e-8", np.min(coeff.values) >= -1e-8)
        p.check("eps gaps decreasing", coeff.gaps, "decreasing", bool(np.all(np.diff(coeff.gaps) < 0)))
    if coeffs_only:
        return
    with p.stage("fokker_planck"):
        f0 = cfg.f0 or {}
        blob = gaussian_blob(float(f0.get("radius", 1.5)), float(f0.get("width", 0.3)))
        ser = fp_evolve(blob, coeff, profile, cfg.fp_taus)
        p.write("fp_series.csv", ser.to_csv_rows(), "csv", ["tau", "r", "f"])
        norms = ser.weighted_norm()
        p.check("weighted norm non-increasing", norms, "monotone", bool(np.all(np.diff(norms) <= 1e-14 * norms[0])))
        drift = float(np.max(np.abs(ser.mass() - ser.mass()[0])))
        p.check("mass conservation", drift, "<= 1e-10", drift <= 1e-10)


def _coeffs_only(p: Pipeline, coeffs_only: bool):
    if p.cfg.domain == "torus":
        _uniform_wave(p, True)
    elif p.cfg.potential is None:
        _gaussian_case(p, True)
    else:
        _nongaussian_fp(p, True)


SCENARIO_RUNNERS = {
    "uniform_wave": _uniform_wave,
    "uniform_hierarchy": _uniform_hierarchy,
    "cumulant_scaling": _cumulant_scaling,
    "gaussian_case": _gaussian_case,
    "nongaussian_fp": _nongaussian_fp,
    "coeffs_only": _coeffs_only,
}


def run_experiment(config_path, coeffs_only: bool = False, out_dir: str | Path | None = None) -> RunManifest:
    """Execute a scenario end to end and write artifacts plus ``manifest.json``."""
    cfg = load_config(config_path)
    target = Path(out_dir) if out_dir else Path(cfg.output_dir)
    if not target.is_absolute() and out_dir is None:
        target = Path(config_path).resolve().parent / target
    pipe = Pipeline(cfg, target)
    start = time.perf_counter()
    SCENARIO_RUNNERS[cfg.scenario](pipe, coeffs_only or cfg.scenario == "coeffs_only")
    pipe.manifest.wall_clock = time.perf_counter() - start
    emit(pipe.manifest, "json", target / "manifest.json")
    return pipe.manifest


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------


def _cmd_run(args, coeffs_only: bool) -> int:
    try:
        man = run_experiment(args.config, coeffs_only=coeffs_only, out_dir=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageFailure as exc:
        print(f"numeric failure in stage '{exc.stage}': {exc.exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for st in man.stages:
        print(f"stage {st['name']:<14} {st['status']:<6} {st['seconds']:8.2f}s")
    for c in man.checks:
        print(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['check']} (target {c['target']})")
    return EXIT_OK if man.passed else EXIT_FAILED


def _cmd_verify(args) -> int:
    from .acceptance import run_suite
    from .io import to_jsonable

    only = [int(x) for x in args.only.split(",")] if args.only else None
    try:
        results = run_suite(args.suite, only)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.json:
        emit([{"criterion": r.number, "name": r.name, "passed": r.passed, "measured": to_jsonable(r.measured),
               "target": r.target, "runtime": r.runtime} for r in results], "json", args.json)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_FAILED if failed else EXIT_OK


def _cmd_report(args) -> int:
    root = Path(args.dir)
    manifests = sorted(root.rglob("manifest.json"))
    if not manifests:
        print(f"no manifest.json under {root}", file=sys.stderr)
        return EXIT_CONFIG
    status = EXIT_OK
    for path in manifests:
        man = read_json(path)
        bad = [name for name, digest in man["artifacts"].items()
               if not (path.parent / name).exists() or file_digest(path.parent / name) != digest]
        checks = man["checks"]
        passed = sum(c["passed"] for c in checks)
        print(f"{path.parent}: scenario {man['scenario']}, config {man['config_hash']}, version {man['version']}")
        print(f"  wall clock {man['wall_clock']:.1f}s; stages: "
              + ", ".join(f"{s['name']} {s['seconds']:.1f}s" for s in man["stages"]))
        print(f"  checks {passed}/{len(checks)} passed; artifacts {len(man['artifacts']) - len(bad)}/{len(man['artifacts'])} intact")
        for c in checks:
            if not c["passed"]:
                print(f"  FAIL {c['check']} (target {c['target']})")
        if bad or passed < len(checks):
            status = EXIT_FAILED
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vortex-kinetics", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, help="worker threads for ensembles (overrides the env variable)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario from a YAML config")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory (default: output_dir from the config)")
    p_ver = sub.add_parser("verify", help="run the acceptance suite")
    p_ver.add_argument("suite", choices=["fast", "full"])
    p_ver.add_argument("--only", help="comma-separated criterion numbers")
    p_ver.add_argument("--json", help="write the report to this JSON file")
    p_co = sub.add_parser("coeffs", help="compute effective coefficients only")
    p_co.add_argument("config")
    p_co.add_argument("--out")
    p_rep = sub.add_parser("report", help="summarize manifests under a directory")
    p_rep.add_argument("dir")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads:
        from .nbody import THREADS_ENV

        os.environ[THREADS_ENV] = str(args.threads)
    if args.command == "run":
        return _cmd_run(args, False)
    if args.command == "coeffs":
        return _cmd_run(args, True)
    if args.command == "verify":
        return _cmd_verify(args)
    return _cmd_report(args)


if __name__ == "__main__":
    sys.exit(main())
