"""Command-line driver: run analysis stages over a model file.

    bgwqsd <subcommand> --config experiment.yaml [stage flags]

Subcommands: validate, spectral, kernel, qsd, qsd-family, lyapunov,
verify-e, simulate, yaglom, pipeline.  Each stage writes one artifact
(JSON and, for tables, tab-delimited text) into the configured output
directory; `pipeline` chains stages in dependency order and finishes with
`summary.json`, whose headline checks are recomputed from the artifact
files rather than from anything still in memory.

Artifacts contain no timestamps; wall-clock lines go to `run.log` only,
so identical (config, seed) runs produce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import artifacts as art
from .errors import DomainError, ModelValidationError, StatisticsError
from .kernel import (
    QsdEstimate,
    build_kernel_exact,
    build_kernel_mc,
    communication_classes,
    solve_qsd,
    spectral_radius,
)
from .lyapunov import check_moment_assumption, verify_convergence_criteria, verify_drift
from .model import ModelSpec, validate_model
from .montecarlo import estimate_theta0, qsd_as_law, simulate_batch, yaglom_convergence
from .qsd_family import (
    build_family,
    default_anchor_ladder,
    default_lambda_grid,
    estimate_upsilon0,
)
from .spectral import SpectralResult, check_primitivity, power_iterate

STAGE_ORDER = ["validate", "spectral", "kernel", "qsd", "qsd-family",
               "lyapunov", "verify-e", "simulate", "yaglom"]
STAGE_DEPS = {
    "validate": [],
    "spectral": [],
    "kernel": [],
    "qsd": ["kernel"],
    "qsd-family": ["kernel", "qsd"],
    "lyapunov": ["spectral", "qsd"],
    "verify-e": ["kernel", "qsd", "spectral"],
    "simulate": [],
    "yaglom": ["kernel", "qsd"],
}
ARTIFACT_NAMES = {
    "validate": "validate.json",
    "spectral": "spectral.json",
    "kernel": "kernel_meta.json",
    "qsd": "qsd.json",
    "qsd-family": "qsd_family.json",
    "lyapunov": "lyapunov.json",
    "verify-e": "verify_e.json",
    "simulate": "simulate.json",
    "yaglom": "yaglom.json",
}


class DependencyError(RuntimeError):
    pass


@dataclass
class RunContext:
    config: dict
    spec: ModelSpec
    outdir: Path
    log_path: Path

    def log(self, msg: str) -> None:
        stamp = time.strftime("%Y-%m-%d %H:%M:%S")
        with self.log_path.open("a") as fh:
            fh.write(f"[{stamp}] {msg}\n")

    def stage_cfg(self, stage: str) -> dict:
        return dict(self.config.get(stage) or {})

    def seed(self, stage_cfg: dict) -> int:
        if "seed" in stage_cfg:
            return int(stage_cfg["seed"])
        if "seed" in self.config:
            return int(self.config["seed"])
        raise DomainError("no seed configured: set a top-level `seed` or a stage seed")

    def artifact(self, stage: str) -> Path:
        return self.outdir / ARTIFACT_NAMES[stage]

    def require(self, stage: str, needed_by: str):
        path = self.artifact(stage)
        if not path.exists():
            raise DependencyError(
                f"stage '{needed_by}' needs the '{stage}' artifact; run `bgwqsd "
                f"{stage}` first (missing {path})")
        return path


def load_context(config_path: str, overrides: dict | None = None) -> RunContext:
    config = yaml.safe_load(Path(config_path).read_text())
    if not isinstance(config, dict):
        raise ModelValidationError(f"{config_path} does not contain a config mapping")
    for stage, kv in (overrides or {}).items():
        merged = dict(config.get(stage) or {})
        merged.update({k: v for k, v in kv.items() if v is not None})
        config[stage] = merged
    model_path = Path(config["model"])
    if not model_path.is_absolute():
        model_path = Path(config_path).parent / model_path
    spec = art.load_model(model_path)
    outdir = Path(config.get("output_dir", "bgwqsd-out"))
    if not outdir.is_absolute():
        outdir = Path(config_path).parent / outdir
    outdir.mkdir(parents=True, exist_ok=True)
    return RunContext(config=config, spec=spec, outdir=outdir,
                      log_path=outdir / "run.log")


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def _load_spectral(ctx: RunContext) -> SpectralResult:
    doc = art.read_artifact(ctx.require("spectral", "this stage"))
    return SpectralResult(
        lambda_star=doc["lambda_star"], z_star=np.array(doc["z_star"]),
        iterations=doc["iterations"], residual=doc["residual"], n0=doc["n0"],
    )


def _load_qsd(ctx: RunContext, K) -> QsdEstimate:
    doc = art.read_artifact(ctx.require("qsd", "this stage"))
    return QsdEstimate(
        theta=doc["theta"], nu=np.array(doc["nu"]), eta=np.array(doc["eta"]),
        residual_left=doc["residual_left"], residual_right=doc["residual_right"],
        iterations=doc["iterations"], method=doc["method"],
    )


def stage_validate(ctx: RunContext) -> dict:
    cfg = ctx.stage_cfg("validate")
    radius = cfg.get("radius") or (ctx.stage_cfg("kernel") or {}).get("radius")
    report = validate_model(
        ctx.spec, n_samples=int(cfg.get("n_samples", 2000)),
        seed=ctx.seed(cfg) if ("seed" in cfg or "seed" in ctx.config) else 0,
        radius=radius,
    )
    doc = {
        "ok": report.ok,
        "violations": [{"check": v.check, "witness": str(v.witness), "detail": v.detail}
                       for v in report.violations],
        "alpha": None if report.alpha is None else list(report.alpha),
        "beta": None if report.beta is None else list(report.beta),
    }
    art.write_artifact(ctx.artifact("validate"), doc)
    return doc


def stage_spectral(ctx: RunContext) -> dict:
    cfg = ctx.stage_cfg("spectral")
    s = power_iterate(ctx.spec, tol=float(cfg.get("tol", 1e-12)),
                      max_iter=int(cfg.get("max_iter", 10000)))
    prim = check_primitivity(ctx.spec, max_m=int(cfg.get("max_m", 50)))
    s.n0 = prim.n0
    doc = {
        "lambda_star": s.lambda_star,
        "z_star": s.z_star,
        "n0": s.n0,
        "residual": s.residual,
        "iterations": s.iterations,
    }
    art.write_artifact(ctx.artifact("spectral"), doc)
    if not prim.ok:
        ctx.log(f"primitivity probe failed: {prim.failures}")
    return doc


def stage_kernel(ctx: RunContext) -> dict:
    cfg = ctx.stage_cfg("kernel")
    radius = int(cfg.get("radius", 6))
    mode = cfg.get("mode", "exact")
    if mode == "exact":
        K = build_kernel_exact(ctx.spec, radius, cap=float(cfg.get("cap", 1e18)))
    elif mode == "mc":
        K = build_kernel_mc(ctx.spec, radius, samples=int(cfg.get("samples", 100_000)),
                            seed=ctx.seed(cfg))
    else:
        raise DomainError(f"unknown kernel mode {mode!r}")
    art.write_kernel(K, ctx.outdir)
    return art.read_artifact(ctx.artifact("kernel"))


def stage_qsd(ctx: RunContext) -> dict:
    cfg = ctx.stage_cfg("qsd")
    ctx.require("kernel", "qsd")
    K = art.read_kernel(ctx.outdir)
    est = solve_qsd(K, tol=float(cfg.get("tol", 1e-12)),
                    max_iter=int(cfg.get("max_iter", 20000)),
                    method=cfg.get("method", "auto"),
                    j_window=tuple(cfg.get("j_window", (8, 80))))
    doc = {
        "theta": est.theta,
        "nu": est.nu,
        "eta": est.eta,
        "residual_left": est.residual_left,
        "residual_right": est.residual_right,
        "iterations": est.iterations,
        "method": est.method,
        "classes": [{"states": [list(z) for z in c.states], "theta": c.theta}
                    for c in est.classes.classes],
        "theta_bar": est.classes.theta_bar,
        "theta_gap": est.classes.theta_gap,
        "j_estimates": [
            {"state": list(j.state), "j": j.j, "slope": j.slope,
             "rms_residual": j.rms_residual}
            for j in est.j_estimates
        ],
    }
    art.write_artifact(ctx.artifact("qsd"), doc)
    return doc


def stage_qsd_family(ctx: RunContext) -> dict:
    cfg = ctx.stage_cfg("qsd-family")
    ctx.require("kernel", "qsd-family")
    K = art.read_kernel(ctx.outdir)
    qdoc = art.read_artifact(ctx.require("qsd", "qsd-family"))
    theta = float(qdoc["theta"])
    grid_cfg = cfg.get("lambda_grid", "auto")
    grid = (default_lambda_grid(theta) if grid_cfg in (None, "auto")
            else [float(x) for x in grid_cfg])
    anchors_cfg = cfg.get("anchors", "auto")
    if anchors_cfg in (None, "auto"):
        z_star = None
        spath = ctx.artifact("spectral")
        if spath.exists():
            z_star = np.array(art.read_artifact(spath)["z_star"])
        anchors = default_anchor_ladder(K, z_star)
    else:
        anchors = [tuple(int(c) for c in a) for a in anchors_cfg]
    report = build_family(K, grid, anchors, tail_tol=float(cfg.get("tail_tol", 1e-12)),
                          theta=theta)
    ups = estimate_upsilon0(K)
    doc = {
        "upsilon0": ups.upsilon0,
        "upsilon0_regression_rate": ups.regression_rate,
        "upsilon0_gap": ups.gap,
        "lambda_grid": grid,
        "anchors": [list(a) for a in anchors],
        "defect_monotone": {art.format_float(lam): mono
                            for lam, mono in report.defect_monotone.items()},
        "entries": [
            {"lambda": e.lam, "anchor": list(e.anchor), "S": e.normalizer,
             "defect": e.one_step_defect, "identity_residual": e.identity_residual,
             "terms": e.terms,
             "mu_sparse": [[i, float(v)] for i, v in enumerate(e.mu) if v > 0]}
            for e in report.entries
        ],
    }
    art.write_artifact(ctx.artifact("qsd-family"), doc)
    return doc


def stage_lyapunov(ctx: RunContext) -> dict:
    cfg = ctx.stage_cfg("lyapunov")
    s = _load_spectral(ctx)
    qdoc = art.read_artifact(ctx.require("qsd", "lyapunov"))
    theta0_hat = float(qdoc["theta"])
    a = float(cfg.get("a", 2.5))
    radius = int(cfg.get("radius", 8))
    mode = cfg.get("mode", "exact")
    rep = verify_drift(ctx.spec, s, a=a, radius=radius, theta0_hat=theta0_hat,
                       mode=mode, budget=int(cfg.get("budget", 100_000)),
                       seed=ctx.seed(cfg) if mode == "mc" else 0,
                       cap=float(cfg.get("cap", 1e18)))
    moment = check_moment_assumption(ctx.spec, s, theta0_hat, r=float(cfg.get("r", a + 1)))
    doc = {
        "a": rep.a,
        "theta_a": rep.theta_a,
        "C_a": rep.C_a,
        "checked_radius": rep.checked_radius,
        "mode": rep.mode,
        "feasible": rep.feasible,
        "theta0_hat": rep.theta0_hat,
        "lambda_star_pow_a": rep.lambda_star_pow_a,
        "violations": [[list(z), lhs, rhs] for z, lhs, rhs in rep.violations],
        "undetermined": [[list(z), lhs, rhs] for z, lhs, rhs in rep.undetermined],
        "ratios": [{"k": r.k, "state": list(r.state), "ratio": r.ratio}
                   for r in rep.ratios],
        "moment_check": {
            "r": moment.r, "ok": moment.ok, "margin": moment.margin,
            "min_exponent": moment.min_exponent, "subcritical": moment.subcritical,
            "reason": moment.reason,
        },
    }
    art.write_artifact(ctx.artifact("lyapunov"), doc)
    return doc


def stage_verify_e(ctx: RunContext) -> dict:
    cfg = ctx.stage_cfg("verify-e")
    ctx.require("kernel", "verify-e")
    K = art.read_kernel(ctx.outdir)
    q = _load_qsd(ctx, K)
    s = _load_spectral(ctx)
    rep = verify_convergence_criteria(
        K, q, spec=ctx.spec, s=s, a=float(cfg.get("a", 2.5)),
        small_set_policy=cfg.get("small_set", "auto"),
        window=int(cfg.get("window", 200)),
    )
    doc = {
        "verdicts": rep.verdicts,
        "small_set": [list(z) for z in rep.small_set],
        "small_radius": rep.small_radius,
        "theta0_hat": rep.theta0_hat,
        "theta_a": rep.theta_a,
        "C_a": rep.C_a,
        "n1": rep.n1,
        "c1": rep.c1,
        "theta1": rep.theta1,
        "c2": rep.c2,
        "c3": rep.c3,
        "c3_stabilized": rep.c3_stabilized,
        "theta2": rep.theta2,
        "phi2_steps": rep.phi2_steps,
        "phi2_identity_residual": rep.phi2_identity_residual,
        "phi2_inf_bound": rep.phi2_inf_bound,
        "phi1": rep.phi1,
        "phi2": rep.phi2 if rep.phi2 is not None else None,
        "aperiodicity": {str(list(z)): ok for z, ok in rep.aperiodicity.items()},
        "periods": {str(list(z)): per for z, per in rep.periods.items()},
        "notes": rep.notes,
    }
    art.write_artifact(ctx.artifact("verify-e"), doc)
    return doc


def stage_simulate(ctx: RunContext) -> dict:
    cfg = ctx.stage_cfg("simulate")
    z0 = tuple(int(c) for c in cfg.get("z0", (1,) * ctx.spec.p))
    horizon = int(cfg.get("horizon", 30))
    n_traj = int(cfg.get("n_traj", 100_000))
    batch = simulate_batch(ctx.spec, z0, horizon=horizon, n_traj=n_traj,
                           seed=ctx.seed(cfg),
                           population_cap=int(cfg.get("population_cap", 10_000_000)))
    curve = batch.survival_curve()
    lines = ["n\tsurvivors\tfraction"]
    for n in range(horizon + 1):
        surv = batch.survivors_at(n)
        lines.append(f"{n}\t{surv}\t{art.format_float(curve[n])}")
    (ctx.outdir / "simulate.txt").write_text("\n".join(lines) + "\n")
    doc = {
        "digest": batch.digest,
        "z0": list(z0),
        "horizon": horizon,
        "n_traj": n_traj,
        "seed": batch.seed,
        "n_capped": batch.n_capped,
        "survival": curve,
    }
    try:
        est = estimate_theta0(batch, min_survivors=int(cfg.get("min_survivors", 50)))
        doc["theta_hat"] = est.theta_hat
        doc["theta_ci"] = list(est.ci)
        doc["window"] = list(est.window)
    except StatisticsError as exc:
        doc["theta_hat"] = None
        doc["theta_error"] = str(exc)
    art.write_artifact(ctx.artifact("simulate"), doc)
    return doc


def stage_yaglom(ctx: RunContext) -> dict:
    cfg = ctx.stage_cfg("yaglom")
    ctx.require("kernel", "yaglom")
    K = art.read_kernel(ctx.outdir)
    q = _load_qsd(ctx, K)
    z0 = tuple(int(c) for c in cfg.get("z0", (1,) * ctx.spec.p))
    horizons = cfg.get("horizons") or list(range(1, 11))
    res = yaglom_convergence(
        ctx.spec, z0, horizons, qsd_as_law(K, q),
        n_traj=int(cfg.get("n_traj", 1_000_000)), seed=ctx.seed(cfg),
        min_survivors=int(cfg.get("min_survivors", 200)),
    )
    lines = ["n\tsurvivors\ttv\tnoise_floor"]
    for r in res.rows:
        tv = "" if r.tv is None else art.format_float(r.tv)
        nf = "" if r.noise_floor is None else art.format_float(r.noise_floor)
        lines.append(f"{r.n}\t{r.survivors}\t{tv}\t{nf}")
    (ctx.outdir / "yaglom.txt").write_text("\n".join(lines) + "\n")
    doc = {
        "z0": list(z0),
        "horizons": [int(n) for n in horizons],
        "rows": [{"n": r.n, "survivors": r.survivors, "tv": r.tv,
                  "noise_floor": r.noise_floor} for r in res.rows],
        "gamma_hat": res.gamma_hat,
        "envelope_C": res.envelope_C,
        "fit_window": res.fit_window,
        "eventually_decreasing": res.eventually_decreasing,
        "notes": res.notes,
    }
    art.write_artifact(ctx.artifact("yaglom"), doc)
    return doc


STAGE_RUNNERS = {
    "validate": stage_validate,
    "spectral": stage_spectral,
    "kernel": stage_kernel,
    "qsd": stage_qsd,
    "qsd-family": stage_qsd_family,
    "lyapunov": stage_lyapunov,
    "verify-e": stage_verify_e,
    "simulate": stage_simulate,
    "yaglom": stage_yaglom,
}


# ---------------------------------------------------------------------------
# Summary: recomputed from the artifact files
# ---------------------------------------------------------------------------

def build_summary(ctx: RunContext, tol: float = 1e-10) -> dict:
    checks: dict[str, dict] = {}

    def add(name: str, ok: bool, detail: dict, hard: bool = True) -> None:
        checks[name] = {"pass": bool(ok), "hard": hard, **detail}

    def maybe(stage: str):
        path = ctx.artifact(stage)
        return art.read_artifact(path) if path.exists() else None

    vdoc = maybe("validate")
    if vdoc is not None:
        add("model_valid", vdoc["ok"], {"violations": len(vdoc["violations"])})
    sdoc = maybe("spectral")
    qdoc = maybe("qsd")
    fdoc = maybe("qsd-family")
    if sdoc and qdoc and fdoc:
        theta0 = qdoc["theta"]
        ups = fdoc["upsilon0"]
        lam = sdoc["lambda_star"]
        add("ordering_theta0_le_upsilon0_le_lambda_star",
            theta0 <= ups + tol and ups <= lam + tol,
            {"theta0": theta0, "upsilon0": ups, "lambda_star": lam})
    if qdoc:
        add("qsd_residuals", qdoc["residual_left"] <= tol and qdoc["residual_right"] <= tol,
            {"residual_left": qdoc["residual_left"],
             "residual_right": qdoc["residual_right"]})
        add("theta_bar_matches_theta", qdoc["theta_gap"] <= tol,
            {"theta_gap": qdoc["theta_gap"]})
    if fdoc:
        worst = max((e["identity_residual"] for e in fdoc["entries"]), default=0.0)
        add("family_defect_identity", worst <= tol, {"max_identity_residual": worst})
        add("family_defect_monotone", all(fdoc["defect_monotone"].values()),
            {"per_lambda": fdoc["defect_monotone"]}, hard=False)
    ldoc = maybe("lyapunov")
    if ldoc:
        add("drift_violation_free", not ldoc["violations"],
            {"n_violations": len(ldoc["violations"]), "feasible": ldoc["feasible"],
             "theta_a": ldoc["theta_a"], "C_a": ldoc["C_a"]})
    edoc = maybe("verify-e")
    if edoc:
        add("convergence_criteria", all(edoc["verdicts"].values()),
            {"verdicts": edoc["verdicts"]})
    mdoc = maybe("simulate")
    if mdoc and qdoc and mdoc.get("theta_hat") is not None:
        lo, hi = mdoc["theta_ci"]
        add("mc_theta_vs_kernel", lo - 0.05 <= qdoc["theta"] <= hi + 0.05,
            {"theta_hat": mdoc["theta_hat"], "ci": [lo, hi], "kernel_theta": qdoc["theta"]},
            hard=False)
    ydoc = maybe("yaglom")
    if ydoc:
        add("yaglom_tv", bool(ydoc["eventually_decreasing"]),
            {"gamma_hat": ydoc["gamma_hat"], "fit_window": ydoc["fit_window"]},
            hard=False)

    hard_failures = [name for name, c in checks.items() if c["hard"] and not c["pass"]]
    summary = {
        "model_digest": art.model_digest(ctx.spec),
        "ok": not hard_failures,
        "hard_failures": hard_failures,
        "checks": checks,
    }
    art.write_artifact(ctx.outdir / "summary.json", summary)
    return summary


def run_pipeline(ctx: RunContext) -> int:
    stages = ctx.config.get("stages") or STAGE_ORDER
    unknown = [s for s in stages if s not in STAGE_ORDER]
    if unknown:
        raise DomainError(f"unknown stages {unknown}; valid: {STAGE_ORDER}")
    ordered = [s for s in STAGE_ORDER if s in stages]
    seen: set[str] = set()
    for stage in ordered:
        missing = [d for d in STAGE_DEPS[stage] if d not in seen]
        if missing:
            raise DependencyError(
                f"stage '{stage}' requires {missing} earlier in the stage list")
        seen.add(stage)
    for stage in ordered:
        ctx.log(f"stage {stage}: start")
        STAGE_RUNNERS[stage](ctx)
        ctx.log(f"stage {stage}: done")
    summary = build_summary(ctx)
    status = 0 if summary["ok"] else 1
    print(f"summary: {'PASS' if status == 0 else 'FAIL'} "
          f"({len(summary['checks'])} checks, "
          f"hard failures: {summary['hard_failures'] or 'none'})")
    print(f"artifacts in {ctx.outdir}")
    return status


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bgwqsd",
        description="Quasi-stationary analysis of two-sex branching models.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, **stage_flags):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="experiment config (YAML)")
        for flag, kw in stage_flags.items():
            sp.add_argument(flag, **kw)
        return sp

    add("validate")
    add("spectral")
    add("kernel",
        **{"--radius": dict(type=int), "--mode": dict(choices=["exact", "mc"]),
           "--samples": dict(type=int), "--seed": dict(type=int)})
    add("qsd")
    add("qsd-family",
        **{"--lambda-grid": dict(type=str, dest="lambda_grid",
                                 help="comma-separated rates or 'auto'"),
           "--anchors": dict(type=str, help="'auto' or semicolon-separated states"),
           "--tail-tol": dict(type=float, dest="tail_tol")})
    add("lyapunov",
        **{"--a": dict(type=float), "--radius": dict(type=int),
           "--mode": dict(choices=["exact", "mc"])})
    add("verify-e",
        **{"--small-set": dict(type=str, dest="small_set",
                               help="'auto' or 'radius=r1'"),
           "--window": dict(type=int)})
    add("simulate")
    add("yaglom")
    add("pipeline")
    return parser


def _overrides_from_args(command: str, args: argparse.Namespace) -> dict:
    keys = {
        "kernel": ["radius", "mode", "samples", "seed"],
        "qsd-family": ["lambda_grid", "anchors", "tail_tol"],
        "lyapunov": ["a", "radius", "mode"],
        "verify-e": ["small_set", "window"],
    }.get(command, [])
    kv = {}
    for k in keys:
        v = getattr(args, k, None)
        if v is None:
            continue
        if command == "qsd-family" and k == "lambda_grid" and v != "auto":
            v = [float(x) for x in v.split(",")]
        if command == "qsd-family" and k == "anchors" and v != "auto":
            v = [[int(c) for c in part.split(",")] for part in v.split(";")]
        kv[k] = v
    return {command: kv} if kv else {}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        ctx = load_context(args.config, _overrides_from_args(args.command, args))
        if args.command == "pipeline":
            return run_pipeline(ctx)
        ctx.log(f"stage {args.command}: start (single-stage run)")
        doc = STAGE_RUNNERS[args.command](ctx)
        ctx.log(f"stage {args.command}: done")
        print(f"wrote {ctx.artifact(args.command)}")
        if isinstance(doc, dict) and "ok" in doc and not doc["ok"]:
            return 1
        return 0
    except (DependencyError, DomainError, ModelValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
