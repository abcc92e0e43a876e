"""Experiment orchestration: configuration, sweeps, persistence and verdicts.

Everything here composes the numerical modules.  Reports are plain dicts
written as JSON with sorted keys and no wall-clock data, so identical
configurations give byte-identical ``results.json`` files.  Progress and
timings go to ``run.log`` next to the report.
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .eigen import check_band_gap, weighted_spectrum
from .errors import (GelfandLabError, LambdaOutOfRange, NumericalFailure, WindowExceedsGrid)
from .green import DomainSpec, green
from .hamiltonian import Configuration, find_critical_point, hamiltonian_hess
from .pde import (Discretization, SolutionBranch, bubble_ansatz, comoving_solve, continue_branch,
                  newton_solve, regrade, residual_norm, total_mass)
from .peaks import (bubble_constants, extract_c, far_field_errors, far_field_points, local_mass,
                    locate_peaks, rescaled_profile_error)
from .spectral import (assemble_h, circulant_report, eigen_h, group_equal, predict_mu,
                       predict_mu_second_band, predict_peak_height, prediction_record)

log = logging.getLogger(__name__)


class ConfigError(GelfandLabError, ValueError):
    """Malformed or inconsistent experiment configuration."""


DEFAULTS = {
    "domain": {"kind": "disk", "radius": "1.0", "inner_radius": "0.5", "series_truncation": "400"},
    "experiment": {"m": "1", "lambda_list": "1e-3,1e-4,1e-5", "initial_r0": "", "eigen_count": "",
                   "ball_radius": "", "seed": "0", "profile_window": "10",
                   "slope_lambda_list": "1e-2,3e-3,1e-3"},
    "grid": {"radial_n": "4096", "core_factor": "1.0", "continuation_n": "4096",
             "continuation_core": "0.05", "sector_n": "192", "sector_core_factor": "1.0",
             "sector_start_lambda": "1e-2", "sector_step_ratio": "2.5"},
    "tolerances": {"newton": "1e-10", "eigen": "1e-12", "degeneracy": "1e-8", "alignment": "0.95",
                   "slope_rel": "0.05", "selftest_bubble_rtol": "1e-6", "selftest_green_symmetry": "1e-12",
                   "selftest_perron_min": "1e-6", "selftest_support": "1e-9",
                   "selftest_disk_oracle": "1e-6"},
    "output": {"dir": "results", "jobs": "1"},
}

ANNULUS_LAMBDAS = "1e-3,3e-4"


@dataclass
class ExperimentConfig:
    domain: DomainSpec
    m: int
    lambda_list: list
    grid: dict
    tolerances: dict
    output_dir: str
    jobs: int = 1
    experiment: dict = field(default_factory=dict)

    def fold_estimate(self) -> float:
        """Upper bound on admissible lambda: the disk fold ``2 / rho^2`` and the predictor range."""
        if self.domain.kind == "disk":
            return min(1.0, 2.0 / self.domain.disk_radius ** 2)
        return 1.0

    def to_dict(self) -> dict:
        return {"domain": self.domain.to_dict(), "m": self.m, "lambda_list": list(self.lambda_list),
                "grid": dict(self.grid), "tolerances": dict(self.tolerances),
                "experiment": dict(self.experiment), "jobs": self.jobs}


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse number list {text!r}") from exc


def _number(section: str, key: str, text: str, kind=float):
    try:
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {text!r}") from exc


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read an INI file (optional), apply CLI overrides and validate.

    ``overrides`` uses ``"section.key"`` names.  Unknown sections or keys
    are rejected so that typos do not silently fall back to defaults.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_dict(DEFAULTS)
    user_lambdas = False
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path!r} not found")
        extra = configparser.ConfigParser(interpolation=None)
        try:
            extra.read(path)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        for sec in extra.sections():
            if sec not in DEFAULTS:
                raise ConfigError(f"unknown section [{sec}]")
            for key, val in extra[sec].items():
                if key not in DEFAULTS[sec]:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                parser[sec][key] = val
                user_lambdas |= (sec, key) == ("experiment", "lambda_list")
    for name, val in (overrides or {}).items():
        if val is None:
            continue
        sec, key = name.split(".", 1)
        parser[sec][key] = str(val)
        user_lambdas |= name == "experiment.lambda_list"
    if parser["domain"]["kind"] == "annulus" and not user_lambdas:
        parser["experiment"]["lambda_list"] = ANNULUS_LAMBDAS

    d = parser["domain"]
    kind = d["kind"].strip()
    try:
        if kind == "disk":
            domain = DomainSpec.disk(_number("domain", "radius", d["radius"]))
        elif kind == "annulus":
            domain = DomainSpec.annulus(_number("domain", "inner_radius", d["inner_radius"]),
                                        _number("domain", "series_truncation", d["series_truncation"], int))
        else:
            raise ConfigError(f"domain kind must be disk or annulus, got {kind!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc

    ex = parser["experiment"]
    m = _number("experiment", "m", ex["m"], int)
    lams = _floats(ex["lambda_list"])
    grid = {k: _number("grid", k, v, int if k.endswith("_n") else float) for k, v in parser["grid"].items()}
    tols = {k: _number("tolerances", k, v) for k, v in parser["tolerances"].items()}
    extra = {"initial_r0": ex["initial_r0"].strip(), "eigen_count": ex["eigen_count"].strip(),
             "ball_radius": ex["ball_radius"].strip(), "seed": _number("experiment", "seed", ex["seed"], int),
             "profile_window": _number("experiment", "profile_window", ex["profile_window"]),
             "slope_lambda_list": _floats(ex["slope_lambda_list"])}
    for key in ("initial_r0", "ball_radius"):
        extra[key] = None if not extra[key] else _number("experiment", key, extra[key])
    extra["eigen_count"] = 3 * m + 1 if not extra["eigen_count"] else _number(
        "experiment", "eigen_count", extra["eigen_count"], int)
    cfg = ExperimentConfig(domain, m, lams, grid, tols, parser["output"]["dir"],
                           _number("output", "jobs", parser["output"]["jobs"], int), extra)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.m < 1:
        raise ConfigError("m must be at least 1")
    if cfg.domain.kind == "disk" and cfg.m != 1:
        raise ConfigError("the disk supports only single-peak (m = 1) experiments")
    if not cfg.lambda_list:
        raise ConfigError("lambda_list is empty")
    bound = cfg.fold_estimate()
    for lam in cfg.lambda_list:
        if not 0.0 < lam < bound:
            raise LambdaOutOfRange(f"lambda={lam:g} outside (0, {bound:g})")
    if any(b >= a for a, b in zip(cfg.lambda_list, cfg.lambda_list[1:])):
        raise ConfigError("lambda_list must be strictly decreasing")
    slopes = cfg.experiment.get("slope_lambda_list", [])
    if any(not 0.0 < lam < bound for lam in slopes):
        raise LambdaOutOfRange(f"slope_lambda_list must lie in (0, {bound:g})")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    if cfg.experiment["eigen_count"] < 1:
        raise ConfigError("eigen_count must be >= 1")


# ---------------------------------------------------------------------------
# persistence helpers

def _clean(obj):
    """Convert numpy containers and scalars for JSON."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(_clean(payload), fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def write_csv(path: Path, header: list, rows: list) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def attach_log(out: Path) -> logging.Handler:
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger("gelfand_lab").addHandler(handler)
    logging.getLogger("gelfand_lab").setLevel(logging.INFO)
    return handler


# ---------------------------------------------------------------------------
# predictions

@dataclass
class Prediction:
    critical: object
    h: object
    spectral: object
    hess: np.ndarray
    circulant: Optional[dict]


def critical_configuration(cfg: ExperimentConfig):
    if cfg.domain.kind == "disk":
        return find_critical_point(cfg.domain, Configuration(np.zeros((1, 2))))
    a = cfg.domain.inner_radius
    r0 = cfg.experiment["initial_r0"] or 0.5 * (1.0 + a)
    return find_critical_point(cfg.domain, Configuration.polygonal(cfg.m, r0), ansatz="polygonal")


def build_prediction(cfg: ExperimentConfig) -> Prediction:
    crit = critical_configuration(cfg)
    h = assemble_h(cfg.domain, crit.config)
    pred = eigen_h(h)
    hess = hamiltonian_hess(cfg.domain, crit.config)
    from .spectral import second_band_eta
    second_band_eta(pred, hess)
    circ = None
    if cfg.domain.kind == "annulus" and cfg.m >= 2:
        circ = circulant_report(h).to_dict()
    return Prediction(crit, h, pred, hess, circ)


def _mu_predicted(p: Prediction, k: int, lam: float) -> Optional[float]:
    m = p.spectral.m
    if k <= m:
        return predict_mu(p.spectral, k, lam)
    if k <= 3 * m:
        return predict_mu_second_band(p.spectral, p.hess, k, lam)
    return None


def prediction_payload(cfg: ExperimentConfig, p: Prediction) -> dict:
    pred = p.spectral
    m = pred.m
    mult = [len(g) for g in group_equal(pred.Lambda)]
    per_lambda = []
    for lam in cfg.lambda_list:
        recs = [prediction_record(pred, lam, k, mult) for k in range(1, m + 1)]
        second = [{"k": k, "mu_pred": predict_mu_second_band(pred, p.hess, k, lam)} for k in range(m + 1, 3 * m + 1)]
        heights = [predict_peak_height(pred, j, lam) for j in range(1, m + 1)]
        per_lambda.append({"lambda": lam, "first_band": recs, "second_band": second,
                           "peak_height": heights, "delta": (pred.d * np.sqrt(lam)).tolist()})
    return {"critical_point": p.critical.to_dict(), "candidate": True,
            "h": p.h.entries.tolist(), "Lambda": pred.Lambda.tolist(), "C": pred.C.tolist(),
            "d": pred.d.tolist(), "eta": pred.eta.tolist(), "degenerate_groups": pred.degenerate,
            "multiplicities": mult, "circulant": p.circulant, "per_lambda": per_lambda}


def cmd_predict(cfg: ExperimentConfig) -> tuple[dict, int]:
    out = Path(cfg.output_dir)
    p = build_prediction(cfg)
    payload = prediction_payload(cfg, p)
    rows = []
    for entry in payload["per_lambda"]:
        for rec in entry["first_band"]:
            rows.append((entry["lambda"], rec["k"], rec["Lambda_k"], rec["mu_pred"], "first"))
        for rec in entry["second_band"]:
            rows.append((entry["lambda"], rec["k"], "", rec["mu_pred"], "second"))
    write_csv(out / "tables" / "predictions.csv", ["lambda", "k", "Lambda_k", "mu_pred", "band"], rows)
    mrows = []
    groups = group_equal(p.spectral.Lambda)
    for g in groups:
        for k in g:
            mrows.append((k + 1, p.spectral.Lambda[k], len(g), " ".join(f"{c:.12g}" for c in p.spectral.C[:, k])))
    write_csv(out / "tables" / "multiplicities.csv", ["k", "Lambda_k", "multiplicity", "eigenvector"], mrows)
    report = {"command": "predict", "config": cfg.to_dict(), "prediction": payload, "status": "ok"}
    write_json(out / "results.json", report)
    return report, 0


# ---------------------------------------------------------------------------
# solving

def _tag(cfg: ExperimentConfig) -> str:
    g = cfg.grid
    if cfg.domain.kind == "disk":
        return f"disk_r{cfg.domain.disk_radius:g}_n{g['continuation_n']}_c{g['continuation_core']:g}"
    return f"annulus_a{cfg.domain.inner_radius:g}_m{cfg.m}_n{g['sector_n']}_f{g['sector_core_factor']:g}"


@dataclass
class SolvedState:
    lam: float
    disc: Discretization
    u: np.ndarray
    center: float = 0.0
    # disk states live on the continuation grid and are regraded during analysis
    fine: Optional[dict] = None


def _disk_states(cfg: ExperimentConfig, out: Path) -> tuple[list, dict]:
    g = cfg.grid
    rho = cfg.domain.disk_radius
    coarse = Discretization.radial(cfg.domain, g["continuation_n"], core=g["continuation_core"] * rho)
    path = out / f"branch_{_tag(cfg)}.json"
    branch = None
    if path.exists():
        branch = SolutionBranch.load(path)
        if branch.disc != coarse:
            log.warning("checkpoint %s belongs to another grid; starting afresh", path)
            branch = None
        else:
            log.info("resuming branch from %s (%d states)", path, len(branch.states))
    wanted = sorted(set(cfg.lambda_list) | set(cfg.experiment.get("slope_lambda_list", [])), reverse=True)
    branch = continue_branch(coarse, (0.0, np.zeros(coarse.size)), lambda_min=wanted[-1] * (1 - 1e-6),
                             record_lambdas=wanted, ds=0.05, tol=cfg.tolerances["newton"],
                             branch=branch, checkpoint=lambda b: b.save(path))
    states = []
    for lam in wanted:
        st = branch.recorded[f"lambda={lam:.12g}"]
        delta = 1.0 / np.sqrt(lam * np.exp(st.u_max))
        fine = {"n_r": g["radial_n"], "core": g["core_factor"] * delta}
        states.append(SolvedState(lam, coarse, st.u, 0.0, fine))
    info = {"fold_lambda": None if branch.fold is None else branch.fold[0], "branch_states": len(branch.states),
            "checkpoint": path.name}
    write_csv(out / "tables" / "branch.csv", ["lambda", "u_max", "mass"], branch.csv_rows())
    return states, info


def _lambda_path(start: float, targets: list, ratio: float) -> list:
    """Geometric stepping from ``start`` through each target with ratio at most ``ratio``."""
    path = [start]
    for t in targets:
        cur = path[-1]
        if t >= cur:
            continue
        n = int(np.ceil(np.log(cur / t) / np.log(ratio) - 1e-12))
        path.extend(cur * (t / cur) ** (i / n) for i in range(1, n))
        path.append(t)
    return path


def _annulus_states(cfg: ExperimentConfig, p: Prediction, out: Path) -> tuple[list, dict]:
    g = cfg.grid
    dom, m = cfg.domain, cfg.m
    pred = p.spectral
    points = p.critical.config.points
    r0 = float(p.critical.config.r0)
    start = max(g["sector_start_lambda"], cfg.lambda_list[0])
    lams = _lambda_path(start, cfg.lambda_list, g["sector_step_ratio"])
    path = out / f"branch_{_tag(cfg)}.json"
    done = []
    if path.exists():
        with open(path) as fh:
            data = json.load(fh)
        if data.get("path") == lams:
            done = data["states"]
            log.info("resuming annulus sweep from %s (%d states)", path, len(done))
    tol = cfg.tolerances["newton"]
    prev = None
    if done:
        last = done[-1]
        prev = (Discretization.from_dict(last["disc"]), np.array(last["u"]), last["lambda"], last["center"])
    for lam in lams[len(done):]:
        delta = float(pred.d[0] * np.sqrt(lam))

        def make(c, delta=delta):
            return Discretization.sector(dom, m, c, n_r=g["sector_n"], n_theta=g["sector_n"],
                                         core=g["sector_core_factor"] * delta, centered=True)
        if prev is None:
            def guess(pts, lam=lam):
                return bubble_ansatz(dom, points, lam, pred.d, at=pts)
            c0 = r0
        else:
            pd, pu, plam, pc = prev
            f = pd.interpolator(pu)
            ring = Configuration.polygonal(m, pc).points

            def guess(pts, f=f, plam=plam, lam=lam, ring=ring):
                return (f(pts) + bubble_ansatz(dom, ring, lam, pred.d, at=pts)
                        - bubble_ansatz(dom, ring, plam, pred.d, at=pts))
            c0 = pc
        res = comoving_solve(make, lam, guess, c0, 0.05 * delta, tol=tol)
        log.info("annulus lambda=%.6g center=%.10f residual=%.2e", lam, res.center, res.residual)
        prev = (res.disc, res.u, lam, res.center)
        done.append({"lambda": lam, "center": res.center, "disc": res.disc.to_dict(), "u": res.u.tolist()})
        write_json(path, {"path": lams, "states": done})
    states = []
    for rec in done:
        if rec["lambda"] in cfg.lambda_list:
            states.append(SolvedState(rec["lambda"], Discretization.from_dict(rec["disc"]),
                                      np.array(rec["u"]), rec["center"]))
    write_csv(out / "tables" / "branch.csv", ["lambda", "center", "u_max"],
              [(r["lambda"], r["center"], max(r["u"])) for r in done])
    return states, {"path": lams, "checkpoint": path.name}


def solve_states(cfg: ExperimentConfig, p: Prediction, out: Path) -> tuple[list, dict]:
    if cfg.domain.kind == "disk":
        return _disk_states(cfg, out)
    return _annulus_states(cfg, p, out)


def _finalise(state: SolvedState, tol: float) -> tuple[Discretization, np.ndarray]:
    if state.fine is None:
        return state.disc, state.u
    fine = Discretization.radial(state.disc.domain, state.fine["n_r"], core=state.fine["core"])
    u, _ = regrade(state.u, state.lam, state.disc, fine, keep="lambda", tol=tol)
    return fine, u


def _state_summary(disc, u, lam, center) -> dict:
    return {"lambda": lam, "u_max": float(u.max()), "mass": total_mass(disc, u, lam),
            "residual": residual_norm(disc, u, lam), "center": center, "grid": disc.to_dict()}


def _solve_job(job: dict) -> dict:
    state, tol = job["state"], job["tol"]
    disc, u = _finalise(state, tol)
    return _state_summary(disc, u, state.lam, state.center)


def _map(fn: Callable, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def cmd_solve(cfg: ExperimentConfig) -> tuple[dict, int]:
    out = Path(cfg.output_dir)
    p = build_prediction(cfg)
    report = {"command": "solve", "config": cfg.to_dict(), "status": "running"}
    try:
        states, info = solve_states(cfg, p, out)
        summaries = _map(_solve_job, [{"state": s, "tol": cfg.tolerances["newton"]} for s in states], cfg.jobs)
    except NumericalFailure as exc:
        report.update(status="numerical_failure", error=f"{type(exc).__name__}: {exc}")
        write_json(out / "results.json", report)
        return report, 3
    report.update(status="ok", solve=info, states=summaries)
    write_csv(out / "tables" / "states.csv", ["lambda", "u_max", "mass", "residual", "center"],
              [(s["lambda"], s["u_max"], s["mass"], s["residual"], s["center"]) for s in summaries])
    write_json(out / "results.json", report)
    return report, 0


# ---------------------------------------------------------------------------
# spectrum and analysis

def _analyse_job(job: dict) -> dict:
    """Regrade (disk), eigensolve and extract blow-up data for one state."""
    state: SolvedState = job["state"]
    m, count, tols = job["m"], job["count"], job["tolerances"]
    lam = state.lam
    disc, u = _finalise(state, tols["newton"])
    summary = _state_summary(disc, u, lam, state.center)
    pairs = weighted_spectrum(disc, u, lam, count, tol=tols["eigen"])
    rec = {"state": summary, "mu": [pp.mu for pp in pairs],
           "pairs": [pp.summary() for pp in pairs], "band": check_band_gap(pairs, m)}
    if not job["analyse"]:
        return rec
    peaks = locate_peaks(disc, u, m, lam, ball_radius=job["ball_radius"])
    local_mass(disc, u, lam, peaks)
    cs = [extract_c(pp, peaks) for pp in pairs]
    rec["peaks"] = peaks.to_dict()
    rec["c_raw"] = [c[0].tolist() for c in cs]
    rec["c_unit"] = [c[1].tolist() for c in cs]
    errors = {}
    first = pairs[0]
    c1 = cs[0][0]
    j = int(np.argmax(np.abs(c1))) + 1
    try:
        errors["profile_second"] = rescaled_profile_error(first, peaks, j, c1[j - 1], first.mu,
                                                          window=job["window"])
        errors["profile_first"] = rescaled_profile_error(first, peaks, j, c1[j - 1], first.mu,
                                                         window=job["window"], model="first")
    except WindowExceedsGrid as exc:
        errors["profile_note"] = str(exc)
    pts = far_field_points(disc, peaks, seed=job["seed"])
    if len(pts):
        errors.update({f"far_field_{k}": v for k, v in
                       far_field_errors(disc, u, peaks, pts, first, c1, first.mu).items()})
    rec["errors"] = errors
    return rec


def _spectra(cfg: ExperimentConfig, p: Prediction, out: Path, analyse: bool) -> tuple[list, list, dict]:
    """Per-lambda records for the main list, plus spectrum-only records for the slope list (disk)."""
    states, info = solve_states(cfg, p, out)
    main = set(cfg.lambda_list)
    jobs = [{"state": s, "m": cfg.m, "count": cfg.experiment["eigen_count"], "tolerances": cfg.tolerances,
             "analyse": analyse and s.lam in main, "ball_radius": cfg.experiment["ball_radius"],
             "window": cfg.experiment["profile_window"], "seed": cfg.experiment["seed"]}
            for s in states]
    recs = _map(_analyse_job, jobs, cfg.jobs)
    by_lam = {s.lam: r for s, r in zip(states, recs)}
    slope = [by_lam[lam] for lam in cfg.experiment.get("slope_lambda_list", [])
             if lam in by_lam and cfg.domain.kind == "disk"]
    return [by_lam[lam] for lam in cfg.lambda_list], slope, info


def comparison_rows(p: Prediction, recs: list) -> list:
    rows = []
    m = p.spectral.m
    for rec in recs:
        lam = rec["state"]["lambda"]
        L2 = np.log(lam) ** 2
        for k, mu in enumerate(rec["mu"][:3 * m], start=1):
            mp_ = _mu_predicted(p, k, lam)
            r = mu - mp_
            rows.append({"lambda": lam, "k": k, "mu_numeric": mu, "mu_predicted": mp_, "residual": r,
                         "residual_times_log2": r * L2})
    return rows


def cmd_spectrum(cfg: ExperimentConfig) -> tuple[dict, int]:
    out = Path(cfg.output_dir)
    p = build_prediction(cfg)
    report = {"command": "spectrum", "config": cfg.to_dict(), "status": "running"}
    try:
        recs, _, info = _spectra(cfg, p, out, analyse=False)
    except NumericalFailure as exc:
        report.update(status="numerical_failure", error=f"{type(exc).__name__}: {exc}")
        write_json(out / "results.json", report)
        return report, 3
    rows = comparison_rows(p, recs)
    report.update(status="ok", solve=info, spectra=recs, rows=rows)
    _write_rows(out, recs, rows)
    write_json(out / "results.json", report)
    return report, 0


def _write_rows(out: Path, recs: list, rows: list) -> None:
    write_csv(out / "tables" / "spectrum.csv", ["lambda", "k", "mu", "wave_number", "component", "degenerate"],
              [(r["state"]["lambda"], q["k"], q["mu"], q["wave_number"], q["component"], q["degenerate"])
               for r in recs for q in r["pairs"]])
    keys = ["lambda", "k", "mu_numeric", "mu_predicted", "residual", "residual_times_log2"]
    write_csv(out / "tables" / "comparison.csv", keys, [[r[k] for k in keys] for r in rows])


# ---------------------------------------------------------------------------
# verdicts

def trend_verdict(values: list) -> str:
    """PASS when strictly decreasing, FAIL on two consecutive non-improvements, WARN otherwise.

    A single upturn (for instance at the smallest, grid-limited lambda)
    never fails on its own.
    """
    vals = [float(v) for v in values]
    if len(vals) < 2:
        return "SKIP"
    bad = [b >= a for a, b in zip(vals, vals[1:])]
    if any(x and y for x, y in zip(bad, bad[1:])):
        return "FAIL"
    return "WARN" if any(bad) else "PASS"


def richardson_zero(xs: list, ys: list) -> float:
    """Value at ``x = 0`` of the interpolating polynomial through the samples."""
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    total = 0.0
    for i in range(len(xs)):
        w = 1.0
        for j in range(len(xs)):
            if j != i:
                w *= (0.0 - xs[j]) / (xs[i] - xs[j])
        total += w * ys[i]
    return float(total)


def _subspace_alignment(pred, k: int, c_unit) -> float:
    """Norm of the projection of ``c_unit`` onto the predicted eigenspace containing ``k``."""
    grp = next((g for g in group_equal(pred.Lambda) if k - 1 in g), [k - 1])
    basis = pred.C[:, grp]
    return float(np.linalg.norm(basis.T @ np.asarray(c_unit)))


def verdicts(cfg: ExperimentConfig, p: Prediction, recs: list, rows: list, slope_recs: list = ()) -> list:
    m = cfg.m
    tol = cfg.tolerances
    pred = p.spectral
    out = []

    def add(name, verdict, values=None, detail=""):
        out.append({"check": name, "verdict": verdict, "values": values, "detail": detail})

    lams = [r["state"]["lambda"] for r in recs]
    for k in range(1, m + 1):
        vals = [abs(r["residual_times_log2"]) for r in rows if r["k"] == k]
        add(f"first_band_k{k}_residual_times_log2", trend_verdict(vals), vals)

    for i, r in enumerate(recs):
        b = r["band"]
        ok = b["first_band_in_open_half"] and (b["gap_ok"] in (True, None))
        add(f"band_structure_lambda={lams[i]:g}", "PASS" if ok else "FAIL",
            [b["first_band"], b["above_one"]])

    if cfg.domain.kind == "disk" and len(slope_recs) >= 2:
        slams = [r["state"]["lambda"] for r in slope_recs]
        for k in range(m + 1, min(3 * m, len(slope_recs[0]["mu"])) + 1):
            slopes = [(r["mu"][k - 1] - 1.0) / r["state"]["lambda"] for r in slope_recs]
            target = -48.0 * np.pi * pred.eta[3 * m - k]
            est = richardson_zero(slams, slopes)
            rel = abs(est - target) / abs(target)
            add(f"second_band_k{k}_slope", "PASS" if rel <= tol["slope_rel"] else "FAIL",
                [slopes, est, target], f"relative error {rel:.3e}")
    elif cfg.domain.kind == "annulus":
        add("second_band_rows", "INFO", None, "sector-grid second band is grid-limited; rows reported only")

    if all("peaks" in r for r in recs):
        heights = [max(abs(h - predict_peak_height(pred, j + 1, r["state"]["lambda"]))
                       for j, h in enumerate(r["peaks"]["heights"])) for r in recs]
        add("peak_height_error", trend_verdict(heights), heights)
        mass = [max(abs(s / (8 * np.pi) - 1.0) for s in r["peaks"]["sigma"]) for r in recs]
        add("local_mass_error", trend_verdict(mass), mass)
        dratio = [max(abs(dl / (pred.d[j] * np.sqrt(r["state"]["lambda"])) - 1.0)
                      for j, dl in enumerate(r["peaks"]["delta"])) for r in recs]
        add("delta_ratio_error", trend_verdict(dratio), dratio)
        groups = group_equal(pred.Lambda)
        for k in range(1, m + 1):
            simple_pred = any(g == [k - 1] for g in groups)
            al = [_subspace_alignment(pred, k, r["c_unit"][k - 1]) for r in recs]
            if not simple_pred:
                add(f"c_alignment_k{k}", "INFO", al, "degenerate: projection onto predicted eigenspace")
                continue
            if min(al) < tol["alignment"]:
                v = "FAIL"
            else:
                v = "PASS" if all(b >= a - 1e-9 for a, b in zip(al, al[1:])) else "WARN"
            add(f"c_alignment_k{k}", v, al)
        prof = [r["errors"].get("profile_second") for r in recs]
        if all(x is not None for x in prof):
            add("profile_second_order", trend_verdict(prof), prof)
            first = recs[-1]["errors"]["profile_first"]
            add("profile_first_exceeds_second", "PASS" if first > prof[-1] else "FAIL", [first, prof[-1]])
    return out


def cmd_verify(cfg: ExperimentConfig) -> tuple[dict, int]:
    out = Path(cfg.output_dir)
    p = build_prediction(cfg)
    report = {"command": "verify", "config": cfg.to_dict(), "prediction": prediction_payload(cfg, p),
              "status": "running"}
    write_json(out / "results.json", report)
    try:
        recs, slope_recs, info = _spectra(cfg, p, out, analyse=True)
    except NumericalFailure as exc:
        report.update(status="numerical_failure", error=f"{type(exc).__name__}: {exc}")
        write_json(out / "results.json", report)
        return report, 3
    rows = comparison_rows(p, recs)
    ver = verdicts(cfg, p, recs, rows, slope_recs)
    failed = [v["check"] for v in ver if v["verdict"] == "FAIL"]
    report.update(status="fail" if failed else "pass", solve=info, states=recs, rows=rows, verdicts=ver,
                  slope_states=[{"lambda": r["state"]["lambda"], "mu": r["mu"]} for r in slope_recs],
                  summary={"failed": failed, "warned": [v["check"] for v in ver if v["verdict"] == "WARN"]})
    _write_rows(out, recs, rows)
    write_csv(out / "tables" / "verdicts.csv", ["check", "verdict"], [(v["check"], v["verdict"]) for v in ver])
    write_json(out / "results.json", report)
    return report, 1 if failed else 0


# ---------------------------------------------------------------------------
# self-test

def _random_disk_configs(rng: np.random.Generator, count: int):
    for _ in range(count):
        m = int(rng.integers(2, 9))
        while True:
            r = 0.9 * np.sqrt(rng.uniform(0, 1, m))
            t = rng.uniform(0, 2 * np.pi, m)
            pts = np.column_stack([r * np.cos(t), r * np.sin(t)])
            dist = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
            if np.min(dist[np.triu_indices(m, 1)]) > 0.05:
                yield Configuration(pts)
                break


def matrix_properties(rng: np.random.Generator, count: int = 200) -> dict:
    """Perron (one-signed ground vector) and two-support checks on random disk configurations."""
    domain = DomainSpec.disk()
    worst_min = np.inf
    worst_second = np.inf
    gl = logging.getLogger("gelfand_lab.spectral")
    level = gl.level
    gl.setLevel(logging.ERROR)
    try:
        for conf in _random_disk_configs(rng, count):
            pred = eigen_h(assemble_h(domain, conf))
            c1 = pred.C[:, 0]
            one_signed = np.all(c1 > 0) or np.all(c1 < 0)
            worst_min = min(worst_min, float(np.min(np.abs(c1))) if one_signed else -1.0)
            deg = {i for g in pred.degenerate for i in g}
            for k in range(pred.m):
                if k in deg:
                    continue
                mags = np.sort(np.abs(pred.C[:, k]))[::-1]
                worst_second = min(worst_second, float(mags[1]))
    finally:
        gl.setLevel(level)
    return {"perron_min_component": worst_min, "second_largest_component": worst_second}


def cmd_selftest(tolerances: Optional[dict] = None, out_dir: Optional[str] = None) -> tuple[dict, int]:
    tol = {k: float(v) for k, v in DEFAULTS["tolerances"].items()}
    tol.update(tolerances or {})
    checks = []

    def add(name, value, limit, ok):
        checks.append({"check": name, "value": value, "tolerance": limit, "verdict": "PASS" if ok else "FAIL"})

    bc = bubble_constants()
    for name, val, ref in (("bubble_mass", bc.mass, 8 * np.pi), ("bubble_moment", bc.moment, -16 * np.pi),
                           ("bubble_log_moment", bc.log_moment, -6 * np.log(2))):
        err = abs(val - ref) / abs(ref)
        add(name, err, tol["selftest_bubble_rtol"], err <= tol["selftest_bubble_rtol"])

    rng = np.random.default_rng(20240601)
    for dom in (DomainSpec.disk(), DomainSpec.annulus(0.5)):
        lo, hi = dom.radial_bounds()
        worst = 0.0
        for _ in range(50):
            r = rng.uniform(lo + 0.02, hi - 0.02, 2)
            t = rng.uniform(0, 2 * np.pi, 2)
            x = np.array([r[0] * np.cos(t[0]), r[0] * np.sin(t[0])])
            y = np.array([r[1] * np.cos(t[1]), r[1] * np.sin(t[1])])
            if np.hypot(*(x - y)) < 1e-3:
                continue
            a, b = green(dom, x, y).value, green(dom, y, x).value
            worst = max(worst, abs(a - b) / max(1.0, abs(a)))
        add(f"green_symmetry_{dom.kind}", worst, tol["selftest_green_symmetry"],
            worst <= tol["selftest_green_symmetry"])

    props = matrix_properties(rng, 200)
    add("perron_one_signed", props["perron_min_component"], tol["selftest_perron_min"],
        props["perron_min_component"] > tol["selftest_perron_min"])
    add("two_point_support", props["second_largest_component"], tol["selftest_support"],
        props["second_largest_component"] > tol["selftest_support"])

    # minimal disk solution at lambda = 1 against the closed form
    disc = Discretization.radial(DomainSpec.disk(), 1024, core=0.3)
    u = newton_solve(disc, 1.0)
    e2 = 3.0 + 2.0 * np.sqrt(2.0)
    r = disc.radial_grid.r_unknown
    exact = np.log(8 * e2 / (e2 + r * r) ** 2)
    err = float(np.abs(u - exact).max())
    add("disk_closed_form", err, tol["selftest_disk_oracle"], err <= tol["selftest_disk_oracle"])

    failed = [c["check"] for c in checks if c["verdict"] == "FAIL"]
    report = {"command": "selftest", "checks": checks, "failed": failed, "status": "fail" if failed else "pass",
              "tolerances": tol}
    if out_dir is not None:
        write_json(Path(out_dir) / "selftest.json", report)
    return report, 1 if failed else 0
