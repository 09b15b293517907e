"""Scenario pipeline: reduction, design, warmup and closed-loop runs."""

from __future__ import annotations

import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .. import circle, control, design, metrics, phase_reduction
from ..fokker_planck import PhaseModel
from .config import ScenarioConfig

logger = logging.getLogger(__name__)


class ScenarioError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class DesignBundle:
    inp: design.PeriodicInput
    report: design.DesignReport
    rho_f0: np.ndarray
    rho_st: np.ndarray
    runtime: float


def _stage(name: str):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except ScenarioError:
                raise
            except Exception as exc:  # noqa: BLE001 - converted to an error record
                raise ScenarioError(name, exc) from exc

        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner

    return wrap


@_stage("reduce")
def build_model(cfg: ScenarioConfig) -> tuple[PhaseModel, float]:
    """Phase model from the config and the time spent building it."""
    start = time.perf_counter()
    m = cfg.model
    if m["source"] == "file":
        model = PhaseModel.from_json(Path(m["file"]))
        if model.n != cfg.grid:
            model = model.resample(cfg.grid)
    else:
        sys = phase_reduction.fitzhugh_nagumo(m["a"], m["b"], m["eta"])
        lc, ps = phase_reduction.reduce(sys, n=cfg.grid)
        model = PhaseModel(lc.omega, ps.Z, ps.Zw, m["D"])
    return model, time.perf_counter() - start


def _wrapped(params: dict, n: int) -> np.ndarray:
    return circle.wrapped_cauchy(params["mu"], params["gamma"], int(params["harmonic"]), n)


@_stage("design")
def run_design(cfg: ScenarioConfig, model: PhaseModel, E: float | None = None) -> DesignBundle:
    start = time.perf_counter()
    d = cfg.design
    rho_f0 = _wrapped(cfg.target, model.n)
    p = design.target_log_gradient(rho_f0)
    z = design.sensitivity_series(model)
    B = design.noise_strength(model)
    problem = design.DesignProblem(r=d["r"], E=d["E"] if E is None else E, lam=d["lam"], K_max=d["K_max"],
                                   amplitude=d["amplitude"])
    inp, report = design.solve_design(problem, p, z, B, model.omega, rho_f0)
    rho_st = design.gibbs_stationary(design.gamma_of(inp, z, model.n), B)
    return DesignBundle(inp, report, rho_f0, rho_st, time.perf_counter() - start)


def make_law(entry: dict, ff: design.PeriodicInput, cfg: ScenarioConfig, index: int) -> control.ControlLaw:
    lo, hi = cfg.bounds["lo"], cfg.bounds["hi"]
    k = float(entry.get("k", 0.0))
    e = float(entry.get("e", 0.0))
    seed = cfg.seed * 1000 + index
    v = entry["variant"]
    if v == "feedforward_only":
        return control.ControlLaw.feedforward_only(ff)
    if v == "proposed":
        return control.ControlLaw.proposed(ff, k, lo, hi)
    if v == "error_aware":
        return control.ControlLaw.error_aware(ff, k, e, lo, hi, noise_seed=seed)
    if v == "baseline_l2":
        return control.ControlLaw.baseline_l2(k, e=e, noise_seed=seed)
    if v == "baseline_cancel":
        return control.ControlLaw.baseline_cancel(k, lo, hi, e=e, noise_seed=seed)
    raise ValueError(f"unknown variant {v!r}")


def run_id(law: control.ControlLaw) -> str:
    return law.label().replace(",", "_").replace("=", "")


def _local_maxima(rho: np.ndarray) -> int:
    return int(np.sum((rho > np.roll(rho, 1)) & (rho > np.roll(rho, -1))))


def _closed_loop_job(args: tuple) -> tuple[str, control.LoopResult]:
    model, law, rho0, rho_ff, T, loop_cfg = args
    return run_id(law), control.run_closed_loop(model, law, rho0, rho_ff, T, loop_cfg)


def _write_stationary(path: Path, theta: np.ndarray, columns: dict[str, np.ndarray]) -> None:
    header = "theta[rad]," + ",".join(f"{name}[1/rad]" for name in columns)
    np.savetxt(path, np.column_stack([theta, *columns.values()]), delimiter=",", header=header,
               comments="", fmt="%.17g")


def _final_row(result: control.LoopResult) -> dict[str, float]:
    return {key: float(value) for key, value in result.rows[-1].items()}


def run_scenario(cfg: ScenarioConfig) -> dict[str, Any]:
    """Execute a scenario and write its outputs under ``cfg.out``.

    On failure an ``error.json`` record is written and :class:`ScenarioError`
    is raised.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
    try:
        summary = _run(cfg, out)
    except ScenarioError as exc:
        record = {"stage": exc.stage, "error": type(exc.cause).__name__, "message": str(exc.cause),
                  "traceback": traceback.format_exception(exc.cause)}
        (out / "error.json").write_text(json.dumps(record, indent=1))
        raise
    (out / "summary.json").write_text(json.dumps(summary, indent=1, default=float))
    return summary


def _run(cfg: ScenarioConfig, out: Path) -> dict[str, Any]:
    runtimes: dict[str, float] = {}
    model, runtimes["reduce"] = build_model(cfg)
    model.to_json(out / "model.json")
    summary: dict[str, Any] = {"scenario": cfg.scenario, "omega": model.omega, "D": model.D, "n": model.n}

    if cfg.scenario == "fig4":
        theta = circle.grid(model.n)
        columns = {}
        rows = []
        for E in cfg.energies:
            bundle = run_design(cfg, model, E)
            design.save_design(out / f"design_E{E:g}.json", bundle.inp, bundle.report)
            columns["target"] = bundle.rho_f0
            columns[f"rho_st_E{E:g}"] = bundle.rho_st
            rows.append({
                "E": E,
                "objective": bundle.report.objective,
                "energy": bundle.report.energy,
                "kl_target_st": metrics.kl(bundle.rho_f0, bundle.rho_st),
                "l2_target_st": metrics.l2(bundle.rho_f0, bundle.rho_st),
                "clusters": _local_maxima(bundle.rho_st),
                "bounds": {"l1": bundle.report.l1_bound, "l2": bundle.report.l2_value,
                           "kl": bundle.report.kl_bound, "fisher": bundle.report.fisher_bound},
                "runtime": bundle.runtime,
            })
            runtimes[f"design_E{E:g}"] = bundle.runtime
        _write_stationary(out / "stationary.csv", theta, columns)
        summary["designs"] = rows
        summary["runtimes"] = runtimes
        return summary

    bundle = run_design(cfg, model)
    runtimes["design"] = bundle.runtime
    design.save_design(out / "design.json", bundle.inp, bundle.report)
    summary["design"] = {"objective": bundle.report.objective, "energy": bundle.report.energy,
                         "support": bundle.report.support,
                         "bounds": {"l1": bundle.report.l1_bound, "l2": bundle.report.l2_value,
                                    "kl": bundle.report.kl_bound, "fisher": bundle.report.fisher_bound}}
    if not cfg.laws:
        summary["runtimes"] = runtimes
        return summary

    start = time.perf_counter()
    warm = _stage("warmup")(control.ff_warmup)(model, bundle.inp, dt=cfg.dt)
    runtimes["warmup"] = time.perf_counter() - start
    _write_stationary(out / "surrogate.csv", circle.grid(model.n),
                      {"target": bundle.rho_f0, "rho_ff": warm.rho, "rho_st_averaged": bundle.rho_st})

    rho0 = _wrapped(cfg.initial, model.n)
    loop_cfg = control.LoopConfig(dt=warm.dt, log_every=cfg.log_every, log_w2=cfg.log_w2, rho_f0=bundle.rho_f0,
                                  snapshot_every=cfg.snapshot_every)
    laws = _stage("laws")(lambda: [make_law(entry, bundle.inp, cfg, i) for i, entry in enumerate(cfg.laws)])()
    jobs = [(model, law, rho0, warm.rho, cfg.T, loop_cfg) for law in laws]
    try:
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(_closed_loop_job, jobs))
        else:
            results = [_closed_loop_job(job) for job in jobs]
    except Exception as exc:  # noqa: BLE001
        raise ScenarioError("closed_loop", exc) from exc

    runs = {}
    for name, res in results:
        res.to_csv(out / f"run_{name}.csv")
        res.snapshots_to_csv(out / f"snapshots_{name}.csv")
        runtimes[f"run_{name}"] = res.runtime
        law = res.law
        runs[name] = {"variant": law.variant.value, "k": law.k, "e": law.e, "final": _final_row(res),
                      "fb_active_fraction": float(np.mean(res.column("fb_active_flag")))}
    summary["runs"] = runs
    summary["dt"] = warm.dt
    summary["runtimes"] = runtimes
    return summary


def reduce_only(cfg: ScenarioConfig) -> dict[str, Any]:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model, runtime = build_model(cfg)
    model.to_json(out / "model.json")
    return {"omega": model.omega, "period": model.period, "runtime": runtime}


def design_only(cfg: ScenarioConfig) -> dict[str, Any]:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model, _ = build_model(cfg)
    bundle = run_design(cfg, model)
    design.save_design(out / "design.json", bundle.inp, bundle.report)
    return {"objective": bundle.report.objective, "energy": bundle.report.energy,
            "support": bundle.report.support, "runtime": bundle.runtime}


REPORT_COLUMNS = ("KL_target", "KL_surrogate", "L2")


def compare_report(run_dirs: Sequence[str | Path]) -> dict[str, Any]:
    """Table of final divergences across runs plus pairwise orderings.

    Orderings compare the proposed (or error-aware) law with each baseline
    at the same gain and measurement error on final ``KL_target``.
    """
    table = []
    for d in run_dirs:
        summary = json.loads((Path(d) / "summary.json").read_text())
        for name, run in sorted(summary.get("runs", {}).items()):
            row = {"dir": str(d), "run": name, "variant": run["variant"], "k": run["k"], "e": run["e"]}
            for col in REPORT_COLUMNS:
                row[col] = run["final"].get(col, float("nan"))
            row.update({f"bound_{key}": val for key, val in summary.get("design", {}).get("bounds", {}).items()})
            table.append(row)
    orderings = []
    ours = [r for r in table if r["variant"] in ("proposed", "error_aware")]
    others = [r for r in table if r["variant"].startswith("baseline")]
    for a in ours:
        for b in others:
            if a["dir"] == b["dir"] and a["k"] == b["k"] and a["e"] == b["e"]:
                orderings.append({"dir": a["dir"], "k": a["k"], "e": a["e"], "ours": a["run"], "other": b["run"],
                                  "ours_smaller_KL_target": bool(a["KL_target"] < b["KL_target"])})
    return {"table": table, "orderings": orderings}


def format_report(report: dict[str, Any]) -> str:
    cols = ("run", "k", "e") + REPORT_COLUMNS
    lines = ["  ".join(f"{c:>24}" if i == 0 else f"{c:>12}" for i, c in enumerate(cols))]
    for row in report["table"]:
        cells = []
        for i, c in enumerate(cols):
            v = row[c]
            cells.append(f"{v:>24}" if i == 0 else f"{v:>12.4g}")
        lines.append("  ".join(cells))
    for o in report["orderings"]:
        rel = "<" if o["ours_smaller_KL_target"] else ">="
        lines.append(f"{o['ours']} {rel} {o['other']} (final KL_target)")
    return "\n".join(lines)
