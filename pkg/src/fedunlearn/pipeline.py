"""Experiment driver: train -> unlearn -> retrain -> baselines -> metrics.

Per seed the pipeline trains the federation, unlearns the configured forget
set, retrains the gold-standard oracle from the same initialization, runs
the gradient-ascent baseline, and scores everything against the retrained
model.  Deterministic metric values land in metrics.csv / aggregate.csv
(byte-identical across reruns); wall-clock measurements land separately in
timings.csv, which is the one output that legitimately varies.
"""

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import evaluation, models
from .config import ExperimentConfig, derive_seed
from .errors import NoDataError
from .federation import partition_dirichlet, save_checkpoint, save_history_csv, train_from_clients
from .krylov import CGConfig
from .unlearning import UnlearnConfig, naive_ga, resolve_forget, retrain_oracle, unlearn

METHODS = ("trained", "unlearned", "retrained", "naive_ga")

METRIC_COLUMNS = ("acc", "cf", "cf_unstable", "gap", "mia", "fa", "kl",
                  "logit_mse", "privacy_gap")


def _fmt(v):
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _concat_forget(clients, forget):
    forget_map = resolve_forget(clients, forget)
    parts = [forget_map[cid] for cid in sorted(forget_map)]
    data = parts[0]
    for extra in parts[1:]:
        data = data.concat(extra)
    return data, set(forget_map)


def run_single(config, seed, use_causal=True, use_scaling=True):
    """One full experiment cell; returns params, metric rows, and timings."""
    models.warmup_kernels()
    spec = config.model
    part = replace(config.partition,
                   seed=derive_seed(config.partition.seed, seed))
    train_cfg = replace(config.train,
                        seed=derive_seed(config.train.seed, seed))
    data = config.data.load_train()
    test = config.data.load_test()

    t0 = time.perf_counter()
    clients = partition_dirichlet(data, part)
    state = train_from_clients(spec, clients, train_cfg)
    train_time = time.perf_counter() - t0
    theta_t = state.global_params

    forget_data, affected_ids = _concat_forget(clients, config.forget)

    result = unlearn(spec, theta_t, clients, config.forget, config.unlearn,
                     use_causal=use_causal, use_scaling=use_scaling)
    theta_u = result.theta_u

    rr = retrain_oracle(spec, data, part, train_cfg, config.forget)
    theta_r = rr.params

    t0 = time.perf_counter()
    theta_n, ga_diverged = naive_ga(spec, theta_t, forget_data,
                                    epochs=config.naive_ga.epochs,
                                    lr=config.naive_ga.learning_rate)
    naive_time = time.perf_counter() - t0

    isolation_holds = all(
        not np.any(result.per_client[c.client_id].weighted_update)
        for c in clients if c.client_id not in affected_ids)

    acc_t = evaluation.accuracy(spec, theta_t, test)
    acc_r = evaluation.accuracy(spec, theta_r, test)
    mia_r = evaluation.mia_attack(spec, theta_r, forget_data, test)

    params = {"trained": theta_t, "unlearned": theta_u,
              "retrained": theta_r, "naive_ga": theta_n}
    timings = {"trained": train_time, "unlearned": result.wall_time_s,
               "retrained": rr.wall_time_s, "naive_ga": naive_time}

    rows = {}
    for method, theta in params.items():
        finite = bool(np.all(np.isfinite(theta)))
        if not finite:
            rows[method] = {c: float("nan") for c in METRIC_COLUMNS}
            rows[method]["cf_unstable"] = True
            continue
        acc = evaluation.accuracy(spec, theta, test)
        cf, unstable = evaluation.causal_faithfulness(acc_t, acc_r, acc)
        mia = evaluation.mia_attack(spec, theta, forget_data, test)
        rows[method] = {
            "acc": acc,
            "cf": cf,
            "cf_unstable": unstable,
            "gap": evaluation.parameter_gap(theta, theta_r),
            "mia": mia,
            "fa": evaluation.prediction_agreement(spec, theta, theta_r, test),
            "kl": evaluation.output_kl(spec, theta_r, theta, test),
            "logit_mse": evaluation.logit_mse(spec, theta, theta_r, test),
            "privacy_gap": evaluation.privacy_gap(mia, mia_r),
        }

    report = evaluation.MetricsReport(
        acc_trained=acc_t, acc_retrained=acc_r,
        acc_unlearned=rows["unlearned"]["acc"],
        cf=rows["unlearned"]["cf"],
        cf_unstable=rows["unlearned"]["cf_unstable"],
        parameter_gap=rows["unlearned"]["gap"],
        mia_trained=rows["trained"]["mia"], mia_retrained=mia_r,
        mia_unlearned=rows["unlearned"]["mia"],
        privacy_gap=rows["unlearned"]["privacy_gap"],
        agreement_fa=rows["unlearned"]["fa"],
        kl_func=rows["unlearned"]["kl"],
        kl_func_reverse=evaluation.output_kl(spec, theta_u, theta_r, test)
        if np.all(np.isfinite(theta_u)) else float("nan"),
        logit_mse=rows["unlearned"]["logit_mse"],
        speedup=evaluation.speedup(rr.wall_time_s, result.wall_time_s),
    )

    return {
        "seed": seed,
        "params": params,
        "rows": rows,
        "timings": timings,
        "retrain_time_s": rr.wall_time_s,
        "unlearn_report": result.to_report(config.unlearn),
        "metrics_report": report.to_dict(),
        "history": state.history,
        "isolation_holds": isolation_holds,
        "ga_diverged": ga_diverged,
        "noop": result.noop,
    }


def _write_seed_artifacts(out_dir, config, cell):
    seed = cell["seed"]
    seed_dir = os.path.join(out_dir, f"seed_{seed}")
    os.makedirs(seed_dir, exist_ok=True)
    sidecar = {"config": config.to_dict(), "seed": seed}
    for method, theta in cell["params"].items():
        save_checkpoint(os.path.join(seed_dir, f"{method}.bin"), theta,
                        round_idx=config.train.rounds,
                        sidecar={**sidecar, "method": method})
    save_history_csv(os.path.join(seed_dir, "history.csv"), cell["history"])
    with open(os.path.join(seed_dir, "unlearn_report.json"), "w",
              encoding="utf-8") as fh:
        json.dump(cell["unlearn_report"], fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(seed_dir, "metrics.json"), "w",
              encoding="utf-8") as fh:
        json.dump({**cell["metrics_report"], "seed": seed,
                   "isolation_holds": cell["isolation_holds"],
                   "timings": cell["timings"]},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")


def _metrics_csv(path, cells):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("seed,method," + ",".join(METRIC_COLUMNS) + "\n")
        for cell in sorted(cells, key=lambda c: c["seed"]):
            for method in METHODS:
                row = cell["rows"][method]
                vals = ",".join(_fmt(row[c]) for c in METRIC_COLUMNS)
                fh.write(f"{cell['seed']},{method},{vals}\n")


def _timings_csv(path, cells):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("seed,method,wall_s,speedup\n")
        for cell in sorted(cells, key=lambda c: c["seed"]):
            rt = cell["retrain_time_s"]
            for method in METHODS:
                wall = cell["timings"][method]
                sp = rt / wall if wall > 0 else float("nan")
                fh.write(f"{cell['seed']},{method},{wall!r},{sp!r}\n")


def _aggregate_csv(path, cells):
    """Long-format mean/std per (method, metric) across seeds.

    cf gets both aggregation orders: the mean of per-seed cf values and
    the cf recomputed from seed-averaged accuracies, which can differ a
    lot when the per-seed denominators are small.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("method,metric,mean,std\n")
        for method in METHODS:
            for col in METRIC_COLUMNS:
                if col == "cf_unstable":
                    continue
                vals = [c["rows"][method][col] for c in cells]
                finite = [v for v in vals if not math.isnan(v)]
                if finite:
                    mean = float(np.mean(finite))
                    std = float(np.std(finite, ddof=1)) if len(finite) > 1 else 0.0
                else:
                    mean, std = float("nan"), float("nan")
                fh.write(f"{method},{col},{mean!r},{std!r}\n")
            agg = evaluation.aggregate_cf(
                [c["rows"][method]["cf"] for c in cells],
                [c["rows"]["trained"]["acc"] for c in cells],
                [c["rows"]["retrained"]["acc"] for c in cells],
                [c["rows"][method]["acc"] for c in cells])
            fh.write(f"{method},cf_of_means,{agg['cf_of_means']!r},"
                     f"{_fmt(agg['cf_of_means_unstable'])}\n")


def run_pipeline(config, workers=1, out_dir=None, use_causal=True,
                 use_scaling=True):
    """Run every seed; returns {ok, cells, failures, out_dir}."""
    out_dir = out_dir or config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    config.save(os.path.join(out_dir, "config.json"))

    cells, failures = [], {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {seed: pool.submit(run_single, config, seed,
                                         use_causal, use_scaling)
                       for seed in config.seeds}
            for seed, fut in futures.items():
                try:
                    cells.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - logged per seed
                    failures[seed] = f"{type(exc).__name__}: {exc}"
    else:
        for seed in config.seeds:
            try:
                cells.append(run_single(config, seed, use_causal, use_scaling))
            except Exception as exc:  # noqa: BLE001 - logged per seed
                failures[seed] = f"{type(exc).__name__}: {exc}"

    for cell in cells:
        _write_seed_artifacts(out_dir, config, cell)
    if cells:
        _metrics_csv(os.path.join(out_dir, "metrics.csv"), cells)
        _timings_csv(os.path.join(out_dir, "timings.csv"), cells)
        _aggregate_csv(os.path.join(out_dir, "aggregate.csv"), cells)
    if failures:
        with open(os.path.join(out_dir, "failures.json"), "w",
                  encoding="utf-8") as fh:
            json.dump({str(k): v for k, v in failures.items()}, fh,
                      indent=2, sort_keys=True)
            fh.write("\n")
    return {"ok": not failures, "cells": cells, "failures": failures,
            "out_dir": out_dir}


def _cell_config(config, axis, value):
    if axis == "damping":
        cg = config.unlearn.cg
        return replace(config, unlearn=UnlearnConfig(
            cg=CGConfig(cg.max_iters, cg.rel_tolerance, float(value)),
            scale_beta=config.unlearn.scale_beta)), {}
    if axis == "cg_iters":
        cg = config.unlearn.cg
        return replace(config, unlearn=UnlearnConfig(
            cg=CGConfig(int(value), cg.rel_tolerance, cg.damping),
            scale_beta=config.unlearn.scale_beta)), {}
    if axis == "scale_beta":
        return replace(config, unlearn=UnlearnConfig(
            cg=config.unlearn.cg, scale_beta=float(value))), {}
    if axis == "dirichlet_alpha":
        return replace(config, partition=replace(
            config.partition, dirichlet_alpha=float(value))), {}
    if axis == "num_clients":
        return replace(config, partition=replace(
            config.partition, num_clients=int(value))), {}
    if axis == "component":
        if value == "full":
            return config, {}
        if value == "no_causal":
            return config, {"use_causal": False}
        if value == "no_scaling":
            return config, {"use_scaling": False}
        raise ValueError(f"unknown component toggle {value!r}")
    raise ValueError(f"unknown ablation axis {axis!r}")


def run_ablation(config, axis, values, workers=1, out_dir=None):
    """Sweep one axis; one row per (value, seed) in ablation.csv.

    Cell failures are recorded and the sweep continues.  Timing-derived
    speedups go to ablation_timings.csv.
    """
    out_dir = out_dir or os.path.join(config.output_dir, f"ablate_{axis}")
    os.makedirs(out_dir, exist_ok=True)
    config.save(os.path.join(out_dir, "config.json"))
    jobs = []
    for value in values:
        cell_cfg, toggles = _cell_config(config, axis, value)
        for seed in config.seeds:
            jobs.append((value, seed, cell_cfg, toggles))

    results, failures = [], {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {pool.submit(_run_ablation_job, job): job for job in jobs}
            for fut, job in futs.items():
                try:
                    results.append(fut.result())
                except Exception as exc:  # noqa: BLE001
                    failures[f"{job[0]}/{job[1]}"] = f"{type(exc).__name__}: {exc}"
    else:
        for job in jobs:
            try:
                results.append(_run_ablation_job(job))
            except Exception as exc:  # noqa: BLE001
                failures[f"{job[0]}/{job[1]}"] = f"{type(exc).__name__}: {exc}"

    results.sort(key=lambda r: (str(r[0]), r[1]))
    path = os.path.join(out_dir, "ablation.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("axis,value,seed," + ",".join(METRIC_COLUMNS)
                 + ",isolation_holds\n")
        for value, seed, cell in results:
            row = cell["rows"]["unlearned"]
            vals = ",".join(_fmt(row[c]) for c in METRIC_COLUMNS)
            fh.write(f"{axis},{value},{seed},{vals},"
                     f"{_fmt(cell['isolation_holds'])}\n")
    tpath = os.path.join(out_dir, "ablation_timings.csv")
    with open(tpath, "w", encoding="utf-8") as fh:
        fh.write("axis,value,seed,unlearn_wall_s,retrain_wall_s,speedup\n")
        for value, seed, cell in results:
            uw = cell["timings"]["unlearned"]
            rw = cell["retrain_time_s"]
            sp = rw / uw if uw > 0 else float("nan")
            fh.write(f"{axis},{value},{seed},{uw!r},{rw!r},{sp!r}\n")
    if failures:
        with open(os.path.join(out_dir, "failures.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(failures, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return {"ok": not failures, "results": results, "failures": failures,
            "out_dir": out_dir, "csv": path}


def _run_ablation_job(job):
    value, seed, cfg, toggles = job
    return value, seed, run_single(cfg, seed, **toggles)


def emit_plots_data(run_dir):
    """Derive plot-ready CSV series from a finished pipeline run."""
    seed_dirs = sorted(
        d for d in os.listdir(run_dir) if d.startswith("seed_")
    ) if os.path.isdir(run_dir) else []
    reports = []
    for d in seed_dirs:
        p = os.path.join(run_dir, d, "unlearn_report.json")
        if os.path.exists(p):
            with open(p, "r", encoding="utf-8") as fh:
                reports.append(json.load(fh))
    metrics_path = os.path.join(run_dir, "metrics.csv")
    timings_path = os.path.join(run_dir, "timings.csv")
    if not reports and not os.path.exists(metrics_path):
        raise NoDataError(f"no pipeline outputs under {run_dir!r}")

    written = []
    if reports:
        path = os.path.join(run_dir, "cg_residuals.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iteration,client_id,relative_residual\n")
            for rep in reports:
                for cid in sorted(rep["clients"], key=int):
                    for t, r in enumerate(rep["clients"][cid]
                                          ["cg_relative_residuals"]):
                        fh.write(f"{t},{cid},{r!r}\n")
        written.append(path)

    if os.path.exists(metrics_path) and os.path.exists(timings_path):
        accs, speeds = {}, {}
        with open(metrics_path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            ai = header.index("acc")
            for line in fh:
                parts = line.strip().split(",")
                accs.setdefault(parts[1], []).append(float(parts[ai]))
        with open(timings_path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            si = header.index("speedup")
            for line in fh:
                parts = line.strip().split(",")
                speeds.setdefault(parts[1], []).append(float(parts[si]))
        path = os.path.join(run_dir, "pareto.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("method,speedup,accuracy\n")
            for method in ("retrained", "unlearned", "naive_ga"):
                if method in accs and method in speeds:
                    fh.write(f"{method},{float(np.mean(speeds[method]))!r},"
                             f"{float(np.mean(accs[method]))!r}\n")
        written.append(path)
    if not written:
        raise NoDataError(f"found no emittable series under {run_dir!r}")
    return written
