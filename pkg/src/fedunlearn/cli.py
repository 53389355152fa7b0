"""Command-line experiment runner.

Subcommands: train, unlearn, retrain, evaluate, pipeline, ablate,
robustness, backdoor, cg-verify.  Every command takes --config (JSON,
fully defaulted), optional --seeds / --out / --workers, and a few
hyperparameter overrides.  FEDUNLEARN_OUT sets the default output root for
relative output paths.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

from . import evaluation, models, pipeline, robustness
from .backdoor import TriggerSpec, backdoor_scenario
from .config import ExperimentConfig, derive_seed
from .federation import load_checkpoint, partition_dirichlet, save_checkpoint, save_history_csv, train_from_clients
from .krylov import CGConfig, cg_verification_suite
from .unlearning import UnlearnConfig, retrain_oracle, unlearn


def _resolve_out(args, config):
    out = args.out or config.output_dir
    root = os.environ.get("FEDUNLEARN_OUT")
    if root and not os.path.isabs(out):
        out = os.path.join(root, out)
    return out


def _load_config(args):
    config = (ExperimentConfig.load(args.config) if args.config
              else ExperimentConfig())
    if args.seeds:
        config = replace(config, seeds=tuple(
            int(s) for s in args.seeds.split(",")))
    unl = config.unlearn
    cg = unl.cg
    if args.k is not None:
        cg = CGConfig(args.k, cg.rel_tolerance, cg.damping)
    if args.damping is not None:
        cg = CGConfig(cg.max_iters, cg.rel_tolerance, args.damping)
    if args.beta is not None:
        unl = UnlearnConfig(cg=cg, scale_beta=args.beta)
    elif cg is not config.unlearn.cg:
        unl = UnlearnConfig(cg=cg, scale_beta=unl.scale_beta)
    if unl is not config.unlearn:
        config = replace(config, unlearn=unl)
    part = config.partition
    if args.alpha is not None:
        part = replace(part, dirichlet_alpha=args.alpha)
    if args.clients is not None:
        part = replace(part, num_clients=args.clients)
    if part is not config.partition:
        config = replace(config, partition=part)
    if args.rounds is not None:
        config = replace(config, train=replace(config.train,
                                               rounds=args.rounds))
    return config


def _seed_env(config, seed):
    part = replace(config.partition,
                   seed=derive_seed(config.partition.seed, seed))
    train_cfg = replace(config.train, seed=derive_seed(config.train.seed, seed))
    return part, train_cfg


def _cmd_train(args):
    config = _load_config(args)
    out = _resolve_out(args, config)
    for seed in config.seeds:
        part, train_cfg = _seed_env(config, seed)
        data = config.data.load_train()
        clients = partition_dirichlet(data, part)
        state = train_from_clients(config.model, clients, train_cfg)
        seed_dir = os.path.join(out, f"seed_{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        save_checkpoint(os.path.join(seed_dir, "trained.bin"),
                        state.global_params, round_idx=state.round,
                        sidecar={"config": config.to_dict(), "seed": seed,
                                 "method": "trained"})
        save_history_csv(os.path.join(seed_dir, "history.csv"), state.history)
        print(f"seed {seed}: trained {state.round} rounds -> {seed_dir}")
    return 0


def _trained_params(config, seed, out):
    path = os.path.join(out, f"seed_{seed}", "trained.bin")
    part, train_cfg = _seed_env(config, seed)
    data = config.data.load_train()
    clients = partition_dirichlet(data, part)
    if os.path.exists(path):
        theta, _, _ = load_checkpoint(path)
    else:
        theta = train_from_clients(config.model, clients, train_cfg).global_params
    return theta, clients, part, train_cfg, data


def _cmd_unlearn(args):
    config = _load_config(args)
    out = _resolve_out(args, config)
    for seed in config.seeds:
        theta, clients, _, _, _ = _trained_params(config, seed, out)
        result = unlearn(config.model, theta, clients, config.forget,
                         config.unlearn)
        seed_dir = os.path.join(out, f"seed_{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        save_checkpoint(os.path.join(seed_dir, "unlearned.bin"),
                        result.theta_u, round_idx=config.train.rounds,
                        sidecar={"config": config.to_dict(), "seed": seed,
                                 "method": "unlearned"})
        with open(os.path.join(seed_dir, "unlearn_report.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(result.to_report(config.unlearn), fh, indent=2,
                      sort_keys=True)
            fh.write("\n")
        print(f"seed {seed}: unlearned client {config.forget.forget_client} "
              f"in {result.wall_time_s:.3f}s -> {seed_dir}")
    return 0


def _cmd_retrain(args):
    config = _load_config(args)
    out = _resolve_out(args, config)
    for seed in config.seeds:
        part, train_cfg = _seed_env(config, seed)
        data = config.data.load_train()
        rr = retrain_oracle(config.model, data, part, train_cfg, config.forget)
        seed_dir = os.path.join(out, f"seed_{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        save_checkpoint(os.path.join(seed_dir, "retrained.bin"), rr.params,
                        round_idx=config.train.rounds,
                        sidecar={"config": config.to_dict(), "seed": seed,
                                 "method": "retrained"})
        print(f"seed {seed}: retrained in {rr.wall_time_s:.3f}s -> {seed_dir}")
    return 0


def _cmd_evaluate(args):
    config = _load_config(args)
    out = _resolve_out(args, config)
    test = config.data.load_test()
    spec = config.model
    rows = []
    for seed in config.seeds:
        seed_dir = os.path.join(out, f"seed_{seed}")
        present = {}
        for method in pipeline.METHODS:
            path = os.path.join(seed_dir, f"{method}.bin")
            if os.path.exists(path):
                present[method], _, _ = load_checkpoint(path)
        if "retrained" not in present or "trained" not in present:
            print(f"seed {seed}: need trained.bin and retrained.bin under "
                  f"{seed_dir}", file=sys.stderr)
            return 1
        part, _ = _seed_env(config, seed)
        data = config.data.load_train()
        clients = partition_dirichlet(data, part)
        forget_data, _ = pipeline._concat_forget(clients, config.forget)
        acc_t = evaluation.accuracy(spec, present["trained"], test)
        acc_r = evaluation.accuracy(spec, present["retrained"], test)
        mia_r = evaluation.mia_attack(spec, present["retrained"],
                                      forget_data, test)
        for method, theta in present.items():
            acc = evaluation.accuracy(spec, theta, test)
            cf, unstable = evaluation.causal_faithfulness(acc_t, acc_r, acc)
            mia = evaluation.mia_attack(spec, theta, forget_data, test)
            rows.append({
                "seed": seed, "method": method, "acc": acc, "cf": cf,
                "cf_unstable": unstable,
                "gap": evaluation.parameter_gap(theta, present["retrained"]),
                "mia": mia,
                "fa": evaluation.prediction_agreement(
                    spec, theta, present["retrained"], test),
                "kl": evaluation.output_kl(
                    spec, present["retrained"], theta, test),
                "logit_mse": evaluation.logit_mse(
                    spec, theta, present["retrained"], test),
                "privacy_gap": evaluation.privacy_gap(mia, mia_r),
            })
    path = os.path.join(out, "metrics.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("seed,method," + ",".join(pipeline.METRIC_COLUMNS) + "\n")
        for row in rows:
            vals = ",".join(pipeline._fmt(row[c])
                            for c in pipeline.METRIC_COLUMNS)
            fh.write(f"{row['seed']},{row['method']},{vals}\n")
    print(f"wrote {path} ({len(rows)} rows)")
    return 0


def _cmd_pipeline(args):
    config = _load_config(args)
    out = _resolve_out(args, config)
    summary = pipeline.run_pipeline(config, workers=args.workers, out_dir=out)
    if summary["cells"]:
        pipeline.emit_plots_data(out)
    for seed, msg in summary["failures"].items():
        print(f"seed {seed} FAILED: {msg}", file=sys.stderr)
    print(f"pipeline: {len(summary['cells'])}/{len(config.seeds)} seeds ok "
          f"-> {out}")
    return 0 if summary["ok"] else 1


def _cmd_ablate(args):
    config = _load_config(args)
    out = _resolve_out(args, config)
    values = args.values.split(",")
    if args.axis != "component":
        values = [float(v) for v in values]
    summary = pipeline.run_ablation(config, args.axis, values,
                                    workers=args.workers, out_dir=out)
    for cell, msg in summary["failures"].items():
        print(f"cell {cell} FAILED: {msg}", file=sys.stderr)
    print(f"ablation over {args.axis}: {len(summary['results'])} cells "
          f"-> {summary['csv']}")
    return 0 if summary["ok"] else 1


def _cmd_robustness(args):
    out = args.out or "runs/robustness"
    root = os.environ.get("FEDUNLEARN_OUT")
    if root and not os.path.isabs(out):
        out = os.path.join(root, out)
    os.makedirs(out, exist_ok=True)
    rows = robustness.random_trial_suite(args.trials, args.seed)
    path = os.path.join(out, "robustness_trials.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("trial,d,mu,epsilon,rho,k,observed,bound,xi,satisfied\n")
        for r in rows:
            fh.write(f"{r['trial']},{r['d']},{r['mu']!r},{r['epsilon']!r},"
                     f"{r['rho']!r},{r['k']},{r['observed_total']!r},"
                     f"{r['bound_total']!r},{r['xi_total']!r},"
                     f"{r['satisfied'] and r['satisfied_total']}\n")
    bad = [r for r in rows if not (r["satisfied"] and r["satisfied_total"])]
    summary = {"trials": len(rows), "violations": len(bad), "seed": args.seed}
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"robustness: {len(rows)} trials, {len(bad)} violations -> {path}")
    return 0 if not bad else 1


def _cmd_backdoor(args):
    config = _load_config(args)
    out = _resolve_out(args, config)
    os.makedirs(out, exist_ok=True)
    p = config.data.synthetic.p if config.data.synthetic else None
    idx = tuple(int(i) for i in args.trigger_features.split(","))
    if p is not None and max(idx) >= p:
        print(f"trigger feature index out of range for p={p}", file=sys.stderr)
        return 1
    trigger = TriggerSpec(feature_indices=idx,
                          trigger_values=tuple([args.trigger_value] * len(idx)),
                          target_label=args.target_label,
                          poison_ratio=args.poison_ratio)
    reports = {}
    for seed in config.seeds:
        part, train_cfg = _seed_env(config, seed)
        report = backdoor_scenario(
            config.model, config.data.load_train(), config.data.load_test(),
            part, train_cfg, config.unlearn, trigger,
            malicious_client=args.malicious_client,
            poison_seed=derive_seed(seed, 0xBD))
        reports[str(seed)] = report
        m = report["methods"]
        print(f"seed {seed}: ASR poisoned {m['poisoned']['asr']:.3f} "
              f"unlearned {m['unlearned']['asr']:.3f} "
              f"retrained {m['retrained']['asr']:.3f}")
    path = os.path.join(out, "backdoor_report.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"trigger": trigger.to_dict(), "seeds": reports}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {path}")
    return 0


def _cmd_cg_verify(args):
    out = args.out or "runs/cg_verify"
    root = os.environ.get("FEDUNLEARN_OUT")
    if root and not os.path.isabs(out):
        out = os.path.join(root, out)
    os.makedirs(out, exist_ok=True)
    rows = cg_verification_suite(args.systems, seed=args.seed)
    bad = [r for r in rows if not r["bound_satisfied"]
           or r["solution_rel_error"] >= 1e-8]
    with open(os.path.join(out, "cg_verify.json"), "w", encoding="utf-8") as fh:
        json.dump({"systems": rows, "violations": len(bad)}, fh, indent=2,
                  sort_keys=True)
        fh.write("\n")
    worst = max(r["solution_rel_error"] for r in rows)
    print(f"cg-verify: {len(rows)} systems, worst relative error {worst:.3e}, "
          f"{len(bad)} violations")
    return 0 if not bad else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fedunlearn",
        description="Federated unlearning experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seeds", help="comma-separated seed list override")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--k", type=int, help="CG iteration override")
        p.add_argument("--damping", type=float, help="CG damping override")
        p.add_argument("--beta", type=float, help="scale clamp override")
        p.add_argument("--alpha", type=float, help="Dirichlet alpha override")
        p.add_argument("--clients", type=int, help="client count override")
        p.add_argument("--rounds", type=int, help="training rounds override")

    for name, fn in (("train", _cmd_train), ("unlearn", _cmd_unlearn),
                     ("retrain", _cmd_retrain), ("evaluate", _cmd_evaluate),
                     ("pipeline", _cmd_pipeline)):
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("ablate")
    common(p)
    p.add_argument("--axis", required=True,
                   choices=["damping", "cg_iters", "scale_beta",
                            "dirichlet_alpha", "num_clients", "component"])
    p.add_argument("--values", required=True,
                   help="comma-separated sweep values")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("robustness")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_robustness)

    p = sub.add_parser("backdoor")
    common(p)
    p.add_argument("--trigger-features", default="0,1,2")
    p.add_argument("--trigger-value", type=float, default=4.0)
    p.add_argument("--target-label", type=int, default=1)
    p.add_argument("--poison-ratio", type=float, default=0.5)
    p.add_argument("--malicious-client", type=int, default=0)
    p.set_defaults(func=_cmd_backdoor)

    p = sub.add_parser("cg-verify")
    p.add_argument("--systems", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_cg_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    models.warmup_kernels()
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
