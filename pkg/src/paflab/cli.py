"""Experiment runner CLI.

Subcommands: train, sweep, attack, shapes, lipschitz, report.  Every run is
driven by a JSON config plus a seed; outputs (CSV/JSON and rendered PNG
figures) land in --out and are byte-identical across reruns of the same
config and seed, figures excepted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import attacks, evaluation, figures, training
from .activations import ActivationSpec, FAMILIES as ACT_FAMILIES
from .attacks import AttackSpec, FAMILIES as ATTACK_FAMILIES
from .data import Dataset, gaussian_blobs, load_idx, two_moons
from .nnet import Network, build_cnn, build_mlp, load_checkpoint
from .seeding import derive_seed
from .training import TrainConfig


def _load_config(path) -> dict:
    with open(path) as f:
        return json.load(f)


def _dataset_from_config(dcfg: dict, seed: int) -> tuple[Dataset, Dataset]:
    name = dcfg.get("name")
    if name == "two_moons":
        noise = dcfg.get("noise", 0.05)
        train = two_moons(dcfg.get("n", 200), noise, seed=derive_seed(seed, 11))
        test = two_moons(dcfg.get("test_n", 100), noise, seed=derive_seed(seed, 12))
    elif name == "gaussian_blobs":
        centers = dcfg["centers"]
        sigma = dcfg.get("sigma", 0.05)
        train = gaussian_blobs(dcfg.get("n", 200), centers, sigma, seed=derive_seed(seed, 11))
        test = gaussian_blobs(dcfg.get("test_n", 100), centers, sigma, seed=derive_seed(seed, 12))
    elif name == "idx":
        train = load_idx(dcfg["train_images"], dcfg["train_labels"])
        test = load_idx(dcfg["test_images"], dcfg["test_labels"])
        if "limit" in dcfg:
            train = train.subset(np.arange(min(dcfg["limit"], len(train))))
        if "test_limit" in dcfg:
            test = test.subset(np.arange(min(dcfg["test_limit"], len(test))))
    else:
        raise ValueError(f"unknown dataset {name!r}; choose two_moons, gaussian_blobs or idx")
    return train, test


def _spec_from_config(acfg: dict) -> ActivationSpec:
    return ActivationSpec(family=acfg["family"], alpha=acfg.get("alpha"),
                          beta=acfg.get("beta", 0.0),
                          alpha_learnable=acfg.get("alpha_learnable", False),
                          beta_learnable=acfg.get("beta_learnable", False))


def _net_from_config(mcfg: dict, spec: ActivationSpec, seed: int) -> Network:
    kind = mcfg.get("kind", "mlp")
    if kind == "mlp":
        return build_mlp(mcfg["dims"], spec, seed=seed)
    if kind == "cnn":
        return build_cnn(tuple(mcfg["channels"]), mcfg["kernel"], mcfg["classes"], spec,
                         seed=seed, in_channels=mcfg.get("in_channels", 1),
                         in_hw=mcfg.get("in_hw", 8), stride=mcfg.get("stride", 1),
                         padding=mcfg.get("padding", 0))
    raise ValueError(f"unknown model kind {kind!r}")


def _attack_from_config(atk: dict) -> AttackSpec:
    family = atk.get("family", "pgd_linf")
    base = attacks.default_l2() if family == "pgd_l2" else attacks.default_linf()
    default_steps = 4 if family == "min_radius" else base.steps
    fields = {
        "family": family,
        "epsilon": atk.get("epsilon", 0.25 if family == "min_radius" else base.epsilon),
        "step_size": atk.get("step_size", base.step_size if family in ("pgd_linf", "pgd_l2") else None),
        "steps": atk.get("steps", default_steps),
        "restarts": atk.get("restarts", 1),
        "query_budget": atk.get("query_budget", 1000),
        "clip_range": tuple(atk.get("clip", (0.0, 1.0))),
    }
    return AttackSpec(**fields)


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    tcfg = cfg.get("train", {})
    attack = _attack_from_config(cfg.get("attack", {}))
    return TrainConfig(
        method=tcfg.get("method", "pgd_at"),
        epochs=tcfg.get("epochs", 20),
        batch_size=tcfg.get("batch_size", 40),
        lr0=tcfg.get("lr0", 0.1),
        attack=attack,
        trades_beta=tcfg.get("trades_beta", 0.6),
        lambda_beta=tcfg.get("lambda_beta", 10.0),
        beta_grad_clip=tcfg.get("beta_grad_clip", 0.01),
        seed=seed,
    )


def _maybe_flatten(ds: Dataset, kind: str) -> Dataset:
    if kind == "mlp" and ds.x.ndim > 2:
        return Dataset(ds.x.reshape(len(ds), -1), ds.y, ds.feature_range, dict(ds.metadata))
    return ds


def _write_config(cfg: dict, seed: int, out: str) -> None:
    resolved = dict(cfg)
    resolved["seed"] = seed
    with open(os.path.join(out, "config.json"), "w") as f:
        json.dump(resolved, f, indent=2, sort_keys=True)
        f.write("\n")


def _ensemble_from_config(cfg: dict, clip_range) -> list[AttackSpec]:
    rcfg = cfg.get("report", {})
    eps = rcfg.get("ensemble_epsilon", cfg.get("attack", {}).get("epsilon", 0.031))
    steps = rcfg.get("pgd_steps", 50)
    return [
        AttackSpec("pgd_linf", epsilon=eps, step_size=attacks.scaled_step(eps, steps),
                   steps=steps, restarts=rcfg.get("pgd_restarts", 5), clip_range=clip_range),
        AttackSpec("square_search", epsilon=eps, query_budget=rcfg.get("square_budget", 1000),
                   clip_range=clip_range),
    ]


# -- subcommands ------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 12345)
    train_ds, test_ds = _dataset_from_config(cfg["dataset"], seed)
    kind = cfg.get("model", {}).get("kind", "mlp")
    train_ds, test_ds = _maybe_flatten(train_ds, kind), _maybe_flatten(test_ds, kind)
    spec = _spec_from_config(cfg["activation"])
    net = _net_from_config(cfg.get("model", {"dims": [2, 16, 16, 2]}), spec, seed)
    tcfg = _train_config(cfg, seed)

    net, history, best = training.train(net, train_ds, test_ds, tcfg)
    net.load_state_dict(best["state"])
    rcfg = cfg.get("report", {})
    report = evaluation.full_report(
        net, test_ds, model_id=cfg.get("model_id", "train-run"), seed=derive_seed(seed, 99),
        ensemble=_ensemble_from_config(cfg, tcfg.attack.clip_range),
        min_radius=AttackSpec("min_radius", epsilon=rcfg.get("radius_max", 0.25), steps=4,
                              clip_range=tcfg.attack.clip_range))

    os.makedirs(args.out, exist_ok=True)
    _write_config(cfg, seed, args.out)
    training.history_to_csv(history, os.path.join(args.out, "history.csv"))
    net.save_checkpoint(os.path.join(args.out, "checkpoint.json"))
    with open(os.path.join(args.out, "report.json"), "w") as f:
        f.write(report.to_json())
    evaluation.learned_shape_export(net, os.path.join(args.out, "learned_shape.csv"))
    if not args.no_figures:
        figures.render_history(history, os.path.join(args.out, "history.png"))
        figures.render_shapes([net.current_spec()], os.path.join(args.out, "learned_shape.png"),
                              reference=ActivationSpec("relu"))
    print(f"best epoch {best['epoch']}: clean {best['clean_acc']:.3f}, "
          f"attacked {best['pgd_acc']:.3f} -> {args.out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 12345)
    scfg = cfg["sweep"]
    if not scfg.get("grid"):
        raise ValueError("sweep config needs a nonempty 'grid'")
    seeds = scfg.get("seeds", [seed])
    train_ds, test_ds = _dataset_from_config(cfg["dataset"], seed)
    dims = cfg.get("model", {}).get("dims", [2, 16, 16, 2])
    tcfg = _train_config(cfg, seed)

    if scfg.get("kind", "shape") == "shape":
        setup = evaluation.SweepSetup(
            family=scfg["family"], param_grid=scfg["grid"], seeds=seeds, dims=dims,
            train=replace(tcfg, method="standard"),
            square=AttackSpec("square_search", epsilon=scfg.get("square_epsilon", 0.031),
                              query_budget=scfg.get("square_budget", 1000)),
            radius=AttackSpec("min_radius", epsilon=scfg.get("radius_max", 0.25), steps=4),
            radius_samples=scfg.get("radius_samples", 25))
        rows = evaluation.shape_sweep(setup, train_ds, test_ds)
        columns, param_key = evaluation.SWEEP_COLUMNS, "param"
    elif scfg["kind"] == "lambda":
        rows = evaluation.lambda_sweep(scfg["grid"], seeds, dims, tcfg, train_ds, test_ds)
        columns, param_key = evaluation.LAMBDA_COLUMNS, "lambda"
    else:
        raise ValueError(f"unknown sweep kind {scfg['kind']!r}; choose shape or lambda")

    os.makedirs(args.out, exist_ok=True)
    _write_config(cfg, seed, args.out)
    evaluation.rows_to_csv(rows, columns, os.path.join(args.out, "sweep.csv"))
    if not args.no_figures:
        acc_key = "square_acc" if param_key == "param" else "pgd_acc"
        radius_key = "mean_min_radius" if param_key == "param" else ""
        figures.render_sweep(rows, os.path.join(args.out, "sweep.png"),
                             param_key=param_key, acc_key=acc_key, radius_key=radius_key)
    print(f"{len(rows)} sweep rows -> {args.out}")
    return 0


def _load_net(path) -> Network:
    try:
        return load_checkpoint(path)
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as e:
        raise ValueError(f"checkpoint error: {path}: {e}") from e


def cmd_attack(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 12345)
    net = _load_net(args.checkpoint)
    _, test_ds = _dataset_from_config(cfg["dataset"], seed)
    test_ds = _maybe_flatten(test_ds, net.architecture["kind"])

    atk = dict(cfg.get("attack", {}))
    if args.attack:
        atk["family"] = args.attack
    if args.epsilon is not None:
        atk["epsilon"] = args.epsilon
    spec = _attack_from_config(atk)

    rows = attacks.run_attack(net, test_ds, spec, seed=derive_seed(seed, 3))
    os.makedirs(args.out, exist_ok=True)
    _write_config(cfg, seed, args.out)
    evaluation.rows_to_jsonl(rows, os.path.join(args.out, "attack_results.jsonl"))
    if spec.family == "min_radius":
        radii = [r["r_min"] for r in rows if r["r_min"] is not None]
        censored = sum(1 for r in rows if r["r_min"] is not None and not r["success"])
        mean_r = float(np.mean(radii)) if radii else float("nan")
        print(f"mean minimum radius {mean_r:.5f} over {len(radii)} samples ({censored} censored)")
    else:
        robust = [r["clean_correct"] and not r["success"] for r in rows]
        print(f"robust accuracy {float(np.mean(robust)):.4f} under {evaluation.attack_label(spec)}")
    return 0


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v != ""]


def cmd_shapes(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    lo, hi, n = args.lo, args.hi, args.n
    specs: list[ActivationSpec] = []
    if args.checkpoint:
        net = _load_net(args.checkpoint)
        specs.append(net.current_spec())
    else:
        if not args.family:
            raise ValueError("shapes needs --checkpoint or --family")
        alphas = _float_list(args.alphas) if args.alphas else [None]
        betas = _float_list(args.betas) if args.betas else [0.0]
        for a in alphas:
            for b in betas:
                specs.append(ActivationSpec(args.family, alpha=a, beta=b))
    for spec in specs:
        tag = spec.family
        if spec.alpha is not None:
            tag += f"_a{spec.alpha:g}"
        if spec.family == "pssilu":
            tag += f"_b{spec.beta:g}"
        evaluation.write_shape_csv(spec, os.path.join(args.out, f"shape_{tag}.csv"), lo, hi, n)
    reference = ActivationSpec("relu")
    evaluation.write_shape_csv(reference, os.path.join(args.out, "shape_relu_reference.csv"), lo, hi, n)
    if not args.no_figures:
        figures.render_shapes(specs, os.path.join(args.out, "shapes.png"),
                              lo=lo, hi=hi, reference=reference)
    print(f"{len(specs)} shape curve(s) -> {args.out}")
    return 0


def cmd_lipschitz(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 12345)
    net = _load_net(args.checkpoint)
    _, test_ds = _dataset_from_config(cfg["dataset"], seed)
    test_ds = _maybe_flatten(test_ds, net.architecture["kind"])
    spec = _attack_from_config(dict(cfg.get("attack", {}), family="pgd_linf"))
    value, skipped = evaluation.empirical_lipschitz(net, test_ds, spec, seed=derive_seed(seed, 5))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "lipschitz.json"), "w") as f:
        json.dump({"empirical_lipschitz": value, "skipped": skipped,
                   "epsilon": spec.epsilon, "steps": spec.steps}, f, sort_keys=True, indent=2)
        f.write("\n")
    print(f"empirical Lipschitz {value:.6f} ({skipped} degenerate samples skipped)")
    return 0


def cmd_report(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 12345)
    net = _load_net(args.checkpoint)
    _, test_ds = _dataset_from_config(cfg["dataset"], seed)
    test_ds = _maybe_flatten(test_ds, net.architecture["kind"])
    clip = tuple(cfg.get("attack", {}).get("clip", (0.0, 1.0)))
    rcfg = cfg.get("report", {})
    report = evaluation.full_report(
        net, test_ds, model_id=cfg.get("model_id", os.path.basename(args.checkpoint)),
        seed=derive_seed(seed, 99), ensemble=_ensemble_from_config(cfg, clip),
        min_radius=AttackSpec("min_radius", epsilon=rcfg.get("radius_max", 0.25), steps=4,
                              clip_range=clip))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w") as f:
        f.write(report.to_json())
    evaluation.learned_shape_export(net, os.path.join(args.out, "learned_shape.csv"))
    if not args.no_figures:
        figures.render_shapes([net.current_spec()], os.path.join(args.out, "learned_shape.png"),
                              reference=ActivationSpec("relu"))
    print(f"clean {report.clean_acc:.3f}, ensemble robust {report.robust_acc['ensemble']:.3f} "
          f"-> {args.out}")
    return 0


# -- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="paflab",
                                     description="activation-shape robustness experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    p = sub.add_parser("train", help="train a model and write checkpoint/history/report")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sweep", help="shape-parameter or lambda sweep")
    common(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("attack", help="attack a checkpoint and write per-sample results")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--attack", choices=ATTACK_FAMILIES, default=None,
                   help="attack family (overrides config)")
    p.add_argument("--epsilon", type=float, default=None)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("shapes", help="export activation shape curves as CSV")
    common(p, needs_config=False)
    p.add_argument("--checkpoint", default=None, help="export a trained model's learned shape")
    p.add_argument("--family", choices=ACT_FAMILIES, default=None)
    p.add_argument("--alphas", default=None, help="comma-separated alpha grid")
    p.add_argument("--betas", default=None, help="comma-separated beta grid (pssilu)")
    p.add_argument("--lo", type=float, default=-5.0)
    p.add_argument("--hi", type=float, default=5.0)
    p.add_argument("--n", type=int, default=2001)
    p.set_defaults(fn=cmd_shapes)

    p = sub.add_parser("lipschitz", help="empirical Lipschitz constant of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_lipschitz)

    p = sub.add_parser("report", help="full robustness report for a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
