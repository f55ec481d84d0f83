"""Robustness measurement: attack ensembles, minimum radii, Lipschitz, shapes.

Outputs are plain dict/CSV/JSON structures so runs are byte-reproducible
under a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .activations import ActivationSpec, PIECEWISE, curvature, shape_series
from .attacks import AttackSpec, project_linf, run_attack
from .data import Dataset
from .nnet import Network, build_mlp
from .seeding import derive_seed, per_sample_rng
from .training import TrainConfig, train


@dataclass
class RobustnessReport:
    model_id: str
    clean_acc: float
    robust_acc: dict[str, float]
    ensemble_label: str
    mean_min_radius: float | None
    censored: int
    empirical_lipschitz: float
    lipschitz_skipped: int
    alpha_final: float | None
    beta_final: float | None
    curvature_final: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


def attack_label(spec: AttackSpec) -> str:
    if spec.family == "square_search":
        return f"square_search-eps{spec.epsilon}-q{spec.query_budget}"
    return f"{spec.family}-eps{spec.epsilon}-steps{spec.steps}-r{spec.restarts}"


def default_ensemble(epsilon: float = 0.031,
                     clip_range: tuple[float, float] = (0.0, 1.0)) -> list[AttackSpec]:
    """Multi-restart PGD plus query-limited square search."""
    return [
        AttackSpec("pgd_linf", epsilon=epsilon, step_size=2.5 * epsilon / 50,
                   steps=50, restarts=5, clip_range=clip_range),
        AttackSpec("square_search", epsilon=epsilon, query_budget=1000, clip_range=clip_range),
    ]


# -- empirical Lipschitz -------------------------------------------------------


def empirical_lipschitz(net: Network, dataset: Dataset, attack: AttackSpec,
                        seed: int = 0) -> tuple[float, int]:
    """Mean over samples of max ||f(x)-f(x^)||_1 / ||x-x^||_inf inside the ball.

    The inner maximization runs signed-gradient ascent on the numerator.
    Samples whose perturbation collapses to zero are skipped and counted.
    Returns (estimate, skipped).
    """
    if attack.family != "pgd_linf":
        raise ValueError(f"empirical_lipschitz expects a pgd_linf spec, got {attack.family!r}")
    x0 = dataset.x
    n = x0.shape[0]
    if n == 0:
        raise ValueError("empirical_lipschitz needs a nonempty dataset")
    lo, hi = attack.clip_range
    eps, step = attack.epsilon, attack.step_size
    with net.frozen():
        base = net.forward(T.Tensor(x0)).data
    rngs = [per_sample_rng(seed, i, stream="eval") for i in range(n)]
    noise = np.stack([rng.uniform(-eps, eps, size=x0.shape[1:]) for rng in rngs])
    xh = np.clip(x0 + noise, lo, hi)
    for _ in range(attack.steps):
        xt = T.Tensor(xh, requires_grad=True)
        with net.frozen():
            gap = (net.forward(xt) - T.Tensor(base)).abs().sum()
            gap.backward()
        xh = np.clip(project_linf(xh + step * np.sign(xt.grad), x0, eps), lo, hi)
    with net.frozen():
        outs = net.forward(T.Tensor(xh)).data
    num = np.abs(outs - base).reshape(n, -1).sum(axis=1)
    den = np.abs(xh - x0).reshape(n, -1).max(axis=1)
    keep = den > 0
    skipped = int(n - keep.sum())
    if not keep.any():
        raise ValueError("all samples degenerate: every perturbation collapsed to zero")
    return float(np.mean(num[keep] / den[keep])), skipped


# -- full report -----------------------------------------------------------------


def full_report(net: Network, dataset: Dataset, model_id: str = "model", seed: int = 0,
                ensemble: list[AttackSpec] | None = None,
                min_radius: AttackSpec | None = None,
                lipschitz: AttackSpec | None = None) -> RobustnessReport:
    """Aggregate clean/robust accuracy, radii, Lipschitz and learned shape facts."""
    if ensemble is None:
        ensemble = default_ensemble()
    if min_radius is None:
        min_radius = AttackSpec("min_radius", epsilon=0.25, steps=4)
    if lipschitz is None:
        lipschitz = AttackSpec("pgd_linf", epsilon=0.031, step_size=0.0078, steps=10)

    clean_correct = net.predict(dataset.x) == dataset.y
    clean_acc = float(clean_correct.mean())

    robust_acc: dict[str, float] = {}
    union_success = np.zeros(len(dataset), dtype=bool)
    for k, spec in enumerate(ensemble):
        rows = run_attack(net, dataset, spec, seed=derive_seed(seed, k))
        success = np.array([r["success"] for r in rows], dtype=bool)
        robust_acc[attack_label(spec)] = float(np.mean(clean_correct & ~success))
        union_success |= success
    robust_acc["ensemble"] = float(np.mean(clean_correct & ~union_success))

    radius_rows = run_attack(net, dataset, min_radius, seed=derive_seed(seed, 101))
    radii = [r["r_min"] for r in radius_rows if r["r_min"] is not None]
    censored = sum(1 for r in radius_rows if r["r_min"] is not None and not r["success"])
    mean_min_radius = float(np.mean(radii)) if radii else None

    lip, lip_skipped = empirical_lipschitz(net, dataset, lipschitz, seed=derive_seed(seed, 202))

    spec_now = net.current_spec()
    grid_n = 2000 if spec_now.family in PIECEWISE else 2001  # even count skips the kink
    return RobustnessReport(
        model_id=model_id,
        clean_acc=clean_acc,
        robust_acc=robust_acc,
        ensemble_label="+".join(attack_label(s) for s in ensemble),
        mean_min_radius=mean_min_radius,
        censored=censored,
        empirical_lipschitz=lip,
        lipschitz_skipped=lip_skipped,
        alpha_final=spec_now.alpha,
        beta_final=spec_now.beta if spec_now.family == "pssilu" else None,
        curvature_final=curvature(spec_now, -10.0, 10.0, grid_n),
    )


# -- sweeps ------------------------------------------------------------------------


@dataclass
class SweepSetup:
    """Fixed-shape robustness sweep: standard-train at each parameter value."""

    family: str
    param_grid: list[float]
    seeds: list[int]
    dims: list[int]
    train: TrainConfig
    square: AttackSpec
    radius: AttackSpec = field(default_factory=lambda: AttackSpec("min_radius", epsilon=0.25, steps=4))
    radius_samples: int = 50


def swept_parameter(family: str) -> str:
    """pssilu sweeps vary beta at alpha=1; every other family varies alpha."""
    return "beta" if family == "pssilu" else "alpha"


def shape_sweep(setup: SweepSetup, train_ds: Dataset, test_ds: Dataset) -> list[dict]:
    """One standard-trained model per (parameter value, seed); fixed shape.

    Each row records the black-box robust accuracy and the mean minimum
    attack radius of that model.
    """
    if not setup.param_grid:
        raise ValueError("shape_sweep needs a nonempty parameter grid")
    which = swept_parameter(setup.family)
    rows = []
    for value in setup.param_grid:
        if which == "beta":
            spec = ActivationSpec(setup.family, alpha=1.0, beta=value)
        else:
            spec = ActivationSpec(setup.family, alpha=value)
        for seed in setup.seeds:
            net = build_mlp(setup.dims, spec, seed=seed)
            cfg = TrainConfig(method="standard", epochs=setup.train.epochs,
                              batch_size=setup.train.batch_size, lr0=setup.train.lr0,
                              attack=setup.train.attack, seed=seed)
            net, _, best = train(net, train_ds, test_ds, cfg)
            net.load_state_dict(best["state"])
            sq_rows = run_attack(net, test_ds, setup.square, seed=derive_seed(seed, 7))
            clean = np.array([r["clean_correct"] for r in sq_rows], dtype=bool)
            success = np.array([r["success"] for r in sq_rows], dtype=bool)
            subset = test_ds.subset(np.arange(min(setup.radius_samples, len(test_ds))))
            rad_rows = run_attack(net, subset, setup.radius, seed=derive_seed(seed, 8))
            radii = [r["r_min"] for r in rad_rows if r["r_min"] is not None]
            censored = sum(1 for r in rad_rows if r["r_min"] is not None and not r["success"])
            rows.append({
                "param": float(value),
                "seed": int(seed),
                "square_acc": float(np.mean(clean & ~success)),
                "mean_min_radius": float(np.mean(radii)) if radii else float("nan"),
                "censored": int(censored),
            })
    return rows


SWEEP_COLUMNS = ("param", "seed", "square_acc", "mean_min_radius", "censored")


def lambda_sweep(lambda_grid: list[float], seeds: list[int], dims: list[int],
                 base_cfg: TrainConfig, train_ds: Dataset, test_ds: Dataset) -> list[dict]:
    """Adversarially train a learnable-shape pssilu model at each L1 weight."""
    if not lambda_grid:
        raise ValueError("lambda_sweep needs a nonempty grid")
    rows = []
    spec = ActivationSpec("pssilu", alpha=1.0, beta=0.0, alpha_learnable=True, beta_learnable=True)
    for lam in lambda_grid:
        for seed in seeds:
            net = build_mlp(dims, spec, seed=seed)
            cfg = TrainConfig(method=base_cfg.method, epochs=base_cfg.epochs,
                              batch_size=base_cfg.batch_size, lr0=base_cfg.lr0,
                              attack=base_cfg.attack, trades_beta=base_cfg.trades_beta,
                              lambda_beta=float(lam), beta_grad_clip=base_cfg.beta_grad_clip,
                              seed=seed)
            net, _, best = train(net, train_ds, test_ds, cfg)
            net.load_state_dict(best["state"])
            learned = net.current_spec()
            rows.append({
                "lambda": float(lam),
                "seed": int(seed),
                "pgd_acc": float(best["pgd_acc"]),
                "clean_acc": float(best["clean_acc"]),
                "final_alpha": float(learned.alpha),
                "final_beta": float(learned.beta),
            })
    return rows


LAMBDA_COLUMNS = ("lambda", "seed", "pgd_acc", "clean_acc", "final_alpha", "final_beta")


def rows_to_csv(rows: list[dict], columns, path) -> None:
    with open(path, "w") as f:
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(_fmt(row[c]) for c in columns) + "\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def rows_to_jsonl(rows: list[dict], path) -> None:
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


# -- shape export -------------------------------------------------------------------


def write_shape_csv(spec: ActivationSpec, path, lo: float = -5.0, hi: float = 5.0,
                    n: int = 2001) -> None:
    """(x, y) samples of one activation shape, parameters in header comments."""
    xs, ys = shape_series(spec, lo, hi, n)
    with open(path, "w") as f:
        f.write(f"# family={spec.family}\n")
        f.write(f"# alpha={_fmt(spec.alpha)}\n")
        f.write(f"# beta={_fmt(spec.beta if spec.family == 'pssilu' else None)}\n")
        f.write("x,y\n")
        for xv, yv in zip(xs, ys):
            f.write(f"{float(xv)!r},{float(yv)!r}\n")


def learned_shape_export(net: Network, path, lo: float = -5.0, hi: float = 5.0,
                         n: int = 2001) -> ActivationSpec:
    """Export the network's activation at its learned parameter values."""
    spec = net.current_spec()
    write_shape_csv(spec, path, lo, hi, n)
    return spec
