"""Standard, PGD-adversarial and TRADES training with shared-shape machinery.

The activation shape parameters ride along in SGD like any weight, with
three extra guards specific to them: an L1 pull of lambda_beta * |beta|
added to every batch loss, a hard norm clip on beta's gradient, and a
clamp back into each family's parameter domain after every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .activations import PSOFTPLUS_ALPHA_MIN, PSSILU_ALPHA_MIN, PSSILU_BETA_MAX
from .attacks import AttackSpec, default_linf, pgd
from .data import Dataset
from .nnet import Network
from .seeding import derive_seed, substream

METHODS = ("standard", "pgd_at", "trades")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "pgd_at"
    epochs: int = 20
    batch_size: int = 40
    lr0: float = 0.1
    attack: AttackSpec = field(default_factory=default_linf)
    trades_beta: float = 0.6
    lambda_beta: float = 10.0
    beta_grad_clip: float = 0.01
    seed: int = 12345
    eval_attack: AttackSpec | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown training method {self.method!r}; choose from {METHODS}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr0 < 0 or self.lambda_beta < 0 or self.beta_grad_clip <= 0:
            raise ValueError("lr0, lambda_beta must be >= 0 and beta_grad_clip > 0")
        if self.eval_attack is None:
            object.__setattr__(self, "eval_attack", self.attack)


def cosine_lr(t: int, total: int, lr0: float) -> float:
    """Cosine-annealed rate: lr0 at t=0, lr0/2 halfway, 0 at t=total."""
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside schedule range [0, {total}]")
    return lr0 * (1.0 + math.cos(math.pi * t / total)) / 2.0


def clip_beta_grad(grad: float, max_norm: float = 0.01) -> float:
    """Rescale a scalar gradient onto the max_norm ball, preserving sign."""
    g = float(grad)
    mag = abs(g)
    if mag <= max_norm or mag == 0.0:
        return g
    return g * (max_norm / mag)


def paf_regularizer(family: str, beta: T.Tensor | None, lambda_beta: float) -> T.Tensor:
    """lambda * |beta| for pssilu, zero otherwise; |.| has zero subgradient at 0."""
    if family == "pssilu" and beta is not None:
        return beta.abs() * lambda_beta
    return T.Tensor(0.0)


def sgd_step(net: Network, lr: float) -> None:
    """theta <- theta - lr * grad, then clamp shape params into their domain."""
    for name, t in net.learnable_parameters():
        if t.grad is None:
            raise ValueError(f"missing gradient on learnable parameter {name}")
        t.data = t.data - lr * t.grad
    _clamp_paf(net)


def _clamp_paf(net: Network) -> None:
    fam = net.activation.family
    alpha = net.paf_params.get("alpha")
    beta = net.paf_params.get("beta")
    if fam == "psoftplus" and alpha is not None:
        alpha.data = np.maximum(alpha.data, PSOFTPLUS_ALPHA_MIN)
    if fam == "pssilu":
        if alpha is not None:
            alpha.data = np.maximum(alpha.data, PSSILU_ALPHA_MIN)
        if beta is not None:
            beta.data = np.clip(beta.data, 0.0, PSSILU_BETA_MAX)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _step_on_loss(net: Network, loss: T.Tensor, cfg: TrainConfig, lr: float) -> None:
    net.zero_grad()
    loss.backward()
    beta = net.paf_params.get("beta")
    if beta is not None and beta.requires_grad and beta.grad is not None:
        beta.grad = np.asarray(clip_beta_grad(float(beta.grad), cfg.beta_grad_clip))
    sgd_step(net, lr)


def _epoch(net: Network, train: Dataset, cfg: TrainConfig, epoch: int, lr: float) -> dict:
    """One pass over the data with the configured objective."""
    data_rng = substream(cfg.seed, "data", epoch)
    beta = net.paf_params.get("beta")
    losses, correct, seen = [], 0, 0
    for b, idx in enumerate(_batches(len(train), cfg.batch_size, data_rng)):
        xb, yb = train.x[idx], train.y[idx]
        attack_seed = derive_seed(cfg.seed, epoch, b)
        if cfg.method == "standard":
            logits = net.forward(T.Tensor(xb))
            loss = T.softmax_cross_entropy(logits, yb)
        elif cfg.method == "pgd_at":
            xa = pgd(net, xb, yb, cfg.attack, seed=attack_seed)
            logits = net.forward(T.Tensor(xa))
            loss = T.softmax_cross_entropy(logits, yb)
        else:  # trades
            with net.frozen():
                clean_logits = net.forward(T.Tensor(xb)).data
            logits = net.forward(T.Tensor(xb))
            loss = T.softmax_cross_entropy(logits, yb)
            if cfg.trades_beta != 0.0:
                xa = pgd(net, xb, yb, cfg.attack, seed=attack_seed, kl_target=clean_logits)
                loss = loss + T.kl_divergence(net.forward(T.Tensor(xa)), logits) * cfg.trades_beta
        loss = loss + paf_regularizer(net.activation.family, beta, cfg.lambda_beta)
        _step_on_loss(net, loss, cfg, lr)
        losses.append(loss.item())
        correct += int((np.argmax(logits.data, axis=1) == yb).sum())
        seen += len(idx)
    return {"loss": float(np.mean(losses)), "train_acc": correct / seen}


def pgd_at_epoch(net: Network, train: Dataset, cfg: TrainConfig,
                 epoch: int = 0, lr: float | None = None) -> dict:
    if cfg.method != "pgd_at":
        raise ValueError(f"pgd_at_epoch requires method 'pgd_at', got {cfg.method!r}")
    return _epoch(net, train, cfg, epoch, cfg.lr0 if lr is None else lr)


def trades_epoch(net: Network, train: Dataset, cfg: TrainConfig,
                 epoch: int = 0, lr: float | None = None) -> dict:
    if cfg.method != "trades":
        raise ValueError(f"trades_epoch requires method 'trades', got {cfg.method!r}")
    return _epoch(net, train, cfg, epoch, cfg.lr0 if lr is None else lr)


def _accuracy(net: Network, ds: Dataset) -> float:
    return float(np.mean(net.predict(ds.x) == ds.y))


def _attacked_accuracy(net: Network, ds: Dataset, spec: AttackSpec, seed: int) -> float:
    if spec.epsilon == 0.0:
        return _accuracy(net, ds)
    xa = pgd(net, ds.x, ds.y, spec, seed=seed)
    return float(np.mean(net.predict(xa) == ds.y))


def train(net: Network, train_ds: Dataset, test_ds: Dataset,
          cfg: TrainConfig) -> tuple[Network, list[dict], dict]:
    """Full run with cosine schedule; keeps the best checkpoint by test accuracy.

    Selection uses attacked test accuracy (clean accuracy for standard
    training).  History records one row per epoch including the current
    shape parameter values.
    """
    history: list[dict] = []
    best_state, best_score = None, -1.0
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr0)
        metrics = _epoch(net, train_ds, cfg, epoch, lr)
        clean_acc = _accuracy(net, test_ds)
        pgd_acc = _attacked_accuracy(net, test_ds, cfg.eval_attack, derive_seed(cfg.seed, epoch))
        spec = net.current_spec()
        history.append({"epoch": epoch, "lr": lr, "clean_acc": clean_acc, "pgd_acc": pgd_acc,
                        "loss": metrics["loss"],
                        "alpha": spec.alpha if spec.alpha is not None else "",
                        "beta": spec.beta if spec.family == "pssilu" else ""})
        score = clean_acc if cfg.method == "standard" else pgd_acc
        if score > best_score:
            best_score = score
            best_state = {"state": net.state_dict(), "epoch": epoch,
                          "clean_acc": clean_acc, "pgd_acc": pgd_acc}
    return net, history, best_state


HISTORY_COLUMNS = ("epoch", "lr", "clean_acc", "pgd_acc", "loss", "alpha", "beta")


def history_to_csv(history: list[dict], path) -> None:
    with open(path, "w") as f:
        f.write(",".join(HISTORY_COLUMNS) + "\n")
        for row in history:
            f.write(",".join(_cell(row[c]) for c in HISTORY_COLUMNS) + "\n")


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def restore_best(net: Network, best_state: dict) -> Network:
    net.load_state_dict(best_state["state"])
    return net


def standard_config(**overrides) -> TrainConfig:
    base = TrainConfig(method="standard",
                       attack=replace(default_linf(), epsilon=0.0))
    return replace(base, **overrides) if overrides else base
