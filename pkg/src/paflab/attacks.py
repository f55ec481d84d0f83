"""White-box and black-box adversaries plus minimum-radius search.

All attacks return points that satisfy their norm budget (within 1e-9) and
the clip range.  Randomness is per sample: sample i of a run seeded s draws
from a generator keyed by s XOR i, so attacks on distinct samples are
independent and reproducible in any order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .data import Dataset
from .nnet import Network
from .seeding import per_sample_rng

FAMILIES = ("fgsm", "pgd_linf", "pgd_l2", "square_search", "min_radius")

_DEFAULT_STEP = {"pgd_linf": 0.0078, "pgd_l2": 0.075}


@dataclass(frozen=True)
class AttackSpec:
    family: str
    epsilon: float
    step_size: float | None = None
    steps: int = 10
    restarts: int = 1
    query_budget: int = 1000
    clip_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown attack family {self.family!r}; choose from {FAMILIES}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.steps < 1 or self.restarts < 1 or self.query_budget < 1:
            raise ValueError("steps, restarts and query_budget must all be >= 1")
        if self.clip_range[0] >= self.clip_range[1]:
            raise ValueError(f"clip range must satisfy lo < hi, got {self.clip_range}")
        if self.step_size is None:
            object.__setattr__(self, "step_size", _DEFAULT_STEP.get(self.family, self.epsilon))


def default_linf() -> AttackSpec:
    return AttackSpec("pgd_linf", epsilon=0.031, step_size=0.0078, steps=10)


def default_l2() -> AttackSpec:
    return AttackSpec("pgd_l2", epsilon=0.5, step_size=0.075, steps=10)


def scaled_step(epsilon: float, steps: int) -> float:
    """Step size proportional to the budget, reaching any ball point."""
    return 2.5 * epsilon / steps


# -- gradient and loss helpers ---------------------------------------------


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def per_sample_ce(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    logp = _log_softmax(logits)
    return -logp[np.arange(logits.shape[0]), np.asarray(y, dtype=np.int64)]


def per_sample_kl(p_logits: np.ndarray, q_logits: np.ndarray) -> np.ndarray:
    logp = _log_softmax(p_logits)
    logq = _log_softmax(q_logits)
    return (np.exp(logp) * (logp - logq)).sum(axis=1)


def _input_grad(net: Network, x: np.ndarray, y: np.ndarray,
                kl_target: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """(per-sample loss values, gradient of the batch loss wrt x)."""
    xt = T.Tensor(x, requires_grad=True)
    with net.frozen():
        logits = net.forward(xt)
        if kl_target is None:
            loss = T.softmax_cross_entropy(logits, y)
            values = per_sample_ce(logits.data, y)
        else:
            loss = T.kl_divergence(logits, T.Tensor(kl_target))
            values = per_sample_kl(logits.data, kl_target)
        loss.backward()
    return values, xt.grad


# -- projections --------------------------------------------------------------


def project_linf(x: np.ndarray, x0: np.ndarray, eps: float) -> np.ndarray:
    return x0 + np.clip(x - x0, -eps, eps)


def project_l2(x: np.ndarray, x0: np.ndarray, eps: float) -> np.ndarray:
    delta = _flat(x - x0)
    norms = np.linalg.norm(delta, axis=1, keepdims=True)
    scale = np.where(norms > eps, eps / np.maximum(norms, 1e-300), 1.0)
    return x0 + (delta * scale).reshape(x.shape)


# -- white-box attacks -----------------------------------------------------------


def fgsm(net: Network, x: np.ndarray, y: np.ndarray, eps: float,
         clip_range: tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
    """Single signed-gradient step; sign(0) = 0 so a flat loss leaves x unchanged."""
    _, g = _input_grad(net, x, y, None)
    return np.clip(x + eps * np.sign(g), clip_range[0], clip_range[1])


def pgd(net: Network, x: np.ndarray, y: np.ndarray, spec: AttackSpec, seed: int = 0,
        kl_target: np.ndarray | None = None) -> np.ndarray:
    """Projected gradient ascent on the classification loss (or a KL surrogate).

    Random start uniform in the ball, one fresh start per restart.  Per
    sample the returned iterate prefers a misclassifying restart, then the
    one with the highest loss, so a point survives only if every restart
    failed.
    """
    if spec.family not in ("pgd_linf", "pgd_l2"):
        raise ValueError(f"pgd requires family pgd_linf or pgd_l2, got {spec.family!r}")
    x0 = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = x0.shape[0]
    lo, hi = spec.clip_range
    eps, step = spec.epsilon, spec.step_size
    rngs = [per_sample_rng(seed, i) for i in range(n)]
    d = x0[0].size

    best_x = x0.copy()
    best_val = np.full(n, -np.inf)
    best_hit = np.zeros(n, dtype=bool)

    for _ in range(spec.restarts):
        if spec.family == "pgd_linf":
            noise = np.stack([rng.uniform(-eps, eps, size=x0.shape[1:]) for rng in rngs])
        else:
            noise = np.empty_like(x0)
            for i, rng in enumerate(rngs):
                u = rng.standard_normal(d)
                r = eps * rng.uniform() ** (1.0 / d)
                nrm = np.linalg.norm(u)
                noise[i] = (r * u / nrm).reshape(x0.shape[1:]) if nrm > 0 else 0.0
        xa = np.clip(x0 + noise, lo, hi)
        for _ in range(spec.steps):
            _, g = _input_grad(net, xa, y, kl_target)
            if spec.family == "pgd_linf":
                xa = project_linf(xa + step * np.sign(g), x0, eps)
            else:
                gn = np.linalg.norm(_flat(g), axis=1).reshape((-1,) + (1,) * (x0.ndim - 1))
                xa = project_l2(xa + step * g / np.maximum(gn, 1e-12), x0, eps)
            xa = np.clip(xa, lo, hi)
        with net.frozen():
            logits = net.forward(xa).data
        vals = per_sample_ce(logits, y) if kl_target is None else per_sample_kl(logits, kl_target)
        hit = np.argmax(logits, axis=1) != y
        better = (hit & ~best_hit) | ((hit == best_hit) & (vals > best_val))
        best_x[better] = xa[better]
        best_val[better] = vals[better]
        best_hit |= hit
    return best_x


class MinRadiusResult(NamedTuple):
    radius: float
    censored: bool


def min_radius_search(net: Network, x: np.ndarray, y: int, attack_steps: int = 4,
                      r_max: float = 0.25, tol: float = 1e-3, seed: int = 0,
                      clip_range: tuple[float, float] = (0.0, 1.0)) -> MinRadiusResult:
    """Smallest L-inf radius at which a fixed seeded PGD flips one sample.

    Bracketed binary search: the attack succeeds at hi and fails at lo
    throughout.  The probe reseeds identically at every radius, so success
    is a deterministic function of the radius.  If even r_max fails the
    result is censored at r_max.
    """
    x = np.asarray(x, dtype=np.float64)
    y = int(y)
    if net.predict(x[None])[0] != y:
        raise ValueError("min_radius_search requires an initially correctly classified sample")

    def flips(eps: float) -> bool:
        if eps <= 0:
            return False
        spec = AttackSpec("pgd_linf", epsilon=eps, step_size=scaled_step(eps, attack_steps),
                          steps=attack_steps, clip_range=clip_range)
        xa = pgd(net, x[None], np.array([y]), spec, seed=seed)
        return net.predict(xa)[0] != y

    if not flips(r_max):
        return MinRadiusResult(r_max, True)
    lo_r, hi_r = 0.0, r_max
    while hi_r - lo_r > tol:
        mid = 0.5 * (lo_r + hi_r)
        if flips(mid):
            hi_r = mid
        else:
            lo_r = mid
    return MinRadiusResult(hi_r, False)


# -- black-box attack -------------------------------------------------------------


class SquareResult(NamedTuple):
    x_adv: np.ndarray
    queries: int
    success: bool


def square_search(net: Network, x: np.ndarray, y: int, eps: float, query_budget: int = 1000,
                  seed: int = 0, clip_range: tuple[float, float] = (0.0, 1.0)) -> SquareResult:
    """Score-based random search over square perturbation patches on one sample.

    Proposes axis-aligned patches set to +/-eps per channel, accepting only
    strict decreases of the logit margin.  Uses forward passes exclusively
    and never exceeds query_budget of them.
    """
    if query_budget < 1:
        raise ValueError(f"query_budget must be >= 1, got {query_budget}")
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape
    if x.ndim == 1:
        img = x.reshape((1, 1, -1))
    elif x.ndim == 2:
        img = x.reshape((1,) + shape)
    else:
        img = x
    c, h, w = img.shape
    lo, hi = clip_range
    rng = per_sample_rng(seed, 0)
    queries = 0

    def margin(candidate: np.ndarray) -> float:
        nonlocal queries
        queries += 1
        with net.frozen():
            logits = net.forward(T.Tensor(candidate.reshape((1,) + shape))).data[0]
        others = np.delete(logits, y)
        return float(logits[y] - others.max())

    side0 = int(np.ceil(0.3 * min(h, w)))
    period = max(1, query_budget // 5)
    delta = np.zeros_like(img)
    m_cur = margin(img.reshape(shape))
    success = m_cur < 0
    while queries < query_budget and not success:
        side = max(1, int(np.ceil(side0 / 2 ** (queries // period))))
        side = min(side, h, w)
        i0 = int(rng.integers(0, h - side + 1))
        j0 = int(rng.integers(0, w - side + 1))
        signs = rng.choice([-eps, eps], size=(c, 1, 1))
        prop = delta.copy()
        prop[:, i0:i0 + side, j0:j0 + side] = signs
        cand = np.clip(img + prop, lo, hi)
        m_new = margin(cand.reshape(shape))
        if m_new < m_cur:
            delta, m_cur = prop, m_new
            success = m_cur < 0
    x_adv = np.clip(img + delta, lo, hi).reshape(shape)
    return SquareResult(x_adv, queries, success)


# -- dataset-level evaluation ---------------------------------------------------


def run_attack(net: Network, dataset: Dataset, spec: AttackSpec, seed: int = 0) -> list[dict]:
    """Per-sample attack records: index, clean_correct, success, queries, r_min, norm."""
    x, y = dataset.x, dataset.y
    clean_correct = net.predict(x) == y
    rows = []

    def base(i):
        return {"index": int(i), "clean_correct": bool(clean_correct[i]),
                "success": False, "queries": None, "r_min": None, "norm": None}

    if spec.family in ("fgsm", "pgd_linf", "pgd_l2"):
        if spec.family == "fgsm":
            xa = fgsm(net, x, y, spec.epsilon, spec.clip_range)
        else:
            xa = pgd(net, x, y, spec, seed=seed)
        preds = net.predict(xa)
        ordv = np.inf if spec.family != "pgd_l2" else 2
        norms = np.linalg.norm(_flat(xa - x), ord=ordv, axis=1)
        for i in range(len(dataset)):
            row = base(i)
            row["success"] = bool(preds[i] != y[i])
            row["norm"] = float(norms[i])
            rows.append(row)
    elif spec.family == "square_search":
        for i in range(len(dataset)):
            row = base(i)
            if clean_correct[i]:
                res = square_search(net, x[i], int(y[i]), spec.epsilon, spec.query_budget,
                                    seed=seed ^ int(i), clip_range=spec.clip_range)
                row["success"] = bool(res.success)
                row["queries"] = int(res.queries)
                row["norm"] = float(np.abs(res.x_adv - x[i]).max())
            rows.append(row)
    elif spec.family == "min_radius":
        for i in range(len(dataset)):
            row = base(i)
            if clean_correct[i]:
                res = min_radius_search(net, x[i], int(y[i]), spec.steps,
                                        r_max=spec.epsilon, seed=seed ^ int(i),
                                        clip_range=spec.clip_range)
                row["r_min"] = float(res.radius)
                row["success"] = not res.censored
            rows.append(row)
    else:
        raise ValueError(f"unknown attack family {spec.family!r}")
    return rows


def robust_accuracy(net: Network, dataset: Dataset, spec: AttackSpec, seed: int = 0) -> float:
    """Fraction of samples still classified correctly after the attack."""
    if spec.family == "min_radius":
        raise ValueError("min_radius measures a radius, not accuracy; "
                         f"use one of {FAMILIES[:-1]}")
    rows = run_attack(net, dataset, spec, seed=seed)
    robust = [r["clean_correct"] and not r["success"] for r in rows]
    return float(np.mean(robust)) if rows else 0.0


def nested_robust_accuracy(net: Network, dataset: Dataset, spec: AttackSpec,
                           eps_list: list[float], seed: int = 0) -> list[float]:
    """Robust accuracy at increasing budgets, carrying successes forward.

    A success inside a smaller ball stays valid in every larger ball, which
    makes the reported sequence non-increasing by construction.
    """
    carried = np.zeros(len(dataset), dtype=bool)
    clean_correct = net.predict(dataset.x) == dataset.y
    accs = []
    for eps in sorted(eps_list):
        cur = AttackSpec(spec.family, epsilon=eps, step_size=spec.step_size, steps=spec.steps,
                         restarts=spec.restarts, query_budget=spec.query_budget,
                         clip_range=spec.clip_range)
        rows = run_attack(net, dataset, cur, seed=seed)
        carried |= np.array([r["success"] for r in rows], dtype=bool)
        accs.append(float(np.mean(clean_correct & ~carried)))
    return accs
