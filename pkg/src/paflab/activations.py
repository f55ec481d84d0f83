"""Activation function zoo: nonparametric anchors and their parametric extensions.

Eleven families.  The parametric ones carry a scalar shape parameter alpha
(plus beta for PSSiLU) that can be learned jointly with network weights:

====================  =============================================  ==========
family                formula                                        anchor
====================  =============================================  ==========
relu                  max(x, 0)                                      --
elu                   x if x>0 else exp(x)-1                         --
silu                  x*sigmoid(x)                                   --
softplus              log(1+exp(x))                                  --
prelu                 x if x>0 else alpha*x                          alpha=0
pelu                  x if x>0 else alpha*(exp(x)-1)                 alpha=1
psilu                 x*sigmoid(alpha*x)                             alpha=1
psoftplus             log(1+exp(alpha*x))/alpha                      alpha=1
prelu_plus            alpha*x if x>0 else 0                          alpha=1
reblu                 alpha*(sqrt(x^2+1)-1)+x if x>0 else 0          alpha=0
pssilu                x*(sigmoid(alpha*x)-beta)/(1-beta)             alpha=1, beta=0
====================  =============================================  ==========

Forward values, first and second derivatives, and the parameter derivatives
are all analytic.  Piecewise families define the derivative at the kink
x=0 as 0 so every computation is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .tensor import Tensor, accumulate_grad, stable_sigmoid

FAMILIES = ("relu", "elu", "silu", "softplus", "prelu", "pelu", "psilu",
            "psoftplus", "prelu_plus", "reblu", "pssilu")

NONPARAMETRIC = ("relu", "elu", "silu", "softplus")
PARAMETRIC = ("prelu", "pelu", "psilu", "psoftplus", "prelu_plus", "reblu", "pssilu")

# families whose definition switches branches at x = 0
PIECEWISE = ("relu", "elu", "prelu", "pelu", "prelu_plus", "reblu")

# parameter values at which each parametric family equals its anchor shape
ANCHOR_ALPHA = {"prelu": 0.0, "pelu": 1.0, "psilu": 1.0, "psoftplus": 1.0,
                "prelu_plus": 1.0, "reblu": 0.0, "pssilu": 1.0}
ANCHOR_FAMILY = {"prelu": "relu", "pelu": "elu", "psilu": "silu", "psoftplus": "softplus",
                 "prelu_plus": "relu", "reblu": "relu", "pssilu": "silu"}

PSOFTPLUS_ALPHA_MIN = 0.05   # 1/alpha prefactor diverges as alpha -> 0
PSSILU_BETA_MAX = 0.99       # denominator 1 - beta must stay away from 0
PSSILU_ALPHA_MIN = 1e-6


@dataclass(frozen=True)
class ActivationSpec:
    """One activation family plus its parameter values and learnability flags."""

    family: str
    alpha: float | None = None
    beta: float = 0.0
    alpha_learnable: bool = False
    beta_learnable: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown activation family {self.family!r}; choose from {FAMILIES}")
        if self.family in NONPARAMETRIC:
            if self.alpha_learnable or self.beta_learnable:
                raise ValueError(f"{self.family} has no learnable parameters")
            object.__setattr__(self, "alpha", None)
            object.__setattr__(self, "beta", 0.0)
            return
        if self.alpha is None:
            object.__setattr__(self, "alpha", ANCHOR_ALPHA[self.family])
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))
        if self.family != "pssilu" and self.beta_learnable:
            raise ValueError(f"{self.family} has no beta parameter")
        if self.family == "psoftplus" and self.alpha < PSOFTPLUS_ALPHA_MIN:
            raise ValueError(f"psoftplus alpha must be >= {PSOFTPLUS_ALPHA_MIN}, got {self.alpha}")
        if self.family == "pssilu":
            if self.alpha <= 0:
                raise ValueError(f"pssilu alpha must be positive, got {self.alpha}")
            if not 0.0 <= self.beta <= PSSILU_BETA_MAX:
                raise ValueError(f"pssilu beta must lie in [0, {PSSILU_BETA_MAX}], got {self.beta}")

    @property
    def learnable_count(self) -> int:
        return int(self.alpha_learnable) + int(self.beta_learnable)

    def with_params(self, alpha: float | None = None, beta: float | None = None) -> "ActivationSpec":
        out = self
        if alpha is not None:
            out = replace(out, alpha=alpha)
        if beta is not None:
            out = replace(out, beta=beta)
        return out


def anchored(spec: ActivationSpec) -> ActivationSpec:
    """The same spec with parameters reset to the nonparametric anchor shape."""
    if spec.family in NONPARAMETRIC:
        return spec
    beta = 0.0 if spec.family == "pssilu" else spec.beta
    return replace(spec, alpha=ANCHOR_ALPHA[spec.family], beta=beta)


# -- analytic kernels ------------------------------------------------------
# each takes (x, alpha, beta) arrays/floats and returns an array like x


def _softplus(z: np.ndarray) -> np.ndarray:
    # log(1+exp(z)) with asymptotic branches beyond |z| = 30
    mid = np.log1p(np.exp(np.clip(z, -30.0, 30.0)))
    tail = np.exp(-np.abs(z))
    return np.where(z > 30.0, z + tail, np.where(z < -30.0, tail, mid))


def _sig_d(z):
    s = stable_sigmoid(z)
    return s * (1.0 - s)


def _sig_d2(z):
    s = stable_sigmoid(z)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


def _zero_at_kink(x, d):
    return np.where(x == 0.0, 0.0, d)


def _value(family, x, a, b):
    if family == "relu":
        return np.maximum(x, 0.0)
    if family == "elu":
        return np.where(x > 0, x, np.exp(np.minimum(x, 0.0)) - 1.0)
    if family == "silu":
        return x * stable_sigmoid(x)
    if family == "softplus":
        return _softplus(x)
    if family == "prelu":
        return np.where(x > 0, x, a * x)
    if family == "pelu":
        return np.where(x > 0, x, a * (np.exp(np.minimum(x, 0.0)) - 1.0))
    if family == "psilu":
        return x * stable_sigmoid(a * x)
    if family == "psoftplus":
        return _softplus(a * x) / a
    if family == "prelu_plus":
        return np.where(x > 0, a * x, 0.0)
    if family == "reblu":
        r = np.sqrt(x * x + 1.0)
        return np.where(x > 0, a * (r - 1.0) + x, 0.0)
    # pssilu
    return x * (stable_sigmoid(a * x) - b) / (1.0 - b)


def _dx(family, x, a, b):
    if family == "relu":
        return (x > 0).astype(np.float64)
    if family == "elu":
        return _zero_at_kink(x, np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0))))
    if family == "silu":
        return stable_sigmoid(x) + x * _sig_d(x)
    if family == "softplus":
        return stable_sigmoid(x)
    if family == "prelu":
        return _zero_at_kink(x, np.where(x > 0, 1.0, a))
    if family == "pelu":
        return _zero_at_kink(x, np.where(x > 0, 1.0, a * np.exp(np.minimum(x, 0.0))))
    if family == "psilu":
        return stable_sigmoid(a * x) + a * x * _sig_d(a * x)
    if family == "psoftplus":
        return stable_sigmoid(a * x)
    if family == "prelu_plus":
        return np.where(x > 0, a, 0.0)
    if family == "reblu":
        r = np.sqrt(x * x + 1.0)
        return np.where(x > 0, a * x / r + 1.0, 0.0)
    s = stable_sigmoid(a * x)
    return ((s - b) + a * x * _sig_d(a * x)) / (1.0 - b)


def _d2x(family, x, a, b):
    if family in ("relu", "prelu", "prelu_plus"):
        return np.zeros_like(x)
    if family == "elu":
        return np.where(x < 0, np.exp(np.minimum(x, 0.0)), 0.0)
    if family == "silu":
        return 2.0 * _sig_d(x) + x * _sig_d2(x)
    if family == "softplus":
        return _sig_d(x)
    if family == "pelu":
        return np.where(x < 0, a * np.exp(np.minimum(x, 0.0)), 0.0)
    if family == "psilu":
        return 2.0 * a * _sig_d(a * x) + a * a * x * _sig_d2(a * x)
    if family == "psoftplus":
        return a * _sig_d(a * x)
    if family == "reblu":
        return np.where(x > 0, a * (x * x + 1.0) ** -1.5, 0.0)
    return (2.0 * a * _sig_d(a * x) + a * a * x * _sig_d2(a * x)) / (1.0 - b)


def _dalpha(family, x, a, b):
    if family == "prelu":
        return np.where(x <= 0, x, 0.0)
    if family == "pelu":
        return np.where(x <= 0, np.exp(np.minimum(x, 0.0)) - 1.0, 0.0)
    if family == "psilu":
        return x * x * _sig_d(a * x)
    if family == "psoftplus":
        return (x * stable_sigmoid(a * x) - _softplus(a * x) / a) / a
    if family == "prelu_plus":
        return np.where(x > 0, x, 0.0)
    if family == "reblu":
        return np.where(x > 0, np.sqrt(x * x + 1.0) - 1.0, 0.0)
    if family == "pssilu":
        return x * x * _sig_d(a * x) / (1.0 - b)
    raise ValueError(f"{family} has no alpha parameter")


def _dbeta(family, x, a, b):
    if family != "pssilu":
        raise ValueError(f"{family} has no beta parameter")
    return x * (stable_sigmoid(a * x) - 1.0) / (1.0 - b) ** 2


def _params(spec: ActivationSpec) -> tuple[float, float]:
    a = 0.0 if spec.alpha is None else float(spec.alpha)
    return a, float(spec.beta)


# -- public evaluation API -------------------------------------------------


def paf_values(spec: ActivationSpec, x: np.ndarray) -> np.ndarray:
    """Elementwise forward value on a plain array."""
    a, b = _params(spec)
    return _value(spec.family, np.asarray(x, dtype=np.float64), a, b)


def paf_derivative(spec: ActivationSpec, x: np.ndarray) -> np.ndarray:
    """Analytic d/dx; piecewise families return 0 exactly at the kink x=0."""
    a, b = _params(spec)
    return _dx(spec.family, np.asarray(x, dtype=np.float64), a, b)


def paf_second_derivative(spec: ActivationSpec, x: np.ndarray) -> np.ndarray:
    """Analytic second derivative; rejects kink points of piecewise families."""
    x = np.asarray(x, dtype=np.float64)
    if spec.family in PIECEWISE and np.any(x == 0.0):
        raise ValueError(f"{spec.family} second derivative is undefined at the kink x=0")
    a, b = _params(spec)
    return _d2x(spec.family, x, a, b)


def paf_parameter_derivatives(spec: ActivationSpec, x: np.ndarray) -> dict[str, np.ndarray]:
    """Analytic derivatives with respect to each shape parameter."""
    x = np.asarray(x, dtype=np.float64)
    a, b = _params(spec)
    out = {}
    if spec.family in PARAMETRIC:
        out["alpha"] = _dalpha(spec.family, x, a, b)
    if spec.family == "pssilu":
        out["beta"] = _dbeta(spec.family, x, a, b)
    return out


def curvature(spec: ActivationSpec, lo: float = -10.0, hi: float = 10.0, n: int = 2001) -> float:
    """Maximum second derivative over a uniform grid.

    Piecewise families require a grid that skips the kink at 0 (use an even
    point count over a symmetric interval).
    """
    if n < 2:
        raise ValueError(f"curvature grid needs at least 2 points, got {n}")
    grid = np.linspace(lo, hi, n)
    return float(np.max(paf_second_derivative(spec, grid)))


def identity_reduction_check(spec_a: ActivationSpec, spec_b: ActivationSpec,
                             lo: float = -10.0, hi: float = 10.0, n: int = 2001) -> float:
    """Max absolute forward gap between two specs over a uniform grid."""
    grid = np.linspace(lo, hi, n)
    return float(np.max(np.abs(paf_values(spec_a, grid) - paf_values(spec_b, grid))))


def shape_series(spec: ActivationSpec, lo: float = -5.0, hi: float = 5.0,
                 n: int = 2001) -> tuple[np.ndarray, np.ndarray]:
    """(x, f(x)) samples for shape export and plotting."""
    grid = np.linspace(lo, hi, n)
    return grid, paf_values(spec, grid)


# -- autodiff integration ----------------------------------------------------


def apply_activation(x: Tensor, family: str, alpha: Tensor | None = None,
                     beta: Tensor | None = None) -> Tensor:
    """Apply a family elementwise as one graph node.

    Backward uses the analytic input derivative, and sums the analytic
    parameter derivatives into alpha/beta so parameters shared across many
    activation sites accumulate all site contributions.
    """
    a = float(alpha.data) if alpha is not None else 0.0
    b = float(beta.data) if beta is not None else 0.0
    parents = tuple(t for t in (x, alpha, beta) if t is not None)
    out = Tensor(_value(family, x.data, a, b), _parents=parents, op=f"paf[{family}]")
    out.requires_grad = any(t.requires_grad for t in parents)

    def _bw(g):
        accumulate_grad(x, g * _dx(family, x.data, a, b))
        if alpha is not None and alpha.requires_grad:
            accumulate_grad(alpha, np.sum(g * _dalpha(family, x.data, a, b)))
        if beta is not None and beta.requires_grad:
            accumulate_grad(beta, np.sum(g * _dbeta(family, x.data, a, b)))

    out._backward = _bw
    return out


def paf_forward(spec: ActivationSpec, x: Tensor) -> Tensor:
    """Graph-aware forward with the spec's parameters held constant."""
    alpha = Tensor(spec.alpha) if spec.family in PARAMETRIC else None
    beta = Tensor(spec.beta) if spec.family == "pssilu" else None
    return apply_activation(x, spec.family, alpha, beta)
