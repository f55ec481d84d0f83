"""Small feed-forward networks with one activation shape shared by every site.

A network owns its weight tensors plus at most two extra scalars: the
activation's alpha (and beta for pssilu).  Those scalars are read by every
activation site, so their gradients are the sum over all sites.
"""

from __future__ import annotations

import json
from contextlib import contextmanager

import numpy as np

from . import tensor as T
from .activations import (ANCHOR_ALPHA, PARAMETRIC, ActivationSpec, apply_activation)
from .seeding import substream

CHECKPOINT_VERSION = 1


class Dense:
    def __init__(self, weight: T.Tensor, bias: T.Tensor):
        self.weight = weight
        self.bias = bias

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return (x @ self.weight) + self.bias.broadcast_rows(x.shape[0])

    def named_tensors(self):
        return [("weight", self.weight), ("bias", self.bias)]


class Conv:
    def __init__(self, kernel: T.Tensor, bias: T.Tensor, stride: int, padding: int):
        self.kernel = kernel
        self.bias = bias
        self.stride = stride
        self.padding = padding

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.conv2d(x, self.kernel, self.bias, stride=self.stride, padding=self.padding)

    def named_tensors(self):
        return [("kernel", self.kernel), ("bias", self.bias)]


class Flatten:
    def __call__(self, x: T.Tensor) -> T.Tensor:
        return x.reshape((x.shape[0], -1))

    def named_tensors(self):
        return []


class ActivationSite:
    """Marker layer; the network applies its shared activation here."""

    def named_tensors(self):
        return []


class Network:
    def __init__(self, layers: list, activation: ActivationSpec, architecture: dict):
        self.layers = layers
        self.activation = activation
        self.architecture = architecture
        self.paf_params: dict[str, T.Tensor] = {}
        if activation.family in PARAMETRIC:
            self.paf_params["alpha"] = T.Tensor(activation.alpha, requires_grad=activation.alpha_learnable)
        if activation.family == "pssilu":
            self.paf_params["beta"] = T.Tensor(activation.beta, requires_grad=activation.beta_learnable)

    # -- forward ---------------------------------------------------------

    def forward(self, x, collect_preacts: list | None = None) -> T.Tensor:
        h = x if isinstance(x, T.Tensor) else T.Tensor(x)
        alpha = self.paf_params.get("alpha")
        beta = self.paf_params.get("beta")
        for layer in self.layers:
            if isinstance(layer, ActivationSite):
                if collect_preacts is not None:
                    collect_preacts.append(h.data.copy())
                h = apply_activation(h, self.activation.family, alpha, beta)
            else:
                h = layer(h)
        return h

    def predict(self, x) -> np.ndarray:
        with self.frozen():
            logits = self.forward(x)
        return np.argmax(logits.data, axis=1)

    # -- parameter access --------------------------------------------------

    def theta_parameters(self) -> list[tuple[str, T.Tensor]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, t in layer.named_tensors():
                out.append((f"layers.{i}.{name}", t))
        return out

    def paf_parameters(self) -> list[tuple[str, T.Tensor]]:
        return [(f"paf.{k}", t) for k, t in self.paf_params.items()]

    def parameters(self) -> list[tuple[str, T.Tensor]]:
        return self.theta_parameters() + self.paf_parameters()

    def learnable_parameters(self) -> list[tuple[str, T.Tensor]]:
        return [(n, t) for n, t in self.parameters() if t.requires_grad]

    def parameter_counts(self) -> tuple[int, int]:
        """(total theta scalars, learnable activation scalars)."""
        n_theta = sum(t.size for _, t in self.theta_parameters())
        n_paf = sum(1 for _, t in self.paf_parameters() if t.requires_grad)
        return n_theta, n_paf

    def zero_grad(self):
        for _, t in self.parameters():
            t.zero_grad()

    @contextmanager
    def frozen(self):
        """Temporarily stop gradient tracking on all parameters."""
        tensors = [t for _, t in self.parameters()]
        saved = [t.requires_grad for t in tensors]
        for t in tensors:
            t.requires_grad = False
        try:
            yield self
        finally:
            for t, flag in zip(tensors, saved):
                t.requires_grad = flag

    def current_spec(self) -> ActivationSpec:
        """The activation spec with the parameters' current learned values."""
        spec = self.activation
        if "alpha" in self.paf_params:
            spec = spec.with_params(alpha=float(self.paf_params["alpha"].data))
        if "beta" in self.paf_params:
            spec = spec.with_params(beta=float(self.paf_params["beta"].data))
        return spec

    # -- persistence --------------------------------------------------------

    def state_dict(self) -> dict:
        spec = self.current_spec()
        state = {
            "format_version": CHECKPOINT_VERSION,
            "architecture": self.architecture,
            "activation": {
                "family": spec.family,
                "alpha": spec.alpha,
                "beta": spec.beta,
                "alpha_learnable": spec.alpha_learnable,
                "beta_learnable": spec.beta_learnable,
            },
            "paf.alpha": spec.alpha if "alpha" in self.paf_params else None,
            "paf.beta": spec.beta if "beta" in self.paf_params else None,
            "tensors": {
                name: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
                for name, t in self.theta_parameters()
            },
        }
        return state

    def load_state_dict(self, state: dict):
        if state.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {state.get('format_version')!r}")
        tensors = dict(self.theta_parameters())
        for name, entry in state["tensors"].items():
            if name not in tensors:
                raise ValueError(f"checkpoint tensor {name!r} not present in this architecture")
            data = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            if data.shape != tensors[name].data.shape:
                raise ValueError(f"checkpoint tensor {name!r} has shape {data.shape}, "
                                 f"expected {tensors[name].data.shape}")
            tensors[name].data = data
        if state["paf.alpha"] is not None and "alpha" in self.paf_params:
            self.paf_params["alpha"].data = np.asarray(state["paf.alpha"], dtype=np.float64)
        if state["paf.beta"] is not None and "beta" in self.paf_params:
            self.paf_params["beta"].data = np.asarray(state["paf.beta"], dtype=np.float64)

    def save_checkpoint(self, path):
        with open(path, "w") as f:
            json.dump(self.state_dict(), f, sort_keys=True)
            f.write("\n")


def load_checkpoint(path) -> Network:
    with open(path) as f:
        state = json.load(f)
    arch = state["architecture"]
    act = state["activation"]
    spec = ActivationSpec(family=act["family"], alpha=act["alpha"], beta=act["beta"] or 0.0,
                          alpha_learnable=act["alpha_learnable"], beta_learnable=act["beta_learnable"])
    if arch["kind"] == "mlp":
        net = build_mlp(arch["dims"], spec, seed=0)
    elif arch["kind"] == "cnn":
        net = build_cnn(tuple(arch["channels"]), arch["kernel"], arch["classes"], spec, seed=0,
                        in_channels=arch["in_channels"], in_hw=arch["in_hw"],
                        stride=arch["stride"], padding=arch["padding"])
    else:
        raise ValueError(f"unknown architecture kind {arch['kind']!r}")
    net.load_state_dict(state)
    return net


# -- builders -----------------------------------------------------------------


def _uniform(rng: np.random.Generator, shape, fan_in: int, requires_grad=True) -> T.Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return T.Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=requires_grad)


def build_mlp(dims: list[int], activation: ActivationSpec, seed: int = 0) -> Network:
    """Dense/activation alternation ending in a linear logits layer."""
    if len(dims) < 2:
        raise ValueError(f"an MLP needs at least input and output dims, got {dims}")
    if any(d <= 0 for d in dims):
        raise ValueError(f"dims must be positive, got {dims}")
    rng = substream(seed, "init")
    layers: list = []
    for i in range(len(dims) - 1):
        w = _uniform(rng, (dims[i], dims[i + 1]), fan_in=dims[i])
        b = _uniform(rng, (dims[i + 1],), fan_in=dims[i])
        layers.append(Dense(w, b))
        if i < len(dims) - 2:
            layers.append(ActivationSite())
    return Network(layers, activation, {"kind": "mlp", "dims": list(dims)})


def build_cnn(channels: tuple[int, int], kernel: int, classes: int, activation: ActivationSpec,
              seed: int = 0, in_channels: int = 1, in_hw: int = 8,
              stride: int = 1, padding: int = 0) -> Network:
    """Two conv blocks with shared activation, then a dense head."""
    if min(channels) <= 0 or kernel <= 0 or classes <= 0:
        raise ValueError(f"channels/kernel/classes must be positive, got {channels}, {kernel}, {classes}")
    rng = substream(seed, "init")

    def conv_out(hw):
        out = (hw + 2 * padding - kernel) // stride + 1
        if out < 1:
            raise ValueError(f"kernel {kernel} does not fit input of size {hw} "
                             f"with stride {stride}, padding {padding}")
        return out

    c1, c2 = channels
    h1 = conv_out(in_hw)
    h2 = conv_out(h1)
    flat = c2 * h2 * h2
    layers = [
        Conv(_uniform(rng, (c1, in_channels, kernel, kernel), fan_in=in_channels * kernel * kernel),
             _uniform(rng, (c1,), fan_in=in_channels * kernel * kernel), stride, padding),
        ActivationSite(),
        Conv(_uniform(rng, (c2, c1, kernel, kernel), fan_in=c1 * kernel * kernel),
             _uniform(rng, (c2,), fan_in=c1 * kernel * kernel), stride, padding),
        ActivationSite(),
        Flatten(),
        Dense(_uniform(rng, (flat, classes), fan_in=flat),
              _uniform(rng, (classes,), fan_in=flat)),
    ]
    arch = {"kind": "cnn", "channels": list(channels), "kernel": kernel, "classes": classes,
            "in_channels": in_channels, "in_hw": in_hw, "stride": stride, "padding": padding}
    return Network(layers, activation, arch)


def init_to_nonparametric(net: Network) -> None:
    """Reset learned shape parameters to the family's nonparametric anchor."""
    if "alpha" in net.paf_params:
        net.paf_params["alpha"].data = np.asarray(ANCHOR_ALPHA[net.activation.family], dtype=np.float64)
    if "beta" in net.paf_params:
        net.paf_params["beta"].data = np.asarray(0.0, dtype=np.float64)
