"""Conditional average-velocity MLP u(z, r, t, c).

The network input is the concatenation ``[z, emb(r), emb(t), c]`` where
``emb(s) = [s, sin(w_1 s), cos(w_1 s), ...]``. Hidden layers use a smooth
activation; the output layer is linear. Three passes are provided:

* ``forward``      primal evaluation, optionally recording a trace
* ``forward_jvp``  primal plus a forward-mode tangent w.r.t. (z, r, t)
* ``backward``     reverse-mode parameter gradients of <u, cotangent>

Parameters are immutable; ``adam_step`` returns a fresh ``NetworkParams``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numkit import DomainError, RngState, ShapeError, as_column

CHECKPOINT_FORMAT = "hybridflow.checkpoint/1"

_token_counter = itertools.count(1)


class TraceError(RuntimeError):
    """A forward trace does not belong to the parameters passed to backward."""


# name -> (f, f')
def _silu(a):
    return a / (1.0 + np.exp(-a))


def _silu_prime(a):
    s = 1.0 / (1.0 + np.exp(-a))
    return s * (1.0 + a * (1.0 - s))


def _softplus(a):
    return np.logaddexp(0.0, a)


def _softplus_prime(a):
    return 1.0 / (1.0 + np.exp(-a))


def _tanh_prime(a):
    y = np.tanh(a)
    return 1.0 - y * y


ACTIVATIONS = {
    "silu": (_silu, _silu_prime),
    "softplus": (_softplus, _softplus_prime),
    "tanh": (np.tanh, _tanh_prime),
    "identity": (lambda a: a, lambda a: np.ones_like(a)),
}


@dataclass(frozen=True)
class NetworkArch:
    input_dim: int
    cond_dim: int
    hidden: tuple[int, ...] = (128, 128, 128)
    activation: str = "silu"
    time_embed_dim: int = 8

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1:
            raise DomainError("input_dim must be >= 1")
        if self.cond_dim < 0:
            raise DomainError("cond_dim must be >= 0")
        if len(self.hidden) == 0:
            raise DomainError("at least one hidden layer is required")
        if any(h < 1 for h in self.hidden):
            raise DomainError(f"hidden widths must be >= 1, got {self.hidden}")
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        if self.time_embed_dim < 0 or self.time_embed_dim % 2:
            raise DomainError("time_embed_dim must be a non-negative even number")

    @property
    def frequencies(self) -> np.ndarray:
        return math.pi * np.arange(1, self.time_embed_dim // 2 + 1, dtype=np.float64)

    @property
    def time_features(self) -> int:
        return 1 + self.time_embed_dim

    @property
    def feature_dim(self) -> int:
        return self.input_dim + 2 * self.time_features + self.cond_dim

    @property
    def layer_sizes(self) -> list[tuple[int, int]]:
        dims = [self.feature_dim, *self.hidden, self.input_dim]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "cond_dim": self.cond_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "time_embed_dim": self.time_embed_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkArch":
        return cls(
            input_dim=int(d["input_dim"]),
            cond_dim=int(d["cond_dim"]),
            hidden=tuple(d["hidden"]),
            activation=d.get("activation", "silu"),
            time_embed_dim=int(d.get("time_embed_dim", 8)),
        )


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NetworkParams:
    arch: NetworkArch
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    token: int = field(default_factory=lambda: next(_token_counter), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(_frozen(w) for w in self.weights))
        object.__setattr__(self, "biases", tuple(_frozen(b) for b in self.biases))
        sizes = self.arch.layer_sizes
        if len(self.weights) != len(sizes) or len(self.biases) != len(sizes):
            raise ShapeError("parameter count does not match architecture")
        for (fan_in, fan_out), w, b in zip(sizes, self.weights, self.biases):
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ShapeError(f"layer shape {w.shape}/{b.shape} != ({fan_in}, {fan_out})")
        for a in (*self.weights, *self.biases):
            if not np.all(np.isfinite(a)):
                raise DomainError("non-finite parameter")

    def __call__(self, z, r, t, c) -> np.ndarray:
        return forward(self, z, r, t, c, keep_trace=False)[0]

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def with_flat(self, vec) -> "NetworkParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ShapeError(f"expected {self.size} parameters, got {vec.shape}")
        ws, bs, i = [], [], 0
        for fan_in, fan_out in self.arch.layer_sizes:
            ws.append(vec[i : i + fan_in * fan_out].reshape(fan_in, fan_out))
            i += fan_in * fan_out
            bs.append(vec[i : i + fan_out])
            i += fan_out
        return NetworkParams(self.arch, tuple(ws), tuple(bs))


@dataclass(frozen=True)
class ParamGrads:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)


@dataclass
class ForwardTrace:
    token: int
    features: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]


@dataclass(frozen=True)
class InputTangent:
    """Direction (dz, dr, dt) for forward-mode differentiation.

    ``dz`` is (n, d) or (d,); ``dr`` and ``dt`` are scalars or length-n vectors.
    The MeanFlow training tangent is ``(v, 0, 1)``.
    """

    dz: np.ndarray
    dr: float | np.ndarray = 0.0
    dt: float | np.ndarray = 0.0


def init_params(arch: NetworkArch, rng: RngState, gain: float = 1.0) -> NetworkParams:
    """Weights ~ N(0, gain / fan_in), biases zero."""
    ws, bs = [], []
    for fan_in, fan_out in arch.layer_sizes:
        ws.append(rng.normal((fan_in, fan_out)) * math.sqrt(gain / fan_in))
        bs.append(np.zeros(fan_out))
    return NetworkParams(arch, tuple(ws), tuple(bs))


def zero_params(arch: NetworkArch) -> NetworkParams:
    return NetworkParams(
        arch,
        tuple(np.zeros(s) for s in arch.layer_sizes),
        tuple(np.zeros(s[1]) for s in arch.layer_sizes),
    )


def _check_inputs(arch: NetworkArch, z, r, t, c):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != arch.input_dim:
        raise ShapeError(f"z must be (n, {arch.input_dim}), got {z.shape}")
    n = z.shape[0]
    r = as_column(r, n, name="r")
    t = as_column(t, n, name="t")
    if np.any(r > t):
        raise DomainError("average-velocity interval requires r <= t")
    if np.any(r < 0.0) or np.any(t > 1.0):
        raise DomainError("times must lie in [0, 1]")
    if arch.cond_dim:
        c = np.asarray(c, dtype=np.float64)
        if c.ndim == 1:
            c = np.broadcast_to(c, (n, c.shape[0]))
        if c.shape != (n, arch.cond_dim):
            raise ShapeError(f"c must be (n, {arch.cond_dim}), got {c.shape}")
    else:
        c = np.zeros((n, 0))
    return z, r, t, c


def _embed(arch: NetworkArch, s: np.ndarray) -> np.ndarray:
    w = arch.frequencies
    if w.size == 0:
        return s[:, None]
    ws = s[:, None] * w
    return np.concatenate([s[:, None], np.sin(ws), np.cos(ws)], axis=1)


def _embed_tangent(arch: NetworkArch, s: np.ndarray, ds: np.ndarray) -> np.ndarray:
    w = arch.frequencies
    if w.size == 0:
        return ds[:, None]
    ws = s[:, None] * w
    return np.concatenate(
        [ds[:, None], np.cos(ws) * w * ds[:, None], -np.sin(ws) * w * ds[:, None]], axis=1
    )


def features(arch: NetworkArch, z, r, t, c) -> np.ndarray:
    return np.concatenate([z, _embed(arch, r), _embed(arch, t), c], axis=1)


def forward(params: NetworkParams, z, r, t, c, keep_trace: bool = True):
    """Evaluate u(z, r, t, c). Returns ``(u, trace)``; trace is None if not kept."""
    arch = params.arch
    z, r, t, c = _check_inputs(arch, z, r, t, c)
    act = ACTIVATIONS[arch.activation][0]
    x = features(arch, z, r, t, c)
    h = x
    pre, post = [], []
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        a = h @ w + b
        h = act(a)
        if keep_trace:
            pre.append(a)
            post.append(h)
    u = h @ params.weights[-1] + params.biases[-1]
    trace = ForwardTrace(params.token, x, pre, post) if keep_trace else None
    return u, trace


def forward_jvp(params: NetworkParams, z, r, t, c, tangent: InputTangent, return_trace: bool = False):
    """Primal u and directional derivative du along ``tangent`` in one pass.

    The primal arithmetic is identical to ``forward`` so ``u`` matches it bit
    for bit.
    """
    arch = params.arch
    z, r, t, c = _check_inputs(arch, z, r, t, c)
    n = z.shape[0]
    dz = np.asarray(tangent.dz, dtype=np.float64)
    if dz.ndim == 1:
        dz = np.broadcast_to(dz, z.shape)
    if dz.shape != z.shape:
        raise ShapeError(f"tangent dz must be {z.shape}, got {dz.shape}")
    dr = as_column(tangent.dr, n, name="dr")
    dt = as_column(tangent.dt, n, name="dt")
    act, act_prime = ACTIVATIONS[arch.activation]

    x = features(arch, z, r, t, c)
    dx = np.concatenate(
        [dz, _embed_tangent(arch, r, dr), _embed_tangent(arch, t, dt), np.zeros_like(c)], axis=1
    )
    h, dh = x, dx
    pre, post = [], []
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        a = h @ w + b
        da = dh @ w
        h = act(a)
        dh = act_prime(a) * da
        pre.append(a)
        post.append(h)
    u = h @ params.weights[-1] + params.biases[-1]
    du = dh @ params.weights[-1]
    if return_trace:
        return u, du, ForwardTrace(params.token, x, pre, post)
    return u, du


def backward(params: NetworkParams, trace: ForwardTrace, cotangent) -> ParamGrads:
    """Parameter gradients of sum(u * cotangent) for the traced batch."""
    if trace is None or trace.token != params.token:
        raise TraceError("trace was not produced by these parameters")
    g = np.asarray(cotangent, dtype=np.float64)
    n = trace.features.shape[0]
    if g.shape != (n, params.arch.input_dim):
        raise ShapeError(f"cotangent must be {(n, params.arch.input_dim)}, got {g.shape}")
    act_prime = ACTIVATIONS[params.arch.activation][1]
    nl = len(params.weights)
    gw: list[np.ndarray] = [None] * nl  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * nl  # type: ignore[list-item]
    inputs = [trace.features, *trace.post]
    for i in range(nl - 1, -1, -1):
        gw[i] = inputs[i].T @ g
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ params.weights[i].T) * act_prime(trace.pre[i - 1])
    return ParamGrads(tuple(gw), tuple(gb))


@dataclass(frozen=True)
class AdamState:
    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: NetworkParams, **hyper) -> "AdamState":
        shapes = [*params.weights, *params.biases]
        return cls(
            m=tuple(np.zeros_like(a) for a in shapes),
            v=tuple(np.zeros_like(a) for a in shapes),
            **hyper,
        )


def adam_step(params: NetworkParams, grads: ParamGrads, state: AdamState, lr: float | None = None):
    """One bias-corrected Adam update. ``lr`` overrides ``state.lr`` for schedules."""
    lr = state.lr if lr is None else lr
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    p_in = [*params.weights, *params.biases]
    g_in = [*grads.weights, *grads.biases]
    if len(p_in) != len(g_in) or len(p_in) != len(state.m):
        raise ShapeError("gradient structure does not match parameters")
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_in, g_in, state.m, state.v):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    nl = len(params.weights)
    out = NetworkParams(params.arch, tuple(new_p[:nl]), tuple(new_p[nl:]))
    new_state = AdamState(
        tuple(new_m), tuple(new_v), step, state.lr, state.beta1, state.beta2, state.eps
    )
    return out, new_state


def save_checkpoint(path, params: NetworkParams, config: dict | None = None, seed: int | None = None) -> Path:
    """Write params as a self-describing JSON document (floats round-trip exactly)."""
    path = Path(path)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "arch": params.arch.to_dict(),
        "layers": [
            {"weight": w.ravel().tolist(), "bias": b.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
        "config": config,
        "seed": seed,
    }
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> tuple[NetworkParams, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
    arch = NetworkArch.from_dict(doc["arch"])
    ws, bs = [], []
    for (fan_in, fan_out), layer in zip(arch.layer_sizes, doc["layers"]):
        ws.append(np.array(layer["weight"], dtype=np.float64).reshape(fan_in, fan_out))
        bs.append(np.array(layer["bias"], dtype=np.float64))
    params = NetworkParams(arch, tuple(ws), tuple(bs))
    return params, {"config": doc.get("config"), "seed": doc.get("seed")}
