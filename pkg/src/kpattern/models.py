"""Depth-2 convolutional, locally-connected, and fully-connected models:
forward evaluation, analytic population (sub)gradients of the hinge loss,
and the initializers the theory suites and the experiments use.

Inputs are real vectors of length N viewed through width-w windows at a
fixed stride, which covers both the boolean case (N=n, w=k, stride 1) and
windowed image sequences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .numerics import Rng
from .problems import Distribution, Empirical, Uniform, iter_sign_chunks


# ---------------------------------------------------------------------------
# activations

@dataclass(frozen=True)
class ClippedRelu:
    """sigma(t) = min(max(t, 0), c).  Bounded with |sigma| <= c and
    |sigma'| <= 1; on [0, 1/k] it is the identity, which is what the
    discrete-initialization construction needs (take c >= 1/k)."""

    c: float = 1.0
    name = "clipped_relu"
    theory_safe = True

    def value(self, t):
        return np.clip(t, 0.0, self.c)

    def deriv(self, t):
        t = np.asarray(t)
        return ((t > 0.0) & (t < self.c)).astype(t.dtype)


@dataclass(frozen=True)
class Tanh:
    name = "tanh"
    theory_safe = True
    c = 1.0

    def value(self, t):
        return np.tanh(t)

    def deriv(self, t):
        th = np.tanh(t)
        return 1.0 - th * th


@dataclass(frozen=True)
class Relu:
    """Unbounded; fine for the empirical runs, rejected by theorem-mode
    entry points (no finite bound c)."""

    name = "relu"
    theory_safe = False
    c = np.inf

    def value(self, t):
        return np.maximum(t, 0.0)

    def deriv(self, t):
        t = np.asarray(t)
        return (t > 0.0).astype(t.dtype)


Activation = ClippedRelu | Tanh | Relu


def activation_from_name(name: str, c: float = 1.0) -> Activation:
    if name == "clipped_relu":
        return ClippedRelu(c)
    if name == "tanh":
        return Tanh()
    if name == "relu":
        return Relu()
    raise ValueError(f"unknown activation {name!r}")


def require_theory_safe(act: Activation) -> None:
    if not act.theory_safe:
        raise ValueError(
            f"activation {act.name!r} is unbounded and not admissible here; "
            "use clipped_relu or tanh"
        )


# ---------------------------------------------------------------------------
# window geometry

@dataclass(frozen=True)
class WindowScheme:
    """Width-w windows at a fixed stride over a length-N input."""

    size: int
    width: int
    stride: int = 1

    def __post_init__(self):
        if self.width < 1 or self.width > self.size:
            raise ValueError("window width must lie in 1..size")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @classmethod
    def boolean(cls, n: int, k: int) -> "WindowScheme":
        return cls(size=n, width=k, stride=1)

    @property
    def positions(self) -> int:
        return (self.size - self.width) // self.stride + 1

    def windows(self, X: np.ndarray) -> np.ndarray:
        """(m, positions, width) window view of an (m, size) batch."""
        if X.shape[-1] != self.size:
            raise ValueError(f"expected inputs of length {self.size}")
        win = sliding_window_view(X, self.width, axis=-1)
        return win[..., :: self.stride, :]


# ---------------------------------------------------------------------------
# parameter containers

def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise ValueError(f"non-finite entries in parameter group {name!r}")


@dataclass
class CnnParams:
    """Shared kernel W (q, w), bias b (q,), and per-position readouts
    U (positions, q)."""

    W: np.ndarray
    b: np.ndarray
    U: np.ndarray

    arch = "cnn"

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W))
        self.b = np.asarray(self.b)
        self.U = np.atleast_2d(np.asarray(self.U))
        q, _ = self.W.shape
        if self.b.shape != (q,):
            raise ValueError(f"bias must have shape ({q},)")
        if self.U.ndim != 2 or self.U.shape[1] != q:
            raise ValueError(f"readouts must have shape (positions, {q})")
        for name, arr in self.groups().items():
            _check_finite(name, arr)

    @property
    def q(self) -> int:
        return int(self.W.shape[0])

    def groups(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b, "u": self.U}

    def copy(self) -> "CnnParams":
        return CnnParams(self.W.copy(), self.b.copy(), self.U.copy())


@dataclass
class FcnParams:
    """First layer W (q, N), bias b (q,), readout u (q,)."""

    W: np.ndarray
    b: np.ndarray
    u: np.ndarray

    arch = "fcn"

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W))
        self.b = np.asarray(self.b)
        self.u = np.asarray(self.u)
        q, _ = self.W.shape
        if self.b.shape != (q,) or self.u.shape != (q,):
            raise ValueError(f"bias and readout must have shape ({q},)")
        for name, arr in self.groups().items():
            _check_finite(name, arr)

    @property
    def q(self) -> int:
        return int(self.W.shape[0])

    def groups(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b, "u": self.u}

    def copy(self) -> "FcnParams":
        return FcnParams(self.W.copy(), self.b.copy(), self.u.copy())


@dataclass
class LcnParams:
    """Per-position kernels W (positions, q, w), biases b (positions, q),
    readouts U (positions, q); no sharing constraint."""

    W: np.ndarray
    b: np.ndarray
    U: np.ndarray

    arch = "lcn"

    def __post_init__(self):
        self.W = np.asarray(self.W)
        self.b = np.asarray(self.b)
        self.U = np.asarray(self.U)
        if self.W.ndim != 3:
            raise ValueError("kernels must have shape (positions, q, width)")
        P, q, _ = self.W.shape
        if self.b.shape != (P, q) or self.U.shape != (P, q):
            raise ValueError(f"biases and readouts must have shape ({P}, {q})")
        for name, arr in self.groups().items():
            _check_finite(name, arr)

    @property
    def q(self) -> int:
        return int(self.W.shape[1])

    def groups(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b, "u": self.U}

    def copy(self) -> "LcnParams":
        return LcnParams(self.W.copy(), self.b.copy(), self.U.copy())


ModelParams = CnnParams | FcnParams | LcnParams


def zeros_like_params(params: ModelParams) -> ModelParams:
    cls = type(params)
    return cls(*(np.zeros_like(arr) for arr in vars(params).values()))


# ---------------------------------------------------------------------------
# hinge loss

def _check_labels(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.abs(y) == 1.0):
        raise ValueError("labels must be +-1")
    return y


def hinge(yhat, y):
    """max(1 - y*yhat, 0) elementwise."""
    y = _check_labels(y)
    return np.maximum(1.0 - y * np.asarray(yhat, dtype=np.float64), 0.0)


def hinge_subgradient(yhat, y):
    """d/dyhat of the hinge: -y where y*yhat < 1, else 0 (the boundary takes
    the minimal-norm subgradient 0)."""
    y = _check_labels(y)
    return np.where(y * np.asarray(yhat, dtype=np.float64) < 1.0, -y, 0.0)


# ---------------------------------------------------------------------------
# forward evaluation

def _as_batch(x, size):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != size:
        raise ValueError(f"expected inputs of length {size}, got {X.shape[1]}")
    return X, single


def _cnn_h(params: CnnParams, scheme: WindowScheme, act, X: np.ndarray) -> np.ndarray:
    m = X.shape[0]
    P = scheme.positions
    win = scheme.windows(X).reshape(m * P, scheme.width)
    Z = (win @ params.W.T).reshape(m, P, params.q) + params.b
    A = act.value(Z)
    return A.reshape(m, P * params.q) @ params.U.reshape(P * params.q)


def _fcn_h(params: FcnParams, act, X: np.ndarray) -> np.ndarray:
    Z = X @ params.W.T + params.b
    return act.value(Z) @ params.u


def _lcn_h(params: LcnParams, scheme: WindowScheme, act, X: np.ndarray) -> np.ndarray:
    win = scheme.windows(X)
    # (P, m, q) batched over positions
    Z = np.matmul(win.transpose(1, 0, 2), params.W.transpose(0, 2, 1))
    Z += params.b[:, None, :]
    A = act.value(Z)
    return np.einsum("pmq,pq->m", A, params.U)


def cnn_forward(params: CnnParams, scheme: WindowScheme, act: Activation, x):
    X, single = _as_batch(x, scheme.size)
    h = _cnn_h(params, scheme, act, X)
    return float(h[0]) if single else h


def fcn_forward(params: FcnParams, act: Activation, x):
    X, single = _as_batch(x, params.W.shape[1])
    h = _fcn_h(params, act, X)
    return float(h[0]) if single else h


def lcn_forward(params: LcnParams, scheme: WindowScheme, act: Activation, x):
    X, single = _as_batch(x, scheme.size)
    h = _lcn_h(params, scheme, act, X)
    return float(h[0]) if single else h


def forward(params: ModelParams, act: Activation, x, scheme: WindowScheme | None = None):
    if isinstance(params, FcnParams):
        return fcn_forward(params, act, x)
    if scheme is None:
        raise ValueError("windowed architectures need a WindowScheme")
    if isinstance(params, CnnParams):
        return cnn_forward(params, scheme, act, x)
    return lcn_forward(params, scheme, act, x)


# ---------------------------------------------------------------------------
# batch loss / gradient terms

def _cnn_terms(params: CnnParams, scheme, act, X, y):
    m = X.shape[0]
    P, q, w = scheme.positions, params.q, scheme.width
    win = scheme.windows(X).reshape(m * P, w)
    Z = (win @ params.W.T).reshape(m, P, q) + params.b
    A = act.value(Z)
    h = A.reshape(m, P * q) @ params.U.reshape(P * q)
    lp = hinge_subgradient(h, y)
    loss_sum = float(hinge(h, y).sum())
    correct = int(np.count_nonzero(y * h > 0.0))
    gU = (lp @ A.reshape(m, P * q)).reshape(P, q)
    B = act.deriv(Z)
    B *= params.U[None, :, :]
    B *= lp[:, None, None]
    gW = B.reshape(m * P, q).T @ win
    gb = B.sum(axis=(0, 1))
    return loss_sum, correct, CnnParams(gW, gb, gU)


def _fcn_terms(params: FcnParams, act, X, y):
    Z = X @ params.W.T + params.b
    A = act.value(Z)
    h = A @ params.u
    lp = hinge_subgradient(h, y)
    loss_sum = float(hinge(h, y).sum())
    correct = int(np.count_nonzero(y * h > 0.0))
    gu = A.T @ lp
    B = act.deriv(Z)
    B *= params.u[None, :]
    B *= lp[:, None]
    gW = B.T @ X
    gb = B.sum(axis=0)
    return loss_sum, correct, FcnParams(gW, gb, gu)


def _lcn_terms(params: LcnParams, scheme, act, X, y):
    win = scheme.windows(X)
    winT = win.transpose(1, 0, 2)  # (P, m, w)
    Z = np.matmul(winT, params.W.transpose(0, 2, 1)) + params.b[:, None, :]
    A = act.value(Z)  # (P, m, q)
    h = np.einsum("pmq,pq->m", A, params.U)
    lp = hinge_subgradient(h, y)
    loss_sum = float(hinge(h, y).sum())
    correct = int(np.count_nonzero(y * h > 0.0))
    gU = np.einsum("m,pmq->pq", lp, A)
    B = act.deriv(Z)
    B *= params.U[:, None, :]
    B *= lp[None, :, None]
    gW = np.matmul(B.transpose(0, 2, 1), winT)  # (P, q, w)
    gb = B.sum(axis=1)
    return loss_sum, correct, LcnParams(gW, gb, gU)


def _terms(params, act, X, y, scheme):
    if isinstance(params, FcnParams):
        return _fcn_terms(params, act, X, y)
    if scheme is None:
        raise ValueError("windowed architectures need a WindowScheme")
    if isinstance(params, CnnParams):
        return _cnn_terms(params, scheme, act, X, y)
    return _lcn_terms(params, scheme, act, X, y)


def batch_stats_and_grad(
    params: ModelParams,
    act: Activation,
    X: np.ndarray,
    y: np.ndarray,
    scheme: WindowScheme | None = None,
):
    """Mean hinge loss, 0-1 accuracy (sign(0) counts as wrong), and the mean
    subgradient over an explicit batch."""
    m = X.shape[0]
    loss_sum, correct, grads = _terms(params, act, X, y, scheme)
    for arr in vars(grads).values():
        arr /= m
    return loss_sum / m, correct / m, grads


def _resolve_target(target, X):
    if callable(target):
        return np.asarray(target(X), dtype=np.float64)
    return np.asarray(target, dtype=np.float64)


def loss_and_grad(
    params: ModelParams,
    act: Activation,
    target,
    dist: Distribution,
    scheme: WindowScheme | None = None,
    mc_samples: int | None = None,
    rng: Rng | None = None,
):
    """Population hinge loss and its analytic (sub)gradient.

    Exact mode (mc_samples None, Uniform dist) enumerates all 2^n inputs in
    ascending index order; Empirical dists average their points; Monte Carlo
    mode averages mc_samples fresh draws.  ``target`` is a vectorized
    callable on batches, or a label array aligned with Empirical points.
    """
    if mc_samples is not None:
        from .problems import sample  # local import to avoid cycle noise

        if rng is None:
            raise ValueError("Monte Carlo mode needs an Rng")
        X = sample(dist, mc_samples, rng)
        y = _resolve_target(target, X)
        loss, _, grads = batch_stats_and_grad(params, act, X, y, scheme)
        return loss, grads
    if isinstance(dist, Empirical):
        X = dist.points
        y = _resolve_target(target, X)
        loss, _, grads = batch_stats_and_grad(params, act, X, y, scheme)
        return loss, grads
    if not callable(target):
        raise ValueError("exact uniform mode needs a callable target")
    total_loss = 0.0
    total_grads = zeros_like_params(params)
    count = 1 << dist.n
    for _, chunk in iter_sign_chunks(dist.n):
        y = _resolve_target(target, chunk)
        loss_sum, _, grads = _terms(params, act, chunk, y, scheme)
        total_loss += loss_sum
        for acc, g in zip(vars(total_grads).values(), vars(grads).values()):
            acc += g
    for arr in vars(total_grads).values():
        arr /= count
    return total_loss / count, total_grads


def grad(
    params: ModelParams,
    act: Activation,
    target,
    dist: Distribution,
    scheme: WindowScheme | None = None,
    mc_samples: int | None = None,
    rng: Rng | None = None,
) -> ModelParams:
    """Analytic population (sub)gradient; same-shaped container as params."""
    _, grads = loss_and_grad(params, act, target, dist, scheme, mc_samples, rng)
    return grads


def population_stats(
    params: ModelParams,
    act: Activation,
    target,
    dist: Distribution,
    scheme: WindowScheme | None = None,
) -> tuple[float, float]:
    """(hinge loss, 0-1 accuracy) over the full distribution."""
    if isinstance(dist, Empirical):
        X = dist.points
        y = _resolve_target(target, X)
        h = forward(params, act, X, scheme)
        return float(hinge(h, y).mean()), float(np.mean(y * h > 0.0))
    total_loss = 0.0
    correct = 0
    count = 1 << dist.n
    for _, chunk in iter_sign_chunks(dist.n):
        y = _resolve_target(target, chunk)
        h = forward(params, act, chunk, scheme)
        total_loss += float(hinge(h, y).sum())
        correct += int(np.count_nonzero(y * h > 0.0))
    return total_loss / count, correct / count


# ---------------------------------------------------------------------------
# initializers

def init_cnn_theorem(rng: Rng, q: int, scheme: WindowScheme) -> CnnParams:
    """Discrete init: W uniform over {+-1/k}^(q x k), b = 1/k - 1, U = 0."""
    k = scheme.width
    W = rng.signs((q, k)) / k
    b = np.full(q, 1.0 / k - 1.0)
    U = np.zeros((scheme.positions, q))
    return CnnParams(W, b, U)


def init_lcn_theorem(rng: Rng, q: int, scheme: WindowScheme) -> LcnParams:
    """Same discrete init drawn independently per position."""
    k = scheme.width
    P = scheme.positions
    W = rng.signs((P, q, k)) / k
    b = np.full((P, q), 1.0 / k - 1.0)
    U = np.zeros((P, q))
    return LcnParams(W, b, U)


@dataclass(frozen=True)
class Gaussian:
    variance: float = 1.0
    name = "gaussian"


@dataclass(frozen=True)
class Rademacher:
    scale: float = 1.0
    name = "rademacher"


InitScheme = Gaussian | Rademacher


def init_scheme_from_name(name: str, param: float = 1.0) -> InitScheme:
    if name == "gaussian":
        return Gaussian(param)
    if name == "rademacher":
        return Rademacher(param)
    raise ValueError(f"unknown init scheme {name!r}")


def init_fcn_perm_invariant(
    rng: Rng,
    q: int,
    n: int,
    scheme: InitScheme = Gaussian(),
    c: float = 1.0,
) -> FcnParams:
    """First layer drawn i.i.d. per coordinate (hence exchangeable under any
    coordinate relabeling), zero biases, and readout signs of magnitude
    1/(q*c) so that |h| <= sum_i |u_i| * c = 1 whenever |sigma| <= c."""
    if isinstance(scheme, Gaussian):
        W = rng.standard_normal((q, n)) * np.sqrt(scheme.variance)
    else:
        W = rng.signs((q, n)) * scheme.scale
    b = np.zeros(q)
    u = rng.signs(q) / (q * c)
    return FcnParams(W, b, u)


def init_fcn_standard(rng: Rng, q: int, n: int) -> FcnParams:
    """Centered gaussian layers scaled by 1/sqrt(fan-in), zero biases."""
    W = rng.standard_normal((q, n)) / np.sqrt(n)
    b = np.zeros(q)
    u = rng.standard_normal(q) / np.sqrt(q)
    return FcnParams(W, b, u)


def init_cnn_standard(rng: Rng, q: int, scheme: WindowScheme) -> CnnParams:
    W = rng.standard_normal((q, scheme.width)) / np.sqrt(scheme.width)
    b = np.zeros(q)
    U = rng.standard_normal((scheme.positions, q)) / np.sqrt(q * scheme.positions)
    return CnnParams(W, b, U)


def init_lcn_standard(rng: Rng, q: int, scheme: WindowScheme) -> LcnParams:
    P = scheme.positions
    W = rng.standard_normal((P, q, scheme.width)) / np.sqrt(scheme.width)
    b = np.zeros((P, q))
    U = rng.standard_normal((P, q)) / np.sqrt(q * P)
    return LcnParams(W, b, U)


# ---------------------------------------------------------------------------
# snapshots

_ARCH_CLASSES = {"cnn": CnnParams, "fcn": FcnParams, "lcn": LcnParams}


def params_to_dict(params: ModelParams) -> dict:
    """JSON-ready snapshot: shape header plus row-major float arrays."""
    arrays = {}
    for name, arr in vars(params).items():
        arrays[name] = {
            "shape": list(arr.shape),
            "data": np.asarray(arr, dtype=np.float64).reshape(-1).tolist(),
        }
    return {"arch": params.arch, "arrays": arrays}


def params_from_dict(d: dict) -> ModelParams:
    cls = _ARCH_CLASSES[d["arch"]]
    kwargs = {}
    for name, spec in d["arrays"].items():
        kwargs[name] = np.array(spec["data"], dtype=np.float64).reshape(spec["shape"])
    return cls(**kwargs)


def save_params(path, params: ModelParams) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params), sort_keys=True))


def load_params(path) -> ModelParams:
    return params_from_dict(json.loads(Path(path).read_text()))
