"""Gradient-descent training loops with trajectory recording.

"Population" mode takes exact expectations by enumerating the boolean cube
(the idealized dynamics the bounds speak about); "full-sample" and
"minibatch" modes run on explicit point sets.  Trajectories record, at a
configurable stride, everything the drift and regret checkers consume:
loss, accuracy, per-position readout norms, first-layer drift from the
initialization, gradient norms, and optionally the loss of a fixed
comparator readout under the current first layer.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .models import (
    Activation,
    CnnParams,
    FcnParams,
    LcnParams,
    ModelParams,
    WindowScheme,
    batch_stats_and_grad,
    forward,
    hinge,
    population_stats,
    require_theory_safe,
    zeros_like_params,
    _resolve_target,
    _terms,
)
from .numerics import Rng
from .problems import Distribution, Empirical, Uniform, iter_sign_chunks, sample


def eta_theorem(n: int, q: int, T: int) -> float:
    """Learning rate sqrt(n) / (sqrt(q) * T) used by the convergence bound."""
    if n <= 0 or q <= 0 or T <= 0:
        raise ValueError("n, q, T must be positive")
    return math.sqrt(n) / (math.sqrt(q) * T)


def adadelta_step(state, grad, rho: float, eps_ad: float):
    """One AdaDelta update on a single array.

    state is (E[g^2], E[dx^2]) (zeros on the first call); returns
    (update, new_state) with update = -sqrt(E[dx^2]+eps)/sqrt(E[g^2]+eps)*g
    after accumulating g^2 and before accumulating dx^2.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    if eps_ad <= 0.0:
        raise ValueError("eps_ad must be positive")
    eg2, ed2 = state
    eg2 = rho * eg2 + (1.0 - rho) * np.square(grad)
    update = -np.sqrt(ed2 + eps_ad) / np.sqrt(eg2 + eps_ad) * grad
    ed2 = rho * ed2 + (1.0 - rho) * np.square(update)
    return update, (eg2, ed2)


@dataclass
class TrainConfig:
    steps: int
    eta: float | None = None
    eta_theorem: bool = False
    batch: str = "population"  # population | full-sample | minibatch
    minibatch: int = 0
    optimizer: str = "gd"  # gd | adadelta
    rho: float = 0.95
    eps_ad: float = 1e-6
    frozen: frozenset = frozenset()
    record_stride: int = 1
    seed: int = 0
    stop_at_accuracy: float | None = None
    divergence_threshold: float = 1e6
    theorem_mode: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch not in ("population", "full-sample", "minibatch"):
            raise ValueError(f"unknown batch mode {self.batch!r}")
        if self.batch == "minibatch" and self.minibatch < 1:
            raise ValueError("minibatch size must be >= 1")
        if self.optimizer not in ("gd", "adadelta"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.optimizer == "gd" and self.eta is None and not self.eta_theorem:
            raise ValueError("plain GD needs eta or eta_theorem")
        if self.eta is not None and self.eta < 0:
            raise ValueError("eta must be >= 0")
        self.frozen = frozenset(self.frozen)
        if self.theorem_mode:
            self.frozen = self.frozen | {"b"}


@dataclass
class TrajectoryPoint:
    step: int
    loss: float
    accuracy: float
    u_norms: tuple
    w_drift: float
    grad_u_norm: float
    grad_w_norm: float
    eta: float
    comparator_loss: float | None = None


@dataclass
class Trajectory:
    points: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def steps(self) -> np.ndarray:
        return np.array([p.step for p in self.points])

    def losses(self) -> np.ndarray:
        return np.array([p.loss for p in self.points])

    def accuracies(self) -> np.ndarray:
        return np.array([p.accuracy for p in self.points])

    def final(self) -> TrajectoryPoint:
        return self.points[-1]

    def to_jsonl(self, path) -> None:
        """One metadata line then one record per step (schema in README)."""
        with open(path, "w", newline="") as fh:
            fh.write(json.dumps({"record": "metadata", **self.metadata}, sort_keys=True))
            fh.write("\n")
            for p in self.points:
                row = {"record": "step", **asdict(p)}
                row["u_norms"] = list(p.u_norms)
                fh.write(json.dumps(row, sort_keys=True))
                fh.write("\n")

    def to_csv(self, path) -> None:
        n_pos = len(self.points[0].u_norms) if self.points else 0
        cols = ["step", "loss", "accuracy", "w_drift", "grad_u_norm",
                "grad_w_norm", "eta", "comparator_loss"]
        cols += [f"u_norm_{j + 1}" for j in range(n_pos)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for p in self.points:
                row = [p.step, repr(p.loss), repr(p.accuracy), repr(p.w_drift),
                       repr(p.grad_u_norm), repr(p.grad_w_norm), repr(p.eta),
                       "" if p.comparator_loss is None else repr(p.comparator_loss)]
                row += [repr(v) for v in p.u_norms]
                writer.writerow(row)


def trajectory_from_jsonl(path) -> Trajectory:
    traj = Trajectory()
    with open(path) as fh:
        for line in fh:
            row = json.loads(line)
            kind = row.pop("record")
            if kind == "metadata":
                traj.metadata = row
            else:
                row["u_norms"] = tuple(row["u_norms"])
                traj.points.append(TrajectoryPoint(**row))
    return traj


def _u_norms(params: ModelParams) -> tuple:
    if isinstance(params, FcnParams):
        return (float(np.linalg.norm(params.u)),)
    return tuple(float(v) for v in np.sqrt(np.sum(params.U**2, axis=1)))


def _w_drift(params: ModelParams, W0: np.ndarray) -> float:
    return float(np.linalg.norm((params.W - W0).reshape(-1)))


def _grad_norms(grads: ModelParams) -> tuple[float, float]:
    g = grads.groups()
    return (
        float(np.linalg.norm(g["u"].reshape(-1))),
        float(np.linalg.norm(g["W"].reshape(-1))),
    )


class DivergenceError(RuntimeError):
    """Loss blew past the guard threshold or parameters went non-finite."""


def _exact_eval(params, act, target, dist, scheme):
    total_loss = 0.0
    correct = 0
    grads = zeros_like_params(params)
    count = 1 << dist.n
    for _, chunk in iter_sign_chunks(dist.n):
        y = _resolve_target(target, chunk)
        loss_sum, chunk_correct, g = _terms(params, act, chunk, y, scheme)
        total_loss += loss_sum
        correct += chunk_correct
        for acc, arr in zip(vars(grads).values(), vars(g).values()):
            acc += arr
    for arr in vars(grads).values():
        arr /= count
    return total_loss / count, correct / count, grads


def train(
    params0: ModelParams,
    act: Activation,
    target,
    dist: Distribution,
    cfg: TrainConfig,
    scheme: WindowScheme | None = None,
    comparator_u: np.ndarray | None = None,
) -> tuple[ModelParams, Trajectory]:
    """Run gradient descent from params0; returns (final params, trajectory).

    Deterministic given cfg.seed.  Frozen groups are never touched.  Records
    happen at step 0, every record_stride steps, and at the final step; each
    record reflects the parameters *before* that step's update, so record t
    matches iterate t of the update sequence.
    """
    if cfg.theorem_mode:
        require_theory_safe(act)
    params = params0.copy()
    W0 = params.W.copy()
    rng = Rng(cfg.seed)

    n_for_eta = scheme.size if scheme is not None else params.W.shape[-1]
    if cfg.eta_theorem:
        eta = eta_theorem(n_for_eta, params.q, cfg.steps)
    elif cfg.eta is not None:
        eta = cfg.eta
    else:
        eta = 0.0  # adadelta scales itself; nothing to record
    if cfg.optimizer == "gd" and eta is None:
        raise ValueError("plain GD needs a learning rate")

    if cfg.batch == "population":
        if not isinstance(dist, Uniform):
            raise ValueError("population mode needs a Uniform distribution")
        static = None
    else:
        if not isinstance(dist, Empirical):
            raise ValueError(f"{cfg.batch} mode needs an Empirical distribution")
        static = (dist.points, _resolve_target(target, dist.points))

    ad_state = None
    if cfg.optimizer == "adadelta":
        z = zeros_like_params(params)
        ad_state = {
            name: (arr.copy(), arr.copy()) for name, arr in z.groups().items()
        }

    traj = Trajectory(metadata={
        "arch": params.arch,
        "batch": cfg.batch,
        "optimizer": cfg.optimizer,
        "steps": cfg.steps,
        "eta": eta,
        "eta_theorem": cfg.eta_theorem,
        "frozen": sorted(cfg.frozen),
        "seed": cfg.seed,
        "record_stride": cfg.record_stride,
        "theorem_mode": cfg.theorem_mode,
    })
    if comparator_u is not None:
        traj.metadata["comparator_norm"] = float(
            np.linalg.norm(np.asarray(comparator_u).reshape(-1))
        )

    def evaluate(step):
        if cfg.batch == "population":
            loss, acc, grads = _exact_eval(params, act, target, dist, scheme)
            X_eval, y_eval = None, None
        elif cfg.batch == "full-sample":
            X_eval, y_eval = static
            loss, acc, grads = batch_stats_and_grad(params, act, X_eval, y_eval, scheme)
        else:
            X_all, y_all = static
            idx = rng.split(step).integers(0, X_all.shape[0], size=cfg.minibatch)
            X_eval, y_eval = X_all[idx], y_all[idx]
            loss, acc, grads = batch_stats_and_grad(params, act, X_eval, y_eval, scheme)
        return loss, acc, grads

    def record(step, loss, acc, grads):
        comp = None
        if comparator_u is not None:
            comp_params = params.copy()
            comp_groups = comp_params.groups()
            comp_groups["u"][...] = comparator_u
            if cfg.batch == "population":
                comp, _ = population_stats(comp_params, act, target, dist, scheme)
            else:
                X_all, y_all = static
                h = forward(comp_params, act, X_all, scheme)
                comp = float(hinge(h, y_all).mean())
        gu, gw = _grad_norms(grads)
        traj.points.append(TrajectoryPoint(
            step=step,
            loss=float(loss),
            accuracy=float(acc),
            u_norms=_u_norms(params),
            w_drift=_w_drift(params, W0),
            grad_u_norm=gu,
            grad_w_norm=gw,
            eta=float(eta),
            comparator_loss=comp,
        ))

    stopped = None
    for step in range(cfg.steps):
        loss, acc, grads = evaluate(step)
        if not math.isfinite(loss) or loss > cfg.divergence_threshold:
            raise DivergenceError(f"loss {loss} at step {step} tripped the guard")
        if step % cfg.record_stride == 0:
            record(step, loss, acc, grads)
        if cfg.stop_at_accuracy is not None and acc >= cfg.stop_at_accuracy:
            stopped = step
            break
        if cfg.optimizer == "gd":
            for name, arr in params.groups().items():
                if name not in cfg.frozen:
                    arr -= eta * grads.groups()[name]
        else:
            for name, arr in params.groups().items():
                if name in cfg.frozen:
                    continue
                update, ad_state[name] = adadelta_step(
                    ad_state[name], grads.groups()[name], cfg.rho, cfg.eps_ad
                )
                arr += update
        for arr in params.groups().values():
            if not np.isfinite(arr).all():
                raise DivergenceError(f"non-finite parameters after step {step}")

    final_step = stopped if stopped is not None else cfg.steps
    loss, acc, grads = evaluate(final_step)
    if not traj.points or traj.points[-1].step != final_step:
        record(final_step, loss, acc, grads)
    traj.metadata["final_step"] = final_step
    traj.metadata["stopped_early"] = stopped is not None
    return params, traj


def zero_one_accuracy(
    params: ModelParams,
    act: Activation,
    target,
    dist: Distribution,
    scheme: WindowScheme | None = None,
    mc_samples: int | None = None,
    rng: Rng | None = None,
) -> float:
    """Fraction of inputs with sign(h(x)) = f(x); h(x) = 0 counts as wrong."""
    if mc_samples is not None:
        if rng is None:
            raise ValueError("Monte Carlo mode needs an Rng")
        X = sample(dist, mc_samples, rng)
        y = _resolve_target(target, X)
        h = forward(params, act, X, scheme)
        return float(np.mean(y * h > 0.0))
    _, acc = population_stats(params, act, target, dist, scheme)
    return acc
