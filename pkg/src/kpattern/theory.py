"""Closed-form bound evaluators and numerical verifiers: the constructive
readout that realizes any local pattern on top of the discrete first layer,
width thresholds, the convergence-rate and hardness bounds, drift bounds
along trajectories, the online-gradient-descent regret inequality, and the
coordinate-permutation gradient identity.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import (
    Activation,
    CnnParams,
    FcnParams,
    WindowScheme,
    cnn_forward,
    hinge,
    hinge_subgradient,
    require_theory_safe,
)
from .problems import KPattern, Parity, Permutation, Uniform, sign_vectors
from .training import Trajectory


@dataclass
class BoundReport:
    """An evaluated closed-form bound against an optional measurement."""

    name: str
    inputs: dict
    theoretical: float
    measured: float | None = None
    tolerance: float = 0.0
    detail: dict = field(default_factory=dict)

    @property
    def margin(self) -> float | None:
        if self.measured is None:
            return None
        return self.theoretical - self.measured

    @property
    def passed(self) -> bool:
        if self.measured is None:
            return True
        return self.measured <= self.theoretical + self.tolerance

    def to_text(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        body = f"{self.name}: bound {self.theoretical:.6g}"
        if self.measured is not None:
            body += f", measured {self.measured:.6g}, margin {self.margin:.6g}"
        return f"{status} {body}"

    def csv_row(self) -> list:
        return [
            self.name,
            repr(self.theoretical),
            "" if self.measured is None else repr(self.measured),
            "" if self.margin is None else repr(self.margin),
            int(self.passed),
        ]


def write_reports_csv(path, reports: list[BoundReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "theoretical", "measured", "margin", "passed"])
        for rep in reports:
            writer.writerow(rep.csv_row())


class InsufficientCoverage(Exception):
    """Some sign pattern z has no matching kernel row, so no readout can
    realize arbitrary pattern tables (possible when q < 2^k or by bad
    luck)."""

    def __init__(self, pattern: tuple):
        self.pattern = pattern
        super().__init__(f"no kernel row has sign pattern {pattern}")


@dataclass
class UStarResult:
    U: np.ndarray  # (positions, q); zero except the target row
    jstar: int
    norm: float  # ||u*^(jstar)||
    coverage: dict  # sign pattern index -> matching-row count


def construct_ustar(
    W: np.ndarray, b: np.ndarray, pattern: KPattern, positions: int
) -> UStarResult:
    """Readout realizing the pattern exactly on top of the discrete first
    layer: u*_i = (k/|J_z|) g(z) for rows i whose kernel sign pattern is z,
    at position jstar only; all other positions get zero.

    Requires W entries in {+-1/k}, b = 1/k - 1, and a clipped-ReLU style
    activation with c >= 1/k at evaluation time, under which
    sigma(<w_i, z> + b_i) = (1/k) 1{sign w_i = z}.
    """
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    k = pattern.k
    q = W.shape[0]
    if W.shape != (q, k):
        raise ValueError(f"kernel must have shape (q, {k})")
    if not np.all(np.abs(W) == 1.0 / k):
        raise ValueError("kernel entries must be +-1/k")
    if not np.allclose(b, 1.0 / k - 1.0, rtol=0.0, atol=0.0):
        raise ValueError("biases must equal 1/k - 1")
    if not 1 <= pattern.jstar <= positions:
        raise ValueError("pattern start exceeds the available positions")

    # row index -> sign-pattern index in the package bit convention
    signs = W < 0
    z_index = (signs.astype(np.int64) << np.arange(k, dtype=np.int64)).sum(axis=1)
    counts = np.bincount(z_index, minlength=1 << k)
    coverage = {int(z): int(c) for z, c in enumerate(counts)}
    for z in range(1 << k):
        if counts[z] == 0:
            bits = [(1.0 if (z >> i) & 1 == 0 else -1.0) for i in range(k)]
            raise InsufficientCoverage(tuple(bits))

    U = np.zeros((positions, q))
    U[pattern.jstar - 1, :] = (k / counts[z_index]) * pattern.table[z_index]
    norm = float(np.linalg.norm(U[pattern.jstar - 1]))
    return UStarResult(U=U, jstar=pattern.jstar, norm=norm, coverage=coverage)


def ustar_norm_bound(k: int, q: int) -> float:
    """Guaranteed readout norm 2^(k+1) k / sqrt(q) on the high-probability
    event that every sign pattern is hit at least q 2^-(k+1) times."""
    return 2.0 ** (k + 1) * k / math.sqrt(q)


def q_threshold(k: int, delta: float) -> int:
    """Width above which every sign pattern is well covered with probability
    at least 1 - delta: ceil(2^(k+3) ln(2^k / delta)) + 1 (natural log, which
    makes the underlying exponential tail bound exact)."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if k < 0:
        raise ValueError("k must be >= 0")
    return math.ceil(2.0 ** (k + 3) * math.log(2.0**k / delta)) + 1


@dataclass(frozen=True)
class Thm1Bound:
    """Average-loss bound addends for the convergence guarantee at the
    prescribed learning rate: drift term 2c n^2 k^2 2^k / q, comparator term
    2 (2^k k)^2 / sqrt(qn), and gradient term c^2 n^1.5 sqrt(q) / T."""

    drift_term: float
    comparator_term: float
    gradient_term: float

    @property
    def total(self) -> float:
        return self.drift_term + self.comparator_term + self.gradient_term


def thm1_bound(n: int, k: int, q: int, T: int, c: float) -> Thm1Bound:
    if min(n, k, q, T) <= 0 or c <= 0:
        raise ValueError("all arguments must be positive")
    drift = 2.0 * c * n**2 * k**2 * 2.0**k / q
    comparator = 2.0 * (2.0**k * k) ** 2 / math.sqrt(q * n)
    gradient = c**2 * n**1.5 * math.sqrt(q) / T
    return Thm1Bound(drift, comparator, gradient)


def _log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _inv_comb(n: int, k: int) -> float:
    # exact integer binomials up to n=40, log-space beyond to dodge overflow
    if n <= 40:
        return 1.0 / math.comb(n, k)
    return math.exp(-_log_comb(n, k))


@dataclass(frozen=True)
class HardnessBounds:
    """Expected squared gradient norms at permutation-invariant
    initialization: w_bound = qn min{C(n-1,k)^-1, C(n-1,k-1)^-1} for the
    first layer and u_bound = c^2 q C(n,k)^-1 for the readout."""

    w_bound: float
    u_bound: float


def thm2_bounds(n: int, k: int, q: int, c: float = 1.0) -> HardnessBounds:
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    if q < 1 or c <= 0:
        raise ValueError("q and c must be positive")
    w_bound = q * n * min(_inv_comb(n - 1, k) if k <= n - 1 else math.inf,
                          _inv_comb(n - 1, k - 1))
    u_bound = c**2 * q * _inv_comb(n, k)
    return HardnessBounds(w_bound=w_bound, u_bound=u_bound)


@dataclass(frozen=True)
class DriftBounds:
    """Readout and first-layer drift bounds after t steps at rate eta:
    u_bound = c eta t sqrt(q), w_bound = c eta^2 t^2 n sqrt(qk)."""

    u_bound: float
    w_bound: float


def drift_bounds(t: int, eta: float, q: int, n: int, k: int, c: float) -> DriftBounds:
    if t < 0 or eta < 0 or min(q, n, k) <= 0 or c <= 0:
        raise ValueError("bad drift-bound arguments")
    return DriftBounds(
        u_bound=c * eta * t * math.sqrt(q),
        w_bound=c * eta**2 * t**2 * n * math.sqrt(q * k),
    )


def loss_diff_bound(
    t: int, eta: float, q: int, n: int, k: int, c: float, ustar_norms
) -> float:
    """How much the loss of a fixed readout can move when the first layer
    drifts for t steps: c eta^2 t^2 n k sqrt(q) * sum_j ||u*^(j)||."""
    total = float(np.sum(np.asarray(ustar_norms, dtype=np.float64)))
    return c * eta**2 * t**2 * n * k * math.sqrt(q) * total


def verify_drift(
    traj: Trajectory, n: int, k: int, q: int, c: float, tolerance: float = 1e-12
) -> list[BoundReport]:
    """Check the recorded readout norms and first-layer drift against their
    closed-form bounds at every recorded step.

    The u-bound carries the activation bound c (the proof's version); the
    detail field also reports whether the c-free variant held.
    """
    eta = float(traj.metadata.get("eta", traj.points[0].eta))
    worst_u = (-math.inf, None)
    worst_w = (-math.inf, None)
    u_without_c_held = True
    for p in traj.points:
        bounds = drift_bounds(p.step, eta, q, n, k, c)
        for norm in p.u_norms:
            if norm - bounds.u_bound > worst_u[0]:
                worst_u = (norm - bounds.u_bound, p.step)
            if norm > eta * p.step * math.sqrt(q) + tolerance:
                u_without_c_held = False
        if p.w_drift - bounds.w_bound > worst_w[0]:
            worst_w = (p.w_drift - bounds.w_bound, p.step)
    u_rep = BoundReport(
        name="readout_drift",
        inputs={"n": n, "k": k, "q": q, "c": c, "eta": eta},
        theoretical=0.0,
        measured=worst_u[0],
        tolerance=tolerance,
        detail={"worst_step": worst_u[1], "c_free_bound_held": u_without_c_held},
    )
    w_rep = BoundReport(
        name="kernel_drift",
        inputs={"n": n, "k": k, "q": q, "c": c, "eta": eta},
        theoretical=0.0,
        measured=worst_w[0],
        tolerance=tolerance,
        detail={"worst_step": worst_w[1]},
    )
    return [u_rep, w_rep]


@dataclass
class OgdTrace:
    """Per-step data of a fixed-rate descent on convex per-step objectives:
    f_t(theta_t), f_t(theta*), ||grad f_t(theta_t)||, plus the norms of the
    first iterate and the comparator and the rate."""

    losses: np.ndarray
    comparator_losses: np.ndarray
    grad_norms: np.ndarray
    theta1_norm: float
    comparator_norm: float
    eta: float

    @classmethod
    def from_trajectory(cls, traj: Trajectory, comparator_norm: float) -> "OgdTrace":
        pts = [p for p in traj.points if p.comparator_loss is not None]
        if not pts:
            raise ValueError("trajectory carries no comparator losses")
        if pts[-1].step == traj.metadata.get("final_step"):
            pts = pts[:-1]  # the final record is the post-run state, not an iterate
        return cls(
            losses=np.array([p.loss for p in pts]),
            comparator_losses=np.array([p.comparator_loss for p in pts]),
            grad_norms=np.array([p.grad_u_norm for p in pts]),
            theta1_norm=math.sqrt(sum(v * v for v in pts[0].u_norms)),
            comparator_norm=comparator_norm,
            eta=float(traj.metadata.get("eta", pts[0].eta)),
        )


def verify_ogd_regret(trace: OgdTrace, tolerance: float = 1e-9) -> BoundReport:
    """Check, for every prefix length T, that the average loss of the
    iterates is at most the average comparator loss plus
    ||theta*||^2/(2 eta T) + ||theta_1|| avg||grad|| + eta avg||grad||^2.
    Reports the worst margin over prefixes."""
    T = len(trace.losses)
    if T < 1:
        raise ValueError("empty trace")
    if trace.eta <= 0:
        raise ValueError("the regret bound needs a positive fixed rate")
    lhs_cum = np.cumsum(trace.losses)
    comp_cum = np.cumsum(trace.comparator_losses)
    g_cum = np.cumsum(trace.grad_norms)
    g2_cum = np.cumsum(trace.grad_norms**2)
    t = np.arange(1, T + 1, dtype=np.float64)
    rhs = (
        comp_cum / t
        + trace.comparator_norm**2 / (2.0 * trace.eta * t)
        + trace.theta1_norm * g_cum / t
        + trace.eta * g2_cum / t
    )
    gaps = lhs_cum / t - rhs
    worst = int(np.argmax(gaps))
    return BoundReport(
        name="ogd_regret",
        inputs={"T": T, "eta": trace.eta},
        theoretical=0.0,
        measured=float(gaps[worst]),
        tolerance=tolerance,
        detail={"worst_prefix": worst + 1},
    )


def _fcn_w_grad_coordinate(
    params: FcnParams, act: Activation, target, j: int, X: np.ndarray
) -> np.ndarray:
    """d/dw_j of the population hinge loss for every neuron, by exact
    enumeration over the given instance matrix."""
    y = np.asarray(target(X), dtype=np.float64)
    Z = X @ params.W.T + params.b
    h = act.value(Z) @ params.u
    lp = hinge_subgradient(h, y)  # (m,)
    S = act.deriv(Z) * params.u[None, :]  # (m, q)
    return (lp * X[:, j - 1]) @ S / X.shape[0]


def verify_permutation_identity(
    params: FcnParams,
    act: Activation,
    mask_I: int,
    j: int,
    perm: Permutation,
    tolerance: float = 1e-10,
) -> BoundReport:
    """For a permutation fixing coordinate j, the j-th weight gradient of the
    loss against the permuted parity equals the j-th weight gradient of the
    permuted network against the original parity.  Both sides are computed by
    exact enumeration; the report carries the largest absolute difference
    over neurons (and the readout-gradient analogue in detail)."""
    n = params.W.shape[1]
    if perm.n != n:
        raise ValueError("permutation size mismatch")
    if not perm.fixes(j):
        raise ValueError(f"permutation must fix coordinate {j}")
    X = sign_vectors(n)
    chi_orig = Parity(n, mask_I)
    chi_perm = Parity(n, perm.permute_set(mask_I))

    lhs = _fcn_w_grad_coordinate(params, act, chi_perm, j, X)
    permuted = FcnParams(params.W[:, perm.perm], params.b.copy(), params.u.copy())
    rhs = _fcn_w_grad_coordinate(permuted, act, chi_orig, j, X)
    w_diff = float(np.max(np.abs(lhs - rhs)))

    def u_grad(p, target):
        y = np.asarray(target(X), dtype=np.float64)
        A = act.value(X @ p.W.T + p.b)
        lp = hinge_subgradient(A @ p.u, y)
        return A.T @ lp / X.shape[0]

    u_diff = float(np.max(np.abs(u_grad(params, chi_perm) - u_grad(permuted, chi_orig))))

    return BoundReport(
        name="permutation_identity",
        inputs={"n": n, "I": mask_I, "j": j},
        theoretical=0.0,
        measured=w_diff,
        tolerance=tolerance,
        detail={"u_grad_difference": u_diff},
    )


@dataclass(frozen=True)
class CorollaryParams:
    """Width, step, and sample-size schedules (up to the constant C) under
    which the average-loss bound drops below the accuracy target."""

    q: float
    T: float
    sample_size: float


def corollary_params(
    n: int,
    eps: float,
    C: float,
    k: int | None = None,
    delta: float = 0.05,
) -> CorollaryParams:
    """q = C eps^-2 n^3 ln^2 n, T = C eps^-2 n^3 ln n, and sample size
    C eps^-2 n k q ln(nkq/delta); k defaults to ceil(log2 n).  Returned as
    floats so the scaling laws are exact; round up for counts."""
    if n < 2 or eps <= 0 or not 0 < delta < 1:
        raise ValueError("need n >= 2, eps > 0, delta in (0, 1)")
    if C <= 0:
        raise ValueError("the constant C must be positive")
    if k is None:
        k = max(1, math.ceil(math.log2(n)))
    q = C * eps**-2 * n**3 * math.log(n) ** 2
    T = C * eps**-2 * n**3 * math.log(n)
    sample = C * eps**-2 * n * k * q * math.log(n * k * q / delta)
    return CorollaryParams(q=q, T=T, sample_size=sample)


def verify_construction_exact(
    W: np.ndarray, b: np.ndarray, pattern: KPattern, scheme: WindowScheme
) -> dict:
    """Exact-rational check that the constructed readout realizes the target
    with hinge loss exactly zero on every input.

    Floating-point forward passes cannot settle an exactness claim when 1/k
    is not a power of two (the 1/k-sums round), so this evaluates the network
    in rational arithmetic from first principles: every preactivation is
    (k - 2d)/k + (1/k - 1) for d sign mismatches, the clipped activation
    (c = 1) of it is an exact rational, and the constructed readout weights
    are exact rationals.  Positions other than jstar carry an all-zero
    readout and contribute exactly zero, and every x with the same
    determining window shares the same rational output, so checking all 2^k
    windows covers all 2^n inputs.
    """
    from fractions import Fraction

    result = construct_ustar(W, b, pattern, scheme.positions)
    k = pattern.k
    q = W.shape[0]
    signs = np.sign(W).astype(np.int64)
    counts = np.bincount(
        ((W < 0).astype(np.int64) << np.arange(k, dtype=np.int64)).sum(axis=1),
        minlength=1 << k,
    )
    bias = Fraction(1, k) - 1
    exact_zero_loss = True
    exact_accuracy = True
    for z_idx in range(1 << k):
        z = np.array([1 if (z_idx >> i) & 1 == 0 else -1 for i in range(k)])
        g_z = int(pattern.table[z_idx])
        h = Fraction(0)
        for i in range(q):
            agree = int(np.sum(signs[i] == z))
            pre = Fraction(2 * agree - k, k) + bias
            sigma = min(max(pre, Fraction(0)), Fraction(1))  # clipped relu, c=1
            z_i = ((signs[i] < 0).astype(np.int64)
                   << np.arange(k, dtype=np.int64)).sum()
            u_i = Fraction(k * int(pattern.table[z_i]), int(counts[z_i]))
            h += u_i * sigma
        if h != g_z:
            exact_accuracy = False
        if max(1 - g_z * h, Fraction(0)) != 0:
            exact_zero_loss = False
    return {
        "result": result,
        "exact_zero_loss": exact_zero_loss,
        "exact_accuracy": exact_accuracy,
    }


def verify_construction(
    W: np.ndarray,
    b: np.ndarray,
    pattern: KPattern,
    scheme: WindowScheme,
    act: Activation,
) -> dict:
    """Exhaustively confirm that the constructed readout realizes the target:
    returns the readout result plus exact hinge loss and accuracy over all
    2^n inputs."""
    require_theory_safe(act)
    result = construct_ustar(W, b, pattern, scheme.positions)
    params = CnnParams(np.asarray(W), np.asarray(b), result.U)
    X = sign_vectors(pattern.n)
    y = pattern.evaluate(X)
    h = cnn_forward(params, scheme, act, X)
    loss = float(hinge(h, y).mean())
    acc = float(np.mean(y * h > 0.0))
    return {
        "result": result,
        "hinge_loss": loss,
        "accuracy": acc,
        "norm_bound": ustar_norm_bound(pattern.k, W.shape[0]),
    }
