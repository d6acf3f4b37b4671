"""Measurement instruments for the hardness claim: expected gradient norms
at permutation-invariant initialization (exact over the input distribution,
sampled over initializations), Fourier spectra of the per-coordinate
gradient functions, and decay sweeps against the binomial bounds.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .models import (
    Activation,
    CnnParams,
    InitScheme,
    Gaussian,
    Tanh,
    WindowScheme,
    init_cnn_theorem,
    init_fcn_perm_invariant,
    init_lcn_theorem,
    loss_and_grad,
)
from .numerics import FourierSpectrum, Rng, wht
from .problems import Distribution, KPattern, Parity, Uniform, sign_vectors
from .theory import HardnessBounds, thm2_bounds


@dataclass
class GradNormEstimate:
    """Mean squared gradient norm of one parameter group over seeded
    initialization draws, with its standard error."""

    group: str
    mean: float
    se: float
    draws: int
    exact: bool


def _target_fn(target):
    if isinstance(target, (KPattern, Parity)):
        return target.evaluate
    return target


def grad_norm_at_init(
    arch: str,
    init_scheme: InitScheme | None,
    target,
    n: int,
    k: int,
    q: int,
    c: float = 1.0,
    draws: int = 100,
    act: Activation | None = None,
    rng: Rng | None = None,
    threads: int = 1,
) -> tuple[GradNormEstimate, GradNormEstimate]:
    """Squared Frobenius norms of the first-layer and readout population
    gradients at initialization, averaged over ``draws`` seeded inits.

    The population gradient is exact (full enumeration) per draw, so the only
    sampling error is over initializations.  Returns (W estimate, u
    estimate).
    """
    if rng is None:
        rng = Rng(0)
    act = act or Tanh()
    dist = Uniform(n)
    scheme = WindowScheme.boolean(n, k)
    fn = _target_fn(target)

    def one_draw(r: int) -> tuple[float, float]:
        draw_rng = rng.split(r)
        if arch == "fcn":
            params = init_fcn_perm_invariant(draw_rng, q, n, init_scheme or Gaussian(), c)
            _, grads = loss_and_grad(params, act, fn, dist)
        elif arch == "cnn":
            params = init_cnn_theorem(draw_rng, q, scheme)
            _, grads = loss_and_grad(params, act, fn, dist, scheme)
        elif arch == "lcn":
            params = init_lcn_theorem(draw_rng, q, scheme)
            _, grads = loss_and_grad(params, act, fn, dist, scheme)
        else:
            raise ValueError(f"unknown architecture {arch!r}")
        g = grads.groups()
        return (
            float(np.sum(g["W"] ** 2)),
            float(np.sum(g["u"] ** 2)),
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_draw, range(draws)))
    else:
        results = [one_draw(r) for r in range(draws)]
    w_sq = np.array([r[0] for r in results])
    u_sq = np.array([r[1] for r in results])

    def estimate(vals, group):
        se = float(vals.std(ddof=1) / np.sqrt(draws)) if draws > 1 else 0.0
        return GradNormEstimate(group=group, mean=float(vals.mean()), se=se,
                                draws=draws, exact=True)

    return estimate(w_sq, "W"), estimate(u_sq, "u")


def readout_signal_norms(
    params: CnnParams,
    scheme: WindowScheme,
    act: Activation,
    target,
    dist: Distribution,
) -> np.ndarray:
    """Squared norm of the exact readout gradient per window position."""
    _, grads = loss_and_grad(params, act, _target_fn(target), dist, scheme)
    return np.sum(grads.U**2, axis=1)


def theorem_init_signal(k: int, q: int) -> float:
    """Closed-form squared readout-gradient norm at the matched position for
    a parity pattern under the discrete init: q / (k 2^k)^2 (each neuron
    responds to exactly one sign pattern with slope 1/k and the conditional
    mean of the parity is +-1)."""
    return q / (k * 2.0**k) ** 2


@dataclass
class SpectrumProbe:
    spectrum: FourierSpectrum
    norm_sq: float  # ||g_j||^2 under the uniform distribution


def gradient_fourier_spectrum(
    w: np.ndarray,
    u_i: float,
    b_i: float,
    j: int,
    act: Activation,
    n: int,
) -> SpectrumProbe:
    """Spectrum of g_j(x) = x_j * u_i * sigma'(<w, x> + b_i), the function
    whose Fourier coefficient at a parity set is (minus) that parity's
    first-layer gradient coordinate."""
    if not 1 <= j <= n:
        raise ValueError("coordinate j out of range")
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"weight vector must have shape ({n},)")
    X = sign_vectors(n)
    table = X[:, j - 1] * u_i * act.deriv(X @ w + b_i)
    spectrum = wht(table)
    return SpectrumProbe(spectrum=spectrum, norm_sq=float(np.mean(table**2)))


def hardness_decay_sweep(
    n: int,
    q: int,
    c: float,
    k_list: list[int],
    draws: int,
    seed: int,
    init_scheme: InitScheme | None = None,
    act: Activation | None = None,
    threads: int = 1,
) -> list[dict]:
    """Measured FCN gradient norms vs the binomial bounds for each pattern
    width; one row per k."""
    rng = Rng(seed)
    rows = []
    for k in k_list:
        bounds = thm2_bounds(n, k, q, c)
        target = Parity.consecutive(n, k)
        w_est, u_est = grad_norm_at_init(
            "fcn", init_scheme, target, n, k, q, c,
            draws=draws, act=act, rng=rng.split(k), threads=threads,
        )
        rows.append({
            "k": k,
            "w_bound": bounds.w_bound,
            "w_measured": w_est.mean,
            "w_se": w_est.se,
            "u_bound": bounds.u_bound,
            "u_measured": u_est.mean,
            "u_se": u_est.se,
            "draws": draws,
        })
    return rows


def write_sweep_csv(path, rows: list[dict]) -> None:
    cols = ["k", "w_bound", "w_measured", "w_se", "u_bound", "u_measured",
            "u_se", "draws"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow([row["k"]] + [repr(float(row[c])) for c in cols[1:-1]]
                            + [row["draws"]])
