"""Metrics, error bounds, baselines, and synthetic test tensors.

Quantities follow the experiment conventions used throughout the test suite:

* relative error   ||X_hat - X|| / ||X0||, where X is the tensor that was
                    sketched (possibly noisy) and X0 the clean reference
                    (the same tensor in noiseless settings).
* SNR (dB)          10 log10(||X|| / ||X0 - X||). Note the numerator is the
                    noisy tensor's norm; add_noise_snr solves the quadratic
                    this induces exactly, so the target round-trips.
* tail energy       Delta_{r,j}: the sum of squared singular values of the
                    mode-j unfolding beyond index r. The truncated
                    higher-order SVD is quasi-optimal against these.
* one-pass bound    (1 + e^eps) * sqrt((1+eps)/(1-eps) * sum_j Delta_{r,j}).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .ensembles import keyed_generator
from .errors import ConfigError, RankError, ShapeError
from .recover import TuckerFactorization, compute_core_twopass
from .tensor import inner, mode_product, norm, unfold

__all__ = [
    "ErrorReport",
    "relative_error",
    "snr_db",
    "add_noise_snr",
    "max_principal_angle",
    "tail_energy",
    "hosvd_truncate",
    "bound_rhs",
    "gen_lowrank",
    "gen_superdiag_exp",
    "gen_superdiag_poly",
    "tail_baseline",
]


@dataclass
class ErrorReport:
    """Per-trial evaluation record; fields are None when not applicable."""

    relative_error_onepass: float | None = None
    relative_error_twopass: float | None = None
    snr_db: float | None = None
    max_principal_angle_deg: list | None = None  # one entry per mode
    bound_rhs: float | None = None
    wall_times: dict = field(default_factory=dict)  # seconds per phase


def relative_error(x_hat, x, x0=None):
    """||x_hat - x|| / ||x0||; x0 defaults to x (the noiseless convention)."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x_hat.shape != x.shape:
        raise ShapeError(f"shape mismatch: {x_hat.shape} vs {x.shape}")
    denom = norm(x if x0 is None else x0)
    if denom == 0.0:
        raise ConfigError("relative error is undefined against a zero reference tensor")
    return norm(x_hat - x) / denom


def snr_db(x, x0):
    """Signal-to-noise ratio 10 log10(||x|| / ||x0 - x||) in decibels; +inf when noiseless."""
    x = np.asarray(x, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if x.shape != x0.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {x0.shape}")
    noise = norm(x0 - x)
    if noise == 0.0:
        return math.inf
    return 10.0 * math.log10(norm(x) / noise)


def add_noise_snr(x0, target_db, seed):
    """Add white gaussian noise scaled so snr_db(result, x0) hits target_db exactly.

    With rho = 10^(target/10) and N the unit draw, the scale s must satisfy
    ||x0 + s N|| = rho * s * ||N||, a quadratic in s solved in closed form;
    the positive root is taken. Raises when no positive solution exists
    (targets at or below 0 dB can be unreachable for a given draw).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    rng = keyed_generator(seed, "noise", *x0.shape)
    noise = rng.standard_normal(x0.shape)
    rho = 10.0 ** (float(target_db) / 10.0)
    nn = norm(noise) ** 2
    xx = norm(x0) ** 2
    xn = inner(x0, noise)
    a = nn * (rho * rho - 1.0)
    if a <= 0.0:
        raise ConfigError(f"snr target {target_db} dB is not reachable (needs a positive ratio)")
    disc = xn * xn + a * xx
    s = (xn + math.sqrt(disc)) / a
    if s <= 0.0:
        raise ConfigError(f"no positive noise scale reaches {target_db} dB")
    return x0 + s * noise


def max_principal_angle(q, u):
    """Largest canonical angle between the column spaces of q and u, in degrees.

    Both inputs must have orthonormal columns (checked to 1e-8). The angle is
    arccos of the smallest singular value of q^T u, clamped to [0, 90].
    """
    q = np.asarray(q, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if q.shape != u.shape:
        raise ShapeError(f"subspace bases differ in shape: {q.shape} vs {u.shape}")
    for name, a in (("first", q), ("second", u)):
        gram = a.T @ a
        if np.linalg.norm(gram - np.eye(a.shape[1])) > 1e-8:
            raise ConfigError(f"{name} basis does not have orthonormal columns")
    smin = scipy.linalg.svdvals(q.T @ u).min() if q.shape[1] else 1.0
    smin = min(max(smin, 0.0), 1.0)
    return float(np.clip(math.degrees(math.acos(smin)), 0.0, 90.0))


def tail_energy(x, r, j):
    """Sum of squared singular values of the mode-j unfolding beyond index r."""
    m = unfold(x, j)
    if r > min(m.shape):
        raise RankError(f"rank {r} exceeds min dimension {min(m.shape)} of the mode-{j} unfolding")
    s = scipy.linalg.svdvals(m)
    return float(np.sum(s[r:] ** 2))


def hosvd_truncate(x, r):
    """Plain truncated higher-order SVD: per-mode leading singular vectors, then project.

    The classical quasi-optimal baseline: its squared error is at most the sum
    of the per-mode tail energies.
    """
    x = np.asarray(x, dtype=np.float64)
    if r > min(x.shape):
        raise RankError(f"rank {r} exceeds smallest mode length {min(x.shape)}")
    factors = []
    for j in range(1, x.ndim + 1):
        u, _, _ = scipy.linalg.svd(unfold(x, j), full_matrices=False)
        factors.append(u[:, :r])
    core = compute_core_twopass(x, factors)
    return TuckerFactorization(core=core, factors=factors)


def bound_rhs(eps, deltas):
    """One-pass error bound value: (1 + e^eps) * sqrt((1+eps)/(1-eps) * sum(deltas))."""
    eps = float(eps)
    if not 0.0 < eps < 1.0:
        raise ConfigError(f"eps must be in (0, 1), got {eps}")
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.size == 0:
        raise ConfigError("need at least one tail energy")
    if np.any(deltas < 0.0):
        raise ConfigError("tail energies must be non-negative")
    return float((1.0 + math.exp(eps)) * math.sqrt((1.0 + eps) / (1.0 - eps) * deltas.sum()))


def gen_lowrank(n, d, r, seed):
    """Random exactly-rank-r tensor: uniform [0,1] core, orthonormalized gaussian factors.

    Returns (tensor, factors). Deterministic in `seed`.
    """
    if r > n:
        raise RankError(f"rank {r} exceeds mode length {n}")
    core = keyed_generator(seed, "lowrank-core").random((r,) * d)
    factors = []
    for i in range(1, d + 1):
        g = keyed_generator(seed, "lowrank-factor", i).standard_normal((n, r))
        q, _ = scipy.linalg.qr(g, mode="economic")
        factors.append(q)
    x = core
    for i, q in enumerate(factors, start=1):
        x = mode_product(x, q, i)
    return x, factors


def _superdiag(n, d, r, tail):
    if r > n:
        raise RankError(f"rank {r} exceeds mode length {n}")
    if r + 1 >= n:
        warnings.warn(f"super-diagonal tensor with n={n}, r={r} has no decaying tail", stacklevel=3)
    x = np.zeros((n,) * d)
    idx = np.arange(n)
    diag = np.ones(n)
    for i in range(r + 1, n):  # zero-based position i holds 1-based index i+1
        diag[i] = tail(i + 1 - r)
    x[tuple(idx for _ in range(d))] = diag
    return x


def gen_superdiag_exp(n, d, r):
    """Diagonal test tensor: ones through index r+1, then 10^-(i-r) decay (1-based i)."""
    return _superdiag(n, d, r, lambda k: 10.0 ** (-k))


def gen_superdiag_poly(n, d, r):
    """Diagonal test tensor: ones through index r+1, then (i-r)^-1 decay (1-based i)."""
    return _superdiag(n, d, r, lambda k: 1.0 / k)


def tail_baseline(x, r):
    """Norm of the diagonal beyond index r, relative to the tensor norm.

    The floor any rank-r approximation of a super-diagonal tensor converges to.
    """
    x = np.asarray(x, dtype=np.float64)
    n = min(x.shape)
    idx = np.arange(r, n)
    tail = x[tuple(idx for _ in range(x.ndim))]
    return float(np.linalg.norm(tail) / norm(x))
