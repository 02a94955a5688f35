"""Recovery of a low Tucker-rank factorization from leave-one-out sketches.

The pipeline, given a bundle of d leave-one-out sketches plus a core sketch:

1. Factors: per mode i, undo the square diagonal map (a solve, skipped when it
   is the identity), then keep the r leading left singular vectors of the
   result. Each mode is independent.
2. Core, without touching the data again: peel the core sketch one mode at a
   time, solving the overdetermined system (Phi_i Q_i) H_new = H in the
   least-squares sense, modes ascending. This equals multiplying the core
   sketch by the pseudo-inverses of every Phi_i Q_i.
3. Core, with a second pass over the data: project, G = X x_i Q_i^T, which is
   the error-minimizing core for the recovered factors.

``recover_core_recycled`` reuses one leave-one-out sketch in place of the core
sketch. It is experimental: reusing measurements couples the factor-estimation
error into the core solve in a way none of the accuracy guarantees cover, but
empirically the overall error is comparable and it saves the core sketch
storage entirely.

Everything here reads only the sketch bundle (and, for the two-pass core, the
tensor the caller explicitly provides); no operation on the one-pass path
accepts the original data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .ensembles import materialize
from .errors import ConfigError, RankError, ShapeError, SingularError
from .tensor import fold, mode_product, multi_mode_product, unfold

__all__ = [
    "TuckerFactorization",
    "recover_factors",
    "recover_core_onepass",
    "recover_core_recycled",
    "compute_core_twopass",
    "one_pass",
    "two_pass",
    "reconstruct",
]

# Relative cutoff under which a singular value counts as zero in the
# rank-revealing solves below.
_SOLVE_RCOND = 1e-12


@dataclass
class TuckerFactorization:
    """Core tensor with every side r plus one n_i x r orthonormal factor per mode."""

    core: np.ndarray
    factors: list

    @property
    def d(self):
        return self.core.ndim

    @property
    def rank(self):
        return self.core.shape[0]

    @property
    def shape(self):
        return tuple(q.shape[0] for q in self.factors)


def _lstsq(a, b, mode):
    """Least squares through a rank-revealing orthogonal factorization.

    Raises SingularError naming the offending mode when the matrix is
    numerically rank deficient at the 1e-12 relative threshold.
    """
    sol, _, rank, _ = scipy.linalg.lstsq(a, b, cond=_SOLVE_RCOND, lapack_driver="gelsy")
    if rank < a.shape[1]:
        raise SingularError(
            f"measurement-times-factor matrix for mode {mode} is rank deficient "
            f"({rank} < {a.shape[1]})",
            mode=mode,
        )
    return sol


def recover_factors(bundle, r):
    """Estimate the d orthonormal factors from the leave-one-out sketches.

    Per mode: solve the square diagonal system when one was applied, then take
    the r leading left singular vectors. Ties at the r-th singular value keep
    the first r vectors in the order the SVD returns them (the subspace is not
    unique in that case).
    """
    plan = bundle.plan
    r = int(r)
    if r < 1:
        raise RankError(f"rank must be >= 1, got {r}")
    factors = []
    for i in range(1, plan.d + 1):
        b = bundle.loo[i - 1]
        if r > min(b.shape):
            raise RankError(
                f"rank {r} exceeds the {min(b.shape)} singular vectors available in mode {i} "
                f"(sketch is {b.shape[0]}x{b.shape[1]})"
            )
        if plan.diag_family == "identity":
            f = b
        else:
            f = _lstsq(materialize(plan.diag_spec(i)), b, mode=i)
        u, _, _ = scipy.linalg.svd(f, full_matrices=False)
        factors.append(u[:, :r])
    return factors


def recover_core_onepass(core_sketch, phis, qs):
    """Solve for the core from its sketch alone, one mode at a time, ascending.

    `phis` are the core measurement maps, `qs` the recovered factors. The
    result equals core_sketch multiplied by pinv(phis[i] @ qs[i]) on every
    mode, up to solver roundoff.
    """
    h = np.asarray(core_sketch, dtype=np.float64)
    d = h.ndim
    if len(phis) != d or len(qs) != d:
        raise ShapeError(f"need {d} core maps and {d} factors, got {len(phis)} and {len(qs)}")
    for i in range(1, d + 1):
        a = np.asarray(phis[i - 1]) @ np.asarray(qs[i - 1])
        if a.shape[0] < a.shape[1]:
            raise RankError(
                f"core sketch dimension {a.shape[0]} is below rank {a.shape[1]} in mode {i}"
            )
        sol = _lstsq(a, unfold(h, i), mode=i)
        new_shape = h.shape[: i - 1] + (sol.shape[0],) + h.shape[i:]
        h = fold(sol, new_shape, i)
    return h


def recover_core_recycled(b_j, omegas, qs):
    """Core estimate reusing one leave-one-out measurement tensor (experimental).

    `b_j` is the d-mode measurement tensor of a kronecker-structured sketch
    (mode j still full length), `omegas` the d maps that produced it (the
    square diagonal map in position j), `qs` the recovered factors. Same
    ascending mode-peeling solve as the one-pass core; no accuracy guarantee
    covers the reuse, so prefer the core sketch when one is available.
    """
    h = np.asarray(b_j, dtype=np.float64)
    d = h.ndim
    if len(omegas) != d or len(qs) != d:
        raise ShapeError(f"need {d} maps and {d} factors, got {len(omegas)} and {len(qs)}")
    for i in range(1, d + 1):
        a = np.asarray(omegas[i - 1]) @ np.asarray(qs[i - 1])
        if a.shape[0] < a.shape[1]:
            raise RankError(
                f"recycled sketch dimension {a.shape[0]} is below rank {a.shape[1]} in mode {i}"
            )
        sol = _lstsq(a, unfold(h, i), mode=i)
        new_shape = h.shape[: i - 1] + (sol.shape[0],) + h.shape[i:]
        h = fold(sol, new_shape, i)
    return h


def compute_core_twopass(x, qs):
    """Optimal core for the given factors, computed by projecting the data: G = X x_i Q_i^T."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != len(qs):
        raise ShapeError(f"tensor has {x.ndim} modes but {len(qs)} factors were given")
    return multi_mode_product(x, [(q.T, i) for i, q in enumerate(qs, start=1)])


def one_pass(bundle, r):
    """Factorization from the bundle alone; never sees the original tensor."""
    if bundle.partial:
        raise ConfigError("bundle is partial (stream did not cover the last mode); "
                          "one-pass recovery needs a complete sketch")
    qs = recover_factors(bundle, r)
    phis = [materialize(bundle.plan.core_spec(i)) for i in range(1, bundle.plan.d + 1)]
    core = recover_core_onepass(bundle.core, phis, qs)
    return TuckerFactorization(core=core, factors=qs)


def two_pass(bundle, x, r):
    """Factors from the bundle, core from a second pass over the tensor."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != bundle.plan.shape:
        raise ShapeError(f"tensor shape {x.shape} does not match plan shape {bundle.plan.shape}")
    qs = recover_factors(bundle, r)
    core = compute_core_twopass(x, qs)
    return TuckerFactorization(core=core, factors=qs)


def reconstruct(t):
    """Expand a factorization back to a dense tensor: core x_1 Q_1 ... x_d Q_d."""
    out = np.asarray(t.core, dtype=np.float64)
    for i, q in enumerate(t.factors, start=1):
        out = mode_product(out, q, i)
    return out
