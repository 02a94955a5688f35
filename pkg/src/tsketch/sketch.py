"""One-pass sketching of dense tensors, streamed as slabs along the last mode.

A measurement campaign is described by a :class:`SketchPlan`. For a d-mode
tensor it defines:

* d leave-one-out sketches. Sketch j compresses every mode except mode j,
  which stays at full length n_j and is hit only by a square "diagonal" map
  (identity by default). Three structures are supported:

  - ``kronecker``: one small map per (sketch, mode) pair, applied modewise;
    the composite acting on the unfolding is their Kronecker product in
    descending mode order and is never materialized. B_j is n_j x m^(d-1).
  - ``khatri_rao``: per-mode components share the row count m and the
    composite is their row-wise Kronecker product (descending mode order),
    rescaled so a unit vector keeps unit expected squared norm. B_j is n x m.
  - ``unstructured``: a single dense m x prod(n_k, k != j) map per sketch,
    memory-guarded because nothing about it is compressible.

* one core sketch: the tensor compressed on every mode down to side m_c.

All measurements are linear, so a tensor arriving in last-mode slabs can be
sketched additively: each slab contributes through the map columns its index
range selects. ``SketchAccumulator`` holds exactly the fixed-size measurement
arrays (never the slabs themselves), supports merging with a disjoint peer,
and finalizes into a :class:`SketchBundle`. Batch sketching is the special
case of one slab covering the whole mode, which is how the convenience
functions below are implemented.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .ensembles import FAMILIES, EnsembleSpec, derive_seed, materialize
from .errors import ConfigError, ShapeError
from .tensor import face_split_all, fold, mode_product, unfold

__all__ = [
    "LOO_KINDS",
    "SketchPlan",
    "make_plan",
    "SlabChunk",
    "SketchBundle",
    "SketchAccumulator",
    "accumulator_init",
    "accumulator_update",
    "accumulator_merge",
    "accumulator_finalize",
    "kron_loo_sketch",
    "khat_loo_sketch",
    "unstructured_loo_sketch",
    "core_sketch",
    "sketch",
    "slab_chunks",
]

LOO_KINDS = ("kronecker", "khatri_rao", "unstructured")

# Families that are square and full rank by construction, hence invertible
# when used as the diagonal (uncompressed-mode) map.
_DIAG_FAMILIES = ("identity", "gaussian")

DEFAULT_MEM_CAP_MB = 256.0


def _mem_cap_mb():
    raw = os.environ.get("TSKETCH_MEM_CAP_MB")
    if raw is None:
        return DEFAULT_MEM_CAP_MB
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"TSKETCH_MEM_CAP_MB is not a number: {raw!r}")


@dataclass(frozen=True)
class SketchPlan:
    """Everything needed to reproduce a measurement campaign from its seed.

    `m` is the per-mode sketch dimension for kronecker plans and the composite
    row count for khatri_rao / unstructured plans. `loo_families[i-1]` is the
    family of every map that compresses mode i; `core_families[i-1]` likewise
    for the core maps.
    """

    shape: tuple
    loo_kind: str
    m: int
    m_c: int
    loo_families: tuple
    core_families: tuple
    diag_family: str = "identity"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        object.__setattr__(self, "loo_families", tuple(self.loo_families))
        object.__setattr__(self, "core_families", tuple(self.core_families))
        if self.d < 1 or any(n < 1 for n in self.shape):
            raise ShapeError(f"bad tensor shape {self.shape}")
        if self.loo_kind not in LOO_KINDS:
            raise ConfigError(f"loo_kind must be one of {LOO_KINDS}, got {self.loo_kind!r}")
        if self.m < 1 or self.m_c < 1:
            raise ConfigError("sketch dimensions m and m_c must be >= 1")
        if len(self.loo_families) != self.d or len(self.core_families) != self.d:
            raise ConfigError("need one leave-one-out family and one core family per mode")
        if self.diag_family not in _DIAG_FAMILIES:
            raise ConfigError(
                f"diagonal family must be full rank by construction {_DIAG_FAMILIES}, "
                f"got {self.diag_family!r}"
            )
        if self.loo_kind == "unstructured" and len(set(self.loo_families)) != 1:
            raise ConfigError("unstructured sketches use a single family for the composite map")
        for fam in (*self.loo_families, *self.core_families):
            if fam not in FAMILIES:
                raise ConfigError(f"unknown ensemble family {fam!r}")
        # Fail fast on infeasible specs (e.g. srtt with more rows than columns);
        # constructing an EnsembleSpec validates it.
        self.all_specs()

    @property
    def d(self):
        return len(self.shape)

    def diag_spec(self, j):
        n = self.shape[j - 1]
        return EnsembleSpec(self.diag_family, n, n, derive_seed(self.seed, "loo", j, j))

    def loo_spec(self, j, i):
        """Spec of the map in sketch j acting on mode i (i != j)."""
        if i == j:
            return self.diag_spec(j)
        return EnsembleSpec(
            self.loo_families[i - 1], self.m, self.shape[i - 1], derive_seed(self.seed, "loo", j, i)
        )

    def unstructured_spec(self, j):
        """Spec of the single dense composite for sketch j (mode index 0 = all remaining modes)."""
        cols = 1
        for k in range(1, self.d + 1):
            if k != j:
                cols *= self.shape[k - 1]
        return EnsembleSpec(self.loo_families[0], self.m, cols, derive_seed(self.seed, "loo", j, 0))

    def core_spec(self, i):
        return EnsembleSpec(
            self.core_families[i - 1], self.m_c, self.shape[i - 1], derive_seed(self.seed, "core", i)
        )

    def all_specs(self):
        """(i, j, spec) records for every constituent map, in a fixed order."""
        out = []
        for j in range(1, self.d + 1):
            out.append((j, j, self.diag_spec(j)))
            if self.loo_kind == "unstructured":
                out.append((j, 0, self.unstructured_spec(j)))
            else:
                for i in range(1, self.d + 1):
                    if i != j:
                        out.append((j, i, self.loo_spec(j, i)))
        for i in range(1, self.d + 1):
            out.append((0, i, self.core_spec(i)))
        return out

    def khat_scale(self):
        """Rescale applied to the raw row-wise Kronecker composite.

        Components carry per-entry second moment 1/m, so the (d-1)-fold
        composite has entry variance m^-(d-1); scaling by m^((d-2)/2) restores
        variance 1/m, i.e. E||Omega x||^2 = ||x||^2.
        """
        return float(self.m) ** ((self.d - 2) / 2.0)

    def loo_entry_count(self):
        """Total stored leave-one-out entries across all d sketches."""
        if self.loo_kind == "kronecker":
            return sum(self.shape) * self.m ** (self.d - 1)
        return sum(self.shape) * self.m

    def core_entry_count(self):
        return self.m_c**self.d


def expand_families(family, d):
    """Expand a family argument to a per-mode tuple; 'mix' cycles three kinds by mode."""
    if isinstance(family, str):
        if family == "mix":
            cycle = ("gaussian", "srtt", "sparse_sign")
            return tuple(cycle[i % 3] for i in range(d))
        return (family,) * d
    fams = tuple(family)
    if len(fams) != d:
        raise ConfigError(f"expected {d} families, got {len(fams)}")
    return fams


def make_plan(shape, loo_kind, m, m_c, loo_family="gaussian", core_family=None, diag_family="identity", seed=0):
    """Convenience constructor: accepts one family name, a per-mode list, or 'mix'."""
    d = len(tuple(shape))
    if core_family is None:
        core_family = loo_family
    return SketchPlan(
        shape=tuple(shape),
        loo_kind=loo_kind,
        m=int(m),
        m_c=int(m_c),
        loo_families=expand_families(loo_family, d),
        core_families=expand_families(core_family, d),
        diag_family=diag_family,
        seed=int(seed),
    )


@dataclass(frozen=True)
class SlabChunk:
    """A contiguous slab of the tensor along its last mode.

    `payload` has the leading d-1 mode lengths of the full tensor and `count`
    entries along the last mode, covering indices [start, start+count).
    """

    start: int
    count: int
    payload: np.ndarray


def slab_chunks(x, n_slabs):
    """Split a tensor into `n_slabs` roughly equal last-mode slabs (a test/demo helper)."""
    x = np.asarray(x, dtype=np.float64)
    bounds = np.linspace(0, x.shape[-1], n_slabs + 1).astype(int)
    return [
        SlabChunk(int(a), int(b - a), np.ascontiguousarray(x[..., a:b]))
        for a, b in zip(bounds[:-1], bounds[1:])
    ]


@dataclass
class SketchBundle:
    """The complete output of a measurement campaign.

    `loo[j-1]` is B_j: n_j x m^(d-1) for kronecker plans, n_j x m otherwise.
    `core` is the all-modes-compressed tensor with every side m_c. `partial`
    marks a bundle finalized before the stream covered the whole last mode.
    """

    plan: SketchPlan
    loo: list
    core: np.ndarray
    partial: bool = False

    def loo_entry_count(self):
        return sum(b.size for b in self.loo)

    def core_entry_count(self):
        return self.core.size


class SketchAccumulator:
    """Single-writer additive state for one measurement campaign.

    Holds the plan, the materialized maps, and fixed-size measurement arrays.
    Chunks are folded in by `update` and never retained; `merge` combines two
    accumulators built from the same plan over disjoint slab ranges.
    """

    def __init__(self, plan):
        if not isinstance(plan, SketchPlan):
            raise ConfigError("accumulator needs a SketchPlan")
        self.plan = plan
        d = plan.d
        shape = plan.shape

        self._diag = [None] * d  # None encodes an identity diagonal map
        if plan.diag_family != "identity":
            self._diag = [materialize(plan.diag_spec(j)) for j in range(1, d + 1)]

        if plan.loo_kind == "kronecker":
            # Per-sketch modewise maps; measurement tensors keep mode j uncompressed.
            self._maps = [
                [None if i == j else materialize(plan.loo_spec(j, i)) for i in range(1, d + 1)]
                for j in range(1, d + 1)
            ]
            self._loo = [
                np.zeros(tuple(shape[j - 1] if i == j else plan.m for i in range(1, d + 1)))
                for j in range(1, d + 1)
            ]
        elif plan.loo_kind == "khatri_rao":
            self._maps = [
                [None if i == j else materialize(plan.loo_spec(j, i)) for i in range(1, d + 1)]
                for j in range(1, d + 1)
            ]
            self._loo = [np.zeros((shape[j - 1], plan.m)) for j in range(1, d + 1)]
        else:
            cap_mb = _mem_cap_mb()
            for j in range(1, d + 1):
                spec = plan.unstructured_spec(j)
                need_mb = spec.rows * spec.cols * 8.0 / 2**20
                if need_mb > cap_mb:
                    raise ConfigError(
                        f"unstructured map for sketch {j} needs {need_mb:.1f} MiB, over the "
                        f"{cap_mb:.0f} MiB cap (set TSKETCH_MEM_CAP_MB to raise it)"
                    )
            self._maps = [materialize(plan.unstructured_spec(j)) for j in range(1, d + 1)]
            self._loo = [np.zeros((shape[j - 1], plan.m)) for j in range(1, d + 1)]

        self._phi = [materialize(plan.core_spec(i)) for i in range(1, d + 1)]
        self._core = np.zeros((plan.m_c,) * d)
        self._covered = []  # disjoint (start, count) slabs seen so far

    # -- streaming -----------------------------------------------------------

    def _check_chunk(self, chunk):
        n_last = self.plan.shape[-1]
        if chunk.start < 0 or chunk.count < 0 or chunk.start + chunk.count > n_last:
            raise ShapeError(
                f"slab [{chunk.start}, {chunk.start + chunk.count}) outside mode of length {n_last}"
            )
        payload = np.asarray(chunk.payload, dtype=np.float64)
        want = self.plan.shape[:-1] + (chunk.count,)
        if payload.shape != want:
            raise ShapeError(f"payload shape {payload.shape}, expected {want}")
        for s, c in self._covered:
            if chunk.count and c and chunk.start < s + c and s < chunk.start + chunk.count:
                raise ConfigError(
                    f"slab [{chunk.start}, {chunk.start + chunk.count}) overlaps [{s}, {s + c})"
                )
        return payload

    def update(self, chunk):
        """Fold one slab into the sketches. The chunk is not retained."""
        payload = self._check_chunk(chunk)
        if chunk.count == 0:
            return
        d = self.plan.d
        lo, hi = chunk.start, chunk.start + chunk.count

        for j in range(1, d + 1):
            self._add_loo(j, payload, lo, hi)

        # Core: every mode compressed; the last mode uses only the slab's columns.
        g = payload
        for i in range(1, d):
            g = mode_product(g, self._phi[i - 1], i)
        self._core += mode_product(g, self._phi[d - 1][:, lo:hi], d)

        self._covered.append((chunk.start, chunk.count))
        self._covered.sort()

    def _add_loo(self, j, payload, lo, hi):
        d = self.plan.d
        kind = self.plan.loo_kind
        diag = self._diag[j - 1]

        if kind == "kronecker":
            g = payload
            # Compressed modes ascending; the uncompressed (leave-out) mode last.
            for i in range(1, d + 1):
                if i == j:
                    continue
                a = self._maps[j - 1][i - 1]
                g = mode_product(g, a[:, lo:hi] if i == d else a, i)
            if j == d:
                block = g if diag is None else mode_product(g, diag[:, lo:hi], d)
                if diag is None:
                    self._loo[j - 1][..., lo:hi] += block
                else:
                    self._loo[j - 1] += block
            else:
                self._loo[j - 1] += g if diag is None else mode_product(g, diag, j)
            return

        # khatri_rao / unstructured: work on the mode-j unfolding of the slab.
        s = unfold(payload, j)
        if kind == "khatri_rao":
            comps = []
            for i in range(d, 0, -1):  # descending, matching the unfolding's column order
                if i == j:
                    continue
                a = self._maps[j - 1][i - 1]
                comps.append(a[:, lo:hi] if i == d else a)
            composite = face_split_all(comps) * self.plan.khat_scale()
        else:
            omega = self._maps[j - 1]
            if j == d:
                composite = omega
            else:
                stride = 1
                for k in range(1, d + 1):
                    if k != j and k != d:
                        stride *= self.plan.shape[k - 1]
                composite = omega[:, lo * stride : hi * stride]
        contrib = s @ composite.T
        if j == d:
            if diag is None:
                self._loo[j - 1][lo:hi, :] += contrib
            else:
                self._loo[j - 1] += diag[:, lo:hi] @ contrib
        else:
            self._loo[j - 1] += contrib if diag is None else diag @ contrib

    # -- merging / finalizing --------------------------------------------------

    def merge(self, other):
        """Combine with a peer accumulator over the same plan and disjoint slabs."""
        if not isinstance(other, SketchAccumulator):
            raise ConfigError("can only merge SketchAccumulators")
        if self.plan != other.plan:
            raise ConfigError("cannot merge accumulators built from different plans")
        for s, c in self._covered:
            for s2, c2 in other._covered:
                if c and c2 and s < s2 + c2 and s2 < s + c:
                    raise ConfigError(f"merge overlap: [{s}, {s + c}) and [{s2}, {s2 + c2})")
        out = SketchAccumulator(self.plan)
        out._loo = [a + b for a, b in zip(self._loo, other._loo)]
        out._core = self._core + other._core
        out._covered = sorted(self._covered + other._covered)
        return out

    def coverage_complete(self):
        pos = 0
        for s, c in sorted(self._covered):
            if c == 0:
                continue
            if s != pos:
                return False
            pos = s + c
        return pos == self.plan.shape[-1]

    def finalize(self):
        """Produce the bundle. Incomplete coverage is allowed but flagged partial."""
        if self.plan.loo_kind == "kronecker":
            loo = [unfold(t, j) for j, t in enumerate(self._loo, start=1)]
        else:
            loo = [b.copy() for b in self._loo]
        return SketchBundle(
            plan=self.plan,
            loo=loo,
            core=self._core.copy(),
            partial=not self.coverage_complete(),
        )


# Spec-style free-function aliases around the accumulator.


def accumulator_init(plan):
    return SketchAccumulator(plan)


def accumulator_update(acc, chunk):
    acc.update(chunk)


def accumulator_merge(a, b):
    return a.merge(b)


def accumulator_finalize(acc):
    return acc.finalize()


def _full_chunk(x, plan):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != plan.shape:
        raise ShapeError(f"tensor shape {x.shape} does not match plan shape {plan.shape}")
    return SlabChunk(0, plan.shape[-1], x)


def sketch(x, plan):
    """Batch sketch: one slab covering the whole last mode, then finalize."""
    acc = SketchAccumulator(plan)
    acc.update(_full_chunk(x, plan))
    return acc.finalize()


def _loo_of_kind(x, plan, kind):
    if plan.loo_kind != kind:
        raise ConfigError(f"plan.loo_kind is {plan.loo_kind!r}, expected {kind!r}")
    return sketch(x, plan).loo


def kron_loo_sketch(x, plan):
    """The d leave-one-out sketches of a kronecker plan (B_j is n_j x m^(d-1))."""
    return _loo_of_kind(x, plan, "kronecker")


def khat_loo_sketch(x, plan):
    """The d leave-one-out sketches of a khatri_rao plan (B_j is n_j x m)."""
    return _loo_of_kind(x, plan, "khatri_rao")


def unstructured_loo_sketch(x, plan):
    """The d leave-one-out sketches of an unstructured plan (B_j is n_j x m)."""
    return _loo_of_kind(x, plan, "unstructured")


def core_sketch(x, plan):
    """The all-modes-compressed core measurement tensor, every side m_c."""
    acc = SketchAccumulator(plan)
    acc.update(_full_chunk(x, plan))
    return acc.finalize().core
