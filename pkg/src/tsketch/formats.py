"""Binary file formats. Everything is little-endian; floats are IEEE-754 f64.

Four magics:

* ``TNSR`` - a dense tensor: version u32, d u32, shape d x u64, then the
  entries in canonical first-mode-fastest order.
* ``TSKC`` - a chunk stream: version u32, d u32, shape d x u64, then records
  {start u64, count u64, payload f64...} covering last-mode slabs, until EOF.
* ``TSKB`` - a sketch bundle: version u32, the plan, one record per
  constituent measurement-matrix spec (family u8, rows u64, cols u64,
  seed u64, prefixed by its (sketch, mode) indices), the per-mode sketch
  matrices (column-major), the core tensor, and a partial-coverage flag u8.
* ``TUCK`` - a factorization: version u32, d u32, mode lengths d x u64,
  r u64, core (canonical order), factors (column-major), and a flag u8
  recording that each factor column was sign-normalized (largest-magnitude
  entry positive) at write time, with the core adjusted so the reconstruction
  is unchanged.
"""

from __future__ import annotations

import struct

import numpy as np

from .ensembles import FAMILIES, FAMILY_NAMES, EnsembleSpec
from .errors import IOFormatError
from .recover import TuckerFactorization
from .sketch import LOO_KINDS, SketchBundle, SketchPlan, SlabChunk

__all__ = [
    "write_tensor",
    "read_tensor",
    "write_chunks",
    "read_chunks",
    "read_chunk_shape",
    "read_chunks_dense",
    "write_bundle",
    "read_bundle",
    "write_factorization",
    "read_factorization",
]

VERSION = 1

_KIND_IDS = {kind: i for i, kind in enumerate(LOO_KINDS)}
_KIND_NAMES = {i: kind for kind, i in _KIND_IDS.items()}


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise IOFormatError(f"truncated file while reading {what} ({len(buf)} of {n} bytes)")
    return buf


def _expect_magic(f, magic):
    got = f.read(4)
    if got != magic:
        raise IOFormatError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
    if version != VERSION:
        raise IOFormatError(f"unsupported {magic.decode()} version {version}")


def _read_f64(f, count, what):
    return np.frombuffer(_read_exact(f, 8 * count, what), dtype="<f8").copy()


def _shape_header(f):
    (d,) = struct.unpack("<I", _read_exact(f, 4, "mode count"))
    if d < 1:
        raise IOFormatError("mode count must be >= 1")
    shape = struct.unpack(f"<{d}Q", _read_exact(f, 8 * d, "shape"))
    if any(n < 1 for n in shape):
        raise IOFormatError(f"bad shape {shape}")
    return tuple(int(n) for n in shape)


# -- tensors -------------------------------------------------------------


def write_tensor(path, x):
    x = np.asarray(x, dtype=np.float64)
    with open(path, "wb") as f:
        f.write(b"TNSR")
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", x.ndim))
        f.write(struct.pack(f"<{x.ndim}Q", *x.shape))
        f.write(x.ravel(order="F").astype("<f8").tobytes())


def read_tensor(path):
    try:
        f = open(path, "rb")
    except OSError as e:
        raise IOFormatError(f"cannot open {path}: {e}")
    with f:
        _expect_magic(f, b"TNSR")
        shape = _shape_header(f)
        count = int(np.prod(shape, dtype=np.int64))
        data = _read_f64(f, count, "tensor entries")
        if f.read(1):
            raise IOFormatError(f"trailing bytes after {count} tensor entries")
    return data.reshape(shape, order="F")


# -- chunk streams ---------------------------------------------------------


def write_chunks(path, shape, chunks):
    """Write last-mode slabs; `chunks` yields SlabChunk objects."""
    shape = tuple(int(n) for n in shape)
    with open(path, "wb") as f:
        f.write(b"TSKC")
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(shape)))
        f.write(struct.pack(f"<{len(shape)}Q", *shape))
        for c in chunks:
            payload = np.asarray(c.payload, dtype=np.float64)
            if payload.shape != shape[:-1] + (c.count,):
                raise IOFormatError(
                    f"chunk payload shape {payload.shape} inconsistent with {shape} "
                    f"and count {c.count}"
                )
            f.write(struct.pack("<QQ", c.start, c.count))
            f.write(payload.ravel(order="F").astype("<f8").tobytes())
            del payload


def read_chunk_shape(path):
    """Just the declared tensor shape of a chunk stream."""
    try:
        f = open(path, "rb")
    except OSError as e:
        raise IOFormatError(f"cannot open {path}: {e}")
    with f:
        _expect_magic(f, b"TSKC")
        return _shape_header(f)


def read_chunks(path):
    """Yield the slabs of a chunk stream one at a time (generator)."""
    try:
        f = open(path, "rb")
    except OSError as e:
        raise IOFormatError(f"cannot open {path}: {e}")
    with f:
        _expect_magic(f, b"TSKC")
        shape = _shape_header(f)
        slab_entries = int(np.prod(shape[:-1], dtype=np.int64))
        while True:
            head = f.read(16)
            if not head:
                return
            if len(head) != 16:
                raise IOFormatError("truncated chunk record header")
            start, count = struct.unpack("<QQ", head)
            data = _read_f64(f, slab_entries * count, f"chunk [{start}, {start + count})")
            yield SlabChunk(
                int(start), int(count), data.reshape(shape[:-1] + (int(count),), order="F")
            )


def read_chunks_dense(path):
    """Assemble a chunk stream into one dense tensor, checking full coverage."""
    shape = read_chunk_shape(path)
    x = np.zeros(shape, order="F")
    seen = np.zeros(shape[-1], dtype=bool)
    for c in read_chunks(path):
        if c.start + c.count > shape[-1]:
            raise IOFormatError(f"chunk [{c.start}, {c.start + c.count}) exceeds mode length")
        if seen[c.start : c.start + c.count].any():
            raise IOFormatError(f"chunk [{c.start}, {c.start + c.count}) overlaps earlier data")
        seen[c.start : c.start + c.count] = True
        x[..., c.start : c.start + c.count] = c.payload
    if not seen.all():
        raise IOFormatError("chunk stream does not cover the full tensor")
    return x


# -- sketch bundles ----------------------------------------------------------


def _write_matrix(f, a):
    f.write(struct.pack("<QQ", a.shape[0], a.shape[1]))
    f.write(np.asarray(a, dtype=np.float64).ravel(order="F").astype("<f8").tobytes())


def _read_matrix(f, what):
    rows, cols = struct.unpack("<QQ", _read_exact(f, 16, f"{what} dimensions"))
    data = _read_f64(f, rows * cols, what)
    return data.reshape((rows, cols), order="F")


def write_bundle(path, bundle):
    plan = bundle.plan
    d = plan.d
    with open(path, "wb") as f:
        f.write(b"TSKB")
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", d))
        f.write(struct.pack(f"<{d}Q", *plan.shape))
        f.write(struct.pack("<B", _KIND_IDS[plan.loo_kind]))
        f.write(struct.pack("<QQ", plan.m, plan.m_c))
        f.write(struct.pack("<B", FAMILIES[plan.diag_family]))
        f.write(bytes(FAMILIES[fam] for fam in plan.loo_families))
        f.write(bytes(FAMILIES[fam] for fam in plan.core_families))
        f.write(struct.pack("<Q", plan.seed))
        specs = plan.all_specs()
        f.write(struct.pack("<I", len(specs)))
        for j, i, spec in specs:
            f.write(struct.pack("<IIBQQQ", j, i, FAMILIES[spec.family], spec.rows, spec.cols, spec.seed))
        for b in bundle.loo:
            _write_matrix(f, b)
        f.write(bundle.core.ravel(order="F").astype("<f8").tobytes())
        f.write(struct.pack("<B", 1 if bundle.partial else 0))


def read_bundle(path):
    try:
        f = open(path, "rb")
    except OSError as e:
        raise IOFormatError(f"cannot open {path}: {e}")
    with f:
        _expect_magic(f, b"TSKB")
        shape = _shape_header(f)
        d = len(shape)
        (kind_id,) = struct.unpack("<B", _read_exact(f, 1, "sketch kind"))
        if kind_id not in _KIND_NAMES:
            raise IOFormatError(f"unknown sketch kind id {kind_id}")
        m, m_c = struct.unpack("<QQ", _read_exact(f, 16, "sketch dimensions"))
        (diag_id,) = struct.unpack("<B", _read_exact(f, 1, "diagonal family"))
        loo_ids = _read_exact(f, d, "leave-one-out families")
        core_ids = _read_exact(f, d, "core families")
        (seed,) = struct.unpack("<Q", _read_exact(f, 8, "seed"))
        try:
            plan = SketchPlan(
                shape=shape,
                loo_kind=_KIND_NAMES[kind_id],
                m=int(m),
                m_c=int(m_c),
                loo_families=tuple(FAMILY_NAMES[b] for b in loo_ids),
                core_families=tuple(FAMILY_NAMES[b] for b in core_ids),
                diag_family=FAMILY_NAMES[diag_id],
                seed=int(seed),
            )
        except KeyError as e:
            raise IOFormatError(f"unknown family id {e}")
        (n_specs,) = struct.unpack("<I", _read_exact(f, 4, "spec count"))
        stored = []
        for _ in range(n_specs):
            j, i, fam, rows, cols, sd = struct.unpack(
                "<IIBQQQ", _read_exact(f, 33, "ensemble spec record")
            )
            stored.append((j, i, EnsembleSpec(FAMILY_NAMES[fam], int(rows), int(cols), int(sd))))
        if stored != plan.all_specs():
            raise IOFormatError("stored measurement specs do not match the plan (corrupt bundle)")
        loo = [_read_matrix(f, f"mode-{j} sketch") for j in range(1, d + 1)]
        core = _read_f64(f, plan.m_c**d, "core sketch").reshape((plan.m_c,) * d, order="F")
        (partial,) = struct.unpack("<B", _read_exact(f, 1, "partial flag"))
        if f.read(1):
            raise IOFormatError("trailing bytes after bundle")
    return SketchBundle(plan=plan, loo=loo, core=core, partial=bool(partial))


# -- factorizations ----------------------------------------------------------


def _sign_normalized(t):
    """Copy of the factorization with each factor column's largest-magnitude entry positive.

    The core absorbs the sign flips, so reconstruction is bit-for-bit
    unaffected (multiplying by +-1 is exact).
    """
    core = np.array(t.core, dtype=np.float64, copy=True)
    factors = []
    for i, q in enumerate(t.factors, start=1):
        q = np.array(q, dtype=np.float64, copy=True)
        signs = np.ones(q.shape[1])
        for k in range(q.shape[1]):
            lead = np.argmax(np.abs(q[:, k]))
            if q[lead, k] < 0.0:
                signs[k] = -1.0
        q *= signs[None, :]
        shape_one = [1] * core.ndim
        shape_one[i - 1] = len(signs)
        core *= signs.reshape(shape_one)
        factors.append(q)
    return TuckerFactorization(core=core, factors=factors)


def write_factorization(path, t):
    t = _sign_normalized(t)
    d = t.core.ndim
    with open(path, "wb") as f:
        f.write(b"TUCK")
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", d))
        f.write(struct.pack(f"<{d}Q", *(q.shape[0] for q in t.factors)))
        f.write(struct.pack("<Q", t.rank))
        f.write(t.core.ravel(order="F").astype("<f8").tobytes())
        for q in t.factors:
            f.write(np.asarray(q).ravel(order="F").astype("<f8").tobytes())
        f.write(struct.pack("<B", 1))  # sign convention applied


def read_factorization(path):
    try:
        f = open(path, "rb")
    except OSError as e:
        raise IOFormatError(f"cannot open {path}: {e}")
    with f:
        _expect_magic(f, b"TUCK")
        (d,) = struct.unpack("<I", _read_exact(f, 4, "mode count"))
        if d < 1:
            raise IOFormatError("mode count must be >= 1")
        shape = struct.unpack(f"<{d}Q", _read_exact(f, 8 * d, "mode lengths"))
        (r,) = struct.unpack("<Q", _read_exact(f, 8, "rank"))
        core = _read_f64(f, r**d, "core").reshape((r,) * d, order="F")
        factors = []
        for n in shape:
            factors.append(_read_f64(f, n * r, "factor").reshape((n, r), order="F"))
        (flag,) = struct.unpack("<B", _read_exact(f, 1, "sign flag"))
        if flag not in (0, 1):
            raise IOFormatError(f"bad sign flag {flag}")
        if f.read(1):
            raise IOFormatError("trailing bytes after factorization")
    return TuckerFactorization(core=core, factors=factors)
