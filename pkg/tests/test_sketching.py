"""Leave-one-out and core sketching: oracles, streaming, merging, accounting."""

import numpy as np
import pytest

from tsketch.ensembles import materialize
from tsketch.errors import ConfigError, ShapeError
from tsketch.sketch import (
    SketchAccumulator,
    SlabChunk,
    accumulator_finalize,
    accumulator_init,
    accumulator_merge,
    accumulator_update,
    core_sketch,
    khat_loo_sketch,
    kron_loo_sketch,
    make_plan,
    sketch,
    slab_chunks,
    unstructured_loo_sketch,
)
from tsketch.tensor import kron_all, multi_mode_product, unfold


def random_tensor(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


def loo_composite(plan, j):
    """Explicit dense leave-mode-j composite map, built the slow way."""
    others = [materialize(plan.loo_spec(j, i)) for i in range(plan.d, 0, -1) if i != j]
    if plan.loo_kind == "kronecker":
        return kron_all(others)
    rows = []
    for p in range(plan.m):
        w = np.array([1.0])
        for om in others:
            w = np.kron(w, om[p])
        rows.append(w)
    return np.asarray(rows) * plan.khat_scale()


class TestAgainstExplicitOperators:
    """Tiny instances where the whole measurement operator fits in memory."""

    def test_kronecker_matches_vec_oracle(self) -> None:
        x = random_tensor((4, 3, 2), seed=0)
        plan = make_plan(x.shape, "kronecker", 2, 2, seed=1)
        b = kron_loo_sketch(x, plan)
        for j in (1, 2, 3):
            diag = materialize(plan.diag_spec(j))
            expect = diag @ unfold(x, j) @ loo_composite(plan, j).T
            assert np.allclose(b[j - 1], expect, atol=1e-12)

    def test_khatri_rao_matches_row_loop_oracle(self) -> None:
        x = random_tensor((4, 3, 2), seed=2)
        plan = make_plan(x.shape, "khatri_rao", 5, 2, seed=3)
        b = khat_loo_sketch(x, plan)
        for j in (1, 2, 3):
            expect = unfold(x, j) @ loo_composite(plan, j).T
            assert np.allclose(b[j - 1], expect, atol=1e-12)

    def test_unstructured_matches_its_stored_map(self) -> None:
        x = random_tensor((4, 3, 2), seed=4)
        plan = make_plan(x.shape, "unstructured", 5, 2, seed=5)
        b = unstructured_loo_sketch(x, plan)
        for j in (1, 2, 3):
            omega = materialize(plan.unstructured_spec(j))
            assert np.allclose(b[j - 1], unfold(x, j) @ omega.T, atol=1e-12)

    def test_core_matches_modewise_compression(self) -> None:
        x = random_tensor((4, 3, 2), seed=6)
        plan = make_plan(x.shape, "kronecker", 2, 3, seed=7)
        phis = [(materialize(plan.core_spec(i)), i) for i in (1, 2, 3)]
        assert np.allclose(core_sketch(x, plan), multi_mode_product(x, phis), atol=1e-12)

    def test_gaussian_diagonal_map_is_applied(self) -> None:
        x = random_tensor((4, 3, 2), seed=8)
        plan = make_plan(x.shape, "kronecker", 2, 2, diag_family="gaussian", seed=9)
        b = kron_loo_sketch(x, plan)
        for j in (1, 2, 3):
            diag = materialize(plan.diag_spec(j))
            assert diag.shape == (x.shape[j - 1], x.shape[j - 1])
            expect = diag @ unfold(x, j) @ loo_composite(plan, j).T
            assert np.allclose(b[j - 1], expect, atol=1e-12)


class TestIdentityPlans:
    """With identity ensembles everywhere the sketches are exact copies."""

    def test_kronecker_identity_returns_unfoldings(self) -> None:
        x = random_tensor((3, 3, 3), seed=10)
        plan = make_plan(x.shape, "kronecker", 3, 3, loo_family="identity", seed=0)
        b = sketch(x, plan)
        for j in (1, 2, 3):
            assert np.array_equal(b.loo[j - 1], unfold(x, j))
        assert np.array_equal(b.core, x)

    def test_unstructured_identity_returns_unfoldings(self) -> None:
        x = random_tensor((3, 3, 3), seed=11)
        plan = make_plan(x.shape, "unstructured", 9, 3, loo_family="identity", seed=0)
        b = sketch(x, plan)
        for j in (1, 2, 3):
            assert np.array_equal(b.loo[j - 1], unfold(x, j))


def test_leave_one_out_shapes_at_full_scale() -> None:
    """n=300, d=3: kronecker m=25 gives 300x625 per mode, khatri_rao
    m=225 gives 300x225, streamed so the full tensor is never held."""
    shape = (300, 300, 300)
    kron_plan = make_plan(shape, "kronecker", 25, 10, seed=20)
    khat_plan = make_plan(shape, "khatri_rao", 225, 10, seed=21)
    accs = [SketchAccumulator(kron_plan), SketchAccumulator(khat_plan)]
    rng = np.random.default_rng(22)
    start = 0
    for width in (40,) * 7 + (20,):
        payload = rng.standard_normal((300, 300, width))
        for acc in accs:
            acc.update(SlabChunk(start, width, payload))
        start += width
    b_kron, b_khat = (acc.finalize() for acc in accs)
    assert not b_kron.partial and not b_khat.partial
    assert [b.shape for b in b_kron.loo] == [(300, 625)] * 3
    assert [b.shape for b in b_khat.loo] == [(300, 225)] * 3
    assert b_kron.core.shape == (10, 10, 10)


class TestStorageAccounting:
    def test_kronecker_entry_count(self) -> None:
        plan = make_plan((40, 40, 40), "kronecker", 15, 15, seed=0)
        assert plan.loo_entry_count() == 40 * 3 * 15**2
        assert plan.core_entry_count() == 15**3
        b = sketch(random_tensor((40, 40, 40), 12), plan)
        assert b.loo_entry_count() == plan.loo_entry_count()
        assert b.core_entry_count() == plan.core_entry_count()

    def test_khatri_rao_entry_count(self) -> None:
        plan = make_plan((40, 40, 40), "khatri_rao", 60, 15, seed=0)
        assert plan.loo_entry_count() == 3 * 60 * 40
        b = sketch(random_tensor((40, 40, 40), 13), plan)
        assert b.loo_entry_count() == plan.loo_entry_count()

    def test_non_cubic_entry_count(self) -> None:
        plan = make_plan((6, 5, 4), "kronecker", 3, 2, seed=0)
        assert plan.loo_entry_count() == (6 + 5 + 4) * 3**2
        b = sketch(random_tensor((6, 5, 4), 14), plan)
        assert b.loo_entry_count() == plan.loo_entry_count()


class TestStreaming:
    @pytest.mark.parametrize("kind,m", [("kronecker", 4), ("khatri_rao", 10), ("unstructured", 10)])
    @pytest.mark.parametrize("n_slabs", [1, 2, 7])
    def test_slabbed_equals_batch(self, kind, m, n_slabs) -> None:
        x = random_tensor((9, 8, 7), seed=30)
        plan = make_plan(x.shape, kind, m, 5, seed=31)
        batch = sketch(x, plan)
        acc = SketchAccumulator(plan)
        for chunk in slab_chunks(x, n_slabs):
            acc.update(chunk)
        got = acc.finalize()
        for a, b in zip(batch.loo, got.loo):
            assert np.allclose(a, b, rtol=1e-10, atol=1e-12)
        assert np.allclose(batch.core, got.core, rtol=1e-10, atol=1e-12)

    def test_single_chunk_is_bitwise_identical_to_batch(self) -> None:
        x = random_tensor((6, 5, 8), seed=32)
        for kind, m in [("kronecker", 3), ("khatri_rao", 6), ("unstructured", 6)]:
            plan = make_plan(x.shape, kind, m, 4, seed=33)
            batch = sketch(x, plan)
            acc = SketchAccumulator(plan)
            acc.update(SlabChunk(0, 8, x))
            got = acc.finalize()
            assert all(np.array_equal(a, b) for a, b in zip(batch.loo, got.loo))
            assert np.array_equal(batch.core, got.core)

    def test_out_of_order_and_uneven_slabs(self) -> None:
        x = random_tensor((5, 4, 10), seed=34)
        plan = make_plan(x.shape, "kronecker", 3, 3, seed=35)
        batch = sketch(x, plan)
        acc = SketchAccumulator(plan)
        for lo, hi in [(6, 10), (0, 1), (1, 6)]:
            acc.update(SlabChunk(lo, hi - lo, x[..., lo:hi]))
        got = acc.finalize()
        for a, b in zip(batch.loo + [batch.core], got.loo + [got.core]):
            assert np.allclose(a, b, rtol=1e-10, atol=1e-12)

    def test_empty_chunk_is_a_no_op(self) -> None:
        x = random_tensor((5, 4, 6), seed=36)
        plan = make_plan(x.shape, "khatri_rao", 4, 3, seed=37)
        acc = accumulator_init(plan)
        accumulator_update(acc, SlabChunk(2, 0, x[..., 2:2]))
        accumulator_update(acc, SlabChunk(0, 6, x))
        b = accumulator_finalize(acc)
        assert not b.partial
        ref = sketch(x, plan)
        assert np.allclose(b.loo[0], ref.loo[0], rtol=1e-12, atol=1e-14)

    def test_overlapping_chunks_rejected(self) -> None:
        x = random_tensor((4, 4, 8), seed=38)
        plan = make_plan(x.shape, "kronecker", 2, 2, seed=39)
        acc = SketchAccumulator(plan)
        acc.update(SlabChunk(0, 5, x[..., :5]))
        with pytest.raises(ConfigError):
            acc.update(SlabChunk(4, 4, x[..., 4:]))

    def test_chunk_validation(self) -> None:
        x = random_tensor((4, 4, 8), seed=40)
        plan = make_plan(x.shape, "kronecker", 2, 2, seed=41)
        acc = SketchAccumulator(plan)
        with pytest.raises(ShapeError):
            acc.update(SlabChunk(6, 4, x[..., :4]))  # runs past the end
        with pytest.raises(ShapeError):
            acc.update(SlabChunk(0, 4, x[..., :3]))  # count/payload mismatch

    def test_partial_finalize_sets_flag(self) -> None:
        x = random_tensor((4, 4, 8), seed=42)
        plan = make_plan(x.shape, "kronecker", 2, 2, seed=43)
        acc = SketchAccumulator(plan)
        acc.update(SlabChunk(0, 3, x[..., :3]))
        assert not acc.coverage_complete()
        assert acc.finalize().partial

    def test_accumulator_does_not_retain_chunks(self) -> None:
        """Feeding a slab, mutating the caller's buffer afterwards, and
        finalizing must give the same bundle as with an untouched buffer."""
        x = random_tensor((5, 4, 6), seed=44)
        plan = make_plan(x.shape, "kronecker", 3, 3, seed=45)
        ref = sketch(x, plan)
        acc = SketchAccumulator(plan)
        buf = np.array(x[..., :3])
        acc.update(SlabChunk(0, 3, buf))
        buf[:] = -1.0
        acc.update(SlabChunk(3, 3, x[..., 3:]))
        got = acc.finalize()
        for a, b in zip(ref.loo + [ref.core], got.loo + [got.core]):
            assert np.allclose(a, b, rtol=1e-12, atol=1e-13)


class TestMerge:
    def make_parts(self, plan, x, cuts):
        accs = []
        bounds = [0] + cuts + [x.shape[-1]]
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            acc = SketchAccumulator(plan)
            acc.update(SlabChunk(lo, hi - lo, x[..., lo:hi]))
            accs.append(acc)
        return accs

    def test_merge_matches_batch(self) -> None:
        x = random_tensor((6, 5, 9), seed=50)
        plan = make_plan(x.shape, "khatri_rao", 5, 3, seed=51)
        batch = sketch(x, plan)
        a, b, c = self.make_parts(plan, x, [3, 6])
        merged = accumulator_merge(accumulator_merge(a, b), c)
        got = merged.finalize()
        assert not got.partial
        for u, v in zip(batch.loo + [batch.core], got.loo + [got.core]):
            assert np.allclose(u, v, rtol=1e-10, atol=1e-12)

    def test_merge_is_order_insensitive(self) -> None:
        x = random_tensor((6, 5, 9), seed=52)
        plan = make_plan(x.shape, "kronecker", 3, 3, seed=53)
        a, b, c = self.make_parts(plan, x, [3, 6])
        left = accumulator_merge(accumulator_merge(a, b), c).finalize()
        right = accumulator_merge(c, accumulator_merge(b, a)).finalize()
        for u, v in zip(left.loo + [left.core], right.loo + [right.core]):
            assert np.allclose(u, v, rtol=1e-12, atol=1e-13)

    def test_merge_rejects_different_plans(self) -> None:
        x = random_tensor((4, 4, 4), seed=54)
        p1 = make_plan(x.shape, "kronecker", 2, 2, seed=1)
        p2 = make_plan(x.shape, "kronecker", 2, 2, seed=2)
        a, b = SketchAccumulator(p1), SketchAccumulator(p2)
        with pytest.raises(ConfigError):
            accumulator_merge(a, b)

    def test_merge_rejects_overlapping_coverage(self) -> None:
        x = random_tensor((4, 4, 4), seed=55)
        plan = make_plan(x.shape, "kronecker", 2, 2, seed=3)
        a, b = SketchAccumulator(plan), SketchAccumulator(plan)
        a.update(SlabChunk(0, 3, x[..., :3]))
        b.update(SlabChunk(2, 2, x[..., 2:]))
        with pytest.raises(ConfigError):
            a.merge(b)


class TestPlanValidation:
    def test_unknown_kind(self) -> None:
        with pytest.raises(ConfigError):
            make_plan((4, 4, 4), "sparse", 2, 2)

    def test_identity_loo_needs_square(self) -> None:
        # kronecker + identity with m != n is unsatisfiable
        with pytest.raises(ConfigError):
            make_plan((4, 4, 4), "kronecker", 3, 2, loo_family="identity")

    def test_mix_family_varies_by_mode(self) -> None:
        plan = make_plan((8, 8, 8, 8), "kronecker", 2, 2, loo_family="mix")
        fams = plan.loo_families
        assert len(fams) == 4
        assert len(set(fams[:3])) == 3
        assert fams[3] == fams[0]

    def test_unstructured_memory_cap(self, monkeypatch) -> None:
        monkeypatch.setenv("TSKETCH_MEM_CAP_MB", "0.001")
        plan = make_plan((30, 30, 30), "unstructured", 20, 2, seed=0)
        with pytest.raises(ConfigError):
            SketchAccumulator(plan)
        monkeypatch.setenv("TSKETCH_MEM_CAP_MB", "64")
        SketchAccumulator(plan)  # fits comfortably now

    def test_shape_mismatch_at_sketch_time(self) -> None:
        plan = make_plan((4, 4, 4), "kronecker", 2, 2)
        with pytest.raises(ShapeError):
            sketch(random_tensor((4, 4, 5), 60), plan)

    def test_kind_specific_helpers_check_the_plan(self) -> None:
        x = random_tensor((4, 4, 4), seed=61)
        plan = make_plan(x.shape, "kronecker", 2, 2)
        with pytest.raises(ConfigError):
            khat_loo_sketch(x, plan)
