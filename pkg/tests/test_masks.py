import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import cosine_oracle, nested_oracle
from sparsekit import (
    DType,
    DigestMismatchError,
    MaskError,
    MaskSet,
    Provenance,
    TensorMask,
    apply_mask,
    apply_mask_to_path,
    container_digest,
    container_from_arrays,
    cosine_similarity,
    cosine_similarity_per_tensor,
    is_nested,
    open_container,
    read_mask,
    similarity_matrix,
    sparsity,
    write_container,
    write_mask,
)

PROV = Provenance("test", 0.0, "", {"include": ["*"], "exclude": [], "min_ndim": 0})


def mask_of(bits, shape=None):
    return TensorMask.from_bools(np.asarray(bits, dtype=bool), shape)


def set_of(**tensors):
    return MaskSet({n: mask_of(b) for n, b in tensors.items()}, PROV)


class TestTensorMask:
    def test_packing_is_lsb_first(self):
        mask = mask_of([1, 0, 1, 1, 0, 0, 0, 0, 1])
        assert mask.packed.tolist() == [0b00001101, 0b00000001]
        assert mask.nnz == 4

    def test_round_trips_bools(self):
        bits = np.array([True, False, True])
        assert np.array_equal(mask_of(bits).bools(), bits)

    def test_nnz_mismatch_rejected(self):
        with pytest.raises(MaskError, match="nnz mismatch"):
            TensorMask((3,), np.array([0b111], dtype=np.uint8), 2)

    def test_padding_bits_must_be_zero(self):
        with pytest.raises(MaskError, match="padding"):
            TensorMask((3,), np.array([0b1111], dtype=np.uint8), 4)

    def test_bit_length_must_match_shape(self):
        with pytest.raises(MaskError, match="bit length"):
            TensorMask((20,), np.array([0xFF], dtype=np.uint8), 8)

    def test_packed_is_immutable(self):
        mask = mask_of([1, 0, 1])
        with pytest.raises(ValueError):
            mask.packed[0] = 0

    @given(arrays(bool, st.integers(0, 200)))
    def test_recount_equals_cached_nnz(self, bits):
        if bits.size == 0:
            return
        mask = mask_of(bits)
        assert mask.recount() == mask.nnz == int(bits.sum())


class TestSparsity:
    def test_all_ones_is_zero(self):
        assert sparsity(set_of(a=[1, 1, 1, 1])) == 0.0

    def test_all_zeros_is_one(self):
        assert sparsity(set_of(a=[0, 0, 0, 0])) == 1.0

    def test_mixed_counts(self):
        # nnz 3 + 1 over 8 elements -> 1 - 4/8
        assert sparsity(set_of(a=[1, 1, 1, 0], b=[1, 0, 0, 0])) == 0.5

    def test_empty_set_rejected(self):
        with pytest.raises(MaskError, match="empty"):
            sparsity(MaskSet({}, PROV))


class TestCosineSimilarity:
    def test_self_similarity_is_exact_unity(self):
        s = set_of(a=[1, 0, 1, 1, 0], b=[1, 1, 0])
        assert cosine_similarity(s, s) == 1.0

    def test_half_overlap(self):
        a = mask_of([1, 1, 0, 0])
        b = mask_of([1, 0, 1, 0])
        assert cosine_similarity(a, b) == 0.5

    def test_nested_closed_form(self):
        low = mask_of([1, 1, 1, 1])
        high = mask_of([0, 1, 0, 0])
        assert cosine_similarity(high, low) == pytest.approx(math.sqrt(1 / 4), abs=1e-15)

    def test_all_zero_operand_rejected(self):
        with pytest.raises(MaskError, match="all-zero"):
            cosine_similarity(mask_of([0, 0]), mask_of([1, 0]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(MaskError, match="shape mismatch"):
            cosine_similarity(mask_of([1, 0]), mask_of([1, 0, 1]))

    def test_name_mismatch_rejected(self):
        with pytest.raises(MaskError, match="different tensors"):
            cosine_similarity(set_of(a=[1]), set_of(b=[1]))

    def test_mixed_operand_kinds_rejected(self):
        with pytest.raises(MaskError, match="operands"):
            cosine_similarity(mask_of([1]), set_of(a=[1]))

    @settings(max_examples=60)
    @given(arrays(bool, st.integers(1, 256)), st.data())
    def test_matches_dot_product_oracle(self, a_bits, data):
        b_bits = data.draw(arrays(bool, a_bits.shape))
        if not a_bits.any() or not b_bits.any():
            return
        got = cosine_similarity(mask_of(a_bits), mask_of(b_bits))
        assert got == pytest.approx(cosine_oracle(a_bits, b_bits), abs=1e-12)

    @settings(max_examples=40)
    @given(arrays(bool, st.integers(1, 128)), st.data())
    def test_symmetry(self, a_bits, data):
        b_bits = data.draw(arrays(bool, a_bits.shape))
        if not a_bits.any() or not b_bits.any():
            return
        a, b = mask_of(a_bits), mask_of(b_bits)
        assert cosine_similarity(a, b) == cosine_similarity(b, a)

    def test_per_tensor_breakdown(self):
        s1 = set_of(a=[1, 1, 0, 0], b=[1, 1, 1, 1])
        s2 = set_of(a=[1, 0, 1, 0], b=[1, 1, 1, 1])
        per = cosine_similarity_per_tensor(s1, s2)
        assert per["a"] == 0.5
        assert per["b"] == 1.0

    def test_per_tensor_nan_for_all_zero(self):
        s1 = set_of(a=[0, 0], b=[1, 1])
        s2 = set_of(a=[1, 0], b=[1, 1])
        assert math.isnan(cosine_similarity_per_tensor(s1, s2)["a"])


class TestSimilarityMatrix:
    def test_duplicate_sets(self):
        s = set_of(a=[1, 0, 1])
        m = similarity_matrix([s, s])
        assert m.tolist() == [[1.0, 1.0], [1.0, 1.0]]

    def test_diagonal_exact_and_symmetric(self, rng):
        sets = [
            set_of(a=rng.random(64) < 0.5, b=rng.random(32) < 0.3) for _ in range(4)
        ]
        m = similarity_matrix(sets)
        assert np.array_equal(np.diag(m), np.ones(4))
        assert np.array_equal(m, m.T)

    def test_independent_half_masks_near_half(self, rng):
        # E[cos] for two independent p=0.5 masks is ~0.5 on 1e4 elements
        sets = [set_of(w=rng.random(10_000) < 0.5) for _ in range(3)]
        m = similarity_matrix(sets)
        off = m[np.triu_indices(3, k=1)]
        assert np.all(np.abs(off - 0.5) < 0.02)

    def test_needs_two_sets(self):
        with pytest.raises(MaskError, match="at least two"):
            similarity_matrix([set_of(a=[1])])

    def test_omp_mask_matrix_off_diagonal_closed_form(self, rng):
        from sparsekit import PruneSpec, TensorFilter, container_from_arrays, omp_global
        from sparsekit.container import DType as DT

        container = container_from_arrays(
            {"w": (rng.standard_normal(5000), DT.F32)}
        )
        sets = [
            omp_global(container, PruneSpec(target_sparsity=t, prunable_filter=TensorFilter()))
            for t in (0.1, 0.2)
        ]
        m = similarity_matrix(sets)
        expected = math.sqrt(sets[1].total_nnz / sets[0].total_nnz)
        assert m[0, 1] == pytest.approx(expected, abs=1e-12)


class TestNesting:
    def test_self_is_nested(self):
        s = set_of(a=[1, 0, 1, 1])
        assert is_nested(s, s)

    def test_subset_detected(self):
        low = set_of(a=[1, 1, 1, 0])
        high = set_of(a=[0, 1, 1, 0])
        assert is_nested(high, low)
        assert not is_nested(low, high)

    @settings(max_examples=50)
    @given(arrays(bool, st.integers(1, 200)), st.data())
    def test_matches_containment_oracle(self, low_bits, data):
        high_bits = data.draw(arrays(bool, low_bits.shape))
        got = is_nested(set_of(a=high_bits), set_of(a=low_bits))
        assert got == nested_oracle(high_bits, low_bits)

    def test_nested_implies_closed_form_similarity(self, rng):
        low_bits = rng.random(4096) < 0.9
        high_bits = low_bits & (rng.random(4096) < 0.4)
        if not high_bits.any():
            high_bits[np.flatnonzero(low_bits)[0]] = True
        low, high = set_of(a=low_bits), set_of(a=high_bits)
        assert is_nested(high, low)
        expected = math.sqrt(high_bits.sum() / low_bits.sum())
        assert cosine_similarity(high, low) == pytest.approx(expected, abs=1e-12)


class TestApply:
    def fixture(self):
        container = container_from_arrays(
            {"w": (np.array([0.1, -0.5, 0.3, 0.05]), DType.F32),
             "skip": (np.array([9.0, 8.0]), DType.F16)}
        )
        mask = MaskSet(
            {"w": mask_of([0, 1, 1, 0], (4,))},
            Provenance("test", 0.5, container_digest(container), {}),
        )
        return container, mask

    def test_elementwise_zeroing(self):
        container, mask = self.fixture()
        out = apply_mask(mask, container)
        assert out.read_values("w").tolist() == [0.0, -0.5, np.float32(0.3), 0.0]
        assert out.read_values("skip").tolist() == [9.0, 8.0]

    def test_all_ones_is_byte_identical(self):
        container, _ = self.fixture()
        ones = MaskSet(
            {"w": mask_of([1, 1, 1, 1], (4,)),
             "skip": mask_of([1, 1], (2,))},
            Provenance("test", 0.0, container_digest(container), {}),
        )
        out = apply_mask(ones, container)
        assert container_digest(out) == container_digest(container)

    def test_all_zeros_zeroes_covered_tensors(self):
        container, _ = self.fixture()
        zeros = MaskSet(
            {"w": mask_of([0, 0, 0, 0], (4,))},
            Provenance("test", 1.0, container_digest(container), {}),
        )
        out = apply_mask(zeros, container)
        assert out.read_values("w").tolist() == [0.0, 0.0, 0.0, 0.0]
        assert out.read_values("skip").tolist() == [9.0, 8.0]

    def test_idempotent_byte_for_byte(self):
        container, mask = self.fixture()
        once = apply_mask(mask, container, allow_digest_mismatch=True)
        twice = apply_mask(mask, once, allow_digest_mismatch=True)
        assert container_digest(once) == container_digest(twice)

    def test_digest_mismatch_rejected(self):
        container, mask = self.fixture()
        other = container_from_arrays(
            {"w": (np.zeros(4), DType.F32), "skip": (np.zeros(2), DType.F16)}
        )
        with pytest.raises(DigestMismatchError):
            apply_mask(mask, other)
        applied = apply_mask(mask, other, allow_digest_mismatch=True)
        assert applied.read_values("w").tolist() == [0.0, 0.0, 0.0, 0.0]

    def test_shape_mismatch_rejected(self):
        container, _ = self.fixture()
        bad = MaskSet(
            {"w": mask_of([1, 1], (2,))},
            Provenance("test", 0.0, container_digest(container), {}),
        )
        with pytest.raises(MaskError, match="shape mismatch"):
            apply_mask(bad, container)

    def test_streaming_apply_matches_in_memory(self, tmp_path):
        container, mask = self.fixture()
        out_path = tmp_path / "applied.st"
        apply_mask_to_path(mask, container, out_path)
        in_memory = apply_mask(mask, container)
        assert out_path.read_bytes()[: len(in_memory.header_blob)] == in_memory.header_blob
        assert container_digest(open_container(out_path)) == container_digest(in_memory)

    def test_sign_of_surviving_negative_zero_preserved(self, tmp_path):
        path = tmp_path / "z.st"
        write_container(path, {"w": (np.array([-0.0, 1.0]), DType.F32)})
        container = open_container(path)
        mask = MaskSet(
            {"w": mask_of([1, 1], (2,))},
            Provenance("t", 0.0, container_digest(container), {}),
        )
        out = apply_mask(mask, container)
        assert math.copysign(1.0, out.read_values("w")[0]) == -1.0


class TestMaskIO:
    def sample(self):
        return MaskSet(
            {
                "a.weight": mask_of([1, 0, 1, 1, 0, 1, 0, 0, 1], (3, 3)),
                "b.weight": mask_of([0, 1], (2,)),
            },
            Provenance("omp-global", 0.4, "ab" * 32,
                       {"include": ["*weight*"], "exclude": [], "min_ndim": 2}),
        )

    def test_round_trip(self, tmp_path):
        path = tmp_path / "m.esmk"
        original = self.sample()
        write_mask(original, path)
        loaded = read_mask(path)
        assert loaded == original

    def test_write_is_deterministic(self, tmp_path):
        write_mask(self.sample(), tmp_path / "a.esmk")
        write_mask(self.sample(), tmp_path / "b.esmk")
        assert (tmp_path / "a.esmk").read_bytes() == (tmp_path / "b.esmk").read_bytes()

    def test_empty_set_round_trips(self, tmp_path):
        path = tmp_path / "empty.esmk"
        empty = MaskSet({}, Provenance("empty", 0.0, "", {}))
        write_mask(empty, path)
        assert read_mask(path) == empty

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.esmk"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(MaskError, match="bad magic"):
            read_mask(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "v2.esmk"
        path.write_bytes(b"ESMK" + struct.pack("<I", 2) + struct.pack("<Q", 2) + b"{}")
        with pytest.raises(MaskError, match="version 2"):
            read_mask(path)

    def test_header_nnz_disagreeing_with_popcount(self, tmp_path):
        header = json.dumps({
            "provenance": PROV.to_json(),
            "t": {"shape": [4], "nnz": 3, "bit_offset": 0},
        }, separators=(",", ":")).encode()
        blob = b"ESMK" + struct.pack("<I", 1) + struct.pack("<Q", len(header)) + header + bytes([0b0011])
        path = tmp_path / "nnz.esmk"
        path.write_bytes(blob)
        with pytest.raises(MaskError, match="nnz mismatch"):
            read_mask(path)

    def test_truncated_bitstream(self, tmp_path):
        header = json.dumps({
            "provenance": PROV.to_json(),
            "t": {"shape": [64], "nnz": 0, "bit_offset": 0},
        }, separators=(",", ":")).encode()
        blob = b"ESMK" + struct.pack("<I", 1) + struct.pack("<Q", len(header)) + header + b"\x00"
        path = tmp_path / "short.esmk"
        path.write_bytes(blob)
        with pytest.raises(MaskError, match="past end"):
            read_mask(path)

    def test_missing_provenance(self, tmp_path):
        header = b'{"t":{"shape":[1],"nnz":0,"bit_offset":0}}'
        blob = b"ESMK" + struct.pack("<I", 1) + struct.pack("<Q", len(header)) + header + b"\x00"
        path = tmp_path / "noprov.esmk"
        path.write_bytes(blob)
        with pytest.raises(MaskError, match="provenance"):
            read_mask(path)
