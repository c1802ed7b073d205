import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from partlift.core import (
    BadMagicError,
    PartVocabulary,
    TensorFile,
    TruncatedPayloadError,
    UnknownDtypeError,
    VoteTally,
    dominant_label,
    read_tensor,
    tensor_bytes,
    write_tensor,
)

DTYPES = ["<f4", "<i4", "<u2", "<u1"]


def roundtrip(arr):
    buf = io.BytesIO(tensor_bytes(arr))
    return read_tensor(buf).array


class TestTensorFormat:
    def test_header_arithmetic_f32_2x2(self):
        arr = np.array([[1, 0], [0, 1]], dtype="<f4")
        data = tensor_bytes(arr)
        # magic(4) + dtype(1) + ndim(1) + shape(2*4) + payload(4*4)
        assert len(data) == 30
        assert data[:4] == b"TBT1"

    def test_zero_extent_shape_writes_header_only(self):
        arr = np.zeros((0,), dtype="<u1")
        data = tensor_bytes(arr)
        assert len(data) == 4 + 1 + 1 + 4
        back = read_tensor(io.BytesIO(data))
        assert back.array.shape == (0,)

    def test_write_returns_byte_count(self):
        arr = np.arange(6, dtype="<i4").reshape(2, 3)
        buf = io.BytesIO()
        n = write_tensor(TensorFile(arr), buf)
        assert n == len(buf.getvalue()) == 4 + 1 + 1 + 8 + 24

    def test_bad_magic(self):
        with pytest.raises(BadMagicError):
            read_tensor(io.BytesIO(b"XXXX" + b"\x01\x01" + b"\x01\x00\x00\x00" + b"\x00" * 4))

    def test_unknown_dtype_code(self):
        data = bytearray(tensor_bytes(np.zeros(1, dtype="<f4")))
        data[4] = 99
        with pytest.raises(UnknownDtypeError):
            read_tensor(io.BytesIO(bytes(data)))

    def test_truncated_payload_reports_lengths(self):
        data = tensor_bytes(np.zeros(4, dtype="<f4"))[:-1]
        with pytest.raises(TruncatedPayloadError) as exc:
            read_tensor(io.BytesIO(data))
        assert exc.value.expected == 16
        assert exc.value.actual == 15

    @pytest.mark.parametrize("dtype", DTYPES)
    def test_roundtrip_each_dtype(self, dtype, rng):
        info = np.iinfo(dtype) if np.issubdtype(np.dtype(dtype), np.integer) else None
        if info is None:
            arr = rng.normal(size=(3, 4, 2)).astype(dtype)
        else:
            arr = rng.integers(info.min, info.max, size=(3, 4, 2), endpoint=True).astype(dtype)
        assert np.array_equal(roundtrip(arr), arr)

    def test_byte_level_roundtrip(self, rng):
        arr = rng.normal(size=(5, 7)).astype("<f4")
        data = tensor_bytes(arr)
        assert tensor_bytes(read_tensor(io.BytesIO(data)).array) == data

    @given(
        dtype=st.sampled_from(DTYPES),
        shape=st.lists(st.integers(0, 5), min_size=1, max_size=4),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_roundtrip_property(self, dtype, shape, seed):
        gen = np.random.default_rng(seed)
        n = int(np.prod(shape))
        if np.issubdtype(np.dtype(dtype), np.integer):
            info = np.iinfo(dtype)
            arr = gen.integers(info.min, info.max, size=n, endpoint=True)
        else:
            arr = gen.normal(size=n) * 1e3
        arr = arr.astype(dtype).reshape(shape)
        back = roundtrip(arr)
        assert back.dtype == arr.dtype
        assert back.shape == arr.shape
        assert np.array_equal(back, arr)

    def test_rejects_unsupported_dtype(self):
        with pytest.raises(ValueError):
            TensorFile(np.zeros(3, dtype=np.float64))

    def test_sink_failure_reports_byte_offset(self):
        from partlift.core import TensorWriteError

        class FailingSink:
            def write(self, chunk):
                raise OSError("disk full")

        with pytest.raises(TensorWriteError) as exc:
            write_tensor(TensorFile(np.zeros(2, dtype="<f4")), FailingSink())
        assert exc.value.offset == 0
        assert "byte offset 0" in str(exc.value)


class TestPartVocabulary:
    def test_lookup_bijection(self):
        vocab = PartVocabulary(("lid", "handle", "spout"))
        assert vocab.id_of("handle") == 1
        assert vocab.name_of(2) == "spout"
        assert len(vocab) == 3
        assert vocab.contains(-1) and vocab.contains(0) and not vocab.contains(3)

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            PartVocabulary(("a", "a"))

    def test_json_roundtrip(self):
        vocab = PartVocabulary(("base", "shade"))
        doc = vocab.to_dict()
        assert doc == {"parts": [{"id": 0, "name": "base"}, {"id": 1, "name": "shade"}]}
        assert PartVocabulary.from_json(vocab.to_json()) == vocab

    def test_noncontiguous_ids_rejected(self):
        with pytest.raises(ValueError):
            PartVocabulary.from_dict({"parts": [{"id": 0, "name": "a"}, {"id": 2, "name": "b"}]})


class TestDominantLabel:
    def test_clear_majority_wins(self):
        tally = VoteTally.from_pairs([(0, 0.7), (1, 0.3)], cutoff=0.6)
        assert dominant_label(tally) == 0

    def test_exact_tie_abstains(self):
        tally = VoteTally.from_pairs([(0, 0.5), (1, 0.5)], cutoff=0.6)
        assert dominant_label(tally) is None

    def test_below_cutoff_abstains(self):
        # 0.59 < 0.6 * 1.0, evaluated directly against the rule
        tally = VoteTally.from_pairs([(0, 0.59), (1, 0.41)], cutoff=0.6)
        assert dominant_label(tally) is None

    def test_all_zero_tally_is_an_error(self):
        tally = VoteTally.from_pairs([(0, 0.0), (1, 0.0)], cutoff=0.6)
        with pytest.raises(ValueError):
            dominant_label(tally)

    def test_negative_weight_rejected(self):
        tally = VoteTally()
        with pytest.raises(ValueError):
            tally.add(0, -0.1)

    @given(
        weights=st.lists(st.floats(0.01, 10.0), min_size=1, max_size=6),
        scale=st.floats(0.01, 100.0),
        cutoff=st.floats(0.05, 1.0),
    )
    def test_scale_invariance(self, weights, scale, cutoff):
        pairs = list(enumerate(weights))
        a = dominant_label(VoteTally.from_pairs(pairs, cutoff))
        b = dominant_label(VoteTally.from_pairs([(k, w * scale) for k, w in pairs], cutoff))
        assert a == b

    @given(
        weights=st.lists(st.floats(0.01, 10.0), min_size=1, max_size=6),
        seed=st.integers(0, 1000),
    )
    def test_label_permutation_invariance(self, weights, seed):
        gen = np.random.default_rng(seed)
        perm = gen.permutation(len(weights))
        base = dominant_label(VoteTally.from_pairs(list(enumerate(weights)), 0.6))
        permuted = dominant_label(
            VoteTally.from_pairs([(int(perm[k]), w) for k, w in enumerate(weights)], 0.6)
        )
        assert (base is None) == (permuted is None)
        if base is not None:
            assert permuted == int(perm[base])

    @given(label=st.integers(0, 50), w=st.floats(0.01, 100.0), cutoff=st.floats(0.01, 1.0))
    def test_sole_label_dominates_for_any_cutoff(self, label, w, cutoff):
        assert dominant_label(VoteTally.from_pairs([(label, w)], cutoff)) == label

    def test_pair_order_does_not_change_sums(self):
        pairs = [(3, 0.1), (1, 0.7), (3, 0.25), (1, 0.05), (0, 0.33)]
        a = VoteTally.from_pairs(pairs, 0.6)
        b = VoteTally.from_pairs(pairs[::-1], 0.6)
        assert a.weights == b.weights
        assert a.total() == b.total()
