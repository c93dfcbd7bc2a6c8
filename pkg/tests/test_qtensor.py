import numpy as np
import pytest
from hypothesis import given, strategies as st

from qnndse.errors import QuantError
from qnndse.qtensor import Encoding, QTensor, pack_codes, unpack_codes


def stream_oracle(codes, bits):
    """Element i in bits [i*bits, (i+1)*bits) of one little-endian integer."""
    word = 0
    for i, c in enumerate(codes):
        word |= int(c) << (i * bits)
    return word.to_bytes((len(codes) * bits + 7) // 8, "little")


@given(st.integers(1, 8).flatmap(lambda b: st.tuples(st.just(b), st.lists(st.integers(0, (1 << b) - 1), max_size=200))))
def test_pack_roundtrip_and_layout(case):
    bits, codes = case
    payload = pack_codes(codes, bits)
    assert payload == stream_oracle(codes, bits)
    assert unpack_codes(payload, bits, len(codes)).tolist() == codes


def test_code_must_fit():
    with pytest.raises(QuantError):
        pack_codes([4], 2)


def test_header_layout():
    t = QTensor.from_codes(np.array([[1, 2, 3]]), 2, Encoding.UNSIGNED_LEVEL_CODE)
    raw = t.to_bytes()
    assert raw[:4] == b"QTNS"
    assert raw[4:8] == bytes([1, 0, 2, 2])
    assert raw[8:16] == (1).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert raw[16:] == bytes([0b111001])


@given(st.lists(st.integers(1, 5), min_size=1, max_size=4), st.integers(1, 8), st.sampled_from(list(Encoding)),
       st.integers(0, 2 ** 32 - 1))
def test_file_roundtrip(dims, bits, enc, seed):
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, 1 << bits, size=dims)
    t = QTensor.from_codes(codes, bits, enc)
    back = QTensor.from_bytes(t.to_bytes())
    assert back == t
    assert np.array_equal(back.codes(), codes)


def test_signed_values(tmp_path):
    vals = np.array([-8, -1, 0, 7])
    t = QTensor.from_values(vals, 4, Encoding.TWOS_COMPLEMENT)
    t.save(tmp_path / "x.qtns")
    assert QTensor.load(tmp_path / "x.qtns").values().tolist() == vals.tolist()
    with pytest.raises(QuantError):
        QTensor.from_values([8], 4, Encoding.SIGNED_ACCUMULATOR)


def test_bipolar_values():
    t = QTensor.from_codes([0, 1], 1, Encoding.BIPOLAR)
    assert t.values().tolist() == [-1, 1]


def test_corrupt_files_rejected():
    t = QTensor.from_codes([1, 2, 3], 2, Encoding.UNSIGNED_LEVEL_CODE).to_bytes()
    with pytest.raises(QuantError, match="magic"):
        QTensor.from_bytes(b"XXXX" + t[4:])
    with pytest.raises(QuantError, match="version"):
        QTensor.from_bytes(t[:4] + b"\x02" + t[5:])
    with pytest.raises(QuantError, match="size mismatch"):
        QTensor.from_bytes(t + b"\x00")
    with pytest.raises(QuantError):
        QTensor((3,), 2, Encoding.UNSIGNED_LEVEL_CODE, b"")
