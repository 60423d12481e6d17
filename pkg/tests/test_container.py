import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from avdit import container
from avdit.container import ContainerError, VersionMismatch


def _sample():
    return {
        "w": np.arange(12, dtype=np.float32).reshape(3, 4),
        "d": np.array([1.5, -2.25]),
        "i": np.array([[7]], dtype=np.int64),
        "s": np.float32(3.0).reshape(()),
        "text": container.text_entry("model.hidden = 64\n"),
    }


def test_round_trip(tmp_path):
    path = tmp_path / "a.avdt"
    container.save(path, _sample())
    back = container.load(path)
    assert list(back) == list(_sample())
    for k, v in _sample().items():
        assert back[k].dtype == v.dtype and back[k].shape == v.shape
        np.testing.assert_array_equal(back[k], v)
    assert container.entry_text(back["text"]) == "model.hidden = 64\n"


@given(hnp.arrays(st.sampled_from([np.float32, np.float64, np.int64, np.uint8]),
                  hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=4)))
def test_round_trip_property(arr):
    back = container.decode(container.encode({"x": arr}))["x"]
    assert back.dtype == arr.dtype and back.shape == arr.shape
    np.testing.assert_array_equal(back, arr)


def test_encoding_is_deterministic():
    assert container.encode(_sample()) == container.encode(_sample())


def test_corruption_detected():
    blob = bytearray(container.encode(_sample()))
    blob[40] ^= 0xFF
    with pytest.raises(ContainerError, match="checksum"):
        container.decode(bytes(blob))


def test_truncation_detected():
    blob = container.encode(_sample())
    with pytest.raises(ContainerError):
        container.decode(blob[:-5])


def test_version_mismatch_is_reported():
    blob = container.encode(_sample(), version=container.VERSION + 1)
    with pytest.raises(VersionMismatch) as info:
        container.decode(blob)
    assert info.value.found == container.VERSION + 1
    assert str(container.VERSION) in str(info.value)


def test_not_a_container():
    with pytest.raises(ContainerError, match="not an AVDT"):
        container.decode(b"PK\x03\x04" + b"\x00" * 64)


def test_unsupported_dtype():
    with pytest.raises(ContainerError, match="unsupported dtype"):
        container.encode({"c": np.zeros(2, dtype=np.complex64)})


def test_atomic_write_leaves_no_temp_files(tmp_path):
    path = tmp_path / "sub" / "x.avdt"
    container.save(path, _sample())
    container.save(path, {"y": np.ones(1)})
    assert sorted(p.name for p in path.parent.iterdir()) == ["x.avdt"]
    assert list(container.load(path)) == ["y"]


def test_checksum_matches_trailer(tmp_path):
    import hashlib

    path = tmp_path / "c.avdt"
    container.save(path, _sample())
    raw = path.read_bytes()
    assert container.checksum(path) == hashlib.sha256(raw[:-32]).hexdigest()
