import numpy as np
import pytest

from sipbench.container import read_container, write_container
from sipbench.errors import ContainerFormatError


class TestContainer:
    def test_roundtrip(self, tmp_path):
        payload = np.arange(24, dtype=float).reshape(2, 3, 4)
        path = tmp_path / "x.sipb"
        write_container(path, {"kind": "test", "shape": [2, 3, 4]}, payload)
        header, flat = read_container(path)
        assert header["kind"] == "test"
        assert header["dtype"] == "f32le"
        assert np.array_equal(flat.reshape(2, 3, 4), payload.astype(np.float32))

    def test_payload_is_little_endian_f32(self, tmp_path):
        path = tmp_path / "x.sipb"
        write_container(path, {}, np.array([1.5]))
        raw = path.read_bytes()
        assert raw[:8] == b"SIPBENCH"
        assert raw[-4:] == np.array([1.5], dtype="<f4").tobytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.sipb"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        with pytest.raises(ContainerFormatError):
            read_container(path)

    def test_truncated_header_rejected(self, tmp_path):
        path = tmp_path / "x.sipb"
        write_container(path, {"kind": "test"}, np.zeros(4))
        data = path.read_bytes()
        path.write_bytes(data[:24])
        with pytest.raises(ContainerFormatError):
            read_container(path)

    def test_payload_size_mismatch_rejected(self, tmp_path):
        path = tmp_path / "x.sipb"
        write_container(path, {"kind": "test"}, np.zeros(8))
        data = path.read_bytes()
        path.write_bytes(data[:-4])
        with pytest.raises(ContainerFormatError):
            read_container(path)

    def test_deterministic_bytes(self, tmp_path):
        payload = np.linspace(0, 1, 10)
        a, b = tmp_path / "a.sipb", tmp_path / "b.sipb"
        write_container(a, {"z": 1, "a": 2}, payload)
        write_container(b, {"a": 2, "z": 1}, payload)
        assert a.read_bytes() == b.read_bytes()
