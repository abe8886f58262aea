import struct

import numpy as np
import pytest
import torch

from mcd.checkpoint import CheckpointError, dumps, load_checkpoint, loads, read_header, save_checkpoint
from mcd.denoiser import Denoiser, DenoiserConfig

CFG = DenoiserConfig(vocab_extended=7, context=6, width=8, depth=1, heads=2)


def test_round_trip_is_byte_identical(tmp_path):
    m = Denoiser(CFG, 3)
    a, b = tmp_path / "a.mcd", tmp_path / "b.mcd"
    save_checkpoint(m, a, {"round": 2})
    loaded = load_checkpoint(a)
    save_checkpoint(loaded, b, {"round": 2})
    assert a.read_bytes() == b.read_bytes()
    for (n1, p1), (n2, p2) in zip(m.state_dict().items(), loaded.state_dict().items()):
        assert n1 == n2 and torch.equal(p1, p2)
    z = np.zeros((1, CFG.context), int)
    with torch.no_grad():
        assert torch.equal(m(z), loaded(z))


def test_double_precision_round_trip():
    m = Denoiser(CFG, 1).double()
    back, _ = loads(dumps(m))
    assert next(back.parameters()).dtype == torch.float64
    assert dumps(back) == dumps(m)


def test_header_contents(tmp_path):
    m = Denoiser(CFG, 0)
    path = tmp_path / "m.mcd"
    save_checkpoint(m, path, {"round": 4})
    data = path.read_bytes()
    assert data[:4] == b"MCD1"
    header = read_header(path)
    assert int(header["param_count"]) == m.n_parameters()
    assert header["extra.round"] == "4"
    assert int(header["width"]) == CFG.width


def test_bad_magic():
    data = bytearray(dumps(Denoiser(CFG, 0)))
    data[:4] = b"XXXX"
    with pytest.raises(CheckpointError):
        loads(bytes(data))


@pytest.mark.parametrize("cut", [3, 10, 200, -1])
def test_truncated(cut):
    data = dumps(Denoiser(CFG, 0))
    with pytest.raises(CheckpointError):
        loads(data[:cut])


def test_trailing_bytes():
    with pytest.raises(CheckpointError):
        loads(dumps(Denoiser(CFG, 0)) + b"\0")


def test_config_mismatch(tmp_path):
    path = tmp_path / "m.mcd"
    save_checkpoint(Denoiser(CFG, 0), path)
    other = DenoiserConfig(vocab_extended=7, context=6, width=16, depth=1, heads=2)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, other)
    assert load_checkpoint(path, CFG).cfg == CFG


def test_param_count_checked():
    data = dumps(Denoiser(CFG, 0))
    hlen = struct.unpack("<I", data[4:8])[0]
    header = data[8:8 + hlen].decode()
    count = [ln for ln in header.splitlines() if ln.startswith("param_count=")][0]
    forged = header.replace(count, "param_count=1")
    enc = forged.encode()
    with pytest.raises(CheckpointError):
        loads(data[:4] + struct.pack("<I", len(enc)) + enc + data[8 + hlen:])


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.mcd")
