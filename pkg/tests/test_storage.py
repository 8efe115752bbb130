from collections import OrderedDict

import numpy as np
import pytest

from subtask_induction.model import build_model
from subtask_induction.sparsify import BinaryMask
from subtask_induction.storage import (FormatError, load_checkpoint, load_mask, mask_hash,
                                       params_hash, save_checkpoint, save_mask)


def test_checkpoint_roundtrip_bit_exact(tmp_path, tiny_config):
    p = build_model(tiny_config, 0)
    p["unembed"][0, 0] = np.float32(np.nextafter(np.float32(1), np.float32(2)))
    save_checkpoint(tmp_path / "m.ckpt", p, tiny_config, {"note": "x"})
    q, cfg, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert cfg == tiny_config and meta["note"] == "x" and list(q) == list(p)
    assert all(np.array_equal(q[k].view(np.uint32), p[k].view(np.uint32)) for k in p)
    assert params_hash(q) == params_hash(p)
    assert not list(tmp_path.glob("*.tmp"))


def test_mask_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    m = BinaryMask(OrderedDict([("a.attn.w", rng.random((7, 13)) < 0.3), ("b.mlp.w", rng.random(5) < 0.5)]))
    save_mask(tmp_path / "x.mask", m, {"lambda": 1e-7})
    back, meta = load_mask(tmp_path / "x.mask")
    assert back == m and meta["lambda"] == 1e-7
    assert mask_hash(back) == mask_hash(m)
    other = BinaryMask(OrderedDict((k, v.copy()) for k, v in m.masks.items()))
    other.masks["b.mlp.w"][0] ^= True
    assert mask_hash(other) != mask_hash(m)


def test_format_errors(tmp_path, tiny_config):
    (tmp_path / "junk").write_bytes(b"nope")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "junk")
    save_mask(tmp_path / "x.mask", BinaryMask(OrderedDict(w=np.ones(3, bool))))
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "x.mask")
