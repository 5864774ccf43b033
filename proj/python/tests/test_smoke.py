import math

import numpy as np
import pytest

import hyperace


def test_preset_and_overrides():
    cfg = hyperace.config("micro", hyperedges=3)
    assert cfg["hyperedges"] == 3
    assert cfg["variant"] == "micro"
    with pytest.raises(ValueError):
        hyperace.config("q")


def test_detect_shapes_and_determinism():
    net = hyperace.build("micro", seed=1)
    img = np.full((1, 3, 64, 96), 0.5)
    a = net.detect(img)
    b = net.detect(img)
    ch = 4 * 4 + 2
    assert [h.shape for h in a] == [(1, ch, 8, 12), (1, ch, 4, 6), (1, ch, 2, 3)]
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
    with pytest.raises(hyperace.ShapeError):
        net.detect(np.zeros((1, 3, 40, 40)))


def test_decode_and_nms():
    heads = [np.full((1, 19, s, s), -1e4) for s in (8, 4, 2)]
    assert hyperace.decode(heads, reg_bins=4, num_classes=3) == []
    dets = [((0, 0, 10, 10), 0, 0.9), ((0, 0, 10, 10), 0, 0.8), ((0, 0, 10, 10), 1, 0.7)]
    kept = hyperace.nms(dets, 0.5)
    assert [d["score"] for d in kept] == [0.9, 0.7]


def test_profile_totals():
    r = hyperace.profile(hyperace.config("n"))
    assert abs(r["params_m"] - 2.5) / 2.5 < 0.15
    assert abs(r["gflops"] - 6.4) / 6.4 < 0.15
    assert sum(p["flops"] for p in r["parts"]) == r["total"]["flops"]


def test_participation_columns():
    net = hyperace.build("micro")
    a, top = hyperace.participation(net, np.random.default_rng(0).random((1, 3, 64, 64)), "hyperace.high0", 2)
    assert a.shape == (16, 2)
    assert np.allclose(a.sum(axis=0), 1.0, atol=1e-9)
    assert len(top) == 2 and len(top[0]) == 2
    with pytest.raises(ValueError, match="hyperace.high0"):
        hyperace.participation(net, np.zeros((1, 3, 64, 64)), "nope")


def test_weights_round_trip(tmp_path):
    net = hyperace.build("micro", seed=3)
    p = tmp_path / "w.bin"
    net.save_weights(str(p))
    other = hyperace.build("micro", seed=4)
    other.load_weights(str(p))
    sa, sb = net.state(), other.state()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nope")
    with pytest.raises(hyperace.WeightFileError):
        other.load_weights(str(bad))


def test_short_training_runs():
    net = hyperace.build("micro", num_classes=3)
    out = hyperace.toy_train(net, steps=3, batch=2)
    assert len(out["loss"]) == 3
    assert all(math.isfinite(v) for v in out["loss"])


def test_scene():
    img, objs = hyperace.make_scene(4)
    assert img.shape == (1, 3, 64, 64)
    assert 1 <= len(objs) <= 3
