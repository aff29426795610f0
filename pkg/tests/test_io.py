import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lfd.degrade import DegradeConfig, degrade
from lfd.descriptor import DescriptorNet, LossConfig, NetConfig, forward
from lfd.errors import ArgumentError, FormatError
from lfd.io import (bank_bytes, bank_from_bytes, channel_images, checkpoint_bytes,
                    checkpoint_from_bytes, lf_bytes, lf_from_bytes, ppm_bytes, read_ranked,
                    write_curve, write_ranked, write_viz)
from lfd.render import Camera, PoseConfig, empty_field, render_location_field, sample_pose
from lfd.retrieval import AVERAGED, CenterBank, RetrievalResult

CAM = Camera.default(24)


@pytest.fixture(scope="module")
def field(desk6):
    m = desk6[1]
    return render_location_field(m, sample_pose(PoseConfig(), 3, CAM, m.bounds()), CAM)


def test_lf_round_trip_and_size(field):
    data = lf_bytes(field)
    assert len(data) == 33 + len(field.model_id) + 24 * 24 * 13 + 1 + 48
    back = lf_from_bytes(data)
    assert lf_bytes(back) == data
    assert np.array_equal(back.coords, field.coords) and np.array_equal(back.mask, field.mask)
    assert back.model_id == field.model_id and back.domain == field.domain


def test_lf_without_pose_and_predicted(field):
    p = degrade(field, DegradeConfig(), 2).copy(pose=None, model_id=None)
    data = lf_bytes(p)
    assert len(data) == 33 + 24 * 24 * 13 + 1
    back = lf_from_bytes(data)
    assert back.pose is None and back.model_id is None and back.domain == "predicted_sim"
    assert lf_bytes(back) == data


def test_lf_layout_header(field):
    data = lf_bytes(field)
    assert data[:4] == b"LFD1"
    assert struct.unpack_from("<IIB", data, 4) == (24, 24, 0)
    assert struct.unpack_from("<f", data, 13)[0] == np.float32(CAM.focal)
    assert data[29] == 1  # pose flag, then 12 f32, then the id
    assert struct.unpack_from("<I", data, 78)[0] == len(field.model_id)


def test_truncated_and_corrupt_files(field):
    data = lf_bytes(field)
    for cut in (0, 3, 20, len(data) - 1):
        with pytest.raises(FormatError):
            lf_from_bytes(data[:cut])
    with pytest.raises(FormatError):
        lf_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        lf_from_bytes(data + b"\0")


def test_bank_round_trip():
    rng = np.random.default_rng(0)
    b = CenterBank(["a", "bé", "c"], rng.normal(size=(3, 5)).astype(np.float32), AVERAGED, 100)
    data = bank_bytes(b)
    back = bank_from_bytes(data)
    assert bank_bytes(back) == data
    assert back.model_ids == b.model_ids and back.provenance == AVERAGED and back.views == 100
    assert np.array_equal(back.centers, b.centers)
    with pytest.raises(ArgumentError):
        bank_bytes(CenterBank([], np.zeros((0, 5))))
    with pytest.raises(FormatError):
        bank_from_bytes(data[:-2])


def _net(seed=0):
    cfg = NetConfig(n_models=3, input_size=24, pooled=12, hidden=(16,), dim=8)
    return DescriptorNet.init(cfg, LossConfig(), seed)


def test_checkpoint_reload_gives_identical_outputs(field):
    net = _net()
    data = checkpoint_bytes(net, ["x", "y", "z"])
    back, ids = checkpoint_from_bytes(data)
    assert ids == ["x", "y", "z"] and checkpoint_bytes(back, ids) == data
    for a, b in zip(forward(net, field), forward(back, field)):
        assert np.array_equal(a, b)


def test_checkpoint_version_and_shape_mismatch():
    data = bytearray(checkpoint_bytes(_net()))
    bad = bytes(data[:4]) + struct.pack("<I", 2) + bytes(data[8:])
    with pytest.raises(FormatError):
        checkpoint_from_bytes(bad)
    hdr = data.decode("latin-1")
    tampered = hdr.replace('"dim": 8', '"dim": 9').encode("latin-1")
    with pytest.raises(FormatError):
        checkpoint_from_bytes(tampered)
    with pytest.raises(FormatError):
        checkpoint_from_bytes(bytes(data[:-4]))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10**6))
def test_lf_round_trip_random(w, h, seed):
    rng = np.random.default_rng(seed)
    cam = Camera(float(rng.uniform(1, 50)), w / 2, h / 2, w, h)
    lf = empty_field(cam)
    lf.mask[...] = rng.random((h, w)) < 0.5
    lf.coords[lf.mask] = rng.uniform(-0.5, 0.5, (lf.mask.sum(), 3))
    data = lf_bytes(lf)
    assert lf_bytes(lf_from_bytes(data)) == data


def test_viz_channels(field, tmp_path):
    imgs = channel_images(field)
    for img in imgs:
        assert (img[~field.mask] == 0).all() and (img[field.mask] >= 1).all()
    paths = write_viz(field, tmp_path / "v")
    assert [p.name for p in paths] == ["v_x.ppm", "v_y.ppm", "v_z.ppm"]
    raw = paths[0].read_bytes()
    assert raw.startswith(b"P6\n24 24\n255\n") and len(raw) == len(b"P6\n24 24\n255\n") + 24 * 24 * 3
    assert ppm_bytes(imgs[0]) == raw


def test_ranked_round_trip(tmp_path):
    rows = [("q1", RetrievalResult(["a", "b"], [0.1, 0.25], 2), "b"),
            ("q2", RetrievalResult(["b", "a"], [0.0, 1.0], 2), None)]
    write_ranked(rows, tmp_path / "r.jsonl")
    back = read_ranked(tmp_path / "r.jsonl")
    assert [(q, r.model_ids, r.distances, g) for q, r, g in back] == \
        [(q, r.model_ids, r.distances, g) for q, r, g in rows]
    (tmp_path / "bad.jsonl").write_text("{not json}\n")
    with pytest.raises(FormatError):
        read_ranked(tmp_path / "bad.jsonl")


def test_curve_csv(tmp_path):
    from lfd.training import CURVE_FIELDS
    row = {k: 0.1 for k in CURVE_FIELDS}
    row["epoch"] = 0
    write_curve([row], tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == ",".join(CURVE_FIELDS) and len(lines) == 2
