"""Binary and text artifacts.

Binary formats are little-endian and start with a 4-byte magic:

``LFD1`` location field::

    magic | u32 width | u32 height | u8 domain | 4 x f32 camera (focal, px, py, 0)
    | u8 has_pose [| 9 x f32 R row-major | 3 x f32 t] | u32 id_len | id (UTF-8)
    | h*w*3 x f32 coords | h*w x u8 mask

``LFB1`` center bank::

    magic | u32 K | u32 D | u8 provenance | u32 views | K x (u32 len | id) | K*D x f32

``LFC1`` checkpoint::

    magic | u32 version | u32 header_len | JSON header | f32 payloads in header order

Camera and pose are stored as f32, so ``write(read(write(x)))`` reproduces the
first file byte for byte while the in-memory camera may differ by f32 rounding.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .descriptor import DescriptorNet, LossConfig, NetConfig
from .errors import ArgumentError, FormatError
from .render import DOMAINS, Camera, LocationField, Pose
from .retrieval import AVERAGED, TRAINED, CenterBank, RetrievalResult

LF_MAGIC = b"LFD1"
BANK_MAGIC = b"LFB1"
CKPT_MAGIC = b"LFC1"
CKPT_VERSION = 1

_DOMAIN_TAG = {d: i for i, d in enumerate(DOMAINS)}
_PROV_TAG = {TRAINED: 0, AVERAGED: 1}


class _Reader:
    """Cursor over a byte string that refuses to read past the end."""

    def __init__(self, data: bytes, what: str):
        self.data, self.pos, self.what = data, 0, what

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"truncated {self.what} at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def array(self, dtype, count: int) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()

    def string(self) -> str:
        (n,) = self.unpack("I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"bad UTF-8 in {self.what}") from e

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes in {self.what}")


def _string(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


# --- location fields ----------------------------------------------------------

def lf_bytes(lf: LocationField) -> bytes:
    cam = lf.camera
    if (cam.width, cam.height) != (lf.width, lf.height):
        raise ArgumentError("camera image size differs from the field size")
    parts = [LF_MAGIC, struct.pack("<IIB", lf.width, lf.height, _DOMAIN_TAG[lf.domain]),
             _f32([cam.focal, cam.px, cam.py, 0.0])]
    if lf.pose is None:
        parts.append(b"\x00")
    else:
        parts += [b"\x01", _f32(lf.pose.rotation.ravel()), _f32(lf.pose.translation)]
    parts += [_string(lf.model_id or ""), _f32(lf.coords), np.ascontiguousarray(lf.mask, dtype=np.uint8).tobytes()]
    return b"".join(parts)


def lf_from_bytes(data: bytes) -> LocationField:
    r = _Reader(data, "location field")
    if r.take(4) != LF_MAGIC:
        raise FormatError("not a location field file (bad magic)")
    w, h, tag = r.unpack("IIB")
    if tag >= len(DOMAINS):
        raise FormatError(f"unknown domain tag {tag}")
    focal, px, py, _ = r.array("f4", 4).astype(np.float64)
    (flag,) = r.unpack("B")
    pose = None
    if flag == 1:
        p = r.array("f4", 12).astype(np.float64)
        pose = Pose(p[:9].reshape(3, 3), p[9:])
    elif flag != 0:
        raise FormatError(f"bad pose flag {flag}")
    model_id = r.string()
    coords = r.array("f4", h * w * 3).astype(np.float32).reshape(h, w, 3)
    mask = r.array("u1", h * w)
    if mask.max(initial=0) > 1:
        raise FormatError("mask bytes must be 0 or 1")
    r.done()
    try:
        cam = Camera(float(focal), float(px), float(py), w, h)
    except ArgumentError as e:
        raise FormatError(f"bad camera: {e}") from e
    return LocationField(w, h, coords, mask.reshape(h, w).astype(bool), cam, pose,
                         model_id or None, DOMAINS[tag])


def write_lf(lf: LocationField, path) -> None:
    Path(path).write_bytes(lf_bytes(lf))


def read_lf(path) -> LocationField:
    return lf_from_bytes(Path(path).read_bytes())


# --- center banks -------------------------------------------------------------

def bank_bytes(bank: CenterBank) -> bytes:
    if bank.K == 0:
        raise ArgumentError("refusing to write an empty bank")
    parts = [BANK_MAGIC, struct.pack("<IIBI", bank.K, bank.D, _PROV_TAG[bank.provenance], bank.views)]
    parts += [_string(m) for m in bank.model_ids]
    parts.append(_f32(bank.centers))
    return b"".join(parts)


def bank_from_bytes(data: bytes) -> CenterBank:
    r = _Reader(data, "bank")
    if r.take(4) != BANK_MAGIC:
        raise FormatError("not a bank file (bad magic)")
    K, D, tag, views = r.unpack("IIBI")
    if K == 0:
        raise FormatError("bank has no entries")
    prov = {v: k for k, v in _PROV_TAG.items()}.get(tag)
    if prov is None:
        raise FormatError(f"unknown provenance tag {tag}")
    ids = [r.string() for _ in range(K)]
    centers = r.array("f4", K * D).reshape(K, D)
    r.done()
    try:
        return CenterBank(ids, centers, prov, views)
    except ArgumentError as e:
        raise FormatError(str(e)) from e


def write_bank(bank: CenterBank, path) -> None:
    Path(path).write_bytes(bank_bytes(bank))


def read_bank(path) -> CenterBank:
    return bank_from_bytes(Path(path).read_bytes())


# --- checkpoints --------------------------------------------------------------

def checkpoint_bytes(net: DescriptorNet, model_ids=None) -> bytes:
    names = list(net.params)
    header = {
        "net": dataclasses.asdict(net.cfg),
        "loss": dataclasses.asdict(net.loss),
        "model_ids": list(model_ids) if model_ids is not None else None,
        "layers": [{"name": k, "shape": list(net.params[k].shape)} for k in names],
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(hb)), hb]
    parts += [_f32(net.params[k]) for k in names]
    return b"".join(parts)


def checkpoint_from_bytes(data: bytes):
    """Returns (net, model_ids or None)."""
    r = _Reader(data, "checkpoint")
    if r.take(4) != CKPT_MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    version, n = r.unpack("II")
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(r.take(n).decode("utf-8"))
        net_cfg = NetConfig(**header["net"])
        loss_cfg = LossConfig(**header["loss"])
    except (ValueError, TypeError, KeyError) as e:
        raise FormatError(f"bad checkpoint header: {e}") from e
    expected = DescriptorNet.init(net_cfg, loss_cfg, 0).params
    params = {}
    for layer in header["layers"]:
        name, shape = layer["name"], tuple(layer["shape"])
        if name not in expected or expected[name].shape != shape:
            raise FormatError(f"layer {name} shape {shape} does not fit the configured network")
        params[name] = r.array("f4", int(np.prod(shape))).reshape(shape).astype(net_cfg.dtype)
    if set(params) != set(expected):
        raise FormatError(f"checkpoint is missing layers {sorted(set(expected) - set(params))}")
    r.done()
    return DescriptorNet(net_cfg, loss_cfg, params), header.get("model_ids")


def write_checkpoint(net: DescriptorNet, path, model_ids=None) -> None:
    Path(path).write_bytes(checkpoint_bytes(net, model_ids))


def read_checkpoint(path):
    return checkpoint_from_bytes(Path(path).read_bytes())


# --- text artifacts -----------------------------------------------------------

def write_curve(history, path) -> None:
    from .training import CURVE_FIELDS
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k]
                        for k in CURVE_FIELDS})


def write_ranked(rows, path) -> None:
    """``rows`` are (query_id, RetrievalResult, gt_model_id or None)."""
    with open(path, "w") as fh:
        for qid, res, gt in rows:
            fh.write(json.dumps(res.to_json(qid, gt), sort_keys=True) + "\n")


def read_ranked(path):
    out = []
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out.append((d["query_id"], RetrievalResult.from_json(d), d.get("gt_model_id")))
            except (ValueError, KeyError, TypeError) as e:
                raise FormatError(f"ranked list line {i}: {e}") from e
    return out


def pose_json(pose: Pose, rms_px: float) -> dict:
    return {"rotation": [float(x) for x in pose.rotation.ravel()],
            "translation": [float(x) for x in pose.translation],
            "rms_px": float(rms_px)}


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- visualization ------------------------------------------------------------

def ppm_bytes(gray: np.ndarray) -> bytes:
    """Binary P6 image from an (h, w) uint8 array (replicated to RGB)."""
    h, w = gray.shape
    rgb = np.repeat(np.asarray(gray, np.uint8)[:, :, None], 3, axis=2)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def channel_images(lf: LocationField):
    """X, Y and Z as 8-bit images; masked values map to 1..255, background to 0."""
    out = []
    for c in range(3):
        v = np.clip(lf.coords[:, :, c].astype(np.float64) + 0.5, 0.0, 1.0)
        img = (1 + np.round(v * 254)).astype(np.uint8)
        img[~lf.mask] = 0
        out.append(img)
    return out


def write_viz(lf: LocationField, prefix) -> list:
    paths = []
    for name, img in zip("xyz", channel_images(lf)):
        p = Path(f"{prefix}_{name}.ppm")
        p.write_bytes(ppm_bytes(img))
        paths.append(p)
    return paths
