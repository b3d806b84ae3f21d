"""Versioned binary containers for arrays, motions and checkpoints.

Every file is laid out as::

    magic (4 bytes) | version (u32 LE) | header length (u64 LE)
    | header: UTF-8 JSON, sorted keys, compact separators
    | payload: each array in header["arrays"] order, f64 LE, row-major
    | SHA-256 of everything above (32 bytes)

The header lists ``[name, shape]`` for every array plus free-form metadata.
Writing is canonical, so load -> save reproduces the original bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import neural as nn
from .dynamics import HEAD_ACTIVATION, HEADS, DynamicsModel
from .exceptions import FormatError
from .features import JointGroupMap
from .latent_space import LatentSpaceModel
from .so3 import RotationSequence

FORMAT_VERSION = 1
FEATMAT_MAGIC = b"LDFM"
QUATSEQ_MAGIC = b"LDQS"
CHECKPOINT_MAGIC = b"LDCK"
_PREFIX = struct.Struct("<4sIQ")
_DIGEST = 32
_F64 = np.dtype("<f8")


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def pack(magic: bytes, meta: dict, arrays: dict) -> bytes:
    """Serialize ``arrays`` (name -> array) with ``meta`` into container bytes."""
    header = dict(meta)
    header["arrays"] = [[name, list(np.shape(a))] for name, a in arrays.items()]
    head = _canonical_json(header)
    parts = [_PREFIX.pack(magic, FORMAT_VERSION, len(head)), head]
    for a in arrays.values():
        a = np.asarray(a, dtype=np.float64)
        if not np.all(np.isfinite(a)):
            raise ValueError("refusing to write non-finite values")
        parts.append(np.ascontiguousarray(a, dtype=_F64).tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def unpack(data: bytes, magic: bytes, what="file"):
    """Inverse of :func:`pack`; returns ``(meta, arrays)``."""
    if len(data) < _PREFIX.size + _DIGEST:
        raise FormatError(f"{what}: truncated ({len(data)} bytes)")
    got_magic, version, head_len = _PREFIX.unpack_from(data)
    if got_magic != magic:
        raise FormatError(f"{what}: bad magic {got_magic!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{what}: format version {version} is not supported (expected {FORMAT_VERSION})")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise FormatError(f"{what}: checksum mismatch, file is corrupt")
    start = _PREFIX.size
    try:
        header = json.loads(body[start : start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{what}: unreadable header ({exc})") from exc
    offset = start + head_len
    arrays = {}
    for name, shape in header.pop("arrays"):
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * 8
        if offset + nbytes > len(body):
            raise FormatError(f"{what}: payload for {name!r} with shape {tuple(shape)} runs past the end of the file")
        arrays[name] = np.frombuffer(body, dtype=_F64, count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(body):
        raise FormatError(f"{what}: {len(body) - offset} trailing bytes after the declared arrays")
    return header, arrays


def _write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def _read(path) -> bytes:
    return Path(path).read_bytes()


# --------------------------------------------------------------------------
# feature matrices (.featmat)


def dumps_featmat(matrix, meta=None) -> bytes:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise FormatError(f"feature matrices are 2-D, got shape {matrix.shape}")
    return pack(FEATMAT_MAGIC, {"kind": "featmat", "meta": meta or {}}, {"data": matrix})


def loads_featmat(data: bytes, what="featmat", expect_cols=None):
    header, arrays = unpack(data, FEATMAT_MAGIC, what)
    if set(arrays) != {"data"} or arrays["data"].ndim != 2:
        raise FormatError(f"{what}: expected a single 2-D array")
    out = arrays["data"]
    if expect_cols is not None and out.shape[1] != expect_cols:
        raise FormatError(f"{what}: expected {expect_cols} columns, found {out.shape[1]}")
    return out


def save_featmat(path, matrix, meta=None):
    _write(path, dumps_featmat(matrix, meta))


def load_featmat(path, expect_cols=None):
    return loads_featmat(_read(path), str(path), expect_cols)


def featmat_meta(path) -> dict:
    header, _ = unpack(_read(path), FEATMAT_MAGIC, str(path))
    return header.get("meta", {})


# --------------------------------------------------------------------------
# motions (.quatseq)


def dumps_quatseq(seq: RotationSequence) -> bytes:
    return pack(QUATSEQ_MAGIC, {"kind": "quatseq", "frame_interval": seq.frame_interval}, {"quaternions": seq.data})


def loads_quatseq(data: bytes, what="quatseq") -> RotationSequence:
    header, arrays = unpack(data, QUATSEQ_MAGIC, what)
    q = arrays.get("quaternions")
    if q is None or q.ndim != 3 or q.shape[-1] != 4:
        raise FormatError(f"{what}: expected a (T, J, 4) quaternion array")
    return RotationSequence(q, header.get("frame_interval", 1.0))


def save_quatseq(path, seq: RotationSequence):
    _write(path, dumps_quatseq(seq))


def load_quatseq(path) -> RotationSequence:
    return loads_quatseq(_read(path), str(path))


# --------------------------------------------------------------------------
# checkpoints (.ldck)


@dataclass
class Checkpoint:
    """A dynamics model plus everything needed to resume or reproduce it."""

    model: DynamicsModel
    latent_space: LatentSpaceModel | None = None
    optimizer: nn.AdamState | None = None
    epoch: int = 0
    history: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    group_map: JointGroupMap | None = None


def dumps_checkpoint(ck: Checkpoint) -> bytes:
    model = ck.model
    arrays = {"z_ref": model.z_ref}
    heads_meta = {}
    for name in HEADS:
        net = model.heads[name]
        heads_meta[name] = {"widths": net.widths, "activation": net.head}
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"head/{name}/w{i}"] = w
            arrays[f"head/{name}/b{i}"] = b
    meta = {
        "kind": "checkpoint",
        "d_z": model.d_z,
        "d_p": model.d_p,
        "dt": model.dt,
        "variant": model.variant,
        "heads": heads_meta,
        "epoch": int(ck.epoch),
        "config": ck.config,
        "group_map": ck.group_map.to_dict() if ck.group_map is not None else None,
    }
    ls = ck.latent_space
    if ls is not None:
        meta["latent_space"] = {"eps": ls.eps, "has_z_ref": ls.z_ref is not None}
        arrays.update({"latent/W": ls.W, "latent/mu_f": ls.mu_f, "latent/mu_z": ls.mu_z, "latent/sigma_z": ls.sigma_z})
        if ls.z_ref is not None:
            arrays["latent/z_ref"] = ls.z_ref
    else:
        meta["latent_space"] = None
    opt = ck.optimizer
    if opt is not None:
        meta["optimizer"] = {
            "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
            "step": opt.step, "n_buffers": len(opt.m),
        }
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            arrays[f"adam/m{i}"] = m
            arrays[f"adam/v{i}"] = v
    else:
        meta["optimizer"] = None
    arrays["history"] = np.asarray(ck.history, dtype=np.float64).reshape(-1, 4)
    return pack(CHECKPOINT_MAGIC, meta, arrays)


def loads_checkpoint(data: bytes, what="checkpoint") -> Checkpoint:
    meta, arrays = unpack(data, CHECKPOINT_MAGIC, what)
    try:
        heads = {}
        for name in HEADS:
            info = meta["heads"][name]
            n_layers = len(info["widths"]) - 1
            weights = [arrays[f"head/{name}/w{i}"] for i in range(n_layers)]
            biases = [arrays[f"head/{name}/b{i}"] for i in range(n_layers)]
            if info["activation"] != HEAD_ACTIVATION[name]:
                raise FormatError(f"{what}: head {name!r} has activation {info['activation']!r}")
            heads[name] = nn.DenseNet(weights, biases, info["activation"])
        model = DynamicsModel(heads, arrays["z_ref"], meta["dt"], meta["variant"], meta["d_p"])
        if model.d_z != meta["d_z"]:
            raise FormatError(f"{what}: header says d_z={meta['d_z']} but z_ref has length {model.d_z}")
        latent = None
        if meta["latent_space"] is not None:
            latent = LatentSpaceModel(
                arrays["latent/W"], arrays["latent/mu_f"], arrays["latent/mu_z"], arrays["latent/sigma_z"],
                meta["latent_space"]["eps"], arrays.get("latent/z_ref"),
            )
        opt = None
        if meta["optimizer"] is not None:
            o = meta["optimizer"]
            n = o["n_buffers"]
            opt = nn.AdamState(
                lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], step=o["step"],
                m=[arrays[f"adam/m{i}"] for i in range(n)], v=[arrays[f"adam/v{i}"] for i in range(n)],
            )
        history = [tuple(row) for row in arrays["history"].tolist()]
        history = [(int(e), int(h), p, loss) for e, h, p, loss in history]
        group_map = JointGroupMap.from_dict(meta["group_map"]) if meta.get("group_map") else None
    except KeyError as exc:
        raise FormatError(f"{what}: missing block {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{what}: inconsistent blocks ({exc})") from exc
    return Checkpoint(model, latent, opt, meta["epoch"], history, meta["config"], group_map)


def save_checkpoint(path, ck: Checkpoint):
    _write(path, dumps_checkpoint(ck))


def load_checkpoint(path) -> Checkpoint:
    return loads_checkpoint(_read(path), str(path))


# --------------------------------------------------------------------------
# latent-space model block (.featmat-style container, own magic)

LATENT_MAGIC = b"LDLS"


def dumps_latent_space(model: LatentSpaceModel) -> bytes:
    arrays = {"W": model.W, "mu_f": model.mu_f, "mu_z": model.mu_z, "sigma_z": model.sigma_z}
    if model.z_ref is not None:
        arrays["z_ref"] = model.z_ref
    return pack(LATENT_MAGIC, {"kind": "latent_space", "eps": model.eps}, arrays)


def loads_latent_space(data: bytes, what="latent space") -> LatentSpaceModel:
    meta, arrays = unpack(data, LATENT_MAGIC, what)
    try:
        return LatentSpaceModel(arrays["W"], arrays["mu_f"], arrays["mu_z"], arrays["sigma_z"], meta["eps"], arrays.get("z_ref"))
    except KeyError as exc:
        raise FormatError(f"{what}: missing block {exc}") from exc


def save_latent_space(path, model: LatentSpaceModel):
    _write(path, dumps_latent_space(model))


def load_latent_space(path) -> LatentSpaceModel:
    return loads_latent_space(_read(path), str(path))


# --------------------------------------------------------------------------
# loss history


def write_loss_csv(path, history):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "horizon", "p_tf", "loss"])
        for epoch, horizon, p_tf, loss in history:
            writer.writerow([int(epoch), int(horizon), repr(float(p_tf)), repr(float(loss))])
