"""Versioned binary checkpoints with a bit-exact round trip.

Layout (all little-endian):

    magic "FFFK" | u32 version | u8 kind (1 tree, 2 plain)
    u32 depth | u32 leaf_width | u32 master_width | u32 input_dim
    u32 class_count | u8 flags (bit 0: optimizer state present)
    u32 meta_len | meta JSON (utf-8, sorted keys)
    u32 n_sections | n x (u32 count | count x f32)
    [optimizer state: u64 step | u32 count | count x f32 (m) | same (v)]
    sha256 of everything above (32 bytes)

Sections hold float32 exactly as stored in memory: one section for all node
weights+biases, one per leaf (w1, b1, w2, b2 concatenated) in leaf order,
one for the master block + kappa when present. The plain net is a single
section. JSON export exists for eyeballing, not for round trips.
"""

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .errors import CheckpointError
from .model import FFFModel, VanillaModel, ParamBundle
from .optim import AdamState

MAGIC = b"FFFK"
VERSION = 1
KIND_TREE = 1
KIND_PLAIN = 2
FLAG_OPT = 1


def _tree_sections(model):
    p = model.params
    secs = [np.concatenate([p["node_w"].ravel(), p["node_b"]])]
    for i in range(model.n_leaves):
        lb = model.leaf(i)
        secs.append(np.concatenate([lb.w1.ravel(), lb.b1,
                                    np.ascontiguousarray(lb.w2).ravel(),
                                    lb.b2]))
    if model.has_master:
        secs.append(np.concatenate([p["m_w1"].ravel(), p["m_b1"],
                                    p["m_w2"].ravel(), p["m_b2"],
                                    p["kappa"]]))
    return secs


def _scatter_tree_sections(model, secs):
    p = model.params
    nn_, d_in = model.n_nodes, model.input_dim
    lw, cc = model.leaf_width, model.class_count
    sec = iter(secs)
    node = next(sec)
    p["node_w"][...] = node[:nn_ * d_in].reshape(nn_, d_in)
    p["node_b"][...] = node[nn_ * d_in:]
    for i in range(model.n_leaves):
        s = next(sec)
        lb = model.leaf(i)
        o = 0
        lb.w1[...] = s[o:o + lw * d_in].reshape(lw, d_in); o += lw * d_in
        lb.b1[...] = s[o:o + lw]; o += lw
        lb.w2[...] = s[o:o + cc * lw].reshape(cc, lw); o += cc * lw
        lb.b2[...] = s[o:o + cc]
    if model.has_master:
        s = next(sec)
        mw = model.master_width
        o = 0
        p["m_w1"][...] = s[o:o + mw * d_in].reshape(mw, d_in); o += mw * d_in
        p["m_b1"][...] = s[o:o + mw]; o += mw
        p["m_w2"][...] = s[o:o + cc * mw].reshape(cc, mw); o += cc * mw
        p["m_b2"][...] = s[o:o + cc]; o += cc
        p["kappa"][...] = s[o:o + 1]


def _expected_section_lengths(kind, depth, lw, mw, d_in, cc):
    if kind == KIND_PLAIN:
        return [lw * d_in + lw + cc * lw + cc]
    nn_, nl = 2 ** depth - 1, 2 ** depth
    lens = [nn_ * d_in + nn_]
    lens += [lw * d_in + lw + cc * lw + cc] * nl
    if mw:
        lens.append(mw * d_in + mw + cc * mw + cc + 1)
    return lens


def save(model, path, meta=None, opt_state=None):
    """Write a checkpoint; returns the byte count."""
    if model.params.dtype != np.float32:
        raise CheckpointError(
            f"checkpoints store float32; model is {model.params.dtype} "
            "(persist model.astype(np.float32) explicitly)")
    is_tree = isinstance(model, FFFModel)
    if is_tree:
        kind, depth = KIND_TREE, model.depth
        lw, mw = model.leaf_width, model.master_width
        secs = _tree_sections(model)
    else:
        kind, depth, lw, mw = KIND_PLAIN, 0, model.width, 0
        p = model.params
        secs = [np.concatenate([p["w1"].ravel(), p["b1"],
                                p["w2"].ravel(), p["b2"]])]
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<IB", VERSION, kind)
    blob += struct.pack("<IIIII", depth, lw, mw,
                        model.input_dim, model.class_count)
    flags = FLAG_OPT if opt_state is not None else 0
    blob += struct.pack("<B", flags)
    meta_raw = json.dumps(meta or {}, sort_keys=True).encode()
    blob += struct.pack("<I", len(meta_raw)) + meta_raw
    blob += struct.pack("<I", len(secs))
    for s in secs:
        blob += struct.pack("<I", s.size)
        blob += s.astype("<f4", copy=False).tobytes()
    if opt_state is not None:
        blob += struct.pack("<Q", opt_state.t)
        for arr in (opt_state.m, opt_state.v):
            a = np.asarray(arr, dtype="<f4")
            blob += struct.pack("<I", a.size) + a.tobytes()
    blob += hashlib.sha256(blob).digest()
    dirpath = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dirpath, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return len(blob)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.off = 0

    def take(self, n, what):
        if self.off + n > len(self.buf):
            raise CheckpointError(f"checkpoint truncated reading {what}")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, n, what):
        raw = self.take(4 * n, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32)


def load(path):
    """Read a checkpoint; returns (model, meta, opt_state_or_None)."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(buf) < len(MAGIC) + 32:
        raise CheckpointError(f"file too short to be a checkpoint: {path}")
    body, digest = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"checksum mismatch in {path}")
    r = _Reader(body)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    version, kind = r.unpack("<IB", "version")
    if version != VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version}, expected {VERSION}")
    if kind not in (KIND_TREE, KIND_PLAIN):
        raise CheckpointError(f"unknown model kind {kind}")
    depth, lw, mw, d_in, cc = r.unpack("<IIIII", "dims")
    (flags,) = r.unpack("<B", "flags")
    (meta_len,) = r.unpack("<I", "meta length")
    meta = json.loads(r.take(meta_len, "meta").decode())
    (n_secs,) = r.unpack("<I", "section count")
    want = _expected_section_lengths(kind, depth, lw, mw, d_in, cc)
    if n_secs != len(want):
        raise CheckpointError(
            f"{n_secs} sections, header dims imply {len(want)}")
    secs = []
    for i, wlen in enumerate(want):
        (count,) = r.unpack("<I", f"section {i} length")
        if count != wlen:
            raise CheckpointError(
                f"section {i} holds {count} floats, dims imply {wlen}")
        secs.append(r.floats(count, f"section {i}"))
    if kind == KIND_PLAIN:
        params = ParamBundle(VanillaModel.sections(lw, d_in, cc))
        model = VanillaModel(lw, d_in, cc, params)
        s = secs[0]
        o = 0
        params["w1"][...] = s[:lw * d_in].reshape(lw, d_in); o = lw * d_in
        params["b1"][...] = s[o:o + lw]; o += lw
        params["w2"][...] = s[o:o + cc * lw].reshape(cc, lw); o += cc * lw
        params["b2"][...] = s[o:o + cc]
    else:
        params = ParamBundle(FFFModel.sections(depth, lw, d_in, cc, mw))
        model = FFFModel(depth, lw, d_in, cc, mw, params)
        _scatter_tree_sections(model, secs)
    opt = None
    if flags & FLAG_OPT:
        (t,) = r.unpack("<Q", "optimizer step")
        (mn,) = r.unpack("<I", "optimizer m length")
        m = r.floats(mn, "optimizer m")
        (vn,) = r.unpack("<I", "optimizer v length")
        v = r.floats(vn, "optimizer v")
        if mn != params.size or vn != params.size:
            raise CheckpointError(
                f"optimizer moments sized {mn}/{vn}, params {params.size}")
        opt = AdamState(m=m, v=v, t=int(t))
    if r.off != len(body):
        raise CheckpointError(
            f"{len(body) - r.off} trailing bytes after checkpoint payload")
    return model, meta, opt


def export_json(model, meta=None):
    """Readable dict of the same content; decimal, so lossy by design."""
    is_tree = isinstance(model, FFFModel)
    head = {
        "kind": "tree" if is_tree else "plain",
        "input_dim": model.input_dim,
        "class_count": model.class_count,
        "meta": meta or {},
    }
    if is_tree:
        head.update(depth=model.depth, leaf_width=model.leaf_width,
                    master_width=model.master_width)
    else:
        head.update(width=model.width)
    head["params"] = {name: model.params[name].tolist()
                      for name in model.params.names}
    return head
