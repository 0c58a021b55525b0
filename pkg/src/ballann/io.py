"""File formats: ball sets and query lists as text, indexes as binary.

Text formats carry original (pre-normalization) units.  Binary index files
are little-endian, open with a four-byte magic, and close with a CRC32 of
the payload so a truncated or corrupted file is rejected at load time,
before any structure is touched.

A registry file (magic BREG) stores only the inputs; the structure is
rebuilt on load, which is deterministic and cheap.  An approximate-Voronoi
file (magic BAVD) stores the full cell decomposition: cube table, per-cell
representative/estimate/witness/site/certificate, and the cluster list,
plus the inputs needed to rebuild the fallback registry.
"""

from __future__ import annotations

import struct
import zlib
from typing import Sequence, TextIO

import numpy as np

from .avd import AVDIndex, XI
from .geometry import Ball, InputError, NormalizedInstance, packing_constant
from .quadtree import CompressedQuadtree
from .quorum import QuorumCluster
from .registry import Registry, build_registry

_VERSION = 1
_MODE_CODE = {"practical": 0, "strict": 1}
_MODE_NAME = {v: k for k, v in _MODE_CODE.items()}

# Stats persisted in a BAVD file, in order.  Timing fields are deliberately
# absent: identical inputs must produce byte-identical files.
_STAT_FIELDS = (
    "clusters",
    "I",
    "S",
    "W",
    "overlay_pre_split",
    "splits",
    "uncertified",
    "coarsened_near",
    "coarsened_far",
    "empty_cells",
)


# -- ball files --------------------------------------------------------------


def dump_balls(fh: TextIO, balls: Sequence[Ball]) -> None:
    if not balls:
        raise InputError("refusing to write an empty ball file")
    d = balls[0].dimension
    fh.write(f"{d} {len(balls)}\n")
    for b in balls:
        row = tuple(b.center) + (b.radius,)
        fh.write(" ".join("%.17g" % v for v in row) + "\n")


def write_balls(path: str, balls: Sequence[Ball]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        dump_balls(fh, balls)


def read_balls(path: str) -> list[Ball]:
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = [ln.strip() for ln in fh]
    except OSError as exc:
        raise InputError(f"cannot read ball file {path!r}: {exc}") from exc
    lines = [ln for ln in lines if ln]
    if not lines:
        raise InputError(f"ball file {path!r} is empty")
    head = lines[0].split()
    if len(head) != 2:
        raise InputError(f"ball file header must be 'd n', got {lines[0]!r}")
    try:
        d, n = int(head[0]), int(head[1])
    except ValueError as exc:
        raise InputError(f"ball file header must be 'd n', got {lines[0]!r}") from exc
    if d < 1 or n < 1:
        raise InputError(f"ball file needs d >= 1 and n >= 1, got d={d} n={n}")
    if len(lines) - 1 != n:
        raise InputError(f"ball file promises {n} rows, found {len(lines) - 1}")
    balls = []
    for i, ln in enumerate(lines[1:]):
        toks = ln.split()
        if len(toks) != d + 1:
            raise InputError(f"ball row {i}: expected {d + 1} numbers, got {len(toks)}")
        try:
            vals = [float(t) for t in toks]
        except ValueError as exc:
            raise InputError(f"ball row {i}: {exc}") from exc
        if not all(np.isfinite(vals)):
            raise InputError(f"ball row {i}: coordinates must be finite")
        if vals[-1] < 0.0:
            raise InputError(f"ball row {i}: radius must be nonnegative")
        balls.append(Ball(tuple(vals[:-1]), vals[-1]))
    return balls


# -- query files -------------------------------------------------------------


def parse_query_line(
    line: str, dim: int, k: int | None, eps: float | None
) -> tuple[tuple[float, ...], int, float]:
    """One query row: d coordinates, then k and eps unless fixed by the caller.

    When k or eps is fixed, the column may still appear; it must then agree
    with the fixed value, since an index built for one (k, eps) cannot answer
    another.
    """
    toks = line.split()
    want_min = dim
    want_max = dim + 2
    if not (want_min <= len(toks) <= want_max):
        raise InputError(f"expected {dim} coordinates plus optional k/eps, got {len(toks)} fields")
    try:
        q = tuple(float(t) for t in toks[:dim])
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if not all(np.isfinite(q)):
        raise InputError("query coordinates must be finite")
    rest = toks[dim:]
    line_k: int | None = None
    line_eps: float | None = None
    if len(rest) >= 1:
        try:
            line_k = int(rest[0])
        except ValueError as exc:
            raise InputError(f"k must be an integer, got {rest[0]!r}") from exc
    if len(rest) == 2:
        try:
            line_eps = float(rest[1])
        except ValueError as exc:
            raise InputError(f"eps must be a float, got {rest[1]!r}") from exc
    if line_k is not None and k is not None and line_k != k:
        raise InputError(f"k={line_k} conflicts with the fixed k={k}")
    if line_eps is not None and eps is not None and line_eps != eps:
        raise InputError(f"eps={line_eps} conflicts with the fixed eps={eps}")
    out_k = line_k if line_k is not None else k
    out_eps = line_eps if line_eps is not None else eps
    if out_k is None:
        raise InputError("no k on the line and none fixed by the index or flags")
    if out_eps is None:
        raise InputError("no eps on the line and none fixed by the index or flags")
    if out_k < 1:
        raise InputError(f"k must be >= 1, got {out_k}")
    if not (0.0 < out_eps < 1.0):
        raise InputError(f"eps must lie in (0, 1), got {out_eps}")
    return q, out_k, out_eps


def write_queries(
    fh: TextIO, rows: Sequence[tuple[Sequence[float], int | None, float | None]]
) -> None:
    for q, k, eps in rows:
        parts = ["%.17g" % float(x) for x in q]
        if k is not None:
            parts.append(str(int(k)))
        if eps is not None:
            parts.append("%.17g" % float(eps))
        fh.write(" ".join(parts) + "\n")


# -- binary container --------------------------------------------------------


def _container(magic: bytes, payload: bytes) -> bytes:
    head = magic + struct.pack("<HH", _VERSION, 0)
    return head + payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def _open_container(path: str, blob: bytes) -> tuple[bytes, bytes]:
    if len(blob) < 12:
        raise InputError(f"index file {path!r} is too short to be valid")
    magic = blob[:4]
    version, _ = struct.unpack_from("<HH", blob, 4)
    if magic not in (b"BREG", b"BAVD"):
        raise InputError(f"index file {path!r} has unknown magic {magic!r}")
    if version != _VERSION:
        raise InputError(f"index file {path!r} has unsupported version {version}")
    payload = blob[8:-4]
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise InputError(f"index file {path!r} failed its integrity check (truncated or corrupted)")
    return magic, payload


class _Reader:
    """Sequential little-endian decoder over one payload."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def unpack(self, fmt: str):
        vals = struct.unpack_from("<" + fmt, self.buf, self.pos)
        self.pos += struct.calcsize("<" + fmt)
        return vals

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        nbytes = dt.itemsize * count
        if self.pos + nbytes > len(self.buf):
            raise InputError("index payload ended early")
        out = np.frombuffer(self.buf, dtype=dt, count=count, offset=self.pos)
        self.pos += nbytes
        return out.astype(dt.newbyteorder("="))


def _instance_block(inst: NormalizedInstance) -> bytes:
    """Normalized balls plus the exact affine transform back to original units.

    Persisting the normalized form (instead of re-deriving originals) keeps a
    save/load/save cycle byte-stable and reproduces the structure bit for bit.
    """
    out = struct.pack("<IQdd", inst.dimension, len(inst.balls), inst.epsilon_floor, inst.scale)
    out += np.asarray(inst.offset, dtype="<f8").tobytes()
    arr = np.array([tuple(b.center) + (b.radius,) for b in inst.balls], dtype="<f8")
    return out + arr.tobytes()


def _read_instance_block(r: _Reader) -> NormalizedInstance:
    d, n, eps, scale = r.unpack("IQdd")
    if d < 1 or n < 1:
        raise InputError("index instance block is malformed")
    offset = tuple(float(x) for x in r.array("f8", d))
    flat = r.array("f8", n * (d + 1)).reshape(n, d + 1)
    balls = tuple(Ball(tuple(float(x) for x in row[:-1]), float(row[-1])) for row in flat)
    return NormalizedInstance(
        balls=balls,
        scale=float(scale),
        offset=offset,
        epsilon_floor=float(eps),
        dimension=int(d),
        c_d=packing_constant(int(d)),
    )


# -- registry index ----------------------------------------------------------


def save_registry(path: str, reg: Registry) -> None:
    with open(path, "wb") as fh:
        fh.write(_container(b"BREG", _instance_block(reg.instance)))


def _load_registry(payload: bytes) -> Registry:
    r = _Reader(payload)
    inst = _read_instance_block(r)
    if r.pos != len(r.buf):
        raise InputError("index payload has trailing bytes")
    return build_registry(inst)


# -- approximate-Voronoi index ------------------------------------------------


def save_avd(path: str, a: AVDIndex) -> None:
    inst = a.registry.instance
    d = inst.dimension
    payload = bytearray()
    payload += struct.pack("<BxxxQddd", _MODE_CODE[a.mode], a.k, a.eps, a.zeta1, XI)
    payload += _instance_block(inst)
    payload += struct.pack("<Q", len(a.clusters))
    for c in a.clusters:
        payload += np.asarray(c.center, dtype="<f8").tobytes()
        payload += struct.pack("<dddqqBxxxxxxxQ", c.radius, c.rho, c.gamma,
                               c.witness, c.round_index, int(c.is_remainder),
                               len(c.assigned))
        payload += np.asarray(c.assigned, dtype="<i8").tobytes()
    tree = a.tree
    payload += struct.pack("<Q", tree.size)
    payload += tree.z.astype("<i8").tobytes()
    payload += tree.level.astype("<i8").tobytes()
    payload += a.rep.astype("<f8").tobytes()
    payload += a.kdist.astype("<f8").tobytes()
    payload += a.kdist_witness.astype("<i8").tobytes()
    payload += a.site.astype("<i8").tobytes()
    payload += a.cert.astype("u1").tobytes()
    payload += a.flags.astype("u1").tobytes()
    payload += struct.pack("<10Q", *(int(a.stats.get(f, 0)) for f in _STAT_FIELDS))
    with open(path, "wb") as fh:
        fh.write(_container(b"BAVD", bytes(payload)))


def _load_avd(payload: bytes) -> AVDIndex:
    r = _Reader(payload)
    mode_code, k, eps, zeta1, xi = r.unpack("BxxxQddd")
    if mode_code not in _MODE_NAME:
        raise InputError(f"unknown mode code {mode_code}")
    if xi != XI:
        raise InputError(f"index was built with xi={xi}, this build uses {XI}")
    inst = _read_instance_block(r)
    d = inst.dimension
    n = len(inst.balls)
    m = r.unpack("Q")[0]
    clusters = []
    for _ in range(m):
        center = r.array("f8", d)
        radius, rho, gamma, witness, round_index, is_rem, a_len = r.unpack("dddqqBxxxxxxxQ")
        assigned = r.array("i8", a_len)
        clusters.append(
            QuorumCluster(
                center=center.copy(),
                radius=radius,
                rho=rho,
                gamma=gamma,
                assigned=assigned.copy(),
                witness=int(witness),
                round_index=int(round_index),
                is_remainder=bool(is_rem),
            )
        )
    size = r.unpack("Q")[0]
    z = r.array("i8", size).copy()
    level = r.array("i8", size).copy()
    rep = r.array("f8", size * d).reshape(size, d).copy()
    kdist = r.array("f8", size).copy()
    kdist_witness = r.array("i8", size).copy()
    site = r.array("i8", size).copy()
    cert = r.array("u1", size).copy()
    flags = r.array("u1", size).copy()
    stat_vals = r.unpack("10Q")
    if r.pos != len(r.buf):
        raise InputError("index payload has trailing bytes")
    reg = build_registry(inst)
    tree = CompressedQuadtree(d, z, level)
    mode = _MODE_NAME[mode_code]
    stats = {"n": n, "dim": d, "k": k, "eps": eps, "mode": mode, "zeta1": zeta1, "loaded": True}
    stats.update(dict(zip(_STAT_FIELDS, (int(v) for v in stat_vals))))
    return AVDIndex(
        tree=tree,
        rep=rep,
        kdist=kdist,
        kdist_witness=kdist_witness,
        site=site,
        cert=cert,
        flags=flags,
        clusters=clusters,
        registry=reg,
        k=int(k),
        eps=float(eps),
        mode=mode,
        zeta1=float(zeta1),
        stats=stats,
    )


def save_index(path: str, obj) -> None:
    if isinstance(obj, AVDIndex):
        save_avd(path, obj)
    elif isinstance(obj, Registry):
        save_registry(path, obj)
    else:
        raise InputError(f"cannot serialize {type(obj).__name__}")


def load_index(path: str):
    """Read either index kind; the magic decides.  Raises InputError on damage."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read index file {path!r}: {exc}") from exc
    magic, payload = _open_container(path, blob)
    try:
        if magic == b"BREG":
            return _load_registry(payload)
        return _load_avd(payload)
    except struct.error as exc:
        raise InputError(f"index file {path!r} is malformed: {exc}") from exc
