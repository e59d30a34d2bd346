"""Environments: per-site nearest-neighbour kernels on a finite lattice box.

Kernel entries are ordered e_1, ..., e_d, -e_1, ..., -e_d.  Boxes are stored
row-major with axis 0 slowest; sampling fills sites in that order from a
single counter-based stream, so environments are reproducible bit for bit.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property

import crcmod
import numpy as np

from . import rng
from .lattice import axis_offsets

SUM_TOL = 1e-12
FORMAT_VERSION = 1
MAGIC = b"RWRE"

_crc64 = crcmod.mkCrcFun(0x142F0E1EBA9EA3693, initCrc=0, rev=True, xorOut=0xFFFFFFFFFFFFFFFF)


def crc64(data: bytes) -> int:
    """CRC-64/XZ."""
    return _crc64(data)


class EnvError(ValueError):
    pass


class FormatError(EnvError):
    pass


class KernelError(EnvError):
    def __init__(self, msg, site=None):
        super().__init__(msg)
        self.site = site


@dataclass(frozen=True)
class SiteLaw:
    """Law of a single site kernel.

    kinds: ``uniform-axis``, ``srw``, ``elliptic-mixture`` (param ``eps``:
    weight of the SRW kernel mixed into a uniform-axis kernel) and
    ``custom-table`` (params ``atoms`` and ``weights``).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("uniform-axis", "srw", "elliptic-mixture", "custom-table"):
            raise ValueError(f"unknown law kind {self.kind!r}")
        if self.kind == "elliptic-mixture":
            eps = self.params.get("eps")
            if eps is None or not 0 < eps <= 1:
                raise ValueError("elliptic-mixture needs eps in (0, 1]")
        if self.kind == "custom-table":
            atoms = np.asarray(self.params.get("atoms"), dtype=np.float64)
            w = np.asarray(self.params.get("weights"), dtype=np.float64)
            if atoms.ndim != 2 or atoms.shape[0] != w.size or atoms.shape[1] % 2:
                raise ValueError("custom-table needs atoms (m, 2d) and m weights")
            if np.any(atoms < 0) or np.any(np.abs(atoms.sum(axis=1) - 1) > SUM_TOL):
                raise ValueError("custom-table atoms must be probability vectors")
            if np.any(w < 0) or abs(w.sum() - 1) > SUM_TOL:
                raise ValueError("custom-table weights must sum to 1")

    @property
    def law_id(self) -> str:
        if self.kind == "elliptic-mixture":
            return f"elliptic-mixture:{self.params['eps']!r}"
        return self.kind

    @classmethod
    def from_id(cls, law_id: str) -> "SiteLaw":
        if law_id.startswith("elliptic-mixture:"):
            return cls("elliptic-mixture", {"eps": float(law_id.split(":", 1)[1])})
        return cls(law_id)


UNIFORM_AXIS = SiteLaw("uniform-axis")
SRW = SiteLaw("srw")


def normalize_box(box, d: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Accept ``(lo, hi)`` pairs or a half-width ``b`` (box [-b, b]^d)."""
    if np.isscalar(box):
        if d is None:
            raise ValueError("scalar box needs d")
        b = int(box)
        return np.full(d, -b, dtype=np.int64), np.full(d, b, dtype=np.int64)
    lo, hi = box
    lo = np.asarray(lo, dtype=np.int64).reshape(-1)
    hi = np.asarray(hi, dtype=np.int64).reshape(-1)
    if lo.shape != hi.shape or np.any(hi < lo):
        raise ValueError("box must satisfy lo <= hi per axis")
    return lo, hi


class Environment:
    """Immutable field of kernels on the box ``lo <= x <= hi``."""

    def __init__(self, lo, hi, probs, law_id: str = "custom", seed: int = 0, validate=True):
        self.lo = np.asarray(lo, dtype=np.int64).copy()
        self.hi = np.asarray(hi, dtype=np.int64).copy()
        shape = tuple(int(v) for v in self.hi - self.lo + 1)
        p = np.ascontiguousarray(probs, dtype=np.float64).reshape(shape + (2 * len(shape),))
        p.setflags(write=False)
        self.probs = p
        self.law_id = law_id
        self.seed = int(seed) & rng.MASK64
        self.lo.setflags(write=False)
        self.hi.setflags(write=False)
        if validate:
            check_kernels(self)

    @property
    def d(self) -> int:
        return self.lo.size

    @property
    def shape(self) -> tuple:
        return self.probs.shape[:-1]

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.shape))

    def sites(self) -> np.ndarray:
        axes = [np.arange(a, b + 1) for a, b in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1).astype(np.int64)

    def contains(self, sites) -> np.ndarray:
        s = np.atleast_2d(np.asarray(sites, dtype=np.int64))
        return np.all((s >= self.lo) & (s <= self.hi), axis=1)

    def kernel(self, site) -> np.ndarray:
        return self.probs[tuple(np.asarray(site, dtype=np.int64) - self.lo)]

    def kernels_at(self, sites) -> np.ndarray:
        s = np.atleast_2d(np.asarray(sites, dtype=np.int64))
        if not np.all(self.contains(s)):
            bad = s[~self.contains(s)][0]
            raise KernelError(f"site {tuple(int(v) for v in bad)} has no kernel (outside box)", tuple(bad))
        rel = s - self.lo
        return self.probs[tuple(rel[:, i] for i in range(self.d))]

    def __eq__(self, other):
        return (isinstance(other, Environment) and np.array_equal(self.lo, other.lo)
                and np.array_equal(self.hi, other.hi) and self.law_id == other.law_id
                and self.seed == other.seed and np.array_equal(self.probs, other.probs))

    def __hash__(self):
        return hash((self.law_id, self.seed, self.probs.tobytes()))

    def __repr__(self):
        return f"Environment(d={self.d}, lo={self.lo.tolist()}, hi={self.hi.tolist()}, law={self.law_id!r}, seed={self.seed})"

    @cached_property
    def walk_tables(self) -> "WalkTables":
        return WalkTables.build(self)


@dataclass(frozen=True)
class WalkTables:
    """Flat, padded layout of an environment consumed by the walk kernels."""

    cum: np.ndarray        # (n_padded, 2d) inverse-CDF rows
    step_off: np.ndarray   # flat index offset for each direction
    axis_of: np.ndarray    # axis index of each direction
    pshape: tuple          # padded shape
    plo: np.ndarray        # coordinates of padded cell 0

    @classmethod
    def build(cls, env: Environment) -> "WalkTables":
        d = env.d
        pshape = tuple(s + 2 for s in env.shape)
        cum = np.zeros(pshape + (2 * d,), dtype=np.float64)
        inner = tuple(slice(1, -1) for _ in range(d))
        cum[inner] = cumulative_rows(env.probs.reshape(-1, 2 * d)).reshape(env.shape + (2 * d,))
        strides = np.cumprod((1,) + pshape[::-1][:-1])[::-1].astype(np.int64)
        step_off = np.concatenate([strides, -strides])
        axis_of = np.concatenate([np.arange(d), np.arange(d)]).astype(np.int64)
        return cls(cum.reshape(-1, 2 * d), step_off, axis_of, pshape, env.lo - 1)

    def flat(self, sites) -> np.ndarray:
        s = np.atleast_2d(np.asarray(sites, dtype=np.int64)) - self.plo
        return np.ravel_multi_index(tuple(s[:, i] for i in range(s.shape[1])), self.pshape)

    def unflat(self, idx) -> np.ndarray:
        coords = np.unravel_index(np.asarray(idx, dtype=np.int64), self.pshape)
        return np.stack(coords, axis=-1).astype(np.int64) + self.plo

    def state_template(self) -> np.ndarray:
        """int8 array over padded cells: 1 inside the box, -1 on the pad."""
        st = np.full(self.pshape, -1, dtype=np.int8)
        st[tuple(slice(1, -1) for _ in self.pshape)] = 1
        return st.reshape(-1)


def cumulative_rows(p: np.ndarray) -> np.ndarray:
    """Inverse-CDF rows; entries from the last positive direction on are 2.0.

    A direction is chosen as the number of entries <= u, so zero-probability
    directions can never be selected and rounding in the cumulative sum never
    pushes a draw past the final admissible direction.
    """
    c = np.cumsum(p, axis=1)
    pos = p > 0
    last = p.shape[1] - 1 - np.argmax(pos[:, ::-1], axis=1)
    cols = np.arange(p.shape[1])[None, :]
    c[cols >= last[:, None]] = 2.0
    return c


def check_kernels(env: Environment):
    p = env.probs.reshape(-1, 2 * env.d)
    bad_neg = np.any(p < 0, axis=1) | ~np.all(np.isfinite(p), axis=1)
    bad_sum = np.abs(p.sum(axis=1) - 1.0) > SUM_TOL
    bad = bad_neg | bad_sum
    if np.any(bad):
        i = int(np.argmax(bad))
        site = tuple(int(v) for v in np.unravel_index(i, env.shape) + env.lo)
        raise KernelError(f"invalid kernel at site {site}: {p[i].tolist()}", site)


# --- constructors ------------------------------------------------------------

def axis_kernels(axes: np.ndarray, d: int) -> np.ndarray:
    """Kernels putting 1/2 on +e_a and -e_a for each entry a of ``axes``."""
    n = axes.size
    out = np.zeros((n, 2 * d), dtype=np.float64)
    out[np.arange(n), axes] = 0.5
    out[np.arange(n), axes + d] = 0.5
    return out


def sample_iid(law: SiteLaw, box, seed: int, d: int | None = None) -> Environment:
    lo, hi = normalize_box(box, d)
    d = lo.size
    shape = tuple(int(v) for v in hi - lo + 1)
    n = int(np.prod(shape))
    key = rng.stream_key(seed, 0)
    u = rng.uniforms(np.full(n, key, dtype=np.uint64), np.arange(n, dtype=np.int64))
    if law.kind == "srw":
        probs = np.full((n, 2 * d), 1.0 / (2 * d))
    elif law.kind == "uniform-axis":
        probs = axis_kernels(np.minimum((u * d).astype(np.int64), d - 1), d)
    elif law.kind == "elliptic-mixture":
        eps = float(law.params["eps"])
        base = axis_kernels(np.minimum((u * d).astype(np.int64), d - 1), d)
        probs = (1 - eps) * base + eps / (2 * d)
    else:
        atoms = np.asarray(law.params["atoms"], dtype=np.float64)
        if atoms.shape[1] != 2 * d:
            raise ValueError("custom-table atoms do not match the box dimension")
        cw = np.cumsum(np.asarray(law.params["weights"], dtype=np.float64))
        idx = np.minimum(np.searchsorted(cw, u, side="right"), atoms.shape[0] - 1)
        probs = atoms[idx]
    return Environment(lo, hi, probs.reshape(shape + (2 * d,)), law.law_id, seed)


def constant_env(kernel, box, d: int | None = None, law_id: str = "custom") -> Environment:
    lo, hi = normalize_box(box, d if d is not None else len(kernel) // 2)
    shape = tuple(int(v) for v in hi - lo + 1)
    k = np.asarray(kernel, dtype=np.float64)
    return Environment(lo, hi, np.broadcast_to(k, shape + k.shape), law_id, 0)


def srw_env(box, d: int) -> Environment:
    return constant_env(np.full(2 * d, 1.0 / (2 * d)), box, d, "srw")


def axis_env(axis: int, box, d: int) -> Environment:
    """Every site moves along ``axis`` only (e.g. horizontal-only for axis 0)."""
    return constant_env(axis_kernels(np.array([axis]), d)[0], box, d, f"axis-{axis}")


def env_from_function(fn, box, d: int | None = None, law_id: str = "custom") -> Environment:
    lo, hi = normalize_box(box, d)
    shape = tuple(int(v) for v in hi - lo + 1)
    tmp = Environment(lo, hi, np.full(shape + (2 * lo.size,), 1.0 / (2 * lo.size)), validate=False)
    probs = np.array([fn(tuple(int(v) for v in s)) for s in tmp.sites()], dtype=np.float64)
    return Environment(lo, hi, probs.reshape(shape + (2 * lo.size,)), law_id, 0)


# --- predicates and maps -------------------------------------------------------

def is_balanced(env: Environment, tol: float = SUM_TOL):
    """Return ``(True, None)`` or ``(False, first violating site)``."""
    d = env.d
    p = env.probs.reshape(-1, 2 * d)
    bad = np.any(np.abs(p[:, :d] - p[:, d:]) > tol, axis=1)
    if not np.any(bad):
        return True, None
    i = int(np.argmax(bad))
    return False, tuple(int(v) for v in np.unravel_index(i, env.shape) + env.lo)


def is_genuinely_d_dimensional(env: Environment) -> bool:
    p = env.probs.reshape(-1, 2 * env.d)
    return bool(np.all(np.any(p > 0, axis=0)))


def truncate_renormalize(env: Environment, kappa: float) -> Environment:
    """Zero entries below ``kappa`` and spread their mass evenly over survivors."""
    d = env.d
    if not 0 < kappa < 1.0 / (2 * d):
        raise ValueError("kappa must lie in (0, 1/(2d))")
    p = env.probs.reshape(-1, 2 * d).copy()
    small = p < kappa
    n_surv = (~small).sum(axis=1)
    if np.any(n_surv == 0):
        i = int(np.argmax(n_surv == 0))
        raise AssertionError(f"all kernel entries below kappa at flat site {i}")
    mass = np.where(small, p, 0.0).sum(axis=1)
    p[small] = 0.0
    p += np.where(small, 0.0, (mass / n_surv)[:, None])
    return Environment(env.lo, env.hi, p.reshape(env.probs.shape), env.law_id + f"|trunc:{kappa!r}", env.seed)


@dataclass(frozen=True)
class SinkConstruction:
    env: Environment
    R: int
    sink_sites: np.ndarray
    x1: tuple
    x2: tuple
    sink_row: int


def sink_env_counterexample(R: int, d: int = 2) -> SinkConstruction:
    """Balanced, genuinely 2-d environment with an absorbing horizontal row.

    The box is [-2R, 2R]^2, which encloses the closed cylinder of radius 2R.
    The row ``y = sink_row`` uses horizontal kernels, so walks on it never
    leave it.  Two horizontal sites x1 = (0, 1), x2 = (1, 1) form a trap that
    is left with probability 1/2 per step; their horizontal neighbours and
    every other site are vertical, so vertical columns funnel into the row.
    """
    if d != 2:
        raise ValueError("the counterexample is built in d = 2")
    R = int(R)
    if R < 2:
        raise ValueError("R too small to fit the construction (need R >= 2)")
    half = 2 * R
    gap = max(2, math.ceil(R / 2))
    row = 1 - gap
    x1, x2 = (0, 1), (1, 1)
    lo = np.array([-half, -half])
    hi = np.array([half, half])
    shape = (2 * half + 1, 2 * half + 1)
    axes = np.ones(shape, dtype=np.int64)
    axes[:, row + half] = 0
    axes[x1[0] + half, x1[1] + half] = 0
    axes[x2[0] + half, x2[1] + half] = 0
    probs = axis_kernels(axes.reshape(-1), 2).reshape(shape + (4,))
    env = Environment(lo, hi, probs, f"counterexample:R={R}", 0)
    xs = np.arange(-half, half + 1)
    sink = np.stack([xs, np.full_like(xs, row)], axis=1)
    return SinkConstruction(env, R, sink, x1, x2, row)


# --- serialization -------------------------------------------------------------

def serialize(env: Environment) -> bytes:
    d = env.d
    law = env.law_id.encode("utf-8")
    head = bytearray()
    head += MAGIC
    head += struct.pack("<HB", FORMAT_VERSION, d)
    for a in range(d):
        head += struct.pack("<qq", int(env.lo[a]), int(env.hi[a]))
    head += struct.pack("<H", len(law)) + law
    head += struct.pack("<Q", env.seed)
    body = np.ascontiguousarray(env.probs, dtype="<f8").tobytes()
    data = bytes(head) + body
    return data + struct.pack("<Q", crc64(data))


def deserialize(data: bytes) -> Environment:
    if len(data) < 4 + 3 + 8 or data[:4] != MAGIC:
        raise FormatError("malformed header: bad magic")
    try:
        version, d = struct.unpack_from("<HB", data, 4)
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}")
        if d < 1:
            raise FormatError("malformed header: d must be >= 1")
        off = 7
        lo, hi = [], []
        for _ in range(d):
            a, b = struct.unpack_from("<qq", data, off)
            lo.append(a)
            hi.append(b)
            off += 16
        (n_law,) = struct.unpack_from("<H", data, off)
        off += 2
        law_id = data[off:off + n_law].decode("utf-8")
        off += n_law
        (seed,) = struct.unpack_from("<Q", data, off)
        off += 8
    except struct.error as exc:
        raise FormatError(f"malformed header: {exc}") from None
    lo_a, hi_a = np.array(lo, dtype=np.int64), np.array(hi, dtype=np.int64)
    if np.any(hi_a < lo_a):
        raise FormatError("malformed header: box with hi < lo")
    shape = tuple(int(v) for v in hi_a - lo_a + 1)
    nbytes = int(np.prod(shape)) * 2 * d * 8
    if len(data) != off + nbytes + 8:
        raise FormatError(f"malformed file: expected {off + nbytes + 8} bytes, got {len(data)}")
    probs = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=off).astype(np.float64)
    env = Environment(lo_a, hi_a, probs.reshape(shape + (2 * d,)), law_id, seed)
    (stored,) = struct.unpack_from("<Q", data, off + nbytes)
    if stored != crc64(data[:off + nbytes]):
        raise FormatError("checksum mismatch")
    return env


def to_json(env: Environment) -> str:
    rows = env.probs.reshape(-1, 2 * env.d)
    doc = {
        "format": "RWRE-json",
        "version": FORMAT_VERSION,
        "d": env.d,
        "lo": env.lo.tolist(),
        "hi": env.hi.tolist(),
        "law_id": env.law_id,
        "seed": env.seed,
        "probs": [[repr(float(v)) for v in r] for r in rows],
        "crc64": format(crc64(serialize(env)[:-8]), "016x"),
    }
    return json.dumps(doc, indent=1)


def from_json(text: str) -> Environment:
    try:
        doc = json.loads(text)
        if doc.get("format") != "RWRE-json":
            raise FormatError("not an RWRE json document")
        lo, hi = np.array(doc["lo"], dtype=np.int64), np.array(doc["hi"], dtype=np.int64)
        probs = np.array([[float(v) for v in r] for r in doc["probs"]], dtype=np.float64)
        shape = tuple(int(v) for v in hi - lo + 1)
        probs = probs.reshape(shape + (2 * int(doc["d"]),))
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed json environment: {exc}") from None
    env = Environment(lo, hi, probs, doc["law_id"], int(doc["seed"]))
    if "crc64" in doc and doc["crc64"] != format(crc64(serialize(env)[:-8]), "016x"):
        raise FormatError("checksum mismatch")
    return env


def save(env: Environment, path: str):
    data = to_json(env).encode() if str(path).endswith(".json") else serialize(env)
    with open(path, "wb") as fh:
        fh.write(data)


def load(path: str) -> Environment:
    with open(path, "rb") as fh:
        data = fh.read()
    if str(path).endswith(".json"):
        return from_json(data.decode())
    return deserialize(data)


def direction_vectors(d: int) -> np.ndarray:
    return axis_offsets(d)
