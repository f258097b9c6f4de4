"""Tabular architecture oracle.

A :class:`BenchmarkTable` stores, for every architecture in a space, a log
likelihood proxy on the validation split plus class-probability matrices on
the validation and test splits.  It stands in for training networks.

``.qbench`` layout (all little-endian)::

    b"QBNC1"                      magic
    u32                           JSON header length
    JSON header                   version, space, counts, arch ids, payload sha256
    f64[A]                        log evidence proxies
    f64[A, n_val, C]              validation predictions
    f64[A, n_test, C]             test predictions
    u16[n_val], u16[n_test]       labels
"""

from __future__ import annotations

import hashlib
import json
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _backend
from .archspace import SpaceConfig, enumerate_vectors
from .errors import FormatError, MissingRecordError

MAGIC = b"QBNC1"
FORMAT_VERSION = 1
PROB_FLOOR = 1e-12
# default mixing weight of the uniform distribution, so no synthetic probability is exactly zero
DEFAULT_SMOOTHING = 1e-6


@dataclass(frozen=True)
class BenchmarkRecord:
    arch: str
    log_evidence_proxy: float
    val_predictions: np.ndarray
    test_predictions: np.ndarray


class BenchmarkTable:
    """Read-only table plus a thread-safe query counter."""

    def __init__(self, space: SpaceConfig, archs, log_evidence, val_predictions, test_predictions,
                 labels_val, labels_test, query_cost_units: float = 1.0, meta: dict | None = None):
        self.space = space
        self.archs = list(archs)
        self.log_evidence = np.asarray(log_evidence, dtype=np.float64)
        self.val_predictions = np.asarray(val_predictions, dtype=np.float64)
        self.test_predictions = np.asarray(test_predictions, dtype=np.float64)
        self.labels_val = np.asarray(labels_val, dtype=np.int64)
        self.labels_test = np.asarray(labels_test, dtype=np.int64)
        self.query_cost_units = float(query_cost_units)
        self.meta = dict(meta or {})
        self.index = {a: i for i, a in enumerate(self.archs)}
        self._counter = 0.0
        self._n_queries = 0
        self._lock = threading.Lock()
        self._validate()

    def _validate(self):
        A = len(self.archs)
        if len(self.index) != A:
            raise FormatError("duplicate architecture ids")
        if self.log_evidence.shape != (A,):
            raise FormatError("one log evidence value per architecture is required")
        if not np.all(np.isfinite(self.log_evidence)):
            raise FormatError("log evidence proxies must be finite")
        for name, P, labels in (("val", self.val_predictions, self.labels_val),
                                ("test", self.test_predictions, self.labels_test)):
            if P.ndim != 3 or P.shape[0] != A or P.shape[1] != labels.size:
                raise FormatError(f"{name} predictions have shape {P.shape}")
            if P.shape[2] != self.n_classes:
                raise FormatError("val and test class counts differ")
            if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
                raise FormatError(f"{name} labels out of range")
        for a in self.archs:
            self.space.vector(a)

    @property
    def n_classes(self) -> int:
        return self.val_predictions.shape[2]

    @property
    def n_archs(self) -> int:
        return len(self.archs)

    @property
    def query_count(self) -> float:
        """Total cost units charged so far."""
        return self._counter

    @property
    def n_queries(self) -> int:
        return self._n_queries

    def reset_counter(self):
        with self._lock:
            self._counter = 0.0
            self._n_queries = 0

    def row(self, arch: str) -> int:
        try:
            return self.index[arch]
        except KeyError:
            raise MissingRecordError(f"{arch!r} is not in the benchmark table") from None

    def query(self, arch: str) -> BenchmarkRecord:
        i = self.row(arch)
        with self._lock:
            self._counter += self.query_cost_units
            self._n_queries += 1
        return BenchmarkRecord(arch, float(self.log_evidence[i]), self.val_predictions[i], self.test_predictions[i])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.space.to_dict(), sort_keys=True).encode())
        h.update(self.log_evidence.tobytes())
        h.update(self.labels_val.tobytes())
        h.update(self.labels_test.tobytes())
        return h.hexdigest()[:16]

    # -- persistence -------------------------------------------------------

    def _payload(self) -> bytes:
        parts = [self.log_evidence.astype("<f8").tobytes(), self.val_predictions.astype("<f8").tobytes(),
                 self.test_predictions.astype("<f8").tobytes(), self.labels_val.astype("<u2").tobytes(),
                 self.labels_test.astype("<u2").tobytes()]
        return b"".join(parts)

    def save(self, path) -> Path:
        if self.n_classes > 65535:
            raise FormatError("labels are stored as u16")
        payload = self._payload()
        header = {
            "version": FORMAT_VERSION,
            "space": self.space.to_dict(),
            "n_archs": self.n_archs,
            "n_val": int(self.labels_val.size),
            "n_test": int(self.labels_test.size),
            "n_classes": self.n_classes,
            "query_cost_units": self.query_cost_units,
            "archs": self.archs,
            "meta": self.meta,
            "payload_sha256": hashlib.sha256(payload).hexdigest(),
        }
        hb = json.dumps(header, sort_keys=True).encode()
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(hb)))
            fh.write(hb)
            fh.write(payload)
        return path


def save(table: BenchmarkTable, path) -> Path:
    return table.save(path)


def load(path) -> BenchmarkTable:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise FormatError("not a .qbench file (bad magic)")
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
    start = len(MAGIC) + 4
    if len(data) < start + hlen:
        raise FormatError("truncated header")
    try:
        header = json.loads(data[start: start + hlen])
    except ValueError as exc:
        raise FormatError(f"unreadable header: {exc}") from None
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {header.get('version')!r}")
    try:
        A, nv, nt, C = (int(header[k]) for k in ("n_archs", "n_val", "n_test", "n_classes"))
        archs = header["archs"]
        space = SpaceConfig.from_dict(header["space"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed header: {exc}") from None
    if len(archs) != A:
        raise FormatError(f"header declares {A} architectures but lists {len(archs)}")
    payload = data[start + hlen:]
    expected = 8 * (A + A * nv * C + A * nt * C) + 2 * (nv + nt)
    if len(payload) != expected:
        raise FormatError(f"payload is {len(payload)} bytes, header implies {expected}")
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise FormatError("payload checksum mismatch")
    off = 0

    def take(dtype, count, shape):
        nonlocal off
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=off).reshape(shape)
        off += arr.nbytes
        return arr.astype(np.float64 if dtype == "<f8" else np.int64)

    log_ev = take("<f8", A, (A,))
    val = take("<f8", A * nv * C, (A, nv, C))
    test = take("<f8", A * nt * C, (A, nt, C))
    lv = take("<u2", nv, (nv,))
    lt = take("<u2", nt, (nt,))
    return BenchmarkTable(space, archs, log_ev, val, test, lv, lt,
                          query_cost_units=header.get("query_cost_units", 1.0), meta=header.get("meta", {}))


# -- synthetic generation -----------------------------------------------------

@dataclass(frozen=True)
class SyntheticGenConfig:
    space: SpaceConfig
    n_val: int = 100
    n_test: int = 100
    n_classes: int = 10
    n_modes: int = 3
    peak_sharpness: float = 1.0
    label_noise: float = 0.05
    seed: int = 0
    smoothing: float = DEFAULT_SMOOTHING

    def __post_init__(self):
        if min(self.n_val, self.n_test, self.n_classes, self.n_modes) < 1:
            raise ValueError("counts must be >= 1")
        if not self.peak_sharpness > 0:
            raise ValueError("peak_sharpness must be > 0")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ValueError("label_noise must lie in [0, 1]")
        if not 0.0 < self.smoothing <= 1.0:
            raise ValueError("smoothing must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {"space": self.space.to_dict(), "n_val": self.n_val, "n_test": self.n_test,
                "n_classes": self.n_classes, "n_modes": self.n_modes, "peak_sharpness": self.peak_sharpness,
                "label_noise": self.label_noise, "seed": self.seed, "smoothing": self.smoothing}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticGenConfig":
        d = dict(d)
        space = d.pop("space", None)
        space = SpaceConfig.from_dict(space) if space else default_space()
        return cls(space=space, **d)


def default_space() -> SpaceConfig:
    """The 4096-architecture space used by the default synthetic benchmark."""
    return SpaceConfig.ordinal(dims=6, levels=4)


def latent_quality(V: np.ndarray, anchors: np.ndarray, peak_sharpness: float) -> np.ndarray:
    d = _backend.hamming_min(np.ascontiguousarray(V, dtype=np.int64),
                             np.ascontiguousarray(anchors, dtype=np.int64)).astype(np.float64)
    with np.errstate(invalid="ignore"):
        q = np.exp(-peak_sharpness * d)
    q[d == 0] = 1.0
    return q


def _predictions(rng, quality, labels, n_classes, label_noise, smoothing):
    A, n = quality.size, labels.size
    noise = rng.dirichlet(np.ones(n_classes), size=(A, n))
    flip = rng.random((A, n)) < label_noise
    shift = rng.integers(1, max(n_classes, 2), size=(A, n))
    target = np.where(flip, (labels[None, :] + shift) % n_classes, labels[None, :])
    q = quality[:, None, None]
    P = (1.0 - q) * noise
    np.put_along_axis(P, target[..., None], np.take_along_axis(P, target[..., None], -1) + q, axis=-1)
    P = (1.0 - smoothing) * P + smoothing / n_classes
    return P / P.sum(-1, keepdims=True)


def generate_synthetic(config: SyntheticGenConfig) -> BenchmarkTable:
    """Deterministic multi-modal synthetic benchmark.

    Each architecture's latent quality is ``max_k exp(-peak_sharpness * d_k)``
    with ``d_k`` the Hamming distance to anchor ``k``.  Prediction rows blend
    the one-hot target (the true label, or a wrong one with probability
    ``label_noise``) with a random simplex point, weighted by quality, so both
    accuracy and the validation log likelihood rise with quality.
    """
    space = config.space
    V = enumerate_vectors(space)
    archs = [space.encode(v) for v in V]
    rng = np.random.default_rng(config.seed)
    anchors = V[rng.choice(len(V), size=min(config.n_modes, len(V)), replace=False)]
    quality = latent_quality(V, anchors, config.peak_sharpness)
    C = config.n_classes
    labels_val = rng.integers(0, C, size=config.n_val)
    labels_test = rng.integers(0, C, size=config.n_test)
    val = _predictions(rng, quality, labels_val, C, config.label_noise, config.smoothing)
    test = _predictions(rng, quality, labels_test, C, config.label_noise, config.smoothing)
    p_true = np.take_along_axis(val, labels_val[None, :, None].repeat(len(V), 0), -1)[..., 0]
    log_ev = np.log(np.maximum(p_true, PROB_FLOOR)).sum(1)
    meta = {"generator": config.to_dict(), "anchors": [space.encode(a) for a in anchors]}
    return BenchmarkTable(space, archs, log_ev, val, test, labels_val, labels_test, meta=meta)


def query(table: BenchmarkTable, arch: str) -> BenchmarkRecord:
    return table.query(arch)
