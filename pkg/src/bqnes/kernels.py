"""Positive-semidefinite kernels over architectures.

Cells use a normalised Weisfeiler-Lehman subtree kernel; ordinal vectors use
an RBF kernel.  Both are exposed through :class:`Kernel` objects whose
``gram`` accepts architecture ids and whose ``gram_vectors`` accepts the
integer position vectors from :class:`~bqnes.archspace.SpaceConfig`.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import _backend
from .archspace import CellArchitecture, OrdinalArchitecture, SpaceConfig, id_kind
from .errors import KindError, ShapeError

WL_DEPTHS = (0, 1, 2, 3)


@dataclass(frozen=True)
class KernelHyperparams:
    """Kernel hyperparameters.

    ``depth`` is used by the WL kernel only, ``lengthscales`` by the RBF kernel
    only.  A single lengthscale is broadcast over all dimensions.
    """

    signal_variance: float = 1.0
    noise_variance: float = 1e-6
    depth: int = 1
    lengthscales: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        ls = self.lengthscales
        ls = (float(ls),) if np.isscalar(ls) else tuple(float(x) for x in ls)
        object.__setattr__(self, "lengthscales", ls)
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be > 0")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if any(not x > 0 for x in ls):
            raise ValueError("lengthscales must be > 0")

    def with_(self, **changes) -> "KernelHyperparams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {"signal_variance": self.signal_variance, "noise_variance": self.noise_variance,
                "depth": self.depth, "lengthscales": list(self.lengthscales)}


# -- Weisfeiler-Lehman -------------------------------------------------------

def _hash64(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little", signed=True)


def _initial_node_labels(cell: CellArchitecture) -> list[str]:
    ins = [[] for _ in range(cell.node_count)]
    outs = [[] for _ in range(cell.node_count)]
    for (s, t), op in zip(cell.edges, cell.op_labels):
        outs[s].append(op)
        ins[t].append(op)
    return [f"in[{','.join(sorted(i))}]out[{','.join(sorted(o))}]" for i, o in zip(ins, outs)]


def wl_features(cell: CellArchitecture, h: int) -> dict[tuple[int, int], int]:
    """WL subtree histogram of ``cell`` for iterations ``0..h``.

    Nodes are labelled by the sorted op labels of their incoming and outgoing
    edges.  Each refinement hashes a node's label together with the sorted
    labels of its in-neighbours.  Keys are ``(iteration, label_hash)``.
    """
    labels = _initial_node_labels(cell)
    preds = [[] for _ in range(cell.node_count)]
    for s, t in cell.edges:
        preds[t].append(s)
    feats: dict[tuple[int, int], int] = {}
    for it in range(h + 1):
        if it > 0:
            labels = [f"{_hash64(labels[v]):x}({','.join(sorted(labels[u] for u in preds[v]))})"
                      for v in range(cell.node_count)]
            labels = [f"{_hash64(x):x}" for x in labels]
        for lab in labels:
            key = (it, _hash64(lab))
            feats[key] = feats.get(key, 0) + 1
    return feats


def _feature_arrays(feats: dict[tuple[int, int], int]) -> tuple[np.ndarray, np.ndarray]:
    keys = np.array([_hash64(f"{it}:{lh}") for it, lh in feats], dtype=np.int64)
    vals = np.array(list(feats.values()), dtype=np.float64)
    order = np.argsort(keys, kind="stable")
    keys, vals = keys[order], vals[order]
    return keys, vals / np.sqrt(vals @ vals)


def _dedupe(V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if V.shape[0] == 0:
        return V, np.zeros(0, dtype=np.int64)
    uniq, inv = np.unique(V, axis=0, return_inverse=True)
    return uniq, inv.reshape(-1)


class Kernel:
    """Kernel bound to one search space."""

    kind: str = ""

    def __init__(self, space: SpaceConfig):
        if space.kind != self.kind:
            raise KindError(f"{type(self).__name__} needs a {self.kind} space, got {space.kind}")
        self.space = space

    def default_hypers(self) -> KernelHyperparams:
        return KernelHyperparams()

    def gram(self, X: Sequence[str], Y: Sequence[str], theta: KernelHyperparams) -> np.ndarray:
        for a in list(X) + list(Y):
            if id_kind(a) != self.kind:
                raise KindError(f"{a!r} is not a {self.kind} architecture")
        return self.gram_vectors(self.space.vectors(X), self.space.vectors(Y), theta)

    def gram_vectors(self, VX: np.ndarray, VY: np.ndarray, theta: KernelHyperparams) -> np.ndarray:
        raise NotImplementedError

    def diag_vectors(self, VX: np.ndarray, theta: KernelHyperparams) -> np.ndarray:
        return np.full(len(VX), float(theta.signal_variance))


class WLKernel(Kernel):
    """Normalised WL subtree kernel: ``sv * <phi_a, phi_b> / (|phi_a| |phi_b|)``."""

    kind = "cell"

    def __init__(self, space: SpaceConfig):
        super().__init__(space)
        self._cache: dict[tuple[tuple[int, ...], int], tuple[np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()
        self.feature_computations = 0
        self.cache_hits = 0

    def _features(self, vec: tuple[int, ...], h: int):
        key = (vec, h)
        hit = self._cache.get(key)
        if hit is not None:
            self.cache_hits += 1
            return hit
        sp = self.space
        cell = CellArchitecture(sp.node_count, sp.edges, tuple(sp.vocabulary[i] for i in vec))
        arrays = _feature_arrays(wl_features(cell, h))
        with self._lock:
            if key not in self._cache:
                self._cache[key] = arrays
                self.feature_computations += 1
            return self._cache[key]

    def _csr(self, V: np.ndarray, h: int):
        feats = [self._features(tuple(int(x) for x in row), h) for row in V]
        ptr = np.zeros(len(feats) + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([k.size for k, _ in feats])
        keys = np.concatenate([k for k, _ in feats]) if feats else np.zeros(0, dtype=np.int64)
        vals = np.concatenate([v for _, v in feats]) if feats else np.zeros(0)
        return ptr, np.ascontiguousarray(keys), np.ascontiguousarray(vals)

    def gram_vectors(self, VX, VY, theta):
        ux, ix = _dedupe(np.asarray(VX, dtype=np.int64).reshape(len(VX), -1))
        uy, iy = _dedupe(np.asarray(VY, dtype=np.int64).reshape(len(VY), -1))
        if len(ux) == 0 or len(uy) == 0:
            return np.zeros((len(VX), len(VY)))
        G = _backend.sparse_gram(*self._csr(ux, theta.depth), *self._csr(uy, theta.depth))
        np.clip(G, 0.0, 1.0, out=G)
        row_of = {r.tobytes(): i for i, r in enumerate(ux)}
        for j, r in enumerate(uy):
            i = row_of.get(r.tobytes())
            if i is not None:
                G[i, j] = 1.0
        return theta.signal_variance * G[np.ix_(ix, iy)]


class OrdinalRBFKernel(Kernel):
    """``sv * exp(-0.5 * sum_d ((a_d - b_d) / l_d)^2)`` over ordinal levels."""

    kind = "ordinal"

    def default_hypers(self) -> KernelHyperparams:
        return KernelHyperparams(lengthscales=(1.0,))

    def inverse_lengthscales(self, theta: KernelHyperparams) -> np.ndarray:
        ls = np.asarray(theta.lengthscales, dtype=np.float64)
        d = self.space.n_positions
        if ls.size == 1:
            ls = np.full(d, ls[0])
        if ls.size != d:
            raise ShapeError(f"{ls.size} lengthscales for a {d}-dimensional space")
        return 1.0 / ls

    def gram_vectors(self, VX, VY, theta):
        X = np.ascontiguousarray(VX, dtype=np.float64).reshape(len(VX), -1)
        Y = np.ascontiguousarray(VY, dtype=np.float64).reshape(len(VY), -1)
        d = self.space.n_positions
        if (X.size and X.shape[1] != d) or (Y.size and Y.shape[1] != d):
            raise ShapeError("architecture dimensionality does not match the space")
        if len(X) == 0 or len(Y) == 0:
            return np.zeros((len(X), len(Y)))
        return _backend.rbf_gram(X, Y, self.inverse_lengthscales(theta), float(theta.signal_variance))


class DeltaKernel(Kernel):
    """``sv * 1[a == b]``; closed-form kernel means make it a test fixture."""

    def __init__(self, space: SpaceConfig):
        self.kind = space.kind
        super().__init__(space)

    def gram_vectors(self, VX, VY, theta):
        VX = np.asarray(VX).reshape(len(VX), -1)
        VY = np.asarray(VY).reshape(len(VY), -1)
        if len(VX) == 0 or len(VY) == 0:
            return np.zeros((len(VX), len(VY)))
        return theta.signal_variance * (VX[:, None, :] == VY[None, :, :]).all(-1).astype(np.float64)


def make_kernel(space: SpaceConfig) -> Kernel:
    return WLKernel(space) if space.kind == "cell" else OrdinalRBFKernel(space)


def wl_kernel(a: CellArchitecture, b: CellArchitecture, theta: KernelHyperparams) -> float:
    fa, fb = wl_features(a, theta.depth), wl_features(b, theta.depth)
    dot = sum(v * fb.get(k, 0) for k, v in fa.items())
    na = sum(v * v for v in fa.values())
    nb = sum(v * v for v in fb.values())
    if fa == fb:
        return float(theta.signal_variance)
    return float(theta.signal_variance * min(dot / np.sqrt(na * nb), 1.0))


def ordinal_rbf(a: OrdinalArchitecture, b: OrdinalArchitecture, theta: KernelHyperparams) -> float:
    x = np.asarray(a.choices, dtype=np.float64)
    y = np.asarray(b.choices, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"dimension mismatch: {x.size} vs {y.size}")
    ls = np.asarray(theta.lengthscales, dtype=np.float64)
    if ls.size not in (1, x.size):
        raise ShapeError(f"{ls.size} lengthscales for {x.size} dimensions")
    return float(theta.signal_variance * np.exp(-0.5 * np.sum(((x - y) / ls) ** 2)))


def gram(kernel: Kernel, X: Sequence[str], Y: Sequence[str], theta: KernelHyperparams) -> np.ndarray:
    return kernel.gram(X, Y, theta)
