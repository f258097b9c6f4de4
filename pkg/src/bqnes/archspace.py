"""Architecture search spaces: cells with a fixed DAG topology and ordinal vectors.

Every architecture has a canonical string id.  Cell ids carry the full edge
list so a benchmark file is self-describing::

    c:4:0>1=nor_conv_3x3,0>2=none,...

Ordinal ids are the dot-joined levels, e.g. ``o:0.3.1``.

Internally both kinds are handled as integer vectors with one entry per
position (edge label index or ordinal level), which is what the kernels,
the synthetic benchmark and the mutation operator work on.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence, Union

import numpy as np

from .errors import EnumerationCapError, InvalidArchitectureError, KindError, NoMutationError

NATS_OPS = ("avg_pool_3x3", "nor_conv_1x1", "nor_conv_3x3", "none", "skip_connect")

DEFAULT_ENUMERATION_CAP = 10**6

_RESERVED = set(",=>:|")


def complete_dag_edges(node_count: int) -> tuple[tuple[int, int], ...]:
    return tuple((i, j) for j in range(node_count) for i in range(j))


@dataclass(frozen=True)
class CellArchitecture:
    node_count: int
    edges: tuple[tuple[int, int], ...]
    op_labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(s), int(t)) for s, t in self.edges))
        object.__setattr__(self, "op_labels", tuple(self.op_labels))
        if len(self.edges) != len(self.op_labels):
            raise InvalidArchitectureError("one op label per edge is required")
        for s, t in self.edges:
            if not 0 <= s < t < self.node_count:
                raise InvalidArchitectureError(f"edge {s}->{t} is not forward in a {self.node_count}-node DAG")


@dataclass(frozen=True)
class OrdinalArchitecture:
    choices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(int(c) for c in self.choices))
        if any(c < 0 for c in self.choices):
            raise InvalidArchitectureError("ordinal levels must be non-negative")


Architecture = Union[CellArchitecture, OrdinalArchitecture]


@dataclass(frozen=True)
class SpaceConfig:
    """A finite search space with a uniform prior.

    Use :meth:`cell` or :meth:`ordinal` rather than the raw constructor.
    """

    kind: str
    vocabulary: tuple[str, ...] = ()
    node_count: int = 0
    edges: tuple[tuple[int, int], ...] = ()
    cardinalities: tuple[int, ...] = ()
    enumeration_cap: int = field(default=DEFAULT_ENUMERATION_CAP, compare=False)

    def __post_init__(self):
        if self.kind == "cell":
            if not self.vocabulary:
                raise InvalidArchitectureError("cell space needs a non-empty vocabulary")
            if len(set(self.vocabulary)) != len(self.vocabulary):
                raise InvalidArchitectureError("duplicate op labels in vocabulary")
            for op in self.vocabulary:
                if not op or _RESERVED & set(op):
                    raise InvalidArchitectureError(f"op label {op!r} is empty or uses a reserved character")
            CellArchitecture(self.node_count, self.edges, (self.vocabulary[0],) * len(self.edges))
        elif self.kind == "ordinal":
            if not self.cardinalities or any(c < 1 for c in self.cardinalities):
                raise InvalidArchitectureError("ordinal cardinalities must be >= 1")
        else:
            raise KindError(f"unknown space kind {self.kind!r}")

    @classmethod
    def cell(cls, vocabulary: Sequence[str] = NATS_OPS, node_count: int = 4,
             edges: Sequence[tuple[int, int]] | None = None, **kw) -> "SpaceConfig":
        if edges is None:
            edges = complete_dag_edges(node_count)
        return cls(kind="cell", vocabulary=tuple(vocabulary), node_count=node_count,
                   edges=tuple((int(s), int(t)) for s, t in edges), **kw)

    @classmethod
    def ordinal(cls, dims: int = 28, levels: int | Sequence[int] = 4, **kw) -> "SpaceConfig":
        if isinstance(levels, int):
            cards = (levels,) * dims
        else:
            cards = tuple(int(c) for c in levels)
            if len(cards) != dims:
                raise InvalidArchitectureError("need one cardinality per dimension")
        return cls(kind="ordinal", cardinalities=cards, **kw)

    @cached_property
    def position_cardinalities(self) -> np.ndarray:
        if self.kind == "cell":
            return np.full(len(self.edges), len(self.vocabulary), dtype=np.int64)
        return np.asarray(self.cardinalities, dtype=np.int64)

    @property
    def n_positions(self) -> int:
        return len(self.position_cardinalities)

    @cached_property
    def size(self) -> int:
        return math.prod(int(c) for c in self.position_cardinalities)

    @property
    def prior_mass(self) -> float:
        return 1.0 / self.size

    @property
    def enumerable(self) -> bool:
        return self.size <= self.enumeration_cap

    @cached_property
    def _op_index(self) -> dict[str, int]:
        return {op: i for i, op in enumerate(self.vocabulary)}

    # -- encoding ----------------------------------------------------------

    def encode(self, vector: Sequence[int]) -> str:
        """Canonical id for a position vector of this space."""
        vec = [int(v) for v in vector]
        cards = self.position_cardinalities
        if len(vec) != len(cards) or any(not 0 <= v < c for v, c in zip(vec, cards)):
            raise InvalidArchitectureError(f"vector {vec} does not belong to the space")
        if self.kind == "ordinal":
            return "o:" + ".".join(map(str, vec))
        return _cell_id(self.node_count, self.edges, tuple(self.vocabulary[v] for v in vec))

    def vector(self, arch_id: str) -> tuple[int, ...]:
        """Position vector of ``arch_id``; raises if the id is not in this space."""
        parsed = _parse_id(arch_id)
        if parsed[0] != self.kind:
            raise KindError(f"{arch_id!r} is not a {self.kind} architecture")
        if self.kind == "ordinal":
            vec = parsed[1]
            cards = self.cardinalities
            if len(vec) != len(cards) or any(not 0 <= v < c for v, c in zip(vec, cards)):
                raise InvalidArchitectureError(f"{arch_id!r} is outside the ordinal space")
            return vec
        _, node_count, edges, labels = parsed
        if node_count != self.node_count or edges != self.edges:
            raise InvalidArchitectureError(f"{arch_id!r} has a different cell topology")
        try:
            return tuple(self._op_index[op] for op in labels)
        except KeyError as exc:
            raise InvalidArchitectureError(f"op {exc.args[0]!r} not in vocabulary") from None

    def vectors(self, arch_ids: Sequence[str]) -> np.ndarray:
        out = np.empty((len(arch_ids), self.n_positions), dtype=np.int64)
        for i, a in enumerate(arch_ids):
            out[i] = self.vector(a)
        return out

    def contains(self, arch_id: str) -> bool:
        try:
            self.vector(arch_id)
        except (InvalidArchitectureError, KindError):
            return False
        return True

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        if self.kind == "cell":
            return {"kind": "cell", "vocabulary": list(self.vocabulary), "node_count": self.node_count,
                    "edges": [list(e) for e in self.edges]}
        return {"kind": "ordinal", "cardinalities": list(self.cardinalities)}

    @classmethod
    def from_dict(cls, d: dict) -> "SpaceConfig":
        cap = d.get("enumeration_cap", DEFAULT_ENUMERATION_CAP)
        if d.get("kind") == "cell":
            return cls.cell(d["vocabulary"], node_count=int(d["node_count"]),
                            edges=[tuple(e) for e in d["edges"]], enumeration_cap=cap)
        if d.get("kind") == "ordinal":
            cards = [int(c) for c in d["cardinalities"]]
            return cls.ordinal(len(cards), cards, enumeration_cap=cap)
        raise KindError(f"unknown space kind {d.get('kind')!r}")


def _cell_id(node_count, edges, labels) -> str:
    body = ",".join(f"{s}>{t}={op}" for (s, t), op in zip(edges, labels))
    return f"c:{node_count}:{body}"


@lru_cache(maxsize=1 << 18)
def _parse_id(arch_id: str):
    try:
        prefix, rest = arch_id.split(":", 1)
        if prefix == "o":
            return ("ordinal", tuple(int(x) for x in rest.split(".")) if rest else ())
        if prefix == "c":
            n, body = rest.split(":", 1)
            edges, labels = [], []
            for part in body.split(",") if body else []:
                st, op = part.split("=")
                s, t = st.split(">")
                edges.append((int(s), int(t)))
                labels.append(op)
            return ("cell", int(n), tuple(edges), tuple(labels))
    except ValueError:
        pass
    raise InvalidArchitectureError(f"malformed architecture id {arch_id!r}")


def canonical_encode(arch: Architecture, space: SpaceConfig | None = None) -> str:
    """Canonical id of ``arch``.  With ``space`` given, membership is checked too."""
    if isinstance(arch, OrdinalArchitecture):
        arch_id = "o:" + ".".join(map(str, arch.choices))
    elif isinstance(arch, CellArchitecture):
        for op in arch.op_labels:
            if not op or _RESERVED & set(op):
                raise InvalidArchitectureError(f"op label {op!r} is empty or uses a reserved character")
        arch_id = _cell_id(arch.node_count, arch.edges, arch.op_labels)
    else:
        raise KindError(f"not an architecture: {arch!r}")
    if space is not None:
        space.vector(arch_id)
    return arch_id


def decode(arch_id: str) -> Architecture:
    parsed = _parse_id(arch_id)
    if parsed[0] == "ordinal":
        return OrdinalArchitecture(parsed[1])
    _, n, edges, labels = parsed
    return CellArchitecture(n, edges, labels)


def id_kind(arch_id: str) -> str:
    return _parse_id(arch_id)[0]


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_prior_vectors(space: SpaceConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    cards = space.position_cardinalities
    return rng.integers(0, cards, size=(n, len(cards)))


def sample_prior(space: SpaceConfig, seed, n: int) -> list[str]:
    """``n`` i.i.d. uniform draws (with replacement) from the space."""
    if n < 1:
        raise ValueError("n must be >= 1")
    vecs = sample_prior_vectors(space, _rng(seed), n)
    return [space.encode(v) for v in vecs]


def enumerate_vectors(space: SpaceConfig) -> np.ndarray:
    """All position vectors, in the same order as :func:`enumerate_space`."""
    if not space.enumerable:
        raise EnumerationCapError(f"space has {space.size} architectures, cap is {space.enumeration_cap}")
    grids = np.array(list(itertools.product(*(range(int(c)) for c in space.position_cardinalities))),
                     dtype=np.int64).reshape(space.size, space.n_positions)
    ids = [space.encode(v) for v in grids]
    order = sorted(range(len(ids)), key=ids.__getitem__)
    return grids[order]


def enumerate_space(space: SpaceConfig) -> list[str]:
    """Every architecture id in the space, lexicographically sorted."""
    return [space.encode(v) for v in enumerate_vectors(space)]


def mutate(space: SpaceConfig, arch_id: str, seed) -> str:
    """Resample exactly one position to a different value."""
    rng = _rng(seed)
    vec = list(space.vector(arch_id))
    cards = space.position_cardinalities
    mutable = np.flatnonzero(cards > 1)
    if mutable.size == 0:
        raise NoMutationError("every position has a single option")
    pos = int(mutable[rng.integers(mutable.size)])
    step = int(rng.integers(1, cards[pos]))
    vec[pos] = (vec[pos] + step) % int(cards[pos])
    return space.encode(vec)


def hamming(a: Sequence[int], b: Sequence[int]) -> int:
    return int(np.sum(np.asarray(a) != np.asarray(b)))
