import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bqnes.archspace import (NATS_OPS, CellArchitecture, OrdinalArchitecture, SpaceConfig, canonical_encode, decode,
                             enumerate_space, enumerate_vectors, hamming, mutate, sample_prior)
from bqnes.errors import EnumerationCapError, InvalidArchitectureError, KindError, NoMutationError

NATS = SpaceConfig.cell()


def test_ordinal_round_trip():
    a = OrdinalArchitecture((0, 0, 0))
    assert canonical_encode(a) == "o:0.0.0"
    assert decode("o:0.0.0") == a


def test_cells_differing_in_one_label_get_distinct_ids():
    base = list(NATS_OPS[:1] * 6)
    other = list(base)
    other[3] = NATS_OPS[2]
    e = NATS.edges
    assert canonical_encode(CellArchitecture(4, e, base)) != canonical_encode(CellArchitecture(4, e, other))


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.sampled_from(NATS_OPS), min_size=6, max_size=6))
def test_cell_round_trip_property(labels):
    cell = CellArchitecture(4, NATS.edges, labels)
    arch_id = canonical_encode(cell, NATS)
    assert decode(arch_id) == cell
    assert decode(arch_id).op_labels == tuple(labels)


def test_label_outside_vocabulary_rejected():
    cell = CellArchitecture(4, NATS.edges, ["conv_7x7"] * 6)
    with pytest.raises(InvalidArchitectureError):
        canonical_encode(cell, NATS)
    with pytest.raises(InvalidArchitectureError):
        canonical_encode(CellArchitecture(2, [(0, 1)], ["a,b"]))


def test_backward_edge_rejected():
    with pytest.raises(InvalidArchitectureError):
        CellArchitecture(3, [(2, 1)], ["a"])


def test_sample_prior_degenerate_space():
    sp = SpaceConfig.ordinal(dims=2, levels=1)
    assert sample_prior(sp, 0, 3) == ["o:0.0"] * 3


def test_sample_prior_uniform_levels():
    sp = SpaceConfig.ordinal(dims=1, levels=4)
    draws = sample_prior(sp, 7, 40000)
    freq = np.bincount([sp.vector(a)[0] for a in draws], minlength=4) / 40000
    assert np.all((freq > 0.24) & (freq < 0.26))


def test_sample_prior_deterministic():
    assert sample_prior(NATS, 3, 50) == sample_prior(NATS, 3, 50)
    assert sample_prior(NATS, 3, 50) != sample_prior(NATS, 4, 50)


def test_enumeration_sizes():
    assert len(enumerate_space(SpaceConfig.cell(("a", "b"), node_count=3, edges=[(0, 1), (1, 2)]))) == 4
    ids = enumerate_space(SpaceConfig.ordinal(3, 4))
    assert len(ids) == 64 and ids == sorted(ids) and len(set(ids)) == 64
    nats = enumerate_space(NATS)
    assert len(nats) == 15625 and len(set(nats)) == 15625 and nats == sorted(nats)


def test_enumeration_matches_vectors():
    sp = SpaceConfig.ordinal(2, [2, 3])
    assert [sp.encode(v) for v in enumerate_vectors(sp)] == enumerate_space(sp)


def test_enumeration_cap():
    with pytest.raises(EnumerationCapError):
        enumerate_space(SpaceConfig.ordinal(28, 4))
    with pytest.raises(EnumerationCapError):
        enumerate_space(SpaceConfig.ordinal(3, 4, enumeration_cap=10))


def test_uniform_prior_mass():
    sp = SpaceConfig.ordinal(3, 4)
    assert sp.prior_mass * len(enumerate_space(sp)) == pytest.approx(1.0, abs=1e-15)
    assert NATS.size == 5 ** 6


def test_mutate_only_alternative():
    sp = SpaceConfig.ordinal(1, 2)
    assert mutate(sp, "o:0", 0) == "o:1"
    assert mutate(sp, "o:1", 5) == "o:0"


def test_mutate_single_arch_space():
    with pytest.raises(NoMutationError):
        mutate(SpaceConfig.ordinal(3, 1), "o:0.0.0", 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 15624), st.integers(0, 2**32 - 1))
def test_mutate_hamming_one(idx, seed):
    parent = NATS.encode(np.unravel_index(idx, (5,) * 6))
    child = mutate(NATS, parent, seed)
    assert child != parent
    assert hamming(NATS.vector(parent), NATS.vector(child)) == 1


def test_mutation_coverage():
    parent = NATS.encode([0] * 6)
    rng = np.random.default_rng(0)
    seen = {(p, v) for p in range(6) for v in range(1, 5)}
    for _ in range(10_000):
        vec = NATS.vector(mutate(NATS, parent, rng))
        pos = [i for i, x in enumerate(vec) if x != 0]
        seen.discard((pos[0], vec[pos[0]]))
    assert not seen


def test_kind_mismatch_and_membership():
    sp = SpaceConfig.ordinal(3, 4)
    with pytest.raises(KindError):
        sp.vector(NATS.encode([0] * 6))
    assert not sp.contains("o:0.0.9")
    assert sp.contains("o:0.0.3")
    with pytest.raises(InvalidArchitectureError):
        decode("nonsense")


def test_space_dict_round_trip():
    for sp in (NATS, SpaceConfig.ordinal(5, [2, 3, 4, 5, 6])):
        assert SpaceConfig.from_dict(sp.to_dict()) == sp
