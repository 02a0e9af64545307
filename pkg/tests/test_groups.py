import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgnn.groups import (
    SPATIAL_KINDS,
    ClosureExceeded,
    FiniteGroup,
    NonInvertibleGenerator,
    NonSquareSpatial,
    SpatialAction,
    close_generators,
    dihedral_group,
    flip_group,
    group_from_json,
    klein_group,
    load_group,
    verify_axioms,
)


def brute_compose(a, b):
    # reference composition: apply b then a to a probe and look the result up
    probe = np.arange(25).reshape(1, 5, 5)
    img = a.apply(b.apply(probe))
    for kind in SPATIAL_KINDS:
        if np.array_equal(SpatialAction(kind).apply(probe), img):
            return kind


def test_flip_closes_to_order_two():
    g = flip_group()
    assert g.order == 2
    assert [e.action.kind for e in g] == ["identity", "flip-h"]


def test_rot_flip_closes_to_d8():
    g = dihedral_group()
    assert g.order == 8
    assert sorted(e.action.kind for e in g) == sorted(SPATIAL_KINDS)


def test_klein_cayley_table():
    g = klein_group()
    assert g.order == 4
    # oracle: compose actions on a probe directly
    kinds = [e.action.kind for e in g]
    for i, a in enumerate(kinds):
        for j, b in enumerate(kinds):
            assert kinds[g.cayley[i, j]] == brute_compose(SpatialAction(a), SpatialAction(b))
    # every element is its own inverse, and the table is symmetric
    assert (np.diag(g.cayley) == 0).all()
    assert (g.cayley == g.cayley.T).all()


def test_cayley_matches_brute_force_on_d8(d8):
    kinds = [e.action.kind for e in d8]
    for i, a in enumerate(kinds):
        for j, b in enumerate(kinds):
            assert kinds[d8.cayley[i, j]] == brute_compose(SpatialAction(a), SpatialAction(b))


def test_multiply_examples(d8):
    e = d8.identity
    for g in d8:
        assert d8.multiply(e, g) == g
        assert d8.multiply(g, e) == g
        assert d8.multiply(g, d8.inverse(g)) == e
    r = d8.find("rot90")
    assert d8.multiply(r, r) == d8.find("rot180")


def test_inverse_examples(d8):
    assert d8.inverse(d8.identity) == d8.identity
    assert d8.inverse(d8.find("flip-h")) == d8.find("flip-h")
    assert d8.inverse(d8.find("rot90")) == d8.find("rot270")


def test_slice_permutation_examples(z2, all_groups):
    assert list(z2.slice_permutation(1)) == [1, 0]
    for g in all_groups.values():
        assert list(g.slice_permutation(g.identity)) == list(range(g.order))


@pytest.mark.parametrize("name", ["flip", "klein", "d8"])
def test_slice_permutation_composition_all_pairs(all_groups, name):
    g = all_groups[name]
    perms = g.slice_perms
    for h in range(g.order):
        for s in range(g.order):
            # applying R_s then R_h gathers perms[s][perms[h]]
            assert list(perms[s][perms[h]]) == list(perms[g.cayley[h, s]])


def test_element_m_is_one_based(d8):
    assert [e.m for e in d8] == list(range(1, 9))


@pytest.mark.parametrize("name", ["trivial", "flip", "klein", "d8"])
def test_verify_axioms_passes(all_groups, name):
    rep = verify_axioms(all_groups[name])
    assert rep.passed, rep.format()


def test_verify_axioms_counts_d8(d8):
    rep = verify_axioms(d8)
    assert rep["associativity"].evaluated == 512
    assert rep.order == 8


def test_corrupted_table_is_reported(d8):
    table = d8.cayley.copy()
    table[3, 5] = (table[3, 5] + 1) % 8
    bad = FiniteGroup(d8.elements, table, d8.inverses.copy(), d8.generators)
    rep = verify_axioms(bad)
    assert not rep.passed
    assert not (rep["closure"].passed and rep["associativity"].passed)


def test_corrupted_out_of_range_entry(d8):
    table = d8.cayley.copy()
    table[0, 0] = 99
    rep = verify_axioms(FiniteGroup(d8.elements, table, d8.inverses.copy()))
    assert not rep.passed
    assert "FAIL closure" in rep.format()


def test_non_invertible_generator():
    with pytest.raises(NonInvertibleGenerator):
        close_generators([SpatialAction("flip-h", (0, 0))])


def test_closure_exceeded():
    with pytest.raises(ClosureExceeded):
        close_generators([SpatialAction("rot90"), SpatialAction("flip-h")], max_order=4)


def test_closure_is_deterministic():
    a, b = dihedral_group(), dihedral_group()
    assert [e.action for e in a] == [e.action for e in b]
    assert np.array_equal(a.cayley, b.cayley)


def test_channel_permutation_generator():
    # flip combined with a channel swap is still an involution
    g = close_generators([SpatialAction("flip-h", (1, 0))])
    assert g.order == 2
    assert verify_axioms(g).passed


def test_tables_are_read_only(d8):
    with pytest.raises(ValueError):
        d8.cayley[0, 0] = 1


def test_group_json_roundtrip(tmp_path, d8):
    path = tmp_path / "g.json"
    path.write_text(json.dumps(d8.to_json()))
    g = load_group(path)
    assert np.array_equal(g.cayley, d8.cayley)
    assert group_from_json("klein").order == 4


def test_rotation_needs_square_input():
    with pytest.raises(NonSquareSpatial):
        SpatialAction("rot90").apply(np.zeros((1, 3, 4)))
    # flips are fine on rectangles
    assert SpatialAction("flip-h").apply(np.zeros((1, 3, 4))).shape == (1, 3, 4)


kinds = st.sampled_from(SPATIAL_KINDS)


@settings(max_examples=60, deadline=None)
@given(kinds, kinds, st.integers(0, 2**31 - 1))
def test_action_is_homomorphism(a, b, seed):
    x = np.random.default_rng(seed).standard_normal((2, 3, 6, 6))
    A, B = SpatialAction(a), SpatialAction(b)
    assert np.array_equal(A.compose(B).apply(x), A.apply(B.apply(x)))
    assert np.array_equal(A.inverse().apply(A.apply(x)), x)
