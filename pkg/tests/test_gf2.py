import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardgap import gf2
from hardgap.ca_core import named_rule, neighbourhood_indices
from hardgap.data import HiddenSet, generate_dataset, hidden_mask

R150 = named_rule("150")


def test_affine_bit_xor_and_eval():
    a = gf2.AffineBit(1, frozenset({0, 2}))
    b = gf2.AffineBit(0, frozenset({2, 3}))
    c = a ^ b
    assert c == gf2.AffineBit(1, frozenset({0, 3}))
    assert c.evaluate([1, 0, 0, 1]) == 1


def test_synthetic_three_unknown_system():
    sys_ = gf2.ConstraintSystem.from_equations(3, [({0, 1}, 1), ({1, 2}, 0), ({0, 2}, 1)])
    res = gf2.solve(sys_)
    assert res.rank == 2 and res.consistent and not res.identifiable and res.solution is None
    assert len(gf2.brute_force(sys_)) == 2


def test_zero_unknowns_identifiable():
    res = gf2.solve(gf2.ConstraintSystem.from_equations(0, []))
    assert res.identifiable and res.solution.size == 0


def test_inconsistent_system_reported():
    res = gf2.solve(gf2.ConstraintSystem.from_equations(2, [({0}, 1), ({0}, 0), ({1}, 1)]))
    assert not res.consistent and not res.identifiable


def test_from_equations_range_check():
    with pytest.raises(ValueError):
        gf2.ConstraintSystem.from_equations(2, [({2}, 1)])


def test_nonlinear_rule_rejected():
    ds = generate_dataset(named_rule("30"), HiddenSet(1, (2,)), width=11, n_samples=1, seed=0)
    with pytest.raises(ValueError):
        gf2.build_system(ds.states[0], named_rule("30"), ds.hidden_mask()[0])


def test_timesteps_one_no_equations():
    ds = generate_dataset(R150, HiddenSet(1, (2,)), width=101, timesteps=1, n_samples=5, seed=0)
    for i in range(5):
        s = gf2.sample_system(ds.states[i], R150, ds.hidden)
        assert s.n_equations == 0
        assert s.n_unknowns == int((~ds.visibility[i, 0]).sum())


def test_no_hidden_occurrence_trivially_identifiable():
    states = np.zeros((3, 11), dtype=np.uint8)
    s = gf2.sample_system(states, R150, HiddenSet(1, (2,)))
    assert s.n_unknowns == 0 and gf2.solve(s).identifiable


def _small_cases(seed, w, t, hidden):
    rng = np.random.default_rng(seed)
    row = rng.integers(0, 2, size=w, dtype=np.uint8)
    from hardgap.ca_core import evolve

    states = evolve(row, R150, t)
    return states, hidden_mask(states, HiddenSet(1, hidden))


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), w=st.integers(3, 12), t=st.integers(1, 4),
       hidden=st.sampled_from([(2,), (5,), (0, 7), (1, 2, 4)]))
def test_brute_force_equivalence(seed, w, t, hidden):
    states, mask = _small_cases(seed, w, t, hidden)
    s = gf2.build_system(states, R150, mask)
    if s.n_unknowns > 12:
        return
    sols = gf2.brute_force(s)
    res = gf2.solve(s)
    assert res.identifiable == (len(sols) == 1)
    truth = states[1, s.unknown_positions]
    assert any(np.array_equal(x, truth) for x in sols)  # the true cells always satisfy the system
    if res.identifiable:
        assert np.array_equal(res.solution, sols[0])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_rank_monotone_in_timesteps(seed):
    states, mask = _small_cases(seed, 31, 4, (2,))
    ranks = [gf2.solve(gf2.build_system(states[: t + 1], R150, mask[:t])).rank for t in range(1, 5)]
    assert ranks == sorted(ranks)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_repeated_pattern_same_value(seed):
    states, mask = _small_cases(seed, 61, 3, (2, 5))
    s = gf2.build_system(states, R150, mask)
    res = gf2.solve(s)
    if res.identifiable:
        pats = neighbourhood_indices(states[0], 1)[s.unknown_positions]
        for p in (2, 5):
            vals = res.solution[pats == p]
            assert vals.size == 0 or vals.min() == vals.max()


def test_sweep_small_and_csv(tmp_path):
    rows = gf2.identifiability_sweep(width=101, n_samples=100, seed=3)
    assert [r["timesteps"] for r in rows] == [1, 2, 3, 4]
    assert rows[0]["pct_identifiable"] == 0.0
    assert all(r["pct_identifiable"] == 100.0 for r in rows[1:])
    assert all(r["wrong_solutions"] == 0 for r in rows)
    gf2.write_sweep_csv(tmp_path / "s.csv", rows)
    head = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert head == "timesteps,pct_identifiable,mean_unknowns,mean_constraints,mean_rank"
    with pytest.raises(ValueError):
        gf2.identifiability_sweep(timesteps_list=(0, 1), n_samples=2)
