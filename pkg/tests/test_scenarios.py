import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmarkov.cli import dumps_report
from qmarkov.markov import assemble, random_markov_decomposition
from qmarkov.scenarios import (
    EXAMPLE3_VARIANTS,
    ScenarioInputError,
    example1_factorized,
    example2_cq,
    example3_random,
    example4_rho_ae,
    example4_state,
    example4_swap,
    random_localized_channel,
    sweep_weyl,
    trial_seeds,
    witness_search,
)
from qmarkov.states import (
    bell_state,
    maximally_mixed,
    product,
    pure,
    random_density,
)
from qmarkov.tensor_core import SpaceLayout

L = SpaceLayout.of
BELL_BASIS = np.array([[1, 0, 0, 1], [1, 0, 0, -1], [0, 1, 1, 0], [0, 1, -1, 0]]) / np.sqrt(2)


def _orthogonal_omegas(n):
    return [pure(np.eye(n)[i], L(E=n)) for i in range(n)]


def test_trial_seeds_are_stable_and_distinct():
    a = trial_seeds(5, 10)
    assert a == trial_seeds(5, 10)
    assert len(set(a)) == 10
    assert trial_seeds(5, 3) == a[:3]


def test_example1_bell_with_pure_environment():
    rep = example1_factorized(bell_state(), pure([1, 0], L(E=2)), seed=3)
    assert rep.verdicts["markov"]
    assert rep.quantities["max_reduction_check"] <= 1e-8
    assert rep.quantities["cmi"] <= 1e-9
    assert rep.broken_invariants() == []


def test_example1_product_identity_channel():
    from qmarkov.channels import identity_channel

    rho_ab = product(random_density(L(A=2), rng=1), random_density(L(B=2), rng=2))
    omega = maximally_mixed(L(E=2))
    rep = example1_factorized(rho_ab, omega, identity_channel(L(B=2, E=2)), random_channels=2)
    assert rep.quantities["reduction_check"] <= 1e-12
    assert abs(rep.quantities["delta_mi"]) <= 1e-12


def test_example2_bell_basis_is_not_markov():
    rep = example2_cq([0.25] * 4, BELL_BASIS, _orthogonal_omegas(4), 2, 2)
    assert not rep.verdicts["markov"]
    assert rep.quantities["cmi"] > 0.9
    assert rep.verdicts["entangledBasisState"]
    assert rep.broken_invariants() == []


def test_example2_product_basis_labelled_by_b_is_markov():
    # weight only on |00>, |11>: B identifies the branch, so CMI = 0
    rep = example2_cq([0.5, 0, 0, 0.5], np.eye(4), _orthogonal_omegas(4), 2, 2)
    assert rep.verdicts["markov"]


def test_example2_full_product_basis_has_cmi_h_a_given_b():
    # uniform over the computational basis: I(A:E|B) = H(A|B) = 1 bit
    rep = example2_cq([0.25] * 4, np.eye(4), _orthogonal_omegas(4), 2, 2)
    assert np.isclose(rep.quantities["cmi"], 1.0, atol=1e-12)
    assert not rep.verdicts["markov"]


def test_example2_single_branch_reduces_to_example1():
    rep = example2_cq([1.0, 0, 0, 0], BELL_BASIS, _orthogonal_omegas(4), 2, 2)
    assert rep.verdicts["markov"]


def test_example2_rejects_non_orthonormal():
    with pytest.raises(ScenarioInputError):
        example2_cq([0.5, 0.5], [[1, 0, 0, 0], [1, 0, 0, 0]], _orthogonal_omegas(2), 2, 2)


@pytest.mark.parametrize("variant", EXAMPLE3_VARIANTS)
def test_example3_variants(variant):
    rep = example3_random(variant, seed=4)
    assert rep.verdicts["matchesExpectation"]
    if variant == "double_blocks_unfactorized":
        assert rep.quantities["cmi"] > 1e-3
    else:
        assert rep.quantities["cmi"] <= 1e-9


def test_example3_bad_variant():
    with pytest.raises(ScenarioInputError):
        example3_random("bogus")


def test_example4_bell_anchor():
    rep = example4_swap(maximally_mixed(L(B=2)), example4_rho_ae("bell"))
    q = rep.quantities
    assert abs(q["mi_before"]) <= 1e-12
    assert abs(q["mi_after"] - 2) <= 1e-9
    assert abs(q["delta_mi"] - 2) <= 1e-9
    assert q["swap_identity_residual"] <= 1e-10
    assert not rep.verdicts["localizedReduction"]


def test_example4_classical_gains_one_bit():
    rep = example4_swap(maximally_mixed(L(B=2)), example4_rho_ae("classical"))
    assert abs(rep.quantities["delta_mi"] - 1) <= 1e-9
    assert not rep.verdicts["localizedReduction"]


def test_example4_product_is_markov_and_local():
    rep = example4_swap(random_density(L(B=2), rng=2), example4_rho_ae("product", seed=3))
    assert rep.verdicts["markov"] and rep.verdicts["localizedReduction"]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 3))
def test_example4_swap_identity_for_all_inputs(seed, d_a, d):
    g = np.random.default_rng(seed)
    rho_ae = random_density(L(A=d_a, E=d), rng=g)
    rep = example4_swap(random_density(L(B=d), rng=g), rho_ae)
    assert rep.quantities["swap_identity_residual"] <= 1e-10


def test_example4_dimension_mismatch():
    with pytest.raises(ScenarioInputError):
        example4_swap(maximally_mixed(L(B=3)), example4_rho_ae("bell"))


def test_witness_on_markov_state_is_inconclusive():
    rho = assemble(random_markov_decomposition(2, 2, 2, 2, rng=1))
    rep = witness_search(rho, 10, seed=2)
    assert not rep.verdicts["witnessFound"]
    assert rep.inputs["conclusion"] == "inconclusive"
    assert rep.quantities["max_delta_mi"] <= 1e-9


def test_witness_on_bell_example():
    rho = example4_state(maximally_mixed(L(B=2)), bell_state(("A", "E")))
    rep = witness_search(rho, 5, seed=0)
    assert rep.verdicts["witnessFound"]
    assert rep.quantities["max_delta_mi"] >= 2 - 1e-9
    assert rep.quantities["best_channel_seed"] == -1


def test_witness_on_full_product():
    rho = product(*(random_density(L(**{x: 2}), rng=i) for i, x in enumerate("ABE")))
    assert not witness_search(rho, 10, seed=1).verdicts["witnessFound"]


def test_witness_equal_dims_only_keeps_dims():
    rho = random_density(L(A=2, B=2, E=3), rng=0)
    rep = witness_search(rho, 5, seed=0, equal_dims_only=True)
    assert "swap_delta_mi" not in rep.quantities
    assert rep.inputs["equal_dims_only"]


def test_reports_are_reproducible():
    rho = random_density(L(A=2, B=2, E=2), rng=9)
    a = dumps_report(witness_search(rho, 8, seed=5))
    b = dumps_report(witness_search(rho, 8, seed=5))
    assert a == b


def test_random_localized_channel_growing():
    ch = random_localized_channel(2, 2, 0, 4)
    assert ch.out_layout == L(B=4, E=2)
    assert ch.completeness_residual() <= 1e-10


def test_weyl_sweep():
    rep = sweep_weyl()
    assert rep.verdicts["orthogonality"] and rep.verdicts["paulisUpToPhase"]
