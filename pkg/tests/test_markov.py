import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmarkov.channels import identity_channel, swap_channel, unitary_channel
from qmarkov.markov import (
    NotLocalEnvMarkov,
    NotMarkov,
    NotTwoSidedMarkov,
    assemble,
    build_local_env,
    build_two_sided,
    check_local_env,
    check_two_sided,
    generated_algebra,
    is_markov,
    local_reduced_product,
    make_decomposition,
    markov_reduced_channel,
    random_local_env,
    random_markov_decomposition,
    recover_structure,
)
from qmarkov.scenarios import example4_state, random_localized_channel
from qmarkov.states import (
    bell_state,
    conditional_mutual_information,
    maximally_mixed,
    product,
    pure,
    random_density,
    random_haar_unitary,
    validate_density,
)
from qmarkov.tensor_core import SpaceLayout, partial_trace, permutation_matrix, trace_distance

seeds = st.integers(0, 2**32 - 1)
L = SpaceLayout.of


def _bell_example():
    return example4_state(maximally_mixed(L(B=2)), bell_state(("A", "E")))


def test_single_block_trivial_right_factor_is_product_with_env():
    rho_ab = random_density(L(A=2, bL=2), rng=0)
    omega = random_density(L(bR=1, E=3), rng=1)
    rho = assemble(make_decomposition(2, 3, [(1.0, rho_ab.matrix, omega.matrix, 2, 1)]))
    assert np.allclose(rho.matrix, np.kron(rho_ab.matrix, omega.matrix))


def test_single_block_trivial_left_factor_gives_full_product():
    a, b, e = (random_density(L(**{x: 2}), rng=i) for i, x in enumerate("ABE"))
    rho = assemble(make_decomposition(2, 2, [(1.0, a.matrix, np.kron(b.matrix, e.matrix), 1, 2)]))
    assert np.allclose(rho.matrix, np.kron(np.kron(a.matrix, b.matrix), e.matrix))


def test_assemble_marginal_is_block_sum():
    d = random_markov_decomposition(2, 2, 2, 2, rng=5)
    rho = assemble(d)
    want = 0
    for blk, w in d.columns():
        rho_bR = partial_trace(blk.rho_bRE.matrix, blk.rho_bRE.layout, ["bR"])
        iso = np.kron(np.eye(2), w)
        want = want + blk.q * iso @ np.kron(blk.rho_AbL.matrix, rho_bR) @ iso.conj().T
    assert np.allclose(rho.marginal(["A", "B"]).matrix, want)


def test_two_qubit_blocks_have_zero_cmi():
    g = np.random.default_rng(2)
    blocks = [(q, random_density(L(A=2, bL=2), rng=g).matrix, random_density(L(bR=2, E=2), rng=g).matrix, 2, 2)
              for q in (0.3, 0.7)]
    rho = assemble(make_decomposition(2, 2, blocks, random_haar_unitary(8, g)))
    assert rho.dim == 32
    assert abs(conditional_mutual_information(rho, "A", "E", "B")) <= 1e-9


def test_decomposition_validation():
    with pytest.raises(ValueError):
        make_decomposition(1, 1, [(0.5, np.eye(1), np.eye(1), 1, 1)])
    with pytest.raises(ValueError):
        make_decomposition(1, 1, [(1.0, np.eye(1), np.eye(1), 1, 1)], embedding=2 * np.eye(1))


def test_is_markov_examples():
    v = is_markov(_bell_example())
    assert not v.markov and np.isclose(v.cmi, 2.0, atol=1e-12)
    p = product(*(random_density(L(**{x: 2}), rng=i) for i, x in enumerate("ABE")))
    v = is_markov(p)
    assert v.markov and abs(v.cmi) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_assembled_states_are_markov(seed):
    v = is_markov(assemble(random_markov_decomposition(2, 2, 2, 2, rng=seed)))
    assert v.markov and v.cmi <= 1e-9 and v.petz_distance <= 1e-7


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(1, 3), st.integers(1, 3))
def test_recover_structure_round_trip(seed, d_a, d_e):
    rho = assemble(random_markov_decomposition(d_a, d_e, 3, 2, rng=seed))
    dec = recover_structure(rho)
    assert trace_distance(assemble(dec).matrix, rho.matrix) <= 1e-7
    assert sum(b.q for b in dec.blocks) == pytest.approx(1, abs=1e-12)


def test_recover_example1_shape_gives_trivial_right_factor():
    rho_ab = random_density(L(A=2, B=3), rng=1)
    omega = random_density(L(E=2), rng=2)
    rho = product(rho_ab, omega)
    dec = recover_structure(rho)
    live = [b for b in dec.blocks if b.q > 0]
    assert all(b.d_bR == 1 for b in live)
    assert trace_distance(assemble(dec).matrix, rho.matrix) <= 1e-9


def test_recover_full_product_with_mixed_middle():
    rho = product(random_density(L(A=2), rng=1), maximally_mixed(L(B=3)), random_density(L(E=2), rng=3))
    dec = recover_structure(rho)
    assert trace_distance(assemble(dec).matrix, rho.matrix) <= 1e-9


def test_recover_rank_deficient_middle_flags_kernel():
    rho = product(random_density(L(A=2), rng=1), pure([1, 0, 0], L(B=3)), random_density(L(E=2), rng=3))
    dec = recover_structure(rho)
    assert any(b.placeholder and b.q == 0 for b in dec.blocks)
    assert trace_distance(assemble(dec).matrix, rho.matrix) <= 1e-9


def test_recover_cq_with_non_orthogonal_conditionals():
    # classical B; conditional A and E states overlap across branches
    g = np.random.default_rng(7)
    m = 0
    for b in range(3):
        proj = np.zeros((3, 3))
        proj[b, b] = 1
        m = m + np.kron(np.kron(random_density(2, rng=g).matrix, proj), random_density(2, rng=g).matrix) / 3
    rho = validate_density(m, L(A=2, B=3, E=2))
    dec = recover_structure(rho)
    assert len([b for b in dec.blocks if b.q > 0]) == 3
    assert trace_distance(assemble(dec).matrix, rho.matrix) <= 1e-9


def test_recover_rejects_non_markov():
    with pytest.raises(NotMarkov):
        recover_structure(_bell_example())


def test_recover_with_grouped_roles():
    # (A E_A) - B - E_B grouping goes through the same code path
    le = random_local_env(rng=3)
    rho = build_local_env(le)
    dec = recover_structure(rho, ["A", "E_A"], "B", ["E_B"])
    ordered = rho.permuted(["A", "E_A", "B", "E_B"])
    assert trace_distance(assemble(dec).matrix, ordered.matrix) <= 1e-8
    assert dec.labels == ("AE_A", "B", "E_B")


def test_generated_algebra_of_diagonal_is_diagonal():
    basis = generated_algebra([np.diag([1.0, 2.0, 3.0])])
    assert basis.shape[0] == 3


def test_generated_algebra_full():
    x = np.array([[0, 1], [1, 0]])
    z = np.diag([1, -1])
    assert generated_algebra([x, z]).shape[0] == 4


def test_reduced_channel_identity():
    d = random_markov_decomposition(2, 2, 2, 2, rng=4)
    be = L(B=d.d_B, E=2)
    eps, check = markov_reduced_channel(d, identity_channel(be))
    rho_b = assemble(d).marginal(["B"]).matrix
    assert np.allclose(eps.apply_matrix(rho_b), rho_b, atol=1e-9)
    assert check <= 1e-9


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_reduced_channel_random_unitary(seed):
    d = random_markov_decomposition(2, 2, 2, 2, rng=seed)
    be = L(B=d.d_B, E=2)
    _, check = markov_reduced_channel(d, unitary_channel(random_haar_unitary(be.total_dim, seed), be))
    assert check <= 1e-8


def test_reduced_channel_swap_on_factorized_state():
    omega = random_density(L(bR=1, E=2), rng=8)
    d = make_decomposition(2, 2, [(1.0, random_density(L(A=2, bL=2), rng=9).matrix, omega.matrix, 2, 1)])
    eps, check = markov_reduced_channel(d, swap_channel(L(B=2, E=2)))
    assert check <= 1e-8
    for s in range(3):
        x = random_density(2, rng=s).matrix
        assert np.allclose(eps.apply_matrix(x), omega.matrix, atol=1e-9)


def test_reduced_channel_growing_output():
    d = random_markov_decomposition(2, 2, 2, 2, rng=11)
    ch = random_localized_channel(d.d_B, 2, 3, 2 * d.d_B)
    eps, check = markov_reduced_channel(d, ch)
    assert eps.out_layout.dim("B") == 2 * d.d_B
    assert check <= 1e-8


# -- two-sided ---------------------------------------------------------------

def test_two_sided_product_is_fully_factorized():
    rho = validate_density(np.kron(random_density(4, rng=1).matrix, random_density(2, rng=2).matrix),
                           L(A=2, B=2, E=2))
    dec = check_two_sided(rho)
    assert dec.fully_factorized
    assert len(dec.p) == 1 and len(dec.q) == 1
    assert dec.residuals["factorization"] <= 1e-10


def test_two_sided_distinct_environments():
    g = np.random.default_rng(3)
    comps = [(0.4, random_density(L(a0=2, b0=1), rng=g), pure([1, 0], L(E=2))),
             (0.6, random_density(L(a1=1, b1=2), rng=g), pure([0, 1], L(E=2)))]
    rho = build_two_sided(comps, a_embedding=random_haar_unitary(3, g),
                          b_embedding=random_haar_unitary(3, g))
    dec = check_two_sided(rho)
    assert not dec.fully_factorized
    assert dec.residuals["reassembly_a_form"] <= 1e-8
    assert dec.residuals["reassembly_b_form"] <= 1e-8
    assert dec.residuals["forms_agree"] <= 1e-8
    assert sum(dec.p) == pytest.approx(1)


def test_two_sided_rejects_one_sided_state():
    # Phi+ on (A, bL) and Phi+ on (bR, E): Markov through B, but I(B:E|A) = 2 bits
    phi = bell_state().matrix
    d = make_decomposition(2, 2, [(1.0, phi, phi, 2, 2)])
    rho = assemble(d)
    assert is_markov(rho).markov
    assert conditional_mutual_information(rho, "B", "E", "A") > 1e-3
    with pytest.raises(NotTwoSidedMarkov):
        check_two_sided(rho)


# -- local environments -------------------------------------------------------

def test_local_env_product_has_single_joint_block():
    states = [random_density(L(**{x: 2}), rng=i) for i, x in enumerate(["A", "E_A", "B", "E_B"])]
    dec = check_local_env(product(*states))
    live = np.argwhere(dec.q > 1e-12)
    assert len(live) == 1


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_local_env_round_trip(seed):
    rho = build_local_env(random_local_env(rng=seed))
    dec = check_local_env(rho)
    assert dec.residuals["reassembly"] <= 1e-8
    assert dec.residuals["marginal"] <= 1e-9
    assert abs(dec.q.sum() - 1) <= 1e-10


def test_local_env_rejects_cross_entanglement():
    # A entangled with E_B breaks the (A E_A) - B - E_B chain
    phi = bell_state(("A", "E_B")).matrix
    rest = np.kron(random_density(2, rng=1).matrix, random_density(2, rng=2).matrix)  # E_A, B
    perm = permutation_matrix((2, 2, 2, 2), [0, 2, 3, 1])   # (A, E_B, E_A, B) -> (A, E_A, B, E_B)
    rho = validate_density(perm @ np.kron(phi, rest) @ perm.conj().T, L(A=2, E_A=2, B=2, E_B=2))
    with pytest.raises(NotLocalEnvMarkov):
        check_local_env(rho)


def test_local_reduced_product_identity_and_swap():
    le = random_local_env(rng=5)
    d_a, d_b = le.a_embedding.shape[0], le.b_embedding.shape[0]
    ida = identity_channel(L(A=d_a, E_A=2))
    idb = identity_channel(L(B=d_b, E_B=2))
    eps_a, eps_b, check = local_reduced_product(le, ida, idb)
    assert check <= 1e-9
    rho_ab = build_local_env(le).marginal(["A", "B"]).matrix
    assert np.allclose(np.kron(np.eye(d_a), np.eye(d_b)) @ rho_ab, rho_ab)
    if d_b == 2:
        _, _, check = local_reduced_product(le, ida, swap_channel(L(B=2, E_B=2)))
        assert check <= 1e-8


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_local_reduced_product_random_channels(seed):
    g = np.random.default_rng(seed)
    le = random_local_env(rng=g)
    d_a, d_b = le.a_embedding.shape[0], le.b_embedding.shape[0]
    ch_a = random_localized_channel(d_a, 2, g, labels=("A", "E_A"))
    ch_b = random_localized_channel(d_b, 2, g, labels=("B", "E_B"))
    assert local_reduced_product(le, ch_a, ch_b)[2] <= 1e-8
