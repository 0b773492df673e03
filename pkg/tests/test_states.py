import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmarkov.states import (
    LayoutMismatch,
    NonHermitian,
    NotPSD,
    TraceNotOne,
    bell_state,
    conditional_mutual_information,
    density,
    entropy_report,
    maximally_mixed,
    mutual_information,
    product,
    pure,
    random_cptp,
    random_density,
    random_haar_unitary,
    validate_density,
    von_neumann_entropy,
)
from qmarkov.tensor_core import SpaceLayout

seeds = st.integers(0, 2**32 - 1)


def test_validate_rejects_bad_matrices():
    lay = SpaceLayout.of(A=2)
    with pytest.raises(NonHermitian):
        validate_density([[0.5, 0.1], [0.0, 0.5]], lay)
    with pytest.raises(TraceNotOne, match="0.9"):
        validate_density(np.diag([0.5, 0.4]), lay)
    with pytest.raises(NotPSD):
        validate_density(np.diag([1.5, -0.5]), lay)
    with pytest.raises(LayoutMismatch):
        validate_density(np.eye(3) / 3, lay)


def test_validate_absorbs_tiny_negative_eigenvalue():
    rho = validate_density(np.diag([1 + 1e-12, -1e-12]), SpaceLayout.of(A=2))
    assert np.linalg.eigvalsh(rho.matrix).min() >= 0
    assert np.isclose(np.trace(rho.matrix).real, 1.0, atol=1e-15)


def test_density_matrix_is_read_only():
    rho = maximally_mixed(SpaceLayout.of(A=2))
    with pytest.raises(ValueError):
        rho.matrix[0, 0] = 1


def test_entropy_values():
    assert von_neumann_entropy(pure([1, 0], SpaceLayout.of(A=2))) == 0.0
    assert np.isclose(von_neumann_entropy(maximally_mixed(SpaceLayout.of(A=4))), 2.0)
    rho = density(np.diag([0.25, 0.75]), A=2)
    h = -(0.25 * np.log2(0.25) + 0.75 * np.log2(0.75))
    assert np.isclose(von_neumann_entropy(rho), h)


def test_bell_mutual_information_is_two_bits():
    assert np.isclose(mutual_information(bell_state(), "A", "B"), 2.0, atol=1e-12)


def test_cmi_of_bell_times_mixed_middle():
    # I/2 on B and Phi+ on AE: I(A:E|B) = I(A:E) = 2 bits
    rho = product(maximally_mixed(SpaceLayout.of(B=2)), bell_state(("A", "E")))
    assert np.isclose(conditional_mutual_information(rho, "A", "E", "B"), 2.0, atol=1e-12)


def test_cmi_of_product_is_zero():
    g = np.random.default_rng(0)
    rho = product(*(random_density(SpaceLayout.of(**{l: 2}), rng=g) for l in "ABE"))
    assert abs(conditional_mutual_information(rho, "A", "E", "B")) <= 1e-12


def test_partition_must_cover_layout():
    with pytest.raises(LayoutMismatch):
        mutual_information(bell_state(), "A", "A")
    with pytest.raises(LayoutMismatch):
        conditional_mutual_information(bell_state(), "A", "B", "B")


def test_entropy_report_fields():
    rep = entropy_report(product(maximally_mixed(SpaceLayout.of(B=2)), bell_state(("A", "E"))),
                         "A", "E", condition="B")
    assert np.isclose(rep.conditional_mutual_information, 2.0)
    assert np.isclose(rep.mutual_information, 2.0)
    assert np.isclose(rep.entropies["AE"], 0.0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
def test_strong_subadditivity(seed, da, db, de):
    rho = random_density(SpaceLayout.of(A=da, B=db, E=de), rng=seed)
    assert conditional_mutual_information(rho, "A", "E", "B") >= -1e-10


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(1, 6))
def test_random_density_is_valid_with_requested_rank(seed, d):
    g = np.random.default_rng(seed)
    rank = int(g.integers(1, d + 1))
    rho = random_density(d, rank=rank, rng=g)
    w = np.linalg.eigvalsh(rho.matrix)
    assert np.sum(w > 1e-10) == rank
    assert np.isclose(np.trace(rho.matrix).real, 1)


def test_random_generators_reproducible():
    a = random_density(3, rng=11).matrix
    b = random_density(3, rng=11).matrix
    assert np.array_equal(a, b)
    assert np.array_equal(random_haar_unitary(4, 5), random_haar_unitary(4, 5))


@settings(max_examples=20, deadline=None)
@given(seeds, st.integers(1, 5))
def test_haar_unitary_is_unitary(seed, d):
    u = random_haar_unitary(d, seed)
    assert np.allclose(u.conj().T @ u, np.eye(d), atol=1e-12)


def test_haar_first_moment():
    # E|U_00|^2 = 1/d over the Haar measure
    g = np.random.default_rng(3)
    vals = [abs(random_haar_unitary(3, g)[0, 0]) ** 2 for _ in range(3000)]
    assert abs(np.mean(vals) - 1 / 3) < 0.02


def test_random_cptp_completeness():
    ch = random_cptp(4, 6, 3, rng=2)
    assert ch.completeness_residual() <= 1e-10
    with pytest.raises(ValueError):
        random_cptp(6, 2, 1, rng=0)
