import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmarkov.channels import (
    NotTracePreserving,
    ShapeMismatch,
    apply,
    compose,
    factor_out_identity,
    identity_channel,
    lift_localized,
    swap_channel,
    tensor_channels,
    trace_out_channel,
    unitary_channel,
    validate_channel,
)
from qmarkov.states import (
    LayoutMismatch,
    bell_state,
    maximally_mixed,
    product,
    random_cptp,
    random_density,
    random_haar_unitary,
)
from qmarkov.tensor_core import LayoutError, SpaceLayout, partial_trace

seeds = st.integers(0, 2**32 - 1)


def test_validate_channel_rejects_non_tp():
    lay = SpaceLayout.of(A=2)
    with pytest.raises(NotTracePreserving):
        validate_channel([0.5 * np.eye(2)], lay, lay)
    with pytest.raises(ShapeMismatch):
        validate_channel([np.eye(3)], lay, lay)


def test_amplitude_damping_fixed_point():
    g = 0.3
    k0 = np.array([[1, 0], [0, np.sqrt(1 - g)]])
    k1 = np.array([[0, np.sqrt(g)], [0, 0]])
    lay = SpaceLayout.of(A=2)
    ch = validate_channel([k0, k1], lay, lay)
    out = apply(ch, maximally_mixed(lay))
    assert np.allclose(out.matrix, np.diag([0.5 + g / 2, 0.5 - g / 2]))


def test_apply_checks_layout():
    ch = identity_channel(SpaceLayout.of(A=2))
    with pytest.raises(LayoutMismatch):
        apply(ch, maximally_mixed(SpaceLayout.of(B=2)))


def test_swap_exchanges_contents():
    lay = SpaceLayout.of(B=2, E=2)
    rho = product(random_density(SpaceLayout.of(B=2), rng=1), random_density(SpaceLayout.of(E=2), rng=2))
    out = apply(swap_channel(lay), rho)
    assert np.allclose(out.marginal(["B"]).matrix, rho.marginal(["E"]).matrix)
    with pytest.raises(LayoutError):
        swap_channel(SpaceLayout.of(B=2, E=3))


def test_trace_out_channel_equals_partial_trace():
    lay = SpaceLayout.of(A=2, B=3, E=2)
    rho = random_density(lay, rng=4)
    ch = trace_out_channel(lay, ["B"])
    assert np.allclose(ch.apply_matrix(rho.matrix), partial_trace(rho.matrix, lay, ["A", "E"]))
    assert ch.out_layout.labels == ("A", "E")


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_compose_matches_sequential_application(seed):
    g = np.random.default_rng(seed)
    lay = SpaceLayout.of(S=3)
    f = random_cptp(3, 3, 2, g, lay, lay)
    h = random_cptp(3, 3, 3, g, lay, lay)
    rho = random_density(lay, rng=g)
    both = compose(h, f)
    assert np.allclose(both.apply_matrix(rho.matrix), h.apply_matrix(f.apply_matrix(rho.matrix)))
    assert both.completeness_residual() <= 1e-9


def test_compose_checks_layouts():
    with pytest.raises(LayoutMismatch):
        compose(identity_channel(SpaceLayout.of(A=2)), identity_channel(SpaceLayout.of(B=2)))


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_lift_acts_locally(seed):
    # (id_A (x) F_BE) on rho_A (x) rho_BE gives rho_A (x) F(rho_BE)
    g = np.random.default_rng(seed)
    be = SpaceLayout.of(B=2, E=2)
    f = random_cptp(4, 4, 2, g, be, be)
    rho_a = random_density(SpaceLayout.of(A=3), rng=g)
    rho_be = random_density(be, rng=g)
    full = product(rho_a, rho_be)
    lifted = lift_localized(f, full.layout)
    assert np.allclose(lifted.apply_matrix(full.matrix),
                       np.kron(rho_a.matrix, f.apply_matrix(rho_be.matrix)))


def test_lift_on_middle_factor_with_growing_output():
    lay = SpaceLayout.of(A=2, B=2, E=2)
    f = random_cptp(2, 4, 2, 0, SpaceLayout.of(B=2), SpaceLayout.of(B=4))
    lifted = lift_localized(f, lay)
    assert lifted.out_layout == SpaceLayout.of(A=2, B=4, E=2)
    rho = product(*(random_density(SpaceLayout.of(**{l: 2}), rng=i) for i, l in enumerate("ABE")))
    out = lifted.apply_matrix(rho.matrix)
    pa = partial_trace(out, lifted.out_layout, ["B"])
    assert np.allclose(pa, f.apply_matrix(rho.marginal(["B"]).matrix))


def test_lift_rejects_unknown_label():
    f = identity_channel(SpaceLayout.of(Z=2))
    with pytest.raises(LayoutError):
        lift_localized(f, SpaceLayout.of(A=2))


def test_tensor_channels():
    a = unitary_channel(random_haar_unitary(2, 1), SpaceLayout.of(A=2))
    b = unitary_channel(random_haar_unitary(2, 2), SpaceLayout.of(B=2))
    ab = tensor_channels(a, b)
    rho = bell_state()
    assert np.allclose(ab.apply_matrix(rho.matrix),
                       lift_localized(b, rho.layout).apply_matrix(
                           lift_localized(a, rho.layout).apply_matrix(rho.matrix)))


def test_factor_out_identity():
    e = np.arange(9).reshape(3, 3) + 1j
    got, res = factor_out_identity(np.kron(np.eye(2), e), 2)
    assert np.allclose(got, e) and res <= 1e-12
    x = np.kron(np.diag([1, 0]), e)
    none, res = factor_out_identity(x, 2, tol=1e-8)
    assert none is None and res > 1


def test_factor_out_identity_residual_is_distance():
    # the residual equals the norm of the traceless-on-A part
    g = np.random.default_rng(0)
    y = g.standard_normal((2, 2))
    x = np.kron(np.diag([1.0, -1.0]), y)
    _, res = factor_out_identity(x, 2)
    assert np.isclose(res, np.linalg.norm(x))
