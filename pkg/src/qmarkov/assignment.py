"""Assignment maps ``rho_AB -> rho_ABE`` and the direct-reduction test.

A localized dynamics ``id_A (x) F_BE`` *directly* reduces when every contracted
operator ``X_jkl = <k_E| (I_A (x) f_j) R_l`` has the form ``I_A (x) e_jkl``.
:func:`direct_reduction` computes those operators for a given assignment map
and channel, tests the factorization, and expands each ``R_l`` over a unitary
operator basis on ``A`` to expose the off-identity part responsible for any
failure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .channels import (
    KrausChannel,
    factor_out_identity,
    lift_localized,
    unitary_channel,
    validate_channel,
)
from .states import DensityMatrix, LayoutMismatch, StateError, validate_density
from .tensor_core import (
    SUPPORT_CUTOFF,
    SpaceLayout,
    frobenius,
    partial_trace,
    permutation_matrix,
    psd_pinv_sqrt,
    psd_sqrt,
    support_projector,
    trace_distance,
    weyl_basis,
)

CONSISTENCY_TOL = 1e-8
SUPPORT_WEIGHT_TOL = 1e-9
DEFAULT_TOLERANCE = 1e-8


class SupportMismatch(StateError):
    """Input carries weight outside the support the assignment map was built for."""


@dataclass(frozen=True)
class AssignmentMap:
    """CPTP map from ``source`` to ``target`` adding environment factor(s).

    ``support`` is the projector (on the ``support_labels`` factors of the input)
    inside which the map is guaranteed to reproduce ``target``-style extensions.
    """

    channel: KrausChannel
    source: DensityMatrix
    target: DensityMatrix
    support: Optional[np.ndarray] = None
    support_labels: tuple = ()

    def apply(self, rho: DensityMatrix) -> DensityMatrix:
        if rho.layout != self.channel.in_layout:
            raise LayoutMismatch(
                f"state layout {rho.layout.factors} != {self.channel.in_layout.factors}")
        if self.support is not None:
            marg = partial_trace(rho.matrix, rho.layout, self.support_labels)
            outside = float(np.trace(marg).real - np.trace(self.support @ marg).real)
            if outside > SUPPORT_WEIGHT_TOL:
                raise SupportMismatch(
                    f"input has weight {outside:.3e} outside the support of the "
                    f"{''.join(self.support_labels)} marginal used to build the map")
        return validate_density(self.channel.apply_matrix(rho.matrix), self.channel.out_layout)


def _assignment(channel: KrausChannel, source: DensityMatrix, support=None,
                support_labels=()) -> AssignmentMap:
    target = validate_density(channel.apply_matrix(source.matrix), channel.out_layout)
    keep = source.layout.labels
    back = partial_trace(target.matrix, target.layout, keep)
    gap = trace_distance(back, source.matrix)
    if gap > CONSISTENCY_TOL:
        raise LayoutMismatch(f"assignment output marginal differs from its input by {gap:.3e}")
    return AssignmentMap(channel, source, target, support, tuple(support_labels))


def _ket(d: int, i: int) -> np.ndarray:
    v = np.zeros((d, 1))
    v[i, 0] = 1.0
    return v


def xi_embed(rho: DensityMatrix, env_dim: int, env_state_index: int = 0,
             env_label: str = "E") -> AssignmentMap:
    """Attach a fixed pure environment: single Kraus ``I (x) |i_E>``."""
    if not 0 <= env_state_index < env_dim:
        raise ValueError(f"env_state_index {env_state_index} outside [0, {env_dim})")
    r = np.kron(np.eye(rho.dim), _ket(env_dim, env_state_index))
    out = SpaceLayout(rho.layout.factors + ((env_label, env_dim),))
    return _assignment(validate_channel([r], rho.layout, out), rho)


def petz_kraus(tau: np.ndarray, d_sys: int, d_env: int):
    """Kraus family of the Petz map rebuilding ``tau`` (on sys (x) env) from its sys marginal.

    ``K_i = tau^(1/2) (sigma^(-1/2) (x) |i>)`` plus one completion operator on the
    kernel of ``sigma``. Returns ``(kraus, support_projector_of_sigma)``.
    """
    sigma = np.einsum("ajbj->ab", tau.reshape(d_sys, d_env, d_sys, d_env))
    root = psd_sqrt(tau)
    inv = psd_pinv_sqrt(sigma)
    kraus = [root @ np.kron(inv, _ket(d_env, i)) for i in range(d_env)]
    proj = support_projector(sigma)
    rest = np.eye(d_sys) - proj
    if np.max(np.abs(rest)) > SUPPORT_CUTOFF:
        kraus.append(np.kron(rest, _ket(d_env, 0)))
    return kraus, proj


def petz_assignment(rho: DensityMatrix, env: Sequence[str] = ("E",)) -> AssignmentMap:
    """Petz recovery map from the non-``env`` marginal of ``rho`` back to ``rho``.

    With ``rho = rho_BE`` this is the map ``B -> BE``; it is exact on
    ``rho_B`` and, applied as ``id_A (x) Petz``, on every Markov state.
    """
    env = [env] if isinstance(env, str) else list(env)
    sys = [l for l in rho.layout.labels if l not in env]
    ordered = rho.permuted(sys + env)
    d_sys = ordered.layout.sub(sys).total_dim
    d_env = ordered.layout.sub(env).total_dim
    kraus, proj = petz_kraus(ordered.matrix, d_sys, d_env)
    source = ordered.marginal(sys)
    ch = validate_channel(kraus, source.layout, ordered.layout)
    return _assignment(ch, source, proj, sys)


def replacement_assignment(rho: DensityMatrix, env: Sequence[str] = ("E",)) -> AssignmentMap:
    """Assignment ``X -> Tr(X) rho``: valid for any state, ignores its input entirely."""
    env = [env] if isinstance(env, str) else list(env)
    sys = [l for l in rho.layout.labels if l not in env]
    ordered = rho.permuted(sys + env)
    source = ordered.marginal(sys)
    w, v = np.linalg.eigh(ordered.matrix)
    kraus = []
    for lam, vec in zip(w, v.T):
        if lam > SUPPORT_CUTOFF:
            for i in range(source.dim):
                kraus.append(np.sqrt(lam) * np.outer(vec, _ket(source.dim, i)))
    ch = validate_channel(kraus, source.layout, ordered.layout)
    return _assignment(ch, source)


def block_assignment(embedding: np.ndarray, block_dims: Sequence[tuple[int, int]],
                     env_states: Sequence[np.ndarray], d_env: int, env_side: str = "right",
                     in_label: str = "B", env_label: str = "E") -> KrausChannel:
    """``oplus_k id_{L_k} (x) Petz_{R_k}`` (or ``Petz_{L_k} (x) id_{R_k}`` for ``env_side="left"``).

    ``embedding`` maps ``oplus_k H_{L_k} (x) H_{R_k}`` onto the input space, columns
    in block order. ``env_states[k]`` is the state of the factor the environment
    attaches to, tensored with the environment (side factor first).
    """
    d = embedding.shape[0]
    kraus = []
    covered = np.zeros((d, d), dtype=np.complex128)
    col = 0
    for (dl, dr), tau in zip(block_dims, env_states):
        w = embedding[:, col:col + dl * dr]
        col += dl * dr
        if env_side == "right":
            ks, proj = petz_kraus(tau, dr, d_env)
            lifted = [np.kron(np.eye(dl), k) for k in ks]
            support = np.kron(np.eye(dl), proj)
        elif env_side == "left":
            ks, proj = petz_kraus(tau, dl, d_env)
            # (L, E, R) -> (L, R, E)
            p = permutation_matrix((dl, d_env, dr), [0, 2, 1])
            lifted = [p @ np.kron(k, np.eye(dr)) for k in ks]
            support = np.kron(proj, np.eye(dr))
        else:
            raise ValueError(f"env_side must be 'left' or 'right', got {env_side!r}")
        wide = np.kron(w, np.eye(d_env))
        kraus.extend(wide @ k @ w.conj().T for k in lifted)
        covered += w @ support @ w.conj().T
    rest = np.eye(d) - covered
    if np.max(np.abs(rest)) > 1e-10:
        kraus.append(np.kron(rest, _ket(d_env, 0)))
    layout_in = SpaceLayout(((in_label, d),))
    layout_out = SpaceLayout(((in_label, d), (env_label, d_env)))
    return validate_channel(kraus, layout_in, layout_out)


def localized_assignment_from_markov(decomp) -> AssignmentMap:
    """``id_A (x) Lambda_B`` built block-wise from a :class:`MarkovDecomposition`."""
    from .markov import assemble

    a, b, e = decomp.labels
    lam_b = markov_b_assignment(decomp)
    target = assemble(decomp)
    source = target.marginal([a, b])
    lifted = lift_localized(lam_b, source.layout)
    return _assignment(lifted, source)


def markov_b_assignment(decomp) -> KrausChannel:
    """The ``Lambda_B : B -> B (x) E`` part of a Markov decomposition's assignment."""
    a, b, e = decomp.labels
    states = [blk.rho_bRE.matrix for blk in decomp.blocks]
    dims = [(blk.d_bL, blk.d_bR) for blk in decomp.blocks]
    return block_assignment(decomp.embedding, dims, states, decomp.d_E, "right", b, e)


# -- direct reduction -------------------------------------------------------

@dataclass
class DirectReductionReport:
    x_operators: dict
    residuals: dict
    max_residual: float
    verdict: bool
    extracted_kraus: Optional[dict]
    basis_coefficients: list
    off_identity_mass: list = field(default_factory=list)
    completeness_residual: float = 0.0
    reconstruction_residual: float = 0.0

    @property
    def total_off_identity_mass(self) -> float:
        return float(sum(self.off_identity_mass))


def basis_coefficients(r: np.ndarray, d_a: int) -> list[np.ndarray]:
    """``B_m = Tr_A[(A_m^dag (x) I) r] / d_A`` over the Weyl basis on the leading factor."""
    basis = weyl_basis(d_a)
    rows, cols = r.shape
    t = r.reshape(d_a, rows // d_a, d_a, cols // d_a)
    return [np.einsum("ab,aibj->ij", a.conj(), t) / d_a for a in basis.elements]


def direct_reduction(assign: AssignmentMap, ch: KrausChannel, d_a: int | None = None,
                     tolerance: float = DEFAULT_TOLERANCE, system_label: str = "A",
                     env_label: str = "E") -> DirectReductionReport:
    """Build every ``X_jkl`` and test whether each is ``I_A (x) e_jkl``.

    ``ch`` must already be lifted to the assignment's output layout and leave
    ``system_label`` (the leading factor) untouched.
    """
    r_layout = assign.channel.out_layout
    if ch.in_layout != r_layout:
        raise LayoutMismatch(
            f"channel input {ch.in_layout.factors} != assignment output {r_layout.factors}")
    for lay in (assign.channel.in_layout, r_layout, ch.out_layout):
        if lay.labels[0] != system_label:
            raise LayoutMismatch(f"{system_label!r} must be the leading factor of {lay.labels}")
    d_a = d_a or r_layout.dim(system_label)

    out = ch.out_layout
    order = [l for l in out.labels if l != env_label] + [env_label]
    perm = permutation_matrix(out.dims, [out.index(l) for l in order])
    d_env = out.dim(env_label)
    d_rest = out.total_dim // d_env
    d_in = assign.channel.d_in

    xs, residuals, extracted = {}, {}, {}
    completeness = np.zeros((d_in, d_in), dtype=np.complex128)
    for j, f in enumerate(ch.kraus):
        for l, r in enumerate(assign.channel.kraus):
            n = (perm @ f @ r).reshape(d_rest, d_env, d_in)
            for k in range(d_env):
                x = n[:, k, :]
                xs[j, k, l] = x
                completeness += x.conj().T @ x
                e, res = factor_out_identity(x, d_a)
                residuals[j, k, l] = res
                extracted[j, k, l] = e
    max_res = max(residuals.values())
    verdict = max_res <= tolerance

    basis = weyl_basis(d_a)
    coeffs, masses, recon = [], [], 0.0
    for r in assign.channel.kraus:
        bs = basis_coefficients(r, d_a)
        coeffs.append(bs)
        masses.append(float(sum(frobenius(b) for b in bs[1:])))
        rebuilt = sum(np.kron(a, b) for a, b in zip(basis.elements, bs))
        recon = max(recon, frobenius(rebuilt - r))

    return DirectReductionReport(
        x_operators=xs,
        residuals=residuals,
        max_residual=float(max_res),
        verdict=bool(verdict),
        extracted_kraus=extracted if verdict else None,
        basis_coefficients=coeffs,
        off_identity_mass=masses,
        completeness_residual=float(np.max(np.abs(completeness - np.eye(d_in)))),
        reconstruction_residual=float(recon),
    )


def tomographic_channel_family(layout: SpaceLayout, env_label: str = "E") -> list[KrausChannel]:
    """Identity plus every non-identity Weyl conjugation on the environment factor.

    Channels act on ``layout`` (identity elsewhere); there are ``d_E**2`` of them.
    """
    d_env = layout.dim(env_label)
    env_layout = SpaceLayout(((env_label, d_env),))
    return [lift_localized(unitary_channel(u, env_layout), layout)
            for u in weyl_basis(d_env).elements]
