"""Kraus-form CPTP maps between layouts, including dimension-changing ones."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .states import DensityMatrix, LayoutMismatch, validate_density
from .tensor_core import (
    LayoutError,
    SpaceLayout,
    as_matrix,
    frobenius,
    permutation_matrix,
)

COMPLETENESS_TOL = 1e-10
COMPOSED_COMPLETENESS_TOL = 1e-9


class ChannelError(ValueError):
    pass


class ShapeMismatch(ChannelError):
    pass


class NotTracePreserving(ChannelError):
    pass


@dataclass(frozen=True)
class KrausChannel:
    kraus: tuple[np.ndarray, ...]
    in_layout: SpaceLayout
    out_layout: SpaceLayout

    @property
    def d_in(self) -> int:
        return self.in_layout.total_dim

    @property
    def d_out(self) -> int:
        return self.out_layout.total_dim

    def completeness_residual(self) -> float:
        s = sum(k.conj().T @ k for k in self.kraus)
        return float(np.max(np.abs(s - np.eye(self.d_in))))

    def apply_matrix(self, m: np.ndarray) -> np.ndarray:
        """Kraus sum on a raw operator, with no validation of the result."""
        return sum(k @ m @ k.conj().T for k in self.kraus)


def validate_channel(kraus: Sequence, in_layout: SpaceLayout, out_layout: SpaceLayout,
                     tol: float = COMPLETENESS_TOL) -> KrausChannel:
    ops = [as_matrix(k) for k in kraus]
    if not ops:
        raise ShapeMismatch("a channel needs at least one Kraus operator")
    shape = (out_layout.total_dim, in_layout.total_dim)
    for i, k in enumerate(ops):
        if k.shape != shape:
            raise ShapeMismatch(f"Kraus operator {i} has shape {k.shape}, expected {shape}")
    for k in ops:
        k.setflags(write=False)
    ch = KrausChannel(tuple(ops), in_layout, out_layout)
    res = ch.completeness_residual()
    if res > tol:
        raise NotTracePreserving(f"completeness residual {res:.3e} exceeds {tol:.0e}")
    return ch


def identity_channel(layout: SpaceLayout) -> KrausChannel:
    return validate_channel([np.eye(layout.total_dim)], layout, layout)


def unitary_channel(u, layout: SpaceLayout) -> KrausChannel:
    return validate_channel([u], layout, layout)


def swap_channel(layout: SpaceLayout) -> KrausChannel:
    """Exchange the contents of two equal-dimension factors; labels stay put."""
    if len(layout) != 2 or layout.dims[0] != layout.dims[1]:
        raise LayoutError(f"swap needs two factors of equal dim, got {layout.factors}")
    u = permutation_matrix(layout.dims, [1, 0])
    return unitary_channel(u, layout)


def trace_out_channel(layout: SpaceLayout, discard: Sequence[str]) -> KrausChannel:
    """``Tr_discard`` as a channel with Kraus ``I_keep (x) <k|``, in layout order."""
    discard = list(discard)
    keep = [l for l in layout.labels if l not in discard]
    for l in discard:
        layout.index(l)
    order = keep + discard
    perm = permutation_matrix(layout.dims, [layout.index(l) for l in order])
    dk = layout.sub(keep).total_dim
    dd = layout.sub(discard).total_dim
    kraus = []
    for k in range(dd):
        bra = np.zeros((1, dd))
        bra[0, k] = 1.0
        kraus.append(np.kron(np.eye(dk), bra) @ perm)
    return validate_channel(kraus, layout, layout.sub(keep))


def apply(ch: KrausChannel, rho: DensityMatrix) -> DensityMatrix:
    if rho.layout != ch.in_layout:
        raise LayoutMismatch(
            f"state layout {rho.layout.factors} != channel input {ch.in_layout.factors}")
    return validate_density(ch.apply_matrix(rho.matrix), ch.out_layout)


def compose(second: KrausChannel, first: KrausChannel) -> KrausChannel:
    """``second o first`` with Kraus set ``{g_i f_j}``."""
    if first.out_layout != second.in_layout:
        raise LayoutMismatch(
            f"cannot compose: {first.out_layout.factors} -> {second.in_layout.factors}")
    kraus = [g @ f for g in second.kraus for f in first.kraus]
    return validate_channel(kraus, first.in_layout, second.out_layout,
                            tol=COMPOSED_COMPLETENESS_TOL)


def _lifted_out_layout(full: SpaceLayout, acted_in: SpaceLayout,
                       acted_out: SpaceLayout) -> SpaceLayout:
    # Same factor count: output factors take the input positions one-to-one.
    # Otherwise they are inserted together where the first acted factor was.
    acted = set(acted_in.labels)
    if len(acted_in) == len(acted_out):
        swap = dict(zip(acted_in.labels, acted_out.factors))
        return SpaceLayout(tuple(swap.get(l, (l, d)) for l, d in full))
    out = []
    inserted = False
    for l, d in full:
        if l in acted:
            if not inserted:
                out.extend(acted_out.factors)
                inserted = True
        else:
            out.append((l, d))
    return SpaceLayout(tuple(out))


def lift_localized(ch: KrausChannel, full_layout: SpaceLayout) -> KrausChannel:
    """Extend ``ch`` by identity on every factor of ``full_layout`` it does not touch."""
    for l in ch.in_layout.labels:
        if l not in full_layout.labels:
            raise LayoutError(f"channel factor {l!r} not in {full_layout.labels}")
        if full_layout.dim(l) != ch.in_layout.dim(l):
            raise LayoutError(f"factor {l!r} has dim {full_layout.dim(l)} in the full layout "
                              f"but {ch.in_layout.dim(l)} in the channel")
    spect = [l for l in full_layout.labels if l not in ch.in_layout.labels]
    spect_layout = full_layout.reordered(spect)
    out_layout = _lifted_out_layout(full_layout, ch.in_layout, ch.out_layout)
    clash = set(spect) & set(ch.out_layout.labels)
    if clash:
        raise LayoutError(f"channel output labels {sorted(clash)} collide with spectators")

    in_order = list(ch.in_layout.labels) + spect
    p_in = permutation_matrix(full_layout.dims, [full_layout.index(l) for l in in_order])
    out_order = list(ch.out_layout.labels) + spect
    p_out = permutation_matrix(out_layout.dims, [out_layout.index(l) for l in out_order])
    eye = np.eye(spect_layout.total_dim)
    kraus = [p_out.conj().T @ np.kron(f, eye) @ p_in for f in ch.kraus]
    return validate_channel(kraus, full_layout, out_layout, tol=COMPOSED_COMPLETENESS_TOL)


def tensor_channels(first: KrausChannel, second: KrausChannel) -> KrausChannel:
    """``first (x) second`` on the concatenated layouts."""
    kraus = [np.kron(f, g) for f in first.kraus for g in second.kraus]
    in_layout = SpaceLayout(first.in_layout.factors + second.in_layout.factors)
    out_layout = SpaceLayout(first.out_layout.factors + second.out_layout.factors)
    return validate_channel(kraus, in_layout, out_layout, tol=COMPOSED_COMPLETENESS_TOL)


def relabel_channel(ch: KrausChannel, in_map: dict | None = None,
                    out_map: dict | None = None) -> KrausChannel:
    def ren(layout, mapping):
        mapping = mapping or {}
        return SpaceLayout(tuple((mapping.get(l, l), d) for l, d in layout))
    return KrausChannel(ch.kraus, ren(ch.in_layout, in_map), ren(ch.out_layout, out_map))


def factor_out_identity(x, d_a: int, tol: float | None = None):
    """Closest ``I_A (x) e`` to ``x`` in Frobenius norm.

    Returns ``(e, residual)``; ``e`` is ``None`` when a tolerance is given and the
    residual exceeds it. ``e = Tr_A(x) / d_A`` is the orthogonal projection onto
    the subspace ``{I_A (x) Y}``, so the residual is the exact distance to it.
    """
    x = as_matrix(x)
    r, c = x.shape
    if r % d_a or c % d_a:
        raise ShapeMismatch(f"shape {x.shape} is not divisible by d_A={d_a}")
    t = x.reshape(d_a, r // d_a, d_a, c // d_a)
    e = np.einsum("aiaj->ij", t) / d_a
    residual = frobenius(x - np.kron(np.eye(d_a), e))
    if tol is not None and residual > tol:
        return None, residual
    return e, residual
