"""Density matrices, von Neumann entropies and random ensembles.

All entropies are in bits. Random generators take ``rng``: anything accepted by
:func:`numpy.random.default_rng` (an int seed or a ``Generator``). The bit
generator is numpy's PCG64, so a given integer seed reproduces outputs exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .tensor_core import (
    HERMITIAN_TOL,
    PSD_TOL,
    SUPPORT_CUTOFF,
    LayoutError,
    SpaceLayout,
    as_matrix,
    partial_trace,
    permute_subsystems,
)

TRACE_TOL = 1e-10


class StateError(ValueError):
    """Base class for invalid density matrices."""


class NonHermitian(StateError):
    pass


class NotPSD(StateError):
    pass


class TraceNotOne(StateError):
    pass


class LayoutMismatch(StateError, LayoutError):
    pass


@dataclass(frozen=True)
class DensityMatrix:
    """A validated state. Build through :func:`validate_density`."""

    matrix: np.ndarray
    layout: SpaceLayout

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.layout.total_dim

    def marginal(self, keep: Iterable[str]) -> "DensityMatrix":
        keep = list(keep)
        return DensityMatrix(partial_trace(self.matrix, self.layout, keep).copy(),
                             self.layout.sub(keep))

    def permuted(self, order) -> "DensityMatrix":
        m, layout = permute_subsystems(self.matrix, self.layout, order)
        return DensityMatrix(m.copy(), layout)

    def relabeled(self, mapping: dict) -> "DensityMatrix":
        layout = SpaceLayout(tuple((mapping.get(l, l), d) for l, d in self.layout))
        return DensityMatrix(self.matrix.copy(), layout)


def validate_density(m, layout: SpaceLayout) -> DensityMatrix:
    """Check Hermiticity, positivity and unit trace, absorbing tiny drift."""
    try:
        m = as_matrix(m)
    except ValueError as exc:
        raise StateError(str(exc)) from None
    if m.shape != (layout.total_dim, layout.total_dim):
        raise LayoutMismatch(
            f"matrix shape {m.shape} does not match layout "
            f"{layout.labels}={layout.dims} (dim {layout.total_dim})")
    asym = float(np.max(np.abs(m - m.conj().T)))
    if asym > HERMITIAN_TOL:
        raise NonHermitian(f"asymmetry {asym:.3e} exceeds {HERMITIAN_TOL:.0e}")
    m = (m + m.conj().T) / 2
    tr = float(np.trace(m).real)
    if abs(tr - 1.0) > TRACE_TOL:
        raise TraceNotOne(f"trace is {tr!r}, expected 1 within {TRACE_TOL:.0e}")
    w, v = np.linalg.eigh(m)
    if w[0] < -PSD_TOL:
        raise NotPSD(f"eigenvalue {w[0]:.6e} below -{PSD_TOL:.0e}")
    if w[0] < 0:
        w = np.clip(w, 0.0, None)
        m = (v * w) @ v.conj().T
        tr = float(np.sum(w))
    m = m / tr
    return DensityMatrix(m, layout)


def density(m, layout: SpaceLayout | None = None, **dims: int) -> DensityMatrix:
    """Shorthand: ``density(m, A=2, B=2)``."""
    if layout is None:
        layout = SpaceLayout.of(**dims) if dims else SpaceLayout.of(S=len(m))
    return validate_density(m, layout)


def pure(vec, layout: SpaceLayout) -> DensityMatrix:
    v = np.asarray(vec, dtype=np.complex128).reshape(-1)
    v = v / np.linalg.norm(v)
    return validate_density(np.outer(v, v.conj()), layout)


def bell_state(labels=("A", "B")) -> DensityMatrix:
    """``|Phi+> = (|00> + |11>)/sqrt(2)``."""
    return pure([1, 0, 0, 1], SpaceLayout(((labels[0], 2), (labels[1], 2))))


def maximally_mixed(layout: SpaceLayout) -> DensityMatrix:
    d = layout.total_dim
    return DensityMatrix(np.eye(d, dtype=np.complex128) / d, layout)


def product(*states: DensityMatrix) -> DensityMatrix:
    factors = tuple(f for s in states for f in s.layout)
    m = np.ones((1, 1), dtype=np.complex128)
    for s in states:
        m = np.kron(m, s.matrix)
    return validate_density(m, SpaceLayout(factors))


def _spectrum_entropy(w: np.ndarray) -> float:
    w = w[w > SUPPORT_CUTOFF]
    return float(-np.sum(w * np.log2(w)))


def entropy_of_matrix(m) -> float:
    m = as_matrix(m)
    return _spectrum_entropy(np.linalg.eigvalsh((m + m.conj().T) / 2))


def von_neumann_entropy(rho: DensityMatrix) -> float:
    return max(entropy_of_matrix(rho.matrix), 0.0)


def _marginal_entropy(rho: DensityMatrix, labels) -> float:
    labels = set(labels)
    if not labels:
        return 0.0
    if labels == set(rho.layout.labels):
        return entropy_of_matrix(rho.matrix)
    return entropy_of_matrix(partial_trace(rho.matrix, rho.layout, labels))


def _as_labels(part) -> set:
    return {part} if isinstance(part, str) else set(part)


def _check_partition(rho: DensityMatrix, *parts) -> None:
    seen = set()
    for p in parts:
        if p & seen:
            raise LayoutMismatch(f"parts overlap on {sorted(p & seen)}")
        seen |= p
    if seen != set(rho.layout.labels):
        raise LayoutMismatch(
            f"parts {[sorted(p) for p in parts]} do not cover layout {rho.layout.labels}")


def mutual_information(rho: DensityMatrix, part1, part2) -> float:
    """``S(1) + S(2) - S(12)`` in bits; ``part1`` and ``part2`` partition the layout."""
    p1, p2 = _as_labels(part1), _as_labels(part2)
    _check_partition(rho, p1, p2)
    return (_marginal_entropy(rho, p1) + _marginal_entropy(rho, p2)
            - _marginal_entropy(rho, p1 | p2))


def conditional_mutual_information(rho: DensityMatrix, a, e, b) -> float:
    """``I(a:e|b) = S(ab) + S(be) - S(b) - S(abe)`` in bits."""
    a, e, b = _as_labels(a), _as_labels(e), _as_labels(b)
    _check_partition(rho, a, e, b)
    return (_marginal_entropy(rho, a | b) + _marginal_entropy(rho, b | e)
            - _marginal_entropy(rho, b) - _marginal_entropy(rho, a | b | e))


@dataclass
class EntropyReport:
    entropies: dict = field(default_factory=dict)
    mutual_information: float = 0.0
    conditional_mutual_information: Optional[float] = None


def entropy_report(rho: DensityMatrix, part1, part2, condition=None) -> EntropyReport:
    """Entropies of every marginal involved in ``I(part1:part2)``.

    With ``condition`` given the layout is split three ways and the report also
    carries ``I(part1:part2|condition)``.
    """
    p1, p2 = _as_labels(part1), _as_labels(part2)
    groups = [p1, p2]
    cmi = None
    if condition is not None:
        c = _as_labels(condition)
        groups = [p1, p2, c, p1 | p2, p1 | c, p2 | c, p1 | p2 | c]
        cmi = conditional_mutual_information(rho, p1, p2, c)
        mi = (_marginal_entropy(rho, p1) + _marginal_entropy(rho, p2)
              - _marginal_entropy(rho, p1 | p2))
    else:
        groups.append(p1 | p2)
        mi = mutual_information(rho, p1, p2)
    ents = {"".join(sorted(g)): _marginal_entropy(rho, g) for g in groups}
    return EntropyReport(ents, mi, cmi)


# -- random ensembles -------------------------------------------------------

def _rng(rng) -> np.random.Generator:
    return np.random.default_rng(rng)


def ginibre(rows: int, cols: int, rng=None) -> np.ndarray:
    g = _rng(rng)
    return (g.standard_normal((rows, cols)) + 1j * g.standard_normal((rows, cols))) / np.sqrt(2)


def random_density(layout: SpaceLayout | int, rank: int | None = None, rng=None) -> DensityMatrix:
    """Ginibre-induced state ``G G^dag / Tr(G G^dag)`` of the given rank."""
    if isinstance(layout, (int, np.integer)):
        layout = SpaceLayout.of(S=int(layout))
    d = layout.total_dim
    rank = d if rank is None else int(rank)
    if not 1 <= rank <= d:
        raise ValueError(f"rank {rank} outside [1, {d}]")
    g = ginibre(d, rank, rng)
    m = g @ g.conj().T
    return validate_density(m / np.trace(m).real, layout)


def random_haar_unitary(d: int, rng=None) -> np.ndarray:
    """Haar unitary: QR of a Ginibre matrix with the R diagonal phases removed."""
    if d < 1:
        raise ValueError("dimension must be positive")
    q, r = np.linalg.qr(ginibre(d, d, rng))
    phases = np.diagonal(r) / np.abs(np.diagonal(r))
    return q * phases


def random_isometry(d_in: int, d_out: int, rng=None) -> np.ndarray:
    if d_out < d_in:
        raise ValueError(f"no isometry from dim {d_in} into dim {d_out}")
    return random_haar_unitary(d_out, rng)[:, :d_in]


def random_cptp(d_in: int, d_out: int, kraus_count: int, rng=None,
                in_layout: SpaceLayout | None = None,
                out_layout: SpaceLayout | None = None):
    """Random channel from a Haar isometry ``H_in -> H_out (x) H_anc`` sliced on the ancilla."""
    from .channels import validate_channel

    if kraus_count < 1:
        raise ValueError("kraus_count must be >= 1")
    if d_out * kraus_count < d_in:
        raise ValueError(
            f"{kraus_count} Kraus operators of shape {d_out}x{d_in} cannot be trace preserving")
    v = random_isometry(d_in, d_out * kraus_count, rng).reshape(d_out, kraus_count, d_in)
    kraus = [v[:, k, :] for k in range(kraus_count)]
    in_layout = in_layout or SpaceLayout.of(IN=d_in)
    out_layout = out_layout or SpaceLayout.of(OUT=d_out)
    return validate_channel(kraus, in_layout, out_layout)
