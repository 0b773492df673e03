"""Dense linear algebra on composite Hilbert spaces.

Matrices are plain ``numpy`` complex arrays. Composite spaces are described by
a :class:`SpaceLayout`, an ordered list of ``(label, dim)`` factors; every
Kronecker product uses the left factor as the major index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

HERMITIAN_TOL = 1e-10
PSD_TOL = 1e-10
SUPPORT_CUTOFF = 1e-12


class LayoutError(ValueError):
    """Raised for unknown labels or dimension mismatches against a layout."""


@dataclass(frozen=True)
class SpaceLayout:
    """Ordered tensor factors ``((label, dim), ...)``."""

    factors: tuple[tuple[str, int], ...]

    def __post_init__(self):
        factors = tuple((str(label), int(dim)) for label, dim in self.factors)
        labels = [label for label, _ in factors]
        if len(set(labels)) != len(labels):
            raise LayoutError(f"duplicate labels in layout: {labels}")
        for label, dim in factors:
            if dim < 1:
                raise LayoutError(f"factor {label!r} has non-positive dim {dim}")
        object.__setattr__(self, "factors", factors)

    @classmethod
    def of(cls, *pairs: tuple[str, int], **dims: int) -> "SpaceLayout":
        """``SpaceLayout.of(("A", 2), ("B", 3))`` or ``SpaceLayout.of(A=2, B=3)``."""
        return cls(tuple(pairs) + tuple(dims.items()))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(dim for _, dim in self.factors)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64)) if self.factors else 1

    def dim(self, label: str) -> int:
        return self.dims[self.index(label)]

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise LayoutError(f"label {label!r} not in layout {self.labels}") from None

    def sub(self, labels: Iterable[str]) -> "SpaceLayout":
        """Sub-layout on ``labels``, kept in this layout's order."""
        wanted = set(labels)
        for label in wanted:
            self.index(label)
        return SpaceLayout(tuple(f for f in self.factors if f[0] in wanted))

    def reordered(self, labels: Sequence[str]) -> "SpaceLayout":
        return SpaceLayout(tuple((label, self.dim(label)) for label in labels))

    def __iter__(self):
        return iter(self.factors)

    def __len__(self):
        return len(self.factors)


@dataclass(frozen=True)
class OperatorBasis:
    """``dim**2`` trace-orthogonal unitaries; element 0 is the identity."""

    dim: int
    elements: tuple[np.ndarray, ...]

    def coefficients(self, m: np.ndarray) -> np.ndarray:
        """Expansion coefficients ``c_k = Tr(A_k^dag m) / d``."""
        return np.array([np.vdot(a, m) for a in self.elements]) / self.dim

    def reconstruct(self, coeffs: Sequence[complex]) -> np.ndarray:
        return sum(c * a for c, a in zip(coeffs, self.elements))


def as_matrix(m) -> np.ndarray:
    arr = np.asarray(m, dtype=np.complex128)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix has non-finite entries")
    return arr


def tensor(*mats) -> np.ndarray:
    """Kronecker product, first argument most significant."""
    out = np.ones((1, 1), dtype=np.complex128)
    for m in mats:
        out = np.kron(out, as_matrix(m))
    return out


def direct_sum(blocks: Sequence) -> np.ndarray:
    blocks = [as_matrix(b) for b in blocks]
    for b in blocks:
        if b.shape[0] != b.shape[1]:
            raise ValueError(f"direct_sum needs square blocks, got {b.shape}")
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n), dtype=np.complex128)
    i = 0
    for b in blocks:
        k = b.shape[0]
        out[i:i + k, i:i + k] = b
        i += k
    return out


def _check_square(m: np.ndarray, layout: SpaceLayout) -> None:
    if m.shape != (layout.total_dim, layout.total_dim):
        raise LayoutError(
            f"matrix shape {m.shape} does not match layout dim {layout.total_dim}")


def partial_trace(m, layout: SpaceLayout, keep: Iterable[str]) -> np.ndarray:
    """Trace out every factor not in ``keep``; result is in layout order."""
    m = as_matrix(m)
    _check_square(m, layout)
    keep = set(keep)
    for label in keep:
        layout.index(label)
    n = len(layout)
    kept = [i for i, label in enumerate(layout.labels) if label in keep]
    gone = [i for i in range(n) if i not in kept]
    dims = layout.dims
    dk = int(np.prod([dims[i] for i in kept], dtype=np.int64))
    dg = int(np.prod([dims[i] for i in gone], dtype=np.int64))
    t = m.reshape(dims + dims)
    t = t.transpose(kept + gone + [n + i for i in kept] + [n + i for i in gone])
    return np.einsum("ijkj->ik", t.reshape(dk, dg, dk, dg))


def permutation_matrix(dims: Sequence[int], order: Sequence[int]) -> np.ndarray:
    """Unitary ``P`` with ``P (x_0 (x) x_1 ...) = x_order[0] (x) x_order[1] ...``."""
    dims = tuple(int(d) for d in dims)
    n = int(np.prod(dims, dtype=np.int64))
    eye = np.eye(n, dtype=np.complex128).reshape(dims + (n,))
    moved = eye.transpose(list(order) + [len(dims)])
    return moved.reshape(n, n)


def permute_subsystems(m, layout: SpaceLayout, new_order: Sequence[str]):
    """Reorder tensor factors; returns ``(matrix, new_layout)``."""
    m = as_matrix(m)
    _check_square(m, layout)
    new_order = list(new_order)
    if sorted(new_order) != sorted(layout.labels) or len(new_order) != len(layout):
        raise LayoutError(f"{new_order} is not a permutation of {layout.labels}")
    perm = [layout.index(label) for label in new_order]
    n = len(layout)
    t = m.reshape(layout.dims + layout.dims)
    t = t.transpose(perm + [n + p for p in perm])
    return t.reshape(m.shape), layout.reordered(new_order)


def hermitian_part(m, tol: float = HERMITIAN_TOL) -> np.ndarray:
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got {m.shape}")
    asym = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
    if asym > tol:
        raise ValueError(f"matrix is not Hermitian (asymmetry {asym:.3e} > {tol:.0e})")
    return (m + m.conj().T) / 2


def eigh(m, tol: float = HERMITIAN_TOL):
    """Eigenvalues (descending) and eigenvector columns of a Hermitian matrix."""
    w, v = np.linalg.eigh(hermitian_part(m, tol))
    return w[::-1], v[:, ::-1]


def _psd_eig(m):
    w, v = eigh(m)
    if w.size and w.min() < -PSD_TOL:
        raise ValueError(f"matrix is not PSD (eigenvalue {w.min():.3e})")
    return np.clip(w, 0.0, None), v


def psd_sqrt(m) -> np.ndarray:
    w, v = _psd_eig(m)
    return (v * np.sqrt(w)) @ v.conj().T


def psd_pinv_sqrt(m, cutoff: float = SUPPORT_CUTOFF) -> np.ndarray:
    """Inverse square root on the support; eigenvalues below ``cutoff`` map to 0."""
    w, v = _psd_eig(m)
    inv = np.zeros_like(w)
    on = w > cutoff
    inv[on] = 1.0 / np.sqrt(w[on])
    return (v * inv) @ v.conj().T


def support_projector(m, cutoff: float = SUPPORT_CUTOFF) -> np.ndarray:
    w, v = _psd_eig(m)
    vs = v[:, w > cutoff]
    return vs @ vs.conj().T


def trace_distance(a, b) -> float:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    w = np.linalg.eigvalsh((d + d.conj().T) / 2)
    return float(0.5 * np.sum(np.abs(w)))


def frobenius(m) -> float:
    return float(np.linalg.norm(m))


def weyl_basis(d: int) -> OperatorBasis:
    """Shift/clock unitaries ``X^a Z^b``; index ``a + d*b`` so the identity comes first.

    For ``d = 2`` the order is ``I, X, Z, XZ`` (``XZ = -iY``).
    """
    d = int(d)
    if d < 1:
        raise ValueError("weyl_basis needs d >= 1")
    omega = np.exp(2j * np.pi / d)
    shift = np.roll(np.eye(d, dtype=np.complex128), 1, axis=0)
    clock = np.diag(omega ** np.arange(d))
    elements = []
    for b in range(d):
        for a in range(d):
            elements.append(np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b))
    for e in elements:
        e.setflags(write=False)
    return OperatorBasis(d, tuple(elements))
