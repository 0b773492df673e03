"""Tripartite Markov states ``oplus_k q_k rho_{A bL_k} (x) rho_{bR_k E}``.

Detection uses the conditional mutual information together with the Petz
reconstruction distance. Structure recovery finds the splitting of the middle
space from the operator algebra generated by the conditional environment
operators ``rho_B^(-1/2) Tr_E[(I (x) N) rho_BE] rho_B^(-1/2)``, closed under
products and under conjugation by ``rho_B^(it)``. The centre of that algebra
separates the blocks and a set of matrix units inside each block exhibits the
``H_bL (x) H_bR`` factorization. Every recovered decomposition is checked by
reassembly before it is returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .assignment import block_assignment, petz_assignment
from .channels import (
    KrausChannel,
    compose,
    lift_localized,
    trace_out_channel,
)
from .states import (
    DensityMatrix,
    LayoutMismatch,
    conditional_mutual_information,
    validate_density,
)
from .tensor_core import (
    SUPPORT_CUTOFF,
    SpaceLayout,
    partial_trace,
    permutation_matrix,
    trace_distance,
)

CMI_TOL = 1e-9
RECONSTRUCTION_TOL = 1e-7
REASSEMBLY_TOL = 1e-8
WEIGHT_CUTOFF = 1e-12
_SPAN_TOL = 1e-8
_CENTER_GAP = 1e-7
_MODULAR_TIMES = (0.61803398875, 1.41421356237, 2.71828182846)


class NotMarkov(ValueError):
    pass


class StructureRecoveryFailed(RuntimeError):
    pass


class NotTwoSidedMarkov(NotMarkov):
    pass


class NotLocalEnvMarkov(NotMarkov):
    pass


@dataclass(frozen=True)
class MarkovBlock:
    q: float
    d_bL: int
    d_bR: int
    rho_AbL: DensityMatrix
    rho_bRE: DensityMatrix
    placeholder: bool = False


@dataclass(frozen=True)
class MarkovDecomposition:
    """Block data plus the unitary ``oplus_k H_bL_k (x) H_bR_k -> H_B``.

    ``labels`` names the (left, middle, right) parties; the default is
    ``("A", "B", "E")``.
    """

    d_A: int
    d_E: int
    blocks: tuple[MarkovBlock, ...]
    embedding: np.ndarray
    labels: tuple[str, str, str] = ("A", "B", "E")

    @property
    def d_B(self) -> int:
        return self.embedding.shape[0]

    @property
    def layout(self) -> SpaceLayout:
        a, b, e = self.labels
        return SpaceLayout(((a, self.d_A), (b, self.d_B), (e, self.d_E)))

    def columns(self):
        col = 0
        for blk in self.blocks:
            n = blk.d_bL * blk.d_bR
            yield blk, self.embedding[:, col:col + n]
            col += n

    def validate(self) -> "MarkovDecomposition":
        qs = np.array([b.q for b in self.blocks])
        if np.any(qs < 0) or abs(qs.sum() - 1) > 1e-12:
            raise ValueError(f"block weights {qs} are not a probability distribution")
        n = sum(b.d_bL * b.d_bR for b in self.blocks)
        u = self.embedding
        if u.shape != (n, n):
            raise ValueError(f"embedding shape {u.shape} does not match block dims total {n}")
        if np.max(np.abs(u.conj().T @ u - np.eye(n))) > 1e-10:
            raise ValueError("embedding is not unitary")
        for b in self.blocks:
            if b.rho_AbL.dim != self.d_A * b.d_bL or b.rho_bRE.dim != b.d_bR * self.d_E:
                raise ValueError("block state dimensions do not match block dims")
        return self


def block_layouts(labels, d_A, d_E, d_bL, d_bR):
    a, _, e = labels
    return (SpaceLayout(((a, d_A), ("bL", d_bL))),
            SpaceLayout(((("bR", d_bR)), (e, d_E))))


def make_decomposition(d_A: int, d_E: int, blocks: Sequence[tuple], embedding=None,
                       labels=("A", "B", "E")) -> MarkovDecomposition:
    """Build from ``(q, rho_AbL_matrix, rho_bRE_matrix, d_bL, d_bR)`` tuples."""
    out = []
    for q, m_l, m_r, d_l, d_r in blocks:
        lay_l, lay_r = block_layouts(labels, d_A, d_E, d_l, d_r)
        out.append(MarkovBlock(float(q), d_l, d_r, validate_density(m_l, lay_l),
                               validate_density(m_r, lay_r)))
    n = sum(b.d_bL * b.d_bR for b in out)
    u = np.eye(n, dtype=np.complex128) if embedding is None else np.asarray(embedding, complex)
    return MarkovDecomposition(d_A, d_E, tuple(out), u, tuple(labels)).validate()


def random_markov_decomposition(d_A: int = 2, d_E: int = 2, max_blocks: int = 2,
                                max_factor: int = 2, rng=None) -> MarkovDecomposition:
    """Random decomposition: block count, factor dims, states and embedding all drawn from ``rng``."""
    from .states import random_density, random_haar_unitary

    g = np.random.default_rng(rng)
    nblocks = int(g.integers(1, max_blocks + 1))
    q = g.dirichlet(np.ones(nblocks))
    blocks = []
    for k in range(nblocks):
        d_l = int(g.integers(1, max_factor + 1))
        d_r = int(g.integers(1, max_factor + 1))
        m_l = random_density(d_A * d_l, rng=g).matrix
        m_r = random_density(d_r * d_E, rng=g).matrix
        blocks.append((q[k], m_l, m_r, d_l, d_r))
    d_B = sum(b[3] * b[4] for b in blocks)
    return make_decomposition(d_A, d_E, blocks, random_haar_unitary(d_B, g))


def assemble(decomp: MarkovDecomposition) -> DensityMatrix:
    """``oplus_k q_k rho_{A bL_k} (x) rho_{bR_k E}`` on the (left, middle, right) layout."""
    d_A, d_E, d_B = decomp.d_A, decomp.d_E, decomp.d_B
    m = np.zeros((d_A * d_B * d_E,) * 2, dtype=np.complex128)
    for blk, w in decomp.columns():
        if blk.q < WEIGHT_CUTOFF:
            continue
        tau = np.kron(blk.rho_AbL.matrix, blk.rho_bRE.matrix)
        iso = np.kron(np.kron(np.eye(d_A), w), np.eye(d_E))
        m += blk.q * (iso @ tau @ iso.conj().T)
    return validate_density(m, decomp.layout)


# -- detection ----------------------------------------------------------------

@dataclass(frozen=True)
class MarkovVerdict:
    markov: bool
    cmi: float
    petz_distance: float


def _labels(x) -> list[str]:
    return [x] if isinstance(x, str) else list(x)


def petz_reconstruction(rho: DensityMatrix, a="A", b="B", e="E") -> tuple[DensityMatrix, DensityMatrix]:
    """``(rho ordered as a,b,e ; (id_a (x) Petz_{b->be})(rho_ab))``."""
    a, e = _labels(a), _labels(e)
    ordered = rho.permuted(a + [b] + e)
    lam = petz_assignment(ordered.marginal([b] + e), env=e)
    lifted = lift_localized(lam.channel, ordered.layout.sub(a + [b]))
    rebuilt = lifted.apply_matrix(ordered.marginal(a + [b]).matrix)
    return ordered, DensityMatrix(rebuilt, ordered.layout)


def is_markov(rho: DensityMatrix, a="A", b="B", e="E", tol: float = CMI_TOL) -> MarkovVerdict:
    """Markov along ``a - b - e``.

    Both the CMI (bits) and the Petz reconstruction trace distance are reported;
    the verdict needs ``cmi <= tol`` and ``petz_distance <= sqrt(tol)``.
    """
    cmi = conditional_mutual_information(rho, _labels(a), _labels(e), [b])
    ordered, rebuilt = petz_reconstruction(rho, a, b, e)
    dist = trace_distance(ordered.matrix, rebuilt.matrix)
    return MarkovVerdict(bool(cmi <= tol and dist <= np.sqrt(tol)), float(cmi), float(dist))


# -- structure recovery ---------------------------------------------------------

def _orth_extend(basis: np.ndarray, cands: np.ndarray, tol: float = _SPAN_TOL) -> np.ndarray:
    """Append to the orthonormal rows of ``basis`` whatever ``cands`` adds to their span."""
    if cands.size == 0:
        return basis
    norms = np.linalg.norm(cands, axis=1)
    cands = cands[norms > tol] / norms[norms > tol, None]
    if basis.shape[0]:
        cands = cands - (cands @ basis.conj().T) @ basis
    if cands.shape[0] == 0:
        return basis
    u, s, vh = np.linalg.svd(cands, full_matrices=False)
    new = vh[s > tol]
    if basis.shape[0] and new.shape[0]:
        new = new - (new @ basis.conj().T) @ basis
        new, _ = np.linalg.qr(new.T)
        new = new.T
    return np.vstack([basis, new]) if basis.shape[0] else new


def generated_algebra(generators: Sequence[np.ndarray], modular: Optional[np.ndarray] = None,
                      max_rounds: Optional[int] = None) -> np.ndarray:
    """Orthonormal basis (rows of vectorized matrices) of the unital *-algebra they generate.

    ``modular`` holds the (positive) eigenvalues of a diagonal state; the algebra
    is then also closed under ``X -> rho^(it) X rho^(-it)``.
    """
    d = generators[0].shape[0] if len(generators) else 1
    seed = [np.eye(d).ravel()]
    for g in generators:
        seed += [g.ravel(), g.conj().T.ravel()]
    basis = _orth_extend(np.zeros((0, d * d), dtype=np.complex128), np.array(seed, complex))
    rounds = max_rounds or d * d
    for _ in range(rounds):
        mats = basis.reshape(-1, d, d)
        prods = np.einsum("iab,jbc->ijac", mats, mats).reshape(-1, d * d)
        cands = [prods]
        if modular is not None:
            for t in _MODULAR_TIMES:
                ph = np.exp(1j * t * np.log(modular))
                cands.append((ph[None, :, None] * mats * ph.conj()[None, None, :]).reshape(-1, d * d))
        grown = _orth_extend(basis, np.vstack(cands))
        if grown.shape[0] == basis.shape[0]:
            return grown
        basis = grown
    return basis


def algebra_center(basis: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the centre of the algebra spanned by ``basis`` rows."""
    n, d2 = basis.shape
    d = int(round(np.sqrt(d2)))
    mats = basis.reshape(n, d, d)
    comm = (np.einsum("aij,bjk->abik", mats, mats)
            - np.einsum("bij,ajk->abik", mats, mats)).reshape(n, -1).T
    _, s, vh = np.linalg.svd(comm, full_matrices=True)
    scale = max(s[0], 1.0) if s.size else 1.0
    rank = int(np.sum(s > _SPAN_TOL * scale))
    null = vh[rank:].conj()
    return null @ basis


def _group_eigenvalues(w: np.ndarray, gap: float) -> list[np.ndarray]:
    order = np.argsort(w)
    groups, cur = [], [order[0]]
    for prev, nxt in zip(order[:-1], order[1:]):
        if w[nxt] - w[prev] > gap:
            groups.append(np.array(cur))
            cur = []
        cur.append(nxt)
    groups.append(np.array(cur))
    return groups


def _block_matrix_units(block_basis: np.ndarray, n: int, rng: np.random.Generator) -> tuple[int, int, np.ndarray]:
    """Split ``C^n`` as ``L (x) R`` for an algebra ``I_L (x) M(R)``; returns ``(dL, dR, W)``.

    ``W`` is unitary with column index ``a*dR + j`` for ``a`` in L, ``j`` in R.
    """
    dim = block_basis.shape[0]
    d_r = int(round(np.sqrt(dim)))
    if d_r * d_r != dim or n % d_r:
        raise StructureRecoveryFailed(
            f"block algebra of dim {dim} on C^{n} is not a full matrix algebra factor")
    d_l = n // d_r
    mats = block_basis.reshape(dim, n, n)
    c = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    x = np.einsum("a,aij->ij", c, mats)
    h = (x + x.conj().T) / 2
    w, v = np.linalg.eigh(h)
    chunks = [v[:, j * d_l:(j + 1) * d_l] for j in range(d_r)]
    spread = max(np.ptp(w[j * d_l:(j + 1) * d_l]) for j in range(d_r))
    gaps = np.diff(w[d_l - 1::d_l][:d_r]) if d_r > 1 else np.array([np.inf])
    if d_r > 1 and (np.min(np.abs(w[d_l::d_l] - w[d_l - 1:-1:d_l])) <= 10 * spread):
        raise StructureRecoveryFailed("eigenvalue multiplicities do not resolve the block factor")
    del gaps
    c2 = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    y = np.einsum("a,aij->ij", c2, mats)
    first = chunks[0]
    cols = [first]
    for e_j in chunks[1:]:
        t = e_j.conj().T @ y @ first
        u, s, vh = np.linalg.svd(t)
        if s[-1] < 1e-8 * max(s[0], 1e-300) or s[0] < 1e-10:
            raise StructureRecoveryFailed("degenerate matrix unit in block factorization")
        cols.append(e_j @ (u @ vh))
    big = np.stack(cols, axis=2)  # (n, a, j)
    return d_l, d_r, big.reshape(n, d_l * d_r)


def _recover_raw(m: np.ndarray, d_left: int, d_mid: int, d_right: int, rng=None):
    """Core of :func:`recover_structure` on ``left (x) mid (x) right`` raw matrices.

    Returns ``(blocks, embedding)`` where blocks are
    ``(q, dL, dR, rho_left_bL, rho_bR_right, placeholder)``.
    """
    g = np.random.default_rng(12345 if rng is None else rng)
    t = m.reshape(d_left, d_mid, d_right, d_left, d_mid, d_right)
    rho_mr = np.einsum("aijakl->ijkl", t)
    rho_m = np.einsum("ijkj->ik", rho_mr)
    w, v = np.linalg.eigh((rho_m + rho_m.conj().T) / 2)
    on = w > SUPPORT_CUTOFF
    lam, vs, vk = w[on], v[:, on], v[:, ~on]
    r = lam.size
    # conditional operators in the eigenbasis of rho_mid
    mr = np.einsum("ai,ajbk,bl->ijlk", vs.conj(), rho_mr, vs)  # (i, right, l, right')
    inv = 1.0 / np.sqrt(lam)
    gens = [(inv[:, None] * mr[:, s, :, s2] * inv[None, :])
            for s in range(d_right) for s2 in range(d_right)]
    alg = generated_algebra(gens, modular=lam)
    center = algebra_center(alg).reshape(-1, r, r)
    coeffs = g.standard_normal(center.shape[0])
    z = np.einsum("a,aij->ij", coeffs, center)
    z = (z + z.conj().T) / 2
    nz = np.linalg.norm(z, 2)
    z = z / nz if nz > 0 else z
    zw, zv = np.linalg.eigh(z)
    groups = _group_eigenvalues(zw, _CENTER_GAP)

    cols, dims = [], []
    for grp in groups:
        vm = zv[:, grp]
        n = vm.shape[1]
        restricted = np.einsum("ia,kij,jb->kab", vm.conj(), alg.reshape(-1, r, r), vm)
        sub = _orth_extend(np.zeros((0, n * n), dtype=np.complex128), restricted.reshape(-1, n * n))
        d_l, d_r, wm = _block_matrix_units(sub, n, g)
        cols.append(vs @ vm @ wm)
        dims.append((d_l, d_r, False))
    if vk.shape[1]:
        cols.append(vk)
        dims.append((vk.shape[1], 1, True))
    emb = np.hstack(cols)

    # read block states by projection onto each block (left, bL, bR, right)
    blocks = []
    col = 0
    for (d_l, d_r, kernel), c in zip(dims, cols):
        if kernel:
            blocks.append((0.0, d_l, d_r, np.eye(d_left * d_l) / (d_left * d_l),
                           np.eye(d_r * d_right) / (d_r * d_right), True))
            continue
        iso = np.kron(np.kron(np.eye(d_left), c), np.eye(d_right))
        sigma = iso.conj().T @ m @ iso
        q = float(np.trace(sigma).real)
        s6 = sigma.reshape(d_left, d_l, d_r, d_right, d_left, d_l, d_r, d_right)
        if q <= WEIGHT_CUTOFF:
            blocks.append((0.0, d_l, d_r, np.eye(d_left * d_l) / (d_left * d_l),
                           np.eye(d_r * d_right) / (d_r * d_right), True))
            continue
        left = np.einsum("abcdefcd->abef", s6).reshape(d_left * d_l, -1) / q
        right = np.einsum("abcdabgh->cdgh", s6).reshape(d_r * d_right, -1) / q
        blocks.append((q, d_l, d_r, left, right, False))
    return blocks, emb


def _to_decomposition(blocks, emb, d_left, d_right, labels) -> MarkovDecomposition:
    total = sum(b[0] for b in blocks)
    out = []
    for q, d_l, d_r, left, right, ph in blocks:
        lay_l, lay_r = block_layouts(labels, d_left, d_right, d_l, d_r)
        out.append(MarkovBlock(q / total, d_l, d_r, validate_density(left, lay_l),
                               validate_density(right, lay_r), ph))
    return MarkovDecomposition(d_left, d_right, tuple(out), emb, tuple(labels))


def recover_structure(rho: DensityMatrix, a="A", b="B", e="E", tol: float = RECONSTRUCTION_TOL,
                      check_markov: bool = True, cmi_tol: float = CMI_TOL) -> MarkovDecomposition:
    """Recover a block decomposition of the middle party ``b``.

    ``a`` and ``e`` may be label groups; grouped parties become a single factor
    named by concatenating the labels. The result reassembles to ``rho`` (in
    ``a, b, e`` order) within ``tol`` in trace distance, otherwise
    :class:`StructureRecoveryFailed` is raised.
    """
    a, e = _labels(a), _labels(e)
    if check_markov:
        v = is_markov(rho, a, b, e, cmi_tol)
        if not v.markov:
            raise NotMarkov(f"state is not Markov along {a}-{b}-{e}: "
                            f"CMI {v.cmi:.3e} bits, Petz distance {v.petz_distance:.3e}")
    ordered = rho.permuted(a + [b] + e)
    d_left = ordered.layout.sub(a).total_dim
    d_right = ordered.layout.sub(e).total_dim
    d_mid = ordered.layout.dim(b)
    labels = ("".join(a), b, "".join(e))
    blocks, emb = _recover_raw(ordered.matrix, d_left, d_mid, d_right)
    decomp = _to_decomposition(blocks, emb, d_left, d_right, labels)
    gap = trace_distance(assemble(decomp).matrix, ordered.matrix)
    if gap > tol:
        raise StructureRecoveryFailed(
            f"recovered decomposition ({len(decomp.blocks)} blocks, dims "
            f"{[(x.d_bL, x.d_bR) for x in decomp.blocks]}) reassembles with error {gap:.3e}")
    return decomp


# -- reduced dynamics -------------------------------------------------------

def markov_reduced_channel(decomp: MarkovDecomposition, ch_be: KrausChannel):
    """``eps_B = Tr_E' o F_BE o Lambda_B`` and the distance to the true reduced output.

    ``ch_be`` acts on ``(B, E)`` and may change both dimensions; its output must
    keep the environment label.
    """
    from .assignment import markov_b_assignment

    a, b, e = decomp.labels
    be = SpaceLayout(((b, decomp.d_B), (e, decomp.d_E)))
    if ch_be.in_layout != be:
        raise LayoutMismatch(f"channel input {ch_be.in_layout.factors} != {be.factors}")
    lam = markov_b_assignment(decomp)
    evolved = compose(ch_be, lam)
    eps = compose(trace_out_channel(ch_be.out_layout, [e]), evolved)

    rho = assemble(decomp)
    full = lift_localized(ch_be, rho.layout)
    out = full.apply_matrix(rho.matrix)
    true_ab = partial_trace(out, full.out_layout, [l for l in full.out_layout.labels if l != e])
    rho_ab = rho.marginal([a, b])
    pred = lift_localized(eps, rho_ab.layout).apply_matrix(rho_ab.matrix)
    return eps, trace_distance(true_ab, pred)


# -- two-sided structure -------------------------------------------------------

@dataclass
class TwoSidedDecomposition:
    """Both forms ``oplus_j p_j rho_{A_j B} (x) rho_E^(j)`` and ``oplus_k q_k rho_{A B_k} (x) rho_E^(k)``."""

    p: list
    rho_AjB: list
    rho_Ej: list
    a_embedding: np.ndarray
    a_block_dims: list
    q: list
    rho_ABk: list
    rho_Ek: list
    b_embedding: np.ndarray
    b_block_dims: list
    overlaps: np.ndarray
    fully_factorized: bool
    residuals: dict = field(default_factory=dict)


def build_two_sided(components: Sequence[tuple], d_E: int | None = None,
                    a_embedding=None, b_embedding=None) -> DensityMatrix:
    """``oplus_c w_c rho_{A_c B_c} (x) rho_E^(c)`` on ``(A, B, E)``.

    Each component is ``(w, rho_AB, rho_E)`` with ``rho_AB`` a state on a layout
    ``((A_c, dA_c), (B_c, dB_c))``. ``A = oplus_c A_c`` and ``B = oplus_c B_c``,
    optionally rotated by the given unitaries. The shared label ``c`` makes the
    state Markov both ways round.
    """
    ws = np.array([c[0] for c in components], dtype=float)
    if np.any(ws < 0) or abs(ws.sum() - 1) > 1e-12:
        raise ValueError("component weights must form a probability distribution")
    da = [c[1].layout.dims[0] for c in components]
    db = [c[1].layout.dims[1] for c in components]
    d_E = d_E or components[0][2].dim
    d_A, d_B = sum(da), sum(db)
    ua = np.eye(d_A) if a_embedding is None else np.asarray(a_embedding)
    ub = np.eye(d_B) if b_embedding is None else np.asarray(b_embedding)
    m = np.zeros((d_A * d_B * d_E,) * 2, dtype=np.complex128)
    oa = ob = 0
    for (w, rho_ab, rho_e), a_c, b_c in zip(components, da, db):
        wa, wb = ua[:, oa:oa + a_c], ub[:, ob:ob + b_c]
        oa += a_c
        ob += b_c
        if w < WEIGHT_CUTOFF:
            continue
        iso = np.kron(np.kron(wa, wb), np.eye(d_E))
        m += w * (iso @ np.kron(rho_ab.matrix, rho_e.matrix) @ iso.conj().T)
    return validate_density(m, SpaceLayout((("A", d_A), ("B", d_B), ("E", d_E))))


def _env_marginal(rho_xe: DensityMatrix, env: str) -> np.ndarray:
    return partial_trace(rho_xe.matrix, rho_xe.layout, [env])


def _nonzero(decomp: MarkovDecomposition):
    return [(blk, w) for blk, w in decomp.columns() if blk.q > WEIGHT_CUTOFF]


def check_two_sided(rho: DensityMatrix, tol: float = REASSEMBLY_TOL,
                    cmi_tol: float = CMI_TOL) -> TwoSidedDecomposition:
    """Recover both one-sided structures of ``rho_ABE`` and intersect them."""
    vb = is_markov(rho, "A", "B", "E", cmi_tol)
    va = is_markov(rho, "B", "A", "E", cmi_tol)
    if not (vb.markov and va.markov):
        raise NotTwoSidedMarkov(
            f"B-side CMI {vb.cmi:.3e} (markov={vb.markov}), "
            f"A-side CMI {va.cmi:.3e} (markov={va.markov})")
    dec_b = recover_structure(rho, "A", "B", "E", check_markov=False)
    dec_a = recover_structure(rho, "B", "A", "E", check_markov=False)
    a_blocks, b_blocks = _nonzero(dec_a), _nonzero(dec_b)
    d_A, d_B, d_E = rho.layout.dims
    ordered = rho.permuted(["A", "B", "E"]).matrix

    overlaps = np.zeros((len(a_blocks), len(b_blocks)))
    for j, (_, wa) in enumerate(a_blocks):
        for k, (_, wb) in enumerate(b_blocks):
            proj = np.kron(np.kron(wa @ wa.conj().T, wb @ wb.conj().T), np.eye(d_E))
            overlaps[j, k] = np.trace(proj @ ordered @ proj).real
    live = overlaps > WEIGHT_CUTOFF

    env_b = [_env_marginal(blk.rho_bRE, "E") for blk, _ in b_blocks]   # rho-bar_E^(k)
    env_a = [_env_marginal(blk.rho_bRE, "E") for blk, _ in a_blocks]   # hat-rho-bar_E^(j)
    res_a = res_b = 0.0
    for j, k in zip(*np.nonzero(live)):
        ra = a_blocks[j][0].rho_bRE        # rho_{aR_j E}
        ra_sys = partial_trace(ra.matrix, ra.layout, ["bR"])
        res_a = max(res_a, trace_distance(ra.matrix, np.kron(ra_sys, env_b[k])))
        rb = b_blocks[k][0].rho_bRE        # rho_{bR_k E}
        rb_sys = partial_trace(rb.matrix, rb.layout, ["bR"])
        res_b = max(res_b, trace_distance(rb.matrix, np.kron(rb_sys, env_a[j])))

    # reassembly over A blocks
    p, rho_ajb, rho_ej, a_dims = [], [], [], []
    m_a = np.zeros_like(ordered)
    for j, (blk, wa) in enumerate(a_blocks):
        d_l, d_r = blk.d_bL, blk.d_bR
        k = int(np.argmax(overlaps[j]))
        rho_aR = partial_trace(blk.rho_bRE.matrix, blk.rho_bRE.layout, ["bR"])
        # rho_{B aL} (x) rho_{aR} on (B, aL, aR) -> (aL, aR, B)
        tau = np.kron(blk.rho_AbL.matrix, rho_aR)
        perm = permutation_matrix((d_B, d_l, d_r), [1, 2, 0])
        tau = perm @ tau @ perm.conj().T
        state = validate_density(tau, SpaceLayout((("A", d_l * d_r), ("B", d_B))))
        p.append(blk.q)
        rho_ajb.append(state)
        rho_ej.append(validate_density(env_b[k], SpaceLayout((("E", d_E),))))
        a_dims.append((d_l, d_r))
        iso = np.kron(np.kron(wa, np.eye(d_B)), np.eye(d_E))
        m_a += blk.q * (iso @ np.kron(tau, env_b[k]) @ iso.conj().T)

    # reassembly over B blocks
    q, rho_abk, rho_ek, b_dims = [], [], [], []
    m_b = np.zeros_like(ordered)
    for k, (blk, wb) in enumerate(b_blocks):
        d_l, d_r = blk.d_bL, blk.d_bR
        j = int(np.argmax(overlaps[:, k]))
        rho_bR = partial_trace(blk.rho_bRE.matrix, blk.rho_bRE.layout, ["bR"])
        tau = np.kron(blk.rho_AbL.matrix, rho_bR)   # (A, bL, bR)
        state = validate_density(tau, SpaceLayout((("A", d_A), ("B", d_l * d_r))))
        q.append(blk.q)
        rho_abk.append(state)
        rho_ek.append(validate_density(env_a[j], SpaceLayout((("E", d_E),))))
        b_dims.append((d_l, d_r))
        iso = np.kron(np.kron(np.eye(d_A), wb), np.eye(d_E))
        m_b += blk.q * (iso @ np.kron(tau, env_a[j]) @ iso.conj().T)

    full_row = bool(np.any(np.all(live, axis=1)))
    rho_ab = partial_trace(ordered, rho.layout.reordered(["A", "B", "E"]), ["A", "B"])
    rho_e = partial_trace(ordered, rho.layout.reordered(["A", "B", "E"]), ["E"])
    residuals = {
        "env_match_a_blocks": res_a,
        "env_match_b_blocks": res_b,
        "reassembly_a_form": trace_distance(m_a, ordered),
        "reassembly_b_form": trace_distance(m_b, ordered),
        "forms_agree": trace_distance(m_a, m_b),
        "factorization": trace_distance(ordered, np.kron(rho_ab, rho_e)),
        "cmi_b_side": vb.cmi,
        "cmi_a_side": va.cmi,
    }
    worst = max(residuals["reassembly_a_form"], residuals["reassembly_b_form"])
    if worst > tol:
        raise StructureRecoveryFailed(f"two-sided forms reassemble with error {worst:.3e}")
    return TwoSidedDecomposition(
        p=p, rho_AjB=rho_ajb, rho_Ej=rho_ej,
        a_embedding=np.hstack([w for _, w in a_blocks]), a_block_dims=a_dims,
        q=q, rho_ABk=rho_abk, rho_Ek=rho_ek,
        b_embedding=np.hstack([w for _, w in b_blocks]), b_block_dims=b_dims,
        overlaps=overlaps, fully_factorized=full_row, residuals=residuals)


# -- local environments ---------------------------------------------------------

LOCAL_LABELS = ("A", "E_A", "B", "E_B")


@dataclass
class LocalEnvDecomposition:
    """``oplus_jk q_jk rho_{aL_j E_A} (x) rho_{aR_j bL_k} (x) rho_{bR_k E_B}``.

    ``a_dims[j] = (d_aL, d_aR)`` and ``b_dims[k] = (d_bL, d_bR)`` index the columns
    of ``a_embedding`` / ``b_embedding``. ``rho_aLEA[j]`` is on ``(aL, E_A)``,
    ``rho_aRbL[j][k]`` on ``(aR, bL)``, ``rho_bREB[k]`` on ``(bR, E_B)``.
    """

    a_dims: list
    b_dims: list
    q: np.ndarray
    rho_aLEA: list
    rho_aRbL: list
    rho_bREB: list
    a_embedding: np.ndarray
    b_embedding: np.ndarray
    d_EA: int
    d_EB: int
    placeholders: set = field(default_factory=set)
    residuals: dict = field(default_factory=dict)

    @property
    def layout(self) -> SpaceLayout:
        return SpaceLayout((("A", self.a_embedding.shape[0]), ("E_A", self.d_EA),
                            ("B", self.b_embedding.shape[0]), ("E_B", self.d_EB)))

    def _cols(self, emb, dims):
        out, col = [], 0
        for d_l, d_r in dims:
            out.append(emb[:, col:col + d_l * d_r])
            col += d_l * d_r
        return out

    def a_columns(self):
        return self._cols(self.a_embedding, self.a_dims)

    def b_columns(self):
        return self._cols(self.b_embedding, self.b_dims)


def build_local_env(decomp: LocalEnvDecomposition) -> DensityMatrix:
    """Assemble the four-partite state on ``(A, E_A, B, E_B)``."""
    lay = decomp.layout
    m = np.zeros((lay.total_dim,) * 2, dtype=np.complex128)
    wa_all, wb_all = decomp.a_columns(), decomp.b_columns()
    d_ea, d_eb = decomp.d_EA, decomp.d_EB
    for j, ((d_al, d_ar), wa) in enumerate(zip(decomp.a_dims, wa_all)):
        for k, ((d_bl, d_br), wb) in enumerate(zip(decomp.b_dims, wb_all)):
            qjk = decomp.q[j, k]
            if qjk < WEIGHT_CUTOFF:
                continue
            tau = np.kron(np.kron(decomp.rho_aLEA[j].matrix, decomp.rho_aRbL[j][k].matrix),
                          decomp.rho_bREB[k].matrix)
            # (aL, E_A, aR, bL, bR, E_B) -> (aL, aR, E_A, bL, bR, E_B)
            perm = permutation_matrix((d_al, d_ea, d_ar, d_bl, d_br, d_eb), [0, 2, 1, 3, 4, 5])
            tau = perm @ tau @ perm.conj().T
            iso = np.kron(np.kron(np.kron(wa, np.eye(d_ea)), wb), np.eye(d_eb))
            m += qjk * (iso @ tau @ iso.conj().T)
    return validate_density(m, lay)


def local_env_marginal(decomp: LocalEnvDecomposition) -> np.ndarray:
    """``oplus_jk q_jk rho_aL (x) rho_{aR bL} (x) rho_bR`` on ``(A, B)``."""
    d_A, d_B = decomp.a_embedding.shape[0], decomp.b_embedding.shape[0]
    m = np.zeros((d_A * d_B,) * 2, dtype=np.complex128)
    for j, ((d_al, d_ar), wa) in enumerate(zip(decomp.a_dims, decomp.a_columns())):
        r_al = partial_trace(decomp.rho_aLEA[j].matrix, decomp.rho_aLEA[j].layout, ["aL"])
        for k, ((d_bl, d_br), wb) in enumerate(zip(decomp.b_dims, decomp.b_columns())):
            if decomp.q[j, k] < WEIGHT_CUTOFF:
                continue
            r_br = partial_trace(decomp.rho_bREB[k].matrix, decomp.rho_bREB[k].layout, ["bR"])
            tau = np.kron(np.kron(r_al, decomp.rho_aRbL[j][k].matrix), r_br)
            iso = np.kron(wa, wb)
            m += decomp.q[j, k] * (iso @ tau @ iso.conj().T)
    return m


def random_local_env(max_blocks: int = 2, max_factor: int = 2, d_EA: int = 2, d_EB: int = 2,
                     rng=None) -> LocalEnvDecomposition:
    from .states import random_density, random_haar_unitary

    g = np.random.default_rng(rng)
    nj = int(g.integers(1, max_blocks + 1))
    nk = int(g.integers(1, max_blocks + 1))
    a_dims = [tuple(int(x) for x in g.integers(1, max_factor + 1, size=2)) for _ in range(nj)]
    b_dims = [tuple(int(x) for x in g.integers(1, max_factor + 1, size=2)) for _ in range(nk)]
    q = g.dirichlet(np.ones(nj * nk)).reshape(nj, nk)
    lay = lambda l1, d1, l2, d2: SpaceLayout(((l1, d1), (l2, d2)))
    rho_al = [random_density(lay("aL", dl, "E_A", d_EA), rng=g) for dl, _ in a_dims]
    rho_ab = [[random_density(lay("aR", a_dims[j][1], "bL", b_dims[k][0]), rng=g)
               for k in range(nk)] for j in range(nj)]
    rho_br = [random_density(lay("bR", dr, "E_B", d_EB), rng=g) for _, dr in b_dims]
    d_A = sum(a * b for a, b in a_dims)
    d_B = sum(a * b for a, b in b_dims)
    return LocalEnvDecomposition(a_dims, b_dims, q, rho_al, rho_ab, rho_br,
                                 random_haar_unitary(d_A, g), random_haar_unitary(d_B, g),
                                 d_EA, d_EB)


def check_local_env(rho: DensityMatrix, tol: float = REASSEMBLY_TOL,
                    cmi_tol: float = CMI_TOL) -> LocalEnvDecomposition:
    """Recover the joint structure of ``rho`` on ``(A, E_A, B, E_B)``."""
    vb = is_markov(rho, ["A", "E_A"], "B", ["E_B"], cmi_tol)
    va = is_markov(rho, ["E_A"], "A", ["B", "E_B"], cmi_tol)
    if not (vb.markov and va.markov):
        raise NotLocalEnvMarkov(
            f"(A E_A)-B-E_B CMI {vb.cmi:.3e} (markov={vb.markov}), "
            f"E_A-A-(B E_B) CMI {va.cmi:.3e} (markov={va.markov})")
    dec_b = recover_structure(rho, ["A", "E_A"], "B", ["E_B"], check_markov=False)
    dec_a = recover_structure(rho, ["E_A"], "A", ["B", "E_B"], check_markov=False)
    d_ea, d_eb = rho.layout.dim("E_A"), rho.layout.dim("E_B")
    d_B = rho.layout.dim("B")

    a_dims = [(blk.d_bL, blk.d_bR) for blk in dec_a.blocks]
    b_dims = [(blk.d_bL, blk.d_bR) for blk in dec_b.blocks]
    nj, nk = len(a_dims), len(b_dims)
    b_cols = [w for _, w in dec_b.columns()]
    q = np.zeros((nj, nk))
    rho_ab = [[None] * nk for _ in range(nj)]
    placeholders = set()
    for j, blk_a in enumerate(dec_a.blocks):
        d_ar = blk_a.d_bR
        r = blk_a.rho_bRE.matrix        # (aR, B, E_B)
        for k, (blk_b, wb) in enumerate(zip(dec_b.blocks, b_cols)):
            d_bl, d_br = blk_b.d_bL, blk_b.d_bR
            lay = SpaceLayout((("aR", d_ar), ("bL", d_bl)))
            iso = np.kron(np.kron(np.eye(d_ar), wb), np.eye(d_eb))
            sigma = iso.conj().T @ r @ iso
            p_prime = float(np.trace(sigma).real)
            if blk_a.q <= WEIGHT_CUTOFF or blk_b.q <= WEIGHT_CUTOFF or p_prime <= WEIGHT_CUTOFF:
                rho_ab[j][k] = DensityMatrix(np.eye(d_ar * d_bl, dtype=complex) / (d_ar * d_bl), lay)
                placeholders.add((j, k))
                continue
            s = sigma.reshape(d_ar, d_bl, d_br, d_eb, d_ar, d_bl, d_br, d_eb)
            marg = np.einsum("abcdefcd->abef", s).reshape(d_ar * d_bl, -1) / p_prime
            rho_ab[j][k] = validate_density(marg, lay)
            # q_jk = q_k p_jk with p_jk = p_j p'_jk / q_k
            q[j, k] = blk_a.q * p_prime

    def swap_env_first(st: DensityMatrix, sys_label: str, env_label: str) -> DensityMatrix:
        d_env, d_sys = st.layout.dims
        perm = permutation_matrix((d_env, d_sys), [1, 0])
        return validate_density(perm @ st.matrix @ perm.conj().T,
                                SpaceLayout(((sys_label, d_sys), (env_label, d_env))))

    rho_al = [swap_env_first(blk.rho_AbL, "aL", "E_A") for blk in dec_a.blocks]
    rho_br = [validate_density(blk.rho_bRE.matrix, SpaceLayout((("bR", blk.d_bR), ("E_B", d_eb))))
              for blk in dec_b.blocks]
    decomp = LocalEnvDecomposition(a_dims, b_dims, q, rho_al, rho_ab, rho_br,
                                   dec_a.embedding, dec_b.embedding, d_ea, d_eb, placeholders)
    rebuilt = build_local_env(decomp)
    target = rho.permuted(list(LOCAL_LABELS))
    lay = target.layout
    decomp.residuals = {
        "reassembly": trace_distance(rebuilt.matrix, target.matrix),
        "marginal": trace_distance(local_env_marginal(decomp), partial_trace(target.matrix, lay, ["A", "B"])),
        "weights": float(abs(q.sum() - 1)),
        "cmi_b_side": vb.cmi,
        "cmi_a_side": va.cmi,
    }
    if decomp.residuals["reassembly"] > tol:
        raise StructureRecoveryFailed(
            f"local-environment form reassembles with error {decomp.residuals['reassembly']:.3e}")
    return decomp


def local_assignments(decomp: LocalEnvDecomposition):
    """``Lambda_A : A -> (A, E_A)`` and ``Lambda_B : B -> (B, E_B)``, Petz per block."""
    lam_a = block_assignment(decomp.a_embedding, decomp.a_dims,
                             [r.matrix for r in decomp.rho_aLEA], decomp.d_EA, "left", "A", "E_A")
    lam_b = block_assignment(decomp.b_embedding, decomp.b_dims,
                             [r.matrix for r in decomp.rho_bREB], decomp.d_EB, "right", "B", "E_B")
    return lam_a, lam_b


def local_reduced_product(decomp: LocalEnvDecomposition, ch_a: KrausChannel, ch_b: KrausChannel):
    """``(eps_A, eps_B, check)`` with ``eps_X = Tr_{E_X'} o F_{X E_X} o Lambda_X``."""
    lam_a, lam_b = local_assignments(decomp)
    eps_a = compose(trace_out_channel(ch_a.out_layout, ["E_A"]), compose(ch_a, lam_a))
    eps_b = compose(trace_out_channel(ch_b.out_layout, ["E_B"]), compose(ch_b, lam_b))

    rho = build_local_env(decomp)
    step = lift_localized(ch_a, rho.layout)
    m = step.apply_matrix(rho.matrix)
    step_b = lift_localized(ch_b, step.out_layout)
    m = step_b.apply_matrix(m)
    lay = step_b.out_layout
    true_ab = partial_trace(m, lay, [l for l in lay.labels if l not in ("E_A", "E_B")])

    rho_ab = rho.marginal(["A", "B"])
    pa = lift_localized(eps_a, rho_ab.layout)
    pb = lift_localized(eps_b, pa.out_layout)
    pred = pb.apply_matrix(pa.apply_matrix(rho_ab.matrix))
    return eps_a, eps_b, trace_distance(true_ab, pred)
