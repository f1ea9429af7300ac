"""Hermitian operators on chain spaces: model builders, application, moments.

Builders cover the mixed-field Ising chain (nearest-neighbor or power-law
couplings, optional bond disorder), the spin-S U(1) quantum link model with
its Gauss generators and a gauge-breaking perturbation, plus the single-site
magnetization observables used throughout.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .hilbert import (
    PERIODIC,
    SPIN_HALF_CHAIN,
    SpaceDescriptor,
    StateVector,
    link_model,
    link_stride,
    matter_stride,
    spin_chain,
)

DIAGONAL = "diagonal"
SINGLE_SITE_X_FIELD = "single_site_x_field"
GENERIC = "generic"

HERMITICITY_CHECK_DIM = 4096
ENTRY_DROP_TOL = 1e-14

# Staggered sign for the link model, -1 on even (0-indexed) sites so that the
# alternating matter state up,down,up,down,... satisfies Gauss's law exactly.
def _stagger(j: int) -> int:
    return -1 if j % 2 == 0 else 1


@dataclass
class SparseOperator:
    """Hermitian operator in sparse-row form with structure tags for fast paths.

    `diag` is set for purely diagonal operators, `x_fields` for operators of
    the form sum_j h_j sigma_j^x (with `x_field` recording the scalar when the
    fields are uniform).  The sparse matrix is materialized on first use;
    structured operators (diagonal, x-field) are cheap to create and often
    only ever touched through their fast paths.
    """

    space: SpaceDescriptor
    structure: str
    diag: Optional[np.ndarray] = None
    x_fields: Optional[np.ndarray] = None
    x_field: Optional[float] = None
    _matrix: Optional[sp.csr_matrix] = field(default=None, repr=False, compare=False)
    _matrix_builder: object = field(default=None, repr=False, compare=False)
    _eigh: Optional[tuple] = field(default=None, repr=False, compare=False)

    @property
    def matrix(self) -> sp.csr_matrix:
        if self._matrix is None:
            self._matrix = self._matrix_builder()
            self._matrix_builder = None
        return self._matrix

    @property
    def dimension(self) -> int:
        return self.space.dimension

    def eigh_cache(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense eigendecomposition, computed once and reused (small dims only)."""
        if self._eigh is None:
            dense = self.matrix.toarray()
            if np.abs(dense.imag).max(initial=0.0) == 0.0:
                dense = dense.real
            w, v = np.linalg.eigh(dense)
            self._eigh = (w, np.ascontiguousarray(v))
        return self._eigh


def _canonical_csr(space: SpaceDescriptor, rows, cols, vals) -> sp.csr_matrix:
    dim = space.dimension
    mat = sp.coo_matrix(
        (np.asarray(vals, dtype=np.complex128), (rows, cols)), shape=(dim, dim)
    ).tocsr()
    mat.sum_duplicates()
    if mat.nnz:
        mat.data[np.abs(mat.data) < ENTRY_DROP_TOL] = 0.0
        mat.eliminate_zeros()
    return mat


def _check_hermitian(op: SparseOperator) -> None:
    if op.dimension > HERMITICITY_CHECK_DIM:
        return
    diff = op.matrix - op.matrix.conjugate().transpose().tocsr()
    worst = np.abs(diff.data).max(initial=0.0)
    scale = max(1.0, np.abs(op.matrix.data).max(initial=0.0))
    if worst > 1e-12 * scale:
        raise ValueError(f"operator is not Hermitian (max asymmetry {worst:.3e})")


def diagonal_operator(space: SpaceDescriptor, diag: np.ndarray) -> SparseOperator:
    diag = np.ascontiguousarray(diag, dtype=np.float64)
    if diag.shape != (space.dimension,):
        raise ValueError("diagonal length does not match the space dimension")
    builder = lambda: sp.diags(diag.astype(np.complex128), format="csr")
    return SparseOperator(space, DIAGONAL, diag=diag, _matrix_builder=builder)


def x_field_operator(space: SpaceDescriptor, fields: np.ndarray) -> SparseOperator:
    """sum_j h_j sigma_j^x on a spin-1/2 chain."""
    if space.kind != SPIN_HALF_CHAIN:
        raise ValueError("x-field operators are defined on spin-1/2 chains")
    fields = np.ascontiguousarray(fields, dtype=np.float64)
    if fields.shape != (space.L,):
        raise ValueError("need one field per site")
    def builder():
        dim = space.dimension
        idx = np.arange(dim, dtype=np.int64)
        rows, cols, vals = [], [], []
        for j in range(space.L):
            if fields[j] == 0.0:
                continue
            rows.append(idx ^ (1 << j))
            cols.append(idx)
            vals.append(np.full(dim, fields[j]))
        if rows:
            return _canonical_csr(
                space, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
            )
        return sp.csr_matrix((dim, dim), dtype=np.complex128)

    uniform = bool(np.all(fields == fields[0]))
    return SparseOperator(
        space,
        SINGLE_SITE_X_FIELD if uniform else GENERIC,
        x_fields=fields,
        x_field=float(fields[0]) if uniform else None,
        _matrix_builder=builder,
    )


def generic_operator(space: SpaceDescriptor, rows, cols, vals) -> SparseOperator:
    op = SparseOperator(space, GENERIC, _matrix=_canonical_csr(space, rows, cols, vals))
    _check_hermitian(op)
    return op


def identity_operator(space: SpaceDescriptor) -> SparseOperator:
    return diagonal_operator(space, np.ones(space.dimension))


def scaled(op: SparseOperator, factor: float) -> SparseOperator:
    return SparseOperator(
        op.space,
        op.structure,
        diag=None if op.diag is None else op.diag * factor,
        x_fields=None if op.x_fields is None else op.x_fields * factor,
        x_field=None if op.x_field is None else op.x_field * factor,
        _matrix_builder=lambda: (op.matrix * factor).tocsr(),
    )


def operator_sum(a: SparseOperator, b: SparseOperator) -> SparseOperator:
    if a.space != b.space:
        raise ValueError("operators live in different spaces")
    builder = lambda: (a.matrix + b.matrix).tocsr()
    if a.diag is not None and b.diag is not None:
        return SparseOperator(a.space, DIAGONAL, diag=a.diag + b.diag, _matrix_builder=builder)
    return SparseOperator(a.space, GENERIC, _matrix_builder=builder)


# ---------------------------------------------------------------------------
# Site-resolved digit values
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=64)
def _matter_z_table(space: SpaceDescriptor) -> np.ndarray:
    idx = np.arange(space.dimension, dtype=np.int64)
    table = np.empty((space.L, space.dimension))
    for j in range(space.L):
        table[j] = 2.0 * ((idx // matter_stride(space, j)) % 2) - 1.0
    table.setflags(write=False)
    return table


def matter_z_values(space: SpaceDescriptor, j: int) -> np.ndarray:
    """sigma^z eigenvalue of matter site j for every basis index."""
    return _matter_z_table(space)[j]


def link_m_values(space: SpaceDescriptor, j: int) -> np.ndarray:
    """s^z eigenvalue of link (j, j+1) for every basis index."""
    idx = np.arange(space.dimension, dtype=np.int64)
    digits = (idx // link_stride(space, j)) % space.link_dim
    return digits.astype(np.float64) - space.S


def total_sz(space: SpaceDescriptor) -> SparseOperator:
    diag = np.zeros(space.dimension)
    for j in range(space.L):
        diag += matter_z_values(space, j)
    return diagonal_operator(space, diag)


def total_sx(space: SpaceDescriptor) -> SparseOperator:
    return x_field_operator(space, np.ones(space.L))


def magnetization_z(space: SpaceDescriptor) -> SparseOperator:
    return scaled(total_sz(space), 1.0 / space.L)


def magnetization_x(space: SpaceDescriptor) -> SparseOperator:
    """Mean sigma^x over matter sites (spin chains and link-model matter alike)."""
    if space.kind == SPIN_HALF_CHAIN:
        return scaled(total_sx(space), 1.0 / space.L)
    idx = np.arange(space.dimension, dtype=np.int64)
    rows, cols, vals = [], [], []
    for j in range(space.L):
        stride = matter_stride(space, j)
        bits = (idx // stride) % 2
        rows.append(idx + stride * (1 - 2 * bits))
        cols.append(idx)
        vals.append(np.full(space.dimension, 1.0 / space.L))
    return generic_operator(space, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))


# ---------------------------------------------------------------------------
# Trotter splitting container
# ---------------------------------------------------------------------------

SCHEME_SYMMETRIC = "symmetric"
SCHEME_PLAIN = "plain"


@dataclass
class TrotterSplit:
    """Splitting H = h_minus + h_plus with `total` kept alongside.

    `scheme` selects the product the propagator realizes: the symmetric
    second-order form (default) or the plain two-factor product, whose
    boundary terms expose perturbations that the symmetric form cancels.
    """

    h_minus: SparseOperator
    h_plus: SparseOperator
    total: SparseOperator
    scheme: str = SCHEME_SYMMETRIC

    def __post_init__(self):
        if self.scheme not in (SCHEME_SYMMETRIC, SCHEME_PLAIN):
            raise ValueError(f"unknown splitting scheme {self.scheme!r}")
        if self.total._matrix is None and self.total._matrix_builder is not None:
            # deferred totals come from make_split and equal the sum by construction
            return
        diff = self.total.matrix - (self.h_minus.matrix + self.h_plus.matrix)
        worst = np.abs(diff.data).max(initial=0.0)
        scale = max(1.0, np.abs(self.total.matrix.data).max(initial=0.0))
        if worst > 1e-12 * scale:
            raise ValueError("total does not equal h_minus + h_plus")

    @property
    def space(self) -> SpaceDescriptor:
        return self.h_minus.space


def make_split(h_minus: SparseOperator, h_plus: SparseOperator) -> TrotterSplit:
    return TrotterSplit(h_minus, h_plus, operator_sum(h_minus, h_plus))


# ---------------------------------------------------------------------------
# Ising chains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DisorderSpec:
    """Uniform bond disorder: couplings drawn from [J_z - delta_j, J_z + delta_j]."""

    delta_j: float
    seed: int

    def __post_init__(self):
        if self.delta_j < 0:
            raise ValueError("disorder half-width must be non-negative")


@dataclass(frozen=True)
class IsingParams:
    j_z: float
    h_x: float
    h_z: float
    L: int
    boundary: str = PERIODIC
    alpha: float = math.inf
    disorder: Optional[DisorderSpec] = None

    def __post_init__(self):
        if not (self.alpha > 0):
            raise ValueError("power-law exponent must be positive (inf = nearest neighbor)")
        if self.disorder is not None and math.isfinite(self.alpha):
            raise ValueError("bond disorder is defined for the nearest-neighbor model")

    @property
    def space(self) -> SpaceDescriptor:
        return spin_chain(self.L, self.boundary)


def nearest_neighbor_bonds(L: int, boundary: str) -> list[tuple[int, int]]:
    bonds = [(j, (j + 1) % L) for j in range(L if boundary == PERIODIC else L - 1)]
    return bonds


def long_range_pairs(p: IsingParams) -> list[tuple[int, int, float]]:
    """All i<j pairs with coupling J_z / r^alpha, r the (periodic) chord distance."""
    out = []
    for i in range(p.L):
        for j in range(i + 1, p.L):
            r = j - i
            if p.boundary == PERIODIC:
                r = min(r, p.L - r)
            # negative float power underflows to zero for huge alpha
            out.append((i, j, p.j_z * float(r) ** -p.alpha))
    return out


def _ising_diag(space: SpaceDescriptor, bonds, couplings, h_z: float) -> np.ndarray:
    zs = [matter_z_values(space, j) for j in range(space.L)]
    diag = np.zeros(space.dimension)
    for (i, j), coupling in zip(bonds, couplings):
        diag += coupling * zs[i] * zs[j]
    if h_z != 0.0:
        for j in range(space.L):
            diag += h_z * zs[j]
    return diag


def ising_split_from_fields(
    space: SpaceDescriptor,
    bonds,
    bond_couplings,
    hz_fields: np.ndarray,
    hx_fields: np.ndarray,
) -> TrotterSplit:
    """Assemble (H_-, H_+) from per-bond couplings and per-site fields.

    H_- holds the z-diagonal part, H_+ the transverse fields; clean and noisy
    builders share this path so that zero noise reproduces identical entries.
    """
    zs = [matter_z_values(space, j) for j in range(space.L)]
    diag = np.zeros(space.dimension)
    for (i, j), coupling in zip(bonds, bond_couplings):
        diag += coupling * zs[i] * zs[j]
    for j in range(space.L):
        if hz_fields[j] != 0.0:
            diag += hz_fields[j] * zs[j]
    h_minus = diagonal_operator(space, diag)
    h_plus = x_field_operator(space, np.asarray(hx_fields, dtype=np.float64))
    return make_split(h_minus, h_plus)


def build_ising(p: IsingParams) -> TrotterSplit:
    """Mixed-field Ising splitting: diagonal H_- and transverse H_+."""
    space = p.space
    if math.isfinite(p.alpha):
        pairs = long_range_pairs(p)
        bonds = [(i, j) for i, j, _ in pairs]
        couplings = [c for _, _, c in pairs]
    else:
        bonds = nearest_neighbor_bonds(p.L, p.boundary)
        if p.disorder is not None and p.disorder.delta_j > 0:
            rng = np.random.default_rng(p.disorder.seed)
            # One draw per bond, site-ascending, so runs are bit-reproducible.
            couplings = [
                rng.uniform(p.j_z - p.disorder.delta_j, p.j_z + p.disorder.delta_j)
                for _ in bonds
            ]
        else:
            couplings = [p.j_z] * len(bonds)
    return ising_split_from_fields(
        space,
        bonds,
        couplings,
        np.full(p.L, p.h_z),
        np.full(p.L, p.h_x),
    )


# ---------------------------------------------------------------------------
# U(1) quantum link model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QlmParams:
    j: float
    mu: float
    k: float
    S: float
    lam: float
    L: int

    def __post_init__(self):
        if self.L % 2 != 0:
            raise ValueError("staggered mass term requires an even number of matter sites")
        if self.S <= 0 or abs(2 * self.S - round(2 * self.S)) > 1e-12:
            raise ValueError(f"link spin must be a positive half-integer, got {self.S}")

    @property
    def space(self) -> SpaceDescriptor:
        return link_model(self.L, self.S)


def _ladder_amplitude(S: float, m: np.ndarray) -> np.ndarray:
    # <m+1| s^+ |m> for spin S
    return np.sqrt(S * (S + 1) - m * (m + 1))


def _qlm_kinetic_entries(space: SpaceDescriptor, coupling: float):
    """sum_j coupling (sigma^+_j s^+_{j,j+1} sigma^-_{j+1} + h.c.)"""
    dim = space.dimension
    idx = np.arange(dim, dtype=np.int64)
    S = space.S
    q = space.link_dim
    rows, cols, vals = [], [], []
    for jsite in range(space.L):
        nxt = (jsite + 1) % space.L
        ms_j = matter_stride(space, jsite)
        ms_n = matter_stride(space, nxt)
        ls_j = link_stride(space, jsite)
        bit_j = (idx // ms_j) % 2
        bit_n = (idx // ms_n) % 2
        digit = (idx // ls_j) % q
        mask = (bit_j == 0) & (bit_n == 1) & (digit < q - 1)
        src = idx[mask]
        m = digit[mask].astype(np.float64) - S
        tgt = src + ms_j - ms_n + ls_j
        amp = coupling * _ladder_amplitude(S, m)
        rows.extend((tgt, src))
        cols.extend((src, tgt))
        vals.extend((amp, amp))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def _qlm_perturbation_entries(space: SpaceDescriptor):
    """sum_j [ s^+_{j,j+1}/sqrt(S(S+1)) + sigma^+_j sigma^-_{j+1} + h.c. ]"""
    dim = space.dimension
    idx = np.arange(dim, dtype=np.int64)
    S = space.S
    q = space.link_dim
    rows, cols, vals = [], [], []
    for jsite in range(space.L):
        nxt = (jsite + 1) % space.L
        ls_j = link_stride(space, jsite)
        digit = (idx // ls_j) % q
        mask = digit < q - 1
        src = idx[mask]
        m = digit[mask].astype(np.float64) - S
        amp = _ladder_amplitude(S, m) / math.sqrt(S * (S + 1))
        tgt = src + ls_j
        rows.extend((tgt, src))
        cols.extend((src, tgt))
        vals.extend((amp, amp))

        ms_j = matter_stride(space, jsite)
        ms_n = matter_stride(space, nxt)
        bit_j = (idx // ms_j) % 2
        bit_n = (idx // ms_n) % 2
        hop = (bit_j == 0) & (bit_n == 1)
        src = idx[hop]
        tgt = src + ms_j - ms_n
        amp = np.ones(src.size)
        rows.extend((tgt, src))
        cols.extend((src, tgt))
        vals.extend((amp, amp))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def qlm_free_diag(space: SpaceDescriptor, mu: float, k: float) -> np.ndarray:
    diag = np.zeros(space.dimension)
    for jsite in range(space.L):
        diag += mu * _stagger(jsite) * matter_z_values(space, jsite)
        diag += k * link_m_values(space, jsite) ** 2
    return diag


def gauge_generator_diag(space: SpaceDescriptor, jsite: int) -> np.ndarray:
    """Gauss generator on site j: (sigma^z_j + stagger)/2 + s^z_{j-1,j} - s^z_{j,j+1}.

    The matter charge (sigma^z + stagger)/2 changes by one unit under a hop
    while the links change by one unit of s^z, so only this relative
    normalization commutes with the kinetic term.
    """
    prev = (jsite - 1) % space.L
    return (
        0.5 * (matter_z_values(space, jsite) + _stagger(jsite))
        + link_m_values(space, prev)
        - link_m_values(space, jsite)
    )


def build_qlm(p: QlmParams) -> tuple[TrotterSplit, list[SparseOperator]]:
    """Quantum link model splitting H_+ = H_kin + lam*V, H_- = H_free - lam*V.

    Returns the split together with the Gauss generators G_j, which commute
    with the total Hamiltonian for every j.
    """
    space = p.space
    coupling = p.j / (2 * math.sqrt(p.S * (p.S + 1)))
    kin_rows, kin_cols, kin_vals = _qlm_kinetic_entries(space, coupling)
    free_diag = qlm_free_diag(space, p.mu, p.k)

    if p.lam == 0.0:
        h_plus = generic_operator(space, kin_rows, kin_cols, kin_vals)
        h_minus = diagonal_operator(space, free_diag)
    else:
        v_rows, v_cols, v_vals = _qlm_perturbation_entries(space)
        h_plus = generic_operator(
            space,
            np.concatenate([kin_rows, v_rows]),
            np.concatenate([kin_cols, v_cols]),
            np.concatenate([kin_vals, p.lam * v_vals]),
        )
        dim = space.dimension
        h_minus_mat = _canonical_csr(space, v_rows, v_cols, -p.lam * v_vals) + sp.diags(
            free_diag.astype(np.complex128), format="csr"
        )
        h_minus = SparseOperator(space, GENERIC, _matrix=h_minus_mat.tocsr())
        _check_hermitian(h_minus)

    generators = [
        diagonal_operator(space, gauge_generator_diag(space, jsite)) for jsite in range(space.L)
    ]
    return make_split(h_minus, h_plus), generators


def qlm_gauss_state(space: SpaceDescriptor) -> StateVector:
    """Alternating matter state (up on even sites) with all links at m = 0 flavors.

    Integer S has a genuine m = 0 level; for half-integer S Gauss's law cannot
    be satisfied with a uniform link level, so this helper requires integer S.
    """
    from .hilbert import BasisLabel, product_state

    if abs(space.S - round(space.S)) > 1e-12:
        raise ValueError("uniform Gauss-law product state needs an integer link spin")
    bits = tuple(1 if jsite % 2 == 0 else 0 for jsite in range(space.L))
    links = (0.0,) * space.n_links
    return product_state(space, BasisLabel(bits, links))


# ---------------------------------------------------------------------------
# Application and moments
# ---------------------------------------------------------------------------

def apply(op: SparseOperator, psi: StateVector) -> StateVector:
    if op.space != psi.space:
        raise ValueError("operator and state live in different spaces")
    if op.diag is not None:
        return StateVector(psi.space, op.diag * psi.amplitudes)
    return StateVector(psi.space, op.matrix @ psi.amplitudes)


def _require_normalized(psi: StateVector) -> None:
    n = np.linalg.norm(psi.amplitudes)
    if abs(n - 1.0) > 1e-6:
        raise ValueError(f"state is not normalized (norm {n})")


def expectation(op: SparseOperator, psi: StateVector) -> float:
    _require_normalized(psi)
    return float(np.real(np.vdot(psi.amplitudes, apply(op, psi).amplitudes)))


def variance(op: SparseOperator, psi: StateVector) -> float:
    _require_normalized(psi)
    w = apply(op, psi).amplitudes
    mean = np.real(np.vdot(psi.amplitudes, w))
    second = np.real(np.vdot(w, w))
    return float(second - mean * mean)


def moment_root(op: SparseOperator, psi: StateVector, n: int) -> float:
    """Raw n-th moment <A^n>; callers take the n-th root and density as needed."""
    if n < 1:
        raise ValueError("moment order must be >= 1")
    _require_normalized(psi)
    w = psi
    for _ in range(n):
        w = apply(op, w)
    return float(np.real(np.vdot(psi.amplitudes, w.amplitudes)))


def signed_root(value: float, n: int) -> float:
    """n-th root preserving sign, used when logging <H^n>^(1/n) traces."""
    if value >= 0:
        return value ** (1.0 / n)
    if n % 2 == 0:
        return math.nan
    return -((-value) ** (1.0 / n))
