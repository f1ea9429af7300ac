"""Basis enumeration and state vectors for spin-1/2 chains and matter-link chains.

The amplitude index encoding is little-endian mixed radix: site 0 is the least
significant digit, matter site j contributes a radix-2 digit and, for link
models, the link (j, j+1) contributes a radix-(2S+1) digit interleaved right
after matter site j.  Bit 1 means spin up (sigma^z = +1); link digit d means
magnetic level m = d - S.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

MAX_DIMENSION = 2**24

SPIN_HALF_CHAIN = "spin_half_chain"
LINK_MODEL = "link_model"

PERIODIC = "periodic"
OPEN = "open"


@dataclass(frozen=True)
class SpaceDescriptor:
    """Labeled product space: a spin-1/2 chain or a chain of matter sites and spin-S links."""

    kind: str
    L: int
    S: float | None = None
    boundary: str = PERIODIC

    def __post_init__(self):
        if self.kind not in (SPIN_HALF_CHAIN, LINK_MODEL):
            raise ValueError(f"unknown space kind {self.kind!r}")
        if self.boundary not in (PERIODIC, OPEN):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if self.L < 2:
            raise ValueError("need at least two sites")
        if self.kind == LINK_MODEL:
            if self.S is None:
                raise ValueError("link model requires a link spin S")
            if self.S <= 0 or abs(2 * self.S - round(2 * self.S)) > 1e-12:
                raise ValueError(f"link spin must be a positive half-integer, got {self.S}")
            if self.boundary != PERIODIC:
                raise ValueError("link model supports periodic boundary only (link count = L)")
        elif self.S is not None:
            raise ValueError("spin-1/2 chains carry no link spin")
        if self.dimension > MAX_DIMENSION:
            raise ValueError(
                f"dimension {self.dimension} exceeds the supported cap {MAX_DIMENSION}"
            )

    @property
    def link_dim(self) -> int:
        return int(round(2 * self.S + 1)) if self.kind == LINK_MODEL else 0

    @property
    def n_links(self) -> int:
        return self.L if self.kind == LINK_MODEL else 0

    @property
    def dimension(self) -> int:
        if self.kind == SPIN_HALF_CHAIN:
            return 2**self.L
        return (2 * self.link_dim) ** self.L


def spin_chain(L: int, boundary: str = PERIODIC) -> SpaceDescriptor:
    return SpaceDescriptor(SPIN_HALF_CHAIN, L, boundary=boundary)


def link_model(L: int, S: float) -> SpaceDescriptor:
    return SpaceDescriptor(LINK_MODEL, L, S=S)


@functools.lru_cache(maxsize=None)
def _radices(space: SpaceDescriptor) -> tuple[int, ...]:
    if space.kind == SPIN_HALF_CHAIN:
        return (2,) * space.L
    out = []
    for _ in range(space.L):
        out.extend((2, space.link_dim))
    return tuple(out)


@functools.lru_cache(maxsize=None)
def _strides(space: SpaceDescriptor) -> tuple[int, ...]:
    strides = []
    acc = 1
    for radix in _radices(space):
        strides.append(acc)
        acc *= radix
    return tuple(strides)


def matter_stride(space: SpaceDescriptor, j: int) -> int:
    if space.kind == SPIN_HALF_CHAIN:
        return _strides(space)[j]
    return _strides(space)[2 * j]


def link_stride(space: SpaceDescriptor, j: int) -> int:
    if space.kind != LINK_MODEL:
        raise ValueError("links exist only in link-model spaces")
    return _strides(space)[2 * j + 1]


@dataclass(frozen=True)
class BasisLabel:
    """Occupation label: one bit per matter site, one level m in {-S..S} per link."""

    matter_bits: tuple[int, ...]
    link_levels: tuple[float, ...] | None = None


def encode(space: SpaceDescriptor, label: BasisLabel) -> int:
    if len(label.matter_bits) != space.L:
        raise ValueError(f"expected {space.L} matter bits, got {len(label.matter_bits)}")
    if any(b not in (0, 1) for b in label.matter_bits):
        raise ValueError("matter bits must be 0 (down) or 1 (up)")
    index = 0
    for j, bit in enumerate(label.matter_bits):
        index += bit * matter_stride(space, j)
    if space.kind == LINK_MODEL:
        if label.link_levels is None or len(label.link_levels) != space.n_links:
            raise ValueError(f"expected {space.n_links} link levels")
        for j, m in enumerate(label.link_levels):
            digit = m + space.S
            if abs(digit - round(digit)) > 1e-9 or not 0 <= round(digit) < space.link_dim:
                raise ValueError(f"link level {m} invalid for S={space.S}")
            index += int(round(digit)) * link_stride(space, j)
    elif label.link_levels is not None:
        raise ValueError("spin-1/2 chains carry no link levels")
    return index


def decode(space: SpaceDescriptor, index: int) -> BasisLabel:
    if not 0 <= index < space.dimension:
        raise ValueError(f"index {index} outside dimension {space.dimension}")
    digits = []
    for radix in _radices(space):
        digits.append(index % radix)
        index //= radix
    if space.kind == SPIN_HALF_CHAIN:
        return BasisLabel(tuple(digits))
    matter = tuple(digits[0::2])
    links = tuple(d - space.S for d in digits[1::2])
    return BasisLabel(matter, links)


@dataclass
class StateVector:
    """Normalized complex amplitudes over the encoded basis of `space`."""

    space: SpaceDescriptor
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.ascontiguousarray(self.amplitudes, dtype=np.complex128)
        if amps.shape != (self.space.dimension,):
            raise ValueError(
                f"amplitude array of length {amps.shape} does not match dimension "
                f"{self.space.dimension}"
            )
        self.amplitudes = amps

    def copy(self) -> "StateVector":
        return StateVector(self.space, self.amplitudes.copy())


def product_state(space: SpaceDescriptor, label: BasisLabel) -> StateVector:
    """One-hot basis state at the encoded index of `label`."""
    amps = np.zeros(space.dimension, dtype=np.complex128)
    amps[encode(space, label)] = 1.0
    return StateVector(space, amps)


def all_down_state(space: SpaceDescriptor) -> StateVector:
    links = (0.0,) * space.n_links if space.kind == LINK_MODEL else None
    return product_state(space, BasisLabel((0,) * space.L, links))


def inner(phi: StateVector, psi: StateVector) -> complex:
    if phi.space != psi.space:
        raise ValueError("states live in different spaces")
    return complex(np.vdot(phi.amplitudes, psi.amplitudes))


def norm(psi: StateVector) -> float:
    return float(np.linalg.norm(psi.amplitudes))


def normalize(psi: StateVector) -> StateVector:
    n = norm(psi)
    if n == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return StateVector(psi.space, psi.amplitudes / n)


def apply_single_site_2x2(amps: np.ndarray, matrix: np.ndarray, stride: int) -> None:
    """Apply a 2x2 matrix in place on the radix-2 digit with the given stride.

    `amps` must be contiguous; the digit blocks are (outer, 2, stride) views.
    """
    view = amps.reshape(-1, 2, stride)
    lo = view[:, 0, :].copy()
    hi = view[:, 1, :]
    view[:, 0, :] = matrix[0, 0] * lo + matrix[0, 1] * hi
    view[:, 1, :] = matrix[1, 0] * lo + matrix[1, 1] * hi


def y_rotation_matrix(theta: float) -> np.ndarray:
    """exp(-i theta sigma^y) in the (down, up) amplitude ordering."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]], dtype=np.complex128)


def global_y_rotation(psi: StateVector, theta: float) -> StateVector:
    """Apply exp(-i theta sigma^y) on every matter site."""
    space = psi.space
    rot = y_rotation_matrix(theta)
    amps = psi.amplitudes.copy()
    for j in range(space.L):
        apply_single_site_2x2(amps, rot, matter_stride(space, j))
    return StateVector(space, amps)


def minus_y_state(space: SpaceDescriptor) -> StateVector:
    """Product state with every spin polarized along -y."""
    if space.kind != SPIN_HALF_CHAIN:
        raise ValueError("minus-y polarization is defined for spin-1/2 chains")
    site = np.array([1.0, 1.0j], dtype=np.complex128) / math.sqrt(2.0)
    amps = np.array([1.0], dtype=np.complex128)
    for _ in range(space.L):
        amps = np.kron(site, amps)
    return StateVector(space, amps)
