import math

import numpy as np
import pytest
import scipy.linalg

from adatrotter.hilbert import (
    BasisLabel,
    all_down_state,
    decode,
    encode,
    global_y_rotation,
    inner,
    link_model,
    minus_y_state,
    norm,
    normalize,
    product_state,
    spin_chain,
    y_rotation_matrix,
)
from adatrotter.operators import expectation, magnetization_x, total_sz

from conftest import random_state

# Pauli matrices in the (down, up) amplitude ordering used by the encoding.
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, 1j], [-1j, 0]], dtype=complex)
SZ = np.array([[-1, 0], [0, 1]], dtype=complex)


def test_dimensions():
    assert spin_chain(5).dimension == 32
    assert link_model(2, 1.0).dimension == 36
    assert link_model(4, 1.0).dimension == 1296
    assert link_model(2, 0.5).dimension == 16


def test_invalid_spaces():
    with pytest.raises(ValueError):
        spin_chain(1)
    with pytest.raises(ValueError):
        link_model(2, 0.3)
    with pytest.raises(ValueError):
        spin_chain(40)  # exceeds the dimension cap


def test_product_state_one_hot():
    space = spin_chain(2)
    psi = product_state(space, BasisLabel((0, 0)))
    assert psi.amplitudes[0] == 1.0
    assert np.count_nonzero(psi.amplitudes) == 1
    assert norm(psi) == 1.0
    # site 0 is the least significant digit: up on site 0 sits at index 1
    psi01 = product_state(space, BasisLabel((1, 0)))
    assert psi01.amplitudes[1] == 1.0


def test_product_state_label_mismatch():
    space = spin_chain(3)
    with pytest.raises(ValueError):
        product_state(space, BasisLabel((0, 0)))
    with pytest.raises(ValueError):
        product_state(space, BasisLabel((0, 0, 2)))
    lm = link_model(2, 1.0)
    with pytest.raises(ValueError):
        product_state(lm, BasisLabel((0, 0)))  # missing link levels
    with pytest.raises(ValueError):
        product_state(lm, BasisLabel((0, 0), (0.0, 2.0)))  # level outside {-1,0,1}


def test_encode_decode_roundtrip_link_model():
    space = link_model(3, 1.0)
    for index in range(space.dimension):
        assert encode(space, decode(space, index)) == index


@pytest.mark.parametrize(
    "space",
    [
        spin_chain(2),
        spin_chain(7),
        spin_chain(12),
        link_model(2, 0.5),
        link_model(2, 1.5),
        link_model(4, 1.0),
    ],
)
def test_encode_decode_bijection(space):
    assert space.dimension <= 4096
    seen = set()
    for index in range(space.dimension):
        label = decode(space, index)
        back = encode(space, label)
        assert back == index
        seen.add((label.matter_bits, label.link_levels))
    assert len(seen) == space.dimension


def test_y_rotation_identity():
    space = spin_chain(4)
    psi = random_state(space, 7)
    out = global_y_rotation(psi, 0.0)
    np.testing.assert_allclose(out.amplitudes, psi.amplitudes)


def test_y_rotation_matches_dense_2x2_oracle():
    # oracle: scipy expm of the 2x2 generator, applied per site via kron
    theta = np.pi / 2
    oracle_site = scipy.linalg.expm(-1j * theta * SY)
    np.testing.assert_allclose(y_rotation_matrix(theta), oracle_site, atol=1e-12)

    space = spin_chain(2)
    psi = global_y_rotation(all_down_state(space), theta)
    oracle = np.kron(oracle_site, oracle_site) @ all_down_state(space).amplitudes
    np.testing.assert_allclose(psi.amplitudes, oracle, atol=1e-12)
    # down maps to -up on each site: amplitude (+1) on |up,up> after two signs
    assert abs(psi.amplitudes[3] - 1.0) < 1e-12
    # <sigma^z> flips sign
    assert expectation(total_sz(space), psi) == pytest.approx(2.0, abs=1e-12)


def test_y_rotation_per_site_magnetization():
    # theta=pi/8 from all-down: the dense 2x2 oracle gives <sigma^z> = -cos(2 theta)
    # per site (the transverse component goes into sigma^x, not sigma^y).
    theta = np.pi / 8
    space = spin_chain(8)
    psi = global_y_rotation(all_down_state(space), theta)
    site = scipy.linalg.expm(-1j * theta * SY) @ np.array([1.0, 0.0])
    oracle_sz = float(np.real(site.conj() @ SZ @ site))
    assert oracle_sz == pytest.approx(-math.cos(2 * theta), abs=1e-12)
    assert expectation(total_sz(space), psi) / 8 == pytest.approx(oracle_sz, abs=1e-10)
    oracle_sx = float(np.real(site.conj() @ SX @ site))
    assert expectation(magnetization_x(space), psi) == pytest.approx(oracle_sx, abs=1e-10)


def test_y_rotation_is_unitary():
    space = spin_chain(6)
    for seed in range(5):
        psi = random_state(space, seed)
        assert abs(norm(global_y_rotation(psi, 0.7 + seed)) - norm(psi)) < 1e-12


def test_y_rotation_additivity():
    space = spin_chain(5)
    psi = random_state(space, 3)
    a = global_y_rotation(global_y_rotation(psi, 0.31), 0.45)
    b = global_y_rotation(psi, 0.76)
    np.testing.assert_allclose(a.amplitudes, b.amplitudes, atol=1e-10)


def test_inner_norm_normalize():
    space = spin_chain(3)
    e0 = product_state(space, BasisLabel((0, 0, 0)))
    e1 = product_state(space, BasisLabel((1, 0, 0)))
    assert inner(e0, e0) == 1.0 + 0.0j
    assert inner(e0, e1) == 0.0 + 0.0j
    doubled = e0.copy()
    doubled.amplitudes *= 2.0
    np.testing.assert_allclose(normalize(doubled).amplitudes, e0.amplitudes)
    zero = e0.copy()
    zero.amplitudes *= 0.0
    with pytest.raises(ValueError):
        normalize(zero)
    with pytest.raises(ValueError):
        inner(e0, random_state(spin_chain(4), 0))


def test_minus_y_state_polarization():
    space = spin_chain(4)
    psi = minus_y_state(space)
    # expectation of sigma^y on each site is -1
    amps = psi.amplitudes
    for j in range(space.L):
        stride = 2**j
        view = amps.reshape(-1, 2, stride)
        sy_val = np.vdot(view[:, 0, :], 1j * view[:, 1, :]) + np.vdot(view[:, 1, :], -1j * view[:, 0, :])
        assert np.real(sy_val) == pytest.approx(-1.0, abs=1e-12)
    assert norm(psi) == pytest.approx(1.0, abs=1e-12)
