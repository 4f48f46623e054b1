import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from storagecert.casestudy import room_casestudy
from storagecert.certify import ModeCertificate, StorageCertificate, SupplyMatrix
from storagecert.compose import (CompositionError, ComposedMatrix, assemble_xcmp, check_dissipativity_lmi,
                                 check_level_gap, compose_cbc, compose_report, gershgorin_interval, lmi_matrix)
from storagecert.model import Network


def with_supply(cert, X):
    return StorageCertificate(cert.modes, SupplyMatrix(np.array(X, dtype=float), 1, 1))


def with_levels(cert, gamma, lam):
    return StorageCertificate(tuple(ModeCertificate(m.B, m.controller, m.kappa, gamma, lam, m.psi)
                                    for m in cert.modes), cert.supply)


def test_xcmp_layout_for_three_rooms(published_cert):
    net = room_casestudy(3)
    X = assemble_xcmp(net, [published_cert] * 3, [1.0, 2.0, 3.0]).matrix
    assert X.shape == (6, 6)
    np.testing.assert_allclose(np.diag(X)[:3], [0.005, 0.010, 0.015])
    np.testing.assert_allclose(np.diag(X)[3:], [-0.035, -0.070, -0.105])
    assert X[1, 4] == pytest.approx(0.006) and X[0, 4] == 0.0


def test_ring_quadratic_value(published_cert):
    # symmetric ring: the LMI reduces to a s^2 + 2 b s + c over the spectrum of M, which reaches +-2
    net = room_casestudy(10)
    res = check_dissipativity_lmi(net, assemble_xcmp(net, [published_cert] * 10))
    s = np.array([-2.0, 2.0])
    expected = max(0.005 * s ** 2 + 2 * 0.003 * s - 0.035)
    assert res.max_eig == pytest.approx(expected, abs=1e-12)
    assert res.method == "gershgorin"


def test_positive_output_weight_refuses(published_cert):
    net = room_casestudy(3)
    bad = with_supply(published_cert, [[0.005, 0.003], [0.003, 0.01]])
    rep = compose_report(net, [bad] * 3)
    assert not rep.lmi.holds and rep.certificate is None
    with pytest.raises(CompositionError, match="dissipativity LMI"):
        compose_cbc(net, [bad] * 3)


def test_level_gap_refuses(published_cert):
    net = room_casestudy(3)
    low = with_levels(published_cert, 1.0, 1.2)
    weights = [1.0, 1.0, 1.0]
    mixed = [published_cert, low, with_levels(published_cert, 3.0, 3.1)]
    gap = check_level_gap(mixed, weights)
    assert gap.lhs == pytest.approx(4.3 + 1.2 + 3.1) and gap.rhs == pytest.approx(0.14 + 1.0 + 3.0)
    m0, m1 = published_cert.modes
    split = StorageCertificate((ModeCertificate(m0.B, m0.controller, m0.kappa, 0.1, 1.0, m0.psi),
                                ModeCertificate(m1.B, m1.controller, m1.kappa, 2.0, 3.0, m1.psi)),
                               published_cert.supply)
    bad = [split] * 3
    assert not check_level_gap(bad).holds
    with pytest.raises(CompositionError, match="level gap"):
        compose_cbc(net, bad)


def test_non_positive_weights(published_cert):
    with pytest.raises(CompositionError):
        compose_cbc(room_casestudy(3), [published_cert] * 3, [1.0, 0.0, 1.0])


def test_weights_scale_constants(published_cert):
    cert = compose_cbc(room_casestudy(3), [published_cert] * 3, 2.0)
    assert cert.gamma == pytest.approx(6 * 0.14) and cert.lam == pytest.approx(6 * 4.3)
    assert cert.psi == pytest.approx(6 * 0.0015) and cert.kappa == 0.92


def test_asymmetric_interconnection_uses_eigen_path(published_cert):
    net0 = room_casestudy(3)
    M = sp.csr_matrix(np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0.0]]))
    net = Network(net0.subsystems, M)
    xcmp = assemble_xcmp(net, [published_cert] * 3)
    res = check_dissipativity_lmi(net, xcmp)
    assert res.method == "eigen"
    assert res.max_eig == pytest.approx(np.linalg.eigvalsh(lmi_matrix(M.toarray(), xcmp)).max(), abs=1e-10)
    with pytest.raises(CompositionError):
        check_dissipativity_lmi(net, xcmp, method="gershgorin")


def test_gershgorin_interval_contains_spectrum():
    M = np.array([[2.0, 1.0], [1.0, -1.0]])
    lo, hi = gershgorin_interval(M)
    ev = np.linalg.eigvalsh(M)
    assert lo <= ev.min() and ev.max() <= hi


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10_000), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_fast_path_is_an_upper_bound(n, seed, a, b, c):
    rng = np.random.default_rng(seed)
    A = rng.integers(0, 2, size=(n, n)).astype(float)
    M = np.triu(A, 1)
    M = M + M.T
    X = np.block([[a * np.eye(n), b * np.eye(n)], [b * np.eye(n), c * np.eye(n)]])
    xcmp = ComposedMatrix(X, n, n)
    sub = room_casestudy(n if n > 2 else 2).subsystems[0]
    net = Network((sub,) * n, sp.csr_matrix(M))
    fast = check_dissipativity_lmi(net, xcmp, method="gershgorin")
    exact = np.linalg.eigvalsh(lmi_matrix(M, xcmp)).max()
    assert fast.max_eig >= exact - 1e-9
