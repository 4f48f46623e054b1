"""End-to-end acceptance checks, one group per numbered criterion.

Each test carries ``@pytest.mark.criterion(n)``; conftest prints one
PASS/FAIL line per criterion at the end of the session.
"""

import itertools
import os
import time

import mpmath
import numpy as np
import pytest
import sympy

from storagecert.bnb import Budget, Status, prove_nonneg
from storagecert.bound import BoundInput, safety_bound
from storagecert.casestudy import PUBLISHED_MODES, PUBLISHED_PI, RoomParams, room_casestudy
from storagecert.certify import csc_residuals, falsify, sample_region, verify_cbc_direct, verify_csc
from storagecert.compose import assemble_xcmp, check_dissipativity_lmi, check_level_gap, compose_cbc, lmi_matrix
from storagecert.lp import LinearProgram, LPStatus, lp_solve
from storagecert.poly import Polynomial, VarSpace, gaussian_expectation
from storagecert.regions import Box
from storagecert.sim import SimConfig, controllers_from_certificates, fraction_within, simulate
from storagecert.synth import Template, synthesize_csc

PUBLISHED = dict(gamma=28.0, lam=860.0, kappa=0.92, psi=0.3, horizon=100)


def _published_delta():
    return safety_bound(BoundInput(**PUBLISHED)).delta


# --- 1 ------------------------------------------------------------------------

@pytest.mark.criterion(1)
def test_bound_matches_high_precision_evaluation():
    res = safety_bound(BoundInput(**PUBLISHED))
    assert res.branch == 1
    mpmath.mp.dps = 50
    g, lam, psi = mpmath.mpf(28), mpmath.mpf(860), mpmath.mpf("0.3")
    exact = 1 - (1 - g / lam) * (1 - psi / lam) ** 100
    assert abs(res.delta - float(exact)) <= 1e-12
    assert res.delta == pytest.approx(0.0657, abs=5e-5)
    assert res.safe_probability == pytest.approx(0.9343, abs=5e-5)


@pytest.mark.criterion(1)
def test_bound_runtime_under_a_millisecond():
    inp = BoundInput(**PUBLISHED)
    timings = []
    for _ in range(200):
        t0 = time.perf_counter()
        safety_bound(inp)
        timings.append(time.perf_counter() - t0)
    assert float(np.median(timings)) < 1e-3


# --- 2 ------------------------------------------------------------------------

@pytest.mark.criterion(2)
def test_published_init_and_unsafe_conditions_prove(room, published_cert):
    t0 = time.perf_counter()
    rep = verify_csc(room, published_cert, tol=1e-6, conditions=("init", "unsafe"))
    elapsed = time.perf_counter() - t0
    assert rep.proved, rep.to_dict()
    assert elapsed < 10.0
    assert [m.gamma for m in published_cert.modes] == [0.13, 0.14]
    assert [m.lam for m in published_cert.modes] == [4.4, 4.3]


@pytest.mark.criterion(2)
@pytest.mark.parametrize("x, expected", [(20.0, 0.043), (1.0, 5.307), (17.0, 5.97)])
def test_published_mode1_spot_values(published_cert, x, expected):
    assert published_cert.modes[0].B.eval({"x1": x}) == pytest.approx(expected, abs=1e-2)


# --- 3 ------------------------------------------------------------------------

def _drift_oracle(points: np.ndarray, p: int) -> np.ndarray:
    """Drift residual rebuilt from the printed data with sympy and Gauss-Hermite quadrature."""
    prm = RoomParams()
    s = sympy.Symbol("x1")
    B = [sympy.lambdify(s, sympy.sympify(m["B"].replace("^", "**"), locals={"x1": s}), "numpy") for m in PUBLISHED_MODES]
    ctrl = sympy.lambdify(s, sympy.sympify(PUBLISHED_MODES[p]["controller"], locals={"x1": s}), "numpy")
    x, w = points[:, 0], points[:, 1]
    nu = ctrl(x)
    mean = ((1 - 2 * prm.theta - prm.alpha) * x - prm.beta * nu * x + prm.beta * prm.heater * nu
            + prm.theta * w + prm.alpha * prm.outside[p])
    nodes, weights = np.polynomial.hermite_e.hermegauss(8)
    weights = weights / weights.sum()
    expected = np.zeros_like(x)
    for q in range(2):
        expected += PUBLISHED_PI[p][q] * sum(wt * B[q](mean + prm.noise_gain[p] * z) for z, wt in zip(nodes, weights))
    X = np.array([[0.005, 0.003], [0.003, -0.035]])
    supply = X[0, 0] * w * w + 2 * X[0, 1] * w * x + X[1, 1] * x * x
    m = PUBLISHED_MODES[p]
    return m["kappa"] * B[p](x) + m["psi"] + supply - expected


@pytest.mark.criterion(3)
def test_drift_sweep_is_deterministic_and_matches_oracle(room, published_cert):
    first, second = {}, {}
    falsify(room, published_cert, 100_000, seed=42, conditions=("drift",), report=first)
    falsify(room, published_cert, 100_000, seed=42, conditions=("drift",), report=second)
    assert first == second
    for p in range(2):
        region = csc_residuals(room, published_cert, p)["drift"].region
        pts = sample_region(region, 100_000, np.random.default_rng([42, p, 0]))
        order = [region.names.index(n) for n in ("x1", "w1")]
        oracle = _drift_oracle(pts[:, order], p)
        assert first[(p, "drift")]["min"] == pytest.approx(float(oracle.min()), abs=1e-9)


# --- 4 ------------------------------------------------------------------------

@pytest.mark.criterion(4)
@pytest.mark.parametrize("N", [3, 10, 200])
def test_ring_lmi_holds(published_cert, N):
    net = room_casestudy(N)
    res = check_dissipativity_lmi(net, assemble_xcmp(net, [published_cert] * N, 1.0))
    assert res.holds
    assert res.max_eig <= -0.003 + 1e-6


@pytest.mark.criterion(4)
def test_ring_200_gershgorin_and_eigen_paths_agree(published_cert):
    net = room_casestudy(200)
    xcmp = assemble_xcmp(net, [published_cert] * 200, 1.0)
    fast = check_dissipativity_lmi(net, xcmp, method="gershgorin")
    t0 = time.perf_counter()
    full = check_dissipativity_lmi(net, xcmp, method="eigen")
    elapsed = time.perf_counter() - t0
    assert fast.holds and full.holds
    assert fast.max_eig == pytest.approx(full.max_eig, abs=1e-6)
    assert full.max_eig <= -0.003 + 1e-6
    reference = np.linalg.eigvalsh(lmi_matrix(net.M.toarray(), xcmp)).max()
    assert full.max_eig == pytest.approx(reference, abs=1e-9)
    assert elapsed < 30.0


# --- 5 ------------------------------------------------------------------------

@pytest.mark.criterion(5)
def test_composed_constants_for_the_ring(published_cert):
    net = room_casestudy(200)
    cert = compose_cbc(net, [published_cert] * 200, 1.0)
    k = cert.constants()
    assert k["gamma"] == pytest.approx(28.0, rel=1e-12)
    assert k["lambda"] == pytest.approx(860.0, rel=1e-12)
    assert k["kappa"] == 0.92
    assert k["psi"] == pytest.approx(0.3, rel=1e-12)
    gap = check_level_gap([published_cert] * 200, 1.0)
    assert gap.holds
    assert gap.lhs == pytest.approx(860.0, rel=1e-12) and gap.rhs == pytest.approx(28.0, rel=1e-12)


# --- 6 ------------------------------------------------------------------------

@pytest.mark.criterion(6)
def test_two_room_composition_proves_directly(two_room, two_room_synth):
    assert two_room_synth.proved
    cert = compose_cbc(two_room, [two_room_synth.certificate] * 2)
    rep = verify_cbc_direct(two_room, cert, tol=1e-5)
    assert rep.proved, rep.to_dict()
    assert {c for _, c in rep.entries} == {"init", "unsafe", "drift"}
    assert len({p for p, _ in rep.entries}) == 4


# --- 7 ------------------------------------------------------------------------

@pytest.mark.criterion(7)
def test_degree_four_synthesis_is_proved(room, room_supply):
    t0 = time.perf_counter()
    res = synthesize_csc(room, Template(degree=4, supplies=(room_supply,)))
    elapsed = time.perf_counter() - t0
    assert res.proved, res.messages
    assert all(o.status is Status.PROVED for o in res.report.entries.values())
    assert max(m.B.degree for m in res.certificate.modes) <= 4
    assert elapsed < 30 * 60


# --- 8 ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def ring_run(room_synth):
    net = room_casestudy(200)
    cfg = SimConfig(seed=42, trials=1000, horizon=100, record="full", track=(0,), threads=os.cpu_count() or 1)
    t0 = time.perf_counter()
    run = simulate(net, controllers_from_certificates([room_synth.certificate] * 200), cfg,
                   delta_bound=_published_delta())
    return run, time.perf_counter() - t0


@pytest.mark.criterion(8)
@pytest.mark.slow
def test_monte_carlo_violations_within_bound(ring_run):
    run, elapsed = ring_run
    s = run.summary
    assert s.event == "product"
    assert s.p_hat <= _published_delta()
    assert s.ci_high <= 0.10
    assert elapsed < 300


@pytest.mark.criterion(8)
@pytest.mark.slow
def test_monte_carlo_any_room_event_also_within_bound(ring_run):
    from storagecert.sim import clopper_pearson

    s = ring_run[0].summary
    assert s.violations_any / s.trials <= _published_delta()
    assert clopper_pearson(s.violations_any, s.trials)[1] <= 0.10


@pytest.mark.criterion(8)
@pytest.mark.slow
def test_tracked_room_stays_in_comfort_band(ring_run):
    assert fraction_within(ring_run[0], 0, 17.0, 23.0) >= 0.93


# --- 9 ------------------------------------------------------------------------

def _random_poly(space: VarSpace, rng, degree: int, terms: int) -> Polynomial:
    out = {}
    n = space.dim
    for _ in range(terms):
        e = [0] * n
        for _ in range(int(rng.integers(0, degree + 1))):
            e[int(rng.integers(n))] += 1
        out[tuple(e)] = out.get(tuple(e), 0.0) + float(rng.uniform(-1, 1))
    return Polynomial(space, out)


@pytest.mark.criterion(9)
def test_gaussian_expectation_against_monte_carlo():
    space = VarSpace.from_names(["x1", "sigma1", "sigma2"])
    rng = np.random.default_rng(2024)
    mc_rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        p = _random_poly(space, rng, 4, 6) + 2.0
        x = float(rng.uniform(-1, 1))
        exact = gaussian_expectation(p).eval({"x1": x, "sigma1": 0.0, "sigma2": 0.0})
        f = p.compile(["x1", "sigma1", "sigma2"])
        total = 0.0
        for _ in range(10):
            z = mc_rng.standard_normal((1_000_000, 2))
            pts = np.column_stack([np.full(len(z), x), z])
            total += float(f(pts).sum())
        mc = total / 10_000_000
        worst = max(worst, abs(mc - exact) / abs(exact))
    assert worst <= 1e-2


@pytest.mark.criterion(9)
def test_branch_and_bound_never_unsound_against_grid():
    rng = np.random.default_rng(99)
    budget = Budget(max_leaves=20_000)
    unsound = 0
    for k in range(1000):
        dim = 1 + k % 2
        names = ["x1", "x2"][:dim]
        space = VarSpace.from_names(names)
        p = _random_poly(space, rng, 4, 5)
        lo = rng.uniform(-2, 1, dim)
        box = Box(tuple(names), tuple(lo), tuple(lo + rng.uniform(0.2, 2.0, dim)))
        axes = [np.linspace(a, b, 401 if dim == 1 else 121) for a, b in zip(box.lo, box.hi)]
        grid = np.array(list(itertools.product(*axes)))
        f = p.compile(names)
        shift = -float(f(grid).min()) + float(rng.uniform(-0.05, 0.05))
        q = p + shift
        gmin = float(f(grid).min()) + shift
        out = prove_nonneg(q, box, tol=1e-6, budget=budget)
        if out.status is Status.PROVED and gmin < -1e-6 - 1e-9:
            unsound += 1
        if out.status is Status.COUNTEREXAMPLE:
            pt = np.array([[out.point[n] for n in names]])
            if not (box.contains(pt[0]) and float(f(pt)[0]) + shift < -1e-6):
                unsound += 1
    assert unsound == 0


def _vertex_oracle(A, b, c, radius):
    """Best vertex of {y : A y <= b, |y_i| <= radius}; None when empty."""
    n = A.shape[1]
    Ab = np.vstack([A, np.eye(n), -np.eye(n)])
    bb = np.concatenate([b, np.full(2 * n, radius)])
    best = None
    for rows in itertools.combinations(range(len(Ab)), n):
        M = Ab[list(rows)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        y = np.linalg.solve(M, bb[list(rows)])
        if np.all(Ab @ y <= bb + 1e-7):
            v = float(c @ y)
            best = v if best is None else max(best, v)
    return best


@pytest.mark.criterion(9)
def test_lp_solver_against_vertex_enumeration():
    rng = np.random.default_rng(5)
    mismatches = 0
    for k in range(50):
        n = int(rng.integers(2, 4))
        m = int(rng.integers(2, 7))
        A = rng.normal(size=(m, n))
        b = rng.normal(size=m) * (2.0 if k % 3 else -1.0)
        c = rng.normal(size=n)
        boxed = k % 4 != 0
        if boxed:
            A = np.vstack([A, np.eye(n), -np.eye(n)])
            b = np.concatenate([b, np.full(2 * n, 5.0)])
        res = lp_solve(LinearProgram([f"y{i}" for i in range(n)], A, b, c))
        near = _vertex_oracle(A, b, c, 1e4)
        far = _vertex_oracle(A, b, c, 1e5)
        if near is None:
            expect = LPStatus.INFEASIBLE
        elif far > near + 1e-6 * max(1.0, abs(near)):
            expect = LPStatus.UNBOUNDED
        else:
            expect = LPStatus.OPTIMAL
        if res.status is not expect:
            mismatches += 1
        elif expect is LPStatus.OPTIMAL and abs(res.value - near) > 1e-6 * max(1.0, abs(near)):
            mismatches += 1
    assert mismatches == 0


@pytest.mark.criterion(9)
def test_mode_chain_stationary_frequency():
    net = room_casestudy(2)
    cfg = SimConfig(seed=11, trials=1, horizon=100_000, record="full", track=(0,), clamp=True)
    zero = ((Polynomial.constant(net.subsystems[0].space, 0.5),),) * 2
    run = simulate(net, [zero, zero], cfg)
    modes = run.results[0].modes[:, 0]
    assert abs(float(np.mean(modes == 0)) - 4 / 11) <= 0.01
    assert net.subsystems[0].chain.stationary()[0] == pytest.approx(4 / 11, abs=1e-12)
