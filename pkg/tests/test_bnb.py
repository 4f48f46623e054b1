import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from storagecert.bnb import Budget, Status, interval_bound, prove_nonneg
from storagecert.poly import Polynomial, VarSpace, parse_polynomial
from storagecert.regions import Box, Region, RegionError

SPACE = VarSpace.from_names(["x1", "x2"])


def box(*iv):
    return Box.from_intervals(["x1", "x2"][: len(iv)], iv)


def test_box_rejects_reversed_interval():
    with pytest.raises(RegionError):
        Box(("x1",), (1.0,), (0.0,))


def test_region_members_share_variables():
    with pytest.raises(RegionError):
        Region.of(Box(("x1",), (0.0,), (1.0,)), Box(("x2",), (0.0,), (1.0,)))


def test_box_helpers():
    b = box((0, 2), (1, 5))
    assert list(b.center()) == [1.0, 3.0]
    assert list(b.widths()) == [2.0, 4.0]
    assert len(b.corners()) == 4
    assert b.contains([2.0, 5.0]) and not b.contains([2.1, 5.0])


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.floats(-2, 1), st.floats(0.1, 2),
       st.sampled_from(["monomial", "centered", "both"]))
def test_enclosure_contains_sampled_values(coefs, lo, width, method):
    p = parse_polynomial(
        f"{coefs[0]} + {coefs[1]}*x1 + {coefs[2]}*x2 + {coefs[3]}*x1*x2 + {coefs[4]}*x1^3 + {coefs[5]}*x2^4", SPACE)
    b = box((lo, lo + width), (lo, lo + 2 * width))
    a, c = interval_bound(p, b, method)
    pts = b.sample(np.random.default_rng(0), 500)
    vals = p.compile(["x1", "x2"])(pts)
    assert vals.min() >= a - 1e-9 and vals.max() <= c + 1e-9


def test_constant_enclosure_is_exact():
    assert interval_bound(Polynomial.constant(SPACE, 3.0), box((0, 1), (0, 1))) == (3.0, 3.0)


def test_proves_sum_of_squares():
    p = parse_polynomial("x1^2 - 2*x1*x2 + x2^2 + 0.1", SPACE)
    out = prove_nonneg(p, box((-3, 3), (-3, 3)))
    assert out.status is Status.PROVED


def test_finds_counterexample_inside_box():
    p = parse_polynomial("(x1 - 0.3)^2 + (x2 + 0.2)^2 - 0.01", SPACE)
    b = box((-1, 1), (-1, 1))
    out = prove_nonneg(p, b, tol=1e-6)
    assert out.status is Status.COUNTEREXAMPLE
    assert p.eval(out.point) < -1e-6
    assert b.contains([out.point["x1"], out.point["x2"]])


def test_touching_zero_needs_tolerance():
    p = parse_polynomial("x1^2", SPACE)
    assert prove_nonneg(p, box((-1, 1)), tol=1e-6).status is Status.PROVED


def test_budget_exhaustion_reports_unknown_with_volume():
    # minimum exactly -tol/2 at a single point: neither a counterexample nor cheaply provable
    p = parse_polynomial("x1^2 + x2^2 - 0.5e-6", SPACE)
    out = prove_nonneg(p, box((-1, 1), (-1, 1)), tol=1e-6, budget=Budget(max_leaves=50))
    assert out.status in (Status.UNKNOWN, Status.PROVED)
    if out.status is Status.UNKNOWN:
        assert 0 < out.remaining_fraction <= 1
        assert out.lower_bound < -1e-6


def test_union_of_boxes():
    p = parse_polynomial("(x1 - 17)*(x1 - 23)", SPACE)
    region = Region.of(box((1, 17)), box((23, 50)))
    assert prove_nonneg(p, region).proved
    assert prove_nonneg(p, box((1, 50))).status is Status.COUNTEREXAMPLE


def test_empty_region_is_an_error():
    with pytest.raises(RegionError):
        prove_nonneg(Polynomial.constant(SPACE, 1.0), Region(()))


def test_outcome_round_trip():
    p = parse_polynomial("x1 - 0.5", SPACE)
    out = prove_nonneg(p, box((0, 1)))
    from storagecert.bnb import NonnegOutcome

    assert NonnegOutcome.from_dict(out.to_dict()) == out


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=5, max_size=5), st.floats(-1, 1))
def test_verdict_is_consistent_with_grid(coefs, shift):
    p = parse_polynomial(" + ".join(f"{c}*x1^{k}" for k, c in enumerate(coefs)), SPACE)
    b = box((-1, 1))
    grid = np.linspace(-1, 1, 2001)[:, None]
    q = p + shift - float(p.compile(["x1"])(grid).min())
    gmin = float(q.compile(["x1"])(grid).min())
    out = prove_nonneg(q, b, tol=1e-6, budget=Budget(max_leaves=5000))
    if out.status is Status.PROVED:
        assert gmin >= -1e-6 - 1e-9
    elif out.status is Status.COUNTEREXAMPLE:
        assert q.eval(out.point) < -1e-6


def test_multivariate_corner_minimum():
    p = parse_polynomial("x1*x2", SPACE)
    b = box((0, 1), (-1, 1))
    out = prove_nonneg(p, b)
    assert out.status is Status.COUNTEREXAMPLE
    corners = {tuple(c) for c in itertools.product([0.0, 1.0], [-1.0, 1.0])}
    assert p.eval(out.point) <= -1e-6
    assert min(p.eval(dict(zip(["x1", "x2"], c))) for c in corners) == -1.0
