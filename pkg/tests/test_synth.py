import numpy as np
import pytest
from math import comb

from storagecert.bnb import Status
from storagecert.certify import SupplyMatrix, verify_csc
from storagecert.model import make_subsystem
from storagecert.synth import (SynthBudget, Template, export_sos, golden_section, monomial_exponents,
                               parse_sos_export, sos_constraint_count, synthesize_csc)


def scalar_toy(gain=0.5, X0=(-0.1, 0.1)):
    return make_subsystem(n=1, m=0, p=0, q=0, noise=1, pi=[[1.0]], dynamics=[[f"{gain}*x1 + 0.01*sigma1"]],
                          h=[], X=[[-1, 1]], X0=[list(X0)], Xu=[[[0.8, 1.0]], [[-1.0, -0.8]]], U=[], W=[])


NO_SUPPLY = SupplyMatrix(np.zeros((0, 0)), 0, 0)


@pytest.mark.parametrize("n, d", [(1, 4), (2, 3), (3, 2)])
def test_monomial_count(n, d):
    exps = monomial_exponents(n, d)
    assert len(exps) == comb(n + d, d)
    assert exps[0] == (0,) * n and all(sum(a) <= sum(b) for a, b in zip(exps, exps[1:]))


def test_golden_section_finds_peak():
    x, v = golden_section(lambda t: -(t - 0.3) ** 2, -1.0, 2.0, 40)
    assert x == pytest.approx(0.3, abs=1e-6) and v == pytest.approx(0.0, abs=1e-10)


def test_template_requires_supply():
    with pytest.raises(ValueError):
        Template(supplies=())


def test_stable_scalar_toy_is_certified():
    sub = scalar_toy()
    res = synthesize_csc(sub, Template(degree=2, supplies=(NO_SUPPLY,), kappas=(0.5,)))
    assert res.proved, res.messages
    rep = verify_csc(sub, res.certificate, conditions=("init", "unsafe", "drift", "nonneg"))
    assert rep.proved
    m = res.certificate.modes[0]
    assert m.lam > m.gamma


def test_overlapping_initial_and_unsafe_sets_are_diagnosed():
    sub = scalar_toy(X0=(0.7, 0.9))
    res = synthesize_csc(sub, Template(degree=2, supplies=(NO_SUPPLY,)), SynthBudget(max_rounds=3))
    assert not res.proved and res.certificate is None
    assert any("X0 meets the unsafe set" in m for m in res.messages)


def test_unstable_toy_without_offset_is_not_certified():
    # with psi fixed at 0 and B >= margin, noise at the origin already breaks contraction
    sub = scalar_toy(gain=1.5)
    tmpl = Template(degree=2, supplies=(NO_SUPPLY,), kappas=(0.9,), psi_max=0.0)
    res = synthesize_csc(sub, tmpl, SynthBudget(max_rounds=4))
    assert not res.proved and res.certificate is None
    assert res.diagnostics()["cells"]


def test_unstable_toy_with_offset_gets_a_valid_but_weak_certificate():
    sub = scalar_toy(gain=1.5)
    res = synthesize_csc(sub, Template(degree=2, supplies=(NO_SUPPLY,), kappas=(0.9,)))
    assert res.proved
    m = res.certificate.modes[0]
    assert verify_csc(sub, res.certificate).proved
    assert m.psi > 0.1 * (m.lam - m.gamma)


def test_room_certificate_is_fully_proved(room, room_synth):
    assert room_synth.proved
    assert room_synth.report.proved
    assert {c for _, c in room_synth.report.entries} == {"init", "unsafe", "drift", "nonneg"}
    again = verify_csc(room, room_synth.certificate, conditions=("init", "unsafe", "drift", "nonneg"))
    assert again.proved
    for m in room_synth.certificate.modes:
        assert m.B.degree <= 4 and 0 < m.kappa < 1 and m.lam > m.gamma


def test_sos_export_lists_three_expressions(room, room_supply):
    text = export_sos(room, Template(degree=4, supplies=(room_supply,)))
    sec = parse_sos_export(text)
    assert {"sets", "templates", "expression-init", "expression-unsafe", "expression-drift"} <= set(sec)
    # two modes; the unsafe set has two boxes
    assert len(sec["expression-init"]) >= 2 and len(sec["expression-drift"]) >= 2
    assert sos_constraint_count(text) == sum(len(sec[k]) for k in ("expression-init", "expression-unsafe",
                                                                    "expression-drift"))
    assert "l_nu" in text or "l_w" in text


def test_sos_export_writes_file(tmp_path, room, room_supply):
    path = tmp_path / "prog.txt"
    text = export_sos(room, Template(degree=2, supplies=(room_supply,)), path=path)
    assert path.read_text() == text
