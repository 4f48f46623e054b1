"""Command-line entry point: storagecert <command> [options].

Exit codes: 0 success or proved, 2 counterexample or refusal,
3 verification inconclusive, 64 malformed input.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bnb import Budget, Status
from .bound import BoundInput, safety_bound
from .casestudy import PUBLISHED_SUPPLY, published_certificate, room_casestudy
from .certify import (CSC_CONDITIONS, OPTIONAL_CONDITIONS, CertificateError, SupplyMatrix, dump_certificates,
                      falsify, load_certificates, verify_cbc_direct, verify_csc)
from .compose import CompositionError, compose_report
from .model import ModelError, check_well_posed, load_network_file, network_to_dict
from .sim import SimConfig, SimulationError, controllers_from_certificates, export_trajectories, fraction_within, simulate
from .synth import SynthBudget, Template, export_sos, synthesize_csc

EXIT_OK, EXIT_REFUTED, EXIT_UNKNOWN, EXIT_SCHEMA = 0, 2, 3, 64

log = logging.getLogger("storagecert")


@dataclass
class RunManifest:
    command: str
    config: str | None
    seed: int | None
    tolerances: dict = field(default_factory=dict)
    output: str | None = None
    version: str = __version__
    arguments: dict = field(default_factory=dict)


def _manifest(args, **tolerances) -> dict:
    skip = {"func"}
    arguments = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    return asdict(RunManifest(args.command, getattr(args, "config", None), getattr(args, "seed", None),
                              tolerances, getattr(args, "out", None), __version__, arguments))


def _write_json(path, doc: dict):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _budget(args) -> Budget:
    return Budget(max_leaves=args.max_leaves, min_width_frac=args.min_width)


def _read_certs(path, net):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return load_certificates(text, net)


def _parse_supply(text: str | None, sub) -> SupplyMatrix:
    k = sub.p + sub.q
    if text is None:
        if k == 0:
            return SupplyMatrix(np.zeros((0, 0)), 0, 0)
        if (sub.p, sub.q) != (1, 1):
            raise CertificateError("--supply is required unless the subsystem has one disturbance and one output")
        return SupplyMatrix(np.array(PUBLISHED_SUPPLY), 1, 1)
    vals = np.array(json.loads(text), dtype=float)
    if vals.size != k * k:
        raise CertificateError(f"--supply needs {k}x{k} entries, got {vals.size}")
    return SupplyMatrix(vals.reshape(k, k), sub.p, sub.q)


# --- commands -------------------------------------------------------------------

def cmd_casestudy(args) -> int:
    net = room_casestudy(args.rooms, mode_coupling=args.coupling)
    doc = network_to_dict(net)
    doc["manifest"] = _manifest(args)
    _write_json(args.out, doc)
    if args.published_certificates:
        certs = dump_certificates([published_certificate(net.subsystems[0])] * net.size,
                                  {"manifest": _manifest(args)})
        _write_json(args.published_certificates, certs)
    wp = check_well_posed(net)
    log.info("wrote %d-room network to %s (well-posed: %s)", args.rooms, args.out, wp.well_posed)
    return EXIT_OK


def cmd_synthesize(args) -> int:
    net = load_network_file(args.config)
    targets = range(net.size) if args.subsystem is None else [args.subsystem]
    found: dict = {}
    certs = [None] * net.size
    diagnostics = []
    for i in targets:
        sub = net.subsystems[i]
        if sub in found:
            certs[i] = found[sub]
            continue
        supplies = tuple(_parse_supply(s, sub) for s in (args.supply or [None]))
        tmpl = Template(degree=args.degree, controller_degree=args.controller_degree, kappas=tuple(args.kappas),
                        supplies=supplies, lam_max=args.lam_max, psi_max=args.psi_max, gap=args.gap,
                        margin=args.margin, nonneg=not args.allow_negative, seed=args.seed)
        budget = SynthBudget(max_rounds=args.rounds, tol=args.tol, verify_budget=_budget(args))
        res = synthesize_csc(sub, tmpl, budget, log=log.info)
        diagnostics.append({"subsystem": i, **res.diagnostics()})
        if not res.proved:
            for m in res.messages:
                log.error("subsystem %d: %s", i, m)
            if args.report:
                _write_json(args.report, {"manifest": _manifest(args, tol=args.tol), "diagnostics": diagnostics})
            return EXIT_REFUTED
        found[sub] = res.certificate
        certs[i] = res.certificate
    if any(c is None for c in certs):
        log.warning("only part of the network was synthesised; the file covers subsystem %s", args.subsystem)
        doc = dump_certificates([c for c in certs if c is not None], {"manifest": _manifest(args, tol=args.tol)})
        doc["certificates"][0]["applies_to"] = [args.subsystem]
    else:
        doc = dump_certificates(certs, {"manifest": _manifest(args, tol=args.tol)})
    _write_json(args.out, doc)
    if args.report:
        _write_json(args.report, {"manifest": _manifest(args, tol=args.tol), "diagnostics": diagnostics})
    log.info("certificate written to %s", args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    net = load_network_file(args.config)
    certs = _read_certs(args.certs, net)
    conditions = tuple(args.conditions.split(","))
    for c in conditions:
        if c not in CSC_CONDITIONS + OPTIONAL_CONDITIONS:
            raise CertificateError(f"unknown condition {c!r}")
    seen: dict = {}
    reports = []
    worst = Status.PROVED
    for i, (sub, cert) in enumerate(zip(net.subsystems, certs)):
        key = (sub, id(cert))
        if key not in seen:
            rep = verify_csc(sub, cert, args.tol, _budget(args), conditions)
            entry = rep.to_dict()
            if args.falsify:
                mins: dict = {}
                falsify(sub, cert, args.falsify, args.seed, args.tol, conditions, report=mins)
                entry["sampled_minimum"] = [{"mode": p, "condition": c, **v} for (p, c), v in sorted(mins.items())]
            seen[key] = (rep, entry)
        rep, entry = seen[key]
        reports.append({"subsystem": i, **entry})
        if rep.verdict is Status.COUNTEREXAMPLE:
            worst = Status.COUNTEREXAMPLE
        elif rep.verdict is Status.UNKNOWN and worst is Status.PROVED:
            worst = Status.UNKNOWN
    for w in sorted({w for r in reports for w in r["warnings"]}):
        log.warning(w)
    doc = {"manifest": _manifest(args, tol=args.tol), "verdict": worst.value, "subsystems": reports}
    if args.out:
        _write_json(args.out, doc)
    log.info("verdict: %s", worst.value)
    return {Status.PROVED: EXIT_OK, Status.COUNTEREXAMPLE: EXIT_REFUTED, Status.UNKNOWN: EXIT_UNKNOWN}[worst]


def cmd_compose(args) -> int:
    net = load_network_file(args.config)
    certs = _read_certs(args.certs, net)
    mu = None if args.mu is None else (args.mu[0] if len(args.mu) == 1 else args.mu)
    rep = compose_report(net, certs, mu, args.tol, args.method)
    doc = {"manifest": _manifest(args, tol=args.tol), **rep.to_dict()}
    code = EXIT_OK
    if not rep.lmi.holds:
        log.error("refused: dissipativity LMI fails (max eigenvalue %.6g)", rep.lmi.max_eig)
        doc["refused"] = "dissipativity LMI"
        code = EXIT_REFUTED
    elif not rep.gap.holds:
        log.error("refused: level gap fails (%.6g <= %.6g)", rep.gap.lhs, rep.gap.rhs)
        doc["refused"] = "level gap"
        code = EXIT_REFUTED
    elif args.direct:
        v = verify_cbc_direct(net, rep.certificate, args.tol_direct, _budget(args))
        doc["direct"] = v.to_dict()
        if not v.proved:
            code = EXIT_REFUTED if v.verdict is Status.COUNTEREXAMPLE else EXIT_UNKNOWN
    if rep.certificate is not None and args.horizon is not None:
        k = rep.certificate.constants()
        b = safety_bound(BoundInput(k["gamma"], k["lambda"], k["kappa"], k["psi"], args.horizon))
        doc["bound"] = {"horizon": args.horizon, "delta": b.delta, "safe_probability": b.safe_probability,
                        "branch": b.branch}
    if args.out:
        _write_json(args.out, doc)
    if rep.certificate is not None:
        log.info("composed constants: %s", rep.certificate.constants())
    return code


def cmd_bound(args) -> int:
    b = safety_bound(BoundInput(args.gamma, args.lam, args.kappa, args.psi, args.horizon))
    doc = {"manifest": _manifest(args), "delta": b.delta, "safe_probability": b.safe_probability,
           "branch": b.branch, "raw": b.raw}
    print(f"delta={b.delta:.12g} safe_probability={b.safe_probability:.12g} branch={b.branch}")
    if args.out:
        _write_json(args.out, doc)
    return EXIT_OK


def cmd_simulate(args) -> int:
    net = load_network_file(args.config)
    certs = _read_certs(args.certs, net)
    full = bool(args.csv or args.plot)
    track = tuple(args.track) if args.track else ((0,) if full else None)
    cfg = SimConfig(seed=args.seed, trials=args.trials, horizon=args.horizon, mode_coupling=args.coupling,
                    clamp=not args.no_clamp, record="full" if full else "flags", track=track,
                    unsafe_event=args.event, threads=args.threads)
    run = simulate(net, controllers_from_certificates(certs), cfg, delta_bound=args.delta)
    summary = run.summary.to_dict()
    if full and args.band:
        summary["extra"]["within_band"] = {str(i): fraction_within(run, i, *args.band) for i in run.tracked}
    manifest = _manifest(args)
    if args.csv:
        rows = export_trajectories(run, args.csv, net, manifest)
        log.info("wrote %d trajectory rows to %s", rows, args.csv)
    if args.plot:
        from .plotting import plot_trajectories

        plot_trajectories(run, args.plot, run.tracked[0], band=tuple(args.band) if args.band else None)
        log.info("wrote figure %s", args.plot)
    doc = {"manifest": manifest, **summary}
    if args.out:
        _write_json(args.out, doc)
    print(json.dumps({k: summary[k] for k in ("trials", "violations", "p_hat", "ci_low", "ci_high", "delta_bound",
                                              "clamp_events")}))
    if args.delta is not None and summary["p_hat"] > args.delta:
        log.warning("empirical violation frequency %.4g exceeds the bound %.4g", summary["p_hat"], args.delta)
    return EXIT_OK


def cmd_export_sos(args) -> int:
    net = load_network_file(args.config)
    sub = net.subsystems[args.subsystem]
    tmpl = Template(degree=args.degree, controller_degree=args.controller_degree, kappas=tuple(args.kappas),
                    supplies=(_parse_supply(args.supply, sub),))
    text = export_sos(sub, tmpl, multiplier_degree=args.multiplier_degree)
    header = "# manifest " + json.dumps(_manifest(args), sort_keys=True) + "\n"
    Path(args.out).write_text(header + text, encoding="utf-8")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------

def _common_budget(p):
    p.add_argument("--tol", type=float, default=1e-6, help="nonnegativity tolerance")
    p.add_argument("--max-leaves", type=int, default=1_000_000, help="branch-and-bound leaf budget")
    p.add_argument("--min-width", type=float, default=1e-6, help="smallest box width relative to the start box")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="storagecert", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("casestudy", help="write the room-ring network config")
    p.add_argument("--rooms", type=int, default=200)
    p.add_argument("--coupling", choices=["independent", "shared"], default="independent")
    p.add_argument("--out", required=True)
    p.add_argument("--published-certificates", metavar="PATH", help="also write the published certificates")
    p.set_defaults(func=cmd_casestudy)

    p = sub.add_parser("synthesize", help="search for storage certificates")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subsystem", type=int)
    p.add_argument("--degree", type=int, default=4)
    p.add_argument("--controller-degree", type=int, default=1)
    p.add_argument("--kappas", type=float, nargs="+", default=[0.90, 0.91, 0.92, 0.93, 0.94, 0.95])
    p.add_argument("--supply", action="append", help="supply matrix as JSON, repeatable")
    p.add_argument("--lam-max", type=float, default=1000.0)
    p.add_argument("--psi-max", type=float, default=1000.0)
    p.add_argument("--gap", type=float, default=1e-2)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--allow-negative", action="store_true", help="do not require B >= 0 on X")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")
    _common_budget(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("verify", help="check storage-certificate conditions")
    p.add_argument("--config", required=True)
    p.add_argument("--certs", required=True)
    p.add_argument("--conditions", default=",".join(CSC_CONDITIONS))
    p.add_argument("--falsify", type=int, default=0, metavar="N", help="also report sampled minima")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _common_budget(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compose", help="compose subsystem certificates into a network certificate")
    p.add_argument("--config", required=True)
    p.add_argument("--certs", required=True)
    p.add_argument("--mu", type=float, nargs="+")
    p.add_argument("--method", choices=["auto", "eigen", "gershgorin"], default="auto")
    p.add_argument("--direct", action="store_true", help="also check the network certificate directly")
    p.add_argument("--tol-direct", type=float, default=1e-5)
    p.add_argument("--horizon", type=int)
    p.add_argument("--out")
    _common_budget(p)
    p.set_defaults(func=cmd_compose)
    p.set_defaults(tol=1e-9)

    p = sub.add_parser("bound", help="finite-horizon violation bound")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--psi", type=float, required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("simulate", help="Monte Carlo closed-loop simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--certs", required=True, help="certificate file supplying the controllers")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--event", choices=["product", "any"], default="product")
    p.add_argument("--coupling", choices=["independent", "shared"])
    p.add_argument("--no-clamp", action="store_true")
    p.add_argument("--delta", type=float, help="bound to compare against")
    p.add_argument("--track", type=int, nargs="+")
    p.add_argument("--band", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--csv")
    p.add_argument("--plot")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export-sos", help="write the SOS program as text")
    p.add_argument("--config", required=True)
    p.add_argument("--subsystem", type=int, default=0)
    p.add_argument("--degree", type=int, default=4)
    p.add_argument("--controller-degree", type=int, default=1)
    p.add_argument("--multiplier-degree", type=int)
    p.add_argument("--kappas", type=float, nargs="+", default=[0.90, 0.91, 0.92, 0.93, 0.94, 0.95])
    p.add_argument("--supply")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_sos)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    log.handlers[:] = [handler]
    log.propagate = False
    log.setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ModelError, CertificateError, SimulationError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except CompositionError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUTED
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
