"""Seeded Monte Carlo simulation of the interconnected closed loop."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import beta

from .certify import StorageCertificate
from .model import Network, Subsystem
from .poly import Polynomial
from .rng import Streams, child_seeds

EVENTS = ("product", "any")


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings.

    ``unsafe_event`` selects what counts as a violation: ``"product"`` means
    every subsystem is inside its unsafe set at the same step (the unsafe set
    of the network certificate), ``"any"`` means at least one subsystem is.
    Both are always counted; this flag picks the headline number.
    """

    seed: int = 0
    trials: int = 1000
    horizon: int = 100
    initial: str = "uniform"
    initial_point: tuple[float, ...] | None = None
    initial_mode: int = 0
    mode_coupling: str | None = None
    clamp: bool = True
    record: str = "flags"
    track: tuple[int, ...] | None = None
    unsafe_event: str = "product"
    chunk: int = 250
    threads: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise SimulationError("trials must be >= 1")
        if self.horizon < 1:
            raise SimulationError("horizon must be >= 1")
        if self.initial not in ("uniform", "fixed"):
            raise SimulationError("initial must be 'uniform' or 'fixed'")
        if self.initial == "fixed" and self.initial_point is None:
            raise SimulationError("a fixed initial policy needs initial_point")
        if self.record not in ("flags", "full"):
            raise SimulationError("record must be 'flags' or 'full'")
        if self.unsafe_event not in EVENTS:
            raise SimulationError(f"unsafe_event must be one of {EVENTS}")
        if self.mode_coupling not in (None, "independent", "shared"):
            raise SimulationError("mode_coupling override must be independent or shared")


@dataclass
class TrialResult:
    trial: int
    unsafe: bool
    first_violation: int | None
    unsafe_any: bool
    first_any: int | None
    clamp_events: int
    states: np.ndarray | None = None
    modes: np.ndarray | None = None


@dataclass
class SimSummary:
    trials: int
    violations: int
    p_hat: float
    ci_low: float
    ci_high: float
    delta_bound: float | None
    clamp_events: int
    event: str
    violations_product: int
    violations_any: int
    mode_coupling: str
    seed: int
    horizon: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SimRun:
    results: list[TrialResult]
    summary: SimSummary
    tracked: tuple[int, ...]
    config: SimConfig


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Exact binomial confidence interval by beta-quantile inversion."""
    if n < 1 or not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n and n >= 1")
    a = 1 - level
    lo = 0.0 if k == 0 else float(beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(beta.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


def controllers_from_certificates(cscs: Sequence[StorageCertificate]) -> list[tuple[tuple[Polynomial, ...], ...]]:
    return [tuple(m.controller for m in c.modes) for c in cscs]


@dataclass
class _Group:
    sub: Subsystem
    members: np.ndarray
    dyn: list
    ctl: list


def _groups(net: Network, controllers) -> list[_Group]:
    if len(controllers) != net.size:
        raise SimulationError(f"need controllers for {net.size} subsystems, got {len(controllers)}")
    keyed: dict = {}
    for i, (s, c) in enumerate(zip(net.subsystems, controllers)):
        if len(c) != s.modes:
            raise SimulationError(f"subsystem {i}: controller given for {len(c)} modes, expected {s.modes}")
        for p, cp in enumerate(c):
            if len(cp) != s.m:
                raise SimulationError(f"subsystem {i} mode {p}: expected {s.m} controller entries")
        keyed.setdefault((s, tuple(c)), []).append(i)
    out = []
    for (s, c), idx in keyed.items():
        names = s.state_vars + s.input_vars + s.dist_vars + s.noise_vars
        dyn = [[f.compile(names) for f in s.dynamics[p]] for p in range(s.modes)]
        ctl = [[u.compile(s.state_vars) for u in c[p]] for p in range(s.modes)]
        out.append(_Group(s, np.array(idx), dyn, ctl))
    return out


def _in_region(region, pts: np.ndarray) -> np.ndarray:
    inside = np.zeros(len(pts), dtype=bool)
    for b in region:
        lo, hi = np.asarray(b.lo), np.asarray(b.hi)
        inside |= np.all((pts >= lo) & (pts <= hi), axis=1)
    return inside


class _Layout:
    def __init__(self, net: Network):
        self.x_off = net.state_offsets()
        self.y_off = net.output_offsets()
        self.w_off = net.dist_offsets()

    def cols(self, off, members, width):
        return np.array([[off[i] + j for j in range(width)] for i in members], dtype=int).reshape(len(members), width)


def _run_chunk(net: Network, groups: list[_Group], cfg: SimConfig, coupling: str, start: int, count: int,
               tracked: tuple[int, ...]):
    N = net.size
    S = N + (1 if coupling == "shared" else 0)
    lay = _Layout(net)
    trials = np.arange(start, start + count)
    seeds = child_seeds(cfg.seed, np.repeat(trials, S), np.tile(np.arange(S), count))
    rng = Streams(seeds)
    sid = (np.arange(count)[:, None] * S + np.arange(S)[None, :])  # (count, S)

    X = np.zeros((count, lay.x_off[-1]))
    modes = np.full((count, N), cfg.initial_mode, dtype=int)
    for g in groups:
        if cfg.initial_mode >= g.sub.modes:
            raise SimulationError(f"initial mode {cfg.initial_mode} undefined for a subsystem")
        cols = lay.cols(lay.x_off, g.members, g.sub.n)
        if cfg.initial == "fixed":
            pt = np.asarray(cfg.initial_point, float)
            for k, i in enumerate(g.members):
                X[:, cols[k]] = pt[lay.x_off[i]:lay.x_off[i + 1]] if len(pt) == lay.x_off[-1] else pt
        else:
            lo, w = np.asarray(g.sub.X0.lo), g.sub.X0.widths()
            for j in range(g.sub.n):
                u = rng.uniform(sid[:, g.members].ravel()).reshape(count, len(g.members))
                X[:, cols[:, j]] = lo[j] + u * w[j]

    T = cfg.horizon
    first_prod = np.full(count, -1)
    first_any = np.full(count, -1)
    clamps = np.zeros(count, dtype=np.int64)
    full = cfg.record == "full"
    tcols = np.concatenate([np.arange(lay.x_off[i], lay.x_off[i + 1]) for i in tracked]) if tracked else np.zeros(0, int)
    traj = np.empty((count, T + 1, len(tcols))) if full else None
    mtraj = np.empty((count, T + 1, len(tracked)), dtype=np.int8) if full else None
    M = net.M

    def check(k):
        allin = np.ones(count, dtype=bool)
        anyin = np.zeros(count, dtype=bool)
        for g in groups:
            cols = lay.cols(lay.x_off, g.members, g.sub.n)
            pts = X[:, cols].reshape(-1, g.sub.n)
            ins = _in_region(g.sub.Xu, pts).reshape(count, len(g.members))
            allin &= ins.all(axis=1)
            anyin |= ins.any(axis=1)
        first_prod[(first_prod < 0) & allin] = k
        first_any[(first_any < 0) & anyin] = k

    for k in range(T + 1):
        check(k)
        if full:
            traj[:, k] = X[:, tcols]
            mtraj[:, k] = modes[:, list(tracked)]
        if k == T:
            break
        # outputs and disturbances
        Y = np.zeros((count, lay.y_off[-1]))
        for g in groups:
            xc = lay.cols(lay.x_off, g.members, g.sub.n)
            yc = lay.cols(lay.y_off, g.members, g.sub.q)
            pts = X[:, xc].reshape(-1, g.sub.n)
            names = g.sub.state_vars
            for j, h in enumerate(g.sub.h):
                Y[:, yc[:, j]] = h.compile(names)(pts).reshape(count, len(g.members))
        Wd = np.asarray((M @ Y.T).T) if M.nnz else np.zeros((count, lay.w_off[-1]))
        Xn = np.empty_like(X)
        for g in groups:
            s = g.sub
            k_mem = len(g.members)
            xc = lay.cols(lay.x_off, g.members, s.n)
            pts = X[:, xc].reshape(-1, s.n)
            wpts = Wd[:, lay.cols(lay.w_off, g.members, s.p)].reshape(-1, s.p) if s.p else np.zeros((len(pts), 0))
            pm = modes[:, g.members].ravel()
            nu = np.zeros((len(pts), s.m))
            for p in range(s.modes):
                sel = pm == p
                if sel.any():
                    for j, c in enumerate(g.ctl[p]):
                        nu[sel, j] = c(pts[sel])
            if cfg.clamp and s.m:
                lo, hi = np.asarray(s.U.lo), np.asarray(s.U.hi)
                clipped = np.clip(nu, lo, hi)
                changed = np.any(clipped != nu, axis=1).reshape(count, k_mem)
                clamps += changed.sum(axis=1)
                nu = clipped
            streams = sid[:, g.members].ravel()
            sig = np.zeros((len(pts), s.noise))
            for j in range(s.noise):
                sig[:, j] = rng.normal(streams)
            arg = np.hstack([pts, nu, wpts, sig])
            nxt = np.empty_like(pts)
            for p in range(s.modes):
                sel = pm == p
                if sel.any():
                    for j, f in enumerate(g.dyn[p]):
                        nxt[sel, j] = f(arg[sel])
            Xn[:, xc] = nxt.reshape(count, k_mem, s.n)
        X = Xn
        # next modes
        if coupling == "shared":
            u = rng.uniform(sid[:, N])
            P = net.subsystems[0].chain.matrix()
            cum = np.cumsum(P[modes[:, 0]], axis=1)
            nm = np.minimum((u[:, None] >= cum).sum(axis=1), P.shape[0] - 1)
            modes = np.repeat(nm[:, None], N, axis=1)
        else:
            for g in groups:
                P = g.sub.chain.matrix()
                u = rng.uniform(sid[:, g.members].ravel())
                cur = modes[:, g.members].ravel()
                cum = np.cumsum(P[cur], axis=1)
                nm = np.minimum((u[:, None] >= cum).sum(axis=1), P.shape[0] - 1)
                modes[:, g.members] = nm.reshape(count, len(g.members))

    out = []
    for t in range(count):
        out.append(TrialResult(
            int(trials[t]), bool(first_prod[t] >= 0), int(first_prod[t]) if first_prod[t] >= 0 else None,
            bool(first_any[t] >= 0), int(first_any[t]) if first_any[t] >= 0 else None, int(clamps[t]),
            traj[t] if full else None, mtraj[t] if full else None))
    return out


def simulate(net: Network, controllers, cfg: SimConfig, delta_bound: float | None = None) -> SimRun:
    """Run cfg.trials closed-loop trials over steps 0..T and summarise.

    Per step: check the unsafe sets, compute y = h(x) and w = M y, evaluate
    each subsystem's mode controller (clamped to U when enabled), draw the
    noise, advance the state and sample the next modes. Trial t only uses
    streams seeded from (seed, t, stream), so chunking and threading do not
    change any result.
    """
    coupling = cfg.mode_coupling or net.mode_coupling
    if coupling == "shared" and len({s.chain for s in net.subsystems}) > 1:
        raise SimulationError("shared coupling requires identical transition matrices")
    groups = _groups(net, controllers)
    tracked = tuple(range(net.size)) if cfg.track is None else tuple(cfg.track)
    if any(not 0 <= i < net.size for i in tracked):
        raise SimulationError("tracked subsystem index out of range")
    starts = list(range(0, cfg.trials, cfg.chunk))
    jobs = [(s, min(cfg.chunk, cfg.trials - s)) for s in starts]
    if cfg.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            parts = list(pool.map(lambda j: _run_chunk(net, groups, cfg, coupling, j[0], j[1], tracked), jobs))
    else:
        parts = [_run_chunk(net, groups, cfg, coupling, s, c, tracked) for s, c in jobs]
    results = [r for part in parts for r in part]
    n_prod = sum(r.unsafe for r in results)
    n_any = sum(r.unsafe_any for r in results)
    k = n_prod if cfg.unsafe_event == "product" else n_any
    lo, hi = clopper_pearson(k, cfg.trials)
    summary = SimSummary(cfg.trials, k, k / cfg.trials, lo, hi, delta_bound, sum(r.clamp_events for r in results),
                         cfg.unsafe_event, n_prod, n_any, coupling, cfg.seed, cfg.horizon)
    return SimRun(results, summary, tracked, cfg)


def estimate_violation(net: Network, controllers, cfg: SimConfig, level: float = 0.95) -> dict:
    run = simulate(net, controllers, cfg)
    k, n = run.summary.violations, run.summary.trials
    lo, hi = clopper_pearson(k, n, level)
    return {"p_hat": k / n, "ci_low": lo, "ci_high": hi, "violations": k, "trials": n, "level": level}


def fraction_within(run: SimRun, subsystem: int, lo: float, hi: float) -> float:
    """Share of trials whose recorded trajectory of one subsystem stays in [lo, hi]."""
    if run.config.record != "full":
        raise SimulationError("trajectories were not recorded")
    pos = run.tracked.index(subsystem)
    ok = [np.all((r.states[:, pos] >= lo) & (r.states[:, pos] <= hi)) for r in run.results]
    return float(np.mean(ok))


def export_trajectories(run: SimRun, path, net: Network | None = None, manifest: dict | None = None) -> int:
    """CSV rows (trial, step, subsystem, mode, state...) for every tracked subsystem; returns the row count."""
    if run.config.record != "full":
        raise SimulationError("trajectory export needs record='full'")
    nmax = 1
    if net is not None:
        nmax = max((net.subsystems[i].n for i in run.tracked), default=1)
    elif run.results:
        nmax = max(1, run.results[0].states.shape[1] // max(1, len(run.tracked)))
    widths = [net.subsystems[i].n for i in run.tracked] if net is not None else [nmax] * len(run.tracked)
    offs = np.cumsum([0] + widths)
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if manifest is not None:
            fh.write("# manifest " + json.dumps(manifest, sort_keys=True) + "\n")
        wr = csv.writer(fh)
        wr.writerow(["trial", "step", "subsystem", "mode"] + [f"x{j + 1}" for j in range(nmax)])
        for r in run.results:
            for k in range(r.states.shape[0]):
                for pos, i in enumerate(run.tracked):
                    vals = [repr(float(v)) for v in r.states[k, offs[pos]:offs[pos + 1]]]
                    wr.writerow([r.trial, k, i, int(r.modes[k, pos])] + vals + [""] * (nmax - len(vals)))
                    rows += 1
    return rows
