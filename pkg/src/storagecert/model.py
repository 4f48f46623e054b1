"""Switching subsystems, Markov chains and interconnected networks.

Config documents are JSON::

    {
      "subsystems": [
        {"dims": {"n": 1, "m": 1, "p": 1, "q": 1, "noise": 1},
         "pi": [[0.3, 0.7], [0.4, 0.6]],
         "modes": [{"label": "cold", "dynamics": ["0.93*x1 + ..."]}, ...],
         "h": ["x1"],
         "X": [[1, 50]], "X0": [[19.5, 20]],
         "Xu": [[[1, 17]], [[23, 50]]],
         "U": [[0, 1]], "W": [[2, 100]]}
      ],
      "interconnection": [[row, col, value], ...],
      "mode_coupling": "independent"
    }

Subsystem variables are named locally: ``x1..xn`` (state), ``nu1..`` (input),
``w1..`` (disturbance), ``sigma1..`` (noise). Interconnection triplets use
0-based indices into the stacked disturbance vector (rows) and the stacked
output vector (columns).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import scipy.sparse as sp

from .bnb import interval_bound
from .poly import Polynomial, PolynomialError, VarSpace, parse_polynomial
from .regions import Box, Region, RegionError

COUPLINGS = ("independent", "shared")


class ModelError(ValueError):
    """Invalid model data; ``path`` points into the source document."""

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class MarkovChain:
    pi: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        m = len(self.pi)
        if m == 0:
            raise ModelError("transition matrix is empty")
        for i, row in enumerate(self.pi):
            if len(row) != m:
                raise ModelError(f"row {i} has {len(row)} entries, expected {m}")
            if any(v < 0 for v in row):
                raise ModelError(f"row {i} has negative entries")
            if abs(sum(row) - 1.0) > 1e-9:
                raise ModelError(f"non-stochastic row {i}: sums to {sum(row)!r}")

    @classmethod
    def from_matrix(cls, pi: Sequence[Sequence[float]]) -> "MarkovChain":
        return cls(tuple(tuple(float(v) for v in row) for row in pi))

    @property
    def modes(self) -> int:
        return len(self.pi)

    def matrix(self) -> np.ndarray:
        return np.array(self.pi, dtype=float)

    def stationary(self) -> np.ndarray:
        P = self.matrix()
        m = P.shape[0]
        A = np.vstack([P.T - np.eye(m), np.ones(m)])
        b = np.zeros(m + 1)
        b[-1] = 1.0
        return np.linalg.lstsq(A, b, rcond=None)[0]


@dataclass(frozen=True)
class Subsystem:
    n: int
    m: int
    p: int
    q: int
    noise: int
    chain: MarkovChain
    dynamics: tuple[tuple[Polynomial, ...], ...]
    labels: tuple[str, ...]
    h: tuple[Polynomial, ...]
    X: Box
    X0: Box
    Xu: Region
    U: Box
    W: Box

    @property
    def space(self) -> VarSpace:
        return self.dynamics[0][0].space

    @property
    def modes(self) -> int:
        return self.chain.modes

    @property
    def state_vars(self) -> tuple[str, ...]:
        return tuple(f"x{j + 1}" for j in range(self.n))

    @property
    def input_vars(self) -> tuple[str, ...]:
        return tuple(f"nu{j + 1}" for j in range(self.m))

    @property
    def dist_vars(self) -> tuple[str, ...]:
        return tuple(f"w{j + 1}" for j in range(self.p))

    @property
    def noise_vars(self) -> tuple[str, ...]:
        return tuple(f"sigma{j + 1}" for j in range(self.noise))


def make_space(n: int, m: int, p: int, noise: int) -> VarSpace:
    names = ([f"x{j + 1}" for j in range(n)] + [f"nu{j + 1}" for j in range(m)]
             + [f"w{j + 1}" for j in range(p)] + [f"sigma{j + 1}" for j in range(noise)])
    return VarSpace.from_names(names)


def make_subsystem(*, n, m, p, q, noise, pi, dynamics, h, X, X0, Xu, U, W, labels=None, path="$") -> Subsystem:
    """Validate and build a subsystem; polynomials may be given as text."""
    space = make_space(n, m, p, noise)

    def poly(obj, where):
        if isinstance(obj, Polynomial):
            if obj.space != space:
                raise ModelError("polynomial lives in a different varspace", where)
            return obj
        try:
            return parse_polynomial(obj, space)
        except PolynomialError as exc:
            raise ModelError(str(exc), where) from None

    try:
        chain = pi if isinstance(pi, MarkovChain) else MarkovChain.from_matrix(pi)
    except ModelError as exc:
        raise ModelError(str(exc).split(": ", 1)[-1], f"{path}.pi") from None
    except (TypeError, ValueError) as exc:
        raise ModelError(f"bad transition matrix: {exc}", f"{path}.pi") from None
    if len(dynamics) != chain.modes:
        raise ModelError(f"{len(dynamics)} modes given but pi has {chain.modes}", f"{path}.modes")
    dyn = []
    for k, fk in enumerate(dynamics):
        if len(fk) != n:
            raise ModelError(f"dynamics has {len(fk)} components, expected n={n}", f"{path}.modes[{k}].dynamics")
        dyn.append(tuple(poly(f, f"{path}.modes[{k}].dynamics[{j}]") for j, f in enumerate(fk)))
    if len(h) != q:
        raise ModelError(f"output map has {len(h)} components, expected q={q}", f"{path}.h")
    hp = tuple(poly(f, f"{path}.h[{j}]") for j, f in enumerate(h))
    states = set(space.with_role("state"))
    for j, f in enumerate(hp):
        if not set(f.free_vars()) <= states:
            raise ModelError("output map may only depend on the state", f"{path}.h[{j}]")

    sv = tuple(f"x{j + 1}" for j in range(n))

    def box(obj, names, where):
        if isinstance(obj, Box):
            return obj
        try:
            return Box.from_intervals(names, obj)
        except (RegionError, TypeError, ValueError) as exc:
            raise ModelError(str(exc), where) from None

    Xb = box(X, sv, f"{path}.X")
    X0b = box(X0, sv, f"{path}.X0")
    if isinstance(Xu, Region):
        Xur = Xu
    else:
        Xur = Region(tuple(box(b, sv, f"{path}.Xu[{k}]") for k, b in enumerate(Xu)))
    Ub = box(U, tuple(f"nu{j + 1}" for j in range(m)), f"{path}.U")
    Wb = box(W, tuple(f"w{j + 1}" for j in range(p)), f"{path}.W")
    if not Xb.contains_box(X0b):
        raise ModelError("X0 is not contained in X", f"{path}.X0")
    for k, b in enumerate(Xur):
        if not Xb.contains_box(b):
            raise ModelError("unsafe box is not contained in X", f"{path}.Xu[{k}]")
    labels = tuple(labels) if labels else tuple(f"mode{k + 1}" for k in range(chain.modes))
    return Subsystem(n, m, p, q, noise, chain, tuple(dyn), labels, hp, Xb, X0b, Xur, Ub, Wb)


@dataclass(frozen=True)
class Network:
    subsystems: tuple[Subsystem, ...]
    M: sp.csr_matrix = field(compare=False)
    mode_coupling: str = "independent"

    def __post_init__(self):
        if self.mode_coupling not in COUPLINGS:
            raise ModelError(f"mode_coupling must be one of {COUPLINGS}", "$.mode_coupling")
        rows = sum(s.p for s in self.subsystems)
        cols = sum(s.q for s in self.subsystems)
        if self.M.shape != (rows, cols):
            raise ModelError(f"interconnection has shape {self.M.shape}, expected {(rows, cols)}", "$.interconnection")
        if self.mode_coupling == "shared":
            chains = {s.chain for s in self.subsystems}
            if len(chains) > 1:
                raise ModelError("shared mode coupling requires identical transition matrices", "$.mode_coupling")

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (self.subsystems == other.subsystems and self.mode_coupling == other.mode_coupling
                and self.M.shape == other.M.shape and (self.M != other.M).nnz == 0)

    __hash__ = None

    @property
    def size(self) -> int:
        return len(self.subsystems)

    def dist_offsets(self) -> list[int]:
        return list(np.cumsum([0] + [s.p for s in self.subsystems]))

    def output_offsets(self) -> list[int]:
        return list(np.cumsum([0] + [s.q for s in self.subsystems]))

    def state_offsets(self) -> list[int]:
        return list(np.cumsum([0] + [s.n for s in self.subsystems]))


def _box_json(b: Box) -> list:
    return b.intervals()


def subsystem_to_dict(s: Subsystem) -> dict:
    return {
        "dims": {"n": s.n, "m": s.m, "p": s.p, "q": s.q, "noise": s.noise},
        "pi": [list(r) for r in s.chain.pi],
        "modes": [{"label": lab, "dynamics": [f.to_text() for f in fk]} for lab, fk in zip(s.labels, s.dynamics)],
        "h": [f.to_text() for f in s.h],
        "X": _box_json(s.X),
        "X0": _box_json(s.X0),
        "Xu": [_box_json(b) for b in s.Xu],
        "U": _box_json(s.U),
        "W": _box_json(s.W),
    }


def network_to_dict(net: Network) -> dict:
    coo = net.M.tocoo()
    order = np.lexsort((coo.col, coo.row))
    return {
        "subsystems": [subsystem_to_dict(s) for s in net.subsystems],
        "interconnection": [[int(coo.row[k]), int(coo.col[k]), float(coo.data[k])] for k in order],
        "mode_coupling": net.mode_coupling,
    }


def _require(doc: dict, key: str, path: str):
    if not isinstance(doc, dict) or key not in doc:
        raise ModelError(f"missing key {key!r}", path)
    return doc[key]


def subsystem_from_dict(d: dict, path: str) -> Subsystem:
    dims = _require(d, "dims", path)
    try:
        n, m, p, q = (int(dims[k]) for k in ("n", "m", "p", "q"))
    except (KeyError, TypeError, ValueError):
        raise ModelError("dims needs integer n, m, p, q", f"{path}.dims") from None
    modes = _require(d, "modes", path)
    if not isinstance(modes, list) or not modes:
        raise ModelError("modes must be a non-empty array", f"{path}.modes")
    dyn = [_require(md, "dynamics", f"{path}.modes[{k}]") for k, md in enumerate(modes)]
    labels = [md.get("label", f"mode{k + 1}") for k, md in enumerate(modes)]
    noise = dims.get("noise")
    if noise is None:
        noise = 0
        for fk in dyn:
            for f in fk:
                for tok in str(f).replace("*", " ").replace("^", " ").replace("(", " ").replace(")", " ").split():
                    if tok.startswith("sigma") and tok[5:].isdigit():
                        noise = max(noise, int(tok[5:]))
    return make_subsystem(
        n=n, m=m, p=p, q=q, noise=int(noise),
        pi=_require(d, "pi", path), dynamics=dyn, h=_require(d, "h", path),
        X=_require(d, "X", path), X0=_require(d, "X0", path), Xu=_require(d, "Xu", path),
        U=d.get("U", [[0.0, 0.0]] * m), W=d.get("W", [[0.0, 0.0]] * p), labels=labels, path=path,
    )


def load_network(doc: dict | str) -> Network:
    """Validate a config document (dict or JSON text) into a Network."""
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ModelError(f"invalid JSON: {exc}") from None
    subs_doc = _require(doc, "subsystems", "$")
    if not isinstance(subs_doc, list) or not subs_doc:
        raise ModelError("subsystems must be a non-empty array", "$.subsystems")
    subs = tuple(subsystem_from_dict(d, f"$.subsystems[{i}]") for i, d in enumerate(subs_doc))
    rows = sum(s.p for s in subs)
    cols = sum(s.q for s in subs)
    trip = doc.get("interconnection", [])
    r, c, v = [], [], []
    for k, t in enumerate(trip):
        where = f"$.interconnection[{k}]"
        if not isinstance(t, (list, tuple)) or len(t) != 3:
            raise ModelError("triplet must be [row, col, value]", where)
        i, j, val = int(t[0]), int(t[1]), float(t[2])
        if not 0 <= i < rows:
            raise ModelError(f"row {i} out of range for {rows} disturbance components", where)
        if not 0 <= j < cols:
            raise ModelError(f"column {j} out of range for {cols} output components", where)
        r.append(i)
        c.append(j)
        v.append(val)
    M = sp.csr_matrix((v, (r, c)), shape=(rows, cols))
    M.sum_duplicates()
    return Network(subs, M, doc.get("mode_coupling", "independent"))


def load_network_file(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return load_network(fh.read())


@dataclass
class WellPosedReport:
    well_posed: bool
    margins: list[float]
    images: list[list[list[float]]]

    def to_dict(self) -> dict:
        return {"well_posed": self.well_posed, "margins": self.margins, "images": self.images}


def check_well_posed(net: Network, tol: float = 1e-9) -> WellPosedReport:
    """Check that M maps the output images over X into each W.

    Margins are per subsystem: the smallest distance from the propagated
    disturbance enclosure to the boundary of W (negative when it leaks).
    """
    ylo, yhi = [], []
    for s in net.subsystems:
        for f in s.h:
            a, b = interval_bound(f, s.X)
            ylo.append(a)
            yhi.append(b)
    ylo, yhi = np.array(ylo), np.array(yhi)
    Mpos = net.M.maximum(0)
    Mneg = net.M.minimum(0)
    wlo = Mpos @ ylo + Mneg @ yhi
    whi = Mpos @ yhi + Mneg @ ylo
    margins, images = [], []
    off = net.dist_offsets()
    for i, s in enumerate(net.subsystems):
        lo, hi = wlo[off[i]:off[i + 1]], whi[off[i]:off[i + 1]]
        if s.p:
            mg = float(min(np.min(lo - np.array(s.W.lo)), np.min(np.array(s.W.hi) - hi)))
        else:
            mg = float("inf")
        margins.append(mg)
        images.append([[float(a), float(b)] for a, b in zip(lo, hi)])
    scale = 1.0 + max((float(np.max(np.abs(np.concatenate([s.W.lo, s.W.hi])))) for s in net.subsystems if s.p),
                      default=0.0)
    return WellPosedReport(all(m >= -tol * scale for m in margins), margins, images)
