"""Sparse multivariate polynomials over named, role-tagged variables.

Polynomials are immutable maps from exponent tuples to float coefficients.
The text form used in config files is a plain arithmetic expression such as
``0.00242*x1^4 - 0.091*x1^3 + 3.1329`` (parentheses and ``**`` accepted on
input; output is always a flat sum of ``coeff * var^e`` terms).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

ROLES = ("state", "input", "disturbance", "noise")
ZERO_TOL = 1e-15

_ROLE_PREFIX = (("sigma", "noise"), ("nu", "input"), ("w", "disturbance"), ("x", "state"))


class PolynomialError(ValueError):
    pass


def role_of(name: str) -> str:
    """Infer a variable's role from its conventional name (x1, nu1, w1, sigma1)."""
    base = name.split("_", 1)[0]
    for prefix, role in _ROLE_PREFIX:
        if re.fullmatch(prefix + r"\d+", base):
            return role
    raise PolynomialError(f"cannot infer role of variable {name!r}")


@dataclass(frozen=True)
class VarSpace:
    names: tuple[str, ...]
    roles: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) != len(self.roles):
            raise PolynomialError("names and roles differ in length")
        if len(set(self.names)) != len(self.names):
            raise PolynomialError(f"duplicate variable names in {self.names}")
        for r in self.roles:
            if r not in ROLES:
                raise PolynomialError(f"unknown role {r!r}")

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "VarSpace":
        names = tuple(names)
        return cls(names, tuple(role_of(n) for n in names))

    @property
    def dim(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise PolynomialError(f"variable {name!r} not in space {self.names}") from None

    def role(self, name: str) -> str:
        return self.roles[self.index(name)]

    def with_role(self, role: str) -> tuple[str, ...]:
        return tuple(n for n, r in zip(self.names, self.roles) if r == role)

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def union(self, other: "VarSpace") -> "VarSpace":
        names, roles = list(self.names), list(self.roles)
        for n, r in zip(other.names, other.roles):
            if n in self.names:
                if self.role(n) != r:
                    raise PolynomialError(f"variable {n!r} has conflicting roles")
                continue
            names.append(n)
            roles.append(r)
        return VarSpace(tuple(names), tuple(roles))


def _normalized(terms: Mapping[tuple[int, ...], float]) -> dict[tuple[int, ...], float]:
    return {e: float(c) for e, c in terms.items() if abs(c) >= ZERO_TOL}


class Polynomial:
    """Immutable sparse polynomial; ``terms`` maps exponent tuples to coefficients."""

    __slots__ = ("space", "_terms", "_hash")

    def __init__(self, space: VarSpace, terms: Mapping[tuple[int, ...], float] | None = None):
        terms = _normalized(terms or {})
        for e in terms:
            if len(e) != space.dim or any(k < 0 for k in e):
                raise PolynomialError(f"bad exponent vector {e} for space of dim {space.dim}")
        self.space = space
        self._terms = MappingProxyType(terms)
        self._hash = None

    # construction helpers

    @classmethod
    def constant(cls, space: VarSpace, c: float) -> "Polynomial":
        return cls(space, {(0,) * space.dim: c})

    @classmethod
    def var(cls, space: VarSpace, name: str) -> "Polynomial":
        e = [0] * space.dim
        e[space.index(name)] = 1
        return cls(space, {tuple(e): 1.0})

    @classmethod
    def zero(cls, space: VarSpace) -> "Polynomial":
        return cls(space, {})

    @property
    def terms(self) -> Mapping[tuple[int, ...], float]:
        return self._terms

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self._terms), default=0)

    def degree_in(self, names: Iterable[str]) -> int:
        idx = [self.space.index(n) for n in names]
        return max((sum(e[i] for i in idx) for e in self._terms), default=0)

    def free_vars(self) -> tuple[str, ...]:
        used = set()
        for e in self._terms:
            used.update(i for i, k in enumerate(e) if k)
        return tuple(n for i, n in enumerate(self.space.names) if i in used)

    def constant_term(self) -> float:
        return self._terms.get((0,) * self.space.dim, 0.0)

    # arithmetic

    def _check(self, other: "Polynomial"):
        if self.space != other.space:
            raise PolynomialError(f"varspace mismatch: {self.space.names} vs {other.space.names}")

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.space, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for e, c in other._terms.items():
            out[e] = out.get(e, 0.0) + c
        return Polynomial(self.space, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.space, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, c: float) -> "Polynomial":
        return Polynomial(self.space, {e: c * v for e, v in self._terms.items()})

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[tuple[int, ...], float] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Polynomial(self.space, out)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Polynomial":
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise PolynomialError("power must be a non-negative integer")
        result = Polynomial.constant(self.space, 1.0)
        base = self
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.space == other.space and dict(self._terms) == dict(other._terms)

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.space, frozenset(self._terms.items())))
        return self._hash

    def allclose(self, other: "Polynomial", atol: float = 1e-12, rtol: float = 0.0) -> bool:
        self._check(other)
        keys = set(self._terms) | set(other._terms)
        for e in keys:
            a, b = self._terms.get(e, 0.0), other._terms.get(e, 0.0)
            if abs(a - b) > atol + rtol * max(abs(a), abs(b)):
                return False
        return True

    # evaluation

    def eval(self, point: Sequence[float] | Mapping[str, float]) -> float:
        """Evaluate at a point given positionally (space order) or by name."""
        if isinstance(point, Mapping):
            pt = [0.0] * self.space.dim
            needed = set(self.free_vars())
            for name in needed:
                if name not in point:
                    raise PolynomialError(f"missing value for {name!r}")
            for name, v in point.items():
                if name in self.space:
                    pt[self.space.index(name)] = float(v)
        else:
            pt = [float(v) for v in point]
            if len(pt) != self.space.dim:
                raise PolynomialError(f"point has length {len(pt)}, expected {self.space.dim}")
        total = 0.0
        for e, c in self._terms.items():
            term = c
            for v, k in zip(pt, e):
                if k:
                    term *= v ** k
            total += term
        return total

    def compile(self, names: Sequence[str] | None = None) -> "CompiledPoly":
        """Dense exponent/coefficient arrays over ``names`` for vectorized use."""
        names = tuple(self.space.names if names is None else names)
        idx = [self.space.index(n) for n in names]
        free = set(self.free_vars())
        missing = free - set(names)
        if missing:
            raise PolynomialError(f"variables {sorted(missing)} not covered by {names}")
        exps = np.array([[e[i] for i in idx] for e in self._terms], dtype=np.int64).reshape(-1, len(names))
        coeffs = np.array(list(self._terms.values()), dtype=float)
        return CompiledPoly(names, exps, coeffs)

    # algebra

    def substitute(self, bindings: Mapping[str, "Polynomial"], target: VarSpace | None = None) -> "Polynomial":
        """Compose: replace each bound variable by a polynomial in ``target``.

        Unbound variables pass through and must exist in ``target`` with the
        same role.
        """
        if target is None:
            spaces = {b.space for b in bindings.values()}
            if len(spaces) > 1:
                raise PolynomialError("bindings live in different varspaces")
            target = spaces.pop() if spaces else self.space
        for name, b in bindings.items():
            self.space.index(name)
            if b.space != target:
                raise PolynomialError(f"binding for {name!r} is not in the target space")
        images = []
        for name, role in zip(self.space.names, self.space.roles):
            if name in bindings:
                images.append(bindings[name])
            else:
                if name not in target or target.role(name) != role:
                    if any(e[self.space.index(name)] for e in self._terms):
                        raise PolynomialError(f"unbound variable {name!r} has no counterpart in target")
                    images.append(None)
                else:
                    images.append(Polynomial.var(target, name))
        power_cache: dict[tuple[int, int], Polynomial] = {}

        def power(i: int, k: int) -> Polynomial:
            key = (i, k)
            if key not in power_cache:
                power_cache[key] = images[i] if k == 1 else power(i, k - 1) * images[i]
            return power_cache[key]

        out: dict[tuple[int, ...], float] = {}
        one = Polynomial.constant(target, 1.0)
        for e, c in self._terms.items():
            term = one
            for i, k in enumerate(e):
                if k:
                    term = term * power(i, k)
            for te, tc in term._terms.items():
                out[te] = out.get(te, 0.0) + c * tc
        return Polynomial(target, out)

    def embed(self, target: VarSpace, rename: Mapping[str, str] | None = None) -> "Polynomial":
        """Re-express in a larger space, optionally renaming variables."""
        rename = rename or {}
        idx = []
        for n in self.space.names:
            t = rename.get(n, n)
            idx.append(target.index(t) if t in target else None)
        out = {}
        for e, c in self._terms.items():
            te = [0] * target.dim
            for i, k in enumerate(e):
                if k:
                    if idx[i] is None:
                        raise PolynomialError(f"variable {self.space.names[i]!r} missing in target")
                    te[idx[i]] += k
            te = tuple(te)
            out[te] = out.get(te, 0.0) + c
        return Polynomial(target, out)

    def derivative(self, name: str) -> "Polynomial":
        i = self.space.index(name)
        out = {}
        for e, c in self._terms.items():
            if e[i]:
                ne = list(e)
                ne[i] -= 1
                out[tuple(ne)] = out.get(tuple(ne), 0.0) + c * e[i]
        return Polynomial(self.space, out)

    # text form

    def to_text(self) -> str:
        if not self._terms:
            return "0"

        def key(item):
            e, _ = item
            return (-sum(e), tuple(-k for k in e))

        parts = []
        for e, c in sorted(self._terms.items(), key=key):
            factors = []
            for n, k in zip(self.space.names, e):
                if k == 1:
                    factors.append(n)
                elif k > 1:
                    factors.append(f"{n}^{k}")
            mag = abs(c)
            if factors:
                body = "*".join(factors) if mag == 1.0 else f"{mag!r}*" + "*".join(factors)
            else:
                body = repr(mag)
            sign = "-" if c < 0 else "+"
            parts.append((sign, body))
        first_sign, first = parts[0]
        text = ("-" if first_sign == "-" else "") + first
        for sign, body in parts[1:]:
            text += f" {sign} {body}"
        return text

    def __str__(self):
        return self.to_text()

    def __repr__(self):
        return f"Polynomial({self.to_text()!r})"


@dataclass(frozen=True)
class CompiledPoly:
    names: tuple[str, ...]
    exps: np.ndarray
    coeffs: np.ndarray

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at an (..., n) array of points."""
        points = np.asarray(points, dtype=float)
        if points.shape[-1] != len(self.names):
            raise PolynomialError(f"points have {points.shape[-1]} columns, expected {len(self.names)}")
        if len(self.coeffs) == 0:
            return np.zeros(points.shape[:-1])
        out = np.zeros(points.shape[:-1] + (len(self.coeffs),))
        out[...] = self.coeffs
        for j in range(len(self.names)):
            col = self.exps[:, j]
            if col.any():
                out *= points[..., j, None] ** col
        return out.sum(axis=-1)


# Gaussian moments ------------------------------------------------------------

def normal_moment(k: int) -> float:
    """E[Z^k] for a standard normal Z: 0 for odd k, (k-1)!! for even k."""
    if k % 2:
        return 0.0
    return float(math.prod(range(k - 1, 0, -2))) if k else 1.0


def gaussian_expectation(p: Polynomial, noise_vars: Iterable[str] | None = None) -> Polynomial:
    """Integrate out i.i.d. standard normal noise variables.

    The result lives in the same space with zero exponents on the noise
    variables.
    """
    if noise_vars is None:
        noise_vars = p.space.with_role("noise")
    idx = []
    for n in noise_vars:
        if p.space.role(n) != "noise":
            raise PolynomialError(f"{n!r} is not a noise variable")
        idx.append(p.space.index(n))
    out: dict[tuple[int, ...], float] = {}
    for e, c in p.terms.items():
        m = 1.0
        ne = list(e)
        for i in idx:
            m *= normal_moment(e[i])
            ne[i] = 0
            if m == 0.0:
                break
        if m:
            ne = tuple(ne)
            out[ne] = out.get(ne, 0.0) + c * m
    return Polynomial(p.space, out)


# Parsing ---------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_][A-Za-z_0-9]*)|(\*\*|[-+*^()]))")


def _tokenize(text: str) -> list[tuple[str, str]]:
    pos, tokens = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise PolynomialError(f"unexpected character at {pos} in {text!r}")
        num, ident, op = m.groups()
        if num is not None:
            tokens.append(("num", num))
        elif ident is not None:
            tokens.append(("id", ident))
        else:
            tokens.append(("op", "^" if op == "**" else op))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str, space: VarSpace):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.space = space

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, op):
        kind, val = self.take()
        if kind != "op" or val != op:
            raise PolynomialError(f"expected {op!r} in {self.text!r}")

    def parse(self) -> Polynomial:
        if not self.tokens:
            raise PolynomialError("empty polynomial text")
        p = self.expr()
        if self.i != len(self.tokens):
            raise PolynomialError(f"trailing tokens in {self.text!r}")
        return p

    def expr(self):
        kind, val = self.peek()
        sign = 1.0
        if kind == "op" and val in "+-":
            self.take()
            sign = -1.0 if val == "-" else 1.0
        p = self.term().scale(sign)
        while True:
            kind, val = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                t = self.term()
                p = p + t if val == "+" else p - t
            else:
                return p

    def term(self):
        p = self.factor()
        while True:
            kind, val = self.peek()
            if kind == "op" and val == "*":
                self.take()
                p = p * self.factor()
            else:
                return p

    def factor(self):
        base = self.atom()
        kind, val = self.peek()
        if kind == "op" and val == "^":
            self.take()
            kind, val = self.take()
            if kind != "num" or not val.isdigit():
                raise PolynomialError(f"exponent must be a non-negative integer in {self.text!r}")
            base = base ** int(val)
        return base

    def atom(self):
        kind, val = self.take()
        if kind == "num":
            return Polynomial.constant(self.space, float(val))
        if kind == "id":
            if val not in self.space:
                raise PolynomialError(f"unknown variable {val!r} in {self.text!r}")
            return Polynomial.var(self.space, val)
        if kind == "op" and val == "(":
            p = self.expr()
            self.expect(")")
            return p
        if kind == "op" and val == "-":
            return -self.factor()
        raise PolynomialError(f"unexpected token {val!r} in {self.text!r}")


def parse_polynomial(text: str, space: VarSpace) -> Polynomial:
    return _Parser(str(text), space).parse()
