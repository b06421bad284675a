"""Symbolic estimand trees over the observational joint distribution.

An estimand is built from marginals of the observational joint
(:class:`JointMarginal`), sums over finite variable domains (:class:`Sum`),
products, quotients, and the constant :class:`One`.  Expressions are kept at
the variable level; evaluation binds an assignment of values.

Nested sums may rebind a variable that is free (or bound) further out; the
semantics is lexical, with the innermost binding winning.  The pretty
printer disambiguates such shadowed variables with primes, e.g. ``x'``.

The same interior node classes are reused by the derivation machinery with
interventional sentences at the leaves; the walkers here treat any non-``One``
leaf through its ``leaf_vars`` attribute.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .tables import JointTable

__all__ = [
    "One",
    "JointMarginal",
    "Sum",
    "Product",
    "Quotient",
    "ProbExpr",
    "PositivityError",
    "free_vars",
    "evaluate",
    "evaluate_grid",
    "canonicalize",
    "simplify",
    "expr_to_json",
    "expr_from_json",
    "pretty",
]


class PositivityError(ValueError):
    """A quotient denominator evaluated to zero.

    The engine targets strictly positive observational distributions, so a
    zero denominator signals invalid input rather than a computable result.
    The offending (partial) assignment is attached when known.
    """

    def __init__(self, assignment: Mapping[str, int] | None = None):
        self.assignment = dict(assignment) if assignment else {}
        where = f" at {self.assignment}" if self.assignment else ""
        super().__init__(f"denominator is zero{where}")


@dataclass(frozen=True)
class One:
    """The constant 1."""


@dataclass(frozen=True)
class JointMarginal:
    """The observational marginal P(vars), read as a function of an
    assignment of ``vars``."""

    vars: frozenset[str]

    def __init__(self, vars: Iterable[str]):
        object.__setattr__(self, "vars", frozenset(vars))

    @property
    def leaf_vars(self) -> frozenset[str]:
        return self.vars


@dataclass(frozen=True)
class Sum:
    """Sum of ``body`` over the full domains of the ``bound`` variables."""

    bound: frozenset[str]
    body: "ProbExpr"

    def __init__(self, bound: Iterable[str], body: "ProbExpr"):
        object.__setattr__(self, "bound", frozenset(bound))
        object.__setattr__(self, "body", body)


@dataclass(frozen=True)
class Product:
    factors: tuple["ProbExpr", ...]

    def __init__(self, factors: Iterable["ProbExpr"]):
        object.__setattr__(self, "factors", tuple(factors))


@dataclass(frozen=True)
class Quotient:
    num: "ProbExpr"
    den: "ProbExpr"


ProbExpr = One | JointMarginal | Sum | Product | Quotient


# -- structure ----------------------------------------------------------------


def free_vars(e) -> frozenset[str]:
    """Variables whose values the expression depends on."""
    if isinstance(e, One):
        return frozenset()
    if isinstance(e, Sum):
        return free_vars(e.body) - e.bound
    if isinstance(e, Product):
        out: frozenset[str] = frozenset()
        for f in e.factors:
            out |= free_vars(f)
        return out
    if isinstance(e, Quotient):
        return free_vars(e.num) | free_vars(e.den)
    return e.leaf_vars


def map_leaves(e, fn: Callable):
    """Rebuild the tree with ``fn`` applied to every non-``One`` leaf."""
    if isinstance(e, One):
        return e
    if isinstance(e, Sum):
        return Sum(e.bound, map_leaves(e.body, fn))
    if isinstance(e, Product):
        return Product(map_leaves(f, fn) for f in e.factors)
    if isinstance(e, Quotient):
        return Quotient(map_leaves(e.num, fn), map_leaves(e.den, fn))
    return fn(e)


def iter_leaves(e):
    if isinstance(e, One):
        return
    elif isinstance(e, Sum):
        yield from iter_leaves(e.body)
    elif isinstance(e, Product):
        for f in e.factors:
            yield from iter_leaves(f)
    elif isinstance(e, Quotient):
        yield from iter_leaves(e.num)
        yield from iter_leaves(e.den)
    else:
        yield e


# -- evaluation ---------------------------------------------------------------


def evaluate(e, joint: JointTable, assignment: Mapping[str, int]) -> float:
    """Evaluate an estimand at one assignment of its free variables.

    ``joint`` must be the full observational table; summation ranges come
    from its variable domains.
    """
    missing = free_vars(e) - set(assignment)
    if missing:
        raise ValueError(f"assignment is missing variables {sorted(missing)}")
    return _eval_scalar(e, joint, dict(assignment))


def _eval_scalar(e, joint: JointTable, a: dict[str, int]) -> float:
    if isinstance(e, One):
        return 1.0
    if isinstance(e, JointMarginal):
        return joint.prob({v: a[v] for v in e.vars})
    if isinstance(e, Sum):
        bound = sorted(e.bound)
        total = 0.0
        for values in itertools.product(*(range(joint.card(v)) for v in bound)):
            inner = dict(a)
            inner.update(zip(bound, values))
            total += _eval_scalar(e.body, joint, inner)
        return total
    if isinstance(e, Product):
        out = 1.0
        for f in e.factors:
            out *= _eval_scalar(f, joint, a)
        return out
    if isinstance(e, Quotient):
        den = _eval_scalar(e.den, joint, a)
        if den == 0.0:
            raise PositivityError({v: a[v] for v in free_vars(e.den) if v in a})
        return _eval_scalar(e.num, joint, a) / den
    raise TypeError(f"cannot evaluate leaf {e!r} against an observational table")


def evaluate_grid(e, joint: JointTable, free: Sequence[str]) -> np.ndarray:
    """Vectorized evaluation over the full grid of ``free`` assignments.

    Returns an array with one axis per entry of ``free`` (in that order).
    Agrees with :func:`evaluate` pointwise; used by the oracle to keep
    many-model sweeps fast.
    """
    if not free_vars(e) <= set(free):
        raise ValueError("free must cover the expression's free variables")
    env = {v: i for i, v in enumerate(free)}
    shape = tuple(joint.card(v) for v in free)
    leaf = _marginal_leaf_fn(joint)
    out = _eval_nd(e, joint, leaf, env, len(shape))
    return np.broadcast_to(out, shape).copy() if shape else np.asarray(out)


def _marginal_leaf_fn(joint: JointTable):
    def fn(e, env, ndim):
        if not isinstance(e, JointMarginal):
            raise TypeError(f"cannot evaluate leaf {e!r} against an observational table")
        return placed_marginal(joint.marginal(e.vars), joint.marginal_names(e.vars), joint, env, ndim)

    return fn


def placed_marginal(
    arr: np.ndarray,
    order: Sequence[str],
    joint: JointTable,
    env: Mapping[str, int],
    ndim: int,
) -> np.ndarray:
    """Reshape a marginal with axes ``order`` for broadcasting into an
    evaluation grid whose axes are assigned by ``env``."""
    positions = [env[v] for v in order]
    arr = arr.transpose(np.argsort(positions))
    shape = [1] * ndim
    for v in order:
        shape[env[v]] = joint.card(v)
    return arr.reshape(shape)


def _eval_nd(e, joint, leaf_fn, env: dict[str, int], ndim: int) -> np.ndarray:
    if isinstance(e, One):
        return np.ones((1,) * ndim) if ndim else np.float64(1.0)
    if isinstance(e, Sum):
        bound = sorted(e.bound)
        env2 = dict(env)
        for i, v in enumerate(bound):
            env2[v] = ndim + i
        inner_ndim = ndim + len(bound)
        res = np.asarray(_eval_nd(e.body, joint, leaf_fn, env2, inner_ndim))
        if res.ndim < inner_ndim:
            res = res.reshape((1,) * (inner_ndim - res.ndim) + res.shape)
        # A bound variable the body ignores still multiplies by its domain
        # size, so broadcast before reducing.
        want = res.shape[:ndim] + tuple(joint.card(v) for v in bound)
        res = np.broadcast_to(res, want)
        return res.sum(axis=tuple(range(ndim, inner_ndim)))
    if isinstance(e, Product):
        out = np.ones((1,) * ndim) if ndim else np.float64(1.0)
        for f in e.factors:
            out = out * _eval_nd(f, joint, leaf_fn, env, ndim)
        return out
    if isinstance(e, Quotient):
        num = _eval_nd(e.num, joint, leaf_fn, env, ndim)
        den = np.asarray(_eval_nd(e.den, joint, leaf_fn, env, ndim))
        if np.any(den == 0.0):
            idx = np.unravel_index(int(np.argmax(den == 0.0)), den.shape)
            bad = {
                v: int(idx[ax])
                for v, ax in env.items()
                if ax < den.ndim and den.shape[ax] > 1
            }
            raise PositivityError(bad)
        return num / den
    return leaf_fn(e, env, ndim)


# -- normal form ---------------------------------------------------------------


def canonicalize(e):
    """Deterministic normal form preserving evaluation exactly.

    Flattens nested products, drops unit factors and unit denominators,
    merges directly nested sums with disjoint bound sets, unwraps empty
    sums, and orders product factors by a structural key.
    """
    if isinstance(e, One) or not isinstance(e, (Sum, Product, Quotient)):
        return e
    if isinstance(e, Sum):
        body = canonicalize(e.body)
        bound = e.bound
        if not bound:
            return body
        if isinstance(body, Sum) and not (body.bound & bound):
            bound = bound | body.bound
            body = body.body
        return Sum(bound, body)
    if isinstance(e, Product):
        factors = []
        for f in e.factors:
            cf = canonicalize(f)
            if isinstance(cf, Product):
                factors.extend(cf.factors)
            elif not isinstance(cf, One):
                factors.append(cf)
        if not factors:
            return One()
        if len(factors) == 1:
            return factors[0]
        factors.sort(key=_structural_key)
        return Product(factors)
    num, den = canonicalize(e.num), canonicalize(e.den)
    if isinstance(den, One):
        return num
    return Quotient(num, den)


def simplify(e):
    """Optional tidy-up pass: collapse sums over marginal variables and
    cancel syntactically identical quotient factors.

    Evaluation-preserving (covered by property tests); applied to engine
    outputs on top of :func:`canonicalize`.
    """
    e = canonicalize(e)
    if isinstance(e, Sum):
        body = simplify(e.body)
        if isinstance(body, JointMarginal) and e.bound <= body.vars:
            reduced = body.vars - e.bound
            return JointMarginal(reduced) if reduced else One()
        return canonicalize(Sum(e.bound, body))
    if isinstance(e, Product):
        return canonicalize(Product(simplify(f) for f in e.factors))
    if isinstance(e, Quotient):
        num, den = simplify(e.num), simplify(e.den)
        if num == den:
            return One()
        nf = list(num.factors) if isinstance(num, Product) else [num]
        df = list(den.factors) if isinstance(den, Product) else [den]
        for f in list(nf):
            if f in df:
                nf.remove(f)
                df.remove(f)
        num = canonicalize(Product(nf))
        den = canonicalize(Product(df))
        return num if isinstance(den, One) else Quotient(num, den)
    return e


def _structural_key(e) -> str:
    return json.dumps(expr_to_json(e), sort_keys=True)


# -- serialization -------------------------------------------------------------


def expr_to_json(e) -> dict:
    if isinstance(e, One):
        return {"kind": "one"}
    if isinstance(e, JointMarginal):
        return {"kind": "marginal", "vars": sorted(e.vars)}
    if isinstance(e, Sum):
        return {"kind": "sum", "bound": sorted(e.bound), "body": expr_to_json(e.body)}
    if isinstance(e, Product):
        return {"kind": "product", "factors": [expr_to_json(f) for f in e.factors]}
    if isinstance(e, Quotient):
        return {"kind": "quotient", "num": expr_to_json(e.num), "den": expr_to_json(e.den)}
    return e.to_json()


def expr_from_json(data: Mapping):
    kind = data["kind"]
    if kind == "one":
        return One()
    if kind == "marginal":
        return JointMarginal(data["vars"])
    if kind == "sum":
        return Sum(data["bound"], expr_from_json(data["body"]))
    if kind == "product":
        return Product(expr_from_json(f) for f in data["factors"])
    if kind == "quotient":
        return Quotient(expr_from_json(data["num"]), expr_from_json(data["den"]))
    if kind == "sentence":
        # Resolved by the derivation module; imported lazily to keep this
        # module free of that dependency.
        from .docalc import DoSentence

        return DoSentence(
            frozenset(data["outcome"]), frozenset(data["do"]), frozenset(data["given"])
        )
    raise ValueError(f"unknown expression kind {kind!r}")


# -- rendering -----------------------------------------------------------------


def pretty(e) -> str:
    """Textbook-style rendering; shadowed bound variables get primes."""
    symbols = {v: v.lower() for v in free_vars(e)}
    return _render(e, symbols)


def _fresh(sym: str, taken) -> str:
    while sym in taken:
        sym += "'"
    return sym


def _render(e, symbols: dict[str, str]) -> str:
    if isinstance(e, One):
        return "1"
    if isinstance(e, JointMarginal):
        return "P(" + ", ".join(symbols[v] for v in sorted(e.vars)) + ")"
    if isinstance(e, Sum):
        inner = dict(symbols)
        taken = set(symbols.values())
        syms = []
        for v in sorted(e.bound):
            s = _fresh(v.lower(), taken)
            taken.add(s)
            inner[v] = s
            syms.append(s)
        return "Σ_{" + ",".join(syms) + "} " + _wrap(e.body, inner, atom_ok=True)
    if isinstance(e, Product):
        return "·".join(_wrap(f, symbols) for f in e.factors)
    if isinstance(e, Quotient):
        return _wrap(e.num, symbols) + "/" + _wrap(e.den, symbols)
    if hasattr(e, "render"):
        return e.render(symbols)
    return repr(e)


def _wrap(e, symbols, atom_ok: bool = False) -> str:
    text = _render(e, symbols)
    if isinstance(e, (Sum, Quotient)) or (isinstance(e, Product) and not atom_ok):
        return "(" + text + ")"
    return text
