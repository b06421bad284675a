"""Machine-checkable do-calculus derivations.

The identification recursion is compiled into an explicit chain of rewrite
steps on interventional expressions: every ancestral-sum reduction becomes a
schedule of chain-rule, normalize-to-one, and rule-3 moves, and every
component factorization becomes a schedule of chain-rule, rule-2, and rule-3
moves (with factor substitutions carrying nested derivations for the
inductive regrouping).  Rule 1 is never emitted; where its condition holds,
rules 2 and 3 suffice (see :func:`expand_rule1`).

The verifier trusts nothing from the generator: each step's changed
subexpression is located by diffing, the claimed rule instances are rebuilt
from the leaves and re-tested on freshly mutilated graphs, the structural
schemas are re-checked, and each step is numerically spot-verified on
random positive models through the oracle's interventional-sentence
evaluator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .ccomp import c_components, observable_blocks
from .expr import One, PositivityError, Product, Quotient, Sum, free_vars
from .graph import CausalGraph, GraphError
from .ident import (
    EffectTrace,
    IdentResult,
    IdentifyTrace,
    _causal_effect_traced,
)
from .oracle import DoEvaluator, random_model
from .sep import RuleEvidence, RuleInstance, evidence_from_json, rule_applicable

__all__ = [
    "DoSentence",
    "DoExpr",
    "DerivationStep",
    "Derivation",
    "Verdict",
    "derive_effect",
    "expand_rule1",
    "verify_derivation",
    "derivation_to_json",
    "derivation_from_json",
]

RULE2 = "Rule2"
RULE3 = "Rule3"
CHAIN = "ChainRule"
MARGINALIZE = "Marginalize"
NORMALIZE = "NormalizeToOne"
SUBSTITUTE = "FactorSubstitute"


@dataclass(frozen=True)
class DoSentence:
    """An interventional sentence P(outcome | do(interventions), observations).

    The three sets are pairwise disjoint and observable.  A sentence with an
    empty intervention set is an ordinary observational conditional."""

    outcome: frozenset[str]
    do: frozenset[str]
    given: frozenset[str]

    def __post_init__(self):
        for name in ("outcome", "do", "given"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        if (self.outcome & self.do) or (self.outcome & self.given) or (self.do & self.given):
            raise GraphError("sentence parts must be pairwise disjoint")

    @property
    def leaf_vars(self) -> frozenset[str]:
        return self.outcome | self.do | self.given

    def render(self, symbols: Mapping[str, str]) -> str:
        out = ", ".join(symbols[v] for v in sorted(self.outcome))
        conds = []
        if self.do:
            conds.append("do(" + ", ".join(symbols[v] for v in sorted(self.do)) + ")")
        if self.given:
            conds.append(", ".join(symbols[v] for v in sorted(self.given)))
        return f"P({out} | {', '.join(conds)})" if conds else f"P({out})"

    def to_json(self) -> dict:
        return {
            "kind": "sentence",
            "outcome": sorted(self.outcome),
            "do": sorted(self.do),
            "given": sorted(self.given),
        }


DoExpr = DoSentence | One | Sum | Product | Quotient


@dataclass(frozen=True)
class StepParams:
    """Structural parameters of a probability-manipulation step."""

    vars: frozenset[str]
    direction: str


@dataclass(frozen=True)
class Substitution:
    """Justification of a factor substitution: a nested derivation whose
    endpoints are the two sides of the replaced subexpression."""

    derivation: "Derivation"


@dataclass(frozen=True)
class DerivationStep:
    kind: str
    before: DoExpr
    after: DoExpr
    justification: RuleEvidence | StepParams | Substitution


@dataclass(frozen=True)
class Derivation:
    """An ordered chain of justified rewrites.

    For query derivations the first state is the query sentence
    P(s | do(t)) and the last is observational; nested fragments carry
    ``query=None`` and are free-standing equalities."""

    graph: CausalGraph
    query: tuple[frozenset[str], frozenset[str]] | None  # (t, s)
    steps: tuple[DerivationStep, ...]

    @property
    def initial(self) -> DoExpr:
        return self.steps[0].before

    @property
    def final(self) -> DoExpr:
        return self.steps[-1].after


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    step: int | None = None
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.accepted


def observational(e: DoExpr) -> bool:
    from .expr import iter_leaves

    return all(
        isinstance(leaf, DoSentence) and not leaf.do for leaf in iter_leaves(e)
    )


# -- expression paths -----------------------------------------------------------

Path = tuple


def _get(e: DoExpr, path: Path) -> DoExpr:
    for part in path:
        if part == "body":
            e = e.body
        elif part == "num":
            e = e.num
        elif part == "den":
            e = e.den
        elif isinstance(part, tuple) and part[0] == "f":
            e = e.factors[part[1]]
        else:
            raise KeyError(path)
    return e


def _replace(e: DoExpr, path: Path, new: DoExpr) -> DoExpr:
    if not path:
        return new
    head, rest = path[0], path[1:]
    if head == "body":
        return Sum(e.bound, _replace(e.body, rest, new))
    if head == "num":
        return Quotient(_replace(e.num, rest, new), e.den)
    if head == "den":
        return Quotient(e.num, _replace(e.den, rest, new))
    if isinstance(head, tuple) and head[0] == "f":
        i = head[1]
        factors = list(e.factors)
        factors[i] = _replace(factors[i], rest, new)
        return Product(factors)
    raise KeyError(path)


def F(i: int) -> tuple:
    return ("f", i)


class _Writer:
    """Accumulates rewrite steps against a live expression state."""

    def __init__(self, graph: CausalGraph, root: DoExpr):
        self.graph = graph
        self.state = root
        self.steps: list[DerivationStep] = []

    def apply(self, kind: str, path: Path, after_local: DoExpr, justification):
        if isinstance(justification, RuleEvidence) and not justification.holds:
            raise GraphError(
                f"internal error: generated {kind} step whose separation fails"
            )
        new_state = _replace(self.state, path, after_local)
        self.steps.append(
            DerivationStep(kind, self.state, new_state, justification)
        )
        self.state = new_state

    def window(self, kind: str, prod_path: Path, lo: int, hi: int,
               new_factors: tuple, justification):
        node = _get(self.state, prod_path)
        factors = list(node.factors)
        factors[lo:hi] = list(new_factors)
        after = factors[0] if len(factors) == 1 else Product(factors)
        self.apply(kind, prod_path, after, justification)

    def at(self, path: Path) -> DoExpr:
        return _get(self.state, path)


# -- schedule emitters -----------------------------------------------------------


def _q_sentence(g: CausalGraph, scope: frozenset[str]) -> DoSentence:
    n = frozenset(g.observable_names)
    return DoSentence(outcome=scope, do=n - scope, given=frozenset())


def _blocks_within(g: CausalGraph, scope: frozenset[str]) -> list[frozenset[str]]:
    sub = g.latent_subgraph(scope)
    return observable_blocks(c_components(sub), sub)


def _rule(g: CausalGraph, rule: int, x, y, z, w) -> RuleEvidence:
    ev = rule_applicable(
        RuleInstance(rule, frozenset(x), frozenset(y), frozenset(z), frozenset(w), g)
    )
    return ev


def _emit_grouped_factorization(
    w: _Writer, scope: frozenset[str], groups: list[frozenset[str]], path: Path
):
    """Rewrite the factor sentence on ``scope`` into a product of factor
    sentences, one per group (each group a union of confounded components of
    the scope's latent subgraph)."""
    g = w.graph
    if len(groups) <= 1:
        return
    n = frozenset(g.observable_names)
    order = g.topo_order(scope)
    x = order[-1]
    h = scope - {x}
    gx = next(grp for grp in groups if x in grp)
    others = [grp for grp in groups if grp is not gx]
    gx_rest = gx - {x}
    others_union = frozenset().union(*others)

    # Peel the topologically last variable off the joint factor.
    w.apply(
        CHAIN,
        path,
        Product([
            DoSentence(frozenset({x}), n - scope, h),
            DoSentence(h, n - scope, frozenset()),
        ]),
        StepParams(vars=h, direction="split"),
    )
    # Its own factor only needs the variables of its group as observations;
    # the other groups can be held fixed instead.
    w.apply(
        RULE2,
        path + (F(0),),
        DoSentence(frozenset({x}), (n - scope) | others_union, gx_rest),
        _rule(g, 2, x=n - scope, y={x}, z=others_union, w=gx_rest),
    )
    # The remainder is unaffected by intervening on the last variable.
    w.apply(
        RULE3,
        path + (F(1),),
        _q_sentence(g, h),
        _rule(g, 3, x=n - scope, y=h, z={x}, w=()),
    )

    sub_groups = ([gx_rest] if gx_rest else []) + others
    if len(sub_groups) >= 2:
        nested = _grouped_factorization_derivation(g, h, sub_groups)
        final = nested.final
        new_factors = final.factors if isinstance(final, Product) else (final,)
        w.window(SUBSTITUTE, path, 1, 2, tuple(new_factors), Substitution(nested))

    if gx_rest:
        # Reattach the last variable to its own group's factor, wherever the
        # recursion left that factor in the product.
        node = w.at(path)
        idx = node.factors.index(_q_sentence(g, gx_rest))
        w.apply(
            RULE3,
            path + (F(idx),),
            DoSentence(gx_rest, n - gx, frozenset()),
            _rule(g, 3, x=n - gx, y=gx_rest, z={x}, w=()),
        )
        node = w.at(path)
        merged = [_q_sentence(g, gx)] + [
            f for i, f in enumerate(node.factors) if i not in (0, idx)
        ]
        w.apply(
            CHAIN,
            path,
            _normalize_product(merged),
            StepParams(vars=gx_rest, direction="merge"),
        )


def _grouped_factorization_derivation(
    g: CausalGraph, scope: frozenset[str], groups: list[frozenset[str]]
) -> Derivation:
    w = _Writer(g, _q_sentence(g, scope))
    _emit_grouped_factorization(w, scope, groups, ())
    return Derivation(graph=g, query=None, steps=tuple(w.steps))


def _emit_peel(w: _Writer, sum_path: Path, scope: frozenset[str], x: str) -> Path:
    """One forward ancestral reduction: consume the bound variable ``x``
    (topologically last in ``scope``) from the sum around the factor
    sentence on ``scope``.  Returns the path of the reduced sentence."""
    g = w.graph
    n = frozenset(g.observable_names)
    node = w.at(sum_path)
    body_path = sum_path + ("body",)
    rest = scope - {x}
    w.apply(
        CHAIN,
        body_path,
        Product([
            DoSentence(frozenset({x}), n - scope, rest),
            DoSentence(rest, n - scope, frozenset()),
        ]),
        StepParams(vars=rest, direction="split"),
    )
    new_bound = node.bound - {x}
    remainder = DoSentence(rest, n - scope, frozenset())
    after = Sum(new_bound, remainder) if new_bound else remainder
    w.apply(NORMALIZE, sum_path, after, StepParams(vars=frozenset({x}), direction="collapse"))
    leaf_path = sum_path + ("body",) if new_bound else sum_path
    w.apply(
        RULE3,
        leaf_path,
        _q_sentence(g, rest),
        _rule(g, 3, x=n - scope, y=rest, z={x}, w=()),
    )
    return leaf_path


def _emit_expand(w: _Writer, path: Path, scope: frozenset[str],
                 start: frozenset[str]) -> Path:
    """Reverse ancestral reduction: grow the factor sentence on ``start``
    into a nest of sums of the factor sentence on ``scope``.  Returns the
    path of the scope sentence."""
    g = w.graph
    n = frozenset(g.observable_names)
    add = [v for v in g.topo_order(scope) if v not in start]
    cur = start
    cur_path = path
    for x in add:
        grown = cur | {x}
        # Holding x fixed changes nothing for the sentence on cur.
        w.apply(
            RULE3,
            cur_path,
            DoSentence(cur, n - grown, frozenset()),
            _rule(g, 3, x=n - grown, y=cur, z={x}, w=()),
        )
        # Multiply by a conditional that sums to one and fold it in.
        phi = DoSentence(frozenset({x}), n - grown, cur)
        body = Product([phi, DoSentence(cur, n - grown, frozenset())])
        w.apply(
            NORMALIZE,
            cur_path,
            Sum(frozenset({x}), body),
            StepParams(vars=frozenset({x}), direction="introduce"),
        )
        w.apply(
            CHAIN,
            cur_path + ("body",),
            _q_sentence(g, grown),
            StepParams(vars=cur, direction="merge"),
        )
        cur = grown
        cur_path = cur_path + ("body",)
    return cur_path


def _emit_block_to_prefixes(
    w: _Writer,
    scope: frozenset[str],
    block: frozenset[str],
    path: Path,
    found: list,
    prefix_plan,
):
    """Rewrite the factor sentence on ``block`` (one confounded component of
    ``scope``) into quotients of factor sentences on topological prefixes of
    ``scope``.  Each prefix-sentence leaf is appended to ``found`` together
    with ``prefix_plan`` for the caller's worklist."""
    g = w.graph
    n = frozenset(g.observable_names)
    if len(scope) == 1:
        # The block is the one-variable prefix itself.
        found.append((path, prefix_plan))
        return
    order = g.topo_order(scope)
    x = order[-1]
    h = scope - {x}
    if x not in block:
        _emit_block_to_prefixes(w, h, block, path, found, prefix_plan)
        return

    b_rest = block - {x}
    if b_rest:
        w.apply(
            CHAIN,
            path,
            Product([
                DoSentence(frozenset({x}), n - block, b_rest),
                DoSentence(b_rest, n - block, frozenset()),
            ]),
            StepParams(vars=b_rest, direction="split"),
        )
        first, second = path + (F(0),), path + (F(1),)
    else:
        first, second = path, None

    moved = scope - block
    if moved:
        w.apply(
            RULE2,
            first,
            DoSentence(frozenset({x}), n - scope, h),
            _rule(g, 2, x=n - scope, y={x}, z=moved, w=b_rest),
        )
    # Conditional as a ratio of the two adjacent prefix factors.
    num = _q_sentence(g, scope)
    den_raw = DoSentence(h, n - scope, frozenset())
    w.apply(
        CHAIN,
        first,
        Quotient(num, den_raw),
        StepParams(vars=h, direction="quotient"),
    )
    found.append((first + ("num",), prefix_plan))
    den_path = first + ("den",)
    den = _q_sentence(g, h)
    w.apply(RULE3, den_path, den, _rule(g, 3, x=n - scope, y=h, z={x}, w=()))
    found.append((den_path, prefix_plan))

    if second is not None:
        q_rest = _q_sentence(g, b_rest)
        w.apply(
            RULE3,
            second,
            q_rest,
            _rule(g, 3, x=n - block, y=b_rest, z={x}, w=()),
        )
        sub_blocks = [b for b in _blocks_within(g, h) if b <= b_rest]
        assert frozenset().union(*sub_blocks) == b_rest
        if len(sub_blocks) == 1:
            _emit_block_to_prefixes(w, h, b_rest, second, found, prefix_plan)
        else:
            nested = _grouped_factorization_derivation(g, b_rest, sub_blocks)
            final = nested.final
            w.apply(SUBSTITUTE, second, final, Substitution(nested))
            for i, factor in enumerate(final.factors):
                sub = next(b for b in sub_blocks if _q_sentence(g, b) == factor)
                _emit_block_to_prefixes(
                    w, h, sub, second + (F(i),), found, prefix_plan
                )


# -- generator --------------------------------------------------------------------


def _find_pending(e: DoExpr, path: Path = ()) -> tuple[Path, DoSentence] | None:
    """First (depth-first) interventional sentence leaf."""
    if isinstance(e, DoSentence):
        return (path, e) if e.do else None
    if isinstance(e, Sum):
        return _find_pending(e.body, path + ("body",))
    if isinstance(e, Product):
        for i, f in enumerate(e.factors):
            found = _find_pending(f, path + (F(i),))
            if found:
                return found
        return None
    if isinstance(e, Quotient):
        return _find_pending(e.num, path + ("num",)) or _find_pending(
            e.den, path + ("den",)
        )
    return None


@dataclass(frozen=True)
class _IdentPlan:
    """Reduce a component factor through its identification chain."""

    tr: IdentifyTrace


@dataclass(frozen=True)
class _LevelPlan:
    """Factorize the chain's covering set at level ``k`` into prefix ratios."""

    tr: IdentifyTrace
    k: int


@dataclass(frozen=True)
class _PrefixPlan:
    """Expand a prefix factor back over its decomposition scope."""

    tr: IdentifyTrace
    k: int


def derive_effect(
    t: Iterable[str], s: Iterable[str], g: CausalGraph
) -> "Derivation | IdentResult":
    """Compile the identification of P_t(s) into a checkable derivation.

    Mirrors the identification recursion exactly: it returns the
    not-identifiable result in precisely the cases where the estimand
    construction does, and otherwise a derivation from P(s | do(t)) to an
    observational expression, using only rules 2 and 3 plus probability
    manipulations.
    """
    t, s = frozenset(t), frozenset(s)
    if not t:
        raise GraphError("derivations require a nonempty do-set")
    res, trace = _causal_effect_traced(t, s, g)
    if not res.identifiable:
        return res
    g2 = trace.graph
    n = frozenset(g2.observable_names)

    # One reduction fragment per distinct (sentence, plan) pair; repeat
    # occurrences are rewritten by a single substitution step carrying the
    # fragment as its justification, which keeps the main derivation and
    # every fragment small even when the recursion revisits a factor.
    memo: dict[tuple[DoSentence, object], tuple[DoExpr, Derivation]] = {}
    in_progress: set[tuple[DoSentence, object]] = set()

    def run_plan(wr: _Writer, path: Path, plan) -> list[tuple[Path, object]]:
        """Execute one reduction stage; returns worklist items for the
        pending sentences it leaves behind."""
        if isinstance(plan, _IdentPlan):
            tr = plan.tr
            t_z, a_z = tr.levels[-1]
            assert a_z == tr.c
            if t_z == tr.c:
                # The block is its whole component; go straight to the
                # component factorization of the covering scope.
                return run_plan(wr, path, _LevelPlan(tr, len(tr.levels) - 1))
            leaf = _emit_expand(wr, path, t_z, tr.c)
            return [(leaf, _LevelPlan(tr, len(tr.levels) - 1))]
        if isinstance(plan, _LevelPlan):
            tr, k = plan.tr, plan.k
            dec_scope = n if k == 0 else tr.levels[k - 1][1]
            found: list[tuple[Path, object]] = []
            _emit_block_to_prefixes(
                wr, dec_scope, tr.levels[k][0], path, found, _PrefixPlan(tr, k)
            )
            return found
        if isinstance(plan, _PrefixPlan):
            tr, k = plan.tr, plan.k
            dec_scope = n if k == 0 else tr.levels[k - 1][1]
            prefix = wr.at(path).outcome
            leaf = _emit_expand(wr, path, dec_scope, prefix)
            if dec_scope == n:
                return []  # the full-joint sentence is observational
            # The closure set itself expands into its covering block.
            t_prev = tr.levels[k - 1][0]
            leaf = _emit_expand(wr, leaf, t_prev, dec_scope)
            return [(leaf, _LevelPlan(tr, k - 1))]
        raise GraphError(f"internal error: unknown plan {plan!r}")

    def reduce_items(wr: _Writer, items: list[tuple[Path, object]]):
        # Leaf substitution never moves sibling paths, so the recorded
        # worklist positions stay valid throughout.
        for path, plan in items:
            sentence = wr.at(path)
            if not sentence.do:
                continue
            final, fragment = fragment_for(sentence, plan)
            wr.apply(SUBSTITUTE, path, final, Substitution(fragment))

    def fragment_for(sentence: DoSentence, plan) -> tuple[DoExpr, Derivation]:
        key = (sentence, plan)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if key in in_progress:
            raise GraphError(f"internal error: cyclic reduction of {sentence}")
        in_progress.add(key)
        wf = _Writer(g2, sentence)
        reduce_items(wf, run_plan(wf, (), plan))
        in_progress.discard(key)
        if not wf.steps:
            raise GraphError(f"internal error: empty reduction for {sentence}")
        result = (wf.state, Derivation(graph=g2, query=None, steps=tuple(wf.steps)))
        memo[key] = result
        return result

    w = _Writer(g2, DoSentence(outcome=s, do=t, given=frozenset()))
    # Phase A: spread the query over the unfixed observables.
    big = n - t
    if big - s:
        w.apply(
            MARGINALIZE,
            (),
            Sum(big - s, DoSentence(big, t, frozenset())),
            StepParams(vars=big - s, direction="introduce"),
        )
    # Phase B: shrink to the ancestral closure of the outcome, peeling the
    # topologically last surplus variable each time.
    surplus = sorted(big - trace.d, key=g2.topo_order(big).index)
    scope = big
    sum_path: Path = ()
    for x in reversed(surplus):
        _emit_peel(w, sum_path, scope, x)
        scope = scope - {x}
    # Phase C: split the closure factor into its confounded components.
    d_blocks = list(trace.cq.s_blocks)
    q_d = _q_sentence(g2, trace.d)
    pending = _find_pending(w.state)
    if pending is not None and pending[1] == q_d and len(d_blocks) >= 2:
        _emit_grouped_factorization(w, trace.d, d_blocks, pending[0])

    # Phase D: reduce each component factor through its identification
    # chain, sharing one fragment per distinct sentence and plan.
    plan_of = {
        _q_sentence(g2, sb): _IdentPlan(tr)
        for sb, tr in zip(trace.cq.s_blocks, trace.cq.identify_traces)
    }
    while True:
        pending = _find_pending(w.state)
        if pending is None:
            break
        path, sentence = pending
        plan = plan_of.get(sentence)
        if plan is None:
            raise GraphError(f"internal error: unplanned sentence {sentence}")
        reduce_items(w, [(path, plan)])
    return Derivation(graph=g2, query=(t, s), steps=tuple(w.steps))


def expand_rule1(r: RuleInstance) -> tuple[RuleInstance, RuleInstance]:
    """Replace an applicable rule-1 instance by a rule-2 then rule-3 pair.

    Edge deletion only ever separates more, so both replacement instances
    hold whenever the rule-1 condition does; the pair rewrites
    P(y|do(x),z,w) to P(y|do(x),do(z),w) and then to P(y|do(x),w).
    """
    if r.rule != 1:
        raise GraphError("expected a rule-1 instance")
    if not rule_applicable(r).holds:
        raise GraphError("rule 1 is not applicable to this instance")
    two = RuleInstance(2, r.x, r.y, r.z, r.w, r.graph)
    three = RuleInstance(3, r.x, r.y, r.z, r.w, r.graph)
    return two, three


# -- verification -----------------------------------------------------------------


class _Mismatch(Exception):
    pass


def _normalize_product(factors: list) -> DoExpr:
    if not factors:
        return One()
    if len(factors) == 1:
        return factors[0]
    return Product(factors)


def _local_diff(b: DoExpr, a: DoExpr) -> tuple[DoExpr, DoExpr] | None:
    """Smallest differing subexpression pair, descending through equal
    context.

    Product factor lists are compared as multisets (multiplication
    commutes), so a step may also deposit its result at a different
    position within the same product."""
    if b == a:
        return None
    if isinstance(b, Product) and isinstance(a, Product):
        from collections import Counter

        cb, ca = Counter(b.factors), Counter(a.factors)

        def in_order(factors, surplus):
            out, left = [], Counter(surplus)
            for f in factors:
                if left[f] > 0:
                    out.append(f)
                    left[f] -= 1
            return out

        removed = in_order(b.factors, cb - ca)
        added = in_order(a.factors, ca - cb)
        if len(removed) == 1 and len(added) == 1:
            return _local_diff(removed[0], added[0])
        return (_normalize_product(removed), _normalize_product(added))
    if isinstance(b, Sum) and isinstance(a, Sum) and b.bound == a.bound:
        return _local_diff(b.body, a.body)
    if isinstance(b, Quotient) and isinstance(a, Quotient):
        if b.num == a.num:
            return _local_diff(b.den, a.den)
        if b.den == a.den:
            return _local_diff(b.num, a.num)
    return (b, a)


def _as_sum(e: DoExpr) -> tuple[frozenset[str], DoExpr]:
    if isinstance(e, Sum):
        return e.bound, e.body
    return frozenset(), e


def _as_factors(e: DoExpr) -> list[DoExpr]:
    if isinstance(e, Product):
        return list(e.factors)
    if isinstance(e, One):
        return []
    return [e]


def _check_rule_step(step: DerivationStep, graph: CausalGraph,
                     site: tuple[DoExpr, DoExpr]) -> None:
    b, a = site
    if not (isinstance(b, DoSentence) and isinstance(a, DoSentence)):
        raise _Mismatch("rule step must rewrite a single sentence")
    if b.outcome != a.outcome:
        raise _Mismatch("rule step changed the outcome set")
    want_rule = 2 if step.kind == RULE2 else 3
    x = b.do & a.do
    moved = (b.do | a.do) - x
    if not moved:
        raise _Mismatch("rule step moved no interventions")
    if step.kind == RULE2:
        # moved set swaps between do and given
        hat_side, obs_side = (b, a) if moved <= b.do else (a, b)
        if not (moved <= hat_side.do and moved <= obs_side.given):
            raise _Mismatch("sets do not match an action/observation exchange")
        w = hat_side.given
        if obs_side.given != w | moved or obs_side.do != x:
            raise _Mismatch("sets do not match an action/observation exchange")
    else:
        if b.given != a.given:
            raise _Mismatch("rule-3 step changed the observation set")
        hat_side = b if moved <= b.do else a
        if not moved <= hat_side.do:
            raise _Mismatch("sets do not match an action insertion/deletion")
        w = b.given
    instance = RuleInstance(want_rule, x, b.outcome, moved, w, graph)
    just = step.justification
    if not isinstance(just, RuleEvidence):
        raise _Mismatch("rule step lacks rule evidence")
    ji = just.instance
    if (ji.rule, ji.x, ji.y, ji.z, ji.w) != (
        instance.rule, instance.x, instance.y, instance.z, instance.w,
    ):
        raise _Mismatch("embedded rule instance does not match the rewrite")
    if not rule_applicable(instance).holds:
        raise _Mismatch("separation condition fails on the mutilated graph")


def _check_chain(site: tuple[DoExpr, DoExpr], params: StepParams) -> None:
    b, a = site
    for lhs, rhs in ((b, a), (a, b)):
        # split form: P(A∪B | do, w) == P(A | do, w∪B) · P(B | do, w)
        if isinstance(lhs, DoSentence) and isinstance(rhs, Product) and len(rhs.factors) == 2:
            for f1, f2 in (rhs.factors, rhs.factors[::-1]):
                if not (isinstance(f1, DoSentence) and isinstance(f2, DoSentence)):
                    continue
                split = params.vars
                if (
                    f2.outcome == split
                    and f1.outcome == lhs.outcome - split
                    and f1.outcome
                    and lhs.outcome == f1.outcome | f2.outcome
                    and f1.do == f2.do == lhs.do
                    and f1.given == lhs.given | split
                    and f2.given == lhs.given
                ):
                    return
        # quotient form: P(A | do, w∪B) == P(A∪B | do, w) / P(B | do, w)
        if isinstance(lhs, DoSentence) and isinstance(rhs, Quotient):
            num, den = rhs.num, rhs.den
            if isinstance(num, DoSentence) and isinstance(den, DoSentence):
                split = params.vars
                if (
                    den.outcome == split
                    and lhs.given == den.given | split
                    and num.outcome == lhs.outcome | split
                    and num.given == den.given
                    and num.do == den.do == lhs.do
                ):
                    return
    raise _Mismatch("not a chain-rule split, merge, or ratio")


def _check_marginalize(site: tuple[DoExpr, DoExpr], params: StepParams) -> None:
    for lhs, rhs in ((site[0], site[1]), (site[1], site[0])):
        b_bound, b_body = _as_sum(lhs)
        a_bound, a_body = _as_sum(rhs)
        m = b_bound - a_bound
        if not m or a_bound - b_bound:
            continue
        if not (isinstance(b_body, DoSentence) and isinstance(a_body, DoSentence)):
            continue
        if (
            m == params.vars
            and b_body.outcome == a_body.outcome | m
            and not (m & a_body.leaf_vars)
            and b_body.do == a_body.do
            and b_body.given == a_body.given
        ):
            return
    raise _Mismatch("not a marginalization")


def _check_normalize(site: tuple[DoExpr, DoExpr], params: StepParams) -> None:
    for lhs, rhs in ((site[0], site[1]), (site[1], site[0])):
        b_bound, b_body = _as_sum(lhs)
        a_bound, a_body = _as_sum(rhs)
        m = b_bound - a_bound
        if not m or a_bound - b_bound or m != params.vars:
            continue
        b_factors = _as_factors(b_body)
        phis = [
            f
            for f in b_factors
            if isinstance(f, DoSentence) and f.outcome == m
        ]
        if not phis:
            continue
        rest = list(b_factors)
        rest.remove(phis[0])
        rest_e = _normalize_product(rest)
        if m & free_vars(rest_e):
            continue
        if rest_e == a_body or rest == _as_factors(a_body):
            return
    raise _Mismatch("not a normalize-to-one move")


def _verify_structure(
    d: Derivation,
    evaluators: list[DoEvaluator] | None,
    tolerance: float,
    cache: dict[int, Verdict] | None = None,
) -> Verdict:
    if cache is None:
        cache = {}
    if not d.steps:
        if d.query is not None:
            return Verdict(False, None, "query derivation has no steps")
        return Verdict(accepted=True)
    if d.query is not None:
        t, s = d.query
        want = DoSentence(outcome=s, do=t, given=frozenset())
        if d.initial != want:
            return Verdict(False, 0, "derivation does not start at the query sentence")
        if not observational(d.final):
            return Verdict(False, len(d.steps) - 1,
                           "final expression still contains interventions")
    for i, step in enumerate(d.steps):
        if i > 0 and step.before != d.steps[i - 1].after:
            return Verdict(False, i, "step does not chain from the previous state")
        site = _local_diff(step.before, step.after)
        if site is None:
            return Verdict(False, i, "step changes nothing")
        try:
            if step.kind in (RULE2, RULE3):
                _check_rule_step(step, d.graph, site)
            elif step.kind == CHAIN:
                if not isinstance(step.justification, StepParams):
                    return Verdict(False, i, "missing structural parameters")
                _check_chain(site, step.justification)
            elif step.kind == MARGINALIZE:
                _check_marginalize(site, step.justification)
            elif step.kind == NORMALIZE:
                _check_normalize(site, step.justification)
            elif step.kind == SUBSTITUTE:
                just = step.justification
                if not isinstance(just, Substitution):
                    return Verdict(False, i, "missing nested derivation")
                nested = just.derivation

                def _same(p, q) -> bool:
                    if p == q:
                        return True
                    if isinstance(p, Product) and isinstance(q, Product):
                        from collections import Counter

                        return Counter(p.factors) == Counter(q.factors)
                    return False

                ends = (nested.initial, nested.final)
                if not (
                    (_same(ends[0], site[0]) and _same(ends[1], site[1]))
                    or (_same(ends[0], site[1]) and _same(ends[1], site[0]))
                ):
                    return Verdict(
                        False, i, "nested derivation endpoints do not match the site"
                    )
                sub = cache.get(id(nested))
                if sub is None:
                    sub = _verify_structure(nested, evaluators, tolerance, cache)
                    cache[id(nested)] = sub
                if not sub.accepted:
                    return Verdict(False, i, f"nested derivation rejected: {sub.reason}")
            else:
                return Verdict(False, i, f"unknown step kind {step.kind!r}")
        except _Mismatch as err:
            return Verdict(False, i, str(err))
        except GraphError as err:
            return Verdict(False, i, str(err))

        if evaluators is not None:
            b, a = site
            frees = sorted(free_vars(b) | free_vars(a))
            for k, ev in enumerate(evaluators):
                for retry in range(8):
                    try:
                        gb = ev.grid(b, frees)
                        ga = ev.grid(a, frees)
                        break
                    except PositivityError:
                        # A degenerate model sample cannot witness anything;
                        # replace it and retry (positive models never hit
                        # this, but hand-loaded derivations may carry
                        # sentences with zero-mass contexts).
                        ev = DoEvaluator(
                            random_model(d.graph, seed=7919 * (i + 1) + 31 * k + retry)
                        )
                        evaluators[k] = ev
                else:
                    return Verdict(False, i, "no model with positive context mass")
                err = float(np.max(np.abs(gb - ga)))
                if err > tolerance:
                    return Verdict(
                        False, i,
                        f"numeric check failed: sides differ by {err:.3e}",
                    )
    return Verdict(accepted=True)


def verify_derivation(
    d: Derivation,
    models: int = 5,
    seed: int = 0,
    tolerance: float = 1e-9,
) -> Verdict:
    """Re-check a derivation from scratch.

    Chaining, per-step structural schemas, and every separation condition
    are recomputed without trusting the generator; in addition the changed
    subexpression of each step is evaluated on ``models`` random positive
    models and both sides must agree within ``tolerance`` on every
    assignment of their free variables.
    """
    evaluators = None
    if models > 0:
        evaluators = [
            DoEvaluator(random_model(d.graph, seed=seed + i)) for i in range(models)
        ]
    return _verify_structure(d, evaluators, tolerance)


# -- serialization ----------------------------------------------------------------


def _expr_to_json(e: DoExpr) -> dict:
    from .expr import expr_to_json

    return expr_to_json(e)


def _justification_to_json(j) -> dict:
    if isinstance(j, RuleEvidence):
        return {"type": "rule", **j.to_json()}
    if isinstance(j, StepParams):
        return {"type": "params", "vars": sorted(j.vars), "direction": j.direction}
    if isinstance(j, Substitution):
        return {"type": "substitution", "derivation": derivation_to_json(j.derivation)}
    raise TypeError(j)


def derivation_to_json(d: Derivation) -> dict:
    out = {
        "graph": d.graph.to_json(),
        "query": None
        if d.query is None
        else {
            "do": list(d.graph.sorted_nodes(d.query[0])),
            "on": list(d.graph.sorted_nodes(d.query[1])),
        },
        "steps": [
            {
                "kind": s.kind,
                "before": _expr_to_json(s.before),
                "after": _expr_to_json(s.after),
                "justification": _justification_to_json(s.justification),
            }
            for s in d.steps
        ],
    }
    return out


def derivation_from_json(data: Mapping) -> Derivation:
    from .expr import expr_from_json

    graph = CausalGraph.from_json(data["graph"])
    query = None
    if data["query"] is not None:
        query = (frozenset(data["query"]["do"]), frozenset(data["query"]["on"]))
    steps = []
    for sd in data["steps"]:
        jd = sd["justification"]
        if jd["type"] == "rule":
            just = evidence_from_json(jd, graph)
        elif jd["type"] == "params":
            just = StepParams(vars=frozenset(jd["vars"]), direction=jd["direction"])
        else:
            just = Substitution(derivation=derivation_from_json(jd["derivation"]))
        steps.append(
            DerivationStep(
                kind=sd["kind"],
                before=expr_from_json(sd["before"]),
                after=expr_from_json(sd["after"]),
                justification=just,
            )
        )
    return Derivation(graph=graph, query=query, steps=tuple(steps))
