"""Brute-force numerical ground truth on small discrete models.

Everything here is exact enumeration: the observational joint is the
mixture-of-products over the latent domains, interventional distributions
come from the truncated factorization, and interventional sentences
P(y | do(t), w) are evaluated as ratios of truncated-factorization
marginals.  Estimand checking and the non-identifiability witness search
are built on top of these primitives.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .expr import PositivityError, evaluate_grid, free_vars, placed_marginal
from .graph import CausalGraph, GraphError
from .sep import SeparationQuery
from .tables import MAX_STATES, EnumerationLimitError, JointTable

__all__ = [
    "DiscreteModel",
    "random_model",
    "observational_joint",
    "interventional_truth",
    "DoEvaluator",
    "CheckReport",
    "check_estimand",
    "ci_check",
    "WitnessReport",
    "witness_search",
]

DEFAULT_EPSILON = 0.01


@dataclass(frozen=True)
class DiscreteModel:
    """A concrete parametrization of a causal graph.

    ``cards[i]`` is the domain size of node ``i`` (graph index order) and
    ``cpts[i]`` holds P(node | parents) with one leading axis per parent (in
    index order) and the node's own domain last; every row sums to one.
    ``epsilon`` records the positivity floor the tables were built with
    (zero for unconstrained tables).
    """

    graph: CausalGraph
    cards: tuple[int, ...]
    cpts: tuple[np.ndarray, ...]
    epsilon: float = 0.0

    def __post_init__(self):
        if len(self.cards) != len(self.graph) or len(self.cpts) != len(self.graph):
            raise ValueError("one card and one table per node required")
        if int(np.prod(self.cards)) > MAX_STATES:
            raise EnumerationLimitError(
                f"{int(np.prod(self.cards))} joint states exceed the "
                f"{MAX_STATES}-state enumeration budget"
            )
        for i, cpt in enumerate(self.cpts):
            rows = cpt.sum(axis=-1)
            if not np.allclose(rows, 1.0, atol=1e-12):
                raise ValueError(f"conditional table of node {self.graph.names[i]!r} "
                                 "does not sum to 1")

    def card(self, name: str) -> int:
        return self.cards[self.graph.index(name)]

    def _parent_idx(self, i: int) -> list[int]:
        g = self.graph
        return [g.index(p) for p in g.parents_of(g.names[i])]


def random_model(
    g: CausalGraph,
    arity: int | Mapping[str, int] = 2,
    seed: int = 0,
    epsilon: float = DEFAULT_EPSILON,
) -> DiscreteModel:
    """Reproducible positive model: conditional rows are drawn uniformly,
    then mixed with the uniform distribution so every entry is >= epsilon."""
    if isinstance(arity, int):
        cards = tuple(arity for _ in g.names)
    else:
        cards = tuple(int(arity[n]) for n in g.names)
    if any(c < 2 for c in cards):
        raise ValueError("every domain needs at least two values")
    if any(c * epsilon >= 1.0 for c in cards):
        raise ValueError("epsilon too large for the requested arity")

    rng = np.random.default_rng(seed)
    cpts = []
    for i, name in enumerate(g.names):
        pa = [g.index(p) for p in g.parents_of(name)]
        shape = tuple(cards[j] for j in pa) + (cards[i],)
        raw = rng.random(shape) + 1e-12
        probs = raw / raw.sum(axis=-1, keepdims=True)
        probs = (1.0 - cards[i] * epsilon) * probs + epsilon
        cpts.append(probs)
    return DiscreteModel(graph=g, cards=cards, cpts=tuple(cpts), epsilon=epsilon)


def _factor_product(m: DiscreteModel, skip: frozenset[int]) -> np.ndarray:
    """Product of all conditional tables except those of ``skip`` nodes,
    as an array over the full node grid."""
    n = len(m.graph)
    out = np.ones(m.cards)
    for i in range(n):
        if i in skip:
            continue
        axes = m._parent_idx(i) + [i]
        cpt = m.cpts[i].transpose(np.argsort(axes))
        shape = [1] * n
        for ax in axes:
            shape[ax] = m.cards[ax]
        out = out * cpt.reshape(shape)
    return out


def full_joint_array(m: DiscreteModel) -> np.ndarray:
    """Exact joint over every node (latents included), graph index order."""
    return _factor_product(m, frozenset())


def full_joint(m: DiscreteModel) -> JointTable:
    return JointTable(m.graph.names, full_joint_array(m))


def observational_joint(m: DiscreteModel) -> JointTable:
    """The observed distribution: the full joint with latents summed out."""
    g = m.graph
    arr = full_joint_array(m)
    latent_axes = tuple(g.index(n) for n in g.latent_names)
    if latent_axes:
        arr = arr.sum(axis=latent_axes)
    return JointTable(g.observable_names, arr)


def intervened_array(m: DiscreteModel, t_vars: frozenset[str]) -> np.ndarray:
    """Truncated factorization with the factors of ``t_vars`` deleted,
    latents summed out: an array over the observable grid whose ``t`` axes
    index the intervention level."""
    g = m.graph
    for v in t_vars:
        if not g.is_observable(v):
            raise GraphError(f"cannot intervene on latent node {v!r}")
    skip = frozenset(g.index(v) for v in t_vars)
    arr = _factor_product(m, skip)
    latent_axes = tuple(g.index(n) for n in g.latent_names)
    if latent_axes:
        arr = arr.sum(axis=latent_axes)
    return arr


def interventional_truth(
    m: DiscreteModel, t: Mapping[str, int], s: Iterable[str]
) -> JointTable:
    """P_t(s) by truncated factorization.

    Assignments of ``s`` that disagree with ``t`` on shared variables get
    probability zero; with disjoint sets the result sums to one.
    """
    g = m.graph
    t_vars = frozenset(t)
    s_vars = frozenset(s)
    obs = g.observable_names
    arr = intervened_array(m, t_vars)

    index = []
    remaining = []
    for n in obs:
        if n in t_vars:
            index.append(int(t[n]))
        else:
            index.append(slice(None))
            remaining.append(n)
    arr = arr[tuple(index)]  # axes: observables minus t, canonical order

    drop = tuple(i for i, n in enumerate(remaining) if n not in s_vars)
    arr = arr.sum(axis=drop) if drop else arr
    kept = [n for n in remaining if n in s_vars]

    s_sorted = list(g.sorted_nodes(s_vars))
    if set(kept) == set(s_sorted):
        return JointTable(s_sorted, arr)

    # s overlaps t: spread over the full s grid, zero where inconsistent.
    out_shape = tuple(m.card(n) for n in s_sorted)
    out = np.zeros(out_shape)
    idx = tuple(int(t[n]) if n in t_vars else slice(None) for n in s_sorted)
    out[idx] = arr
    return JointTable(s_sorted, out)


class DoEvaluator:
    """Grid evaluation of interventional-sentence expressions on one model.

    A sentence P(y | do(t), w) denotes P_t(y, w) / P_t(w); this class
    computes such leaves (and whole Sum/Product/Quotient trees over them)
    as arrays over assignment grids, caching the truncated-factorization
    tables per distinct ``do`` set.
    """

    def __init__(self, m: DiscreteModel):
        self.m = m
        self._tables: dict[frozenset[str], JointTable] = {}

    def _do_table(self, do: frozenset[str]) -> JointTable:
        tab = self._tables.get(do)
        if tab is None:
            tab = JointTable(self.m.graph.observable_names, intervened_array(self.m, do))
            self._tables[do] = tab
        return tab

    def _leaf(self, e, env, ndim):
        from .docalc import DoSentence
        from .expr import JointMarginal

        if isinstance(e, JointMarginal):
            tab = self._do_table(frozenset())
            return placed_marginal(tab.marginal(e.vars), tab.marginal_names(e.vars),
                                   tab, env, ndim)
        if not isinstance(e, DoSentence):
            raise TypeError(f"cannot evaluate leaf {e!r} on a discrete model")
        tab = self._do_table(e.do)
        num_vars = e.outcome | e.given | e.do
        num = placed_marginal(tab.marginal(num_vars), tab.marginal_names(num_vars),
                              tab, env, ndim)
        if not (e.given | e.do):
            return num
        den_vars = e.given | e.do
        den = placed_marginal(tab.marginal(den_vars), tab.marginal_names(den_vars),
                              tab, env, ndim)
        if np.any(den == 0.0):
            raise PositivityError()
        return num / den

    def grid(self, e, free: Sequence[str]) -> np.ndarray:
        """Array of the expression's value over the grid of ``free``."""
        if not free_vars(e) <= set(free):
            raise ValueError("free must cover the expression's free variables")
        from .expr import _eval_nd

        env = {v: i for i, v in enumerate(free)}
        tab = self._do_table(frozenset())
        shape = tuple(tab.card(v) for v in free)
        out = _eval_nd(e, tab, self._leaf, env, len(shape))
        return np.broadcast_to(out, shape).copy() if shape else np.asarray(out)


# -- estimand checking ---------------------------------------------------------


@dataclass(frozen=True)
class CheckReport:
    """Per-model comparison of an estimand against the truncated
    factorization."""

    trials: int
    tolerance: float
    max_abs_error: float
    per_model: tuple[tuple[int, float, bool], ...]  # (seed, max error, passed)

    @property
    def all_passed(self) -> bool:
        return all(ok for _, _, ok in self.per_model)

    def to_json(self) -> dict:
        return {
            "trials": self.trials,
            "tolerance": self.tolerance,
            "max_abs_error": self.max_abs_error,
            "all_passed": self.all_passed,
            "per_model": [
                {"seed": s, "max_error": e, "passed": ok} for s, e, ok in self.per_model
            ],
        }


def check_estimand(
    e,
    g: CausalGraph,
    t: Iterable[str],
    s: Iterable[str],
    trials: int = 100,
    seed: int = 0,
    tolerance: float = 1e-9,
    arity: int | Mapping[str, int] = 2,
    threads: int = 1,
) -> CheckReport:
    """Compare an estimand against P_t(s) on random positive models.

    For each trial a fresh positive model on ``g`` is drawn, the estimand is
    evaluated on its observational joint over every (t, s) assignment, and
    the result is compared entrywise against the truncated factorization.
    """
    t_vars, s_vars = frozenset(t), frozenset(s)
    if t_vars & s_vars:
        raise GraphError("t and s must be disjoint")
    if not free_vars(e) <= (t_vars | s_vars):
        raise ValueError("estimand has free variables outside s and t")
    order = list(g.sorted_nodes(t_vars)) + list(g.sorted_nodes(s_vars))
    n_t = len(t_vars)

    def one_trial(i: int) -> tuple[int, float, bool]:
        model_seed = seed + i
        m = random_model(g, arity=arity, seed=model_seed)
        joint = observational_joint(m)
        est = evaluate_grid(e, joint, order)
        arr = intervened_array(m, t_vars)
        keep = [g.index(n) for n in order]
        drop = tuple(
            ax for ax, n in enumerate(g.observable_names) if g.index(n) not in keep
        )
        truth = arr.sum(axis=drop) if drop else arr
        # axes of truth follow observable index order; permute to `order`
        current = [n for n in g.observable_names if n in set(order)]
        truth = truth.transpose([current.index(n) for n in order])
        err = float(np.max(np.abs(est - truth)))
        return (model_seed, err, err <= tolerance)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_model = tuple(pool.map(one_trial, range(trials)))
    else:
        per_model = tuple(one_trial(i) for i in range(trials))
    max_err = max((e_ for _, e_, _ in per_model), default=0.0)
    return CheckReport(
        trials=trials, tolerance=tolerance, max_abs_error=max_err, per_model=per_model
    )


def ci_check(m: DiscreteModel, q: SeparationQuery, tolerance: float = 1e-9) -> bool:
    """Does P(x, y | z) = P(x|z) P(y|z) hold on all assignments with
    P(z) > 0?  Latent nodes may appear in the query; the full joint is used."""
    tab = full_joint(m)
    all_vars = q.x | q.y | q.z
    order = [n for n in m.graph.names if n in all_vars]
    env = {v: i for i, v in enumerate(order)}
    ndim = len(order)

    def placed(vars_: frozenset[str]) -> np.ndarray:
        if not vars_:
            return np.ones((1,) * ndim)
        return placed_marginal(tab.marginal(vars_), tab.marginal_names(vars_),
                               tab, env, ndim)

    p_xyz = placed(all_vars)
    p_xz = placed(q.x | q.z)
    p_yz = placed(q.y | q.z)
    p_z = placed(q.z)
    mask = np.broadcast_to(p_z > 0, p_xyz.shape)
    lhs = np.where(mask, p_xyz / np.where(p_z > 0, p_z, 1.0), 0.0)
    rhs = np.where(
        mask,
        (p_xz / np.where(p_z > 0, p_z, 1.0)) * (p_yz / np.where(p_z > 0, p_z, 1.0)),
        0.0,
    )
    return bool(np.max(np.abs(lhs - rhs)) <= tolerance)


# -- witness search ------------------------------------------------------------


@dataclass(frozen=True)
class WitnessReport:
    """Two positive models agreeing observationally but not causally."""

    model_a: DiscreteModel
    model_b: DiscreteModel
    observational_gap: float
    causal_gap: float
    evaluations: int

    def to_json(self) -> dict:
        return {
            "found": True,
            "observational_gap": self.observational_gap,
            "causal_gap": self.causal_gap,
            "evaluations": self.evaluations,
        }


def _theta_shapes(m: DiscreteModel) -> list[tuple[int, ...]]:
    return [cpt.shape for cpt in m.cpts]


def _model_from_theta(
    g: CausalGraph, cards: tuple[int, ...], shapes, theta: np.ndarray,
    epsilon: float,
) -> DiscreteModel:
    cpts = []
    pos = 0
    for i, shape in enumerate(shapes):
        size = int(np.prod(shape))
        block = theta[pos:pos + size].reshape(shape)
        pos += size
        block = block - block.max(axis=-1, keepdims=True)
        p = np.exp(block)
        p /= p.sum(axis=-1, keepdims=True)
        p = (1.0 - cards[i] * epsilon) * p + epsilon
        cpts.append(p)
    return DiscreteModel(graph=g, cards=cards, cpts=tuple(cpts), epsilon=epsilon)


def _theta_of(m: DiscreteModel) -> np.ndarray:
    return np.concatenate([np.log(cpt).ravel() for cpt in m.cpts])


def witness_search(
    g: CausalGraph,
    t: Iterable[str],
    s: Iterable[str],
    budget: int = 40000,
    seed: int = 0,
    arity: int = 2,
    obs_tol: float = 1e-6,
    causal_gap_min: float = 1e-2,
    epsilon: float = DEFAULT_EPSILON,
) -> WitnessReport | None:
    """Best-effort search for a non-identifiability witness pair.

    Strategy: seeded random restarts pick a base model; a second model
    starts at the same parameters (observational gap zero) and Nelder-Mead
    walks its parameters to maximize the causal gap under a heavy penalty on
    the observational gap.  ``budget`` caps total objective evaluations;
    ``None`` means the budget ran out without a qualifying pair, which for
    identifiable effects is the expected outcome.
    """
    from scipy.optimize import minimize

    t_vars, s_vars = frozenset(t), frozenset(s)
    if budget <= 0:
        return None

    def gaps(ma: DiscreteModel, mb: DiscreteModel) -> tuple[float, float]:
        pa = observational_joint(ma).array
        pb = observational_joint(mb).array
        obs_gap = float(np.max(np.abs(pa - pb)))
        keep = t_vars | s_vars
        drop_axes = tuple(
            ax for ax, n in enumerate(g.observable_names) if n not in keep
        )
        ia = intervened_array(ma, t_vars)
        ib = intervened_array(mb, t_vars)
        if drop_axes:
            ia = ia.sum(axis=drop_axes)
            ib = ib.sum(axis=drop_axes)
        causal_gap = float(np.max(np.abs(ia - ib)))
        return obs_gap, causal_gap

    evaluations = 0
    restarts = max(1, budget // 4000)
    per_restart = max(100, budget // restarts)

    for r in range(restarts):
        if evaluations >= budget:
            break
        m1 = random_model(g, arity=arity, seed=seed + 1000 * r, epsilon=epsilon)
        shapes = _theta_shapes(m1)
        theta0 = _theta_of(m1)
        rng = np.random.default_rng(seed + 1000 * r + 17)
        theta0 = theta0 + rng.normal(scale=0.05, size=theta0.shape)

        counter = {"n": 0}

        def objective(theta: np.ndarray) -> float:
            counter["n"] += 1
            m2 = _model_from_theta(g, m1.cards, shapes, theta, epsilon)
            obs_gap, causal_gap = gaps(m1, m2)
            return 1e4 * max(obs_gap - 0.25 * obs_tol, 0.0) - causal_gap

        maxfev = min(per_restart, budget - evaluations)
        result = minimize(
            objective,
            theta0,
            method="Nelder-Mead",
            options={"maxfev": maxfev, "xatol": 1e-8, "fatol": 1e-12},
        )
        evaluations += counter["n"]
        m2 = _model_from_theta(g, m1.cards, shapes, result.x, epsilon)
        obs_gap, causal_gap = gaps(m1, m2)
        if obs_gap <= obs_tol and causal_gap >= causal_gap_min:
            return WitnessReport(
                model_a=m1,
                model_b=m2,
                observational_gap=obs_gap,
                causal_gap=causal_gap,
                evaluations=evaluations,
            )
    return None
