"""Per-space performance metrics: the depth-weighted node-contribution score
alpha, the answered fraction of a query set, and the coverage threshold flag.

alpha = (1/|N|) * sum over member nodes m of Solutions(m) / (|Q| * (depth(m)+1))

where |N| counts the OR nodes of the full parent graph, the sum ranges over
the sampled member set only, Solutions(m) is the node's own retrieval count,
and depth(m) comes from the parent graph.  Terms are accumulated in sorted
node-id order so the headline value is reproducible bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .engine import Evaluator, QuerySet, solutions
from .graph import AndOrGraph, SearchSpace
from .kb import KnowledgeBase


@dataclass(frozen=True)
class AlphaReport:
    alpha: float
    n_total: int  # |N|: OR nodes of the full graph
    m_count: int  # |M|: member OR nodes of the space
    q_count: int  # |Q|
    terms: tuple[tuple[str, int, int, float], ...]  # (node id, solutions, depth, term)

    def recompute(self) -> float:
        """Re-derive alpha from the stored per-node terms (consistency check)."""
        return sum(t[3] for t in self.terms) / self.n_total

    def to_json(self) -> str:
        return json.dumps(
            {
                "alpha": self.alpha,
                "n_total": self.n_total,
                "m_count": self.m_count,
                "q_count": self.q_count,
                "terms": [list(t) for t in self.terms],
            },
            indent=1,
        )


@dataclass(frozen=True)
class QaResult:
    attempted: int
    answered: int
    fraction: float
    per_query: tuple[tuple[str, str, int], ...]  # (query text, template id, answer count)
    total_answers: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "attempted": self.attempted,
                "answered": self.answered,
                "fraction": self.fraction,
                "total_answers": self.total_answers,
                "per_query": [
                    {"query": q, "template": t, "answers": n} for q, t, n in self.per_query
                ],
            },
            indent=1,
        )


def alpha(
    g: AndOrGraph,
    space: SearchSpace,
    queries: QuerySet,
    kb: KnowledgeBase,
    genlpreds_mode: bool = True,
) -> AlphaReport:
    """Average per-node ground-fact contribution of the space toward Q."""
    if len(queries) == 0:
        raise ValueError("alpha needs a nonempty query set")
    if g.or_count == 0:
        raise ValueError("alpha needs a graph with at least one OR node")
    if not space.or_members <= g.or_nodes.keys():
        raise ValueError("space is not a sub-space of the given graph")
    qn = len(queries)
    terms = []
    for oid in space.sorted_or_members():
        node = g.or_nodes[oid]
        sols = solutions(node.schema, kb, genlpreds_mode)
        term = sols / (qn * (node.depth + 1))
        terms.append((oid, sols, node.depth, term))
    total = 0.0
    for t in terms:
        total += t[3]
    return AlphaReport(
        alpha=total / g.or_count,
        n_total=g.or_count,
        m_count=len(space.or_members),
        q_count=qn,
        terms=tuple(terms),
    )


def answered_fraction(
    space: SearchSpace,
    kb: KnowledgeBase,
    queries: QuerySet,
    depth_limit: int,
    genlpreds_mode: bool = True,
) -> QaResult:
    """Backchain every query against the space's retained axioms and report
    coverage plus the total distinct answers (the model-comparison metric)."""
    if len(queries) == 0:
        raise ValueError("answered_fraction needs a nonempty query set")
    axioms = space.graph.axioms.restrict(space.retained_axiom_ids())
    ev = Evaluator(kb, axioms, genlpreds_mode)
    per_query = []
    answered = 0
    total = 0
    for q in queries:
        result = ev.ask(q, depth_limit)
        n = len(result.bindings)
        per_query.append((str(q.atom), q.template_id, n))
        if n > 0:
            answered += 1
        total += n
    return QaResult(
        attempted=len(queries),
        answered=answered,
        fraction=answered / len(queries),
        per_query=tuple(per_query),
        total_answers=total,
    )


def threshold_hit(fraction: float, theta: float = 0.2) -> bool:
    """Inclusive coverage threshold (>= theta)."""
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must lie in [0, 1]")
    return fraction >= theta
