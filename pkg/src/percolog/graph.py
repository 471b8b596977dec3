"""Cycle-free AND/OR query graphs built from a Horn axiom set.

OR nodes are goal schemas: (predicate, arity, bound/open mask).  The mask is
an adornment: a position is bound when the query supplies a constant there,
and bindings flow left-to-right through rule bodies the same way the engine
evaluates them.  AND nodes are rule applications, one child OR node per body
atom.  Construction is breadth-first from the root schemas with global
deduplication; any rule application whose body would point back at an
ancestor schema is dropped, which keeps the graph acyclic.
"""

from __future__ import annotations

import json
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

from .kb import (
    Atom,
    AxiomSet,
    Constant,
    HornClause,
    KbError,
    KnowledgeBase,
    Variable,
    parse_kb,
)


class GraphCycleError(Exception):
    """A graph or space unexpectedly lost its DAG property."""


@dataclass(frozen=True)
class GoalSchema:
    predicate: str
    arity: int
    mask: tuple[bool, ...]  # True = bound by the query

    def __post_init__(self) -> None:
        if len(self.mask) != self.arity:
            raise ValueError(f"mask length {len(self.mask)} != arity {self.arity}")

    def label(self) -> str:
        return f"{self.predicate}/{self.arity}[{''.join('b' if b else 'f' for b in self.mask)}]"


@dataclass
class OrNode:
    id: str
    schema: GoalSchema
    depth: int
    children: tuple[str, ...] = ()  # AND node ids

    @property
    def predicate(self) -> str:
        return self.schema.predicate

    @property
    def arity(self) -> int:
        return self.schema.arity


@dataclass
class AndNode:
    id: str
    clause_id: str
    parent: str  # OR node id
    children: tuple[str, ...]  # OR node ids, one per body atom


def _id_key(node_id: str) -> int:
    return int(node_id[1:])


class AndOrGraph:
    """The full query graph G.  ``|N|`` (the alpha denominator) counts OR
    nodes only; AND nodes are rule applications between them."""

    def __init__(self, axioms: AxiomSet, depth_bound: int, genlpreds_mode: bool = True):
        self.axioms = axioms
        self.depth_bound = depth_bound
        self.genlpreds_mode = genlpreds_mode
        self.or_nodes: dict[str, OrNode] = {}
        self.and_nodes: dict[str, AndNode] = {}
        self.roots: list[str] = []
        self._schema_index: dict[GoalSchema, str] = {}

    # -- structure -------------------------------------------------------------

    @property
    def or_count(self) -> int:
        return len(self.or_nodes)

    def node_for_schema(self, schema: GoalSchema) -> Optional[str]:
        return self._schema_index.get(schema)

    def or_children(self, or_id: str) -> tuple[str, ...]:
        """OR successors reached through this node's AND children."""
        out: list[str] = []
        for and_id in self.or_nodes[or_id].children:
            out.extend(self.and_nodes[and_id].children)
        return tuple(out)

    def reaches(self, src: str, dst: str) -> bool:
        """True iff OR node ``dst`` is reachable from OR node ``src``."""
        if src == dst:
            return True
        seen = {src}
        stack = [src]
        while stack:
            for nxt in self.or_children(stack.pop()):
                if nxt == dst:
                    return True
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False

    def topological_or_order(self) -> list[str]:
        """OR ids, parents before children; raises GraphCycleError on a cycle."""
        in_deg = {oid: 0 for oid in self.or_nodes}
        for oid in self.or_nodes:
            for child in self.or_children(oid):
                in_deg[child] += 1
        queue = deque(sorted((oid for oid, d in in_deg.items() if d == 0), key=_id_key))
        order = []
        while queue:
            oid = queue.popleft()
            order.append(oid)
            for child in self.or_children(oid):
                in_deg[child] -= 1
                if in_deg[child] == 0:
                    queue.append(child)
        if len(order) != len(self.or_nodes):
            raise GraphCycleError("AND/OR graph contains a cycle")
        return order

    # -- serialization -----------------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "format": "percolog-graph@1",
            "depth_bound": self.depth_bound,
            "genlpreds": self.genlpreds_mode,
            "roots": list(self.roots),
            "or_nodes": [
                {
                    "id": n.id,
                    "pred": n.predicate,
                    "arity": n.arity,
                    "mask": "".join("b" if b else "f" for b in n.schema.mask),
                    "depth": n.depth,
                    "children": list(n.children),
                }
                for n in sorted(self.or_nodes.values(), key=lambda n: _id_key(n.id))
            ],
            "and_nodes": [
                {"id": n.id, "clause": n.clause_id, "parent": n.parent, "children": list(n.children)}
                for n in sorted(self.and_nodes.values(), key=lambda n: _id_key(n.id))
            ],
            "clauses": {c.id: str(c) for c in self.axioms},
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AndOrGraph":
        doc = json.loads(text)
        if doc.get("format") != "percolog-graph@1":
            raise KbError(f"not a percolog graph file (format={doc.get('format')!r})")
        clause_lines = "\n".join(doc["clauses"][cid] for cid in sorted(doc["clauses"]))
        _, parsed = parse_kb(clause_lines)
        relabeled = [
            HornClause(c.head, c.body, id=cid)
            for cid, c in zip(sorted(doc["clauses"]), parsed.clauses)
        ]
        g = cls(AxiomSet(relabeled), doc["depth_bound"], doc.get("genlpreds", True))
        for n in doc["or_nodes"]:
            schema = GoalSchema(n["pred"], n["arity"], tuple(ch == "b" for ch in n["mask"]))
            node = OrNode(n["id"], schema, n["depth"], tuple(n["children"]))
            g.or_nodes[node.id] = node
            g._schema_index[schema] = node.id
        for n in doc["and_nodes"]:
            g.and_nodes[n["id"]] = AndNode(n["id"], n["clause"], n["parent"], tuple(n["children"]))
        g.roots = list(doc["roots"])
        return g

    def edge_list(self) -> str:
        """Debug/visualization export; masks are intentionally omitted, use
        JSON for a lossless round trip."""
        lines = []
        for n in sorted(self.or_nodes.values(), key=lambda n: _id_key(n.id)):
            lines.append(f"OR {n.id} {n.predicate}/{n.arity} depth={n.depth}")
        for n in sorted(self.and_nodes.values(), key=lambda n: _id_key(n.id)):
            lines.append(f"AND {n.id} clause={n.clause_id}")
        for n in sorted(self.or_nodes.values(), key=lambda n: _id_key(n.id)):
            for and_id in n.children:
                lines.append(f"EDGE {n.id} {and_id}")
        for n in sorted(self.and_nodes.values(), key=lambda n: _id_key(n.id)):
            for or_id in n.children:
                lines.append(f"EDGE {n.id} {or_id}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def greedy_body_order(body: Sequence[Atom], initially_bound: "set[Variable]") -> list[int]:
    """Evaluation order for a rule body: repeatedly take the atom with the
    fewest still-free variables (ties to the leftmost).  This is the sideways
    information passing the engine, the adornments, and the bottom-up join all
    share, and it keeps goals as bound as possible regardless of which side of
    a chain the query constant enters from."""
    remaining = list(range(len(body)))
    bound = set(initially_bound)
    order: list[int] = []
    while remaining:
        best = min(remaining, key=lambda i: (sum(1 for v in body[i].variables() if v not in bound), i))
        order.append(best)
        bound.update(body[best].variables())
        remaining.remove(best)
    return order


def _adorn_body(clause: HornClause, schema: GoalSchema) -> list[GoalSchema]:
    """Body goal schemas under the shared binding-flow order: a position is
    bound if it holds a constant or a variable bound by the head's bound
    positions or by a body atom evaluated earlier."""
    bound_vars = set()
    for term, is_bound in zip(clause.head.args, schema.mask):
        if is_bound and isinstance(term, Variable):
            bound_vars.add(term)
    schemas: list[Optional[GoalSchema]] = [None] * len(clause.body)
    for i in greedy_body_order(clause.body, bound_vars):
        atom = clause.body[i]
        m = tuple(isinstance(t, Constant) or t in bound_vars for t in atom.args)
        schemas[i] = GoalSchema(atom.predicate, atom.arity, m)
        bound_vars.update(atom.variables())
    return schemas  # type: ignore[return-value]


def build_graph(
    axioms: AxiomSet,
    roots: Sequence[GoalSchema],
    depth_bound: int = 10,
    kb: Optional[KnowledgeBase] = None,
    genlpreds_mode: bool = True,
) -> AndOrGraph:
    """Breadth-first AND/OR expansion from the root schemas.

    An OR node's children are every clause whose head predicate matches the
    goal (via the genlPreds closure when ``kb`` is given and the mode is on).
    Back edges to ancestor schemas are dropped together with their rule
    application, and nodes at ``depth_bound`` are left unexpanded, so the
    result is always an acyclic graph of depth <= depth_bound.
    """
    if depth_bound < 0:
        raise ValueError("depth_bound must be >= 0")
    g = AndOrGraph(axioms, depth_bound, genlpreds_mode)

    def new_or(schema: GoalSchema, depth: int) -> str:
        oid = f"o{len(g.or_nodes)}"
        g.or_nodes[oid] = OrNode(oid, schema, depth)
        g._schema_index[schema] = oid
        return oid

    queue: deque[str] = deque()
    for schema in roots:
        oid = g._schema_index.get(schema)
        if oid is None:
            oid = new_or(schema, 0)
            queue.append(oid)
        if oid not in g.roots:
            g.roots.append(oid)

    def head_candidates(predicate: str) -> frozenset[str]:
        if genlpreds_mode and kb is not None:
            return kb.spec_preds(predicate)
        return frozenset((predicate,))

    while queue:
        uid = queue.popleft()
        u = g.or_nodes[uid]
        if u.depth >= depth_bound:
            continue
        cand = head_candidates(u.predicate)
        and_children: list[str] = []
        for clause in axioms:
            if clause.head.predicate not in cand or clause.head.arity != u.arity:
                continue
            body_schemas = _adorn_body(clause, u.schema)
            # resolve children; a single back edge invalidates the whole
            # rule application (a clause cannot fire with a missing body slot)
            ok = True
            for bs in body_schemas:
                existing = g._schema_index.get(bs)
                if existing is not None and g.reaches(existing, uid):
                    ok = False
                    break
            if not ok:
                continue
            child_ids = []
            for bs in body_schemas:
                cid = g._schema_index.get(bs)
                if cid is None:
                    cid = new_or(bs, u.depth + 1)
                    queue.append(cid)
                child_ids.append(cid)
            aid = f"a{len(g.and_nodes)}"
            g.and_nodes[aid] = AndNode(aid, clause.id, uid, tuple(child_ids))
            and_children.append(aid)
        u.children = tuple(and_children)

    g.topological_or_order()  # acyclicity check on every build
    return g


# ---------------------------------------------------------------------------
# Search spaces
# ---------------------------------------------------------------------------


class SearchSpace:
    """A sub-space of a parent graph: member OR nodes plus the retained rule
    applications.  Every retained AND node's parent and body children are
    members, so the space is closed and inherits acyclicity from the parent."""

    def __init__(
        self,
        graph: AndOrGraph,
        or_members: Iterable[str],
        and_members: Iterable[str],
        provenance: Optional[Mapping[str, object]] = None,
    ):
        self.graph = graph
        self.or_members = frozenset(or_members)
        self.and_members = frozenset(and_members)
        self.provenance = dict(provenance) if provenance else None
        unknown = self.or_members - graph.or_nodes.keys()
        if unknown:
            raise ValueError(f"unknown OR members: {sorted(unknown)[:3]}")
        for aid in self.and_members:
            a = graph.and_nodes[aid]
            if a.parent not in self.or_members or any(c not in self.or_members for c in a.children):
                raise ValueError(f"AND node {aid} is not fully inside the member set")

    @property
    def node_count(self) -> int:
        return len(self.or_members)

    def retained_axiom_ids(self) -> frozenset[str]:
        return frozenset(self.graph.and_nodes[aid].clause_id for aid in self.and_members)

    def member_and_children(self, or_id: str) -> tuple[str, ...]:
        return tuple(a for a in self.graph.or_nodes[or_id].children if a in self.and_members)

    def sorted_or_members(self) -> list[str]:
        return sorted(self.or_members, key=_id_key)

    def reverse_topological_or_order(self) -> list[str]:
        """Member OR ids with children before parents (the bottom-up
        evaluation order); doubles as the per-sample acyclicity check."""
        out_deg = {}
        parents_of: dict[str, list[str]] = defaultdict(list)
        for oid in self.or_members:
            children = [c for aid in self.member_and_children(oid) for c in self.graph.and_nodes[aid].children]
            out_deg[oid] = len(children)
            for c in children:
                parents_of[c].append(oid)
        queue = deque(sorted((oid for oid, d in out_deg.items() if d == 0), key=_id_key))
        order = []
        while queue:
            oid = queue.popleft()
            order.append(oid)
            for p in parents_of.get(oid, ()):
                out_deg[p] -= 1
                if out_deg[p] == 0:
                    queue.append(p)
        if len(order) != len(self.or_members):
            raise GraphCycleError("search space contains a cycle")
        return order

    def to_json(self) -> str:
        prov = self.provenance or {}
        doc = {
            "format": "percolog-space@1",
            "model": prov.get("model"),
            "k": prov.get("k"),
            "beta": prov.get("beta"),
            "seed": prov.get("seed"),
            "replicate": prov.get("replicate"),
            "axiom_ids": sorted(self.retained_axiom_ids()),
            "avg_degree": average_degree(self) if self.or_members else None,
            "node_count": self.node_count,
            "or_nodes": sorted(self.or_members, key=_id_key),
            "and_nodes": sorted(self.and_members, key=_id_key),
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, graph: AndOrGraph) -> "SearchSpace":
        doc = json.loads(text)
        if doc.get("format") != "percolog-space@1":
            raise KbError(f"not a percolog space file (format={doc.get('format')!r})")
        prov = {k: doc.get(k) for k in ("model", "k", "beta", "seed", "replicate") if doc.get(k) is not None}
        return cls(graph, doc["or_nodes"], doc["and_nodes"], prov or None)


def induced_space(graph: AndOrGraph, member_or_nodes: Iterable[str]) -> SearchSpace:
    """The sub-space induced by a member OR set: a rule application survives
    iff its parent and all of its body children are members."""
    members = frozenset(member_or_nodes)
    unknown = members - graph.or_nodes.keys()
    if unknown:
        raise ValueError(f"members not in graph: {sorted(unknown)[:3]}")
    and_members = [
        a.id
        for a in graph.and_nodes.values()
        if a.parent in members and all(c in members for c in a.children)
    ]
    return SearchSpace(graph, members, and_members)


def or_out_degrees(g: "AndOrGraph | SearchSpace") -> list[int]:
    """Multiset (sorted list) of OR out-degrees: child AND count per OR node."""
    if isinstance(g, SearchSpace):
        return sorted(len(g.member_and_children(oid)) for oid in g.or_members)
    return sorted(len(n.children) for n in g.or_nodes.values())


def average_degree(g: "AndOrGraph | SearchSpace") -> float:
    degrees = or_out_degrees(g)
    if not degrees:
        raise ValueError("average degree of an empty graph is undefined")
    return sum(degrees) / len(degrees)
