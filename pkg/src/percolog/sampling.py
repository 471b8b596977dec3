"""Search-space samplers.

Model 1 keeps at most k rule applications per OR node (uniformizing the
out-degree distribution); Model 2 keeps ceil(beta% * c) of a node's c
applications (preserving skew).  Both walk breadth-first from the roots,
decide each visited OR node exactly once, and keep every body child of a kept
rule application, so a sampled space is always closed and acyclic.  RNG
streams are derived deterministically from (master seed, parameters,
replicate index); results do not depend on scheduling.
"""

from __future__ import annotations

import hashlib
import math
import random
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence

from .graph import AndOrGraph, SearchSpace, average_degree


@dataclass(frozen=True)
class SampleParams:
    """One sampling cell: exactly the parameter matching the model is set."""

    model: str  # "model1" | "model2"
    k: Optional[int] = None
    beta: Optional[float] = None
    seed: int = 0
    replicate: int = 0

    def __post_init__(self) -> None:
        if self.model == "model1":
            if self.k is None or self.k < 1 or self.beta is not None:
                raise ValueError("model1 takes k >= 1 and no beta")
        elif self.model == "model2":
            if self.beta is None or not (0 < self.beta <= 100) or self.k is not None:
                raise ValueError("model2 takes beta in (0, 100] and no k")
        else:
            raise ValueError(f"unknown model {self.model!r}")

    @property
    def value(self) -> float:
        return self.k if self.model == "model1" else self.beta  # type: ignore[return-value]

    def provenance(self) -> dict:
        return {
            "model": self.model,
            "k": self.k,
            "beta": self.beta,
            "seed": self.seed,
            "replicate": self.replicate,
        }


@dataclass(frozen=True)
class MatchedPair:
    """Two spaces, one per model, whose average degrees differ by at most the
    tolerance; the basis for matched model comparisons."""

    space_a: SearchSpace
    space_b: SearchSpace
    average: float
    gap: float
    tolerance: float

    def __post_init__(self) -> None:
        if self.gap > self.tolerance:
            raise ValueError(f"degree gap {self.gap} exceeds tolerance {self.tolerance}")


def derive_seed(master_seed: int, *parts: object) -> int:
    """Stable 64-bit stream seed for a sweep cell."""
    text = f"{master_seed}|" + "|".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _keep_count_model2(beta: "float | int | str | Fraction", child_count: int) -> int:
    # exact rational arithmetic so 20% of 5 is exactly 1, never 2
    frac = beta if isinstance(beta, Fraction) else Fraction(str(beta))
    return math.ceil(frac * child_count / 100)


def _sample(
    graph: AndOrGraph,
    keep_count: Callable[[int], int],
    rng: random.Random,
    provenance: Optional[dict],
) -> SearchSpace:
    visited: set[str] = set()
    kept_and: list[str] = []
    queue: deque[str] = deque()
    for rid in graph.roots:
        if rid not in visited:
            visited.add(rid)
            queue.append(rid)
    while queue:
        oid = queue.popleft()
        children = graph.or_nodes[oid].children
        if not children:
            continue
        n_keep = min(keep_count(len(children)), len(children))
        if n_keep == len(children):
            chosen: Sequence[str] = children
        else:
            picked = set(rng.sample(range(len(children)), n_keep))
            chosen = [c for i, c in enumerate(children) if i in picked]
        for aid in chosen:
            kept_and.append(aid)
            for cid in graph.and_nodes[aid].children:
                if cid not in visited:
                    visited.add(cid)
                    queue.append(cid)
    return SearchSpace(graph, visited, kept_and, provenance)


def model1_sample(
    graph: AndOrGraph, k: int, rng: random.Random, params: Optional[SampleParams] = None
) -> SearchSpace:
    """Keep min(k, c) rule applications per visited OR node, uniformly without
    replacement; every out-degree in the result is <= k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    prov = params.provenance() if params else {"model": "model1", "k": k}
    return _sample(graph, lambda c: min(k, c), rng, prov)


def model2_sample(
    graph: AndOrGraph, beta: float, rng: random.Random, params: Optional[SampleParams] = None
) -> SearchSpace:
    """Keep ceil(beta% * c) rule applications per visited OR node; beta=100
    reproduces the parent graph exactly."""
    if not 0 < float(beta) <= 100:
        raise ValueError("beta must be in (0, 100]")
    prov = params.provenance() if params else {"model": "model2", "beta": beta}
    return _sample(graph, lambda c: _keep_count_model2(beta, c), rng, prov)


def sample(graph: AndOrGraph, params: SampleParams) -> SearchSpace:
    """Sample one space from its cell parameters (seed included)."""
    rng = random.Random(params.seed)
    if params.model == "model1":
        return model1_sample(graph, params.k, rng, params)  # type: ignore[arg-type]
    return model2_sample(graph, params.beta, rng, params)  # type: ignore[arg-type]


def generate_replicates(
    graph: AndOrGraph,
    settings: Iterable[tuple[str, float]],
    replicates: int = 7,
    master_seed: int = 0,
) -> list[SearchSpace]:
    """Replicated spaces for each (model, parameter) setting, with one derived
    RNG stream per replicate; same master seed, same spaces."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    out = []
    for model, value in settings:
        for rep in range(replicates):
            seed = derive_seed(master_seed, model, value, rep)
            if model == "model1":
                params = SampleParams("model1", k=int(value), seed=seed, replicate=rep)
            else:
                params = SampleParams("model2", beta=float(value), seed=seed, replicate=rep)
            out.append(sample(graph, params))
    return out


def greedy_degree_pairs(
    degrees_a: Sequence[float], degrees_b: Sequence[float], tolerance: float
) -> list[tuple[int, int]]:
    """Greedy closest-gap pairing of two degree lists; each index used once."""
    candidates = sorted(
        (abs(da - db), i, j)
        for i, da in enumerate(degrees_a)
        for j, db in enumerate(degrees_b)
        if abs(da - db) <= tolerance
    )
    used_a: set[int] = set()
    used_b: set[int] = set()
    pairs = []
    for _, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    return sorted(pairs)


def matched_pairs(
    model1_spaces: Sequence[SearchSpace],
    model2_spaces: Sequence[SearchSpace],
    tolerance: float = 0.1,
) -> list[MatchedPair]:
    """Pair Model 1 against Model 2 spaces of (nearly) equal average degree."""
    deg_a = [average_degree(s) for s in model1_spaces]
    deg_b = [average_degree(s) for s in model2_spaces]
    out = []
    for i, j in greedy_degree_pairs(deg_a, deg_b, tolerance):
        out.append(
            MatchedPair(
                space_a=model1_spaces[i],
                space_b=model2_spaces[j],
                average=(deg_a[i] + deg_b[j]) / 2,
                gap=abs(deg_a[i] - deg_b[j]),
                tolerance=tolerance,
            )
        )
    return out
