"""Experiment harness: template expansion, parameter sweeps across models and
KB snapshots, transition/degeneracy detectors, matched model comparison, and
CSV/JSON emission.

A sweep cell is one (kb snapshot, model, parameter, replicate) combination;
its RNG stream is derived from the master seed and the cell coordinates, so
results are independent of execution order.  Every emitted table has a stable
column order, LF line endings, and '.' decimals.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import random
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Optional, Sequence

from . import metrics
from .engine import Query, QuerySet, QueryTemplate, depth_profile
from .graph import AndOrGraph, GoalSchema, average_degree, build_graph
from .growth import ablate_grow
from .kb import Atom, Constant, KnowledgeBase, Variable, parse_kb
from .sampling import SampleParams, derive_seed, greedy_degree_pairs, sample

log = logging.getLogger(__name__)


class InfeasibleExperimentError(Exception):
    """The experiment cannot produce a meaningful sweep (e.g. no queries)."""


class SweepCellError(Exception):
    """A sweep cell failed; the message identifies the cell."""


# ---------------------------------------------------------------------------
# Template expansion
# ---------------------------------------------------------------------------


def template_schema(template: QueryTemplate) -> GoalSchema:
    mask = [False, False]
    mask[template.bound_position - 1] = True
    return GoalSchema(template.predicate, 2, tuple(mask))


def root_schemas(templates: Sequence[QueryTemplate]) -> list[GoalSchema]:
    """Deduplicated goal schemas for the graph roots, in template order."""
    seen: dict[GoalSchema, None] = {}
    for t in templates:
        seen.setdefault(template_schema(t))
    return list(seen)


def expand_templates(kb: KnowledgeBase, templates: Sequence[QueryTemplate]) -> QuerySet:
    """Bind each template's parameter to every instance of its collection.

    Ill-formed candidates (a bound entity violating an argIsa constraint) are
    dropped, and duplicate queries across templates are emitted once.
    """
    queries: list[Query] = []
    seen: set[Atom] = set()
    for t in templates:
        known = kb.arity(t.predicate)
        if known is not None and known != 2:
            raise ValueError(f"template {t.id}: predicate {t.predicate!r} has arity {known}, need 2")
        if {t.bound_position, t.open_position} != {1, 2}:
            raise ValueError(f"template {t.id}: positions must cover both arguments of a binary predicate")
        for entity in sorted(kb.instances_of(t.param_collection)):
            args: list = [None, None]
            args[t.bound_position - 1] = Constant(entity)
            args[t.open_position - 1] = Variable("x")
            atom = Atom(t.predicate, tuple(args))
            if atom in seen:
                continue
            if not kb.well_formed(atom):
                continue
            seen.add(atom)
            queries.append(Query(atom, t.id))
    return QuerySet(tuple(queries))


def load_templates(path: "str | Path") -> list[QueryTemplate]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        QueryTemplate(
            id=t["id"],
            predicate=t["predicate"],
            bound_position=t["bound_position"],
            param_collection=t["param_collection"],
            open_position=t["open_position"],
        )
        for t in doc
    ]


def save_templates(templates: Sequence[QueryTemplate], path: "str | Path") -> None:
    doc = [
        {
            "id": t.id,
            "predicate": t.predicate,
            "bound_position": t.bound_position,
            "param_collection": t.param_collection,
            "open_position": t.open_position,
        }
        for t in templates
    ]
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Sweep configuration and rows
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    kb: str
    templates: str
    axioms: Optional[str] = None  # defaults to the kb file
    snapshot_sizes: Optional[tuple[int, ...]] = None
    snapshot_seed: int = 0
    snapshot_order: str = "uniform"
    model1_k: tuple[int, ...] = ()
    model2_beta: tuple[float, ...] = ()
    replicates: int = 7
    master_seed: int = 0
    depth_bound: int = 10
    depth_limit: int = 10
    genlpreds: bool = True
    threshold: float = 0.2
    compare_tolerance: float = 0.1
    continue_on_error: bool = False
    # depth profiles are the expensive per-cell artifact; None profiles every
    # replicate, n > 0 only the first n replicates of each cell group
    profile_replicates: Optional[int] = None

    @classmethod
    def from_json(cls, path: "str | Path") -> "ExperimentConfig":
        path = Path(path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        known = {f.name for f in fields(cls)}
        unknown = doc.keys() - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.model1_k = tuple(cfg.model1_k)
        cfg.model2_beta = tuple(cfg.model2_beta)
        if cfg.snapshot_sizes is not None:
            cfg.snapshot_sizes = tuple(cfg.snapshot_sizes)
        base = path.parent
        cfg.kb = str((base / cfg.kb).resolve())
        cfg.templates = str((base / cfg.templates).resolve())
        cfg.axioms = str((base / cfg.axioms).resolve()) if cfg.axioms else None
        return cfg


SWEEP_COLUMNS = (
    "model",
    "k_or_beta",
    "replicate",
    "seed",
    "kb_id",
    "kb_facts",
    "axiom_count",
    "or_nodes",
    "avg_degree",
    "alpha",
    "q_count",
    "answered",
    "answered_fraction",
    "total_answers",
    "threshold_hit",
    "wall_time_s",
)

COMPARISON_COLUMNS = (
    "kb_id",
    "pairs",
    "model1_mean_answers",
    "model2_mean_answers",
    "change_pct",
)

FIGURE_COLUMNS = (
    "kb_id",
    "k_or_beta",
    "mean_answered_fraction",
    "mean_alpha",
    "mean_total_answers",
    "threshold_hits",
)


@dataclass
class SweepRow:
    model: str
    k_or_beta: float
    replicate: int
    seed: int
    kb_id: str
    kb_facts: int
    axiom_count: Optional[int] = None
    or_nodes: Optional[int] = None
    avg_degree: Optional[float] = None
    alpha: Optional[float] = None
    q_count: Optional[int] = None
    answered: Optional[int] = None
    answered_fraction: Optional[float] = None
    total_answers: Optional[int] = None
    threshold_hit: Optional[bool] = None
    wall_time_s: Optional[float] = None

    @property
    def is_error(self) -> bool:
        return self.answered_fraction is None

    def cell_id(self) -> str:
        return f"{self.kb_id}_{param_tag(self.model, self.k_or_beta)}_rep{self.replicate}"

    def values(self) -> tuple:
        return tuple(getattr(self, c) for c in SWEEP_COLUMNS)


def param_tag(model: str, value: float) -> str:
    """Filename-friendly cell parameter: 'model1_k3' / 'model2_beta12.5'."""
    num = str(int(value)) if float(value).is_integer() else repr(float(value))
    return f"{model}_k{num}" if model == "model1" else f"{model}_beta{num}"


@dataclass
class SweepResult:
    rows: list[SweepRow]
    profiles: dict[str, dict[int, int]] = field(default_factory=dict)
    detectors: dict = field(default_factory=dict)
    comparison: list[dict] = field(default_factory=list)
    figures: dict[str, list[dict]] = field(default_factory=dict)


@dataclass
class LoadedExperiment:
    kb: KnowledgeBase
    graph: AndOrGraph
    queries: QuerySet
    snapshots: list[tuple[str, KnowledgeBase]]
    config: ExperimentConfig


def load_experiment(cfg: ExperimentConfig) -> LoadedExperiment:
    kb, kb_rules = parse_kb(Path(cfg.kb).read_text(encoding="utf-8"))
    if cfg.axioms and cfg.axioms != cfg.kb:
        _, axioms = parse_kb(Path(cfg.axioms).read_text(encoding="utf-8"))
    else:
        axioms = kb_rules
    templates = load_templates(cfg.templates)
    queries = expand_templates(kb, templates)
    if len(queries) == 0:
        raise InfeasibleExperimentError("template expansion produced no queries")
    graph = build_graph(axioms, root_schemas(templates), cfg.depth_bound, kb=kb, genlpreds_mode=cfg.genlpreds)
    if cfg.snapshot_sizes:
        schedule = ablate_grow(
            kb, cfg.snapshot_sizes, random.Random(cfg.snapshot_seed), cfg.snapshot_order, cfg.snapshot_seed
        )
        snapshots = list(schedule)
    else:
        snapshots = [("full", kb)]
    return LoadedExperiment(kb, graph, queries, snapshots, cfg)


def _cell_settings(cfg: ExperimentConfig) -> list[tuple[str, float]]:
    settings: list[tuple[str, float]] = [("model1", k) for k in cfg.model1_k]
    settings.extend(("model2", b) for b in cfg.model2_beta)
    if not settings:
        raise InfeasibleExperimentError("no model parameters configured")
    return settings


def run_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Execute every sweep cell and attach detectors, the matched model
    comparison, and the per-figure aggregates.

    The default error policy is loud: the first failing cell aborts the sweep
    naming the cell.  With ``continue_on_error`` the row is recorded with
    empty metric columns instead.
    """
    exp = load_experiment(cfg)
    settings = _cell_settings(cfg)
    rows: list[SweepRow] = []
    profiles: dict[str, dict[int, int]] = {}
    for kb_id, kb in exp.snapshots:
        for model, value in settings:
            for rep in range(cfg.replicates):
                seed = derive_seed(cfg.master_seed, kb_id, model, value, rep)
                row = SweepRow(
                    model=model,
                    k_or_beta=int(value) if model == "model1" else float(value),
                    replicate=rep,
                    seed=seed,
                    kb_id=kb_id,
                    kb_facts=kb.fact_count,
                )
                try:
                    t0 = time.perf_counter()
                    if model == "model1":
                        params = SampleParams("model1", k=int(value), seed=seed, replicate=rep)
                    else:
                        params = SampleParams("model2", beta=float(value), seed=seed, replicate=rep)
                    space = sample(exp.graph, params)
                    report = metrics.alpha(exp.graph, space, exp.queries, kb, cfg.genlpreds)
                    qa = metrics.answered_fraction(space, kb, exp.queries, cfg.depth_limit, cfg.genlpreds)
                    profile = None
                    if cfg.profile_replicates is None or rep < cfg.profile_replicates:
                        profile = depth_profile(space, kb, cfg.genlpreds)
                    row.axiom_count = len(space.retained_axiom_ids())
                    row.or_nodes = space.node_count
                    row.avg_degree = _space_degree(space)
                    row.alpha = report.alpha
                    row.q_count = qa.attempted
                    row.answered = qa.answered
                    row.answered_fraction = qa.fraction
                    row.total_answers = qa.total_answers
                    row.threshold_hit = metrics.threshold_hit(qa.fraction, cfg.threshold)
                    row.wall_time_s = time.perf_counter() - t0
                    if profile is not None:
                        profiles[row.cell_id()] = profile
                except Exception as e:
                    if not cfg.continue_on_error:
                        raise SweepCellError(f"cell {row.cell_id()} failed: {e}") from e
                    log.warning("cell %s failed: %s", row.cell_id(), e)
                rows.append(row)
    result = SweepResult(rows=rows, profiles=profiles)
    result.detectors = build_detectors(rows, profiles)
    result.comparison = compare_models(rows, cfg.compare_tolerance)
    result.figures = figure_tables(rows)
    return result


def _space_degree(space) -> float:
    return average_degree(space) if space.or_members else 0.0


# ---------------------------------------------------------------------------
# Detectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectorReport:
    kind: str  # "transition" | "degenerate" | "none"
    evidence: Optional[dict]
    parameters: dict

    def to_dict(self) -> dict:
        return {"kind": self.kind, "evidence": self.evidence, "parameters": self.parameters}


def detect_transition(
    points: Sequence[tuple[float, float]], min_range: float = 0.2, jump_share: float = 0.5
) -> DetectorReport:
    """Flag a sharp transition in (alpha, fraction) points sorted by alpha.

    The rule: the fraction range R must reach ``min_range`` and one single
    consecutive step must carry at least ``jump_share`` of R.  Linear ramps
    and flat curves stay unflagged.
    """
    params = {"min_range": min_range, "jump_share": jump_share}
    if len(points) < 3:
        raise ValueError("transition detection needs at least 3 points")
    alphas = [p[0] for p in points]
    if any(b < a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("points must be sorted by alpha")
    fractions = [p[1] for p in points]
    r = max(fractions) - min(fractions)
    steps = [fractions[i + 1] - fractions[i] for i in range(len(fractions) - 1)]
    j = max(steps)
    if r >= min_range and j > 0 and j >= jump_share * r:
        at = steps.index(j)
        evidence = {
            "jump_from_alpha": alphas[at],
            "jump_to_alpha": alphas[at + 1],
            "jump_from_fraction": fractions[at],
            "jump_to_fraction": fractions[at + 1],
            "jump_size": j,
            "range": r,
        }
        return DetectorReport("transition", evidence, params)
    return DetectorReport("none", None, params)


def detect_degenerate(
    profile: Mapping[int, int], min_peak: int = 100, root_share: float = 0.01
) -> DetectorReport:
    """Flag the die-down shape: a large peak of derived atoms at depth that
    collapses to (almost) nothing at the root."""
    params = {"min_peak": min_peak, "root_share": root_share}
    if not profile:
        raise ValueError("degeneracy detection needs a nonempty depth profile")
    peak_depth, peak_count = max(profile.items(), key=lambda kv: (kv[1], -kv[0]))
    root_count = profile.get(0, 0)
    if peak_count >= min_peak and root_count <= root_share * peak_count:
        evidence = {"peak_depth": peak_depth, "peak_count": peak_count, "root_count": root_count}
        return DetectorReport("degenerate", evidence, params)
    return DetectorReport("none", None, params)


def build_detectors(
    rows: Sequence[SweepRow],
    profiles: Mapping[str, Mapping[int, int]],
    min_range: float = 0.2,
    jump_share: float = 0.5,
    min_peak: int = 100,
    root_share: float = 0.01,
) -> dict:
    """Transition detection per (model, parameter) pooled across snapshots and
    replicates, degeneracy detection per cell, and the observed rates."""
    groups: dict[tuple[str, float], list[tuple[float, float]]] = {}
    for r in rows:
        if r.is_error or r.alpha is None:
            continue
        groups.setdefault((r.model, r.k_or_beta), []).append((r.alpha, r.answered_fraction))
    transitions = []
    flagged = 0
    for (model, value), pts in groups.items():
        pts.sort()
        if len(pts) >= 3:
            rep = detect_transition(pts, min_range, jump_share)
        else:
            rep = DetectorReport("none", None, {"min_range": min_range, "jump_share": jump_share, "points": len(pts)})
        if rep.kind == "transition":
            flagged += 1
        transitions.append({"model": model, "k_or_beta": value, **rep.to_dict()})
    degenerate = []
    deg_flagged = 0
    for cell in sorted(profiles):
        rep = detect_degenerate(dict(profiles[cell]), min_peak, root_share) if profiles[cell] else DetectorReport(
            "none", None, {"min_peak": min_peak, "root_share": root_share}
        )
        if rep.kind == "degenerate":
            deg_flagged += 1
        degenerate.append({"cell": cell, **rep.to_dict()})
    return {
        "transitions": transitions,
        "degenerate": degenerate,
        "rates": {
            "transition_rate": flagged / len(groups) if groups else 0.0,
            "degenerate_rate": deg_flagged / len(profiles) if profiles else 0.0,
        },
    }


# ---------------------------------------------------------------------------
# Model comparison and figure aggregates
# ---------------------------------------------------------------------------


def compare_models(rows: Sequence[SweepRow], tolerance: float = 0.1) -> list[dict]:
    """Per snapshot: pair Model 1 and Model 2 samples of matching average
    degree, then compare mean total answers (relative change of Model 2)."""
    kb_order: list[str] = []
    for r in rows:
        if r.kb_id not in kb_order:
            kb_order.append(r.kb_id)
    table = []
    for kb_id in kb_order:
        m1 = [r for r in rows if r.kb_id == kb_id and r.model == "model1" and not r.is_error]
        m2 = [r for r in rows if r.kb_id == kb_id and r.model == "model2" and not r.is_error]
        pairs = greedy_degree_pairs(
            [r.avg_degree for r in m1], [r.avg_degree for r in m2], tolerance
        )
        if not pairs:
            log.warning("no degree-matched pairs for snapshot %s (tolerance %s)", kb_id, tolerance)
            continue
        mean1 = sum(m1[i].total_answers for i, _ in pairs) / len(pairs)
        mean2 = sum(m2[j].total_answers for _, j in pairs) / len(pairs)
        change = ((mean2 - mean1) / mean1 * 100.0) if mean1 else None
        table.append(
            {
                "kb_id": kb_id,
                "pairs": len(pairs),
                "model1_mean_answers": mean1,
                "model2_mean_answers": mean2,
                "change_pct": change,
            }
        )
    if not table:
        log.warning("model comparison is empty: no degree-matched pairs at tolerance %s", tolerance)
    return table


def figure_tables(rows: Sequence[SweepRow]) -> dict[str, list[dict]]:
    """Coverage-versus-parameter aggregates per KB (one table per model)."""
    out: dict[str, list[dict]] = {"model1": [], "model2": []}
    seen: dict[tuple[str, str, float], list[SweepRow]] = {}
    order: list[tuple[str, str, float]] = []
    for r in rows:
        if r.is_error:
            continue
        key = (r.model, r.kb_id, r.k_or_beta)
        if key not in seen:
            seen[key] = []
            order.append(key)
        seen[key].append(r)
    for model, kb_id, value in order:
        group = seen[(model, kb_id, value)]
        out[model].append(
            {
                "kb_id": kb_id,
                "k_or_beta": value,
                "mean_answered_fraction": sum(r.answered_fraction for r in group) / len(group),
                "mean_alpha": sum(r.alpha for r in group) / len(group),
                "mean_total_answers": sum(r.total_answers for r in group) / len(group),
                "threshold_hits": sum(1 for r in group if r.threshold_hit),
            }
        )
    return out


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def _format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_table(rows: "Sequence[SweepRow] | Sequence[Mapping]", columns: Optional[Sequence[str]] = None) -> str:
    """CSV text for rows: stable column order, header, LF endings, '.' decimals."""
    if rows and isinstance(rows[0], SweepRow):
        columns = SWEEP_COLUMNS
        dicts = [dict(zip(SWEEP_COLUMNS, r.values())) for r in rows]  # type: ignore[union-attr]
    else:
        dicts = [dict(r) for r in rows]  # type: ignore[arg-type]
        if columns is None:
            if not dicts:
                raise ValueError("cannot infer columns for an empty table; pass columns=")
            columns = list(dicts[0])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for d in dicts:
        writer.writerow([_format_cell(d.get(c)) for c in columns])
    return buf.getvalue()


def emit(
    rows: "Sequence[SweepRow] | Sequence[Mapping]",
    path: "str | Path",
    fmt: str = "csv",
    columns: Optional[Sequence[str]] = None,
) -> None:
    """Write rows as CSV (via :func:`format_table`) or as a JSON array."""
    path = Path(path)
    if fmt == "csv":
        path.write_text(format_table(rows, columns), encoding="utf-8")
        return
    if fmt != "json":
        raise ValueError(f"unknown format {fmt!r}")
    if rows and isinstance(rows[0], SweepRow):
        dicts = [dict(zip(SWEEP_COLUMNS, r.values())) for r in rows]  # type: ignore[union-attr]
    else:
        dicts = [dict(r) for r in rows]  # type: ignore[arg-type]
    path.write_text(json.dumps(dicts, indent=1) + "\n", encoding="utf-8")


_ROW_PARSERS = {
    "model": str,
    "kb_id": str,
    "replicate": int,
    "seed": int,
    "kb_facts": int,
    "axiom_count": int,
    "or_nodes": int,
    "q_count": int,
    "answered": int,
    "total_answers": int,
    "avg_degree": float,
    "alpha": float,
    "answered_fraction": float,
    "wall_time_s": float,
    "threshold_hit": lambda s: s == "true",
}


def _parse_param(s: str):
    try:
        return int(s)
    except ValueError:
        return float(s)


def parse_rows(path: "str | Path") -> list[SweepRow]:
    """Read a sweep CSV back into rows (the emit round trip)."""
    rows = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != SWEEP_COLUMNS:
            raise ValueError(f"unexpected sweep columns in {path}: {reader.fieldnames}")
        for rec in reader:
            kwargs = {}
            for col in SWEEP_COLUMNS:
                raw = rec[col]
                if raw == "":
                    kwargs[col] = None
                elif col == "k_or_beta":
                    kwargs[col] = _parse_param(raw)
                else:
                    kwargs[col] = _ROW_PARSERS[col](raw)
            rows.append(SweepRow(**kwargs))
    return rows


def profile_to_csv(profile: Mapping[int, int]) -> str:
    lines = ["depth,count"]
    lines.extend(f"{d},{profile[d]}" for d in sorted(profile))
    return "\n".join(lines) + "\n"


def parse_profile_csv(text: str) -> dict[int, int]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "depth,count":
        raise ValueError("not a depth profile CSV")
    out = {}
    for ln in lines[1:]:
        d, c = ln.split(",")
        out[int(d)] = int(c)
    return out


def write_sweep_outputs(result: SweepResult, outdir: "str | Path") -> None:
    """Materialize a sweep: sweep.csv, per-cell depth profiles, detectors.json,
    the matched model comparison, and the figure aggregates."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    emit(result.rows, outdir / "sweep.csv", "csv")
    profile_dir = outdir / "profiles"
    profile_dir.mkdir(exist_ok=True)
    for cell, profile in sorted(result.profiles.items()):
        (profile_dir / f"{cell}.csv").write_text(profile_to_csv(profile), encoding="utf-8")
    (outdir / "detectors.json").write_text(json.dumps(result.detectors, indent=1) + "\n", encoding="utf-8")
    emit(result.comparison, outdir / "comparison.csv", "csv", columns=COMPARISON_COLUMNS)
    emit(result.figures["model1"], outdir / "figure_model1.csv", "csv", columns=FIGURE_COLUMNS)
    emit(result.figures["model2"], outdir / "figure_model2.csv", "csv", columns=FIGURE_COLUMNS)
