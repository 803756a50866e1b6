"""Judging plans: replicated comment groups plus reference comments per batch."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import sparse

from .exceptions import ConfigurationError, PlanError
from .graph import EXACT_NODE_LIMIT, bipartite_adjacency, distance_summary

PLAN_SCHEMA_VERSION = 1


@dataclass
class PlanConfig:
    ratings_per_comment: int = 4
    group_size: int = 4
    originals_per_batch: int = 20
    reference_per_batch: int = 6
    reference_levels: Mapping[str, Sequence[str]] = field(default_factory=dict)
    strata: Mapping[str, str] = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        for name in ("ratings_per_comment", "group_size", "originals_per_batch"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.reference_per_batch < 0:
            raise ConfigurationError("reference_per_batch must be >= 0")
        if self.originals_per_batch % self.group_size:
            raise ConfigurationError("originals_per_batch must be divisible by group_size")
        if self.reference_per_batch > 0:
            if not self.reference_levels:
                raise ConfigurationError("reference_per_batch > 0 needs reference_levels")
            empty = [lv for lv, pool in self.reference_levels.items() if len(pool) == 0]
            if empty:
                raise ConfigurationError(f"empty reference pool(s): {empty}")

    @property
    def groups_per_batch(self) -> int:
        return self.originals_per_batch // self.group_size


@dataclass
class Batch:
    batch_id: str
    originals: list
    references: list

    @property
    def comments(self) -> list:
        return list(self.originals) + list(self.references)


@dataclass
class JudgingPlan:
    batches: list
    groups: list = field(default_factory=list)
    config: PlanConfig | None = None

    def batch_map(self) -> dict:
        return {b.batch_id: b for b in self.batches}

    def edges(self):
        """``(batch_id, comment_id)`` pairs."""
        return [(b.batch_id, c) for b in self.batches for c in b.comments]

    def replication(self) -> dict:
        counts: dict = {}
        for b in self.batches:
            for c in b.originals:
                counts[c] = counts.get(c, 0) + 1
        return counts

    def to_dict(self) -> dict:
        cfg = None
        if self.config is not None:
            cfg = asdict(self.config)
            cfg["reference_levels"] = {k: list(v) for k, v in cfg["reference_levels"].items()}
            cfg["strata"] = dict(cfg["strata"])
        return {
            "version": PLAN_SCHEMA_VERSION,
            "config": cfg,
            "groups": [list(g) for g in self.groups],
            "batches": [
                {"batch_id": b.batch_id, "originals": list(b.originals), "references": list(b.references)}
                for b in self.batches
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "JudgingPlan":
        if data.get("version") != PLAN_SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported plan version {data.get('version')!r}")
        cfg = PlanConfig(**data["config"]) if data.get("config") else None
        batches = [Batch(b["batch_id"], list(b["originals"]), list(b["references"])) for b in data["batches"]]
        return cls(batches=batches, groups=[list(g) for g in data.get("groups", [])], config=cfg)


def _stratified_groups(comments, strata, group_size, rng):
    n_groups = len(comments) // group_size
    bins: dict = {}
    for c in comments:
        bins.setdefault(str(strata.get(c, "")), []).append(c)
    ordered = []
    for key in sorted(bins):
        pool = list(bins[key])
        rng.shuffle(pool)
        ordered.extend(pool)
    # dealing a bin-sorted list round-robin spreads every bin across groups
    groups = [ordered[g::n_groups] for g in range(n_groups)]
    order = rng.permutation(n_groups)
    return [groups[k] for k in order]


def _deal_slots(n_groups, replicas, per_batch, rng):
    slots = np.repeat(np.arange(n_groups), replicas)
    rng.shuffle(slots)
    n_batches = math.ceil(slots.size / per_batch)
    batches = [list(slots[b * per_batch:(b + 1) * per_batch]) for b in range(n_batches)]
    for _ in range(50 * slots.size + 100):
        dup = None
        for bi, b in enumerate(batches):
            seen = set()
            for si, g in enumerate(b):
                if g in seen:
                    dup = (bi, si, g)
                    break
                seen.add(g)
            if dup:
                break
        if dup is None:
            return batches
        bi, si, g = dup
        candidates = [
            (bj, sj)
            for bj, other in enumerate(batches)
            if bj != bi and g not in other
            for sj, h in enumerate(other)
            if h not in batches[bi]
        ]
        if not candidates:
            break
        bj, sj = candidates[int(rng.integers(len(candidates)))]
        batches[bi][si], batches[bj][sj] = batches[bj][sj], batches[bi][si]
    return _striped_slots(n_groups, replicas, n_batches, rng)


def _striped_slots(n_groups, replicas, n_batches, rng):
    # consecutive replicas of a group land in consecutive batches, so no
    # batch repeats a group whenever replicas <= n_batches
    seq = np.repeat(rng.permutation(n_groups), replicas)
    batches = [list(seq[b::n_batches]) for b in range(n_batches)]
    if any(len(set(b)) != len(b) for b in batches):
        raise PlanError("could not place every group replica in distinct batches")
    return [batches[k] for k in rng.permutation(n_batches)]


def build_plan(config: PlanConfig, original_comments: Sequence[str]) -> JudgingPlan:
    """Group originals, replicate each group into distinct batches, add references.

    Raises
    ------
    PlanError
        If the counts cannot satisfy the replication or uniqueness constraints.
    """
    comments = [str(c) for c in original_comments]
    if len(set(comments)) != len(comments):
        raise PlanError("original comments contain duplicates")
    g = config.group_size
    if not comments or len(comments) % g:
        raise PlanError(f"{len(comments)} originals is not a positive multiple of group_size={g}")
    n_groups = len(comments) // g
    per_batch = config.groups_per_batch
    r = config.ratings_per_comment
    if n_groups < per_batch:
        raise PlanError(f"{n_groups} groups is fewer than the {per_batch} groups each batch needs")
    n_batches = math.ceil(n_groups * r / per_batch)
    if r > n_batches:
        raise PlanError(f"ratings_per_comment={r} exceeds the {n_batches} batches available")
    levels = sorted(config.reference_levels)
    overlap = set(comments) & {c for pool in config.reference_levels.values() for c in pool}
    if overlap:
        raise PlanError(f"comments are both original and reference: {sorted(overlap)[:5]}")
    rng = np.random.default_rng(config.seed)

    groups = _stratified_groups(comments, config.strata, g, rng)
    slot_batches = _deal_slots(n_groups, r, per_batch, rng)

    width = max(4, len(str(len(slot_batches))))
    batches = []
    for bi, slots in enumerate(slot_batches):
        originals = [c for gi in slots for c in groups[gi]]
        refs: list = []
        if config.reference_per_batch:
            start = 0 if config.reference_per_batch == len(levels) else bi * config.reference_per_batch % len(levels)
            for k in range(config.reference_per_batch):
                level = levels[(start + k) % len(levels)]
                pool = [c for c in config.reference_levels[level] if c not in refs]
                if not pool:
                    raise PlanError(f"reference level {level!r} exhausted within one batch")
                refs.append(str(pool[int(rng.integers(len(pool)))]))
        batches.append(Batch(f"b{bi + 1:0{width}d}", originals, refs))
    return JudgingPlan(batches=batches, groups=groups, config=config)


@dataclass
class LinkageReport:
    nodes: int
    edges: int
    connected_components: int
    component_sizes: list
    diameter: float
    average_distance: float
    exact: bool
    projection: dict = field(default_factory=dict)

    @property
    def connected(self) -> bool:
        return self.connected_components == 1

    def summary(self) -> str:
        lines = [
            f"nodes={self.nodes} edges={self.edges} components={self.connected_components}",
            f"diameter={self.diameter:g} average_distance={self.average_distance:.3f}"
            + ("" if self.exact else " (estimated)"),
        ]
        if self.projection:
            p = self.projection
            lines.append(
                f"rater projection: nodes={p['nodes']} components={p['connected_components']} "
                f"diameter={p['diameter']:g} average_distance={p['average_distance']:.3f}"
            )
        return "\n".join(lines)


def _pairs(source):
    if isinstance(source, JudgingPlan):
        return pd.DataFrame(source.edges(), columns=["left", "right"])
    if isinstance(source, pd.DataFrame):
        return source[["rater_id", "comment_id"]].astype(str).rename(columns={"rater_id": "left", "comment_id": "right"})
    return pd.DataFrame(list(source), columns=["left", "right"]).astype(str)


def linkage_analysis(source, seed=0, exact_limit=EXACT_NODE_LIMIT) -> LinkageReport:
    """Connectivity, diameter and mean distance of the rater-comment graph.

    ``source`` is a :class:`JudgingPlan` (batch nodes), a response frame
    (rater nodes) or an iterable of ``(rater_or_batch, comment)`` pairs. The
    batch/rater projection (two raters adjacent when they share a comment)
    is reported under ``projection``.
    """
    pairs = _pairs(source).drop_duplicates()
    if pairs.empty:
        raise ConfigurationError("empty assignment")
    lc, lids = pd.factorize(pairs["left"], sort=True)
    rc, rids = pd.factorize(pairs["right"], sort=True)
    adj = bipartite_adjacency(lc, rc, len(lids), len(rids))
    s = distance_summary(adj, seed=seed, exact_limit=exact_limit)
    inc = sparse.csr_matrix((np.ones(lc.size), (lc, rc)), shape=(len(lids), len(rids)))
    proj = (inc @ inc.T).tocsr()
    proj.setdiag(0)
    proj.eliminate_zeros()
    proj.data[:] = 1
    ps = distance_summary(proj, seed=seed, exact_limit=exact_limit)
    return LinkageReport(
        nodes=s.nodes,
        edges=s.edges,
        connected_components=s.connected_components,
        component_sizes=s.component_sizes,
        diameter=s.diameter,
        average_distance=s.average_distance,
        exact=s.exact,
        projection=asdict(ps),
    )


def assign_batches_to_raters(plan: JudgingPlan, raters: Sequence[str], seed=None) -> dict:
    """Give each batch to a distinct rater; surplus raters stay idle."""
    raters = [str(r) for r in raters]
    if len(set(raters)) != len(raters):
        raise ConfigurationError("rater ids must be unique")
    if len(raters) < len(plan.batches):
        raise PlanError(f"{len(raters)} raters cannot cover {len(plan.batches)} batches")
    order = np.random.default_rng(seed).permutation(len(raters))
    return {b.batch_id: raters[k] for b, k in zip(plan.batches, order)}


def assignment_triples(plan: JudgingPlan, batch_raters: Mapping[str, str], item_ids: Sequence[str]) -> list:
    """``(comment, rater, item)`` triples for every rated comment and item."""
    out = []
    for b in plan.batches:
        rater = batch_raters.get(b.batch_id)
        if rater is None:
            continue
        for c in b.comments:
            out.extend((c, rater, i) for i in item_ids)
    return out
