"""Faceted partial credit model: domain types, probability kernel, simulator.

The adjacent-category log-odds of a rating are

    log P(k) / P(k-1) = theta - difficulty - severity - step_k

so P(k) is proportional to ``exp(k * eta - sum(steps[:k]))`` with
``eta = theta - difficulty - severity``. Steps are item specific.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .exceptions import ConfigurationError, RejectedInputError

RESPONSE_COLUMNS = ["comment_id", "rater_id", "item_id", "rating", "any_identity", "weight"]


@dataclass(frozen=True)
class ItemSpec:
    """One survey item.

    ``steps`` holds the ``num_categories - 1`` step thresholds; when omitted
    they default to zeros. ``collapse_map`` maps raw categories onto analysis
    categories (see :func:`collapse_ratings`).
    """

    item_id: str
    num_categories: int
    difficulty: float = 0.0
    steps: tuple = ()
    collapse_map: tuple | None = None
    se: float = math.nan

    def __post_init__(self):
        object.__setattr__(self, "item_id", str(self.item_id))
        if int(self.num_categories) < 2:
            raise RejectedInputError(f"item {self.item_id}: num_categories must be >= 2")
        object.__setattr__(self, "num_categories", int(self.num_categories))
        steps = tuple(float(s) for s in self.steps)
        if not steps:
            steps = (0.0,) * (self.num_categories - 1)
        if len(steps) != self.num_categories - 1:
            raise RejectedInputError(
                f"item {self.item_id}: expected {self.num_categories - 1} steps, got {len(steps)}"
            )
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "difficulty", float(self.difficulty))
        if self.collapse_map is not None:
            object.__setattr__(self, "collapse_map", tuple(int(c) for c in self.collapse_map))

    @property
    def max_score(self) -> int:
        return self.num_categories - 1


@dataclass(frozen=True)
class RaterSpec:
    rater_id: str
    severity: float = 0.0
    se: float = math.nan

    def __post_init__(self):
        object.__setattr__(self, "rater_id", str(self.rater_id))
        object.__setattr__(self, "severity", float(self.severity))


@dataclass(frozen=True)
class CommentSpec:
    comment_id: str
    ability: float = 0.0
    ability_se: float = math.nan
    sampling_weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "comment_id", str(self.comment_id))
        object.__setattr__(self, "ability", float(self.ability))


@dataclass(frozen=True)
class Response:
    """A single rating event; collections of these travel as DataFrames."""

    comment_id: str
    rater_id: str
    item_id: str
    rating: int
    any_identity: int | None = None
    weight: float | None = None


@dataclass
class FacetParameters:
    items: list = field(default_factory=list)
    raters: list = field(default_factory=list)
    comments: list = field(default_factory=list)
    converged: bool = True
    log_likelihood: float = math.nan

    def item_map(self) -> dict:
        return {it.item_id: it for it in self.items}

    def rater_map(self) -> dict:
        return {r.rater_id: r for r in self.raters}

    def comment_map(self) -> dict:
        return {c.comment_id: c for c in self.comments}

    def constraint_violations(self) -> dict:
        """Absolute size of each identification constraint (0 when centred)."""
        out = {}
        if self.items:
            out["sum_difficulty"] = abs(sum(it.difficulty for it in self.items))
            out["max_abs_sum_steps"] = max(abs(sum(it.steps)) for it in self.items)
        if self.raters:
            out["sum_severity"] = abs(sum(r.severity for r in self.raters))
        return out


# --------------------------------------------------------------------------- kernel


def _check_finite(*values):
    for v in values:
        arr = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise RejectedInputError(f"non-finite parameter: {v!r}")


def cumulative_steps(steps: Sequence[float]) -> np.ndarray:
    """``[0, s1, s1+s2, ...]`` -- the step part of each category's log weight."""
    return np.concatenate([[0.0], np.cumsum(np.asarray(steps, dtype=float))])


def _probs_from_cum(eta: np.ndarray, cum: np.ndarray) -> np.ndarray:
    # cum rows may be padded with +inf for categories an item does not have.
    k = np.arange(cum.shape[-1])
    logw = eta[..., None] * k - cum
    logw = logw - logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=-1, keepdims=True)


def category_probabilities(theta: float, item: ItemSpec, severity: float = 0.0) -> np.ndarray:
    """Probability of each rating category ``0..K-1``.

    Parameters
    ----------
    theta : float
        Comment ability in logits.
    item : ItemSpec
        Supplies difficulty and step thresholds.
    severity : float
        Rater severity in logits.

    Returns
    -------
    numpy.ndarray of shape (num_categories,)
    """
    _check_finite(theta, severity, item.difficulty, item.steps)
    eta = np.asarray(float(theta) - item.difficulty - float(severity))
    return _probs_from_cum(eta, cumulative_steps(item.steps))


def expected_score(theta: float, item: ItemSpec, severity: float = 0.0) -> float:
    p = category_probabilities(theta, item, severity)
    return float(np.dot(np.arange(p.size), p))


def score_variance(theta: float, item: ItemSpec, severity: float = 0.0) -> float:
    p = category_probabilities(theta, item, severity)
    k = np.arange(p.size)
    e = np.dot(k, p)
    return float(np.dot((k - e) ** 2, p))


class ItemTable:
    """Items packed into padded arrays for vectorised evaluation."""

    def __init__(self, items: Sequence[ItemSpec]):
        self.items = list(items)
        self.ids = [it.item_id for it in self.items]
        self.index = {iid: n for n, iid in enumerate(self.ids)}
        self.n_cat = np.array([it.num_categories for it in self.items], dtype=np.int64)
        self.k_max = int(self.n_cat.max()) if len(self.items) else 2
        self.difficulty = np.array([it.difficulty for it in self.items], dtype=float)
        steps = np.zeros((len(self.items), self.k_max - 1))
        for n, it in enumerate(self.items):
            steps[n, : it.num_categories - 1] = it.steps
        self.steps = steps

    def cum(self, steps: np.ndarray | None = None) -> np.ndarray:
        steps = self.steps if steps is None else steps
        cum = np.concatenate([np.zeros((steps.shape[0], 1)), np.cumsum(steps, axis=1)], axis=1)
        pad = np.arange(self.k_max)[None, :] >= self.n_cat[:, None]
        cum[pad] = np.inf
        return cum


def probability_matrix(eta: np.ndarray, item_idx: np.ndarray, cum: np.ndarray) -> np.ndarray:
    """Row ``n`` is the category distribution for observation ``n``."""
    return _probs_from_cum(np.asarray(eta, dtype=float), cum[item_idx])


def moments(p: np.ndarray, order: int = 2):
    """Mean and central moments 2..order of category distributions ``p``."""
    k = np.arange(p.shape[-1])
    mean = p @ k
    d = k[None, :] - mean[:, None]
    out = [mean]
    for m in range(2, order + 1):
        out.append((p * d**m).sum(axis=1))
    return out


# --------------------------------------------------------------------------- simulation


def simulate_responses(
    parameters: FacetParameters,
    assignment: Iterable[tuple],
    seed=None,
) -> pd.DataFrame:
    """Draw one rating per ``(comment, rater, item)`` triple from the model.

    Returns a response frame with the standard columns; ``any_identity`` and
    ``weight`` are left missing.
    """
    triples = list(assignment)
    items = parameters.item_map()
    raters = parameters.rater_map()
    comments = parameters.comment_map()
    if not triples:
        return pd.DataFrame({c: pd.Series(dtype=object) for c in RESPONSE_COLUMNS})
    cid, rid, iid = (list(map(str, col)) for col in zip(*triples))
    for ids, known, label in ((cid, comments, "comment"), (rid, raters, "rater"), (iid, items, "item")):
        missing = sorted(set(ids) - set(known))
        if missing:
            raise RejectedInputError(f"unknown {label} id(s): {missing[:5]}")
    table = ItemTable(list(items.values()))
    theta = np.array([comments[c].ability for c in cid])
    sev = np.array([raters[r].severity for r in rid])
    item_idx = np.array([table.index[i] for i in iid])
    eta = theta - table.difficulty[item_idx] - sev
    p = probability_matrix(eta, item_idx, table.cum())
    rng = np.random.default_rng(seed)
    u = rng.random(len(triples))
    cdf = np.cumsum(p, axis=1)
    rating = (u[:, None] >= cdf[:, :-1]).sum(axis=1)
    rating = np.minimum(rating, table.n_cat[item_idx] - 1)
    return pd.DataFrame(
        {
            "comment_id": cid,
            "rater_id": rid,
            "item_id": iid,
            "rating": rating.astype(np.int64),
            "any_identity": np.nan,
            "weight": np.nan,
        }
    )


# --------------------------------------------------------------------------- collapsing


def check_collapse_map(collapse_map: Sequence[int], num_categories: int) -> int:
    """Validate a collapse map and return the collapsed category count."""
    cmap = [int(c) for c in collapse_map]
    if len(cmap) != num_categories:
        raise ConfigurationError(
            f"collapse map has {len(cmap)} entries for {num_categories} categories"
        )
    if cmap[0] != 0:
        raise ConfigurationError("collapse map must start at category 0")
    diffs = np.diff(cmap)
    if np.any(diffs < 0):
        raise ConfigurationError("collapse map must be non-decreasing")
    if np.any(diffs > 1):
        raise ConfigurationError("collapse map must be onto 0..K'-1 (no gaps)")
    new_k = cmap[-1] + 1
    if new_k < 2:
        raise ConfigurationError("collapse map leaves fewer than 2 categories")
    return new_k


def collapse_ratings(responses: pd.DataFrame, items: Sequence[ItemSpec]):
    """Apply each item's ``collapse_map`` to its ratings.

    Returns ``(responses, items)``; collapsed items get the reduced category
    count, zeroed steps and no collapse map. Items without a map pass through.
    """
    out = responses.copy()
    new_items = []
    for it in items:
        if it.collapse_map is None:
            new_items.append(it)
            continue
        new_k = check_collapse_map(it.collapse_map, it.num_categories)
        mask = out["item_id"].astype(str) == it.item_id
        lut = np.asarray(it.collapse_map)
        ratings = out.loc[mask, "rating"].to_numpy(dtype=np.int64)
        if ratings.size and (ratings.min() < 0 or ratings.max() >= it.num_categories):
            raise RejectedInputError(f"item {it.item_id}: rating outside 0..{it.num_categories - 1}")
        out.loc[mask, "rating"] = lut[ratings]
        new_items.append(replace(it, num_categories=new_k, steps=(0.0,) * (new_k - 1), collapse_map=None))
    return out, new_items


def parameters_from_mappings(
    items: Sequence[ItemSpec],
    severities: Mapping[str, float] | None = None,
    abilities: Mapping[str, float] | None = None,
) -> FacetParameters:
    raters = [RaterSpec(r, s) for r, s in (severities or {}).items()]
    comments = [CommentSpec(c, a) for c, a in (abilities or {}).items()]
    return FacetParameters(items=list(items), raters=raters, comments=comments)
