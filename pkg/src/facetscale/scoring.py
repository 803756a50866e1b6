"""Scoring predicted rating distributions against anchored item parameters.

With items and steps anchored and a single scoring rater of severity 0,
ability is a function of the raw score alone, so both modal and plausible
value scoring look abilities up in a precomputed raw-score table.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .estimation import solve_locations
from .exceptions import ConfigurationError, MissingDataError, RejectedInputError
from .model import FacetParameters, ItemSpec, ItemTable

AGGREGATIONS = ("mean_theta", "median_theta")


@dataclass(frozen=True)
class RatingDistribution:
    comment_id: str
    item_id: str
    probabilities: tuple

    def __post_init__(self):
        object.__setattr__(self, "comment_id", str(self.comment_id))
        object.__setattr__(self, "item_id", str(self.item_id))
        object.__setattr__(self, "probabilities", tuple(normalize_probabilities(self.probabilities)))


def normalize_probabilities(p, tol=1e-6) -> np.ndarray:
    """Renormalize a probability vector whose sum is within ``tol`` of 1."""
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise RejectedInputError("a distribution needs at least two categories")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise RejectedInputError("probabilities must be finite and non-negative")
    total = arr.sum()
    if abs(total - 1.0) > tol:
        raise RejectedInputError(f"probabilities sum to {total:.9g}, not 1")
    if abs(total - 1.0) <= 1e-10:
        # off only by 12-digit decimal rounding; keep values as written
        return arr.copy()
    return arr / total


@dataclass
class PlausibleValueConfig:
    replications: int = 1
    seed: int = 0
    aggregation: str = "mean_theta"
    keep_replications: bool = False

    def __post_init__(self):
        if int(self.replications) < 1:
            raise ConfigurationError("replications must be >= 1")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigurationError(f"aggregation must be one of {AGGREGATIONS}")


def raw_score_table(parameters: FacetParameters | Sequence[ItemSpec], method: str = "WLE") -> pd.DataFrame:
    """Ability and standard error for every achievable raw score.

    Rows run over raw scores ``0..sum(K_i - 1)`` for a comment rated once on
    every item by a rater of severity 0.
    """
    items = parameters.items if isinstance(parameters, FacetParameters) else list(parameters)
    if not items:
        raise ConfigurationError("no anchored items")
    t = ItemTable(items)
    tops = t.n_cat - 1
    n_raw = int(tops.sum()) + 1
    # any response pattern with the right total works; fill items left to right
    x = np.zeros((n_raw, len(items)), dtype=np.int64)
    for r in range(n_raw):
        left = r
        for n, top in enumerate(tops):
            x[r, n] = min(top, left)
            left -= x[r, n]
    elem = np.repeat(np.arange(n_raw), len(items))
    item_idx = np.tile(np.arange(len(items)), n_raw)
    offset = -t.difficulty[item_idx]
    theta, se = solve_locations(offset, item_idx, x.ravel(), elem, n_raw, t.cum(), t.n_cat, method=method)
    return pd.DataFrame({"raw_score": np.arange(n_raw), "theta": theta, "se": se})


def _group(distributions, items: Sequence[ItemSpec]) -> dict:
    k = {it.item_id: it.num_categories for it in items}
    out: dict = {}
    for d in distributions:
        if not isinstance(d, RatingDistribution):
            d = RatingDistribution(*d)
        if d.item_id not in k:
            raise ConfigurationError(f"no anchored parameters for item {d.item_id!r}")
        if len(d.probabilities) != k[d.item_id]:
            raise RejectedInputError(
                f"{d.comment_id}/{d.item_id}: {len(d.probabilities)} probabilities for {k[d.item_id]} categories"
            )
        out.setdefault(d.comment_id, {})[d.item_id] = np.asarray(d.probabilities)
    for cid, per in out.items():
        missing = [it.item_id for it in items if it.item_id not in per]
        if missing:
            raise MissingDataError(f"comment {cid}: no distribution for items {missing}")
    return out


def _stream(seed: int, comment_id: str) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(comment_id.encode("utf-8"))])


def score_modal(distributions: Iterable, anchored_parameters: FacetParameters, method: str = "WLE") -> pd.DataFrame:
    """Score the most probable category per item (ties go to the lower category)."""
    items = anchored_parameters.items
    grouped = _group(distributions, items)
    table = raw_score_table(items, method)
    ids = sorted(grouped)
    raw = np.array([sum(int(np.argmax(grouped[c][it.item_id])) for it in items) for c in ids], dtype=np.int64)
    return pd.DataFrame(
        {"theta": table["theta"].to_numpy()[raw], "se": table["se"].to_numpy()[raw], "raw": raw},
        index=pd.Index(ids, name="comment_id"),
    )


def score_plausible(
    distributions: Iterable,
    anchored_parameters: FacetParameters,
    config: PlausibleValueConfig | None = None,
    method: str = "WLE",
):
    """Plausible-value scoring.

    Each replication draws one rating per item from its predicted
    distribution (inverse-CDF sampling, one random stream per comment derived
    from ``(seed, comment_id)``), sums them and maps the raw score to ability.
    Abilities are aggregated over replications.

    Returns a frame with ``theta``, ``sd`` and ``raw_mean`` per comment; with
    ``keep_replications`` a second frame of per-replication abilities is
    returned as well.
    """
    config = config or PlausibleValueConfig()
    items = anchored_parameters.items
    grouped = _group(distributions, items)
    table = raw_score_table(items, method)["theta"].to_numpy()
    R = int(config.replications)
    ids = sorted(grouped)
    theta = np.empty(len(ids))
    sd = np.empty(len(ids))
    raw_mean = np.empty(len(ids))
    reps = np.empty((len(ids), R))
    for n, cid in enumerate(ids):
        u = _stream(config.seed, cid).random((len(items), R))
        raw = np.zeros(R, dtype=np.int64)
        for k, it in enumerate(items):
            cdf = np.cumsum(grouped[cid][it.item_id])[:-1]
            raw += (u[k][:, None] >= cdf[None, :]).sum(axis=1)
        th = table[raw]
        reps[n] = th
        if config.aggregation == "mean_theta":
            # anchor on the first draw so identical draws reproduce it exactly
            theta[n] = th[0] + np.mean(th - th[0])
        else:
            theta[n] = np.median(th)
        sd[n] = np.std(th)
        raw_mean[n] = raw.mean()
    index = pd.Index(ids, name="comment_id")
    out = pd.DataFrame({"theta": theta, "sd": sd, "raw_mean": raw_mean}, index=index)
    if config.keep_replications:
        return out, pd.DataFrame(reps, index=index)
    return out


class AnchoredScorer(TransformerMixin, BaseEstimator):
    """Turn predicted rating distributions into abilities on an anchored scale.

    ``parameters`` supplies the anchored items and steps. ``strategy`` is
    ``"plausible"`` or ``"modal"``.
    """

    def __init__(self, parameters=None, strategy="plausible", replications=32, seed=0,
                 aggregation="mean_theta", method="WLE"):
        self.parameters = parameters
        self.strategy = strategy
        self.replications = replications
        self.seed = seed
        self.aggregation = aggregation
        self.method = method

    def fit(self, X=None, y=None):
        if self.parameters is None:
            raise ConfigurationError("AnchoredScorer needs anchored parameters")
        if self.strategy not in ("plausible", "modal"):
            raise ConfigurationError("strategy must be 'plausible' or 'modal'")
        self.table_ = raw_score_table(self.parameters, self.method)
        return self

    def transform(self, X):
        check_is_fitted(self, "table_")
        if self.strategy == "modal":
            return score_modal(X, self.parameters, self.method)
        cfg = PlausibleValueConfig(self.replications, self.seed, self.aggregation)
        return score_plausible(X, self.parameters, cfg, self.method)
