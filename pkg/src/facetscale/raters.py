"""Rater quality screening and the exclude-then-refit loop."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .diagnostics import FitReport, fit_statistics
from .estimation import EstimationConfig, EstimationResult, estimate
from .exceptions import ConfigurationError, PipelineError
from .graph import bipartite_components
from .model import FacetParameters
from .validation import check_responses

INFIT_HIGH = "infit_high"
INFIT_LOW = "infit_low"
IDENTITY_LOW = "identity_low"
SEVERITY_EXTREME = "severity_extreme"
DURATION_SHORT = "duration_short"
INFIT_QUANTILE = "infit_quantile"


@dataclass
class RaterQuality:
    rater_id: str
    identity_rate: float
    infit_mnsq: float
    batches_completed: int | None = None
    duration_seconds: float | None = None
    severity: float = math.nan
    excluded: bool = False
    exclusion_reasons: list = field(default_factory=list)


@dataclass
class FilterPolicy:
    """Exclusion thresholds; every comparison is strict.

    ``severity_abs_max`` and ``duration_min_seconds`` are off when None.
    ``infit_quantile`` (off by default) additionally drops raters whose
    infit lies above that quantile of the current round.
    """

    infit_max: float = 1.9
    infit_min: float = 0.37
    identity_rate_min: float = 0.20
    severity_abs_max: float | None = None
    duration_min_seconds: float | None = None
    infit_quantile: float | None = None
    rounds: int = 4

    def __post_init__(self):
        if not self.infit_min < self.infit_max:
            raise ConfigurationError("infit_min must be below infit_max")
        if not 0.0 <= self.identity_rate_min <= 1.0:
            raise ConfigurationError("identity_rate_min must lie in [0, 1]")
        if self.infit_quantile is not None and not 0.0 < self.infit_quantile < 1.0:
            raise ConfigurationError("infit_quantile must lie in (0, 1)")
        if self.rounds < 1:
            raise ConfigurationError("rounds must be >= 1")


def compute_rater_quality(
    responses,
    fit_report: FitReport,
    parameters: FacetParameters | None = None,
    batch_counts: Mapping[str, int] | None = None,
    durations: Mapping[str, float] | None = None,
) -> list:
    """Identity rate, infit and severity per rater appearing in ``responses``.

    The identity rate is the share of a rater's comments on which any row
    carries ``any_identity == 1``. When no row has the flag the rate is NaN
    and the identity screen is skipped.
    """
    df = check_responses(responses)
    flags = df.dropna(subset=["any_identity"])
    if flags.empty:
        warnings.warn("any_identity missing; identity screen skipped", RuntimeWarning, stacklevel=2)
        rate = pd.Series(dtype=float)
    else:
        per_comment = flags.groupby(["rater_id", "comment_id"])["any_identity"].max()
        rate = per_comment.groupby(level="rater_id").mean()
    fit = fit_report.facet("rater")
    sev = {r.rater_id: r.severity for r in parameters.raters} if parameters else {}
    out = []
    for rid in sorted(df["rater_id"].unique()):
        out.append(
            RaterQuality(
                rater_id=rid,
                identity_rate=float(rate.get(rid, math.nan)),
                infit_mnsq=float(fit["infit_mnsq"].get(rid, math.nan)),
                batches_completed=None if batch_counts is None else batch_counts.get(rid),
                duration_seconds=None if durations is None else durations.get(rid),
                severity=float(sev.get(rid, math.nan)),
            )
        )
    return out


def apply_policy(qualities: Sequence[RaterQuality], policy: FilterPolicy):
    """Partition raters into ``(kept, excluded)``, each tagged with every rule it breaks."""
    cutoff = None
    if policy.infit_quantile is not None:
        vals = [q.infit_mnsq for q in qualities if np.isfinite(q.infit_mnsq)]
        if vals:
            cutoff = float(np.quantile(vals, policy.infit_quantile))
    kept, excluded = [], []
    for q in sorted(qualities, key=lambda q: q.rater_id):
        reasons = []
        if np.isfinite(q.infit_mnsq):
            if q.infit_mnsq > policy.infit_max:
                reasons.append(INFIT_HIGH)
            if q.infit_mnsq < policy.infit_min:
                reasons.append(INFIT_LOW)
            if cutoff is not None and q.infit_mnsq > cutoff:
                reasons.append(INFIT_QUANTILE)
        if np.isfinite(q.identity_rate) and q.identity_rate < policy.identity_rate_min:
            reasons.append(IDENTITY_LOW)
        if policy.severity_abs_max is not None and np.isfinite(q.severity) and abs(q.severity) > policy.severity_abs_max:
            reasons.append(SEVERITY_EXTREME)
        if (
            policy.duration_min_seconds is not None
            and q.duration_seconds is not None
            and q.duration_seconds < policy.duration_min_seconds
        ):
            reasons.append(DURATION_SHORT)
        q = RaterQuality(**{**asdict(q), "excluded": bool(reasons), "exclusion_reasons": reasons})
        (excluded if reasons else kept).append(q)
    return kept, excluded


@dataclass
class FilterRound:
    round: int
    raters_in: int
    excluded: dict
    refused: bool = False
    note: str = ""
    converged: bool = True


@dataclass
class FilterOutcome:
    result: EstimationResult
    rounds: list
    excluded: dict
    kept_responses: pd.DataFrame
    pending: dict = field(default_factory=dict)

    @property
    def estimation_passes(self) -> int:
        return len(self.rounds)

    def audit(self) -> dict:
        return {
            "rounds": [asdict(r) for r in self.rounds],
            "excluded": self.excluded,
            "pending": self.pending,
            "estimation_passes": self.estimation_passes,
        }


def _connected(df: pd.DataFrame) -> bool:
    if df.empty:
        return False
    cc, cids = pd.factorize(df["comment_id"])
    rc, rids = pd.factorize(df["rater_id"])
    n, _ = bipartite_components(cc, rc, len(cids), len(rids))
    return n == 1


def filter_and_refit(
    responses,
    items=None,
    policy: FilterPolicy | None = None,
    estimation_config: EstimationConfig | None = None,
    batch_counts=None,
    durations=None,
) -> FilterOutcome:
    """Estimate, screen raters, drop the flagged ones, re-estimate.

    At most ``policy.rounds`` estimation passes run. Exclusions found in the
    last pass are reported as ``pending`` rather than applied, so the
    returned estimate always reflects the data it was fitted on. A round
    whose exclusions would split the comment-rater network is refused and
    the loop stops.
    """
    policy = policy or FilterPolicy()
    df = check_responses(responses, items)
    excluded: dict = {}
    rounds = []
    pending: dict = {}
    result = None
    for rnd in range(1, policy.rounds + 1):
        result = estimate(df, items, estimation_config)
        report = fit_statistics(df, result.parameters)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            quals = compute_rater_quality(df, report, result.parameters, batch_counts, durations)
        _, bad = apply_policy(quals, policy)
        new = {q.rater_id: q.exclusion_reasons for q in bad}
        entry = FilterRound(rnd, int(df["rater_id"].nunique()), new, converged=result.converged)
        rounds.append(entry)
        if not new:
            break
        if rnd == policy.rounds:
            pending = new
            entry.note = "round limit reached; exclusions not applied"
            break
        remaining = df[~df["rater_id"].isin(new)]
        if remaining.empty:
            raise PipelineError("every rater would be excluded")
        if not _connected(remaining):
            entry.refused = True
            entry.note = "exclusions would disconnect the response network"
            pending = new
            break
        excluded.update(new)
        df = remaining.reset_index(drop=True)
    return FilterOutcome(result=result, rounds=rounds, excluded=excluded, kept_responses=df, pending=pending)
