"""Synthetic studies: true parameters, a judging plan and simulated ratings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .exceptions import ConfigurationError
from .model import CommentSpec, FacetParameters, ItemSpec, RaterSpec, simulate_responses
from .plan import JudgingPlan, PlanConfig, assign_batches_to_raters, assignment_triples, build_plan


@dataclass
class Study:
    truth: FacetParameters
    plan: JudgingPlan
    batch_raters: dict
    responses: pd.DataFrame
    noise_raters: list = field(default_factory=list)


def default_items(n_items=10, num_categories=5, seed=None, difficulty_sd=1.0, step_spacing=1.0) -> list:
    """Evenly stepped items with normally drawn difficulties (centred)."""
    rng = np.random.default_rng(seed)
    d = rng.normal(0.0, difficulty_sd, n_items)
    d -= d.mean()
    m = num_categories - 1
    steps = tuple(step_spacing * (j - (m - 1) / 2.0) for j in range(m))
    return [ItemSpec(f"i{k:02d}", num_categories, difficulty=float(d[k]), steps=steps) for k in range(n_items)]


def _originals_per_batch(n_originals, ratings, n_raters, group):
    opb = max(group, group * round(n_originals * ratings / (n_raters * group)))
    while math.ceil(n_originals * ratings / opb) > n_raters:
        opb += group
    return opb


def simulate_study(
    items: Sequence[ItemSpec],
    n_comments: int,
    n_raters: int,
    seed=None,
    *,
    ability_sd: float = 1.5,
    severity_sd: float = 0.5,
    reference_levels: int = 6,
    reference_per_level: int = 2,
    reference_per_batch: int = 6,
    ratings_per_comment: int = 4,
    group_size: int = 4,
    noise_fraction: float = 0.0,
    identity_rate: float = 0.7,
    noise_identity_rate: float = 0.5,
) -> Study:
    """Simulate a complete rating study under the faceted model.

    ``n_comments`` counts originals and reference comments together. The
    reference comments are the ``reference_levels * reference_per_level``
    comments spread evenly across the ability quantiles. ``originals_per_batch``
    is chosen so the number of batches does not exceed ``n_raters``; every
    batch goes to a distinct rater.

    A ``noise_fraction`` of the raters holding a batch answer uniformly at random and flag
    identity content with probability ``noise_identity_rate``; the rest follow
    the model and report each comment's identity flag truthfully.
    """
    if not 0.0 <= noise_fraction < 1.0:
        raise ConfigurationError("noise_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    items = list(items)
    n_ref = reference_levels * reference_per_level if reference_per_batch else 0
    n_orig = n_comments - n_ref
    n_orig -= n_orig % group_size
    if n_orig < group_size:
        raise ConfigurationError("too few comments for one group")
    theta = rng.normal(0.0, ability_sd, n_orig + n_ref)
    ids = [f"c{k:05d}" for k in range(theta.size)]
    order = np.argsort(theta)
    # references: evenly spaced ability ranks, grouped into levels by rank
    ref_idx = order[np.linspace(0, theta.size - 1, n_ref).round().astype(int)] if n_ref else np.array([], int)
    ref_set = set(ref_idx.tolist())
    levels = {}
    for n, k in enumerate(ref_idx):
        levels.setdefault(f"L{n // reference_per_level + 1}", []).append(ids[k])
    originals = [ids[k] for k in range(theta.size) if k not in ref_set]

    cfg = PlanConfig(
        ratings_per_comment=ratings_per_comment,
        group_size=group_size,
        originals_per_batch=_originals_per_batch(len(originals), ratings_per_comment, n_raters, group_size),
        reference_per_batch=reference_per_batch if n_ref else 0,
        reference_levels=levels,
        seed=int(rng.integers(2**31)),
    )
    plan = build_plan(cfg, originals)

    sev = rng.normal(0.0, severity_sd, n_raters)
    sev -= sev.mean()
    rater_ids = [f"r{k:04d}" for k in range(n_raters)]
    truth = FacetParameters(
        items=items,
        raters=[RaterSpec(r, float(s)) for r, s in zip(rater_ids, sev)],
        comments=[CommentSpec(c, float(t)) for c, t in zip(ids, theta)],
    )
    batch_raters = assign_batches_to_raters(plan, rater_ids, seed=int(rng.integers(2**31)))
    # noise raters are drawn from raters who actually receive a batch
    active = sorted(batch_raters.values())
    n_noise = int(round(noise_fraction * len(active)))
    noise = sorted(rng.choice(active, n_noise, replace=False).tolist()) if n_noise else []
    triples = assignment_triples(plan, batch_raters, [it.item_id for it in items])
    df = simulate_responses(truth, triples, seed=int(rng.integers(2**31)))

    is_noise = df["rater_id"].isin(noise).to_numpy()
    if is_noise.any():
        k_of = {it.item_id: it.num_categories for it in items}
        k = df.loc[is_noise, "item_id"].map(k_of).to_numpy()
        df.loc[is_noise, "rating"] = (rng.random(k.size) * k).astype(np.int64)

    flag_true = dict(zip(ids, rng.random(len(ids)) < identity_rate))
    pairs = df[["comment_id", "rater_id"]].drop_duplicates()
    noisy_pair = pairs["rater_id"].isin(noise).to_numpy()
    flag = np.where(noisy_pair, rng.random(len(pairs)) < noise_identity_rate, pairs["comment_id"].map(flag_true))
    pairs = pairs.assign(any_identity=flag.astype(float))
    df = df.drop(columns="any_identity").merge(pairs, on=["comment_id", "rater_id"], how="left")
    df = df[["comment_id", "rater_id", "item_id", "rating", "any_identity", "weight"]]
    return Study(truth=truth, plan=plan, batch_raters=batch_raters, responses=df, noise_raters=noise)


def comment_features(truth: FacetParameters, dim: int = 5, seed=None, noise: float = 0.0) -> pd.DataFrame:
    """Feature vectors whose fixed linear combination is each comment's ability.

    Features are standard normal draws ``Z`` adjusted so that ``Z @ beta``
    equals the true ability exactly (plus optional Gaussian ``noise`` on
    every feature), with ``beta`` the unit vector of ``1 / sqrt(dim)`` entries.
    """
    if dim < 1:
        raise ConfigurationError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    theta = np.array([c.ability for c in truth.comments])
    z = rng.normal(size=(theta.size, dim))
    beta = np.full(dim, 1.0 / math.sqrt(dim))
    # project out the beta direction and put the ability there
    z -= np.outer(z @ beta, beta)
    z += np.outer(theta, beta)
    if noise:
        z += rng.normal(0.0, noise, z.shape)
    out = pd.DataFrame(z, columns=[f"x{k}" for k in range(dim)])
    out.insert(0, "comment_id", [c.comment_id for c in truth.comments])
    return out
