"""Input validation helpers shared by the estimators."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import pandas as pd

from .exceptions import RejectedInputError
from .model import RESPONSE_COLUMNS, ItemSpec, Response


def as_response_frame(responses) -> pd.DataFrame:
    """Coerce a frame or an iterable of :class:`Response` to a response frame."""
    if isinstance(responses, pd.DataFrame):
        df = responses.copy()
    else:
        rows = list(responses)
        if rows and isinstance(rows[0], Response):
            rows = [r.__dict__ for r in rows]
        df = pd.DataFrame(rows, columns=None if rows else RESPONSE_COLUMNS)
    missing = {"comment_id", "rater_id", "item_id", "rating"} - set(df.columns)
    if missing:
        raise RejectedInputError(f"responses missing columns: {sorted(missing)}")
    for col in ("comment_id", "rater_id", "item_id"):
        df[col] = df[col].astype(str)
    if "any_identity" not in df:
        df["any_identity"] = np.nan
    if "weight" not in df:
        df["weight"] = np.nan
    rating = pd.to_numeric(df["rating"], errors="coerce")
    if rating.isna().any() or not np.all(np.mod(rating, 1) == 0):
        raise RejectedInputError("ratings must be integers")
    df["rating"] = rating.astype(np.int64)
    df["any_identity"] = pd.to_numeric(df["any_identity"], errors="coerce").astype(float)
    df["weight"] = pd.to_numeric(df["weight"], errors="coerce").astype(float)
    return df[RESPONSE_COLUMNS + [c for c in df.columns if c not in RESPONSE_COLUMNS]].reset_index(drop=True)


def check_responses(responses, items: Sequence[ItemSpec] | None = None) -> pd.DataFrame:
    """Validate ratings against item cardinalities and reject duplicate triples."""
    df = as_response_frame(responses)
    if (df["rating"] < 0).any():
        raise RejectedInputError("negative rating")
    dup = df.duplicated(["comment_id", "rater_id", "item_id"])
    if dup.any():
        first = df.loc[dup].iloc[0]
        raise RejectedInputError(
            f"duplicate (comment, rater, item) triple: "
            f"({first.comment_id}, {first.rater_id}, {first.item_id})"
        )
    if items is not None:
        k = {it.item_id: it.num_categories for it in items}
        unknown = sorted(set(df["item_id"]) - set(k))
        if unknown:
            raise RejectedInputError(f"responses reference unknown items: {unknown[:5]}")
        limit = df["item_id"].map(k).to_numpy()
        bad = df["rating"].to_numpy() >= limit
        if bad.any():
            row = df.loc[bad].iloc[0]
            raise RejectedInputError(
                f"rating {row.rating} out of range for item {row.item_id} "
                f"(0..{k[row.item_id] - 1})"
            )
    return df


def infer_items(responses: pd.DataFrame) -> list:
    """Items with category counts inferred from the largest observed rating."""
    top = responses.groupby("item_id", sort=True)["rating"].max()
    return [ItemSpec(iid, max(int(m) + 1, 2)) for iid, m in top.items()]


def check_finite_array(x, name="input") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise RejectedInputError(f"{name} contains non-finite values")
    return arr
