"""File formats: responses, items, parameters, distributions, plans, heads.

All decimals are written with 12 significant digits, CSV files use ``\\n``
line endings and every write goes through a temporary file that is renamed
into place, so a reader never sees a half-written file.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .exceptions import ConfigurationError, RejectedInputError
from .model import RESPONSE_COLUMNS, CommentSpec, FacetParameters, ItemSpec, RaterSpec, check_collapse_map
from .scoring import RatingDistribution

PARAMETER_SCHEMA_VERSION = 1
ITEMS_SCHEMA_VERSION = 1
SIG_DIGITS = 12


def fmt_decimal(x) -> str:
    """12-significant-digit text for a number; empty for missing values."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.{SIG_DIGITS}g}"


def round_sig(x):
    """Round to 12 significant digits; NaN becomes None for JSON."""
    if x is None:
        return None
    x = float(x)
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(f"{x:.{SIG_DIGITS}g}")


def _num(v) -> float:
    if v is None:
        return math.nan
    if isinstance(v, str):
        return {"inf": math.inf, "-inf": -math.inf}.get(v, math.nan)
    return float(v)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header: Sequence[str] | None, rows: Iterable[Sequence]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header is not None:
        w.writerow(header)
    for r in rows:
        w.writerow([fmt_decimal(v) if isinstance(v, (float, int, np.floating, np.integer)) else v for v in r])
    return buf.getvalue()


def _json_text(data) -> str:
    return json.dumps(data, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def _read_csv_rows(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise RejectedInputError(f"{path}: empty file")
    return rows[0], rows[1:]


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise RejectedInputError(f"{path}: invalid JSON ({exc})") from exc


# --------------------------------------------------------------------------- responses


def responses_to_text(responses: pd.DataFrame) -> str:
    df = responses
    rows = []
    for c, r, i, x, a, w in df[RESPONSE_COLUMNS].itertuples(index=False):
        rows.append([str(c), str(r), str(i), int(x), "" if pd.isna(a) else int(a), "" if pd.isna(w) else float(w)])
    return _csv_text(RESPONSE_COLUMNS, rows)


def write_responses(responses: pd.DataFrame, path) -> None:
    atomic_write_text(path, responses_to_text(responses))


def _parse_response_rows(header, rows):
    """Yield ``(line_number, record | None, error | None)``."""
    missing = [c for c in ("comment_id", "rater_id", "item_id", "rating") if c not in header]
    if missing:
        yield 1, None, f"header lacks columns {missing}"
        return
    pos = {c: header.index(c) for c in header}
    for n, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != len(header):
            yield n, None, f"expected {len(header)} fields, found {len(row)}"
            continue
        rec = {c: row[pos[c]] for c in header}
        try:
            rating = int(rec["rating"])
        except ValueError:
            yield n, None, f"rating {rec['rating']!r} is not an integer"
            continue
        if rating < 0:
            yield n, None, f"negative rating {rating}"
            continue
        ident = rec.get("any_identity", "")
        if ident not in ("", "0", "1"):
            yield n, None, f"any_identity must be 0, 1 or empty, got {ident!r}"
            continue
        weight = rec.get("weight", "")
        try:
            w = float(weight) if weight != "" else math.nan
        except ValueError:
            yield n, None, f"weight {weight!r} is not a number"
            continue
        if not all(rec[c] for c in ("comment_id", "rater_id", "item_id")):
            yield n, None, "empty identifier"
            continue
        yield n, {
            "comment_id": rec["comment_id"],
            "rater_id": rec["rater_id"],
            "item_id": rec["item_id"],
            "rating": rating,
            "any_identity": float(ident) if ident != "" else math.nan,
            "weight": w,
        }, None


def read_responses(path) -> pd.DataFrame:
    """Read a response file; the first malformed row raises with its line number."""
    header, rows = _read_csv_rows(path)
    recs = []
    for n, rec, err in _parse_response_rows(header, rows):
        if err:
            raise RejectedInputError(f"{path}:{n}: {err}")
        recs.append(rec)
    df = pd.DataFrame(recs, columns=RESPONSE_COLUMNS)
    df["rating"] = df["rating"].astype(np.int64)
    df["any_identity"] = df["any_identity"].astype(float)
    df["weight"] = df["weight"].astype(float)
    return df


# --------------------------------------------------------------------------- items / parameters


def _item_record(it: ItemSpec) -> dict:
    rec = {
        "id": it.item_id,
        "num_categories": it.num_categories,
        "difficulty": round_sig(it.difficulty),
        "steps": [round_sig(s) for s in it.steps],
        "se": round_sig(it.se),
    }
    if it.collapse_map is not None:
        rec["collapse_map"] = list(it.collapse_map)
    return rec


def _item_from_record(rec) -> ItemSpec:
    try:
        cmap = rec.get("collapse_map")
        if cmap is not None:
            check_collapse_map(cmap, int(rec["num_categories"]))
        steps = rec.get("steps")
        return ItemSpec(
            str(rec["id"]),
            int(rec["num_categories"]),
            difficulty=_num(rec.get("difficulty", 0.0)),
            steps=tuple(_num(s) for s in steps) if steps else (),
            collapse_map=tuple(cmap) if cmap is not None else None,
            se=_num(rec.get("se")),
        )
    except KeyError as exc:
        raise RejectedInputError(f"item record lacks {exc}") from exc


def items_to_text(items: Sequence[ItemSpec]) -> str:
    return _json_text({"version": ITEMS_SCHEMA_VERSION, "items": [_item_record(it) for it in items]})


def write_items(items: Sequence[ItemSpec], path) -> None:
    atomic_write_text(path, items_to_text(items))


def read_items(path) -> list:
    """Read an items file, or the items of a parameter file."""
    data = _read_json(path)
    recs = data.get("items") if isinstance(data, dict) else data
    if not isinstance(recs, list) or not recs:
        raise RejectedInputError(f"{path}: no items")
    items = [_item_from_record(r) for r in recs]
    if len({it.item_id for it in items}) != len(items):
        raise RejectedInputError(f"{path}: duplicate item ids")
    return items


def parameters_to_dict(p: FacetParameters) -> dict:
    return {
        "items": [_item_record(it) for it in p.items],
        "raters": [{"id": r.rater_id, "severity": round_sig(r.severity), "se": round_sig(r.se)} for r in p.raters],
        "comments": [
            {"id": c.comment_id, "theta": round_sig(c.ability), "se": round_sig(c.ability_se)} for c in p.comments
        ],
        "meta": {
            "version": PARAMETER_SCHEMA_VERSION,
            "constraints": {"items": "sum-zero difficulties", "raters": "sum-zero severities", "steps": "sum-zero per item"},
            "converged": bool(p.converged),
            "log_likelihood": round_sig(p.log_likelihood),
        },
    }


def parameters_from_dict(data) -> FacetParameters:
    meta = data.get("meta", {})
    if meta.get("version") != PARAMETER_SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported parameter file version {meta.get('version')!r}")
    return FacetParameters(
        items=[_item_from_record(r) for r in data.get("items", [])],
        raters=[RaterSpec(str(r["id"]), _num(r["severity"]), _num(r.get("se"))) for r in data.get("raters", [])],
        comments=[CommentSpec(str(c["id"]), _num(c["theta"]), _num(c.get("se"))) for c in data.get("comments", [])],
        converged=bool(meta.get("converged", True)),
        log_likelihood=_num(meta.get("log_likelihood")),
    )


def write_parameters(p: FacetParameters, path) -> None:
    atomic_write_text(path, _json_text(parameters_to_dict(p)))


def read_parameters(path) -> FacetParameters:
    return parameters_from_dict(_read_json(path))


# --------------------------------------------------------------------------- distributions


def distributions_to_text(distributions: Sequence[RatingDistribution]) -> str:
    width = max((len(d.probabilities) for d in distributions), default=2)
    header = ["comment_id", "item_id"] + [f"p{k}" for k in range(width)]
    return _csv_text(header, ([d.comment_id, d.item_id, *map(float, d.probabilities)] for d in distributions))


def write_distributions(distributions, path) -> None:
    atomic_write_text(path, distributions_to_text(list(distributions)))


def _parse_distribution_rows(rows):
    for n, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) < 4:
            yield n, None, "need comment_id, item_id and at least two probabilities"
            continue
        vals = [v for v in row[2:]]
        while vals and vals[-1] == "":
            vals.pop()
        try:
            yield n, RatingDistribution(row[0], row[1], tuple(float(v) for v in vals)), None
        except (ValueError, RejectedInputError) as exc:
            yield n, None, str(exc)


def read_distributions(path) -> list:
    header, rows = _read_csv_rows(path)
    if header[:2] != ["comment_id", "item_id"]:
        raise RejectedInputError(f"{path}:1: header must start with comment_id,item_id")
    out = []
    for n, d, err in _parse_distribution_rows(rows):
        if err:
            raise RejectedInputError(f"{path}:{n}: {err}")
        out.append(d)
    return out


# --------------------------------------------------------------------------- other JSON payloads


def write_json(data, path) -> None:
    atomic_write_text(path, _json_text(_round_tree(data)))


def read_json(path):
    return _read_json(path)


def _round_tree(x):
    if isinstance(x, dict):
        return {str(k): _round_tree(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round_tree(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return round_sig(x)
    if isinstance(x, np.ndarray):
        return _round_tree(x.tolist())
    return x


def write_plan(plan, path) -> None:
    write_json(plan.to_dict(), path)


def read_plan(path):
    from .plan import JudgingPlan

    return JudgingPlan.from_dict(_read_json(path))


def write_head(head, path) -> None:
    data = head.to_dict()
    data["feature_names"] = list(getattr(head, "feature_names", []) or [])
    write_json(data, path)


def read_head(path):
    from .coral import MultitaskHead

    data = _read_json(path)
    head = MultitaskHead.from_dict(data)
    head.feature_names = data.get("feature_names") or None
    return head


def frame_to_text(df: pd.DataFrame, fmt: str = "csv", index: bool = True) -> str:
    """A result table as CSV (12-digit decimals) or JSON records."""
    out = df.reset_index() if index and df.index.name is not None else df
    if fmt == "json":
        recs = [{k: _cell(v) for k, v in r.items()} for r in out.to_dict(orient="records")]
        return _json_text(recs)
    return _csv_text([str(c) for c in out.columns], out.itertuples(index=False))


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return round_sig(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_frame(df: pd.DataFrame, path, fmt: str = "csv", index: bool = True) -> None:
    atomic_write_text(path, frame_to_text(df, fmt, index))


def read_frame(path) -> pd.DataFrame:
    """Read a CSV table written by :func:`write_frame` (identifier columns as text)."""
    return pd.read_csv(path, dtype={"comment_id": str, "rater_id": str, "item_id": str, "element_id": str, "element": str},
                       keep_default_na=True)


# --------------------------------------------------------------------------- review rows / features


def review_rows(responses: pd.DataFrame, features: pd.DataFrame, parameters: FacetParameters | None = None) -> pd.DataFrame:
    """One row per (comment, rater): features, rater severity and item labels.

    ``features`` has a ``comment_id`` column plus numeric feature columns.
    Labels missing for an item are NaN. Severity comes from ``parameters``
    (0 for raters it does not list).
    """
    wide = responses.pivot_table(index=["comment_id", "rater_id"], columns="item_id", values="rating", aggfunc="first")
    wide.columns = [str(c) for c in wide.columns]
    wide = wide.reset_index()
    sev = {r.rater_id: r.severity for r in parameters.raters} if parameters is not None else {}
    wide.insert(2, "rater_severity", wide["rater_id"].map(sev).fillna(0.0).astype(float))
    feats = features.assign(comment_id=features["comment_id"].astype(str))
    missing = sorted(set(wide["comment_id"]) - set(feats["comment_id"]))
    if missing:
        raise RejectedInputError(f"no features for comments {missing[:5]}")
    return wide.merge(feats, on="comment_id", how="left")


# --------------------------------------------------------------------------- validation


def validate(responses=None, items=None, distributions=None, parameters=None) -> dict:
    """Check dataset files and report every problem with its line number.

    Returns ``{"errors": [...], "warnings": [...], "summary": {...}}``; each
    error is ``{"file", "line", "message"}``.
    """
    errors, warnings_, summary = [], [], {}

    def err(path, line, msg):
        errors.append({"file": str(path), "line": line, "message": msg})

    item_k = None
    if items is not None:
        try:
            its = read_items(items)
            item_k = {it.item_id: it.num_categories for it in its}
            summary["items"] = len(its)
        except (RejectedInputError, ConfigurationError, OSError, ValueError) as exc:
            err(items, None, str(exc))
    if parameters is not None:
        try:
            p = read_parameters(parameters)
            summary["parameter_items"] = len(p.items)
            summary["parameter_raters"] = len(p.raters)
            summary["parameter_comments"] = len(p.comments)
            if item_k is None:
                item_k = {it.item_id: it.num_categories for it in p.items}
        except (RejectedInputError, ConfigurationError, OSError, ValueError, KeyError) as exc:
            err(parameters, None, str(exc))
    if responses is not None:
        try:
            header, rows = _read_csv_rows(responses)
        except (RejectedInputError, OSError) as exc:
            err(responses, None, str(exc))
            header, rows = None, []
        if header is not None:
            if header != RESPONSE_COLUMNS:
                warnings_.append({"file": str(responses), "line": 1, "message": f"header differs from {RESPONSE_COLUMNS}"})
            seen = {}
            n_ok = 0
            comments, raters = set(), set()
            for n, rec, msg in _parse_response_rows(header, rows):
                if msg:
                    err(responses, n, msg)
                    continue
                key = (rec["comment_id"], rec["rater_id"], rec["item_id"])
                if key in seen:
                    err(responses, n, f"duplicate (comment, rater, item) triple, first on line {seen[key]}")
                    continue
                seen[key] = n
                if item_k is not None:
                    k = item_k.get(rec["item_id"])
                    if k is None:
                        err(responses, n, f"unknown item {rec['item_id']!r}")
                        continue
                    if rec["rating"] >= k:
                        err(responses, n, f"rating {rec['rating']} out of range 0..{k - 1} for item {rec['item_id']!r}")
                        continue
                n_ok += 1
                comments.add(rec["comment_id"])
                raters.add(rec["rater_id"])
            if item_k is None:
                warnings_.append({"file": str(responses), "line": None, "message": "no items file; rating ranges unchecked"})
            summary.update(rows=len([r for r in rows if r]), valid_rows=n_ok, comments=len(comments), raters=len(raters))
    if distributions is not None:
        try:
            header, rows = _read_csv_rows(distributions)
            if header[:2] != ["comment_id", "item_id"]:
                err(distributions, 1, "header must start with comment_id,item_id")
            count = 0
            for n, d, msg in _parse_distribution_rows(rows):
                if msg:
                    err(distributions, n, msg)
                    continue
                if item_k is not None:
                    k = item_k.get(d.item_id)
                    if k is None:
                        err(distributions, n, f"unknown item {d.item_id!r}")
                        continue
                    if len(d.probabilities) != k:
                        err(distributions, n, f"{len(d.probabilities)} probabilities for {k} categories")
                        continue
                count += 1
            summary["distributions"] = count
        except (RejectedInputError, OSError) as exc:
            err(distributions, None, str(exc))
    return {"errors": errors, "warnings": warnings_, "summary": summary}


# --------------------------------------------------------------------------- splitting


def split_clustered(responses: pd.DataFrame, test_fraction: float, seed=None):
    """Partition rows by comment: ``round(test_fraction * n_comments)`` comments go to test."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigurationError("test_fraction must lie in (0, 1)")
    ids = np.array(sorted(responses["comment_id"].astype(str).unique()))
    n_test = int(round(test_fraction * ids.size))
    perm = np.random.default_rng(seed).permutation(ids.size)
    test_ids = set(ids[perm[:n_test]])
    mask = responses["comment_id"].astype(str).isin(test_ids).to_numpy()
    return responses.loc[~mask].reset_index(drop=True), responses.loc[mask].reset_index(drop=True)
