"""Fit statistics, category ordering checks, polychoric item correlations."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import optimize, special, stats

from .estimation import separation_reliability
from .exceptions import ConfigurationError, RejectedInputError
from .model import FacetParameters, ItemTable, probability_matrix
from .validation import check_responses

FACETS = ("comment", "item", "rater")


@dataclass
class FitReport:
    """Per-element fit statistics plus scale-level separation reliabilities.

    ``elements`` has one row per (facet, element_id) with columns ``count``,
    ``infit_mnsq``, ``outfit_mnsq``, ``discrimination``, ``point_measure_corr``.
    Statistics are NaN for elements with fewer than two observations.
    """

    elements: pd.DataFrame
    comment_reliability: float = math.nan
    rater_reliability: float = math.nan
    item_reliability: float = math.nan
    total_z2: float = math.nan
    n_observations: int = 0

    def facet(self, name: str) -> pd.DataFrame:
        return self.elements[self.elements["facet"] == name].set_index("element_id")

    def to_dict(self) -> dict:
        rows = self.elements.replace({np.nan: None}).to_dict(orient="records")
        return {
            "comment_reliability": _none_if_nan(self.comment_reliability),
            "rater_reliability": _none_if_nan(self.rater_reliability),
            "item_reliability": _none_if_nan(self.item_reliability),
            "n_observations": self.n_observations,
            "elements": rows,
        }


def _none_if_nan(x):
    return None if x is None or not np.isfinite(x) else float(x)


def _lookup(parameters: FacetParameters, df: pd.DataFrame):
    items = ItemTable(parameters.items)
    sev = {r.rater_id: r.severity for r in parameters.raters}
    ab = {c.comment_id: c.ability for c in parameters.comments}
    for col, known, label in (("rater_id", sev, "rater"), ("comment_id", ab, "comment"), ("item_id", items.index, "item")):
        unknown = sorted(set(df[col]) - set(known))
        if unknown:
            raise RejectedInputError(f"no parameter for {label}(s): {unknown[:5]}")
    i_idx = df["item_id"].map(items.index).to_numpy(dtype=np.int64)
    theta = df["comment_id"].map(ab).to_numpy(dtype=float)
    alpha = df["rater_id"].map(sev).to_numpy(dtype=float)
    return items, i_idx, theta, alpha


def _group_corr(codes, n, a, b):
    cnt = np.bincount(codes, minlength=n).astype(float)
    sa, sb = np.bincount(codes, a, n), np.bincount(codes, b, n)
    saa, sbb, sab = np.bincount(codes, a * a, n), np.bincount(codes, b * b, n), np.bincount(codes, a * b, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        cov = sab - sa * sb / cnt
        va = saa - sa * sa / cnt
        vb = sbb - sb * sb / cnt
        r = cov / np.sqrt(va * vb)
    r[(va <= 1e-12 * np.maximum(1, saa)) | (vb <= 1e-12 * np.maximum(1, sbb))] = np.nan
    return np.clip(r, -1.0, 1.0)


def fit_statistics(responses, parameters: FacetParameters) -> FitReport:
    """Infit/outfit mean-squares, discrimination and point-measure correlations.

    For each observation the standardized residual is ``z2 = (x - E)^2 / V``.
    Outfit is the mean of ``z2`` over an element's observations; infit is
    ``sum((x - E)^2) / sum(V)``. Discrimination is ``1 + b`` where ``b`` is
    the no-intercept least-squares slope of ``x - E`` on ``V * eta``.
    The point-measure correlation pairs ratings with comment abilities for
    items and raters, and with ``-(difficulty + severity)`` for comments.
    Observations of comments with infinite ability are skipped.
    """
    df = check_responses(responses, parameters.items)
    items, i_idx, theta, alpha = _lookup(parameters, df)
    finite = np.isfinite(theta)
    df = df.loc[finite].reset_index(drop=True)
    i_idx, theta, alpha = i_idx[finite], theta[finite], alpha[finite]
    x = df["rating"].to_numpy(dtype=float)
    eta = theta - items.difficulty[i_idx] - alpha
    p = probability_matrix(eta, i_idx, items.cum())
    k = np.arange(p.shape[1])
    e = p @ k
    v = np.maximum(p @ (k * k) - e * e, 1e-300)
    resid = x - e
    z2 = resid**2 / v
    w = v * eta
    other = -(items.difficulty[i_idx] + alpha)

    frames = []
    for facet, col, measure in (("comment", "comment_id", other), ("item", "item_id", theta), ("rater", "rater_id", theta)):
        codes, ids = pd.factorize(df[col], sort=True)
        n = len(ids)
        cnt = np.bincount(codes, minlength=n)
        with np.errstate(divide="ignore", invalid="ignore"):
            outfit = np.bincount(codes, z2, n) / cnt
            infit = np.bincount(codes, resid**2, n) / np.bincount(codes, v, n)
            disc = 1.0 + np.bincount(codes, resid * w, n) / np.bincount(codes, w * w, n)
        ptm = _group_corr(codes, n, x, measure)
        undefined = cnt < 2
        for arr in (outfit, infit, disc, ptm):
            arr[undefined] = np.nan
        frames.append(
            pd.DataFrame(
                {
                    "facet": facet,
                    "element_id": list(ids),
                    "count": cnt,
                    "infit_mnsq": infit,
                    "outfit_mnsq": outfit,
                    "discrimination": disc,
                    "point_measure_corr": ptm,
                }
            )
        )
    elements = pd.concat(frames, ignore_index=True)

    def rel(pairs):
        pairs = [(a, b) for a, b in pairs if np.isfinite(a) and np.isfinite(b)]
        if len(pairs) < 2:
            return math.nan
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return separation_reliability(pairs)

    present_c = set(df["comment_id"])
    return FitReport(
        elements=elements,
        comment_reliability=rel((c.ability, c.ability_se) for c in parameters.comments if c.comment_id in present_c),
        rater_reliability=rel((r.severity, r.se) for r in parameters.raters),
        item_reliability=rel((it.difficulty, it.se) for it in parameters.items),
        total_z2=float(z2.sum()),
        n_observations=int(x.size),
    )


ITEM_TABLE_COLUMNS = ("Item", "Difficulty", "Infit MnSq", "Outfit MnSq", "Discrm", "PtMea")


def format_item_table(rows) -> str:
    """Fixed-width item table, two decimals, sorted by difficulty.

    ``rows`` is an iterable of ``(name, difficulty, infit, outfit, discrm, ptmea)``.
    """
    rows = sorted(rows, key=lambda r: r[1])
    name_w = max([len(ITEM_TABLE_COLUMNS[0])] + [len(str(r[0])) for r in rows])
    widths = [name_w] + [max(len(h), 6) for h in ITEM_TABLE_COLUMNS[1:]]
    head = "  ".join(h.ljust(widths[0]) if n == 0 else h.rjust(widths[n]) for n, h in enumerate(ITEM_TABLE_COLUMNS))
    out = [head]
    for r in rows:
        cells = [str(r[0]).ljust(widths[0])] + [f"{float(v):.2f}".rjust(widths[n + 1]) for n, v in enumerate(r[1:])]
        out.append("  ".join(cells))
    return "\n".join(out)


def item_table_rows(report: FitReport, parameters: FacetParameters):
    fit = report.facet("item")
    return [
        (it.item_id, it.difficulty, *fit.loc[it.item_id, ["infit_mnsq", "outfit_mnsq", "discrimination", "point_measure_corr"]])
        for it in parameters.items
        if it.item_id in fit.index
    ]


# --------------------------------------------------------------------------- category ordering


@dataclass
class CategoryMean:
    category: int
    mean_ability: float
    count: int
    ok: bool


@dataclass
class ItemMonotonicity:
    item_id: str
    categories: list
    monotone: bool
    note: str = ""


def category_monotonicity(responses, parameters: FacetParameters) -> list:
    """Mean comment ability per observed category, per item.

    A category is ``ok`` when its mean exceeds that of the previous observed
    category; unobserved categories are listed with ``count=0`` and skipped.
    """
    df = check_responses(responses, parameters.items)
    ab = {c.comment_id: c.ability for c in parameters.comments}
    df = df.assign(theta=df["comment_id"].map(ab))
    df = df[np.isfinite(df["theta"].astype(float))]
    out = []
    for it in parameters.items:
        sub = df[df["item_id"] == it.item_id]
        means = sub.groupby("rating")["theta"].agg(["mean", "size"])
        cats, prev, ok_all = [], None, True
        for k in range(it.num_categories):
            if k not in means.index:
                cats.append(CategoryMean(k, math.nan, 0, True))
                continue
            m = float(means.loc[k, "mean"])
            ok = prev is None or m > prev
            ok_all &= ok
            cats.append(CategoryMean(k, m, int(means.loc[k, "size"]), ok))
            prev = m
        observed = sum(c.count > 0 for c in cats)
        note = "degenerate: fewer than two observed categories" if observed < 2 else ""
        if observed < it.num_categories and observed >= 2:
            note = "unobserved categories skipped"
        out.append(ItemMonotonicity(it.item_id, cats, bool(ok_all), note))
    return out


# --------------------------------------------------------------------------- polychoric


def bivariate_normal_cdf(h, k, rho):
    """Standard bivariate normal CDF via Owen's T function (elementwise)."""
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    h, k = np.broadcast_arrays(h, k)
    out = np.empty(h.shape)
    lo = np.isneginf(h) | np.isneginf(k)
    hi_h = np.isposinf(h)
    hi_k = np.isposinf(k)
    out[lo] = 0.0
    m = ~lo & hi_h & hi_k
    out[m] = 1.0
    m = ~lo & hi_h & ~hi_k
    out[m] = special.ndtr(k[m])
    m = ~lo & hi_k & ~hi_h
    out[m] = special.ndtr(h[m])
    m = ~lo & ~hi_h & ~hi_k
    if m.any():
        hh = np.where(h[m] == 0, 1e-12, h[m])
        kk = np.where(k[m] == 0, 1e-12, k[m])
        s = math.sqrt(1.0 - rho * rho)
        t = special.owens_t(hh, (kk - rho * hh) / (hh * s)) + special.owens_t(kk, (hh - rho * kk) / (kk * s))
        beta = np.where(hh * kk > 0, 0.0, 0.5)
        out[m] = 0.5 * (special.ndtr(hh) + special.ndtr(kk)) - t - beta
    return np.clip(out, 0.0, 1.0)


def polychoric(x, y, tol=1e-6) -> float:
    """Two-step polychoric correlation of two ordinal vectors."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    xs, xi = np.unique(x, return_inverse=True)
    ys, yi = np.unique(y, return_inverse=True)
    if xs.size < 2 or ys.size < 2:
        raise RejectedInputError("polychoric needs at least two observed categories per variable")
    table = np.zeros((xs.size, ys.size))
    np.add.at(table, (xi, yi), 1.0)
    n = table.sum()
    a = np.concatenate([[-np.inf], stats.norm.ppf(np.cumsum(table.sum(1))[:-1] / n), [np.inf]])
    b = np.concatenate([[-np.inf], stats.norm.ppf(np.cumsum(table.sum(0))[:-1] / n), [np.inf]])
    A, B = np.meshgrid(a, b, indexing="ij")

    def nll(rho):
        F = bivariate_normal_cdf(A, B, rho)
        cell = F[1:, 1:] - F[:-1, 1:] - F[1:, :-1] + F[:-1, :-1]
        return -float(np.sum(table * np.log(np.maximum(cell, 1e-300))))

    res = optimize.minimize_scalar(nll, bounds=(-0.9999, 0.9999), method="bounded", options={"xatol": tol})
    return float(res.x)


def item_correlations(responses, method="polychoric", min_pairs=30) -> pd.DataFrame:
    """Pairwise item correlations over (comment, rater) pairs rating both items.

    Pairs with fewer than ``min_pairs`` joint observations, or where the
    polychoric fit is impossible, fall back to Pearson on the ratings with a
    warning. The diagonal is 1.
    """
    df = check_responses(responses)
    wide = df.pivot_table(index=["comment_id", "rater_id"], columns="item_id", values="rating", aggfunc="first")
    ids = list(wide.columns)
    if len(ids) < 2:
        raise RejectedInputError("need at least two items")
    out = np.eye(len(ids))
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            pair = wide[[ids[a], ids[b]]].dropna()
            xa, xb = pair.iloc[:, 0].to_numpy(), pair.iloc[:, 1].to_numpy()
            r = math.nan
            if method == "polychoric" and len(pair) >= min_pairs:
                try:
                    r = polychoric(xa, xb)
                except RejectedInputError:
                    r = math.nan
            if not np.isfinite(r):
                if method == "polychoric":
                    warnings.warn(f"items {ids[a]}/{ids[b]}: Pearson fallback", RuntimeWarning, stacklevel=2)
                if len(pair) >= 2 and np.std(xa) > 0 and np.std(xb) > 0:
                    r = float(np.corrcoef(xa, xb)[0, 1])
                else:
                    r = 0.0
            out[a, b] = out[b, a] = r
    return pd.DataFrame(out, index=ids, columns=ids)


# --------------------------------------------------------------------------- binary item


def _abilities_map(abilities) -> dict:
    if isinstance(abilities, FacetParameters):
        return {c.comment_id: c.ability for c in abilities.comments}
    if isinstance(abilities, dict):
        return {str(k): float(v) for k, v in abilities.items()}
    return {c.comment_id: c.ability for c in abilities}


def binary_item_comparison(responses, abilities, binary_item_id):
    """Compare per-comment rater agreement on a binary item with the measure.

    Agreement is the share of a comment's raters choosing the modal
    response; it is signed ``+`` when the mode is 1, ``-`` when it is 0 and
    set to 0 on ties. Returns ``(pearson_r, r_squared, per_comment_frame)``.
    """
    df = check_responses(responses)
    sub = df[df["item_id"] == str(binary_item_id)]
    if sub.empty:
        raise ConfigurationError(f"item {binary_item_id!r} not found")
    if sub["rating"].max() > 1:
        raise ConfigurationError(f"item {binary_item_id!r} is not binary; collapse it first")
    g = sub.groupby("comment_id")["rating"].agg(["mean", "size"])
    share_yes = g["mean"].to_numpy()
    agreement = np.maximum(share_yes, 1.0 - share_yes)
    sign = np.where(share_yes > 0.5, 1.0, np.where(share_yes < 0.5, -1.0, 0.0))
    theta_map = _abilities_map(abilities)
    theta = np.array([theta_map.get(c, np.nan) for c in g.index], dtype=float)
    frame = pd.DataFrame(
        {"raters": g["size"].to_numpy(), "agreement": agreement, "signed_agreement": sign * agreement, "theta": theta},
        index=g.index,
    )
    ok = frame[np.isfinite(frame["theta"])]
    if len(ok) < 2 or ok["theta"].std() == 0 or ok["signed_agreement"].std() == 0:
        warnings.warn("zero variance; correlation reported as 0", RuntimeWarning, stacklevel=2)
        return 0.0, 0.0, frame
    r = float(np.corrcoef(ok["signed_agreement"], ok["theta"])[0, 1])
    return r, r * r, frame


# --------------------------------------------------------------------------- Wright map


def wright_map_export(parameters: FacetParameters) -> pd.DataFrame:
    """All facets on one logit column: comments, items, item steps, raters."""
    rows = [(c.comment_id, "comment", c.ability, c.ability_se) for c in parameters.comments]
    rows += [(it.item_id, "item", it.difficulty, it.se) for it in parameters.items]
    rows += [
        (f"{it.item_id}:{k + 1}", "step", s, math.nan)
        for it in parameters.items
        for k, s in enumerate(it.steps)
    ]
    rows += [(r.rater_id, "rater", r.severity, r.se) for r in parameters.raters]
    return pd.DataFrame(rows, columns=["element", "facet", "measure", "se"])
