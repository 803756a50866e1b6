"""Joint maximum likelihood calibration of the faceted partial credit model.

Each iteration sweeps comments, items, item steps and raters with a
Newton-Raphson update per element (capped, and halved whenever an element's
log-likelihood would drop), then re-centres the free facets. Comment
abilities are reported as Warm weighted likelihood estimates by default.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError, DisconnectedNetworkError, MissingDataError, RejectedInputError
from .graph import bipartite_components
from .model import CommentSpec, FacetParameters, ItemSpec, ItemTable, RaterSpec
from .validation import check_responses, infer_items

ABILITY_ESTIMATORS = ("MLE", "WLE")


@dataclass
class EstimationConfig:
    max_iterations: int = 200
    convergence_tol: float = 1e-4
    score_tol: float = 1e-3
    newton_step_cap: float = 1.0
    anchored_items: Mapping[str, float] | None = None
    anchored_raters: Mapping[str, float] | None = None
    anchored_steps: Mapping[str, Sequence[float]] | None = None
    ability_estimator: str = "WLE"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        for name in ("convergence_tol", "score_tol", "newton_step_cap"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        self.ability_estimator = str(self.ability_estimator).upper()
        if self.ability_estimator not in ABILITY_ESTIMATORS:
            raise ConfigurationError(f"ability_estimator must be one of {ABILITY_ESTIMATORS}")


@dataclass
class EstimationResult:
    parameters: FacetParameters
    iterations_used: int
    max_residual_change: float
    max_score_residual: float
    extreme_comments: list = field(default_factory=list)
    extreme_raters: list = field(default_factory=list)
    extreme_items: list = field(default_factory=list)
    history: list = field(default_factory=list)
    calibration_abilities: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.parameters.converged


# --------------------------------------------------------------------------- kernel helpers


def _log_probs(eta, item_idx, cum):
    k = np.arange(cum.shape[1])
    logw = eta[:, None] * k - cum[item_idx]
    logw -= logw.max(axis=1, keepdims=True)
    logz = np.log(np.exp(logw).sum(axis=1, keepdims=True))
    return logw - logz


def _cumulants(p):
    k = np.arange(p.shape[1])
    mean = p @ k
    d = k[None, :] - mean[:, None]
    d2 = d * d
    var = (p * d2).sum(axis=1)
    m3 = (p * d2 * d).sum(axis=1)
    m4 = (p * d2 * d2).sum(axis=1)
    return mean, var, m3, m4 - 3.0 * var * var


def solve_locations(offset, item_idx, x, elem, n_elem, cum, n_cat, method="WLE", iterations=80):
    """Solve for one location per element with everything else held fixed.

    Observation ``n`` has ``eta = location[elem[n]] + offset[n]``. ``WLE``
    finds the root of ``S + J / (2 I)`` (score residual, information and its
    derivative); ``MLE`` the root of ``S`` with ``-inf``/``+inf`` returned for
    minimum/maximum raw scores.

    Returns ``(location, se)``; elements without observations get NaN.
    """
    method = method.upper()
    offset = np.asarray(offset, dtype=float)
    x = np.asarray(x, dtype=float)
    elem = np.asarray(elem, dtype=np.int64)
    count = np.bincount(elem, minlength=n_elem)
    raw = np.bincount(elem, x, minlength=n_elem)
    top = np.bincount(elem, n_cat[item_idx] - 1.0, minlength=n_elem)
    low_ext = (count > 0) & (raw <= 0)
    high_ext = (count > 0) & (raw >= top)

    def terms(loc):
        eta = loc[elem] + offset
        p = np.exp(_log_probs(eta, item_idx, cum))
        e, v, m3, k4 = _cumulants(p)
        s = np.bincount(elem, x - e, minlength=n_elem)
        info = np.bincount(elem, v, minlength=n_elem)
        j = np.bincount(elem, m3, minlength=n_elem)
        kk = np.bincount(elem, k4, minlength=n_elem)
        return s, info, j, kk

    def objective(loc):
        s, info, j, _ = terms(loc)
        if method == "WLE":
            with np.errstate(divide="ignore", invalid="ignore"):
                return s + np.where(info > 0, j / (2.0 * info), 0.0)
        return s

    span = float(np.max(np.abs(offset))) if offset.size else 0.0
    lo = np.full(n_elem, -span - 40.0)
    hi = np.full(n_elem, span + 40.0)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        f = objective(mid)
        up = f > 0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    loc = 0.5 * (lo + hi)
    s, info, j, kk = terms(loc)
    with np.errstate(divide="ignore", invalid="ignore"):
        if method == "WLE":
            adj = info - (kk * info - j * j) / (2.0 * info * info)
            use = np.where(adj > 0, adj, info)
        else:
            use = info
        se = 1.0 / np.sqrt(use)
    if method == "MLE":
        loc = np.where(low_ext, -np.inf, np.where(high_ext, np.inf, loc))
        se = np.where(low_ext | high_ext, np.inf, se)
    loc = np.where(count > 0, loc, np.nan)
    se = np.where(count > 0, se, np.nan)
    return loc, se


# --------------------------------------------------------------------------- JMLE


class _Calibration:
    def __init__(self, df: pd.DataFrame, items: Sequence[ItemSpec], config: EstimationConfig):
        self.config = config
        self.table = ItemTable(items)
        t = self.table
        self.c_codes, self.c_ids = pd.factorize(df["comment_id"], sort=True)
        self.r_codes, self.r_ids = pd.factorize(df["rater_id"], sort=True)
        self.i_codes = df["item_id"].map(t.index).to_numpy(dtype=np.int64)
        self.x = df["rating"].to_numpy(dtype=np.int64)
        self.nC, self.nR, self.nI = len(self.c_ids), len(self.r_ids), len(t.ids)

        anchored_items = dict(config.anchored_items or {})
        anchored_raters = dict(config.anchored_raters or {})
        anchored_steps = {str(k): v for k, v in (config.anchored_steps or {}).items()}
        for label, keys, known in (
            ("item", anchored_items, t.index),
            ("rater", anchored_raters, set(self.r_ids)),
            ("steps item", anchored_steps, t.index),
        ):
            unknown = sorted(set(map(str, keys)) - set(known))
            if unknown:
                raise ConfigurationError(f"anchored {label} id(s) not in data: {unknown[:5]}")

        self.delta = t.difficulty.copy()
        self.steps = t.steps.copy()
        self.alpha = np.zeros(self.nR)
        self.item_free = np.ones(self.nI, bool)
        self.steps_free = np.ones(self.nI, bool)
        self.rater_free = np.ones(self.nR, bool)
        self.delta[:] = 0.0
        self.steps[:] = 0.0
        for iid, d in anchored_items.items():
            n = t.index[str(iid)]
            self.delta[n] = float(d)
            self.item_free[n] = False
        for iid, st in anchored_steps.items():
            n = t.index[iid]
            st = np.asarray(st, dtype=float)
            if st.size != t.n_cat[n] - 1:
                raise ConfigurationError(f"anchored steps for {iid}: wrong length")
            self.steps[n, : st.size] = st
            self.steps_free[n] = False
        r_index = {rid: n for n, rid in enumerate(self.r_ids)}
        for rid, a in anchored_raters.items():
            n = r_index[str(rid)]
            self.alpha[n] = float(a)
            self.rater_free[n] = False
        # binary items have a single step pinned to 0 by the centring constraint
        self.steps_free &= t.n_cat > 2
        self.center_items = bool(self.item_free.all())
        self.center_raters = bool(self.rater_free.all())

        self.ext_c = np.zeros(self.nC, bool)
        self.ext_r = np.zeros(self.nR, bool)
        self.ext_i = np.zeros(self.nI, bool)
        self._find_extremes()
        self._check_categories()
        self._check_connected()

        a = self.active
        self.c, self.r, self.i, self.xa = self.c_codes[a], self.r_codes[a], self.i_codes[a], self.x[a]
        raw = np.bincount(self.c, self.xa, minlength=self.nC)
        top = np.bincount(self.c, t.n_cat[self.i] - 1.0, minlength=self.nC)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.theta = np.log((raw + 0.5) / (top - raw + 0.5))
        self.theta[~np.isfinite(self.theta)] = 0.0

    # ---- data screening

    def _find_extremes(self):
        t = self.table
        active = np.ones(self.x.size, bool)
        kmax = t.n_cat[self.i_codes] - 1
        while True:
            changed = False
            for codes, n, ext, free in (
                (self.c_codes, self.nC, self.ext_c, np.ones(self.nC, bool)),
                (self.r_codes, self.nR, self.ext_r, self.rater_free),
                (self.i_codes, self.nI, self.ext_i, self.item_free),
            ):
                cnt = np.bincount(codes[active], minlength=n)
                raw = np.bincount(codes[active], self.x[active], minlength=n)
                top = np.bincount(codes[active], kmax[active], minlength=n)
                new = free & ~ext & ((cnt == 0) | (raw == 0) | (raw == top))
                if new.any():
                    ext |= new
                    active &= ~new[codes]
                    changed = True
            if not changed:
                break
        self.active = active
        if not active.any():
            raise MissingDataError("every observation belongs to an extreme element; nothing to calibrate")

    def _check_categories(self):
        t = self.table
        a = self.active
        for n in np.flatnonzero(self.steps_free & ~self.ext_i):
            obs = self.x[a & (self.i_codes == n)]
            seen = np.bincount(obs, minlength=t.n_cat[n])
            if (seen == 0).any():
                missing = np.flatnonzero(seen == 0).tolist()
                raise RejectedInputError(
                    f"item {t.ids[n]}: categories {missing} never observed; "
                    "collapse them or anchor the steps"
                )

    def _check_connected(self):
        a = self.active
        for other, n_other, free, label in (
            (self.r_codes, self.nR, self.rater_free, "rater"),
            (self.i_codes, self.nI, self.item_free, "item"),
        ):
            if not free.any():
                continue
            cc, cc_ids = pd.factorize(self.c_codes[a])
            oc, oc_ids = pd.factorize(other[a])
            n_comp, labels = bipartite_components(cc, oc, len(cc_ids), len(oc_ids))
            if n_comp > 1:
                names = [f"comment:{self.c_ids[k]}" for k in cc_ids]
                pool = self.r_ids if label == "rater" else self.table.ids
                names += [f"{label}:{pool[k]}" for k in oc_ids]
                comps = [
                    [names[k] for k in np.flatnonzero(labels == lab)]
                    for lab in np.argsort(-np.bincount(labels))
                ]
                raise DisconnectedNetworkError(
                    f"comment-{label} network has {n_comp} disjoint subsets "
                    f"(sizes {[len(c) for c in comps]})",
                    components=comps,
                )

    # ---- likelihood pieces

    def evaluate(self):
        eta = self.theta[self.c] - self.delta[self.i] - self.alpha[self.r]
        self.cum = self.table.cum(self.steps)
        logp = _log_probs(eta, self.i, self.cum)
        self.p = np.exp(logp)
        self.ll = logp[np.arange(self.xa.size), self.xa]
        k = np.arange(self.p.shape[1])
        self.e = self.p @ k
        self.v = self.p @ (k * k) - self.e**2

    def _line_search(self, codes, n_elem, movable, apply):
        old = np.bincount(codes, self.ll, minlength=n_elem)
        t = np.ones(n_elem)
        t[~movable] = 0.0
        for _ in range(40):
            apply(t)
            self.evaluate()
            new = np.bincount(codes, self.ll, minlength=n_elem)
            bad = movable & (t > 0) & (new < old - 1e-10 * np.maximum(1.0, np.abs(old)))
            if not bad.any():
                return
            t[bad] *= 0.5
        t[bad] = 0.0
        apply(t)
        self.evaluate()

    def _sweep_comments(self, cap):
        s = np.bincount(self.c, self.xa - self.e, minlength=self.nC)
        info = np.bincount(self.c, self.v, minlength=self.nC)
        movable = ~self.ext_c & (info > 0)
        step = np.zeros(self.nC)
        step[movable] = np.clip(s[movable] / info[movable], -cap, cap)
        base = self.theta.copy()

        def apply(t):
            self.theta = base + t * step

        self._line_search(self.c, self.nC, movable, apply)

    def _sweep_location(self, codes, n, attr, free, ext, cap):
        s = np.bincount(codes, self.xa - self.e, minlength=n)
        info = np.bincount(codes, self.v, minlength=n)
        movable = free & ~ext & (info > 0)
        step = np.zeros(n)
        step[movable] = np.clip(-s[movable] / info[movable], -cap, cap)
        base = getattr(self, attr).copy()

        def apply(t):
            setattr(self, attr, base + t * step)

        self._line_search(codes, n, movable, apply)

    def _step_gradients(self):
        """Per-item gradient of the log-likelihood w.r.t. steps and its covariance."""
        t = self.table
        km1 = t.k_max - 1
        pge = np.cumsum(self.p[:, ::-1], axis=1)[:, ::-1][:, 1:]  # P(X >= k), k=1..K-1
        y = (self.xa[:, None] >= np.arange(1, km1 + 1)[None, :]).astype(float)
        grad = np.zeros((self.nI, km1))
        for k in range(km1):
            grad[:, k] = -np.bincount(self.i, y[:, k] - pge[:, k], minlength=self.nI)
        return pge, grad

    def _sweep_steps(self, cap):
        t = self.table
        movable = self.steps_free & ~self.ext_i
        if not movable.any():
            return
        pge, grad = self._step_gradients()
        step = np.zeros_like(self.steps)
        for n in np.flatnonzero(movable):
            m = t.n_cat[n] - 1
            sel = self.i == n
            q = pge[sel, :m]
            s = q.sum(axis=0)
            idx = np.arange(m)
            cov = s[np.maximum.outer(idx, idx)] - q.T @ q
            d = np.linalg.solve(cov + 1e-12 * np.eye(m), grad[n, :m])
            big = np.max(np.abs(d))
            if big > cap:
                d *= cap / big
            step[n, :m] = d
        base = self.steps.copy()

        def apply(tt):
            self.steps = base + tt[:, None] * step

        self._line_search(self.i, self.nI, movable, apply)

    def _center(self):
        t = self.table
        for n in np.flatnonzero(self.steps_free & self.item_free & ~self.ext_i):
            m = t.n_cat[n] - 1
            c = self.steps[n, :m].mean()
            self.steps[n, :m] -= c
            self.delta[n] += c
        if self.center_items:
            keep = ~self.ext_i
            c = self.delta[keep].mean()
            self.delta[keep] -= c
            self.theta -= c
        if self.center_raters:
            keep = ~self.ext_r
            c = self.alpha[keep].mean()
            self.alpha[keep] -= c
            self.theta -= c

    def residuals(self):
        s_c = np.bincount(self.c, self.xa - self.e, minlength=self.nC)[~self.ext_c]
        s_i = np.bincount(self.i, self.xa - self.e, minlength=self.nI)[self.item_free & ~self.ext_i]
        s_r = np.bincount(self.r, self.xa - self.e, minlength=self.nR)[self.rater_free & ~self.ext_r]
        _, g = self._step_gradients()
        g = g[self.steps_free & ~self.ext_i]
        parts = [np.abs(a).ravel() for a in (s_c, s_i, s_r, g) if a.size]
        return float(max(p.max() for p in parts)) if parts else 0.0

    def _snapshot(self):
        return np.concatenate([self.theta[~self.ext_c], self.delta, self.alpha, self.steps.ravel()])

    def run(self):
        cfg = self.config
        cap = cfg.newton_step_cap
        self._center()
        self.evaluate()
        history = [float(self.ll.sum())]
        converged = False
        change = math.inf
        resid = math.inf
        it = 0
        for it in range(1, cfg.max_iterations + 1):
            before = self._snapshot()
            self._sweep_comments(cap)
            self._sweep_location(self.i, self.nI, "delta", self.item_free, self.ext_i, cap)
            self._sweep_steps(cap)
            self._sweep_location(self.r, self.nR, "alpha", self.rater_free, self.ext_r, cap)
            self._center()
            self.evaluate()
            history.append(float(self.ll.sum()))
            change = float(np.max(np.abs(self._snapshot() - before)))
            resid = self.residuals()
            if change < cfg.convergence_tol and resid < cfg.score_tol:
                converged = True
                break
        self.history = history
        self.converged = converged
        self.iterations = it
        self.change = change
        self.resid = resid
        return self


def _posthoc_location(cal, codes, n, ext, offset_fn):
    """WLE for extreme raters/items with the rest of the calibration fixed."""
    out = {}
    idx = np.flatnonzero(ext)
    if idx.size == 0:
        return out
    theta = cal.final_theta
    for k in idx:
        sel = (codes == k) & np.isfinite(theta[cal.c_codes])
        if not sel.any():
            out[k] = (math.nan, math.nan)
            continue
        item_idx = cal.i_codes[sel]
        loc, se = solve_locations(
            offset_fn(sel), item_idx, cal.x[sel], np.zeros(sel.sum(), np.int64), 1,
            cal.table.cum(cal.steps), cal.table.n_cat,
        )
        out[k] = (float(loc[0]), float(se[0]))
    return out


def estimate(responses, items: Sequence[ItemSpec] | None = None, config: EstimationConfig | None = None) -> EstimationResult:
    """Calibrate comments, items, steps and raters by joint maximum likelihood.

    Parameters
    ----------
    responses : DataFrame or iterable of Response
        Columns ``comment_id, rater_id, item_id, rating``.
    items : sequence of ItemSpec, optional
        Category counts per item. Inferred from the data when omitted.
    config : EstimationConfig, optional

    Returns
    -------
    EstimationResult
        ``parameters.converged`` is False when ``max_iterations`` ran out.

    Raises
    ------
    DisconnectedNetworkError
        If comments and raters (or items) split into disjoint subsets.
    """
    config = config or EstimationConfig()
    df = check_responses(responses, items)
    items = list(items) if items is not None else infer_items(df)
    present = set(df["item_id"])
    items = [it for it in items if it.item_id in present]
    cal = _Calibration(df, items, config).run()
    t = cal.table

    # final comment measures against the calibrated frame
    use = ~cal.ext_r[cal.r_codes] & ~cal.ext_i[cal.i_codes]
    offset = -cal.delta[cal.i_codes[use]] - cal.alpha[cal.r_codes[use]]
    theta, theta_se = solve_locations(
        offset, cal.i_codes[use], cal.x[use], cal.c_codes[use], cal.nC, t.cum(cal.steps), t.n_cat,
        method=config.ability_estimator,
    )
    if config.ability_estimator == "MLE":
        # non-extreme comments keep the calibration values
        info = np.bincount(cal.c, cal.v, minlength=cal.nC)
        keep = ~cal.ext_c
        theta[keep] = cal.theta[keep]
        with np.errstate(divide="ignore"):
            theta_se[keep] = 1.0 / np.sqrt(info[keep])
    cal.final_theta = theta

    rater_post = _posthoc_location(
        cal, cal.r_codes, cal.nR, cal.ext_r & cal.rater_free,
        lambda sel: theta[cal.c_codes[sel]] - cal.delta[cal.i_codes[sel]],
    )
    item_post = _posthoc_location(
        cal, cal.i_codes, cal.nI, cal.ext_i & cal.item_free,
        lambda sel: theta[cal.c_codes[sel]] - cal.alpha[cal.r_codes[sel]],
    )
    for k, (loc, _) in rater_post.items():
        cal.alpha[k] = -loc
    for k, (loc, _) in item_post.items():
        cal.delta[k] = -loc

    info_i = np.bincount(cal.i, cal.v, minlength=cal.nI)
    info_r = np.bincount(cal.r, cal.v, minlength=cal.nR)
    with np.errstate(divide="ignore"):
        se_i = 1.0 / np.sqrt(info_i)
        se_r = 1.0 / np.sqrt(info_r)
    for k, (_, se) in item_post.items():
        se_i[k] = se
    for k, (_, se) in rater_post.items():
        se_r[k] = se

    out_items = [
        ItemSpec(
            iid,
            int(t.n_cat[n]),
            difficulty=float(cal.delta[n]),
            steps=tuple(cal.steps[n, : t.n_cat[n] - 1]),
            se=float(se_i[n]),
        )
        for n, iid in enumerate(t.ids)
    ]
    out_raters = [RaterSpec(rid, float(cal.alpha[n]), float(se_r[n])) for n, rid in enumerate(cal.r_ids)]
    weights = df.groupby("comment_id")["weight"].first()
    out_comments = []
    for n, cid in enumerate(cal.c_ids):
        w = weights.get(cid, np.nan)
        out_comments.append(
            CommentSpec(cid, float(theta[n]), float(theta_se[n]), 1.0 if pd.isna(w) else float(w))
        )
    params = FacetParameters(
        items=out_items,
        raters=out_raters,
        comments=out_comments,
        converged=cal.converged,
        log_likelihood=cal.history[-1],
    )
    return EstimationResult(
        parameters=params,
        iterations_used=cal.iterations,
        max_residual_change=cal.change,
        max_score_residual=cal.resid,
        extreme_comments=[cal.c_ids[k] for k in np.flatnonzero(cal.ext_c)],
        extreme_raters=[cal.r_ids[k] for k in np.flatnonzero(cal.ext_r)],
        extreme_items=[t.ids[k] for k in np.flatnonzero(cal.ext_i)],
        history=cal.history,
        calibration_abilities={
            cal.c_ids[k]: float(cal.theta[k]) for k in np.flatnonzero(~cal.ext_c)
        },
    )


# --------------------------------------------------------------------------- anchored abilities


def estimate_abilities_anchored(
    responses,
    anchored_items: Sequence[ItemSpec],
    anchored_raters: Sequence[RaterSpec] | Mapping[str, float],
    method: str = "WLE",
    comment_ids: Sequence[str] | None = None,
) -> list:
    """Measure comments against fixed item, step and rater parameters.

    ``comment_ids`` may name comments that must be scored; any of them
    without responses raises :class:`MissingDataError`.
    """
    df = check_responses(responses, anchored_items)
    if isinstance(anchored_raters, Mapping):
        sev = {str(k): float(v) for k, v in anchored_raters.items()}
    else:
        sev = {r.rater_id: r.severity for r in anchored_raters}
    missing = sorted(set(df["rater_id"]) - set(sev))
    if missing:
        raise ConfigurationError(f"no anchor for rater(s): {missing[:5]}")
    codes, ids = pd.factorize(df["comment_id"], sort=True)
    if comment_ids is not None:
        absent = sorted(set(map(str, comment_ids)) - set(ids))
        if absent:
            raise MissingDataError(f"comment(s) without responses: {absent[:5]}")
    if len(ids) == 0:
        return []
    t = ItemTable(anchored_items)
    i_idx = df["item_id"].map(t.index).to_numpy(dtype=np.int64)
    offset = -t.difficulty[i_idx] - df["rater_id"].map(sev).to_numpy(dtype=float)
    theta, se = solve_locations(
        offset, i_idx, df["rating"].to_numpy(), codes, len(ids), t.cum(), t.n_cat, method=method
    )
    return [CommentSpec(cid, float(theta[n]), float(se[n])) for n, cid in enumerate(ids)]


def separation_reliability(estimates) -> float:
    """Share of observed measure variance not due to measurement error.

    ``(var(values) - mean(se**2)) / var(values)`` with the population
    variance, floored at 0. Non-finite entries are ignored.
    """
    arr = np.asarray(list(estimates), dtype=float).reshape(-1, 2)
    arr = arr[np.all(np.isfinite(arr), axis=1)]
    if arr.shape[0] < 2:
        raise RejectedInputError("need at least two finite estimates")
    var = float(np.var(arr[:, 0]))
    if var <= 0:
        warnings.warn("zero observed variance; reliability reported as 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return max(0.0, (var - float(np.mean(arr[:, 1] ** 2))) / var)


# --------------------------------------------------------------------------- estimator API


class FacetRasch(TransformerMixin, BaseEstimator):
    """Many-facet partial credit calibration as a scikit-learn transformer.

    ``fit`` takes a response frame; ``transform`` measures the comments of a
    response frame against the fitted (anchored) items and raters and returns
    a frame with ``theta`` and ``se`` indexed by comment id.
    """

    def __init__(self, items=None, max_iterations=200, convergence_tol=1e-4, score_tol=1e-3,
                 newton_step_cap=1.0, ability_estimator="WLE"):
        self.items = items
        self.max_iterations = max_iterations
        self.convergence_tol = convergence_tol
        self.score_tol = score_tol
        self.newton_step_cap = newton_step_cap
        self.ability_estimator = ability_estimator

    def _config(self):
        return EstimationConfig(
            max_iterations=self.max_iterations,
            convergence_tol=self.convergence_tol,
            score_tol=self.score_tol,
            newton_step_cap=self.newton_step_cap,
            ability_estimator=self.ability_estimator,
        )

    def fit(self, X, y=None):
        self.result_ = estimate(X, self.items, self._config())
        self.parameters_ = self.result_.parameters
        return self

    def transform(self, X):
        check_is_fitted(self, "parameters_")
        out = estimate_abilities_anchored(
            X, self.parameters_.items, self.parameters_.raters, method=self.ability_estimator
        )
        return pd.DataFrame(
            {"theta": [c.ability for c in out], "se": [c.ability_se for c in out]},
            index=pd.Index([c.comment_id for c in out], name="comment_id"),
        )
