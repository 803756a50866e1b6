"""Consistent-rank-logits ordinal heads and a small multitask network.

An ordinal head scores ``s = w . x`` once and turns it into ``K - 1``
cumulative probabilities ``P(y > k - 1) = logistic(s + b_k)``. The biases are
``b_1 = base`` and ``b_k = b_{k-1} - softplus(g_{k-1})``, so they never
increase and the cumulative probabilities are rank consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.special import expit, log_softmax, softmax
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError, RejectedInputError, SplitError

HEAD_SCHEMA_VERSION = 1
PROB_FLOOR = 1e-12


def softplus(x):
    return np.logaddexp(0.0, x)


def _inv_softplus(y):
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(y > 30, y, np.log(np.expm1(np.maximum(y, 0.0))))


@dataclass
class OrdinalHead:
    weight: np.ndarray
    base_bias: float
    gap_params: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float).ravel()
        self.gap_params = np.asarray(self.gap_params, dtype=float).ravel()
        self.base_bias = float(self.base_bias)

    @property
    def num_categories(self) -> int:
        return self.gap_params.size + 2

    @property
    def bias_gaps(self) -> np.ndarray:
        return softplus(self.gap_params)

    @property
    def thresholds(self) -> np.ndarray:
        return self.base_bias - np.concatenate([[0.0], np.cumsum(self.bias_gaps)])

    @classmethod
    def from_thresholds(cls, weight, thresholds) -> "OrdinalHead":
        b = np.asarray(thresholds, dtype=float)
        if b.size < 1:
            raise RejectedInputError("need at least one threshold")
        gaps = -np.diff(b)
        if np.any(gaps < 0):
            raise RejectedInputError("thresholds must be non-increasing")
        return cls(weight, b[0], _inv_softplus(gaps))

    @classmethod
    def init(cls, n_features, num_categories, rng=None, scale=0.0) -> "OrdinalHead":
        rng = np.random.default_rng(rng)
        w = rng.normal(0.0, scale, n_features) if scale else np.zeros(n_features)
        return cls(w, 0.0, np.zeros(num_categories - 2))

    def params(self) -> dict:
        return {"weight": self.weight, "base_bias": np.array([self.base_bias]), "gap_params": self.gap_params}


def cumulative_to_categorical(cum: np.ndarray) -> np.ndarray:
    cum = np.atleast_2d(cum)
    n = cum.shape[0]
    upper = np.concatenate([np.ones((n, 1)), cum], axis=1)
    lower = np.concatenate([cum, np.zeros((n, 1))], axis=1)
    return upper - lower


def ordinal_forward(head: OrdinalHead, features):
    """Cumulative ``(n, K-1)`` and categorical ``(n, K)`` probabilities.

    A 1-D ``features`` vector gives 1-D outputs.
    """
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != head.weight.size:
        raise RejectedInputError(f"expected {head.weight.size} features, got {x.shape[1]}")
    s = x @ head.weight
    cum = expit(s[:, None] + head.thresholds[None, :])
    cat = cumulative_to_categorical(cum)
    if single:
        return cum[0], cat[0]
    return cum, cat


def _targets(label, k_minus_1):
    label = np.asarray(label)
    return (label[..., None] > np.arange(k_minus_1)).astype(float)


def ordinal_cross_entropy(cumulative, label, task_weights=None) -> float:
    """Sum of the ``K - 1`` binary cross-entropies, summed over rows.

    Probabilities are clamped to ``[1e-12, 1 - 1e-12]``.
    """
    cum = np.asarray(cumulative, dtype=float)
    km1 = cum.shape[-1]
    label = np.asarray(label)
    if np.any(label < 0) or np.any(label > km1):
        raise RejectedInputError(f"label outside 0..{km1}")
    y = _targets(label, km1)
    c = np.clip(cum, PROB_FLOOR, 1.0 - PROB_FLOOR)
    terms = -(y * np.log(c) + (1.0 - y) * np.log1p(-c))
    if task_weights is not None:
        terms = terms * np.asarray(task_weights, dtype=float)
    return float(terms.sum())


def _bias_grads(head, d_logit_sum):
    # d_logit_sum[k] = dL/db_k, k = 0..K-2
    g_base = d_logit_sum.sum()
    tail = np.cumsum(d_logit_sum[::-1])[::-1][1:]  # sum over k > m
    g_gap = -expit(head.gap_params) * tail
    return g_base, g_gap


def ordinal_backward(head: OrdinalHead, features, label, task_weights=None) -> dict:
    """Gradient of :func:`ordinal_cross_entropy` w.r.t. the head parameters.

    Rows of a 2-D ``features`` are summed. Returns a dict keyed like
    :meth:`OrdinalHead.params`.
    """
    x = np.atleast_2d(np.asarray(features, dtype=float))
    cum, _ = ordinal_forward(head, x)
    y = _targets(np.atleast_1d(label), cum.shape[1])
    d = cum - y
    if task_weights is not None:
        d = d * np.asarray(task_weights, dtype=float)
    g_base, g_gap = _bias_grads(head, d.sum(axis=0))
    return {"weight": x.T @ d.sum(axis=1), "base_bias": np.array([g_base]), "gap_params": g_gap}


def unimodality_rate(categorical) -> float:
    """Share of distributions that rise then fall (ties allowed)."""
    p = np.atleast_2d(categorical)
    d = np.sign(np.round(np.diff(p, axis=1), 15))
    ok = []
    for row in d:
        nz = row[row != 0]
        ok.append(not np.any(np.diff(nz) > 0))
    return float(np.mean(ok))


# --------------------------------------------------------------------------- multitask network


@dataclass
class MultitaskConfig:
    hidden_units: int = 64
    dropout: float = 0.10
    learning_rate: float = 0.05
    batch_size: int = 32
    epochs: int = 20
    head: str = "ordinal"
    activation: str = "tanh"
    task_weights: Sequence[float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.head not in ("ordinal", "categorical"):
            raise ConfigurationError("head must be 'ordinal' or 'categorical'")
        if self.activation not in ("tanh", "relu"):
            raise ConfigurationError("activation must be 'tanh' or 'relu'")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")
        if self.hidden_units < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("hidden_units, batch_size must be positive")


@dataclass
class CategoricalHead:
    weight: np.ndarray  # (n_features, K)
    bias: np.ndarray  # (K,)

    @property
    def num_categories(self) -> int:
        return self.bias.size

    def params(self) -> dict:
        return {"weight": self.weight, "bias": self.bias}


@dataclass
class MultitaskHead:
    """One shared hidden layer feeding one head per item.

    Every head sees the hidden units plus the rater severity as an extra
    input, so severity shifts every item's linear score directly.
    """

    item_ids: list
    hidden_weight: np.ndarray  # (n_features, H)
    hidden_bias: np.ndarray  # (H,)
    heads: list
    activation: str = "tanh"
    dropout: float = 0.10
    kind: str = "ordinal"
    history: list = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return self.hidden_weight.shape[0]

    def _hidden(self, x, rng=None):
        pre = x @ self.hidden_weight + self.hidden_bias
        h = np.tanh(pre) if self.activation == "tanh" else np.maximum(pre, 0.0)
        mask = None
        if rng is not None and self.dropout > 0:
            mask = (rng.random(h.shape) >= self.dropout) / (1.0 - self.dropout)
            h = h * mask
        return pre, h, mask

    def predict_proba(self, features, severity=None) -> list:
        x = np.atleast_2d(np.asarray(features, dtype=float))
        if x.shape[1] != self.n_features:
            raise RejectedInputError(f"expected {self.n_features} features, got {x.shape[1]}")
        sev = np.zeros(x.shape[0]) if severity is None else np.broadcast_to(np.asarray(severity, float), (x.shape[0],))
        _, h, _ = self._hidden(x)
        z = np.column_stack([h, sev])
        out = []
        for head in self.heads:
            if isinstance(head, OrdinalHead):
                out.append(ordinal_forward(head, z)[1])
            else:
                out.append(softmax(z @ head.weight + head.bias, axis=1))
        return out

    def to_dict(self) -> dict:
        heads = []
        for iid, head in zip(self.item_ids, self.heads):
            if isinstance(head, OrdinalHead):
                heads.append({"item_id": iid, "type": "ordinal", "weight": head.weight.tolist(),
                              "base_bias": head.base_bias, "gap_params": head.gap_params.tolist()})
            else:
                heads.append({"item_id": iid, "type": "categorical", "weight": head.weight.tolist(),
                              "bias": head.bias.tolist()})
        return {
            "version": HEAD_SCHEMA_VERSION,
            "kind": self.kind,
            "activation": self.activation,
            "dropout": self.dropout,
            "hidden_weight": self.hidden_weight.tolist(),
            "hidden_bias": self.hidden_bias.tolist(),
            "heads": heads,
        }

    @classmethod
    def from_dict(cls, data) -> "MultitaskHead":
        if data.get("version") != HEAD_SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported head version {data.get('version')!r}")
        heads, ids = [], []
        for h in data["heads"]:
            ids.append(str(h["item_id"]))
            if h["type"] == "ordinal":
                heads.append(OrdinalHead(np.array(h["weight"]), h["base_bias"], np.array(h["gap_params"])))
            else:
                heads.append(CategoricalHead(np.array(h["weight"]), np.array(h["bias"])))
        return cls(ids, np.array(data["hidden_weight"], dtype=float).reshape(-1, len(data["hidden_bias"])),
                   np.array(data["hidden_bias"], dtype=float), heads, data["activation"], data["dropout"], data["kind"])


def _init_heads(kind, labels, n_cat, n_in, rng):
    heads = []
    for k, K in enumerate(n_cat):
        y = labels[:, k]
        y = y[y >= 0]
        if kind == "ordinal":
            # start thresholds at the marginal cumulative logits
            share = np.array([(y >= j).mean() if y.size else 0.5 for j in range(1, K)])
            share = np.clip(share, 1e-3, 1 - 1e-3)
            b = np.log(share / (1 - share))
            b = np.minimum.accumulate(b)
            gaps = np.maximum(-np.diff(b), 1e-3)
            heads.append(OrdinalHead(rng.normal(0, 0.01, n_in), b[0], _inv_softplus(gaps)))
        else:
            freq = np.bincount(y.astype(int), minlength=K) + 1.0
            heads.append(CategoricalHead(rng.normal(0, 0.01, (n_in, K)), np.log(freq / freq.sum())))
    return heads


def _batch_step(net, x, sev, labels, lr, task_w, rng):
    n = x.shape[0]
    pre, h, mask = net._hidden(x, rng)
    z = np.column_stack([h, sev])
    dz = np.zeros_like(z)
    loss = 0.0
    for k, head in enumerate(net.heads):
        y = labels[:, k]
        seen = y >= 0
        if not seen.any():
            continue
        w = task_w[k] / n
        zs = z[seen]
        if isinstance(head, OrdinalHead):
            cum, _ = ordinal_forward(head, zs)
            loss += w * n * ordinal_cross_entropy(cum, y[seen]) / n
            d = (cum - _targets(y[seen], cum.shape[1])) * w
            ds = d.sum(axis=1)
            g_base, g_gap = _bias_grads(head, d.sum(axis=0))
            dz[seen] += ds[:, None] * head.weight[None, :]
            head.weight -= lr * (zs.T @ ds)
            head.base_bias -= lr * g_base
            head.gap_params -= lr * g_gap
        else:
            logits = zs @ head.weight + head.bias
            logp = log_softmax(logits, axis=1)
            yi = y[seen].astype(int)
            loss += -w * logp[np.arange(yi.size), yi].sum()
            d = np.exp(logp)
            d[np.arange(yi.size), yi] -= 1.0
            d *= w
            dz[seen] += d @ head.weight.T
            head.weight -= lr * (zs.T @ d)
            head.bias -= lr * d.sum(axis=0)
    dh = dz[:, :-1]
    if mask is not None:
        dh = dh * mask
    dpre = dh * (1.0 - np.tanh(pre) ** 2) if net.activation == "tanh" else dh * (pre > 0)
    net.hidden_weight -= lr * (x.T @ dpre)
    net.hidden_bias -= lr * dpre.sum(axis=0)
    return loss


class MultitaskOrdinalNet(BaseEstimator):
    """Multitask rating predictor with the scikit-learn fit/predict surface.

    ``fit(X, Y, severity)`` takes features ``(n, d)``, integer labels
    ``(n, n_items)`` with ``-1`` marking a missing label, and per-row rater
    severities. ``predict_proba`` returns one ``(n, K_i)`` array per item.
    """

    def __init__(self, n_categories=None, item_ids=None, hidden_units=64, dropout=0.10, learning_rate=0.05,
                 batch_size=32, epochs=20, head="ordinal", activation="tanh", task_weights=None, seed=0):
        self.n_categories = n_categories
        self.item_ids = item_ids
        self.hidden_units = hidden_units
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.head = head
        self.activation = activation
        self.task_weights = task_weights
        self.seed = seed

    def _config(self):
        return MultitaskConfig(self.hidden_units, self.dropout, self.learning_rate, self.batch_size, self.epochs,
                               self.head, self.activation, self.task_weights, self.seed)

    def fit(self, X, Y, severity=None):
        cfg = self._config()
        x = np.asarray(X, dtype=float)
        labels = np.asarray(Y, dtype=float)
        labels = np.where(np.isnan(labels), -1, labels).astype(np.int64)
        if x.ndim != 2 or labels.ndim != 2 or x.shape[0] != labels.shape[0]:
            raise RejectedInputError("X must be (n, d) and Y (n, n_items) with matching rows")
        if not np.all(np.isfinite(x)):
            raise RejectedInputError("features contain non-finite values")
        n_cat = list(self.n_categories) if self.n_categories is not None else (labels.max(axis=0) + 1).clip(2).tolist()
        if len(n_cat) != labels.shape[1]:
            raise RejectedInputError("n_categories does not match label columns")
        if np.any(labels >= np.asarray(n_cat)[None, :]):
            raise RejectedInputError("label outside its item's categories")
        sev = np.zeros(x.shape[0]) if severity is None else np.asarray(severity, dtype=float)
        rng = np.random.default_rng(cfg.seed)
        d, H = x.shape[1], cfg.hidden_units
        scale = np.sqrt(1.0 / d) if cfg.activation == "tanh" else np.sqrt(2.0 / d)
        net = MultitaskHead(
            item_ids=list(self.item_ids) if self.item_ids is not None else [str(k) for k in range(len(n_cat))],
            hidden_weight=rng.normal(0.0, scale, (d, H)),
            hidden_bias=np.zeros(H),
            heads=_init_heads(cfg.head, labels, n_cat, H + 1, rng),
            activation=cfg.activation,
            dropout=cfg.dropout,
            kind=cfg.head,
        )
        task_w = np.ones(len(n_cat)) if cfg.task_weights is None else np.asarray(cfg.task_weights, dtype=float)
        n = x.shape[0]
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                b = order[start:start + cfg.batch_size]
                total += _batch_step(net, x[b], sev[b], labels[b], cfg.learning_rate, task_w, rng) * b.size
            net.history.append(total / n)
        self.net_ = net
        return self

    def predict_proba(self, X, severity=None) -> list:
        check_is_fitted(self, "net_")
        return self.net_.predict_proba(X, severity)

    def predict(self, X, severity=None) -> np.ndarray:
        return np.column_stack([p.argmax(axis=1) for p in self.predict_proba(X, severity)])


def feature_columns(rows: pd.DataFrame) -> list:
    cols = [c for c in rows.columns if c.startswith("x") and c[1:].isdigit()]
    return sorted(cols, key=lambda c: int(c[1:]))


def train_multitask(rows: pd.DataFrame, items, config: MultitaskConfig | None = None,
                    validation_rows: pd.DataFrame | None = None, features: Sequence[str] | None = None):
    """Fit a :class:`MultitaskHead` on review-level rows.

    ``rows`` carries ``comment_id``, ``rater_severity`` (optional, 0 when
    absent), feature columns (``x0, x1, ...`` unless ``features`` names
    them) and one label column per item id, NaN where the label is missing.
    ``validation_rows`` may not share comments with ``rows``.
    """
    config = config or MultitaskConfig()
    if validation_rows is not None:
        leak = set(rows["comment_id"].astype(str)) & set(validation_rows["comment_id"].astype(str))
        if leak:
            raise SplitError(f"{len(leak)} comment(s) in both training and validation rows")
    features = list(features) if features is not None else feature_columns(rows)
    if not features:
        raise RejectedInputError("no feature columns")
    item_ids = [it.item_id for it in items]
    missing = [i for i in item_ids if i not in rows.columns]
    if missing:
        raise RejectedInputError(f"rows lack label columns for items {missing}")
    sev = rows["rater_severity"].to_numpy(dtype=float) if "rater_severity" in rows else None
    model = MultitaskOrdinalNet(
        n_categories=[it.num_categories for it in items], item_ids=item_ids,
        hidden_units=config.hidden_units, dropout=config.dropout, learning_rate=config.learning_rate,
        batch_size=config.batch_size, epochs=config.epochs, head=config.head, activation=config.activation,
        task_weights=config.task_weights, seed=config.seed,
    )
    model.fit(rows[features].to_numpy(dtype=float), rows[item_ids].to_numpy(dtype=float), sev)
    model.net_.feature_names = features
    return model.net_


def predict_distributions(head: MultitaskHead, rows: pd.DataFrame, severity: float | None = 0.0,
                          features: Sequence[str] | None = None) -> list:
    """Predicted rating distributions, one per (comment, item).

    With the default ``severity=0`` every comment is rated by a neutral
    model rater and duplicate comment rows collapse to the first. Pass
    ``severity=None`` to use each row's ``rater_severity`` instead (rows
    then keep their own predictions and the first per comment is emitted).
    """
    from .scoring import RatingDistribution

    features = list(features) if features is not None else getattr(head, "feature_names", None) or feature_columns(rows)
    rows = rows.drop_duplicates("comment_id")
    sev = rows["rater_severity"].to_numpy(dtype=float) if severity is None else np.full(len(rows), float(severity))
    probs = head.predict_proba(rows[features].to_numpy(dtype=float), sev)
    out = []
    for n, cid in enumerate(rows["comment_id"].astype(str)):
        for iid, p in zip(head.item_ids, probs):
            q = np.clip(p[n], 0.0, None)
            out.append(RatingDistribution(cid, iid, tuple(q / q.sum())))
    return out
