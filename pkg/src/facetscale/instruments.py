"""Reference instrument used in examples and tests.

Ten items: nine five-option Likert items and one three-option binary item
(no / unclear / yes). Collapse maps reduce them to the analysis categories
whose maxima sum to 32. Difficulties follow the published calibration; the
step values are illustrative, evenly spaced and centred.
"""

from __future__ import annotations

from .model import FacetParameters, ItemSpec, RaterSpec

# (item_id, difficulty, raw options, collapse map)
_LAYOUT = [
    ("sentiment", -2.62, 5, None),
    ("respect", -2.26, 5, None),
    ("attack_defend", -1.10, 5, None),
    ("insult", -0.94, 5, None),
    ("status", -0.51, 5, (0, 1, 2, 3, 3)),
    ("dehumanize", 0.61, 5, (0, 1, 2, 3, 3)),
    ("humiliate", 0.63, 5, (0, 1, 2, 3, 3)),
    ("hatespeech", 0.86, 3, (0, 0, 1)),
    ("violence", 2.22, 5, (0, 1, 2, 3, 3)),
    ("genocide", 3.11, 5, (0, 1, 2, 3, 3)),
]

# documentation fixture: published item fit table (not reproduced numerically)
PUBLISHED_ITEM_TABLE = [
    ("Sentiment", -2.62, 1.04, 1.05, 1.00, 0.83),
    ("Respect", -2.26, 0.94, 1.01, 1.09, 0.85),
    ("Attack-Defend", -1.10, 1.05, 1.07, 0.93, 0.80),
    ("Insult", -0.94, 0.96, 1.04, 1.04, 0.84),
    ("Status", -0.51, 1.04, 1.19, 0.93, 0.65),
    ("Dehumanize", 0.61, 1.09, 1.09, 0.87, 0.60),
    ("Humiliate", 0.63, 1.10, 1.05, 0.90, 0.72),
    ("Hate speech (binary)", 0.86, 0.97, 0.89, 1.04, 0.62),
    ("Violence", 2.22, 0.91, 0.89, 1.09, 0.51),
    ("Genocide", 3.11, 0.85, 0.90, 1.12, 0.44),
]

BINARY_ITEM = "hatespeech"


def _even_steps(k, spacing=1.0):
    m = k - 1
    return tuple(spacing * (j - (m - 1) / 2.0) for j in range(m))


def raw_instrument() -> list:
    """Items as labelled, with their collapse maps attached."""
    return [ItemSpec(iid, k, difficulty=d, steps=_even_steps(k), collapse_map=cmap) for iid, d, k, cmap in _LAYOUT]


def final_instrument() -> list:
    """Collapsed analysis items (maximum raw score 32)."""
    out = []
    for iid, d, k, cmap in _LAYOUT:
        kk = k if cmap is None else max(cmap) + 1
        out.append(ItemSpec(iid, kk, difficulty=d, steps=_even_steps(kk)))
    return out


def final_parameters() -> FacetParameters:
    """Anchored parameters for model-based scoring: final items, one rater at 0."""
    return FacetParameters(items=final_instrument(), raters=[RaterSpec("model", 0.0)])
