import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facetscale import io as fio
from facetscale.coral import MultitaskConfig, train_multitask
from facetscale.exceptions import ConfigurationError, RejectedInputError
from facetscale.instruments import final_parameters
from facetscale.plan import PlanConfig, build_plan
from facetscale.scoring import RatingDistribution
from facetscale.synthetic import comment_features


def _twice(tmp_path, write, read, obj, name):
    a, b = tmp_path / f"a_{name}", tmp_path / f"b_{name}"
    write(obj, a)
    write(read(a), b)
    assert a.read_bytes() == b.read_bytes()
    return a


class TestRoundTrip:
    def test_responses(self, tmp_path, study):
        df = study.responses.copy()
        df.loc[::7, "any_identity"] = np.nan
        df["weight"] = np.where(np.arange(len(df)) % 3 == 0, np.nan, 1 / 3)
        path = _twice(tmp_path, fio.write_responses, fio.read_responses, df, "r.csv")
        back = fio.read_responses(path)
        assert path.read_text().splitlines()[0] == "comment_id,rater_id,item_id,rating,any_identity,weight"
        assert back["rating"].tolist() == df["rating"].tolist()
        assert np.allclose(back["weight"], df["weight"], rtol=1e-11, equal_nan=True)

    def test_items(self, tmp_path, items5):
        _twice(tmp_path, fio.write_items, fio.read_items, items5, "items.json")
        _twice(tmp_path, fio.write_items, fio.read_items, final_parameters().items, "final.json")

    def test_parameters(self, tmp_path, fitted):
        path = _twice(tmp_path, fio.write_parameters, fio.read_parameters, fitted.parameters, "p.json")
        meta = json.loads(path.read_text())["meta"]
        assert meta["version"] == 1 and "constraints" in meta

    def test_distributions_ragged(self, tmp_path):
        rng = np.random.default_rng(0)
        d = [RatingDistribution(f"c{n}", f"i{k}", tuple(rng.dirichlet([1] * (k + 2)))) for n in range(5) for k in range(3)]
        path = _twice(tmp_path, fio.write_distributions, fio.read_distributions, d, "d.csv")
        assert path.read_text().splitlines()[0] == "comment_id,item_id,p0,p1,p2,p3"
        back = fio.read_distributions(path)
        assert [len(x.probabilities) for x in back] == [len(x.probabilities) for x in d]

    def test_plan(self, tmp_path):
        pool = {f"L{k}": [f"ref{k}_{j}" for j in range(3)] for k in range(6)}
        plan = build_plan(PlanConfig(reference_levels=pool, seed=1), [f"c{n}" for n in range(40)])
        _twice(tmp_path, fio.write_plan, fio.read_plan, plan, "plan.json")

    def test_head(self, tmp_path, study, items5, fitted):
        feats = comment_features(study.truth, dim=3, seed=0)
        rows = fio.review_rows(study.responses, feats, fitted.parameters)
        head = train_multitask(rows, items5, MultitaskConfig(epochs=1, hidden_units=8))
        path = _twice(tmp_path, fio.write_head, fio.read_head, head, "head.json")
        assert fio.read_head(path).feature_names == ["x0", "x1", "x2"]

    @pytest.mark.parametrize("fmt", ["csv", "json"])
    def test_frame(self, tmp_path, fmt):
        df = pd.DataFrame({"comment_id": ["a", "b"], "theta": [0.1 + 0.2, -1 / 3], "raw": [3, 4]})
        text = fio.frame_to_text(df, fmt)
        if fmt == "csv":
            p = tmp_path / "f.csv"
            fio.write_frame(df, p, fmt)
            assert fio.frame_to_text(fio.read_frame(p), fmt) == text
            assert "0.3," in text and "-0.333333333333" in text
        else:
            assert json.loads(text)[1]["theta"] == -0.333333333333

    def test_json_rounding(self, tmp_path):
        p = tmp_path / "x.json"
        fio.write_json({"a": [np.float64(1 / 7), np.nan], "b": {"c": np.int64(3)}}, p)
        assert json.loads(p.read_text()) == {"a": [0.142857142857, None], "b": {"c": 3}}
        fio.write_json(fio.read_json(p), tmp_path / "y.json")
        assert (tmp_path / "y.json").read_bytes() == p.read_bytes()

    @given(st.floats(allow_nan=False, allow_infinity=False, width=64))
    @settings(max_examples=300, deadline=None)
    def test_decimal_fixed_point(self, x):
        s = fio.fmt_decimal(x)
        assert fio.fmt_decimal(float(s)) == s


class TestAtomicWrite:
    def test_no_partial_file(self, tmp_path, monkeypatch):
        target = tmp_path / "out.csv"
        target.write_text("old\n")

        def boom(*a, **k):
            raise OSError("disk full")

        monkeypatch.setattr(fio.os, "replace", boom)
        with pytest.raises(OSError):
            fio.atomic_write_text(target, "new\n")
        assert target.read_text() == "old\n"
        assert [p.name for p in tmp_path.iterdir()] == ["out.csv"]


class TestReadErrors:
    def test_line_numbers(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("comment_id,rater_id,item_id,rating,any_identity,weight\nc1,r1,i0,1,,\nc1,r1,i1,x,,\n")
        with pytest.raises(RejectedInputError, match=r"r\.csv:3:"):
            fio.read_responses(p)

    def test_bad_identity_flag(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("comment_id,rater_id,item_id,rating,any_identity,weight\nc1,r1,i0,1,2,\n")
        with pytest.raises(RejectedInputError, match=":2:"):
            fio.read_responses(p)


class TestValidate:
    def test_reports_each_problem(self, tmp_path, items5):
        fio.write_items(items5, tmp_path / "items.json")
        p = tmp_path / "r.csv"
        p.write_text(
            "comment_id,rater_id,item_id,rating,any_identity,weight\n"
            "c1,r1,i00,4,0,\n"
            "c1,r1,i01,5,0,\n"
            "c1,r1,i00,2,0,\n"
            "c2,r1,zzz,1,,\n"
        )
        out = fio.validate(responses=p, items=tmp_path / "items.json")
        lines = [(e["line"], e["message"]) for e in out["errors"]]
        assert [n for n, _ in lines] == [3, 4, 5]
        assert "out of range 0..4" in lines[0][1]
        assert "duplicate" in lines[1][1] and "line 2" in lines[1][1]
        assert out["summary"]["valid_rows"] == 1

    def test_clean(self, tmp_path, study, items5):
        fio.write_items(items5, tmp_path / "items.json")
        fio.write_responses(study.responses, tmp_path / "r.csv")
        out = fio.validate(responses=tmp_path / "r.csv", items=tmp_path / "items.json")
        assert out["errors"] == [] and out["summary"]["rows"] == len(study.responses)

    def test_distribution_width(self, tmp_path, items5):
        fio.write_items(items5, tmp_path / "items.json")
        p = tmp_path / "d.csv"
        p.write_text("comment_id,item_id,p0,p1,p2\nc1,i00,0.2,0.3,0.5\n")
        out = fio.validate(distributions=p, items=tmp_path / "items.json")
        assert out["errors"][0]["line"] == 2 and "5 categories" in out["errors"][0]["message"]


class TestSplit:
    def _frame(self):
        return pd.DataFrame({"comment_id": np.repeat([f"c{n:04d}" for n in range(1000)], 3), "rating": 1})

    def test_counts_and_overlap(self):
        train, test = fio.split_clustered(self._frame(), 0.2, seed=0)
        assert test["comment_id"].nunique() == 200 and train["comment_id"].nunique() == 800
        assert not set(train["comment_id"]) & set(test["comment_id"])
        assert len(train) + len(test) == 3000

    def test_deterministic(self):
        a = fio.split_clustered(self._frame(), 0.2, seed=4)[1]
        b = fio.split_clustered(self._frame().sample(frac=1, random_state=1), 0.2, seed=4)[1]
        assert set(a["comment_id"]) == set(b["comment_id"])

    def test_fraction_bounds(self):
        with pytest.raises(ConfigurationError):
            fio.split_clustered(self._frame(), 1.0)


def test_review_rows(study, fitted):
    feats = comment_features(study.truth, dim=4, seed=0)
    rows = fio.review_rows(study.responses, feats, fitted.parameters)
    assert len(rows) == study.responses.groupby(["comment_id", "rater_id"]).ngroups
    assert {"rater_severity", "x0", "x3", "i00"} <= set(rows.columns)
    with pytest.raises(RejectedInputError):
        fio.review_rows(study.responses, feats.iloc[:10], fitted.parameters)
