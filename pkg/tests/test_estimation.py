import math

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from facetscale.estimation import (
    EstimationConfig,
    FacetRasch,
    estimate,
    estimate_abilities_anchored,
    separation_reliability,
)
from facetscale.exceptions import (
    ConfigurationError,
    DisconnectedNetworkError,
    MissingDataError,
    RejectedInputError,
)
from facetscale.instruments import final_instrument
from facetscale.model import ItemSpec, RaterSpec, expected_score
from facetscale.synthetic import default_items, simulate_study

from oracles import grid_max_binary_2x2, wle_root


def _frame(rows):
    return pd.DataFrame(rows, columns=["comment_id", "rater_id", "item_id", "rating"])


def _crossed(data):
    return _frame(
        [(f"c{n}", f"r{j}", f"i{i}", int(data[n][i][j])) for n in range(len(data)) for i in range(2) for j in range(2)]
    )


def _rmse(a, b):
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


class TestRecovery:
    def test_items_raters_comments(self, study, fitted, items5):
        p = fitted.parameters
        assert fitted.converged
        est = [p.item_map()[it.item_id].difficulty for it in items5]
        true = [it.difficulty for it in items5]
        assert np.corrcoef(est, true)[0, 1] > 0.99
        assert _rmse(est, true) <= 0.1
        rm = p.rater_map()
        pairs = [(rm[r.rater_id].severity, r.severity) for r in study.truth.raters if r.rater_id in rm]
        assert _rmse(*zip(*pairs)) <= 0.15
        cm = p.comment_map()
        th = np.array([(cm[c.comment_id].ability, c.ability) for c in study.truth.comments])
        assert np.corrcoef(th.T)[0, 1] > 0.95

    def test_constraints(self, fitted):
        v = fitted.parameters.constraint_violations()
        assert max(v.values()) < 1e-8
        assert abs(np.mean([r.severity for r in fitted.parameters.raters])) < 1e-8

    def test_history_monotone(self, fitted):
        h = np.asarray(fitted.history)
        assert np.all(np.diff(h) >= -1e-6)

    def test_score_equations(self, study, fitted, items5):
        # calibration abilities satisfy the comment score equations
        df = study.responses
        p = fitted.parameters
        th = fitted.calibration_abilities
        sev = {r.rater_id: r.severity for r in p.raters}
        im = p.item_map()
        df = df[df["comment_id"].isin(th)]
        e = [expected_score(th[c], im[i], sev[r]) for c, r, i in df[["comment_id", "rater_id", "item_id"]].itertuples(index=False)]
        resid = (df["rating"] - np.array(e)).groupby(df["comment_id"]).sum()
        assert resid.abs().max() < 1e-3 * 10
        # item score equations, with the same abilities
        resid_i = (df["rating"] - np.array(e)).groupby(df["item_id"]).sum()
        assert resid_i.abs().max() < 1e-3 * 10

    def test_more_ratings_per_comment_better(self):
        items = default_items(10, 5, seed=3)
        err = []
        for r, raters in ((4, 50), (16, 200)):
            s = simulate_study(items, 200, raters, seed=11, ratings_per_comment=r)
            p = estimate(s.responses, items).parameters
            err.append(_rmse([p.item_map()[i.item_id].difficulty for i in items], [i.difficulty for i in items]))
        assert err[1] < err[0]


class TestGridOracle:
    DATA = [[[0, 1], [1, 0]], [[1, 1], [1, 0]], [[0, 1], [0, 1]]]

    @pytest.mark.slow
    def test_loglik_matches_grid(self):
        r = estimate(_crossed(self.DATA), [ItemSpec("i0", 2), ItemSpec("i1", 2)])
        best, _ = grid_max_binary_2x2(self.DATA)
        assert r.converged
        assert abs(r.parameters.log_likelihood - best) < 1e-3
        # the continuous optimum can only be at or above the grid optimum
        assert r.parameters.log_likelihood >= best - 1e-9


class TestDegenerate:
    def test_extreme_rater_flagged(self, study, items5):
        df = study.responses.copy()
        victim = df["rater_id"].iloc[0]
        df.loc[df["rater_id"] == victim, "rating"] = 0
        r = estimate(df, items5)
        assert victim in r.extreme_raters
        sev = r.parameters.rater_map()[victim].severity
        assert np.isfinite(sev) and sev > max(x.severity for x in r.parameters.raters if x.rater_id != victim)

    def test_extreme_comment_finite_wle(self, study, items5):
        df = study.responses.copy()
        c = df["comment_id"].iloc[0]
        k = df["item_id"].map({it.item_id: it.num_categories - 1 for it in items5})
        df.loc[df["comment_id"] == c, "rating"] = k[df["comment_id"] == c]
        r = estimate(df, items5)
        assert c in r.extreme_comments
        assert np.isfinite(r.parameters.comment_map()[c].ability)

    def test_extreme_comment_mle_infinite(self, study, items5):
        df = study.responses.copy()
        c = df["comment_id"].iloc[0]
        df.loc[df["comment_id"] == c, "rating"] = 0
        r = estimate(df, items5, EstimationConfig(ability_estimator="MLE"))
        assert r.parameters.comment_map()[c].ability == -np.inf

    def test_disconnected(self):
        rows = []
        for block in range(2):
            for n in range(3):
                for j in range(2):
                    for i in range(2):
                        rows.append((f"c{block}{n}", f"r{block}{j}", f"i{i}", (n + j + i + block) % 2))
        with pytest.raises(DisconnectedNetworkError) as exc:
            estimate(_frame(rows))
        assert len(exc.value.components) == 2

    def test_unobserved_category(self):
        rows = [(f"c{n}", f"r{j}", "i", (n + j) % 2) for n in range(4) for j in range(2)]
        rows += [(f"c{n}", f"r{j}", "k", (n * j) % 2) for n in range(4) for j in range(2)]
        with pytest.raises(RejectedInputError):
            estimate(_frame(rows), [ItemSpec("i", 3), ItemSpec("k", 2)])

    def test_not_converged_flag(self, study, items5):
        r = estimate(study.responses, items5, EstimationConfig(max_iterations=1))
        assert not r.converged and r.iterations_used == 1

    def test_bad_config(self):
        with pytest.raises(ConfigurationError):
            EstimationConfig(convergence_tol=0)
        with pytest.raises(ConfigurationError):
            EstimationConfig(ability_estimator="EAP")

    def test_unknown_anchor(self, study, items5):
        with pytest.raises(ConfigurationError):
            estimate(study.responses, items5, EstimationConfig(anchored_raters={"ghost": 0.0}))


class TestAnchoring:
    def test_translation(self, study, fitted, items5):
        c = 0.75
        p = fitted.parameters
        base = EstimationConfig(
            anchored_items={it.item_id: it.difficulty for it in p.items},
            anchored_steps={it.item_id: list(it.steps) for it in p.items},
        )
        shifted = EstimationConfig(
            anchored_items={it.item_id: it.difficulty + c for it in p.items},
            anchored_steps={it.item_id: list(it.steps) for it in p.items},
        )
        a = estimate(study.responses, items5, base).parameters
        b = estimate(study.responses, items5, shifted).parameters
        ta = np.array([x.ability for x in a.comments])
        tb = np.array([x.ability for x in b.comments])
        assert_allclose(tb - c, ta, atol=2e-3)
        assert_allclose([x.severity for x in b.raters], [x.severity for x in a.raters], atol=2e-3)

    def test_severity_shift(self):
        items = final_instrument()
        rows = [("c1", "r1", it.item_id, k % it.num_categories) for k, it in enumerate(items)]
        rows += [("c2", "r2", it.item_id, 1) for it in items]
        df = _frame(rows)
        a = estimate_abilities_anchored(df, items, {"r1": 0.2, "r2": 0.0})
        b = estimate_abilities_anchored(df, items, {"r1": 0.2 + 0.9, "r2": 0.0})
        assert b[0].ability - a[0].ability == pytest.approx(0.9, abs=1e-6)
        assert b[1].ability == pytest.approx(a[1].ability, abs=1e-12)

    def test_33_distinct_thetas(self):
        items = final_instrument()
        tops = [it.num_categories - 1 for it in items]
        rows = []
        for raw in range(33):
            left = raw
            for it, top in zip(items, tops):
                x = min(top, left)
                left -= x
                rows.append((f"c{raw:02d}", "model", it.item_id, x))
        out = estimate_abilities_anchored(_frame(rows), items, [RaterSpec("model", 0.0)])
        th = [c.ability for c in out]
        assert len(set(np.round(th, 9))) == 33
        assert np.all(np.diff(th) > 0)

    def test_sufficiency(self):
        items = final_instrument()
        a = [("a", "m", it.item_id, x) for it, x in zip(items, [4, 0, 2, 1, 0, 3, 0, 1, 0, 0])]
        b = [("b", "m", it.item_id, x) for it, x in zip(items, [1, 4, 0, 3, 1, 0, 2, 0, 0, 0])]
        out = estimate_abilities_anchored(_frame(a + b), items, {"m": 0.0})
        assert out[0].ability == pytest.approx(out[1].ability, abs=1e-9)

    def _binary(self, raw):
        items = [ItemSpec(f"i{k}", 2) for k in range(10)]
        rows = [("c", "m", f"i{k}", int(k < raw)) for k in range(10)]
        return _frame(rows), items

    def test_symmetric_midpoint(self):
        df, items = self._binary(5)
        assert estimate_abilities_anchored(df, items, {"m": 0.0})[0].ability == pytest.approx(0.0, abs=1e-9)

    def test_wle_zero_score(self):
        df, items = self._binary(0)
        th = estimate_abilities_anchored(df, items, {"m": 0.0})[0].ability
        oracle = wle_root([0.0] * 10, [[0.0]] * 10, [0] * 10)
        assert th == pytest.approx(oracle, abs=1e-6)
        assert th == pytest.approx(-3.04, abs=0.01)
        assert th == pytest.approx(math.log(1 / 21), abs=1e-8)

    def test_wle_polytomous_matches_root_finder(self):
        items = final_instrument()[:4]
        x = [3, 1, 0, 2]
        df = _frame([("c", "m", it.item_id, v) for it, v in zip(items, x)])
        th = estimate_abilities_anchored(df, items, {"m": 0.3})[0].ability
        oracle = wle_root([-it.difficulty - 0.3 for it in items], [list(it.steps) for it in items], x)
        assert th == pytest.approx(oracle, abs=1e-6)

    def test_mle_extremes(self):
        df, items = self._binary(10)
        assert estimate_abilities_anchored(df, items, {"m": 0.0}, method="MLE")[0].ability == np.inf

    def test_missing_comment(self):
        df, items = self._binary(3)
        with pytest.raises(MissingDataError):
            estimate_abilities_anchored(df, items, {"m": 0.0}, comment_ids=["c", "nobody"])

    def test_missing_rater_anchor(self):
        df, items = self._binary(3)
        with pytest.raises(ConfigurationError):
            estimate_abilities_anchored(df, items, {"other": 0.0})


class TestReliability:
    def test_hand_value(self):
        assert separation_reliability([(-1, 0.3), (0, 0.3), (1, 0.3)]) == pytest.approx(1 - 0.09 / (2 / 3))

    def test_sample_variance_value_differs(self):
        # 0.91 for (-1, 0, 1) follows from the sample variance (1.0); the
        # population variance (2/3) gives 0.865
        r = separation_reliability([(-1, 0.3), (0, 0.3), (1, 0.3)])
        assert r == pytest.approx(0.865, abs=1e-12)
        assert r != pytest.approx(0.91, abs=1e-3)

    def test_limits(self):
        assert separation_reliability([(x, 1e-9) for x in range(5)]) == pytest.approx(1.0)
        v = np.array([-1.0, 1.0])
        assert separation_reliability(list(zip(v, [1.0, 1.0]))) == 0.0

    def test_zero_variance(self):
        with pytest.warns(RuntimeWarning):
            assert separation_reliability([(1.0, 0.2), (1.0, 0.2)]) == 0.0

    def test_too_few(self):
        with pytest.raises(RejectedInputError):
            separation_reliability([(1.0, 0.2)])


class TestEstimatorAPI:
    def test_fit_transform(self, study, items5):
        est = FacetRasch(items=items5)
        out = est.fit(study.responses).transform(study.responses)
        assert list(out.columns) == ["theta", "se"]
        assert len(out) == study.responses["comment_id"].nunique()
        assert est.get_params()["max_iterations"] == 200
        cm = est.parameters_.comment_map()
        # transform reproduces fit's abilities for non-extreme comments
        assert_allclose(out["theta"].to_numpy(), [cm[c].ability for c in out.index], atol=1e-6)
