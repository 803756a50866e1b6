from collections import Counter

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facetscale.exceptions import ConfigurationError, PlanError
from facetscale.plan import (
    JudgingPlan,
    PlanConfig,
    assign_batches_to_raters,
    assignment_triples,
    build_plan,
    linkage_analysis,
)

from oracles import all_pairs_bfs

ORIGINALS = [f"c{n:03d}" for n in range(100)]
POOL = {f"L{k}": [f"ref{k}_{j}" for j in range(10)] for k in range(1, 7)}


def _config(seed=0, **kw):
    kw.setdefault("reference_levels", POOL)
    return PlanConfig(seed=seed, **kw)


class TestBuildPlan:
    def test_default_counts(self):
        plan = build_plan(_config(), ORIGINALS)
        assert len(plan.groups) == 25 and all(len(g) == 4 for g in plan.groups)
        assert len(plan.batches) == 20
        assert all(len(b.comments) == 26 for b in plan.batches)
        assert set(plan.replication().values()) == {4}
        assert set(plan.replication()) == set(ORIGINALS)

    def test_groups_stay_together(self):
        plan = build_plan(_config(seed=3), ORIGINALS)
        for g in plan.groups:
            holders = [b.batch_id for b in plan.batches if g[0] in b.originals]
            for c in g[1:]:
                assert [b.batch_id for b in plan.batches if c in b.originals] == holders

    def test_no_duplicates_within_batch(self):
        for seed in range(10):
            for b in build_plan(_config(seed=seed), ORIGINALS).batches:
                assert len(set(b.comments)) == len(b.comments)

    def test_each_batch_covers_all_levels(self):
        level_of = {c: lv for lv, pool in POOL.items() for c in pool}
        for b in build_plan(_config(seed=1), ORIGINALS).batches:
            assert sorted(level_of[c] for c in b.references) == sorted(POOL)

    def test_round_robin_levels(self):
        plan = build_plan(_config(reference_per_batch=3), ORIGINALS)
        level_of = {c: lv for lv, pool in POOL.items() for c in pool}
        counts = Counter(level_of[c] for b in plan.batches for c in b.references)
        assert set(counts.values()) == {10}

    def test_connected_over_seeds(self):
        for seed in range(20):
            rep = linkage_analysis(build_plan(_config(seed=seed), ORIGINALS))
            assert rep.connected and rep.diameter >= rep.average_distance >= 1

    def test_partition_without_links(self):
        plan = build_plan(PlanConfig(ratings_per_comment=1, reference_per_batch=0, seed=0), ORIGINALS)
        assert len(plan.batches) == 5
        assert sorted(c for b in plan.batches for c in b.originals) == ORIGINALS
        assert linkage_analysis(plan).connected_components == 5

    def test_strata_spread(self):
        strata = {c: f"s{n % 5}" for n, c in enumerate(ORIGINALS)}
        plan = build_plan(_config(strata=strata, seed=2), ORIGINALS)
        for g in plan.groups:
            assert len({strata[c] for c in g}) == 4
        for b in plan.batches:
            assert len({strata[c] for c in b.originals}) == 5

    def test_deterministic(self):
        a = build_plan(_config(seed=7), ORIGINALS).to_dict()
        b = build_plan(_config(seed=7), ORIGINALS).to_dict()
        c = build_plan(_config(seed=8), ORIGINALS).to_dict()
        assert a == b and a != c

    def test_dict_round_trip(self):
        plan = build_plan(_config(seed=4), ORIGINALS)
        assert JudgingPlan.from_dict(plan.to_dict()).to_dict() == plan.to_dict()

    @pytest.mark.parametrize(
        "n,kw",
        [
            (98, {}),
            (12, {}),
            (100, {"group_size": 3, "originals_per_batch": 21}),
        ],
    )
    def test_infeasible(self, n, kw):
        with pytest.raises(PlanError):
            build_plan(_config(**kw), ORIGINALS[:n])

    def test_duplicates_and_overlap(self):
        with pytest.raises(PlanError):
            build_plan(_config(), ORIGINALS[:99] + ORIGINALS[:1])
        with pytest.raises(PlanError):
            build_plan(_config(), ORIGINALS[:96] + POOL["L1"][:4])

    def test_bad_config(self):
        with pytest.raises(ConfigurationError):
            PlanConfig(originals_per_batch=18)
        with pytest.raises(ConfigurationError):
            PlanConfig(reference_levels={})
        with pytest.raises(ConfigurationError):
            PlanConfig(reference_levels={"L1": []})

    @given(st.integers(5, 40), st.integers(1, 4), st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_replication_exact(self, n_groups, r, seed):
        comments = [f"c{k}" for k in range(4 * n_groups)]
        plan = build_plan(_config(seed=seed, ratings_per_comment=r), comments)
        assert set(plan.replication().values()) == {r}


class TestLinkage:
    def test_single_batch_star(self):
        rep = linkage_analysis([("b1", f"c{k}") for k in range(10)])
        assert rep.nodes == 11 and rep.diameter == 2 and rep.connected

    def test_matches_plain_bfs(self):
        plan = build_plan(_config(seed=5), ORIGINALS)
        rep = linkage_analysis(plan)
        diam, avg = all_pairs_bfs([(f"B:{b}", f"C:{c}") for b, c in plan.edges()])
        assert rep.diameter == diam
        assert rep.average_distance == pytest.approx(avg, rel=1e-12)

    def test_sampled_mode_bounds(self):
        plan = build_plan(_config(seed=5), ORIGINALS)
        exact = linkage_analysis(plan)
        est = linkage_analysis(plan, exact_limit=10)
        assert not est.exact and est.diameter <= exact.diameter
        assert est.average_distance == pytest.approx(exact.average_distance, rel=0.1)

    def test_projection_reported(self):
        rep = linkage_analysis(build_plan(_config(seed=5), ORIGINALS))
        p = rep.projection
        assert p["nodes"] == 20 and p["connected_components"] == 1
        assert "rater projection" in rep.summary()

    def test_empty(self):
        with pytest.raises(ConfigurationError):
            linkage_analysis([])


class TestAssignment:
    def test_twenty_of_twenty_five(self):
        plan = build_plan(_config(), ORIGINALS)
        raters = [f"r{k}" for k in range(25)]
        m = assign_batches_to_raters(plan, raters, seed=1)
        assert len(m) == 20 and len(set(m.values())) == 20
        assert m == assign_batches_to_raters(plan, raters, seed=1)

    def test_too_few(self):
        with pytest.raises(PlanError):
            assign_batches_to_raters(build_plan(_config(), ORIGINALS), [f"r{k}" for k in range(19)])

    def test_realized_graph_isomorphic(self):
        plan = build_plan(_config(seed=2), ORIGINALS[:40])
        m = assign_batches_to_raters(plan, [f"r{k}" for k in range(30)], seed=0)
        triples = assignment_triples(plan, m, ["i"])
        df = pd.DataFrame(triples, columns=["comment_id", "rater_id", "item_id"])
        a = linkage_analysis(plan)
        b = linkage_analysis(df)
        assert (a.nodes, a.edges, a.diameter, a.average_distance) == (b.nodes, b.edges, b.diameter, b.average_distance)
        # relabelling batch nodes as raters gives the same edge set
        relabelled = {(m[bid], c) for bid, c in plan.edges()}
        assert relabelled == set(zip(df["rater_id"], df["comment_id"]))
