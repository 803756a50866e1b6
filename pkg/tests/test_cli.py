import json
import os
import socket
import subprocess
import sys
import time
import urllib.request

import pandas as pd
import pytest

from facetscale import io as fio
from facetscale.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    codes = {}
    codes["simulate"] = run("simulate", "--comments", 200, "--raters", 50, "--seed", 1, "--out", d / "responses.csv",
                            "--truth-out", d / "truth.json", "--plan-out", d / "plan.json", "--items-out", d / "items.json",
                            "--features-out", d / "features.csv")
    codes["plan"] = run("plan", "--n-originals", 100, "--seed", 2, "--out", d / "plan2.json", "--linkage-out", d / "linkage.json")
    codes["estimate"] = run("estimate", "--responses", d / "responses.csv", "--items", d / "items.json", "--out", d / "params.json")
    codes["diagnose"] = run("diagnose", "--responses", d / "responses.csv", "--parameters", d / "params.json",
                            "--format", "json", "--out", d / "fit.json")
    codes["filter-raters"] = run("filter-raters", "--responses", d / "responses.csv", "--items", d / "items.json",
                                 "--out", d / "audit.json", "--parameters-out", d / "filtered.json", "--kept-out", d / "kept.csv")
    codes["train-head"] = run("train-head", "--items", d / "items.json", "--responses", d / "responses.csv",
                              "--features", d / "features.csv", "--parameters", d / "params.json", "--epochs", 3,
                              "--seed", 0, "--out", d / "head.json")
    codes["predict"] = run("predict", "--head", d / "head.json", "--features", d / "features.csv", "--out", d / "dists.csv")
    codes["score"] = run("score", "--distributions", d / "dists.csv", "--parameters", d / "params.json",
                         "--replications", 8, "--seed", 3, "--out", d / "scores.csv")
    codes["pv-table"] = run("pv-table", "--parameters", d / "params.json", "--out", d / "table.csv")
    codes["validate"] = run("validate", "--responses", d / "responses.csv", "--items", d / "items.json",
                            "--distributions", d / "dists.csv", "--out", d / "report.json")
    codes["split"] = run("split", "--responses", d / "responses.csv", "--test-fraction", 0.2, "--seed", 4,
                         "--out", d / "train.csv", "--test-out", d / "test.csv")
    return d, codes


class TestPipeline:
    def test_every_step_succeeds(self, pipeline):
        _, codes = pipeline
        assert codes == {k: 0 for k in codes}

    def test_outputs_readable(self, pipeline):
        d, _ = pipeline
        assert len(fio.read_parameters(d / "params.json").items) == 10
        assert json.loads((d / "linkage.json").read_text())["connected"] is True
        assert len(fio.read_distributions(d / "dists.csv")) == 10 * 200
        assert len(pd.read_csv(d / "scores.csv")) == 200
        assert len(pd.read_csv(d / "table.csv")) == 41
        assert json.loads((d / "report.json").read_text())["errors"] == []
        fit = json.loads((d / "fit.json").read_text())
        assert "category_monotonicity" in fit

    def test_split_disjoint(self, pipeline):
        d, _ = pipeline
        train = pd.read_csv(d / "train.csv", dtype=str)
        test = pd.read_csv(d / "test.csv", dtype=str)
        assert test["comment_id"].nunique() == round(0.2 * (train["comment_id"].nunique() + test["comment_id"].nunique()))
        assert not set(train["comment_id"]) & set(test["comment_id"])

    def test_seeded_determinism(self, pipeline, tmp_path):
        d, _ = pipeline
        assert run("simulate", "--comments", 200, "--raters", 50, "--seed", 1, "--out", tmp_path / "again.csv") == 0
        assert (tmp_path / "again.csv").read_bytes() == (d / "responses.csv").read_bytes()
        assert run("score", "--distributions", d / "dists.csv", "--parameters", d / "params.json",
                   "--replications", 8, "--seed", 3, "--out", tmp_path / "scores.csv") == 0
        assert (tmp_path / "scores.csv").read_bytes() == (d / "scores.csv").read_bytes()

    def test_global_flags_before_subcommand(self, pipeline, tmp_path):
        d, _ = pipeline
        assert run("--format", "json", "--out", tmp_path / "t.json", "pv-table", "--parameters", d / "params.json") == 0
        assert len(json.loads((tmp_path / "t.json").read_text())) == 41

    def test_anchored_estimate(self, pipeline, tmp_path):
        d, _ = pipeline
        assert run("estimate", "--responses", d / "responses.csv", "--anchor", d / "params.json", "--out", tmp_path / "a.json") == 0
        a = {it.item_id: it.difficulty for it in fio.read_parameters(tmp_path / "a.json").items}
        b = {it.item_id: it.difficulty for it in fio.read_parameters(d / "params.json").items}
        assert a == pytest.approx(b, abs=1e-9)


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run("estimate", "--bogus")
        assert exc.value.code == 1
        assert "usage" in capsys.readouterr().err

    def test_validate_errors_exit_one(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("comment_id,rater_id,item_id,rating,any_identity,weight\nc1,r1,i0,1,,\nc1,r1,i0,1,,\n")
        assert run("validate", "--responses", p, "--out", tmp_path / "v.json") == 1

    def test_bad_input_exit_one(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("comment_id,rater_id,item_id,rating,any_identity,weight\nc1,r1,i0,-3,,\n")
        assert run("estimate", "--responses", p) == 1

    def test_missing_file_exit_two(self, tmp_path):
        assert run("estimate", "--responses", tmp_path / "absent.csv") == 2


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_serve_subcommand(pipeline, tmp_path):
    d, _ = pipeline
    port = _free_port()
    env = dict(os.environ, FACET_STORE=str(tmp_path / "store.log"))
    proc = subprocess.Popen(
        [sys.executable, "-m", "facetscale.cli", "serve", "--plan", d / "plan.json", "--listen", f"127.0.0.1:{port}"],
        env=env, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
    )
    try:
        for _ in range(100):
            try:
                with urllib.request.urlopen(f"http://127.0.0.1:{port}/v1/health", timeout=1) as r:
                    body = json.loads(r.read())
                break
            except OSError:
                time.sleep(0.1)
        else:
            pytest.fail("server did not start")
        assert body["status"] == "ok" and body["batches"]["available"] > 0
        assert (tmp_path / "store.log").stat().st_size > 0
    finally:
        proc.terminate()
        proc.wait(10)
