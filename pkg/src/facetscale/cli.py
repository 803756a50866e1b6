"""Command-line entry point: ``facetscale <subcommand> [options]``.

Exit status is 0 on success, 1 for invalid input or usage and 2 for
runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from . import io
from .coral import MultitaskConfig, predict_distributions, train_multitask
from .diagnostics import category_monotonicity, fit_statistics, format_item_table, item_table_rows
from .estimation import EstimationConfig, estimate
from .exceptions import PipelineError
from .plan import PlanConfig, build_plan, linkage_analysis
from .raters import FilterPolicy, filter_and_refit
from .scoring import PlausibleValueConfig, raw_score_table, score_modal, score_plausible
from .service import BatchService, ServiceConfig, serve
from .synthetic import comment_features, default_items, simulate_study

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _emit(text: str, out) -> None:
    if out:
        io.atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _emit_frame(df, args, index=True):
    _emit(io.frame_to_text(df, args.format, index), args.out)


def _items(path):
    return io.read_items(path) if path else None


# --------------------------------------------------------------------------- subcommands


def cmd_simulate(args):
    items = _items(args.items) or default_items(seed=args.seed)
    study = simulate_study(
        items, args.comments, args.raters, seed=args.seed,
        reference_levels=args.reference_levels, reference_per_level=args.references_per_level,
        reference_per_batch=args.reference_per_batch if args.reference_levels else 0,
        noise_fraction=args.noise_fraction,
    )
    _emit(io.responses_to_text(study.responses), args.out)
    if args.truth_out:
        io.write_parameters(study.truth, args.truth_out)
    if args.plan_out:
        io.write_plan(study.plan, args.plan_out)
    if args.items_out:
        io.write_items(items, args.items_out)
    if args.features_out:
        io.write_frame(comment_features(study.truth, args.feature_dim, seed=args.seed), args.features_out, index=False)
    return EXIT_OK


def _read_ids(path):
    return [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]


def cmd_plan(args):
    if args.originals:
        originals = _read_ids(args.originals)
    else:
        originals = [f"c{k:05d}" for k in range(args.n_originals)]
    levels = io.read_json(args.references) if args.references else {}
    cfg = PlanConfig(
        ratings_per_comment=args.ratings_per_comment,
        group_size=args.group_size,
        originals_per_batch=args.originals_per_batch,
        reference_per_batch=args.reference_per_batch if levels else 0,
        reference_levels=levels,
        seed=args.seed,
    )
    plan = build_plan(cfg, originals)
    _emit(io._json_text(io._round_tree(plan.to_dict())), args.out)
    report = linkage_analysis(plan, seed=args.seed or 0)
    print(report.summary(), file=sys.stderr)
    if args.linkage_out:
        io.write_json({**report.__dict__, "connected": report.connected}, args.linkage_out)
    return EXIT_OK


def cmd_serve(args):
    cfg = ServiceConfig.from_env(listen=args.listen, store_path=args.store, lease_hours=args.lease_hours, seed=args.seed)
    plan = io.read_plan(args.plan) if args.plan else None
    cats = {it.item_id: it.num_categories for it in io.read_items(args.items)} if args.items else None
    service = BatchService(plan, cfg, item_categories=cats)
    serve(service, cfg)
    return EXIT_OK


def _anchors(path):
    if not path:
        return {}
    p = io.read_parameters(path)
    return {
        "anchored_items": {it.item_id: it.difficulty for it in p.items},
        "anchored_steps": {it.item_id: list(it.steps) for it in p.items},
        "anchored_raters": {r.rater_id: r.severity for r in p.raters} or None,
    }


def _estimation_config(args):
    return EstimationConfig(
        max_iterations=args.max_iterations,
        convergence_tol=args.tol,
        ability_estimator=args.ability_estimator,
        **_anchors(getattr(args, "anchor", None)),
    )


def cmd_estimate(args):
    df = io.read_responses(args.responses)
    result = estimate(df, _items(args.items), _estimation_config(args))
    if not result.converged:
        print(f"warning: not converged after {result.iterations_used} iterations", file=sys.stderr)
    _emit(io._json_text(io.parameters_to_dict(result.parameters)), args.out)
    return EXIT_OK


def cmd_diagnose(args):
    df = io.read_responses(args.responses)
    params = io.read_parameters(args.parameters)
    report = fit_statistics(df, params)
    print(format_item_table(item_table_rows(report, params)), file=sys.stderr)
    if args.format == "json":
        data = report.to_dict()
        data["category_monotonicity"] = [
            {"item_id": m.item_id, "monotone": m.monotone, "note": m.note,
             "categories": [c.__dict__ for c in m.categories]}
            for m in category_monotonicity(df, params)
        ]
        _emit(io._json_text(io._round_tree(data)), args.out)
    else:
        _emit_frame(report.elements, args, index=False)
    return EXIT_OK


def cmd_filter(args):
    df = io.read_responses(args.responses)
    policy = FilterPolicy(
        infit_max=args.infit_max, infit_min=args.infit_min, identity_rate_min=args.identity_min,
        severity_abs_max=args.severity_max, rounds=args.rounds,
    )
    outcome = filter_and_refit(df, _items(args.items), policy, _estimation_config(args))
    _emit(io._json_text(io._round_tree(outcome.audit())), args.out)
    if args.parameters_out:
        io.write_parameters(outcome.result.parameters, args.parameters_out)
    if args.kept_out:
        io.write_responses(outcome.kept_responses, args.kept_out)
    return EXIT_OK


def cmd_score(args):
    dists = io.read_distributions(args.distributions)
    params = io.read_parameters(args.parameters)
    if args.strategy == "modal":
        out = score_modal(dists, params, args.method)
    else:
        cfg = PlausibleValueConfig(args.replications, args.seed or 0, args.aggregation)
        out = score_plausible(dists, params, cfg, args.method)
    _emit_frame(out, args)
    return EXIT_OK


def cmd_pv_table(args):
    src = io.read_parameters(args.parameters) if args.parameters else io.read_items(args.items)
    _emit_frame(raw_score_table(src, args.method), args, index=False)
    return EXIT_OK


def _review_rows(args, items):
    if args.rows:
        return pd.read_csv(args.rows, dtype={"comment_id": str, "rater_id": str})
    if not (args.responses and args.features):
        raise ValueError("train-head needs --rows, or --responses with --features")
    df = io.read_responses(args.responses)
    feats = io.read_frame(args.features)
    params = io.read_parameters(args.parameters) if args.parameters else None
    return io.review_rows(df, feats, params)


def cmd_train_head(args):
    items = io.read_items(args.items)
    rows = _review_rows(args, items)
    cfg = MultitaskConfig(
        hidden_units=args.hidden_units, dropout=args.dropout, learning_rate=args.learning_rate,
        batch_size=args.batch_size, epochs=args.epochs, head=args.head, seed=args.seed or 0,
    )
    head = train_multitask(rows, items, cfg)
    data = head.to_dict()
    data["feature_names"] = list(head.feature_names)
    _emit(io._json_text(io._round_tree(data)), args.out)
    return EXIT_OK


def cmd_predict(args):
    head = io.read_head(args.head)
    feats = io.read_frame(args.features)
    dists = predict_distributions(head, feats, severity=args.severity)
    _emit(io.distributions_to_text(dists), args.out)
    return EXIT_OK


def cmd_validate(args):
    report = io.validate(args.responses, args.items, args.distributions, args.parameters)
    _emit(io._json_text(report), args.out)
    return EXIT_INVALID if report["errors"] else EXIT_OK


def cmd_split(args):
    df = pd.read_csv(args.responses, dtype=str, keep_default_na=False)
    train, test = io.split_clustered(df, args.test_fraction, args.seed)
    _emit(train.to_csv(index=False, lineterminator="\n"), args.out)
    io.atomic_write_text(args.test_out, test.to_csv(index=False, lineterminator="\n"))
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def _estimation_flags(p):
    p.add_argument("--max-iterations", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-4, help="convergence tolerance on parameter change")
    p.add_argument("--ability-estimator", choices=["WLE", "MLE"], default="WLE")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output path (default stdout)")
    common.add_argument("--format", choices=["csv", "json"], default=argparse.SUPPRESS)

    parser = _Parser(prog="facetscale", description="Faceted Rasch measurement pipeline", parents=[common])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, parents=[common])
        p.set_defaults(func=fn)
        return p

    p = add("simulate", cmd_simulate, "simulate a rating study")
    p.add_argument("--comments", type=int, required=True)
    p.add_argument("--raters", type=int, required=True)
    p.add_argument("--items", help="items JSON (default: 10 five-category items)")
    p.add_argument("--noise-fraction", type=float, default=0.0)
    p.add_argument("--reference-levels", type=int, default=6)
    p.add_argument("--references-per-level", type=int, default=2)
    p.add_argument("--reference-per-batch", type=int, default=6)
    p.add_argument("--truth-out")
    p.add_argument("--plan-out")
    p.add_argument("--items-out")
    p.add_argument("--features-out")
    p.add_argument("--feature-dim", type=int, default=5)

    p = add("plan", cmd_plan, "build a judging plan")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--originals", help="file with one original comment id per line")
    g.add_argument("--n-originals", type=int)
    p.add_argument("--references", help="JSON mapping level -> list of reference comment ids")
    p.add_argument("--ratings-per-comment", type=int, default=4)
    p.add_argument("--group-size", type=int, default=4)
    p.add_argument("--originals-per-batch", type=int, default=20)
    p.add_argument("--reference-per-batch", type=int, default=6)
    p.add_argument("--linkage-out")

    p = add("serve", cmd_serve, "run the batch leasing service")
    p.add_argument("--plan")
    p.add_argument("--items")
    p.add_argument("--listen", default=None, help="host:port (env FACET_LISTEN)")
    p.add_argument("--store", default=None, help="append-only log path (env FACET_STORE)")
    p.add_argument("--lease-hours", type=float, default=None, help="lease duration (env FACET_LEASE_HOURS)")

    p = add("estimate", cmd_estimate, "calibrate all facets")
    p.add_argument("--responses", required=True)
    p.add_argument("--items")
    p.add_argument("--anchor", help="parameter file whose items, steps and raters are held fixed")
    _estimation_flags(p)

    p = add("diagnose", cmd_diagnose, "fit statistics for calibrated parameters")
    p.add_argument("--responses", required=True)
    p.add_argument("--parameters", required=True)

    p = add("filter-raters", cmd_filter, "exclude poor raters and re-estimate")
    p.add_argument("--responses", required=True)
    p.add_argument("--items")
    p.add_argument("--infit-max", type=float, default=1.9)
    p.add_argument("--infit-min", type=float, default=0.37)
    p.add_argument("--identity-min", type=float, default=0.20)
    p.add_argument("--severity-max", type=float)
    p.add_argument("--rounds", type=int, default=4)
    p.add_argument("--parameters-out")
    p.add_argument("--kept-out")
    _estimation_flags(p)

    p = add("score", cmd_score, "score predicted rating distributions")
    p.add_argument("--distributions", required=True)
    p.add_argument("--parameters", required=True)
    p.add_argument("--strategy", choices=["plausible", "modal"], default="plausible")
    p.add_argument("--replications", type=int, default=32)
    p.add_argument("--aggregation", choices=["mean_theta", "median_theta"], default="mean_theta")
    p.add_argument("--method", choices=["WLE", "MLE"], default="WLE")

    p = add("pv-table", cmd_pv_table, "ability for every raw score")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--parameters")
    g.add_argument("--items")
    p.add_argument("--method", choices=["WLE", "MLE"], default="WLE")

    p = add("train-head", cmd_train_head, "train the multitask ordinal head")
    p.add_argument("--items", required=True)
    p.add_argument("--rows", help="review-level rows CSV")
    p.add_argument("--responses")
    p.add_argument("--features")
    p.add_argument("--parameters", help="rater severities for the auxiliary input")
    p.add_argument("--hidden-units", type=int, default=64)
    p.add_argument("--dropout", type=float, default=0.10)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--head", choices=["ordinal", "categorical"], default="ordinal")

    p = add("predict", cmd_predict, "predict rating distributions")
    p.add_argument("--head", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--severity", type=float, default=0.0)

    p = add("validate", cmd_validate, "check dataset files")
    p.add_argument("--responses")
    p.add_argument("--items")
    p.add_argument("--distributions")
    p.add_argument("--parameters")

    p = add("split", cmd_split, "clustered train/test split by comment")
    p.add_argument("--responses", required=True)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--test-out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("seed", None), ("out", None), ("format", "csv")):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore", RuntimeWarning)
            return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
