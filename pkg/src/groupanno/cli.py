"""Command-line interface: generate, analyze, infer, evaluate, experiment.

Exit status is 0 on success, 2 when inputs fail validation and 1 on any other
runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import analysis, baselines, em, ingest
from .classifier import FeatureTransform, TrainConfig, fit
from .experiment import ExperimentError, canonicalize, run_experiment
from .metrics import evaluate
from .synth import SynthConfig, generate
from .types import ValidationError, check

logger = logging.getLogger("groupanno")

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2


def _global_flags(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=default(0), help="random seed (default 0)")
    parser.add_argument("--threads", type=int, default=default(1),
                        help="worker threads; computations currently run on one thread")
    parser.add_argument("--out-dir", type=Path, default=default(Path(".")), help="directory for all outputs")
    parser.add_argument("-v", "--verbose", action="count", default=default(0))


def _inputs(p, gold=False):
    p.add_argument("--annotations", type=Path, required=True, help="long-format annotation CSV")
    p.add_argument("--annotators", type=Path, required=True, help="annotator group CSV")
    p.add_argument("--instances", type=Path, help="optional instances CSV with features or text")
    p.add_argument("--text-buckets", type=int, default=1024, help="hash buckets for a text column")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groupanno", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    g.add_argument("--config", type=Path, help="JSON file with generator settings")
    g.add_argument("--shape", choices=("circle", "moon"))
    g.add_argument("--instances-per-class", type=int)
    g.add_argument("--num-annotators", type=int)
    g.add_argument("--annotations-per-instance", type=int)

    a = sub.add_parser("analyze", parents=[common], help="group positive rates and bias ANOVA")
    _inputs(a)
    a.add_argument("--reference", choices=("mv", "gold"), default="mv",
                   help="labels used to estimate annotator bias (default: majority vote)")
    a.add_argument("--gold", type=Path, help="gold CSV, required with --reference gold")

    i = sub.add_parser("infer", parents=[common], help="infer true labels and annotator bias")
    _inputs(i)
    i.add_argument("--method", choices=("groupanno", "lfc", "mv", "zencrowd"), default="groupanno")
    i.add_argument("--feature-map", choices=("raw", "quadratic"), default="raw")
    i.add_argument("--standardize", action="store_true")
    i.add_argument("--epochs", type=int)
    i.add_argument("--concentration", type=float)
    i.add_argument("--learning-rate", type=float)

    e = sub.add_parser("evaluate", parents=[common], help="score posteriors against gold labels")
    e.add_argument("--posteriors", type=Path, required=True)
    e.add_argument("--gold", type=Path, required=True)

    x = sub.add_parser("experiment", parents=[common], help="run a JSON experiment config")
    x.add_argument("config", type=Path)
    return parser


def _read_inputs(args):
    feat = ingest.HashingFeaturizer(args.text_buckets)
    dataset = ingest.read_annotations(args.annotations, args.instances, feat)
    table = ingest.read_annotators(args.annotators)
    check(dataset, table)
    return canonicalize(dataset), table


def cmd_generate(args) -> None:
    d = ingest.load_json(args.config) if args.config else {}
    for key in ("shape", "instances_per_class", "num_annotators", "annotations_per_instance"):
        if getattr(args, key) is not None:
            d[key] = getattr(args, key)
    d["seed"] = args.seed
    bundle = generate(SynthConfig.from_dict(d))
    out = args.out_dir
    ingest.write_annotations(bundle.dataset, out / "annotations.csv")
    ingest.write_annotators(bundle.table, out / "annotators.csv")
    ingest.write_gold(bundle.gold, out / "gold.csv")
    ingest.dump_json({
        "annot_alpha": bundle.true_annot_alpha,
        "annot_beta": bundle.true_annot_beta,
        "realized_group_alpha": [list(r) for r in bundle.realized_group_alpha],
        "realized_group_beta": [list(r) for r in bundle.realized_group_beta],
    }, out / "truth.json")


def cmd_analyze(args) -> None:
    dataset, table = _read_inputs(args)
    if args.reference == "gold":
        reference = ingest.read_gold(args.gold)
    else:
        reference = baselines.majority_vote(dataset).hard
    rates = analysis.group_positive_rates(dataset, table)
    estimates = analysis.estimate_annotator_bias(dataset, reference)
    anova = {r: analysis.run_anova(estimates, table, r) for r in analysis.RESPONSES}
    text = (
        "Positive annotation rate by group\n"
        + analysis.format_positive_rates(rates)
        + "\nInter-group sum of squares\n"
        + analysis.format_anova(anova)
    )
    ingest.write_report(analysis.analysis_to_dict(rates, anova), args.out_dir / "analysis.json", text)


def cmd_infer(args) -> None:
    dataset, table = _read_inputs(args)
    transform = FeatureTransform(args.feature_map, args.standardize).fit(dataset.index.X)
    data = transform.apply(dataset)
    overrides = {
        k: v for k, v in (
            ("epochs", args.epochs),
            ("concentration", args.concentration),
            ("learning_rate", args.learning_rate),
        ) if v is not None
    }
    config = em.EmConfig(seed=args.seed, **overrides)
    out = args.out_dir
    trace = []
    if args.method in ("groupanno", "lfc"):
        state = em.run(data, table, config) if args.method == "groupanno" else baselines.lfc_binary(data, config)
        post, clf, trace = state.posteriors, state.classifier, state.objective_trace
        bias = ingest.bias_to_dict(state.bias)
        if args.method == "groupanno":
            bias["group_bias"] = em.report_group_bias(state, table)
    else:
        if args.method == "mv":
            post = baselines.majority_vote(data)
            est = analysis.estimate_annotator_bias(data, post.hard)
            bias = {
                "annot_alpha": {e.annotator_id: e.sensitivity for e in est},
                "annot_beta": {e.annotator_id: e.specificity for e in est},
            }
        else:
            post, q = baselines.zencrowd(data)
            bias = {"reliability": q}
        ids = data.instance_ids
        clf = fit(data.index.X, [post.hard[i] for i in ids], TrainConfig(seed=args.seed))
    ingest.write_posteriors(post, out / "posteriors.csv")
    ingest.dump_json(bias, out / "bias.json")
    ingest.save_classifier(clf, out / "classifier.json", transform)
    ingest.write_trace(trace, out / "trace.csv")


def cmd_evaluate(args) -> None:
    scores = evaluate(ingest.read_posteriors(args.posteriors), ingest.read_gold(args.gold))
    ingest.write_report(
        {"accuracy": scores.accuracy, "precision": scores.precision, "recall": scores.recall,
         "f1": scores.f1, "n": scores.n},
        args.out_dir / "metrics.json",
    )


def cmd_experiment(args) -> None:
    run_experiment(args.config, args.out_dir)


COMMANDS = {
    "generate": cmd_generate,
    "analyze": cmd_analyze,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_VALIDATION
    if getattr(args, "reference", None) == "gold" and args.gold is None:
        print("error: --reference gold needs --gold", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args)
    except (ValidationError, ingest.ParseError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ExperimentError as exc:
        if isinstance(exc.cause, (ValidationError, ingest.ParseError)):
            print(f"validation error in stage {exc.stage!r}: {exc.cause}", file=sys.stderr)
            return EXIT_VALIDATION
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        logger.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
