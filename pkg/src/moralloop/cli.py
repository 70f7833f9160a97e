"""Command-line workbench.

Subcommands mirror the library entry points: ``generate`` synthesizes a
dataset from design+teacher configs, ``fit``/``fit-nn`` train models,
``eval`` scores model files on a test CSV, ``curve`` sweeps dataset sizes,
``residuals`` writes ranked per-dilemma gap clusters, and ``loop`` runs one
criticize-and-extend iteration.

Exit codes: 0 success, 2 validation error, 3 non-convergence, 4 I/O error.
Every run writes a manifest JSON (seeds, config hashes, package and RNG
names) sufficient to reproduce its outputs byte for byte.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .choicemodel import (
    STANDARD_SPECS,
    ChoiceModelParams,
    ChoiceModelSpec,
    FitConfig,
    fit,
    load_model,
    params_from_dict,
    predict_left_prob_matrix,
    save_model,
    utilitarian_spec,
)
from .datagen import (
    design_to_dict,
    generate_dataset,
    load_design,
    load_teacher,
    teacher_to_dict,
)
from .errors import ConvergenceError, MoralloopError, ValidationError
from .features import parse_principles
from .harness import (
    build_manifest,
    nn_inputs,
    run_learning_curve,
    run_loop_iteration,
)
from .ingest import read_csv, split, SplitConfig, write_csv
from .metrics import evaluate
from .neuralnet import (
    MlpArch,
    TrainConfig,
    forward,
    load_network,
    network_from_dict,
    save_network,
    train,
)
from .residuals import (
    aggregate,
    attach_predictions,
    cluster_by_template,
    rank_gaps,
    records_to_tsv,
    report_table,
)

CLI_MODEL_NAMES = {
    "equal": "equal_weight",
    "animals": "animals_vs_people",
    "utilitarian": "utilitarian",
    "expanded": "expanded",
    "expanded_types": "expanded_types",
}


def _spec_for(name: str, principles_path=None) -> ChoiceModelSpec:
    extra = []
    if principles_path:
        extra = parse_principles(Path(principles_path).read_text())
    if name == "custom":
        if not extra:
            raise ValidationError("--model custom requires --principles")
        return utilitarian_spec().with_principles(extra, name="custom")
    if name not in CLI_MODEL_NAMES:
        raise ValidationError(f"unknown model {name!r}; expected one of {sorted(CLI_MODEL_NAMES)} or custom")
    spec = STANDARD_SPECS[CLI_MODEL_NAMES[name]]()
    if extra:
        spec = spec.with_principles(extra, name=f"{spec.name}_custom")
    return spec


def _load_any_model(path: str):
    with open(path) as fh:
        raw = json.load(fh)
    if raw.get("kind") == "choice_model":
        return params_from_dict(raw)
    if raw.get("kind") == "mlp":
        return network_from_dict(raw)
    raise ValidationError(f"{path}: unrecognized model file (kind={raw.get('kind')!r})")


def _write_manifest(path: Path, seed: int, configs: dict, **extra) -> None:
    manifest = build_manifest(seed=seed, configs=configs, command=" ".join(sys.argv[1:]), **extra)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _eval_tsv(reports) -> str:
    lines = ["model\taccuracy\tauc\tnormalized_aic\tcross_entropy\tn\tk"]
    for r in reports:
        lines.append(
            f"{r.model_id}\t{r.accuracy:.6f}\t{r.auc:.6f}\t{r.normalized_aic:.6f}"
            f"\t{r.cross_entropy:.6f}\t{r.n}\t{r.k}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    design = load_design(args.design)
    teacher = load_teacher(args.teacher)
    dataset = generate_dataset(design, teacher, args.n, seed=args.seed)
    write_csv(dataset, args.out)
    _write_manifest(
        Path(args.out).with_suffix(".manifest.json"),
        seed=args.seed,
        configs={"design": design_to_dict(design), "teacher": teacher_to_dict(teacher)},
        n=args.n,
    )
    return 0


def cmd_fit(args) -> int:
    spec = _spec_for(args.model, args.principles)
    dataset = read_csv(args.train)
    params = fit(spec, dataset, FitConfig(seed=args.seed, ridge=args.ridge, max_iterations=args.max_iter))
    save_model(params, args.out)
    _write_manifest(
        Path(args.out).with_suffix(".manifest.json"),
        seed=args.seed,
        configs={"train_provenance": dataset.provenance},
        model=spec.name,
    )
    if not params.fit_metadata.converged:
        print(
            f"warning: fit did not converge (gradient norm {params.fit_metadata.gradient_norm:.3e} "
            f"> tolerance {params.fit_metadata.tolerance:.3e}); model written with flag",
            file=sys.stderr,
        )
        return 3
    if params.fit_metadata.separable:
        print("note: training data looks perfectly separable; see fitMetadata in the model file", file=sys.stderr)
    return 0


def cmd_fit_nn(args) -> int:
    dataset = read_csv(args.train)
    widths = tuple(int(w) for w in args.arch.split(",") if w.strip())
    if not widths:
        raise ValidationError(f"--arch must list hidden widths, got {args.arch!r}")
    arch = MlpArch(hidden_layers=widths)
    cfg = TrainConfig(batch_size=args.batch, seed=args.seed, epochs=args.epochs)
    params = train(arch, nn_inputs(dataset), dataset.saved_left, cfg)
    save_network(params, args.out)
    _write_manifest(
        Path(args.out).with_suffix(".manifest.json"),
        seed=args.seed,
        configs={"train_provenance": dataset.provenance},
        arch=list(widths),
        batch=params.train_metadata.get("batch_size"),
    )
    return 0


def cmd_eval(args) -> int:
    dataset = read_csv(args.test)
    reports = []
    for path in args.model:
        model = _load_any_model(path)
        if isinstance(model, ChoiceModelParams):
            preds = predict_left_prob_matrix(model, dataset.keys)
            model_id = model.spec.name
            k = model.k
        else:
            preds = forward(model, nn_inputs(dataset))
            model_id = Path(path).stem
            k = model.k
        reports.append(evaluate(model_id, preds, dataset.saved_left, k))
    with open(args.out, "w") as fh:
        fh.write(_eval_tsv(reports))
    return 0


def cmd_curve(args) -> int:
    dataset = read_csv(args.data)
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    names = [m.strip() for m in args.models.split(",") if m.strip()]
    cm_specs = [_spec_for(n) for n in names if n != "nn"]
    nn_arch = MlpArch() if "nn" in names else None
    points = run_learning_curve(
        dataset, sizes, cm_specs, nn_arch, replicates=args.replicates, seed=args.seed
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_curve_csv(points, out_dir / "curve.csv")
    _write_curve_svgs(points, out_dir)
    _write_manifest(
        out_dir / "manifest.json",
        seed=args.seed,
        configs={"data_provenance": dataset.provenance},
        sizes=sizes,
        models=names,
        replicates=args.replicates,
    )
    return 0


def _write_curve_csv(points, path) -> None:
    with open(path, "w") as fh:
        fh.write("dataset_size,model,accuracy,accuracy_sem,auc,auc_sem,normalized_aic,normalized_aic_sem\n")
        for point in points:
            for model_id, s in point.summaries.items():
                fh.write(
                    f"{point.dataset_size},{model_id},{s.accuracy.mean:.6f},{s.accuracy.sem:.6f},"
                    f"{s.auc.mean:.6f},{s.auc.sem:.6f},{s.normalized_aic.mean:.6f},{s.normalized_aic.sem:.6f}\n"
                )


def _write_curve_svgs(points, out_dir: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    model_ids = list(points[0].summaries)
    sizes = [p.dataset_size for p in points]
    for metric, label in (("accuracy", "Accuracy"), ("auc", "AUC"), ("normalized_aic", "Normalized AIC")):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for model_id in model_ids:
            means = [getattr(p.summaries[model_id], metric).mean for p in points]
            sems = [getattr(p.summaries[model_id], metric).sem for p in points]
            ax.errorbar(sizes, means, yerr=sems, marker="o", capsize=2, label=model_id)
        ax.set_xscale("log")
        ax.set_xlabel("Dataset size")
        ax.set_ylabel(label)
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out_dir / f"{metric}.svg")
        plt.close(fig)


def cmd_residuals(args) -> int:
    dataset = read_csv(args.data)
    cm = load_model(args.cm)
    nn = load_network(args.nn)
    records = attach_predictions(aggregate(dataset), cm, nn)
    ranked = rank_gaps(records, args.min_responses)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "records.tsv", "w") as fh:
        fh.write(records_to_tsv(ranked))
    report_lines = []
    if ranked:
        clusters = cluster_by_template(ranked)
        with open(out_dir / "clusters.tsv", "w") as fh:
            fh.write("signature\tmembers\tmean_gap\n")
            for c in clusters:
                fh.write(f"{c.signature}\t{len(c.members)}\t{c.mean_gap:.6f}\n")
        for c in clusters:
            report_lines.append(report_table(c, args.top))
            report_lines.append("")
    else:
        report_lines.append(f"no dilemmas with at least {args.min_responses} responses")
    (out_dir / "report.txt").write_text("\n".join(report_lines))
    _write_manifest(
        out_dir / "manifest.json",
        seed=0,
        configs={"data_provenance": dataset.provenance},
        cm=str(args.cm),
        nn=str(args.nn),
        min_responses=args.min_responses,
    )
    return 0


def cmd_loop(args) -> int:
    dataset = read_csv(args.data)
    if args.cm_spec in CLI_MODEL_NAMES or args.cm_spec == "custom":
        spec = _spec_for(args.cm_spec)
    else:
        spec = load_model(args.cm_spec).spec
    candidates = parse_principles(Path(args.candidates).read_text())
    train_part, test_part = split(dataset, SplitConfig(seed=args.seed, replicates=1), 0)
    report = run_loop_iteration(
        train_part,
        test_part,
        spec,
        candidates=candidates,
        min_gain=args.min_gain,
        seed=args.seed,
        min_responses=args.min_responses,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {
        "iteration_index": report.iteration_index,
        "spec_before": report.spec_before.name,
        "spec_after": report.spec_after.name,
        "accepted": [p.source for p in report.accepted],
        "candidate_gains": report.candidate_gains,
        "metrics": {
            name: {
                "accuracy": r.accuracy,
                "auc": r.auc,
                "normalized_aic": r.normalized_aic,
                "cross_entropy": r.cross_entropy,
            }
            for name, r in report.reports.items()
        },
    }
    with open(out_dir / "report.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    (out_dir / "accepted.dsl").write_text("".join(p.source + "\n" for p in report.accepted))
    save_model(report.cm_params_after, out_dir / "model_after.json")
    save_network(report.nn_params, out_dir / "network.json")
    lines = []
    for cluster in report.clusters[:5]:
        lines.append(report_table(cluster, args.top))
        lines.append("")
    (out_dir / "clusters.txt").write_text("\n".join(lines))
    _write_manifest(
        out_dir / "manifest.json",
        seed=args.seed,
        configs={"data_provenance": dataset.provenance},
        min_gain=args.min_gain,
        candidates=[p.source for p in candidates],
    )
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moralloop",
        description="Moral-dilemma choice modeling workbench",
    )
    parser.add_argument("--version", action="version", version=f"moralloop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a dataset from design and teacher configs")
    p.add_argument("--design", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit a choice model")
    p.add_argument("--model", required=True, help="equal|animals|utilitarian|expanded|custom")
    p.add_argument("--principles", help="DSL file with extra principles")
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ridge", type=float, default=FitConfig().ridge)
    p.add_argument("--max-iter", type=int, default=FitConfig().max_iterations)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("fit-nn", help="train the reference network")
    p.add_argument("--arch", default="32,32,32", help="comma-separated hidden widths")
    p.add_argument("--train", required=True)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_nn)

    p = sub.add_parser("eval", help="score model files on a test CSV")
    p.add_argument("--model", required=True, nargs="+")
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("curve", help="metrics over dataset sizes")
    p.add_argument("--data", required=True)
    p.add_argument("--sizes", required=True, help="comma-separated sizes")
    p.add_argument("--models", required=True, help="comma-separated model names (nn for the network)")
    p.add_argument("--replicates", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("residuals", help="rank per-dilemma gaps and cluster them")
    p.add_argument("--data", required=True)
    p.add_argument("--cm", required=True)
    p.add_argument("--nn", required=True)
    p.add_argument("--min-responses", type=int, default=30)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_residuals)

    p = sub.add_parser("loop", help="one criticize-and-extend iteration")
    p.add_argument("--data", required=True)
    p.add_argument("--cm-spec", required=True, help="model name or model file")
    p.add_argument("--candidates", required=True, help="DSL file of candidate principles")
    p.add_argument("--min-gain", type=float, default=0.002)
    p.add_argument("--min-responses", type=int, default=30)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_loop)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, MoralloopError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
