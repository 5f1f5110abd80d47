"""Command-line entry point wiring the library into reproducible experiments.

Every command is a thin shell over library calls: outputs equal the library
results bit for bit, every run writes its resolved configuration next to its
artifacts, and all randomness derives from one --seed via purpose-string
hashing. Report paths render matplotlib figures alongside the delimited
output unless --no-figures is given.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, figures
from .baselines import compare_baselines
from .data import (
    Dataset,
    ParseError,
    PredictorSchema,
    SchemaError,
    SplitAssignment,
    assign_spatial_blocks,
    generate_synthetic,
    load_csv,
    write_csv,
)
from .evaluation import (
    UndefinedAUC,
    evaluate_group_powerset,
    mean_auc,
    occurrence_stratified_auc,
)
from .masks import SubsetMask
from .model import (
    CheckpointError,
    ModelConfig,
    check_schema_compatible,
    desk_config,
    load_checkpoint,
    save_checkpoint,
)
from .shapley import (
    TooManyPlayers,
    exact_shapley,
    performance_value_function,
    prediction_value_function,
    shapley_map,
    stratified_mc_shapley,
    uniform_mc_shapley,
)
from .training import TrainConfig, TrainingDiverged, desk_train_config, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class CliError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"ERR:usage:{message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def derive_seed(seed: int, purpose: str) -> int:
    """Stable sub-seed from (seed, purpose-string)."""
    digest = hashlib.sha256(f"{seed}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _write_run_config(path: Path, command: str, args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    payload = {"command": command, "version": __version__, "config": resolved}
    path.write_text(json.dumps(payload, indent=2, default=str) + "\n")


def _load_inputs(args) -> tuple[Dataset, SplitAssignment | None]:
    schema = PredictorSchema.load(args.schema)
    dataset = load_csv(args.data, schema)
    split = None
    if getattr(args, "split", None):
        split = SplitAssignment.load(args.split, dataset)
    return dataset, split


def _load_model(args, dataset: Dataset):
    model = load_checkpoint(args.checkpoint)
    check_schema_compatible(model, dataset)
    return model


def _model_config(args, n_species: int) -> ModelConfig:
    if args.paper_scale:
        return ModelConfig(n_species=n_species)
    return desk_config(n_species, d=args.d, n_blocks=args.blocks, n_heads=args.heads,
                       ff_mult=args.ff_mult, dropout=args.dropout,
                       n_frequencies=args.frequencies)


def _train_config(args, seed: int) -> TrainConfig:
    if getattr(args, "train_config", None):
        obj = json.loads(Path(args.train_config).read_text())
        obj.setdefault("seed", seed)
        return TrainConfig.from_json(obj)
    return desk_train_config(seed=seed, lr=args.lr, batch_size=args.batch_size,
                             max_epochs=args.epochs, patience=args.patience,
                             warmup_steps=args.warmup,
                             weight_decay=args.weight_decay,
                             per_batch_p=args.per_batch_p)


def _add_model_flags(p: _Parser) -> None:
    p.add_argument("--paper-scale", action="store_true",
                   help="full-scale architecture (d=192, 7 blocks, 8 heads, k=48)")
    p.add_argument("--d", type=int, default=32, help="token size")
    p.add_argument("--blocks", type=int, default=2, help="encoder blocks")
    p.add_argument("--heads", type=int, default=4, help="attention heads")
    p.add_argument("--ff-mult", type=int, default=2, help="feed-forward width multiplier")
    p.add_argument("--dropout", type=float, default=0.1, help="dropout probability")
    p.add_argument("--frequencies", type=int, default=8,
                   help="periodic tokenizer frequencies per scalar predictor")


def _add_train_flags(p: _Parser) -> None:
    p.add_argument("--train-config", default=None,
                   help="JSON training config file; overrides the flags below")
    p.add_argument("--lr", type=float, default=1e-3, help="learning rate")
    p.add_argument("--batch-size", type=int, default=64, help="batch size")
    p.add_argument("--epochs", type=int, default=50, help="max epochs")
    p.add_argument("--patience", type=int, default=10, help="early-stop patience")
    p.add_argument("--warmup", type=int, default=100, help="warm-up steps")
    p.add_argument("--weight-decay", type=float, default=0.01, help="AdamW weight decay")
    p.add_argument("--per-batch-p", action="store_true",
                   help="one masking probability per iteration instead of per sample")


def _add_common(p: _Parser, split_required: bool = True) -> None:
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--schema", required=True, help="schema JSON")
    if split_required:
        p.add_argument("--split", required=True, help="split file")


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, truth = generate_synthetic(args.n_samples, args.n_predictors,
                                        args.n_species, args.correlation,
                                        args.missing_rate, args.seed)
    write_csv(dataset, out / "dataset.csv")
    dataset.schema.save(out / "schema.json")
    truth.save(out / "truth.json")
    _write_run_config(out / "run_config.json", "synth", args)
    print(f"wrote {out / 'dataset.csv'} ({len(dataset)} samples, "
          f"{dataset.schema.M} predictors, {dataset.n_species} species)")
    return EXIT_OK


def cmd_split(args) -> int:
    dataset, _ = _load_inputs(args)
    ratios = tuple(float(x) for x in args.ratios.split(","))
    if len(ratios) != 3:
        raise CliError("usage", "--ratios needs three comma-separated values")
    split = assign_spatial_blocks(dataset, args.block_size, ratios,
                                  derive_seed(args.seed, "split"))
    split.save(args.out)
    _write_run_config(Path(args.out).with_suffix(".run.json"), "split", args)
    counts = {name: len(split.indices(dataset, name)) for name in ("train", "val", "test")}
    print(f"wrote {args.out} blocks={len(split.split_of_block)} counts={counts}")
    return EXIT_OK


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, split = _load_inputs(args)
    model_config = _model_config(args, dataset.n_species)
    train_config = _train_config(args, derive_seed(args.seed, "train"))
    model, history = train(dataset, split, model_config, train_config)
    save_checkpoint(model, out / "checkpoint.msdm")
    history.to_csv(out / "history.csv")
    _write_run_config(out / "run_config.json", "train", args)
    if args.figures:
        figures.render_history(history, out / "history.png")
    print(f"wrote {out / 'checkpoint.msdm'} best_epoch={history.best_epoch} "
          f"best_val_auc={max(history.val_auc):.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, split = _load_inputs(args)
    model = _load_model(args, dataset)
    _write_run_config(out / "run_config.json", "eval", args)
    if args.powerset:
        grid = evaluate_group_powerset(model, dataset, split, split_name=args.split_name)
        grid.save_csv(out / "subset_grid.csv")
        grid.save_json(out / "subset_grid.json")
        if args.figures:
            figures.render_subset_grid(grid, out / "subset_grid.png")
        print(f"wrote {out / 'subset_grid.csv'} ({len(grid.entries)} subsets)")
        return EXIT_OK
    mask = SubsetMask.parse(model.schema, args.mask)
    report = mean_auc(model, dataset, split, mask, args.split_name)
    report.save_csv(out / "report.csv")
    report.save_json(out / "report.json")
    if args.bins:
        edges = [float(x) for x in args.bins.split(",")]
        rows = occurrence_stratified_auc(model, dataset, split, edges, mask,
                                         args.split_name)
        with (out / "occurrence_bins.csv").open("w") as fh:
            fh.write("bin_low,bin_high,mean_auc,n_species\n")
            for r in rows:
                fh.write(f"{r['bin'][0]},{r['bin'][1]},{r['mean_auc']!r},{r['n_species']}\n")
    print(f"wrote {out / 'report.csv'} mean_auc={report.mean_auc!r} "
          f"n_species={report.n_species}")
    return EXIT_OK


def cmd_baselines(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, split = _load_inputs(args)
    model = _load_model(args, dataset)
    subsets = [SubsetMask.parse(model.schema, s) for s in args.subsets.split(";") if s]
    methods = tuple(args.methods.split(","))
    train_config = _train_config(args, derive_seed(args.seed, "baselines"))
    comparison = compare_baselines(dataset, split, subsets, model, model.config,
                                   train_config, seed=derive_seed(args.seed, "marginal"),
                                   methods=methods, split_name=args.split_name)
    comparison.save_csv(out / "comparison.csv")
    _write_run_config(out / "run_config.json", "baselines", args)
    if args.figures:
        figures.render_baseline_comparison(comparison, out / "comparison.png")
    print(f"wrote {out / 'comparison.csv'} ({len(comparison.rows)} rows)")
    return EXIT_OK


def cmd_shapley(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, split = _load_inputs(args)
    model = _load_model(args, dataset)
    groups = model.schema.groups() if args.groups else None
    rng = np.random.default_rng(derive_seed(args.seed, "shapley"))
    _write_run_config(out / "run_config.json", "shapley", args)

    if args.map:
        if not args.species:
            raise CliError("usage", "--map requires --species")
        idx = split.indices(dataset, args.split_name)
        samples = [dataset.samples[i] for i in idx]
        smap = shapley_map(model, samples, groups or model.schema.groups(), args.species)
        smap.save_csv(out / "map.csv")
        if args.figures:
            figures.render_map(smap, out / "map.png")
        print(f"wrote {out / 'map.csv'} ({len(samples)} locations, "
              f"{len(smap.groups)} groups)")
        return EXIT_OK

    if args.target == "performance":
        vf = performance_value_function(model, dataset, split, groups,
                                        split_name=args.split_name,
                                        species=args.species or None)
    else:
        if not args.species or args.sample_id is None:
            raise CliError("usage", "prediction target requires --species and --sample-id")
        sample = next((s for s in dataset.samples if s.id == args.sample_id), None)
        if sample is None:
            raise CliError("runtime", f"unknown sample id {args.sample_id!r}")
        vf = prediction_value_function(model, sample, args.species, groups)

    if args.estimator == "exact":
        estimate = exact_shapley(vf)
    elif args.estimator == "stratified":
        estimate = stratified_mc_shapley(vf, args.n_squares, rng)
    else:
        estimate = uniform_mc_shapley(vf, args.n_samples, rng)

    estimate.save_json(out / "shapley.json")
    if args.figures:
        figures.render_shapley_values(estimate, out / "shapley_values.png")
        if estimate.trace is not None:
            figures.render_convergence(estimate, out / "convergence.png")
    print(f"wrote {out / 'shapley.json'} evaluations={estimate.n_value_evaluations} "
          f"sum={float(np.sum(estimate.values))!r}")
    return EXIT_OK


def cmd_export(args) -> int:
    dataset, split = _load_inputs(args)
    model = _load_model(args, dataset)
    mask = SubsetMask.parse(model.schema, args.mask)
    indices = (split.indices(dataset, args.split_name) if split
               else list(range(len(dataset))))
    species = args.species.split(",") if args.species else model.species
    unknown = [s for s in species if s not in model.species]
    if unknown:
        raise CliError("runtime", f"unknown species: {unknown}")
    scores = model.predict_matrix(dataset, indices, mask)
    cols = {name: model.species.index(name) for name in species}
    out = Path(args.out)
    with out.open("w") as fh:
        fh.write("lon,lat,species,score\n")
        for row, i in enumerate(indices):
            s = dataset.samples[i]
            for name, c in cols.items():
                fh.write(f"{s.lon!r},{s.lat!r},{name},{float(scores[row, c])!r}\n")
    _write_run_config(out.with_suffix(".run.json"), "export", args)
    print(f"wrote {out} ({len(indices)} locations x {len(species)} species)")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_session

    dataset, split = _load_inputs(args)
    model = _load_model(args, dataset)
    app = build_session(model, dataset, split, max_evaluations=args.max_evaluations)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="subsetsdm",
                     description="Masked-input species distribution modeling "
                                 "with Shapley attribution")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--n-samples", type=int, default=2000)
    p.add_argument("--n-predictors", type=int, default=8)
    p.add_argument("--n-species", type=int, default=20)
    p.add_argument("--correlation", type=float, default=0.6)
    p.add_argument("--missing-rate", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="assign spatial blocks to train/val/test")
    _add_common(p, split_required=False)
    p.add_argument("--out", required=True)
    p.add_argument("--block-size", type=float, default=1.0)
    p.add_argument("--ratios", default="0.7,0.15,0.15")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the masked model")
    _add_common(p)
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    _add_output_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a predictor subset")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask", default="all",
                   help="comma-separated predictor/group names, or all/none")
    p.add_argument("--powerset", action="store_true",
                   help="evaluate every non-empty union of schema groups")
    p.add_argument("--bins", default="",
                   help="occurrence bin edges, e.g. 20,40,100")
    p.add_argument("--split-name", default="test", choices=("train", "val", "test"))
    _add_output_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baselines", help="imputation baselines and per-subset oracles")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="masked-model checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--subsets", required=True,
                   help="semicolon-separated mask specs, e.g. 'x0;x0,x1;climate'")
    p.add_argument("--methods", default="mean,median,marginal,conditional")
    p.add_argument("--split-name", default="test", choices=("train", "val", "test"))
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    _add_output_flags(p)
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("shapley", help="Shapley values for performance or predictions")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", default="performance", choices=("performance", "prediction"))
    p.add_argument("--estimator", default="exact", choices=("exact", "stratified", "uniform"))
    p.add_argument("--groups", action="store_true", help="schema groups as players")
    p.add_argument("--n-squares", type=int, default=20, help="stratified: Latin squares")
    p.add_argument("--n-samples", type=int, default=100, help="uniform: terms per player")
    p.add_argument("--species", default="",
                   help="required for prediction/map targets; restricts the "
                        "performance metric to one species' AUC")
    p.add_argument("--sample-id", default=None)
    p.add_argument("--map", action="store_true",
                   help="prediction-level group map over a split")
    p.add_argument("--split-name", default="test", choices=("train", "val", "test"))
    p.add_argument("--seed", type=int, default=0)
    _add_output_flags(p)
    p.set_defaults(func=cmd_shapley)

    p = sub.add_parser("export", help="prediction grid CSV per species/subset")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask", default="all")
    p.add_argument("--species", default="", help="comma-separated; default all")
    p.add_argument("--split-name", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("serve", help="read-only HTTP service over a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--max-evaluations", type=int, default=50_000)
    p.set_defaults(func=cmd_serve)

    return parser


def _add_output_flags(p: _Parser) -> None:
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True,
                   help="render matplotlib figures next to the CSV output")
    p.add_argument("--threads", type=int, default=1,
                   help="reserved; computations are single-threaded and deterministic")


_ERROR_CODES = [
    (CliError, None),
    (TrainingDiverged, "diverged"),
    (TooManyPlayers, "too-many-players"),
    (UndefinedAUC, "undefined-auc"),
    (CheckpointError, "checkpoint"),
    (SchemaError, "schema"),
    (ParseError, "parse"),
    (FileNotFoundError, "io"),
    (ValueError, "runtime"),
]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single-line machine-parseable errors
        for etype, code in _ERROR_CODES:
            if isinstance(exc, etype):
                code = exc.code if isinstance(exc, CliError) else code
                if code == "usage":
                    print(f"ERR:usage:{exc}", file=sys.stderr)
                    return EXIT_USAGE
                print(f"ERR:{code}:{exc}", file=sys.stderr)
                return EXIT_RUNTIME
        print(f"ERR:internal:{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
