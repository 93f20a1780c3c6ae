"""
connlab command line.

Usage:
    python run_connlab.py gen-data --nodes 25 --subjects 500 --seed 7 --out data/ref
    python run_connlab.py train  --data data/ref --layers 1 --neurons 20 --out runs/train
    python run_connlab.py eval   --data data/ref --model-file runs/train/model.json --out runs/eval
    python run_connlab.py cv     --data data/ref --model dnn --layers 1,2,3 --neurons 20,50 --out runs/cv
    python run_connlab.py rank   --model-file runs/train/model.json --data data/ref --out runs/rank
    python run_connlab.py mcdrop --model-file runs/train/model.json --data data/test --out runs/mc
    python run_connlab.py repeat --data data/ref --layers 3 --neurons 20 --out runs/repeat

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from . import __version__
from .core import baselines
from .core import network as network_io
from .core.attribution import (
    ALL,
    BackProjectionPolicy,
    back_project,
    export_pattern,
    pair_loss_curve,
    rank_features,
    truncation_curve,
)
from .core.baselines import LinearModel, SVMConfig, save_linear_model, train_linear_svm
from .core.bayesian import DEFAULT_T, DropoutPolicy, build_subset_suite, dropout_rate_sweep, uncertainty_sweep
from .core.connectivity import Dataset, SyntheticConfig, generate_synthetic, load_dataset, save_dataset
from .core.errors import ConnLabError, InvalidInputError, NetworkFormatError, UnsupportedError
from .core.network import Network, NetworkSpec, TrainConfig, init_network, save_network, train
from .core.rng import derive_seed
from .experiments.harness import (
    CVConfig,
    StructureGrid,
    linear_svm_factory,
    permuted_cv,
    repeatability_study,
    structure_sweep,
    summary_frame,
)
from .experiments.reporting import banner, write_cv_outputs, write_frame, write_json, write_run_manifest
from .visualization.plot_data import PlotDataWriter

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
SEED_ENV = "CONNLAB_SEED"
DEFAULT_RATES = "rate:0,rate:0.2,rate:0.5,rate:0.8,R2"
DEFAULT_K_PAIRS = "1,2,5,10,all"
# Execution details that never change results; kept out of run manifests.
RUNTIME_KEYS = ("config", "log_level", "jobs", "no_progress", "func", "command")

Model = Union[Network, LinearModel]


# --- argument types -------------------------------------------------------

def _int_list(text: Union[str, Sequence[int]]) -> List[int]:
    if not isinstance(text, str):
        return [int(v) for v in text]
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _k_list(text: Union[str, Sequence]) -> List[Union[int, str]]:
    items = text.split(",") if isinstance(text, str) else list(text)
    out: List[Union[int, str]] = []
    for item in items:
        item = str(item).strip()
        if item == ALL:
            out.append(ALL)
        elif item.isdigit() and int(item) > 0:
            out.append(int(item))
        else:
            raise argparse.ArgumentTypeError(f"k_pairs entries must be positive integers or 'all', got {item!r}")
    return out


def _policy_list(text: Union[str, Sequence[str]]) -> List[DropoutPolicy]:
    items = text.split(",") if isinstance(text, str) else [str(t) for t in text]
    try:
        return [DropoutPolicy.parse(t) for t in items if t.strip()]
    except InvalidInputError as e:
        raise argparse.ArgumentTypeError(str(e))


def _dropout_policy(text: str) -> DropoutPolicy:
    try:
        return DropoutPolicy.parse(text)
    except InvalidInputError as e:
        raise argparse.ArgumentTypeError(str(e))


def _projection_policy(text: str) -> BackProjectionPolicy:
    try:
        return BackProjectionPolicy.parse(text)
    except InvalidInputError as e:
        raise argparse.ArgumentTypeError(str(e))


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


# --- parser ---------------------------------------------------------------

def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults (flags win)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--seed", type=int, default=None, help=f"Master seed (default: ${SEED_ENV} or 0)")
    common.add_argument("--jobs", type=_positive_int, default=1, help="Worker threads for CV cells")
    common.add_argument("--no-progress", action="store_true", help="Disable progress bars")
    common.add_argument("--gnuplot", action="store_true", help="Also write gnuplot .dat files under <out>/plots")
    common.add_argument("--out", default="results", help="Output directory")
    return common


def _training_options() -> argparse.ArgumentParser:
    opts = argparse.ArgumentParser(add_help=False)
    defaults = TrainConfig()
    opts.add_argument("--lr", type=float, default=defaults.learning_rate, help="Learning rate")
    opts.add_argument("--iterations", type=_positive_int, default=defaults.iterations)
    opts.add_argument("--l1", type=float, default=defaults.l1_weight, help="L1 penalty weight")
    opts.add_argument("--l2", type=float, default=defaults.l2_weight, help="L2 penalty weight")
    opts.add_argument("--dropout", type=float, default=defaults.dropout_rate, help="Dropout rate of the last hidden layer")
    opts.add_argument("--batch-size", type=_positive_int, default=None, help="Mini-batch size (default: full batch)")
    opts.add_argument("--target-loss", type=float, default=defaults.target_loss)
    return opts


def _svm_options() -> argparse.ArgumentParser:
    opts = argparse.ArgumentParser(add_help=False)
    defaults = SVMConfig()
    opts.add_argument("--lam", type=float, default=defaults.lam, help="Linear SVM L2 strength")
    opts.add_argument("--epochs", type=_positive_int, default=defaults.epochs, help="Linear SVM epochs")
    return opts


def _cv_options() -> argparse.ArgumentParser:
    opts = argparse.ArgumentParser(add_help=False)
    opts.add_argument("--permutations", type=_positive_int, default=50)
    opts.add_argument("--folds", type=int, default=2)
    opts.add_argument("--stratified", action="store_true", help="Class-balanced folds")
    return opts


def build_parser() -> Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="connlab",
        description="Classify connectivity matrices with a dropout DNN, rank its features and estimate uncertainty",
    )
    parser.add_argument("--version", action="version", version=f"connlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common, training, svm, cv = _common_options(), _training_options(), _svm_options(), _cv_options()
    subs: Dict[str, argparse.ArgumentParser] = {}

    p = sub.add_parser("gen-data", parents=[common], help="Generate a synthetic cohort")
    defaults = SyntheticConfig()
    p.add_argument("--nodes", type=_positive_int, default=defaults.n_nodes)
    p.add_argument("--subjects", type=_positive_int, default=defaults.n_subjects)
    p.add_argument("--timepoints", type=_positive_int, default=defaults.n_timepoints)
    p.add_argument("--effect", type=float, default=defaults.class_effect_size, help="Class effect size")
    p.add_argument("--blocks", type=_positive_int, default=defaults.n_effect_blocks, help="Effect blocks")
    p.add_argument("--noise", type=float, default=defaults.noise_sd, help="Time-series noise sd")
    p.add_argument("--variability", type=float, default=defaults.subject_variability, help="Subject loading jitter")
    p.add_argument("--class-names", default=",".join(defaults.class_names), help="Names of class 0 and 1")
    p.set_defaults(func=cmd_gen_data)
    subs["gen-data"] = p

    p = sub.add_parser("train", parents=[common, training, svm], help="Train one model on a dataset")
    p.add_argument("--data", required=True, help="Dataset directory or manifest.csv")
    p.add_argument("--model", choices=["dnn", "linear-svm"], default="dnn")
    p.add_argument("--layers", type=_positive_int, default=1, help="Hidden layers (half-size rule)")
    p.add_argument("--neurons", type=_positive_int, default=20, help="First hidden layer width")
    p.add_argument("--hidden", type=_int_list, default=None, help="Explicit hidden sizes, e.g. 50,25 (overrides --layers/--neurons)")
    p.set_defaults(func=cmd_train)
    subs["train"] = p

    p = sub.add_parser("eval", parents=[common], help="Accuracy and loss of a saved model")
    p.add_argument("--data", required=True)
    p.add_argument("--model-file", required=True)
    p.set_defaults(func=cmd_eval)
    subs["eval"] = p

    p = sub.add_parser("cv", parents=[common, training, svm, cv], help="Permuted cross validation / structure sweep")
    p.add_argument("--data", required=True, nargs="+", help="One dataset per scale")
    p.add_argument("--model", choices=["dnn", "linear-svm"], default="dnn")
    p.add_argument("--layers", type=_int_list, default=[1], help="Hidden layer counts, e.g. 1,2,3")
    p.add_argument("--neurons", type=_int_list, default=[20], help="First-layer widths, e.g. 20,50,100,200")
    p.set_defaults(func=cmd_cv)
    subs["cv"] = p

    p = sub.add_parser("rank", parents=[common], help="Rank last-hidden features and back-project them")
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", default=None, help="Dataset for pair-loss and truncation curves")
    p.add_argument("--policy", type=_projection_policy, default=BackProjectionPolicy(), help="all | threshold:T | top_k:K")
    p.add_argument("--top", type=_positive_int, default=1, help="Patterns exported per class")
    p.add_argument("--max-rank", type=_positive_int, default=5, help="Pair-loss ranks 1..R")
    p.add_argument("--k-pairs", type=_k_list, default=_k_list(DEFAULT_K_PAIRS), help="Truncation levels")
    p.set_defaults(func=cmd_rank)
    subs["rank"] = p

    p = sub.add_parser("mcdrop", parents=[common], help="MC dropout sweeps")
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", required=True, help="Test dataset (disjoint from training)")
    p.add_argument("--rates", type=_policy_list, default=_policy_list(DEFAULT_RATES), help="Policies of the dropout-rate sweep")
    p.add_argument("--policy", type=_dropout_policy, default=DropoutPolicy.rate(0.5), help="Policy of the uncertainty sweep")
    p.add_argument("--T", dest="T", type=_positive_int, default=DEFAULT_T, help="Stochastic passes per input")
    p.add_argument("--target-layer", type=_positive_int, default=None, help="Hidden layer receiving dropout (default: last)")
    p.add_argument("--subset-size", type=_positive_int, default=None, help="Subjects per subset (default: smaller class count)")
    p.add_argument("--mix-stage", choices=["normalized", "raw"], default="normalized")
    p.set_defaults(func=cmd_mcdrop)
    subs["mcdrop"] = p

    p = sub.add_parser("repeat", parents=[common, training, cv], help="Repeatability of the top feature across folds")
    p.add_argument("--data", required=True)
    p.add_argument("--layers", type=_positive_int, default=1)
    p.add_argument("--neurons", type=_positive_int, default=20)
    p.add_argument("--policy", type=_projection_policy, default=BackProjectionPolicy())
    p.add_argument("--selection", choices=["top", "class0", "class1"], default="top")
    p.add_argument("--no-align", action="store_true", help="Correlate patterns without sign alignment")
    p.set_defaults(func=cmd_repeat)
    subs["repeat"] = p

    return parser, subs


def _apply_config(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser, argv: Optional[Sequence[str]], path: str) -> argparse.Namespace:
    try:
        with open(path, encoding="utf-8") as f:
            values = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        sub.error(f"cannot read config {path}: {e}")
    if not isinstance(values, dict):
        sub.error(f"config {path} must hold a JSON object")
    known = {a.dest for a in sub._actions} - {"help", "config", "func"}
    values = {k.replace("-", "_"): v for k, v in values.items()}
    unknown = sorted(set(values) - known)
    if unknown:
        sub.error(f"unknown config keys in {path}: {', '.join(unknown)}")
    for action in sub._actions:
        if action.dest in values:
            try:
                values[action.dest] = _config_value(action, values[action.dest])
            except (argparse.ArgumentTypeError, ValueError, TypeError) as e:
                sub.error(f"config {path}: {action.dest}: {e}")
    sub.set_defaults(**values)
    return parser.parse_args(argv)


LIST_TYPES = (_int_list, _k_list, _policy_list)


def _config_value(action: argparse.Action, value):
    """Convert a JSON config value the way argparse converts the matching flag."""
    if value is None:
        return None
    if action.nargs == 0:
        if not isinstance(value, bool):
            raise TypeError(f"expected true or false, got {value!r}")
        return value
    if action.nargs in ("+", "*"):
        items = [value] if isinstance(value, str) else value
        if not isinstance(items, list) or not items:
            raise TypeError(f"expected a string or a non-empty list, got {value!r}")
        return [action.type(str(v)) if action.type else str(v) for v in items]
    if action.type in LIST_TYPES:
        return action.type(value if isinstance(value, (str, list)) else [value])
    if isinstance(value, (list, dict, bool)):
        raise TypeError(f"expected a single value, got {value!r}")
    value = action.type(str(value)) if action.type else str(value)
    if action.choices is not None and value not in action.choices:
        raise ValueError(f"{value!r} is not one of {list(action.choices)}")
    return value


def _resolve_seed(args: argparse.Namespace, sub: argparse.ArgumentParser) -> int:
    if args.seed is not None:
        return args.seed
    env = os.getenv(SEED_ENV, "").strip()
    if not env:
        return 0
    try:
        return int(env)
    except ValueError:
        sub.error(f"{SEED_ENV} must be an integer, got {env!r}")


# --- shared helpers -------------------------------------------------------

def _load_data(path: str) -> Dataset:
    manifest = os.path.join(path, "manifest.csv") if os.path.isdir(path) else path
    data = load_dataset(manifest)
    logger.info("loaded %d subjects (%s) from %s", len(data), data.class_counts(), manifest)
    return data


def load_model(path: str) -> Model:
    """Load a network or linear model file, dispatching on its format tag."""
    with open(path, encoding="utf-8") as f:
        text = f.read()
    try:
        tag = json.loads(text).get("format")
    except (json.JSONDecodeError, AttributeError) as e:
        raise NetworkFormatError(f"{path}: not a model document") from e
    if tag == network_io.FORMAT_NAME:
        return network_io.from_json(text)
    if tag == baselines.FORMAT_NAME:
        return baselines.from_json(text)
    raise NetworkFormatError(f"{path}: unknown model format {tag!r}")


def _require_network(model: Model, what: str) -> Network:
    if not isinstance(model, Network):
        raise UnsupportedError(f"{what} needs a network model, got {model!r}")
    return model


def _train_config(args: argparse.Namespace, seed: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        iterations=args.iterations,
        l1_weight=args.l1,
        l2_weight=args.l2,
        dropout_rate=args.dropout,
        batch_size=args.batch_size,
        seed=seed,
        target_loss=args.target_loss,
    )


def _cv_config(args: argparse.Namespace, seed: int) -> CVConfig:
    return CVConfig(
        n_permutations=args.permutations,
        n_folds=args.folds,
        master_seed=seed,
        jobs=args.jobs,
        stratified=args.stratified,
        progress=not args.no_progress,
    )


def _resolved(args: argparse.Namespace) -> Dict:
    """Flag values as JSON-friendly config, without execution-only settings."""
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in RUNTIME_KEYS:
            continue
        if isinstance(value, (DropoutPolicy, BackProjectionPolicy)):
            value = value.label if isinstance(value, DropoutPolicy) else str(value)
        elif isinstance(value, list):
            value = [v.label if isinstance(v, DropoutPolicy) else v for v in value]
        out[key] = value
    return out


def _plots(args: argparse.Namespace) -> Optional[PlotDataWriter]:
    return PlotDataWriter(os.path.join(args.out, "plots")) if args.gnuplot else None


# --- commands -------------------------------------------------------------

def cmd_gen_data(args: argparse.Namespace, seed: int) -> None:
    names = tuple(n.strip() for n in args.class_names.split(","))
    if len(names) != 2:
        raise InvalidInputError(f"--class-names needs two names, got {args.class_names!r}")
    cfg = SyntheticConfig(
        n_subjects=args.subjects,
        n_nodes=args.nodes,
        n_timepoints=args.timepoints,
        class_effect_size=args.effect,
        n_effect_blocks=args.blocks,
        noise_sd=args.noise,
        subject_variability=args.variability,
        class_names=names,
    )
    data = generate_synthetic(cfg, seed)
    manifest = save_dataset(data, args.out)
    write_run_manifest(args.out, "gen-data", {"synthetic": cfg.to_dict()}, seed, outputs=[manifest])
    print(banner("Synthetic dataset", {
        "Dataset": {"directory": args.out, "subjects": len(data), "nodes": data.n_nodes,
                    "input_dim": data.input_dim, "classes": data.class_counts()},
    }))


def cmd_train(args: argparse.Namespace, seed: int) -> None:
    data = _load_data(args.data)
    outputs = []
    if args.model == "dnn":
        if args.hidden:
            rates = (0.0,) * (len(args.hidden) - 1) + (args.dropout,)
            spec = NetworkSpec(data.input_dim, tuple(args.hidden), 2, rates)
        else:
            spec = NetworkSpec.from_structure(data.input_dim, args.layers, args.neurons, 2, args.dropout)
        cfg = _train_config(args, derive_seed(seed, 1))
        result = train(init_network(spec, derive_seed(seed, 0)), data, cfg)
        model_path = os.path.join(args.out, "model.json")
        os.makedirs(args.out, exist_ok=True)
        save_network(result.network, model_path)
        trace = pd.DataFrame({
            "iteration": np.arange(1, cfg.iterations + 1),
            "total_loss": result.loss_trace,
            "data_loss": result.history["data_loss"],
        })
        outputs += [model_path, write_frame(trace, os.path.join(args.out, "loss_trace.csv"))]
        plots = _plots(args)
        if plots:
            plots.loss_trace(result.loss_trace, {"data_loss": result.history["data_loss"]})
        model: Model = result.network
        config = {"model": "dnn", "spec": spec.to_dict(), "train": cfg.to_dict()}
        status = {"final_loss": float(result.loss_trace[-1]), "converged": result.converged}
    else:
        svm_cfg = SVMConfig(lam=args.lam, epochs=args.epochs, seed=seed)
        model = train_linear_svm(data, svm_cfg)
        model_path = os.path.join(args.out, "model.json")
        os.makedirs(args.out, exist_ok=True)
        save_linear_model(model, model_path)
        trace = pd.DataFrame({"epoch": np.arange(1, svm_cfg.epochs + 1), "objective": model.objective_trace})
        outputs += [model_path, write_frame(trace, os.path.join(args.out, "objective_trace.csv"))]
        plots = _plots(args)
        if plots:
            plots.loss_trace(model.objective_trace, name="objective_trace")
        config = {"model": "linear-svm", "svm": svm_cfg.to_dict()}
        status = {"final_objective": model.objective_trace[-1]}

    train_acc = float(np.mean(model.predict_labels(data.features) == data.labels))
    write_run_manifest(args.out, "train", config, seed, inputs=[args.data], outputs=outputs)
    print(banner("Training", {"Model": {"file": model_path, "model": repr(model)}, "Result": {**status, "train_accuracy": train_acc}}))


def cmd_eval(args: argparse.Namespace, seed: int) -> None:
    model = load_model(args.model_file)
    data = _load_data(args.data)
    X, y = data.features, data.labels
    predicted = model.predict_labels(X)
    doc = {
        "model_format": network_io.FORMAT_NAME if isinstance(model, Network) else baselines.FORMAT_NAME,
        "model": repr(model),
        "n_subjects": len(data),
        "accuracy": float(np.mean(predicted == y)),
        "loss": model.test_loss(X, y),
        "per_class_accuracy": {
            name: float(np.mean(predicted[y == c] == c)) for c, name in enumerate(data.class_names)
        },
    }
    path = write_json(doc, os.path.join(args.out, "eval.json"))
    write_run_manifest(args.out, "eval", _resolved(args), seed, inputs=[args.model_file, args.data], outputs=[path])
    print(banner("Evaluation", {"Result": doc}))


def cmd_cv(args: argparse.Namespace, seed: int) -> None:
    datasets = [_load_data(p) for p in args.data]
    cfg = _cv_config(args, seed)
    if args.model == "dnn":
        grid = StructureGrid(tuple(args.layers), tuple(args.neurons))
        reports = structure_sweep(datasets, grid, _train_config(args, 0), cfg)
    else:
        factory = linear_svm_factory(SVMConfig(lam=args.lam, epochs=args.epochs))
        reports = [
            permuted_cv(d, factory, cfg, cell={"model": "linear-svm", "layers": 0, "neurons": 0, "scale": d.n_nodes})
            for d in datasets
        ]
    paths = write_cv_outputs(reports, args.out)
    summary = summary_frame(reports)
    plots = _plots(args)
    if plots:
        plots.accuracy_grid(summary)
    write_run_manifest(args.out, "cv", _resolved(args), seed, inputs=args.data, outputs=list(paths.values()))
    failed = {f"{r.cell}": r.failed_permutations for r in reports if r.failed_permutations}
    sections = {"Accuracy (mean/std over permutations)": summary}
    if failed:
        sections["Failed permutations"] = failed
    print(banner("Cross validation", sections))


def cmd_rank(args: argparse.Namespace, seed: int) -> None:
    net = _require_network(load_model(args.model_file), "feature ranking")
    ranking = rank_features(net)
    outputs = [write_frame(ranking.to_frame(), os.path.join(args.out, "ranking.csv"))]
    plots = _plots(args)
    class_names = ("class0", "class1")
    data = _load_data(args.data) if args.data else None
    if data is not None:
        class_names = data.class_names

    for cls in (0, 1):
        for feature in ranking.by_class(cls)[: args.top]:
            pattern = back_project(net, net.n_hidden, feature.neuron_index, args.policy)
            stem = os.path.join(args.out, "patterns", f"{class_names[cls]}_rank{feature.rank_within_class}")
            meta = {"class": class_names[cls], "rank": feature.rank_within_class, "model": net.fingerprint()}
            outputs.extend(export_pattern(pattern, stem, meta))
            if plots:
                plots.pattern_matrix(pattern, os.path.basename(stem))

    sections = {"Top features": ranking.to_frame().groupby("class").head(args.top)}
    if data is not None:
        X, y = data.features, data.labels
        pairs = pair_loss_curve(net, X, y, range(1, args.max_rank + 1))
        curve = truncation_curve(net, X, y, args.k_pairs)
        outputs.append(write_frame(pairs, os.path.join(args.out, "pair_loss.csv")))
        outputs.append(write_frame(curve, os.path.join(args.out, "truncation.csv")))
        sections["Pair loss by rank"] = pairs
        sections["Truncated prediction"] = curve

    inputs = [args.model_file] + ([args.data] if args.data else [])
    write_run_manifest(args.out, "rank", _resolved(args), seed, inputs=inputs, outputs=outputs)
    print(banner("Feature ranking", sections))


def cmd_mcdrop(args: argparse.Namespace, seed: int) -> None:
    net = _require_network(load_model(args.model_file), "MC dropout")
    data = _load_data(args.data)
    target = {"target_layer": args.target_layer}
    policies = [dataclasses.replace(p, **target) for p in args.rates]
    policy = dataclasses.replace(args.policy, **target)
    progress = not args.no_progress

    sweep = dropout_rate_sweep(net, data.features, data.labels, policies, args.T, derive_seed(seed, 0), progress)
    n_per_subset = args.subset_size or min(data.class_counts().values())
    suite = build_subset_suite(data, n_per_subset, derive_seed(seed, 1), args.mix_stage)
    unc = uncertainty_sweep(net, suite, args.T, policy, derive_seed(seed, 2), progress)

    outputs = [
        write_frame(sweep.table, os.path.join(args.out, "dropout_sweep.csv")),
        write_frame(unc.table, os.path.join(args.out, "uncertainty_sweep.csv")),
        write_json(
            {"T": args.T, "policy": policy.label, "dropout_sweep": sweep.records, "uncertainty_sweep": unc.records},
            os.path.join(args.out, "mc_records.json"),
        ),
    ]
    plots = _plots(args)
    if plots:
        plots.dropout_sweep(sweep.table)
        plots.uncertainty_sweep(unc.table)
    write_run_manifest(args.out, "mcdrop", _resolved(args), seed, inputs=[args.model_file, args.data], outputs=outputs)
    print(banner("MC dropout", {
        "Dropout-rate sweep": sweep.table,
        f"Uncertainty sweep ({policy.label}, T={args.T}, {n_per_subset} per subset)": unc.table,
    }))


def cmd_repeat(args: argparse.Namespace, seed: int) -> None:
    data = _load_data(args.data)
    result = repeatability_study(
        data,
        args.layers,
        args.neurons,
        _train_config(args, 0),
        _cv_config(args, seed),
        policy=args.policy,
        selection=args.selection,
        align=not args.no_align,
    )
    pairs = pd.DataFrame([dataclasses.asdict(p) for p in result.correlations], columns=["i", "j", "r"])
    outputs = list(write_cv_outputs([result.report], args.out).values())
    outputs.append(write_frame(pairs, os.path.join(args.out, "correlations.csv")))
    summary = {**result.report.cell, "selection": args.selection, "aligned": not args.no_align, **result.summary.to_dict()}
    outputs.append(write_json(summary, os.path.join(args.out, "correlation_summary.json")))
    write_run_manifest(args.out, "repeat", _resolved(args), seed, inputs=[args.data], outputs=outputs)
    print(banner("Feature repeatability", {"Correlation summary": summary}))


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    sub = subs[args.command]
    if args.config:
        args = _apply_config(parser, sub, argv, args.config)
    logging.basicConfig(level=args.log_level, format=LOG_FORMAT, stream=sys.stderr, force=True)
    seed = _resolve_seed(args, sub)
    try:
        args.func(args, seed)
    except (ConnLabError, OSError, ValueError) as e:
        message = " ".join(str(e).split())
        print(f"connlab: error: {type(e).__name__}: {message}", file=sys.stderr)
        return 1
    return 0
