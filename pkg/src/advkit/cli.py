"""Command-line interface.

Subcommands: train, attack, sweep, report, mitigate, visualize.
Exit codes: 0 success, 1 usage/configuration error, 2 data or file-format
error, 3 training or attack runtime error.

The dataset directory comes from --data-dir or the ADVKIT_DATA_DIR
environment variable and must hold the canonical IDX files (optionally
gzipped). Every artifact-producing run writes a run.json capturing the
argument vector, seeds and input digests; attack timings go to a separate
timings.json because wall-clock numbers are not reproducible.
"""

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import campaign as cp
from . import figures
from . import mitigation as mg
from . import reports as rp
from .attacks import (FastGradientSign, IterativeFastGradientSign,
                      SaliencyMapAttack, saliency_map, sign_noise_map)
from .data import load_dataset
from .errors import AdvkitError, ConfigurationError, FormatError, InputError, TrainingError
from .model import NeuralNetClassifier
from .pgm import write_pgm


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _say(args, message):
    if not args.quiet:
        print(message, file=sys.stderr)


def _data_dir(args) -> Path:
    path = args.data_dir or os.environ.get("ADVKIT_DATA_DIR")
    if not path:
        raise ConfigurationError(
            "no dataset directory: pass --data-dir or set ADVKIT_DATA_DIR")
    return Path(path)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, doc) -> None:
    with open(path, "wb") as fh:
        fh.write((json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n")
                 .encode("utf-8"))


def _write_run_manifest(out_dir, args, extra=None) -> None:
    doc = {"argv": args._argv, "seed": args.seed, "cwd": os.getcwd()}
    if extra:
        doc.update(extra)
    _write_json(out_dir / "run.json", doc)


def _parse_slice(text):
    """CLASS[:LIMIT] -> (class, limit)."""
    if text is None:
        return None, None
    cls, _, limit = text.partition(":")
    try:
        return int(cls), (int(limit) if limit else None)
    except ValueError:
        raise ConfigurationError(f"bad --slice {text!r}, expected CLASS[:LIMIT]")


def _select_inputs(dataset, args):
    cls, limit = _parse_slice(getattr(args, "slice", None))
    if cls is not None:
        return dataset.class_slice(cls, limit)
    if getattr(args, "limit", None):
        return dataset.subset(np.arange(min(args.limit, len(dataset))))
    return dataset


def _build_attack(args):
    mode_target = None
    if args.mode == "targeted" and args.target is not None:
        mode_target = args.target
    if args.kind == "fgsm":
        return FastGradientSign(theta=args.theta, target=mode_target,
                                objective=args.objective)
    if args.kind == "ifgsm":
        return IterativeFastGradientSign(theta=args.theta, max_iterations=args.iters,
                                         target=mode_target, objective=args.objective)
    if args.kind == "jsma":
        rule = {"single": "single_pixel", "pairwise": "pairwise"}[args.rule]
        return SaliencyMapAttack(target=mode_target, max_change_fraction=args.cap,
                                 crafting_rule=rule, basis=args.basis)
    raise ConfigurationError(f"unknown attack kind {args.kind!r}")


def _campaign_targets(args, num_classes):
    """Targeted mode without an explicit target attacks every class."""
    if args.mode == "targeted" and args.target is None:
        return list(range(num_classes))
    return None


def _emit_campaign(out_dir, data: cp.CampaignData, args) -> None:
    with open(out_dir / "report.json", "wb") as fh:
        fh.write(rp.report_json_bytes(data.report))
    with open(out_dir / "matrix.csv", "wb") as fh:
        fh.write(rp.matrix_csv_bytes(data.matrix()))
    rp.write_outcomes(out_dir / "outcomes.bin", data.records,
                      data.num_classes, data.image_shape)
    _write_json(out_dir / "timings.json", {
        "attacks_timed": len(data.attack_seconds),
        "mean_attack_seconds": data.mean_attack_seconds(),
        "total_attack_seconds": float(np.sum(data.attack_seconds))
        if data.attack_seconds else 0.0,
    })


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    if args.epochs < 1:
        raise ConfigurationError(f"--epochs must be >= 1, got {args.epochs}")
    data_dir = _data_dir(args)
    out_dir = _out_dir(args)
    train_set = load_dataset(data_dir, "train")
    test_set = load_dataset(data_dir, "test")
    if args.limit:
        train_set = train_set.subset(np.arange(min(args.limit, len(train_set))))
    _say(args, f"training {args.arch} ({args.feature_maps} feature maps, "
               f"{args.epochs} epochs, seed {args.seed}) on {len(train_set)} images")
    model = NeuralNetClassifier(
        architecture=args.arch, feature_map_scale=args.feature_maps,
        epochs=args.epochs, batch_size=args.batch_size,
        learning_rate=args.learning_rate, momentum=args.momentum,
        seed=args.seed).fit(train_set.images, train_set.labels)
    accuracy = model.score(test_set.images, test_set.labels)
    model.meta_.final_test_accuracy = accuracy
    model.save(args.out)
    _write_run_manifest(out_dir, args, {
        "model_out": str(args.out),
        "model_sha256": hashlib.sha256(model.to_bytes()).hexdigest(),
        "dataset_fingerprints": {"train": train_set.fingerprint(),
                                 "test": test_set.fingerprint()},
    })
    print(json.dumps({"model": str(args.out), "test_accuracy": accuracy}))
    return 0


def cmd_attack(args) -> int:
    data_dir = _data_dir(args)
    out_dir = _out_dir(args)
    model = NeuralNetClassifier.load(args.model)
    dataset = _select_inputs(load_dataset(data_dir, "test"), args)
    attack = _build_attack(args)
    targets = _campaign_targets(args, model.n_classes_)
    _say(args, f"attacking {len(dataset)} inputs with {type(attack).__name__} "
               f"(jobs={args.jobs})")
    data = cp.run_campaign(model, dataset, attack, targets=targets, jobs=args.jobs,
                           config_extra={"seed": args.seed},
                           log=(lambda m: _say(args, m)))
    _emit_campaign(out_dir, data, args)
    figures.emit_campaign_figures(out_dir / "figures", data.records, dataset, limit=4)
    _write_run_manifest(out_dir, args, {
        "model_sha256": data.config["model_sha256"],
        "dataset_fingerprints": {"test": dataset.fingerprint()},
    })
    print(json.dumps({"out_dir": str(out_dir),
                      "overall_sr": data.report["overall_sr"],
                      "attacked": data.report["counts"]["attacked"]}))
    return 0


def cmd_sweep(args) -> int:
    data_dir = _data_dir(args)
    out_dir = _out_dir(args)
    values = [v for v in args.values.split(",") if v]
    if len(values) < 2:
        raise ConfigurationError("--values needs at least two comma-separated entries")
    dataset = _select_inputs(load_dataset(data_dir, "test"), args)
    attack = _build_attack(args)
    summary = []

    if args.axis in ("theta", "iters"):
        model = NeuralNetClassifier.load(args.model)
        axis = {"theta": "theta", "iters": "iterations"}[args.axis]
        typed = [float(v) if axis == "theta" else int(v) for v in values]
        campaigns = cp.sweep_attack_axis(model, dataset, attack, axis, typed,
                                         jobs=args.jobs,
                                         log=(lambda m: _say(args, m)))
    else:
        train_set = load_dataset(data_dir, "train")
        if args.limit_train:
            train_set = train_set.subset(np.arange(min(args.limit_train,
                                                       len(train_set))))
        axis = {"epochs": "epochs", "feature-maps": "feature_maps"}[args.axis]
        typed = [int(v) if axis == "epochs" else v for v in values]
        campaigns, _ = cp.sweep_model_axis(
            train_set, load_dataset(data_dir, "test"), dataset, attack, axis, typed,
            cache_dir=args.model_cache or (out_dir / "model-cache"),
            base_params={"architecture": args.arch,
                         "feature_map_scale": args.feature_maps,
                         "epochs": args.epochs, "batch_size": args.batch_size,
                         "learning_rate": args.learning_rate,
                         "momentum": args.momentum, "seed": args.seed},
            jobs=args.jobs, log=(lambda m: _say(args, m)))

    for value, data in zip(values, campaigns):
        sub = out_dir / f"value-{value}"
        sub.mkdir(parents=True, exist_ok=True)
        _emit_campaign(sub, data, args)
        summary.append({"value": value, "overall_sr": data.report["overall_sr"],
                        "avg_entropy": data.report["avg_entropy"],
                        "dir": sub.name})
    _write_json(out_dir / "summary.json", {"axis": args.axis, "runs": summary})
    _write_run_manifest(out_dir, args)
    print(json.dumps({"out_dir": str(out_dir),
                      "srs": [s["overall_sr"] for s in summary]}))
    return 0


def cmd_report(args) -> int:
    src = Path(args.campaign)
    out_dir = _out_dir(args)
    records, m, shape = rp.read_outcomes(src / "outcomes.bin")
    original = (src / "report.json").read_bytes()
    config = json.loads(original)["config"]
    report = rp.build_report(records, m, config)
    regenerated = rp.report_json_bytes(report)
    csv_bytes = rp.matrix_csv_bytes(rp.matrix_from_records(records, m))
    (out_dir / "report.json").write_bytes(regenerated)
    (out_dir / "matrix.csv").write_bytes(csv_bytes)
    match_json = regenerated == original
    match_csv = csv_bytes == (src / "matrix.csv").read_bytes()
    _write_run_manifest(out_dir, args)
    print(json.dumps({"report_matches": match_json, "matrix_matches": match_csv}))
    return 0 if (match_json and match_csv) else 2


def _load_campaign_adversarials(campaign_dir, dataset):
    records, m, shape = rp.read_outcomes(Path(campaign_dir) / "outcomes.bin")
    pairs = [(r.adversarial.reshape(shape), r.source_class)
             for r in records if r.attacked and r.success]
    benign_idx = sorted({r.input_index for r in records if r.attacked})
    return pairs, benign_idx


def cmd_mitigate(args) -> int:
    data_dir = _data_dir(args)
    out_dir = _out_dir(args)
    doc = {"defense": args.defense}

    if args.defense == "monitor":
        monitor = mg.StreamMonitor(tau=args.tau, k=args.k, window=args.window,
                                   iteration_budget=args.iteration_budget)
        verdicts = mg.replay_monitor(monitor, args.replay)
        doc["events"] = [{"client": c, "flagged": v.flagged, "reason": v.reason}
                         for c, v in verdicts]
        doc["flagged_clients"] = sorted({c for c, v in verdicts if v.flagged})
    else:
        test_set = load_dataset(data_dir, "test")
        pairs, benign_idx = _load_campaign_adversarials(args.campaign, test_set)
        if args.benign_limit:
            benign_idx = benign_idx[:args.benign_limit]
            pairs = pairs[:args.benign_limit]
        benign = [test_set.images[i] for i in benign_idx]
        if args.defense == "consensus":
            model = NeuralNetClassifier.load(args.model)
            defense = mg.ConsensusDefense(q=args.q, generator=args.generator,
                                          max_offset=args.max_offset,
                                          sigma=args.sigma, seed=args.seed)
            decide = lambda x: (lambda d: (d.accepted, d.label))(defense.decide(model, x))
        else:  # ensemble
            members = [NeuralNetClassifier.load(p) for p in args.models]
            ensemble = mg.VotingEnsemble(members)
            decide = ensemble.decide
        report = mg.evaluate_defense(decide, benign, pairs)
        doc["report"] = report.to_dict()
        if args.defense == "ensemble":
            doc["member_accuracy"] = [
                m.score(test_set.images, test_set.labels) for m in members]
            doc["ensemble_accuracy"] = float(np.mean(
                ensemble.predict(test_set.images) == test_set.labels))

    _write_json(out_dir / "mitigation.json", doc)
    _write_run_manifest(out_dir, args)
    print(json.dumps({k: v for k, v in doc.items() if k != "events"}))
    return 0


def cmd_visualize(args) -> int:
    data_dir = _data_dir(args)
    out_dir = _out_dir(args)
    model = NeuralNetClassifier.load(args.model)
    test_set = load_dataset(data_dir, "test")
    if not 0 <= args.input < len(test_set):
        raise InputError(f"--input {args.input} outside dataset of {len(test_set)}")
    x = test_set.images[args.input]
    fig_dir = out_dir / "figures"
    stem = f"input{args.input:05d}"
    made = []

    if args.what == "sign-map":
        label = args.target if args.target is not None \
            else model.predict_bundle(x).predicted_class
        grad = model.loss_gradient(x, label, objective=args.objective)
        made.append(figures.emit_sign_map(fig_dir, stem, grad))
    elif args.what == "saliency":
        if args.target is None:
            raise ConfigurationError("--what saliency requires --target")
        sal = saliency_map(model, x, args.target, basis=args.basis)
        made.append(figures.emit_saliency(fig_dir, stem, sal))
    else:  # triptych
        args.mode = "targeted" if args.target is not None else "untargeted"
        attack = _build_attack(args)
        outcome = attack.run(model, x)
        made.extend(figures.emit_triptych(
            fig_dir, f"{stem}-{outcome.source_class}to{outcome.destination_class}",
            outcome.original, outcome.adversarial))
    _write_run_manifest(out_dir, args)
    print(json.dumps({"figures": [str(p) for p in made]}))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="advkit",
                     description="adversarial example toolkit for small image classifiers")
    sub = parser.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--data-dir", default=None,
                       help="directory with the IDX dataset files "
                            "(default: $ADVKIT_DATA_DIR)")
        p.add_argument("--out-dir", default="advkit-out")
        p.add_argument("--quiet", action="store_true")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="concurrent per-input attack tasks")

    def attack_flags(p):
        p.add_argument("--model", required=True)
        p.add_argument("--kind", choices=["fgsm", "ifgsm", "jsma"], default="fgsm")
        p.add_argument("--mode", choices=["untargeted", "targeted"],
                       default="untargeted")
        p.add_argument("--target", type=int, default=None)
        p.add_argument("--theta", type=float, default=0.2)
        p.add_argument("--iters", type=int, default=5)
        p.add_argument("--rule", choices=["single", "pairwise"], default="single")
        p.add_argument("--basis", choices=["prediction", "logits"],
                       default="prediction")
        p.add_argument("--cap", type=float, default=0.15,
                       help="jsma changed-pixel budget fraction")
        p.add_argument("--objective", choices=["cross_entropy", "l2", "margin"],
                       default="cross_entropy")
        p.add_argument("--slice", default=None, metavar="CLASS[:LIMIT]")
        p.add_argument("--limit", type=int, default=None,
                       help="attack only the first N inputs")

    def train_flags(p):
        p.add_argument("--arch", choices=["cnn", "mlp"], default="cnn")
        p.add_argument("--epochs", type=int, default=10)
        p.add_argument("--feature-maps", choices=["half", "normal", "double"],
                       default="normal")
        p.add_argument("--batch-size", type=int, default=64)
        p.add_argument("--learning-rate", type=float, default=0.05)
        p.add_argument("--momentum", type=float, default=0.9)

    p = sub.add_parser("train", help="train a model and save it")
    common(p)
    train_flags(p)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--limit", type=int, default=None,
                   help="train on only the first N images")

    p = sub.add_parser("attack", help="run an attack campaign over a dataset slice")
    common(p)
    attack_flags(p)

    p = sub.add_parser("sweep", help="run one campaign per axis value")
    common(p)
    attack_flags(p)
    train_flags(p)
    p.add_argument("--axis", required=True,
                   choices=["theta", "iters", "epochs", "feature-maps"])
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--model-cache", default=None)
    p.add_argument("--limit-train", type=int, default=None)

    p = sub.add_parser("report", help="regenerate reports from stored outcomes")
    common(p)
    p.add_argument("--campaign", required=True,
                   help="directory holding outcomes.bin and report.json")

    p = sub.add_parser("mitigate", help="evaluate a defense")
    common(p)
    p.add_argument("--defense", required=True,
                   choices=["consensus", "monitor", "ensemble"])
    p.add_argument("--model", default=None)
    p.add_argument("--models", nargs="+", default=None,
                   help="ensemble member model files")
    p.add_argument("--campaign", default=None,
                   help="campaign directory supplying adversarial examples")
    p.add_argument("--benign-limit", type=int, default=None)
    p.add_argument("--q", type=int, default=5)
    p.add_argument("--generator", choices=["pixel_shift", "gaussian_jitter"],
                   default="pixel_shift")
    p.add_argument("--max-offset", type=int, default=1)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--replay", default=None, help="client_id,path replay file")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--iteration-budget", type=int, default=None)

    p = sub.add_parser("visualize", help="export PGM figures for one input")
    common(p)
    attack_flags(p)
    p.add_argument("--what", choices=["sign-map", "saliency", "triptych"],
                   required=True)
    p.add_argument("--input", type=int, required=True)

    return parser


COMMANDS = {"train": cmd_train, "attack": cmd_attack, "sweep": cmd_sweep,
            "report": cmd_report, "mitigate": cmd_mitigate,
            "visualize": cmd_visualize}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args._argv = argv

    # cross-flag preconditions that argparse cannot express
    try:
        if args.cmd == "mitigate":
            if args.defense == "monitor" and not args.replay:
                raise ConfigurationError("--defense monitor requires --replay")
            if args.defense == "monitor" and args.tau is None:
                raise ConfigurationError("--defense monitor requires --tau")
            if args.defense == "consensus" and not (args.model and args.campaign):
                raise ConfigurationError(
                    "--defense consensus requires --model and --campaign")
            if args.defense == "ensemble" and not (args.models and args.campaign):
                raise ConfigurationError(
                    "--defense ensemble requires --models and --campaign")
        return COMMANDS[args.cmd](args)
    except ConfigurationError as exc:
        print(f"advkit: {exc}", file=sys.stderr)
        return 1
    except (FormatError, InputError, FileNotFoundError) as exc:
        print(f"advkit: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"advkit: {exc}", file=sys.stderr)
        return 3
    except AdvkitError as exc:
        print(f"advkit: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
