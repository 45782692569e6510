"""Campaign harness: run attacks over dataset slices, sweep knobs, train and
cache models per sweep value, and assemble reports.

Ordering contract: records are produced in ascending input order (and, for
multi-target campaigns, ascending target order within an input), regardless
of how many worker processes execute the attacks. Reports and binary outputs
are therefore byte-stable for a fixed (model, data, config).
"""

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from sklearn.base import clone

import numpy as np

from .attacks import BaseAttack
from .data import LabeledSet
from .errors import InputError
from .model import NeuralNetClassifier
from . import reports as rp


@dataclass
class CampaignData:
    """Everything one campaign produced: records plus derived report."""

    records: list
    num_classes: int
    image_shape: tuple
    config: dict
    report: dict
    attack_seconds: list = field(default_factory=list)  # aligned with attacked records

    def matrix(self):
        return rp.matrix_from_records(self.records, self.num_classes)

    def mean_attack_seconds(self) -> float:
        return float(np.mean(self.attack_seconds)) if self.attack_seconds else 0.0


def _attack_config(attack: BaseAttack) -> dict:
    params = {k: (v if not isinstance(v, np.generic) else v.item())
              for k, v in attack.get_params().items()}
    return {"attack": type(attack).__name__, "params": params}


def _model_digest(model) -> str:
    return hashlib.sha256(model.to_bytes()).hexdigest()


# worker-side state for process pools
_POOL = {}


def _pool_init(model_bytes, attack, targets):
    _POOL["model"] = NeuralNetClassifier.from_bytes(model_bytes)
    _POOL["attack"] = attack
    _POOL["targets"] = targets


def _pool_task(args):
    index, image, source = args
    return _run_one(_POOL["model"], _POOL["attack"], _POOL["targets"],
                    index, image, source)


def _run_one(model, attack, targets, index, image, source_and_benign):
    """Attack one input, possibly once per target; returns (records, seconds)."""
    source, benign = source_and_benign
    records, seconds = [], []
    if targets is None:
        t0 = time.perf_counter()
        outcome = attack.run(model, image)
        seconds.append(time.perf_counter() - t0)
        records.append(rp.record_from_outcome(index, outcome, benign))
    else:
        for target in targets:
            if target == source:
                records.append(rp.skip_record(
                    index, rp.SKIP_TARGET_EQUALS_SOURCE, source, target, benign))
                continue
            runner = clone(attack)
            runner.target = target
            t0 = time.perf_counter()
            outcome = runner.run(model, image)
            seconds.append(time.perf_counter() - t0)
            records.append(rp.record_from_outcome(index, outcome, benign))
    return records, seconds


def run_campaign(model, dataset: LabeledSet, attack: BaseAttack, *,
                 targets=None, jobs: int = 1, config_extra: dict | None = None,
                 log=None) -> CampaignData:
    """Attack every usable input of ``dataset``.

    The attack population is the inputs the model classifies correctly (the
    source class is the model's own prediction); misclassified inputs are
    skipped with a reason code. ``targets=None`` runs the attack as
    configured (untargeted, or single-target if ``attack.target`` is set);
    a target list runs one attack per (input, target != source) pair.
    """
    if len(dataset) == 0:
        raise InputError("cannot run a campaign on an empty dataset slice")
    m = model.n_classes_
    if targets is not None:
        targets = sorted({int(t) for t in targets})
        if not targets:
            raise InputError("empty target list")
        if any(not 0 <= t < m for t in targets):
            raise InputError(f"targets must lie in [0, {m})")

    probs = model.predict_proba(dataset.images)
    sources = probs.argmax(axis=1)

    work = []  # (index, image, (source, benign_prediction))
    records_pre = {}
    for i in range(len(dataset)):
        if sources[i] != dataset.labels[i]:
            records_pre[i] = [rp.skip_record(
                i, rp.SKIP_MISCLASSIFIED, int(sources[i]), -1, probs[i])]
            continue
        work.append((i, dataset.images[i], (int(sources[i]), probs[i])))

    results = {}
    timings = []
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(
                max_workers=jobs, initializer=_pool_init,
                initargs=(model.to_bytes(), attack, targets)) as pool:
            for (i, _, _), (recs, secs) in zip(
                    work, pool.map(_pool_task, work, chunksize=8)):
                results[i] = recs
                timings.extend(secs)
    else:
        for done, (i, image, src) in enumerate(work):
            recs, secs = _run_one(model, attack, targets, i, image, src)
            results[i] = recs
            timings.extend(secs)
            if log and (done + 1) % 200 == 0:
                log(f"  attacked {done + 1}/{len(work)} inputs")

    records = []
    for i in range(len(dataset)):
        records.extend(records_pre.get(i, []))
        records.extend(results.get(i, []))

    config = _attack_config(attack)
    config.update({
        "targets": targets,
        "dataset": {"name": dataset.name, "size": len(dataset),
                    "fingerprint": dataset.fingerprint()},
        "model_sha256": _model_digest(model),
        "num_classes": m,
    })
    if config_extra:
        config.update(config_extra)
    report = rp.build_report(records, m, config)
    return CampaignData(records, m, dataset.image_shape, config, report,
                        attack_seconds=timings)


# ---------------------------------------------------------------------------
# sweeps


SWEEP_AXES = ("theta", "iterations", "epochs", "feature_maps")


def sweep_attack_axis(model, dataset, attack, axis: str, values, *,
                      jobs: int = 1, log=None) -> list:
    """One campaign per attack-parameter value (theta or iteration count)."""
    if len(values) < 2:
        raise InputError("a sweep needs at least two axis values")
    out = []
    for v in values:
        runner = clone(attack)
        if axis == "theta":
            runner.theta = float(v)
        elif axis == "iterations":
            runner.max_iterations = int(v)
        else:
            raise InputError(f"axis {axis!r} is not an attack parameter")
        if log:
            log(f"sweep {axis}={v}")
        out.append(run_campaign(model, dataset, runner, jobs=jobs,
                                config_extra={"sweep_axis": axis, "sweep_value": v},
                                log=log))
    return out


def sweep_model_axis(train_set, eval_set, dataset, attack, axis: str, values, *,
                     cache_dir, base_params: dict | None = None,
                     jobs: int = 1, log=None):
    """One trained model and campaign per hyperparameter value.

    Returns (campaigns, models). Models are cached under ``cache_dir`` keyed
    by architecture, training configuration and data fingerprint, so repeated
    sweeps reuse earlier training runs.
    """
    if len(values) < 2:
        raise InputError("a sweep needs at least two axis values")
    params = dict(base_params or {})
    campaigns, models = [], []
    for v in values:
        p = dict(params)
        if axis == "epochs":
            p["epochs"] = int(v)
        elif axis == "feature_maps":
            p["feature_map_scale"] = str(v)
        else:
            raise InputError(f"axis {axis!r} is not a training parameter")
        model = get_or_train(cache_dir, train_set, eval_set=eval_set, log=log, **p)
        if log:
            log(f"sweep {axis}={v}: model ready")
        campaigns.append(run_campaign(model, dataset, attack, jobs=jobs,
                                      config_extra={"sweep_axis": axis,
                                                    "sweep_value": v},
                                      log=log))
        models.append(model)
    return campaigns, models


# ---------------------------------------------------------------------------
# model cache


def training_key(train_set: LabeledSet, **params) -> str:
    model = NeuralNetClassifier(**params)
    arch_text = model._resolve_architecture().to_text()
    doc = {"arch": arch_text, "data": train_set.fingerprint(),
           "epochs": model.epochs, "batch_size": model.batch_size,
           "learning_rate": model.learning_rate, "momentum": model.momentum,
           "seed": model.seed}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def get_or_train(cache_dir, train_set: LabeledSet, *, eval_set=None,
                 log=None, **params) -> NeuralNetClassifier:
    """Train a model (or load it from the cache) for the given configuration."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = training_key(train_set, **params)
    path = cache_dir / f"model-{key[:20]}.advm"
    if path.exists():
        if log:
            log(f"loading cached model {path.name}")
        return NeuralNetClassifier.load(path)
    if log:
        log(f"training model {path.name} ({params})")
    model = NeuralNetClassifier(**params).fit(train_set.images, train_set.labels)
    if eval_set is not None and len(eval_set):
        model.meta_.final_test_accuracy = model.score(eval_set.images, eval_set.labels)
        if log:
            log(f"  test accuracy {model.meta_.final_test_accuracy:.4f}")
    model.save(path)
    return model
