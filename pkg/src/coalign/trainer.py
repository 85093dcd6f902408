"""Training orchestration: source pretraining, the alternating
pseudo-label / adaptive-learning loop, the source-only and
marginal-alignment baselines, and the end-to-end experiment driver with
its JSON outputs.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import evaluation, kernels, model as model_mod, objectives, selftrain
from .errors import DivergenceError, UsageError
from .model import ModelParams
from .numerics import mean_entropy, sgd_momentum_step
from .selftrain import K_SCHEDULE_PRESETS, KSchedule

METHODS = ("coal", "source-only", "marginal-align")
ABLATION_FLAGS = ("disable-pseudo-term", "disable-entropy-term")

# seed-stream tags so every random decision is a pure function of
# (config seed, stream, epoch), independent of call order
_STREAM_SOURCE = 1
_STREAM_TARGET = 2
_STREAM_HOLDOUT = 3


@dataclass
class TrainConfig:
    method: str = "coal"
    seed: int = 0
    epochs: int = 30
    pretrain_epochs: int = 5
    batch_size: int = 32
    lr_head: float = 0.01
    lr_backbone: float = 0.001
    momentum: float = 0.9
    alpha: float = 0.1
    grl_lambda: float = 1.0
    k_schedule: KSchedule = field(default_factory=KSchedule)
    sampler: str = "balanced"
    ablations: tuple[str, ...] = ()
    hidden_dims: tuple[int, ...] = (32, 16)
    temperature: float = 0.05
    holdout_fraction: float = 0.2
    data: dict = field(default_factory=dict)
    out_dir: str | None = None
    task: str | None = None
    dump_pseudo: bool = False

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise UsageError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.sampler not in ("balanced", "natural"):
            raise UsageError(f"sampler must be balanced or natural, got {self.sampler!r}")
        self.ablations = tuple(self.ablations)
        for flag in self.ablations:
            if flag not in ABLATION_FLAGS:
                raise UsageError(f"unknown ablation flag {flag!r}")
        if self.ablations and self.method != "coal":
            raise UsageError("ablation flags are only valid with method=coal")
        if isinstance(self.k_schedule, str):
            self.k_schedule = K_SCHEDULE_PRESETS[self.k_schedule]
        elif isinstance(self.k_schedule, dict):
            self.k_schedule = KSchedule(**self.k_schedule)
        self.hidden_dims = tuple(self.hidden_dims)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["ablations"] = list(self.ablations)
        doc["hidden_dims"] = list(self.hidden_dims)
        return doc


@dataclass
class RunReport:
    """Everything one run produced; the metrics section is fully
    deterministic for a fixed seed/config, timing is not."""

    config: dict
    metrics: dict
    timing: dict

    def to_dict(self) -> dict:
        return {"config": self.config, "metrics": self.metrics, "timing": self.timing}

    def metrics_payload(self) -> str:
        return json.dumps(self.metrics, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def _learning_rates(params: ModelParams, config: TrainConfig) -> dict[str, float]:
    lrs = {}
    for block in params.extractor_blocks():
        lrs[block.name] = config.lr_backbone
    for block in params.classifier_blocks() + params.domain_blocks():
        lrs[block.name] = config.lr_head
    return lrs


def _batch_plan(dataset, config: TrainConfig, stream: int, global_epoch: int, sampler: str):
    seed = [config.seed, stream, global_epoch]
    if sampler == "balanced":
        return data_mod.balanced_batches(dataset, config.batch_size, seed)
    return data_mod.natural_batches(dataset, config.batch_size, seed)


def _check_finite(value: float, what: str, epoch: int, step: int) -> None:
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite {what} ({value}) at epoch {epoch}, step {step}")


def evaluate_model(params: ModelParams, dataset: data_mod.LabeledDataset) -> dict:
    pred = model_mod.classify(params, dataset.features)
    cm = evaluation.confusion_matrix(dataset.labels, pred.probabilities.argmax(axis=1), dataset.num_classes)
    return {
        "per_class_mean_accuracy": evaluation.per_class_mean_accuracy(cm),
        "overall_accuracy": evaluation.overall_accuracy(cm),
        "confusion": cm.tolist(),
    }


def pretrain(
    params: ModelParams,
    source: data_mod.LabeledDataset,
    config: TrainConfig,
    *,
    epochs: int | None = None,
    start_epoch: int = 0,
    holdout: data_mod.LabeledDataset | None = None,
    phase: str = "pretrain",
    step_log: list | None = None,
) -> list[dict]:
    """Supervised training on source batches only; returns epoch records."""
    epochs = config.pretrain_epochs if epochs is None else epochs
    lrs = _learning_rates(params, config)
    records = []
    for e in range(epochs):
        global_epoch = start_epoch + e
        plan = _batch_plan(source, config, _STREAM_SOURCE, global_epoch, config.sampler)
        losses = []
        for i, batch in enumerate(plan):
            l_sc = objectives.source_classification_loss(
                params, source.features[batch], source.labels[batch]
            )
            _check_finite(l_sc, "supervised loss", global_epoch, i)
            sgd_momentum_step(params.all_blocks(), lrs, config.momentum)
            losses.append(l_sc)
            if step_log is not None:
                step_log.append(
                    {"epoch": global_epoch, "phase": phase, "step": i, "l_sc": l_sc,
                     "l_target_pseudo": 0.0, "l_st": l_sc, "l_h": 0.0, "alpha": 0.0}
                )
        record = {"epoch": global_epoch, "phase": phase, "k": None,
                  "l_sc": float(np.mean(losses)), "l_target_pseudo": 0.0,
                  "l_st": float(np.mean(losses)), "l_h": 0.0,
                  "estimated_target_distribution": None,
                  "masked_pseudo_accuracy": None,
                  "domain_discriminator_accuracy": None}
        if holdout is not None:
            record.update(evaluate_model(params, holdout))
            record.pop("confusion")
        records.append(record)
    return records


def run_coal_epoch(
    params: ModelParams,
    source: data_mod.LabeledDataset,
    target_train: data_mod.LabeledDataset,
    config: TrainConfig,
    epoch: int,
    *,
    holdout: data_mod.LabeledDataset | None = None,
    step_log: list | None = None,
    pseudo_dir: str | Path | None = None,
) -> dict:
    """One adaptation epoch: pseudo-label assignment, per-class top-k
    selection, then paired source/target steps of the combined objective."""
    global_epoch = config.pretrain_epochs + epoch
    k = selftrain.advance_k(config.k_schedule, epoch)
    pseudo_labels, confidence = selftrain.assign_pseudo_labels(params, target_train.features)
    pseudo = selftrain.select_top_k_per_class(pseudo_labels, confidence, k, target_train.num_classes)
    warnings: list[str] = []
    if pseudo.mask.sum() == 0:
        warnings.append("no pseudo labels selected; epoch ran on the supervised loss only")
        estimated = None
    else:
        estimated = selftrain.estimate_target_distribution(pseudo).tolist()
    selected = pseudo.mask == 1
    masked_acc = (
        float((pseudo.labels[selected] == target_train.labels[selected]).mean())
        if selected.any()
        else None
    )
    if pseudo_dir is not None:
        selftrain.write_pseudo_csv(pseudo, Path(pseudo_dir) / f"pseudo_epoch_{epoch:03d}.csv")

    use_pseudo = "disable-pseudo-term" not in config.ablations and pseudo.mask.sum() > 0
    use_entropy = "disable-entropy-term" not in config.ablations

    lrs = _learning_rates(params, config)
    src_plan = _batch_plan(source, config, _STREAM_SOURCE, global_epoch, config.sampler)
    tgt_plan = _batch_plan(target_train, config, _STREAM_TARGET, global_epoch, "natural")
    steps = max(len(src_plan), len(tgt_plan))
    sums = {"l_sc": 0.0, "l_target_pseudo": 0.0, "l_st": 0.0, "l_h": 0.0}
    for i in range(steps):
        sb = src_plan[i % len(src_plan)]
        tb = tgt_plan[i % len(tgt_plan)]
        tgt_x = target_train.features[tb]
        if use_pseudo:
            l_st, l_sc, l_pseudo = objectives.self_training_loss(
                params, source.features[sb], source.labels[sb],
                tgt_x, pseudo.labels[tb], pseudo.mask[tb].astype(np.float64),
            )
        else:
            l_sc = objectives.source_classification_loss(params, source.features[sb], source.labels[sb])
            l_pseudo, l_st = 0.0, l_sc
        if use_entropy:
            l_h = objectives.entropy_objective(params, tgt_x, config.alpha)
        else:
            probs = model_mod.classify(params, tgt_x).probabilities
            l_h, _ = mean_entropy(probs)
        _check_finite(l_st, "classification loss", global_epoch, i)
        _check_finite(l_h, "entropy", global_epoch, i)
        sgd_momentum_step(params.all_blocks(), lrs, config.momentum)
        breakdown = objectives.LossBreakdown(
            l_sc=l_sc, l_target_pseudo=l_pseudo, l_st=l_st, l_h=l_h, alpha=config.alpha
        )
        for key, val in breakdown.as_dict().items():
            if key != "alpha":
                sums[key] += val
        if step_log is not None:
            step_log.append({"epoch": global_epoch, "phase": "adapt", "step": i,
                             **breakdown.as_dict()})

    record = {"epoch": global_epoch, "phase": "adapt", "k": k,
              **{key: val / steps for key, val in sums.items()},
              "alpha": config.alpha,
              "estimated_target_distribution": estimated,
              "masked_pseudo_accuracy": masked_acc,
              "domain_discriminator_accuracy": None}
    if warnings:
        record["warnings"] = warnings
    if holdout is not None:
        record.update(evaluate_model(params, holdout))
        record.pop("confusion")
    return record


def run_marginal_align_epoch(
    params: ModelParams,
    source: data_mod.LabeledDataset,
    target_train: data_mod.LabeledDataset,
    config: TrainConfig,
    epoch: int,
    *,
    holdout: data_mod.LabeledDataset | None = None,
    step_log: list | None = None,
) -> dict:
    """Supervised loss plus adversarial domain confusion on embeddings; no
    conditioning and no self-training."""
    global_epoch = config.pretrain_epochs + epoch
    lrs = _learning_rates(params, config)
    src_plan = _batch_plan(source, config, _STREAM_SOURCE, global_epoch, config.sampler)
    tgt_plan = _batch_plan(target_train, config, _STREAM_TARGET, global_epoch, "natural")
    steps = max(len(src_plan), len(tgt_plan))
    sums = {"l_sc": 0.0, "l_domain": 0.0, "domain_acc": 0.0}
    for i in range(steps):
        sb = src_plan[i % len(src_plan)]
        tb = tgt_plan[i % len(tgt_plan)]
        l_sc = objectives.source_classification_loss(params, source.features[sb], source.labels[sb])
        l_dom, dom_acc = objectives.domain_alignment_loss(
            params, source.features[sb], target_train.features[tb], config.grl_lambda
        )
        _check_finite(l_sc, "supervised loss", global_epoch, i)
        _check_finite(l_dom, "domain loss", global_epoch, i)
        sgd_momentum_step(params.all_blocks(), lrs, config.momentum)
        sums["l_sc"] += l_sc
        sums["l_domain"] += l_dom
        sums["domain_acc"] += dom_acc
        if step_log is not None:
            step_log.append({"epoch": global_epoch, "phase": "adapt", "step": i,
                             "l_sc": l_sc, "l_target_pseudo": 0.0, "l_st": l_sc,
                             "l_h": 0.0, "alpha": 0.0, "l_domain": l_dom})
    record = {"epoch": global_epoch, "phase": "adapt", "k": None,
              "l_sc": sums["l_sc"] / steps, "l_target_pseudo": 0.0,
              "l_st": sums["l_sc"] / steps, "l_h": 0.0,
              "l_domain": sums["l_domain"] / steps,
              "estimated_target_distribution": None,
              "masked_pseudo_accuracy": None,
              "domain_discriminator_accuracy": sums["domain_acc"] / steps}
    if holdout is not None:
        record.update(evaluate_model(params, holdout))
        record.pop("confusion")
    return record


def resolve_datasets(
    config: TrainConfig,
) -> tuple[data_mod.LabeledDataset, data_mod.LabeledDataset, data_mod.LabeledDataset, dict, dict]:
    """Build (source, target_train, target_holdout) plus the two manifest
    recipes from the config's data section."""
    section = config.data
    if "twin_gaussians" in section:
        gen = dict(section["twin_gaussians"])
        shift = section.get("shift")
        src_recipe = {"kind": "twin-gaussians", "domain": "source", "generator": gen}
        tgt_recipe = {"kind": "twin-gaussians", "domain": "target", "generator": gen}
        if shift:
            shift_seed = shift.get("seed", 0)
            src_recipe["shift"] = {**shift, "direction": data_mod.DIRECTION_SOURCE, "seed": shift_seed}
            tgt_recipe["shift"] = {**shift, "direction": data_mod.DIRECTION_TARGET, "seed": shift_seed + 1}
    elif "source" in section and "target" in section:
        src_recipe = section["source"]
        tgt_recipe = section["target"]
    else:
        raise UsageError("config data section needs either twin_gaussians or source/target recipes")
    source = data_mod.materialize_dataset(src_recipe)
    target = data_mod.materialize_dataset(tgt_recipe)
    if source.num_classes != target.num_classes or source.features.shape[1] != target.features.shape[1]:
        raise UsageError("source and target datasets disagree on classes or feature dimension")
    target_train, target_holdout = data_mod.stratified_split(
        target, config.holdout_fraction, seed=[config.seed, _STREAM_HOLDOUT]
    )
    return source, target_train, target_holdout, src_recipe, tgt_recipe


def run_experiment(config: TrainConfig) -> RunReport:
    """Resolve data, train per the configured method, and assemble the report.

    With an out_dir set, also writes report.json, metrics.jsonl, the model
    checkpoint, dataset manifests, and (optionally) per-epoch pseudo-label
    dumps.
    """
    t_start = time.perf_counter()
    source, target_train, target_holdout, src_recipe, tgt_recipe = resolve_datasets(config)
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        data_mod.write_manifest(source, out_dir / "source_manifest.json", src_recipe, config.seed)
        data_mod.write_manifest(target_train, out_dir / "target_train_manifest.json", tgt_recipe, config.seed)
        data_mod.write_manifest(target_holdout, out_dir / "target_holdout_manifest.json", tgt_recipe, config.seed)

    params = model_mod.init_model(
        source.features.shape[1], config.hidden_dims, source.num_classes,
        temperature=config.temperature, seed=config.seed,
    )
    step_log: list[dict] = []
    epoch_times: list[float] = []
    records = []

    t0 = time.perf_counter()
    records.extend(
        pretrain(params, source, config, holdout=target_holdout, step_log=step_log)
    )
    epoch_times.extend([(time.perf_counter() - t0) / max(1, config.pretrain_epochs)] * config.pretrain_epochs)

    pseudo_dir = out_dir if (config.dump_pseudo and out_dir is not None) else None
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        if config.method == "coal":
            record = run_coal_epoch(
                params, source, target_train, config, epoch,
                holdout=target_holdout, step_log=step_log, pseudo_dir=pseudo_dir,
            )
        elif config.method == "marginal-align":
            record = run_marginal_align_epoch(
                params, source, target_train, config, epoch,
                holdout=target_holdout, step_log=step_log,
            )
        else:
            record = pretrain(
                params, source, config, epochs=1,
                start_epoch=config.pretrain_epochs + epoch,
                holdout=target_holdout, phase="adapt", step_log=step_log,
            )[0]
        records.append(record)
        epoch_times.append(time.perf_counter() - t0)

    final = evaluate_model(params, target_holdout)
    true_dist = objectives.label_distribution(target_train.class_counts())
    last_estimate = next(
        (r["estimated_target_distribution"] for r in reversed(records)
         if r.get("estimated_target_distribution") is not None),
        None,
    )
    if last_estimate is not None:
        comparison = evaluation.compare_distributions(np.asarray(last_estimate), true_dist)
        final["estimated_vs_true_js_distance"] = comparison["js_distance"]
        final["estimated_vs_true_l1"] = comparison["l1"]
    else:
        final["estimated_vs_true_js_distance"] = None
        final["estimated_vs_true_l1"] = None
    metrics = {
        "backend": kernels.active_backend(),
        "true_target_distribution": true_dist.tolist(),
        "epochs": records,
        "final": final,
    }
    timing = {"wall_time_s": time.perf_counter() - t_start, "per_epoch_s": epoch_times}
    report = RunReport(config=config.to_dict(), metrics=metrics, timing=timing)

    if out_dir is not None:
        report.save(out_dir / "report.json")
        with open(out_dir / "metrics.jsonl", "w") as fh:
            for entry in step_log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        model_mod.save_checkpoint(params, out_dir / "checkpoint.json")
    return report


def sweep_degrees(config: TrainConfig, degrees: list[float]) -> list[RunReport]:
    """Re-run one config across shift degrees; each run gets its own out dir."""
    if "shift" not in config.data:
        raise UsageError("sweep requires a data section with a shift block")
    reports = []
    for degree in degrees:
        data = json.loads(json.dumps(config.data))
        data["shift"]["degree"] = degree
        out = str(Path(config.out_dir) / f"degree_{degree:g}") if config.out_dir else None
        reports.append(run_experiment(replace(config, data=data, out_dir=out)))
    return reports


def run_ablations(config: TrainConfig) -> list[RunReport]:
    """Full model plus each single-term ablation, same seed and data."""
    if config.method != "coal":
        raise UsageError("ablation study requires method=coal")
    variants = [(), ("disable-pseudo-term",), ("disable-entropy-term",)]
    reports = []
    for flags in variants:
        suffix = "full" if not flags else flags[0]
        out = str(Path(config.out_dir) / suffix) if config.out_dir else None
        reports.append(run_experiment(replace(config, ablations=flags, out_dir=out)))
    return reports
