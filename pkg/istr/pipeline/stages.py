"""Pipeline stages.

Each stage reads the artifacts of earlier stages from the run directory,
writes its own, and returns the paths it produced. Everything a stage needs
beyond those artifacts is rebuilt deterministically from the config.
"""

import logging
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from istr.data.attacks import AttackPlan, apply_attack, build_attack
from istr.data.datasets import load_dataset, split_defense
from istr.data.imageio import export_array, load_raw
from istr.data_models import Dataset, ReverseTrigger
from istr.detect.baseline import l1_traversal
from istr.detect.scan import ScanResult, detect_scan
from istr.detect.screening import detection_report
from istr.detect.steps import RunCounter
from istr.dms.priority import differential_variants, priority_map
from istr.dms.slicing import SliceMask, aggregate_masks, middle_slice
from istr.errors import ConfigError, StageError
from istr.metrics.curves import curve_gap, mutation_curves, save_curves, speed_gap
from istr.metrics.report import MetricBundle, PairMetrics, read_json, save_comparison, write_json
from istr.metrics.scores import apd, band_overlap, detection_acc_tpr, fir, mask_overlap
from istr.metrics.timing import StageTimer
from istr.models.arch import resolve_arch
from istr.models.checkpoint import load_checkpoint, save_checkpoint
from istr.models.network import Model, build_model
from istr.models.training import evaluate, train
from istr.pipeline.config import RunConfig
from istr.pipeline.state import RunDirectory
from istr.repair.unlearn import (
    build_unlearn_set, stamped_test_sets, unlearn_finetune, verify_repair,
)

logger = logging.getLogger(__name__)

Pair = Tuple[int, int]


class StageContext:
    """Config, run directory and lazily rebuilt inputs shared by the stages."""

    def __init__(self, config: RunConfig, run: RunDirectory, timer: Optional[StageTimer] = None,
                 model_path: Optional[Path] = None):
        self.config = config
        self.run = run
        self.timer = timer or StageTimer()
        self.model_path = Path(model_path) if model_path else None

    @cached_property
    def splits(self) -> Tuple[Dataset, Dataset, Dataset]:
        """(training set, defender's clean set X, held-out test set)."""
        seed = self.config.seed_for("data")
        train_set = load_dataset(self.config.dataset.source("train", seed))
        test_set = load_dataset(self.config.dataset.source("test", seed))
        if train_set.image_shape != test_set.image_shape or train_set.class_count != test_set.class_count:
            raise ConfigError("train and test splits disagree on image shape or class count")
        defense, heldout = split_defense(test_set, self.config.dataset.defense_fraction)
        return train_set, defense, heldout

    @property
    def defense(self) -> Dataset:
        return self.splits[1]

    @property
    def heldout(self) -> Dataset:
        return self.splits[2]

    @property
    def class_count(self) -> int:
        return self.splits[0].class_count

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return self.splits[0].image_shape

    @cached_property
    def plan(self) -> AttackPlan:
        attack = self.config.attack
        return build_attack(attack.preset, self.image_shape, self.class_count, attack.params)

    @cached_property
    def poisoned_train(self) -> Dataset:
        return apply_attack(self.plan, self.splits[0], self.config.seed_for("poison"))

    def model(self, stage: str, path: Optional[Path] = None) -> Model:
        """The suspect model: ``path``, else the external checkpoint, else the run's own."""
        path = path or self.model_path or self.run.model
        self.run.require(stage, path)
        return load_checkpoint(path)

    def true_stamper(self) -> Callable[[np.ndarray, Pair], np.ndarray]:
        return self.plan.stamp_for_eval


def _export(array: np.ndarray, stem: Path, normalize: bool = False) -> List[Path]:
    return list(export_array(array, stem, normalize))


def _pairs(items) -> List[Pair]:
    return [(int(p["source"]), int(p["target"])) for p in items]


def repair_pairs(detection: dict) -> List[Pair]:
    """Flagged pairs, or the top biased pair of a natural-backdoor report."""
    pairs = _pairs(detection["pairs"])
    if not pairs and detection.get("natural_backdoor"):
        pairs = _pairs([detection["natural_backdoor"]])
    return pairs


def _load_reverse(run: RunDirectory, kind: str, pair: Pair, shape) -> ReverseTrigger:
    delta = load_raw(run.trigger_stem(kind, pair).with_suffix(".f32"), shape)
    return ReverseTrigger(pair[0], pair[1], delta=delta, method=kind)


# stages

def stage_poison(ctx: StageContext) -> List[Path]:
    run, plan = ctx.run, ctx.plan
    poisoned = ctx.poisoned_train
    outputs: List[Path] = []
    for config in plan.configs:
        outputs += _export(config.trigger.additive(), run.root / "triggers" / f"original_{config.trigger.name}")
    if plan.feature_glyph is not None:
        outputs += _export(plan.feature_glyph.additive(), run.root / "triggers" / "feature_glyph")
    stamped = int(np.any(poisoned.images != ctx.splits[0].images, axis=(1, 2, 3)).sum())
    relabelled = int(poisoned.poisoned.sum()) if poisoned.poisoned is not None else 0
    summary = {
        "attack": plan.summary(),
        "train_samples": len(poisoned),
        "relabelled": relabelled,
        "cover": stamped - relabelled,
        "feature_bearing": int(poisoned.feature.sum()) if poisoned.feature is not None else None,
        "defense_samples": len(ctx.defense),
        "heldout_samples": len(ctx.heldout),
        "image_shape": list(ctx.image_shape),
        "class_count": ctx.class_count,
    }
    outputs.append(write_json(summary, run.report("poison")))
    return outputs


def stage_train(ctx: StageContext) -> List[Path]:
    run, cfg = ctx.run, ctx.config
    run.require("train", run.report("poison"))
    arch = resolve_arch(cfg.train.arch, ctx.image_shape, ctx.class_count)
    t = cfg.train

    model = build_model(arch, cfg.seed_for("model"))
    model.metadata.update({"role": "suspect", "attack": cfg.attack.preset})
    _, history = train(model, ctx.poisoned_train, t.epochs, t.lr, t.batch_size, cfg.seed_for("model"), t.momentum,
                       heldout=ctx.heldout)
    reference = build_model(arch, cfg.seed_for("reference"))
    reference.metadata.update({"role": "reference"})
    ref_epochs = t.reference_epochs if t.reference_epochs is not None else t.epochs
    _, ref_history = train(reference, ctx.defense, ref_epochs, t.lr, t.batch_size, cfg.seed_for("reference"),
                           t.momentum)

    stamped = stamped_test_sets(ctx.heldout, ctx.plan.pairs, ctx.true_stamper())
    asr = {f"{m}->{n}": float(np.mean(model.classify(d.images) == n)) for (m, n), d in stamped.items()}
    summary = {
        "arch": arch.descriptor(),
        "parameters": model.parameter_count,
        "clean_accuracy": evaluate(model, ctx.heldout).accuracy,
        "reference_accuracy": evaluate(reference, ctx.heldout).accuracy,
        "attack_success": asr,
        "history": history.to_dict(),
        "reference_history": ref_history.to_dict(),
    }
    logger.info("suspect model clean accuracy %.4f", summary["clean_accuracy"])
    return [save_checkpoint(model, run.model), save_checkpoint(reference, run.reference),
            write_json(summary, run.report("train"))]


def _score(ctx: StageContext, flagged: List[Pair]) -> Optional[dict]:
    return detection_acc_tpr(flagged, ctx.plan.pairs, ctx.class_count).to_dict()


def _time_baseline(ctx: StageContext, model: Model, scan: ScanResult) -> dict:
    """Run the L1 class traversal on a few samples per class under its own timer row.

    Only run counts go into the report; wall times live in the timing table.
    """
    steps = ctx.config.steps
    counter = RunCounter()
    samples = int(np.sum(np.minimum(np.bincount(ctx.defense.labels, minlength=ctx.class_count),
                                    steps.baseline_samples)))
    with ctx.timer.stage("l1-traversal", samples):
        l1_traversal(model, ctx.defense, budget=steps.baseline_budget, seed=ctx.config.seed_for("scan"),
                     max_per_class=steps.baseline_samples, counter=counter)
    logger.info("l1 traversal baseline: %d runs over %d samples", counter.runs, samples)
    return {"samples": samples, "runs": counter.runs, "runs_per_sample": counter.runs / max(samples, 1),
            "steps_runs_per_sample": scan.runs / max(len(scan.indices), 1), "budget": steps.baseline_budget}


def stage_detect(ctx: StageContext) -> List[Path]:
    run, steps = ctx.run, ctx.config.steps
    model = ctx.model("detect")
    with ctx.timer.stage("steps-scan") as timing:
        scan = detect_scan(model, ctx.defense, None, steps.budget, steps.step_size, ctx.config.seed_for("scan"),
                           steps.mode, steps.max_per_class, fraction=steps.fraction, objective=steps.objective)
        timing["samples"] = len(scan.indices)
    report = detection_report(scan, steps.min_gap, steps.min_share)
    curves = mutation_curves(scan)
    outputs = [scan.save(run.scan_dump("steps")), save_curves(curves, run.curves("steps"))]
    for pair in report.repair_pairs():
        outputs += _export(pair.trigger, run.trigger_stem("steps", pair.pair), normalize=True)
    payload = report.to_dict()
    payload["score"] = _score(ctx, report.flagged_pairs)
    payload["curve_gap"] = curve_gap(curves, ctx.plan.poisoned_classes)
    payload["speed_gap"] = speed_gap(curves, ctx.plan.poisoned_classes)
    if steps.baseline:
        payload["baseline"] = _time_baseline(ctx, model, scan)
    outputs.append(write_json(payload, run.report("detection")))
    logger.info("flagged pairs: %s", report.flagged_pairs or "none")
    return outputs


def _dms_classes(ctx: StageContext, detection: dict) -> List[int]:
    if ctx.config.full_dms:
        return list(range(ctx.class_count))
    return sorted({m for m, _ in repair_pairs(detection)})


def stage_dms(ctx: StageContext) -> List[Path]:
    run, spec = ctx.run, ctx.config.dms
    run.require("dms", run.report("detection"), run.reference)
    model, reference = ctx.model("dms"), load_checkpoint(run.reference)
    detection = read_json(run.report("detection"))
    X = ctx.defense
    fill_value = X.images.mean(axis=(0, 2, 3))
    correct = model.classify(X.images) == X.labels
    rng = np.random.default_rng(ctx.config.seed_for("dms"))

    outputs: List[Path] = []
    classes: Dict[str, dict] = {}
    for label in _dms_classes(ctx, detection):
        idx = np.flatnonzero(correct & (X.labels == label))
        if not len(idx):
            logger.warning("no correctly classified samples of class %d for DMS", label)
            continue
        if len(idx) > spec.samples:
            idx = np.sort(rng.choice(idx, size=spec.samples, replace=False))
        masks: List[SliceMask] = []
        scores = []
        for i in idx:
            variants = differential_variants(X.images[i], spec.patch, spec.stride, spec.fill, fill_value)
            pm = priority_map(model, reference, X.images[i], variants, int(i))
            scores.append(pm.scores)
            masks.append(middle_slice(pm, spec.q_low, spec.q_high, spec.minimum))
        mask = aggregate_masks(masks, spec.rule)
        mean_scores = np.mean(scores, axis=0)
        stem = run.mask_stem(label)
        np.savez_compressed(stem.with_suffix(".npz"), values=mask.values, band=mask.band, r1=mask.r1,
                            r2=mask.r2, minimum=mask.minimum, degenerate=mask.degenerate)
        outputs.append(stem.with_suffix(".npz"))
        outputs += _export(mask.values, stem)
        outputs.append(save_comparison([mean_scores, mask.values], ["priority", "mask"],
                                       stem.with_suffix(".html"), f"class {label}"))
        entry = dict(mask.to_dict(), samples=len(idx), degenerate_samples=sum(m.degenerate for m in masks))
        truth = [p for p in ctx.plan.pairs if p[0] == label]
        if truth:
            support = ctx.plan.trigger_for(truth[0]).support
            entry["top_decile_overlap"] = mask_overlap(mean_scores, support)
            entry["band_overlap"] = band_overlap(mask.band, support)
        classes[str(label)] = entry
    outputs.append(write_json({"classes": classes, "params": vars(spec)}, run.report("dms")))
    return outputs


def load_mask(run: RunDirectory, label: int) -> SliceMask:
    with np.load(run.mask_stem(label).with_suffix(".npz")) as data:
        return SliceMask(data["values"], data["band"], float(data["r1"]), float(data["r2"]),
                         float(data["minimum"]), bool(data["degenerate"]))


def stage_invert(ctx: StageContext) -> List[Path]:
    run, steps = ctx.run, ctx.config.steps
    run.require("invert", run.report("dms"), run.scan_dump("steps"))
    model = ctx.model("invert")
    detection = read_json(run.report("detection"))
    dms = read_json(run.report("dms"))
    masks = {int(label): load_mask(run, int(label)).values for label in dms["classes"]}
    steps_scan = ScanResult.load(run.scan_dump("steps"))

    outputs: List[Path] = []
    scan = None
    if masks:
        with ctx.timer.stage("dms-scan") as timing:
            scan = detect_scan(model, ctx.defense, masks, steps.budget, steps.step_size, ctx.config.seed_for("scan"),
                               "opposite", steps.max_per_class, classes=sorted(masks), fraction=steps.fraction,
                               objective=steps.objective)
            timing["samples"] = len(scan.indices)
        outputs += [scan.save(run.scan_dump("dms")), save_curves(mutation_curves(scan), run.curves("dms"))]

    truth = set(ctx.plan.pairs)
    entries = []
    for pair in repair_pairs(detection):
        trigger = scan.pair_trigger(*pair) if scan is not None else None
        fallback = trigger is None
        if fallback:
            logger.warning("no constrained flips for pair %s; keeping the unconstrained trigger", pair)
            trigger = steps_scan.pair_trigger(*pair)
        if trigger is None:
            raise StageError("invert", f"no reverse trigger for pair {pair}")
        stem = run.trigger_stem("dms", pair)
        outputs += _export(trigger, stem, normalize=True)

        sources = ctx.heldout.images[ctx.heldout.labels == pair[0]]
        reverse = ReverseTrigger(pair[0], pair[1], delta=trigger)
        mask_entry = dms["classes"].get(str(pair[0]), {})
        metrics = PairMetrics(
            pair[0], pair[1],
            fir=fir(model, reverse, sources, pair[1]) if len(sources) else None,
            overlap=mask_entry.get("top_decile_overlap"),
            band_overlap=mask_entry.get("band_overlap"),
        )
        panels, titles = [], []
        steps_trigger = steps_scan.pair_trigger(*pair)
        if pair in truth:
            original = ctx.plan.trigger_for(pair).additive()
            metrics.apd = apd(original, trigger)
            panels.append(original)
            titles.append("original")
        panels += [steps_trigger if steps_trigger is not None else np.zeros_like(trigger), trigger]
        titles += ["steps", "dms-steps"]
        outputs.append(save_comparison(panels, titles, stem.with_name(f"compare_{pair[0]}_{pair[1]}.html"),
                                       f"pair {pair[0]} -> {pair[1]}"))
        entry = dict(vars(metrics), fallback=fallback)
        if pair in truth and steps_trigger is not None:
            entry["steps_apd"] = apd(ctx.plan.trigger_for(pair).additive(), steps_trigger)
        entries.append(entry)

    payload = {"pairs": entries}
    if ctx.config.full_dms and scan is not None:
        dms_report = detection_report(scan, steps.min_gap, steps.min_share)
        payload["dms_detection"] = dict(dms_report.to_dict(), score=_score(ctx, dms_report.flagged_pairs))
    outputs.append(write_json(payload, run.report("inversion")))
    return outputs


def stage_repair(ctx: StageContext) -> List[Path]:
    run, spec, cfg = ctx.run, ctx.config.unlearn, ctx.config
    run.require("repair", run.report("inversion"))
    model = ctx.model("repair")
    inversion = read_json(run.report("inversion"))
    pairs = _pairs(inversion["pairs"])
    triggers = {pair: _load_reverse(run, "dms", pair, ctx.image_shape) for pair in pairs}

    unlearn_set = build_unlearn_set(ctx.defense, triggers, pairs, spec.mix, cfg.seed_for("unlearn"))
    repaired, history = unlearn_finetune(model, unlearn_set, spec.epochs, cfg.unlearn_lr, spec.batch_size,
                                         cfg.seed_for("unlearn"))
    params = {"mix": spec.mix, "epochs": spec.epochs, "lr": cfg.unlearn_lr, "unlearn_samples": len(unlearn_set)}

    payload = {"unlearn": params, "history": history.to_dict()}
    true_sets = stamped_test_sets(ctx.heldout, ctx.plan.pairs, ctx.true_stamper())
    if true_sets:
        report = verify_repair(model, repaired, ctx.heldout, true_sets)
        report.params = params
        payload["true_trigger"] = report.to_dict()
    reverse_sets = stamped_test_sets(ctx.heldout, pairs, lambda images, pair: triggers[pair].apply(images))
    if reverse_sets:
        report = verify_repair(model, repaired, ctx.heldout, reverse_sets)
        report.params = params
        payload["reverse_trigger"] = report.to_dict()
    return [save_checkpoint(repaired, run.repaired), write_json(payload, run.report("repair"))]


def stage_eval(ctx: StageContext) -> List[Path]:
    """Print the pre/post ASR table for the repaired checkpoint."""
    run = ctx.run
    run.require("eval", run.repaired)
    model, repaired = ctx.model("eval"), load_checkpoint(run.repaired)
    if ctx.plan.pairs:
        sets = stamped_test_sets(ctx.heldout, ctx.plan.pairs, ctx.true_stamper())
        kind = "true_trigger"
    else:
        run.require("eval", run.report("inversion"))
        pairs = _pairs(read_json(run.report("inversion"))["pairs"])
        triggers = {pair: _load_reverse(run, "dms", pair, ctx.image_shape) for pair in pairs}
        sets = stamped_test_sets(ctx.heldout, pairs, lambda images, pair: triggers[pair].apply(images))
        kind = "reverse_trigger"
    report = verify_repair(model, repaired, ctx.heldout, sets)
    print(report.to_frame().to_string(index=False))
    print(f"clean accuracy: {report.nsr_before:.4f} -> {report.nsr_after:.4f}")
    return [write_json(dict(report.to_dict(), trigger=kind), run.report("eval"))]


def stage_report(ctx: StageContext) -> List[Path]:
    """Rebuild the metric bundle from stored stage outputs; nothing is recomputed."""
    run = ctx.run
    run.require("report", run.report("detection"))
    stored = {name: read_json(run.report(name)) for name in ("poison", "train", "detection", "dms",
                                                              "inversion", "repair")
              if run.report(name).exists()}
    outputs: List[Path] = []
    for kind in ("steps", "dms"):
        dump = run.scan_dump(kind)
        if dump.exists() and not run.curves(kind).exists():
            outputs.append(save_curves(mutation_curves(ScanResult.load(dump)), run.curves(kind)))

    detection = stored["detection"]
    bundle = MetricBundle(
        attack=stored.get("poison", {}).get("attack", {}),
        training={k: v for k, v in stored.get("train", {}).items() if "history" not in k},
        detection={k: v for k, v in detection.items() if k not in ("score", "curve_gap")},
        score=detection.get("score"),
        masks=stored.get("dms", {}).get("classes", {}),
        pairs=[PairMetrics(**{k: v for k, v in entry.items() if k in PairMetrics.__dataclass_fields__})
               for entry in stored.get("inversion", {}).get("pairs", [])],
        repair={k: v for k, v in stored.get("repair", {}).items() if k != "history"} or None,
        curve_gap=detection.get("curve_gap"),
    )
    payload = bundle.to_json()
    if "dms_detection" in stored.get("inversion", {}):
        payload["dms_detection_score"] = stored["inversion"]["dms_detection"].get("score")
    outputs.append(write_json(payload, run.report("metrics")))
    return outputs


STAGES: Dict[str, Callable[[StageContext], List[Path]]] = {
    "poison": stage_poison,
    "train": stage_train,
    "detect": stage_detect,
    "dms": stage_dms,
    "invert": stage_invert,
    "repair": stage_repair,
    "eval": stage_eval,
    "report": stage_report,
}


def stage_outputs(run: RunDirectory, stage: str) -> List[Path]:
    """The artifacts whose presence marks ``stage`` as done."""
    return {
        "poison": [run.report("poison")],
        "train": [run.model, run.reference, run.report("train")],
        "detect": [run.report("detection")],
        "dms": [run.report("dms")],
        "invert": [run.report("inversion")],
        "repair": [run.repaired, run.report("repair")],
        "eval": [run.report("eval")],
        "report": [run.report("metrics")],
    }[stage]
