"""Gold-length and arbitrary-length evaluations with tabular reports.

A report row aggregates the controlled quantity (token count or duration)
over an eval set: mean, population std, and the difference to the target,
both absolute (the headline metric) and signed (what the sweep plots), plus
caption quality metrics against the ground-truth texts.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .corpus import Sample, Vocabulary
from .decoder import CaptionModel
from .generation import GenerationConfig, GenerationResult, generate
from .metrics import bleu4, build_cider_stats, cider, rouge_l


@dataclass
class EvalReport:
    target: float | str
    mode: str
    n: int
    mean: float
    std: float
    diff_abs: float
    diff_signed: float
    bleu4: float
    rouge_l: float
    cider: float
    mean_length: float
    mean_duration: float


def _default_generate_fn(model: CaptionModel, vocab: Vocabulary, mode: str,
                         strategy: str, seed: int):
    def run(sample: Sample, target: float, idx: int) -> GenerationResult:
        cfg = GenerationConfig(target=target, mode=mode, strategy=strategy,
                               seed=seed + idx)
        return generate(model, sample.condition, cfg, vocab)
    return run


def _aggregate(results, targets, samples, mode: str, label) -> EvalReport:
    measured = np.array([r.measured_duration if mode == "duration" else r.measured_length
                         for r in results], dtype=np.float64)
    mean = float(measured.mean())
    std = float(measured.std())
    target_mean = float(np.mean(targets))
    refs = [s.text for s in samples]
    cands = [r.text if r.text.strip() else "<empty>" for r in results]
    stats = build_cider_stats(refs)
    return EvalReport(
        target=label,
        mode=mode,
        n=len(results),
        mean=mean,
        std=std,
        diff_abs=abs(mean - target_mean),
        diff_signed=mean - target_mean,
        bleu4=float(np.mean([bleu4(c, r) for c, r in zip(cands, refs)])),
        rouge_l=float(np.mean([rouge_l(c, r) for c, r in zip(cands, refs)])),
        cider=cider(cands, refs, stats),
        mean_length=float(np.mean([r.measured_length for r in results])),
        mean_duration=float(np.mean([r.measured_duration for r in results])),
    )


def _predictions(results, targets, sample_ids) -> list[dict]:
    return [{
        "sample_id": int(sid),
        "target": float(t),
        "text": r.text,
        "tokens": list(r.tokens),
        "measured_length": r.measured_length,
        "measured_duration": r.measured_duration,
    } for sid, t, r in zip(sample_ids, targets, results)]


def gold_length_test(model: CaptionModel, samples: list[Sample], vocab: Vocabulary,
                     mode: str = "tokens", strategy: str = "greedy", seed: int = 0,
                     generate_fn=None) -> tuple[EvalReport, list[dict]]:
    """Per-sample target = the sample's own ground-truth length/duration."""
    if not samples:
        raise ValueError("empty eval set")
    run = generate_fn or _default_generate_fn(model, vocab, mode, strategy, seed)
    targets = [float(s.duration) if mode == "duration" else float(s.length)
               for s in samples]
    results = [run(s, t, i) for i, (s, t) in enumerate(zip(samples, targets))]
    report = _aggregate(results, targets, samples, mode, "GT")
    return report, _predictions(results, targets, range(len(samples)))


def evaluate_at_target(model: CaptionModel, samples: list[Sample], vocab: Vocabulary,
                       target: float, mode: str = "tokens", strategy: str = "greedy",
                       seed: int = 0, generate_fn=None) -> tuple[EvalReport, list[dict]]:
    if not samples:
        raise ValueError("empty eval set")
    run = generate_fn or _default_generate_fn(model, vocab, mode, strategy, seed)
    results = [run(s, target, i) for i, s in enumerate(samples)]
    targets = [target] * len(samples)
    report = _aggregate(results, targets, samples, mode, target)
    return report, _predictions(results, targets, range(len(samples)))


def arbitrary_length_sweep(model: CaptionModel, samples: list[Sample],
                           vocab: Vocabulary, targets: list[float],
                           mode: str = "tokens", strategy: str = "greedy",
                           seed: int = 0, generate_fn=None
                           ) -> tuple[list[EvalReport], list[dict]]:
    """One report per target; the signed-difference column is the sweep curve."""
    if not targets:
        raise ValueError("no sweep targets")
    reports, preds = [], []
    for t in targets:
        rep, p = evaluate_at_target(model, samples, vocab, t, mode=mode,
                                    strategy=strategy, seed=seed,
                                    generate_fn=generate_fn)
        reports.append(rep)
        preds.extend(p)
    return reports, preds


REPORT_COLUMNS = ["target", "cider", "bleu4", "rouge_l", "mean", "std",
                  "diff_abs", "diff_signed"]


def write_report_csv(reports: list[EvalReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            writer.writerow([r.target, repr(r.cider), repr(r.bleu4), repr(r.rouge_l),
                             repr(r.mean), repr(r.std),
                             repr(r.diff_abs), repr(r.diff_signed)])


def write_predictions_jsonl(preds: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in preds:
            fh.write(json.dumps(p) + "\n")
