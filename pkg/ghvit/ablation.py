"""Multi-seed comparison of the five variants on one dataset."""
from __future__ import annotations

import csv
import io
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from ghvit.config import RunConfig
from ghvit.errors import ConfigError
from ghvit.model import VARIANTS
from ghvit.train import TrainData, load_train_data, run_training

logger = logging.getLogger(__name__)

ABLATION_CSV = "ablation.csv"
CSV_HEADER = ("variant", "seed", "test_accuracy")

# published single-run test accuracies, fraction of the test set
REFERENCE_ACCURACY: dict[str, dict[str, float]] = {
    "mnist": {"vit4": 0.9857, "vit16": 0.9861, "hvit": 0.9871, "gcn_hvit_2": 0.9866, "gcn_hvit_1": 0.9880},
    "fashion_mnist": {"vit4": 0.8913, "vit16": 0.8946, "hvit": 0.8985, "gcn_hvit_2": 0.9003, "gcn_hvit_1": 0.9026},
    "quickdraw": {"vit4": 0.8365, "vit16": 0.8487, "hvit": 0.8612, "gcn_hvit_2": 0.8635, "gcn_hvit_1": 0.8655},
}


@dataclass(frozen=True)
class AblationRun:
    variant: str
    seed: int
    test_accuracy: float


@dataclass(frozen=True)
class VariantSummary:
    variant: str
    mean: float
    std: float
    runs: int
    reference: Optional[float]


@dataclass
class AblationReport:
    dataset: str
    runs: list[AblationRun] = field(default_factory=list)

    def accuracies(self, variant: str) -> list[float]:
        return [r.test_accuracy for r in self.runs if r.variant == variant]

    def summary(self) -> list[VariantSummary]:
        out = []
        for variant in dict.fromkeys(r.variant for r in self.runs):
            accs = self.accuracies(variant)
            out.append(
                VariantSummary(
                    variant=variant,
                    mean=statistics.fmean(accs),
                    std=statistics.pstdev(accs),
                    runs=len(accs),
                    reference=REFERENCE_ACCURACY.get(self.dataset, {}).get(variant),
                )
            )
        return out

    def mean(self, variant: str) -> float:
        accs = self.accuracies(variant)
        if not accs:
            raise ConfigError(f"no ablation runs for variant {variant!r}")
        return statistics.fmean(accs)

    def ordering_holds(self, better: str, worse: str) -> bool:
        """True when `better` has a strictly higher mean accuracy than `worse`."""
        return self.mean(better) > self.mean(worse)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in sorted(self.runs, key=lambda r: (list(VARIANTS).index(r.variant), r.seed)):
            writer.writerow([r.variant, r.seed, repr(r.test_accuracy)])
        return buf.getvalue()

    def format_table(self) -> str:
        lines = [f"{'variant':<12} {'runs':>4} {'mean %':>8} {'std %':>7} {'published %':>12}"]
        for s in self.summary():
            ref = f"{100 * s.reference:.2f}" if s.reference is not None else "-"
            lines.append(f"{s.variant:<12} {s.runs:>4} {100 * s.mean:>8.2f} {100 * s.std:>7.2f} {ref:>12}")
        return "\n".join(lines)


def run_ablation(
    base: RunConfig,
    variants: Sequence[str] = tuple(VARIANTS),
    seeds: Sequence[int] = (0, 1, 2),
    workers: int = 1,
    *,
    data: Optional[TrainData] = None,
) -> AblationReport:
    """Train every (variant, seed) pair from scratch on the same data."""
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ConfigError(f"unknown variant(s) {', '.join(unknown)}; valid: {', '.join(VARIANTS)}")
    if not seeds:
        raise ConfigError("ablation needs at least one seed")
    base = base.resolved()
    data = data if data is not None else load_train_data(base)
    root = Path(base.out)

    def one(variant: str, seed: int) -> AblationRun:
        run = base.model_copy(update={"variant": variant, "seed": seed, "out": root / f"{variant}-s{seed}"})
        ckpt = run_training(run, data=data)
        acc = ckpt.history[-1].test_accuracy if ckpt.history else 0.0
        logger.info("ablation %s seed %d: test_accuracy=%.4f", variant, seed, acc)
        return AblationRun(variant, seed, acc)

    pairs = [(v, s) for v in variants for s in seeds]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        runs = list(pool.map(lambda pair: one(*pair), pairs))
    report = AblationReport(dataset=base.dataset, runs=runs)
    root.mkdir(parents=True, exist_ok=True)
    (root / ABLATION_CSV).write_text(report.to_csv(), encoding="utf-8")
    return report
