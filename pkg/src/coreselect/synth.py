"""Synthetic embedding worlds with controllable noise, for desk-scale checks.

Class centers are unit vectors kept at least a minimum angle apart (rejection
sampling). Clean samples are unit-normalized center + Gaussian jitter. Label
flips reassign the label uniformly among the other classes without moving the
embedding; corruption adds Gaussian noise to the embedding without touching
the label. Victim counts are exact (floor(rate * N)), not Bernoulli, so the
metric assertions downstream are sharp.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from .errors import LengthMismatch, SpecInvalid
from .scoring import ScoreVector
from .selector import SelectionState
from .store import ClassTextBank, EmbeddingTable

MAX_CENTER_ATTEMPTS = 10_000


@dataclass
class SynthSpec:
    n_classes: int = 10
    per_class: int = 100
    dim: int = 32
    intra_spread: float = 0.1
    inter_separation: float = 60.0  # degrees
    label_noise_rate: float = 0.0
    corruption_rate: float = 0.0
    corruption_sigma: float = 0.0
    seed: int = 0

    @property
    def n(self) -> int:
        return self.n_classes * self.per_class

    def validate(self) -> None:
        if self.n_classes < 1:
            raise SpecInvalid("need at least one class")
        if self.per_class < 2:
            raise SpecInvalid("need at least two samples per class")
        if self.dim < 2:
            raise SpecInvalid("dim must be >= 2")
        for name in ("label_noise_rate", "corruption_rate"):
            rate = getattr(self, name)
            if not (0.0 <= rate <= 1.0):
                raise SpecInvalid(f"{name} must lie in [0, 1], got {rate}")
        if self.intra_spread < 0 or self.corruption_sigma < 0:
            raise SpecInvalid("spreads must be non-negative")
        if not (0.0 <= self.inter_separation < 180.0):
            raise SpecInvalid("inter_separation must lie in [0, 180) degrees")

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        with open(path) as f:
            spec = cls(**json.load(f))
        spec.validate()
        return spec

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(asdict(self), f, sort_keys=True, indent=2)
            f.write("\n")


@dataclass
class GroundTruth:
    """Per-sample injection flags; clean means neither flipped nor corrupted."""

    label_flipped: np.ndarray  # (n,) bool
    corrupted: np.ndarray  # (n,) bool

    @property
    def clean(self) -> np.ndarray:
        return ~(self.label_flipped | self.corrupted)


def _draw_centers(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Unit class centers with pairwise angle >= spec.inter_separation."""
    cos_cap = math.cos(math.radians(spec.inter_separation))
    centers: list[np.ndarray] = []
    attempts = 0
    while len(centers) < spec.n_classes:
        attempts += 1
        if attempts > MAX_CENTER_ATTEMPTS:
            raise SpecInvalid(
                f"could not place {spec.n_classes} centers at >= "
                f"{spec.inter_separation} degrees in dim {spec.dim} "
                f"within {MAX_CENTER_ATTEMPTS} attempts"
            )
        cand = rng.standard_normal(spec.dim)
        cand /= np.linalg.norm(cand)
        if all(float(np.dot(cand, c)) <= cos_cap for c in centers):
            centers.append(cand)
    return np.stack(centers)


def generate(spec: SynthSpec) -> tuple[EmbeddingTable, ClassTextBank, GroundTruth]:
    """Deterministic synthetic world; see module docstring for the noise model."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    centers = _draw_centers(spec, rng)
    n = spec.n

    emb = np.empty((n, spec.dim), dtype=np.float64)
    orig_labels = np.repeat(np.arange(spec.n_classes), spec.per_class)
    labels = orig_labels.copy()
    for c in range(spec.n_classes):
        block = centers[c] + spec.intra_spread * rng.standard_normal(
            (spec.per_class, spec.dim)
        )
        block /= np.linalg.norm(block, axis=1, keepdims=True)
        emb[c * spec.per_class : (c + 1) * spec.per_class] = block

    flipped = np.zeros(n, dtype=bool)
    n_flip = math.floor(spec.label_noise_rate * n)
    if n_flip > 0:
        victims = rng.choice(n, size=n_flip, replace=False)
        flipped[victims] = True
        if spec.n_classes > 1:
            for i in victims:
                other = rng.integers(0, spec.n_classes - 1)
                labels[i] = other if other < labels[i] else other + 1

    corrupted = np.zeros(n, dtype=bool)
    n_corrupt = math.floor(spec.corruption_rate * n)
    if n_corrupt > 0:
        victims = rng.choice(n, size=n_corrupt, replace=False)
        corrupted[victims] = True
        emb[victims] += spec.corruption_sigma * rng.standard_normal(
            (n_corrupt, spec.dim)
        )

    class_names = [f"class_{c:02d}" for c in range(spec.n_classes)]
    sample_ids = [
        f"class_{orig_labels[i]:02d}/{i % spec.per_class:05d}" for i in range(n)
    ]
    table = EmbeddingTable(
        embeddings=emb.astype(np.float32),
        labels=labels.astype(np.int64),
        sample_ids=sample_ids,
    )
    bank = ClassTextBank(
        text_embeddings=centers.astype(np.float32),
        class_names=class_names,
        prompt_template="A photo of {}",
    )
    return table, bank, GroundTruth(label_flipped=flipped, corrupted=corrupted)


def save_truth(truth: GroundTruth, table: EmbeddingTable, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "label_flipped", "corrupted"])
        for i in range(table.n):
            writer.writerow(
                [
                    table.sample_ids[i],
                    int(truth.label_flipped[i]),
                    int(truth.corrupted[i]),
                ]
            )


def load_truth(path) -> GroundTruth:
    flipped, corrupted = [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            flipped.append(bool(int(row["label_flipped"])))
            corrupted.append(bool(int(row["corrupted"])))
    return GroundTruth(
        label_flipped=np.asarray(flipped, dtype=bool),
        corrupted=np.asarray(corrupted, dtype=bool),
    )


def selection_metrics(
    state: SelectionState,
    truth: GroundTruth,
    scores: ScoreVector,
    labels: np.ndarray,
) -> dict:
    """How a selection interacted with injected noise; JSON-serializable."""
    n = state.n
    if len(truth.label_flipped) != n or scores.n != n or len(labels) != n:
        raise LengthMismatch("state, truth, scores and labels must align")
    mask = state.mask
    count = state.selected_count
    rejected = ~mask
    k = int(np.asarray(labels).max()) + 1
    per_class = [int(np.sum(mask & (labels == c))) for c in range(k)]

    def frac(flags: np.ndarray) -> float:
        return float(np.sum(mask & flags)) / count if count else 0.0

    def mean_or_nan(values: np.ndarray, who: np.ndarray) -> float:
        return float(values[who].mean()) if who.any() else math.nan

    return {
        "achieved_ratio": state.achieved_ratio,
        "selected_count": count,
        "selected_label_flipped_fraction": frac(truth.label_flipped),
        "selected_corrupted_fraction": frac(truth.corrupted),
        "per_class_selected_counts": per_class,
        "mean_sas_selected": mean_or_nan(scores.sas, mask),
        "mean_sas_rejected": mean_or_nan(scores.sas, rejected),
        "mean_sds_selected": mean_or_nan(scores.sds, mask),
        "mean_sds_rejected": mean_or_nan(scores.sds, rejected),
    }
