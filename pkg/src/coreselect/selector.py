"""Ratio-constrained subset selection by relaxed gradient descent.

A per-sample decision parameter d (init all ones) is pushed by three pulls:
alignment reward, diversity reward, and a straight-through ratio penalty
whose forward value is |selected fraction - target|. After the loop, d is
binarized at sigmoid(d) > 0.5; if the resulting count misses the closest
achievable count, an exact cut over the final d values enforces it (and
says so in the result).
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigInvalid, LengthMismatch, NonFiniteLoss, RatioOutOfRange
from .scoring import ScoreVector
from .store import EmbeddingTable


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_prime(x: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return s * (1.0 - s)


@dataclass
class SelectConfig:
    learning_rate: float = 0.05
    max_iterations: int = 2000
    seed: int = 0
    theta: float = 5e-4

    def validate(self) -> None:
        if self.max_iterations < 1:
            raise ConfigInvalid(
                f"max_iterations must be >= 1, got {self.max_iterations}"
            )
        if self.learning_rate <= 0:
            raise ConfigInvalid("learning_rate must be positive")


@dataclass
class SelectionState:
    d: np.ndarray  # final decision parameters
    target_ratio: float
    alpha: float
    beta: float
    theta: float
    mask: np.ndarray  # (n,) bool
    iterations_run: int
    fallback_used: bool
    final_loss: float
    final_ratio_loss: float

    @property
    def n(self) -> int:
        return len(self.mask)

    @property
    def selected_count(self) -> int:
        return int(self.mask.sum())

    @property
    def achieved_ratio(self) -> float:
        return self.selected_count / self.n


def loss_sa(d: np.ndarray, sas: np.ndarray) -> float:
    """Negative mean of gate-weighted alignment scores."""
    if len(d) != len(sas):
        raise LengthMismatch(f"d has {len(d)} entries, sas has {len(sas)}")
    return float(-(sigmoid(np.asarray(d, dtype=np.float64)) * sas).mean())


def loss_sd(d: np.ndarray, sds: np.ndarray) -> float:
    """Negative mean of gate-weighted diversity scores."""
    if len(d) != len(sds):
        raise LengthMismatch(f"d has {len(d)} entries, sds has {len(sds)}")
    return float(-(sigmoid(np.asarray(d, dtype=np.float64)) * sds).mean())


def loss_ratio(d: np.ndarray, s_r: float) -> tuple[float, np.ndarray]:
    """|selected fraction - target| with a straight-through gradient.

    Forward counts hard decisions sigmoid(d) > 0.5; backward treats the
    indicator as identity on sigmoid(d), so each component gets
    sign(fraction - target) * sigmoid'(d_i) / N (zero exactly at the target).
    """
    if not (0.0 < s_r < 1.0):
        raise RatioOutOfRange(s_r)
    d = np.asarray(d, dtype=np.float64)
    n = len(d)
    fraction = float(np.count_nonzero(sigmoid(d) > 0.5)) / n
    gap = fraction - s_r
    loss = abs(gap)
    grad = np.sign(gap) * sigmoid_prime(d) / n
    return loss, grad


def normalize_sds(sds: np.ndarray) -> np.ndarray:
    """Min-max scale diversity scores to [0, 1]; constant input maps to zeros."""
    lo, hi = float(sds.min()), float(sds.max())
    if hi == lo:
        return np.zeros_like(sds, dtype=np.float64)
    return (np.asarray(sds, dtype=np.float64) - lo) / (hi - lo)


def target_count(s_r: float, n: int) -> int:
    """Closest achievable selected count (half-up at .5)."""
    return int(math.floor(s_r * n + 0.5))


def top_k_mask(values: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the k largest values, ties broken by ascending index."""
    order = np.lexsort((np.arange(len(values)), -np.asarray(values, dtype=np.float64)))
    mask = np.zeros(len(values), dtype=bool)
    mask[order[:k]] = True
    return mask


def optimize_selection(
    scores: ScoreVector,
    s_r: float,
    cfg: SelectConfig,
    alpha: float | None = None,
    beta: float = 2.0,
) -> SelectionState:
    """Full-batch descent on combined loss, then binarization.

    alpha defaults to the target ratio. Diversity scores are min-max
    normalized before entering the loss so alpha's scale is dataset-free.
    Stops early once the ratio penalty is within theta and the combined
    loss has been flat (< 1e-7 spread) over a 20-iteration window.
    """
    cfg.validate()
    if not (0.0 < s_r < 1.0):
        raise RatioOutOfRange(s_r)
    scores.validate()
    if alpha is None:
        alpha = s_r
    sas = np.asarray(scores.sas, dtype=np.float64)
    sds_n = normalize_sds(scores.sds)
    n = len(sas)

    d = np.ones(n, dtype=np.float64)
    window: list[float] = []
    iterations = 0
    combined = math.nan
    ratio_part = math.nan
    for _ in range(cfg.max_iterations):
        l_ratio, g_ratio = loss_ratio(d, s_r)
        combined = loss_sa(d, sas) + alpha * loss_sd(d, sds_n) + beta * l_ratio
        ratio_part = l_ratio
        if not np.isfinite(combined):
            raise NonFiniteLoss(f"combined loss became {combined}")
        window.append(combined)
        if len(window) > 21:
            window.pop(0)
        if (
            l_ratio <= cfg.theta
            and len(window) == 21
            and max(window) - min(window) < 1e-7
        ):
            break
        grad = -(sigmoid_prime(d) * (sas + alpha * sds_n)) / n + beta * g_ratio
        d -= cfg.learning_rate * grad
        iterations += 1

    mask = sigmoid(d) > 0.5
    want = target_count(s_r, n)
    fallback = int(mask.sum()) != want
    if fallback:
        mask = top_k_mask(d, want)
    return SelectionState(
        d=d,
        target_ratio=s_r,
        alpha=alpha,
        beta=beta,
        theta=cfg.theta,
        mask=mask,
        iterations_run=iterations,
        fallback_used=fallback,
        final_loss=combined,
        final_ratio_loss=ratio_part,
    )


def manifest_dict(state: SelectionState, table: EmbeddingTable) -> dict:
    if state.n != table.n:
        raise LengthMismatch(f"mask covers {state.n} samples, table has {table.n}")
    selected = [table.sample_ids[i] for i in np.flatnonzero(state.mask)]
    return {
        "target_ratio": state.target_ratio,
        "achieved_ratio": state.achieved_ratio,
        "alpha": state.alpha,
        "beta": state.beta,
        "theta": state.theta,
        "fallback_used": state.fallback_used,
        "selected": selected,
    }


def emit_manifest(state: SelectionState, table: EmbeddingTable, path) -> None:
    """JSON manifest plus a CSV twin (same stem, .csv), index-ordered."""
    doc = manifest_dict(state, table)
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")
    csv_path = os.path.splitext(str(path))[0] + ".csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id"])
        for sid in doc["selected"]:
            writer.writerow([sid])
