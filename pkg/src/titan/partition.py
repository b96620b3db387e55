"""MC-dropout prediction variance and the similar/dissimilar image split.

An unlabeled image is pushed through the frozen detector M times with
dropout active; per-query boxes and score rows are compared across passes.
High variance ranks an image as source-similar. Rank direction follows the
operative rule (variance level r/N at or above the threshold means
source-similar); note the narrative gloss of which side is "hard" points the
other way in places, but the split below is the one the training loop
consumes.
"""

from __future__ import annotations

from dataclasses import dataclass
import json

import numpy as np

from .detector import DetectorConfig, DetectionSet, run_detector


@dataclass
class VarianceReport:
    """Per-image variance components; v == v_b * v_c elementwise."""
    v_b: np.ndarray
    v_c: np.ndarray
    v: np.ndarray
    m_passes: int


@dataclass
class DomainPartition:
    """Ranks (1..N, ascending with variance), levels r/N, and the two subsets."""
    ranks: np.ndarray
    levels: np.ndarray
    sigma: float
    source_similar: list
    source_dissimilar: list


def mc_forward(cfg: DetectorConfig, params: dict, image: np.ndarray,
               m_passes: int, dropout_p: float, seed) -> list[DetectionSet]:
    """M stochastic forward passes over one image with frozen parameters.

    The image is tiled into a batch of M so each pass draws an independent
    dropout mask from one seeded stream; query slot j corresponds across
    passes by construction. Deterministic given (seed, shapes).
    """
    if m_passes < 1:
        raise ValueError(f"m_passes must be >= 1, got {m_passes}")
    image = np.asarray(image, dtype=np.float64)
    batch = np.broadcast_to(image, (m_passes,) + image.shape)
    rng = np.random.default_rng(seed)
    fp = run_detector(cfg, params, batch, dropout_p=dropout_p,
                      mode="train" if dropout_p > 0 else "eval", rng=rng)
    return [fp.detections(m) for m in range(m_passes)]


def detection_variance(samples: list[DetectionSet]) -> tuple[float, float, float]:
    """(v_b, v_c, v): mean squared deviation from the per-slot mean box and
    score row, averaged over passes and slots, and their product."""
    if not samples:
        raise ValueError("empty sample list")
    boxes = np.stack([np.asarray(s.boxes, dtype=np.float64) for s in samples])
    scores = np.stack([np.asarray(s.scores, dtype=np.float64) for s in samples])
    m, n = boxes.shape[0], boxes.shape[1]
    if n == 0:
        raise ValueError("samples contain no detection slots")
    # shift by the first pass before averaging: identical passes then give
    # an exact zero instead of accumulated rounding from the mean
    boxes = boxes - boxes[0]
    scores = scores - scores[0]
    v_b = ((boxes - boxes.mean(axis=0)) ** 2).sum() / (m * n)
    v_c = ((scores - scores.mean(axis=0)) ** 2).sum() / (m * n)
    return float(v_b), float(v_c), float(v_b * v_c)


def variance_report(cfg: DetectorConfig, params: dict, images: np.ndarray,
                    m_passes: int = 8, dropout_p: float = 0.1,
                    seed: int = 0) -> VarianceReport:
    """Per-image variance triple; image i uses the child seed (seed, i)."""
    vb, vc, vv = [], [], []
    for i in range(len(images)):
        samples = mc_forward(cfg, params, images[i], m_passes, dropout_p,
                             np.random.SeedSequence([int(seed), i]))
        b, c, v = detection_variance(samples)
        vb.append(b)
        vc.append(c)
        vv.append(v)
    return VarianceReport(v_b=np.array(vb), v_c=np.array(vc), v=np.array(vv),
                          m_passes=m_passes)


def partition(variances, sigma: float = 0.5) -> DomainPartition:
    """Rank images by variance and split at level sigma.

    Largest variance gets rank N; level is rank/N; source-similar means
    level >= sigma. Ties break by ascending image index, so reruns are
    stable and rescaling all variances by a positive constant cannot move
    the boundary.
    """
    if not 0.0 < sigma < 1.0:
        raise ValueError(f"sigma must lie in (0,1), got {sigma}")
    v = np.asarray(variances, dtype=np.float64)
    n = len(v)
    if n < 1:
        raise ValueError("need at least one variance")
    order = np.lexsort((np.arange(n), v))
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(1, n + 1)
    levels = ranks / n
    similar = [i for i in range(n) if levels[i] >= sigma]
    dissimilar = [i for i in range(n) if levels[i] < sigma]
    return DomainPartition(ranks=ranks, levels=levels, sigma=float(sigma),
                           source_similar=similar, source_dissimilar=dissimilar)


def partition_manifest(report: VarianceReport, part: DomainPartition,
                       image_ids=None) -> dict:
    """JSON-ready manifest: one record per image plus the split parameters."""
    n = len(part.ranks)
    ids = list(range(n)) if image_ids is None else list(image_ids)
    records = []
    for i in range(n):
        subset = "similar" if part.levels[i] >= part.sigma else "dissimilar"
        records.append({
            "id": ids[i],
            "v_b": float(report.v_b[i]),
            "v_c": float(report.v_c[i]),
            "v": float(report.v[i]),
            "rank": int(part.ranks[i]),
            "vl": float(part.levels[i]),
            "subset": subset,
        })
    return {
        "sigma": part.sigma,
        "m_passes": report.m_passes,
        "num_images": n,
        "num_similar": len(part.source_similar),
        "num_dissimilar": len(part.source_dissimilar),
        "images": records,
    }


def write_partition_manifest(path, report: VarianceReport,
                             part: DomainPartition, image_ids=None) -> None:
    with open(path, "w") as f:
        json.dump(partition_manifest(report, part, image_ids), f,
                  indent=2, sort_keys=True)
        f.write("\n")
