"""Top-K accuracy and normalized beam gain, reported per transition regime.

Given a predicted class distribution, the Top-K set is the K most probable
classes with ties broken toward the lowest index. Accuracy@K asks whether the
true next label is in that set; NBG@K takes the best true gain inside the set
over the global best gain, so a miss still gets partial credit for choosing a
nearly-as-good beam. Samples whose gain vector is all zero carry no beam
information: their NBG is defined as 1 and they are counted separately.

Every report is split by the transition indicator into stable (label
unchanged) and flip (label changed) regimes alongside the overall view.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

DEFAULT_KS = (1, 2, 3, 5)
REGIMES = ("overall", "stable", "flip")


def topk_set(p: np.ndarray, k: int) -> np.ndarray:
    """1-based indices of the K largest entries, ties toward lower index."""
    p = np.asarray(p)
    if p.ndim != 1:
        raise ConfigError(f"expected a single distribution, got shape {p.shape}")
    if not 1 <= k <= p.shape[0]:
        raise ConfigError(f"K={k} outside 1..{p.shape[0]}")
    return np.argsort(-p, kind="stable")[:k] + 1


def topk_batch(p: np.ndarray, k: int) -> np.ndarray:
    """(B, C) scores -> (B, K) 1-based classes, same tie rule as topk_set."""
    p = np.asarray(p)
    if not 1 <= k <= p.shape[1]:
        raise ConfigError(f"K={k} outside 1..{p.shape[1]}")
    return np.argsort(-p, axis=1, kind="stable")[:, :k] + 1


def nbg_values(gains: np.ndarray, top: np.ndarray) -> np.ndarray:
    """Per-sample best-in-set gain over global best; all-zero scenes -> 1."""
    gains = np.asarray(gains, dtype=np.float64)
    best = gains.max(axis=1)
    got = np.take_along_axis(gains, np.asarray(top) - 1, axis=1).max(axis=1)
    return np.where(best > 0, got / np.where(best > 0, best, 1.0), 1.0)


@dataclass
class MetricReport:
    ks: tuple
    acc: dict  # regime -> {K: fraction}
    nbg: dict  # regime -> {K: fraction}
    n_samples: int
    n_stable: int
    n_flip: int
    n_degenerate: int
    metadata: dict = field(default_factory=dict)


def evaluate(predictor, dataset, ks=DEFAULT_KS, batch_size: int = 256,
             metadata: dict | None = None) -> MetricReport:
    ks = tuple(int(k) for k in ks)
    n_classes = dataset.n_classes
    if len(ks) == 0 or any(not 1 <= k <= n_classes for k in ks):
        raise ConfigError(f"Ks {ks} must be within 1..{n_classes}")
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate an empty dataset")

    hits = {k: [] for k in ks}
    nbgs = {k: [] for k in ks}
    flips = []
    n_degenerate = 0
    for batch in dataset.iter_eval_batches(batch_size):
        p = np.asarray(predictor.predict_proba(batch))
        if p.shape != (batch.size, n_classes):
            raise ConfigError(
                f"predictor returned shape {p.shape}, expected {(batch.size, n_classes)}"
            )
        order = np.argsort(-p, axis=1, kind="stable")
        gains = np.asarray(batch.gains_next, dtype=np.float64)
        n_degenerate += int(np.count_nonzero(gains.max(axis=1) <= 0))
        y0 = np.asarray(batch.y_next) - 1
        for k in ks:
            top = order[:, :k] + 1
            hits[k].append((order[:, :k] == y0[:, None]).any(axis=1))
            nbgs[k].append(nbg_values(gains, top))
        flips.append(np.asarray(batch.s_next) > 0.5)

    flips = np.concatenate(flips)
    masks = {
        "overall": np.ones(flips.shape[0], dtype=bool),
        "stable": ~flips,
        "flip": flips,
    }
    acc = {r: {} for r in REGIMES}
    nbg = {r: {} for r in REGIMES}
    for k in ks:
        h = np.concatenate(hits[k]).astype(np.float64)
        g = np.concatenate(nbgs[k])
        for regime, m in masks.items():
            acc[regime][k] = float(h[m].mean()) if m.any() else float("nan")
            nbg[regime][k] = float(g[m].mean()) if m.any() else float("nan")
    return MetricReport(
        ks=ks, acc=acc, nbg=nbg,
        n_samples=int(flips.shape[0]),
        n_stable=int((~flips).sum()),
        n_flip=int(flips.sum()),
        n_degenerate=n_degenerate,
        metadata=dict(metadata or {}),
    )


def metric_rows(report: MetricReport) -> list[dict]:
    counts = {
        "overall": report.n_samples,
        "stable": report.n_stable,
        "flip": report.n_flip,
    }
    rows = []
    for regime in REGIMES:
        for k in report.ks:
            rows.append({
                "regime": regime,
                "k": k,
                "n": counts[regime],
                "acc": report.acc[regime][k],
                "nbg": report.nbg[regime][k],
            })
    return rows


def write_metrics_csv(path, report: MetricReport) -> None:
    rows = metric_rows(report)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def format_summary(report: MetricReport) -> str:
    lines = []
    if report.metadata:
        meta = ", ".join(f"{k}={v}" for k, v in sorted(report.metadata.items()))
        lines.append(f"[{meta}]")
    lines.append(
        f"samples {report.n_samples} (stable {report.n_stable}, "
        f"flip {report.n_flip}, degenerate-gain {report.n_degenerate})"
    )
    header = f"{'regime':>8s}" + "".join(
        f"  acc@{k:<4d}" for k in report.ks
    ) + "".join(f"  nbg@{k:<4d}" for k in report.ks)
    lines.append(header)
    for regime in REGIMES:
        cells = "".join(f"  {report.acc[regime][k]:8.4f}" for k in report.ks)
        cells += "".join(f"  {report.nbg[regime][k]:8.4f}" for k in report.ks)
        lines.append(f"{regime:>8s}{cells}")
    return "\n".join(lines)
