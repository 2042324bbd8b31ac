"""Attention interpretability: map consistency under input modifications.

A sample counts toward the score when the model's prediction survives
the modification (prediction-consistent) and the cosine between the
flattened, unit-normalized mean attention maps before and after stays at
or above tau (attention-consistent). The score is the attention-consistent
fraction of the prediction-consistent samples; the full cosine histogram
is always reported so any other threshold can be re-derived.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .data import ImageDataset, Modification, apply_modification
from .exceptions import DomainError
from .model import AibModel
from .netpbm import write_pgm, write_ppm

HIST_BINS = 20


def attention_cosine(a1: np.ndarray, a2: np.ndarray) -> float:
    """Dot product of the flattened, unit-normalized maps."""
    v1 = np.asarray(a1, dtype=np.float64).reshape(-1)
    v2 = np.asarray(a2, dtype=np.float64).reshape(-1)
    if v1.shape != v2.shape:
        raise DomainError(f"attention maps differ in size: {v1.size} vs {v2.size}")
    n1 = np.linalg.norm(v1)
    n2 = np.linalg.norm(v2)
    if n1 == 0.0 or n2 == 0.0:
        raise DomainError("all-zero attention map has undefined similarity")
    return float(v1 @ v2 / (n1 * n2))


@dataclass
class InterpReport:
    modification: dict
    tau: float
    n_total: int
    n_pred_consistent: int
    n_att_consistent: int
    n_excluded: int
    score: float | None
    cosines: list
    histogram: dict

    def as_dict(self) -> dict:
        return {
            "modification": self.modification,
            "tau": self.tau,
            "n_total": self.n_total,
            "n_pred_consistent": self.n_pred_consistent,
            "n_att_consistent": self.n_att_consistent,
            "n_excluded": self.n_excluded,
            "score": self.score,
            "score_percent": None if self.score is None else 100.0 * self.score,
            "histogram": self.histogram,
        }


def _mean_maps_and_preds(model: AibModel, ds: ImageDataset, batch_size: int):
    """Deterministic mean-mode predictions and mu_a maps over a dataset."""
    preds = []
    maps = []
    n = len(ds)
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        res = model.forward(ds.batch(idx), mode="mean")
        preds.append(res.predictions("prob"))
        maps.append(res.mean_attention()[:, 0])
    return np.concatenate(preds), np.concatenate(maps)


def interpretability_score(
    model: AibModel,
    ds: ImageDataset,
    mod: Modification,
    tau: float = 0.8,
    patch_ds: ImageDataset | None = None,
    batch_size: int = 256,
) -> InterpReport:
    """Score attention consistency under ``mod`` (mean mode throughout).

    Samples whose attention map is all zero on either side are excluded
    from the attention-consistent count (reported in ``n_excluded``); they
    still appear in the prediction-consistent denominator.
    """
    mod_ds = apply_modification(ds, mod, patch_ds=patch_ds)
    preds_orig, maps_orig = _mean_maps_and_preds(model, ds, batch_size)
    preds_mod, maps_mod = _mean_maps_and_preds(model, mod_ds, batch_size)

    consistent = np.where(preds_orig == preds_mod)[0]
    cosines = []
    indices = []
    n_excluded = 0
    n_att = 0
    for i in consistent:
        try:
            c = attention_cosine(maps_orig[i], maps_mod[i])
        except DomainError:
            n_excluded += 1
            continue
        cosines.append(c)
        indices.append(int(i))
        if c >= tau:
            n_att += 1

    n_pred = int(consistent.size)
    score = (n_att / n_pred) if n_pred > 0 else None
    counts, edges = np.histogram(np.array(cosines or [0.0]), bins=HIST_BINS, range=(-1.0, 1.0))
    if not cosines:
        counts = np.zeros_like(counts)
    return InterpReport(
        modification=mod.as_dict(),
        tau=tau,
        n_total=len(ds),
        n_pred_consistent=n_pred,
        n_att_consistent=n_att,
        n_excluded=n_excluded,
        score=score,
        cosines=list(zip(indices, cosines)),
        histogram={"edges": edges.tolist(), "counts": counts.tolist()},
    )


def write_report(report: InterpReport, out_dir) -> tuple:
    """Emit report.json plus the per-sample cosine CSV; returns the paths."""
    import json

    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "report.json")
    csv_path = os.path.join(out_dir, "cosines.csv")
    with open(json_path, "w") as fh:
        json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(csv_path, "w") as fh:
        fh.write("index,cosine\n")
        for idx, c in report.cosines:
            fh.write(f"{idx},{c!r}\n")
    return json_path, csv_path


def export_attention(
    model: AibModel,
    ds: ImageDataset,
    out_dir,
    limit: int | None = None,
    batch_size: int = 256,
) -> list:
    """Write mean attention maps (PGM) beside their inputs (PPM or PGM).

    Maps are min-max scaled to [0, 255]; a constant map renders as uniform
    mid-gray. An index file maps each sample to its label and prediction.
    """
    os.makedirs(out_dir, exist_ok=True)
    n = len(ds) if limit is None else min(limit, len(ds))
    view = ImageDataset(
        images=ds.images[:n],
        labels=ds.labels[:n],
        mean=ds.mean,
        std=ds.std,
        split=ds.split,
    )
    preds, maps = _mean_maps_and_preds(model, view, batch_size)
    paths = []
    index_rows = []
    for i in range(n):
        m = maps[i]
        lo, hi = float(m.min()), float(m.max())
        if hi - lo < 1e-12:
            scaled = np.full(m.shape, 128, dtype=np.uint8)
        else:
            scaled = np.round((m - lo) / (hi - lo) * 255.0).astype(np.uint8)
        map_name = f"att_{i:05d}.pgm"
        write_pgm(os.path.join(out_dir, map_name), scaled)

        raw = np.round(view.images[i] * 255.0).astype(np.uint8)
        if raw.shape[0] == 3:
            input_name = f"input_{i:05d}.ppm"
            write_ppm(os.path.join(out_dir, input_name), raw)
        else:
            input_name = f"input_{i:05d}.pgm"
            write_pgm(os.path.join(out_dir, input_name), raw[0])
        paths += [map_name, input_name]
        index_rows.append(
            f"{input_name}\t{map_name}\t{int(view.labels[i])}\t{int(preds[i])}"
        )
    index_path = os.path.join(out_dir, "index.tsv")
    with open(index_path, "w") as fh:
        fh.write("input\tattention\tlabel\tprediction\n")
        for row in index_rows:
            fh.write(row + "\n")
    return paths + ["index.tsv"]
