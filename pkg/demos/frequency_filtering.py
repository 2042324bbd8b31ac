"""
Frequency-domain input modifications
====================================

Splits test images into low- and high-frequency content with the 2-D DFT,
verifies the split is lossless before clamping, then measures attention
consistency when the model only sees one of the two bands. Low-pass
filtering (radius 12 keeps most content) should disturb attention less
than the high-pass extreme (radius 4 removes almost everything).

Filtered sample images land in demo_runs/freq/ as PGM files.

    python3 demos/frequency_filtering.py
"""

import os

import numpy as np

from aib.data import Modification, dft2, freq_filter, idft2
from aib.interpret import interpretability_score
from aib.netpbm import write_pgm

from occlusion_sweep import get_datasets, get_model
from train_toy import DEMO_ROOT

LOW_RADIUS = 12.0
HIGH_RADIUS = 4.0
TAU = 0.9
FREQ_DIR = os.path.join(DEMO_ROOT, "freq")


def band_energy(img: np.ndarray, kind: str, r0: float) -> float:
    """Fraction of spectral energy the filter keeps."""
    spec = dft2(img)
    filtered = dft2(freq_filter(img[None, None], kind, r0)[0, 0])
    total = (np.abs(spec) ** 2).sum()
    return float((np.abs(filtered) ** 2).sum() / total)


def main():
    train_ds, test_ds = get_datasets()
    model = get_model(train_ds, test_ds)

    sample = test_ds.images[0, 0]
    spec = dft2(sample)
    roundtrip = np.abs(idft2(spec) - sample).max()
    print(f"dft2 -> idft2 roundtrip error {roundtrip:.2e}")

    os.makedirs(FREQ_DIR, exist_ok=True)
    write_pgm(os.path.join(FREQ_DIR, "original.pgm"),
              np.round(sample * 255).astype(np.uint8))
    for kind, r0 in (("low", LOW_RADIUS), ("high", HIGH_RADIUS)):
        filtered = freq_filter(sample[None, None], kind, r0)[0, 0]
        write_pgm(os.path.join(FREQ_DIR, f"{kind}_r{int(r0)}.pgm"),
                  np.round(filtered * 255).astype(np.uint8))
        print(f"{kind}-pass r={r0:g} keeps "
              f"{100 * band_energy(sample, kind, r0):.1f}% of spectral energy")

    low = interpretability_score(
        model, test_ds, Modification("freq-low", r=LOW_RADIUS), tau=TAU)
    high = interpretability_score(
        model, test_ds, Modification("freq-high", r=HIGH_RADIUS), tau=TAU)
    for name, rep in (("low-pass", low), ("high-pass", high)):
        score = "n/a" if rep.score is None else f"{100 * rep.score:6.2f}%"
        print(f"{name:>9} r={rep.modification['r']:g}: attention consistency "
              f"{score} ({rep.n_pred_consistent}/{rep.n_total} predictions kept)")
    print(f"\nsample images written to {FREQ_DIR}/")


if __name__ == "__main__":
    main()
