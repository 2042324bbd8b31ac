"""
Inspect the quantized attention maps
====================================

Exports the mean attention map of each test image next to the input it
belongs to (PGM files plus an index.tsv) and reports which of the
learnable anchor values the quantizer actually uses after training. A
handful of active anchors covering [0, 1] is the expected picture: most
cells snap to "ignore" anchors near 0 while the digit region rides the
high-value ones.

    python3 demos/attention_maps.py
"""

import os

import numpy as np

from aib.interpret import export_attention

from occlusion_sweep import get_datasets, get_model
from train_toy import DEMO_ROOT

OUT = os.path.join(DEMO_ROOT, "attention")
LIMIT = 16


def main():
    train_ds, test_ds = get_datasets()
    model = get_model(train_ds, test_ds)

    files = export_attention(model, test_ds, OUT, limit=LIMIT)
    print(f"wrote {len(files)} files to {OUT}/ "
          f"({LIMIT} inputs, {LIMIT} maps, one index.tsv)")

    anchors = np.sort(model.anchors.as_array())
    print("anchor values:", np.array2string(anchors, precision=3))

    # quantize the attention maps of one test batch and count anchor usage
    res = model.forward(test_ds.batch(np.arange(64)), mode="mean")
    assignment = res.branches[0].maps.assignment  # mean mode = one branch
    used, counts = np.unique(assignment, return_counts=True)
    print(f"{used.size} of {model.anchors.q} anchors in use on 64 images:")
    order = np.argsort(-counts)
    for k, n in zip(used[order], counts[order]):
        value = model.anchors.as_array()[k]
        share = n / assignment.size
        print(f"  anchor {k:>2} value {value:+.3f}: {100 * share:5.1f}% of cells")


if __name__ == "__main__":
    main()
