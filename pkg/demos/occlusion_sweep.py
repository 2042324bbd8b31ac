"""
Attention consistency under growing occlusions
==============================================

Sweeps an occlusion window over the test images (random-color fill and
donor-patch fill) and measures how often the model's attention map stays
where it was, among samples whose prediction survives the occlusion.
Larger windows knock out more predictions and eventually dent the
attention consistency; the table is written to
demo_runs/occlusion_scores.csv.

Run demos/train_toy.py first to reuse its checkpoint, or let this script
train a fresh model (two epochs) on its own.

    python3 demos/occlusion_sweep.py
"""

import os

from aib.checkpoint import load_arrays
from aib.data import Modification, load_mnist, subset
from aib.interpret import interpretability_score
from aib.model import AibModel
from aib.synthetic import write_mnist_like
from aib.training import train

from train_toy import CONFIG, DATA_DIR, DEMO_ROOT, OUT_DIR

SIZES = (4, 8, 12, 16)
TAU = 0.9


def get_datasets():
    if not os.path.exists(os.path.join(DATA_DIR, "train-images-idx3-ubyte")):
        write_mnist_like(DATA_DIR, n_train_per_class=1000,
                         n_test_per_class=250, seed=7)
    train_ds = subset(load_mnist(DATA_DIR, "train"), (0, 1), 1000)
    test_ds = subset(load_mnist(DATA_DIR, "test"), (0, 1), 250)
    return train_ds, test_ds.with_stats(train_ds.mean, train_ds.std)


def get_model(train_ds, test_ds):
    model = AibModel(CONFIG, seed=0)
    ckpt = os.path.join(OUT_DIR, "checkpoint.bin")
    if os.path.exists(ckpt):
        model.load_state(load_arrays(ckpt))
        print(f"loaded {ckpt}")
    else:
        print("no checkpoint yet; training two epochs")
        train(model, train_ds, test_ds, epochs=2, out_dir=OUT_DIR,
              batch_size=128, base_lr=0.03, augment_data=False, seed=0)
    return model


def main():
    train_ds, test_ds = get_datasets()
    model = get_model(train_ds, test_ds)

    rows = []
    for source in ("occlude-color", "occlude-patch"):
        patch_ds = train_ds if source == "occlude-patch" else None
        scores = []
        for p in SIZES:
            rep = interpretability_score(
                model, test_ds, Modification(source, p=p, seed=0),
                tau=TAU, patch_ds=patch_ds,
            )
            scores.append(rep.score)
            print(f"{source:>14} p={p:<2} score "
                  f"{'n/a' if rep.score is None else f'{100 * rep.score:6.2f}%'} "
                  f"({rep.n_pred_consistent}/{rep.n_total} predictions kept)")
        rows.append((source, scores))

    os.makedirs(DEMO_ROOT, exist_ok=True)
    csv_path = os.path.join(DEMO_ROOT, "occlusion_scores.csv")
    with open(csv_path, "w") as fh:
        fh.write("modification," + ",".join(f"p={p}" for p in SIZES) + "\n")
        for source, scores in rows:
            cells = ["" if s is None else f"{100 * s:.2f}" for s in scores]
            fh.write(source + "," + ",".join(cells) + "\n")
    print(f"\nwrote {csv_path}")


if __name__ == "__main__":
    main()
