"""
Train the attention-bottleneck classifier on a two-class toy problem
====================================================================

Generates a synthetic MNIST-shaped dataset (rings vs strokes), trains the
small backbone for five epochs with the variational objective, and prints
the loss decomposition per epoch. The checkpoint lands in
demo_runs/toy/ where the other demos pick it up.

Run from the repository root:

    python3 demos/train_toy.py
"""

import json
import os

from aib.data import load_mnist, subset
from aib.model import AibModel, ModelConfig
from aib.synthetic import write_mnist_like
from aib.training import train

DEMO_ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "demo_runs")
DATA_DIR = os.path.join(DEMO_ROOT, "data")
OUT_DIR = os.path.join(DEMO_ROOT, "toy")

# A deliberately small configuration: 64 latent dimensions, 20 anchor
# values for the attention quantizer, and no encoder conv blocks (the
# modulated 7x7x64 features feed the variational head directly). This
# keeps one CPU core busy for about half a minute.
CONFIG = ModelConfig(
    num_classes=2,
    in_channels=1,
    height=28,
    width=28,
    beta=0.01,
    lambda_q=0.4,
    lambda_c=0.1,
    latent_dim=64,
    num_anchors=20,
    backbone_widths=(32, 64),
    encoder_widths=(),
)


def main():
    if not os.path.exists(os.path.join(DATA_DIR, "train-images-idx3-ubyte")):
        info = write_mnist_like(DATA_DIR, n_train_per_class=1000,
                                n_test_per_class=250, seed=7)
        print("wrote synthetic dataset:", json.dumps(info))

    train_ds = subset(load_mnist(DATA_DIR, "train"), (0, 1), 1000)
    test_ds = load_mnist(DATA_DIR, "test")
    test_ds = subset(test_ds, (0, 1), 250).with_stats(train_ds.mean, train_ds.std)
    print(f"train {len(train_ds)} / test {len(test_ds)} samples")

    model = AibModel(CONFIG, seed=0)
    result = train(
        model,
        train_ds,
        test_ds,
        epochs=5,
        out_dir=OUT_DIR,
        batch_size=128,
        base_lr=0.03,
        augment_data=False,
        seed=0,
    )

    # every step of the run is logged as one JSON line; the epoch summary
    # lines carry the test accuracy and the sample-weighted loss means
    print(f"\n{'epoch':>5} {'total':>8} {'nll':>8} {'kl':>8} "
          f"{'quant':>8} {'commit':>8} {'test_acc':>8}")
    with open(result.metrics_path) as fh:
        for line in fh:
            rec = json.loads(line)
            if "test_acc" not in rec:
                continue
            print(f"{rec['epoch']:>5} {rec['total']:>8.4f} {rec['nll']:>8.4f} "
                  f"{rec['kl']:>8.4f} {rec['quant']:>8.4f} "
                  f"{rec['commit']:>8.4f} {rec['test_acc']:>8.4f}")

    print(f"\nbest test accuracy {result.best_acc:.4f} "
          f"after {result.steps} steps")
    print(f"checkpoint: {result.checkpoint_path}")


if __name__ == "__main__":
    main()
