"""Dataset ingestion, augmentation, and the input modifications.

Images are held as raw [0,1] floats with per-channel standardization
statistics recorded alongside; batches are standardized on the way into
the model. All modifications (occlusion, frequency filtering) operate in
raw pixel space before standardization, so untouched pixels standardize
to bit-identical values.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ConfigError, FormatError, InputError
from .variational import NoiseSource

MOD_KINDS = ("none", "occlude-color", "occlude-patch", "freq-high", "freq-low")


@dataclass
class ImageDataset:
    """Raw [0,1] images [N, C, H, W] plus labels and channel statistics."""

    images: np.ndarray
    labels: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    split: str = ""

    def __len__(self) -> int:
        return self.images.shape[0]

    def standardize(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.mean[:, None, None]) / self.std[:, None, None]

    def batch(self, indices) -> np.ndarray:
        return self.standardize(self.images[indices])

    def with_stats(self, mean: np.ndarray, std: np.ndarray) -> "ImageDataset":
        return replace(self, mean=np.asarray(mean, dtype=np.float64).copy(),
                       std=np.asarray(std, dtype=np.float64).copy())


def _make_dataset(images: np.ndarray, labels: np.ndarray, split: str) -> ImageDataset:
    if images.shape[0] == 0:
        raise InputError(f"dataset split {split!r} is empty")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    mean = images.mean(axis=(0, 2, 3))
    std = images.std(axis=(0, 2, 3))
    std = np.where(std < 1e-8, 1.0, std)
    return ImageDataset(
        images=images,
        labels=labels.astype(np.int64),
        mean=mean,
        std=std,
        split=split,
    )


# IDX (big-endian magic 0x00000803 for 3-D ubyte images, 0x00000801 for labels)

def read_idx(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(4)
        if len(head) != 4:
            raise FormatError(f"{path}: truncated IDX magic at offset 0")
        if head[0] != 0 or head[1] != 0:
            raise FormatError(f"{path}: bad IDX magic {head!r} at offset 0")
        if head[2] != 0x08:
            raise FormatError(
                f"{path}: unsupported IDX element type 0x{head[2]:02x} at offset 2"
            )
        ndim = head[3]
        dims = []
        for i in range(ndim):
            raw = fh.read(4)
            if len(raw) != 4:
                raise FormatError(
                    f"{path}: truncated IDX dimension at offset {4 + 4 * i}"
                )
            dims.append(struct.unpack(">I", raw)[0])
        count = 1
        for d in dims:
            count *= d
        data = fh.read(count)
        if len(data) != count:
            raise FormatError(
                f"{path}: truncated IDX data at offset {4 + 4 * ndim + len(data)} "
                f"(wanted {count} bytes, got {len(data)})"
            )
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after IDX data")
    return np.frombuffer(data, dtype=np.uint8).reshape(dims).copy()


def write_idx(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(bytes([0, 0, 0x08, arr.ndim]))
        for d in arr.shape:
            fh.write(struct.pack(">I", d))
        fh.write(arr.tobytes())


def load_mnist(data_dir, split: str = "train") -> ImageDataset:
    """Read the canonical IDX pair for one split of an MNIST-layout directory."""
    if split not in ("train", "test"):
        raise ConfigError(f"unknown split {split!r}")
    prefix = "train" if split == "train" else "t10k"
    img_path = os.path.join(data_dir, f"{prefix}-images-idx3-ubyte")
    lbl_path = os.path.join(data_dir, f"{prefix}-labels-idx1-ubyte")
    for p in (img_path, lbl_path):
        if not os.path.exists(p):
            raise FormatError(f"missing dataset file {p}")
    images = read_idx(img_path)
    labels = read_idx(lbl_path)
    if images.ndim != 3:
        raise FormatError(f"{img_path}: expected 3-D image tensor, got rank {images.ndim}")
    if labels.ndim != 1:
        raise FormatError(f"{lbl_path}: expected 1-D labels, got rank {labels.ndim}")
    raw = images.astype(np.float64)[:, None, :, :] / 255.0
    return _make_dataset(raw, labels, split)


# CIFAR-10 binary batches: 10000 records of 1 label byte + 3072 pixel bytes

CIFAR_RECORD = 3073


def read_cifar_batch(path) -> tuple:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) == 0 or len(buf) % CIFAR_RECORD != 0:
        raise FormatError(
            f"{path}: truncated CIFAR record at offset "
            f"{len(buf) - (len(buf) % CIFAR_RECORD)}"
        )
    records = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0]
    bad = np.where(labels > 9)[0]
    if bad.size:
        raise FormatError(
            f"{path}: invalid label byte {labels[bad[0]]} at offset "
            f"{int(bad[0]) * CIFAR_RECORD}"
        )
    images = records[:, 1:].reshape(-1, 3, 32, 32)
    return images.copy(), labels.copy()


def write_cifar_batch(path, images: np.ndarray, labels: np.ndarray) -> None:
    imgs = np.ascontiguousarray(images, dtype=np.uint8).reshape(len(labels), 3072)
    recs = np.concatenate(
        [np.asarray(labels, dtype=np.uint8)[:, None], imgs], axis=1
    )
    with open(path, "wb") as fh:
        fh.write(recs.tobytes())


def load_cifar10(data_dir, split: str = "train") -> ImageDataset:
    if split == "train":
        names = [f"data_batch_{i}.bin" for i in range(1, 6)]
    elif split == "test":
        names = ["test_batch.bin"]
    else:
        raise ConfigError(f"unknown split {split!r}")
    paths = [os.path.join(data_dir, n) for n in names]
    present = [p for p in paths if os.path.exists(p)]
    if not present:
        raise FormatError(f"no CIFAR-10 {split} batch files under {data_dir}")
    all_images, all_labels = [], []
    for p in present:
        imgs, lbls = read_cifar_batch(p)
        all_images.append(imgs)
        all_labels.append(lbls)
    raw = np.concatenate(all_images).astype(np.float64) / 255.0
    labels = np.concatenate(all_labels)
    return _make_dataset(raw, labels, split)


def subset(ds: ImageDataset, classes, per_class: int = 0) -> ImageDataset:
    """Filter to ``classes`` (labels remapped to their sorted order) keeping at
    most ``per_class`` samples of each, earliest-first; 0 means no cap.

    Standardization statistics are inherited from the parent dataset.
    """
    wanted = sorted(set(int(c) for c in classes))
    if not wanted:
        raise ConfigError("subset requires at least one class")
    remap = {c: i for i, c in enumerate(wanted)}
    keep = []
    for c in wanted:
        idx = np.where(ds.labels == c)[0]
        keep.append(idx if per_class <= 0 else idx[:per_class])
    order = np.sort(np.concatenate(keep))
    if order.size == 0:
        raise InputError(f"no samples remain after selecting classes {wanted}")
    labels = np.array([remap[int(l)] for l in ds.labels[order]], dtype=np.int64)
    return ImageDataset(
        images=ds.images[order],
        labels=labels,
        mean=ds.mean,
        std=ds.std,
        split=ds.split,
    )


def augment(batch: np.ndarray, gen: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random horizontal flip then zero-pad-and-crop at a random offset."""
    n, c, h, w = batch.shape
    out = np.empty_like(batch)
    for i in range(n):
        img = batch[i]
        if gen.random() < 0.5:
            img = img[:, :, ::-1]
        padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad)))
        dy = int(gen.integers(0, 2 * pad + 1))
        dx = int(gen.integers(0, 2 * pad + 1))
        out[i] = padded[:, dy : dy + h, dx : dx + w]
    return out


def occlude(
    batch: np.ndarray,
    p: int,
    source: str = "color",
    gen: np.random.Generator | None = None,
    patch_images: np.ndarray | None = None,
) -> np.ndarray:
    """Replace one random p-by-p window per image, in raw [0,1] space.

    ``color`` fills the window with one uniformly random color per image;
    ``patch`` pastes a random p-by-p crop of a random ``patch_images``
    entry. Pixels outside the window are left bit-identical.
    """
    n, c, h, w = batch.shape
    if not 1 <= p <= min(h, w):
        raise InputError(f"occlusion window {p} does not fit a {h}x{w} image")
    if source not in ("color", "patch"):
        raise ConfigError(f"unknown occlusion source {source!r}")
    if source == "patch" and patch_images is None:
        raise ConfigError("occlude: patch source requested but no patch dataset given")
    if gen is None:
        gen = np.random.default_rng(0)
    out = batch.copy()
    for i in range(n):
        top = int(gen.integers(0, h - p + 1))
        left = int(gen.integers(0, w - p + 1))
        if source == "color":
            color = gen.random(c)
            out[i, :, top : top + p, left : left + p] = color[:, None, None]
        else:
            m, pc, ph, pw = patch_images.shape
            if p > min(ph, pw):
                raise InputError(f"patch images too small for window {p}")
            j = int(gen.integers(0, m))
            ptop = int(gen.integers(0, ph - p + 1))
            pleft = int(gen.integers(0, pw - p + 1))
            crop = patch_images[j, :, ptop : ptop + p, pleft : pleft + p]
            if pc == c:
                out[i, :, top : top + p, left : left + p] = crop
            else:
                out[i, :, top : top + p, left : left + p] = crop.mean(axis=0)
    return out


# frequency-domain modifications

def dft2(channel: np.ndarray) -> np.ndarray:
    """Centered 2-D spectrum (DC bin at [H//2, W//2])."""
    return np.fft.fftshift(np.fft.fft2(channel))


def idft2(spectrum: np.ndarray) -> np.ndarray:
    """Inverse of ``dft2``; returns the real part."""
    return np.fft.ifft2(np.fft.ifftshift(spectrum)).real


def radius_grid(h: int, w: int) -> np.ndarray:
    """Euclidean bin distance from the centered spectrum's center."""
    ci, cj = h // 2, w // 2
    ii, jj = np.ogrid[0:h, 0:w]
    return np.hypot(ii - ci, jj - cj)


def freq_mask(h: int, w: int, keep: str, r0: float) -> np.ndarray:
    """Boolean mask of retained bins: low keeps r <= r0, high keeps r > r0."""
    if r0 <= 0:
        raise InputError(f"frequency cutoff must be positive, got {r0}")
    r = radius_grid(h, w)
    if keep == "low":
        return r <= r0
    if keep == "high":
        return r > r0
    raise ConfigError(f"unknown frequency keep mode {keep!r}")


def freq_filter(batch: np.ndarray, keep: str, r0: float) -> np.ndarray:
    """Per-channel spectral mask, reconstruct, clamp to [0,1]."""
    n, c, h, w = batch.shape
    mask = freq_mask(h, w, keep, r0)
    out = np.empty_like(batch)
    for i in range(n):
        for ch in range(c):
            out[i, ch] = idft2(dft2(batch[i, ch]) * mask)
    return np.clip(out, 0.0, 1.0)


@dataclass
class Modification:
    """Input modification descriptor for the interpretability protocol."""

    kind: str = "none"
    p: int = 8
    r: float = 4.0
    seed: int = 0

    def validate(self, h: int, w: int) -> None:
        if self.kind not in MOD_KINDS:
            raise ConfigError(f"unknown modification kind {self.kind!r}")
        if self.kind.startswith("occlude") and not 1 <= self.p <= min(h, w):
            raise InputError(
                f"occlusion window {self.p} does not fit a {h}x{w} image"
            )
        if self.kind.startswith("freq") and self.r <= 0:
            raise InputError(f"frequency radius must be positive, got {self.r}")

    def as_dict(self) -> dict:
        return {"kind": self.kind, "p": self.p, "r": self.r, "seed": self.seed}


def apply_modification(
    ds: ImageDataset,
    mod: Modification,
    patch_ds: ImageDataset | None = None,
) -> ImageDataset:
    """New dataset with modified raw images; stats and labels are shared."""
    h, w = ds.images.shape[2:]
    mod.validate(h, w)
    if mod.kind == "none":
        images = ds.images
    elif mod.kind in ("occlude-color", "occlude-patch"):
        gen = NoiseSource(mod.seed).generator("occlude")
        source = "color" if mod.kind == "occlude-color" else "patch"
        images = occlude(
            ds.images,
            mod.p,
            source=source,
            gen=gen,
            patch_images=None if patch_ds is None else patch_ds.images,
        )
    else:
        keep = "high" if mod.kind == "freq-high" else "low"
        images = freq_filter(ds.images, keep, mod.r)
    return ImageDataset(
        images=images, labels=ds.labels, mean=ds.mean, std=ds.std, split=ds.split
    )
