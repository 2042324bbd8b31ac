"""Line-oriented key=value run configuration.

Files hold one ``key=value`` per line; blank lines and ``#`` comments are
skipped; later assignments win, and ``--set key=value`` overrides win over
the file. Unknown keys are rejected by name, parse failures report the
line number, and every command writes the fully-resolved configuration
(sorted, canonical formatting) into its output directory so a run can be
reproduced from that file alone.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .exceptions import ConfigError
from .model import ModelConfig

_DATASET_SHAPES = {"mnist": (1, 28, 28), "cifar10": (3, 32, 32)}


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_int_tuple(s: str) -> tuple:
    parts = [p.strip() for p in s.split(",") if p.strip()]
    if not parts:
        raise ValueError("expected a comma-separated list of integers")
    return tuple(int(p) for p in parts)


def _parse_optional_int_tuple(s: str) -> tuple:
    # empty value = no blocks (the encoder may be a bare flatten + FC)
    return tuple(int(p) for p in s.split(",") if p.strip())


def _parse_classes(s: str):
    s = s.strip()
    return None if not s else _parse_int_tuple(s)


def _parse_optional_str(s: str):
    # unset optional paths round-trip through the effective config as ""
    return s or None


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    # data
    dataset: str = "mnist"
    data_dir: str | None = None
    classes: tuple | None = None
    per_class_train: int = 0
    per_class_test: int = 0
    augment: bool = True
    # model
    beta: float = 0.01
    lambda_q: float = 0.4
    lambda_c: float = 0.1
    latent_dim: int = 256
    num_anchors: int = 20
    n_att_samples: int = 4
    n_z_samples: int = 12
    backbone_widths: tuple = (32, 64)
    encoder_widths: tuple = (64,)
    use_quantizer: bool = True
    sigma_floor: float = 1e-6
    precision: str = "double"
    # training
    epochs: int = 5
    batch_size: int = 128
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    objective: str = "full"
    out_dir: str | None = None
    # evaluation
    eval_mode: str = "mean"
    eval_average: str = "prob"
    eval_split: str = "test"

    def validate(self) -> None:
        _require_choice("dataset", self.dataset, tuple(_DATASET_SHAPES))
        _require_choice("precision", self.precision, ("double", "single"))
        _require_choice("objective", self.objective, ("full", "ce"))
        _require_choice("eval_mode", self.eval_mode, ("mean", "stochastic"))
        _require_choice("eval_average", self.eval_average, ("prob", "logprob"))
        _require_choice("eval_split", self.eval_split, ("train", "test"))
        if self.classes is not None and len(self.classes) < 2:
            raise ConfigError("classes must name at least two classes")

    def num_classes(self) -> int:
        return len(self.classes) if self.classes is not None else 10

    def model_config(self) -> ModelConfig:
        c, h, w = _DATASET_SHAPES[self.dataset]
        return ModelConfig(
            num_classes=self.num_classes(),
            in_channels=c,
            height=h,
            width=w,
            beta=self.beta,
            lambda_q=self.lambda_q,
            lambda_c=self.lambda_c,
            latent_dim=self.latent_dim,
            num_anchors=self.num_anchors,
            n_att_samples=self.n_att_samples,
            n_z_samples=self.n_z_samples,
            backbone_widths=self.backbone_widths,
            encoder_widths=self.encoder_widths,
            use_quantizer=self.use_quantizer,
            sigma_floor=self.sigma_floor,
            precision=self.precision,
        )

    def require(self, *keys: str) -> None:
        missing = [k for k in keys if getattr(self, k) is None]
        if missing:
            raise ConfigError(
                "missing required configuration keys: " + ", ".join(sorted(missing))
            )

    def load_datasets(self) -> tuple:
        """(train, test) datasets; the test split standardizes with train stats."""
        from .data import load_cifar10, load_mnist, subset

        self.require("data_dir")
        loader = load_mnist if self.dataset == "mnist" else load_cifar10
        train = loader(self.data_dir, "train")
        test = loader(self.data_dir, "test")
        if self.classes is not None:
            train = subset(train, self.classes, self.per_class_train)
            test = subset(test, self.classes, self.per_class_test)
        test = test.with_stats(train.mean, train.std)
        return train, test

    def effective_lines(self) -> list:
        return [f"{f.name}={_fmt(getattr(self, f.name))}" for f in
                sorted(fields(self), key=lambda f: f.name)]

    def write_effective(self, out_dir) -> str:
        path = os.path.join(out_dir, "config.cfg")
        os.makedirs(out_dir, exist_ok=True)
        with open(path, "w") as fh:
            for line in self.effective_lines():
                fh.write(line + "\n")
        return path


def _require_choice(key, value, choices) -> None:
    if value not in choices:
        raise ConfigError(f"{key} must be one of {', '.join(choices)}; got {value!r}")


_PARSERS = {
    "dataset": str,
    "data_dir": _parse_optional_str,
    "classes": _parse_classes,
    "per_class_train": int,
    "per_class_test": int,
    "augment": _parse_bool,
    "beta": float,
    "lambda_q": float,
    "lambda_c": float,
    "latent_dim": int,
    "num_anchors": int,
    "n_att_samples": int,
    "n_z_samples": int,
    "backbone_widths": _parse_int_tuple,
    "encoder_widths": _parse_optional_int_tuple,
    "use_quantizer": _parse_bool,
    "sigma_floor": float,
    "precision": str,
    "epochs": int,
    "batch_size": int,
    "base_lr": float,
    "momentum": float,
    "weight_decay": float,
    "seed": int,
    "objective": str,
    "out_dir": _parse_optional_str,
    "eval_mode": str,
    "eval_average": str,
    "eval_split": str,
}


def _parse_assignment(text: str, where: str) -> tuple:
    if "=" not in text:
        raise ConfigError(f"{where}: expected key=value, got {text!r}")
    key, _, value = text.partition("=")
    key = key.strip()
    value = value.strip()
    if key not in _PARSERS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        return key, _PARSERS[key](value)
    except ValueError as e:
        raise ConfigError(f"{where}: bad value for {key!r}: {e}") from None


def load_run_config(path=None, overrides=()) -> RunConfig:
    """Build a RunConfig from an optional file plus --set overrides."""
    values: dict = {}
    if path is not None:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                key, value = _parse_assignment(line, f"{path}:{lineno}")
                values[key] = value
    for text in overrides:
        key, value = _parse_assignment(text, "--set")
        values[key] = value
    if "data_dir" not in values and os.environ.get("AIB_DATA_DIR"):
        values["data_dir"] = os.environ["AIB_DATA_DIR"]
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg
