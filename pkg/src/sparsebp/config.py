"""Experiment configuration: a single YAML file, strictly validated.

Every key is documented in the README; unknown keys are rejected so typos
fail loudly.  Validation collects all problems before raising, so a bad
config reports every offending field at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .exceptions import ConfigError
from .model import LAYER_TYPES
from .schedule import KINDS as SCHEDULE_KINDS
from .schedule import TWO_EPOCHS
from .sparsify import MODES as SPARSIFY_MODES

DATASETS = ("mnist", "fashion-mnist", "cifar10")

_LAYER_KEYS = {
    "conv": {"type", "out_channels", "kernel", "stride", "padding"},
    "batchnorm": {"type"},
    "relu": {"type"},
    "maxpool": {"type", "kernel", "stride"},
    "avgpool": {"type", "kernel", "stride"},
    "dropout": {"type", "rate"},
    "flatten": {"type"},
    "linear": {"type", "out_features"},
}


@dataclass
class ExperimentConfig:
    dataset: str
    data_root: str
    output_dir: str
    model: list[dict]
    epochs: int
    batch_size: int = 128
    seed: int = 0
    precision: int = 32
    optimizer_kind: str = "adam"
    lr: float = 2e-4
    betas: tuple[float, float] = (0.9, 0.999)
    sparsify_mode: str = "channel"
    drop_target: float = 0.0
    scheduler: str = "constant"
    period: int | str = TWO_EPOCHS
    extra: dict = field(default_factory=dict)


def _check_int(errors, fields, cfg, key, minimum, default=None):
    value = cfg.get(key, default)
    if value is None:
        errors.append(f"{key}: required")
        fields.append(key)
        return default
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        errors.append(f"{key}: must be an integer >= {minimum}, got {value!r}")
        fields.append(key)
        return default
    return value


def validate_config(cfg: dict, base_dir: str | Path = ".",
                    require_data: bool = True) -> ExperimentConfig:
    """Validate a parsed config mapping into an ExperimentConfig.

    ``require_data`` relaxes the data_root existence check for commands
    that only need the model geometry (the FLOPs report).
    """
    errors: list[str] = []
    fields: list[str] = []
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping of keys to values", ["<root>"])

    known = {"dataset", "data_root", "output_dir", "seed", "precision",
             "epochs", "batch_size", "optimizer", "sparsify", "model"}
    for key in sorted(set(cfg) - known):
        errors.append(f"{key}: unknown key")
        fields.append(key)

    dataset = cfg.get("dataset")
    if dataset not in DATASETS:
        errors.append(f"dataset: must be one of {DATASETS}, got {dataset!r}")
        fields.append("dataset")

    data_root = cfg.get("data_root")
    if not isinstance(data_root, str) or not data_root:
        errors.append("data_root: required path string")
        fields.append("data_root")
    elif require_data and not (Path(base_dir) / data_root).exists():
        errors.append(f"data_root: path does not exist: {data_root}")
        fields.append("data_root")

    output_dir = cfg.get("output_dir")
    if not isinstance(output_dir, str) or not output_dir:
        errors.append("output_dir: required path string")
        fields.append("output_dir")

    seed = _check_int(errors, fields, cfg, "seed", 0, default=0)
    epochs = _check_int(errors, fields, cfg, "epochs", 1)
    batch_size = _check_int(errors, fields, cfg, "batch_size", 1, default=128)

    precision = cfg.get("precision", 32)
    if precision not in (32, 64):
        errors.append(f"precision: must be 32 or 64, got {precision!r}")
        fields.append("precision")

    opt = cfg.get("optimizer", {})
    kind, lr, betas = "adam", 2e-4, (0.9, 0.999)
    if not isinstance(opt, dict):
        errors.append("optimizer: must be a mapping")
        fields.append("optimizer")
    else:
        for key in sorted(set(opt) - {"kind", "lr", "betas"}):
            errors.append(f"optimizer.{key}: unknown key")
            fields.append(f"optimizer.{key}")
        kind = opt.get("kind", "adam")
        if kind not in ("adam", "sgd"):
            errors.append(f"optimizer.kind: must be adam or sgd, got {kind!r}")
            fields.append("optimizer.kind")
        lr = opt.get("lr", 2e-4)
        if not isinstance(lr, (int, float)) or lr <= 0:
            errors.append(f"optimizer.lr: must be a positive number, got {lr!r}")
            fields.append("optimizer.lr")
        betas = opt.get("betas", (0.9, 0.999))
        if (not isinstance(betas, (list, tuple)) or len(betas) != 2
                or not all(isinstance(b, (int, float)) and 0 <= b < 1 for b in betas)):
            errors.append(f"optimizer.betas: must be two numbers in [0, 1), got {betas!r}")
            fields.append("optimizer.betas")
        else:
            betas = (float(betas[0]), float(betas[1]))

    sp = cfg.get("sparsify", {})
    mode, target, scheduler, period = "channel", 0.0, "constant", TWO_EPOCHS
    if not isinstance(sp, dict):
        errors.append("sparsify: must be a mapping")
        fields.append("sparsify")
    else:
        for key in sorted(set(sp) - {"mode", "target", "scheduler", "period"}):
            errors.append(f"sparsify.{key}: unknown key")
            fields.append(f"sparsify.{key}")
        mode = sp.get("mode", "channel")
        if mode not in SPARSIFY_MODES:
            errors.append(f"sparsify.mode: must be one of {SPARSIFY_MODES}, got {mode!r}")
            fields.append("sparsify.mode")
        target = sp.get("target", 0.0)
        if not isinstance(target, (int, float)) or not 0.0 <= target < 1.0:
            errors.append(f"sparsify.target: must be in [0, 1), got {target!r}")
            fields.append("sparsify.target")
        scheduler = sp.get("scheduler", "constant")
        if scheduler not in SCHEDULE_KINDS:
            errors.append(
                f"sparsify.scheduler: must be one of {SCHEDULE_KINDS}, "
                f"got {scheduler!r}"
            )
            fields.append("sparsify.scheduler")
        period = sp.get("period", TWO_EPOCHS)
        if not (period == TWO_EPOCHS
                or (isinstance(period, int) and not isinstance(period, bool)
                    and period >= 1)):
            errors.append(
                f"sparsify.period: must be a positive iteration count or "
                f"{TWO_EPOCHS!r}, got {period!r}"
            )
            fields.append("sparsify.period")

    model = cfg.get("model")
    if not isinstance(model, list) or not model:
        errors.append("model: required non-empty list of layer mappings")
        fields.append("model")
        model = []
    else:
        for i, layer in enumerate(model):
            if not isinstance(layer, dict):
                errors.append(f"model[{i}]: must be a mapping")
                fields.append(f"model[{i}]")
                continue
            kind_l = layer.get("type")
            if kind_l not in LAYER_TYPES:
                errors.append(
                    f"model[{i}].type: must be one of {LAYER_TYPES}, got {kind_l!r}"
                )
                fields.append(f"model[{i}].type")
                continue
            for key in sorted(set(layer) - _LAYER_KEYS[kind_l]):
                errors.append(f"model[{i}].{key}: unknown key for type {kind_l}")
                fields.append(f"model[{i}].{key}")

    if errors:
        raise ConfigError(
            "invalid config:\n  " + "\n  ".join(errors), fields
        )
    return ExperimentConfig(
        dataset=dataset,
        data_root=str(Path(base_dir) / data_root),
        output_dir=str(Path(base_dir) / output_dir),
        model=model,
        epochs=epochs,
        batch_size=batch_size,
        seed=seed,
        precision=precision,
        optimizer_kind=kind,
        lr=float(lr),
        betas=betas,
        sparsify_mode=mode,
        drop_target=float(target),
        scheduler=scheduler,
        period=period,
    )


def load_config(path: str | Path, require_data: bool = True) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}", ["<path>"])
    try:
        cfg = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}", ["<syntax>"]) from exc
    return validate_config(cfg, base_dir=path.parent, require_data=require_data)
