"""Sequential CNN container and the layer-list builder.

A model spec is a list of dicts, one per layer, as found in experiment
configs:

    {"type": "conv", "out_channels": 16, "kernel": 3, "stride": 1, "padding": 1}
    {"type": "batchnorm"}
    {"type": "relu"}
    {"type": "maxpool", "kernel": 2}            # stride defaults to kernel
    {"type": "avgpool", "kernel": 2, "stride": 2}
    {"type": "dropout", "rate": 0.5}
    {"type": "flatten"}
    {"type": "linear", "out_features": 10}

Channel and feature counts are inferred by propagating the input shape, so
specs only name what changes.  The builder also records the resolved
geometry of every layer for the FLOPs meter.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError, ShapeError
from .layers import (
    AvgPool2d,
    BatchNorm2d,
    Conv2d,
    Dropout,
    Flatten,
    Layer,
    Linear,
    MaxPool2d,
    ReLU,
)
from .sparsify import SparsifyPolicy

LAYER_TYPES = ("conv", "batchnorm", "relu", "maxpool", "avgpool",
               "dropout", "flatten", "linear")


class SequentialModel:
    """Layers applied in order; owns all mutable training state."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, int, int]):
        self.layers = layers
        self.input_shape = input_shape

    def forward(self, x: np.ndarray, training: bool = True) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, training=training)
        return x

    def backward(self, grad: np.ndarray,
                 conv_policy: SparsifyPolicy | None = None) -> np.ndarray:
        """Backpropagate; every conv layer uses ``conv_policy`` (dense when
        None or when the policy's drop rate is zero)."""
        for layer in reversed(self.layers):
            if isinstance(layer, Conv2d):
                use = conv_policy if conv_policy and conv_policy.drop_rate > 0 else None
                grad = layer.backward(grad, policy=use)
            else:
                grad = layer.backward(grad)
        return grad

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params().values())
        return out

    def named_layers(self):
        return [(layer.name, layer) for layer in self.layers]

    def predict_logits(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        chunks = []
        for start in range(0, x.shape[0], batch_size):
            chunks.append(self.forward(x[start : start + batch_size],
                                       training=False))
        return np.concatenate(chunks, axis=0)


def _require(spec: dict, key: str, idx: int):
    if key not in spec:
        raise ConfigError(f"model layer {idx}: missing required key {key!r}",
                          [f"model[{idx}].{key}"])
    return spec[key]


def build_model(
    layer_specs: list[dict],
    input_shape: tuple[int, int, int],
    *,
    dtype=np.float64,
    seed: int = 0,
) -> tuple[SequentialModel, list[dict]]:
    """Instantiate layers from a spec list and resolve every shape.

    Returns the model plus a geometry list (one dict per layer) holding the
    resolved sizes the FLOPs formulas need.  Raises ShapeError naming the
    layer when a shape cannot be resolved.
    """
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    geometry: list[dict] = []
    shape = tuple(input_shape)

    for idx, spec in enumerate(layer_specs):
        kind = spec.get("type")
        if kind not in LAYER_TYPES:
            raise ConfigError(
                f"model layer {idx}: unknown type {kind!r}",
                [f"model[{idx}].type"],
            )
        name = f"{kind}{idx}"
        geom: dict = {"id": name, "kind": kind}
        try:
            if kind == "conv":
                if len(shape) != 3:
                    raise ShapeError(f"{name}: expects a 4-d input, have {shape}")
                layer = Conv2d(
                    shape[0],
                    _require(spec, "out_channels", idx),
                    _require(spec, "kernel", idx),
                    stride=spec.get("stride", 1),
                    padding=spec.get("padding", 0),
                    dtype=dtype,
                    rng=rng,
                )
                layer.name = name
                out = layer.out_shape(shape)
                geom.update(
                    c_in=shape[0], c_out=out[0], h_out=out[1], w_out=out[2],
                    k=layer.kernel,
                )
                shape = out
            elif kind == "batchnorm":
                if len(shape) != 3:
                    raise ShapeError(f"{name}: expects a 4-d input, have {shape}")
                layer = BatchNorm2d(shape[0], dtype=dtype)
                layer.name = name
                geom.update(c=shape[0], h=shape[1], w=shape[2])
            elif kind == "relu":
                layer = ReLU()
                layer.name = name
            elif kind in ("maxpool", "avgpool"):
                if len(shape) != 3:
                    raise ShapeError(f"{name}: expects a 4-d input, have {shape}")
                cls = MaxPool2d if kind == "maxpool" else AvgPool2d
                layer = cls(_require(spec, "kernel", idx), spec.get("stride"))
                layer.name = name
                shape = layer.out_shape(shape)
            elif kind == "dropout":
                if len(shape) == 3:
                    geom.update(c=shape[0], h=shape[1], w=shape[2])
                else:
                    # Dropout after flatten: count it as a 1x1 feature map.
                    geom.update(c=shape[0], h=1, w=1)
                layer = Dropout(_require(spec, "rate", idx), seed=seed + idx)
                layer.name = name
            elif kind == "flatten":
                layer = Flatten()
                layer.name = name
                shape = layer.out_shape(shape)
            else:  # linear
                if len(shape) != 1:
                    raise ShapeError(
                        f"{name}: expects a flattened input, have {shape} "
                        f"(add a flatten layer first)"
                    )
                layer = Linear(shape[0], _require(spec, "out_features", idx),
                               dtype=dtype, rng=rng)
                layer.name = name
                shape = layer.out_shape(shape)
        except ShapeError as exc:
            msg = str(exc)
            raise ShapeError(msg if name in msg else f"{name}: {msg}") from exc
        layers.append(layer)
        geometry.append(geom)

    return SequentialModel(layers, tuple(input_shape)), geometry
