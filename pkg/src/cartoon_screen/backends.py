"""Inference backends behind ModelDescriptor.

A backend loads its weights once, checks that ``feature_layer`` exists and
has width ``feature_dim``, then maps (N, 224, 224, 3) float32 batches to
(N, feature_dim) features. Heavy runtimes (torch, tensorflow) are imported
lazily so the stub pipeline runs without them.
"""

from __future__ import annotations

import hashlib
import re
import threading
from pathlib import Path

import cv2
import numpy as np

from .errors import ConfigurationError
from .features import ModelDescriptor
from .ingest import INPUT_SIDE


class InferenceBackend:
    """Base class: counts inference calls, serializes them through a lock."""

    def __init__(self, model: ModelDescriptor):
        self.model = model
        self.calls = 0
        self.frames = 0
        self._lock = threading.Lock()
        self._load()
        width = self.output_width()
        if width != model.feature_dim:
            raise ConfigurationError(
                f"{model.name}: layer {model.feature_layer!r} has width {width}, descriptor says {model.feature_dim}"
            )

    def _load(self):
        raise NotImplementedError

    def _forward(self, batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_width(self) -> int:
        probe = np.zeros((1, INPUT_SIDE, INPUT_SIDE, 3), dtype=np.float32)
        with self._lock:
            return int(self._forward(probe).shape[1])

    def run_batch(self, batch: np.ndarray) -> np.ndarray:
        with self._lock:
            self.calls += 1
            self.frames += len(batch)
            return np.asarray(self._forward(batch), dtype=np.float32)

    def _require_weights(self) -> Path:
        wp = self.model.weights_path
        if wp is None or not Path(wp).is_file():
            raise ConfigurationError(f"{self.model.name}: weights file not found: {wp}")
        return Path(wp)


class StubBackend(InferenceBackend):
    """Deterministic pseudo-features for tests and dry runs.

    Each image is area-averaged to an 8x8x3 grid and multiplied by a fixed
    seeded Gaussian projection, so features are linear in the image content.
    With ``options.noise`` the features are instead random draws seeded by a
    hash of the input bytes: deterministic, but carry no class signal.
    ``options.constant`` makes every feature that single value.
    """

    GRID = 8

    def _load(self):
        if self.model.feature_layer != "projection":
            raise ConfigurationError(f"{self.model.name}: stub backend only exposes layer 'projection'")
        opts = self.model.options
        self.seed = int(opts.get("seed", 0))
        self.noise = bool(opts.get("noise", False))
        self.constant = opts.get("constant")
        n_in = self.GRID * self.GRID * 3
        rng = np.random.default_rng(self.seed)
        self.projection = rng.standard_normal((n_in, self.model.feature_dim)) / np.sqrt(n_in)

    def _forward(self, batch):
        out = np.empty((len(batch), self.model.feature_dim), dtype=np.float32)
        if self.constant is not None:
            out[:] = float(self.constant)
            return out
        for i, img in enumerate(batch):
            if self.noise:
                digest = hashlib.sha256(np.ascontiguousarray(img).tobytes()).digest()
                rng = np.random.default_rng([self.seed, int.from_bytes(digest[:8], "little")])
                out[i] = rng.standard_normal(self.model.feature_dim)
            else:
                small = cv2.resize(img, (self.GRID, self.GRID), interpolation=cv2.INTER_AREA)
                out[i] = small.reshape(-1).astype(np.float64) / 255.0 @ self.projection
        return out


class TorchvisionBackend(InferenceBackend):
    """GoogLeNet, SqueezeNet (with extra 2-class head) and MobileNetV2 from torchvision.

    The tapped module's output is flattened; 4-D activations are globally
    average-pooled first.
    """

    def _load(self):
        import torch

        wp = self._require_weights()
        net = build_torchvision_net(self.model)
        try:
            state = torch.load(wp, map_location="cpu", weights_only=True)
        except Exception as exc:  # torch raises a zoo of types for bad files
            raise ConfigurationError(f"{self.model.name}: cannot load weights {wp}: {exc}") from None
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        if getattr(net, "two_class_head", False) and not any(k.startswith("base.") for k in state):
            # plain ImageNet SqueezeNet checkpoint: the 2-class head stays untrained, it is never tapped
            target, strict_keys = net.base, net.base.state_dict().keys()
        else:
            target, strict_keys = net, net.state_dict().keys()
        missing = [k for k in strict_keys if k not in state]
        if missing:
            raise ConfigurationError(f"{self.model.name}: weights missing {len(missing)} tensors, e.g. {missing[:3]}")
        target.load_state_dict({k: state[k] for k in strict_keys})
        net.eval()
        modules = dict(net.named_modules())
        if self.model.feature_layer not in modules:
            raise ConfigurationError(f"{self.model.name}: layer {self.model.feature_layer!r} not found")
        self.net = net
        self._captured = None
        modules[self.model.feature_layer].register_forward_hook(self._hook)

    def _hook(self, module, inputs, output):
        self._captured = output

    def _forward(self, batch):
        import torch

        x = torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2)))
        with torch.inference_mode():
            self.net(x)
            out = self._captured
            if out.ndim == 4:
                out = out.mean(dim=(2, 3))
            out = out.reshape(out.shape[0], -1)
        return out.numpy()


def build_torchvision_net(model: ModelDescriptor):
    """Untrained torchvision network for ``model.architecture``."""
    from torchvision import models

    arch = model.architecture
    opts = model.options
    if arch == "googlenet":
        return models.googlenet(
            weights=None, aux_logits=False, init_weights=False, transform_input=bool(opts.get("transform_input", False))
        )
    if arch == "mobilenet_v2":
        return models.mobilenet_v2(weights=None)
    if arch in ("squeezenet1_0", "squeezenet1_1"):
        return getattr(models, arch)(weights=None)
    if arch in ("squeezenet1_0_2class", "squeezenet1_1_2class"):
        return squeezenet_two_class(arch.removesuffix("_2class"))
    raise ConfigurationError(f"{model.name}: unsupported torchvision architecture {arch!r}")


def squeezenet_two_class(arch: str):
    """SqueezeNet whose 1000-way output feeds an extra 2-class linear head.

    Features are tapped at the 1000-unit layer (``base.classifier``); the head
    only exists so finetuned checkpoints load with their full state dict.
    """
    import torch.nn as nn
    from torchvision import models

    class SqueezeNetTwoClass(nn.Module):
        two_class_head = True

        def __init__(self):
            super().__init__()
            self.base = getattr(models, arch)(weights=None)
            self.head = nn.Linear(1000, 2)

        def forward(self, x):
            return self.head(self.base(x))

    return SqueezeNetTwoClass()


class KerasBackend(InferenceBackend):
    """NASNet-A Mobile (4 @ 1056) through keras.applications."""

    def _load(self):
        wp = self._require_weights()
        import keras

        arch = self.model.architecture
        if arch != "nasnet_mobile":
            raise ConfigurationError(f"{self.model.name}: unsupported keras architecture {arch!r}")
        net = keras.applications.NASNetMobile(weights=None, include_top=True, input_shape=(INPUT_SIDE, INPUT_SIDE, 3))
        try:
            net.load_weights(str(wp))
        except Exception as exc:
            raise ConfigurationError(f"{self.model.name}: cannot load weights {wp}: {exc}") from None
        layer = _find_layer(net, self.model.feature_layer)
        if layer is None:
            raise ConfigurationError(f"{self.model.name}: layer {self.model.feature_layer!r} not found")
        self.net = keras.Model(net.input, layer.output)

    def _forward(self, batch):
        out = np.asarray(self.net(batch, training=False))
        if out.ndim == 4:
            out = out.mean(axis=(1, 2))
        return out.reshape(out.shape[0], -1)


def _find_layer(net, name):
    """Exact name, else the unique layer carrying keras' per-session ``_N`` suffix."""
    matches = [l for l in net.layers if l.name == name]
    if not matches:
        matches = [l for l in net.layers if re.fullmatch(re.escape(name) + r"_\d+", l.name)]
    return matches[0] if len(matches) == 1 else None


BACKENDS = {
    "stub": StubBackend,
    "torchvision": TorchvisionBackend,
    "keras": KerasBackend,
}


def get_backend(model: ModelDescriptor) -> InferenceBackend:
    try:
        cls = BACKENDS[model.backend]
    except KeyError:
        raise ConfigurationError(f"{model.name}: unknown backend {model.backend!r}") from None
    return cls(model)
