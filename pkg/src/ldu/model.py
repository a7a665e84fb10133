"""LDU network: feature extractor, DM layer, task head and uncertainty head.

Also holds the plain MLP baseline, confidence scores, ensemble averaging and
the JSON checkpoint format.

Checkpoint layout (``format = "ldu-checkpoint"``, ``version = 1``)::

    {"format": "ldu-checkpoint", "version": 1,
     "spec": {...ModelSpec fields...},
     "params": {"feature.0.weight": {"shape": [2, 17], "data": [...]}, ...}}

Arrays are stored row-major; floats are written with ``repr`` so a load
reproduces every parameter bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .layer import PrototypeBank, dm_forward_cos, dm_forward_l2, init_prototypes
from .tensor import ShapeError, Tensor, no_grad, tensor

CHECKPOINT_FORMAT = "ldu-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelSpec:
    input_dim: int = 2
    hidden: list[int] = field(default_factory=lambda: [17, 17])
    outputs: int = 2
    prototypes: int = 16
    task: str = "classification"  # classification | regression
    kind: str = "ldu"  # ldu | mlp
    dm_variant: str = "cosine"  # cosine | l2
    unit_norm: bool = True
    seed: int = 0

    def validate(self) -> None:
        if not self.hidden or any(w < 1 for w in self.hidden) or self.input_dim < 1:
            raise ValueError(f"inconsistent widths: input {self.input_dim}, hidden {self.hidden}")
        if self.outputs < 1 or self.prototypes < 1:
            raise ValueError("outputs and prototypes must be >= 1")
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.kind not in ("ldu", "mlp"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.dm_variant not in ("cosine", "l2"):
            raise ValueError(f"unknown DM variant {self.dm_variant!r}")


class Linear:
    """Affine map ``x @ weight + bias`` with PyTorch-style uniform fan-in init."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(fan_in)
        self.weight = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, fan_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class MLP:
    """ReLU after every layer; the output is the last hidden activation."""

    def __init__(self, widths: Sequence[int], rng: np.random.Generator):
        self.widths = list(widths)
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x).relu()
        return x


@dataclass
class ModelOutput:
    logits: Tensor
    embedding: Tensor
    unc_logit: Tensor | None
    latent: Tensor

    @property
    def batch_size(self) -> int:
        return self.logits.shape[0]


class _Base:
    spec: ModelSpec
    feature_extractor: MLP
    head: Linear

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.feature_extractor.layers):
            out.append((f"feature.{i}.weight", layer.weight))
            out.append((f"feature.{i}.bias", layer.bias))
        out += self._extra_parameters()
        return out

    def _extra_parameters(self) -> list[tuple[str, Tensor]]:
        return [("head.weight", self.head.weight), ("head.bias", self.head.bias)]

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ShapeError(f"input of shape {x.shape} does not match input width {self.spec.input_dim}")

    def __call__(self, x) -> ModelOutput:
        return self.forward(x)


class LDUModel(_Base):
    """``head(exp(-DM(h(x))))`` plus a one-layer uncertainty head on the same embedding."""

    def __init__(self, spec: ModelSpec):
        spec.validate()
        self.spec = spec
        widths = [spec.input_dim, *spec.hidden]
        self.feature_extractor = MLP(widths, np.random.default_rng([spec.seed, 1]))
        self.bank: PrototypeBank = init_prototypes(spec.prototypes, widths[-1], spec.seed, spec.unit_norm)
        rng = np.random.default_rng([spec.seed, 2])
        self.head = Linear(spec.prototypes, spec.outputs, rng)
        self.unc_head = Linear(spec.prototypes, 1, rng)

    @property
    def task(self) -> str:
        return self.spec.task

    def _extra_parameters(self):
        return [
            ("prototypes", self.bank.prototypes),
            ("head.weight", self.head.weight),
            ("head.bias", self.head.bias),
            ("unc_head.weight", self.unc_head.weight),
            ("unc_head.bias", self.unc_head.bias),
        ]

    def dm_scores(self, latent: Tensor) -> Tensor:
        if self.spec.dm_variant == "cosine":
            return dm_forward_cos(latent, self.bank)
        return dm_forward_l2(latent, self.bank)

    def forward(self, x) -> ModelOutput:
        return self.forward_with_scores(x)[0]

    def forward_with_scores(self, x) -> tuple[ModelOutput, Tensor]:
        x = tensor(x)
        self._check_input(x)
        latent = self.feature_extractor(x)
        scores = self.dm_scores(latent)
        embedding = (-scores).exp()
        out = ModelOutput(self.head(embedding), embedding, self.unc_head(embedding), latent)
        return out, scores


class PlainMLP(_Base):
    """Baseline ``head(h(x))`` with no prototypes and no uncertainty head."""

    def __init__(self, spec: ModelSpec):
        spec.validate()
        self.spec = spec
        widths = [spec.input_dim, *spec.hidden]
        self.feature_extractor = MLP(widths, np.random.default_rng([spec.seed, 1]))
        self.head = Linear(widths[-1], spec.outputs, np.random.default_rng([spec.seed, 2]))
        self.bank = None

    @property
    def task(self) -> str:
        return self.spec.task

    def forward(self, x) -> ModelOutput:
        x = tensor(x)
        self._check_input(x)
        latent = self.feature_extractor(x)
        return ModelOutput(self.head(latent), latent, None, latent)


def build_model(spec: ModelSpec) -> LDUModel | PlainMLP:
    return LDUModel(spec) if spec.kind == "ldu" else PlainMLP(spec)


def forward_full(model, x) -> ModelOutput:
    return model.forward(x)


def predict(model, x) -> ModelOutput:
    """Forward pass without graph recording."""
    with no_grad():
        return model.forward(x)


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def aleatoric_score(output: ModelOutput, task: str = "classification") -> np.ndarray:
    """Higher means more uncertain: ``1 - MCP`` for classification, ``sigmoid(g_unc)`` for regression."""
    if task == "classification":
        return 1.0 - softmax(output.logits.data).max(axis=1)
    if output.unc_logit is None:
        raise ValueError("regression aleatoric score needs an uncertainty head")
    return sigmoid(output.unc_logit.data[:, 0])


def epistemic_score(output: ModelOutput, mode: str = "unc_head") -> np.ndarray:
    """``sigmoid(g_unc)`` or ``e - max(embedding)``; higher means more uncertain."""
    if mode == "unc_head":
        if output.unc_logit is None:
            raise ValueError("model has no uncertainty head")
        return sigmoid(output.unc_logit.data[:, 0])
    if mode == "max_embed":
        return math.e - output.embedding.data.max(axis=1)
    raise ValueError(f"unknown epistemic mode {mode!r}")


def ensemble_predict(models: Sequence, x) -> np.ndarray:
    if not models:
        raise ValueError("ensemble needs at least one model")
    probs = [softmax(predict(m, x).logits.data) for m in models]
    if len({p.shape[1] for p in probs}) != 1:
        raise ShapeError("ensemble members disagree on output dimension")
    return np.mean(probs, axis=0)


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": asdict(model.spec),
        "params": {
            name: {"shape": list(p.shape), "data": p.data.reshape(-1).tolist()}
            for name, p in model.named_parameters()
        },
    }
    path.write_text(json.dumps(payload, indent=1) + "\n")
    return path


def load_checkpoint(path):
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an LDU checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    model = build_model(ModelSpec(**payload["spec"]))
    params = payload["params"]
    for name, p in model.named_parameters():
        if name not in params:
            raise ValueError(f"{path}: missing parameter {name}")
        entry = params[name]
        if tuple(entry["shape"]) != p.shape:
            raise ValueError(f"{path}: {name} has shape {entry['shape']}, model expects {list(p.shape)}")
        p.data[...] = np.asarray(entry["data"], dtype=np.float64).reshape(p.shape)
    return model
