"""Strict YAML experiment configuration.

Every key maps onto a dataclass field; unknown keys, wrong types and
inconsistent model/dataset widths are errors that name the key path and the
line. ``configs/reference.yaml`` lists every key with its default.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .model import ModelSpec
from .training import TrainConfig

OUTPUT_ROOT_ENV = "LDU_OUTPUT_ROOT"
METRIC_NAMES = ("accuracy", "ece", "auroc", "aupr", "fpr_at_95_tpr", "ause_rmse", "ause_absrel")


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSpec:
    kind: str = "two_moons"  # two_moons | blobs | sinusoid
    n_train: int = 1000
    n_test: int = 500
    noise: float = 0.1  # two moons jitter std
    classes: int = 4  # blobs
    dim: int = 2  # blobs
    spread: float = 1.0  # blobs
    x_range: list[float] = field(default_factory=lambda: [-3.0, 3.0])  # sinusoid
    noise_mode: str = "heteroscedastic"  # sinusoid: heteroscedastic | constant | none
    noise_level: float = 0.1  # sinusoid

    def input_dim(self) -> int:
        return {"two_moons": 2, "blobs": self.dim, "sinusoid": 1}[self.kind]

    def outputs(self) -> int:
        return {"two_moons": 2, "blobs": self.classes, "sinusoid": 1}[self.kind]

    def task(self) -> str:
        return "regression" if self.kind == "sinusoid" else "classification"


@dataclass
class OODSpec:
    kind: str = "ring"  # ring | shifted_blobs | none
    n: int = 500
    inner_radius: float = 2.0
    outer_radius: float = 3.0
    center: list[float] = field(default_factory=lambda: [0.5, 0.25])


@dataclass
class EvalSpec:
    metrics: list[str] = field(default_factory=lambda: list(METRIC_NAMES))
    ece_bins: int = 15
    ause_steps: int = 100
    ood: OODSpec = field(default_factory=OODSpec)
    ood_score: str = "auto"  # auto | epistemic | aleatoric | max_embed
    grid_resolution: int = 50


@dataclass
class PlotSpec:
    projection: bool = True
    grid: bool = True
    curves: bool = True


@dataclass
class ExperimentSpec:
    name: str = "two_moons"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    output_dir: str = "runs"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalSpec = field(default_factory=EvalSpec)
    plots: PlotSpec = field(default_factory=PlotSpec)

    def validate(self) -> None:
        d = self.dataset
        if d.kind not in ("two_moons", "blobs", "sinusoid"):
            raise ConfigError(f"dataset.kind: unknown dataset {d.kind!r}")
        if d.n_train < 2 or d.n_test < 2:
            raise ConfigError("dataset: n_train and n_test must be >= 2")
        if d.kind == "two_moons" and (d.n_train % 2 or d.n_test % 2):
            raise ConfigError("dataset: two_moons needs even n_train and n_test")
        if d.kind == "blobs" and (d.n_train % d.classes or d.n_test % d.classes):
            raise ConfigError("dataset: blobs needs n_train and n_test divisible by classes")
        if d.noise_mode not in ("heteroscedastic", "constant", "none"):
            raise ConfigError(f"dataset.noise_mode: unknown mode {d.noise_mode!r}")
        if len(d.x_range) != 2 or d.x_range[0] >= d.x_range[1]:
            raise ConfigError("dataset.x_range must be [low, high] with low < high")
        m = self.model
        for key, want in (("input_dim", d.input_dim()), ("outputs", d.outputs()), ("task", d.task())):
            if getattr(m, key) != want:
                raise ConfigError(f"model.{key} is {getattr(m, key)!r} but dataset {d.kind} needs {want!r}")
        try:
            m.validate()
            self.train.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        e = self.evaluation
        unknown = [k for k in e.metrics if k not in METRIC_NAMES]
        if unknown:
            raise ConfigError(f"evaluation.metrics: unknown metric {unknown[0]!r}")
        if e.ood.kind not in ("ring", "shifted_blobs", "none"):
            raise ConfigError(f"evaluation.ood.kind: unknown OOD set {e.ood.kind!r}")
        if e.ood.kind == "shifted_blobs" and d.kind != "blobs":
            raise ConfigError("evaluation.ood.kind: shifted_blobs needs the blobs dataset")
        if e.ood_score not in ("auto", "epistemic", "aleatoric", "max_embed"):
            raise ConfigError(f"evaluation.ood_score: unknown score {e.ood_score!r}")
        if e.ece_bins < 1 or e.ause_steps < 2 or e.grid_resolution < 2:
            raise ConfigError("evaluation: ece_bins >= 1, ause_steps >= 2, grid_resolution >= 2")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")

    def resolved_output_dir(self) -> Path:
        out = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out


# -- parsing -----------------------------------------------------------------

def _where(source: str, node: yaml.Node) -> str:
    return f"{source}:{node.start_mark.line + 1}"


def _scalar(loader: yaml.SafeLoader, node: yaml.Node):
    return loader.construct_object(node, deep=True)


def _convert(loader, node, tp, keypath: str, source: str):
    """Check ``node`` against the annotated type ``tp`` and return a Python value."""
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        inner = [a for a in args if a is not type(None)]
        if isinstance(node, yaml.ScalarNode) and _scalar(loader, node) is None:
            return None
        return _convert(loader, node, inner[0], keypath, source)
    if dataclasses.is_dataclass(tp):
        return _build(loader, node, tp, keypath, source)[0]
    if origin is list:
        if not isinstance(node, yaml.SequenceNode):
            raise ConfigError(f"{_where(source, node)}: {keypath}: expected a list")
        return [_convert(loader, item, args[0], f"{keypath}[{i}]", source) for i, item in enumerate(node.value)]
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"{_where(source, node)}: {keypath}: expected a {tp.__name__}")
    value = _scalar(loader, node)
    ok = (
        (tp is bool and isinstance(value, bool))
        or (tp is int and isinstance(value, int) and not isinstance(value, bool))
        or (tp is float and isinstance(value, (int, float)) and not isinstance(value, bool))
        or (tp is str and isinstance(value, str))
    )
    if not ok:
        raise ConfigError(f"{_where(source, node)}: {keypath}: expected {tp.__name__}, got {value!r}")
    return float(value) if tp is float else value


def _build(loader, node, cls, keypath: str, source: str):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{_where(source, node)}: {keypath or 'top level'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key_node, value_node in node.value:
        key = _scalar(loader, key_node)
        path = f"{keypath}.{key}" if keypath else str(key)
        if key not in names:
            raise ConfigError(f"{_where(source, key_node)}: unknown key {path!r}")
        if key in kwargs:
            raise ConfigError(f"{_where(source, key_node)}: duplicate key {path!r}")
        kwargs[key] = _convert(loader, value_node, hints[key], path, source)
    return cls(**kwargs), set(kwargs)


def parse_config_text(text: str, source: str = "<config>") -> ExperimentSpec:
    loader = yaml.SafeLoader(text)
    try:
        root = loader.get_single_node()
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    finally:
        loader.dispose()
    if root is None:
        raise ConfigError(f"{source}: empty configuration")
    spec, given = _parse_experiment(loader, root, source)
    # model widths and task follow the dataset unless set explicitly
    d = spec.dataset
    for key, value in (("input_dim", d.input_dim()), ("outputs", d.outputs()), ("task", d.task())):
        if key not in given.get("model", set()):
            setattr(spec.model, key, value)
    try:
        spec.validate()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return spec


def _parse_experiment(loader, root, source):
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{_where(source, root)}: top level: expected a mapping")
    hints = typing.get_type_hints(ExperimentSpec)
    names = {f.name for f in dataclasses.fields(ExperimentSpec)}
    kwargs, given = {}, {}
    for key_node, value_node in root.value:
        key = _scalar(loader, key_node)
        if key not in names:
            raise ConfigError(f"{_where(source, key_node)}: unknown key {key!r}")
        if key in kwargs:
            raise ConfigError(f"{_where(source, key_node)}: duplicate key {key!r}")
        tp = hints[key]
        if dataclasses.is_dataclass(tp):
            kwargs[key], given[key] = _build(loader, value_node, tp, key, source)
        else:
            kwargs[key] = _convert(loader, value_node, tp, key, source)
    return ExperimentSpec(**kwargs), given


def parse_config(path) -> ExperimentSpec:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: configuration file not found")
    return parse_config_text(path.read_text(), str(path))


def spec_to_dict(spec: ExperimentSpec) -> dict:
    return dataclasses.asdict(spec)


def dump_config(spec: ExperimentSpec) -> str:
    return yaml.safe_dump(spec_to_dict(spec), sort_keys=False, default_flow_style=None)
