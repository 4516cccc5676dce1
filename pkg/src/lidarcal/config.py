"""Flat key=value run configuration.

One file configures every stage: camera constants, oracle, dataset
generation, training, inverse optimization and evaluation. Unknown keys are
rejected; every value is validated through the owning dataclass's invariants
at load time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .inverse import OptConfig
from .oracle import DEFAULT_P_STAR, OracleConfig
from .signal import CameraConstants
from .train import TrainConfig


@dataclass
class DataConfig:
    groups: int = 200
    reps: int = 64
    code_seed: int = 1
    code_density: float = 0.5
    code_run_length: int = 8
    params_seed: int = 13
    params_margin: float = 0.1

    def __post_init__(self):
        if self.groups < 1 or self.reps < 1:
            raise ValueError("data.groups and data.reps must be >= 1")
        if not (0.0 < self.code_density < 1.0):
            raise ValueError("data.code_density must be in (0, 1)")
        if self.code_run_length < 1:
            raise ValueError("data.code_run_length must be >= 1")
        if not (0.0 <= self.params_margin < 0.5):
            raise ValueError("data.params_margin must be in [0, 0.5)")


@dataclass
class EvalConfig:
    n: int = 512
    baseline_seed: int = 26

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("eval.n must be >= 2")


@dataclass
class RunConfig:
    camera: CameraConstants = field(default_factory=CameraConstants)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    opt: OptConfig = field(default_factory=OptConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_floats(s: str) -> tuple:
    return tuple(float(x) for x in s.split(","))


# key -> (section, field, parser)
_SCHEMA = {
    "camera.f": ("camera", "f", float),
    "camera.c": ("camera", "c", float),
    "camera.d": ("camera", "d", float),
    "camera.L": ("camera", "L", int),
    "camera.delta_in": ("camera", "delta_in", float),
    "oracle.distance_mm": ("oracle", "distance_mm", float),
    "oracle.reflectivity": ("oracle", "reflectivity", float),
    "oracle.p_star": ("oracle", "p_star", _parse_floats),
    "oracle.flip_coef": ("oracle", "flip_coef", float),
    "oracle.flip_floor": ("oracle", "flip_floor", float),
    "oracle.jitter_coef": ("oracle", "jitter_coef", float),
    "oracle.jitter_floor": ("oracle", "jitter_floor", float),
    "oracle.skew_coef": ("oracle", "skew_coef", float),
    "oracle.rise_coef": ("oracle", "rise_coef", float),
    "oracle.fall_coef": ("oracle", "fall_coef", float),
    "oracle.duty_coef": ("oracle", "duty_coef", float),
    "oracle.outlier_coef": ("oracle", "outlier_coef", float),
    "oracle.outlier_floor": ("oracle", "outlier_floor", float),
    "oracle.base_seed": ("oracle", "base_seed", int),
    "data.groups": ("data", "groups", int),
    "data.reps": ("data", "reps", int),
    "data.code_seed": ("data", "code_seed", int),
    "data.code_density": ("data", "code_density", float),
    "data.code_run_length": ("data", "code_run_length", int),
    "data.params_seed": ("data", "params_seed", int),
    "data.params_margin": ("data", "params_margin", float),
    "train.lambda_gp": ("train", "lambda_gp", float),
    "train.lambda_parameters": ("train", "lambda_parameters", float),
    "train.lambda_mean": ("train", "lambda_mean", float),
    "train.lambda_variance": ("train", "lambda_variance", float),
    "train.curriculum_threshold": ("train", "curriculum_threshold", int),
    "train.curriculum_constant": ("train", "curriculum_constant", float),
    "train.critic_iters": ("train", "critic_iters", int),
    "train.batch_size": ("train", "batch_size", int),
    "train.lr": ("train", "lr", float),
    "train.beta1": ("train", "beta1", float),
    "train.beta2": ("train", "beta2", float),
    "train.z_dim": ("train", "z_dim", int),
    "train.iterations": ("train", "iterations", int),
    "train.seed": ("train", "seed", int),
    "train.gp_on_interpolates": ("train", "gp_on_interpolates", _parse_bool),
    "train.snapshot_every": ("train", "snapshot_every", int),
    "opt.batch_size": ("opt", "batch_size", int),
    "opt.beta": ("opt", "beta", float),
    "opt.lr": ("opt", "lr", float),
    "opt.max_iterations": ("opt", "max_iterations", int),
    "opt.stop_threshold": ("opt", "stop_threshold", float),
    "opt.seed": ("opt", "seed", int),
    "opt.freeze_z": ("opt", "freeze_z", _parse_bool),
    "eval.n": ("eval", "n", int),
    "eval.baseline_seed": ("eval", "baseline_seed", int),
}

_SECTION_CLS = {
    "camera": CameraConstants,
    "oracle": OracleConfig,
    "data": DataConfig,
    "train": TrainConfig,
    "opt": OptConfig,
    "eval": EvalConfig,
}


def parse_config(text: str) -> RunConfig:
    """Parse `key = value` lines (# comments, blank lines allowed)."""
    values: dict[str, dict] = {s: {} for s in _SECTION_CLS}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _SCHEMA:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        section, fld, parser = _SCHEMA[key]
        try:
            values[section][fld] = parser(val)
        except ValueError as e:
            raise ValueError(f"line {lineno}: bad value for {key}: {e}") from e

    camera = CameraConstants(**values["camera"])
    oracle = OracleConfig(consts=camera, **values["oracle"])
    return RunConfig(
        camera=camera,
        oracle=oracle,
        data=DataConfig(**values["data"]),
        train=TrainConfig(**values["train"]),
        opt=OptConfig(**values["opt"]),
        eval=EvalConfig(**values["eval"]),
    )


def load_config(path) -> RunConfig:
    with open(path, "r") as f:
        return parse_config(f.read())
