"""Run configuration: one JSON document composed of the per-stage settings.

Unknown keys are rejected at every level so that typos never silently fall
back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .capsim import RoomScene, TrajectoryConfig, default_intrinsics
from .core import CameraIntrinsics
from .errors import InvalidArgument
from .reduce import ReduceConfig
from .sfm.model import BAOptions
from .sfm.reconstruct import ReconstructOptions


@dataclass(frozen=True)
class RunConfig:
    scene: RoomScene = field(default_factory=RoomScene)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    camera: CameraIntrinsics = field(default_factory=default_intrinsics)
    reduce: ReduceConfig = field(default_factory=ReduceConfig)
    reconstruct: ReconstructOptions = field(default_factory=ReconstructOptions)
    ba: BAOptions = field(default_factory=BAOptions)
    seed: int = 0
    out_dir: str = "out"

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_overrides(self, seed: int | None = None, out_dir: str | None = None) -> "RunConfig":
        d = self.to_dict()
        if seed is not None:
            d["seed"] = int(seed)
        if out_dir is not None:
            d["out_dir"] = str(out_dir)
        return config_from_dict(d)


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _section(cls, d, name: str):
    if not isinstance(d, dict):
        raise InvalidArgument(f"config section '{name}' must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise InvalidArgument(f"unknown keys in '{name}': {unknown}")
    kwargs = {}
    for k, v in d.items():
        default = known[k].default
        if isinstance(v, list):
            v = tuple(v)
        if isinstance(default, bool) or isinstance(v, bool):
            if not isinstance(v, bool) or not isinstance(default, bool):
                raise InvalidArgument(f"'{name}.{k}' has the wrong type")
        elif isinstance(default, int) and not isinstance(v, int):
            raise InvalidArgument(f"'{name}.{k}' must be an integer")
        elif isinstance(default, float) and not isinstance(v, (int, float)):
            raise InvalidArgument(f"'{name}.{k}' must be a number")
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise InvalidArgument(f"bad '{name}' section: {e}") from None


_SECTIONS = {
    "scene": RoomScene,
    "trajectory": TrajectoryConfig,
    "camera": CameraIntrinsics,
    "reduce": ReduceConfig,
    "reconstruct": ReconstructOptions,
    "ba": BAOptions,
}


def config_from_dict(d) -> RunConfig:
    if not isinstance(d, dict):
        raise InvalidArgument("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise InvalidArgument(f"unknown top-level config keys: {unknown}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in d:
            kwargs[name] = _section(cls, d[name], name)
    if "seed" in d:
        if isinstance(d["seed"], bool) or not isinstance(d["seed"], int) or d["seed"] < 0:
            raise InvalidArgument("seed must be a nonnegative integer")
        kwargs["seed"] = d["seed"]
    if "out_dir" in d:
        if not isinstance(d["out_dir"], str):
            raise InvalidArgument("out_dir must be a string")
        kwargs["out_dir"] = d["out_dir"]
    return RunConfig(**kwargs)


def config_from_json(text: str) -> RunConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidArgument(f"malformed JSON config ({e.msg} at line {e.lineno})") from None
    return config_from_dict(d)
