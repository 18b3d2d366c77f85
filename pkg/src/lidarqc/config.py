"""Plain key=value run configuration.

One `key = value` per line, `#` starts a comment, blank lines are
skipped. Keys are checked against the known set so typos fail loudly.
Command-line flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from lidarqc.core import SensorSpec
from lidarqc.gbt import GbtParams
from lidarqc.meta import LinearParams
from lidarqc.synth import CorruptionConfig, SceneConfig


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_class_map(text: str) -> dict[int, int]:
    mapping: dict[int, int] = {}
    for pair in text.split(","):
        pair = pair.strip()
        if not pair:
            continue
        raw, _, internal = pair.partition(":")
        mapping[int(raw)] = int(internal)
    if not mapping:
        raise ValueError("empty class map")
    return mapping


@dataclass(frozen=True)
class RunConfig:
    sensor_channels: int = 32
    sensor_angular_resolution: float = 0.33
    sensor_fov_up: float = 10.0
    sensor_fov_down: float = 30.0
    sensor_fov_hor: float = 360.0
    classes: int = 4
    class_map: dict[int, int] | None = None
    sp_min: int = 10
    folds: int = 10
    seed: int = 0
    task: str = "classify"
    kind: str = "gbt"
    wrap: bool = True
    gbt_rounds: int = 100
    gbt_learning_rate: float = 0.1
    gbt_max_depth: int = 6
    gbt_min_child_weight: float = 1.0
    gbt_reg_lambda: float = 1.0
    linear_ridge: float = 1e-6
    linear_max_iter: int = 200
    linear_tol: float = 1e-8
    synth_frames: int = 20
    synth_groups: int = 5
    synth_boxes: int = 8
    synth_poles: int = 6
    synth_extent: float = 45.0
    synth_ground_z: float = -1.8
    synth_intensity_noise: float = 0.02
    corrupt_erosion_prob: float = 0.25
    corrupt_flip_prob: float = 0.2
    corrupt_temperature: float = 0.15
    corrupt_label_noise: float = 0.002
    corrupt_flip_max_size: int = 800
    corrupt_heat_factor: float = 4.0
    corrupt_class_temp_spread: float = 0.0

    def sensor(self) -> SensorSpec:
        return SensorSpec(channels=self.sensor_channels,
                          angular_resolution=self.sensor_angular_resolution,
                          fov_up=self.sensor_fov_up,
                          fov_down=self.sensor_fov_down,
                          fov_hor=self.sensor_fov_hor)

    def label_map(self) -> dict[int, int]:
        if self.class_map is not None:
            return dict(self.class_map)
        return {i: i for i in range(self.classes + 1)}

    def gbt_params(self, seed: int | None = None) -> GbtParams:
        return GbtParams(rounds=self.gbt_rounds,
                         learning_rate=self.gbt_learning_rate,
                         max_depth=self.gbt_max_depth,
                         min_child_weight=self.gbt_min_child_weight,
                         reg_lambda=self.gbt_reg_lambda,
                         seed=self.seed if seed is None else seed)

    def linear_params(self) -> LinearParams:
        return LinearParams(ridge=self.linear_ridge,
                            max_iter=self.linear_max_iter,
                            tol=self.linear_tol)

    def scene(self, seed: int) -> SceneConfig:
        return SceneConfig(seed=seed, sensor=self.sensor(),
                           n_classes=self.classes, n_boxes=self.synth_boxes,
                           n_poles=self.synth_poles, extent=self.synth_extent,
                           ground_z=self.synth_ground_z,
                           intensity_noise=self.synth_intensity_noise)

    def corruption(self, seed: int) -> CorruptionConfig:
        return CorruptionConfig(seed=seed,
                                erosion_prob=self.corrupt_erosion_prob,
                                flip_prob=self.corrupt_flip_prob,
                                temperature=self.corrupt_temperature,
                                label_noise=self.corrupt_label_noise,
                                flip_max_size=self.corrupt_flip_max_size,
                                heat_factor=self.corrupt_heat_factor,
                                class_temp_spread=self.corrupt_class_temp_spread)


# config-file key -> (dataclass field, parser)
_KEYS = {
    "sensor.channels": ("sensor_channels", int),
    "sensor.angular_resolution": ("sensor_angular_resolution", float),
    "sensor.fov_up": ("sensor_fov_up", float),
    "sensor.fov_down": ("sensor_fov_down", float),
    "sensor.fov_hor": ("sensor_fov_hor", float),
    "classes": ("classes", int),
    "class_map": ("class_map", _parse_class_map),
    "sp_min": ("sp_min", int),
    "folds": ("folds", int),
    "seed": ("seed", int),
    "task": ("task", str),
    "kind": ("kind", str),
    "wrap": ("wrap", _parse_bool),
    "gbt.rounds": ("gbt_rounds", int),
    "gbt.learning_rate": ("gbt_learning_rate", float),
    "gbt.max_depth": ("gbt_max_depth", int),
    "gbt.min_child_weight": ("gbt_min_child_weight", float),
    "gbt.reg_lambda": ("gbt_reg_lambda", float),
    "linear.ridge": ("linear_ridge", float),
    "linear.max_iter": ("linear_max_iter", int),
    "linear.tol": ("linear_tol", float),
    "synth.frames": ("synth_frames", int),
    "synth.groups": ("synth_groups", int),
    "synth.boxes": ("synth_boxes", int),
    "synth.poles": ("synth_poles", int),
    "synth.extent": ("synth_extent", float),
    "synth.ground_z": ("synth_ground_z", float),
    "synth.intensity_noise": ("synth_intensity_noise", float),
    "corrupt.erosion_prob": ("corrupt_erosion_prob", float),
    "corrupt.flip_prob": ("corrupt_flip_prob", float),
    "corrupt.temperature": ("corrupt_temperature", float),
    "corrupt.label_noise": ("corrupt_label_noise", float),
    "corrupt.flip_max_size": ("corrupt_flip_max_size", int),
    "corrupt.heat_factor": ("corrupt_heat_factor", float),
    "corrupt.class_temp_spread": ("corrupt_class_temp_spread", float),
}

assert {field for field, _ in _KEYS.values()} == {
    f.name for f in fields(RunConfig)}


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key = key.strip()
        if key not in _KEYS:
            raise ValueError(f"line {lineno}: unknown config key: {key}")
        values[key] = value.strip()
    return values


def load_config(path: str | None = None,
                overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a RunConfig from an optional file plus key=value overrides."""
    raw: dict[str, str] = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            raw.update(parse_config_text(fh.read()))
    for key, value in (overrides or {}).items():
        if key not in _KEYS:
            raise ValueError(f"unknown config key: {key}")
        raw[key] = value
    kwargs = {}
    for key, value in raw.items():
        field, parser = _KEYS[key]
        try:
            kwargs[field] = parser(value)
        except ValueError as exc:
            raise ValueError(f"bad value for {key}: {exc}") from exc
    return RunConfig(**kwargs)
