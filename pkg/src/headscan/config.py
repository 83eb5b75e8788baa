"""Pipeline configuration: a TOML file mapped onto nested dataclasses."""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BUILTIN_PREFIX = "builtin:"
MESH_SUFFIXES = (".stl", ".ply", ".obj")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class TrajectoryConfig:
    radius: float = 1.0
    height: float = 0.3
    n_frames: int = 120


@dataclass(frozen=True)
class CameraConfig:
    width: int = 512
    height: int = 424
    fx: float = 365.0
    fy: float = 365.0
    cx: float | None = None
    cy: float | None = None
    hfov_deg: float | None = None
    """When set, overrides fx/fy/cx/cy with a centered pinhole of this horizontal field of view."""


@dataclass(frozen=True)
class NoiseConfig:
    enabled: bool = True
    depth_sigma: float = 0.002
    depth_dropout: float = 0.005
    angle_sigma_deg: float = 0.01
    translation_sigma: float = 0.002


@dataclass(frozen=True)
class TsdfConfig:
    resolution: int = 256
    extent: float = 1.2
    voxel_size: float | None = None
    """Overrides ``extent / resolution`` when set."""
    trunc_multiple: float = 4.0
    w_alpha: float = 64.0
    center: tuple | None = None
    """Volume center; defaults to the scan's recorded center."""


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 30
    max_correspondence_distance: float = 0.10
    max_normal_angle: float = 30.0
    convergence_threshold: float = 1e-6
    degeneracy_threshold: float = 1e6


@dataclass(frozen=True)
class FilterConfig:
    sigma_space: float = 1.0
    sigma_range: float = 0.01
    subsample: int = 2


@dataclass(frozen=True)
class FusionConfig:
    w_icp: float = 0.8
    w_sensor: float = 0.2


@dataclass(frozen=True)
class SelectionConfig:
    mode: str = "table"
    dist_thresh: float = 0.005
    ransac_iterations: int = 1000
    k: int | None = None
    offset_head: float = 0.45


@dataclass(frozen=True)
class PrinterConfig:
    x: float = 0.254
    y: float = 0.254
    z: float = 0.305


@dataclass(frozen=True)
class EvaluationConfig:
    sampling: str | int = "vertices"
    reference: str | None = None
    """Ground-truth mesh for recorded scans; simulated scans write their own."""


@dataclass(frozen=True)
class PipelineConfig:
    input: str = "builtin:head_on_table"
    seed: int = 0
    output_dir: str = "headscan_out"
    max_tracking_loss: float = 0.2
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    tsdf: TsdfConfig = field(default_factory=TsdfConfig)
    icp: IcpConfig = field(default_factory=IcpConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    printer: PrinterConfig = field(default_factory=PrinterConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def validate(self, check_paths: bool = True) -> "PipelineConfig":
        f = self.fusion
        if f.w_icp < 0 or f.w_sensor < 0 or abs(f.w_icp + f.w_sensor - 1.0) > 1e-9:
            raise ConfigError(f"fusion.w_icp + fusion.w_sensor must equal 1 (got {f.w_icp} + {f.w_sensor})")
        if self.selection.mode not in ("table", "human"):
            raise ConfigError(f"selection.mode must be 'table' or 'human', got {self.selection.mode!r}")
        if self.trajectory.n_frames < 2:
            raise ConfigError("trajectory.n_frames must be at least 2")
        if self.trajectory.radius <= 0:
            raise ConfigError("trajectory.radius must be positive")
        if self.tsdf.resolution < 8:
            raise ConfigError("tsdf.resolution must be at least 8")
        if self.tsdf.extent <= 0 or (self.tsdf.voxel_size is not None and self.tsdf.voxel_size <= 0):
            raise ConfigError("tsdf.extent and tsdf.voxel_size must be positive")
        if self.tsdf.center is not None and len(self.tsdf.center) != 3:
            raise ConfigError("tsdf.center must have 3 entries")
        if not 0 <= self.max_tracking_loss <= 1:
            raise ConfigError("max_tracking_loss must lie in [0, 1]")
        if min(self.printer.x, self.printer.y, self.printer.z) <= 0:
            raise ConfigError("printer dimensions must be positive")
        s = self.evaluation.sampling
        if not (s == "vertices" or (isinstance(s, int) and not isinstance(s, bool) and s > 0)):
            raise ConfigError("evaluation.sampling must be 'vertices' or a positive integer")
        if check_paths:
            kind = self.input_kind()
            if kind != "builtin" and not Path(self.input).exists():
                raise ConfigError(f"input {self.input!r} does not exist")
            if self.evaluation.reference is not None and not Path(self.evaluation.reference).exists():
                raise ConfigError(f"evaluation.reference {self.evaluation.reference!r} does not exist")
        return self

    def input_kind(self) -> str:
        """``builtin``, ``mesh`` or ``frames``."""
        if self.input.startswith(BUILTIN_PREFIX):
            from .scenes import BUILTIN_SCENES

            name = self.input[len(BUILTIN_PREFIX):]
            if name not in BUILTIN_SCENES:
                raise ConfigError(f"unknown builtin scene {name!r}; choose from {sorted(BUILTIN_SCENES)}")
            return "builtin"
        if self.input.lower().endswith(MESH_SUFFIXES):
            return "mesh"
        if Path(self.input).is_dir() or not Path(self.input).suffix:
            return "frames"
        raise ConfigError(f"input {self.input!r} is neither builtin:<scene>, a mesh file, nor a frame directory")

    def with_overrides(self, seed=None, output_dir=None, mode=None) -> "PipelineConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if output_dir is not None:
            cfg = replace(cfg, output_dir=str(output_dir))
        if mode is not None:
            cfg = replace(cfg, selection=replace(cfg.selection, mode=mode))
        return cfg.validate(check_paths=False)

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key {where + '.' if where else ''}{key}")
        default = getattr(cls(), key)
        if is_dataclass(default):
            kwargs[key] = _build(type(default), value, key if not where else f"{where}.{key}")
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict, check_paths: bool = True) -> PipelineConfig:
    return _build(PipelineConfig, data, "").validate(check_paths)


def load_config(path, check_paths: bool = True) -> PipelineConfig:
    """Read a TOML config. Relative input/reference paths resolve against the file's directory."""
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    base = path.resolve().parent
    inp = data.get("input")
    if isinstance(inp, str) and not inp.startswith(BUILTIN_PREFIX) and not Path(inp).is_absolute():
        data["input"] = str(base / inp)
    ev = data.get("evaluation", {})
    if isinstance(ev, dict) and isinstance(ev.get("reference"), str) and not Path(ev["reference"]).is_absolute():
        ev["reference"] = str(base / ev["reference"])
    return config_from_dict(data, check_paths)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


# where each default comes from; shown in the generated template
_NOTES = {
    "input": "builtin:<scene> (head_on_table, bust, sphere_and_box), a mesh file, or a frame directory",
    "max_tracking_loss": "abort when ICP fails on more than this fraction of frames",
    "trajectory.radius": "scan circle radius around the subject, about one meter",
    "trajectory.height": "camera height above the scene center",
    "camera.width": "Kinect v2 depth resolution 512 x 424",
    "camera.fx": "Kinect v2 focal length in pixels (about 70 degrees horizontal)",
    "noise.angle_sigma_deg": "orientation sensor precision of 0.01 degrees",
    "noise.depth_sigma": "assumed depth noise of a time-of-flight sensor at about 1 m",
    "noise.depth_dropout": "assumed fraction of pixels without a reading",
    "noise.translation_sigma": "assumed position noise of the motion sensor (m)",
    "tsdf.resolution": "voxels per axis; 256 over a 1.2 m cube around the subject (128 is enough for tests)",
    "tsdf.trunc_multiple": "truncation distance in voxels",
    "tsdf.w_alpha": "weight cap; turns the running average into a moving average",
    "icp.max_iterations": "single resolution level, no pyramid",
    "icp.max_correspondence_distance": "reject pairs farther apart than this (m)",
    "icp.degeneracy_threshold": "condition number above which the 6x6 system is degenerate",
    "fusion.w_icp": "ICP pose weighted 0.8 against 0.2 for the motion sensor",
    "selection.mode": "'table' (head on a support plane) or 'human' (person's head and shoulders)",
    "selection.k": "human mode: points nearest the pose centroid that define the head top; default max(100, 0.5% of points)",
    "selection.offset_head": "human mode: prism floor this far below the fitted head-top plane (m)",
    "printer.x": "build volume 254 x 254 x 305 mm; the base side sets the scale",
    "evaluation.sampling": "'vertices' or a number of area-uniform surface samples",
}


def config_template(cfg: PipelineConfig | None = None) -> str:
    """Annotated TOML for ``cfg`` (defaults if omitted); ``None`` values are left commented out."""
    d = (cfg or PipelineConfig()).to_dict()
    out = ["# headscan pipeline configuration", ""]

    def emit(prefix, table):
        for key, value in table.items():
            if isinstance(value, dict):
                continue
            note = _NOTES.get(f"{prefix}{key}")
            if note:
                out.append(f"# {note}")
            if value is None:
                out.append(f"# {key} = ")
            else:
                out.append(f"{key} = {_toml_value(value)}")

    emit("", d)
    for key, value in d.items():
        if isinstance(value, dict):
            out += ["", f"[{key}]"]
            emit(f"{key}.", value)
    return "\n".join(out) + "\n"
