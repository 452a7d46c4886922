"""Key-value configuration file (INI sections) mapped onto the dataclass
configs of each subsystem. Unknown keys are rejected so typos surface early.
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

import numpy as np

from .cameras import FisheyeCamera, PinholeCamera
from .extraction import ExtractionConfig
from .geometry import Pose
from .poseopt import PoseOptConfig
from .projection import ProjectionSearchConfig
from .stereo import StereoMatchConfig
from .synthetic import SyntheticSceneConfig
from .tracker import TrackerConfig


class ConfigFileError(ValueError):
    pass


@dataclasses.dataclass
class AppConfig:
    camera: PinholeCamera | FisheyeCamera
    extraction: ExtractionConfig
    stereo: StereoMatchConfig
    projection: ProjectionSearchConfig
    pose_opt: PoseOptConfig
    tracker: TrackerConfig
    scene: SyntheticSceneConfig
    workers: int | None = None
    backend: str = "seq"
    residency: bool = True


_CAMERA_PINHOLE_KEYS = {"model", "fx", "fy", "cx", "cy", "baseline_times_fx",
                        "width", "height"}
_CAMERA_FISHEYE_KEYS = {"model", "fx", "fy", "cx", "cy", "k1", "k2", "k3", "k4",
                        "width", "height",
                        "right_qx", "right_qy", "right_qz", "right_qw",
                        "right_tx", "right_ty", "right_tz"}


def _parse_camera(section: configparser.SectionProxy) -> PinholeCamera | FisheyeCamera:
    model = section.get("model", "pinhole").strip()
    keys = set(section.keys())
    if model == "pinhole":
        unknown = keys - _CAMERA_PINHOLE_KEYS
        if unknown:
            raise ConfigFileError(f"unknown [camera] keys: {sorted(unknown)}")
        return PinholeCamera(
            fx=section.getfloat("fx"),
            fy=section.getfloat("fy"),
            cx=section.getfloat("cx"),
            cy=section.getfloat("cy"),
            baseline_times_fx=section.getfloat("baseline_times_fx"),
            width=section.getint("width"),
            height=section.getint("height"),
        )
    if model == "fisheye":
        unknown = keys - _CAMERA_FISHEYE_KEYS
        if unknown:
            raise ConfigFileError(f"unknown [camera] keys: {sorted(unknown)}")
        quat = np.array([section.getfloat("right_qx", 0.0),
                         section.getfloat("right_qy", 0.0),
                         section.getfloat("right_qz", 0.0),
                         section.getfloat("right_qw", 1.0)])
        trans = np.array([section.getfloat("right_tx", 0.0),
                          section.getfloat("right_ty", 0.0),
                          section.getfloat("right_tz", 0.0)])
        return FisheyeCamera(
            fx=section.getfloat("fx"),
            fy=section.getfloat("fy"),
            cx=section.getfloat("cx"),
            cy=section.getfloat("cy"),
            k1=section.getfloat("k1", 0.0),
            k2=section.getfloat("k2", 0.0),
            k3=section.getfloat("k3", 0.0),
            k4=section.getfloat("k4", 0.0),
            width=section.getint("width"),
            height=section.getint("height"),
            right_extrinsic=Pose.from_quaternion(quat, trans),
        )
    raise ConfigFileError(f"unknown camera model {model!r}")


def _parse_dataclass(cls, section: configparser.SectionProxy | None,
                     name: str):
    """Fill a dataclass from a section, coercing by field type."""
    if section is None:
        return cls()
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in section.keys():
        if key not in fields:
            raise ConfigFileError(f"unknown [{name}] key: {key}")
        ftype = fields[key].type
        raw = section.get(key)
        if ftype in ("int", int):
            kwargs[key] = section.getint(key)
        elif ftype in ("float", float):
            kwargs[key] = section.getfloat(key)
        elif ftype in ("bool", bool):
            kwargs[key] = section.getboolean(key)
        else:
            kwargs[key] = raw
    return cls(**kwargs)


def default_config() -> AppConfig:
    from .synthetic import default_pinhole
    return AppConfig(
        camera=default_pinhole(),
        extraction=ExtractionConfig(),
        stereo=StereoMatchConfig(),
        projection=ProjectionSearchConfig(),
        pose_opt=PoseOptConfig(),
        tracker=TrackerConfig(),
        scene=SyntheticSceneConfig(),
    )


def load_config(path: str | Path | None) -> AppConfig:
    if path is None:
        return default_config()
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigFileError(f"cannot read config file {path}")
    known = {"camera", "extraction", "stereo", "projection", "pose_opt",
             "tracker", "scene", "engine"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigFileError(f"unknown config sections: {sorted(unknown)}")

    if parser.has_section("camera"):
        camera = _parse_camera(parser["camera"])
    else:
        from .synthetic import default_pinhole
        camera = default_pinhole()

    def sec(name):
        return parser[name] if parser.has_section(name) else None

    cfg = AppConfig(
        camera=camera,
        extraction=_parse_dataclass(ExtractionConfig, sec("extraction"), "extraction"),
        stereo=_parse_dataclass(StereoMatchConfig, sec("stereo"), "stereo"),
        projection=_parse_dataclass(ProjectionSearchConfig, sec("projection"), "projection"),
        pose_opt=_parse_dataclass(PoseOptConfig, sec("pose_opt"), "pose_opt"),
        tracker=_parse_dataclass(TrackerConfig, sec("tracker"), "tracker"),
        scene=_parse_dataclass(SyntheticSceneConfig, sec("scene"), "scene"),
    )
    if parser.has_section("engine"):
        eng = parser["engine"]
        for key in eng.keys():
            if key not in ("backend", "workers", "residency"):
                raise ConfigFileError(f"unknown [engine] key: {key}")
        cfg.backend = eng.get("backend", cfg.backend)
        if eng.get("workers") is not None:
            cfg.workers = eng.getint("workers")
        cfg.residency = eng.getboolean("residency", cfg.residency)
    return cfg
