"""Flat key=value pipeline configuration.

Grammar: one `name = value` per line; blank lines and '#' comments ignored.
Values are typed per the registry below (int, float, bool true/false, or a
bare string). Unknown and duplicate keys are rejected by name, and every
derived parameter object is constructed once at load time so bad values
fail early. `dump()` prints the complete canonical listing, so
load -> dump -> load is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

from .crossview import AssocParams
from .detect import DetectParams
from .geometry import StereoRig, TankBounds, default_rig
from .simulator import DegradeModel, SimConfig
from .track2d import EUCLIDEAN_HEAD, MAHALANOBIS_CENTROID, Track2DParams
from .track3d import StitchParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class _Key:
    name: str
    default: object
    kind: type
    help: str


_REGISTRY: list[_Key] = [
    _Key("seed", 0, int, "master seed; every random draw derives from it"),
    _Key("fps", 60.0, float, "frames per second of the sequence"),
    _Key("n_fish", 2, int, "number of fish in the scene"),
    _Key("duration_s", 15.0, float, "sequence length in seconds"),
    _Key("tank.x_min", 0.0, float, "tank bounds, cm"),
    _Key("tank.x_max", 30.0, float, "tank bounds, cm"),
    _Key("tank.y_min", 0.0, float, "tank bounds, cm"),
    _Key("tank.y_max", 30.0, float, "tank bounds, cm"),
    _Key("tank.z_min", 0.0, float, "tank bounds, cm"),
    _Key("tank.z_max", 15.0, float, "water depth bound, cm"),
    _Key("image_width", 800, int, "synthetic camera image width, px"),
    _Key("image_height", 800, int, "synthetic camera image height, px"),
    _Key("focal", 1000.0, float, "synthetic camera focal length, px"),
    _Key("sim.speed_mean", 2.13, float, "mean swim speed, cm/s"),
    _Key("sim.reversion_rate", 2.0, float, "velocity mean-reversion rate, 1/s"),
    _Key("sim.body_length", 4.0, float, "fish body length, cm"),
    _Key("sim.body_radius", 0.5, float, "fish body radius at the head, cm"),
    _Key("sim.taper", 0.5, float, "tail radius shrink fraction"),
    _Key("sim.n_spheres", 6, int, "spheres along the body model"),
    _Key("sim.confine_axis_slabs", False, bool,
         "confine each fish to its own x slab (occlusion-free scenes)"),
    _Key("sim.slab_margin", 6.0, float, "margin shaved off each slab, cm"),
    _Key("degrade.drop_rate", 0.0, float, "detection dropout probability"),
    _Key("degrade.jitter_px", 0.0, float, "head jitter std dev, px"),
    _Key("degrade.ghost_rate", 0.0, float, "ghost detections per frame (Poisson)"),
    _Key("detect.n_bg", 80, int, "frames sampled for the background model"),
    _Key("detect.downsample", 2, int, "detector downsampling factor"),
    _Key("detect.nms_thresh", 50.0, float, "keypoint suppression overlap, %"),
    _Key("detect.junction_divisor", 2.5, float, "junction keypoint weight penalty"),
    _Key("detect.min_keypoint_weight", 1.0, float, "discard keypoints below this"),
    _Key("detect.min_blob_area", 20, int, "min blob area at working resolution, px"),
    _Key("detect.min_confidence", 95.0, float,
         "confidence gate for ingested external detections"),
    _Key("track2d.delta_top", 15.0, float, "top-view assignment gate, px"),
    _Key("track2d.delta_front", 0.5, float,
         "front-view gate: std-devs (mahalanobis) or px (euclidean)"),
    _Key("track2d.tau_k", 10, int, "frames a tracklet may idle before ending"),
    _Key("track2d.top_mode", EUCLIDEAN_HEAD, str,
         "top-view distance: euclidean-head or mahalanobis-centroid"),
    _Key("track2d.front_mode", MAHALANOBIS_CENTROID, str,
         "front-view distance: euclidean-head or mahalanobis-centroid"),
    _Key("assoc.alpha", 10, int, "min detections per 2D tracklet"),
    _Key("assoc.tau_p", 25.0, float, "edge temporal decay, frames"),
    _Key("assoc.lambda_err", 1.0 / 8.03, float,
         "reprojection-error decay rate, 1/px"),
    _Key("assoc.lambda_s", 1.0 / 4.45, float, "speed decay rate, s/cm"),
    _Key("stitch.beta", 0.02, float, "min margin between best two mains"),
    _Key("stitch.top_fraction", 0.2, float, "fraction of tracklets used as seeds"),
    _Key("stitch.overlap_scale", 0.2, float, "required pairwise seed overlap"),
    _Key("eval.dist_3d", 0.5, float, "3D match gate, cm"),
    _Key("eval.dist_2d", 20.0, float, "2D match gate, px"),
]
_BY_NAME = {k.name: k for k in _REGISTRY}


def _parse_value(key: _Key, raw: str):
    if key.kind is bool:
        if raw in ("true", "false"):
            return raw == "true"
        raise ConfigError(f"parameter {key.name!r} must be true or false, "
                          f"got {raw!r}")
    try:
        return key.kind(raw)
    except ValueError:
        raise ConfigError(f"parameter {key.name!r} must be "
                          f"{key.kind.__name__}, got {raw!r}") from None


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class PipelineConfig:
    values: dict

    @classmethod
    def defaults(cls) -> "PipelineConfig":
        cfg = cls(values={k.name: k.default for k in _REGISTRY})
        cfg.validate()
        return cfg

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "PipelineConfig":
        values = {k.name: k.default for k in _REGISTRY}
        seen = set()
        for line_no, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{source}:{line_no}: expected 'name = "
                                  f"value', got {body!r}")
            name, raw = (part.strip() for part in body.split("=", 1))
            if name not in _BY_NAME:
                raise ConfigError(f"{source}:{line_no}: unknown parameter "
                                  f"{name!r}")
            if name in seen:
                raise ConfigError(f"{source}:{line_no}: duplicate parameter "
                                  f"{name!r}")
            seen.add(name)
            values[name] = _parse_value(_BY_NAME[name], raw)
        # Euclidean front gating is in pixels; materialize the matching
        # default so dump() round-trips the effective configuration.
        if (values["track2d.front_mode"] == EUCLIDEAN_HEAD
                and "track2d.delta_front" not in seen):
            values["track2d.delta_front"] = 15.0
        cfg = cls(values=values)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_text(fh.read(), source=str(path))

    def get(self, name: str):
        return self.values[name]

    def with_overrides(self, **overrides) -> "PipelineConfig":
        values = dict(self.values)
        for name, v in overrides.items():
            if name not in _BY_NAME:
                raise ConfigError(f"unknown parameter {name!r}")
            values[name] = v
        cfg = PipelineConfig(values=values)
        cfg.validate()
        return cfg

    def dump(self) -> str:
        return "\n".join(f"{k.name} = {_format_value(self.values[k.name])}"
                         for k in _REGISTRY) + "\n"

    # -- derived parameter objects ------------------------------------

    def tank(self) -> TankBounds:
        v = self.values
        return TankBounds(x=(v["tank.x_min"], v["tank.x_max"]),
                          y=(v["tank.y_min"], v["tank.y_max"]),
                          z=(v["tank.z_min"], v["tank.z_max"]))

    def rig(self) -> StereoRig:
        v = self.values
        return default_rig(image_size=(v["image_width"], v["image_height"]),
                           focal=v["focal"], tank=self.tank())

    def sim_config(self) -> SimConfig:
        v = self.values
        return SimConfig(
            n_fish=v["n_fish"], duration_s=v["duration_s"], fps=v["fps"],
            tank=self.tank(), speed_mean=v["sim.speed_mean"],
            reversion_rate=v["sim.reversion_rate"],
            body_length=v["sim.body_length"],
            body_radius=v["sim.body_radius"], taper=v["sim.taper"],
            n_spheres=v["sim.n_spheres"], seed=v["seed"],
            confine_axis_slabs=v["sim.confine_axis_slabs"],
            slab_margin=v["sim.slab_margin"])

    def degrade_model(self) -> DegradeModel:
        v = self.values
        return DegradeModel(drop_rate=v["degrade.drop_rate"],
                            jitter_px=v["degrade.jitter_px"],
                            ghost_rate=v["degrade.ghost_rate"])

    def detect_params(self) -> DetectParams:
        v = self.values
        return DetectParams(
            n_bg=v["detect.n_bg"], downsample=v["detect.downsample"],
            nms_thresh=v["detect.nms_thresh"],
            junction_divisor=v["detect.junction_divisor"],
            min_keypoint_weight=v["detect.min_keypoint_weight"],
            min_blob_area=v["detect.min_blob_area"], n_fish=v["n_fish"])

    def track2d_params(self) -> Track2DParams:
        v = self.values
        return Track2DParams(delta_top=v["track2d.delta_top"],
                             delta_front=v["track2d.delta_front"],
                             tau_k=v["track2d.tau_k"],
                             top_mode=v["track2d.top_mode"],
                             front_mode=v["track2d.front_mode"])

    def assoc_params(self) -> AssocParams:
        v = self.values
        return AssocParams(alpha=v["assoc.alpha"], tau_p=v["assoc.tau_p"],
                           lambda_err=v["assoc.lambda_err"],
                           lambda_s=v["assoc.lambda_s"])

    def stitch_params(self) -> StitchParams:
        v = self.values
        return StitchParams(beta=v["stitch.beta"],
                            top_fraction=v["stitch.top_fraction"],
                            overlap_scale=v["stitch.overlap_scale"])

    def validate(self) -> None:
        try:
            self.tank()
            self.rig()
            self.sim_config()
            self.degrade_model()
            self.detect_params()
            self.track2d_params()
            self.assoc_params()
            self.stitch_params()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        for name in ("eval.dist_3d", "eval.dist_2d"):
            if self.values[name] <= 0:
                raise ConfigError(f"parameter {name!r} must be positive")


def describe_defaults() -> str:
    """Annotated canonical configuration listing."""
    lines = []
    for k in _REGISTRY:
        lines.append(f"{k.name} = {_format_value(k.default)}  # {k.help}")
    return "\n".join(lines) + "\n"
