"""Run configuration: one JSON file drives a reproducible experiment.

Defaults follow the published hyperparameters of the pose-estimation
setup this package implements: 60 rotation anchors, 20/20/40 bins for
v_x/v_y/z over [-200, 200] pixels and [0, 2] meters, sparse-label
parameters (0.7, 0.1, k=4) for rotation and (0.55, 0.075, k=7) for
translation, Adam with learning rates 3e-4 (teacher) and 3e-5 (student),
batch size 32.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .errors import ConfigError
from .labeling import LabelConfig, ScoreAssignmentConfig
from .selftrain import SelfTrainConfig
from .errors import InvalidArgumentError


@dataclass(frozen=True)
class AnchorConfig:
    n_rot: int = 60
    n_vx: int = 20
    n_vy: int = 20
    n_z: int = 40
    vx_range: tuple = (-200.0, 200.0)
    vy_range: tuple = (-200.0, 200.0)
    z_range: tuple = (0.0, 2.0)
    seed: int = 0


@dataclass(frozen=True)
class ScoreConfig:
    rotation: tuple = (0.7, 0.1, 4)       # theta1, theta2, k
    translation: tuple = (0.55, 0.075, 7)
    k_rot: int = 4
    k_z: int = 7
    k_vxvy: int = 7

    def label_config(self):
        r = ScoreAssignmentConfig(*self.rotation)
        t = ScoreAssignmentConfig(*self.translation)
        return LabelConfig(rotation=r, vx=t, vy=t, z=t)


@dataclass(frozen=True)
class NetConfig:
    feature_dim: int = 128
    encoder_hidden: tuple = (128, 128)
    head_hidden: int = 64
    seed: int = 0


@dataclass(frozen=True)
class DataConfig:
    n_source: int = 2000
    n_target: int = 1000
    object_kinds: tuple = ("box", "cylinder", "blob")
    n_points: int = 128
    object_seed: int = 7
    camera: tuple = (600.0, 600.0, 320.0, 240.0)   # fx, fy, cx, cy
    source_offset: float = 0.0
    source_noise: float = 0.02
    source_dropout: float = 0.0
    target_offset: float = 0.8
    target_noise: float = 0.06
    target_dropout: float = 0.02
    vx_sample_range: tuple = (-160.0, 160.0)
    vy_sample_range: tuple = (-160.0, 160.0)
    z_sample_range: tuple = (0.4, 1.6)
    scalar_source_noise: float = 0.01
    scalar_target_noise: float = 0.02
    scalar_target_offset: float = 0.7
    scalar_bins: int = 20


@dataclass(frozen=True)
class TrainConfig:
    tau_start: float = 0.5
    tau_end: float = 0.1
    rounds: int = 5
    teacher_epochs: int = 30
    student_epochs: int = 6
    lr_teacher: float = 3e-4
    lr_student: float = 3e-5
    batch_size: int = 32
    reannotate: bool = True
    use_ctc: bool = True
    ctc_weight: float = 1.0

    def selftrain_config(self):
        return SelfTrainConfig(
            tau_start=self.tau_start, tau_end=self.tau_end, rounds=self.rounds,
            teacher_epochs=self.teacher_epochs, student_epochs=self.student_epochs,
            lr_teacher=self.lr_teacher, lr_student=self.lr_student,
            batch_size=self.batch_size, reannotate=self.reannotate)


@dataclass(frozen=True)
class RunConfig:
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    scores: ScoreConfig = field(default_factory=ScoreConfig)
    network: NetConfig = field(default_factory=NetConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    scalar_task: bool = False
    out_dir: str = "runs/out"
    data_path: str = None                 # defaults to <out_dir>/dataset.txt

    def dataset_path(self):
        return self.data_path or f"{self.out_dir}/dataset.txt"

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return config_from_dict(d)


_SECTION_TYPES = {
    "anchors": AnchorConfig,
    "scores": ScoreConfig,
    "network": NetConfig,
    "data": DataConfig,
    "train": TrainConfig,
}


def _coerce(cls, d):
    fields = {f for f in cls.__dataclass_fields__}
    unknown = set(d) - fields
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = {}
    for k, v in d.items():
        if isinstance(v, list):
            v = tuple(v)
        kw[k] = v
    return cls(**kw)


def config_from_dict(d) -> RunConfig:
    d = dict(d)
    kw = {}
    for name, cls in _SECTION_TYPES.items():
        section = d.pop(name, {})
        if isinstance(section, cls):
            kw[name] = section
            continue
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be an object")
        kw[name] = _coerce(cls, section)
    known = {"seed", "scalar_task", "out_dir", "data_path"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw.update(d)
    cfg = RunConfig(**kw)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig):
    """Check every field against module invariants before any computation."""
    a = cfg.anchors
    if a.n_rot < 1 or a.n_vx < 1 or a.n_vy < 1 or a.n_z < 1:
        raise ConfigError("anchor counts must be positive")
    for lo, hi, name in ((a.vx_range + ("vx_range",)), (a.vy_range + ("vy_range",)),
                         (a.z_range + ("z_range",))):
        if not hi > lo:
            raise ConfigError(f"anchors.{name} must be increasing")
    try:
        cfg.scores.label_config()
    except InvalidArgumentError as e:
        raise ConfigError(f"invalid score assignment: {e}") from e
    if cfg.scores.k_rot > a.n_rot or cfg.scores.k_z > a.n_z \
            or cfg.scores.k_vxvy > min(a.n_vx, a.n_vy):
        raise ConfigError("nearest-neighbor counts exceed anchor counts")
    d = cfg.data
    if d.n_source < 1 or d.n_target < 1:
        raise ConfigError("dataset sizes must be positive")
    if d.n_points < 4:
        raise ConfigError("object models need at least 4 points")
    for kind in d.object_kinds:
        if kind not in ("box", "cylinder", "blob"):
            raise ConfigError(f"unknown object kind {kind!r}")
    if not (d.z_sample_range[0] > 0 and d.z_sample_range[1] <= a.z_range[1]
            and d.z_sample_range[0] >= a.z_range[0]):
        raise ConfigError("z sample range must be positive and inside the anchor range")
    if min(d.camera[:2]) <= 0:
        raise ConfigError("focal lengths must be positive")
    t = cfg.train
    try:
        t.selftrain_config()
    except InvalidArgumentError as e:
        raise ConfigError(f"invalid self-training schedule: {e}") from e
    if t.ctc_weight < 0:
        raise ConfigError("ctc_weight must be >= 0")
    if cfg.network.feature_dim < 1 or cfg.network.head_hidden < 1:
        raise ConfigError("network sizes must be positive")


def load_config(path, overrides=None) -> RunConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    if overrides:
        raw.update(overrides)
    return config_from_dict(raw)


def save_config(path, cfg: RunConfig):
    """Capture the full effective configuration for provenance."""
    with open(path, "w") as f:
        json.dump(asdict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")
