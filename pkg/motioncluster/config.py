"""
Run configuration.

Every constant of the method lives here. Files are YAML; angles may carry
units ('0.3 rad', '17 deg'). Unknown keys are rejected.
"""

import logging
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace

import yaml

from .losses import ABLATIONS, HINGE_WEIGHTS, PRISMATIC_WEIGHTS, LossWeights
from .util import InputError, parse_quantity

log = logging.getLogger(__name__)

ANGLE_KEYS = {'tau_theta'}


class ConfigError(InputError):
    """A configuration file that cannot be used."""


@dataclass(frozen=True)
class SamplingConfig:
    points_per_part: int = 512
    dense_factor: int = 4
    eps_connect: float = None
    component_eps: float = 0.05
    tiny_fraction: float = 0.02
    contact_count: int = 10
    neighbor_count: int = 50


@dataclass(frozen=True)
class LossConfig:
    hinge: LossWeights = HINGE_WEIGHTS
    prismatic: LossWeights = PRISMATIC_WEIGHTS


@dataclass(frozen=True)
class OptimizationConfig:
    initial_epochs: int = 700
    initial_lr: float = 0.04
    iterative_epochs: int = 800
    iterative_lr: float = 0.008
    range_epochs: int = 200
    range_lr: float = 0.008
    prune: bool = True
    prune_at: float = 0.25
    points: int = 256


@dataclass(frozen=True)
class TargetConfig:
    initial_targets: int = 16
    k: int = 5
    range_targets: int = 16
    affine_steps: int = 100
    affine_points: int = 128
    anisotropy: float = 0.1
    encoder_points: int = 256
    initial_embedding_epochs: int = 150
    initial_embedding_lr: float = 0.04
    embedding_epochs: int = 800
    embedding_lr: float = 0.008


@dataclass(frozen=True)
class SelectionConfig:
    lambda1: float = 1.0
    lambda2: float = 2.0
    lambda3: float = 1.0
    lambda4: float = 0.5
    ratio_threshold: float = 1.5
    recon_threshold: float = 0.08
    n_bins: int = 6
    snap_threshold: float = 0.975


@dataclass(frozen=True)
class PipelineConfig:
    iterations: int = 5
    seed: int = 0
    workers: int = 1
    ablate: tuple = ()


@dataclass(frozen=True)
class Config:
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    optimization: OptimizationConfig = field(default_factory=OptimizationConfig)
    targets: TargetConfig = field(default_factory=TargetConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def weights(self, motion_type):
        base = self.losses.hinge if motion_type == 'hinge' else self.losses.prismatic
        return base.ablated(self.pipeline.ablate)

    def override(self, **values):
        """Replace pipeline/target values given on the command line; None is ignored."""
        pipeline = {k: v for k, v in values.items() if v is not None
                    and k in {f.name for f in fields(PipelineConfig)}}
        targets = {k: v for k, v in values.items() if v is not None
                   and k in {f.name for f in fields(TargetConfig)}}
        return replace(self, pipeline=replace(self.pipeline, **pipeline),
                       targets=replace(self.targets, **targets))

    def validate(self):
        if self.pipeline.iterations < 1:
            raise ConfigError('pipeline.iterations must be >= 1')
        if self.pipeline.workers < 1:
            raise ConfigError('pipeline.workers must be >= 1')
        if self.targets.k < 1:
            raise ConfigError('targets.k must be >= 1')
        unknown = set(self.pipeline.ablate) - set(ABLATIONS)
        if unknown:
            raise ConfigError('unknown ablations {}'.format(sorted(unknown)))
        if not 0 < self.optimization.prune_at < 1:
            raise ConfigError('optimization.prune_at must be in (0, 1)')
        return self


def _build(defaults, data, path):
    if not isinstance(data, dict):
        raise ConfigError('{} must be a mapping'.format(path or 'config'))
    known = {f.name: f for f in fields(defaults)}
    values = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError('unknown config key {}'.format('.'.join(filter(None, [path, key]))))
        default = getattr(defaults, key)
        name = '.'.join(filter(None, [path, key]))
        if is_dataclass(default):
            values[key] = _build(default, value, name)
        elif key in ANGLE_KEYS:
            values[key] = parse_quantity(value, 'angle')
        elif key == 'ablate':
            values[key] = tuple(value or ())
        else:
            values[key] = value
    try:
        return replace(defaults, **values)
    except (TypeError, ValueError) as e:
        raise ConfigError('{}: {}'.format(path or 'config', e))


def from_dict(data):
    return _build(Config(), data or {}, '').validate()


def load_config(path=None):
    """Load a YAML config file; None gives the defaults."""
    if path is None:
        return Config().validate()
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError('cannot read config {}: {}'.format(path, e))
    return from_dict(data)


def to_dict(config):
    data = asdict(config)
    data['pipeline']['ablate'] = list(config.pipeline.ablate)
    return data


def dump_config(config, path):
    with open(path, 'w') as f:
        yaml.safe_dump(to_dict(config), f, sort_keys=True)
