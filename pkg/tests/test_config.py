import os

import numpy as np
import pytest

from motioncluster.config import (Config, ConfigError, dump_config, from_dict, load_config,
                                  to_dict)
from motioncluster.losses import HINGE_WEIGHTS
from motioncluster.util import InputError

DEFAULT_YAML = os.path.join(os.path.dirname(__file__), '..', 'config', 'default.yaml')


def test_defaults():
    config = load_config()
    assert(config.targets.k == 5)
    assert(config.targets.initial_targets == 16)
    assert(config.selection.n_bins == 6)
    assert(config.pipeline.iterations == 5)
    assert(config.losses.hinge == HINGE_WEIGHTS)


def test_default_file_matches_defaults():
    assert(to_dict(load_config(DEFAULT_YAML)) == to_dict(Config()))


def test_units_and_nesting(tmp_path):
    path = tmp_path / 'run.yaml'
    path.write_text('losses:\n  hinge:\n    tau_theta: 17 deg\n'
                    'selection:\n  lambda2: 3.0\n'
                    'pipeline:\n  ablate: [physics]\n')
    config = load_config(str(path))
    assert(config.losses.hinge.tau_theta == pytest.approx(np.radians(17)))
    assert(config.losses.prismatic.tau_theta == pytest.approx(0.3))
    assert(config.selection.lambda2 == 3.0)
    assert(config.pipeline.ablate == ('physics',))
    assert(config.weights('hinge').w_collide == 0)
    assert(config.weights('prismatic').w_joint == config.losses.prismatic.w_joint)


def test_unknown_key():
    with pytest.raises(ConfigError) as e:
        from_dict({'selection': {'lambda9': 1.0}})
    assert('selection.lambda9' in str(e.value))
    with pytest.raises(ConfigError):
        from_dict({'network': {}})


def test_bad_values():
    with pytest.raises(ConfigError):
        from_dict({'pipeline': {'iterations': 0}})
    with pytest.raises(ConfigError):
        from_dict({'pipeline': {'ablate': ['gravity']}})
    with pytest.raises(ConfigError):
        from_dict({'losses': {'hinge': {'w_joint': -1.0}}})
    with pytest.raises(ConfigError):
        from_dict({'selection': 3})
    with pytest.raises(InputError):
        from_dict({'losses': {'hinge': {'tau_theta': '3 furlongs'}}})


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / 'missing.yaml'))
    broken = tmp_path / 'broken.yaml'
    broken.write_text('pipeline: [unclosed\n')
    with pytest.raises(ConfigError):
        load_config(str(broken))


def test_override():
    config = Config().override(iterations=2, k=3, seed=None, workers=4)
    assert(config.pipeline.iterations == 2)
    assert(config.targets.k == 3)
    assert(config.pipeline.seed == 0)
    assert(config.pipeline.workers == 4)
    with pytest.raises(ConfigError):
        Config().override(k=0).validate()


def test_dump_and_load(tmp_path):
    config = from_dict({'pipeline': {'seed': 9, 'ablate': ['deformation']},
                        'losses': {'prismatic': {'w_collide': 0.25}}})
    path = str(tmp_path / 'config.yaml')
    dump_config(config, path)
    assert(load_config(path) == config)
