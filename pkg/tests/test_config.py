"""Tests for experiment configuration"""

from pathlib import Path

import numpy as np
import pytest

from mcnf_tools.config import ExperimentConfig, TargetConfig, load_config
from mcnf_tools.exceptions import ConfigError
from mcnf_tools.ode import EVAL_SOLVER
from mcnf_tools.targets import make_target, save_centers

FULL_CONFIG = """
manifold = "so:3"
seed = 4
output_dir = "runs/so3"

[target]
family = "langevin"
beta = 10
k = 2

[train]
batch_size = 64
lr = 0.001
n_steps = 10
threads = 2

[solver]
rtol = 1e-5
atol = 1e-5

[eval_solver]
max_steps = 500
"""


def config_error_key(text):
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_toml(text)
    return err.value.key


class TestParsing:
    """Test reading TOML documents"""

    def test_minimal(self):
        config = ExperimentConfig.from_toml('manifold = "sphere:2"\n')
        assert config.manifold == 'sphere:2'
        assert config.target.family == 'base'
        assert config.train.n_steps == 5000
        assert config.eval_solver == EVAL_SOLVER

    def test_full(self):
        config = ExperimentConfig.from_toml(FULL_CONFIG)
        assert config.seed == 4
        assert config.target == TargetConfig(family='langevin', beta=10.0, k=2)
        assert isinstance(config.target.beta, float)
        assert (config.train.batch_size, config.train.lr, config.train.threads) == (64, 0.001, 2)
        assert config.solver.rtol == 1e-5
        assert config.eval_solver.max_steps == 500
        assert config.eval_solver.rtol == EVAL_SOLVER.rtol

    def test_seed_propagates_to_training(self):
        config = ExperimentConfig.from_toml(FULL_CONFIG)
        assert config.train.seed == 4
        assert config.with_seed(9).train.seed == 9

    def test_manifold_normalized(self):
        assert ExperimentConfig.from_toml('manifold = " SO:3 "\n').manifold == 'so:3'

    def test_round_trip(self):
        config = ExperimentConfig.from_toml(FULL_CONFIG)
        assert ExperimentConfig.from_toml(config.to_toml()) == config

    def test_load_config(self, tmp_path):
        path = tmp_path / 'run.toml'
        path.write_text(FULL_CONFIG, encoding='utf-8')
        assert load_config(path).manifold == 'so:3'

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError) as err:
            load_config(tmp_path / 'absent.toml')
        assert err.value.key == 'config'

    def test_conjugation_coefficients(self):
        preset = ExperimentConfig.from_toml(
            'manifold = "su:3"\n[target]\nfamily = "conjugation_invariant"\ncoefficients = "c2"\n')
        assert preset.target.coefficients == 'c2'
        explicit = ExperimentConfig.from_toml(
            'manifold = "su:3"\n[target]\nfamily = "conjugation_invariant"\ncoefficients = [1, 0.5]\n')
        assert explicit.target.coefficients == [1.0, 0.5]


class TestValidation:
    """Test that bad documents name the offending key"""

    def test_invalid_toml(self):
        assert config_error_key('manifold = ') == 'config'

    def test_missing_manifold(self):
        assert config_error_key('seed = 1\n') == 'manifold'

    def test_unknown_manifold(self):
        assert config_error_key('manifold = "torus:2"\n') == 'manifold'

    def test_unknown_top_level_key(self):
        assert config_error_key('manifold = "sphere:2"\nepochs = 3\n') == 'epochs'

    def test_unknown_section_key(self):
        assert config_error_key('manifold = "sphere:2"\n[train]\nbatchsize = 3\n') == 'train.batchsize'

    def test_seed_not_settable_in_train(self):
        assert config_error_key('manifold = "sphere:2"\n[train]\nseed = 3\n') == 'train.seed'

    def test_wrong_type(self):
        assert config_error_key('manifold = "sphere:2"\n[train]\nbatch_size = "big"\n') == 'train.batch_size'

    def test_float_for_integer(self):
        assert config_error_key('manifold = "sphere:2"\n[train]\nn_steps = 10.5\n') == 'train.n_steps'

    def test_boolean_rejected(self):
        assert config_error_key('manifold = "sphere:2"\n[train]\nlr = true\n') == 'train.lr'

    def test_invalid_value(self):
        assert config_error_key('manifold = "sphere:2"\n[train]\nlr = -1.0\n') == 'train.lr'

    def test_negative_seed(self):
        assert config_error_key('manifold = "sphere:2"\nseed = -1\n') == 'seed'

    def test_family_not_on_manifold(self):
        assert config_error_key('manifold = "so:3"\n[target]\nfamily = "vmf"\n') == 'target.family'

    @pytest.mark.parametrize("beta", ['2', '20.5'])
    def test_wishart_beta(self, beta):
        text = f'manifold = "spd:2"\n[target]\nfamily = "wishart"\nbeta = {beta}\n'
        assert config_error_key(text) == 'target.beta'

    def test_spd_base_beta(self):
        assert config_error_key('manifold = "spd:3"\n[target]\nbeta = 1.5\n') == 'target.beta'

    def test_bad_solver(self):
        assert config_error_key('manifold = "sphere:2"\n[solver]\nrtol = 0.0\n') == 'solver'

    def test_bad_coefficients(self):
        text = 'manifold = "su:3"\n[target]\nfamily = "conjugation_invariant"\ncoefficients = ["a"]\n'
        assert config_error_key(text) == 'target.coefficients'

    def test_section_not_a_table(self):
        assert config_error_key('manifold = "sphere:2"\ntrain = 3\n') == 'train'


class TestBuilders:
    """Test manifold and target construction from a config"""

    def test_spd_beta_from_target(self):
        config = ExperimentConfig.from_toml('manifold = "spd:2"\n[target]\nfamily = "wishart"\nbeta = 8\n')
        manifold = config.build_manifold()
        assert manifold.beta == 8.0
        assert str(config.manifold_spec()) == 'spd:2'

    def test_centers_from_seed(self):
        config = ExperimentConfig.from_toml(FULL_CONFIG)
        a = config.build_target().spec.centers
        b = config.build_target().spec.centers
        c = config.with_seed(5).build_target().spec.centers
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert a.shape == (2, 9)

    def test_centers_file(self, tmp_path):
        saved = make_target('sphere:2', 'vmf', 3.0, centers=[[0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
        path = save_centers(tmp_path / 'centers.json', saved)
        config = ExperimentConfig.from_toml(
            f'manifold = "sphere:2"\n[target]\nfamily = "vmf"\nbeta = 3.0\ncenters_file = "{path.as_posix()}"\n')
        target = config.build_target()
        assert np.array_equal(target.spec.centers, saved.spec.centers)

    def test_with_threads(self):
        config = ExperimentConfig.from_toml(FULL_CONFIG).with_threads(8)
        assert config.train.threads == 8
        assert config.train.batch_size == 64

    def test_output_path(self):
        assert ExperimentConfig.from_toml(FULL_CONFIG).output_path.as_posix() == 'runs/so3'


class TestShippedConfigs:
    """The example configs in configs/ are valid"""

    CONFIG_DIR = Path(__file__).resolve().parent.parent / 'configs'

    @pytest.mark.parametrize("name", sorted(p.name for p in CONFIG_DIR.glob('*.toml')))
    def test_loads(self, name):
        config = load_config(self.CONFIG_DIR / name)
        assert config.output_path.parts[0] == 'runs'
        config.build_target()
