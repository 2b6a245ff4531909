"""
Experiment configuration

An experiment is described by a small TOML document:

    manifold = "sphere:2"
    seed = 1
    output_dir = "runs/sphere"

    [target]
    family = "vmf"
    beta = 10.0
    k = 4

    [train]
    n_steps = 5000

    [solver]
    rtol = 1e-6

Every value is validated when the config is built; unknown keys are
rejected with the dotted key in the error message.
"""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import tomli_w

from .constants import CONJUGATION_PRESETS, STREAM_CENTERS, TARGET_FAMILIES
from .exceptions import ConfigError, McnfError
from .manifolds import ManifoldSpec, build_manifold
from .ode import EVAL_SOLVER, SolverConfig
from .targets import load_centers, make_target
from .train import TrainConfig
from .utilities import make_rng

DEFAULT_OUTPUT_DIR = 'mcnf_output'


@dataclass
class TargetConfig:
    family: str = 'base'
    beta: float = 1.0
    k: int = 1
    centers_file: Optional[str] = None
    coefficients: Optional[Union[str, List[float]]] = None

    def __post_init__(self):
        if self.family not in TARGET_FAMILIES:
            raise ConfigError('target.family', f"unknown family '{self.family}' (known: {', '.join(TARGET_FAMILIES)})")
        if not self.beta > 0:
            raise ConfigError('target.beta', f"must be positive, got {self.beta}")
        if self.k < 1:
            raise ConfigError('target.k', f"must be >= 1, got {self.k}")
        if isinstance(self.coefficients, str):
            if self.coefficients not in CONJUGATION_PRESETS:
                raise ConfigError('target.coefficients', f"unknown preset '{self.coefficients}'")
        elif self.coefficients is not None:
            self.coefficients = [float(c) for c in self.coefficients]
            if not self.coefficients:
                raise ConfigError('target.coefficients', "coefficient vector is empty")


def _section(cls, name, data, skip=()):
    """Build a dataclass from a TOML table, rejecting unknown keys and wrong types"""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(name, "expected a table")
    known = {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}
    values = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown key")
        default = known[key].default
        if isinstance(default, bool) or isinstance(value, bool):
            raise ConfigError(f"{name}.{key}", f"unexpected boolean {value!r}")
        if isinstance(default, int) and not isinstance(value, int):
            raise ConfigError(f"{name}.{key}", f"expected an integer, got {value!r}")
        if isinstance(default, float):
            if not isinstance(value, (int, float)):
                raise ConfigError(f"{name}.{key}", f"expected a number, got {value!r}")
            value = float(value)
        if isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"{name}.{key}", f"expected a string, got {value!r}")
        values[key] = value
    try:
        return cls(**values)
    except McnfError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from exc


def _drop_none(data):
    return {k: v for k, v in data.items() if v is not None}


@dataclass
class ExperimentConfig:
    """Manifold, target, training and solver settings of one run"""

    manifold: str
    seed: int = 0
    output_dir: str = DEFAULT_OUTPUT_DIR
    target: TargetConfig = field(default_factory=TargetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    eval_solver: SolverConfig = EVAL_SOLVER

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError('seed', f"must be a nonnegative integer, got {self.seed!r}")
        spec = self.manifold_spec()
        self.manifold = str(spec)
        family = self.target.family
        if spec.kind not in TARGET_FAMILIES[family]:
            raise ConfigError('target.family', f"'{family}' is not defined on {spec}")
        if family == 'wishart':
            beta = self.target.beta
            if beta < spec.n + 1 or beta != int(beta):
                raise ConfigError('target.beta', f"Wishart needs an integer beta >= {spec.n + 1}, got {beta}")
        elif spec.kind == 'spd' and not self.target.beta > spec.n - 1:
            raise ConfigError('target.beta', f"the spd:{spec.n} base density needs beta > {spec.n - 1}")
        if self.train.seed != self.seed:
            self.train = dataclasses.replace(self.train, seed=self.seed)

    def manifold_spec(self):
        """ManifoldSpec; SPD manifolds take the target beta for their base density"""
        spec = ManifoldSpec.parse(self.manifold)
        if spec.kind == 'spd':
            spec = ManifoldSpec(spec.kind, spec.n, beta=self.target.beta)
        return spec

    def build_manifold(self):
        return build_manifold(self.manifold_spec())

    def build_target(self, manifold=None):
        """Target with centers from centers_file, or drawn from the run's center stream"""
        manifold = manifold or self.build_manifold()
        t = self.target
        centers = None
        if t.centers_file and t.family not in ('conjugation_invariant', 'base'):
            centers = load_centers(t.centers_file, manifold)
        return make_target(
            manifold,
            t.family,
            t.beta,
            k=t.k,
            rng=make_rng(self.seed, STREAM_CENTERS),
            centers=centers,
            coefficients=t.coefficients,
        )

    def with_seed(self, seed):
        return dataclasses.replace(self, seed=int(seed))

    def with_threads(self, threads):
        return dataclasses.replace(self, train=dataclasses.replace(self.train, threads=int(threads)))

    @property
    def output_path(self):
        return Path(self.output_dir)

    # --- serialization ------------------------------------------------------

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        allowed = {'manifold', 'seed', 'output_dir', 'target', 'train', 'solver', 'eval_solver'}
        for key in data:
            if key not in allowed:
                raise ConfigError(key, "unknown key")
        if 'manifold' not in data:
            raise ConfigError('manifold', "missing required key")
        if not isinstance(data['manifold'], str):
            raise ConfigError('manifold', f"expected a string, got {data['manifold']!r}")
        output_dir = data.get('output_dir', DEFAULT_OUTPUT_DIR)
        if not isinstance(output_dir, str):
            raise ConfigError('output_dir', f"expected a string, got {output_dir!r}")

        target = data.get('target') or {}
        coefficients = target.get('coefficients') if isinstance(target, dict) else None
        if isinstance(coefficients, list):
            if not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in coefficients):
                raise ConfigError('target.coefficients', "expected a list of numbers or a preset name")
        elif coefficients is not None and not isinstance(coefficients, str):
            raise ConfigError('target.coefficients', "expected a list of numbers or a preset name")
        target_cfg = _section(
            TargetConfig,
            'target',
            {k: v for k, v in target.items() if k != 'coefficients'} if isinstance(target, dict) else target,
        )
        if coefficients is not None:
            target_cfg = dataclasses.replace(target_cfg, coefficients=coefficients)

        eval_solver = EVAL_SOLVER
        overrides = data.get('eval_solver')
        if overrides is not None:
            if not isinstance(overrides, dict):
                raise ConfigError('eval_solver', "expected a table")
            eval_solver = _section(
                SolverConfig, 'eval_solver', {**dataclasses.asdict(EVAL_SOLVER), **overrides}
            )

        return cls(
            manifold=data['manifold'],
            seed=data.get('seed', 0),
            output_dir=output_dir,
            target=target_cfg,
            train=_section(TrainConfig, 'train', data.get('train'), skip=('seed',)),
            solver=_section(SolverConfig, 'solver', data.get('solver')),
            eval_solver=eval_solver,
        )

    def to_dict(self):
        train = dataclasses.asdict(self.train)
        train.pop('seed')
        return {
            'manifold': self.manifold,
            'seed': self.seed,
            'output_dir': self.output_dir,
            'target': _drop_none(dataclasses.asdict(self.target)),
            'train': train,
            'solver': dataclasses.asdict(self.solver),
            'eval_solver': dataclasses.asdict(self.eval_solver),
        }

    @classmethod
    def from_toml(cls, text):
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError('config', f"invalid TOML: {exc}") from exc
        return cls.from_dict(data)

    def to_toml(self):
        return tomli_w.dumps(self.to_dict())


def load_config(path):
    """Read and validate an experiment config file"""
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as exc:
        raise ConfigError('config', f"cannot read {path}: {exc}") from exc
    return ExperimentConfig.from_toml(text)
