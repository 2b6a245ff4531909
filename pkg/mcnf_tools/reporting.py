"""
Run outputs
Writers for the files a run leaves in its output directory, and the console
summaries printed by the command-line tools
"""

from pathlib import Path

import numpy as np

from .constants import (
    CENTERS_FILE,
    CHECKPOINT_FILE,
    CONFIG_ECHO_FILE,
    EVAL_FILE,
    MANIFOLD_NAMES,
    SAMPLES_FILE,
    TRAIN_LOG_COLUMNS,
    TRAIN_LOG_FILE,
)
from .net import save_checkpoint
from .targets import save_centers
from .utilities import atomic_write_text, format_float, write_csv, write_json


class RunReporter:
    """Writes checkpoint, logs and reports of one run into its output directory"""

    def __init__(self, output_dir):
        self.output_dir = Path(output_dir)

    def path(self, name):
        return self.output_dir / name

    def write_config(self, config):
        return atomic_write_text(self.path(CONFIG_ECHO_FILE), config.to_toml())

    def write_checkpoint(self, params, config, n_steps):
        return save_checkpoint(
            self.path(CHECKPOINT_FILE),
            params,
            config.manifold,
            config.seed,
            extra={'n_steps': int(n_steps)},
        )

    def write_train_log(self, records):
        rows = [[r.step, format_float(r.loss), format_float(r.wall_ms), format_float(r.n_ode_steps_mean)]
                for r in records]
        return write_csv(self.path(TRAIN_LOG_FILE), TRAIN_LOG_COLUMNS, rows)

    def write_centers(self, target):
        return save_centers(self.path(CENTERS_FILE), target)

    def write_eval(self, report, config, wall_seconds=None, path=None):
        """eval.json: the report fields plus an echo of the validated config"""
        payload = report.to_dict()
        payload['config'] = config.to_dict()
        if wall_seconds is not None:
            payload['wall_seconds'] = round(float(wall_seconds), 3)
        return write_json(path or self.path(EVAL_FILE), payload)

    def write_samples(self, samples, path=None):
        """One row per model sample: ambient coordinates, log ρ_λ, log ρ*"""
        dim = samples.points.shape[1]
        header = [f"x{i}" for i in range(dim)] + ['log_model', 'log_target']
        rows = (
            [format_float(v) for v in point] + [format_float(lm), format_float(lt)]
            for point, lm, lt in zip(samples.points, samples.log_model, samples.log_target)
        )
        return write_csv(path or self.path(SAMPLES_FILE), header, rows)


def print_run_header(title, config):
    """Banner naming the manifold and target of a run"""
    spec = config.manifold_spec()
    t = config.target
    print(title)
    print("=" * 80)
    print(f"Manifold: {spec} - {MANIFOLD_NAMES[spec.kind]}")
    print(f"  ambient dimension: {spec.ambient_dim}, generators: {spec.gen_count}, "
          f"intrinsic dimension: {spec.intrinsic_dim}")
    print(f"Target: {t.family} (beta={t.beta:g}, k={t.k})")
    print(f"Seed: {config.seed}")
    print(f"Output directory: {config.output_path.absolute()}")
    print()


def print_train_summary(records):
    """Training progress table at a few checkpoints"""
    print("TRAINING SUMMARY")
    print("=" * 80)
    if not records:
        print("No training steps were run.")
        print()
        return
    print(f"\n{'Step':<8} {'Loss':>12} {'Mean loss':>12} {'ODE steps':>10} {'ms/step':>10}")
    print("-" * 80)
    marks = sorted(set(np.linspace(0, len(records) - 1, min(10, len(records))).astype(int)))
    losses = np.array([r.loss for r in records])
    for i in marks:
        r = records[i]
        window = losses[max(0, i - 49): i + 1]
        print(f"{r.step + 1:<8} {r.loss:>12.5f} {window.mean():>12.5f} "
              f"{r.n_ode_steps_mean:>10.1f} {r.wall_ms:>10.1f}")
    dropped = sum(r.n_dropped for r in records)
    total_ms = sum(r.wall_ms for r in records)
    print(f"\nSteps: {len(records)}, dropped samples: {dropped}, wall time: {total_ms / 1000.0:.1f} s")
    print()


def print_eval_summary(report):
    print("EVALUATION")
    print("=" * 80)
    print(f"KL divergence:          {report.kl_nats:.5f} nats")
    print(f"Effective sample size:  {report.ess_percent:.2f} %")
    print(f"Normalization estimate: {report.z_hat:.6g} (log {report.log_z_hat:.5f})")
    print(f"Samples: {report.n_samples} (dropped {report.n_dropped})")
    print()


def print_saved_files(paths):
    print("Files written:")
    for p in paths:
        print(f"  - {Path(p).absolute()}")
    print()


def print_check_results(results):
    """Pass/fail table of the property gate with measured residuals"""
    print("PROPERTY CHECKS")
    print("=" * 80)
    print(f"\n{'Check':<44} {'Status':<6} {'Measured':>12} {'Bound':>12} {'Time':>7}")
    print("-" * 80)
    for r in results:
        status = 'PASS' if r.passed else 'FAIL'
        print(f"{r.name:<44} {status:<6} {r.value:>12.3e} {r.bound:>12.3e} {r.seconds:>6.1f}s")
        if r.detail and not r.passed:
            print(f"    {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"\n{len(results) - failed} passed, {failed} failed")
    print()
