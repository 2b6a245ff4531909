#!/usr/bin/env python3
"""
Example Usage of MCNF Tools
Demonstrates how to build manifolds, integrate flows and train a density match programmatically
"""

import sys

import numpy as np

from mcnf_tools import (
    ExperimentConfig,
    FlowField,
    SolverConfig,
    TargetConfig,
    TrainConfig,
    build_manifold,
    evaluate,
    forward_flow,
    make_target,
    train,
)
from mcnf_tools import net
from mcnf_tools.constants import MANIFOLD_NAMES
from mcnf_tools.densemat import matrix_exp
from mcnf_tools.reporting import RunReporter, print_eval_summary, print_train_summary
from mcnf_tools.train import initial_field


def example_manifolds():
    """Example 1: Manifolds, generating sets and base samples"""
    print("=" * 80)
    print("EXAMPLE 1: Manifolds and Generating Sets")
    print("=" * 80)

    rng = np.random.default_rng(0)
    print(f"{'Manifold':<14} {'Ambient':>8} {'Generators':>11} {'Dimension':>10} {'Max tangency residual':>22}")
    print("-" * 80)
    for name in ('sphere:2', 'so:3', 'u:2', 'su:2', 'stiefel:2:4', 'spd:2'):
        man = build_manifold(name)
        x = man.sample_base(rng, 20)
        gens = man.generators(x)
        residual = max(float(np.max(man.is_tangent(x, gens[:, i, :]))) for i in range(man.gen_count))
        print(f"{name:<14} {man.dim:>8} {man.gen_count:>11} {man.spec.intrinsic_dim:>10} {residual:>22.2e}")
        print(f"  {MANIFOLD_NAMES[man.spec.kind]}")
    print()


def example_closed_form_flow():
    """Example 2: A constant-coefficient field on SO(3) is a left-invariant flow"""
    print("=" * 80)
    print("EXAMPLE 2: Closed-Form Flow on SO(3)")
    print("=" * 80)

    rng = np.random.default_rng(1)
    man = build_manifold('so:3')
    coeffs = np.array([0.3, -0.7, 1.1])
    ff = FlowField(man, net.MlpParams.constant(net.architecture(man.spec), coeffs))

    a = man.sample_base(rng)
    result = forward_flow(ff, a, 0.0, SolverConfig(rtol=1e-8, atol=1e-8))
    expected = man.to_matrix(a) @ matrix_exp(sum(c * v for c, v in zip(coeffs, man.basis)))

    print(f"ODE steps: {result.n_steps} (rejected {result.n_rejected})")
    print(f"Distance to a·exp(Σ c_i v_i): {np.linalg.norm(man.to_matrix(result.point) - expected):.2e}")
    print(f"Log-density change: {result.delta_logp}")
    print()


def example_divergence_estimate():
    """Example 3: Exact divergence against the Rademacher estimate"""
    print("=" * 80)
    print("EXAMPLE 3: Divergence Estimate")
    print("=" * 80)

    rng = np.random.default_rng(2)
    man = build_manifold('sphere:2')
    ff = initial_field(man, seed=2)
    ff = ff.with_params(ff.params.scaled(50.0))
    x = man.sample_base(rng, 3)

    exact = ff.divergence_exact(0.5, x)
    for n_probes in (1, 100, 10000):
        estimate = ff.divergence_estimate(0.5, x, rng=rng, n_probes=n_probes)
        print(f"{n_probes:>6} probes: max |estimate - exact| = {np.max(np.abs(estimate - exact)):.3e}")
    print()


def example_training(output_dir=None):
    """Example 4: Short training run on a vMF mixture over the 2-sphere"""
    print("=" * 80)
    print("EXAMPLE 4: Training a Flow on S^2")
    print("=" * 80)

    config = ExperimentConfig(
        manifold='sphere:2',
        seed=4,
        output_dir=output_dir or 'example_output',
        target=TargetConfig(family='vmf', beta=5.0, k=2),
    )

    man = config.build_manifold()
    target = config.build_target(man)
    ff = initial_field(man, config.seed)
    cfg = TrainConfig(n_steps=200, batch_size=64, lr=5e-3, eval_sample_size=2000, seed=config.seed, log_every=50)

    result = train(ff, target, cfg)
    print_train_summary(result.records)
    report = evaluate(ff.with_params(result.params), target, cfg)
    print_eval_summary(report)

    if output_dir is not None:
        reporter = RunReporter(output_dir)
        reporter.write_checkpoint(result.params, config, len(result.records))
        reporter.write_train_log(result.records)
        reporter.write_centers(target)
        print(f"Run files written to: {output_dir}")
    print()


def example_target_density():
    """Example 5: Evaluating a target density directly"""
    print("=" * 80)
    print("EXAMPLE 5: Wishart Mixture on SPD(2)")
    print("=" * 80)

    man = build_manifold('spd:2')
    target = make_target(man, 'wishart', beta=20.0, k=4)
    points = man.from_matrix(np.array([np.eye(2) * s for s in (0.02, 0.05, 0.1, 0.5)]))
    for scale, value in zip((0.02, 0.05, 0.1, 0.5), target.log_target(points)):
        print(f"  log ρ*({scale:g}·I) = {value:.4f}")
    print()


def main():
    """Run all examples"""
    output_dir = sys.argv[1] if len(sys.argv) > 1 else None

    print("\n" + "=" * 80)
    print("MCNF TOOLS EXAMPLES")
    print("=" * 80 + "\n")

    example_manifolds()
    example_closed_form_flow()
    example_divergence_estimate()
    example_target_density()
    example_training(output_dir)

    print("=" * 80)
    print("All examples completed!")
    print("=" * 80)


if __name__ == '__main__':
    main()
