"""Tests for the property gate"""

import numpy as np
import pytest

from mcnf_tools.checks import (
    CheckResult,
    check_closed_form_flow,
    check_densemat,
    check_estimator,
    check_geometry,
    check_identity_calibration,
    corrupt_generators,
)
from mcnf_tools.manifolds import build_manifold
from mcnf_tools.reporting import print_check_results


def corrupted_build(name):
    return corrupt_generators(build_manifold(name))


class TestChecks:
    """Each check passes on the real implementation"""

    def test_densemat(self):
        results = check_densemat(np.random.default_rng(0))
        assert len(results) == 3
        assert all(r.passed for r in results), results

    @pytest.mark.parametrize("name", ['sphere:2', 'so:3', 'su:2', 'stiefel:2:4', 'spd:2'])
    def test_geometry(self, name):
        results = check_geometry(name, np.random.default_rng(1))
        assert all(r.passed for r in results), results

    def test_estimator(self):
        result = check_estimator('sphere:2', np.random.default_rng(2), n_points=3, n_probes=5000)
        assert result.passed, result
        assert result.bound == 3.0

    @pytest.mark.parametrize("name", ['so:3', 'su:2'])
    def test_closed_form_flow(self, name):
        result = check_closed_form_flow(name, np.random.default_rng(3))
        assert result.passed, result

    def test_identity_calibration(self):
        result = check_identity_calibration('so:3', n_samples=500)
        assert result.passed, result


class TestNegativeControl:
    """A corrupted generator set must be caught"""

    def test_corrupted_generators_fail_tangency(self):
        results = check_geometry('sphere:2', np.random.default_rng(4), build=corrupted_build)
        tangency = [r for r in results if 'tangency' in r.name]
        assert len(tangency) == 1
        assert not tangency[0].passed

    def test_corrupted_group_generators_fail_tangency(self):
        results = check_geometry('so:3', np.random.default_rng(5), build=corrupted_build)
        assert not all(r.passed for r in results)

    def test_corruption_keeps_manifold_type(self):
        man = corrupt_generators(build_manifold('so:3'))
        assert isinstance(man, type(build_manifold('so:3')))
        assert man.spec.kind == 'so'


class TestReporting:
    """Test the check summary printout"""

    def test_print_results(self, capsys):
        results = [
            CheckResult('a: passes', True, 1e-12, 1e-10, 0.01),
            CheckResult('b: fails', False, 1.0, 1e-10, 0.02, 'detail text'),
        ]
        print_check_results(results)
        out = capsys.readouterr().out
        assert 'PASS' in out and 'FAIL' in out
        assert '1 passed, 1 failed' in out
