"""Tests for target densities and mixture centers"""

import json

import numpy as np
import pytest

from mcnf_tools.exceptions import ConfigError, ManifoldMismatchError, NotPositiveDefiniteError
from mcnf_tools.manifolds import build_manifold
from mcnf_tools.targets import (
    MixtureTarget,
    TargetSpec,
    load_centers,
    make_target,
    sample_centers,
    save_centers,
)

# (manifold, family, beta, k)
FAMILY_CASES = [
    ('sphere:2', 'vmf', 5.0, 3),
    ('so:3', 'langevin', 4.0, 2),
    ('stiefel:2:4', 'langevin', 3.0, 2),
    ('u:2', 'unitary_trace', 2.0, 2),
    ('su:3', 'unitary_trace', 2.0, 3),
    ('spd:2', 'wishart', 20.0, 4),
    ('spd:3', 'wishart', 20.0, 2),
    ('su:3', 'conjugation_invariant', 9.0, 1),
    ('spd:2', 'base', 1.0, 1),
    ('euclid:3', 'base', 1.0, 1),
]


class TestLogTarget:
    """Test component formulas on hand-checked values"""

    def test_vmf(self):
        target = make_target('sphere:2', 'vmf', 10.0, centers=[[1.0, 0.0, 0.0]])
        assert target.log_target(np.array([1.0, 0.0, 0.0])) == pytest.approx(10.0)

    def test_langevin_so3(self):
        """SO(3) uses m = n - 1: (10/2)·tr(I) = 15"""
        man = build_manifold('so:3')
        target = make_target(man, 'langevin', 10.0, centers=[man.from_matrix(np.eye(3))])
        assert target.log_target(man.from_matrix(np.eye(3))) == pytest.approx(15.0)

    def test_langevin_stiefel(self):
        man = build_manifold('stiefel:2:3')
        frame = man.from_matrix(np.eye(3)[:, :2])
        target = make_target(man, 'langevin', 6.0, centers=[frame])
        assert target.log_target(frame) == pytest.approx(6.0)

    def test_wishart(self):
        man = build_manifold('spd:2')
        eye = man.from_matrix(np.eye(2))
        target = make_target(man, 'wishart', 20.0, centers=[eye])
        assert target.log_target(eye) == pytest.approx(-1.0)

    def test_unitary_trace(self):
        """(β/n)·Re tr(W†U) with W = I and U = diag(i, -i)"""
        man = build_manifold('u:2')
        target = make_target(man, 'unitary_trace', 4.0, centers=[man.from_matrix(np.eye(2, dtype=complex))])
        assert target.log_target(man.from_matrix(np.eye(2, dtype=complex))) == pytest.approx(4.0)
        assert target.log_target(man.from_matrix(np.diag([1j, -1j]))) == pytest.approx(0.0, abs=1e-15)

    def test_conjugation_invariant_identity(self):
        """At U = I the density is (β/3)·3·Σ c_j"""
        man = build_manifold('su:3')
        target = make_target(man, 'conjugation_invariant', 9.0, coefficients=(1.0, 2.0, -0.5))
        assert target.log_target(man.from_matrix(np.eye(3, dtype=complex))) == pytest.approx(22.5)

    def test_mixture_is_logsumexp(self):
        centers = np.eye(3)[:2]
        target = make_target('sphere:2', 'vmf', 2.0, centers=centers)
        x = np.array([0.6, 0.8, 0.0])
        expected = np.log(np.exp(2.0 * 0.6) + np.exp(2.0 * 0.8))
        assert target.log_target(x) == pytest.approx(expected)

    def test_batch_shape(self):
        target = make_target('so:3', 'langevin', 1.0, k=3, rng=np.random.default_rng(0))
        x = target.manifold.sample_base(np.random.default_rng(1), 7)
        assert target.log_target(x).shape == (7,)
        assert target.grad_log_target(x).shape == (7, 9)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        target = make_target('sphere:3', 'vmf', 8.0, k=5, rng=rng)
        shuffled = make_target('sphere:3', 'vmf', 8.0, centers=target.spec.centers[::-1])
        x = target.manifold.sample_base(rng, 10)
        assert np.allclose(target.log_target(x), shuffled.log_target(x), atol=1e-12, rtol=0.0)

    @pytest.mark.parametrize("preset", ['c1', 'c2'])
    def test_conjugation_invariance(self, preset):
        man = build_manifold('su:3')
        target = make_target(man, 'conjugation_invariant', 9.0, coefficients=preset)
        rng = np.random.default_rng(3)
        for _ in range(10):
            u, v = man.to_matrix(man.sample_base(rng, 2))
            conj = v @ u @ v.conj().T
            assert target.log_target(man.from_matrix(conj)) == pytest.approx(
                target.log_target(man.from_matrix(u)), abs=1e-10)

    def test_base_family_matches_base_density(self):
        man = build_manifold('spd:2')
        target = make_target(man, 'base', 1.0)
        x = man.sample_base(np.random.default_rng(4), 5)
        assert np.allclose(target.log_target(x), man.base_log_density0(x))

    def test_wishart_outside_cone(self):
        man = build_manifold('spd:2')
        target = make_target(man, 'wishart', 20.0, k=1)
        with pytest.raises(NotPositiveDefiniteError):
            target.log_target(man.from_matrix(np.diag([1.0, -1.0])))


class TestGradLogTarget:
    """Test ambient gradients"""

    def test_vmf_constant(self):
        target = make_target('sphere:2', 'vmf', 3.0, centers=[[0.0, 1.0, 0.0]])
        x = target.manifold.sample_base(np.random.default_rng(0), 4)
        assert np.allclose(target.grad_log_target(x), np.tile([0.0, 3.0, 0.0], (4, 1)))

    def test_symmetric_mixture(self):
        """Equidistant point: softmax weights ½, ½"""
        target = make_target('sphere:2', 'vmf', 5.0, centers=np.eye(3)[:2])
        x = np.array([1.0, 1.0, 0.0]) / np.sqrt(2.0)
        assert np.allclose(target.grad_log_target(x), [2.5, 2.5, 0.0])

    @pytest.mark.parametrize("name,family,beta,k", FAMILY_CASES)
    def test_finite_differences(self, name, family, beta, k):
        """20 random ambient directions, central differences"""
        man = build_manifold(name)
        rng = np.random.default_rng(5)
        target = make_target(man, family, beta, k=k, rng=rng)
        x = man.sample_base(rng)
        grad = target.grad_log_target(x)
        h = 1e-6
        for _ in range(20):
            d = rng.standard_normal(man.dim)
            d /= np.linalg.norm(d)
            fd = (target.log_target(x + h * d) - target.log_target(x - h * d)) / (2 * h)
            assert np.dot(grad, d) == pytest.approx(fd, abs=1e-6 * max(1.0, abs(fd)))


class TestTargetValidation:
    """Test error handling"""

    def test_unknown_family(self):
        with pytest.raises(ConfigError) as err:
            TargetSpec('gaussian', 1.0, [[1.0]])
        assert err.value.key == 'target.family'

    def test_beta_positive(self):
        with pytest.raises(ConfigError):
            TargetSpec('vmf', 0.0, [[1.0, 0.0, 0.0]])

    def test_missing_centers(self):
        with pytest.raises(ConfigError):
            TargetSpec('vmf', 1.0)

    def test_wrong_manifold_kind(self):
        spec = TargetSpec('vmf', 1.0, [[1.0, 0.0, 0.0]])
        with pytest.raises(ManifoldMismatchError):
            MixtureTarget(build_manifold('so:3'), spec)

    def test_conjugation_only_on_su(self):
        with pytest.raises(ManifoldMismatchError):
            make_target('u:3', 'conjugation_invariant', 1.0)

    def test_center_dimension(self):
        with pytest.raises(ManifoldMismatchError):
            make_target('sphere:3', 'vmf', 1.0, centers=[[1.0, 0.0, 0.0]])

    def test_center_off_manifold(self):
        with pytest.raises(ConfigError):
            make_target('sphere:2', 'vmf', 1.0, centers=[[2.0, 0.0, 0.0]])

    def test_point_dimension(self):
        target = make_target('sphere:2', 'vmf', 1.0, centers=[[1.0, 0.0, 0.0]])
        with pytest.raises(ManifoldMismatchError):
            target.log_target(np.array([1.0, 0.0]))

    @pytest.mark.parametrize("beta", [2.0, 7.5])
    def test_wishart_beta(self, beta):
        man = build_manifold('spd:2')
        with pytest.raises(ConfigError) as err:
            make_target(man, 'wishart', beta, centers=[man.from_matrix(np.eye(2))])
        assert err.value.key == 'target.beta'

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            TargetSpec('conjugation_invariant', 1.0, coefficients='c9')

    def test_default_preset(self):
        assert TargetSpec('conjugation_invariant', 1.0).coefficients == (0.17, -0.65, 1.22)


class TestSampleCenters:
    """Test center generation"""

    def test_sphere(self):
        centers = sample_centers('sphere:2', 'vmf', 4, np.random.default_rng(0))
        assert centers.shape == (4, 3)
        assert np.allclose(np.linalg.norm(centers, axis=1), 1.0)

    def test_spd_fixed_centers(self):
        man = build_manifold('spd:2')
        centers = sample_centers(man, 'wishart', 4, None, beta=20.0)
        assert np.allclose(man.to_matrix(centers[0]), [[0.05, 0.0], [0.0, 0.1]])
        assert np.allclose(man.to_matrix(centers[3]), np.array([[2.0, -1.0], [-1.0, 1.0]]) / 20.0)

    def test_spd_too_many(self):
        with pytest.raises(ConfigError):
            sample_centers('spd:2', 'wishart', 5, None, beta=20.0)

    def test_reproducible(self):
        a = sample_centers('so:3', 'langevin', 3, np.random.default_rng(7))
        b = sample_centers('so:3', 'langevin', 3, np.random.default_rng(7))
        assert np.array_equal(a, b)

    def test_valid_on_manifold(self):
        man = build_manifold('stiefel:2:4')
        centers = sample_centers(man, 'langevin', 5, np.random.default_rng(8))
        assert np.max(man.check_constraint(centers)) <= 1e-10

    def test_centerless(self):
        assert sample_centers('su:3', 'conjugation_invariant', 1, None).shape == (0, 18)

    def test_k_positive(self):
        with pytest.raises(ConfigError):
            sample_centers('sphere:2', 'vmf', 0, np.random.default_rng(0))


class TestCentersFile:
    """Test saving and loading centers"""

    @pytest.mark.parametrize("name,family,beta", [
        ('sphere:2', 'vmf', 5.0),
        ('so:3', 'langevin', 2.0),
        ('su:2', 'unitary_trace', 1.0),
        ('spd:2', 'wishart', 20.0),
    ])
    def test_round_trip(self, tmp_path, name, family, beta):
        target = make_target(name, family, beta, k=2, rng=np.random.default_rng(0))
        path = save_centers(tmp_path / 'centers.json', target)
        loaded = load_centers(path, name)
        assert np.allclose(loaded, target.spec.centers, atol=1e-15)

    def test_document_layout(self, tmp_path):
        man = build_manifold('su:2')
        target = make_target(man, 'unitary_trace', 1.0, k=1, rng=np.random.default_rng(1))
        path = save_centers(tmp_path / 'centers.json', target)
        doc = json.loads(path.read_text(encoding='utf-8'))
        assert doc['manifold'] == 'su:2'
        assert doc['family'] == 'unitary_trace'
        assert set(doc['centers'][0]) == {'re', 'im'}

    def test_coefficients_saved(self, tmp_path):
        target = make_target('su:3', 'conjugation_invariant', 9.0, coefficients='c2')
        path = save_centers(tmp_path / 'centers.json', target)
        doc = json.loads(path.read_text(encoding='utf-8'))
        assert doc['coefficients'] == [0.98, -0.63, -0.21]
        assert doc['centers'] == []

    def test_bare_list(self, tmp_path):
        path = tmp_path / 'centers.json'
        path.write_text(json.dumps([[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]]))
        centers = load_centers(path, 'so:3')
        assert np.array_equal(centers[0], np.eye(3).ravel())

    def test_wrong_manifold(self, tmp_path):
        target = make_target('sphere:2', 'vmf', 1.0, k=1, rng=np.random.default_rng(0))
        path = save_centers(tmp_path / 'centers.json', target)
        with pytest.raises(ManifoldMismatchError):
            load_centers(path, 'sphere:3')

    def test_malformed(self, tmp_path):
        path = tmp_path / 'centers.json'
        path.write_text('{"centers": [')
        with pytest.raises(ConfigError) as err:
            load_centers(path, 'sphere:2')
        assert err.value.key == 'target.centers_file'

    def test_empty(self, tmp_path):
        path = tmp_path / 'centers.json'
        path.write_text('[]')
        with pytest.raises(ConfigError):
            load_centers(path, 'sphere:2')
