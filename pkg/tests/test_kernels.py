import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdegp.errors import InvalidInputError
from pdegp.kernels import (
    PARAM_NAMES,
    KernelHypers,
    PdeParams,
    assemble_joint,
    k_ff,
    k_fy,
    k_yf,
    k_yy,
    kernel_matrix,
    operator_apply_fd,
    pack_params,
    unpack_params,
)

from conftest import fd_cross, fd_double, random_params, rel_err

UNIT_H = KernelHypers(1.0, 1.0, 1.0)
UNIT_T = PdeParams(1.0, 1.0, 1.0)

coord = st.floats(-5, 5, allow_nan=False)
positive = st.floats(0.2, 3.0)


def test_param_types_reject_nonpositive():
    with pytest.raises(InvalidInputError):
        PdeParams(0.0, 1.0, 1.0)
    with pytest.raises(InvalidInputError):
        PdeParams(1.0, -1.0, 1.0)
    with pytest.raises(InvalidInputError):
        KernelHypers(1.0, 1.0, float("nan"))


def test_pack_roundtrip():
    theta, hypers = PdeParams(0.1, 0.2, 0.3), KernelHypers(0.4, 0.5, 0.6)
    vec = pack_params(theta, hypers)
    assert tuple(vec) == (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
    assert unpack_params(vec) == (theta, hypers)


class TestKyy:
    def test_zero_distance(self):
        assert k_yy((0.3, -1.2), (0.3, -1.2), UNIT_H) == 1.0

    def test_unit_spatial_offset(self):
        assert k_yy((0, 0), (1, 0), UNIT_H) == pytest.approx(math.exp(-0.5), rel=1e-15)

    def test_symmetry(self, rng):
        for _ in range(100):
            hypers, _ = random_params(rng)
            p, q = rng.uniform(-3, 3, 2), rng.uniform(-3, 3, 2)
            assert k_yy(p, q, hypers) == k_yy(q, p, hypers)

    def test_non_finite_point(self):
        with pytest.raises(InvalidInputError):
            k_yy((np.inf, 0), (0, 0), UNIT_H)
        with pytest.raises(InvalidInputError):
            k_yf((np.nan, 0), (0, 0), UNIT_H, UNIT_T)

    @given(coord, coord, coord, coord, positive, positive, positive)
    def test_bounded_by_signal_variance(self, x, t, x2, t2, s, a, b):
        h = KernelHypers(s, a, b)
        assert 0.0 <= k_yy((x, t), (x2, t2), h) <= s


class TestCross:
    def test_yf_zero_separation(self):
        assert k_yf((0.5, 0.5), (0.5, 0.5), UNIT_H, UNIT_T) == pytest.approx(2.0, rel=1e-15)

    def test_fy_zero_separation(self, rng):
        for _ in range(10):
            hypers, theta = random_params(rng)
            p = rng.uniform(-2, 2, 2)
            expected = (theta.D / hypers.theta_x**2 + theta.beta) * hypers.sigma_y2
            assert k_fy(p, p, hypers, theta) == pytest.approx(expected, rel=1e-13)
            assert k_fy(p, p, hypers, theta) == k_yf(p, p, hypers, theta)

    def test_single_time_term_is_antisymmetric(self):
        # D and beta must be positive; 1e-300 makes their terms vanish
        theta = PdeParams(1e-300, 1.0, 1e-300)
        p, q = (0.2, 0.1), (0.5, 0.9)
        h = KernelHypers(1.3, 0.7, 1.1)
        expected = (0.1 - 0.9) / 0.7**2 * k_yy(p, q, h)
        assert k_yf(p, q, h, theta) == pytest.approx(expected, rel=1e-12)
        assert k_yf(q, p, h, theta) == pytest.approx(-expected, rel=1e-12)

    @given(coord, coord, coord, coord, positive, positive, positive, positive, positive, positive)
    def test_transpose_relation(self, x, t, x2, t2, s, a, b, d, al, be):
        h, th = KernelHypers(s, a, b), PdeParams(d, al, be)
        assert k_fy((x, t), (x2, t2), h, th) == k_yf((x2, t2), (x, t), h, th)

    def test_matches_fd_operator_oracle(self, rng):
        for _ in range(100):
            hypers, theta = random_params(rng)
            p, q = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2)
            floor = 1e-3 * k_yf(p, p, hypers, theta)
            assert rel_err(k_yf(p, q, hypers, theta), fd_cross(p, q, hypers, theta, "second"), floor) < 1e-5
            assert rel_err(k_fy(p, q, hypers, theta), fd_cross(p, q, hypers, theta, "first"), floor) < 1e-5


class TestKff:
    def test_zero_separation_unit(self):
        assert k_ff((1.0, 2.0), (1.0, 2.0), UNIT_H, UNIT_T) == pytest.approx(7.0, rel=1e-15)

    def test_zero_separation_general(self, rng):
        hypers, theta = random_params(rng)
        a, b = hypers.theta_t, hypers.theta_x
        expected = hypers.sigma_y2 * (
            theta.alpha**2 / a**2 + 2 * theta.D * theta.beta / b**2 + 3 * theta.D**2 / b**4 + theta.beta**2
        )
        assert k_ff((0, 0), (0, 0), hypers, theta) == pytest.approx(expected, rel=1e-13)

    def test_reaction_only_limit(self, rng):
        tiny = 1e-300
        theta = PdeParams(tiny, tiny, 1.7)
        for _ in range(10):
            hypers, _ = random_params(rng)
            p, q = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2)
            assert k_ff(p, q, hypers, theta) == pytest.approx(1.7**2 * k_yy(p, q, hypers), rel=1e-12)

    @given(coord, coord, coord, coord, positive, positive, positive, positive, positive, positive)
    @settings(max_examples=50)
    def test_symmetry(self, x, t, x2, t2, s, a, b, d, al, be):
        h, th = KernelHypers(s, a, b), PdeParams(d, al, be)
        assert k_ff((x, t), (x2, t2), h, th) == k_ff((x2, t2), (x, t), h, th)

    def test_matches_double_fd_oracle(self, rng):
        for _ in range(100):
            hypers, theta = random_params(rng)
            p, q = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2)
            floor = 1e-3 * k_ff(p, p, hypers, theta)
            assert rel_err(k_ff(p, q, hypers, theta), fd_double(p, q, hypers, theta), floor) < 1e-4

    def test_uniform_theta_x4_variant_fails_oracle(self):
        # theta_x^4 throughout the D^2 term disagrees with the oracle once theta_x != 1
        h, th = KernelHypers(1.0, 1.0, 2.0), UNIT_T
        p, q = (0.0, 0.0), (0.8, 0.3)
        u2, v2 = 0.64, 0.09
        b = 2.0
        A = u2 / b**4 - 1 / b**2
        wrong = (1 - v2) - 2 * A + (3 / b**4 - 6 * u2 / b**4 + u2**2 / b**4) + 1
        wrong *= k_yy(p, q, h)
        oracle = fd_double(p, q, h, th)
        assert abs(wrong - oracle) > 1e-2 * abs(oracle)
        assert k_ff(p, q, h, th) == pytest.approx(oracle, rel=1e-6)


class TestOperatorFd:
    def test_trig_pair(self):
        g = lambda x, t: math.cos(x) + math.sin(t)
        for p in [(0.0, 0.0), (1.0, 2.0), (-0.7, 4.1)]:
            expected = 2 * math.cos(p[0]) + math.cos(p[1]) + math.sin(p[1])
            assert operator_apply_fd(g, p, UNIT_T, 1e-2) == pytest.approx(expected, abs=1e-7)

    def test_constant(self):
        theta = PdeParams(0.3, 2.0, 1.5)
        assert operator_apply_fd(lambda x, t: 4.0, (1, 1), theta, 0.1) == pytest.approx(6.0, rel=1e-14)

    def test_quadratic_in_x(self):
        theta = PdeParams(1.0, 1e-300, 1e-300)
        assert operator_apply_fd(lambda x, t: x * x, (0.4, 0.0), theta, 1e-2) == pytest.approx(-2.0, rel=1e-9)

    def test_step_pair_and_validation(self):
        g = lambda x, t: math.cos(x) + math.sin(t)
        assert operator_apply_fd(g, (0.3, 0.2), UNIT_T, (1e-2, 2e-2)) == pytest.approx(
            2 * math.cos(0.3) + math.cos(0.2) + math.sin(0.2), abs=1e-7
        )
        with pytest.raises(InvalidInputError):
            operator_apply_fd(g, (0, 0), UNIT_T, 0.0)


class TestAssemble:
    def test_single_point_unit(self):
        jk = assemble_joint([(0.2, 0.4)], [(0.2, 0.4)], UNIT_H, UNIT_T)
        np.testing.assert_allclose(jk.matrix, [[1.0, 2.0], [2.0, 7.0]], rtol=1e-15)

    def test_empty_raises(self):
        with pytest.raises(InvalidInputError):
            assemble_joint([], [], UNIT_H, UNIT_T)

    def test_one_channel_only(self, rng):
        pts = rng.uniform(0, 2, (4, 2))
        jk = assemble_joint(pts, [], UNIT_H, UNIT_T)
        np.testing.assert_array_equal(jk.matrix, kernel_matrix(pts, pts, "yy", UNIT_H))
        jk = assemble_joint([], pts, UNIT_H, UNIT_T)
        np.testing.assert_array_equal(jk.matrix, kernel_matrix(pts, pts, "ff", UNIT_H, UNIT_T))

    def test_block_layout(self, rng):
        hypers, theta = random_params(rng)
        py, pf = rng.uniform(0, 3, (3, 2)), rng.uniform(0, 3, (4, 2))
        m = assemble_joint(py, pf, hypers, theta).matrix
        assert m[0, 4] == k_yf(py[0], pf[1], hypers, theta)
        assert m[4, 0] == k_fy(pf[1], py[0], hypers, theta)
        assert m[5, 6] == k_ff(pf[2], pf[3], hypers, theta)

    def test_exactly_symmetric_with_duplicates(self, rng):
        hypers, theta = random_params(rng)
        pts = rng.uniform(0, 3, (6, 2))
        pts[3] = pts[1]
        jk = assemble_joint(pts, pts[:4], hypers, theta, with_grads=True)
        np.testing.assert_array_equal(jk.matrix, jk.matrix.T)
        for g in jk.grads:
            np.testing.assert_array_equal(g, g.T)

    def test_sigma_gradient_equals_matrix_at_unit_variance(self, rng):
        _, theta = random_params(rng)
        hypers = KernelHypers(1.0, 0.8, 1.3)
        jk = assemble_joint(rng.uniform(0, 3, (5, 2)), rng.uniform(0, 3, (5, 2)), hypers, theta, with_grads=True)
        np.testing.assert_allclose(jk.grads[PARAM_NAMES.index("sigma_y2")], jk.matrix, rtol=1e-15)

    def test_scaling_in_signal_variance(self, rng):
        hypers, theta = random_params(rng)
        py, pf = rng.uniform(0, 3, (5, 2)), rng.uniform(0, 3, (5, 2))
        scaled = KernelHypers(3.5 * hypers.sigma_y2, hypers.theta_t, hypers.theta_x)
        np.testing.assert_allclose(
            assemble_joint(py, pf, scaled, theta).matrix, 3.5 * assemble_joint(py, pf, hypers, theta).matrix, rtol=1e-13
        )

    def test_gradients_match_fd_on_ten_points(self, rng):
        for _ in range(5):
            hypers, theta = random_params(rng)
            py, pf = rng.uniform(0, 3, (5, 2)), rng.uniform(0, 3, (5, 2))
            jk = assemble_joint(py, pf, hypers, theta, with_grads=True)
            v = pack_params(theta, hypers)
            for i in range(6):
                e = np.zeros(6)
                e[i] = 1e-6 * v[i]
                tp, hp = unpack_params(v + e)
                tm, hm = unpack_params(v - e)
                fd = (assemble_joint(py, pf, hp, tp).matrix - assemble_joint(py, pf, hm, tm).matrix) / (2 * e[i])
                assert np.linalg.norm(jk.grads[i] - fd) <= 1e-6 * np.linalg.norm(fd), PARAM_NAMES[i]

    def test_positive_semidefinite(self, rng):
        for _ in range(50):
            hypers, theta = random_params(rng)
            ny, nf = rng.integers(0, 21, 2)
            if ny + nf == 0:
                ny = 1
            m = assemble_joint(rng.uniform(0, 4, (ny, 2)), rng.uniform(0, 4, (nf, 2)), hypers, theta).matrix
            eig = np.linalg.eigvalsh(m)
            assert eig[0] >= -1e-8 * eig[-1]

    def test_decay_at_twenty_lengthscales(self, rng):
        hypers, theta = random_params(rng)
        p = np.array([0.0, 0.0])
        far = p + 20 * np.array([hypers.theta_x, hypers.theta_t])
        scale = k_ff(p, p, hypers, theta) + k_yf(p, p, hypers, theta) + hypers.sigma_y2
        for fn in (k_yf, k_fy, k_ff):
            assert abs(fn(p, far, hypers, theta)) < 1e-15 * scale
        assert abs(k_yy(p, far, hypers)) < 1e-15 * hypers.sigma_y2
