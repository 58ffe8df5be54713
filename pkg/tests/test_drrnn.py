import math
import unittest

import numpy as np
import numpy.testing as npt

from epiforge.drrnn import (
    DrRnnParams,
    drrnn_rollout,
    drrnn_step,
    drrnn_step_backward,
    euler_start_params,
    init_params,
    residual_norm_profile,
    residual_reduction_rate,
    rollout_traces,
)
from epiforge.errors import DimensionMismatch, InvalidSpec, NonFiniteState
from epiforge.integrators import LinearRhs, RhsFunction
from epiforge.seird import SeirdParams, SeirdRhs

try:
    from tests.utils import SEED
except ImportError:
    from utils import SEED

DECAY = LinearRhs([[-1.0]])


def zero_rhs(n):
    return RhsFunction(lambda t, y: np.zeros_like(y), dim=n)


class TestDrRnnStep(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(SEED)

    def test_zero_rhs_is_fixed_point(self):
        params = init_params(5, K=4, rng=self.rng)
        y_t = self.rng.uniform(size=5)
        y, trace = drrnn_step(params, zero_rhs(5), 0.0, y_t, 0.25)
        npt.assert_array_equal(y, y_t)
        npt.assert_array_equal(residual_norm_profile(trace), np.zeros(4))

    def test_zero_gain_single_layer(self):
        params = DrRnnParams(np.zeros(3), self.rng.normal(size=(3, 3)), [])
        y_t = np.array([0.2, 0.5, 0.9])
        f = LinearRhs(self.rng.normal(size=(3, 3)))
        y, _ = drrnn_step(params, f, 0.0, y_t, 0.25)
        npt.assert_array_equal(y, y_t)

    def test_scalar_example(self):
        params = DrRnnParams([0.5], [[1.0]], [0.1])
        y, trace = drrnn_step(params, DECAY, 0.0, np.array([1.0]), 0.25)

        y1 = 1.0 - 0.5 * math.tanh(0.25)
        r2 = y1 - 1.0 + 0.25 * y1
        H1 = 0.1 * 0.25 ** 2
        H2 = 0.1 * r2 ** 2 + 0.9 * H1
        y2 = y1 - 0.1 / math.sqrt(H2 + 1e-8) * r2
        self.assertAlmostEqual(trace.states[1][0], y1, places=14)
        self.assertAlmostEqual(trace.residuals[1][0], r2, places=14)
        self.assertAlmostEqual(float(trace.norms[0]), H1, places=15)
        self.assertAlmostEqual(float(trace.norms[1]), H2, places=15)
        self.assertAlmostEqual(y[0], y2, places=13)
        self.assertAlmostEqual(y1, 0.87754, places=5)
        self.assertAlmostEqual(r2, 0.09693, places=5)
        self.assertAlmostEqual(y[0], 0.7579, places=4)

    def test_k_evaluations_per_step(self):
        f = LinearRhs(-0.5 * np.eye(5))
        for K in (1, 2, 4, 7):
            f.reset_counter()
            params = init_params(5, K=K, rng=self.rng)
            drrnn_rollout(params, f, [0.9, 0.0, 0.1, 0.0, 0.0], 10, 0.25)
            self.assertEqual(f.evaluations, 10 * K)

    def test_dimension_mismatch(self):
        params = init_params(3, K=2, rng=self.rng)
        with self.assertRaises(DimensionMismatch):
            drrnn_step(params, zero_rhs(4), 0.0, np.zeros(4), 0.25)

    def test_non_finite_names_layer(self):
        params = init_params(2, K=3, rng=self.rng)
        f = RhsFunction(lambda t, y: np.full_like(y, np.inf))
        with self.assertRaises(NonFiniteState) as ctx:
            drrnn_step(params, f, 0.0, np.ones(2), 0.25)
        self.assertEqual(ctx.exception.layer, 1)

    def test_batched_step(self):
        params = init_params(3, K=3, rng=self.rng)
        f = LinearRhs(-np.eye(3))
        batch = self.rng.uniform(size=(4, 3))
        y, _ = drrnn_step(params, f, 0.0, batch, 0.25)
        for k in range(4):
            single, _ = drrnn_step(params, f, 0.0, batch[k], 0.25)
            npt.assert_allclose(y[k], single, rtol=1e-14, atol=1e-15)


class TestDrRnnParams(unittest.TestCase):

    def test_shapes(self):
        params = init_params(5, K=4, seed=1)
        self.assertEqual((params.n, params.K), (5, 4))
        self.assertEqual(params.W.shape, (5,))
        self.assertEqual(params.U.shape, (5, 5))
        self.assertEqual(params.eta.shape, (3,))
        self.assertEqual(params.header()['beta'], 0.9)

    def test_seeded(self):
        a = init_params(4, K=3, seed=7)
        b = init_params(4, K=3, seed=7)
        for name in DrRnnParams.TRAINABLE:
            npt.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_validation(self):
        with self.assertRaises(DimensionMismatch):
            DrRnnParams(np.zeros(3), np.zeros((2, 2)), [0.1])
        with self.assertRaises(InvalidSpec):
            DrRnnParams(np.zeros(2), np.zeros((2, 2)), [np.nan])
        with self.assertRaises(InvalidSpec):
            init_params(3, K=0)

    def test_euler_start(self):
        params = euler_start_params(3, K=3)
        npt.assert_array_equal(params.eta, [0.0, 0.0])
        f = LinearRhs([[-1.0, 0.2, 0.0], [0.0, -0.5, 0.1], [0.3, 0.0, -0.2]])
        y_t = np.array([0.2, 0.5, 0.9])
        y, trace = drrnn_step(params, f, 0.0, y_t, 0.25)
        npt.assert_allclose(y, y_t + np.tanh(0.25 * f(0.25, y_t)), rtol=1e-14, atol=1e-16)
        npt.assert_array_equal(trace.states[1], trace.states[3])
        with self.assertRaises(InvalidSpec):
            euler_start_params(3, K=0)


class TestDrRnnBackward(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(SEED + 2)

    def _check(self, params, f, y_t, h):
        w = self.rng.normal(size=y_t.shape)

        def loss(p, y):
            out, _ = drrnn_step(p, f, 0.0, y, h)
            return float(np.sum(w * out))

        _, trace = drrnn_step(params, f, 0.0, y_t, h)
        gy_t, grads = drrnn_step_backward(params, f, trace, w)
        step = 1e-6
        for name, value in params.trainable().items():
            numeric = np.zeros(value.shape)
            for idx in np.ndindex(*value.shape):
                values = {k: v.copy() for k, v in params.trainable().items()}
                values[name][idx] += step
                up = loss(params.with_trainable(values), y_t)
                values[name][idx] -= 2 * step
                down = loss(params.with_trainable(values), y_t)
                numeric[idx] = (up - down) / (2 * step)
            npt.assert_allclose(grads[name], numeric, rtol=1e-5, atol=1e-8, err_msg=name)
        numeric = np.zeros(y_t.shape)
        for idx in np.ndindex(*y_t.shape):
            up = y_t.copy()
            down = y_t.copy()
            up[idx] += step
            down[idx] -= step
            numeric[idx] = (loss(params, up) - loss(params, down)) / (2 * step)
        npt.assert_allclose(gy_t, numeric, rtol=1e-5, atol=1e-8)

    def test_linear_system(self):
        params = init_params(3, K=3, rng=self.rng)
        f = LinearRhs(-np.eye(3) + 0.1 * self.rng.normal(size=(3, 3)))
        self._check(params, f, self.rng.uniform(0.5, 1.5, size=3), 0.25)

    def test_seird_system(self):
        params = init_params(5, K=4, rng=self.rng)
        f = SeirdRhs(SeirdParams(phi_i=0.5, phi_e=0.2, alpha_inc=0.2, gamma_e=0.1, gamma_i=0.1,
                                 delta=0.01, allee=0.01))
        self._check(params, f, self.rng.uniform(0.5, 1.5, size=5), 0.25)

    def test_batch(self):
        params = init_params(2, K=2, rng=self.rng)
        f = LinearRhs([[-1.0, 0.2], [0.0, -0.5]])
        self._check(params, f, self.rng.uniform(0.5, 1.5, size=(3, 2)), 0.5)


class TestRollout(unittest.TestCase):

    def test_no_steps(self):
        params = init_params(1, K=2, seed=0)
        trajectory = drrnn_rollout(params, DECAY, [1.0], 0, 0.25)
        self.assertEqual(len(trajectory), 1)

    def test_zero_rhs_constant(self):
        params = init_params(3, K=3, seed=0)
        trajectory = drrnn_rollout(params, zero_rhs(3), [0.1, 0.2, 0.3], 8, 0.25)
        for state in trajectory.states:
            npt.assert_array_equal(state, [0.1, 0.2, 0.3])

    def test_reduction_rate(self):
        # a single layer of zero gain leaves the residual unchanged
        params = DrRnnParams([0.0], [[1.0]], [])
        _, traces = rollout_traces(params, DECAY, [1.0], 5, 0.25)
        self.assertEqual(len(traces), 5)
        self.assertEqual(residual_reduction_rate(traces), 1.0)
        self.assertEqual(residual_reduction_rate([]), 1.0)

    def test_negative_steps(self):
        with self.assertRaises(InvalidSpec):
            drrnn_rollout(init_params(1, K=1, seed=0), DECAY, [1.0], -1, 0.25)


if __name__ == '__main__':
    unittest.main()
