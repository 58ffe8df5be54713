import os
import shutil
import tempfile
import unittest

import numpy as np
import numpy.testing as npt

from epiforge.drrnn import (
    DrRnnParams,
    drrnn_rollout,
    drrnn_step,
    drrnn_step_backward,
    init_params,
    residual_reduction_rate,
    rollout_traces,
)
from epiforge.errors import (
    ConfigError,
    InvalidSplit,
    NonFiniteGradient,
    ParseError,
    ShapeMismatch,
    TimestampMismatch,
)
from epiforge.integrators import LinearRhs, simulate
from epiforge.seird import SeirdParams, SeirdRhs
from epiforge.snapshots import SnapshotMatrix, assemble_snapshots
from epiforge.training import (
    AdamState,
    DrRnnObjective,
    LossParts,
    LossReport,
    TrainConfig,
    adam_step,
    check_gradients,
    combined_loss,
    fit,
    gradient,
    init_model,
    loss_report,
    mse_data,
    mse_physics,
    per_compartment_mse,
    read_history,
    train,
    training_window,
    trajectory_l1_loss,
    write_history,
)

try:
    from tests.utils import SEED
except ImportError:
    from utils import SEED

SEIRD_PARAMS = SeirdParams(phi_i=0.5, phi_e=0.2, alpha_inc=0.2, gamma_e=0.1, gamma_i=0.1, delta=0.01, allee=0.01)
SEIRD_Y0 = np.array([0.95, 0.02, 0.03, 0.0, 0.0])


def seird_snapshots(days=10, h=0.25):
    f = SeirdRhs(SEIRD_PARAMS)
    trajectory = simulate(f, SEIRD_Y0, 0.0, int(days / h), h)
    return f, assemble_snapshots(trajectory, 1.0, 1)


def small_config(**changes):
    values = dict(learning_rate=0.01, pretrain_epochs=4, finetune_epochs=3, train_days=8, total_days=10,
                  seed=4, layers=2, hidden=3, step=0.25)
    values.update(changes)
    return TrainConfig(**values)


class QuadraticObjective(object):
    '''||W||^2 / 2 on the W block of a DR-RNN; U and eta do not enter.'''

    def value_and_grad(self, params):
        value = 0.5 * float(np.sum(params.W ** 2))
        grads = {'W': params.W.copy(), 'U': np.zeros_like(params.U), 'eta': np.zeros_like(params.eta)}
        return LossParts(value, 0.0, value), grads


class DataOnlyObjective(object):
    '''Squared error of the DR-RNN output alone, back-propagated step by step.'''

    def __init__(self, f, matrix, h):
        self.f = f
        self.inputs = matrix.rows[:-1]
        self.targets = matrix.rows[1:]
        self.times = matrix.days[:-1]
        self.h = h
        self.substeps = int(round((matrix.days[1] - matrix.days[0]) / h))

    def value_and_grad(self, params):
        y = self.inputs
        traces = []
        for k in range(self.substeps):
            y, trace = drrnn_step(params, self.f, self.times + k * self.h, y, self.h)
            traces.append(trace)
        diff = y - self.targets
        mse_u = float(np.mean(diff * diff))
        g = 2.0 * diff / self.targets.size
        grads = {name: np.zeros_like(value) for name, value in params.trainable().items()}
        for trace in reversed(traces):
            g, step_grads = drrnn_step_backward(params, self.f, trace, g)
            for name in grads:
                grads[name] += step_grads[name]
        return LossParts(mse_u, 0.0, mse_u), grads


class TestDataLoss(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(SEED)

    def test_identical(self):
        rows = self.rng.uniform(size=(4, 10))
        self.assertEqual(mse_data(rows, rows), 0.0)

    def test_uniform_offset(self):
        rows = self.rng.uniform(size=(3, 5))
        self.assertAlmostEqual(mse_data(rows + 0.1, rows), 0.01, places=15)

    def test_matches_double_loop(self):
        p = self.rng.normal(size=(6, 15))
        o = self.rng.normal(size=(6, 15))
        total = 0.0
        for t in range(6):
            for k in range(15):
                total += (p[t, k] - o[t, k]) ** 2
        self.assertAlmostEqual(mse_data(p, o), total / p.size, places=13)

    def test_mismatches(self):
        with self.assertRaises(ShapeMismatch):
            mse_data(np.zeros((2, 5)), np.zeros((3, 5)))
        a = SnapshotMatrix([0, 1], np.zeros((2, 5)), 1)
        b = SnapshotMatrix([0, 2], np.zeros((2, 5)), 1)
        with self.assertRaises(TimestampMismatch):
            mse_data(a, b)

    def test_per_compartment(self):
        observed = np.zeros((2, 10))
        predicted = observed.copy()
        predicted[:, 2:4] = 1.0  # the e block of a two-cell grid
        result = per_compartment_mse(predicted, observed, 2)
        self.assertEqual(result['e'], 1.0)
        self.assertEqual(result['s'], 0.0)
        self.assertEqual(result['i'], 0.0)

    def test_per_compartment_blocks(self):
        # one marked cell per block, marked with the block's position + 1
        observed = np.zeros((2, 10))
        predicted = observed.copy()
        for k in range(5):
            predicted[0, 2 * k + 1] = k + 1.0
        result = per_compartment_mse(predicted, observed, 2)
        for k, name in enumerate(('s', 'e', 'i', 'r', 'd')):
            self.assertEqual(result[name], (k + 1.0) ** 2 / 4, name)


class TestPhysicsLoss(unittest.TestCase):

    def test_implicit_euler_trajectory(self):
        f = SeirdRhs(SEIRD_PARAMS)
        trajectory = simulate(f, SEIRD_Y0, 0.0, 20, 0.25, method='implicit-euler', tol=1e-12)
        matrix = SnapshotMatrix(trajectory.times, trajectory.states, 1)
        self.assertLessEqual(mse_physics(matrix, SEIRD_PARAMS, h=0.25), 1e-20)

    def test_zero_rates(self):
        matrix = SnapshotMatrix([0.0, 0.25, 0.5], np.tile(SEIRD_Y0, (3, 1)), 1)
        self.assertEqual(mse_physics(matrix, SeirdParams(), h=0.25), 0.0)

    def test_rk4_residual_shrinks_with_step(self):
        f = SeirdRhs(SEIRD_PARAMS)
        losses = []
        for h in (0.25, 0.125, 0.0625):
            trajectory = simulate(f, SEIRD_Y0, 0.0, int(10 / h), h)
            matrix = SnapshotMatrix(trajectory.times, trajectory.states, 1)
            losses.append(mse_physics(matrix, f, h=h))
        self.assertGreater(losses[0], 0.0)
        for coarse, fine in zip(losses, losses[1:]):
            self.assertGreater(coarse / fine, 3.0)
            self.assertLess(coarse / fine, 5.0)

    def test_needs_two_snapshots(self):
        with self.assertRaises(ConfigError):
            mse_physics(SnapshotMatrix([0.0], [SEIRD_Y0], 1), SEIRD_PARAMS)


class TestLossAlgebra(unittest.TestCase):

    def test_combined(self):
        self.assertEqual(combined_loss(0.5, 0.5, small_config(omega_u=1.0, omega_s=1.0)), 1.0)
        self.assertEqual(combined_loss(0.3, 7.0, small_config(omega_u=2.0, omega_s=0.0)), 0.6)

    def test_objective_without_physics(self):
        f, matrix = seird_snapshots()
        params = init_params(5, K=2, seed=1)
        weighted = DrRnnObjective.from_snapshots(f, matrix, 0.25, omega_u=2.0, omega_s=0.0).evaluate(params)
        self.assertEqual(weighted.mse_l, 2.0 * weighted.mse_u)
        self.assertGreater(weighted.mse_s, 0.0)

    def test_no_physics_weight_is_data_fitting(self):
        f, matrix = seird_snapshots()
        config = small_config(omega_s=0.0)
        start = init_model('drrnn', 5, config)
        objective = DrRnnObjective.from_snapshots(f, matrix, config.step, config.omega_u, config.omega_s)
        weighted, records = fit(objective, start, 6, config)
        plain, plain_records = fit(DataOnlyObjective(f, matrix, config.step), start, 6, config)
        self.assertEqual([r.mse_u for r in records], [r.mse_u for r in plain_records])
        self.assertEqual([r.mse_l for r in records], [r.mse_l for r in plain_records])
        for record in records:
            self.assertEqual(record.mse_l, record.mse_u)
            self.assertGreater(record.mse_s, 0.0)
        for name in DrRnnParams.TRAINABLE:
            npt.assert_array_equal(getattr(weighted, name), getattr(plain, name))

    def test_l1(self):
        rng = np.random.default_rng(SEED)
        a = rng.normal(size=(2, 3, 4))
        self.assertEqual(trajectory_l1_loss(a, a), 0.0)
        self.assertEqual(trajectory_l1_loss([[[1.0]]], [[[3.0]]]), 2.0)
        b = rng.normal(size=(2, 3, 4))
        total = 0.0
        for i in range(2):
            for j in range(3):
                for k in range(4):
                    total += abs(a[i, j, k] - b[i, j, k])
        self.assertAlmostEqual(trajectory_l1_loss(a, b), total / 24, places=14)
        with self.assertRaises(ShapeMismatch):
            trajectory_l1_loss(a, b[:1])

    def test_loss_report(self):
        f, matrix = seird_snapshots()
        config = small_config()
        report = loss_report('drrnn', init_params(5, K=2, seed=1), matrix, f, config, wall_seconds=1.5)
        self.assertAlmostEqual(report.mse_l, config.omega_u * report.mse_u + config.omega_s * report.mse_s)
        self.assertAlmostEqual(np.mean(list(report.per_compartment.values())), report.mse_u, places=14)
        self.assertIn('MSE_L = ', report.to_text())
        with self.assertRaises(ConfigError):
            LossReport({'s': -1.0}, 0.0, 0.0, 0.0)


class TestGradients(unittest.TestCase):

    def test_quadratic(self):
        params = init_params(4, K=2, seed=3)
        grads = gradient(QuadraticObjective(), params)
        npt.assert_array_equal(grads['W'], params.W)

    def test_unused_block_is_zero(self):
        # with zero gain on the only layer, U never reaches the output
        params = DrRnnParams(np.zeros(2), [[0.3, -0.2], [0.1, 0.4]], [])
        f = LinearRhs([[-1.0, 0.0], [0.5, -0.5]])
        objective = DrRnnObjective(f, [[1.0, 0.5]], [[0.9, 0.6]], [0.0], 0.25)
        npt.assert_array_equal(gradient(objective, params)['U'], np.zeros((2, 2)))

    def test_non_finite(self):
        class Broken(QuadraticObjective):
            def value_and_grad(self, params):
                parts, grads = super(Broken, self).value_and_grad(params)
                grads['U'][0, 0] = np.nan
                return parts, grads

        with self.assertRaises(NonFiniteGradient) as ctx:
            gradient(Broken(), init_params(2, K=1, seed=0))
        self.assertEqual(ctx.exception.parameter, 'U')

    def test_gradient_check_passes(self):
        result = check_gradients(seed=SEED, instances=2)
        self.assertTrue(result.passed, 'max error %r in %s.%s' % (
            result.max_error, result.worst_model, result.worst_parameter))
        self.assertGreater(result.checked, 0)

    def test_gradient_check_twenty_instances(self):
        result = check_gradients(seed=SEED, instances=20, tolerance=1e-5)
        self.assertTrue(result.passed, 'max error %r in %s.%s' % (
            result.max_error, result.worst_model, result.worst_parameter))
        self.assertGreaterEqual(result.checked, 20 * 3)

    def test_gradient_check_catches_corruption(self):
        result = check_gradients(seed=SEED, instances=1, corrupt=True)
        self.assertFalse(result.passed)


class TestAdam(unittest.TestCase):

    def test_zero_gradient(self):
        config = small_config(learning_rate=0.1)
        params = {'x': np.array([1.0, -2.0])}
        new, state = adam_step(params, {'x': np.zeros(2)}, AdamState.zeros_like(params), config)
        npt.assert_array_equal(new['x'], params['x'])
        self.assertEqual(state.t, 1)

        state = AdamState({'x': np.array([0.5, 0.5])}, {'x': np.array([0.25, 0.25])}, t=3)
        _, state = adam_step(params, {'x': np.zeros(2)}, state, config)
        npt.assert_allclose(state.m['x'], 0.45)
        npt.assert_allclose(state.v['x'], 0.25 * 0.999)

    def test_first_step_is_sign_of_gradient(self):
        config = small_config(learning_rate=0.01)
        params = {'x': np.array([1.0, 1.0, 1.0])}
        grads = {'x': np.array([3.0, -0.2, 40.0])}
        new, _ = adam_step(params, grads, AdamState.zeros_like(params), config)
        npt.assert_allclose(new['x'] - params['x'], -0.01 * np.sign(grads['x']), rtol=1e-6)

    def test_converges_on_parabola(self):
        config = small_config(learning_rate=0.1)
        params = {'theta': np.array([1.0])}
        state = AdamState.zeros_like(params)
        for _ in range(100):
            params, state = adam_step(params, {'theta': 2.0 * params['theta']}, state, config)
        self.assertLess(abs(params['theta'][0]), 0.1)

    def test_mismatched_blocks(self):
        config = small_config()
        params = {'x': np.zeros(2)}
        with self.assertRaises(ShapeMismatch):
            adam_step(params, {'y': np.zeros(2)}, AdamState.zeros_like(params), config)
        with self.assertRaises(ShapeMismatch):
            adam_step(params, {'x': np.zeros(3)}, AdamState.zeros_like(params), config)


class TestTrainConfig(unittest.TestCase):

    def test_validation(self):
        with self.assertRaises(ConfigError):
            small_config(learning_rate=0.0)
        with self.assertRaises(ConfigError):
            small_config(train_days=10, total_days=10)
        with self.assertRaises(ConfigError):
            small_config(omega_s=-1.0)
        with self.assertRaises(ConfigError):
            small_config(adam_beta1=1.0)
        with self.assertRaises(ConfigError):
            small_config(init='xavier')

    def test_replace(self):
        config = small_config().replace(finetune_epochs=0)
        self.assertEqual(config.epochs, 4)
        self.assertEqual(config.layers, 2)

    def test_euler_init(self):
        config = small_config(init='euler', layers=3)
        params = init_model('drrnn', 5, config)
        npt.assert_array_equal(params.W, np.ones(5))
        npt.assert_array_equal(params.U, np.eye(5))
        npt.assert_array_equal(params.eta, np.zeros(2))
        self.assertEqual(config.replace(seed=9).init, 'euler')
        self.assertEqual(init_model('lstm', 5, config).kind, 'lstm')


class TestTraining(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def test_linear_decay_smoke(self):
        h = 0.25
        f = LinearRhs([[-0.5]])
        times = h * np.arange(40)
        states = np.exp(-0.5 * times)[:, None]
        objective = DrRnnObjective(f, states[:-1], states[1:], times[:-1], h)
        params = DrRnnParams([0.1], [[1.0]], [])
        config = small_config(learning_rate=0.05)
        trained, records = fit(objective, params, 200, config)
        self.assertEqual(len(records), 200)
        self.assertLess(objective.value(trained), 0.1 * records[0].mse_l)

    def test_zero_epochs(self):
        _, matrix = seird_snapshots()
        config = small_config(pretrain_epochs=0, finetune_epochs=0)
        params, history = train('drrnn', matrix, config=config)
        expected = init_model('drrnn', 5, config)
        for name in params.TRAINABLE:
            npt.assert_array_equal(getattr(params, name), getattr(expected, name))
        self.assertEqual(len(history), 0)

    def test_history_records(self):
        f, matrix = seird_snapshots()
        config = small_config(omega_u=1.0, omega_s=0.5)
        _, history = train('drrnn', matrix, f, config)
        self.assertEqual((len(history.pretrain), len(history.finetune)), (4, 3))
        self.assertIsNotNone(history.pretrained)
        path = os.path.join(self.tmp, 'history.csv')
        write_history(history.pretrain, path)
        for record in read_history(path):
            self.assertEqual(record.mse_l, 1.0 * record.mse_u + 0.5 * record.mse_s)
            self.assertGreaterEqual(record.wall_seconds, 0.0)

    def test_deterministic(self):
        f, matrix = seird_snapshots()
        runs = [train('drrnn', matrix, f, small_config())[0] for _ in range(2)]
        for name in DrRnnParams.TRAINABLE:
            npt.assert_array_equal(getattr(runs[0], name), getattr(runs[1], name))

    def test_finetune_on_pretraining_data(self):
        f, matrix = seird_snapshots()
        config = small_config(learning_rate=0.002, pretrain_epochs=10, finetune_epochs=20)
        window = training_window(matrix, config.train_days)
        params, history = train('drrnn', matrix, f, config, simulated=window)
        objective = DrRnnObjective.from_snapshots(f, window, config.step, config.omega_u, config.omega_s)
        self.assertLessEqual(objective.value(params), history.finetune[0].mse_l)

    def test_euler_start_pretraining_tracks_reference(self):
        f, matrix = seird_snapshots(days=120)
        config = small_config(init='euler', learning_rate=1e-6, pretrain_epochs=20, finetune_epochs=0,
                              train_days=106, total_days=120, layers=4)
        params, history = train('drrnn', matrix, f, config)
        self.assertEqual(len(history.pretrain), 20)
        self.assertLessEqual(np.max(np.abs(params.eta)), 1e-4)

        reference = simulate(f, SEIRD_Y0, 0.0, 480, 0.25, method='rk4')
        rollout = drrnn_rollout(params, f, SEIRD_Y0, 480, h=0.25)
        error = np.mean((rollout.states - reference.states) ** 2) / np.mean(reference.states ** 2)
        self.assertLessEqual(error, 1e-2)

        _, traces = rollout_traces(params, f, SEIRD_Y0, 480, 0.25)
        self.assertEqual(len(traces), 480)
        self.assertGreaterEqual(residual_reduction_rate(traces), 0.9)

    def test_sequence_models(self):
        _, matrix = seird_snapshots()
        for model in ('lstm', 'rnn'):
            params, history = train(model, matrix, config=small_config(), simulated=matrix)
            self.assertEqual(params.kind, model)
            self.assertTrue(all(record.mse_s == 0.0 for record in history.finetune))

    def test_training_window(self):
        _, matrix = seird_snapshots()
        self.assertEqual(training_window(matrix, 8).n_days, 9)
        with self.assertRaises(InvalidSplit):
            training_window(matrix, 11)

    def test_drrnn_needs_rhs(self):
        _, matrix = seird_snapshots()
        with self.assertRaises(ConfigError):
            train('drrnn', matrix, config=small_config())
        with self.assertRaises(ConfigError):
            init_model('gru', 5, small_config())

    def test_read_history_errors(self):
        path = os.path.join(self.tmp, 'bad.csv')
        with open(path, 'w') as f:
            f.write('epoch,loss\n1,0.5\n')
        with self.assertRaises(ParseError):
            read_history(path)


if __name__ == '__main__':
    unittest.main()
