'''
Losses, exact reverse-mode gradients, Adam and the pretrain / fine-tune
loop for the DR-RNN and the recurrent baselines.

The DR-RNN objective is the composite loss

    MSE_L = omega_u * MSE_u + omega_s * MSE_s

where MSE_u compares predicted and observed snapshots and MSE_s is the mean
squared residual (z_{k+1} - z_k) / h - f(t_{k+1}, z_{k+1}) of the model's own
internal steps. Training is full batch: one epoch is one Adam step over all
consecutive snapshot pairs.
'''

from epiforge.constants import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, COMPARTMENTS, HISTORY_HEADER
from epiforge.drrnn import INITS, drrnn_step, drrnn_step_backward, euler_start_params, init_params
from epiforge.errors import (
    CadenceMismatch,
    ConfigError,
    DivergedTraining,
    InvalidSplit,
    NonFiniteGradient,
    NumericalError,
    ParseError,
    ShapeMismatch,
    TimestampMismatch,
)
from epiforge.integrators import LinearRhs, RhsFunction, simulate
from epiforge.recurrent import init_lstm_params, init_rnn_params, sequence_backward, sequence_outputs
from epiforge.seird import SeirdParams, SeirdRhs
from epiforge.snapshots import assemble_snapshots, rows_through_day
from epiforge.utils import data_from_csv_string, data_to_csv_string, fmt, get_logger, is_multiple, relative_error, steps_per
import epiforge.settings as settings
from collections import namedtuple
import datetime
import time
import humanize
import numpy as np

logger = get_logger(__name__)

MODELS = ('drrnn', 'lstm', 'rnn')

# relative finite-difference step for gradient checks
GRADCHECK_STEP = 1e-5

# gradient blocks smaller than this are compared in absolute terms
GRADCHECK_FLOOR = 1e-4

LossParts = namedtuple('LossParts', ['mse_u', 'mse_s', 'mse_l'])


def _default(value, fallback):
    return fallback if value is None else value


class TrainConfig(object):
    """Optimizer, loss weighting and data window for one training run."""

    def __init__(self, learning_rate=None, pretrain_epochs=None, finetune_epochs=None,
                 omega_u=None, omega_s=None, train_days=None, total_days=None, seed=None,
                 layers=None, hidden=None, step=None, init=None,
                 adam_beta1=ADAM_BETA1, adam_beta2=ADAM_BETA2, adam_eps=ADAM_EPS):
        self.learning_rate = float(_default(learning_rate, settings.LEARNING_RATE))
        self.pretrain_epochs = int(_default(pretrain_epochs, settings.PRETRAIN_EPOCHS))
        self.finetune_epochs = int(_default(finetune_epochs, settings.FINETUNE_EPOCHS))
        self.omega_u = float(_default(omega_u, settings.OMEGA_U))
        self.omega_s = float(_default(omega_s, settings.OMEGA_S))
        self.train_days = _default(train_days, settings.TRAIN_DAYS)
        self.total_days = _default(total_days, settings.TOTAL_DAYS)
        self.seed = int(_default(seed, settings.SEED))
        self.layers = int(_default(layers, settings.DRRNN_LAYERS))
        self.hidden = int(_default(hidden, settings.HIDDEN_SIZE))
        self.step = float(_default(step, settings.STEP_DAYS))
        self.init = _default(init, settings.DRRNN_INIT)
        self.adam_beta1 = float(adam_beta1)
        self.adam_beta2 = float(adam_beta2)
        self.adam_eps = float(adam_eps)
        self.validate()

    def validate(self):
        if not self.learning_rate > 0 or not self.adam_eps > 0 or not self.step > 0:
            raise ConfigError('learning rate, Adam epsilon and step must be > 0')
        for name in ('adam_beta1', 'adam_beta2'):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError('%s must lie in [0, 1), got %r' % (name, getattr(self, name)))
        if self.pretrain_epochs < 0 or self.finetune_epochs < 0:
            raise ConfigError('epoch counts must be >= 0')
        if not (self.omega_u >= 0 and self.omega_s >= 0):
            raise ConfigError('loss weights must be >= 0, got omega_u=%r omega_s=%r' % (self.omega_u, self.omega_s))
        if not 0 < self.train_days < self.total_days:
            raise ConfigError('need 0 < train_days < total_days, got %r and %r' % (self.train_days, self.total_days))
        if self.layers < 1 or self.hidden < 1:
            raise ConfigError('layers and hidden size must be >= 1')
        if self.init not in INITS:
            raise ConfigError('unknown DR-RNN init %r (expected one of %s)' % (self.init, ', '.join(sorted(INITS))))

    @property
    def epochs(self):
        return self.pretrain_epochs + self.finetune_epochs

    def replace(self, **changes):
        values = dict(vars(self))
        values.update(changes)
        return TrainConfig(**values)

    def as_dict(self):
        return dict(vars(self))


class AdamState(object):

    def __init__(self, m, v, t=0):
        self.m = m
        self.v = v
        self.t = t
        if t < 0:
            raise ConfigError('Adam step counter must be >= 0')

    @classmethod
    def zeros_like(cls, values):
        return cls({k: np.zeros_like(v, dtype=float) for k, v in values.items()},
                   {k: np.zeros_like(v, dtype=float) for k, v in values.items()})


class EpochRecord(object):

    def __init__(self, epoch, mse_u, mse_s, mse_l, wall_seconds=0.0):
        self.epoch = int(epoch)
        self.mse_u = float(mse_u)
        self.mse_s = float(mse_s)
        self.mse_l = float(mse_l)
        self.wall_seconds = float(wall_seconds)

    def as_row(self):
        return [str(self.epoch), fmt(self.mse_u), fmt(self.mse_s), fmt(self.mse_l), fmt(self.wall_seconds)]

    def __repr__(self):
        return 'EpochRecord(%d, MSE_u=%r, MSE_s=%r, MSE_L=%r)' % (self.epoch, self.mse_u, self.mse_s, self.mse_l)


class LossReport(object):
    """Per-compartment and combined errors of a trained model, with timing."""

    def __init__(self, per_compartment, mse_u, mse_s, mse_l, wall_seconds=0.0):
        self.per_compartment = dict(per_compartment)
        self.mse_u = float(mse_u)
        self.mse_s = float(mse_s)
        self.mse_l = float(mse_l)
        self.wall_seconds = float(wall_seconds)
        values = list(self.per_compartment.values()) + [self.mse_u, self.mse_s, self.mse_l, self.wall_seconds]
        if not all(np.isfinite(v) and v >= 0 for v in values):
            raise ConfigError('loss report values must be finite and >= 0')

    @classmethod
    def build(cls, per_compartment, mse_u, mse_s, config, wall_seconds=0.0):
        return cls(per_compartment, mse_u, mse_s, combined_loss(mse_u, mse_s, config), wall_seconds)

    def to_text(self):
        lines = ['%-12s %s' % ('compartment', 'MSE')]
        for name in COMPARTMENTS:
            if name in self.per_compartment:
                lines.append('%-12s %s' % (name, fmt(self.per_compartment[name])))
        lines.append('')
        lines.append('MSE_u = %s' % fmt(self.mse_u))
        lines.append('MSE_s = %s' % fmt(self.mse_s))
        lines.append('MSE_L = %s' % fmt(self.mse_l))
        lines.append('wall_seconds = %s' % fmt(self.wall_seconds))
        return '\n'.join(lines) + '\n'


class TrainingHistory(object):
    """Epoch records of both phases and the parameters the pretraining phase ended with."""

    def __init__(self):
        self.pretrain = []
        self.finetune = []
        self.pretrained = None

    def __len__(self):
        return len(self.pretrain) + len(self.finetune)


def _values(x):
    return getattr(x, 'rows', x)


def mse_data(predicted, observed):
    '''Mean squared difference over every entry of two snapshot matrices (or arrays).'''
    p = np.asarray(_values(predicted), dtype=float)
    o = np.asarray(_values(observed), dtype=float)
    if p.shape != o.shape:
        raise ShapeMismatch('predicted shape %s != observed shape %s' % (p.shape, o.shape))
    if hasattr(predicted, 'days') and hasattr(observed, 'days'):
        if not np.array_equal(predicted.days, observed.days):
            raise TimestampMismatch('predicted and observed snapshots are on different days')
    if p.size == 0:
        return 0.0
    diff = p - o
    return float(np.mean(diff * diff))


def physics_residual(f, t_next, y_next, y_prev, h):
    '''(y_next - y_prev) / h - f(t_next, y_next), the semi-discrete equation residual.'''
    return (y_next - y_prev) / h - f(t_next, y_next)


def mse_physics(trajectory, params, grid=None, h=None):
    '''
    Mean squared equation residual over every consecutive snapshot pair.

    `params` is a SeirdParams, a ParamSchedule or any RhsFunction acting on
    the flattened rows.
    '''
    h = _default(h, settings.STEP_DAYS)
    if trajectory.n_days < 2:
        raise ConfigError('the physics loss needs at least two snapshots')
    f = params if isinstance(params, RhsFunction) else SeirdRhs(params, grid)
    rows = trajectory.rows
    residuals = physics_residual(f, trajectory.days[1:], rows[1:], rows[:-1], h)
    return float(np.mean(residuals * residuals))


def combined_loss(mse_u, mse_s, config):
    return config.omega_u * mse_u + config.omega_s * mse_s


def trajectory_l1_loss(predicted, observed):
    '''Mean absolute difference over samples, features and times.'''
    p = np.asarray(predicted, dtype=float)
    o = np.asarray(observed, dtype=float)
    if p.shape != o.shape:
        raise ShapeMismatch('predicted shape %s != observed shape %s' % (p.shape, o.shape))
    if p.size == 0:
        return 0.0
    return float(np.mean(np.abs(p - o)))


def per_compartment_mse(predicted, observed, n_cells):
    '''MSE of each compartment block of compartment-major rows.'''
    p = np.asarray(_values(predicted), dtype=float)
    o = np.asarray(_values(observed), dtype=float)
    if p.shape != o.shape:
        raise ShapeMismatch('predicted shape %s != observed shape %s' % (p.shape, o.shape))
    result = {}
    for k, name in enumerate(COMPARTMENTS):
        diff = p[..., k * n_cells:(k + 1) * n_cells] - o[..., k * n_cells:(k + 1) * n_cells]
        result[name] = float(np.mean(diff * diff)) if diff.size else 0.0
    return result


class DrRnnObjective(object):
    """
    Composite loss of a DR-RNN over independent one-interval transitions.

    Every input state is advanced `substeps` DR-RNN steps of size h and
    compared with its target; the internal steps feed the physics term.
    """

    def __init__(self, f, inputs, targets, times, h, substeps=1, omega_u=1.0, omega_s=1.0):
        self.f = f
        self.inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(targets, dtype=float))
        self.times = np.asarray(times, dtype=float).ravel()
        self.h = float(h)
        self.substeps = int(substeps)
        self.omega_u = float(omega_u)
        self.omega_s = float(omega_s)
        if self.inputs.shape != self.targets.shape:
            raise ShapeMismatch('inputs %s and targets %s differ in shape' % (self.inputs.shape, self.targets.shape))
        if len(self.times) != len(self.inputs):
            raise ShapeMismatch('%d start times for %d transitions' % (len(self.times), len(self.inputs)))
        if self.substeps < 1:
            raise ConfigError('each transition needs at least one step')

    @classmethod
    def from_snapshots(cls, f, matrix, h, omega_u=1.0, omega_s=1.0):
        if matrix.n_days < 2:
            raise InvalidSplit('training needs at least two snapshots')
        spacing = np.diff(matrix.days)
        cadence = float(spacing[0])
        if np.any(np.abs(spacing - cadence) > 1e-9) or not is_multiple(cadence, h):
            raise CadenceMismatch('snapshots must be evenly spaced at a multiple of the step %r' % h)
        return cls(f, matrix.rows[:-1], matrix.rows[1:], matrix.days[:-1], h,
                   substeps=steps_per(cadence, h), omega_u=omega_u, omega_s=omega_s)

    def _forward(self, params):
        states = [self.inputs]
        traces = []
        y = self.inputs
        for k in range(self.substeps):
            y, trace = drrnn_step(params, self.f, self.times + k * self.h, y, self.h)
            states.append(y)
            traces.append(trace)
        residuals = [physics_residual(self.f, self.times + (k + 1) * self.h, states[k + 1], states[k], self.h)
                     for k in range(self.substeps)]
        diff = states[-1] - self.targets
        mse_u = float(np.mean(diff * diff))
        mse_s = float(np.mean(np.stack([r * r for r in residuals])))
        parts = LossParts(mse_u, mse_s, self.omega_u * mse_u + self.omega_s * mse_s)
        return parts, states, traces, residuals

    def predict(self, params):
        _, states, _, _ = self._forward(params)
        return states[-1]

    def evaluate(self, params):
        return self._forward(params)[0]

    def value(self, params):
        return self.evaluate(params).mse_l

    def value_and_grad(self, params):
        parts, states, traces, residuals = self._forward(params)
        h = self.h
        grads = {name: np.zeros_like(value) for name, value in params.trainable().items()}
        g = self.omega_u * 2.0 * (states[-1] - self.targets) / self.targets.size
        n_physics = self.substeps * self.targets.size
        for k in range(self.substeps, 0, -1):
            carry = 0.0
            if self.omega_s != 0:
                w = self.omega_s * 2.0 * residuals[k - 1] / n_physics
                g = g + w / h - self.f.vjp(self.times + k * h, states[k], w)
                carry = -w / h
            g, step_grads = drrnn_step_backward(params, self.f, traces[k - 1], g)
            for name in grads:
                grads[name] += step_grads[name]
            g = g + carry
        return parts, grads


class SequenceObjective(object):
    """
    One-step-ahead loss of an LSTM or plain RNN: the input
    at step t is the observed state z_t and the target is z_{t+1}. The
    default loss is the mean absolute error; 'squared' gives a smooth
    variant used by the gradient check.
    """

    def __init__(self, inputs, targets, loss='l1', omega_u=1.0, omega_s=0.0):
        self.inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(targets, dtype=float))
        self.loss = loss
        self.omega_u = float(omega_u)
        self.omega_s = float(omega_s)
        if len(self.inputs) != len(self.targets):
            raise ShapeMismatch('%d inputs for %d targets' % (len(self.inputs), len(self.targets)))
        if loss not in ('l1', 'squared'):
            raise ConfigError('unknown sequence loss %r' % loss)

    @classmethod
    def from_snapshots(cls, matrix, omega_u=1.0, omega_s=0.0, loss='l1'):
        if matrix.n_days < 2:
            raise InvalidSplit('training needs at least two snapshots')
        return cls(matrix.rows[:-1], matrix.rows[1:], loss=loss, omega_u=omega_u, omega_s=omega_s)

    def predict(self, params):
        return sequence_outputs(params, self.inputs)[0]

    def _loss(self, outputs):
        diff = outputs - self.targets
        if diff.shape != self.targets.shape:
            raise ShapeMismatch('model outputs %s, targets are %s' % (diff.shape, self.targets.shape))
        if self.loss == 'l1':
            return trajectory_l1_loss(outputs, self.targets), np.sign(diff) / diff.size
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size

    def evaluate(self, params):
        value, _ = self._loss(self.predict(params))
        return LossParts(value, 0.0, self.omega_u * value)

    def value(self, params):
        return self.evaluate(params).mse_l

    def value_and_grad(self, params):
        outputs, cache = sequence_outputs(params, self.inputs)
        value, d_outputs = self._loss(outputs)
        grads = sequence_backward(params, cache, self.omega_u * d_outputs)
        return LossParts(value, 0.0, self.omega_u * value), grads


def check_finite_gradients(grads):
    for name, value in grads.items():
        if not np.all(np.isfinite(value)):
            raise NonFiniteGradient(name)


def gradient(objective, params):
    '''Exact reverse-mode gradient of an objective's loss at params.'''
    _, grads = objective.value_and_grad(params)
    check_finite_gradients(grads)
    return grads


def finite_difference_gradient(value, params, rel_step=GRADCHECK_STEP):
    '''Central differences with step rel_step * (1 + |theta|) for every trainable entry.'''
    values = {name: np.array(v, dtype=float) for name, v in params.trainable().items()}
    grads = {}
    for name, array in values.items():
        g = np.zeros_like(array)
        for idx in np.ndindex(*array.shape):
            original = array[idx]
            step = rel_step * (1.0 + abs(original))
            array[idx] = original + step
            up = value(params.with_trainable(values))
            array[idx] = original - step
            down = value(params.with_trainable(values))
            array[idx] = original
            g[idx] = (up - down) / (2 * step)
        grads[name] = g
    return grads


def adam_step(params, grads, state, config):
    '''
    One bias-corrected Adam update. `params` is a model parameter object or
    a plain dict of arrays; the same kind is returned, with a new state.
    '''
    values = params if isinstance(params, dict) else params.trainable()
    if set(values) != set(grads):
        raise ShapeMismatch('gradient blocks %s do not match parameters %s' % (sorted(grads), sorted(values)))
    t = state.t + 1
    beta1, beta2 = config.adam_beta1, config.adam_beta2
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    step_size = config.learning_rate / bc1
    new_values, m, v = {}, {}, {}
    for name, value in values.items():
        g = np.asarray(grads[name], dtype=float)
        if g.shape != np.shape(value):
            raise ShapeMismatch('gradient for %s has shape %s, parameter has %s' % (name, g.shape, np.shape(value)))
        m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        denom = np.sqrt(v[name] * (1.0 / bc2)) + config.adam_eps
        new_values[name] = value - step_size * m[name] / denom
    new_state = AdamState(m, v, t)
    if isinstance(params, dict):
        return new_values, new_state
    return params.with_trainable(new_values), new_state


def fit(objective, params, epochs, config, phase='train'):
    '''
    Run `epochs` full-batch Adam steps. Each record holds the loss at the
    start of its epoch, before that epoch's update.
    '''
    state = AdamState.zeros_like(params.trainable())
    records = []
    log_every = max(1, epochs // 10)
    start = time.perf_counter()
    for epoch in range(1, epochs + 1):
        try:
            parts, grads = objective.value_and_grad(params)
        except NumericalError as err:
            raise DivergedTraining('%s loss could not be evaluated: %s' % (phase, err), epoch=epoch)
        if not np.isfinite(parts.mse_l):
            raise DivergedTraining('%s loss became non-finite' % phase, epoch=epoch)
        check_finite_gradients(grads)
        params, state = adam_step(params, grads, state, config)
        record = EpochRecord(epoch, parts.mse_u, parts.mse_s, parts.mse_l, time.perf_counter() - start)
        records.append(record)
        if epoch % log_every == 0 or epoch == epochs:
            logger.info('%s epoch %d/%d: MSE_u=%.3e MSE_s=%.3e MSE_L=%.3e',
                        phase, epoch, epochs, record.mse_u, record.mse_s, record.mse_l)
        else:
            logger.debug('%s epoch %d: %r', phase, epoch, record)
    if epochs:
        elapsed = datetime.timedelta(seconds=time.perf_counter() - start)
        logger.info('%s finished %d epochs in %s', phase, epochs, humanize.precisedelta(elapsed))
    return params, records


def init_model(model, dim, config):
    if model == 'drrnn':
        if config.init == 'euler':
            return euler_start_params(dim, K=config.layers)
        return init_params(dim, K=config.layers, seed=config.seed)
    if model == 'lstm':
        return init_lstm_params(dim, dim, m=config.hidden, seed=config.seed)
    if model == 'rnn':
        return init_rnn_params(dim, dim, m=config.hidden, seed=config.seed)
    raise ConfigError('unknown model %r (expected one of %s)' % (model, ', '.join(MODELS)))


def build_objective(model, matrix, f, config):
    if model == 'drrnn':
        if f is None:
            raise ConfigError('DR-RNN training needs the model right-hand side')
        return DrRnnObjective.from_snapshots(f, matrix, config.step, config.omega_u, config.omega_s)
    return SequenceObjective.from_snapshots(matrix, config.omega_u, config.omega_s)


def training_window(data, train_days):
    '''Rows of `data` up to and including day train_days.'''
    if data.n_days == 0 or data.days[-1] + 1e-9 < train_days:
        raise InvalidSplit('snapshots end before the last training day %r' % train_days)
    return data.select(slice(0, rows_through_day(data, train_days)))


def simulate_reference(f, observed, config):
    '''RK4 trajectory from the first observed state over total_days, sampled at the data cadence.'''
    if f is None:
        raise ConfigError('pretraining needs simulated snapshots or the model right-hand side')
    t0 = float(observed.days[0])
    n_steps = steps_per(config.total_days - t0, config.step)
    trajectory = simulate(f, observed.rows[0], t0, n_steps, h=config.step, method='rk4')
    return assemble_snapshots(trajectory, observed.cadence or config.step, observed.n_cells)


def train(model, data, f=None, config=None, simulated=None, params=None):
    '''
    Pretrain on simulated snapshots, then fine-tune every weight on the
    observed training window with the same composite loss.

    `data` holds the observed snapshots in the units `f` works in; only the
    rows up to day train_days are used. Without `simulated`, the pretraining
    data is an RK4 run of f from the first observed state.
    Returns the fine-tuned parameters and a TrainingHistory.
    '''
    config = config or TrainConfig()
    observed = training_window(data, config.train_days)
    if params is None:
        params = init_model(model, observed.dim, config)
    history = TrainingHistory()
    if config.pretrain_epochs > 0:
        if simulated is None:
            simulated = simulate_reference(f, observed, config)
        logger.info('pretraining %s on %d simulated snapshots', model, simulated.n_days)
        objective = build_objective(model, simulated, f, config)
        params, history.pretrain = fit(objective, params, config.pretrain_epochs, config, phase='pretrain')
    history.pretrained = params
    if config.finetune_epochs > 0:
        logger.info('fine-tuning %s on %d observed snapshots', model, observed.n_days)
        objective = build_objective(model, observed, f, config)
        params, history.finetune = fit(objective, params, config.finetune_epochs, config, phase='finetune')
    return params, history


def loss_report(model, params, observed, f, config, wall_seconds=0.0):
    '''LossReport of one-interval predictions from observed inputs over a snapshot window.'''
    objective = build_objective(model, observed, f, config)
    parts = objective.evaluate(params)
    predicted = objective.predict(params)
    per_compartment = per_compartment_mse(predicted, observed.rows[1:], observed.n_cells)
    return LossReport.build(per_compartment, parts.mse_u, parts.mse_s, config, wall_seconds)


def history_to_csv_string(records):
    return data_to_csv_string([HISTORY_HEADER] + [r.as_row() for r in records])


def write_history(records, path):
    with open(path, 'w') as f:
        f.write(history_to_csv_string(records))


def read_history(path):
    with open(path) as f:
        data = [row for row in data_from_csv_string(f.read()) if row]
    if not data or data[0] != HISTORY_HEADER:
        raise ParseError('%s: expected header %s' % (path, ','.join(HISTORY_HEADER)), line=1)
    records = []
    for lineno, row in enumerate(data[1:], start=2):
        try:
            records.append(EpochRecord(int(row[0]), *[float(v) for v in row[1:]]))
        except (ValueError, TypeError):
            raise ParseError('%s: malformed history row' % path, line=lineno)
    return records


class GradcheckResult(object):

    def __init__(self, tolerance):
        self.tolerance = tolerance
        self.max_error = 0.0
        self.worst_parameter = None
        self.worst_model = None
        self.checked = 0

    def update(self, model, name, error):
        self.checked += 1
        if error > self.max_error or self.worst_parameter is None:
            self.max_error = error
            self.worst_parameter = name
            self.worst_model = model

    @property
    def passed(self):
        return self.max_error <= self.tolerance


def _drrnn_instance(rng):
    K = int(rng.integers(1, 4))
    h = float(rng.uniform(0.2, 0.5))
    batch = int(rng.integers(1, 4))
    if rng.random() < 0.5:
        n = 5
        substeps = 1
        f = SeirdRhs(SeirdParams(
            phi_i=rng.uniform(0.3, 1.0), phi_e=rng.uniform(0.1, 0.5),
            alpha_inc=rng.uniform(0.1, 0.5), gamma_e=rng.uniform(0.05, 0.3),
            gamma_i=rng.uniform(0.05, 0.3), delta=rng.uniform(0.0, 0.05),
            allee=rng.uniform(0.0, 0.05)))
        inputs = rng.uniform(0.5, 1.5, size=(batch, n))
    else:
        n = int(rng.integers(1, 6))
        substeps = int(rng.integers(1, 3))
        f = LinearRhs(rng.normal(scale=0.5, size=(n, n)))
        inputs = rng.normal(size=(batch, n))
    targets = inputs + rng.normal(scale=0.1, size=(batch, n))
    params = init_params(n, K=K, rng=rng)
    times = h * substeps * np.arange(batch)
    objective = DrRnnObjective(f, inputs, targets, times, h, substeps=substeps,
                               omega_u=1.0, omega_s=float(rng.uniform(0.1, 1.0)))
    return objective, params


def _sequence_instance(model, rng):
    m = int(rng.integers(1, 5))
    p = int(rng.integers(1, 4))
    T = int(rng.integers(2, 6))
    if model == 'lstm':
        params = init_lstm_params(p, p, m=m, rng=rng)
    else:
        params = init_rnn_params(p, p, m=m, rng=rng)
    objective = SequenceObjective(rng.normal(size=(T, p)), rng.normal(size=(T, p)), loss='squared')
    return objective, params


def _corrupted(grads):
    out = {}
    for name, value in grads.items():
        value = np.array(value, dtype=float)
        if value.size:
            value.flat[0] += 1e-2 * max(1.0, float(np.max(np.abs(value))))
        out[name] = value
    return out


def check_gradients(seed=None, instances=None, tolerance=None, corrupt=False):
    '''
    Compare analytic gradients against central finite differences on random
    small DR-RNN, LSTM and RNN instances. `corrupt` perturbs the analytic
    gradients so the check must fail.
    '''
    seed = _default(seed, settings.SEED)
    instances = _default(instances, settings.GRADCHECK_INSTANCES)
    result = GradcheckResult(_default(tolerance, settings.GRADCHECK_TOLERANCE))
    for index in range(instances):
        rng = np.random.default_rng([seed, index])
        for model in MODELS:
            if model == 'drrnn':
                objective, params = _drrnn_instance(rng)
            else:
                objective, params = _sequence_instance(model, rng)
            analytic = gradient(objective, params)
            if corrupt:
                analytic = _corrupted(analytic)
            numeric = finite_difference_gradient(objective.value, params)
            for name in sorted(analytic):
                error = relative_error(analytic[name], numeric[name], floor=GRADCHECK_FLOOR)
                result.update(model, name, error)
                logger.debug('instance %d %s %s: relative error %.3e', index, model, name, error)
    logger.info('gradient check over %d instances: max relative error %.3e (%s.%s)',
                instances, result.max_error, result.worst_model, result.worst_parameter)
    return result
