'''
Deep residual recurrent network: a learned, explicit-in-time integrator.

Each time step starts from the candidate y^0 = y_t and runs K layers, each
evaluating the implicit-Euler residual at the previous candidate and
nudging the candidate to shrink it:

    r^i = y^{i-1} - y_t - h f(t + h, y^{i-1})
    H_i = gamma ||r^i||^2 + beta H_{i-1},           H_0 = 0
    y^1 = y^0 - W * tanh(U r^1)                     (layer 1)
    y^i = y^{i-1} - eta_i / sqrt(H_i + eps) r^i     (layers 2..K)

W is an elementwise gain, U a full mixing matrix and eta one scalar per
layer after the first; beta and gamma are fixed. A step costs exactly K
evaluations of f however stiff the system is.

States may carry leading batch dimensions; every operation here is
vectorized over them.
'''

from epiforge.constants import DRRNN_BETA, DRRNN_EPS_GUARD, DRRNN_GAMMA
from epiforge.errors import DimensionMismatch, InvalidSpec, NonFiniteState, NumericalError, with_step
from epiforge.integrators import Trajectory, residual
import epiforge.settings as settings
import numpy as np


class DrRnnParams(object):
    kind = 'drrnn'
    TRAINABLE = ('W', 'U', 'eta')

    def __init__(self, W, U, eta, beta=DRRNN_BETA, gamma=DRRNN_GAMMA, eps_guard=DRRNN_EPS_GUARD, meta=None):
        self.W = np.asarray(W, dtype=float).ravel()
        self.U = np.atleast_2d(np.asarray(U, dtype=float))
        self.eta = np.asarray(eta, dtype=float).ravel()
        self.beta = float(beta)
        self.gamma = float(gamma)
        self.eps_guard = float(eps_guard)
        self.meta = dict(meta or {})
        self.validate()

    @property
    def n(self):
        return len(self.W)

    @property
    def K(self):
        return len(self.eta) + 1

    def validate(self):
        n = self.n
        if n < 1:
            raise DimensionMismatch('DR-RNN state dimension must be >= 1')
        if self.U.shape != (n, n):
            raise DimensionMismatch('U has shape %s, expected (%d, %d)' % (self.U.shape, n, n))
        for name in self.TRAINABLE:
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidSpec('DR-RNN parameter %s is not finite' % name)
        if self.eps_guard <= 0:
            raise InvalidSpec('eps_guard must be positive')

    def trainable(self):
        return {'W': self.W, 'U': self.U, 'eta': self.eta}

    def with_trainable(self, values):
        return DrRnnParams(values['W'], values['U'], values['eta'],
                           beta=self.beta, gamma=self.gamma, eps_guard=self.eps_guard, meta=self.meta)

    def header(self):
        return {'n': self.n, 'K': self.K, 'beta': self.beta, 'gamma': self.gamma, 'eps_guard': self.eps_guard}


def init_params(n, K=None, seed=None, rng=None):
    '''
    Seeded initialization: W and eta uniform in (-0.1, 0.1), U uniform in
    (-1/sqrt(n), 1/sqrt(n)).
    '''
    K = settings.DRRNN_LAYERS if K is None else K
    if K < 1:
        raise InvalidSpec('DR-RNN needs at least one layer, got K=%r' % K)
    if rng is None:
        rng = np.random.default_rng(settings.SEED if seed is None else seed)
    bound = 1.0 / np.sqrt(n)
    W = rng.uniform(-0.1, 0.1, size=n)
    U = rng.uniform(-bound, bound, size=(n, n))
    eta = rng.uniform(-0.1, 0.1, size=K - 1)
    return DrRnnParams(W, U, eta)


def euler_start_params(n, K=None):
    '''
    W = 1, U = I, eta = 0. The first layer then moves y by -tanh(r^1), an
    explicit Euler step up to the tanh, and the later layers start idle.
    '''
    K = settings.DRRNN_LAYERS if K is None else K
    if K < 1:
        raise InvalidSpec('DR-RNN needs at least one layer, got K=%r' % K)
    return DrRnnParams(np.ones(n), np.eye(n), np.zeros(K - 1))


INITS = {'uniform': init_params, 'euler': euler_start_params}


class LayerTrace(object):
    """
    Everything one step computed, kept for diagnostics and the reverse pass.

    states holds y^0..y^K, residuals r^1..r^K, norms H_1..H_K; activation is
    tanh(U r^1) and scales the per-layer factors eta_i / sqrt(H_i + eps)
    (scales[0] is unused and zero).
    """

    def __init__(self, t, h):
        self.t = t
        self.h = h
        self.states = []
        self.residuals = []
        self.norms = []
        self.scales = []
        self.activation = None

    @property
    def K(self):
        return len(self.residuals)


def _check_layer(values, layer):
    if not np.all(np.isfinite(values)):
        raise NonFiniteState('DR-RNN produced non-finite values', layer=layer)


def drrnn_step(params, f, t, y_t, h):
    y_t = np.asarray(y_t, dtype=float)
    if y_t.shape[-1] != params.n:
        raise DimensionMismatch('state has dimension %d, DR-RNN expects %d' % (y_t.shape[-1], params.n))
    if not np.all(np.isfinite(y_t)):
        raise NonFiniteState('DR-RNN input state is not finite', layer=0)

    trace = LayerTrace(t, h)
    t_next = np.asarray(t, dtype=float) + h
    y = y_t
    H = np.zeros(y_t.shape[:-1])
    trace.states.append(y)
    for layer in range(1, params.K + 1):
        r = residual(f, t_next, y, y_t, h)
        _check_layer(r, layer)
        H = params.gamma * np.sum(r * r, axis=-1) + params.beta * H
        if layer == 1:
            activation = np.tanh(r.dot(params.U.T))
            y = y - params.W * activation
            trace.activation = activation
            trace.scales.append(np.zeros(H.shape))
        else:
            scale = params.eta[layer - 2] / np.sqrt(H + params.eps_guard)
            y = y - scale[..., None] * r
            trace.scales.append(scale)
        _check_layer(y, layer)
        trace.residuals.append(r)
        trace.norms.append(H)
        trace.states.append(y)
    return y, trace


def drrnn_step_backward(params, f, trace, grad_out):
    '''
    Reverse pass through one drrnn_step.

    grad_out is the adjoint of the step's output y^K. Returns the adjoint of
    the step's input y_t and a dict of parameter gradients summed over any
    batch dimensions.
    '''
    n = params.n
    h = trace.h
    t_next = np.asarray(trace.t, dtype=float) + h
    grads = {
        'W': np.zeros(n),
        'U': np.zeros((n, n)),
        'eta': np.zeros(params.K - 1),
    }
    gy = np.array(grad_out, dtype=float)
    gH = np.zeros(gy.shape[:-1])
    gy_t = np.zeros(gy.shape)
    for layer in range(trace.K, 0, -1):
        r = trace.residuals[layer - 1]
        y_prev = trace.states[layer - 1]
        if layer == 1:
            act = trace.activation
            grads['W'] += -np.sum((gy * act).reshape(-1, n), axis=0)
            ga = -gy * params.W * (1.0 - act * act)
            grads['U'] += ga.reshape(-1, n).T.dot(r.reshape(-1, n))
            gr = ga.dot(params.U)
        else:
            denom = np.sqrt(trace.norms[layer - 1] + params.eps_guard)
            scale = trace.scales[layer - 1]
            gr = -scale[..., None] * gy
            g_scale = -np.sum(gy * r, axis=-1)
            grads['eta'][layer - 2] += np.sum(g_scale / denom)
            gH = gH - 0.5 * g_scale * params.eta[layer - 2] / (denom ** 3)
        gr = gr + 2.0 * params.gamma * gH[..., None] * r
        gH = params.beta * gH
        # r = y_prev - y_t - h f(t + h, y_prev); y^layer = y_prev - update
        gy = gy + gr - h * f.vjp(t_next, y_prev, gr)
        gy_t = gy_t - gr
    gy_t = gy_t + gy
    return gy_t, grads


def drrnn_rollout(params, f, y0, n_steps, h=None, t0=0.0):
    h = settings.STEP_DAYS if h is None else h
    if n_steps < 0:
        raise InvalidSpec('n_steps must be >= 0, got %r' % n_steps)
    y0 = np.asarray(y0, dtype=float)
    if not np.all(np.isfinite(y0)):
        raise NonFiniteState('initial state is not finite', step=0)
    states = np.empty((n_steps + 1,) + y0.shape)
    states[0] = y0
    y = y0
    for k in range(n_steps):
        try:
            y, _ = drrnn_step(params, f, t0 + k * h, y, h)
        except NumericalError as err:
            raise with_step(err, k + 1)
        states[k + 1] = y
    return Trajectory(t0 + h * np.arange(n_steps + 1), states)


def rollout_traces(params, f, y0, n_steps, h, t0=0.0):
    '''Like drrnn_rollout but returns the LayerTrace of every step.'''
    y = np.asarray(y0, dtype=float)
    traces = []
    for k in range(n_steps):
        try:
            y, trace = drrnn_step(params, f, t0 + k * h, y, h)
        except NumericalError as err:
            raise with_step(err, k + 1)
        traces.append(trace)
    return y, traces


def residual_norm_profile(trace):
    '''Euclidean norm of each layer's residual, shape (K,) + batch shape.'''
    return np.array([np.sqrt(np.sum(r * r, axis=-1)) for r in trace.residuals])


def residual_reduction_rate(traces):
    '''Fraction of steps whose last-layer residual norm is <= the first layer's.'''
    if not traces:
        return 1.0
    hits = []
    for trace in traces:
        profile = residual_norm_profile(trace)
        hits.append(np.ravel(profile[-1] <= profile[0]))
    hits = np.concatenate(hits)
    return float(np.mean(hits))
