'''
Plain RNN and LSTM sequence models, the recurrent baselines.

Both read a state vector z_t per time step and emit x_t = V h_t + c, the
prediction of the next state. Gate and hidden pre-activations act on the
concatenation [h_{t-1}, z_t].
'''

from epiforge.errors import DimensionMismatch, InvalidSpec
import epiforge.settings as settings
import numpy as np
from scipy.special import expit

GATES = ('f', 'i', 'o', 'c')


class RnnParams(object):
    kind = 'rnn'
    TRAINABLE = ('W', 'b', 'V', 'c')

    def __init__(self, W, b, V, c, meta=None):
        self.W = np.atleast_2d(np.asarray(W, dtype=float))
        self.b = np.asarray(b, dtype=float).ravel()
        self.V = np.atleast_2d(np.asarray(V, dtype=float))
        self.c = np.asarray(c, dtype=float).ravel()
        self.meta = dict(meta or {})
        self.validate()

    @property
    def m(self):
        return self.W.shape[0]

    @property
    def p(self):
        return self.W.shape[1] - self.m

    @property
    def q(self):
        return self.V.shape[0]

    def validate(self):
        m = self.m
        if self.W.shape[1] <= m:
            raise DimensionMismatch('W must be m x (m + p) with p >= 1, got %s' % (self.W.shape,))
        if self.b.shape != (m,):
            raise DimensionMismatch('b has length %d, expected %d' % (len(self.b), m))
        if self.V.shape[1] != m:
            raise DimensionMismatch('V must be q x %d, got %s' % (m, self.V.shape))
        if self.c.shape != (self.q,):
            raise DimensionMismatch('c has length %d, expected %d' % (len(self.c), self.q))

    def trainable(self):
        return {name: getattr(self, name) for name in self.TRAINABLE}

    def with_trainable(self, values):
        return RnnParams(values['W'], values['b'], values['V'], values['c'], meta=self.meta)

    def header(self):
        return {'m': self.m, 'p': self.p, 'q': self.q}


class LstmParams(object):
    kind = 'lstm'
    TRAINABLE = ('W_f', 'W_i', 'W_o', 'W_c', 'b_f', 'b_i', 'b_o', 'b_c', 'V', 'c')

    def __init__(self, W_f, W_i, W_o, W_c, b_f, b_i, b_o, b_c, V, c, meta=None):
        self.W_f = np.atleast_2d(np.asarray(W_f, dtype=float))
        self.W_i = np.atleast_2d(np.asarray(W_i, dtype=float))
        self.W_o = np.atleast_2d(np.asarray(W_o, dtype=float))
        self.W_c = np.atleast_2d(np.asarray(W_c, dtype=float))
        self.b_f = np.asarray(b_f, dtype=float).ravel()
        self.b_i = np.asarray(b_i, dtype=float).ravel()
        self.b_o = np.asarray(b_o, dtype=float).ravel()
        self.b_c = np.asarray(b_c, dtype=float).ravel()
        self.V = np.atleast_2d(np.asarray(V, dtype=float))
        self.c = np.asarray(c, dtype=float).ravel()
        self.meta = dict(meta or {})
        self.validate()

    @property
    def m(self):
        return self.W_f.shape[0]

    @property
    def p(self):
        return self.W_f.shape[1] - self.m

    @property
    def q(self):
        return self.V.shape[0]

    def validate(self):
        shape = self.W_f.shape
        if shape[1] <= shape[0]:
            raise DimensionMismatch('gate matrices must be m x (m + p) with p >= 1, got %s' % (shape,))
        for gate in GATES:
            if getattr(self, 'W_' + gate).shape != shape:
                raise DimensionMismatch('W_%s has shape %s, expected %s' % (
                    gate, getattr(self, 'W_' + gate).shape, shape))
            if getattr(self, 'b_' + gate).shape != (self.m,):
                raise DimensionMismatch('b_%s must have length %d' % (gate, self.m))
        if self.V.shape[1] != self.m or self.c.shape != (self.q,):
            raise DimensionMismatch('readout V, c do not match hidden size %d' % self.m)

    def trainable(self):
        return {name: getattr(self, name) for name in self.TRAINABLE}

    def with_trainable(self, values):
        return LstmParams(*[values[name] for name in self.TRAINABLE], meta=self.meta)

    def header(self):
        return {'m': self.m, 'p': self.p, 'q': self.q}


def init_rnn_params(p, q, m=None, seed=None, rng=None):
    m = settings.HIDDEN_SIZE if m is None else m
    rng = rng if rng is not None else np.random.default_rng(settings.SEED if seed is None else seed)
    bound = 1.0 / np.sqrt(m)
    draw = lambda *shape: rng.uniform(-bound, bound, size=shape)
    return RnnParams(draw(m, m + p), draw(m), draw(q, m), draw(q))


def init_lstm_params(p, q, m=None, seed=None, rng=None):
    m = settings.HIDDEN_SIZE if m is None else m
    rng = rng if rng is not None else np.random.default_rng(settings.SEED if seed is None else seed)
    bound = 1.0 / np.sqrt(m)
    draw = lambda *shape: rng.uniform(-bound, bound, size=shape)
    weights = [draw(m, m + p) for _ in GATES]
    biases = [draw(m) for _ in GATES]
    return LstmParams(*(weights + biases + [draw(q, m), draw(q)]))


def _concat(params, h_prev, z_t):
    h_prev = np.asarray(h_prev, dtype=float)
    z_t = np.asarray(z_t, dtype=float)
    if h_prev.shape[-1] != params.m:
        raise DimensionMismatch('hidden state has size %d, expected %d' % (h_prev.shape[-1], params.m))
    if z_t.shape[-1] != params.p:
        raise DimensionMismatch('input has size %d, expected %d' % (z_t.shape[-1], params.p))
    return np.concatenate([h_prev, z_t], axis=-1)


def rnn_cell(params, h_prev, z_t):
    '''h_t = tanh(W [h_prev, z_t] + b), x_t = V h_t + c.'''
    zc = _concat(params, h_prev, z_t)
    h_t = np.tanh(zc.dot(params.W.T) + params.b)
    x_t = h_t.dot(params.V.T) + params.c
    return h_t, x_t


def lstm_gates(params, h_prev, z_t):
    '''Returns (f_t, i_t, o_t, candidate) for one step.'''
    zc = _concat(params, h_prev, z_t)
    f_t = expit(zc.dot(params.W_f.T) + params.b_f)
    i_t = expit(zc.dot(params.W_i.T) + params.b_i)
    o_t = expit(zc.dot(params.W_o.T) + params.b_o)
    g_t = np.tanh(zc.dot(params.W_c.T) + params.b_c)
    return f_t, i_t, o_t, g_t


def lstm_cell(params, h_prev, c_prev, z_t):
    f_t, i_t, o_t, g_t = lstm_gates(params, h_prev, z_t)
    c_t = f_t * c_prev + i_t * g_t
    h_t = o_t * np.tanh(c_t)
    return h_t, c_t


def readout(params, h_t):
    return h_t.dot(params.V.T) + params.c


def sequence_outputs(params, inputs):
    '''
    Forward pass over a sequence of inputs of shape (T, p).

    Returns the outputs (T, q) and a cache for sequence_backward.
    '''
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    T = len(inputs)
    m = params.m
    h = np.zeros(m)
    cell = np.zeros(m)
    outputs = np.empty((T, params.q))
    cache = {'inputs': inputs, 'zc': [], 'h': [], 'cell': [], 'prev_cell': [], 'gates': []}
    for t in range(T):
        zc = _concat(params, h, inputs[t])
        if params.kind == 'rnn':
            h = np.tanh(zc.dot(params.W.T) + params.b)
        else:
            gates = lstm_gates(params, h, inputs[t])
            f_t, i_t, o_t, g_t = gates
            cache['prev_cell'].append(cell)
            cell = f_t * cell + i_t * g_t
            h = o_t * np.tanh(cell)
            cache['gates'].append(gates)
            cache['cell'].append(cell)
        cache['zc'].append(zc)
        cache['h'].append(h)
        outputs[t] = readout(params, h)
    return outputs, cache


def sequence_backward(params, cache, d_outputs):
    '''Backpropagation through time for the adjoint d_outputs of shape (T, q).'''
    m = params.m
    grads = {name: np.zeros_like(value) for name, value in params.trainable().items()}
    dh_next = np.zeros(m)
    dcell_next = np.zeros(m)
    for t in range(len(d_outputs) - 1, -1, -1):
        dx = d_outputs[t]
        h = cache['h'][t]
        zc = cache['zc'][t]
        grads['V'] += np.outer(dx, h)
        grads['c'] += dx
        dh = params.V.T.dot(dx) + dh_next
        if params.kind == 'rnn':
            da = dh * (1.0 - h * h)
            grads['W'] += np.outer(da, zc)
            grads['b'] += da
            dzc = params.W.T.dot(da)
        else:
            f_t, i_t, o_t, g_t = cache['gates'][t]
            tc = np.tanh(cache['cell'][t])
            dcell = dcell_next + dh * o_t * (1.0 - tc * tc)
            pre = {
                'f': dcell * cache['prev_cell'][t] * f_t * (1.0 - f_t),
                'i': dcell * g_t * i_t * (1.0 - i_t),
                'o': dh * tc * o_t * (1.0 - o_t),
                'c': dcell * i_t * (1.0 - g_t * g_t),
            }
            dzc = np.zeros(len(zc))
            for gate in GATES:
                grads['W_' + gate] += np.outer(pre[gate], zc)
                grads['b_' + gate] += pre[gate]
                dzc += getattr(params, 'W_' + gate).T.dot(pre[gate])
            dcell_next = dcell * f_t
        dh_next = dzc[:m]
    return grads


def sequence_forecast(params, history, horizon):
    '''
    One pass over the observed history, then a closed-loop rollout of
    `horizon` steps feeding each prediction back as the next input.
    '''
    history = np.asarray(history, dtype=float)
    if history.size == 0:
        raise InvalidSpec('history must be nonempty')
    history = np.atleast_2d(history)
    if horizon < 0:
        raise InvalidSpec('horizon must be >= 0, got %r' % horizon)
    if params.q != params.p:
        raise DimensionMismatch('closed-loop forecasting needs output size %d == input size %d' % (params.q, params.p))
    h = np.zeros(params.m)
    cell = np.zeros(params.m)

    def advance(h, cell, z):
        if params.kind == 'rnn':
            h, x = rnn_cell(params, h, z)
            return h, cell, x
        h, cell = lstm_cell(params, h, cell, z)
        return h, cell, readout(params, h)

    x = None
    for z in history:
        h, cell, x = advance(h, cell, z)
    predictions = np.empty((horizon, params.q))
    for k in range(horizon):
        predictions[k] = x
        if k + 1 < horizon:
            h, cell, x = advance(h, cell, x)
    return predictions
