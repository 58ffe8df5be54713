from epiforge.errors import (
    DimensionMismatch,
    InvalidSpec,
    NoConvergence,
    NonFiniteState,
    NumericalError,
    with_step,
)
from epiforge.utils import get_logger
import epiforge.settings as settings
import numpy as np
import scipy.linalg

logger = get_logger(__name__)

METHODS = ('rk4', 'implicit-euler')

# relative step for finite-difference Jacobians
FD_STEP = 1e-7

# fixed-point iterations allowed before switching to Newton
FIXED_POINT_PATIENCE = 25


class RhsFunction(object):
    """
    Right-hand side f(t, y) of dy/dt = f(t, y).

    Calls through __call__ are counted in `evaluations`; the counter is how
    the constant per-step cost of the learned integrator is checked. A state
    may carry leading batch dimensions, in which case t is a scalar or one
    time per batch entry.
    """

    def __init__(self, fun, dim=None, jac=None, name=None):
        self._fun = fun
        self._jac = jac
        self.dim = dim
        self.name = name or getattr(fun, '__name__', 'rhs')
        self.evaluations = 0

    def __call__(self, t, y):
        self.evaluations += 1
        return self.evaluate(t, y)

    def evaluate(self, t, y):
        return np.asarray(self._fun(t, y), dtype=float)

    def jacobian(self, t, y):
        y = np.asarray(y, dtype=float)
        if self._jac is not None:
            return np.asarray(self._jac(t, y), dtype=float)
        # central differences, one column per state entry
        n = y.shape[-1]
        jac = np.empty((n, n))
        for k in range(n):
            step = FD_STEP * (1.0 + abs(y[k]))
            up = y.copy()
            down = y.copy()
            up[k] += step
            down[k] -= step
            jac[:, k] = (self.evaluate(t, up) - self.evaluate(t, down)) / (2 * step)
        return jac

    def vjp(self, t, y, v):
        '''v^T J(t, y), row by row for batched inputs.'''
        y = np.asarray(y, dtype=float)
        v = np.asarray(v, dtype=float)
        if y.ndim == 1:
            return self.jacobian(t, y).T.dot(v)
        times = np.broadcast_to(np.asarray(t, dtype=float), y.shape[:-1])
        out = np.empty(y.shape)
        for idx in np.ndindex(*y.shape[:-1]):
            out[idx] = self.jacobian(times[idx], y[idx]).T.dot(v[idx])
        return out

    def check_horizon(self, t_end):
        '''Raises InvalidSpec when f is not defined up to t_end.'''
        pass

    def reset_counter(self):
        self.evaluations = 0


class LinearRhs(RhsFunction):
    """Autonomous linear system dy/dt = A y."""

    def __init__(self, matrix):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        super(LinearRhs, self).__init__(None, dim=self.matrix.shape[0], name='linear')

    def evaluate(self, t, y):
        return np.asarray(y, dtype=float).dot(self.matrix.T)

    def jacobian(self, t, y):
        return self.matrix

    def vjp(self, t, y, v):
        return np.asarray(v, dtype=float).dot(self.matrix)


class ScaledRhs(RhsFunction):
    """
    A right-hand side expressed in normalized units: with y = scale * y_hat,
    f_hat(t, y_hat) = f(t, scale * y_hat) / scale.
    """

    def __init__(self, base, scale):
        self.base = base
        self.scale = float(scale)
        super(ScaledRhs, self).__init__(None, dim=base.dim, name='%s/scaled' % base.name)

    def evaluate(self, t, y):
        return self.base.evaluate(t, self.scale * np.asarray(y, dtype=float)) / self.scale

    def jacobian(self, t, y):
        return self.base.jacobian(t, self.scale * np.asarray(y, dtype=float))

    def vjp(self, t, y, v):
        return self.base.vjp(t, self.scale * np.asarray(y, dtype=float), v)

    def check_horizon(self, t_end):
        self.base.check_horizon(t_end)


class Trajectory(object):

    def __init__(self, times, states):
        self.times = np.asarray(times, dtype=float)
        self.states = np.asarray(states, dtype=float)
        if len(self.times) != len(self.states):
            raise DimensionMismatch('%d times but %d states' % (len(self.times), len(self.states)))
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise InvalidSpec('trajectory times must be strictly increasing')

    def __len__(self):
        return len(self.times)

    @property
    def final(self):
        return self.states[-1]

    @property
    def step(self):
        if len(self.times) < 2:
            return None
        return float(self.times[1] - self.times[0])


def _finite(values, what):
    if not np.all(np.isfinite(values)):
        raise NonFiniteState('%s produced non-finite values' % what)
    return values


def rk4_step(f, t, y, h):
    y = np.asarray(y, dtype=float)
    if h <= 0:
        raise InvalidSpec('step size must be positive, got %r' % h)
    k1 = _finite(f(t, y), 'RK4 stage 1')
    k2 = _finite(f(t + h / 2, y + h / 2 * k1), 'RK4 stage 2')
    k3 = _finite(f(t + h / 2, y + h / 2 * k2), 'RK4 stage 3')
    k4 = _finite(f(t + h, y + h * k3), 'RK4 stage 4')
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def residual(f, t_next, y_candidate, y_prev, h):
    '''
    Implicit-Euler residual r = y_candidate - y_prev - h f(t_next, y_candidate).

    The root of r is exactly the implicit-Euler update
    y_next = y_prev + h f(t_next, y_next).
    '''
    y_candidate = np.asarray(y_candidate, dtype=float)
    y_prev = np.asarray(y_prev, dtype=float)
    if y_candidate.shape != y_prev.shape:
        raise DimensionMismatch('candidate shape %s != previous shape %s' % (y_candidate.shape, y_prev.shape))
    return y_candidate - y_prev - h * f(t_next, y_candidate)


def _norm_inf(r):
    return float(np.max(np.abs(r))) if np.size(r) else 0.0


def implicit_euler_step(f, t, y, h, tol=None, max_iter=None, damping=1.0):
    '''
    Solve y' = y + h f(t + h, y') to ||residual||_inf <= tol.

    Damped fixed-point iteration first; if it stalls or diverges the solve
    restarts from y with Newton steps on the residual, using f's Jacobian (finite
    differences when f has no analytic one). Both phases share the
    iteration cap.
    '''
    tol = settings.IMPLICIT_TOL if tol is None else tol
    max_iter = settings.IMPLICIT_MAX_ITER if max_iter is None else max_iter
    if h <= 0 or tol <= 0:
        raise InvalidSpec('implicit Euler needs h > 0 and tol > 0, got h=%r tol=%r' % (h, tol))
    y = np.asarray(y, dtype=float)
    t_next = t + h

    candidate = y.copy()
    r = _finite(residual(f, t_next, candidate, y, h), 'implicit Euler residual')
    norm = _norm_inf(r)
    iterations = 0
    best = norm
    stalled = 0
    newton = False
    while norm > tol:
        if iterations >= max_iter:
            raise NoConvergence('implicit Euler did not converge', residual_norm=norm, iterations=iterations)
        iterations += 1
        if not newton:
            candidate = candidate - damping * r
        else:
            jac = np.eye(len(candidate)) - h * f.jacobian(t_next, candidate)
            try:
                candidate = candidate - scipy.linalg.solve(jac, r)
            except (scipy.linalg.LinAlgError, ValueError) as err:
                raise NoConvergence('implicit Euler Newton system is singular: %s' % err,
                                    residual_norm=norm, iterations=iterations)
        r = residual(f, t_next, candidate, y, h)
        norm = _norm_inf(r) if np.all(np.isfinite(r)) else np.inf
        if not newton:
            if norm < 0.9 * best:
                best = norm
                stalled = 0
            else:
                stalled += 1
            if not np.isfinite(norm) or stalled >= 3 or iterations >= FIXED_POINT_PATIENCE:
                logger.warning('fixed-point iteration stalled at residual %r after %d iterations, switching to Newton',
                               norm, iterations)
                newton = True
                candidate = y.copy()
                r = residual(f, t_next, candidate, y, h)
                norm = _norm_inf(r)
        elif not np.isfinite(norm):
            raise NoConvergence('implicit Euler Newton iteration diverged', residual_norm=norm, iterations=iterations)
    return candidate


def simulate(f, y0, t0, n_steps, h=None, method='rk4', tol=None):
    '''
    Integrate from (t0, y0) for n_steps fixed steps of size h.

    Returns the Trajectory of all n_steps + 1 states. A numerical error
    inside a step is re-raised with the failing step index attached.
    '''
    h = settings.STEP_DAYS if h is None else h
    if method not in METHODS:
        raise InvalidSpec('unknown integration method %r (expected one of %s)' % (method, ', '.join(METHODS)))
    if n_steps < 0:
        raise InvalidSpec('n_steps must be >= 0, got %r' % n_steps)
    y0 = np.asarray(y0, dtype=float)
    if not np.all(np.isfinite(y0)):
        raise NonFiniteState('initial state is not finite', step=0)
    f.check_horizon(t0 + n_steps * h)

    states = np.empty((n_steps + 1,) + y0.shape)
    states[0] = y0
    y = y0
    for k in range(n_steps):
        t = t0 + k * h
        try:
            if method == 'rk4':
                y = rk4_step(f, t, y, h)
            else:
                y = implicit_euler_step(f, t, y, h, tol=tol)
        except NumericalError as err:
            raise with_step(err, k + 1)
        states[k + 1] = y
    times = t0 + h * np.arange(n_steps + 1)
    logger.debug('simulated %d %s steps of %r days with %s', n_steps, method, h, f.name)
    return Trajectory(times, states)
