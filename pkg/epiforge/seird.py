'''
Spatio-temporal SEIRD model with an Allee factor on transmission and
population-weighted heterogeneous diffusion.

    ds/dt = -T + div(n_p nu_s grad s)
    de/dt = +T - (alpha_inc + gamma_e) e + div(n_p nu_e grad e)
    di/dt = alpha_inc e - (gamma_i + delta) i + div(n_p nu_i grad i)
    dr/dt = gamma_e e + gamma_i i + div(n_p nu_r grad r)
    dd/dt = delta i

with T = (1 - allee / n_p) s (phi_i i + phi_e e) and n_p = s + e + i + r.

The removal term of the infectious compartment is (gamma_i + delta) i:
each recovery feeds r and each death feeds d, so the reaction terms cancel
cell by cell and the total population only moves by diffusion. A quadratic
gamma_i * i^2 removal would break that balance and is not used.

Passing grid=None evaluates the well-mixed (0-D) model: one cell, no
diffusion.
'''

from epiforge.constants import COMPARTMENTS
from epiforge.errors import ConfigError, DimensionMismatch, InvalidSpec, NonPositivePopulation
from epiforge.integrators import RhsFunction
from epiforge.grid import laplacian_varcoef, laplacian_varcoef_vjp
import numpy as np

PARAM_FIELDS = (
    'phi_i', 'phi_e', 'alpha_inc', 'gamma_e', 'gamma_i', 'delta',
    'nu_s', 'nu_e', 'nu_i', 'nu_r', 'allee',
)

# diffusion coefficient used for each diffusing compartment
DIFFUSION_FIELDS = {'s': 'nu_s', 'e': 'nu_e', 'i': 'nu_i', 'r': 'nu_r'}


class SeirdParams(object):
    """
    Epidemiological and diffusion coefficients.

    Every field is either a float (uniform in space) or an array with one
    entry per grid cell.
    """

    def __init__(self, phi_i=0.0, phi_e=0.0, alpha_inc=0.0, gamma_e=0.0, gamma_i=0.0,
                 delta=0.0, nu_s=0.0, nu_e=0.0, nu_i=0.0, nu_r=0.0, allee=0.0):
        self.phi_i = phi_i
        self.phi_e = phi_e
        self.alpha_inc = alpha_inc
        self.gamma_e = gamma_e
        self.gamma_i = gamma_i
        self.delta = delta
        self.nu_s = nu_s
        self.nu_e = nu_e
        self.nu_i = nu_i
        self.nu_r = nu_r
        self.allee = allee
        self.validate()

    def validate(self):
        for name in PARAM_FIELDS:
            value = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(value)):
                raise ConfigError('parameter %s must be finite' % name)
            if np.any(value < 0):
                raise ConfigError('parameter %s must be >= 0' % name)

    def as_dict(self):
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def replace(self, **changes):
        values = self.as_dict()
        for name in changes:
            if name not in values:
                raise ConfigError('unknown parameter %s' % name)
        values.update(changes)
        return SeirdParams(**values)

    def __repr__(self):
        return 'SeirdParams(%s)' % ', '.join('%s=%r' % kv for kv in self.as_dict().items())


class ParamSchedule(object):
    """
    Piecewise-constant, time-dependent parameters.

    `overrides` maps a day to a dict of field changes that take effect at
    that day and stay in force until a later override replaces them. An
    optional `end` bounds the horizon the schedule is valid for.
    """

    def __init__(self, base, overrides=None, end=None):
        self.base = base
        self.overrides = sorted((overrides or {}).items())
        self.end = end
        self._days = [day for day, _ in self.overrides]
        self._resolved = [base]
        current = base
        for day, changes in self.overrides:
            current = current.replace(**changes)
            self._resolved.append(current)

    @classmethod
    def constant(cls, params):
        return cls(params)

    @classmethod
    def from_steps(cls, params_per_step, h):
        '''Schedule with one parameter set per time step of size h.'''
        if not params_per_step:
            raise ConfigError('empty parameter schedule')
        overrides = {}
        for k, params in enumerate(params_per_step[1:], start=1):
            overrides[k * h] = params.as_dict()
        return cls(params_per_step[0], overrides, end=len(params_per_step) * h)

    def at(self, t):
        # number of overrides whose start day is <= t (small slack for rounding)
        count = int(np.searchsorted(self._days, t + 1e-9, side='right'))
        return self._resolved[count]

    def stacked(self, times):
        '''
        Parameters for a batch of times. Each field becomes an array shaped
        (len(times), 1) or (len(times), n_cells) so it broadcasts against a
        batch of states.
        '''
        times = np.asarray(times, dtype=float).ravel()
        resolved = [self.at(t) for t in times]
        fields = {}
        for name in PARAM_FIELDS:
            values = np.array([np.asarray(getattr(p, name), dtype=float) for p in resolved])
            if values.ndim == 1:
                values = values[:, None]
            fields[name] = values
        return SeirdParams(**fields)

    def validate_horizon(self, t_end):
        if self.end is not None and self.end + 1e-9 < t_end:
            raise InvalidSpec('parameter schedule ends at day %r, simulation runs to day %r' % (self.end, t_end))

    def is_time_dependent(self):
        return bool(self.overrides)


class CompartmentFields(object):
    """The five density fields at one instant (persons/km^2)."""

    def __init__(self, s, e, i, r, d):
        self.s = np.asarray(s, dtype=float)
        self.e = np.asarray(e, dtype=float)
        self.i = np.asarray(i, dtype=float)
        self.r = np.asarray(r, dtype=float)
        self.d = np.asarray(d, dtype=float)
        shapes = set(a.shape for a in self.arrays())
        if len(shapes) != 1:
            raise DimensionMismatch('compartment arrays have different shapes: %s' % sorted(shapes))

    @classmethod
    def zeros(cls, n_cells):
        return cls(*[np.zeros(n_cells) for _ in COMPARTMENTS])

    @classmethod
    def from_vector(cls, y, n_cells):
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != len(COMPARTMENTS) * n_cells:
            raise DimensionMismatch('state vector has length %d, expected %d' % (
                y.shape[-1], len(COMPARTMENTS) * n_cells))
        parts = [y[..., k * n_cells:(k + 1) * n_cells] for k in range(len(COMPARTMENTS))]
        return cls(*parts)

    def to_vector(self):
        return np.concatenate(self.arrays(), axis=-1)

    def arrays(self):
        return [self.s, self.e, self.i, self.r, self.d]

    def get(self, name):
        return getattr(self, name)

    @property
    def n_cells(self):
        return self.s.shape[-1]

    def living_population(self):
        return living_population(self)

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def is_physical(self):
        return self.is_finite() and all(np.all(a >= 0) for a in self.arrays())

    def totals(self):
        return np.array([np.sum(a, axis=-1) for a in self.arrays()])


def living_population(state):
    '''n_p = s + e + i + r, elementwise.'''
    return state.s + state.e + state.i + state.r


def _allee_terms(state, params):
    n_p = living_population(state)
    active = (state.i != 0) | (state.e != 0)
    if np.any(active & (n_p <= 0)):
        raise NonPositivePopulation('living population is <= 0 in a cell with exposed or infectious population')
    safe = np.where(n_p > 0, n_p, 1.0)
    allee_factor = np.where(n_p > 0, 1.0 - params.allee / safe, 0.0)
    # derivative of the Allee factor with respect to n_p
    allee_slope = np.where(n_p > 0, params.allee / (safe * safe), 0.0)
    return n_p, allee_factor, allee_slope


def _check_grid(state, grid):
    expected = 1 if grid is None else grid.n_cells
    if state.n_cells != expected:
        raise DimensionMismatch('state has %d cells, grid has %d' % (state.n_cells, expected))


def seird_rhs(state, params, grid=None):
    '''Time derivatives of every compartment, persons/km^2/day.'''
    _check_grid(state, grid)
    s, e, i, r = state.s, state.e, state.i, state.r
    n_p, allee_factor, _ = _allee_terms(state, params)

    force = params.phi_i * i + params.phi_e * e
    transmission = allee_factor * force * s

    ds = -transmission
    de = transmission - (params.alpha_inc + params.gamma_e) * e
    di = params.alpha_inc * e - (params.gamma_i + params.delta) * i
    dr = params.gamma_e * e + params.gamma_i * i
    dd = params.delta * i

    if grid is not None:
        ds = ds + laplacian_varcoef(s, n_p * params.nu_s, grid)
        de = de + laplacian_varcoef(e, n_p * params.nu_e, grid)
        di = di + laplacian_varcoef(i, n_p * params.nu_i, grid)
        dr = dr + laplacian_varcoef(r, n_p * params.nu_r, grid)

    shape = np.shape(s)
    return CompartmentFields(*[np.broadcast_to(a, shape) for a in (ds, de, di, dr, dd)])


def seird_vjp(state, params, grid, adjoint):
    '''
    Reverse-mode product adjoint^T * d(seird_rhs)/d(state), including the
    state dependence of the Allee factor and of the diffusion coefficients.
    '''
    _check_grid(state, grid)
    s, e, i, r = state.s, state.e, state.i, state.r
    ws, we, wi, wr, wd = adjoint.arrays()
    n_p, allee_factor, allee_slope = _allee_terms(state, params)

    force = params.phi_i * i + params.phi_e * e
    g_trans = we - ws
    # every living compartment enters n_p, hence the Allee factor
    g_np = g_trans * s * force * allee_slope

    gs = g_trans * allee_factor * force
    ge = g_trans * allee_factor * s * params.phi_e \
        - (params.alpha_inc + params.gamma_e) * we + params.alpha_inc * wi + params.gamma_e * wr
    gi = g_trans * allee_factor * s * params.phi_i \
        - (params.gamma_i + params.delta) * wi + params.gamma_i * wr + params.delta * wd
    gr = np.zeros(np.shape(s))

    if grid is not None:
        grads = {'s': gs, 'e': ge, 'i': gi, 'r': gr}
        fields = {'s': s, 'e': e, 'i': i, 'r': r}
        adjoints = {'s': ws, 'e': we, 'i': wi, 'r': wr}
        for name, nu_name in DIFFUSION_FIELDS.items():
            nu = getattr(params, nu_name)
            du, dc = laplacian_varcoef_vjp(fields[name], n_p * nu, adjoints[name], grid)
            grads[name] = grads[name] + du
            g_np = g_np + dc * nu
        gs, ge, gi, gr = grads['s'], grads['e'], grads['i'], grads['r']

    shape = np.shape(s)
    return CompartmentFields(
        np.broadcast_to(gs + g_np, shape),
        np.broadcast_to(ge + g_np, shape),
        np.broadcast_to(gi + g_np, shape),
        np.broadcast_to(gr + g_np, shape),
        np.zeros(shape),
    )


class SeirdRhs(RhsFunction):
    """
    seird_rhs on flattened, compartment-major state vectors, with the
    parameters in force at each evaluation time taken from a schedule.
    """

    def __init__(self, schedule, grid=None):
        if isinstance(schedule, SeirdParams):
            schedule = ParamSchedule.constant(schedule)
        self.schedule = schedule
        self.grid = grid
        self.n_cells = 1 if grid is None else grid.n_cells
        super(SeirdRhs, self).__init__(None, dim=len(COMPARTMENTS) * self.n_cells, name='seird')

    def params_at(self, t):
        if not self.schedule.is_time_dependent():
            return self.schedule.base
        if np.ndim(t) == 0:
            return self.schedule.at(float(t))
        return self.schedule.stacked(t)

    def evaluate(self, t, y):
        state = CompartmentFields.from_vector(y, self.n_cells)
        return seird_rhs(state, self.params_at(t), self.grid).to_vector()

    def vjp(self, t, y, v):
        state = CompartmentFields.from_vector(y, self.n_cells)
        adjoint = CompartmentFields.from_vector(v, self.n_cells)
        return seird_vjp(state, self.params_at(t), self.grid, adjoint).to_vector()

    def check_horizon(self, t_end):
        self.schedule.validate_horizon(t_end)

    def jacobian(self, t, y):
        # row k of J is e_k^T J, one batched vjp against the identity
        y = np.asarray(y, dtype=float)
        eye = np.eye(self.dim)
        batch = np.broadcast_to(y, (self.dim, self.dim))
        return self.vjp(t, batch, eye)
