'''
Scenario files: everything one simulate / train / forecast run needs, in a
flat `name = value` text format.

    nx = 32
    ny = 32
    dx = 1.0
    days = 120
    phi_i = 0.08
    phi_i@40 = 0.05          # in force from day 40 on
    background_s = 1.0
    bump.i = 0.01, 16, 16, 2 # amplitude, x_km, y_km, sigma_km
    mode = aggregate

Blank lines and everything after a '#' are ignored. Training keys that are
not given fall back to the toolkit settings.
'''

from epiforge.constants import COMPARTMENTS
from epiforge.drrnn import INITS
from epiforge.errors import CadenceMismatch, ConfigError
from epiforge.grid import build_grid
from epiforge.seird import PARAM_FIELDS, ParamSchedule, SeirdParams, SeirdRhs
from epiforge.snapshots import Bump, synth_initial_conditions
from epiforge.training import MODELS, TrainConfig
from epiforge.utils import fmt, get_logger, is_multiple, steps_per
import epiforge.settings as settings
import os

logger = get_logger(__name__)

MODES = ('aggregate', 'grid')

INT_KEYS = ('nx', 'ny', 'days', 'layers', 'hidden', 'pretrain_epochs', 'finetune_epochs', 'train_days', 'seed')
FLOAT_KEYS = ('dx', 'step', 'cadence', 'background_s', 'learning_rate', 'omega_u', 'omega_s', 'noise')
CHOICE_KEYS = {'mode': MODES, 'model': MODELS, 'init': tuple(sorted(INITS))}
REQUIRED_KEYS = ('nx', 'ny', 'dx', 'days')

# training keys and the settings they fall back to
TRAINING_KEYS = {
    'layers': 'DRRNN_LAYERS',
    'init': 'DRRNN_INIT',
    'hidden': 'HIDDEN_SIZE',
    'learning_rate': 'LEARNING_RATE',
    'omega_u': 'OMEGA_U',
    'omega_s': 'OMEGA_S',
    'pretrain_epochs': 'PRETRAIN_EPOCHS',
    'finetune_epochs': 'FINETUNE_EPOCHS',
    'train_days': 'TRAIN_DAYS',
    'seed': 'SEED',
}


class Scenario(object):

    def __init__(self, values, params, overrides, bumps, source='<scenario>'):
        self.source = source
        self.values = dict(values)
        self.params = params
        self.overrides = overrides
        self.bumps = list(bumps)
        self.grid = build_grid(values['nx'], values['ny'], values['dx'])
        self.days = values['days']
        self.step = values.get('step', settings.STEP_DAYS)
        self.cadence = values.get('cadence', 1.0)
        self.background_s = values.get('background_s', 0.0)
        self.mode = values.get('mode', 'aggregate')
        self.model = values.get('model', 'drrnn')
        self.noise = values.get('noise', 0.0)
        self.schedule = ParamSchedule(params, overrides)
        self.validate()

    def validate(self):
        if self.days < 1:
            raise ConfigError('%s: days must be >= 1' % self.source)
        if self.step <= 0:
            raise ConfigError('%s: step must be > 0' % self.source)
        if not is_multiple(self.cadence, self.step):
            raise CadenceMismatch('%s: cadence %r is not a multiple of the step %r' % (
                self.source, self.cadence, self.step))
        if not is_multiple(self.days, self.step):
            raise ConfigError('%s: %r days is not a whole number of steps of %r' % (self.source, self.days, self.step))
        if self.noise < 0:
            raise ConfigError('%s: noise must be >= 0' % self.source)
        self.schedule.validate_horizon(self.days)
        for day in self.overrides:
            if day > self.days:
                logger.warning('%s: parameter override at day %r is after the last day %r', self.source, day, self.days)

    @property
    def n_steps(self):
        return steps_per(self.days, self.step)

    def initial_conditions(self):
        return synth_initial_conditions(self.grid, self.bumps, self.background_s)

    def rhs(self, well_mixed=False):
        return SeirdRhs(self.schedule, None if well_mixed else self.grid)

    def training_value(self, key):
        return self.values.get(key, getattr(settings, TRAINING_KEYS[key]))

    def train_config(self, **overrides):
        kwargs = {key: self.values[key] for key in TRAINING_KEYS if key in self.values}
        kwargs['total_days'] = self.days
        kwargs['step'] = self.step
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return TrainConfig(**kwargs)

    def to_text(self):
        '''The resolved scenario, every setting spelled out, in the input format.'''
        lines = ['# resolved scenario from %s' % self.source]
        lines.append('nx = %d' % self.grid.nx)
        lines.append('ny = %d' % self.grid.ny)
        lines.append('dx = %s' % fmt(self.grid.dx))
        lines.append('days = %d' % self.days)
        lines.append('step = %s' % fmt(self.step))
        lines.append('cadence = %s' % fmt(self.cadence))
        for name in PARAM_FIELDS:
            lines.append('%s = %s' % (name, fmt(getattr(self.params, name))))
        for day in sorted(self.overrides):
            for name in sorted(self.overrides[day]):
                lines.append('%s@%s = %s' % (name, _day_text(day), fmt(self.overrides[day][name])))
        lines.append('background_s = %s' % fmt(self.background_s))
        for bump in self.bumps:
            lines.append('bump.%s = %s, %s, %s, %s' % (
                bump.compartment, fmt(bump.amplitude), fmt(bump.x), fmt(bump.y), fmt(bump.sigma)))
        lines.append('mode = %s' % self.mode)
        lines.append('model = %s' % self.model)
        lines.append('noise = %s' % fmt(self.noise))
        for key in sorted(TRAINING_KEYS):
            value = self.training_value(key)
            lines.append('%s = %s' % (key, value if isinstance(value, (int, str)) else fmt(value)))
        return '\n'.join(lines) + '\n'


def _day_text(day):
    return str(int(day)) if float(day).is_integer() else fmt(day)


def _number(text, kind, path, lineno, name):
    try:
        value = kind(text)
    except ValueError:
        raise ConfigError('%s:%d: %s expects %s, got %r' % (
            path, lineno, name, 'an integer' if kind is int else 'a number', text))
    if kind is float and value != value:
        raise ConfigError('%s:%d: %s is not a number' % (path, lineno, name))
    return value


def parse_scenario(text, path='<scenario>'):
    values = {}
    params = {}
    overrides = {}
    bumps = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError('%s:%d: expected "name = value", got %r' % (path, lineno, raw.strip()))
        key, value = [part.strip() for part in line.split('=', 1)]
        if not key or not value:
            raise ConfigError('%s:%d: empty name or value' % (path, lineno))

        if key.startswith('bump.'):
            compartment = key[len('bump.'):]
            if compartment not in COMPARTMENTS:
                raise ConfigError('%s:%d: unknown compartment %r in %s' % (path, lineno, compartment, key))
            fields = [v.strip() for v in value.split(',')]
            if len(fields) != 4:
                raise ConfigError('%s:%d: %s needs amplitude, x_km, y_km, sigma_km' % (path, lineno, key))
            numbers = [_number(v, float, path, lineno, key) for v in fields]
            if numbers[0] < 0 or numbers[3] <= 0:
                raise ConfigError('%s:%d: bump amplitude must be >= 0 and width > 0' % (path, lineno))
            bumps.append(Bump(compartment, *numbers))
            continue

        if key in seen:
            raise ConfigError('%s:%d: duplicate key %s' % (path, lineno, key))
        seen.add(key)

        name, _, day_text = key.partition('@')
        if name in PARAM_FIELDS:
            number = _number(value, float, path, lineno, key)
            if number < 0 or number == float('inf'):
                raise ConfigError('%s:%d: parameter %s must be finite and >= 0, got %r' % (path, lineno, name, number))
            if day_text:
                day = _number(day_text, float, path, lineno, key)
                if day < 0:
                    raise ConfigError('%s:%d: override day must be >= 0' % (path, lineno))
                overrides.setdefault(day, {})[name] = number
            else:
                params[name] = number
        elif day_text:
            raise ConfigError('%s:%d: only model parameters take @day overrides, not %s' % (path, lineno, name))
        elif key in INT_KEYS:
            values[key] = _number(value, int, path, lineno, key)
        elif key in FLOAT_KEYS:
            values[key] = _number(value, float, path, lineno, key)
        elif key in CHOICE_KEYS:
            if value not in CHOICE_KEYS[key]:
                raise ConfigError('%s:%d: %s must be one of %s, got %r' % (
                    path, lineno, key, ', '.join(CHOICE_KEYS[key]), value))
            values[key] = value
        else:
            raise ConfigError('%s:%d: unknown key %s' % (path, lineno, key))

    missing = [key for key in REQUIRED_KEYS if key not in values]
    if missing:
        raise ConfigError('%s: missing required keys: %s' % (path, ', '.join(missing)))
    return Scenario(values, SeirdParams(**params), overrides, bumps, source=path)


def load_scenario(path):
    if not os.path.isfile(path):
        raise ConfigError('scenario file %s does not exist' % path)
    with open(path) as f:
        return parse_scenario(f.read(), path=path)


def write_scenario_echo(scenario, path):
    with open(path, 'w') as f:
        f.write(scenario.to_text())
