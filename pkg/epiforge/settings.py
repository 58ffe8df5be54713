from epiforge.errors import ConfigError
import os
import yaml

BASE_DIR = os.path.dirname(__file__)
CONFIG_FILE = os.environ.get('EPIFORGE_CONFIG', os.path.join(BASE_DIR, '..', 'config.yaml'))

NONE_SENTINEL = object()  # because default may be None


class Config(object):
    '''
    Toolkit settings. A missing config file reads as empty; a file that is
    not a mapping of setting names is a ConfigError.
    '''

    def __init__(self, config_file):
        self.path = config_file
        self._config = {}
        if _bool(os.environ.get('IGNORE_CONFIG_FILE', False)) or not os.path.exists(config_file):
            return
        with open(config_file) as f:
            loaded = yaml.safe_load(f)
        if loaded is None:
            return
        if not isinstance(loaded, dict):
            raise ConfigError('%s must map setting names to values' % config_file)
        self._config = loaded

    def _lookup(self, name, env_name):
        if env_name is not None and os.environ.get(env_name) is not None:
            return os.environ[env_name], env_name
        return self._config.get(name), self.path

    # environment variable first, then the config file, then the default;
    # whatever is found is coerced with kind
    def get(self, name, env_name=None, default=NONE_SENTINEL, kind=str):
        setting, origin = self._lookup(name, env_name)
        if setting is None:
            if default is NONE_SENTINEL:
                raise ConfigError('cannot find a value for setting %s' % name)
            return default
        try:
            return kind(setting)
        except (TypeError, ValueError):
            raise ConfigError('setting %s from %s: cannot read %r as %s' % (name, origin, setting, kind.__name__))


def _bool(value):
    if isinstance(value, (bool, int)):
        return bool(value)
    if isinstance(value, str):
        if value.isnumeric():
            return bool(int(value))
        return value.lower()[:1] in ('t', 'y')  # 'yes', 'True', ...
    raise ValueError('cannot coerce %r to a bool' % (value,))


c = Config(CONFIG_FILE)

# note: this should be kept in sync with 'config.template.yaml' and
# 'config.desk.yaml'
LOG_LEVEL =           c.get('log_level',           'EPIFORGE_LOG_LEVEL',           default='INFO').upper()
SEED =                c.get('seed',                'EPIFORGE_SEED',                default=0,     kind=int)
STEP_DAYS =           c.get('step_days',           'EPIFORGE_STEP_DAYS',           default=0.25,  kind=float)
DRRNN_LAYERS =        c.get('drrnn_layers',        'EPIFORGE_DRRNN_LAYERS',        default=4,     kind=int)
DRRNN_INIT =          c.get('drrnn_init',          'EPIFORGE_DRRNN_INIT',          default='uniform').lower()
HIDDEN_SIZE =         c.get('hidden_size',         'EPIFORGE_HIDDEN_SIZE',         default=16,    kind=int)
PRETRAIN_EPOCHS =     c.get('pretrain_epochs',     'EPIFORGE_PRETRAIN_EPOCHS',     default=2000,  kind=int)
FINETUNE_EPOCHS =     c.get('finetune_epochs',     'EPIFORGE_FINETUNE_EPOCHS',     default=500,   kind=int)
LEARNING_RATE =       c.get('learning_rate',       'EPIFORGE_LEARNING_RATE',       default=1e-3,  kind=float)
OMEGA_U =             c.get('omega_u',             'EPIFORGE_OMEGA_U',             default=1.0,   kind=float)
OMEGA_S =             c.get('omega_s',             'EPIFORGE_OMEGA_S',             default=1.0,   kind=float)
TRAIN_DAYS =          c.get('train_days',          'EPIFORGE_TRAIN_DAYS',          default=106,   kind=int)
TOTAL_DAYS =          c.get('total_days',          'EPIFORGE_TOTAL_DAYS',          default=120,   kind=int)
FORECAST_HORIZON =    c.get('forecast_horizon',    'EPIFORGE_FORECAST_HORIZON',    default=14,    kind=int)
IMPLICIT_MAX_ITER =   c.get('implicit_max_iter',   'EPIFORGE_IMPLICIT_MAX_ITER',   default=100,   kind=int)
IMPLICIT_TOL =        c.get('implicit_tol',        'EPIFORGE_IMPLICIT_TOL',        default=1e-10, kind=float)
GRADCHECK_TOLERANCE = c.get('gradcheck_tolerance', 'EPIFORGE_GRADCHECK_TOLERANCE', default=1e-5,  kind=float)
GRADCHECK_INSTANCES = c.get('gradcheck_instances', 'EPIFORGE_GRADCHECK_INSTANCES', default=20,    kind=int)
HEATMAPS =            c.get('heatmaps',            'EPIFORGE_HEATMAPS',            default=True,  kind=_bool)
