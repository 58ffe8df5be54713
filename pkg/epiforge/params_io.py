'''
Versioned flat-text parameter files for trained models.

    epiforge-params 1
    kind = drrnn
    beta = 0.9
    meta.step = 0.25
    W = 5: 0.013 -0.07 ...
    U = 5x5: ...

Header lines are `name = value`; `meta.` lines carry free-form run
metadata; array lines give the shape before the colon and the row-major
values after it. Floats are written at full precision so a file reloads to
bitwise identical parameters.
'''

from epiforge.constants import PARAMS_FORMAT_VERSION, PARAMS_MAGIC
from epiforge.drrnn import DrRnnParams
from epiforge.errors import DimensionMismatch, InvalidSpec, ParseError
from epiforge.recurrent import LstmParams, RnnParams
from epiforge.utils import fmt, get_logger
import numpy as np

logger = get_logger(__name__)

KINDS = {
    'drrnn': DrRnnParams,
    'lstm': LstmParams,
    'rnn': RnnParams,
}

# header fields every kind writes, in order
HEADER_FIELDS = {
    'drrnn': ('n', 'K', 'beta', 'gamma', 'eps_guard'),
    'lstm': ('m', 'p', 'q'),
    'rnn': ('m', 'p', 'q'),
}


def _array_line(name, value):
    value = np.asarray(value, dtype=float)
    shape = 'x'.join(str(d) for d in value.shape)
    return '%s = %s: %s' % (name, shape, ' '.join(fmt(v) for v in value.ravel()))


def params_to_string(params):
    lines = ['%s %d' % (PARAMS_MAGIC, PARAMS_FORMAT_VERSION), 'kind = %s' % params.kind]
    header = params.header()
    for name in HEADER_FIELDS[params.kind]:
        value = header[name]
        lines.append('%s = %s' % (name, value if isinstance(value, int) else fmt(value)))
    for key in sorted(params.meta):
        lines.append('meta.%s = %s' % (key, params.meta[key]))
    for name in params.TRAINABLE:
        lines.append(_array_line(name, getattr(params, name)))
    return '\n'.join(lines) + '\n'


def save_params(params, path):
    with open(path, 'w') as f:
        f.write(params_to_string(params))
    logger.debug('saved %s parameters to %s', params.kind, path)


def _parse_array(text, lineno):
    if ':' not in text:
        raise ParseError('array value needs "shape: values"', line=lineno)
    shape_text, values_text = text.split(':', 1)
    try:
        shape = tuple(int(d) for d in shape_text.strip().split('x'))
        values = [float(v) for v in values_text.split()]
    except ValueError:
        raise ParseError('malformed array %r' % text[:40], line=lineno)
    expected = int(np.prod(shape))
    if len(values) != expected:
        raise ParseError('array of shape %s needs %d values, got %d' % (shape, expected, len(values)), line=lineno)
    return np.array(values, dtype=float).reshape(shape)


def params_from_string(text, source='<string>'):
    lines = text.splitlines()
    if not lines or not lines[0].startswith(PARAMS_MAGIC):
        raise ParseError('%s is not an epiforge parameter file' % source, line=1)
    try:
        version = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise ParseError('%s: missing format version' % source, line=1)
    if version > PARAMS_FORMAT_VERSION:
        raise ParseError('%s: format version %d is newer than supported version %d' % (
            source, version, PARAMS_FORMAT_VERSION), line=1)

    entries = {}
    meta = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.lstrip().startswith('#'):
            continue
        if ' = ' not in line:
            raise ParseError('%s: expected "name = value"' % source, line=lineno)
        name, value = line.split(' = ', 1)
        name = name.strip()
        if name.startswith('meta.'):
            meta[name[len('meta.'):]] = value.strip()
        elif name in entries:
            raise ParseError('%s: duplicate entry %s' % (source, name), line=lineno)
        else:
            entries[name] = (value, lineno)

    if 'kind' not in entries:
        raise ParseError('%s: missing kind' % source, line=2)
    kind = entries['kind'][0].strip()
    if kind not in KINDS:
        raise ParseError('%s: unknown kind %r' % (source, kind), line=entries['kind'][1])
    cls = KINDS[kind]
    arrays = {}
    for name in cls.TRAINABLE:
        if name not in entries:
            raise ParseError('%s: missing array %s' % (source, name), line=len(lines))
        value, lineno = entries[name]
        arrays[name] = _parse_array(value, lineno)

    try:
        if kind == 'drrnn':
            extra = {}
            for name in ('beta', 'gamma', 'eps_guard'):
                if name in entries:
                    extra[name] = float(entries[name][0])
            params = DrRnnParams(arrays['W'], arrays['U'], arrays['eta'], meta=meta, **extra)
        else:
            params = cls(*[arrays[name] for name in cls.TRAINABLE], meta=meta)
    except ValueError as err:
        raise ParseError('%s: %s' % (source, err))
    except (DimensionMismatch, InvalidSpec) as err:
        raise ParseError('%s: inconsistent parameters: %s' % (source, err))

    header = params.header()
    for name in HEADER_FIELDS[kind]:
        if name in entries and name in ('n', 'K', 'm', 'p', 'q'):
            value, lineno = entries[name]
            if value.strip() != str(header[name]):
                raise ParseError('%s: header says %s = %s, arrays imply %d' % (
                    source, name, value.strip(), header[name]), line=lineno)
    return params


def load_params(path):
    with open(path) as f:
        return params_from_string(f.read(), source=path)
