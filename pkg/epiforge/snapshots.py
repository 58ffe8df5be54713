'''
Snapshot matrices, case-series ingestion, synthetic initial conditions and
the file formats they travel in.

A snapshot row is one flattened state, compartment-major: all s cells, then
e, i, r, d. On disk a SnapshotMatrix is a wide CSV with one row per day and
columns day, s_0..s_{n-1}, e_0, ..., d_{n-1}.
'''

from epiforge.constants import COMPARTMENTS, HEATMAP_SCALE_FILE, LIVING_COMPARTMENTS
from epiforge.errors import (
    CadenceMismatch,
    DimensionMismatch,
    InvalidSpec,
    InvalidSplit,
    NegativeCount,
    NonMonotonicDates,
    ParseError,
    ShapeMismatch,
    ZeroPopulation,
)
from epiforge.seird import CompartmentFields
from epiforge.utils import data_from_csv_string, data_to_csv_string, fmt, fmt_row, get_logger, is_multiple, steps_per
import datetime
import os
import numpy as np

logger = get_logger(__name__)

PGM_MAXVAL = 65535


class SnapshotMatrix(object):

    def __init__(self, days, rows, n_cells):
        self.days = np.asarray(days, dtype=float).ravel()
        self.rows = np.atleast_2d(np.asarray(rows, dtype=float))
        self.n_cells = int(n_cells)
        if len(self.rows) == 0:
            self.rows = np.empty((0, len(COMPARTMENTS) * self.n_cells))
        self.validate()

    def validate(self):
        if self.rows.shape[1] != len(COMPARTMENTS) * self.n_cells:
            raise DimensionMismatch('snapshot rows have length %d, expected %d for %d cells' % (
                self.rows.shape[1], len(COMPARTMENTS) * self.n_cells, self.n_cells))
        if len(self.days) != len(self.rows):
            raise DimensionMismatch('%d day indices for %d rows' % (len(self.days), len(self.rows)))
        if np.any(np.diff(self.days) <= 0):
            raise InvalidSpec('snapshot days must be strictly increasing')
        if not np.all(np.isfinite(self.rows)):
            raise InvalidSpec('snapshot matrix contains non-finite entries')

    @property
    def n_days(self):
        return len(self.rows)

    @property
    def dim(self):
        return self.rows.shape[1]

    @property
    def cadence(self):
        if self.n_days < 2:
            return None
        return float(self.days[1] - self.days[0])

    def compartment(self, name):
        '''Columns of one compartment, shape (n_days, n_cells).'''
        k = COMPARTMENTS.index(name)
        return self.rows[:, k * self.n_cells:(k + 1) * self.n_cells]

    def fields(self, index):
        return CompartmentFields.from_vector(self.rows[index], self.n_cells)

    def totals(self):
        '''Per-day population sum over all compartments and cells.'''
        return np.sum(self.rows, axis=1)

    def living_totals(self):
        return sum(np.sum(self.compartment(c), axis=1) for c in LIVING_COMPARTMENTS)

    def index_of_day(self, day):
        matches = np.nonzero(np.abs(self.days - day) < 1e-9)[0]
        if len(matches) == 0:
            raise InvalidSplit('day %r is not in the snapshot matrix' % day)
        return int(matches[0])

    def select(self, indices):
        return SnapshotMatrix(self.days[indices], self.rows[indices], self.n_cells)

    def with_rows(self, rows):
        return SnapshotMatrix(self.days, rows, self.n_cells)

    def __eq__(self, other):
        return (isinstance(other, SnapshotMatrix) and self.n_cells == other.n_cells
                and np.array_equal(self.days, other.days) and np.array_equal(self.rows, other.rows))


class CaseSeries(object):
    """Reported counts per day. Compartments missing from the source are absent, not zero."""

    def __init__(self, dates, counts, region=''):
        self.dates = list(dates)
        self.counts = {name: np.asarray(values, dtype=float) for name, values in counts.items()}
        self.region = region

    @property
    def present(self):
        return tuple(c for c in COMPARTMENTS if c in self.counts)

    @property
    def absent(self):
        return tuple(c for c in COMPARTMENTS if c not in self.counts)

    def days(self):
        start = self.dates[0]
        return np.array([(d - start).days for d in self.dates], dtype=float)

    def __len__(self):
        return len(self.dates)


class Bump(object):
    """Gaussian bump amplitude * exp(-|x - center|^2 / (2 sigma^2)) added to one compartment."""

    def __init__(self, compartment, amplitude, x, y, sigma):
        self.compartment = compartment
        self.amplitude = float(amplitude)
        self.x = float(x)
        self.y = float(y)
        self.sigma = float(sigma)
        if compartment not in COMPARTMENTS:
            raise InvalidSpec('unknown compartment %r in bump' % compartment)
        if not self.amplitude >= 0:
            raise InvalidSpec('bump amplitude must be >= 0, got %r' % amplitude)
        if not self.sigma > 0:
            raise InvalidSpec('bump width must be > 0, got %r' % sigma)

    def evaluate(self, xc, yc):
        dist2 = (xc - self.x) ** 2 + (yc - self.y) ** 2
        return self.amplitude * np.exp(-dist2 / (2 * self.sigma * self.sigma))


def synth_initial_conditions(grid, bumps, background_s=0.0):
    '''Each compartment is the sum of its bumps at cell centers; s also gets a uniform background.'''
    if background_s < 0:
        raise InvalidSpec('background density must be >= 0, got %r' % background_s)
    xc, yc = grid.cell_centers()
    fields = {name: np.zeros(grid.n_cells) for name in COMPARTMENTS}
    fields['s'] += background_s
    for bump in bumps:
        fields[bump.compartment] += bump.evaluate(xc, yc)
    return CompartmentFields(*[fields[name] for name in COMPARTMENTS])


def assemble_snapshots(trajectory, cadence, n_cells=None):
    '''
    Keep every (cadence / h)-th state of a trajectory; the initial state is
    always row 0.
    '''
    h = trajectory.step
    dim = trajectory.states.shape[-1]
    n_cells = dim // len(COMPARTMENTS) if n_cells is None else n_cells
    if h is None:
        return SnapshotMatrix(trajectory.times, trajectory.states, n_cells)
    if not is_multiple(cadence, h):
        raise CadenceMismatch('cadence %r is not a positive multiple of the step %r' % (cadence, h))
    stride = steps_per(cadence, h)
    days = np.round(trajectory.times[::stride], 9)
    return SnapshotMatrix(days, trajectory.states[::stride], n_cells)


def normalize(matrix):
    '''Divide every entry by the day-0 total living population; returns (normalized, scale).'''
    if matrix.n_days == 0:
        raise ZeroPopulation('cannot normalize an empty snapshot matrix')
    scale = float(matrix.living_totals()[0])
    if not scale > 0:
        raise ZeroPopulation('day-0 living population is %r' % scale)
    return matrix.with_rows(matrix.rows / scale), scale


def denormalize(matrix, scale):
    return matrix.with_rows(matrix.rows * scale)


def split_train_forecast(matrix, train_days):
    '''First train_days rows for training, the rest held out.'''
    if train_days < 1 or train_days >= matrix.n_days:
        raise InvalidSplit('cannot split %d rows into %d training rows and a nonempty holdout' % (
            matrix.n_days, train_days))
    return matrix.select(slice(0, train_days)), matrix.select(slice(train_days, None))


def rows_through_day(matrix, day):
    '''Number of leading rows whose day index is <= day.'''
    return int(np.searchsorted(matrix.days, day + 1e-9, side='right'))


def aggregate(matrix):
    '''Per-compartment mean density over the grid, as a one-cell snapshot matrix.'''
    rows = np.stack([np.mean(matrix.compartment(c), axis=1) for c in COMPARTMENTS], axis=1)
    return SnapshotMatrix(matrix.days, rows, 1)


def disaggregate(days, aggregate_rows, reference):
    '''
    Spread per-compartment mean densities over space by rescaling each
    compartment of a reference state (CompartmentFields). A compartment
    whose reference field is identically zero is spread uniformly.
    '''
    aggregate_rows = np.atleast_2d(np.asarray(aggregate_rows, dtype=float))
    n_cells = reference.n_cells
    rows = np.empty((len(aggregate_rows), len(COMPARTMENTS) * n_cells))
    for k, name in enumerate(COMPARTMENTS):
        ref = reference.get(name)
        ref_mean = np.mean(ref)
        if ref_mean > 0:
            shape = ref / ref_mean
        else:
            shape = np.ones(n_cells)
        rows[:, k * n_cells:(k + 1) * n_cells] = aggregate_rows[:, k:k + 1] * shape
    return SnapshotMatrix(days, rows, n_cells)


def case_series_to_snapshots(series, grid, layout, reference=None):
    '''
    Rasterize reported counts: each present compartment takes the spatial
    shape of `layout` (CompartmentFields, e.g. the synthetic initial
    conditions) scaled so the field integrates to the reported count.
    Absent compartments come from `reference` (a SnapshotMatrix on the same
    days) or are zero.
    '''
    days = series.days()
    n_cells = grid.n_cells
    rows = np.zeros((len(days), len(COMPARTMENTS) * n_cells))
    for k, name in enumerate(COMPARTMENTS):
        block = slice(k * n_cells, (k + 1) * n_cells)
        if name in series.counts:
            shape = np.asarray(layout.get(name), dtype=float)
            total = np.sum(shape)
            if total <= 0:
                shape = np.ones(n_cells)
                total = float(n_cells)
            density = shape / (total * grid.cell_area)
            rows[:, block] = series.counts[name][:, None] * density
        elif reference is not None:
            rows[:, block] = reference.rows[[reference.index_of_day(d) for d in days]][:, block]
    return SnapshotMatrix(days, rows, n_cells)


def snapshot_header(n_cells):
    return ['day'] + ['%s_%d' % (name, k) for name in COMPARTMENTS for k in range(n_cells)]


def snapshots_to_csv_string(matrix):
    data = [snapshot_header(matrix.n_cells)]
    data += [[fmt(day)] + fmt_row(row) for day, row in zip(matrix.days, matrix.rows)]
    return data_to_csv_string(data)


def write_snapshots(matrix, path):
    with open(path, 'w') as f:
        f.write(snapshots_to_csv_string(matrix))
    logger.debug('wrote %d snapshots to %s', matrix.n_days, path)


def read_snapshots(path):
    with open(path) as f:
        data = data_from_csv_string(f.read())
    if not data:
        raise ParseError('%s is empty' % path, line=1)
    header = data[0]
    if not header or header[0] != 'day' or (len(header) - 1) % len(COMPARTMENTS) != 0:
        raise ParseError('%s: expected a header day,s_0,...' % path, line=1)
    n_cells = (len(header) - 1) // len(COMPARTMENTS)
    if header != snapshot_header(n_cells):
        raise ParseError('%s: columns must be day, s_0..s_%d, e_0, ..., d_%d' % (path, n_cells - 1, n_cells - 1), line=1)
    days = []
    rows = []
    for lineno, row in enumerate(data[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError('%s: expected %d fields, got %d' % (path, len(header), len(row)), line=lineno)
        try:
            values = [float(v) for v in row]
        except ValueError as err:
            raise ParseError('%s: %s' % (path, err), line=lineno)
        days.append(values[0])
        rows.append(values[1:])
    return SnapshotMatrix(days, np.array(rows).reshape(len(rows), len(header) - 1), n_cells)


def load_case_series(path, region=None):
    '''
    Read a case-series CSV with header date,s,e,i,r,d (any subset of the
    compartment columns) and ISO-8601 dates.
    '''
    with open(path) as f:
        data = data_from_csv_string(f.read())
    data = [row for row in data if row]
    if not data:
        raise ParseError('%s is empty' % path, line=1)
    header = [h.strip().lower() for h in data[0]]
    if not header or header[0] != 'date':
        raise ParseError('%s: first column must be date' % path, line=1)
    columns = header[1:]
    for name in columns:
        if name not in COMPARTMENTS:
            raise ParseError('%s: unknown column %r' % (path, name), line=1)
    if len(set(columns)) != len(columns):
        raise ParseError('%s: duplicate columns' % path, line=1)
    if not columns:
        raise ParseError('%s: no compartment columns' % path, line=1)
    if len(data) < 2:
        raise ParseError('%s has a header but no rows' % path, line=2)
    missing = [c for c in COMPARTMENTS if c not in columns]
    if missing:
        logger.warning('%s has no column for %s; those compartments are marked absent', path, ', '.join(missing))

    dates = []
    counts = {name: [] for name in columns}
    for lineno, row in enumerate(data[1:], start=2):
        if len(row) != len(header):
            raise ParseError('expected %d fields, got %d' % (len(header), len(row)), line=lineno)
        try:
            date = datetime.date.fromisoformat(row[0].strip())
        except ValueError:
            raise ParseError('bad ISO-8601 date %r' % row[0], line=lineno)
        if dates and date <= dates[-1]:
            raise NonMonotonicDates('date %s does not follow %s' % (date, dates[-1]), line=lineno)
        dates.append(date)
        for name, value in zip(columns, row[1:]):
            try:
                count = float(value)
            except ValueError:
                raise ParseError('bad count %r in column %s' % (value, name), line=lineno)
            if not np.isfinite(count):
                raise ParseError('non-finite count in column %s' % name, line=lineno)
            if count < 0:
                raise NegativeCount('negative count %r in column %s' % (count, name), row=lineno)
            counts[name].append(count)
    region = region if region is not None else os.path.splitext(os.path.basename(path))[0]
    return CaseSeries(dates, counts, region=region)


def case_series_to_csv_string(series):
    present = series.present
    data = [['date'] + list(present)]
    for k, date in enumerate(series.dates):
        data.append([date.isoformat()] + [fmt(series.counts[c][k]) for c in present])
    return data_to_csv_string(data)


def write_pgm(path, image, vmax):
    '''Plain (ASCII) 16-bit PGM; pixel = round(value / vmax * 65535), clipped.'''
    image = np.asarray(image, dtype=float)
    if vmax > 0:
        pixels = np.rint(np.clip(image / vmax, 0.0, 1.0) * PGM_MAXVAL).astype(int)
    else:
        pixels = np.zeros(image.shape, dtype=int)
    lines = ['P2', '%d %d' % (image.shape[1], image.shape[0]), str(PGM_MAXVAL)]
    lines += [' '.join(str(p) for p in row) for row in pixels]
    with open(path, 'w') as f:
        f.write('\n'.join(lines) + '\n')


def read_pgm(path):
    '''Returns (pixels, maxval) of a plain PGM written by write_pgm.'''
    with open(path) as f:
        tokens = f.read().split()
    if not tokens or tokens[0] != 'P2':
        raise ParseError('%s is not a plain PGM' % path, line=1)
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pixels = np.array([int(v) for v in tokens[4:4 + width * height]]).reshape(height, width)
    return pixels, maxval


def heatmap_day_label(day):
    '''Zero-padded day for file names; fractional days keep their fraction, 2.25 -> 002.25.'''
    whole = int(np.floor(day + 1e-9))
    fraction = ('%.6f' % (day - whole)).rstrip('0').rstrip('.')
    if float(fraction) == 0.0:
        return '%03d' % whole
    return '%03d%s' % (whole, fraction[1:])


def write_heatmaps(matrix, grid, out_dir, prefix=''):
    '''
    One PGM per compartment per day, named <prefix><c>_<day>.pgm, plus a
    scale.txt sidecar stating each compartment's full-scale value.
    '''
    if grid.n_cells != matrix.n_cells:
        raise ShapeMismatch('snapshots have %d cells, grid has %d' % (matrix.n_cells, grid.n_cells))
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    scales = {}
    for name in COMPARTMENTS:
        block = matrix.compartment(name)
        vmax = float(np.max(block)) if block.size else 0.0
        scales[name] = vmax
        for day, field in zip(matrix.days, block):
            path = os.path.join(out_dir, '%s%s_%s.pgm' % (prefix, name, heatmap_day_label(day)))
            write_pgm(path, grid.to_image(field), vmax)
            paths.append(path)
    scale_path = os.path.join(out_dir, prefix + HEATMAP_SCALE_FILE)
    with open(scale_path, 'w') as f:
        f.write('# value = pixel / %d * max (persons/km^2)\n' % PGM_MAXVAL)
        for name in COMPARTMENTS:
            f.write('%s = %s\n' % (name, fmt(scales[name])))
    paths.append(scale_path)
    logger.debug('wrote %d heatmaps to %s', len(paths) - 1, out_dir)
    return paths
