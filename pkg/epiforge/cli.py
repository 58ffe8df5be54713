'''
Command-line front end.

    epiforge simulate  --config desk.scenario --out runs/sim
    epiforge train     --config desk.scenario --snapshots runs/sim/snapshots.csv --out runs/train
    epiforge forecast  --params runs/train/finetuned.params --snapshots runs/sim/snapshots.csv \
                       --config desk.scenario --out runs/forecast
    epiforge evaluate  --forecast runs/forecast/forecast.csv --truth runs/sim/snapshots.csv --out runs/eval
    epiforge gradcheck --seed 7

Every command writes run_manifest.json into its output directory, on
success and on failure. Exit codes: 0 success, 1 failed check, 2 usage or
configuration problem, 3 numerical failure.
'''

from epiforge.constants import (
    COMPARTMENT_NAMES,
    COMPARTMENTS,
    CONSERVATION_FILE,
    DAILY_MSE_FILE,
    EXIT_CHECK_FAILED,
    EXIT_OK,
    EXIT_USAGE,
    FINETUNE_HISTORY_FILE,
    FINETUNED_FILE,
    FORECAST_FILE,
    HEATMAP_DIR,
    LOSS_REPORT_FILE,
    MANIFEST_FILE,
    PRETRAIN_HISTORY_FILE,
    PRETRAINED_FILE,
    REFERENCE_MSE,
    REFERENCE_OVERALL_MSE,
    REPLAY_FILE,
    SCENARIO_ECHO_FILE,
    SNAPSHOTS_FILE,
    TABLE_FILE,
    VERSION,
)
from epiforge.drrnn import drrnn_rollout
from epiforge.errors import ConfigError, EpiforgeError, InvalidSpec, ShapeMismatch, TimestampMismatch
from epiforge.integrators import ScaledRhs, simulate
from epiforge.params_io import load_params, save_params
from epiforge.recurrent import sequence_forecast, sequence_outputs
from epiforge.scenario import load_scenario, write_scenario_echo
from epiforge.snapshots import (
    SnapshotMatrix,
    aggregate,
    assemble_snapshots,
    case_series_to_snapshots,
    denormalize,
    disaggregate,
    load_case_series,
    normalize,
    read_snapshots,
    write_heatmaps,
    write_snapshots,
)
from epiforge.training import (
    MODELS,
    DrRnnObjective,
    check_gradients,
    loss_report,
    per_compartment_mse,
    train,
    training_window,
    write_history,
)
from epiforge.utils import data_to_csv_string, fmt, get_logger, set_log_level, steps_per
import epiforge.settings as settings
import datetime
import json
import os
import time
import click
import humanize
import numpy as np

logger = get_logger(__name__)

# state dimension above which grid-mode DR-RNN weights get large
LARGE_STATE_DIM = 1000


class RunManifest(object):
    """What a command was asked to do, what it produced and how it ended."""

    def __init__(self, command, arguments, seed, out_dir):
        self.command = command
        self.arguments = {k: (v if isinstance(v, (int, float, bool)) or v is None else str(v))
                          for k, v in arguments.items()}
        self.seed = seed
        self.out_dir = out_dir
        self.config = None
        self.started = _now()
        self.finished = None
        self.wall_seconds = None
        self.artifacts = []
        self.status = 'running'
        self.failure = None

    @property
    def path(self):
        return os.path.join(self.out_dir, MANIFEST_FILE)

    def add(self, path):
        self.artifacts.append(path)
        return path

    def fail(self, err):
        self.status = 'failed'
        self.failure = '%s: %s' % (type(err).__name__, err)

    def finish(self, wall_seconds):
        self.finished = _now()
        self.wall_seconds = wall_seconds

    def to_dict(self):
        return {
            'command': self.command,
            'arguments': self.arguments,
            'config': self.config,
            'seed': self.seed,
            'started': self.started,
            'finished': self.finished,
            'wall_seconds': self.wall_seconds,
            'artifacts': self.artifacts,
            'version': VERSION,
            'status': self.status,
            'failure': self.failure,
        }

    def write(self):
        os.makedirs(self.out_dir, exist_ok=True)
        with open(self.path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def read_manifest(directory):
    path = os.path.join(directory, MANIFEST_FILE)
    if not os.path.exists(path):
        return None
    with open(path) as f:
        return json.load(f)


def run_command(command, out_dir, arguments, seed, body):
    '''
    Run body(manifest) and exit with its code. Domain errors are logged,
    recorded in the manifest and mapped to their exit code; anything else
    is recorded and re-raised.
    '''
    manifest = RunManifest(command, arguments, seed, out_dir)
    start = time.perf_counter()
    code = EXIT_OK
    try:
        os.makedirs(out_dir, exist_ok=True)
        code = body(manifest) or EXIT_OK
        manifest.status = 'ok' if code == EXIT_OK else 'check-failed'
    except EpiforgeError as err:
        logger.error('%s failed: %s', command, err)
        manifest.fail(err)
        code = err.exit_code
    except OSError as err:
        logger.error('%s failed: %s', command, err)
        manifest.fail(err)
        code = EXIT_USAGE
    except Exception as err:
        manifest.fail(err)
        raise
    finally:
        elapsed = time.perf_counter() - start
        manifest.finish(elapsed)
        manifest.write()
        logger.info('%s finished with status %s in %s', command, manifest.status,
                    humanize.precisedelta(datetime.timedelta(seconds=elapsed)))
    if code != EXIT_OK:
        click.get_current_context().exit(code)


def model_space(matrix, mode, scenario=None):
    '''
    Map physical snapshots into the units the models train in. Returns the
    normalized data, the population scale, and the normalized right-hand
    side (None without a scenario).
    '''
    if mode == 'aggregate':
        data, scale = normalize(aggregate(matrix))
        base = scenario.rhs(well_mixed=True) if scenario is not None else None
    else:
        data, scale = normalize(matrix)
        base = scenario.rhs() if scenario is not None else None
        if data.dim > LARGE_STATE_DIM:
            logger.warning('grid mode with %d state entries: the DR-RNN mixing matrix has %s weights',
                           data.dim, humanize.intcomma(data.dim * data.dim))
    if scenario is not None and mode == 'grid' and matrix.n_cells != scenario.grid.n_cells:
        raise ShapeMismatch('snapshots have %d cells, scenario grid has %d' % (matrix.n_cells, scenario.grid.n_cells))
    f = ScaledRhs(base, scale) if base is not None else None
    return data, scale, f


def to_physical(days, rows, scale, mode, reference):
    '''Inverse of model_space for predicted rows; `reference` is the physical state to spread aggregates over.'''
    if mode == 'aggregate':
        return disaggregate(days, np.asarray(rows, dtype=float) * scale, reference)
    return denormalize(SnapshotMatrix(days, rows, reference.n_cells), scale)


def _add_noise(matrix, level, seed):
    if level <= 0:
        return matrix
    rng = np.random.default_rng(seed)
    noisy = matrix.rows * (1.0 + level * rng.standard_normal(matrix.rows.shape))
    return matrix.with_rows(np.maximum(noisy, 0.0))


@click.group()
@click.option('--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False),
              default=None, help='Override the configured log level.')
@click.version_option(VERSION, prog_name='epiforge')
def cli(log_level):
    '''Physics-informed epidemic forecasting toolkit.'''
    if log_level:
        set_log_level(log_level)


@cli.command(name='simulate')
@click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False),
              help='Scenario file.')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False),
              help='Directory for the snapshots, heatmaps and reports.')
@click.option('--seed', type=int, default=None, help='Recorded in the run manifest.')
def simulate_cmd(config_path, out_dir, seed):
    '''Simulate a scenario with RK4 and write its daily snapshots.'''
    seed = settings.SEED if seed is None else seed

    def body(manifest):
        scenario = load_scenario(config_path)
        manifest.config = scenario.to_text()
        write_scenario_echo(scenario, manifest.add(os.path.join(out_dir, SCENARIO_ECHO_FILE)))
        y0 = scenario.initial_conditions().to_vector()
        logger.info('simulating %d days on %r with step %r', scenario.days, scenario.grid, scenario.step)
        trajectory = simulate(scenario.rhs(), y0, 0.0, scenario.n_steps, h=scenario.step, method='rk4')
        matrix = assemble_snapshots(trajectory, scenario.cadence, scenario.grid.n_cells)
        write_snapshots(matrix, manifest.add(os.path.join(out_dir, SNAPSHOTS_FILE)))
        write_conservation_report(trajectory, scenario.grid.cell_area,
                                  manifest.add(os.path.join(out_dir, CONSERVATION_FILE)))
        if settings.HEATMAPS:
            for path in write_heatmaps(matrix, scenario.grid, os.path.join(out_dir, HEATMAP_DIR)):
                manifest.add(path)
        logger.info('wrote %d snapshots to %s', matrix.n_days, out_dir)

    run_command('simulate', out_dir, {'config': config_path, 'out': out_dir, 'seed': seed}, seed, body)


def write_conservation_report(trajectory, cell_area, path):
    '''Total population (persons) over the run and its largest relative drift.'''
    totals = np.sum(trajectory.states, axis=-1) * cell_area
    initial = totals[0]
    drift = np.abs(totals - initial) / initial if initial > 0 else np.zeros(len(totals))
    worst = int(np.argmax(drift))
    lines = [
        'initial_total = %s' % fmt(initial),
        'final_total = %s' % fmt(totals[-1]),
        'max_relative_drift = %s' % fmt(drift[worst]),
        'day_of_max_drift = %s' % fmt(trajectory.times[worst]),
    ]
    with open(path, 'w') as f:
        f.write('\n'.join(lines) + '\n')
    if drift[worst] > 1e-8:
        logger.warning('population drifted by %.3e (relative) by day %r', drift[worst], trajectory.times[worst])
    return drift[worst]


@cli.command(name='train')
@click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False), help='Scenario file.')
@click.option('--snapshots', 'snapshots_path', default=None, type=click.Path(dir_okay=False),
              help='Observed snapshots (wide CSV).')
@click.option('--cases', 'cases_path', default=None, type=click.Path(dir_okay=False),
              help='Case-series CSV to rasterize as the observed data.')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
@click.option('--seed', type=int, default=None, help='Overrides the scenario seed.')
@click.option('--model', type=click.Choice(MODELS), default=None, help='Overrides the scenario model.')
@click.option('--pretrain-epochs', type=int, default=None)
@click.option('--finetune-epochs', type=int, default=None)
def train_cmd(config_path, snapshots_path, cases_path, out_dir, seed, model, pretrain_epochs, finetune_epochs):
    '''Pretrain on simulated data, then fine-tune on the observed window.'''
    arguments = {'config': config_path, 'snapshots': snapshots_path, 'cases': cases_path, 'out': out_dir,
                 'seed': seed, 'model': model, 'pretrain_epochs': pretrain_epochs,
                 'finetune_epochs': finetune_epochs}

    def body(manifest):
        scenario = load_scenario(config_path)
        manifest.config = scenario.to_text()
        config = scenario.train_config(seed=seed, pretrain_epochs=pretrain_epochs, finetune_epochs=finetune_epochs)
        manifest.seed = config.seed
        kind = model or scenario.model
        observed = load_observed(scenario, snapshots_path, cases_path)
        observed = _add_noise(observed, scenario.noise, config.seed)
        data, scale, f = model_space(observed, scenario.mode, scenario)

        start = time.perf_counter()
        params, history = train(kind, data, f, config)
        wall = time.perf_counter() - start

        meta = {
            'model': kind,
            'mode': scenario.mode,
            'step': fmt(scenario.step),
            'cadence': fmt(scenario.cadence),
            'train_days': str(config.train_days),
            'seed': str(config.seed),
        }
        history.pretrained.meta.update(meta)
        params.meta.update(meta)
        save_params(history.pretrained, manifest.add(os.path.join(out_dir, PRETRAINED_FILE)))
        save_params(params, manifest.add(os.path.join(out_dir, FINETUNED_FILE)))
        write_history(history.pretrain, manifest.add(os.path.join(out_dir, PRETRAIN_HISTORY_FILE)))
        write_history(history.finetune, manifest.add(os.path.join(out_dir, FINETUNE_HISTORY_FILE)))

        report = loss_report(kind, params, training_window(data, config.train_days), f, config, wall)
        with open(manifest.add(os.path.join(out_dir, LOSS_REPORT_FILE)), 'w') as out:
            out.write(report.to_text())
        logger.info('trained %s: MSE_L=%.3e after %d epochs', kind, report.mse_l, config.epochs)

    run_command('train', out_dir, arguments, seed, body)


def load_observed(scenario, snapshots_path, cases_path):
    reference = read_snapshots(snapshots_path) if snapshots_path else None
    if cases_path:
        series = load_case_series(cases_path)
        return case_series_to_snapshots(series, scenario.grid, scenario.initial_conditions(), reference)
    if reference is None:
        raise ConfigError('train needs --snapshots or --cases')
    return reference


@cli.command(name='forecast')
@click.option('--params', 'params_path', required=True, type=click.Path(dir_okay=False))
@click.option('--snapshots', 'snapshots_path', required=True, type=click.Path(dir_okay=False))
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
@click.option('--horizon', type=int, default=None, help='Days to forecast (default 14).')
@click.option('--config', 'config_path', default=None, type=click.Path(dir_okay=False),
              help='Scenario file; required for DR-RNN parameters.')
@click.option('--train-days', type=int, default=None, help='Last observed day (default from the parameter file).')
@click.option('--seed', type=int, default=None, help='Recorded in the run manifest.')
def forecast_cmd(params_path, snapshots_path, out_dir, horizon, config_path, train_days, seed):
    '''Roll a trained model forward from the last training day.'''
    horizon = settings.FORECAST_HORIZON if horizon is None else horizon
    arguments = {'params': params_path, 'snapshots': snapshots_path, 'out': out_dir, 'horizon': horizon,
                 'config': config_path, 'train_days': train_days, 'seed': seed}

    def body(manifest):
        if horizon <= 0:
            raise InvalidSpec('horizon must be a positive number of days, got %d' % horizon)
        params = load_params(params_path)
        scenario = load_scenario(config_path) if config_path else None
        if params.kind == 'drrnn' and scenario is None:
            raise ConfigError('forecasting with DR-RNN parameters needs --config for the model equations')
        if scenario is not None:
            manifest.config = scenario.to_text()
        mode = params.meta.get('mode', 'aggregate')
        last_day = train_days if train_days is not None else int(params.meta.get('train_days', settings.TRAIN_DAYS))

        matrix = read_snapshots(snapshots_path)
        data, scale, f = model_space(matrix, mode, scenario)
        history = training_window(data, last_day)
        observed = matrix.select(slice(0, history.n_days))
        start_day = float(history.days[-1])
        cadence = history.cadence or float(params.meta.get('cadence', 1.0))
        days = start_day + cadence * np.arange(1, horizon + 1)

        if params.kind == 'drrnn':
            h = float(params.meta.get('step', scenario.step))
            substeps = steps_per(cadence, h)
            trajectory = drrnn_rollout(params, f, history.rows[-1], horizon * substeps, h=h, t0=start_day)
            predicted = trajectory.states[substeps::substeps]
            replayed = DrRnnObjective.from_snapshots(f, history, h).predict(params)
        else:
            predicted = sequence_forecast(params, history.rows, horizon)
            replayed = sequence_outputs(params, history.rows[:-1])[0]

        forecast = to_physical(days, predicted, scale, mode, observed.fields(-1))
        replay_rows = [to_physical(history.days[k + 1:k + 2], replayed[k:k + 1], scale, mode, observed.fields(k)).rows[0]
                       for k in range(len(replayed))]
        replay = SnapshotMatrix(history.days[1:], replay_rows, observed.n_cells)

        write_snapshots(forecast, manifest.add(os.path.join(out_dir, FORECAST_FILE)))
        write_snapshots(replay, manifest.add(os.path.join(out_dir, REPLAY_FILE)))
        if settings.HEATMAPS and scenario is not None:
            for path in write_heatmaps(forecast, scenario.grid, os.path.join(out_dir, HEATMAP_DIR)):
                manifest.add(path)
        logger.info('forecast %d days from day %r with %s parameters', horizon, start_day, params.kind)

    run_command('forecast', out_dir, arguments, seed, body)


def _aligned(forecast, truth):
    if forecast.n_cells != truth.n_cells:
        raise ShapeMismatch('forecast has %d cells, truth has %d' % (forecast.n_cells, truth.n_cells))
    try:
        return truth.select([truth.index_of_day(day) for day in forecast.days])
    except EpiforgeError:
        raise TimestampMismatch('forecast days %r..%r are not all in the truth file' % (
            forecast.days[0], forecast.days[-1]))


class Evaluation(object):
    """Errors of a forecast against the truth, in units of the truth's day-0 mean living density."""

    def __init__(self, forecast, truth, scale):
        self.days = forecast.days
        n_cells = forecast.n_cells
        predicted = forecast.rows / scale
        observed = truth.rows / scale
        self.field = per_compartment_mse(predicted, observed, n_cells)
        self.total = per_compartment_mse(aggregate(forecast).rows / scale, aggregate(truth).rows / scale, 1)
        diff = predicted - observed
        self.overall = float(np.mean(diff * diff))
        self.daily = [per_compartment_mse(p, o, n_cells) for p, o in zip(predicted, observed)]
        self.daily_overall = [float(np.mean((p - o) ** 2)) for p, o in zip(predicted, observed)]


def format_table(evaluation, wall_seconds=None, train_mse=None):
    solution = fmt(wall_seconds) if wall_seconds is not None else 'n/a'
    header = '%-13s %-24s %-24s %-11s %s' % ('Compartment', 'MSE (field)', 'MSE (total)', 'Reference', 'Solution time (s)')
    lines = [header, '-' * len(header)]
    for name in COMPARTMENTS:
        lines.append('%-13s %-24s %-24s %-11s %s' % (
            COMPARTMENT_NAMES[name], fmt(evaluation.field[name]), fmt(evaluation.total[name]),
            '%.2e' % REFERENCE_MSE[name], solution))
    lines.append('')
    lines.append('Overall space-time MSE: %s (reference %.2e)' % (fmt(evaluation.overall), REFERENCE_OVERALL_MSE))
    if train_mse is not None:
        lines.append('Training-window MSE:    %s' % fmt(train_mse))
    lines.append('Days evaluated: %s..%s' % (fmt(evaluation.days[0]), fmt(evaluation.days[-1])))
    return '\n'.join(lines) + '\n'


@cli.command(name='evaluate')
@click.option('--forecast', 'forecast_path', required=True, type=click.Path(dir_okay=False))
@click.option('--truth', 'truth_path', required=True, type=click.Path(dir_okay=False))
@click.option('--out', 'out_dir', default='.', type=click.Path(file_okay=False))
@click.option('--seed', type=int, default=None, help='Recorded in the run manifest.')
def evaluate_cmd(forecast_path, truth_path, out_dir, seed):
    '''Per-compartment and space-time errors of a forecast against the truth.'''
    arguments = {'forecast': forecast_path, 'truth': truth_path, 'out': out_dir, 'seed': seed}

    def body(manifest):
        forecast = read_snapshots(forecast_path)
        truth = read_snapshots(truth_path)
        if forecast.n_days == 0:
            raise ShapeMismatch('forecast file has no rows')
        scale = normalize(aggregate(truth))[1]
        evaluation = Evaluation(forecast, _aligned(forecast, truth), scale)

        forecast_dir = os.path.dirname(os.path.abspath(forecast_path))
        train_mse = None
        replay_path = os.path.join(forecast_dir, REPLAY_FILE)
        if os.path.exists(replay_path):
            replay = read_snapshots(replay_path)
            if replay.n_days:
                train_mse = Evaluation(replay, _aligned(replay, truth), scale).overall
                if evaluation.overall < train_mse:
                    logger.warning('forecast-window MSE %.3e is below the training-window MSE %.3e',
                                   evaluation.overall, train_mse)
        forecast_manifest = read_manifest(forecast_dir)
        wall = forecast_manifest.get('wall_seconds') if forecast_manifest else None

        table = format_table(evaluation, wall, train_mse)
        click.echo(table, nl=False)
        with open(manifest.add(os.path.join(out_dir, TABLE_FILE)), 'w') as f:
            f.write(table)
        data = [['day'] + list(COMPARTMENTS) + ['overall']]
        for day, daily, overall in zip(evaluation.days, evaluation.daily, evaluation.daily_overall):
            data.append([fmt(day)] + [fmt(daily[c]) for c in COMPARTMENTS] + [fmt(overall)])
        with open(manifest.add(os.path.join(out_dir, DAILY_MSE_FILE)), 'w') as f:
            f.write(data_to_csv_string(data))

    run_command('evaluate', out_dir, arguments, seed, body)


@cli.command(name='gradcheck')
@click.option('--seed', type=int, default=None)
@click.option('--instances', type=int, default=None, help='Random instances per model (default 20).')
@click.option('--out', 'out_dir', default='.', type=click.Path(file_okay=False))
@click.option('--test-corrupt-gradient', 'corrupt', is_flag=True, hidden=True)
def gradcheck_cmd(seed, instances, out_dir, corrupt):
    '''Check analytic gradients against central finite differences.'''
    seed = settings.SEED if seed is None else seed
    arguments = {'seed': seed, 'instances': instances, 'out': out_dir}

    def body(manifest):
        result = check_gradients(seed=seed, instances=instances, corrupt=corrupt)
        click.echo('max relative error %.3e (%s.%s), tolerance %.1e' % (
            result.max_error, result.worst_model, result.worst_parameter, result.tolerance))
        if not result.passed:
            logger.error('gradient check failed: worst parameter %s.%s with relative error %.3e',
                         result.worst_model, result.worst_parameter, result.max_error)
            manifest.failure = 'gradient check failed on %s.%s' % (result.worst_model, result.worst_parameter)
            return EXIT_CHECK_FAILED
        return EXIT_OK

    run_command('gradcheck', out_dir, arguments, seed, body)


def main():
    cli(prog_name='epiforge')
