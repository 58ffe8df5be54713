VERSION = '1.0.0'

# State layout
# flattened state vectors are compartment-major: all s cells, then e, i, r, d
COMPARTMENTS = ('s', 'e', 'i', 'r', 'd')
LIVING_COMPARTMENTS = ('s', 'e', 'i', 'r')
COMPARTMENT_NAMES = {
    's': 'Susceptible',
    'e': 'Exposed',
    'i': 'Infectious',
    'r': 'Recovered',
    'd': 'Deceased',
}

# DR-RNN fixed hyperparameters
DRRNN_BETA = 0.9
DRRNN_GAMMA = 0.1
DRRNN_EPS_GUARD = 1e-8

# Adam
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Exit codes
EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

# File names
PARAMS_MAGIC = 'epiforge-params'
PARAMS_FORMAT_VERSION = 1
MANIFEST_FILE = 'run_manifest.json'
SNAPSHOTS_FILE = 'snapshots.csv'
CONSERVATION_FILE = 'conservation.txt'
SCENARIO_ECHO_FILE = 'scenario.txt'
HEATMAP_DIR = 'heatmaps'
HEATMAP_SCALE_FILE = 'scale.txt'
PRETRAINED_FILE = 'pretrained.params'
FINETUNED_FILE = 'finetuned.params'
PRETRAIN_HISTORY_FILE = 'pretrain_history.csv'
FINETUNE_HISTORY_FILE = 'finetune_history.csv'
LOSS_REPORT_FILE = 'loss_report.txt'
FORECAST_FILE = 'forecast.csv'
REPLAY_FILE = 'replay.csv'
TABLE_FILE = 'table.txt'
DAILY_MSE_FILE = 'daily_mse.csv'

HISTORY_HEADER = ['epoch', 'MSE_u', 'MSE_s', 'MSE_L', 'wall_seconds']

# Target error levels per compartment, printed next to measured errors in
# evaluation tables
REFERENCE_MSE = {
    's': 1.54e-3,
    'e': 2.74e-3,
    'i': 1.30e-3,
    'r': 2.54e-3,
    'd': 1.94e-3,
}
REFERENCE_OVERALL_MSE = 2.79e-3
