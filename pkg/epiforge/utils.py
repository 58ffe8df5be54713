import epiforge.settings as settings
import csv
import io
import logging

import numpy as np

LOG_FORMAT = '[%(levelname)s] %(name)s: %(message)s'

def get_logger(name):
    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, settings.LOG_LEVEL, logging.INFO))
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
        logger.propagate = False
    return logger

def set_log_level(level):
    '''
    Change the level of every epiforge logger created so far, and of the
    ones created later.
    '''
    settings.LOG_LEVEL = level.upper()
    numeric = getattr(logging, settings.LOG_LEVEL, logging.INFO)
    for name, logger in logging.Logger.manager.loggerDict.items():
        if name.startswith('epiforge') and isinstance(logger, logging.Logger):
            logger.setLevel(numeric)

def data_to_csv_string(data):
    output = io.StringIO()
    writer = csv.writer(output, lineterminator='\n')
    writer.writerows(data)
    return output.getvalue()

def data_from_csv_string(string):
    data_input = io.StringIO(string)
    reader = csv.reader(data_input)
    return list(reader)

def fmt(value):
    # shortest representation that round-trips exactly
    return repr(float(value))

def fmt_row(values):
    return [fmt(v) for v in values]

def relative_error(analytic, numeric, floor=1e-12):
    '''
    Block-relative deviation between two arrays: the largest absolute
    difference divided by the largest magnitude in either array.
    '''
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    if analytic.size == 0:
        return 0.0
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric)) / scale)

def is_multiple(value, step, tol=1e-9):
    ratio = value / step
    return ratio > 0 and abs(ratio - round(ratio)) <= tol * max(1.0, abs(ratio))

def steps_per(value, step):
    return int(round(value / step))
