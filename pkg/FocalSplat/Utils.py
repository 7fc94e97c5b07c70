######################################################################
#  miscellaneous utility functions

import logging
import sys
import traceback

import numpy as np

LOGGER_NAME = 'FocalSplat'

# zLOG-style severities, mapped onto the logging package
TRACE_LEVEL = 5
BLATHER_LEVEL = 15
logging.addLevelName(TRACE_LEVEL, 'TRACE')
logging.addLevelName(BLATHER_LEVEL, 'BLATHER')

logger = logging.getLogger(LOGGER_NAME)


#logging
def LOG(severity, *args): logger.log(severity, ' '.join(map(str, args)))
def TRACE(*args):   LOG(TRACE_LEVEL,     *args)
def DEBUG(*args):   LOG(logging.DEBUG,   *args)
def BLATHER(*args): LOG(BLATHER_LEVEL,   *args)
def INFO(*args):    LOG(logging.INFO,    *args)
def WARNING(*args): LOG(logging.WARNING, *args)
def ERROR(*args):   LOG(logging.ERROR,   *args)


def setupLogging(verbosity=0, stream=None):
    """
    Configure the FocalSplat logger for command-line use.

    verbosity 0 logs INFO and up, 1 adds BLATHER, 2 or more adds DEBUG;
    a negative verbosity (quiet) leaves only warnings and errors.
    """
    if verbosity < 0:   level = logging.WARNING
    elif verbosity == 0: level = logging.INFO
    elif verbosity == 1: level = BLATHER_LEVEL
    else:               level = logging.DEBUG
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(logging.Formatter('%(levelname)s %(message)s'))
    for h in list(logger.handlers):
        logger.removeHandler(h)
    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False
    return logger


def formattedTraceback():
    type, val, tb = sys.exc_info()
    try:     return ''.join(traceback.format_exception(type, val, tb))
    finally: del tb  # clean up circular reference


def luminance(data):
    """
    Reduce an H x W x C sample array to H x W luminance (Rec. 601 weights).
    Single-channel input is returned as a 2-D view.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2: return data
    if data.shape[2] == 1: return data[:, :, 0]
    return data[:, :, 0]*0.299 + data[:, :, 1]*0.587 + data[:, :, 2]*0.114


def isStrictlyIncreasing(values):
    values = list(values)
    return all(a < b for a, b in zip(values, values[1:]))


def sizeString(shape):
    """Give a W x H description of an array shape, for error messages."""
    return '%dx%d' % (shape[1], shape[0])
