"""
Helpers shared across the pysnow modules: seeded random streams, run
configuration loading/flattening and a few small numeric utilities.
"""

import os
import json
import logging

import numpy as np
import yaml

logger = logging.getLogger(__name__)

THREADS_ENV = 'PYSNOW_THREADS'


class ConfigError(ValueError):
    """Configuration validation failure carrying every problem found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        msg = 'Invalid configuration:\n  ' + '\n  '.join(self.problems)
        super(ConfigError, self).__init__(msg)


def make_rng(seed, *stream):
    """
    Create a counter-based random generator for a (seed, stream...) key.

    Uses numpy's Philox bit generator keyed through a SeedSequence built from
    the seed followed by the stream indices, so the same key replays the
    same draws on every platform and independent keys never share a stream.

    Parameters
    ----------
    seed: int
        Root seed (64-bit).
    stream: int
        Optional stream indices, e.g. (source index, view index).

    Returns
    -------
    numpy.random.Generator
    """
    if seed is None:
        raise ValueError('A seed is required for a reproducible stream.')

    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(s) for s in stream]
    seq = np.random.SeedSequence(entropy)
    return np.random.Generator(np.random.Philox(seq))


def default_threads():
    """Thread count from the environment, defaulting to 1."""
    value = os.environ.get(THREADS_ENV)
    if value is None:
        return 1
    try:
        threads = int(value)
    except ValueError:
        logger.warning('Ignoring non-integer {}={}'.format(THREADS_ENV,
                                                           value))
        return 1
    return max(threads, 1)


def dask_scheduler(deterministic, threads=1):
    """Scheduler keyword arguments for dask.compute."""
    if deterministic or threads <= 1:
        return {'scheduler': 'synchronous'}
    return {'scheduler': 'threads', 'num_workers': threads}


def flatten_config(nested, prefix=''):
    """
    Flatten nested configuration sections into dotted keys.

    Parameters
    ----------
    nested: dict
        Possibly nested mapping, e.g. loaded from YAML.
    prefix: str, optional
        Key prefix used during recursion.

    Returns
    -------
    dict of {str: value}
    """
    flat = {}
    for key, value in nested.items():
        full_key = '{}.{}'.format(prefix, key) if prefix else str(key)
        if isinstance(value, dict):
            flat.update(flatten_config(value, prefix=full_key))
        else:
            flat[full_key] = value
    return flat


def section(flat, name):
    """Return the keys of one dotted section with the prefix stripped."""
    lead = name + '.'
    return {key[len(lead):]: value for key, value in flat.items()
            if key.startswith(lead)}


def load_config(path):
    """
    Load a YAML (or JSON) run configuration into flat dotted keys.
    """
    if not os.path.exists(path):
        logger.error('Configuration file not found: {}'.format(path))
        raise ConfigError('configuration file not found: {}'.format(path))

    with open(path, 'r') as f:
        try:
            loaded = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError('could not parse {}: {}'.format(path, e))

    if loaded is None:
        loaded = {}
    if not isinstance(loaded, dict):
        raise ConfigError('top level of {} must be a mapping'.format(path))

    return flatten_config(loaded)


def merge_overrides(flat, overrides):
    """Flag values override file values; None means 'not given'."""
    merged = dict(flat)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged


def write_config_snapshot(flat, out_dir, fname='run_config.json'):
    """Write the effective configuration so a run can be replayed."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, fname)
    with open(path, 'w') as f:
        json.dump(flat, f, indent=2, sort_keys=True, default=str)
        f.write('\n')
    logger.debug('Wrote configuration snapshot to {}'.format(path))
    return path


def largest_remainder(total, fractions):
    """
    Apportion an integer total by fractions using the largest-remainder rule.

    Ties in the fractional part go to the earlier entry.

    Parameters
    ----------
    total: int
        Number of items to apportion.
    fractions: sequence of float
        Non-negative fractions summing to 1.

    Returns
    -------
    list of int
        Counts summing to total.
    """
    raw = [total * f for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    remaining = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:remaining]:
        counts[i] += 1
    return counts
