"""Utils for evorl: errors, seeded random streams, and configuration lookup."""

import os
import json
import logging
from functools import lru_cache
from importlib.resources import files
from typing import Optional, Mapping, Union, Iterable
from warnings import warn

import numpy as np
from config2py import get_config, simple_config_getter

from evorl.constants import (
    APP_NAME,
    STREAM_PURPOSES,
    MASTER_SEED_ENVIRON_NAME,
)

logger = logging.getLogger(__name__)

# --------------------------------------------------------------------------------------
# Errors


class EvoRLError(Exception):
    """Base of all errors raised by evorl"""


class InvalidArgument(EvoRLError, ValueError):
    """Raised when an argument violates the preconditions of an operation"""


class ConfigError(InvalidArgument):
    """Raised when a run configuration is invalid (nothing has been computed yet)"""


class ProtocolViolation(EvoRLError, RuntimeError):
    """Raised when an object is used out of its life cycle (e.g. stepping a done env)"""


class NumericFault(EvoRLError, ArithmeticError):
    """Raised when a computation produced non-finite numbers"""


class SchemaError(EvoRLError, ValueError):
    """Raised when a stored artifact doesn't have the expected schema"""


class BudgetExhausted(EvoRLError):
    """Raised when an operation would consume more than the remaining budget"""


# --------------------------------------------------------------------------------------
# Seeded random streams
#
# Every random stream is keyed by (master_seed, *keys), so that a worker computing
# agent 7 of generation 12 gets the same numbers whatever the scheduling order.

StreamKey = Union[int, str]


def _stream_key_ints(keys: Iterable[StreamKey]):
    for k in keys:
        if isinstance(k, str):
            try:
                yield STREAM_PURPOSES[k]
            except KeyError:
                raise InvalidArgument(f'Unknown stream purpose: {k!r}')
        elif int(k) < 0:
            raise InvalidArgument(f'Stream keys must be non-negative: {k}')
        else:
            yield int(k)


def seed_sequence(master_seed: int, *keys: StreamKey) -> np.random.SeedSequence:
    """The seed sequence of the stream keyed by ``keys`` under ``master_seed``.

    >>> a = seed_sequence(42, 3, 'eval').generate_state(2)
    >>> b = seed_sequence(42, 3, 'eval').generate_state(2)
    >>> bool((a == b).all())
    True
    """
    if int(master_seed) < 0:
        raise InvalidArgument(f'master_seed must be non-negative: {master_seed}')
    return np.random.SeedSequence(
        int(master_seed), spawn_key=tuple(_stream_key_ints(keys))
    )


def derive_rng(master_seed: int, *keys: StreamKey) -> np.random.Generator:
    """A counter-based (Philox) generator for the stream keyed by ``keys``.

    >>> x = derive_rng(1, 0, 5, 'infancy').random()
    >>> y = derive_rng(1, 0, 5, 'infancy').random()
    >>> x == y
    True
    >>> x == derive_rng(1, 0, 6, 'infancy').random()
    False
    """
    return np.random.Generator(np.random.Philox(seed_sequence(master_seed, *keys)))


def derive_seed(master_seed: int, *keys: StreamKey) -> int:
    """A 63-bit integer seed for the stream keyed by ``keys``.

    >>> derive_seed(3, 'trial', 0) == derive_seed(3, 'trial', 0)
    True
    >>> 0 <= derive_seed(3, 'mask') < 2 ** 63
    True
    """
    state = seed_sequence(master_seed, *keys).generate_state(1, dtype=np.uint64)
    return int(state[0]) >> 1


# --------------------------------------------------------------------------------------
# Configuration

data_files = files('evorl.data')
USER_PRESETS_FILE = 'presets.json'


def dflt_presets() -> dict:
    return json.loads(data_files.joinpath('presets.json').read_text())


def user_configs() -> Mapping:
    """The (config2py) store of the user's evorl configuration files"""
    return simple_config_getter(APP_NAME).configs


def user_presets(configs: Optional[Mapping] = None) -> dict:
    """The presets a user defined in the ``presets.json`` of their config folder.

    A missing or malformed file is not an error: it is warned about and ignored.
    """
    try:
        if configs is None:
            configs = user_configs()
        if USER_PRESETS_FILE not in configs:
            return {}
        presets = json.loads(configs[USER_PRESETS_FILE])
        if not isinstance(presets, dict):
            raise ValueError(f'{USER_PRESETS_FILE} should contain a json object')
        return presets
    except Exception as e:
        warn(f'Error loading user {USER_PRESETS_FILE}: {e}', UserWarning)
        return {}


@lru_cache(maxsize=1)
def _all_presets() -> dict:
    presets = dflt_presets()
    presets.update(user_presets())
    return presets


def get_preset(name: str) -> dict:
    """Get a named preset (user presets take precedence over shipped ones).

    >>> sorted(get_preset('desk'))  # doctest: +SKIP
    ['generations', 'trials']
    """
    presets = _all_presets()
    if name not in presets:
        raise ConfigError(f'Unknown preset: {name!r}. Known: {sorted(presets)}')
    return dict(presets[name])


def master_seed_override(environ: Mapping = os.environ) -> Optional[int]:
    """The master seed given by the ``EVORL_SEED`` environment variable, if any.

    >>> master_seed_override({'EVORL_SEED': '12'})
    12
    >>> master_seed_override({}) is None
    True
    """
    seed = get_config(MASTER_SEED_ENVIRON_NAME, sources=[environ], default=None)
    if seed is None:
        return None
    try:
        return int(seed)
    except ValueError:
        raise ConfigError(f'{MASTER_SEED_ENVIRON_NAME} must be an integer: {seed!r}')


# --------------------------------------------------------------------------------------
# Serialization helpers


def json_dumps(obj) -> str:
    """Canonical json: sorted keys, fixed indentation, trailing newline.

    >>> json_dumps({'b': 1, 'a': [0.5, None]})
    '{\\n  "a": [\\n    0.5,\\n    null\\n  ],\\n  "b": 1\\n}\\n'
    """
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + '\n'
