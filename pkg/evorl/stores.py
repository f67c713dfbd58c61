"""Dict-like access to what runs write to disk.

A suite directory holds the convergence csv of each trial, the suite summary, its
table row and the mask its trials were run with. Checkpoints of a run go to their
own directory, keyed by generation.

>>> import tempfile
>>> rootdir = tempfile.mkdtemp()
>>> checkpoints = checkpoint_store(rootdir)
>>> checkpoints[3] = {'generation': 3}
>>> sorted(artifact_store(rootdir))
['gen_0003.json']
>>> list(checkpoints), checkpoints[3]
([3], {'generation': 3})
"""

import os
import re
import json
import logging
from typing import Iterable

from dol import KvReader, TextFiles, wrap_kvs, filt_iter

from evorl.constants import (
    SUMMARY_FILENAME,
    SUMMARY_SCHEMA_VERSION,
    INCOMPLETE_MARKER,
)
from evorl.util import SchemaError, json_dumps

logger = logging.getLogger(__name__)


def ensure_dir(dirpath: str) -> str:
    dirpath = os.path.abspath(os.path.expanduser(dirpath))
    os.makedirs(dirpath, exist_ok=True)
    return dirpath


def artifact_store(rootdir: str) -> TextFiles:
    """The text files of ``rootdir`` (created if missing), keyed by file name"""
    return TextFiles(ensure_dir(rootdir))


def json_store(rootdir: str):
    """The json files of ``rootdir``, as (canonically written) json objects"""
    files = filt_iter(artifact_store(rootdir), filt=re.compile(r'\.json$').search)
    return wrap_kvs(files, obj_of_data=json.loads, data_of_obj=json_dumps)


# --------------------------------------------------------------------------------------
# Checkpoints

_checkpoint_key_p = re.compile(r'^gen_(\d+)\.json$')


def _generation_of_filename(filename: str) -> int:
    return int(_checkpoint_key_p.match(filename).group(1))


def _filename_of_generation(generation: int) -> str:
    return f'gen_{int(generation):04d}.json'


def checkpoint_store(rootdir: str):
    """Run checkpoints of ``rootdir``, keyed by (int) generation"""
    files = filt_iter(artifact_store(rootdir), filt=_checkpoint_key_p.match)
    return wrap_kvs(
        files,
        key_of_id=_generation_of_filename,
        id_of_key=_filename_of_generation,
        obj_of_data=json.loads,
        data_of_obj=json_dumps,
    )


# --------------------------------------------------------------------------------------
# Suite summaries


def is_incomplete(dirpath: str) -> bool:
    return os.path.exists(os.path.join(dirpath, INCOMPLETE_MARKER))


class SuiteSummaries(KvReader):
    """The suite summaries of some run directories, keyed by directory.

    Only summaries of the current schema version are served: anything else raises a
    ``SchemaError``.
    """

    def __init__(self, dirs: Iterable[str]):
        self.dirs = list(dict.fromkeys(dirs))

    def __iter__(self):
        yield from self.dirs

    def __contains__(self, k):
        return k in self.dirs and os.path.isfile(os.path.join(k, SUMMARY_FILENAME))

    def __len__(self):
        return len(self.dirs)

    def __getitem__(self, k):
        filepath = os.path.join(k, SUMMARY_FILENAME)
        if not os.path.isfile(filepath):
            raise KeyError(f'No {SUMMARY_FILENAME} in {k}')
        with open(filepath) as fp:
            try:
                summary = json.load(fp)
            except ValueError as e:
                raise SchemaError(f'{filepath} is not valid json: {e}')
        version = summary.get('schema_version') if isinstance(summary, dict) else None
        if version != SUMMARY_SCHEMA_VERSION:
            raise SchemaError(
                f'{filepath} has schema version {version!r}, '
                f'expected {SUMMARY_SCHEMA_VERSION}'
            )
        return summary

    def __repr__(self):
        return f'{type(self).__name__}({self.dirs})'
