import hashlib
import json
from pathlib import Path
from typing import Union

import numpy as np


def all_subclasses(cls, include_self: bool = False):
    """Returns all subclasses of a class recursively."""
    all_cls = set()
    for subclass in cls.__subclasses__():
        all_cls.add(subclass)
        all_cls.update(all_subclasses(subclass))
    if include_self:
        all_cls.add(cls)
    return all_cls


def canonical_json(data) -> str:
    """JSON text with sorted keys and no insignificant whitespace."""
    return json.dumps(data, sort_keys=True, separators=(',', ':'),
                      allow_nan=False)


def stable_digest(data) -> str:
    """sha256 hex digest of the canonical JSON form of data."""
    return hashlib.sha256(canonical_json(data).encode('utf-8')).hexdigest()


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent random stream for (seed, keys).

    Streams for different keys do not overlap, so per-head or per-sample work
    can run in any order or on any thread with identical results.
    """
    return np.random.default_rng(
        np.random.SeedSequence([int(seed)] + [int(k) for k in keys]))


def write_json(data, path: Union[str, Path]):
    """Write data as indented JSON with sorted keys and trailing newline."""
    with open(path, 'w', encoding='utf-8') as file:
        json.dump(data, file, indent=2, sort_keys=True, allow_nan=False)
        file.write('\n')
