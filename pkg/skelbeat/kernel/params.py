"""Named parameter blocks with flattening, digests and JSON persistence."""
import hashlib
import json
import logging
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterator, Mapping, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

FORMAT_VERSION = '1.0'


class ParamError(Exception):
    """Invalid parameter block or document."""


class ParamVector:
    """Ordered collection of named float64 parameter blocks.

    Args:
        blocks: mapping name -> array, insertion order is kept
    """

    def __init__(self, blocks: Mapping[str, np.ndarray] = None):
        self._blocks: Dict[str, np.ndarray] = OrderedDict()
        for name, value in (blocks or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> np.ndarray:
        if name in self._blocks:
            raise ParamError("duplicate parameter block '%s'" % name)
        array = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(array)):
            raise ParamError("parameter block '%s' is not finite" % name)
        self._blocks[name] = array
        return array

    def __getitem__(self, name: str) -> np.ndarray:
        return self._blocks[name]

    def __setitem__(self, name: str, value):
        if name not in self._blocks:
            raise ParamError("unknown parameter block '%s'" % name)
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._blocks[name].shape:
            raise ParamError("block '%s' has shape %s, got %s" % (
                name, self._blocks[name].shape, value.shape))
        self._blocks[name] = value.copy()

    def __contains__(self, name):
        return name in self._blocks

    def __iter__(self) -> Iterator[str]:
        return iter(self._blocks)

    def __len__(self):
        return len(self._blocks)

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(self._blocks.items())

    @property
    def names(self):
        return list(self._blocks)

    @property
    def size(self) -> int:
        """Total scalar count."""
        return int(sum(block.size for block in self._blocks.values()))

    def flatten(self) -> np.ndarray:
        if not self._blocks:
            return np.zeros(0)
        return np.concatenate([b.ravel() for b in self._blocks.values()])

    def unflatten(self, vector: np.ndarray) -> 'ParamVector':
        """New ParamVector with this layout and the values of vector."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.size,):
            raise ParamError("expected flat vector of %d values, got shape "
                             "%s" % (self.size, vector.shape))
        new = ParamVector()
        offset = 0
        for name, block in self._blocks.items():
            new.add(name, vector[offset:offset + block.size].reshape(
                block.shape))
            offset += block.size
        return new

    def copy(self) -> 'ParamVector':
        return ParamVector(self._blocks)

    def digest(self) -> str:
        """sha256 over block names, shapes and raw little-endian values."""
        sha = hashlib.sha256()
        for name, block in self._blocks.items():
            sha.update(name.encode('utf-8'))
            sha.update(json.dumps(list(block.shape)).encode('utf-8'))
            sha.update(np.ascontiguousarray(block, dtype='<f8').tobytes())
        return sha.hexdigest()

    def to_serializable(self) -> dict:
        return {
            'version': FORMAT_VERSION,
            'blocks': [{'name': name,
                        'shape': list(block.shape),
                        'data': block.ravel().tolist()}
                       for name, block in self._blocks.items()]
        }

    @classmethod
    def from_serializable(cls, data: dict) -> 'ParamVector':
        version = data.get('version')
        if version != FORMAT_VERSION:
            raise ParamError("unsupported parameter format version %r"
                             % version)
        new = cls()
        for entry in data['blocks']:
            shape = tuple(entry['shape'])
            values = np.array(entry['data'], dtype=np.float64)
            if values.size != int(np.prod(shape, dtype=np.int64)):
                raise ParamError("block '%s' holds %d values for shape %s"
                                 % (entry['name'], values.size, shape))
            new.add(entry['name'], values.reshape(shape))
        return new

    def save(self, path: Union[str, Path]):
        with open(path, 'w', encoding='utf-8') as file:
            json.dump(self.to_serializable(), file, allow_nan=False)

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'ParamVector':
        with open(path, 'r', encoding='utf-8') as file:
            return cls.from_serializable(json.load(file))

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.names == other.names and all(
            np.array_equal(self[n], other[n]) for n in self.names)

    def __repr__(self):
        return "<ParamVector %d blocks, %d values>" % (len(self), self.size)
