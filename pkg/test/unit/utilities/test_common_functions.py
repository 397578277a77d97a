"""Test for common_functions.py"""
import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

import skelbeat.utilities.common_functions as cf


class Base:
    pass


class Child(Base):
    pass


class GrandChild(Child):
    pass


class TestCommonFunctions(unittest.TestCase):
    """General common functions related tests"""

    def test_all_subclasses(self):
        self.assertEqual(cf.all_subclasses(Base), {Child, GrandChild})
        self.assertEqual(cf.all_subclasses(Base, include_self=True),
                         {Base, Child, GrandChild})

    def test_canonical_json(self):
        """key order and whitespace do not matter"""
        self.assertEqual(cf.canonical_json({'b': [1, 2], 'a': 0.5}),
                         '{"a":0.5,"b":[1,2]}')
        self.assertEqual(cf.stable_digest({'b': 1, 'a': 2}),
                         cf.stable_digest({'a': 2, 'b': 1}))
        self.assertNotEqual(cf.stable_digest({'a': 1}),
                            cf.stable_digest({'a': 2}))
        with self.assertRaises(ValueError):
            cf.canonical_json({'a': float('nan')})

    def test_derive_rng(self):
        """equal keys replay a stream, different keys give another"""
        first = cf.derive_rng(7, 3, 1).random(5)
        np.testing.assert_array_equal(first, cf.derive_rng(7, 3, 1).random(5))
        self.assertFalse(np.array_equal(first,
                                        cf.derive_rng(7, 3, 2).random(5)))
        self.assertFalse(np.array_equal(first,
                                        cf.derive_rng(8, 3, 1).random(5)))
        cf.derive_rng(2 ** 64 - 1)

    def test_json_files(self):
        with tempfile.TemporaryDirectory(prefix='skelbeat_') as directory:
            path = Path(directory) / 'data.json'
            cf.write_json({'b': 1, 'a': [1, 2]}, path)
            text = path.read_text(encoding='utf-8')
            self.assertTrue(text.endswith('}\n'))
            self.assertLess(text.index('"a"'), text.index('"b"'))
            self.assertEqual(json.loads(text), {'a': [1, 2], 'b': 1})


if __name__ == '__main__':
    unittest.main()
