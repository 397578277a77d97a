import subprocess
import sys
import unittest


class TestUsage(unittest.TestCase):
    """Tests for general use of library"""

    def test_import_mainlib(self):
        """Test importing skelbeat in python script"""
        try:
            import skelbeat
        except ImportError as err:
            self.fail("Unable to import skelbeat\nreason: %s" % err)
        self.assertTrue(skelbeat.VERSION)

    def test_call_console(self):
        """Test calling skelbeat --version from console"""
        import skelbeat
        ret = subprocess.run([sys.executable, '-m', 'skelbeat', '--version'],
                             stdout=subprocess.PIPE, stderr=subprocess.PIPE)
        self.assertEqual(ret.returncode, 0, ret.stderr.decode('utf-8'))
        self.assertIn(skelbeat.VERSION, ret.stdout.decode('utf-8'),
                      'unexpected output')


if __name__ == '__main__':
    unittest.main()
