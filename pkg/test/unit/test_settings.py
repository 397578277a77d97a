import unittest

from skelbeat.settings import ConfigError, Setting, Settings


class SamplingSettings(Settings):
    section = 'sampling'

    steps = Setting(default=10, value_type=int, check=lambda v: v >= 0,
                    check_message='must not be negative',
                    description='Number of sampler steps')
    step_size = Setting(default=0.01, value_type=float,
                        description='Step length')
    shape = Setting(default=(2, 3), value_type=tuple)
    seed = Setting(default=None, value_type=int, nullable=True)
    method = Setting(default='sgld',
                     choices={'sgld': 'Langevin dynamics',
                              'hmc': 'Hamiltonian dynamics'})
    warm_start = Setting(default=True,
                         choices={True: 'Persistent chains',
                                  False: 'Fresh chains'})
    name = Setting(default=None, value_type=str, nullable=True)


class TestSettings(unittest.TestCase):

    def test_names(self):
        """descriptors know their attribute names"""
        self.assertEqual(SamplingSettings.steps.name, 'steps')
        self.assertEqual(SamplingSettings.warm_start.name, 'warm_start')

    def test_defaults(self):
        settings = SamplingSettings()
        self.assertEqual(settings.steps, 10)
        self.assertEqual(settings.shape, (2, 3))
        self.assertIsNone(settings.seed)
        self.assertEqual(settings.method, 'sgld')

    def test_instances_independent(self):
        """two instances of one group never share values"""
        first = SamplingSettings(steps=3)
        second = SamplingSettings()
        self.assertEqual(first.steps, 3)
        self.assertEqual(second.steps, 10)

    def test_coercion(self):
        settings = SamplingSettings(step_size=1, shape=[4, 5])
        self.assertIsInstance(settings.step_size, float)
        self.assertEqual(settings.shape, (4, 5))

    def test_strings_are_evaluated(self):
        """command line strings become python literals"""
        settings = SamplingSettings()
        settings.update({'steps': '25', 'shape': '(1, 2)',
                         'warm_start': 'False', 'name': 'chain'})
        self.assertEqual(settings.steps, 25)
        self.assertEqual(settings.shape, (1, 2))
        self.assertIs(settings.warm_start, False)
        self.assertEqual(settings.name, 'chain')

    def test_invalid_values(self):
        """errors name the section and the setting"""
        with self.assertRaises(ConfigError) as context:
            SamplingSettings(steps=-1)
        self.assertIn('[sampling]', str(context.exception))
        self.assertIn('steps', str(context.exception))
        with self.assertRaises(ConfigError):
            SamplingSettings(steps=True)
        with self.assertRaises(ConfigError):
            SamplingSettings(steps=2.5)
        with self.assertRaises(ConfigError):
            SamplingSettings(method='mala')
        with self.assertRaises(ConfigError):
            SamplingSettings(warm_start=1)
        with self.assertRaises(ConfigError):
            SamplingSettings(step_size=None)

    def test_unknown_setting(self):
        with self.assertRaises(ConfigError) as context:
            SamplingSettings(stpes=3)
        self.assertIn('steps', str(context.exception))

    def test_update_from_config(self):
        settings = SamplingSettings()
        self.assertEqual(settings.update_from_config({'other': {}}), 0)
        self.assertEqual(settings.update_from_config(
            {'sampling': {'steps': 7, 'seed': 3}}), 2)
        self.assertEqual(settings.seed, 3)
        with self.assertRaises(ConfigError):
            settings.update_from_config({'sampling': [1, 2]})

    def test_to_dict_and_copy(self):
        settings = SamplingSettings(shape=(7, 8))
        self.assertEqual(settings.to_dict()['shape'], [7, 8])
        copied = settings.copy()
        self.assertEqual(copied, settings)
        self.assertEqual(copied.shape, (7, 8))
        copied.steps = 1
        self.assertNotEqual(copied, settings)


if __name__ == '__main__':
    unittest.main()
