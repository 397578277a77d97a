"""Module for defining typed settings groups.

Every configurable part of skelbeat (dataset generation, training, sampling,
attacks, evaluation) declares its parameters as ``Setting`` class attributes
on a ``Settings`` subclass. The subclass names the section of the JSON
experiment config it reads from.
"""
import ast
import copy
import logging
from typing import Any, Callable, Iterator, Mapping, Union

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Unknown or invalid configuration entry."""


class AutoSettingNameMeta(type):
    """Adds the name to every Setting attribute based on its attribute name.

    Example:
        >>> class SamplingSettings(Settings):
        ...     section = 'sampling'
        ...     steps = Setting(default=10, value_type=int,
        ...                     check=lambda v: v >= 0,
        ...                     description='Number of sampler steps')
        >>> SamplingSettings.steps.name
        'steps'
        >>> SamplingSettings().steps
        10
    """

    def __init__(cls, name, bases, namespace):
        super(AutoSettingNameMeta, cls).__init__(name, bases, namespace)
        for attr_name, obj in namespace.items():
            if isinstance(obj, Setting):
                obj.name = attr_name


class SettingsManager(dict):
    """Holds the current values of the settings of one Settings instance.

    The Setting descriptors live on the class and only carry metadata
    (default, choices, description, checks). Values are stored here, so
    distinct Settings instances never share state. Use describe() to get the
    descriptor of a setting.
    """

    def __init__(self, bound_settings):
        super().__init__()
        self.bound_settings = bound_settings
        for name in self.names:
            self[name] = None

    @property
    def names(self) -> Iterator[str]:
        """Returns a generator object with all settings that the
        bound_settings owns."""
        return (name for name in dir(type(self.bound_settings))
                if isinstance(getattr(type(self.bound_settings), name),
                              Setting))

    def describe(self, name: str) -> 'Setting':
        return getattr(type(self.bound_settings), name)


class Setting:
    """Typed setting of a skelbeat Settings group.

    Args:
        default: default value that will be applied by load_default()
        choices: dict of possible choices for this setting as key and a
            description per choice as value
        description: description of what the setting does
        value_type: expected python type. int is accepted for float, list is
            accepted for tuple, bool is never accepted as a number
        check: predicate on the (coerced) value
        check_message: text shown when check fails
        multiple_choice: value is a list of choices
        nullable: None is a valid value
    """

    def __init__(
            self,
            default=None,
            choices: dict = None,
            description: Union[str, None] = None,
            value_type: type = None,
            check: Callable[[Any], bool] = None,
            check_message: str = '',
            multiple_choice: bool = False,
            nullable: bool = False,
    ):
        self.name = None  # set by AutoSettingNameMeta
        self.default = default
        self.choices = choices
        self.description = description
        self.value_type = value_type
        self.check = check
        self.check_message = check_message
        self.multiple_choice = multiple_choice
        self.nullable = nullable

    @property
    def accepts_string(self) -> bool:
        if self.value_type is str:
            return True
        return bool(self.choices) and any(
            isinstance(choice, str) for choice in self.choices)

    def load_default(self, bound_settings):
        if bound_settings.manager[self.name] is None \
                and self.default is not None:
            self.__set__(bound_settings, copy.deepcopy(self.default))

    def __get__(self, bound_settings, owner):
        """Provides the value of the setting when calling
        settings.<setting_name>"""
        if bound_settings is None:
            return self
        return bound_settings.manager[self.name]

    def __set__(self, bound_settings, value):
        bound_settings.manager[self.name] = self.validate(value)

    def validate(self, value):
        """Return the value to store or raise ValueError."""
        if value is None:
            if self.nullable:
                return None
            raise ValueError(f'Setting {self.name} requires a value.')
        if self.multiple_choice:
            if not isinstance(value, (list, tuple)):
                raise ValueError(f'Setting {self.name} expects a list of '
                                 f'choices, got {value!r}.')
            for val in value:
                if val not in self.choices:
                    raise ValueError(
                        f'{val} is no valid value for setting {self.name}, '
                        f'select from {list(self.choices)}.')
            return list(value)
        if self.choices is not None:
            if isinstance(value, bool) != any(
                    isinstance(c, bool) for c in self.choices) \
                    or value not in self.choices:
                raise ValueError(
                    f'{value} is no valid value for setting {self.name}, '
                    f'select one of {list(self.choices)}.')
            return value
        if self.value_type is not None:
            value = self._coerce(value)
        if self.check is not None and not self.check(value):
            raise ValueError(f'{value!r} is no valid value for setting '
                             f'{self.name}: {self.check_message}')
        return value

    def _coerce(self, value):
        value_type = self.value_type
        if isinstance(value, bool) and value_type is not bool:
            raise ValueError(f'{value!r} is no valid value for setting '
                             f'{self.name}, expected {value_type.__name__}.')
        if value_type is float and isinstance(value, int):
            return float(value)
        if value_type is tuple and isinstance(value, list):
            return tuple(value)
        if not isinstance(value, value_type):
            raise ValueError(f'{value!r} is no valid value for setting '
                             f'{self.name}, expected {value_type.__name__}.')
        return value

    def __repr__(self):
        return "<Setting %s (default=%r)>" % (self.name, self.default)


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, list):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in sorted(value.items())}
    return value


class Settings(metaclass=AutoSettingNameMeta):
    """Group of settings read from one section of the experiment config.

    Args:
        **overrides: setting values applied on top of the defaults
    """
    section: str = None

    def __init__(self, **overrides):
        self.manager = SettingsManager(bound_settings=self)
        self.load_default_settings()
        if overrides:
            self.update(overrides)

    def load_default_settings(self):
        """loads default values for all settings"""
        for name in self.manager.names:
            self.manager.describe(name).load_default(self)

    def update(self, entries: Mapping) -> int:
        """Set several settings at once.

        String values for settings that do not take strings are converted
        with ast.literal_eval, which allows overrides from the command line
        or the environment.

        Raises:
            ConfigError: on unknown settings or invalid values
        """
        n_loaded = 0
        for name, value in entries.items():
            if name not in self.manager:
                raise ConfigError(
                    f"'{name}' is no allowed setting for "
                    f"{self.__class__.__name__} (section "
                    f"'{self.section}'), allowed are "
                    f"{sorted(self.manager)}.")
            setting = self.manager.describe(name)
            if isinstance(value, str) and not setting.accepts_string:
                try:
                    value = ast.literal_eval(value)
                except (ValueError, SyntaxError):
                    pass
            try:
                setattr(self, name, value)
            except ValueError as ex:
                raise ConfigError(f"[{self.section}] {ex}") from ex
            n_loaded += 1
        return n_loaded

    def update_from_config(self, config: Mapping) -> int:
        """Updates the settings from the section of a config document."""
        entries = config.get(self.section)
        if entries is None:
            return 0
        if not isinstance(entries, Mapping):
            raise ConfigError(f"Config section '{self.section}' must be an "
                              f"object, got {type(entries).__name__}.")
        n_loaded = self.update(entries)
        logger.debug('Loaded %d settings of section %s from config.',
                     n_loaded, self.section)
        return n_loaded

    def to_dict(self) -> dict:
        """All settings with their current values, JSON compatible."""
        return {name: _jsonable(self.manager[name])
                for name in sorted(self.manager)}

    def copy(self):
        new = type(self)()
        new.update(self.to_dict())
        return new

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __repr__(self):
        return "<%s %s>" % (self.__class__.__name__, self.to_dict())
