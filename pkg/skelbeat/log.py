import logging
import os

USER = 'user'

user = {'audience': USER}

LEVEL_ENV = 'SKELBEAT_LOG_LEVEL'


class AudienceFilter(logging.Filter):
    def __init__(self, audience, name=''):
        super().__init__(name)
        self.audience = audience

    def filter(self, record: logging.LogRecord) -> bool:
        audience = getattr(record, 'audience', None)
        return audience == self.audience


def get_user_logger(name):
    return logging.LoggerAdapter(logging.getLogger(name), user)


def level_from_env(default=logging.INFO) -> int:
    """Log level named by SKELBEAT_LOG_LEVEL (e.g. DEBUG, WARNING)."""
    name = os.environ.get(LEVEL_ENV)
    if not name:
        return default
    level = logging.getLevelName(name.strip().upper())
    if not isinstance(level, int):
        raise ValueError(f"Invalid log level '{name}' in {LEVEL_ENV}.")
    return level


def default_logging_setup(level=None):
    """Setup for logging module

    This creates the following:
    * the general logger with name skelbeat as default logger
    * a stream handler for user messages (audience 'user')
    * a stream handler for developer messages, only in DEBUG mode

    Args:
        level: log level, taken from SKELBEAT_LOG_LEVEL if not given

    Returns:
        list of the added handlers
    """
    general_logger = logging.getLogger('skelbeat')
    level = level_from_env() if level is None else level
    handlers = []

    user_handler = logging.StreamHandler()
    user_handler.setFormatter(user_formatter)
    user_handler.addFilter(AudienceFilter(audience=USER))
    handlers.append(user_handler)

    if level <= logging.DEBUG:
        dev_handler = logging.StreamHandler()
        dev_handler.setFormatter(dev_formatter)
        dev_handler.addFilter(AudienceFilter(audience=None))
        handlers.append(dev_handler)

    for handler in handlers:
        general_logger.addHandler(handler)
    general_logger.setLevel(level)
    general_logger.debug("Default logging setup done.")
    return handlers


class CustomFormatter(logging.Formatter):
    """Coloured formatter, one colour per log level."""
    grey = "\x1b[37;20m"
    green = "\x1b[32;20m"
    yellow = "\x1b[33;20m"
    red = "\x1b[31;20m"
    bold_red = "\x1b[31;1m"
    reset = "\x1b[0m"

    def __init__(self, fmt, colored=True):
        super().__init__()
        self._fmt = fmt
        self.colored = colored

    def format(self, record):
        if not self.colored:
            return logging.Formatter(self._fmt).format(record)
        formats = {
            logging.DEBUG: self.grey + self._fmt + self.reset,
            logging.INFO: self.green + self._fmt + self.reset,
            logging.WARNING: self.yellow + self._fmt + self.reset,
            logging.ERROR: self.red + self._fmt + self.reset,
            logging.CRITICAL: self.bold_red + self._fmt + self.reset
        }
        formatter = logging.Formatter(formats.get(record.levelno, self._fmt))
        return formatter.format(record)


user_formatter = CustomFormatter('[USER-%(levelname)s]:'
                                 ' %(message)s')
dev_formatter = CustomFormatter('[DEV-%(levelname)s] -'
                                ' %(asctime)s  %(name)s.%(funcName)s:'
                                ' %(message)s')
file_formatter = CustomFormatter('[%(levelname)s] %(asctime)s %(threadName)s'
                                 ' %(name)s: %(message)s', colored=False)
