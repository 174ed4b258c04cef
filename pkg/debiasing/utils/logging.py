"""
logging.py

Manages logging for debiasing.

Lines are written to stderr, stdout being reserved for the command results.
"""
import inspect
import os
import sys
import time
import typing
import warnings


def _flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


DEBUG_MODE = "-d" in sys.argv or "--debug" in sys.argv or _flag("DEBIASING_DEBUG")
"""Whether debug lines are printed"""


class Colors:
    normal = '\033[0m'
    grey = '\033[90m'
    red = '\033[91m'
    yellow = '\033[93m'
    cyan = '\033[96m'

    def __getitem__(self, item) -> str:
        return self.__getattribute__(item)


class LogLevel():
    def __init__(self, level: str, tag: str, color: str = "", debug: bool = False) -> None:
        self.level = str(level)
        self.tag = str(tag)
        self.color = str(color)
        self.debug = bool(debug)

    def render(self, timestamp: int, step: str, message: str, colored: bool = True) -> str:
        """
        Formats a log line

        Parameters
        ----------
        timestamp: int
            The UNIX time of the event
        step: str
            Where the event happened
        message: str
            The message
        colored: bool, default=True
            Whether to add the ANSI color codes
        """
        if not colored:
            return "{}｜[{}] (Debiasing) [{}] {}".format(timestamp, self.tag, step, message)
        body = (self.color + message + Colors.normal) if self.color else message
        return Colors.grey + str(timestamp) + "｜" + Colors.normal + "[{}] (Debiasing) [{}] {}".format(self.tag, step, body)

    def __repr__(self) -> str:
        return "<LogLevel: {level}>".format(level=self.level)


class LogLevels:
    INFO = LogLevel(level="Info", tag="INFO")
    DEBUG = LogLevel(level="Debug", tag="DEBUG", color=Colors.cyan, debug=True)
    WARNING = LogLevel(level="Warning", tag="WARNING", color=Colors.yellow)
    ERROR = LogLevel(level="Error", tag="ERROR", color=Colors.red)

    def __repr__(self) -> str:
        return "<LogLevels Container>"


def caller_name(skip: int = 2) -> str:
    """
    Get the name of a caller in the format module.class.method

    `skip` specifies how many levels of stack to skip while getting the caller
    name. skip=1 means "who calls me", skip=2 "who calls my caller" etc.

    An empty string is returned if skipped levels exceed stack height
    """
    stack = inspect.stack()
    if len(stack) < skip + 1:
        return ''
    frame = stack[skip][0]
    name = []
    module = inspect.getmodule(frame)
    if module:
        name.append(module.__name__)
    if 'self' in frame.f_locals:
        name.append(frame.f_locals['self'].__class__.__name__)
    if frame.f_code.co_name != '<module>':
        name.append(frame.f_code.co_name)
    del frame, stack
    return ".".join(name)


def log(message: str = "Log", level: LogLevel = LogLevels.DEBUG, step: str = None, file: typing.TextIO = None) -> None:
    """
    Log a message to the console.

    Parameters
    ----------
    message : str
        The message to log.
    level : LogLevel
        The level of the message.
    step : str
        The step in the code. Defaults to the name of the caller.
    file : TextIO, default=sys.stderr
        Where to write the line.
    """
    if level.debug and not DEBUG_MODE:
        return
    stream = file if file is not None else sys.stderr
    colored = hasattr(stream, "isatty") and stream.isatty() and not _flag("NO_COLOR")
    line = level.render(int(time.time()), step if step is not None else caller_name(), str(message), colored=colored)
    print(line, file=stream)


def warn(message: str, category: typing.Type[Warning] = UserWarning, step: str = None) -> None:
    """
    Logs a warning and raises it through the `warnings` machinery

    The computation carries on: callers can filter or escalate the warning
    (`pytest.warns`, `warnings.simplefilter("error")`).
    """
    log(message, level=LogLevels.WARNING, step=step if step is not None else caller_name())
    warnings.warn(message, category, stacklevel=3)
