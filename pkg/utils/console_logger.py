import os
import sys
import threading
from datetime import datetime
from enum import Enum

from tqdm import tqdm


class LogLevel(Enum):
    DEBUG = 0
    INFO = 1
    SUCCESS = 2
    WARNING = 3
    ERROR = 4


_COLORS = {
    LogLevel.DEBUG: "\033[94m",  # Blue
    LogLevel.INFO: "\033[0m",
    LogLevel.SUCCESS: "\033[92m",  # Green
    LogLevel.WARNING: "\033[93m",  # Yellow
    LogLevel.ERROR: "\033[91m",  # Red
}
_RESET = "\033[0m"


class ConsoleLogger:
    """Thread-safe console logger that keeps tqdm progress bars intact"""

    def __init__(self, min_level=LogLevel.INFO):
        self.lock = threading.RLock()
        self.min_level = min_level
        self.log_file = None
        self.use_color = sys.stdout.isatty()

    def set_level(self, level):
        if isinstance(level, str):
            level = LogLevel[level.upper()]
        self.min_level = level

    def set_log_file(self, file_path):
        """Mirror every console line to a plain text file."""
        with self.lock:
            if self.log_file:
                self.log_file.close()
            log_dir = os.path.dirname(file_path)
            if log_dir:
                os.makedirs(log_dir, exist_ok=True)
            self.log_file = open(file_path, "a", encoding="utf-8")

    def close_log_file(self):
        with self.lock:
            if self.log_file:
                self.log_file.close()
                self.log_file = None

    def _emit(self, line, color=None):
        # tqdm.write clears and redraws any active bars around the line
        if color and self.use_color:
            tqdm.write(f"{color}{line}{_RESET}", file=sys.stdout)
        else:
            tqdm.write(line, file=sys.stdout)
        if self.log_file:
            self.log_file.write(line + "\n")
            self.log_file.flush()

    def log(self, message, level=LogLevel.INFO, emoji=None):
        if level.value < self.min_level.value:
            return

        with self.lock:
            prefix = f"[{datetime.now().strftime('%H:%M:%S')}]"
            if emoji:
                prefix += f" {emoji}"
            self._emit(f"{prefix} {message}", _COLORS[level])

    def debug(self, message, emoji="🔍"):
        self.log(message, LogLevel.DEBUG, emoji)

    def info(self, message, emoji="ℹ️"):
        self.log(message, LogLevel.INFO, emoji)

    def success(self, message, emoji="✅"):
        self.log(message, LogLevel.SUCCESS, emoji)

    def warning(self, message, emoji="⚠️"):
        self.log(message, LogLevel.WARNING, emoji)

    def error(self, message, emoji="❌"):
        self.log(message, LogLevel.ERROR, emoji)

    def section(self, title, emoji="📋"):
        with self.lock:
            rule = "=" * 60
            self._emit("")
            self._emit(rule)
            self._emit(f"{emoji} {title}")
            self._emit(rule)


# Global logger instance
logger = ConsoleLogger()


class LoggingTqdm(tqdm):
    """tqdm bar that shares the logger lock and stays quiet below INFO"""

    def __init__(self, *args, **kwargs):
        kwargs.setdefault("file", sys.stdout)
        kwargs.setdefault("dynamic_ncols", True)
        kwargs.setdefault("disable", logger.min_level.value > LogLevel.INFO.value)
        super().__init__(*args, **kwargs)

    def display(self, msg=None, pos=None):
        with logger.lock:
            return super().display(msg, pos)


def progress_bar(iterable=None, total=None, desc="Processing", unit="it", initial=0):
    """Progress bar that cooperates with the console logger."""
    return LoggingTqdm(iterable, total=total, desc=desc, unit=unit, initial=initial, leave=False)


# Export convenience functions
def debug(message, emoji="🔍"):
    logger.debug(message, emoji)


def info(message, emoji="ℹ️"):
    logger.info(message, emoji)


def success(message, emoji="✅"):
    logger.success(message, emoji)


def warning(message, emoji="⚠️"):
    logger.warning(message, emoji)


def error(message, emoji="❌"):
    logger.error(message, emoji)


def section(title, emoji="📋"):
    logger.section(title, emoji)
