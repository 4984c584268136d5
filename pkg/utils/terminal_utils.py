"""
Terminal utilities for singular-hjb.
"""

import os
import sys
from typing import Iterable, Optional, Sequence

# Try to import colorama for Windows color support
try:
    import colorama
    colorama.init()
    HAS_COLORAMA = True
except ImportError:
    HAS_COLORAMA = False


# ANSI color codes
RESET = "\033[0m"
RED = "\033[31m"
GREEN = "\033[32m"
YELLOW = "\033[33m"
BLUE = "\033[34m"
MAGENTA = "\033[35m"
CYAN = "\033[36m"
BOLD = "\033[1m"

_COLORS = {
    "red": RED,
    "green": GREEN,
    "yellow": YELLOW,
    "blue": BLUE,
    "magenta": MAGENTA,
    "cyan": CYAN,
}

_use_colors_override: Optional[bool] = None


def set_colors_enabled(enabled: Optional[bool]) -> None:
    """Force colours on or off; None restores terminal detection."""
    global _use_colors_override
    _use_colors_override = enabled


def _colors_supported() -> bool:
    if _use_colors_override is not None:
        return _use_colors_override
    if os.name == 'nt':  # Windows
        return HAS_COLORAMA
    return sys.stdout.isatty()


def print_colored(text: str, color: str = None, bold: bool = False) -> None:
    """
    Print colored text if supported by the terminal.

    Args:
        text: Text to print
        color: Color name (red, green, yellow, blue, magenta, cyan)
        bold: Whether to print in bold
    """
    bold_code = BOLD if bold else ""
    if _colors_supported() and color in _COLORS:
        print(f"{bold_code}{_COLORS[color]}{text}{RESET}")
    else:
        print(text)


def print_status(icon: str, message: str, color: str = 'cyan') -> None:
    """
    Print a status message with icon and color.

    Args:
        icon: Icon to display at the beginning of the message
        message: Status message to display
        color: Color to use (default: cyan)
    """
    print_colored(f"{icon} {message}", color, bold=True)


def print_table(headers: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    """
    Print a plain fixed-width table.

    Args:
        headers: Column titles
        rows: Row values, formatted with str()
    """
    text_rows = [[str(value) for value in row] for row in rows]
    widths = [len(h) for h in headers]
    for row in text_rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    print("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    for row in text_rows:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))
