"""
Terminal colours for curvewarn console output.
"""

import os
import sys

try:
    from colored import fore, style

    HAS_COLORED = True
except ImportError:
    HAS_COLORED = False


class Theme:
    HEADER: str = ""
    SAFE: str = ""
    INTERMEDIATE: str = ""
    DANGER: str = ""
    WARNING: str = ""
    ERROR: str = ""
    INFO: str = ""
    MUTED: str = ""
    BOLD: str = ""
    RESET: str = ""

    _enabled: bool = False

    @classmethod
    def enable(cls):
        if not HAS_COLORED:
            cls.disable()
            return
        try:
            cls.HEADER = fore("cyan") + style("bold")
            cls.SAFE = fore("green") + style("bold")
            cls.INTERMEDIATE = fore("yellow") + style("bold")
            cls.DANGER = fore("red") + style("bold")
            cls.WARNING = fore("yellow")
            cls.ERROR = fore("red") + style("bold")
            cls.INFO = fore("cyan")
            cls.MUTED = fore("dark_gray")
            cls.BOLD = style("bold")
            cls.RESET = style("reset")
            cls._enabled = True
        except Exception:
            cls.disable()

    @classmethod
    def disable(cls):
        """All styles become empty strings."""
        for name in (
            "HEADER",
            "SAFE",
            "INTERMEDIATE",
            "DANGER",
            "WARNING",
            "ERROR",
            "INFO",
            "MUTED",
            "BOLD",
            "RESET",
        ):
            setattr(cls, name, "")
        cls._enabled = False

    @classmethod
    def is_enabled(cls) -> bool:
        return cls._enabled

    @classmethod
    def level(cls, value) -> str:
        """Style of a risk level, given as a Level or its string value."""
        name = str(getattr(value, "value", value)).upper()
        return getattr(cls, name, "")

    @classmethod
    def paint(cls, text: str, style_name: str) -> str:
        colour = getattr(cls, style_name.upper(), "")
        return f"{colour}{text}{cls.RESET}" if colour else text


# Colour only on a terminal and when NO_COLOR is unset.
if sys.stdout.isatty() and not os.environ.get("NO_COLOR"):
    Theme.enable()
else:
    Theme.disable()
