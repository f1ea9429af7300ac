"""Static figures over adatrotter CSV artifacts."""

__version__ = "0.1.0"

from .figures import FigureSpec, load_csv, render  # noqa: F401
