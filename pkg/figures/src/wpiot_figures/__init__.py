"""Report figures for the wpiot scheduling experiments."""

from .render import FigureSpec, SchemaError, collect_curves, figure_geometry_hash, render

__version__ = "0.1.0"

__all__ = [
    "FigureSpec",
    "SchemaError",
    "collect_curves",
    "figure_geometry_hash",
    "render",
    "__version__",
]
