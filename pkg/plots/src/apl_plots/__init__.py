"""Figure generation for active-pose-lab experiment outputs.

Consumes only the documented file formats (metrics/sweep/score CSVs and the
episode JSON-lines log); it never imports the experiment code itself.
"""

__version__ = "0.1.0"

from .plotting import PLOT_KINDS, SchemaError, make_plot  # noqa: F401
