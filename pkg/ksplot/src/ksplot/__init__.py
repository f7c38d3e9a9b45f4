"""ksplot: renders the chemotaxis lab's CSV diagnostics, sweep tables and
binary field snapshots into figures. A read-only consumer of those formats."""

from .figures import plot_field, plot_phase, plot_timeseries
from .io import FormatError, read_snapshot, read_table

__version__ = "0.1.0"
