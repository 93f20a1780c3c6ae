"""Plot-data export"""

from .plot_data import PlotDataWriter

__all__ = ["PlotDataWriter"]
