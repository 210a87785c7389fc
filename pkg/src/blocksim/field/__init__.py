"""Ghost-layered structured fields on forest blocks."""
from .core import Field, FlagField, LAYOUTS, make_field, swap_data, sweep
from .ghost import GhostPackInfo, exchange_ghosts
from .handler import FieldDataHandler, FlagFieldHandler
from .gather import gather_slice
from .vtk import write_block_vtk, write_vtk

__all__ = [
    "Field", "FlagField", "LAYOUTS", "make_field", "swap_data", "sweep",
    "GhostPackInfo", "exchange_ghosts", "FieldDataHandler", "FlagFieldHandler",
    "gather_slice", "write_block_vtk", "write_vtk",
]
