"""
    The interfaces used by the package. `DipoleResponseProtocol`
    describes how a levitated superconductor answers the local trap field;
    implement it to swap the field-response model used by the flux
    geometry. `TuningModelProtocol` describes a flux-tunable resonator
    frequency model and its responsivity. `CursorProtocol` and
    `ArchiveContextProtocol` describe the storage binding of the report
    archive and must be implemented to bind it to another SQL driver.
"""


from __future__ import annotations
from types import TracebackType
from typing import Any, Optional, Protocol, Type, runtime_checkable
import numpy as np


@runtime_checkable
class DipoleResponseProtocol(Protocol):
    """Interface showing how a sphere field-response model should behave."""
    def moment(self, r0: np.ndarray, b: np.ndarray, rp: float) -> np.ndarray:
        """Return the induced dipole moment (A m^2) of a sphere of radius
            rp displaced by r0 (m) in a trap with signed gradients b (T/m).
        """
        ...

    def moment_gradient(self, b: np.ndarray, rp: float) -> np.ndarray:
        """Return the 3x3 matrix whose column i is the derivative of the
            dipole moment with respect to the displacement along axis i.
        """
        ...


@runtime_checkable
class TuningModelProtocol(Protocol):
    """Interface showing how a flux-tunable resonator model should behave."""
    def frequency(self, phi: float|np.ndarray) -> float|np.ndarray:
        """Resonance angular frequency (rad/s) at bias phi (in flux quanta)."""
        ...

    def slope(self, phi: float|np.ndarray) -> float|np.ndarray:
        """Flux responsivity s_w = d(omega_r)/(2 pi dPhi) in Hz per flux
            quantum at bias phi.
        """
        ...


@runtime_checkable
class CursorProtocol(Protocol):
    """Interface showing how a DB cursor should function."""
    def execute(self, sql: str, parameters: list = []) -> CursorProtocol:
        """Execute a single query with the given parameters."""
        ...

    def fetchone(self) -> Any:
        """Get one record returned by the previous query."""
        ...

    def fetchall(self) -> Any:
        """Get all records returned by the previous query."""
        ...


@runtime_checkable
class ArchiveContextProtocol(Protocol):
    """Interface showing how a context manager for the report archive
        should behave.
    """
    def __init__(self, connection_info: str = '') -> None:
        """Open the archive at connection_info."""
        ...

    def __enter__(self) -> CursorProtocol:
        """Enter the `with` block and return a cursor."""
        ...

    def __exit__(self, exc_type: Optional[Type[BaseException]],
                exc_value: Optional[BaseException],
                traceback: Optional[TracebackType]) -> None:
        """Exit the `with` block. Should commit on success, roll back on
            error, and close the connection.
        """
        ...
