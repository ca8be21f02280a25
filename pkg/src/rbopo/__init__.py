"""Simulation and analysis toolkit for a four-wave-mixing OPO in hot Rb vapor.

Submodules:

- ``units``: dB conversions and the :class:`SpectrumTrace` container
- ``cavity``: ring-cavity figures of merit and Kerr bistability scans
- ``model``: twin-beam noise model, threshold law, temperature degradation
- ``umz``: unbalanced Mach-Zehnder spectral separator
- ``synth``: seeded synthetic spectrum-analyzer datasets
- ``analysis``: least-squares engine and the calibration/fitting pipeline
- ``cli``: ``rbopo`` command-line entry point
"""

from rbopo.units import SpectrumTrace, db_to_linear, linear_to_db

__version__ = "0.1.0"

__all__ = ["SpectrumTrace", "db_to_linear", "linear_to_db", "__version__"]
