"""Control of large systems from local relative measurements.

Modules
-------
sensing_model  relative measurement maps (chain, ring, hexagonal mirror)
spectral       modal decomposition, noise gains, poorly observable modes
robustness     worst-case sensing errors and closed-loop poles
si_analysis    spatially invariant closed forms and Nyquist exclusion zones
controller     modal integral controller tuning and sensitivities
plant_sim      plant models, closed-loop simulation and PSD analysis
cli            ``relsense`` command-line front end
"""

__version__ = "0.1.0"
