"""blocksim: block-structured multiphysics on a simulated message-passing runtime.

Subpackages
-----------
runtime     simulated ranks, serialization buffers, phased exchanges
blockforest distributed forest of octrees, AMR, snapshots and buddy checkpoints
balance     space-filling-curve ordering and curve partitioning
field       ghost-layered structured fields, exchanges, slice gather, VTK output
lbm         lattice Boltzmann stencils, collision operators, boundaries, sweeps
pde         iterative Poisson solvers on the block structure
rpd         rigid particle dynamics (broad/narrow phase, DEM, integration, sync)
coupling    momentum-exchange fluid-particle coupling
app         config parsing, scenarios, CLI driver
"""

__version__ = "0.1.0"
