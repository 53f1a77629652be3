"""Two-hands-and-object reconstruction toolkit.

Library + CLI covering graph-transformer 2D-to-3D pose lifting,
coarse-to-fine graph mesh generation with optional per-vertex texture,
and the mesh-processing pipeline (icosphere generation, quadric edge
collapse decimation, sphere-to-target deformation) the network
topologies are built from.
"""

__version__ = "0.1.0"
