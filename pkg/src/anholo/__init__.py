"""anholo: numerical geometry of anchored frames with nonlinear connections.

Layers, bottom up:

- `jets`: truncated Taylor arithmetic, the numerical substrate.
- `expressions`: a tiny expression language for user-declared fields.
- `algebroid`: anchored frame structures, their calculus (differential,
  Lie derivative, lifts, prolongation).
- `nconnection`: nonlinear connections, adapted frames, their curvature
  and anholonomy.
- `geometry`: distinguished metrics, canonical and deformed linear
  connections, torsion and curvature blocks, field equations data.
- `mechanics`: regular Lagrangians and Finsler/energy-metric data on an
  anchored frame; sprays, flows, canonical structures.
- `hamilton`: the dual picture; fiber Legendre transform, brackets, flows.
- `gravity`: a 4D two-plus-two ansatz toolkit with exact formulas, a
  generic cross-check, and structure extraction.
- `scenarios`, `reports`, `cli`: declared-input files, serialization,
  command line.
"""

__version__ = "0.1.0"
