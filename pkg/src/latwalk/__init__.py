"""Lattice random-walk and loop-soup toolkit.

Sub-modules:

* :mod:`latwalk.geometry` — windows, dyadic boxes, discrete circles,
  connectivity, openings and cut sets.
* :mod:`latwalk.paths` — random-walk sampling, hitting times, annulus
  excursions and the excursion/bridge decomposition.
* :mod:`latwalk.loopsoup` — random-walk loop soups, clusters, conditioned
  single loops.
* :mod:`latwalk.detectors` — good-box detectors for pioneer triple points,
  pioneer double cut points and boundary double points, plus the
  macroscopic-triple-point test for finite walks.
* :mod:`latwalk.exponents` — closed-form crossing exponents and Monte Carlo
  estimators (direct and splitting).
* :mod:`latwalk.experiments` — reproducible experiment drivers and the
  append-only result store; :mod:`latwalk.cli` exposes them as commands.
"""

__version__ = "0.1.0"
