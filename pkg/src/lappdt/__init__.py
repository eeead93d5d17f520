"""lappdt: digital twins for teaching-free integration of lab automation robots.

Modules:
  geom    rigid poses + scalar uncertainty propagation
  frames  named frame tree with uncertain edges
  twin    device / robot / facility twin documents and the registry
  pnp     plug & play setup chains, teaching oracle, precision gate
  plan    pick-and-place plan template and collision checking
  sim     ground-truth worlds, sensor noise, scenario runner
  cli     command-line entry point
"""

__version__ = "0.1.0"

from .geom import Pose, UncertainTransform  # noqa: F401
