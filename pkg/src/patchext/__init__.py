"""patchext: stable broken polynomial extensions on tetrahedral vertex
patches, with equilibrated-flux / potential reconstruction and guaranteed
a posteriori error bounds for the 3D Laplace problem."""

__version__ = "0.1.0"

from ._backend import BACKEND  # noqa: F401
