"""Simulation and limit-theorem diagnostics for switched-flow jump processes."""
__version__ = "0.1.0"

from .errors import PdmpError  # noqa: E402
from .gallery import GALLERY_NAMES, load_gallery  # noqa: E402
from .model import Constants, HybridState, ModelSpec, build_model, lyapunov, rho_c  # noqa: E402
from .observables import Observable, make_observable  # noqa: E402
from .sampler import SeedStream  # noqa: E402

__all__ = ["PdmpError", "GALLERY_NAMES", "load_gallery", "Constants", "HybridState",
           "ModelSpec", "build_model", "lyapunov", "rho_c", "Observable",
           "make_observable", "SeedStream", "__version__"]
