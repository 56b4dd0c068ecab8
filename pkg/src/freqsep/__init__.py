"""Identification of MIMO linear channels by separating the frequency sets of their signals."""
from ._accel import BACKEND
from .freqset import *  # noqa: F401,F403
from .freqset import __all__ as _fs
from .ident import *  # noqa: F401,F403
from .ident import __all__ as _id
from .plantsim import *  # noqa: F401,F403
from .plantsim import __all__ as _ps
from .signals import *  # noqa: F401,F403
from .signals import __all__ as _sg
from .spectrum import *  # noqa: F401,F403
from .spectrum import __all__ as _sp

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__", *_sg, *_sp, *_fs, *_id, *_ps]
