"""ICU brain-acuity prediction toolkit: python surface over the C++ core."""

try:
    from ._acuity import *  # noqa: F401,F403  (installed package layout)
    from ._acuity import __version__  # noqa: F401
except ImportError:  # in-tree builds put the extension on PYTHONPATH directly
    from _acuity import *  # noqa: F401,F403
    from _acuity import __version__  # noqa: F401
