"""Traffic simulator with backpressure signal control from probe-estimated queues."""

try:
    from ._core import *  # noqa: F401,F403  (installed package layout)
except ImportError:  # build-tree layout: _core sits on PYTHONPATH
    from _core import *  # noqa: F401,F403
