"""Edge-pass counter.

Each mean-aggregation kernel call traverses the edge set once; the
pipeline asserts that a full run performs exactly two such passes
(label propagation forward and backward), independent of epoch count.
Counts are per-thread so parallel per-seed jobs do not see each other's
passes.
"""

import threading
from contextlib import contextmanager


class EdgePassCounter(threading.local):
    def __init__(self):
        self.passes = 0

    def bump(self):
        self.passes += 1


EDGE_PASSES = EdgePassCounter()


@contextmanager
def count_edge_passes():
    """Context manager yielding an object whose ``.delta`` is the number of
    edge passes performed inside the block on the current thread."""

    class _Window:
        delta = 0

    window = _Window()
    start = EDGE_PASSES.passes
    try:
        yield window
    finally:
        window.delta = EDGE_PASSES.passes - start
