"""Reproducible random number streams.

Streams are built on a counter-based bit generator (Philox) keyed by
``(master_seed, stream_id)``.  Two streams with the same key produce
identical draws regardless of creation order or thread, and distinct
``stream_id`` values give statistically independent streams, so one
``stream_id`` per Monte Carlo replication makes results independent of how
replications are scheduled.

``substream(index)`` derives a stream positioned at a counter block that is
a pure function of (master_seed, stream_id, index): substreams never overlap
each other or the parent's own draws, and drawing from one does not disturb
another.  Scenario generators use one substream per variable so that vector
draws are prefix stable in the sample size and an edit to one variable's law
never shifts the draws of any other variable.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidParameterError

__all__ = ["RngStream", "make_stream"]


class RngStream:
    """A named, reproducible stream of random draws.

    Parameters
    ----------
    master_seed : int
        Non-negative seed shared by a whole run.
    stream_id : int
        Non-negative identifier of this stream within the run.
    """

    def __init__(self, master_seed: int, stream_id: int, _jump: int = 0):
        if master_seed < 0 or stream_id < 0:
            raise InvalidParameterError("master_seed and stream_id must be >= 0")
        self.master_seed = int(master_seed)
        self.stream_id = int(stream_id)
        self._jump = int(_jump)
        bitgen = np.random.Philox(key=[self.master_seed, self.stream_id])
        if self._jump:
            bitgen = bitgen.jumped(self._jump)
        self._gen = np.random.Generator(bitgen)

    def __repr__(self) -> str:
        return (
            f"RngStream(master_seed={self.master_seed}, "
            f"stream_id={self.stream_id}, jump={self._jump})"
        )

    def substream(self, index: int) -> "RngStream":
        """Derived stream at counter block ``index``, disjoint from this one.

        The result depends only on (master_seed, stream_id, index), never on
        how much has been drawn so far.  Indices of nested substreams share
        one flat space with their ancestors, so callers keep disjointness by
        using small indices at a single level of derivation.
        """
        if index < 0:
            raise InvalidParameterError("substream index must be >= 0")
        return RngStream(self.master_seed, self.stream_id, _jump=self._jump + index + 1)

    def uniform(self, size=None):
        """Uniform(0, 1) draws."""
        return self._gen.random(size)

    def normal(self, size=None, loc=0.0, scale=1.0):
        """Normal draws with mean ``loc`` and standard deviation ``scale``."""
        draws = self._gen.standard_normal(size)
        return loc + scale * draws

    def bernoulli(self, p, size=None):
        """Bernoulli 0/1 draws with success probability ``p``.

        ``p`` may be a scalar or an array broadcasting against ``size``.
        Each draw consumes exactly one uniform, so the k-th draw depends
        only on the k-th uniform and the k-th probability.
        """
        p = np.asarray(p, dtype=float)
        if np.any(p < 0.0) or np.any(p > 1.0) or not np.all(np.isfinite(p)):
            raise InvalidParameterError("bernoulli probabilities must lie in [0, 1]")
        u = self._gen.random(size)
        out = (u < p).astype(np.int64)
        return out if np.ndim(out) else int(out)


def make_stream(master_seed: int, stream_id: int) -> RngStream:
    """Create the stream identified by ``(master_seed, stream_id)``."""
    return RngStream(master_seed, stream_id)
