"""Geometry of the unit torus R^d / Z^d.

Positions are stored in raw (unwrapped) coordinates everywhere in the
package; :func:`wrap` is applied only where a position becomes the input
of a regressor or a histogram.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "wrap",
    "periodic_eval",
    "nonempty_axis_subsets",
    "sample_boundary_pairs",
]


def wrap(x):
    """Map ``x`` componentwise onto the fundamental domain ``[0, 1)^d``.

    Uses ``x - floor(x)``, so exact integers map to 0. Works on arrays of
    any shape. A value that is negative but tiny (``-1e-20``) rounds to
    ``1.0`` in floating point; such values are folded back to 0 so the
    half-open range holds exactly.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("wrap: input has non-finite components")
    y = x - np.floor(x)
    # x - floor(x) can round up to exactly 1.0 for tiny negative x
    return np.where(y >= 1.0, 0.0, y)


def periodic_eval(g, x):
    """Evaluate ``g`` on the wrapped representative of ``x``."""
    return g(wrap(x))


def nonempty_axis_subsets(d):
    """All nonempty subsets of ``range(d)`` as boolean masks, shape (2^d-1, d)."""
    if d < 1:
        raise InvalidInputError("dimension must be >= 1")
    masks = [m for m in itertools.product((False, True), repeat=d) if any(m)]
    return np.array(masks, dtype=bool)


def sample_boundary_pairs(count, d, rng):
    """Draw point pairs on opposite faces of the unit cube that coincide on the torus.

    For each pair a nonempty subset of axes is chosen uniformly among the
    ``2^d - 1`` possibilities; on those axes ``x`` takes the value 0 and
    ``y`` the value 1, the remaining coordinates are shared and uniform on
    ``[0, 1)``. Edges and corners of the identification are therefore
    sampled as well as facets.

    Parameters
    ----------
    count : int
        Number of pairs. ``0`` returns empty arrays.
    d : int
        Dimension of the torus.
    rng : numpy.random.Generator

    Returns
    -------
    x, y : ndarray, shape (count, d)
    """
    if count < 0:
        raise InvalidInputError("count must be nonnegative")
    masks = nonempty_axis_subsets(d)
    if count == 0:
        empty = np.empty((0, d))
        return empty, empty.copy()
    choice = rng.integers(0, len(masks), size=count)
    on_face = masks[choice]
    free = rng.random((count, d))
    x = np.where(on_face, 0.0, free)
    y = np.where(on_face, 1.0, free)
    return x, y
