"""One-dimensional lifting-scheme wavelet transforms on dyadic grids.

The transform interleaves two half steps.  The predict stage estimates
each odd sample by Lagrange interpolation of order ``2N - 1`` from the
``2N`` nearest even samples and stores half the prediction mismatch as
the detail coefficient:

    d[k] = (odd[k] - sum_l g[l] * even[k + l]) / 2

The update stage then lifts the even samples with the adjoint of the
predict stencil, which makes every synthesis wavelet zero-mean and the
coarse sequence mean-preserving:

    c[k] = even[k] + sum_l g~[l] * d[k + l],   g~[l] = g[-l]

The inverse applies the same two stages in reverse order with flipped
signs, so reconstruction is exact to round-off for any weights.

Boundary policies:

* ``periodic`` operates on signals of even length with wrap-around
  stencils (the default used by the coefficient quadtree).
* ``reflect`` operates on signals of odd length (2^m + 1 grid points
  including both endpoints) and shifts stencils inward near the
  boundary, keeping the full interpolation order one-sided.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidStencilError, ParameterError, ShapeError

BOUNDARY_PERIODIC = "periodic"
BOUNDARY_REFLECT = "reflect"


@dataclass(frozen=True)
class LiftingConfig:
    """Parameters of the lifting transform.

    half_width
        N; the predict stage interpolates from the 2N nearest even
        samples with a polynomial of order 2N - 1.
    boundary
        "periodic" (even-length signals) or "reflect" (odd-length
        signals with inward-shifted stencils).
    update_table
        Optional explicit update weights for offsets -N .. N-1,
        overriding the adjoint-derived weights.  Intended for
        experimentation; the derived weights are the ones that give
        zero-mean wavelets.
    """

    half_width: int = 2
    boundary: str = BOUNDARY_PERIODIC
    update_table: tuple | None = None

    def __post_init__(self):
        if self.half_width < 1:
            raise ParameterError(f"half_width must be >= 1, got {self.half_width}")
        if self.boundary not in (BOUNDARY_PERIODIC, BOUNDARY_REFLECT):
            raise ParameterError(f"unknown boundary policy {self.boundary!r}")
        if self.update_table is not None:
            table = tuple(float(w) for w in self.update_table)
            if len(table) != 2 * self.half_width:
                raise ParameterError(
                    f"update_table must have 2N = {2 * self.half_width} entries"
                )
            object.__setattr__(self, "update_table", table)


def predict_weights(stencil_offsets, target_offset):
    """Lagrange interpolation weights for the given stencil.

    Evaluates the Lagrange basis polynomials over ``stencil_offsets``
    at ``target_offset``.  The weights sum to 1 exactly (partition of
    unity), so constants are reproduced.
    """
    nodes = np.asarray(stencil_offsets, dtype=float)
    if nodes.ndim != 1 or nodes.size < 1:
        raise InvalidStencilError("stencil must be a non-empty 1-d sequence")
    if np.unique(nodes).size != nodes.size:
        raise InvalidStencilError(f"duplicate stencil offsets in {stencil_offsets}")
    t = float(target_offset)
    weights = np.empty(nodes.size)
    for i, xi in enumerate(nodes):
        others = np.delete(nodes, i)
        weights[i] = np.prod((t - others) / (xi - others))
    return weights


def _interior_offsets(n):
    # offsets of the 2N even samples around an odd sample, l = -N+1 .. N
    return np.arange(-n + 1, n + 1)


def _predict_matrix_periodic(n_even, n):
    offsets = _interior_offsets(n)
    weights = predict_weights(offsets, 0.5)
    p = np.zeros((n_even, n_even))
    for l, w in zip(offsets, weights):
        idx = (np.arange(n_even) + l) % n_even
        p[np.arange(n_even), idx] += w
    return p


def _predict_matrix_reflect(n_even, n_odd, n):
    p = np.zeros((n_odd, n_even))
    width = min(2 * n, n_even)
    for k in range(n_odd):
        start = min(max(k - n + 1, 0), n_even - width)
        nodes = np.arange(start, start + width)
        p[k, nodes] = predict_weights(nodes, k + 0.5)
    return p


def _update_matrix_from_table(table, n_even, n_odd, n, boundary):
    # banded update with offsets -N .. N-1 applying the user table
    offsets = np.arange(-n, n)
    u = np.zeros((n_even, n_odd))
    for l, w in zip(offsets, table):
        if boundary == BOUNDARY_PERIODIC:
            idx = (np.arange(n_even) + l) % n_odd
            u[np.arange(n_even), idx] += w
        else:
            rows = np.arange(n_even)
            cols = rows + l
            ok = (cols >= 0) & (cols < n_odd)
            u[rows[ok], cols[ok]] += w
    return u


_matrix_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def _stage_matrices(length, cfg):
    """(predict, update) matrices for a signal of the given length."""
    key = (length, cfg.half_width, cfg.boundary, cfg.update_table)
    hit = _matrix_cache.get(key)
    if hit is not None:
        return hit
    n = cfg.half_width
    if cfg.boundary == BOUNDARY_PERIODIC:
        if length < 2 or length % 2:
            raise ShapeError(f"periodic transform needs even length >= 2, got {length}")
        n_even = n_odd = length // 2
        p = _predict_matrix_periodic(n_even, n)
    else:
        if length < 3 or length % 2 == 0:
            raise ShapeError(f"reflect transform needs odd length >= 3, got {length}")
        n_even = (length + 1) // 2
        n_odd = length // 2
        p = _predict_matrix_reflect(n_even, n_odd, n)
    if cfg.update_table is None:
        u = p.T.copy()
    else:
        u = _update_matrix_from_table(cfg.update_table, n_even, n_odd, n, cfg.boundary)
    _matrix_cache[key] = (p, u)
    return p, u


def forward_axis0(arr, cfg):
    """One forward lifting step along axis 0 of a 1-d or 2-d array."""
    arr = np.asarray(arr, dtype=float)
    p, u = _stage_matrices(arr.shape[0], cfg)
    evens = arr[0::2]
    odds = arr[1::2]
    details = 0.5 * (odds - p @ evens)
    coarse = evens + u @ details
    return coarse, details


def inverse_axis0(coarse, details, cfg):
    """Inverse of :func:`forward_axis0` along axis 0."""
    coarse = np.asarray(coarse, dtype=float)
    details = np.asarray(details, dtype=float)
    if cfg.boundary == BOUNDARY_PERIODIC:
        if coarse.shape[0] != details.shape[0]:
            raise ShapeError(
                f"coarse/detail length mismatch: {coarse.shape[0]} vs {details.shape[0]}"
            )
        length = 2 * coarse.shape[0]
    else:
        if coarse.shape[0] != details.shape[0] + 1:
            raise ShapeError(
                f"reflect inverse needs len(coarse) == len(details) + 1, got "
                f"{coarse.shape[0]} and {details.shape[0]}"
            )
        length = coarse.shape[0] + details.shape[0]
    p, u = _stage_matrices(length, cfg)
    evens = coarse - u @ details
    odds = 2.0 * details + p @ evens
    out_shape = (length,) + coarse.shape[1:]
    signal = np.empty(out_shape)
    signal[0::2] = evens
    signal[1::2] = odds
    return signal


def forward_transform_1d(signal, cfg):
    """One-level forward transform of a 1-d signal -> (coarse, details)."""
    signal = np.asarray(signal, dtype=float)
    if signal.ndim != 1:
        raise ShapeError(f"expected a 1-d signal, got shape {signal.shape}")
    return forward_axis0(signal, cfg)


def inverse_transform_1d(coarse, details, cfg):
    """Exact inverse of :func:`forward_transform_1d`."""
    coarse = np.asarray(coarse, dtype=float)
    details = np.asarray(details, dtype=float)
    if coarse.ndim != 1 or details.ndim != 1:
        raise ShapeError("expected 1-d coarse and detail arrays")
    return inverse_axis0(coarse, details, cfg)
