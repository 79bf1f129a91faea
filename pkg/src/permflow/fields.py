"""Scalar fields sampled on dyadic grids over rectangles.

Two sampling conventions coexist in the package and a field records
which one it uses:

* ``endpoint=False`` (periodic convention): ``n`` points per axis at
  ``x0 + i * (x1 - x0) / n``; the right edge is the wrap-around image
  of the left.  Used by the wavelet transforms.
* ``endpoint=True`` (vertex convention): ``n = 2^J + 1`` points at
  ``linspace(x0, x1, n)`` including both boundaries.  Used by the
  Darcy solver.
"""

import io
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

UNIT_SQUARE = (0.0, 1.0, 0.0, 1.0)
DOUBLE_SQUARE = (0.0, 2.0, 0.0, 2.0)


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridField2D:
    """Real samples on a dyadic grid over ``[x0,x1] x [y0,y1]``.

    ``values[i, j]`` is the sample at ``(x_i, y_j)``; axis 0 is x.
    """

    values: np.ndarray
    domain: tuple = UNIT_SQUARE
    endpoint: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise ShapeError(f"field values must be 2-d, got shape {vals.shape}")
        for n in vals.shape:
            ok = _is_pow2(n - 1) if self.endpoint else _is_pow2(n)
            if not ok or n < 2:
                conv = "2^J + 1" if self.endpoint else "2^J"
                raise ShapeError(f"axis length {n} is not {conv}")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "domain", tuple(float(v) for v in self.domain))

    @property
    def shape(self):
        return self.values.shape

    def steps(self):
        x0, x1, y0, y1 = self.domain
        nx, ny = self.values.shape
        if self.endpoint:
            return (x1 - x0) / (nx - 1), (y1 - y0) / (ny - 1)
        return (x1 - x0) / nx, (y1 - y0) / ny

    def x_coords(self):
        x0, _, _, _ = self.domain
        dx, _ = self.steps()
        return x0 + dx * np.arange(self.values.shape[0])

    def y_coords(self):
        _, _, y0, _ = self.domain
        _, dy = self.steps()
        return y0 + dy * np.arange(self.values.shape[1])

    def sample_bilinear(self, xq, yq):
        """Bilinear interpolation at query points, clamped at the edges."""
        xq = np.asarray(xq, dtype=float)
        yq = np.asarray(yq, dtype=float)
        x0, _, y0, _ = self.domain
        dx, dy = self.steps()
        nx, ny = self.values.shape
        fx = np.clip((xq - x0) / dx, 0.0, nx - 1.0)
        fy = np.clip((yq - y0) / dy, 0.0, ny - 1.0)
        ix = np.minimum(fx.astype(int), nx - 2) if nx > 1 else np.zeros_like(fx, int)
        iy = np.minimum(fy.astype(int), ny - 2) if ny > 1 else np.zeros_like(fy, int)
        tx = fx - ix
        ty = fy - iy
        v = self.values
        return (
            v[ix, iy] * (1 - tx) * (1 - ty)
            + v[ix + 1, iy] * tx * (1 - ty)
            + v[ix, iy + 1] * (1 - tx) * ty
            + v[ix + 1, iy + 1] * tx * ty
        )

    def to_json(self):
        return {
            "values": self.values.tolist(),
            "domain": list(self.domain),
            "endpoint": self.endpoint,
        }

    @classmethod
    def from_json(cls, payload):
        return cls(
            values=np.asarray(payload["values"], dtype=float),
            domain=tuple(payload.get("domain", UNIT_SQUARE)),
            endpoint=bool(payload.get("endpoint", False)),
        )

    def to_csv(self):
        """Row-major CSV with a header line carrying the grid metadata."""
        nx, ny = self.values.shape
        x0, x1, y0, y1 = self.domain
        buf = io.StringIO()
        buf.write(f"# nx={nx} ny={ny} x0={x0!r} x1={x1!r} y0={y0!r} y1={y1!r} "
                  f"endpoint={int(self.endpoint)}\n")
        for row in self.values:
            buf.write(",".join(repr(float(v)) for v in row))
            buf.write("\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("#"):
            raise ShapeError("field CSV must start with a '# nx=... ny=...' header")
        meta = dict(item.split("=", 1) for item in lines[0][1:].split())
        values = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        nx, ny = int(meta["nx"]), int(meta["ny"])
        if values.shape != (nx, ny):
            raise ShapeError(f"CSV body {values.shape} does not match header ({nx}, {ny})")
        domain = tuple(float(meta[k]) for k in ("x0", "x1", "y0", "y1"))
        return cls(values=values, domain=domain, endpoint=bool(int(meta.get("endpoint", 0))))


def crop_reconstruction(field):
    """Keep the lower-left quadrant of a periodic reconstruction.

    A reconstruction on ``[0, 2L]^2`` with ``n`` periodic points per
    axis maps to the ``n/2`` points covering ``[0, L]^2``; indices are
    preserved (``out[i, j] == in[i, j]``).
    """
    if field.endpoint:
        raise ShapeError("crop expects a periodic-convention field")
    nx, ny = field.values.shape
    if nx != ny or nx % 2:
        raise ShapeError(f"crop expects a square even-sized field, got {field.shape}")
    x0, x1, y0, y1 = field.domain
    half = nx // 2
    return GridField2D(
        values=field.values[:half, :half].copy(),
        domain=(x0, x0 + (x1 - x0) / 2, y0, y0 + (y1 - y0) / 2),
        endpoint=False,
    )
