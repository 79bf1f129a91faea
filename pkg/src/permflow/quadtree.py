"""Two-dimensional separable transforms and quadtree coefficient storage.

Coefficients are kept in dense per-level arrays.  A tree of depth S
(``max_level``) holds a 2x2 block of scaling coefficients plus detail
levels ``j = 0 .. S-1``; level ``j`` stores three orientation bands
(horizontal, vertical, diagonal) of shape ``(2^(j+1), 2^(j+1))``, so
each coefficient has exactly four children at the next level (the
parent of ``(i, k)`` is ``(i // 2, k // 2)``).  A boolean mask of the
same layout marks the supported (non-zero) coefficients; masked-out
entries are stored as exact zeros.

The reconstruction of a depth-S tree lives on a ``2^(S+1)`` periodic
grid; the trees used for permeability fields reconstruct at 64x64 over
``[0, 2]^2`` and are cropped to ``[0, 1]^2`` afterwards.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantError, LevelError, ParameterError, ShapeError
from .fields import DOUBLE_SQUARE, GridField2D
from .lifting import LiftingConfig, forward_axis0, inverse_axis0

ORIENTATIONS = ("horizontal", "vertical", "diagonal")


@dataclass
class CoefficientQuadtree:
    """Scaling block plus per-level, per-orientation detail bands.

    ``details[j]`` has shape ``(3, m, m)`` with ``m = scaling_size * 2^j``
    (orientation axis first); ``mask[j]`` is boolean with the same shape.
    """

    scaling: np.ndarray
    details: list = field(default_factory=list)
    mask: list = field(default_factory=list)

    def __post_init__(self):
        self.scaling = np.asarray(self.scaling, dtype=float)
        if self.scaling.ndim != 2 or self.scaling.shape[0] != self.scaling.shape[1]:
            raise ShapeError(f"scaling block must be square, got {self.scaling.shape}")
        m = self.scaling.shape[0]
        if len(self.details) != len(self.mask):
            raise ShapeError("details and mask must have one entry per level")
        fixed_details, fixed_mask = [], []
        for j, (d, msk) in enumerate(zip(self.details, self.mask)):
            d = np.asarray(d, dtype=float)
            msk = np.asarray(msk, dtype=bool)
            want = (3, m * 2**j, m * 2**j)
            if d.shape != want or msk.shape != want:
                raise ShapeError(f"level {j} bands must have shape {want}, got {d.shape}")
            fixed_details.append(d)
            fixed_mask.append(msk)
        self.details = fixed_details
        self.mask = fixed_mask

    @property
    def max_level(self):
        return len(self.details)

    @property
    def scaling_size(self):
        return self.scaling.shape[0]

    def copy(self):
        return CoefficientQuadtree(
            scaling=self.scaling.copy(),
            details=[d.copy() for d in self.details],
            mask=[m.copy() for m in self.mask],
        )

    def validate_support(self, zero_tree=True):
        """Check mask/value consistency and (optionally) zero-tree closure.

        Masked-out coefficients must be exactly zero.  With
        ``zero_tree=True`` a masked-out parent must not have any
        supported children; this holds for prior-sampled particles but
        not in general for magnitude-thresholded trees.
        """
        for j, (d, msk) in enumerate(zip(self.details, self.mask)):
            if np.any(d[~msk] != 0.0):
                raise InvariantError(f"level {j} has non-zero values outside the mask")
            if zero_tree and j > 0:
                parent_ok = np.repeat(np.repeat(self.mask[j - 1], 2, axis=1), 2, axis=2)
                if np.any(msk & ~parent_ok):
                    raise InvariantError(f"level {j} has supported children of masked parents")


def parent_index(i, k):
    """Quadtree parent of detail coefficient (i, k) one level up."""
    return i // 2, k // 2


def _fwd2(arr, cfg):
    # one separable level: returns (cc, (cd, dc, dd))
    cx, dx = forward_axis0(arr, cfg)
    cc, cd = (a.T for a in forward_axis0(cx.T, cfg))
    dc, dd = (a.T for a in forward_axis0(dx.T, cfg))
    return cc, np.stack([cd, dc, dd])


def _inv2(cc, bands, cfg):
    cd, dc, dd = bands
    cx = inverse_axis0(cc.T, cd.T, cfg).T
    dx = inverse_axis0(dc.T, dd.T, cfg).T
    return inverse_axis0(cx, dx, cfg)


def forward_transform_2d(fld, levels, cfg=None):
    """Decompose a periodic-convention square field into a quadtree."""
    cfg = cfg or LiftingConfig()
    if isinstance(fld, GridField2D):
        arr = fld.values
        if fld.endpoint:
            raise ShapeError("2-d transform expects the periodic grid convention")
    else:
        arr = np.asarray(fld, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"expected a square field, got shape {arr.shape}")
    n = arr.shape[0]
    if levels < 0 or 2**levels > n // 2:
        raise LevelError(f"cannot take {levels} levels of a {n}x{n} field")
    work = arr
    fine_to_coarse = []
    for _ in range(levels):
        work, bands = _fwd2(work, cfg)
        fine_to_coarse.append(bands)
    details = fine_to_coarse[::-1]
    mask = [np.ones(d.shape, dtype=bool) for d in details]
    return CoefficientQuadtree(scaling=work, details=details, mask=mask)


def inverse_transform_2d(tree, cfg=None, target_level=None, domain=DOUBLE_SQUARE):
    """Reconstruct the field of a quadtree on its full periodic grid.

    ``target_level`` deeper than the stored levels refines with zero
    details (pure interpolation), which is how particles below the
    finest scale are evaluated on the common 64x64 grid.
    """
    cfg = cfg or LiftingConfig()
    levels = tree.max_level if target_level is None else int(target_level)
    if levels < tree.max_level:
        raise LevelError(f"target level {levels} below stored depth {tree.max_level}")
    work = tree.scaling
    for j in range(levels):
        if j < tree.max_level:
            bands = tree.details[j]
        else:
            m = work.shape[0]
            bands = np.zeros((3, m, m))
        work = _inv2(work, bands, cfg)
    return GridField2D(values=work, domain=domain, endpoint=False)


def threshold_tree(tree, epsilon, field_norm):
    """Keep detail coefficients with ``|d| >= epsilon * field_norm``.

    Magnitude-only: the support mask is rebuilt from scratch and no
    zero-tree closure is applied here.  Scaling coefficients always
    survive.  Returns a new tree; kept values are unchanged, dropped
    values are zeroed.
    """
    if epsilon <= 0:
        raise ParameterError(f"threshold epsilon must be > 0, got {epsilon}")
    if field_norm <= 0:
        raise ParameterError(f"field norm must be > 0, got {field_norm}")
    cut = epsilon * field_norm
    details, mask = [], []
    for d in tree.details:
        keep = np.abs(d) >= cut
        details.append(np.where(keep, d, 0.0))
        mask.append(keep)
    return CoefficientQuadtree(scaling=tree.scaling.copy(), details=details, mask=mask)


def count_active_bases(tree, up_to_scale=None):
    """Scaling plus supported detail coefficients through the given scale.

    Scale ``s`` counts detail levels ``0 .. s-1`` (scale 0 is the
    scaling block alone).
    """
    scale = tree.max_level if up_to_scale is None else int(up_to_scale)
    if scale < 0 or scale > tree.max_level:
        raise LevelError(f"scale {scale} outside 0..{tree.max_level}")
    return int(tree.scaling.size) + sum(int(tree.mask[j].sum()) for j in range(scale))


def tree_to_json(tree, lifting=None):
    """Documented JSON layout for a coefficient quadtree."""
    payload = {
        "max_level": tree.max_level,
        "scaling": tree.scaling.tolist(),
        "details": {
            str(j): {mu: tree.details[j][b].tolist() for b, mu in enumerate(ORIENTATIONS)}
            for j in range(tree.max_level)
        },
        "mask": {
            str(j): {mu: tree.mask[j][b].tolist() for b, mu in enumerate(ORIENTATIONS)}
            for j in range(tree.max_level)
        },
    }
    if lifting is not None:
        payload["lifting"] = {
            "half_width": lifting.half_width,
            "boundary": lifting.boundary,
        }
    return payload


def tree_from_json(payload):
    levels = int(payload["max_level"])
    details, mask = [], []
    for j in range(levels):
        d = np.stack([np.asarray(payload["details"][str(j)][mu], dtype=float)
                      for mu in ORIENTATIONS])
        m = np.stack([np.asarray(payload["mask"][str(j)][mu], dtype=bool)
                      for mu in ORIENTATIONS])
        details.append(d)
        mask.append(m)
    return CoefficientQuadtree(
        scaling=np.asarray(payload["scaling"], dtype=float), details=details, mask=mask
    )
