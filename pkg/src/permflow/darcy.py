"""Steady-state Darcy flow solver with wavelet-based multilevel V-cycles.

Discretizes ``-div(k grad p) = f`` with no-flux boundaries on vertex
grids of ``(2^j + 1)^2`` nodes over the unit square, using a
conservative finite-volume stencil with harmonic-mean face
permeabilities.  The pure-Neumann null space is fixed by normalizing
pressures to zero mean everywhere (solver, oracle, observations).

The V-cycle uses red-black Gauss-Seidel smoothing with wavelet
projection for restriction and wavelet interpolation for prolongation
(one-level lifting transforms on the interval).  An outer loop can
additionally adapt the set of active grid nodes from the thresholded
wavelet coefficients of the current iterate: details below the
relative threshold are zeroed (their nodes are slaved to
interpolation) and the residual is driven to tolerance on the active
nodes only.  With the threshold off the solve is a plain uniform-grid
multigrid iteration.
"""

import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    HAVE_NUMBA = False

from .errors import (CompatibilityError, ConvergenceError, DomainError,
                     ParameterError, ShapeError)
from .fields import GridField2D
from .lifting import LiftingConfig, forward_axis0, inverse_axis0
from .rng import TAG_NOISE, stream

#: refinement thresholds at or below this run the solver on the uniform grid
REFINEMENT_OFF = 0.0

CORNER_SOURCES = (((0.0, 0.0), 1.0), ((1.0, 1.0), -1.0))


@dataclass(frozen=True)
class SolverSettings:
    finest_level: int = 5
    residual_tolerance: float = 1e-8
    refinement_threshold: float = 0.02
    max_vcycles: int = 100
    smoother_sweeps: int = 3
    coarsest_level: int = 2
    max_adapt_rounds: int = 8
    # linear (N=1) transfer wavelets: higher orders can destabilize the
    # rediscretized coarse correction on rough permeability draws
    transfer_half_width: int = 1

    def __post_init__(self):
        if self.residual_tolerance <= 0:
            raise ParameterError("residual_tolerance must be > 0")
        if self.finest_level <= self.coarsest_level:
            raise ParameterError("finest_level must exceed coarsest_level")


@dataclass(frozen=True)
class DarcyProblem:
    """Log-permeability field plus balanced point sources on [0,1]^2."""

    log_permeability: GridField2D
    source_points: tuple = CORNER_SOURCES

    def __post_init__(self):
        if self.source_points:
            total = sum(c for _, c in self.source_points)
            if abs(total) > 1e-12:
                raise CompatibilityError(
                    f"source magnitudes must balance for the Neumann problem, sum={total}"
                )
            for (x, y), _ in self.source_points:
                if not (0 <= x <= 1 and 0 <= y <= 1):
                    raise CompatibilityError(f"source position ({x}, {y}) outside [0,1]^2")
        if not np.all(np.isfinite(self.log_permeability.values)):
            raise DomainError("log-permeability field contains non-finite values")


@dataclass
class SensorObservation:
    """Flattened pressure readings at an n x n sensor lattice."""

    grid_size: int
    readings: np.ndarray
    noise_fraction: float
    noise_sigma: float
    seed: int

    def __post_init__(self):
        self.readings = np.asarray(self.readings, dtype=float)
        if self.readings.shape != (self.grid_size**2,):
            raise ShapeError(
                f"readings must have length {self.grid_size**2}, got {self.readings.shape}"
            )
        if self.noise_sigma < 0:
            raise ParameterError("noise_sigma must be >= 0")

    def to_csv(self):
        buf = io.StringIO()
        buf.write(f"# n={self.grid_size} noise_fraction={self.noise_fraction!r} "
                  f"sigma={self.noise_sigma!r} seed={self.seed}\n")
        for v in self.readings:
            buf.write(f"{float(v)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("#"):
            raise ShapeError("observation CSV must start with a '# n=...' header")
        meta = dict(item.split("=", 1) for item in lines[0][1:].split())
        readings = np.array([float(ln) for ln in lines[1:]])
        return cls(
            grid_size=int(meta["n"]),
            readings=readings,
            noise_fraction=float(meta["noise_fraction"]),
            noise_sigma=float(meta["sigma"]),
            seed=int(meta["seed"]),
        )


def _level_coords(level):
    n = 2**level + 1
    return np.linspace(0.0, 1.0, n)


if HAVE_NUMBA:

    @njit(cache=True)
    def _rb_sweeps_jit(p, b, wx, wy, diag, active, sweeps):  # pragma: no cover
        n = p.shape[0]
        for _ in range(sweeps):
            for color in range(2):
                for i in range(n):
                    for j in range((i + color) % 2, n, 2):
                        if not active[i, j]:
                            continue
                        acc = b[i, j]
                        if i > 0:
                            acc += wx[i - 1, j] * p[i - 1, j]
                        if i < n - 1:
                            acc += wx[i, j] * p[i + 1, j]
                        if j > 0:
                            acc += wy[i, j - 1] * p[i, j - 1]
                        if j < n - 1:
                            acc += wy[i, j] * p[i, j + 1]
                        p[i, j] = acc / diag[i, j]


class DarcyOperator:
    """Finite-volume discretization of ``-div(k grad .)`` at one level.

    Face coefficients fold the face-length/
    distance ratio (1 interior, 1/2 along the boundary), so the
    integrated application is ``(A p)_c = sum_faces W (p_c - p_nb)``.
    Interior stencil rows sum to zero and the operator annihilates
    constants.
    """

    def __init__(self, k, level):
        k = np.asarray(k, dtype=float)
        n = 2**level + 1
        if k.shape != (n, n):
            raise ShapeError(f"permeability at level {level} must be {(n, n)}, got {k.shape}")
        if np.any(~np.isfinite(k)) or np.any(k <= 0):
            raise DomainError("permeability must be positive and finite")
        self.level = level
        self.n = n
        self.h = 1.0 / 2**level
        self.k = k
        harm_x = 2.0 * k[:-1, :] * k[1:, :] / (k[:-1, :] + k[1:, :])
        harm_y = 2.0 * k[:, :-1] * k[:, 1:] / (k[:, :-1] + k[:, 1:])
        ax = np.ones(n)
        ax[0] = ax[-1] = 0.5
        self.wx = harm_x * ax[np.newaxis, :]
        self.wy = harm_y * ax[:, np.newaxis]
        diag = np.zeros((n, n))
        diag[:-1, :] += self.wx
        diag[1:, :] += self.wx
        diag[:, :-1] += self.wy
        diag[:, 1:] += self.wy
        self.diag = diag
        vol = np.outer(ax, ax) * self.h**2
        self.volumes = vol
        red = (np.add.outer(np.arange(n), np.arange(n)) % 2) == 0
        self._red = red
        self._all_active = np.ones((n, n), dtype=bool)

    def neighbor_sum(self, p):
        out = np.zeros_like(p)
        out[:-1, :] += self.wx * p[1:, :]
        out[1:, :] += self.wx * p[:-1, :]
        out[:, :-1] += self.wy * p[:, 1:]
        out[:, 1:] += self.wy * p[:, :-1]
        return out

    def apply(self, p):
        """Integrated operator application ``A p``."""
        return self.diag * p - self.neighbor_sum(p)

    def apply_density(self, p):
        """Pointwise (density-form) application, approximating -div(k grad p)."""
        return self.apply(p) / self.volumes

    def residual_density(self, p, b_int):
        """Density-form residual for an integrated right-hand side."""
        return (b_int - self.apply(p)) / self.volumes

    def smooth_red_black(self, p, b_int, sweeps, active=None):
        """Red-black Gauss-Seidel sweeps on the integrated system.

        ``active`` restricts updates to a boolean node subset.
        """
        if HAVE_NUMBA:
            _rb_sweeps_jit(p, b_int, self.wx, self.wy, self.diag,
                           self._all_active if active is None else active, sweeps)
            return p
        red = self._red if active is None else (self._red & active)
        black = ~self._red if active is None else (~self._red & active)
        for _ in range(sweeps):
            upd = (self.neighbor_sum(p) + b_int) / self.diag
            p[red] = upd[red]
            upd = (self.neighbor_sum(p) + b_int) / self.diag
            p[black] = upd[black]
        return p

    def to_sparse(self):
        """Integrated operator as a CSR matrix (rows/cols in C order)."""
        n = self.n
        idx = np.arange(n * n).reshape(n, n)
        rows = [idx.ravel()]
        cols = [idx.ravel()]
        data = [self.diag.ravel()]
        for (w, ia, ib) in (
            (self.wx, idx[:-1, :], idx[1:, :]),
            (self.wy, idx[:, :-1], idx[:, 1:]),
        ):
            rows += [ia.ravel(), ib.ravel()]
            cols += [ib.ravel(), ia.ravel()]
            data += [-w.ravel(), -w.ravel()]
        mat = scipy.sparse.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n * n, n * n),
        )
        return mat.tocsr()


def sample_log_permeability(problem, level):
    """Nodal ln(k) at the given level by bilinear interpolation.

    Exact wherever solver nodes coincide with the field's own sample
    points (always the case for the 64x64 reconstructions on [0,2]^2).
    """
    xs = _level_coords(level)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    return problem.log_permeability.sample_bilinear(gx, gy)


def discretize_operator(problem, level):
    return DarcyOperator(np.exp(sample_log_permeability(problem, level)), level)


def discretize_source(source_points, level):
    """Deposit each point mass on its nearest node, as a density field."""
    n = 2**level + 1
    h = 1.0 / 2**level
    total = sum(c for _, c in source_points)
    if source_points and abs(total) > 1e-12:
        raise CompatibilityError(f"point masses must sum to zero, got {total}")
    ax = np.ones(n)
    ax[0] = ax[-1] = 0.5
    volumes = np.outer(ax, ax) * h**2
    f = np.zeros((n, n))
    for (x, y), c in source_points:
        i = int(round(x / h))
        j = int(round(y / h))
        if not (0 <= i < n and 0 <= j < n):
            raise CompatibilityError(f"source position ({x}, {y}) outside the grid")
        f[i, j] += c / volumes[i, j]
    return f


def _integrated_rhs(problem, level, rhs_density, volumes):
    if rhs_density is not None:
        b = np.asarray(rhs_density, dtype=float) * volumes
    else:
        b = discretize_source(problem.source_points, level) * volumes
    # exact discrete compatibility for the singular Neumann system
    b -= volumes * (b.sum() / volumes.sum())
    return b


def direct_solve_oracle(problem, level, rhs_density=None):
    """Assemble and solve the full sparse system exactly (test oracle).

    The constant null space is pinned with a zero-mean Lagrange
    multiplier; the returned pressure has exactly zero mean.
    """
    op = discretize_operator(problem, level)
    b = _integrated_rhs(problem, level, rhs_density, op.volumes)
    n2 = op.n**2
    a = op.to_sparse().tolil()
    ones = np.ones(n2)
    aug = scipy.sparse.bmat(
        [[a, ones[:, None]], [ones[None, :], None]], format="csc"
    )
    rhs = np.concatenate([b.ravel(), [0.0]])
    sol = scipy.sparse.linalg.spsolve(aug, rhs)
    p = sol[:n2].reshape(op.n, op.n)
    p -= p.mean()
    return GridField2D(values=p, domain=(0, 1, 0, 1), endpoint=True)


# ---------------------------------------------------------------------------
# wavelet transfer operators and iterate decompositions on vertex grids

def _transfer_cfg(settings):
    return LiftingConfig(half_width=settings.transfer_half_width, boundary="reflect")


def restrict_2d(arr, cfg):
    """Wavelet projection onto the next coarser vertex grid."""
    cx, _ = forward_axis0(arr, cfg)
    cc, _ = forward_axis0(cx.T, cfg)
    return cc.T


def prolong_2d(arr, cfg):
    """Wavelet interpolation onto the next finer vertex grid."""
    m = arr.shape[1]
    t = inverse_axis0(arr.T, np.zeros((m - 1, arr.shape[0])), cfg).T
    return inverse_axis0(t, np.zeros((t.shape[0] - 1, t.shape[1])), cfg)


def decompose_iterate(u, levels, cfg):
    """Multi-level 2-d decomposition of a vertex-grid iterate.

    Returns ``(scaling, bands)`` where ``bands[j] = (cd, dc, dd)`` from
    coarse to fine; band shapes are ragged on the interval grids.
    """
    work = u
    fine_to_coarse = []
    for _ in range(levels):
        cx, dx = forward_axis0(work, cfg)
        cc, cd = (a.T for a in forward_axis0(cx.T, cfg))
        dc, dd = (a.T for a in forward_axis0(dx.T, cfg))
        fine_to_coarse.append((cd, dc, dd))
        work = cc
    return work, fine_to_coarse[::-1]


def reconstruct_iterate(scaling, bands, cfg):
    work = scaling
    for cd, dc, dd in bands:
        cx = inverse_axis0(work.T, cd.T, cfg).T
        dx = inverse_axis0(dc.T, dd.T, cfg).T
        work = inverse_axis0(cx, dx, cfg)
    return work


def _mask_bands(bands, masks):
    return [
        tuple(np.where(m, b, 0.0) for b, m in zip(level, mlevel))
        for level, mlevel in zip(bands, masks)
    ]


def _significant_masks(bands, cut):
    return [tuple(np.abs(b) >= cut for b in level) for level in bands]


def _dilate_once(m):
    out = m.copy()
    out[1:, :] |= m[:-1, :]
    out[:-1, :] |= m[1:, :]
    out[:, 1:] |= m[:, :-1]
    out[:, :-1] |= m[:, 1:]
    return out


def _dilate_masks(masks):
    return [tuple(_dilate_once(m) for m in level) for level in masks]


def _union_masks(a, b):
    return [tuple(x | y for x, y in zip(la, lb)) for la, lb in zip(a, b)]


def _full_masks_like(bands, value=True):
    return [tuple(np.full(b.shape, value, dtype=bool) for b in level) for level in bands]


def _masks_subset(a, b):
    return all(np.all(~x | y) for la, lb in zip(a, b) for x, y in zip(la, lb))


def _active_nodes_per_level(masks, coarsest_n):
    """Per-level node masks implied by the active detail coefficients.

    Level 0 (coarsest) is fully active; an odd node at a finer level is
    active iff its detail coefficient is, an even node iff it was
    active one level down.
    """
    node = np.ones((coarsest_n, coarsest_n), dtype=bool)
    levels = [node]
    for cd, dc, dd in masks:
        n = 2 * node.shape[0] - 1
        fine = np.zeros((n, n), dtype=bool)
        fine[0::2, 0::2] = node
        fine[0::2, 1::2] = cd
        fine[1::2, 0::2] = dc
        fine[1::2, 1::2] = dd
        node = fine
        levels.append(node)
    return levels


@dataclass
class SolveResult:
    pressure: GridField2D
    residual: float
    cycles: int
    adapt_rounds: int
    active_fraction: float


def _correction_cycle(ops, level_idx, r_int, present, sweeps, cfg):
    """One V-cycle for the defect equation ``A e = r`` (e starts at 0).

    ``present`` optionally restricts smoothing to the active nodes of
    each level; prolongation is zero-detail wavelet interpolation, so
    inactive nodes only ever receive interpolated content and the
    correction stays in the reduced (slaved) space by construction.
    """
    op = ops[level_idx]
    if level_idx == 0:
        flat = np.concatenate([r_int.ravel(), [0.0]])
        p = (ops[0]._coarse_pinv @ flat)[:-1].reshape(op.n, op.n)
        return p - p.mean()
    active = None if present is None else present[level_idx]
    e = np.zeros((op.n, op.n))
    op.smooth_red_black(e, r_int, sweeps, active=active)
    d = r_int - op.apply(e)
    if active is not None:
        d = d * active
    coarse_op = ops[level_idx - 1]
    rc_int = restrict_2d(d / op.volumes, cfg) * coarse_op.volumes
    rc_int -= coarse_op.volumes * (rc_int.sum() / coarse_op.volumes.sum())
    ec = _correction_cycle(ops, level_idx - 1, rc_int, present, sweeps, cfg)
    e += prolong_2d(ec, cfg)
    op.smooth_red_black(e, r_int, sweeps, active=active)
    return e


def _build_operators(problem, settings):
    ops = []
    for level in range(settings.coarsest_level, settings.finest_level + 1):
        ops.append(discretize_operator(problem, level))
    # dense pinned solve at the coarsest level
    coarse = ops[0]
    n2 = coarse.n**2
    a = coarse.to_sparse().toarray()
    aug = np.zeros((n2 + 1, n2 + 1))
    aug[:n2, :n2] = a
    aug[:n2, n2] = 1.0
    aug[n2, :n2] = 1.0
    coarse._coarse_pinv = np.linalg.pinv(aug)
    return ops


def vcycle_solve(problem, settings, rhs_density=None):
    """Multilevel V-cycle solve, optionally with grid adaptation.

    Returns a :class:`SolveResult`; the pressure is normalized to zero
    mean.  Raises :class:`ConvergenceError` when the residual tolerance
    is not reached within ``max_vcycles``.
    """
    cfg = _transfer_cfg(settings)
    ops = _build_operators(problem, settings)
    fine = ops[-1]
    b_int = _integrated_rhs(problem, settings.finest_level, rhs_density, fine.volumes)
    levels = settings.finest_level - settings.coarsest_level
    adaptive = settings.refinement_threshold > REFINEMENT_OFF

    u = np.zeros((fine.n, fine.n))
    cycles = 0

    def project(masks):
        nonlocal u
        scaling, bands = decompose_iterate(u, levels, cfg)
        u = reconstruct_iterate(scaling, _mask_bands(bands, masks), cfg)
        u -= u.mean()

    def run_cycles(masks, budget):
        """Drive the (active-set) residual below tolerance.

        Each iteration V-cycles the defect equation for the current
        residual; with an active mask the slaved nodes' equations are
        dropped and smoothing touches active nodes only.
        """
        nonlocal u, cycles
        present = None
        if masks is not None:
            present = _active_nodes_per_level(masks, ops[0].n)
            project(masks)
        node_mask = None if present is None else present[-1]

        def current_residual():
            r = np.abs(fine.residual_density(u, b_int))
            return float(r.max() if node_mask is None else r[node_mask].max())

        sweeps = settings.smoother_sweeps
        retries = 0
        res = first = current_residual()
        last = np.inf
        stall = 0
        while res > settings.residual_tolerance:
            if budget <= 0:
                break
            r_int = b_int - fine.apply(u)
            if node_mask is not None:
                r_int = r_int * node_mask
            u = u + _correction_cycle(ops, levels, r_int, present, sweeps, cfg)
            u -= u.mean()
            cycles += 1
            budget -= 1
            res = current_residual()
            if masks is None and res > 2.0 * first and retries < 3:
                # diverging cycle: restart with stronger smoothing
                sweeps *= 2
                retries += 1
                u = np.zeros_like(u)
                res = first = current_residual()
                last = np.inf
                continue
            if res > 0.9 * last:
                stall += 1
                if masks is not None and stall >= 3:
                    return res  # caller widens the mask
            else:
                stall = 0
            last = res
        if res > settings.residual_tolerance and masks is None:
            raise ConvergenceError(
                f"V-cycle did not reach tolerance {settings.residual_tolerance}",
                residual=res, cycles=cycles,
            )
        return res

    res = run_cycles(None, settings.max_vcycles)
    adapt_rounds = 0
    active_fraction = 1.0
    masks = None
    if adaptive:
        for adapt_rounds in range(1, settings.max_adapt_rounds + 1):
            scaling, bands = decompose_iterate(u, levels, cfg)
            scale = float(np.abs(u).max())
            if scale == 0.0:
                break
            new = _close_parents(
                _dilate_masks(
                    _significant_masks(bands, settings.refinement_threshold * scale)
                )
            )
            if masks is not None and _masks_subset(new, masks):
                break
            masks = new if masks is None else _union_masks(masks, new)
            u_prev = u.copy()
            res = run_cycles(masks, settings.max_vcycles)
            widen = 0
            while res > settings.residual_tolerance and widen < 4:
                masks = _dilate_masks(masks) if widen < 3 else _full_masks_like(bands)
                res = run_cycles(masks, settings.max_vcycles)
                widen += 1
            if res > settings.residual_tolerance:
                raise ConvergenceError(
                    f"adaptive solve stalled above tolerance {settings.residual_tolerance}",
                    residual=res, cycles=cycles,
                )
            if np.max(np.abs(u - u_prev)) <= 10 * settings.residual_tolerance:
                break
        if masks is not None:
            total = sum(m.size for level in masks for m in level)
            on = sum(int(m.sum()) for level in masks for m in level)
            active_fraction = (on + ops[0].n**2) / (total + ops[0].n**2)

    u -= u.mean()
    pressure = GridField2D(values=u, domain=(0, 1, 0, 1), endpoint=True)
    return SolveResult(
        pressure=pressure,
        residual=res,
        cycles=cycles,
        adapt_rounds=adapt_rounds,
        active_fraction=active_fraction,
    )


def _any_pool2(mask, out_shape):
    # 2:1 any-pooling with ragged interval-grid shapes
    out = np.zeros(out_shape, dtype=bool)
    for di in (0, 1):
        for dk in (0, 1):
            sub = mask[di::2, dk::2]
            out[: sub.shape[0], : sub.shape[1]] |= sub[: out_shape[0], : out_shape[1]]
    return out


def _close_parents(masks):
    """Activate the parent coefficient of every active detail."""
    out = [tuple(m.copy() for m in level) for level in masks]
    for j in range(len(out) - 1, 0, -1):
        for band in range(3):
            child = out[j][band]
            parent = out[j - 1][band]
            parent |= _any_pool2(child, parent.shape)
    return out


def observe(pressure, n):
    """Readings of the zero-mean pressure at the n x n sensor lattice.

    Sensors sit at ``linspace(0, 1, n)`` per axis; readings are
    bilinear interpolations flattened row-major (x-major).
    """
    if n < 2:
        raise ParameterError(f"sensor grid must have n >= 2, got {n}")
    vals = pressure.values - pressure.values.mean()
    centered = GridField2D(vals, domain=pressure.domain, endpoint=pressure.endpoint)
    xs = np.linspace(0.0, 1.0, n)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    return centered.sample_bilinear(gx, gy).ravel()


def add_noise(readings, noise_fraction, seed):
    """Gaussian observation noise scaled to the readings' spread.

    ``sigma = noise_fraction * sample std`` of the noiseless readings;
    the draw is reproducible from the seed.
    """
    if noise_fraction < 0:
        raise ParameterError("noise_fraction must be >= 0")
    readings = np.asarray(readings, dtype=float)
    n = math.isqrt(readings.size)
    if n * n != readings.size:
        raise ShapeError(f"readings length {readings.size} is not a square number")
    sigma = float(noise_fraction * readings.std(ddof=1))
    noisy = readings.copy()
    if sigma > 0:
        noisy = noisy + sigma * stream(seed, TAG_NOISE).standard_normal(readings.size)
    return SensorObservation(
        grid_size=n,
        readings=noisy,
        noise_fraction=float(noise_fraction),
        noise_sigma=sigma,
        seed=int(seed),
    )
