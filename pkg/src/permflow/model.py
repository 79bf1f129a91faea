"""Prior, marginalized likelihood, and tempered target over quadtrees.

The prior on each detail coefficient at scale ``s`` (scale 0 is the
scaling block, scale ``s`` is detail level ``s - 1``) is a
spike-and-slab mixture: with probability ``p_s`` the coefficient is
drawn from a zero-mean Gaussian whose variance shrinks geometrically
with scale, otherwise it is exactly zero.  Zeros propagate: all four
children of a zero coefficient are zero, so supported coefficients
form a subtree rooted at the (always supported) scaling block.

The observation-noise precision carries a Gamma hyperprior and is
marginalized out analytically, leaving a likelihood that depends on
the data only through the squared residual norm:

    log L(w; d) = -(a0 + n_d / 2) * log(b0 + ||d - F(w)||^2 / 2)

up to an additive constant that is independent of ``w`` (it cancels in
every weight ratio and Bayes factor used here).
"""

import math
from dataclasses import dataclass

import numpy as np

from .darcy import CORNER_SOURCES, DarcyProblem, SolverSettings, observe, vcycle_solve
from .errors import InvariantError, ParameterError
from .fields import DOUBLE_SQUARE, GridField2D, crop_reconstruction
from .lifting import LiftingConfig
from .quadtree import CoefficientQuadtree, inverse_transform_2d


@dataclass(frozen=True)
class PriorHyperparams:
    gamma_root: float = 0.85
    gamma_default: float = 0.5
    variance_alpha_inv: float = 0.7
    scaling_factor_r: float = 0.5
    likelihood_a0: float = 0.001
    likelihood_b0: float = 0.001

    def __post_init__(self):
        for name in ("gamma_root", "gamma_default"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ParameterError(f"{name} must be in (0, 1], got {v}")
        for name in ("variance_alpha_inv", "scaling_factor_r",
                     "likelihood_a0", "likelihood_b0"):
            v = getattr(self, name)
            if v <= 0:
                raise ParameterError(f"{name} must be > 0, got {v}")


@dataclass
class ParticleState:
    """One SMC particle: a coefficient tree plus its importance weight.

    The tree's support mask doubles as the spike/slab indicators;
    spike coefficients are exactly zero and a masked parent implies
    all four children are masked.
    """

    tree: CoefficientQuadtree
    log_weight: float = 0.0

    @property
    def scale(self):
        return self.tree.max_level

    def copy(self):
        return ParticleState(tree=self.tree.copy(), log_weight=self.log_weight)

    def validate(self):
        self.tree.validate_support(zero_tree=True)


def slab_std(s, hp):
    """Standard deviation of the slab at scale ``s``."""
    if s < 0:
        raise ParameterError(f"scale must be >= 0, got {s}")
    return math.sqrt(hp.scaling_factor_r**s * hp.variance_alpha_inv)


def slab_probability(s, parent_active, hp):
    """Probability that a scale-``s`` coefficient is in the slab.

    Scale 0 is always supported; a node under a spiked parent is
    always spiked; the root detail scale uses the near-one mixing
    factor and deeper scales decay geometrically.
    """
    if s < 0:
        raise ParameterError(f"scale must be >= 0, got {s}")
    if s == 0:
        return 1.0
    if not parent_active:
        return 0.0
    if s == 1:
        return hp.gamma_root
    return hp.gamma_default**s


def _parent_active_mask(tree, level):
    # the parent of a root detail is the (always supported) scaling block
    if level == 0:
        m = tree.scaling_size
        return np.ones((3, m, m), dtype=bool)
    return np.repeat(np.repeat(tree.mask[level - 1], 2, axis=1), 2, axis=2)


def sample_prior(rng, scale_s, hp, scaling_size=2):
    """Draw a particle from the prior at the given depth."""
    if scale_s < 0:
        raise ParameterError(f"scale must be >= 0, got {scale_s}")
    scaling = rng.normal(0.0, slab_std(0, hp), size=(scaling_size, scaling_size))
    tree = CoefficientQuadtree(scaling=scaling, details=[], mask=[])
    particle = ParticleState(tree=tree)
    for _ in range(scale_s):
        extend_particle(particle, rng, hp)
    return particle


def extend_particle(particle, rng, hp):
    """Grow a particle by one detail level, sampled from the prior.

    Existing coefficient values are kept verbatim; only the new finest
    level is drawn (conditioned on its parents' support).
    """
    tree = particle.tree
    j = tree.max_level
    s = j + 1
    m = tree.scaling_size * 2**j
    shape = (3, m, m)
    parent = _parent_active_mask(tree, j)
    p = slab_probability(s, True, hp)
    active = parent & (rng.random(shape) < p)
    values = np.where(active, rng.normal(0.0, slab_std(s, hp), size=shape), 0.0)
    tree.details.append(values)
    tree.mask.append(active)
    return particle


def log_normal(v, var):
    return -0.5 * math.log(2.0 * math.pi * var) - 0.5 * v**2 / var


def log_prior(particle, hp):
    """Log prior density of a particle's indicator + value configuration."""
    tree = particle.tree
    total = float(
        -0.5 * tree.scaling.size * math.log(2 * math.pi * hp.variance_alpha_inv)
        - 0.5 * np.sum(tree.scaling**2) / hp.variance_alpha_inv
    )
    for j, (values, active) in enumerate(zip(tree.details, tree.mask)):
        s = j + 1
        parent = _parent_active_mask(tree, j)
        if np.any(active & ~parent):
            raise InvariantError(f"level {j} has an active node under a spiked parent")
        if np.any(values[~active] != 0.0):
            raise InvariantError(f"level {j} stores non-zero values at spiked nodes")
        p = slab_probability(s, True, hp)
        var = hp.scaling_factor_r**s * hp.variance_alpha_inv
        n_active = int(active.sum())
        n_inactive_eligible = int((parent & ~active).sum())
        total += n_active * math.log(p)
        if n_inactive_eligible:
            total += n_inactive_eligible * math.log1p(-p) if p < 1 else -math.inf
        total += (
            -0.5 * n_active * math.log(2 * math.pi * var)
            - 0.5 * float(np.sum(values[active] ** 2)) / var
        )
    return total


def log_likelihood(particle, observation, forward, hp):
    """Noise-marginalized log likelihood (up to a w-independent constant)."""
    tree = particle.tree if isinstance(particle, ParticleState) else particle
    readings = np.asarray(forward(tree), dtype=float)
    d = observation.readings
    if readings.shape != d.shape:
        raise ParameterError(
            f"forward map returned {readings.shape}, observation has {d.shape}"
        )
    resid2 = float(np.sum((d - readings) ** 2))
    n_d = d.size
    return -(hp.likelihood_a0 + 0.5 * n_d) * math.log(hp.likelihood_b0 + 0.5 * resid2)


def log_tempered_target(particle, observation, gamma_t, hp, forward):
    """gamma_t * log likelihood + log prior."""
    if not 0.0 <= gamma_t <= 1.0:
        raise ParameterError(f"tempering exponent must be in [0, 1], got {gamma_t}")
    return gamma_t * log_likelihood(particle, observation, forward, hp) + log_prior(
        particle, hp
    )


class ForwardModel:
    """F(w): coefficient tree -> pressure readings at the sensor lattice.

    Composes: inverse wavelet transform on the doubled periodic domain,
    restriction to the unit square, exponentiation to a permeability
    field, the multilevel Darcy solve, and bilinear sensor sampling.
    Trees below the target depth are refined with zero details.
    """

    def __init__(self, lifting=None, solver=None, sensor_grid=10,
                 source_points=CORNER_SOURCES):
        self.lifting = lifting or LiftingConfig()
        self.solver = solver or SolverSettings()
        self.sensor_grid = int(sensor_grid)
        self.source_points = source_points
        self.target_level = self.solver.finest_level

    def log_k_field(self, tree):
        """Log-permeability reconstruction on the doubled domain."""
        return inverse_transform_2d(
            tree, self.lifting, target_level=self.target_level, domain=DOUBLE_SQUARE
        )

    def cropped_field(self, tree):
        """Log-permeability on the unit square (reporting grid)."""
        return crop_reconstruction(self.log_k_field(tree))

    def solve(self, tree):
        problem = DarcyProblem(
            log_permeability=self.log_k_field(tree), source_points=self.source_points
        )
        return vcycle_solve(problem, self.solver)

    def __call__(self, tree):
        return observe(self.solve(tree).pressure, self.sensor_grid)
