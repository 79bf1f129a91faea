"""Tempered sequential Monte Carlo over coefficient quadtrees.

One scale run moves an ensemble from the prior to the posterior along
a ladder of bridging exponents ``gamma_0 = 0 < ... < gamma_M = 1`` on
the likelihood.  Each bridging step multiplies the unnormalized
importance weights by ``L^(dgamma)``, resamples multinomially whenever
the effective sample size drops below a threshold (resetting the raw
weights to their pre-resampling mean so the evidence ledger is
untouched), and rejuvenates every particle with one random-walk value
move plus one spike/slab indicator move targeting the current
tempered density.  The random-walk step doubles when its acceptance
rate exceeds 0.30 and halves below 0.15.

The running mean of the unnormalized weights estimates the
normalizing-constant ratio against the initial density; per-scale
ratios telescope into Bayes factors between consecutive scales, which
drive the scale-adaptive stopping rule.

Indicator moves are the trans-support complement of the value move:
birth activates a spiked node (with an active parent) and samples the
subtree below it from the prior; death zeroes an active node and its
whole supported subtree.  With the prior as the subtree proposal the
Metropolis ratio reduces to the likelihood ratio times the node's
mixing-odds times the eligible-set size ratio; all subtree prior
factors cancel.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DegeneracyError, ParameterError
from .model import (ParticleState, extend_particle, log_prior, log_likelihood,
                    sample_prior, slab_probability, slab_std)
from .quadtree import count_active_bases
from .rng import stream

# stream namespaces under (seed, scale, t, kind, ...)
_KIND_MOVE = 0
_KIND_RESAMPLE = 1
_KIND_INIT = 2


@dataclass(frozen=True)
class SMCSettings:
    particles: int = 740
    densities: int = 740
    ess_factor: float = 0.95
    initial_step: float = 0.25
    stop_threshold: float = 0.0
    max_scale: int = 5
    seed: int = 0
    run_all_scales: bool = False

    def __post_init__(self):
        if self.particles < 1:
            raise ParameterError("particles must be >= 1")
        if self.densities < 1:
            raise ParameterError("densities must be >= 1")
        if not 0 < self.ess_factor <= 1:
            raise ParameterError("ess_factor must be in (0, 1]")
        if self.initial_step <= 0:
            raise ParameterError("initial_step must be > 0")


@dataclass
class RWAdaptState:
    """Random-walk step size with acceptance counters."""

    sigma: float
    accepted: int = 0
    proposed: int = 0

    def rate(self):
        return self.accepted / self.proposed if self.proposed else 0.0


def adapt_step(rw):
    """Double/halve the step outside the (0.15, 0.30) acceptance band.

    Returns a fresh state with reset counters.
    """
    if rw.proposed <= 0:
        raise ParameterError("adapt_step needs at least one proposal")
    alpha = rw.rate()
    sigma = rw.sigma
    if alpha > 0.30:
        sigma = 2.0 * sigma
    elif alpha < 0.15:
        sigma = 0.5 * sigma
    return RWAdaptState(sigma=sigma)


def temper_schedule(m):
    """Linear bridging exponents 0 = gamma_0 < ... < gamma_M = 1."""
    if m < 1:
        raise ParameterError(f"need at least one bridging step, got {m}")
    return np.linspace(0.0, 1.0, m + 1)


def effective_sample_size(weights):
    """1 / sum of squared normalized weights, in [1, N]."""
    w = np.asarray(weights, dtype=float)
    return 1.0 / float(np.sum(w**2))


@dataclass
class EnsembleState:
    """Particles plus raw (unnormalized) log importance weights."""

    particles: list
    log_omega: np.ndarray
    loglik: np.ndarray
    gamma: float = 0.0
    t: int = 0

    @property
    def size(self):
        return len(self.particles)

    def normalized_weights(self):
        total = logsumexp(self.log_omega)
        if not np.isfinite(total):
            raise DegeneracyError("all importance weights underflowed")
        return np.exp(self.log_omega - total)

    def log_mean_weight(self):
        return float(logsumexp(self.log_omega) - math.log(self.size))


def reweight(ensemble, next_gamma):
    """Advance the bridging exponent, scaling weights by L^(dgamma)."""
    if next_gamma < ensemble.gamma:
        raise ParameterError("bridging exponent must not decrease")
    dgamma = next_gamma - ensemble.gamma
    ensemble.log_omega = ensemble.log_omega + dgamma * ensemble.loglik
    ensemble.gamma = next_gamma
    if not np.isfinite(logsumexp(ensemble.log_omega)):
        raise DegeneracyError("all importance weights underflowed after reweight")
    return ensemble


def resample_multinomial(ensemble, rng):
    """Multinomial resampling with a mean-preserving weight reset."""
    w = ensemble.normalized_weights()
    log_mean = ensemble.log_mean_weight()
    idx = rng.choice(ensemble.size, size=ensemble.size, replace=True, p=w)
    ensemble.particles = [ensemble.particles[i].copy() for i in idx]
    ensemble.loglik = ensemble.loglik[idx].copy()
    ensemble.log_omega = np.full(ensemble.size, log_mean)
    return ensemble


def _eligible_nodes(tree):
    """Non-scaling nodes whose parent is supported (birth/death candidates)."""
    out = []
    for j in range(tree.max_level):
        if j == 0:
            parent = np.ones(tree.mask[0].shape, dtype=bool)
        else:
            parent = np.repeat(np.repeat(tree.mask[j - 1], 2, axis=1), 2, axis=2)
        for flat in np.flatnonzero(parent.ravel()):
            out.append((j, flat))
    return out


def _count_eligible(tree):
    total = int(np.prod(tree.mask[0].shape)) if tree.max_level else 0
    for j in range(1, tree.max_level):
        total += 4 * int(tree.mask[j - 1].sum())
    return total


def _kill_subtree(tree, j, band, i, k):
    """Zero a node and its supported descendants."""
    rows = [(i, i + 1)]
    cols = [(k, k + 1)]
    for lev in range(j, tree.max_level):
        (r0, r1), (c0, c1) = rows[-1], cols[-1]
        tree.details[lev][band, r0:r1, c0:c1] = 0.0
        tree.mask[lev][band, r0:r1, c0:c1] = False
        rows.append((2 * r0, 2 * r1))
        cols.append((2 * c0, 2 * c1))


def _grow_subtree(tree, j, band, i, k, hp, rng):
    """Activate a node, sampling it and its subtree from the prior."""
    s = j + 1
    tree.mask[j][band, i, k] = True
    tree.details[j][band, i, k] = rng.normal(0.0, slab_std(s, hp))
    frontier = [(i, k)]
    for lev in range(j + 1, tree.max_level):
        s = lev + 1
        p = slab_probability(s, True, hp)
        std = slab_std(s, hp)
        nxt = []
        for (pi, pk) in frontier:
            for ci in (2 * pi, 2 * pi + 1):
                for ck in (2 * pk, 2 * pk + 1):
                    if rng.random() < p:
                        tree.mask[lev][band, ci, ck] = True
                        tree.details[lev][band, ci, ck] = rng.normal(0.0, std)
                        nxt.append((ci, ck))
        frontier = nxt


def rejuvenate(particle, cached_loglik, gamma_t, observation, forward, hp, rw, rng):
    """One value move plus one indicator move targeting the tempered density.

    Returns ``(particle, loglik, value_accepted, indicator_accepted)``;
    the particle is updated in place on acceptance.  ``rw`` counters
    track the value move only (the indicator move has no step size).
    """
    tree = particle.tree
    loglik = cached_loglik

    # (a) joint Gaussian perturbation of every supported coefficient
    proposal = tree.copy()
    proposal.scaling = proposal.scaling + rw.sigma * rng.standard_normal(
        proposal.scaling.shape
    )
    for j in range(proposal.max_level):
        active = proposal.mask[j]
        noise = rng.standard_normal(active.shape)
        proposal.details[j] = np.where(
            active, proposal.details[j] + rw.sigma * noise, 0.0
        )
    cand = ParticleState(tree=proposal, log_weight=particle.log_weight)
    ll_new = log_likelihood(cand, observation, forward, hp)
    log_alpha = gamma_t * (ll_new - loglik) + log_prior(cand, hp) - log_prior(particle, hp)
    rw.proposed += 1
    value_accepted = math.log(rng.random()) < log_alpha
    if value_accepted:
        particle.tree = proposal
        loglik = ll_new
        rw.accepted += 1

    # (b) spike/slab toggle: subtree birth or death with prior proposals
    indicator_accepted = False
    tree = particle.tree
    if tree.max_level > 0:
        n_eligible = _count_eligible(tree)
        pick = int(rng.integers(n_eligible))
        j, flat = None, None
        for lev in range(tree.max_level):
            count = int(np.prod(tree.mask[0].shape)) if lev == 0 else 4 * int(
                tree.mask[lev - 1].sum()
            )
            if pick < count:
                if lev == 0:
                    parent = np.ones(tree.mask[0].shape, dtype=bool)
                else:
                    parent = np.repeat(np.repeat(tree.mask[lev - 1], 2, axis=1), 2, axis=2)
                flat = int(np.flatnonzero(parent.ravel())[pick])
                j = lev
                break
            pick -= count
        band, i, k = np.unravel_index(flat, tree.mask[j].shape)
        s = j + 1
        p_u = slab_probability(s, True, hp)
        proposal = tree.copy()
        if tree.mask[j][band, i, k]:
            _kill_subtree(proposal, j, band, i, k)
            log_odds = math.log1p(-p_u) - math.log(p_u)
        else:
            _grow_subtree(proposal, j, band, i, k, hp, rng)
            log_odds = math.log(p_u) - math.log1p(-p_u)
        cand = ParticleState(tree=proposal, log_weight=particle.log_weight)
        ll_new = log_likelihood(cand, observation, forward, hp)
        log_alpha = (
            gamma_t * (ll_new - loglik)
            + log_odds
            + math.log(n_eligible)
            - math.log(_count_eligible(proposal))
        )
        if math.log(rng.random()) < log_alpha:
            particle.tree = proposal
            loglik = ll_new
            indicator_accepted = True

    return particle, loglik, value_accepted, indicator_accepted


@dataclass
class ScaleRunRecord:
    """Posterior summary of one scale's tempering pass."""

    scale: int
    log_z: float
    log_bf: float | None
    ensemble: EnsembleState
    ess_trace: list = field(default_factory=list)
    acceptance_trace: list = field(default_factory=list)
    indicator_acceptance_trace: list = field(default_factory=list)
    sigma_trace: list = field(default_factory=list)
    resample_steps: list = field(default_factory=list)
    basis_count: int = 0
    mean_field: object = None
    q05_field: object = None
    q95_field: object = None
    runtime_s: float = 0.0


def weighted_quantile(values, weights, q):
    """Type-1 (inverse CDF) weighted quantile along the first axis."""
    order = np.argsort(values, axis=0)
    sorted_vals = np.take_along_axis(values, order, axis=0)
    w = np.broadcast_to(weights[:, None], values.shape) if values.ndim == 2 else weights
    sorted_w = np.take_along_axis(np.asarray(w), order, axis=0)
    cum = np.cumsum(sorted_w, axis=0)
    cum /= cum[-1:]
    idx = np.apply_along_axis(lambda c: np.searchsorted(c, q), 0, cum)
    return np.take_along_axis(sorted_vals, idx[None, ...], axis=0)[0]


def majority_basis_count(ensemble):
    """Supported-coefficient count by weighted majority vote per node."""
    w = ensemble.normalized_weights()
    trees = [p.tree for p in ensemble.particles]
    count = trees[0].scaling.size
    for j in range(trees[0].max_level):
        frac = sum(wi * t.mask[j] for wi, t in zip(w, trees))
        count += int(np.sum(frac > 0.5))
    return int(count)


def run_scale(scale, previous, observation, forward, hp, settings,
              field_fn=None, force_resample_steps=()):
    """Full tempering pass at one scale.

    ``previous`` is the :class:`ScaleRunRecord` of scale - 1 (None at
    scale 0): its posterior particles are extended by prior-sampling
    the new finest level, and the raw weights start from its final
    mean so normalizing ratios telescope across scales.
    """
    start = time.time()
    n = settings.particles
    if previous is None:
        if scale != 0:
            raise ParameterError("scales above 0 need the previous record")
        particles = [
            sample_prior(stream(settings.seed, scale, 0, _KIND_INIT, i), scale, hp)
            for i in range(n)
        ]
        log_omega = np.zeros(n)
        prev_log_z = None
    else:
        if scale != previous.scale + 1:
            raise ParameterError(
                f"scale {scale} does not extend previous record at {previous.scale}"
            )
        particles = []
        for i, p in enumerate(previous.ensemble.particles):
            q = p.copy()
            extend_particle(q, stream(settings.seed, scale, 0, _KIND_INIT, i), hp)
            particles.append(q)
        log_omega = np.full(n, previous.log_z)
        prev_log_z = previous.log_z

    loglik = np.array([
        log_likelihood(p, observation, forward, hp) for p in particles
    ])
    ensemble = EnsembleState(particles=particles, log_omega=log_omega, loglik=loglik)
    record = ScaleRunRecord(scale=scale, log_z=0.0, log_bf=None, ensemble=ensemble)

    rw = RWAdaptState(sigma=settings.initial_step)
    gammas = temper_schedule(settings.densities)
    ess_threshold = settings.ess_factor * n
    for t in range(1, len(gammas)):
        gamma_t = float(gammas[t])
        reweight(ensemble, gamma_t)
        ensemble.t = t
        ess = effective_sample_size(ensemble.normalized_weights())
        record.ess_trace.append(ess)
        if ess < ess_threshold or t in force_resample_steps:
            resample_multinomial(
                ensemble, stream(settings.seed, scale, t, _KIND_RESAMPLE)
            )
            record.resample_steps.append(t)
        ind_accepted = 0
        for i, p in enumerate(ensemble.particles):
            rng = stream(settings.seed, scale, t, _KIND_MOVE, i)
            _, ll, _, ind_ok = rejuvenate(
                p, float(ensemble.loglik[i]), gamma_t, observation, forward, hp, rw, rng
            )
            ensemble.loglik[i] = ll
            ind_accepted += int(ind_ok)
        record.acceptance_trace.append(rw.rate())
        record.indicator_acceptance_trace.append(ind_accepted / n)
        record.sigma_trace.append(rw.sigma)
        rw = adapt_step(rw)

    record.log_z = ensemble.log_mean_weight()
    record.log_bf = None if prev_log_z is None else record.log_z - prev_log_z
    record.basis_count = majority_basis_count(ensemble)
    for i, p in enumerate(ensemble.particles):
        p.log_weight = float(ensemble.log_omega[i])
    if field_fn is not None:
        w = ensemble.normalized_weights()
        stack = np.stack([field_fn(p.tree).values for p in ensemble.particles])
        flat = stack.reshape(n, -1)
        record.mean_field = (w @ flat).reshape(stack.shape[1:])
        record.q05_field = weighted_quantile(flat, w, 0.05).reshape(stack.shape[1:])
        record.q95_field = weighted_quantile(flat, w, 0.95).reshape(stack.shape[1:])
    record.runtime_s = time.time() - start
    return record


def log_normalizing_ratio(record):
    """Accumulated log of mean raw weights at gamma = 1 for a scale run."""
    return record.log_z


def run_adaptive(s_max, observation, forward, hp, settings, field_fn=None):
    """Run scales 0..s_max with Bayes-factor stopping.

    Stops early once the log Bayes factor against the previous scale
    drops to ``stop_threshold`` or below (no evidence improvement),
    unless ``run_all_scales`` is set.  Returns ``(records, selected)``
    where ``selected`` is the scale with the largest evidence.
    """
    records = []
    previous = None
    for s in range(s_max + 1):
        rec = run_scale(s, previous, observation, forward, hp, settings,
                        field_fn=field_fn)
        records.append(rec)
        if (
            not settings.run_all_scales
            and rec.log_bf is not None
            and rec.log_bf <= settings.stop_threshold
        ):
            break
        previous = rec
    selected = max(range(len(records)), key=lambda i: records[i].log_z)
    return records, selected
