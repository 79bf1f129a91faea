"""Quick self-diagnostics: independent oracles for the numerical cores.

Each check recomputes an expected result through a route independent
of the implementation it verifies (brute-force scans, dense sparse
solves, numerical quadrature) and compares at a tight tolerance.
Intended for `permflow selftest` and smoke use after installs.
"""

import math

import numpy as np

from .darcy import DarcyProblem, SolverSettings, direct_solve_oracle, vcycle_solve
from .fields import GridField2D
from .lifting import LiftingConfig, forward_transform_1d, inverse_transform_1d
from .model import (ForwardModel, ParticleState, PriorHyperparams, log_likelihood,
                    sample_prior, slab_probability)
from .quadtree import forward_transform_2d, inverse_transform_2d, threshold_tree
from .rng import stream
from .darcy import SensorObservation


def check_transform_roundtrip():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for n_half in (1, 2, 3):
        for boundary, length in (("periodic", 32), ("reflect", 33)):
            cfg = LiftingConfig(half_width=n_half, boundary=boundary)
            x = rng.normal(size=length)
            c, d = forward_transform_1d(x, cfg)
            err = np.max(np.abs(inverse_transform_1d(c, d, cfg) - x))
            worst = max(worst, err / max(1.0, np.max(np.abs(x))))
        cfg = LiftingConfig(half_width=n_half)
        f = rng.normal(size=(32, 32))
        tree = forward_transform_2d(f, 4, cfg)
        rec = inverse_transform_2d(tree, cfg, domain=(0, 1, 0, 1))
        worst = max(worst, np.max(np.abs(rec.values - f)) / np.max(np.abs(f)))
    return worst < 1e-12, f"max roundtrip error {worst:.2e}"


def check_threshold_bruteforce():
    rng = np.random.default_rng(7)
    tree = forward_transform_2d(rng.normal(size=(32, 32)), 4, LiftingConfig())
    cut = 0.02 * 3.0
    kept = threshold_tree(tree, 0.02, 3.0)
    ok = True
    for j in range(tree.max_level):
        brute = np.abs(tree.details[j]) >= cut
        ok = ok and np.array_equal(brute, kept.mask[j])
        ok = ok and np.allclose(np.where(brute, tree.details[j], 0.0), kept.details[j])
    return ok, "threshold mask equals brute-force scan"


def check_solver_oracle():
    xs = np.linspace(0, 1, 33)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    lnk = 0.7 * np.sin(2 * np.pi * gx) * np.cos(np.pi * gy)
    problem = DarcyProblem(
        log_permeability=GridField2D(lnk, (0, 1, 0, 1), endpoint=True)
    )
    settings = SolverSettings(finest_level=5, residual_tolerance=1e-9,
                              refinement_threshold=0.0)
    approx = vcycle_solve(problem, settings).pressure.values
    exact = direct_solve_oracle(problem, 5).values
    diff = approx - exact
    diff -= diff.mean()
    err = float(np.max(np.abs(diff)))
    return err < 1e-6, f"V-cycle vs direct solve: {err:.2e}"


def check_likelihood_quadrature():
    from scipy.integrate import quad

    hp = PriorHyperparams()
    rng = stream(123, 0)
    obs_readings = rng.normal(size=4)
    obs = SensorObservation(grid_size=2, readings=obs_readings, noise_fraction=0.0,
                            noise_sigma=0.0, seed=0)
    a = np.array([[1.0, 0.2, 0.0, 0.0],
                  [0.0, 1.0, 0.3, 0.0],
                  [0.0, 0.0, 1.0, 0.1],
                  [0.2, 0.0, 0.0, 1.0]])

    def forward(tree):
        return a @ tree.scaling.ravel()

    def quadrature_loglik(resid2):
        a0, b0 = hp.likelihood_a0, hp.likelihood_b0
        n_d = 4

        def integrand(u):
            alpha = math.exp(u)
            log_val = (
                (a0 + n_d / 2) * u
                - alpha * (b0 + resid2 / 2)
            )
            return math.exp(log_val)

        val, _ = quad(integrand, -60, 60, limit=400)
        return math.log(val)

    worst = 0.0
    base = None
    for i in range(3):
        particle = sample_prior(stream(5, i), 0, hp)
        resid2 = float(np.sum((obs.readings - forward(particle.tree)) ** 2))
        ours = log_likelihood(particle, obs, forward, hp)
        reference = quadrature_loglik(resid2)
        if base is None:
            base = ours - reference
        else:
            worst = max(worst, abs((ours - reference) - base))
    return worst < 1e-6, f"likelihood vs quadrature (differences): {worst:.2e}"


def check_prior_statistics():
    hp = PriorHyperparams()
    rng = stream(9, 0)
    counts = {1: [0, 0], 2: [0, 0]}
    for _ in range(4000):
        p = sample_prior(rng, 2, hp)
        m0, m1 = p.tree.mask
        counts[1][0] += int(m0.sum())
        counts[1][1] += m0.size
        parent = np.repeat(np.repeat(m0, 2, axis=1), 2, axis=2)
        counts[2][0] += int((m1 & parent).sum())
        counts[2][1] += int(parent.sum())
    ok = True
    msgs = []
    for s, (hits, total) in counts.items():
        frac = hits / total
        want = slab_probability(s, True, hp)
        se = math.sqrt(want * (1 - want) / total)
        ok = ok and abs(frac - want) < 4 * se
        msgs.append(f"s={s}: {frac:.3f} vs {want:.3f}")
    return ok, "; ".join(msgs)


CHECKS = [
    ("transform-roundtrip", check_transform_roundtrip),
    ("threshold-bruteforce", check_threshold_bruteforce),
    ("solver-vs-direct", check_solver_oracle),
    ("likelihood-quadrature", check_likelihood_quadrature),
    ("prior-statistics", check_prior_statistics),
]


def run_selftest(echo=print):
    """Run all checks; returns True when everything passed."""
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"crashed: {type(exc).__name__}: {exc}"
        all_ok = all_ok and ok
        echo(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok
