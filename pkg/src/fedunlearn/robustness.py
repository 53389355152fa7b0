"""Empirical verification of the influence-solve stability bounds.

For an SPD system H v = g with min eigenvalue mu, a symmetric Hessian
perturbation of spectral norm eps < mu and a gradient perturbation of l2
norm rho change the exact solution by at most

    eps * ||g|| / (mu * (mu - eps)) + rho / (mu - eps),

and an approximate (CG) solve adds only its own solver error xi on top.
Perturbations are constructed to meet their norm budgets with equality, so
the bounds get tested at their tightest admissible inputs.  Dense small
systems only; seeds make every trial reproducible.
"""

from dataclasses import dataclass

import numpy as np

from .krylov import CGConfig, cg_solve, random_spd_system, spectrum_estimate

_SLACK = 1e-10  # fp headroom when comparing observed error to the bound


@dataclass(frozen=True)
class PerturbationSpec:
    epsilon: float  # spectral-norm budget for the Hessian perturbation
    rho: float      # l2 budget for the gradient perturbation
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0 or self.rho < 0:
            raise ValueError("perturbation norms must be >= 0")


@dataclass
class StabilityReport:
    mu: float
    epsilon: float
    rho: float
    observed_error: float
    theoretical_bound: float
    satisfied: bool
    xi: float = 0.0


def perturb_system(H, g, spec):
    """Return (H + E, g + e) with ||E||_2 = eps exactly (symmetric E) and
    ||e||_2 = rho exactly; requires eps < lambda_min(H)."""
    H = np.asarray(H, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64).ravel()
    mu = spectrum_estimate(H).lambda_min
    if spec.epsilon >= mu:
        raise ValueError(
            f"epsilon {spec.epsilon} must stay below lambda_min {mu:.6g}")
    rng = np.random.default_rng(spec.seed)
    d = H.shape[0]
    if spec.epsilon > 0:
        raw = rng.normal(size=(d, d))
        E = 0.5 * (raw + raw.T)
        norm = np.abs(np.linalg.eigvalsh(E)).max()
        E *= spec.epsilon / norm
    else:
        E = np.zeros((d, d))
    if spec.rho > 0:
        e = rng.normal(size=d)
        e *= spec.rho / np.linalg.norm(e)
    else:
        e = np.zeros(d)
    return H + E, g + e


def stability_bound(mu, epsilon, rho, g_norm):
    """eps*||g|| / (mu*(mu-eps)) + rho / (mu-eps)."""
    if mu <= 0:
        raise ValueError("mu must be > 0")
    if not (0.0 <= epsilon < mu):
        raise ValueError("need 0 <= epsilon < mu")
    if rho < 0 or g_norm < 0:
        raise ValueError("rho and ||g|| must be >= 0")
    return epsilon * g_norm / (mu * (mu - epsilon)) + rho / (mu - epsilon)


def verify_stability(H, g, spec):
    """Compare the dense-solve error under perturbation to its bound."""
    H = np.asarray(H, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64).ravel()
    mu = spectrum_estimate(H).lambda_min
    Ht, gt = perturb_system(H, g, spec)
    delta_star = -np.linalg.solve(H, g)
    delta_tilde = -np.linalg.solve(Ht, gt)
    observed = float(np.linalg.norm(delta_tilde - delta_star))
    bound = stability_bound(mu, spec.epsilon, spec.rho,
                            float(np.linalg.norm(g)))
    return StabilityReport(mu=mu, epsilon=spec.epsilon, rho=spec.rho,
                           observed_error=observed, theoretical_bound=bound,
                           satisfied=observed <= bound + _SLACK)


def verify_total_error(H, g, spec, cg_config):
    """Check the perturbed-plus-approximate triangle bound.

    delta_hat comes from CG on the perturbed system; xi is its distance to
    the perturbed dense solution; the total error ||delta_hat - delta*||
    must stay within (adversarial bound) + xi.
    """
    H = np.asarray(H, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64).ravel()
    mu = spectrum_estimate(H).lambda_min
    Ht, gt = perturb_system(H, g, spec)
    delta_star = -np.linalg.solve(H, g)
    delta_tilde = -np.linalg.solve(Ht, gt)
    res = cg_solve(lambda x: Ht @ x, gt,
                   CGConfig(cg_config.max_iters, cg_config.rel_tolerance, 0.0))
    delta_hat = -res.solution
    xi = float(np.linalg.norm(delta_hat - delta_tilde))
    observed = float(np.linalg.norm(delta_hat - delta_star))
    bound = stability_bound(mu, spec.epsilon, spec.rho,
                            float(np.linalg.norm(g))) + xi
    return StabilityReport(mu=mu, epsilon=spec.epsilon, rho=spec.rho,
                           observed_error=observed, theoretical_bound=bound,
                           satisfied=observed <= bound + _SLACK, xi=xi)


def damping_robustness_sweep(H, g, lambdas, spec):
    """Recompute the adversarial bound with mu -> mu + lambda per entry.

    The bound is monotone non-increasing in the damping, which is the
    practical payoff of damping beyond SPD safety.
    """
    H = np.asarray(H, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64).ravel()
    mu = spectrum_estimate(H).lambda_min
    g_norm = float(np.linalg.norm(g))
    rows = []
    for lam in lambdas:
        if lam < 0:
            raise ValueError("damping must be >= 0")
        rows.append({
            "damping": float(lam),
            "mu_effective": mu + lam,
            "bound": stability_bound(mu + lam, spec.epsilon, spec.rho, g_norm),
        })
    ordered = sorted(rows, key=lambda r: r["damping"])
    ordered_bounds = [r["bound"] for r in ordered]
    monotone = all(b2 <= b1 + _SLACK
                   for b1, b2 in zip(ordered_bounds, ordered_bounds[1:]))
    return {"mu": mu, "epsilon": spec.epsilon, "rho": spec.rho,
            "rows": rows, "monotone_in_damping": monotone}


def random_trial_suite(n_trials, seed, max_d=50, k_choices=None):
    """Randomized verification trials for both bounds.

    Each trial draws an SPD system (d in [5, max_d]), eps in [0, 0.9 mu),
    rho in [0, 1], runs both verifiers, and returns per-trial rows ready
    for CSV emission: trial,d,mu,epsilon,rho,k,observed,bound,xi,satisfied.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for t in range(n_trials):
        d = int(rng.integers(5, max_d + 1))
        kappa = float(10 ** rng.uniform(0, 3))
        sys_seed = int(rng.integers(0, 2 ** 31))
        H, g = random_spd_system(d, kappa, sys_seed)
        mu = spectrum_estimate(H).lambda_min
        eps = float(rng.uniform(0.0, 0.9 * mu))
        rho = float(rng.uniform(0.0, 1.0))
        pspec = PerturbationSpec(epsilon=eps, rho=rho,
                                 seed=int(rng.integers(0, 2 ** 31)))
        exact = verify_stability(H, g, pspec)
        if k_choices is None:
            k = int(rng.integers(1, d + 1))
        else:
            k = int(rng.choice(k_choices))
        approx = verify_total_error(H, g, pspec,
                                    CGConfig(max_iters=k, rel_tolerance=1e-12,
                                             damping=0.0))
        rows.append({
            "trial": t, "d": d, "mu": mu, "epsilon": eps, "rho": rho, "k": k,
            "observed": exact.observed_error, "bound": exact.theoretical_bound,
            "xi": 0.0, "satisfied": exact.satisfied,
            "observed_total": approx.observed_error,
            "bound_total": approx.theoretical_bound,
            "xi_total": approx.xi, "satisfied_total": approx.satisfied,
        })
    return rows
