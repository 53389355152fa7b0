"""Matrix-free damped conjugate-gradient solver with convergence verification.

``cg_solve`` works against any symmetric positive definite operator given as
a vector->vector callable; damping lambda is added by the solver itself, so
callers pass an undamped map.  ``verify_cg_bound`` checks the classical
energy-norm convergence rate 2 * ((sqrt(k)-1)/(sqrt(k)+1))^t against a dense
solve, per iteration.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import IndefiniteOperatorError, ResourceLimitError

_RESIDUAL_REFRESH = 50  # full residual recomputation period (drift guard)


@dataclass(frozen=True)
class CGConfig:
    max_iters: int = 10
    rel_tolerance: float = 1e-6
    damping: float = 0.01

    def __post_init__(self):
        # max_iters = 0 is allowed as the degenerate "no update" solve
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if not (0.0 < self.rel_tolerance < 1.0):
            raise ValueError("rel_tolerance must lie in (0, 1)")
        if self.damping < 0:
            raise ValueError("damping must be >= 0")

    def to_dict(self):
        return {"max_iters": self.max_iters,
                "rel_tolerance": self.rel_tolerance,
                "damping": self.damping}

    @staticmethod
    def from_dict(d):
        return CGConfig(max_iters=d.get("max_iters", 10),
                        rel_tolerance=d.get("rel_tolerance", 1e-6),
                        damping=d.get("damping", 0.01))


@dataclass
class CGResult:
    solution: np.ndarray
    residual_norms: list
    iterations_used: int
    converged: bool
    iterates: list = field(default=None, repr=False)

    @property
    def relative_residuals(self):
        r0 = self.residual_norms[0]
        if r0 == 0.0:
            return [0.0 for _ in self.residual_norms]
        return [r / r0 for r in self.residual_norms]


@dataclass(frozen=True)
class SpectrumEstimate:
    lambda_min: float
    lambda_max: float

    @property
    def kappa(self):
        return self.lambda_max / self.lambda_min


def cg_solve(operator, g, config, collect_iterates=False):
    """Solve (A + damping*I) v = g for SPD A, starting from v0 = 0.

    Standard CG recurrence: q = A p; alpha = r'r / p'q; v += alpha p;
    r -= alpha q; cg_beta = r1'r1 / r'r; p = r + cg_beta p.  Stops at
    max_iters or when ||r|| / ||g|| <= rel_tolerance.  Raises
    IndefiniteOperatorError on p'q <= 0 (damping too small for an
    indefinite Hessian) rather than restarting silently.
    """
    g = np.asarray(g, dtype=np.float64).ravel()
    if not np.all(np.isfinite(g)):
        raise ValueError("right-hand side contains non-finite entries")
    lam = config.damping

    def apply(x):
        out = np.asarray(operator(x), dtype=np.float64)
        if lam:
            out = out + lam * x
        return out

    v = np.zeros_like(g)
    r = g.copy()
    p = r.copy()
    g_norm = float(np.linalg.norm(g))
    residuals = [g_norm]
    iterates = [v.copy()] if collect_iterates else None
    if g_norm == 0.0:
        return CGResult(v, residuals, 0, True, iterates)

    threshold = config.rel_tolerance * g_norm
    rs = float(r @ r)
    converged = g_norm <= threshold
    iters = 0
    for t in range(config.max_iters):
        if rs == 0.0:
            converged = True
            break
        q = apply(p)
        pq = float(p @ q)
        if pq <= 0.0:
            raise IndefiniteOperatorError(
                f"non-positive curvature p'Ap = {pq:.3e} at iteration {t}; "
                "increase damping")
        alpha = rs / pq
        v += alpha * p
        r -= alpha * q
        if (t + 1) % _RESIDUAL_REFRESH == 0:
            r = g - apply(v)
        rs_new = float(r @ r)
        r_norm = float(np.sqrt(rs_new))
        residuals.append(r_norm)
        if collect_iterates:
            iterates.append(v.copy())
        iters = t + 1
        if r_norm <= threshold:
            converged = True
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return CGResult(v, residuals, iters, converged, iterates)


def spectrum_estimate(H):
    """Extreme eigenvalues of a dense symmetric positive definite matrix."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("H must be square")
    if H.shape[0] > 5000:
        raise ResourceLimitError("dense spectrum limited to d <= 5000")
    if np.abs(H - H.T).max() > 1e-8:
        raise ValueError("H is not symmetric within 1e-8")
    eigs = np.linalg.eigvalsh(H)
    lo, hi = float(eigs[0]), float(eigs[-1])
    if lo <= 0.0:
        raise ValueError(f"matrix is not positive definite (min eig {lo:.3e})")
    return SpectrumEstimate(lo, hi)


def convergence_bound(kappa, k):
    """Energy-norm error bound factor 2 * ((sqrt(k)-1)/(sqrt(k)+1))^k."""
    if kappa < 1.0:
        raise ValueError("condition number must be >= 1")
    if k < 0:
        raise ValueError("iteration count must be >= 0")
    root = np.sqrt(kappa)
    base = (root - 1.0) / (root + 1.0)
    return 2.0 * base ** k


def verify_cg_bound(H, g, config, fp_slack=1e-12):
    """Empirically check the per-iteration energy-norm bound on a dense system.

    Runs CG on H (plus config.damping) and compares to the dense solve.
    ``fp_slack`` adds fp_slack * ||v*||_H of absolute headroom to absorb
    double-precision roundoff in the comparison itself.
    """
    H = np.asarray(H, dtype=np.float64)
    if config.damping:
        H = H + config.damping * np.eye(H.shape[0])
    spec = spectrum_estimate(H)
    g = np.asarray(g, dtype=np.float64).ravel()
    v_star = np.linalg.solve(H, g)

    def energy(x):
        return float(np.sqrt(max(0.0, x @ (H @ x))))

    v_star_h = energy(v_star)
    res = cg_solve(lambda x: H @ x, g,
                   CGConfig(config.max_iters, config.rel_tolerance, 0.0),
                   collect_iterates=True)
    errors = [energy(v_t - v_star) for v_t in res.iterates]
    bounds = [convergence_bound(spec.kappa, t) * v_star_h
              for t in range(len(errors))]
    violations = [t for t, (e, b) in enumerate(zip(errors, bounds))
                  if e > b + fp_slack * v_star_h]
    return {
        "kappa": spec.kappa,
        "lambda_min": spec.lambda_min,
        "lambda_max": spec.lambda_max,
        "iterations": res.iterations_used,
        "energy_errors": errors,
        "bound_values": bounds,
        "residual_norms": res.residual_norms,
        "satisfied": not violations,
        "first_violation": violations[0] if violations else None,
    }


def random_spd_system(d, kappa, seed):
    """Seeded random SPD system with condition number exactly ``kappa``.

    Random orthogonal basis, eigenvalues uniform over [1, kappa] with the
    endpoints pinned.  (Uniform rather than log-spaced spectra: the latter
    defeat floating-point finite termination of CG at k = d.)
    """
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, d))
    Q, _ = np.linalg.qr(A)
    eigs = np.sort(rng.uniform(1.0, kappa, d))
    eigs[0] = 1.0
    eigs[-1] = kappa
    H = (Q * eigs) @ Q.T
    H = 0.5 * (H + H.T)
    g = rng.normal(size=d)
    return H, g


def cg_verification_suite(n_systems=100, seed=0, d_range=(10, 100),
                          kappa_range=(1.0, 1e4), full_rank=True):
    """Randomized exactness + convergence-bound verification suite.

    Each system gets k = d iterations (tolerance set too tight to stop
    early), a solution-error comparison against the dense solve, and the
    per-iteration energy-norm bound check.  Returns one row per system.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_systems):
        d = int(rng.integers(d_range[0], d_range[1] + 1))
        kappa = float(10 ** rng.uniform(np.log10(kappa_range[0]),
                                        np.log10(kappa_range[1])))
        H, g = random_spd_system(d, kappa, int(rng.integers(0, 2 ** 31)))
        config = CGConfig(max_iters=d, rel_tolerance=1e-15, damping=0.0)
        v_star = np.linalg.solve(H, g)
        res = cg_solve(lambda x: H @ x, g, config)
        rel_err = float(np.linalg.norm(res.solution - v_star)
                        / np.linalg.norm(v_star))
        report = verify_cg_bound(H, g, config)
        rows.append({
            "system": i, "d": d, "kappa": report["kappa"],
            "solution_rel_error": rel_err,
            "iterations": report["iterations"],
            "bound_satisfied": report["satisfied"],
            "first_violation": report["first_violation"],
        })
    return rows
