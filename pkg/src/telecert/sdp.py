"""Dense primal-dual interior-point solver and the self-testing-constant
derivation driver.

The solver handles the standard pair

    (P) min tr(C X)   s.t. tr(A_i X) = b_i,  X >= 0
    (D) max b.y       s.t. C - sum_i y_i A_i = S >= 0

with Nesterov-Todd scaling and dense factorizations; problem sizes here
are tiny by SDP standards (moment matrices up to 81x81), so no sparsity
is exploited.  Moment problems are fed through a reduction that
parametrizes the matrix by its free real moments, which keeps the
constraint count near the number of distinct moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import npa

DEFAULT_WORD_CAP = {npa.SETTING_1SDI: 3, npa.SETTING_DI: 4}

# The measurement constant of a trust setting is the worst case over its
# measurement objectives.
MEASUREMENT_OBJECTIVES = {
    npa.SETTING_1SDI: ("ZB", "XB"),
    npa.SETTING_DI: ("ZAZB", "XAXB", "ZAXB"),
}


class SdpError(RuntimeError):
    pass


class _Infeasible(Exception):
    pass


@dataclass
class SdpInstance:
    """min tr(objective @ X) subject to tr(A_i @ X) = b_i and X >= 0."""

    objective: np.ndarray
    constraints: list
    dim: int = field(init=False)

    def __post_init__(self):
        self.objective = _check_symmetric(np.asarray(self.objective, dtype=float))
        self.dim = self.objective.shape[0]
        checked = []
        for a, b in self.constraints:
            a = _check_symmetric(np.asarray(a, dtype=float))
            if a.shape != self.objective.shape:
                raise ValueError("constraint dimension mismatch")
            checked.append((a, float(b)))
        self.constraints = checked


def _check_symmetric(mat: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("matrix must be square")
    if np.max(np.abs(mat - mat.T)) > tol * max(1.0, np.max(np.abs(mat))):
        raise ValueError("matrix is not symmetric")
    return 0.5 * (mat + mat.T)


@dataclass
class SdpSolution:
    primal: np.ndarray
    dual: np.ndarray
    slack: np.ndarray
    primal_objective: float
    dual_objective: float
    gap: float
    relative_gap: float
    primal_residual: float
    dual_residual: float
    status: str
    iterations: int
    trace: list
    kept_constraints: list


def _presolve(instance: SdpInstance, tol: float = 1e-9):
    """Deduplicate and rank-reduce equality constraints; detect linear
    inconsistency outright.  Returns the indices of the kept constraints."""
    n = instance.dim
    m = len(instance.constraints)
    if m == 0:
        raise SdpError("instance has no constraints")
    if m > 20000:
        raise SdpError("constraint count too large for the dense presolve")
    rows_idx = np.triu_indices(n)
    # Diagonal entries first so the sqrt(2) off-diagonal scaling (making
    # the vectorization a trace isometry) can address one slice.
    order = np.concatenate(
        [np.flatnonzero(rows_idx[0] == rows_idx[1]), np.flatnonzero(rows_idx[0] != rows_idx[1])]
    )
    iu = (rows_idx[0][order], rows_idx[1][order])
    vecs = np.empty((m, iu[0].size))
    b = np.empty(m)
    for i, (a, bi) in enumerate(instance.constraints):
        v = a[iu].copy()
        v[n:] *= np.sqrt(2.0)
        vecs[i] = v
        b[i] = bi
    norms = np.linalg.norm(vecs, axis=1)
    zero_rows = norms < 1e-14
    if np.any(zero_rows):
        if np.max(np.abs(b[zero_rows])) > tol:
            raise _Infeasible("zero constraint matrix with nonzero value")
        idx = np.flatnonzero(~zero_rows)
        vecs, b, norms = vecs[idx], b[idx], norms[idx]
    else:
        idx = np.arange(m)
    scaled = vecs / norms[:, None]
    b_scaled = b / norms
    # Rank-revealing QR on the transposed stack.
    q, r, piv = scipy.linalg.qr(scaled.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] < 1e-14:
        raise SdpError("all constraints vanish")
    rank = int(np.sum(diag > 1e-10 * diag[0]))
    kept = np.sort(piv[:rank])
    dropped = np.setdiff1d(np.arange(len(idx)), kept)
    if dropped.size:
        coeffs, *_ = np.linalg.lstsq(scaled[kept].T, scaled[dropped].T, rcond=None)
        b_pred = coeffs.T @ b_scaled[kept]
        mismatch = np.max(np.abs(b_pred - b_scaled[dropped]))
        if mismatch > 1e-8 * (1.0 + np.max(np.abs(b_scaled))):
            raise _Infeasible(f"inconsistent equality constraints (mismatch {mismatch:.3e})")
    return idx[kept]


def _nt_scaling(x: np.ndarray, s: np.ndarray):
    """Nesterov-Todd scaling point W with W S W = X."""
    es, us = np.linalg.eigh(s)
    es = np.clip(es, 1e-300, None)
    s_half = (us * np.sqrt(es)) @ us.T
    s_ihalf = (us / np.sqrt(es)) @ us.T
    t = s_half @ x @ s_half
    et, ut = np.linalg.eigh(0.5 * (t + t.T))
    et = np.clip(et, 1e-300, None)
    t_half = (ut * np.sqrt(et)) @ ut.T
    w = s_ihalf @ t_half @ s_ihalf
    return 0.5 * (w + w.T)


def _pd_factor(x: np.ndarray) -> np.ndarray:
    """Lower-triangular-like factor of a (nearly) PD matrix."""
    try:
        return np.linalg.cholesky(x)
    except np.linalg.LinAlgError:
        eigs, vecs = np.linalg.eigh(0.5 * (x + x.T))
        floor = max(1e-14 * max(eigs.max(), 1.0), 1e-300)
        return vecs * np.sqrt(np.clip(eigs, floor, None))


def _max_step(x: np.ndarray, dx: np.ndarray, tau: float) -> float:
    """Largest alpha <= 1 with x + alpha dx staying positive definite."""
    l = _pd_factor(x)
    li = np.linalg.inv(l)
    m = li @ dx @ li.T
    lam = np.linalg.eigvalsh(0.5 * (m + m.T)).min()
    if lam >= 0.0:
        return 1.0
    return min(1.0, -tau / lam)


def solve(
    instance: SdpInstance,
    gap_tol: float = 1e-8,
    feas_tol: float = 1e-8,
    max_iterations: int = 100,
) -> SdpSolution:
    """Path-following solve; deterministic for identical inputs.

    Status is "optimal" only when the duality gap and both residuals meet
    the certificate contract; structurally inconsistent constraints are
    reported as "infeasible" instead of a silently wrong optimum.
    """
    try:
        kept = _presolve(instance)
    except _Infeasible:
        zeros = np.zeros((instance.dim, instance.dim))
        return SdpSolution(
            zeros, np.zeros(len(instance.constraints)), zeros, np.nan, np.nan,
            np.nan, np.nan, np.nan, np.nan, "infeasible", 0, [], [],
        )
    n = instance.dim
    a_list = [instance.constraints[i][0] for i in kept]
    b = np.array([instance.constraints[i][1] for i in kept])
    m = len(a_list)
    a_stack = np.stack(a_list)
    a_flat = a_stack.reshape(m, -1)
    c = instance.objective

    def a_map(mat):
        return a_flat @ mat.reshape(-1)

    def a_adj(y):
        return np.einsum("i,ijk->jk", y, a_stack)

    norm_b = 1.0 + np.linalg.norm(b)
    norm_c = 1.0 + np.linalg.norm(c)
    xi = max(10.0, np.sqrt(n), n * np.max((1.0 + np.abs(b)) / (1.0 + np.linalg.norm(a_flat, axis=1))))
    eta = max(10.0, np.sqrt(n), (1.0 + max(np.linalg.norm(c), np.max(np.linalg.norm(a_flat, axis=1)))) / np.sqrt(n))
    x = xi * np.eye(n)
    s = eta * np.eye(n)
    y = np.zeros(m)

    trace = []
    status = "max-iterations"
    tau_frac = 0.98
    stall = 0
    best_rp = np.inf
    best = None  # (merit, x, y, s)
    iteration = 0
    for iteration in range(1, max_iterations + 1):
        rp = b - a_map(x)
        rd = c - s - a_adj(y)
        mu = float(np.sum(x * s)) / n
        pobj = float(np.sum(c * x))
        dobj = float(b @ y)
        rp_norm = np.linalg.norm(rp) / norm_b
        rd_norm = np.linalg.norm(rd) / norm_c
        dual_safe = dobj - abs(y @ rp) - abs(np.sum(rd * x))
        trace.append(
            {
                "iteration": iteration - 1,
                "mu": mu,
                "primal_objective": pobj,
                "dual_objective": dobj,
                "dual_bound": dual_safe,
                "primal_residual": rp_norm,
                "dual_residual": rd_norm,
            }
        )
        merit = max(mu / (1.0 + abs(pobj)), rp_norm, rd_norm)
        if best is None or merit < best[0]:
            best = (merit, x.copy(), y.copy(), s.copy())
            stall = 0
        else:
            stall += 1
        if mu / (1.0 + abs(pobj)) < gap_tol and rp_norm < feas_tol and rd_norm < feas_tol:
            status = "optimal"
            break
        if np.max(np.abs(y), initial=0.0) > 1e9 and rp_norm > 1e-6:
            # Diverging multipliers with a stuck primal residual: the
            # documented divergence heuristic for infeasibility.
            status = "infeasible"
            break
        if stall > 8:
            break  # stagnated; fall back to the best iterate

        try:
            w = _nt_scaling(x, s)
            if not np.all(np.isfinite(w)):
                break
            # W A_i W for all i via two large GEMMs instead of batched products.
            right = (a_stack.reshape(m * n, n) @ w).reshape(m, n, n)
            waw = (w @ right.transpose(1, 0, 2).reshape(n, m * n)).reshape(n, m, n)
            waw = waw.transpose(1, 0, 2)
            schur = a_flat @ waw.reshape(m, -1).T
            schur = 0.5 * (schur + schur.T)
            cho = None
            for jitter in (1e-13, 1e-10, 1e-7):
                try:
                    cho = scipy.linalg.cho_factor(
                        schur + jitter * max(np.trace(schur) / m, 1.0) * np.eye(m)
                    )
                    break
                except np.linalg.LinAlgError:
                    continue
            if cho is None:
                break  # Schur breakdown: return the best iterate so far

            s_inv = np.linalg.inv(s)
            s_inv = 0.5 * (s_inv + s_inv.T)

            def newton(sigma_mu):
                rc = sigma_mu * s_inv - x
                rhs = rp - a_map(rc - w @ rd @ w)
                dy = scipy.linalg.cho_solve(cho, rhs)
                ds = rd - a_adj(dy)
                dx = rc - w @ ds @ w
                return 0.5 * (dx + dx.T), dy, 0.5 * (ds + ds.T)

            # Predictor pass fixes the centering parameter.
            dx_a, dy_a, ds_a = newton(0.0)
            ap = _max_step(x, dx_a, tau_frac)
            ad = _max_step(s, ds_a, tau_frac)
            mu_aff = float(np.sum((x + ap * dx_a) * (s + ad * ds_a))) / n
            sigma = min(0.99, max((mu_aff / mu) ** 3, 1e-8))

            dx, dy, ds = newton(sigma * mu)
            ap = _max_step(x, dx, tau_frac)
            ad = _max_step(s, ds, tau_frac)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            break
        if min(ap, ad) < 1e-10:
            break  # no usable step left
        x = 0.5 * ((x + ap * dx) + (x + ap * dx).T)
        s = 0.5 * ((s + ad * ds) + (s + ad * ds).T)
        y = y + ad * dy

    if status != "infeasible" and best is not None:
        # Report the iterate with the best combined merit.
        _, xb, yb, sb = best
        final_merit = max(
            float(np.sum(x * s)) / n / (1.0 + abs(float(np.sum(c * x)))),
            float(np.linalg.norm(b - a_map(x)) / norm_b),
            float(np.linalg.norm(c - s - a_adj(y)) / norm_c),
        )
        if best[0] < final_merit:
            x, y, s = xb, yb, sb
    rp = b - a_map(x)
    rd = c - s - a_adj(y)
    pobj = float(np.sum(c * x))
    dobj = float(b @ y)
    gap = float(np.sum(x * s))
    rel_gap = abs(pobj - dobj) / (1.0 + abs(pobj))
    rp_norm = float(np.linalg.norm(rp) / norm_b)
    rd_norm = float(np.linalg.norm(rd) / norm_c)
    if status != "infeasible":
        contract = (
            gap <= 1e-6 * (1.0 + abs(pobj))
            and rp_norm <= 1e-7
            and rd_norm <= 1e-7
            and np.linalg.eigvalsh(x).min() >= -1e-8
        )
        status = "optimal" if contract else "max-iterations"
    dual_full = np.zeros(len(instance.constraints))
    dual_full[kept] = y
    return SdpSolution(
        primal=x,
        dual=dual_full,
        slack=s,
        primal_objective=pobj,
        dual_objective=dobj,
        gap=gap,
        relative_gap=float(rel_gap),
        primal_residual=rp_norm,
        dual_residual=rd_norm,
        status=status,
        iterations=iteration,
        trace=trace,
        kept_constraints=list(kept),
    )


# ---------------------------------------------------------------------------
# Moment-problem driver.


@dataclass
class MomentSolveResult:
    bound: float
    violation: float
    solution: SdpSolution
    moments: np.ndarray
    gamma: np.ndarray


def companion_instance(reduced: npa.ReducedProblem, violation: float):
    """Pose min p.y over the parametrized moment matrix as the dual of a
    standard-form instance.

    The two scalar equalities (normalization and inequality level) are
    eliminated by pivoting, leaving  max b.z  s.t.  C0 - sum z_j (-G_j) >= 0
    whose companion primal is returned; the minimum equals
    offset - (companion optimum).
    """
    m = len(reduced.keys)
    e = np.vstack([reduced.norm, reduced.q])
    d = np.array([1.0, violation])
    p1 = int(np.argmax(np.abs(e[0])))
    if abs(e[0, p1]) < 1e-12:
        raise SdpError("degenerate normalization row")
    row1 = e[1] - e[1, p1] / e[0, p1] * e[0]
    p2 = int(np.argmax(np.abs(row1)))
    if abs(row1[p2]) < 1e-12 or p2 == p1:
        raise SdpError("inequality functional is parallel to normalization")
    pivots = [p1, p2]
    free = [v for v in range(m) if v not in pivots]
    e_piv = e[:, pivots]
    e_free = e[:, free]
    y_piv0 = np.linalg.solve(e_piv, d)
    coupling = -np.linalg.solve(e_piv, e_free)  # 2 x (m-2)
    y0 = np.zeros(m)
    y0[pivots] = y_piv0

    basis_piv = [reduced.basis_matrix(p1), reduced.basis_matrix(p2)]
    c0 = y_piv0[0] * basis_piv[0] + y_piv0[1] * basis_piv[1]
    p = reduced.p
    offset = float(p @ y0)
    constraints = []
    b_eff = np.empty(len(free))
    for col, v in enumerate(free):
        g = reduced.basis_matrix(v)
        g = g + coupling[0, col] * basis_piv[0] + coupling[1, col] * basis_piv[1]
        b_eff[col] = p[v] + coupling[0, col] * p[pivots[0]] + coupling[1, col] * p[pivots[1]]
        constraints.append((-g, -b_eff[col]))
    instance = SdpInstance(c0, constraints)

    def recover(z: np.ndarray) -> np.ndarray:
        y = y0.copy()
        y[free] += z
        y[pivots] += coupling @ z
        return y

    return instance, offset, recover


def solve_moment_problem(problem: npa.MomentProblem, **solver_kwargs) -> MomentSolveResult:
    """Certified minimum of the problem objective at its violation level."""
    reduced = npa.reduce_problem(problem)
    instance, offset, recover = companion_instance(reduced, problem.violation)
    sol = solve(instance, **solver_kwargs)
    if sol.status != "optimal":
        # Never report a bound the solver could not certify (an unreachable
        # violation level shows up here as an unbounded companion).
        raise SdpError(f"moment problem solve ended with status {sol.status!r}")
    bound = offset - sol.primal_objective
    y = recover(sol.dual)
    gamma = reduced.assemble(y)
    return MomentSolveResult(
        bound=float(bound),
        violation=problem.violation,
        solution=sol,
        moments=y,
        gamma=gamma,
    )


def min_fidelity_curve(
    setting: str,
    objective: str,
    inequality: str,
    epsilons,
    max_local_length: int | None = None,
    **solver_kwargs,
):
    """Certified minimum fidelities at violation (max - eps) per grid point."""
    epsilons = [float(e) for e in epsilons]
    if any(e <= 0.0 or e > 0.5 * npa.max_violation(setting, inequality) for e in epsilons):
        raise ValueError("epsilon grid must sit in (0, half the maximal violation]")
    cap = max_local_length or DEFAULT_WORD_CAP[setting]
    words = npa.generate_words(setting, cap)
    wmax = npa.max_violation(setting, inequality)
    problem = npa.build_moment_problem(setting, words, objective, inequality, wmax)
    reduced = npa.reduce_problem(problem)
    curve = []
    for eps in epsilons:
        instance, offset, recover = companion_instance(reduced, wmax - eps)
        sol = solve(instance, **solver_kwargs)
        if sol.status not in ("optimal",):
            raise SdpError(f"grid point eps={eps}: solver status {sol.status}")
        curve.append((eps, float(offset - sol.primal_objective)))
    return curve


def fit_alpha(curve, min_points: int = 5) -> float:
    """Pointwise-max slope so that F >= 1 - alpha * eps holds on the grid."""
    pts = [(float(e), float(f)) for e, f in curve]
    if len(pts) < min_points:
        raise ValueError(f"need at least {min_points} grid points, got {len(pts)}")
    if any(e <= 0 for e, _ in pts):
        raise ValueError("epsilon values must be positive")
    return max((1.0 - f) / e for e, f in pts)


def derive_alpha(
    setting: str,
    inequality: str,
    kind: str,
    epsilons=(0.01, 0.02, 0.05, 0.1, 0.2),
    max_local_length: int | None = None,
    **solver_kwargs,
) -> dict:
    """Self-testing constant for the state bound or the measurement bound.

    The measurement constant is the worst case over the measurement
    objectives of the setting.
    """
    if kind == "state":
        objectives = ("state",)
    elif kind == "measurement":
        objectives = MEASUREMENT_OBJECTIVES[setting]
    else:
        raise ValueError(f"unknown kind {kind!r}")
    curves = {}
    for objective in objectives:
        curves[objective] = min_fidelity_curve(
            setting, objective, inequality, epsilons, max_local_length, **solver_kwargs
        )
    alphas = {objective: fit_alpha(curve, min_points=min(5, len(epsilons))) for objective, curve in curves.items()}
    alpha = max(alphas.values())
    cap = max_local_length or DEFAULT_WORD_CAP[setting]
    return {
        "setting": setting,
        "inequality": inequality,
        "kind": kind,
        "alpha": alpha,
        "per_objective": alphas,
        "curves": curves,
        "word_cap": cap,
        "epsilons": list(epsilons),
    }
