"""Deterministic test problems with planted solutions and closed-form constants.

    G1  multi-block nonconvex quadratic, diagonal-quadratic h, box X    (sdd_admm)
    G2  convex quadratic + l1 + box, orthonormal affine h, mu* = 0      (udd_affine)
    G3  convex quadratic + l1 + box, one quadratic h block, LICQ at x*  (udd_nonlinear)
    G4  two-block indefinite quadratic, full-row-rank affine h          (sdd_admm, eps1_rule)

Every generator is a pure function of its seed and sizes. Instances are run
through check_instance before they are returned.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np
from scipy.optimize import minimize

from .errors import ParameterError, StructuralError
from .problem import (
    AffineBlock,
    BlockStructure,
    IneqSet,
    ProblemInstance,
    QuadraticBlock,
    QuadraticObjective,
    aggregate_h,
    check_instance,
)
from .prox import ProxKernel
from .udd_affine import robinson_diagnostic
from .udd_nonlinear import licq_diagnostic

logger = logging.getLogger(__name__)

CONDITION_TRIES = 100


@dataclass
class GalleryInstance:
    id: str
    seed: int
    problem: ProblemInstance

    @property
    def metadata(self) -> dict[str, Any]:
        return self.problem.metadata

    @property
    def x_star(self) -> Optional[np.ndarray]:
        x = self.metadata.get("x_star")
        return None if x is None else np.asarray(x, dtype=float)

    def describe(self) -> dict[str, Any]:
        s = self.problem.structure
        return {
            "id": self.id,
            "seed": self.seed,
            "p": s.p,
            "dims": list(s.dims),
            "m": s.m,
            "target_solver": self.metadata.get("target_solver"),
            "flags": self.metadata.get("flags", {}),
        }


# Shared construction helpers


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    U, R = np.linalg.qr(rng.standard_normal((n, n)))
    return U * np.sign(np.diag(R))


def _symmetric(rng: np.random.Generator, eigenvalues: np.ndarray) -> np.ndarray:
    U = _orthogonal(rng, eigenvalues.size)
    Q = U @ np.diag(eigenvalues) @ U.T
    return 0.5 * (Q + Q.T)


def _box_lower_bound(Q: np.ndarray, q: np.ndarray) -> float:
    """Lower bound of x'Qx + q'x on [-1, 1]^n from coordinate bounds."""
    off = np.abs(Q).sum() - np.abs(np.diag(Q)).sum()
    return float(-off + np.minimum(np.diag(Q), 0.0).sum() - np.abs(q).sum())


def _convex_lower_bound(Q: np.ndarray, q: np.ndarray) -> float:
    """Unconstrained minimum -q'Q^{-1}q / 4 of x'Qx + q'x for Q positive definite."""
    return float(-0.25 * q @ np.linalg.solve(Q, q))


def _well_conditioned(sample: Callable[[], np.ndarray], columns: Callable[[np.ndarray], np.ndarray],
                      floor: float = 0.1) -> np.ndarray:
    """Redraw until the selected submatrix has smallest singular value above floor."""
    for _ in range(CONDITION_TRIES):
        M = sample()
        sv = np.linalg.svd(columns(M), compute_uv=False)
        if sv.size and sv.min() > floor:
            return M
    raise StructuralError("could not draw a well-conditioned constraint matrix")


def _null_space_start(A: np.ndarray, x_star: np.ndarray, bound_idx: np.ndarray, free_idx: np.ndarray,
                      step: float, cap: float) -> np.ndarray:
    """x* + d with A d = 0: bound coordinates move inward by step, free ones absorb the change."""
    d = np.zeros_like(x_star)
    d[bound_idx] = -np.sign(x_star[bound_idx]) * step
    d[free_idx] = -np.linalg.pinv(A[:, free_idx]) @ (A[:, bound_idx] @ d[bound_idx])
    spread = float(np.max(np.abs(d[free_idx]))) if free_idx.size else 0.0
    if spread > cap:
        d *= cap / spread
    return x_star + d


def _signs(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=size)


def _finish(gid: str, seed: int, problem: ProblemInstance, samples: int = 20) -> GalleryInstance:
    report = check_instance(problem, samples=samples, seed=seed)
    if not report.ok:
        raise StructuralError(f"{gid} (seed {seed}) failed instance checks: {', '.join(report.failures)}")
    logger.debug("built %s seed=%d: n=%d m=%d dP=%.4g", gid, seed, problem.structure.n,
                 problem.structure.m, problem.delta_p)
    return GalleryInstance(gid, seed, problem)


# G1


def make_g1(seed: int = 0, p: int = 3, n_i: int = 4, m: int = 2) -> GalleryInstance:
    """Multi-block nonconvex instance with h_i(x_i) = B_i x_i + D_i (x_i * x_i) + d_i.

    The offsets cancel (d_p = -sum of the others), so x0 = 0 is exactly feasible.
    """
    if not (1 <= p <= 5 and 1 <= n_i <= 20 and 1 <= m <= 5):
        raise ParameterError(f"G1 sizes out of range: p={p} n_i={n_i} m={m}")
    rng = np.random.default_rng(seed)
    n = p * n_i

    eig = rng.uniform(-1.0, -0.2, size=n)
    eig[rng.integers(n)] = 0.05
    Q = 0.5 * _symmetric(rng, eig)
    q = rng.normal(0.0, 0.3, size=n)

    blocks = []
    offset_sum = np.zeros(m)
    for i in range(p):
        B = rng.normal(0.0, 0.5, size=(m, n_i))
        D = rng.normal(0.0, 0.2, size=(m, n_i))
        if i < p - 1:
            d = rng.normal(0.0, 0.2, size=m)
            offset_sum = offset_sum + d
        else:
            d = -offset_sum
        blocks.append(QuadraticBlock(B, D, d))

    problem = ProblemInstance(
        structure=BlockStructure((n_i,) * p, m),
        objective=QuadraticObjective(Q, q),
        prox_terms=(ProxKernel.box(-1.0, 1.0),) * p,
        constraints=tuple(blocks),
        x0=np.zeros(n),
        p_lb=_box_lower_bound(Q, q),
        metadata={
            "id": "G1",
            "seed": seed,
            "target_solver": "sdd_admm",
            "flags": {"convex": False, "affine": False},
            "constants": "L_f = ||2Q||; per block M = ||B|| r2 + ||D|| r2 + ||d||, "
                         "K = J = ||B|| + 2||D||, L = 2||D|| on the box",
        },
    )
    return _finish("G1", seed, problem)


# G2


def make_g2(seed: int = 0, n: int = 10, m: int = 3, duplicate_row: bool = False) -> GalleryInstance:
    """Convex instance with a pinned planted minimizer and mu* = 0.

    g = 2||x||_1 + indicator of [-1, 1]^n. Half the coordinates of x* sit at 0
    with subgradient slack, the rest at +-1 with box multipliers in [2, 3], so
    x* minimizes f + g outright and A x = b with b = A x* is inactive. Every
    coordinate of x* keeps a strict subgradient margin, so x* stays the
    minimizer of L(., mu) for all small mu.
    duplicate_row repeats the first row of A, breaking full row rank.
    """
    if not 1 <= m < n <= 100:
        raise ParameterError(f"G2 needs 1 <= m < n <= 100, got n={n} m={m}")
    rng = np.random.default_rng(seed)
    w = 2.0
    n_zero = max(m, (n + 1) // 2)
    perm = rng.permutation(n)
    zero_idx, bound_idx = np.sort(perm[:n_zero]), np.sort(perm[n_zero:])

    x_star = np.zeros(n)
    x_star[bound_idx] = _signs(rng, bound_idx.size)

    Q = _symmetric(rng, rng.uniform(0.5, 1.0, size=n))
    t = np.zeros(n)
    t[zero_idx] = w * rng.uniform(-0.25, 0.25, size=zero_idx.size)
    t[bound_idx] = x_star[bound_idx] * (w + rng.uniform(2.0, 3.0, size=bound_idx.size))
    q = -t - 2.0 * Q @ x_star

    A = _well_conditioned(
        lambda: np.linalg.qr(rng.standard_normal((n, m)))[0].T,
        lambda M: M[:, zero_idx],
    )
    b = A @ x_star
    x0 = _null_space_start(A, x_star, bound_idx, zero_idx, step=0.05, cap=0.08)
    if bound_idx.size == 0:
        direction = np.linalg.svd(A)[2][m:].T @ rng.standard_normal(n - m)
        x0 = x_star + 0.05 * direction / np.max(np.abs(direction))

    if duplicate_row:
        A = np.vstack([A, A[:1]])
        b = np.concatenate([b, b[:1]])
    m_eff = A.shape[0]

    objective = QuadraticObjective(Q, q)
    f_star = objective.value(x_star) + w * float(np.abs(x_star).sum())
    kernel = ProxKernel.l1(w, lower=-1.0, upper=1.0)
    robinson = robinson_diagnostic(x_star, IneqSet("box", n, lower=-1.0, upper=1.0), A)

    problem = ProblemInstance(
        structure=BlockStructure((n,), m_eff),
        objective=objective,
        prox_terms=(kernel,),
        constraints=(AffineBlock(A, b),),
        x0=x0,
        p_lb=_convex_lower_bound(Q, q),
        metadata={
            "id": "G2",
            "seed": seed,
            "target_solver": "udd_affine",
            "x_star": x_star.tolist(),
            "mu_star": np.zeros(m_eff).tolist(),
            "f_star": f_star,
            "zero_coordinates": zero_idx.tolist(),
            "bound_coordinates": bound_idx.tolist(),
            "flags": {
                "convex": True,
                "affine": True,
                "duplicate_row": duplicate_row,
                "robinson": bool(robinson.get("robinson_ok")),
            },
            "constants": "L_f = ||2Q||; M = ||A|| sqrt(n) + ||b||, K = J = ||A||, L = 0",
        },
    )
    return _finish("G2", seed, problem)


# G3


def make_g3(seed: int = 0, n: int = 8, m: int = 2, L: int = 3) -> GalleryInstance:
    """Nonlinear-constraint instance with a planted KKT point satisfying LICQ.

    x* has L coordinates at +-1 (active box faces) and the rest at 0. h is one
    diagonal-quadratic block with h(x*) = h(x0) = 0, where x0 moves the bound
    coordinates inward by 0.1 and the zero ones by +-0.05. mu* is scaled so the
    Lagrangian f + g + <mu*, h> stays convex on the box, which makes x* the
    global minimizer.
    """
    if not (1 <= m <= 5 and 0 <= L and m <= n - L and n <= 100):
        raise ParameterError(f"G3 needs m <= n - L, m <= 5, n <= 100; got n={n} m={m} L={L}")
    rng = np.random.default_rng(seed)
    w = 1.0
    perm = rng.permutation(n)
    bound_idx, zero_idx = np.sort(perm[:L]), np.sort(perm[L:])

    x_star = np.zeros(n)
    x_star[bound_idx] = _signs(rng, L)
    x0 = x_star.copy()
    x0[bound_idx] -= 0.1 * x_star[bound_idx]
    x0[zero_idx] = 0.05 * _signs(rng, zero_idx.size)

    B = _well_conditioned(lambda: rng.normal(0.0, 0.5, size=(m, n)), lambda M: M[:, zero_idx])
    D0 = rng.normal(0.0, 0.2, size=(m, n))
    v = x0 - x_star
    u = x0 * x0 - x_star * x_star
    D = D0 - np.outer(D0 @ u + B @ v, u) / float(u @ u)
    d = -(B @ x_star + D @ (x_star * x_star))
    block = QuadraticBlock(B, D, d)

    mu_star = rng.normal(0.0, 0.1, size=m)
    curvature = float(np.max(np.abs(D.T @ mu_star)))
    if curvature > 0.25:
        mu_star *= 0.25 / curvature

    Q = _symmetric(rng, rng.uniform(0.5, 1.0, size=n))
    t = np.zeros(n)
    t[zero_idx] = w * rng.uniform(-0.25, 0.25, size=zero_idx.size)
    t[bound_idx] = x_star[bound_idx] * (w + rng.uniform(2.0, 3.0, size=L))
    q = -t - 2.0 * Q @ x_star - block.jacobian(x_star) @ mu_star

    objective = QuadraticObjective(Q, q)
    kernel = ProxKernel.l1(w, lower=-1.0, upper=1.0)
    f_star = objective.value(x_star) + w * float(np.abs(x_star).sum())

    problem = ProblemInstance(
        structure=BlockStructure((n,), m),
        objective=objective,
        prox_terms=(kernel,),
        constraints=(block,),
        x0=x0,
        p_lb=_convex_lower_bound(Q, q),
        metadata={
            "id": "G3",
            "seed": seed,
            "target_solver": "udd_nonlinear",
            "x_star": x_star.tolist(),
            "mu_star": mu_star.tolist(),
            "f_star": f_star,
            "zero_coordinates": zero_idx.tolist(),
            "bound_coordinates": bound_idx.tolist(),
            "flags": {"convex": False, "affine": False},
            "constants": "L_f = ||2Q||; M = (||B|| + ||D||) sqrt(n) + ||d||, "
                         "K = J = ||B|| + 2||D||, L = 2||D||",
        },
    )
    problem.metadata["flags"]["licq"] = bool(licq_diagnostic(problem, x_star)["full_column_rank"])
    return _finish("G3", seed, problem)


# G4


def make_g4(seed: int = 0) -> GalleryInstance:
    """Two blocks of three variables, indefinite f, affine h with full row rank (m = 2).

    x* is a nondegenerate vertex KKT point: one free coordinate per constraint,
    the rest at +-1 with reduced costs in [1, 2], and |lambda*| about 0.3.
    """
    rng = np.random.default_rng(seed)
    p, n_i, m = 2, 3, 2
    n = p * n_i
    perm = rng.permutation(n)
    free_idx, bound_idx = np.sort(perm[:m]), np.sort(perm[m:])

    x_star = np.zeros(n)
    x_star[free_idx] = rng.uniform(-0.5, 0.5, size=m)
    x_star[bound_idx] = _signs(rng, bound_idx.size)

    A = _well_conditioned(lambda: rng.normal(0.0, 1.0 / np.sqrt(n_i), size=(m, n)), lambda M: M[:, free_idx])
    lam_star = _signs(rng, m) * rng.uniform(0.25, 0.35, size=m)

    Q = 0.5 * _symmetric(rng, rng.uniform(-1.0, 1.0, size=n))
    t = np.zeros(n)
    t[bound_idx] = x_star[bound_idx] * rng.uniform(1.0, 2.0, size=bound_idx.size)
    q = -t - 2.0 * Q @ x_star - A.T @ lam_star

    b = A @ x_star
    x0 = _null_space_start(A, x_star, bound_idx, free_idx, step=0.1, cap=0.4)
    blocks = (AffineBlock(A[:, :n_i], b), AffineBlock(A[:, n_i:], np.zeros(m)))
    objective = QuadraticObjective(Q, q)

    problem = ProblemInstance(
        structure=BlockStructure((n_i,) * p, m),
        objective=objective,
        prox_terms=(ProxKernel.box(-1.0, 1.0),) * p,
        constraints=blocks,
        x0=x0,
        p_lb=_box_lower_bound(Q, q),
        metadata={
            "id": "G4",
            "seed": seed,
            "target_solver": "sdd_admm",
            "x_star": x_star.tolist(),
            "mu_star": lam_star.tolist(),
            "f_kkt": objective.value(x_star),
            "sigma_min_A": float(np.linalg.svd(A, compute_uv=False).min()),
            "flags": {"convex": False, "affine": True, "full_row_rank": True, "compact_level_sets": True},
            "constants": "L_f = ||2Q||; per block M = ||A_i|| sqrt(n_i) + ||b_i||, K = J = ||A_i||, L = 0",
        },
    )
    return _finish("G4", seed, problem)


@dataclass(frozen=True)
class GalleryEntry:
    factory: Callable[..., GalleryInstance]
    summary: str
    target_solver: str
    defaults: dict[str, int] = field(default_factory=dict)


GALLERY: dict[str, GalleryEntry] = {
    "G1": GalleryEntry(make_g1, "multi-block nonconvex, quadratic h", "sdd_admm", {"p": 3, "n_i": 4, "m": 2}),
    "G2": GalleryEntry(make_g2, "convex l1 + box, affine h, Robinson holds", "udd_affine", {"n": 10, "m": 3}),
    "G3": GalleryEntry(make_g3, "convex f, quadratic h, LICQ at x*", "udd_nonlinear", {"n": 8, "m": 2, "L": 3}),
    "G4": GalleryEntry(make_g4, "indefinite f, full-row-rank affine h", "sdd_admm", {}),
}


def make(gid: str, seed: int = 0, **sizes: Any) -> GalleryInstance:
    """Build gallery instance `gid` ("G1".."G4", case-insensitive)."""
    key = gid.upper()
    if key not in GALLERY:
        raise ParameterError(f"unknown gallery id {gid!r}; choose from {', '.join(GALLERY)}")
    return GALLERY[key].factory(seed=seed, **sizes)


# Reference solves


@dataclass
class TrustedSolution:
    x: np.ndarray
    value: float
    feasibility: float
    success: bool
    starts: int


def _split_bounds(problem: ProblemInstance) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-coordinate (l1 weight, lower, upper) for separable zero/box/l1 terms."""
    weights, lows, highs = [], [], []
    for term, dim in zip(problem.prox_terms, problem.structure.dims):
        if term.kind not in ("zero", "box", "l1"):
            raise ParameterError(f"trusted_solve handles zero, box and l1 terms, got {term.kind}")
        lo, hi = term.bounds
        weights.append(np.full(dim, term.params.get("w", 0.0) if term.kind == "l1" else 0.0))
        lows.append(np.broadcast_to(np.asarray(lo, dtype=float), (dim,)))
        highs.append(np.broadcast_to(np.asarray(hi, dtype=float), (dim,)))
    return np.concatenate(weights), np.concatenate(lows), np.concatenate(highs)


def trusted_solve(problem: ProblemInstance, starts: int = 5, seed: int = 0,
                  feasibility_tol: float = 1e-6) -> TrustedSolution:
    """Multistart SLSQP on the split x = u - v (u, v >= 0), which makes the l1 part smooth.

    The first start is x0; the rest are uniform in the box. Returns the best
    feasible local solution found.
    """
    w, lo, hi = _split_bounds(problem)
    n = problem.structure.n
    rng = np.random.default_rng(seed)

    # u carries the positive part of x, v the negative part
    bounds = ([(max(a, 0.0), max(c, 0.0) if np.isfinite(c) else None) for a, c in zip(lo, hi)]
              + [(max(-c, 0.0), max(-a, 0.0) if np.isfinite(a) else None) for a, c in zip(lo, hi)])

    def fun(z: np.ndarray) -> tuple[float, np.ndarray]:
        u, v = z[:n], z[n:]
        x = u - v
        g = problem.objective.gradient(x)
        return problem.objective.value(x) + float(w @ (u + v)), np.concatenate([g + w, -g + w])

    def h_fun(z: np.ndarray) -> np.ndarray:
        return aggregate_h(problem, z[:n] - z[n:])

    def h_jac(z: np.ndarray) -> np.ndarray:
        J = problem.jacobian(z[:n] - z[n:]).T
        return np.hstack([J, -J])

    lo_eff = np.where(np.isfinite(lo), lo, -1.0)
    hi_eff = np.where(np.isfinite(hi), hi, 1.0)
    candidates = [problem.x0.copy()] + [rng.uniform(lo_eff, hi_eff) for _ in range(max(starts - 1, 0))]

    best: Optional[TrustedSolution] = None
    for x_start in candidates:
        z0 = np.concatenate([np.maximum(x_start, 0.0), np.maximum(-x_start, 0.0)])
        res = minimize(fun, z0, jac=True, method="SLSQP", bounds=bounds,
                       constraints=[{"type": "eq", "fun": h_fun, "jac": h_jac}],
                       options={"ftol": 1e-12, "maxiter": 1000})
        x = np.clip(res.x[:n] - res.x[n:], lo, hi)
        feas = float(np.linalg.norm(aggregate_h(problem, x)))
        value = float(problem.objective_value(x))
        ok = feas <= feasibility_tol
        cand = TrustedSolution(x, value, feas, ok, len(candidates))
        if best is None or _rank(cand) < _rank(best):
            best = cand
    logger.info("trusted solve: value=%.10g feasibility=%.2e", best.value, best.feasibility)
    return best


def _rank(sol: TrustedSolution) -> tuple[bool, float]:
    return (not sol.success, sol.value if sol.success else sol.feasibility)
