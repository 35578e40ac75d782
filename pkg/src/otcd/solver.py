"""Dense entropic optimal transport between point sets.

Solves, for a nonnegative cost matrix ``C`` and uniform marginals
``mu0 = 1/n0``, ``mu1 = 1/n1``:

* balanced: ``min <P, C> + epsilon * sum(P * (log P - 1))`` subject to
  ``P 1 = mu0`` and ``P^T 1 = mu1``, by Sinkhorn scaling;
* semi-relaxed unbalanced: the target constraint ``P^T 1 = mu1`` stays hard
  while the source constraint is replaced by a penalty
  ``rho * KL(P 1 || mu0)``, letting the plan create or destroy source mass.
  The scaling update for the source side is damped by the exponent
  ``rho / (rho + epsilon)``; the target update stays exact.

Both solvers run either in the scaling domain (fast, can underflow for
small epsilon) or in the log domain (stable; the default). The log-domain
path anneals epsilon geometrically with warm-started potentials, which cuts
iteration counts by an order of magnitude when epsilon sits far below the
cost scale, and it streams over row blocks so its workspace stays bounded
for large chunks. An exact linear-programming oracle for tiny instances
and the barycentric projection of a plan onto the target support live here
too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linprog

# column-mass fraction of a uniform target atom below which a target point
# counts as unreached by the plan
MASS_FLOOR_FRACTION = 1e-3

# workspace for blocked log-domain sweeps
_BLOCK_BYTES_CAP = 256 * 2**20
# refuse allocations that would not leave this fraction of available RAM free
_MEMORY_SAFETY = 0.85

_LP_MAX_CELLS = 400

# cap on the cells used for the epsilon_rel median estimate
_MEDIAN_SAMPLE_CELLS = 1 << 22


class SolverNumericalError(ArithmeticError):
    """The scaling iteration produced non-finite values (typically underflow
    at small epsilon); retry with ``log_domain=True`` or a larger epsilon."""


class SolverResourceError(MemoryError):
    """A dense solve would not fit in available memory."""


@dataclass(frozen=True)
class SolverConfig:
    """Entropic OT solver parameters.

    Exactly one of ``epsilon`` (absolute, squared meters) or
    ``epsilon_rel`` (multiplied by the median cost of the instance at hand)
    must be set. ``rho`` weighs the KL penalty on the source marginal and
    is only consulted by the unbalanced solver. ``tol`` bounds the L1
    marginal violation (balanced) or the L1 drift of the detected source
    marginal between sweeps (unbalanced).
    """

    epsilon: float | None = None
    epsilon_rel: float | None = None
    rho: float | None = None
    max_iter: int = 5000
    tol: float = 1e-6
    log_domain: bool = True

    def __post_init__(self) -> None:
        if (self.epsilon is None) == (self.epsilon_rel is None):
            raise ValueError("set exactly one of epsilon / epsilon_rel")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.epsilon_rel is not None and self.epsilon_rel <= 0:
            raise ValueError("epsilon_rel must be positive")
        if self.rho is not None and not self.rho > 0:
            raise ValueError("rho must be positive (or math.inf)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")

    def resolved(self, C: np.ndarray) -> "SolverConfig":
        """Concrete config for one instance: epsilon_rel * median(C).

        ``np.median`` sorts a copy, which would double the footprint of a
        large chunk, so matrices beyond ~4M cells use the median of a
        deterministic strided subsample instead (relative error well under
        a percent, irrelevant at the accuracy epsilon_rel is chosen with).
        """
        if self.epsilon is not None:
            return self
        flat = C.ravel()
        if flat.size > _MEDIAN_SAMPLE_CELLS:
            flat = flat[:: flat.size // _MEDIAN_SAMPLE_CELLS + 1]
        eps = float(self.epsilon_rel * np.median(flat))
        if not eps > 0:
            raise ValueError(
                f"epsilon_rel={self.epsilon_rel} resolved to {eps}; "
                "the cost matrix median is not positive"
            )
        return replace(self, epsilon=eps, epsilon_rel=None)


@dataclass
class TransportPlan:
    """Dense coupling between a source and a target chunk.

    Marginals are recomputed from the coupling on every access, so they can
    never go stale.
    """

    coupling: np.ndarray
    converged: bool
    iterations: int

    @property
    def row_marginal(self) -> np.ndarray:
        return self.coupling.sum(axis=1)

    @property
    def col_marginal(self) -> np.ndarray:
        return self.coupling.sum(axis=0)


def _available_memory_bytes() -> int | None:
    try:
        with open("/proc/meminfo") as fh:
            for line in fh:
                if line.startswith("MemAvailable:"):
                    return int(line.split()[1]) * 1024
    except OSError:
        pass
    return None


def _check_allocation(n_bytes: int, what: str) -> None:
    avail = _available_memory_bytes()
    if avail is not None and n_bytes > _MEMORY_SAFETY * avail:
        raise SolverResourceError(
            f"{what} needs {n_bytes / 2**30:.2f} GiB but only "
            f"{avail / 2**30:.2f} GiB of memory is available; reduce the "
            "chunk point cap or solve on a larger machine"
        )


def dense_solve_bytes(n0: int, n1: int, log_domain: bool = True) -> int:
    """Estimated peak bytes for one dense solve including the cost matrix."""
    full = 8 * n0 * n1
    work = min(full, _BLOCK_BYTES_CAP) if log_domain else full
    return full + work


def cost_matrix(X0: np.ndarray, X1: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, shape (n0, n1).

    Point sets are centered jointly before the product expansion so that
    survey-scale absolute coordinates do not lose precision; squared
    distances are translation invariant, so the result is unchanged.
    """
    X0 = np.asarray(X0, dtype=np.float64)
    X1 = np.asarray(X1, dtype=np.float64)
    if X0.ndim != 2 or X1.ndim != 2 or X0.shape[1] != X1.shape[1]:
        raise ValueError(f"incompatible point sets {X0.shape} and {X1.shape}")
    if len(X0) == 0 or len(X1) == 0:
        raise ValueError("point sets must be non-empty")
    if not (np.isfinite(X0).all() and np.isfinite(X1).all()):
        raise ValueError("points must be finite")
    _check_allocation(8 * len(X0) * len(X1), f"{len(X0)}x{len(X1)} cost matrix")
    center = 0.5 * (X0.mean(axis=0) + X1.mean(axis=0))
    A = X0 - center
    B = X1 - center
    try:
        C = A @ B.T
    except MemoryError as exc:
        raise SolverResourceError(str(exc)) from None
    C *= -2.0
    C += (A * A).sum(axis=1)[:, None]
    C += (B * B).sum(axis=1)[None, :]
    np.maximum(C, 0.0, out=C)
    return C


class _LogKernel:
    """Blocked log-sum-exp sweeps over ``-C/eps`` without materializing it."""

    def __init__(self, C: np.ndarray, eps: float):
        self.C = C
        self.scale = -1.0 / eps
        n0, n1 = C.shape
        rows = max(1, min(n0, _BLOCK_BYTES_CAP // (8 * n1)))
        self.block = rows
        self.single = rows >= n0
        try:
            self._buf = np.empty((rows, n1))
        except MemoryError as exc:
            raise SolverResourceError(str(exc)) from None

    def set_eps(self, eps: float) -> None:
        self.scale = -1.0 / eps

    def _load(self, lo: int, hi: int) -> np.ndarray:
        W = self._buf[: hi - lo]
        np.multiply(self.C[lo:hi], self.scale, out=W)
        return W

    def lse_rows(self, beta: np.ndarray) -> np.ndarray:
        """out[i] = log sum_j exp(-C[i,j]/eps + beta[j])"""
        n0 = self.C.shape[0]
        out = np.empty(n0)
        for lo in range(0, n0, self.block):
            hi = min(lo + self.block, n0)
            W = self._load(lo, hi)
            W += beta[None, :]
            m = W.max(axis=1)
            W -= m[:, None]
            np.exp(W, out=W)
            s = W.sum(axis=1)
            out[lo:hi] = np.log(s)
            out[lo:hi] += m
        return out

    def lse_cols(self, alpha: np.ndarray) -> np.ndarray:
        """out[j] = log sum_i exp(-C[i,j]/eps + alpha[i])"""
        n0, n1 = self.C.shape
        if self.single:
            W = self._load(0, n0)
            W += alpha[:, None]
            m = W.max(axis=0)
            W -= m[None, :]
            np.exp(W, out=W)
            return m + np.log(W.sum(axis=0))
        m = np.full(n1, -np.inf)
        for lo in range(0, n0, self.block):
            hi = min(lo + self.block, n0)
            W = self._load(lo, hi)
            W += alpha[lo:hi, None]
            np.maximum(m, W.max(axis=0), out=m)
        acc = np.zeros(n1)
        for lo in range(0, n0, self.block):
            hi = min(lo + self.block, n0)
            W = self._load(lo, hi)
            W += alpha[lo:hi, None]
            W -= m[None, :]
            np.exp(W, out=W)
            acc += W.sum(axis=0)
        return m + np.log(acc)

    def coupling(self, alpha: np.ndarray, beta: np.ndarray, overwrite: bool) -> np.ndarray:
        """P = exp(-C/eps + alpha[:, None] + beta[None, :])"""
        n0 = self.C.shape[0]
        if overwrite:
            out = self.C
        else:
            _check_allocation(8 * self.C.size, "materializing the coupling")
            try:
                out = np.empty_like(self.C)
            except MemoryError as exc:
                raise SolverResourceError(str(exc)) from None
        for lo in range(0, n0, self.block):
            hi = min(lo + self.block, n0)
            blk = out[lo:hi]
            if not overwrite:
                blk[...] = self.C[lo:hi]
            blk *= self.scale
            blk += alpha[lo:hi, None]
            blk += beta[None, :]
            np.exp(blk, out=blk)
        return out


def _validate_cost(C: np.ndarray) -> np.ndarray:
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.size == 0:
        raise ValueError(f"cost matrix must be 2D and non-empty, got {C.shape}")
    # min/max reductions propagate NaN and catch +-inf without allocating
    # elementwise temporaries, which matters for multi-GiB chunks
    lo, hi = float(C.min()), float(C.max())
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo < 0:
        raise ValueError("cost entries must be finite and nonnegative")
    return C


def _epsilon_schedule(eps: float, c_max: float) -> list[float]:
    """Geometric annealing from a quarter of the cost range down to ``eps``.

    Warm-starting the potentials through decreasing epsilons cuts the
    iteration count by an order of magnitude when ``eps`` is far below the
    cost scale; every stage solves the same problem family, so the final
    stage is plain Sinkhorn at the target epsilon.
    """
    stages: list[float] = []
    e = c_max / 4.0
    while e > 4.0 * eps:
        stages.append(e)
        e *= 0.25
    stages.append(eps)
    return stages


# loose stopping gap for intermediate annealing stages; only the final
# stage runs to the configured tolerance
_STAGE_TOL = 1e-3
_STAGE_SWEEPS = 100


def _sinkhorn_log(
    C: np.ndarray,
    eps: float,
    rho: float | None,
    max_iter: int,
    tol: float,
    overwrite_cost: bool,
) -> TransportPlan:
    n0, n1 = C.shape
    mu0 = 1.0 / n0
    log_mu0 = -math.log(n0)
    log_mu1 = -math.log(n1)
    kernel = _LogKernel(C, eps)
    alpha = np.zeros(n0)
    balanced = rho is None
    converged = False
    total_sweeps = 0
    for stage_eps in _epsilon_schedule(eps, float(C.max())):
        final = stage_eps == eps
        kernel.set_eps(stage_eps)
        damping = 1.0 if balanced else rho / (rho + stage_eps)
        stage_tol = tol if final else max(tol, _STAGE_TOL)
        budget = max(0, max_iter - total_sweeps)
        if not final:
            budget = min(_STAGE_SWEEPS, budget)
        prev_row = None
        for _ in range(budget):
            total_sweeps += 1
            beta = log_mu1 - kernel.lse_cols(alpha)  # target marginal now exact
            lse_r = kernel.lse_rows(beta)
            row = np.exp(alpha + lse_r)
            if balanced:
                gap = float(np.abs(row - mu0).sum())
            elif prev_row is None:
                gap = math.inf
            else:
                gap = float(np.abs(row - prev_row).sum())
            if math.isnan(gap):
                raise SolverNumericalError(
                    "non-finite values during Sinkhorn iteration; increase epsilon"
                )
            if gap <= stage_tol:
                converged = final
                break
            prev_row = row
            alpha = damping * (log_mu0 - lse_r)
    # materialize at the target epsilon with a freshly fitted target scaling,
    # so the returned plan is a valid iterate even on early exhaustion
    kernel.set_eps(eps)
    beta = log_mu1 - kernel.lse_cols(alpha)
    P = kernel.coupling(alpha, beta, overwrite_cost)
    return TransportPlan(coupling=P, converged=converged, iterations=total_sweeps)


def _sinkhorn_scaling(
    C: np.ndarray,
    eps: float,
    damping: float,
    max_iter: int,
    tol: float,
    overwrite_cost: bool,
) -> TransportPlan:
    n0, n1 = C.shape
    mu0 = 1.0 / n0
    mu1 = 1.0 / n1
    if overwrite_cost:
        K = C
        K *= -1.0 / eps
    else:
        _check_allocation(8 * C.size, "materializing the Gibbs kernel")
        K = C * (-1.0 / eps)
    np.exp(K, out=K)
    alpha_u = np.ones(n0)
    v = np.ones(n1)
    balanced = damping == 1.0
    prev_row = None
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        Ktu = K.T @ alpha_u
        if not np.isfinite(Ktu).all() or (Ktu == 0).any():
            raise SolverNumericalError(
                "underflow in the scaling iteration; enable log_domain or "
                "increase epsilon"
            )
        v = mu1 / Ktu
        Kv = K @ v
        if not np.isfinite(Kv).all() or (Kv == 0).any():
            raise SolverNumericalError(
                "underflow in the scaling iteration; enable log_domain or "
                "increase epsilon"
            )
        row = alpha_u * Kv
        if balanced:
            gap = float(np.abs(row - mu0).sum())
        elif prev_row is None:
            gap = math.inf
        else:
            gap = float(np.abs(row - prev_row).sum())
        if math.isnan(gap):
            raise SolverNumericalError(
                "non-finite values during Sinkhorn iteration; enable "
                "log_domain or increase epsilon"
            )
        if gap <= tol:
            converged = True
            break
        prev_row = row
        ratio = mu0 / Kv
        alpha_u = ratio if balanced else ratio**damping
    K *= alpha_u[:, None]
    K *= v[None, :]
    return TransportPlan(coupling=K, converged=converged, iterations=iterations)


def sinkhorn_balanced(
    C: np.ndarray, cfg: SolverConfig, *, overwrite_cost: bool = False
) -> TransportPlan:
    """Entropy-regularized OT with both marginal constraints hard.

    On ``converged=True`` the returned plan violates each uniform marginal
    by at most ``cfg.tol`` in L1 (the target one by construction of the
    final update). Non-convergence within ``max_iter`` returns the last
    iterate with ``converged=False``; the caller decides.

    With ``overwrite_cost`` the coupling is materialized into the buffer of
    ``C``, halving peak memory; ``C`` is destroyed.
    """
    C = _validate_cost(C)
    cfg = cfg.resolved(C)
    if cfg.log_domain:
        return _sinkhorn_log(C, cfg.epsilon, None, cfg.max_iter, cfg.tol, overwrite_cost)
    return _sinkhorn_scaling(C, cfg.epsilon, 1.0, cfg.max_iter, cfg.tol, overwrite_cost)


def sinkhorn_unbalanced(
    C: np.ndarray, cfg: SolverConfig, *, overwrite_cost: bool = False
) -> TransportPlan:
    """Semi-relaxed unbalanced OT: hard target marginal, KL-penalized source.

    The source scaling update is damped by ``rho / (rho + epsilon)``, which
    is exactly the generalized-Sinkhorn update for the objective in the
    module docstring. The returned plan's column marginal equals the
    uniform target marginal (to rounding); its row marginal is free, and
    its deviation from uniform is the detected mass creation/destruction.

    Convergence requires the L1 drift of the row marginal between
    successive sweeps to fall below ``cfg.tol``; stopping on the row
    marginal rather than on the raw potentials matters because the
    constant-offset mode of the potentials is invisible in the plan and
    settles very slowly for large rho.
    """
    if cfg.rho is None:
        raise ValueError("sinkhorn_unbalanced requires cfg.rho")
    if math.isinf(cfg.rho):
        raise ValueError("rho=inf is the balanced problem; use sinkhorn_balanced")
    C = _validate_cost(C)
    cfg = cfg.resolved(C)
    if cfg.log_domain:
        return _sinkhorn_log(
            C, cfg.epsilon, cfg.rho, cfg.max_iter, cfg.tol, overwrite_cost
        )
    damping = cfg.rho / (cfg.rho + cfg.epsilon)
    return _sinkhorn_scaling(
        C, cfg.epsilon, damping, cfg.max_iter, cfg.tol, overwrite_cost
    )


def lp_exact_small(
    C: np.ndarray,
    mu0: np.ndarray | None = None,
    mu1: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Exact un-regularized optimum ``min <P, C>`` over the transport
    polytope, for test-oracle use on instances with at most 400 cells.

    Marginals default to uniform. Solved as an explicit LP (HiGHS).
    """
    C = _validate_cost(C)
    n0, n1 = C.shape
    if n0 * n1 > _LP_MAX_CELLS:
        raise ValueError(
            f"instance {n0}x{n1} exceeds the {_LP_MAX_CELLS}-cell oracle limit"
        )
    mu0 = np.full(n0, 1.0 / n0) if mu0 is None else np.asarray(mu0, dtype=np.float64)
    mu1 = np.full(n1, 1.0 / n1) if mu1 is None else np.asarray(mu1, dtype=np.float64)
    if mu0.shape != (n0,) or mu1.shape != (n1,):
        raise ValueError("marginal shapes do not match the cost matrix")
    if (mu0 < 0).any() or (mu1 < 0).any():
        raise ValueError("marginals must be nonnegative")
    if not math.isclose(mu0.sum(), mu1.sum(), rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError("marginals must carry equal total mass")

    A_eq = np.zeros((n0 + n1, n0 * n1))
    for i in range(n0):
        A_eq[i, i * n1 : (i + 1) * n1] = 1.0
    for j in range(n1):
        A_eq[n0 + j, j::n1] = 1.0
    b_eq = np.concatenate([mu0, mu1])
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"LP oracle failed: {res.message}")
    return float(res.fun), res.x.reshape(n0, n1)


def barycentric_projection(
    plan: TransportPlan | np.ndarray,
    X0: np.ndarray,
    mass_floor: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Project the source points onto the target support through the plan.

    Each target atom j maps to the coupling-weighted mean of the source
    points, ``sum_i P[i,j] X0[i] / sum_i P[i,j]``. Targets whose column
    mass is at or below ``mass_floor`` (default ``1e-3 / n1``, a 0.1%
    sliver of a uniform target atom) are unreached: their projection row is
    NaN and callers must treat them via the returned mass vector.

    Returns ``(projected_points, column_mass)``.
    """
    P = plan.coupling if isinstance(plan, TransportPlan) else np.asarray(plan)
    X0 = np.asarray(X0, dtype=np.float64)
    if P.ndim != 2 or X0.ndim != 2 or P.shape[0] != X0.shape[0]:
        raise ValueError(
            f"plan with {P.shape[0]} rows does not match {X0.shape[0]} source points"
        )
    n1 = P.shape[1]
    if mass_floor is None:
        mass_floor = MASS_FLOOR_FRACTION / n1
    mass = P.sum(axis=0)
    reached = mass > mass_floor
    projected = np.full((n1, X0.shape[1]), np.nan)
    projected[reached] = (P.T[reached] @ X0) / mass[reached, None]
    return projected, mass
