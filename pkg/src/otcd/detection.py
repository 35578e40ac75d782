"""OT-based change scoring, three-class labeling, and the cloud pipeline.

The earlier epoch is projected onto the later epoch's support through a
transport plan; each later-epoch point is then scored by the signed
vertical residual between itself and its projection. Positive residuals
mean structure gained (new), negative mean structure lost (demolished).
Target points that no source mass reaches carry a ``+inf`` score: under
mass creation/destruction semantics they are maximal evidence of new
structure. The unsigned 3D projection distance is kept alongside for
diagnostics.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .chunking import ChunkingConfig, ChunkPair, build_chunks, merge_scores
from .io import CLASS_DEMOLISHED, CLASS_NEW, CLASS_UNCHANGED, PointCloud
from .solver import (
    SolverConfig,
    barycentric_projection,
    cost_matrix,
    dense_solve_bytes,
    sinkhorn_balanced,
    sinkhorn_unbalanced,
)

logger = logging.getLogger(__name__)

METHOD_UNBALANCED_OT = "unbalanced_ot"
METHOD_BALANCED_OT = "balanced_ot"
METHOD_NN_BASELINE = "nn_baseline"
METHODS = (METHOD_UNBALANCED_OT, METHOD_BALANCED_OT, METHOD_NN_BASELINE)

UNREACHED_SCORE = np.inf


@dataclass(frozen=True)
class ChangeDetectionConfig:
    """Everything one ``detect_changes`` run needs.

    ``tau`` (meters) thresholds the signed score into classes; ``workers``
    bounds chunk-level parallelism (default: all cores). Chunk results are
    independent of the worker count.
    """

    solver: SolverConfig
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    tau: float = 2.0
    method: str = METHOD_UNBALANCED_OT
    workers: int | None = None

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.workers is not None and self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class ChunkDiagnostics:
    chunk_id: int
    n0: int
    n1: int
    iterations: int
    converged: bool
    wall_ms: float
    peak_bytes_estimate: int

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "n0": self.n0,
            "n1": self.n1,
            "iterations": self.iterations,
            "converged": self.converged,
            "wall_ms": self.wall_ms,
            "peak_bytes_estimate": self.peak_bytes_estimate,
        }


@dataclass
class ChangeMap:
    """Per-target-point change result for a whole cloud.

    ``scores`` are signed vertical residuals in meters (``+inf`` sentinel
    for unreached points); ``classes`` follow the score/tau rule;
    ``distances`` are unsigned 3D projection distances when available.
    """

    scores: np.ndarray
    classes: np.ndarray
    distances: np.ndarray | None = None
    diagnostics: list[ChunkDiagnostics] | None = None

    def __post_init__(self) -> None:
        if len(self.scores) != len(self.classes):
            raise ValueError("scores and classes lengths differ")
        if self.distances is not None and len(self.distances) != len(self.scores):
            raise ValueError("distances length differs from scores")

    def __len__(self) -> int:
        return len(self.scores)


def pointwise_scores(
    projected: np.ndarray,
    reached_mass: np.ndarray,
    X1: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Signed vertical residual and 3D distance of each target point to its
    barycentric projection.

    Rows of ``projected`` that are non-finite (the unreached sentinel of
    :func:`~otcd.solver.barycentric_projection`) or carry no mass score
    ``+inf`` with an ``+inf`` distance.
    """
    projected = np.asarray(projected, dtype=np.float64)
    X1 = np.asarray(X1, dtype=np.float64)
    reached_mass = np.asarray(reached_mass, dtype=np.float64)
    if projected.shape != X1.shape or len(reached_mass) != len(X1):
        raise ValueError(
            f"projection {projected.shape}, mass {reached_mass.shape} and "
            f"targets {X1.shape} do not align"
        )
    unreached = ~np.isfinite(projected).all(axis=1) | (reached_mass <= 0)
    scores = X1[:, 2] - projected[:, 2]
    diff = projected - X1
    distances = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    scores[unreached] = UNREACHED_SCORE
    distances[unreached] = np.inf
    return scores, distances


def classify(scores: np.ndarray, tau: float) -> np.ndarray:
    """Threshold signed scores: ``> tau`` new, ``< -tau`` demolished, else
    unchanged. Total function; the ``+inf`` sentinel lands in class new,
    and a score of exactly ``tau`` stays unchanged."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    scores = np.asarray(scores)
    classes = np.full(scores.shape, CLASS_UNCHANGED, dtype=np.int64)
    classes[scores > tau] = CLASS_NEW
    classes[scores < -tau] = CLASS_DEMOLISHED
    return classes


def _ot_chunk_scores(
    X0c: np.ndarray, X1c: np.ndarray, cfg: ChangeDetectionConfig
) -> tuple[np.ndarray, np.ndarray, int, bool]:
    C = cost_matrix(X0c, X1c)
    if cfg.method == METHOD_UNBALANCED_OT:
        plan = sinkhorn_unbalanced(C, cfg.solver, overwrite_cost=True)
    else:
        plan = sinkhorn_balanced(C, cfg.solver, overwrite_cost=True)
    projected, mass = barycentric_projection(plan, X0c)
    scores, distances = pointwise_scores(projected, mass, X1c)
    return scores, distances, plan.iterations, plan.converged


def _nn_chunk_scores(
    X0c: np.ndarray, X1c: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    distances, idx = cKDTree(X0c).query(X1c, k=1)
    scores = X1c[:, 2] - X0c[idx, 2]
    return scores, distances


def _solve_chunk(
    chunk: ChunkPair,
    pc0: PointCloud,
    pc1: PointCloud,
    cfg: ChangeDetectionConfig,
):
    start = time.perf_counter()
    X1c = pc1.xyz[chunk.target_indices]
    n0, n1 = len(chunk.source_indices), len(chunk.target_indices)
    iterations, converged = 0, True
    if chunk.source_empty:
        # nothing can reach these targets; maximal new-structure evidence
        scores = np.full(n1, UNREACHED_SCORE)
        distances = np.full(n1, np.inf)
    elif cfg.method == METHOD_NN_BASELINE:
        scores, distances = _nn_chunk_scores(pc0.xyz[chunk.source_indices], X1c)
    else:
        scores, distances, iterations, converged = _ot_chunk_scores(
            pc0.xyz[chunk.source_indices], X1c, cfg
        )
    classes = classify(scores, cfg.tau)
    if cfg.method == METHOD_NN_BASELINE or chunk.source_empty:
        peak = 40 * (n0 + n1)
    else:
        peak = dense_solve_bytes(n0, n1, cfg.solver.log_domain)
    diag = ChunkDiagnostics(
        chunk_id=chunk.chunk_id,
        n0=n0,
        n1=n1,
        iterations=iterations,
        converged=converged,
        wall_ms=(time.perf_counter() - start) * 1e3,
        peak_bytes_estimate=peak,
    )
    return chunk, scores, classes, distances, diag


def detect_changes(
    pc0: PointCloud, pc1: PointCloud, cfg: ChangeDetectionConfig
) -> ChangeMap:
    """Run the full pipeline: chunk, solve per chunk, project, score,
    classify, merge.

    Chunks are processed by a bounded thread pool; each chunk is
    self-contained, so the result is independent of the worker count and
    scheduling order. A chunk whose solver did not converge is still scored
    from the last iterate and reported in the diagnostics; strictness is
    the caller's policy.
    """
    if cfg.method == METHOD_UNBALANCED_OT and cfg.solver.rho is None:
        raise ValueError("method unbalanced_ot requires solver.rho")
    chunks = build_chunks(pc0, pc1, cfg.chunking)
    workers = cfg.workers or os.cpu_count() or 1
    if workers == 1 or len(chunks) == 1:
        results = [_solve_chunk(c, pc0, pc1, cfg) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(lambda c: _solve_chunk(c, pc0, pc1, cfg), chunks)
            )
    change_map = merge_scores(
        [(chunk, s, cl, d) for chunk, s, cl, d, _ in results], len(pc1)
    )
    diagnostics = sorted((r[4] for r in results), key=lambda d: d.chunk_id)
    not_converged = sum(1 for d in diagnostics if not d.converged)
    if not_converged:
        logger.warning(
            "%d of %d chunks did not converge within max_iter; scored from "
            "the last iterate",
            not_converged,
            len(diagnostics),
        )
    change_map.diagnostics = diagnostics
    return change_map
