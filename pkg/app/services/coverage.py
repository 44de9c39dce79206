"""
Rejection statistics for the sampling ranges.

Each terminal sample is flowed backward to a fixed time-to-go with the bare
canonical equations (no variational matrices, no conjugate monitor), and the
start states falling inside a target box are counted. The sampling
coordinates of the hits suggest tighter ranges.
"""
from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np

from app.exceptions import ConfigError, MecpError
from app.models.config import IntegratorConfig, SamplingSpec
from app.models.dataset import CoverageReport
from app.services.dataset import sampling_points
from app.services.extremals import TerminalSample, backward_rhs
from app.services.problem_core import PhasePoint, ProblemDefinition
from app.services.propagator import propagate

logger = logging.getLogger(__name__)

Box = Sequence[Tuple[float, float]]


def start_state(prob: ProblemDefinition, sample: TerminalSample, t_go: float, cfg: IntegratorConfig) -> np.ndarray:
    """
    The state ``t_go`` before arrival on the extremal through ``sample``.

    Raises:
        PropagationError: if the backward flow fails before ``t_go``.
    """
    n = prob.state_dim

    def rhs(_sigma: float, z: np.ndarray) -> np.ndarray:
        return backward_rhs(prob, PhasePoint.from_vector(z, n))

    result = propagate(rhs, np.concatenate([sample.x_f, sample.p_f]), (0.0, t_go), cfg)
    return result.final_state[:n]


def in_box(x: np.ndarray, box: Box) -> bool:
    return all(lo <= v <= hi for v, (lo, hi) in zip(x, box))


def _widened(points: np.ndarray, margin: float) -> List[List[float]]:
    lo, hi = points.min(axis=0), points.max(axis=0)
    pad = margin * (hi - lo)
    return [[float(a), float(b)] for a, b in zip(lo - pad, hi + pad)]


def coverage(
    prob: ProblemDefinition,
    spec: SamplingSpec,
    box: Box,
    t_go: Optional[float],
    cfg: IntegratorConfig,
    margin: float = 0.1,
) -> CoverageReport:
    """
    Count the start states at ``t_go`` (default ``t_f``) that fall inside ``box``.

    Raises:
        ConfigError: if the box does not have one range per state coordinate.
    """
    if len(box) != prob.state_dim:
        raise ConfigError(f"coverage box: expected {prob.state_dim} ranges, got {len(box)}")
    t_go = prob.t_f if t_go is None else float(t_go)
    points = sampling_points(prob, spec)
    k = prob.free_dim
    logger.info(f"Coverage of {prob.problem_id}: {len(points)} samples flowed back {t_go:g}")

    failed = 0
    hits = []
    for i, point in enumerate(points):
        try:
            sample = TerminalSample.from_parameters(prob, point[:k], point[k:])
            x0 = start_state(prob, sample, t_go, cfg)
        except MecpError as e:
            logger.debug(f"Sample {i} failed: {e.message}")
            failed += 1
            continue
        if in_box(x0, box):
            hits.append(point)

    report = CoverageReport(problem_id=prob.problem_id, t_go=t_go, samples=len(points), failed=failed, hits=len(hits))
    if hits:
        hits = np.array(hits)
        if k:
            report.suggested_free_ranges = _widened(hits[:, :k], margin)
        report.suggested_multiplier_ranges = _widened(hits[:, k:], margin)
    logger.info(f"Coverage of {prob.problem_id}: {report.hits}/{report.samples} hits, {failed} failed")
    return report
