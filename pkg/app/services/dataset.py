"""
Dataset generation: sample the terminal manifold, build the truncated
extremals and flatten them into ``(t_g, x, u)`` records.

Records also carry the costate ``p`` and the index of the extremal they came
from; the trainer ignores both, the verification oracle uses them.
"""
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import List, Optional, Tuple, Union
import logging

import numpy as np
from pydantic import ValidationError

from app import __version__
from app.exceptions import (
    ConfigError,
    DatasetParseError,
    EmptyDatasetError,
    MecpError,
    SamplingError,
)
from app.models.config import IntegratorConfig, SamplingSpec
from app.models.dataset import DATASET_FORMAT, DatasetMeta, ExtremalSummary
from app.services.extremals import ExtremalTrajectory, TerminalSample, build_extremal
from app.services.problem_core import ProblemDefinition
from app.services.problems import build_problem
from app.services.workers import run_ordered
from app import storage

logger = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Flattened records; row ``k`` of every array is one record."""

    meta: DatasetMeta
    t_g: np.ndarray
    x: np.ndarray
    u: np.ndarray
    p: np.ndarray
    extremal_id: np.ndarray

    def __len__(self) -> int:
        return len(self.t_g)

    @property
    def features(self) -> np.ndarray:
        """Network inputs ``[t_g, x]``."""
        return np.column_stack([self.t_g, self.x])

    @property
    def targets(self) -> np.ndarray:
        return self.u

    def equals(self, other: "Dataset") -> bool:
        return (
            self.meta == other.meta
            and all(
                np.array_equal(a, b)
                for a, b in zip(
                    (self.t_g, self.x, self.u, self.p, self.extremal_id),
                    (other.t_g, other.x, other.u, other.p, other.extremal_id),
                )
            )
        )


# --- Sampling ---

def _sampling_bounds(prob: ProblemDefinition, spec: SamplingSpec) -> np.ndarray:
    if len(spec.free_state_ranges) != prob.free_dim:
        raise ConfigError(
            f"sampling.free_state_ranges: {prob.problem_id} needs {prob.free_dim} ranges, got {len(spec.free_state_ranges)}"
        )
    if len(spec.multiplier_ranges) != prob.constraint_dim:
        raise ConfigError(
            f"sampling.multiplier_ranges: {prob.problem_id} needs {prob.constraint_dim} ranges, got {len(spec.multiplier_ranges)}"
        )
    return np.array(list(spec.free_state_ranges) + list(spec.multiplier_ranges), dtype=float).reshape(-1, 2)


def _grid_points(bounds: np.ndarray, n_samples: int) -> np.ndarray:
    d = len(bounds)
    per_axis = int(round(n_samples ** (1.0 / d)))
    if per_axis ** d != n_samples:
        raise ConfigError(f"sampling.n_samples: uniform_grid needs a perfect {d}-th power, got {n_samples}")
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in bounds]
    return np.array(list(product(*axes)), dtype=float)


def sampling_points(prob: ProblemDefinition, spec: SamplingSpec) -> np.ndarray:
    """Rows of free terminal coordinates followed by multipliers."""
    bounds = _sampling_bounds(prob, spec)
    if spec.mode == "uniform_grid":
        return _grid_points(bounds, spec.n_samples)
    rng = np.random.default_rng(spec.seed)
    return rng.uniform(bounds[:, 0], bounds[:, 1], size=(spec.n_samples, len(bounds)))


def sample_terminal_manifold(prob: ProblemDefinition, spec: SamplingSpec) -> List[TerminalSample]:
    """
    Draw ``spec.n_samples`` terminal samples from the terminal Lagrangian manifold.

    Sampling coordinates are the free terminal-state coordinates followed by the
    multipliers. ``uniform_grid`` lays a tensor lattice over the ranges,
    ``uniform_random`` draws i.i.d. uniform points from ``numpy.random.default_rng(seed)``.

    Raises:
        ConfigError: if the ranges do not match the problem dimensions.
        SamplingError: if a sample leaves the state domain (carries the sample index).
    """
    points = sampling_points(prob, spec)
    samples = []
    k = prob.free_dim
    for i, point in enumerate(points):
        try:
            samples.append(TerminalSample.from_parameters(prob, point[:k], point[k:]))
        except SamplingError as e:
            raise SamplingError(e.message, index=i) from e
    return samples


# --- Generation ---

@dataclass
class _BuildJob:
    problem_id: str
    params: dict
    index: int
    sample: TerminalSample
    cfg: IntegratorConfig
    dt: float


Outcome = Tuple[int, Optional[ExtremalTrajectory], Optional[str]]


def _build_one(prob: ProblemDefinition, index: int, sample: TerminalSample, cfg: IntegratorConfig, dt: float) -> Outcome:
    try:
        traj = build_extremal(prob, sample, cfg, grid_spacing=dt)
    except MecpError as e:
        return index, None, f"{type(e).__name__}: {e.message}"
    values = (traj.states, traj.costates, traj.controls)
    if not all(np.all(np.isfinite(v)) for v in values):
        return index, None, "non-finite sample values"
    return index, traj, None


def _run_job(job: _BuildJob) -> Outcome:
    # worker processes rebuild the problem; compiled callables are not picklable
    prob = build_problem(job.problem_id, job.params)
    return _build_one(prob, job.index, job.sample, job.cfg, job.dt)


def generate(
    prob: ProblemDefinition,
    spec: SamplingSpec,
    cfg: IntegratorConfig,
    workers: int = 1,
) -> Dataset:
    """
    Build one extremal per terminal sample and flatten them into records at
    ``t_g = dt, 2 dt, ...`` up to each extremal's horizon.

    Failed extremals are logged and skipped. Records are ordered by sample
    index, whatever the worker count.

    Raises:
        EmptyDatasetError: if no extremal could be built.
    """
    samples = sample_terminal_manifold(prob, spec)
    logger.info(f"Generating {prob.problem_id} dataset: {len(samples)} extremals, dt={spec.dt:g}, workers={workers}")

    if workers > 1:
        jobs = [_BuildJob(prob.problem_id, dict(prob.params), i, s, cfg, spec.dt) for i, s in enumerate(samples)]
        outcomes = run_ordered(_run_job, jobs, workers)
    else:
        outcomes = [_build_one(prob, i, s, cfg, spec.dt) for i, s in enumerate(samples)]

    summaries: List[ExtremalSummary] = []
    blocks = []
    for index, traj, error in outcomes:
        if traj is None:
            logger.warning(f"Skipping extremal {index}: {error}")
            summaries.append(ExtremalSummary(index=index, error=error))
            continue
        summaries.append(ExtremalSummary(
            index=index, horizon=traj.horizon, conjugate_time=traj.conjugate_time, records=len(traj),
        ))
        blocks.append((index, traj))

    if not blocks:
        raise EmptyDatasetError(f"{prob.problem_id}: none of the {len(samples)} extremals could be built")

    n, m = prob.state_dim, prob.control_dim
    meta = DatasetMeta(
        problem_id=prob.problem_id,
        state_dim=n,
        control_dim=m,
        constraint_dim=prob.constraint_dim,
        t_f=prob.t_f,
        problem_params=dict(prob.params),
        n_samples=spec.n_samples,
        dt=spec.dt,
        seed=spec.seed,
        sampling_mode=spec.mode,
        generator_version=__version__,
        extremals=summaries,
    )
    dataset = Dataset(
        meta=meta,
        t_g=np.concatenate([t.sigmas for _, t in blocks]),
        x=np.vstack([t.states.reshape(-1, n) for _, t in blocks]),
        u=np.vstack([t.controls.reshape(-1, m) for _, t in blocks]),
        p=np.vstack([t.costates.reshape(-1, n) for _, t in blocks]),
        extremal_id=np.concatenate([np.full(len(t), i, dtype=int) for i, t in blocks]),
    )
    logger.info(
        f"Generated {len(dataset)} records from {meta.n_built} extremals "
        f"({meta.n_failed} failed, {meta.n_conjugate_truncated} truncated at a conjugate time)"
    )
    return dataset


# --- File format ---

def column_names(n: int, m: int) -> List[str]:
    return (["t_g"] + [f"x{i}" for i in range(1, n + 1)] + [f"u{i}" for i in range(1, m + 1)]
            + [f"p{i}" for i in range(1, n + 1)] + ["extremal_id"])


def dataset_to_text(ds: Dataset) -> str:
    """Serialize to the CSV dataset format; floats keep 17 significant digits."""
    n, m = ds.meta.state_dim, ds.meta.control_dim
    lines = [f"# {DATASET_FORMAT}", "# " + ds.meta.model_dump_json(), ",".join(column_names(n, m))]
    for k in range(len(ds)):
        values = [ds.t_g[k], *ds.x[k], *ds.u[k], *ds.p[k]]
        lines.append(",".join(format(float(v), ".17g") for v in values) + f",{int(ds.extremal_id[k])}")
    return "\n".join(lines) + "\n"


def write_dataset(ds: Dataset, path: Union[str, Path]) -> Path:
    return storage.atomic_write_text(path, dataset_to_text(ds))


def dataset_from_text(text: str) -> Dataset:
    """
    Parse the CSV dataset format.

    Raises:
        DatasetParseError: with the 1-based line number of the first problem.
    """
    lines = text.splitlines()
    if not lines or lines[0].strip() != f"# {DATASET_FORMAT}":
        raise DatasetParseError(f"expected '# {DATASET_FORMAT}'", 1)
    if len(lines) < 2 or not lines[1].startswith("# "):
        raise DatasetParseError("missing metadata line", 2)
    try:
        meta = DatasetMeta.model_validate_json(lines[1][2:])
    except ValidationError as e:
        raise DatasetParseError(f"invalid metadata: {e.errors()[0]['msg']}", 2) from e

    n, m = meta.state_dim, meta.control_dim
    expected = column_names(n, m)
    if len(lines) < 3 or [c.strip() for c in lines[2].split(",")] != expected:
        raise DatasetParseError(f"column header does not match n={n}, m={m}", 3)

    width = len(expected)
    rows = []
    ids = []
    for line_no, line in enumerate(lines[3:], start=4):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != width:
            raise DatasetParseError(f"expected {width} columns, got {len(fields)}", line_no)
        try:
            values = [float(v) for v in fields[:-1]]
            ids.append(int(fields[-1]))
        except ValueError as e:
            raise DatasetParseError(str(e), line_no) from e
        if not all(np.isfinite(values)):
            raise DatasetParseError("non-finite value", line_no)
        rows.append(values)

    data = np.array(rows, dtype=float).reshape(-1, width - 1)
    return Dataset(
        meta=meta,
        t_g=data[:, 0].copy(),
        x=data[:, 1:1 + n].copy(),
        u=data[:, 1 + n:1 + n + m].copy(),
        p=data[:, 1 + n + m:].copy(),
        extremal_id=np.array(ids, dtype=int),
    )


def read_dataset(path: Union[str, Path]) -> Dataset:
    """
    Raises:
        ArtifactNotFoundError: if the file does not exist.
        DatasetParseError: if the file is not UTF-8 text or is malformed.
    """
    try:
        text = storage.read_text(path, "dataset")
    except UnicodeDecodeError as e:
        raise DatasetParseError(f"not UTF-8 text ({e.reason})", line=e.object[:e.start].count(b"\n") + 1) from e
    return dataset_from_text(text)


def dataset_problem(ds: Dataset) -> ProblemDefinition:
    """Rebuild the problem a dataset was generated for."""
    return build_problem(ds.meta.problem_id, ds.meta.problem_params)
