"""
Command-line entry point: ``python -m app.cli <subcommand> ...``.

Exit codes: 0 success, 2 usage, config or missing-file errors, 3 numerical failures.
"""
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
import argparse
import logging
import os
import sys

import numpy as np

from app import __version__, storage
from app.config import load_run_config, settings, shipped_config_path
from app.exceptions import ConfigError, MecpError
from app.models.config import IntegratorConfig, RunConfig, SimulationSection, TrainConfig, VerifySection
from app.models.dataset import DatasetSummary
from app.models.manifest import RunManifest
from app.models.simulation import ScenarioReport
from app.services import coverage as coverage_service
from app.services import dataset as dataset_service
from app.services import mlp as mlp_service
from app.services import simulation as sim_service
from app.services.extremals import TerminalSample, build_extremal
from app.services.oracle import shoot
from app.services.problems import build_problem
from app.services.verification import convergence_study, verify_dataset

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


# --- Helper Functions ---

def _load_config(args) -> Tuple[RunConfig, Path]:
    problem = getattr(args, "problem", None)
    if args.config:
        path = Path(args.config)
    elif problem:
        path = shipped_config_path(problem)
    else:
        raise ConfigError("either --config or --problem is required")
    cfg = load_run_config(path)
    if problem and cfg.problem.id != problem:
        raise ConfigError(f"problem.id: config is for '{cfg.problem.id}', not '{problem}'")
    return cfg, path


def _problem_from_config(cfg: RunConfig):
    return build_problem(cfg.problem.id, cfg.problem.params)


def parse_arch(spec: str) -> List[int]:
    """``"3x30"`` or ``"30,30,30"`` to a list of hidden widths; ``""`` means no hidden layer."""
    spec = spec.strip().lower()
    if not spec:
        return []
    try:
        if "x" in spec:
            depth, width = spec.split("x", 1)
            return [int(width)] * int(depth)
        return [int(w) for w in spec.split(",")]
    except ValueError as e:
        raise ConfigError(f"--arch: cannot parse '{spec}'") from e


def _floats(text: Optional[str]) -> List[float]:
    if not text:
        return []
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as e:
        raise ConfigError(f"cannot parse '{text}' as a comma-separated list of numbers") from e


def _simulation_section(cfg: RunConfig) -> SimulationSection:
    if cfg.simulation is None:
        raise ConfigError("simulation: section required")
    return cfg.simulation


def _write_trajectory(path: Path, prob, result: sim_service.SimResult) -> Path:
    header = ["t", *prob.state_names, *prob.control_names]
    rows = [[t, *x, *u] for t, x, u in zip(result.times, result.states, result.controls)]
    return storage.write_csv(path, header, rows)


# --- Subcommands ---

def cmd_generate(args) -> Tuple[List[str], Dict[str, object]]:
    cfg, path = _load_config(args)
    if cfg.sampling is None:
        raise ConfigError("sampling: section required for generate")
    spec = cfg.sampling
    if args.seed is not None:
        spec = spec.model_copy(update={"seed": args.seed})
    prob = _problem_from_config(cfg)
    ds = dataset_service.generate(prob, spec, cfg.integrator, workers=args.workers)
    dataset_service.write_dataset(ds, args.out)
    summary = DatasetSummary(
        problem_id=prob.problem_id,
        extremals_built=ds.meta.n_built,
        extremals_failed=ds.meta.n_failed,
        conjugate_truncated=ds.meta.n_conjugate_truncated,
        records=len(ds),
    )
    print(f"{prob.problem_id}: {summary.extremals_built} extremals built, {summary.records} records, "
          f"{summary.conjugate_truncated} truncated at a conjugate time, {summary.extremals_failed} failed")
    return [str(args.out)], summary.model_dump()


def cmd_train(args) -> Tuple[List[str], Dict[str, object]]:
    ds = dataset_service.read_dataset(args.dataset)
    training = TrainConfig()
    if args.config:
        training = load_run_config(args.config).training
    updates = {}
    if args.arch is not None:
        updates["hidden_layers"] = parse_arch(args.arch)
    if args.epochs is not None:
        updates["max_epochs"] = args.epochs
    if args.seed is not None:
        updates["seed"] = args.seed
    training = training.model_copy(update=updates)
    model, log = mlp_service.train(ds, training)
    out = Path(args.out)
    mlp_service.write_model(model, out)
    log_path = out.with_name(out.stem + ".training.csv")
    mlp_service.write_training_log(log, log_path)
    final = log.records[-1].train_mse if log.records else None
    print(f"Trained {model.sizes} for {len(log)} epochs; final normalized MSE "
          f"{'n/a' if final is None else format(final, '.3e')} (converged: {log.converged})")
    return [str(out), str(log_path)], {"epochs": len(log), "final_mse": final, "converged": log.converged}


def cmd_simulate(args) -> Tuple[List[str], Dict[str, object]]:
    cfg, path = _load_config(args)
    section = _simulation_section(cfg)
    prob = _problem_from_config(cfg)
    controller_id = args.controller or section.controller
    model = mlp_service.read_model(args.model) if args.model else None
    controller = sim_service.make_controller(controller_id, prob, model)
    names = args.scenario or list(section.scenarios)
    out_dir = Path(args.out_dir)
    outputs, reports = [], []
    for name in names:
        if name not in section.scenarios:
            raise ConfigError(f"simulation.scenarios: unknown scenario '{name}'")
        sim_cfg = section.sim_config(name, controller_id)
        result = sim_service.run(prob, sim_cfg, controller)
        outputs.append(str(_write_trajectory(out_dir / f"{name}.trajectory.csv", prob, result)))
        report = ScenarioReport(
            scenario=name,
            controller=controller_id,
            terminal_error=result.terminal_error,
            terminal_components=result.terminal_components.tolist(),
            effort=result.effort,
            aborted=result.aborted,
            abort_reason=result.abort_reason,
            arrival_time=result.arrival_time,
            latency_median=result.latency_median,
            latency_max=result.latency_max,
        )
        if args.compare_oracle:
            report.oracle_converged, report.oracle_effort = sim_service.oracle_effort(
                prob, np.asarray(sim_cfg.initial_state, dtype=float), sim_cfg.t_go, cfg.integrator)
        reports.append(report)
        line = (f"{name}: terminal error {result.terminal_error:.4g}, effort {result.effort:.6g}"
                + (" (ABORTED)" if result.aborted else ""))
        if report.oracle_effort is not None:
            line += f", oracle effort {report.oracle_effort:.6g}"
        print(line)
    summary_path = storage.write_json(out_dir / "simulate.summary.json", [r.model_dump() for r in reports])
    outputs.append(str(summary_path))
    return outputs, {"scenarios": names, "aborted": sum(r.aborted for r in reports)}


def cmd_monte_carlo(args) -> Tuple[List[str], Dict[str, object]]:
    cfg, path = _load_config(args)
    section = _simulation_section(cfg)
    prob = _problem_from_config(cfg)
    controller_id = args.controller or section.controller
    model = mlp_service.read_model(args.model) if args.model else None
    tests = args.test or list(cfg.monte_carlo.tests)
    coverage = None
    if args.dataset:
        ds = dataset_service.read_dataset(args.dataset)
        if len(ds):
            coverage = (ds.x.min(axis=0), ds.x.max(axis=0))
    out_dir = Path(args.out_dir)
    outputs, summaries = [], {}
    for name in tests:
        if name not in cfg.monte_carlo.tests:
            raise ConfigError(f"monte_carlo.tests: unknown test '{name}'")
        spec = cfg.monte_carlo.tests[name]
        if args.runs is not None:
            spec = spec.model_copy(update={"n_runs": args.runs})
        if spec.base_scenario not in section.scenarios:
            raise ConfigError(f"monte_carlo.tests.{name}.base_scenario: unknown scenario '{spec.base_scenario}'")
        if coverage is not None:
            sim_service.check_coverage(spec, coverage[0], coverage[1], prob.state_names)
        base = section.sim_config(spec.base_scenario, controller_id)
        result = sim_service.monte_carlo(prob, base, spec, controller_id, model, test=name,
                                         bins=cfg.monte_carlo.histogram_bins, workers=args.workers)
        drawn_keys = sorted({k for r in result.runs for k in r.drawn})
        error_names = [f"error_{i + 1}" for i in range(prob.constraint_dim)]
        rows = [
            [r.run_id, r.terminal_error, *r.terminal_components, r.effort, int(r.aborted),
             "" if r.arrival_offset is None else r.arrival_offset, *[r.drawn.get(k, "") for k in drawn_keys]]
            for r in result.runs
        ]
        outputs.append(str(storage.write_csv(
            out_dir / f"{name}.runs.csv",
            ["run_id", "terminal_error", *error_names, "effort", "aborted", "arrival_offset", *drawn_keys],
            rows,
        )))
        outputs.append(str(storage.write_csv(
            out_dir / f"{name}.trajectories.csv",
            ["run_id", "t", *prob.state_names, *prob.control_names],
            [[traj.run_id, t, *x, *u] for traj in result.trajectories
             for t, x, u in zip(traj.times, traj.states, traj.controls)],
        )))
        for metric, hist in result.histograms.items():
            outputs.append(str(storage.write_csv(
                out_dir / f"{name}.histogram_{metric}.csv", ["bin_left", "bin_right", "count"], hist)))
        outputs.append(str(storage.write_json(out_dir / f"{name}.summary.json", result.summary.model_dump())))
        summaries[name] = result.summary.model_dump()
        s = result.summary
        print(f"{name}: {s.n_runs} runs, {s.n_aborted} aborted, max terminal error "
              f"{'n/a' if s.terminal_error_max is None else format(s.terminal_error_max, '.4g')}")
    return outputs, summaries


def cmd_coverage(args) -> Tuple[List[str], Dict[str, object]]:
    cfg, path = _load_config(args)
    if cfg.sampling is None:
        raise ConfigError("sampling: section required for coverage")
    if args.test not in cfg.monte_carlo.tests:
        raise ConfigError(f"monte_carlo.tests: unknown test '{args.test}'")
    box = cfg.monte_carlo.tests[args.test].state_ranges
    if not box or any(b is None for b in box):
        raise ConfigError(f"monte_carlo.tests.{args.test}.state_ranges: coverage needs a range for every coordinate")
    spec = cfg.sampling
    if args.samples is not None:
        spec = spec.model_copy(update={"n_samples": args.samples})
    prob = _problem_from_config(cfg)
    report = coverage_service.coverage(prob, spec, box, args.t_go, cfg.integrator)
    payload = {**report.model_dump(), "hit_rate": report.hit_rate}
    print(f"{args.test}: {report.hits}/{report.samples} start states inside the box "
          f"({report.hit_rate:.2%}), {report.failed} samples failed")
    out = storage.write_json(args.out, payload)
    return [str(out)], payload


def cmd_conjugate_scan(args) -> Tuple[List[str], Dict[str, object]]:
    cfg, path = _load_config(args)
    prob = _problem_from_config(cfg)
    if args.nu is not None:
        samples = [TerminalSample.from_parameters(prob, _floats(args.free), _floats(args.nu))]
    else:
        if cfg.sampling is None:
            raise ConfigError("sampling: section required unless --nu is given")
        samples = dataset_service.sample_terminal_manifold(prob, cfg.sampling)[:args.count]
    rows, found = [], {}
    for i, sample in enumerate(samples):
        traj = build_extremal(prob, sample, cfg.integrator)
        for (sigma, det), (_, scaled) in zip(traj.det_trace, traj.scaled_det_trace):
            rows.append([i, sigma, det, scaled])
        found[str(i)] = traj.conjugate_time
        print(f"sample {i}: T={traj.horizon:.8g}, conjugate time "
              f"{'none' if traj.conjugate_time is None else format(traj.conjugate_time, '.8g')}")
    out = storage.write_csv(args.out, ["sample", "sigma", "det", "scaled_det"], rows)
    return [str(out)], {"conjugate_times": found}


def cmd_verify(args) -> Tuple[List[str], Dict[str, object]]:
    ds = dataset_service.read_dataset(args.dataset)
    prob = dataset_service.dataset_problem(ds)
    cfg = load_run_config(args.config) if args.config else None
    section = cfg.verify if cfg else VerifySection()
    if args.fraction is not None:
        section = section.model_copy(update={"fraction": args.fraction})
    integrator = cfg.integrator if cfg else IntegratorConfig()
    report = verify_dataset(ds, prob, section, integrator)
    payload = {"verification": report.model_dump(), "pass_rate": report.pass_rate}
    print(f"Verified {report.passed}/{report.checked} records (pass rate {report.pass_rate:.1%})")
    if args.cold_start:
        study = convergence_study(ds, prob, section.cold_start_runs, section.seed, section.tolerance, integrator)
        payload["convergence"] = {**study.model_dump(), "cold_rate": study.cold_rate, "warm_rate": study.warm_rate}
        print(f"Cold-start convergence {study.cold_rate:.1%}, warm-start {study.warm_rate:.1%} over {study.runs} runs")
    out = storage.write_json(args.out, payload)
    if report.passed < report.checked:
        raise _VerificationFailed([str(out)], payload)
    return [str(out)], payload


class _VerificationFailed(MecpError):
    def __init__(self, outputs, payload):
        super().__init__("some records failed verification")
        self.outputs = outputs
        self.payload = payload


def cmd_serve(args) -> Tuple[List[str], Dict[str, object]]:
    import uvicorn

    if args.model:
        os.environ["MODEL_PATH"] = str(Path(args.model).resolve())
        settings.model_path = os.environ["MODEL_PATH"]
    uvicorn.run("app.main:app", host=args.host, port=args.port)
    return [], {}


# --- Parser ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="extremal-guidance", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--log-level", default=None, help="Override LOG_LEVEL.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, problem=True, workers=False):
        if problem:
            p.add_argument("--problem", choices=["glider", "proximity", "double_integrator"])
            p.add_argument("--config", help="YAML run config (defaults to the shipped config of --problem).")
        if workers:
            p.add_argument("--workers", type=int, default=settings.workers, help="Worker processes (env WORKERS).")

    p = sub.add_parser("generate", help="Build extremals and write a dataset.")
    add_common(p, workers=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_generate, out_dir_attr="out")

    p = sub.add_parser("train", help="Train the feedback network on a dataset.")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="Run config whose training section is used.")
    p.add_argument("--arch", help="Hidden layers, e.g. 3x30 or 20,20,20.")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train, out_dir_attr="out")

    p = sub.add_parser("simulate", help="Fly closed-loop scenarios.")
    add_common(p)
    p.add_argument("--model")
    p.add_argument("--controller", choices=["mlp", "shooting", "analytic", "zero"])
    p.add_argument("--scenario", action="append", help="Scenario name; repeat for a salvo (default: all).")
    p.add_argument("--compare-oracle", action="store_true", help="Also report the shooting-oracle effort.")
    p.add_argument("--out-dir", default=settings.output_dir)
    p.set_defaults(handler=cmd_simulate, out_dir_attr="out_dir")

    p = sub.add_parser("monte-carlo", help="Run dispersed closed-loop tests.")
    add_common(p, workers=True)
    p.add_argument("--model")
    p.add_argument("--controller", choices=["mlp", "shooting", "analytic", "zero"])
    p.add_argument("--test", action="append", help="Test name (default: all).")
    p.add_argument("--runs", type=int, help="Override n_runs.")
    p.add_argument("--dataset", help="Dataset whose state coverage the dispersions are checked against.")
    p.add_argument("--out-dir", default=settings.output_dir)
    p.set_defaults(handler=cmd_monte_carlo, out_dir_attr="out_dir")

    p = sub.add_parser("conjugate-scan", help="Write det(dX/dq) traces of terminal samples.")
    add_common(p)
    p.add_argument("--free", help="Free terminal coordinates, comma separated.")
    p.add_argument("--nu", help="Multipliers, comma separated (scan this single sample).")
    p.add_argument("--count", type=int, default=5, help="Samples taken from the sampling section.")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_conjugate_scan, out_dir_attr="out")

    p = sub.add_parser("coverage", help="Count extremal start states inside a Monte Carlo box.")
    add_common(p)
    p.add_argument("--test", required=True, help="Monte Carlo test whose state ranges form the box.")
    p.add_argument("--samples", type=int, help="Override sampling.n_samples.")
    p.add_argument("--t-go", type=float, help="Time-to-go of the start states (default t_f).")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_coverage, out_dir_attr="out")

    p = sub.add_parser("verify", help="Re-solve dataset records by shooting.")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config")
    p.add_argument("--fraction", type=float)
    p.add_argument("--cold-start", action="store_true", help="Also run the cold-start convergence study.")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_verify, out_dir_attr="out")

    p = sub.add_parser("serve", help="Serve the HTTP API with uvicorn.")
    p.add_argument("--model")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(handler=cmd_serve, out_dir_attr=None)
    return parser


def _manifest_dir(args) -> Optional[Path]:
    attr = getattr(args, "out_dir_attr", None)
    if not attr:
        return None
    target = Path(getattr(args, attr))
    return target if attr == "out_dir" else target.parent


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, (args.log_level or settings.log_level).upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    manifest = RunManifest(
        subcommand=args.command,
        config_path=getattr(args, "config", None),
        inputs=[v for v in (getattr(args, "dataset", None), getattr(args, "model", None)) if v],
        seed=getattr(args, "seed", None),
        version=__version__,
        started_at=datetime.now(timezone.utc),
    )
    code = EXIT_OK
    try:
        outputs, summary = args.handler(args)
        manifest.outputs = outputs
        manifest.summary = summary
    except _VerificationFailed as e:
        manifest.outputs, manifest.summary = e.outputs, e.payload
        logger.error(e.message)
        code = EXIT_NUMERICAL
    except MecpError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        print(f"error: {e.message}", file=sys.stderr)
        code = EXIT_NUMERICAL if e.category == "numerical" else EXIT_USAGE
    manifest.exit_code = code
    manifest.finished_at = datetime.now(timezone.utc)
    out_dir = _manifest_dir(args)
    if out_dir is not None and (code == EXIT_OK or out_dir.exists()):
        storage.write_manifest(manifest, out_dir)
    return code


if __name__ == "__main__":
    sys.exit(main())
