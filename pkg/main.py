#!/usr/bin/env python3
"""
HeatCluster - Command Line Entry Point
Heat conduction through clusters of small cavities: point-interaction
simulation, space-time boundary-integral oracle and effective medium.

Subcommands:
    run          every pipeline listed in an experiment config
    capacitance  harmonic capacitance of a reference shape or OFF mesh
    flsim | refbem | effmed | sigma
                 one pipeline of an experiment config (--config, --out)
    cluster      export a periodic lattice as CSV
    converge     convergence study with a fitted log-log slope
"""

import argparse
import asyncio
import dataclasses
import sys
import traceback
from pathlib import Path
from typing import List, Optional

# Add project root to Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from utils.config import get_config
from utils.errors import SimulationError
from utils.logger import get_error_logger, setup_logging

from models.cluster import Box, ReferenceShape
from core.geometry import build_cluster, read_off, triangulate, write_cluster_csv
from core.laplace_bem import capacitance
from core.output_manager import get_output_manager
from services.experiment_service import load_experiment, run_config
from services.rate_study_service import StudyKind, rate_study


VERSION = "1.0.0"
# main output of each single-pipeline subcommand
PIPELINE_OUTPUTS = {
    'flsim': "field.csv",
    'refbem': "field_refbem.csv",
    'effmed': "field_effmed.csv",
    'sigma': "sigma.csv",
}
SINGLE_PIPELINES = tuple(PIPELINE_OUTPUTS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heatsim", description="HeatCluster simulations")
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run every pipeline of an experiment config")
    run.add_argument("config", type=Path)

    for name, default_name in PIPELINE_OUTPUTS.items():
        single = commands.add_parser(name, help=f"run only the {name} pipeline of a config")
        single.add_argument("config", type=Path, nargs="?")
        single.add_argument("--config", type=Path, dest="config_file", help="experiment config (JSON)")
        single.add_argument("--out", type=Path, help=f"{default_name} destination (default: config output directory)")
        if name == "flsim":
            single.add_argument("--alphas", type=Path, help="alphas.csv destination")

    cap = commands.add_parser("capacitance", help="capacitance of a reference shape")
    cap.add_argument("--shape", choices=["unit_sphere", "ellipsoid", "imported_mesh"],
                     help="default: imported_mesh with --mesh, else unit_sphere")
    cap.add_argument("--semi-axes", type=float, nargs=3)
    cap.add_argument("--mesh", type=Path, help="closed OFF mesh; implies --shape imported_mesh")
    cap.add_argument("--refine", "--refinement", dest="refinement", type=int, default=3)
    cap.add_argument("--output", type=Path, help="write the result as JSON")
    cap.add_argument("--density", type=Path, help="panel density CSV (default: <output dir>/density.csv)")

    cluster = commands.add_parser("cluster", help="export a periodic cavity lattice")
    cluster.add_argument("--a", type=float, required=True)
    cluster.add_argument("--d0", type=float, default=2.0)
    cluster.add_argument("--omega-lower", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    cluster.add_argument("--omega-upper", type=float, nargs=3, default=[1.0, 1.0, 1.0])
    cluster.add_argument("--output", type=Path, required=True)

    converge = commands.add_parser("converge", help="convergence study")
    converge.add_argument("--study", choices=[k.value for k in StudyKind], required=True)
    converge.add_argument("--levels", type=float, nargs="+", required=True)
    converge.add_argument("--output", type=Path,
                          help="rate report CSV, JSON summary alongside (default: <output dir>/<study>.csv)")

    return parser


def _shape_from_args(args) -> ReferenceShape:
    kind = args.shape or ("imported_mesh" if args.mesh else "unit_sphere")
    if args.mesh and kind != "imported_mesh":
        raise SimulationError(f"--mesh cannot be combined with --shape {kind}")
    if kind == "ellipsoid":
        if not args.semi_axes:
            raise SimulationError("--semi-axes required for an ellipsoid")
        return ReferenceShape.ellipsoid(args.semi_axes)
    if kind == "imported_mesh":
        if not args.mesh:
            raise SimulationError("--mesh required for an imported mesh")
        return ReferenceShape.imported(read_off(args.mesh), str(args.mesh))
    return ReferenceShape.unit_sphere()


def _config_from_args(args) -> Path:
    if args.config and args.config_file:
        raise SimulationError("give the config either positionally or with --config")
    config = args.config or args.config_file
    if config is None:
        raise SimulationError(f"{args.command} needs an experiment config (--config run.json)")
    return config


def _print_outputs(outputs) -> None:
    for name, path in sorted(outputs.items()):
        print(f"{name}: {path}")


async def dispatch(args) -> int:
    output = get_output_manager()

    if args.command == "run":
        _print_outputs(run_config(load_experiment(args.config)))
        return 0

    if args.command in SINGLE_PIPELINES:
        experiment = load_experiment(_config_from_args(args))
        experiment = dataclasses.replace(
            experiment, solver=dataclasses.replace(experiment.solver, pipelines=[args.command]))
        destinations = {}
        if args.out:
            destinations[PIPELINE_OUTPUTS[args.command]] = args.out
        if getattr(args, "alphas", None):
            destinations["alphas.csv"] = args.alphas
        _print_outputs(run_config(experiment, destinations))
        return 0

    if args.command == "capacitance":
        shape = _shape_from_args(args)
        cap, density = capacitance(triangulate(shape, args.refinement))
        print(f"C = {cap.value!r} ({density.mesh.n_panels} panels)")
        if args.output:
            output.write_json({'shape': shape.to_dict(), 'refinement': args.refinement,
                               'panels': density.mesh.n_panels, 'C': cap.value}, args.output)
        print(output.write_density(density, args.density or output.default_path("density.csv")))
        return 0

    if args.command == "cluster":
        omega = Box(tuple(args.omega_lower), tuple(args.omega_upper))
        cluster, _ = build_cluster(omega, args.a, args.d0)
        print(write_cluster_csv(cluster, args.output))
        return 0

    if args.command == "converge":
        report = await rate_study(StudyKind(args.study), args.levels)
        for level, error in zip(report.levels, report.errors):
            print(f"{level!r}\t{error!r}")
        if report.slope is not None:
            print(f"slope = {report.slope:.4f} +/- {report.half_width:.4f}")
        output.write_rate_report(report, args.output or output.default_path(f"{args.study}.csv"))
        return 0

    return 2


async def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments and run one subcommand; returns the exit code"""
    args = build_parser().parse_args(argv)
    logger = setup_logging(VERSION)
    logger.debug("Command started", command=args.command, output_dir=str(get_config().get_full_output_dir()))

    try:
        return await dispatch(args)
    except SimulationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        get_error_logger().log_critical_system_error("heatsim", e, command=args.command)
        raise


if __name__ == "__main__":
    try:
        exit_code = asyncio.run(main())
        sys.exit(exit_code)
    except KeyboardInterrupt:
        print("\nInterrupted by user", file=sys.stderr)
        sys.exit(130)
    except Exception as e:
        print(f"Fatal error: {str(e)}", file=sys.stderr)
        traceback.print_exc()
        sys.exit(1)
