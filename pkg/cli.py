"""Command line interface: optimize, evaluate, gradcheck and synth."""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from rich.console import Console
from rich.table import Table

from config import RunConfig, get_settings, load_run_config, load_synth_spec, parse_run_config
from logging_config import setup_logging
from losses.total import TERM_NAMES
from services import pipeline
from services.documents import save_scene
from services.exceptions import DocumentError, IoError, MeshError, OptimizationError, ScenefitError
from services.synth import synth_scene

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILED = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit code 1 instead of exiting with 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scenefit", description="Joint human and indoor scene fitting")
    parser.add_argument("--json", action="store_true", help="Machine-readable output; errors as JSON on stderr")
    parser.add_argument("--log-level", default=None, help="Overrides SCENEFIT_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    optimize = commands.add_parser("optimize", help="Run the two-stage fit")
    source = optimize.add_mutually_exclusive_group(required=True)
    source.add_argument("--scene", help="Scene document JSON")
    source.add_argument("--scene-dir", help="Directory of scene documents (batch mode)")
    optimize.add_argument("--config", help="RunConfig JSON; defaults when omitted")
    optimize.add_argument("--out", help="Refined scene document (single scene)")
    optimize.add_argument("--out-dir", help="Output directory (batch mode)")
    optimize.add_argument("--export-meshes", metavar="DIR", help="Write placed meshes as OBJ with a manifest")
    optimize.add_argument("--stage1-only", action="store_true", help="Stop before the joint stage")
    optimize.add_argument("--disable", action="append", default=[], choices=TERM_NAMES, metavar="TERM",
                          help=f"Zero the weight of a loss term (repeatable): {', '.join(TERM_NAMES)}")

    evaluate = commands.add_parser("evaluate", help="Score a prediction against ground truth")
    evaluate.add_argument("--pred", required=True)
    evaluate.add_argument("--gt", required=True)
    evaluate.add_argument("--matching", help="JSON list of [pred, gt] index pairs")
    evaluate.add_argument("--greedy", action="store_true", help="Match boxes greedily by 3D IoU")
    evaluate.add_argument("--aligned-mesh", help="Write the Procrustes-aligned predicted body mesh as OBJ")
    evaluate.add_argument("--out", help="Also write the report JSON to this file")

    gradcheck = commands.add_parser("gradcheck", help="Compare engine gradients against reference differences")
    gradcheck.add_argument("--scene", required=True)
    gradcheck.add_argument("--config")

    synth = commands.add_parser("synth", help="Generate a synthetic scene and its ground truth")
    synth.add_argument("--seed", type=int, required=True)
    synth.add_argument("--spec", help="SynthSpec JSON; defaults when omitted")
    synth.add_argument("--out-init", required=True)
    synth.add_argument("--out-gt", required=True)
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config)
    disabled = getattr(args, "disable", None)
    if disabled:
        raw = config.model_dump()
        raw["disabled_terms"] = sorted(set(config.disabled_terms) | set(disabled))
        config = parse_run_config(raw)
    return config


def _emit_json(payload) -> None:
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _terms_table(title: str, values: dict[str, float], total: float) -> Table:
    table = Table(title=title)
    table.add_column("term")
    table.add_column("value", justify="right")
    for name, value in values.items():
        table.add_row(name, f"{value:.6g}")
    table.add_row("[bold]total[/bold]", f"[bold]{total:.6g}[/bold]")
    return table


def _cmd_optimize(args: argparse.Namespace, console: Console) -> int:
    config = _run_config(args)
    if args.scene_dir:
        if not args.out_dir:
            raise UsageError("optimize: --out-dir is required with --scene-dir")
        results = pipeline.batch(args.scene_dir, args.out_dir, config, args.stage1_only)
        if args.json:
            _emit_json(results)
        else:
            table = Table(title="Batch optimize")
            for column in ("scene", "status", "total / error"):
                table.add_column(column)
            for r in results:
                table.add_row(r["scene"], r["status"], f"{r['total']:.6g}" if r["status"] == "ok" else r["message"])
            console.print(table)
        return EXIT_FAILED if any(r["status"] != "ok" for r in results) else EXIT_OK

    if not args.out:
        raise UsageError("optimize: --out is required with --scene")
    result = pipeline.optimize(args.scene, config, args.out, args.export_meshes, args.stage1_only)
    if args.json:
        _emit_json({
            "out": str(result.out_path),
            "trajectory": str(result.log_path),
            "manifest": str(result.manifest_path) if result.manifest_path else None,
            "loss": result.breakdown.to_dict(),
        })
    else:
        console.print(_terms_table("Final loss", result.breakdown.values, result.breakdown.total))
        console.print(f"Wrote {result.out_path} and {result.log_path}")
    return EXIT_OK


def _cmd_evaluate(args: argparse.Namespace, console: Console) -> int:
    report = pipeline.evaluate(args.pred, args.gt, args.matching, args.greedy, args.aligned_mesh)
    payload = report.model_dump()
    if args.out:
        try:
            Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        except OSError as e:
            raise IoError(args.out, e) from e
    if args.json:
        _emit_json(payload)
    else:
        table = Table(title="Evaluation")
        table.add_column("measure")
        table.add_column("value", justify="right")
        for name, value in payload.items():
            table.add_row(name, "n/a" if value is None else f"{value:.6g}")
        console.print(table)
    return EXIT_OK


def _cmd_gradcheck(args: argparse.Namespace, console: Console) -> int:
    report = pipeline.gradcheck(args.scene, _run_config(args))
    if args.json:
        _emit_json({"entries": [e.model_dump() for e in report.entries], "max_rel_error": report.max_rel_error})
    else:
        table = Table(title="Gradient check")
        for column in ("term", "kind", "parameters", "max abs error", "max rel error"):
            table.add_column(column)
        for e in report.entries:
            table.add_row(e.term, e.kind, str(e.parameters), f"{e.max_abs_error:.3g}", f"{e.max_rel_error:.3g}")
        console.print(table)
        console.print(f"Max relative error: {report.max_rel_error:.3g}")
    return EXIT_OK


def _cmd_synth(args: argparse.Namespace, console: Console) -> int:
    spec = load_synth_spec(args.spec)
    out_init, out_gt = Path(args.out_init), Path(args.out_gt)
    scene = synth_scene(args.seed, spec, mesh_dir=out_init.parent / "meshes")
    save_scene(scene.initial, out_init)
    save_scene(scene.ground_truth, out_gt)
    if args.json:
        _emit_json({"initial": str(out_init), "ground_truth": str(out_gt)})
    else:
        console.print(f"Wrote {out_init} and {out_gt}")
    return EXIT_OK


COMMANDS = {
    "optimize": _cmd_optimize,
    "evaluate": _cmd_evaluate,
    "gradcheck": _cmd_gradcheck,
    "synth": _cmd_synth,
}


def _exit_code(error: ScenefitError, command: str) -> int:
    if isinstance(error, (DocumentError, MeshError)):
        return EXIT_INVALID
    if isinstance(error, OptimizationError) or command in ("optimize", "gradcheck"):
        return EXIT_FAILED
    return EXIT_INVALID


def _report_error(error: Exception, as_json: bool, err_console: Console) -> None:
    if as_json:
        sys.stderr.write(json.dumps({"error": type(error).__name__, "message": str(error)}) + "\n")
    else:
        err_console.print(f"[red]{type(error).__name__}:[/red] {error}")


def main(argv: Sequence[str] | None = None) -> int:
    """Run the CLI; returns 0 on success, 1 on invalid input, 2 on optimization failure."""
    argv = list(sys.argv[1:] if argv is None else argv)
    as_json = "--json" in argv
    err_console = Console(stderr=True)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        _report_error(e, as_json, err_console)
        return EXIT_INVALID

    settings = get_settings()
    setup_logging(args.log_level or settings.log_level, plain=settings.log_plain)
    console = Console()
    try:
        return COMMANDS[args.command](args, console)
    except UsageError as e:
        _report_error(e, args.json, err_console)
        return EXIT_INVALID
    except ScenefitError as e:
        logger.debug("Command failed", exc_info=True)
        _report_error(e, args.json, err_console)
        return _exit_code(e, args.command)


if __name__ == "__main__":
    sys.exit(main())
