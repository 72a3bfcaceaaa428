"""``lanhar`` command line: one subcommand per pipeline stage.

Success prints a one-line JSON summary on stdout and exits 0. Any failure
prints a one-line JSON error on stderr, e.g.
``{"error": "dependency", "message": "...", "artifact": "..."}``, and exits
nonzero (2 config, 3 missing upstream artifact, 1 anything else).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DependencyError, LanharError

log = logging.getLogger("lanhar")

STAGE_COMMANDS = {
    "ingest": "ingest",
    "analyze": "analyze",
    "interpret": "interpret",
    "filter": "filter",
    "train-text": "train_text",
    "train-sensor": "train_sensor",
    "build-bank": "build_bank",
    "infer": "infer",
}

EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_OTHER = 2, 3, 1


def _summarize(stage: str, result) -> dict:
    if stage == "ingest":
        return {"datasets": {k: v["windows"] for k, v in result["datasets"].items()}}
    if stage == "analyze":
        return {"windows": len(result)}
    if stage == "interpret":
        return dict(result)
    if stage == "filter":
        return {a: {"initial_kl": v["kl_history"][0], "final_kl": v["kl_history"][-1],
                    "accepted": v["accepted"]} for a, v in result["activities"].items()}
    if stage == "train_text":
        return {"epochs": len(result["history"]), "train_labels": result["train_labels"]}
    if stage == "train_sensor":
        return {"artifact_id": result["artifact_id"], "epochs": len(result["history"])}
    if stage == "build_bank":
        return {"labels": result.labels}
    if stage == "infer":
        return {"predictions": len(result)}
    return {}


def _evaluate_summary(result: dict) -> dict:
    if "settings" in result:
        return {"protocol": result["protocol"], "out_dir": result["out_dir"],
                "settings": {s["setting"]: s["status"] for s in result["settings"]}}
    out = {"setting": result["setting"], "status": result["status"]}
    if "report" in result:
        out.update({k: result["report"][k] for k in ("accuracy", "macro_f1", "category_accuracy")})
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lanhar", description="Language-centered cross-dataset HAR")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", "-c", help="experiment TOML file (defaults when omitted)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, TOML literal syntax (repeatable)")
        p.add_argument("--run-dir", help="run directory (default <run_root>/<fingerprint>)")
        p.add_argument("--backend", choices=["mock", "replay", "http"], help="shorthand for backend.kind")
        p.add_argument("-v", "--verbose", action="store_true")

    for name in [*STAGE_COMMANDS, "evaluate", "run"]:
        common(sub.add_parser(name))
    rep = sub.add_parser("report")
    common(rep)
    rep.add_argument("--force", action="store_true", help="aggregate despite fingerprint mismatches")

    syn = sub.add_parser("synth", help="write synthetic canonical CSV datasets")
    syn.add_argument("out_dir")
    syn.add_argument("--datasets", type=int, default=2)
    syn.add_argument("--subjects", type=int, default=3)
    syn.add_argument("--seconds", type=float, default=20.0)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--activities", default=None, help="comma-separated activity list")
    syn.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.backend:
        overrides.append(f'backend.kind="{args.backend}"')
    return load_config(args.config, overrides)


def _dispatch(args) -> dict:
    if args.command == "synth":
        from .synthetic import SYNTH_ACTIVITIES, write_synthetic_suite

        acts = tuple(args.activities.split(",")) if args.activities else SYNTH_ACTIVITIES
        paths = write_synthetic_suite(args.out_dir, args.datasets, activities=acts,
                                      n_subjects=args.subjects, seconds=args.seconds, seed=args.seed)
        return {"paths": [str(p) for p in paths]}

    from .pipeline import Pipeline

    config = _config(args)
    run_dir = Path(args.run_dir) if args.run_dir else None
    if args.command == "evaluate":
        from .experiments import evaluate

        return _evaluate_summary(evaluate(config, run_dir=run_dir))
    pipe = Pipeline(config, run_dir=run_dir)
    base = {"fingerprint": pipe.fingerprint, "run_dir": str(pipe.run_dir)}
    if args.command == "report":
        summary = pipe.report(force=args.force)
        return {**base, "artifacts": len(summary["artifacts"]), "mismatched": summary["mismatched"]}
    if args.command == "run":
        out = pipe.run_all()
        return {**base, **_evaluate_summary(out["evaluate"])}
    stage = STAGE_COMMANDS[args.command]
    return {**base, **_summarize(stage, getattr(pipe, stage)())}


def _fail(code: str, message: str, status: int, **extra) -> int:
    print(json.dumps({"error": code, "message": " ".join(message.split()), **extra}), file=sys.stderr)
    return status


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        result = _dispatch(args)
    except ConfigError as exc:
        return _fail(exc.code, str(exc), EXIT_CONFIG, keys=exc.keys)
    except DependencyError as exc:
        return _fail(exc.code, str(exc), EXIT_DEPENDENCY, artifact=exc.artifact)
    except LanharError as exc:
        return _fail(exc.code, str(exc), EXIT_OTHER)
    except (OSError, ValueError) as exc:
        return _fail("io" if isinstance(exc, OSError) else "value", f"{type(exc).__name__}: {exc}",
                     EXIT_OTHER)
    print(json.dumps({"ok": True, "command": args.command, **result}, default=str))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
