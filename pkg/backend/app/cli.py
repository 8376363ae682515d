import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from app.core.config import load_experiment_config, settings
from app.core.exceptions import (
    ArtifactNotFoundError,
    ConfigError,
    DatasetError,
    DebiasBenchError,
    SceneClassifierError,
    TrainingDivergedError,
)
from app.services.checkpoints import checkpoint_service
from app.services.dataset_store import dataset_store
from app.services.evaluator import evaluator_service
from app.services.reporting import reporting_service
from app.services.scene_labeler import scene_labeler_service
from app.services.synth_data import synth_data_service
from app.services.trainer import trainer_service

logger = logging.getLogger("app.cli")


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="experiment config (JSON)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config field, e.g. --set loss.t0=15 (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="debias-bench", description="Two-stream static-bias mitigation bench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="render the synthetic train/val splits to disk")
    _add_config_args(p)
    p.add_argument("--out", type=Path, help="dataset directory (default: dataset.data_dir or DATA_ROOT/<name>)")

    p = sub.add_parser("pretrain-scene", help="pretrain and freeze the scene classifier on clean plates")
    _add_config_args(p)
    p.add_argument("--out", type=Path, help="checkpoint path (default: model.scene_classifier_path)")

    p = sub.add_parser("train", help="train one configuration")
    _add_config_args(p)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on its validation split")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument(
        "--out", type=Path, help="directory for predictions.jsonl and metrics.json (default: <run>/eval_<checkpoint>)"
    )

    p = sub.add_parser("report", help="comparison table and plots for one or more runs")
    p.add_argument("runs", type=Path, nargs="+", help="run directories")
    p.add_argument("--out", type=Path, help="report directory (default: OUTPUT_ROOT/report)")

    p = sub.add_parser("serve", help="serve the read-only run browser")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def cmd_generate_data(args: argparse.Namespace) -> int:
    config = load_experiment_config(args.config, args.overrides)
    out = args.out or (Path(config.dataset.data_dir) if config.dataset.data_dir else Path(settings.DATA_ROOT) / config.name)
    train, val = dataset_store.load_or_generate(config.dataset.model_copy(update={"data_dir": str(out)}))
    print(f"{len(train)} train / {len(val)} val videos in {out}")
    return 0


def cmd_pretrain_scene(args: argparse.Namespace) -> int:
    config = load_experiment_config(args.config, args.overrides)
    pretrain = config.scene_pretrain
    images, scenes = synth_data_service.scene_plates(pretrain.num_images, config.dataset, pretrain.seed)
    classifier, accuracy = scene_labeler_service.pretrain_scene_classifier(
        images, scenes, config.dataset.clip, config.dataset.bias.num_scenes, pretrain
    )
    path = checkpoint_service.save_scene_classifier(
        args.out or Path(config.model.scene_classifier_path), classifier, accuracy
    )
    print(f"scene classifier: held-out accuracy {accuracy:.4f}, saved to {path}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = load_experiment_config(args.config, args.overrides)
    result = trainer_service.train(config)
    print(f"final checkpoint: {result.checkpoint_path}")
    if result.final_report is not None:
        print(reporting_service.format_table([(config.name, result.final_report)]))
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    out = args.out or args.checkpoint.parent / f"eval_{args.checkpoint.stem}"
    report = evaluator_service.evaluate_checkpoint(args.checkpoint, output_dir=out)
    print(reporting_service.format_table([(args.checkpoint.name, report)]))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    out = args.out or Path(settings.OUTPUT_ROOT) / "report"
    outputs = reporting_service.build_report(args.runs, out)
    print(outputs["table"].read_text(), end="")
    for name, path in outputs.items():
        if name != "table":
            print(f"{name}: {path}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("app.main:app", host=args.host, port=args.port, log_level=settings.LOG_LEVEL.lower())
    return 0


COMMANDS = {
    "generate-data": cmd_generate_data,
    "pretrain-scene": cmd_pretrain_scene,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "serve": cmd_serve,
}


def _fail(message: str) -> int:
    logger.error(message)
    print(f"error: {message}", file=sys.stderr)
    return 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=settings.LOG_LEVEL,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ArtifactNotFoundError as e:
        return _fail(f"missing artifact: {e}")
    except (ConfigError, ValidationError) as e:
        return _fail(f"configuration error: {e}")
    except DatasetError as e:
        return _fail(f"dataset error: {e}")
    except SceneClassifierError as e:
        return _fail(f"scene classifier rejected: {e}")
    except TrainingDivergedError as e:
        return _fail(f"training diverged: {e}")
    except DebiasBenchError as e:
        return _fail(str(e))
    except ValueError as e:
        return _fail(f"invalid input: {e}")


if __name__ == "__main__":
    sys.exit(main())
