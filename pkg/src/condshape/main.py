# Copyright 2024-present The condshape Authors. All rights reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""
condshape - edge-conditioned shape model study

Main entry point for the command-line interface.
"""
import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

from loguru import logger

from condshape import config
from condshape.core.pipeline import (
    REPORT_FILE,
    SOURCE_DIR,
    TARGET_DIR,
    TIMING_FILE,
    SweepCell,
    SweepPipeline,
    generate_datasets,
    nested_split,
    split_sizes,
)
from condshape.core.study_config import StudyConfig, apply_overrides, load_study_config
from condshape.edges import EdgeParams, edge_map
from condshape.errors import CondShapeError, ConfigError, DatasetError
from condshape.metrics import evaluate_cases
from condshape.nets import load_unet, save_unet, train_baseline, train_edge_detector
from condshape.phantoms import load_dataset
from condshape.phantoms.models import PartRole
from condshape.phantoms.persister import mask_file
from condshape.shape import (
    BaselineSegmenter,
    DcsmSegmenter,
    load_shape_model,
    save_shape_model,
    train_shape_model,
)
from condshape.tools import stats
from condshape.volume import VolumeKind, read_volume, write_volume

COMMANDS = ['gen-data', 'edge-map', 'train-edge', 'train-shape', 'train-baseline', 'infer', 'eval', 'sweep']
TARGET_MASK_FILE = mask_file(PartRole.TARGET_CAVITY.value)
OCCUPANCY_FILE = "occupancy.vol"


def init_logger(log_dir: str = "logs", max_size: str = "10 MB", log_level: str = "INFO"):
    """Initialize logger with console and file output"""
    os.makedirs(log_dir, exist_ok=True)
    logger.remove()
    logger.add(
        sys.stderr,
        level=log_level,
        format="<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | {message}",
        colorize=True,
    )
    logger.add(
        f"{log_dir}/app.{{time:YYYY-MM-DD}}.log",
        level="INFO",
        rotation=max_size,
        retention="7 days",
        compression="zip",
        enqueue=True,
        encoding="utf-8",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='condshape',
        description='condshape - edge-conditioned shape model study',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Generate source, target and test datasets
  %(prog)s gen-data --config study.json --out ./data

  # Ground-truth edge map of a mask
  %(prog)s edge-map --data case_0000/mask_target_cavity.vol --lambda 2 --out edge.vol

  # Train the shape model once, on source data only
  %(prog)s train-shape --config study.json --out ./runs/shape

  # Print the sweep plan without training
  %(prog)s sweep --config study.json --dry-run
        """
    )
    parser.add_argument('--app-config', type=str, default=None,
                        help='Path to application settings file (default: conf/condshape.conf)')

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=None, help='Study configuration JSON')
    common.add_argument('--seed', type=int, default=None, help='Root seed override')
    common.add_argument('--lambda', dest='lam', type=float, default=None, help='Edge sharpness override (1/mm)')
    common.add_argument('--fraction', type=float, default=None, help='Target data fraction override')
    common.add_argument('--out', type=str, default=None, help='Output path override')

    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('gen-data', parents=[common], help='Generate source/target/test datasets')

    p = sub.add_parser('edge-map', parents=[common], help='Ground-truth edge map of a mask volume')
    p.add_argument('--data', type=str, required=True, help='Mask volume file')

    for name, help_text in (('train-edge', 'Train the target edge detector'),
                            ('train-baseline', 'Train the image-to-mask baseline'),
                            ('train-shape', 'Train the shape model on source data')):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument('--data', type=str, default=None, help='Dataset root (default: study data root)')

    p = sub.add_parser('infer', parents=[common], help='Segment a dataset')
    p.add_argument('--method', choices=['dcsm', 'baseline'], required=True)
    p.add_argument('--model', type=str, required=True, help='Edge detector (dcsm) or baseline checkpoint')
    p.add_argument('--shape-model', type=str, default=None, help='Shape model checkpoint (dcsm)')
    p.add_argument('--data', type=str, required=True, help='Dataset directory to segment')

    p = sub.add_parser('eval', parents=[common], help='Score predicted masks against ground truth')
    p.add_argument('--pred', type=str, required=True, help='Prediction directory')
    p.add_argument('--gt', type=str, required=True, help='Ground-truth dataset directory')

    p = sub.add_parser('sweep', parents=[common], help='Run the data-efficiency sweep')
    p.add_argument('--dry-run', action='store_true', help='Print the experiment plan without training')
    return parser


def load_study(args) -> StudyConfig:
    study = load_study_config(args.config)
    return apply_overrides(study, seed=args.seed, lam=args.lam, fraction=args.fraction, out=args.out)


def data_root(args, study: StudyConfig) -> Path:
    return Path(args.data) if getattr(args, 'data', None) else study.data.resolved_root()


def target_split(args, study: StudyConfig):
    pool = load_dataset(data_root(args, study) / TARGET_DIR)
    fraction = args.fraction if args.fraction is not None else 1.0
    n_train, n_valid = split_sizes(len(pool), fraction, study.sweep.valid_fraction)
    return nested_split(pool, SweepCell(fraction, study.seed, n_train, n_valid))


# ============ Commands ============

def cmd_gen_data(args) -> dict:
    study = load_study(args)
    root = generate_datasets(study, Path(args.out) if args.out else None)
    return {"data_root": str(root)}


def cmd_edge_map(args) -> dict:
    study = load_study(args)
    lam = args.lam if args.lam is not None else study.shape.lambda_fixed
    mask = read_volume(args.data)
    edges = edge_map(mask, EdgeParams(lam))
    out = Path(args.out or Path(args.data).with_name("edge_map.vol"))
    write_volume(edges, out)
    return {"edge_map": str(out), "lambda": lam}


def cmd_train_edge(args) -> dict:
    study = load_study(args)
    train, valid = target_split(args, study)
    out = study.resolved_output_dir()
    with stats.timed_stage("train_edge"):
        result = train_edge_detector(train, valid, study.edge, study.seed, log_path=out / "edge_train.jsonl")
    digest = save_unet(result.model, out / "edge_detector.ckpt", extra={"lambdas": result.lambdas})
    stats.record_checkpoint("edge_detector", digest)
    return {"checkpoint": str(out / "edge_detector.ckpt"), "sha256": digest, "n_train": len(train), "n_valid": len(valid)}


def cmd_train_baseline(args) -> dict:
    study = load_study(args)
    train, valid = target_split(args, study)
    out = study.resolved_output_dir()
    with stats.timed_stage("train_baseline"):
        result = train_baseline(train, valid, study.baseline, study.seed, log_path=out / "baseline_train.jsonl")
    digest = save_unet(result.model, out / "baseline.ckpt", extra={"chosen_epoch": result.chosen_epoch})
    stats.record_checkpoint("baseline", digest)
    return {"checkpoint": str(out / "baseline.ckpt"), "sha256": digest, "chosen_epoch": result.chosen_epoch}


def cmd_train_shape(args) -> dict:
    study = load_study(args)
    source = load_dataset(data_root(args, study) / SOURCE_DIR)
    out = study.resolved_output_dir()
    with stats.timed_stage("train_shape"):
        result = train_shape_model(source, study.shape, study.seed, log_path=out / "shape_train.jsonl")
    digest = save_shape_model(result.model, out / "shape_model.ckpt")
    stats.record_checkpoint("shape_model", digest)
    return {"checkpoint": str(out / "shape_model.ckpt"), "sha256": digest}


def cmd_infer(args) -> dict:
    study = load_study(args)
    if args.method == 'dcsm':
        if not args.shape_model:
            raise ConfigError("infer --method dcsm needs --shape-model")
        shape_model = load_shape_model(args.shape_model)
        shape_model.eval()
        segmenter = DcsmSegmenter(load_unet(args.model), shape_model)
    else:
        segmenter = BaselineSegmenter(load_unet(args.model))

    cases = load_dataset(args.data)
    out = study.resolved_output_dir()
    with stats.timed_stage("infer"):
        for i, case in enumerate(cases, start=1):
            mask = segmenter.segment(case.intensity)
            case_dir = out / case.case_id
            write_volume(mask, case_dir / TARGET_MASK_FILE)
            if isinstance(segmenter, DcsmSegmenter):
                write_volume(segmenter.last_occupancy, case_dir / OCCUPANCY_FILE)
            logger.debug(f"  Segmented {i}/{len(cases)}: {case.case_id}")
    logger.info(f"  ✓ Segmented {len(cases)} cases → {out}")
    return {"method": args.method, "cases": len(cases), "out": str(out)}


def collect_masks(root: Path) -> dict:
    """{case_id: target mask} of every case directory holding one"""
    found = {p.parent.name: read_volume(p) for p in sorted(Path(root).glob(f"*/{TARGET_MASK_FILE}"))}
    if not found:
        raise DatasetError(f"no {TARGET_MASK_FILE} files under {root}")
    return found


def cmd_eval(args) -> dict:
    preds = collect_masks(Path(args.pred))
    gts = collect_masks(Path(args.gt))
    for case_id, vol in preds.items():
        if vol.kind is not VolumeKind.MASK:
            raise ConfigError(f"{case_id}: prediction is not a mask ({vol.kind.value})")
    report = evaluate_cases(preds, gts)
    out = Path(args.out) if args.out else Path(args.pred) / "metrics.json"
    report.save(out)
    row = report.table_row()
    logger.info(f"  ✓ {len(report.cases)} cases | " + " | ".join(f"{k}: {v}" for k, v in row.items()))
    return {"metrics": str(out), "aggregate": report.aggregate()}


def cmd_sweep(args) -> dict:
    study = load_study(args)
    pipeline = SweepPipeline(study)
    if args.dry_run:
        plan = pipeline.dry_run()
        print(json.dumps(plan, indent=2, sort_keys=True))
        return plan
    report = pipeline.run()
    return {"report": str(pipeline.out_dir / REPORT_FILE), "timings": str(pipeline.out_dir / TIMING_FILE),
            "shape_model_hash": report["shape_model_hash"]}


HANDLERS = {
    'gen-data': cmd_gen_data,
    'edge-map': cmd_edge_map,
    'train-edge': cmd_train_edge,
    'train-shape': cmd_train_shape,
    'train-baseline': cmd_train_baseline,
    'infer': cmd_infer,
    'eval': cmd_eval,
    'sweep': cmd_sweep,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)

    # Load configuration
    try:
        config.reload_config(args.app_config)
    except Exception as e:
        print(json.dumps({"error": "config", "type": e.__class__.__name__, "message": str(e)}), file=sys.stderr)
        return 2

    # Initialize logger
    init_logger(log_dir=config.LOG_DIR, log_level=config.LOG_LEVEL)

    logger.info("=" * 60)
    logger.info(f"condshape {args.command}")
    logger.info("=" * 60)

    stats.reset_stats(args.command)
    stats.set_args({k: v for k, v in vars(args).items() if v is not None and k != 'command'})

    code = 0
    try:
        result = HANDLERS[args.command](args)
        logger.success(f"{args.command} completed")
        logger.debug(json.dumps(result, default=str))
    except CondShapeError as e:
        stats.record_error(str(e))
        logger.error(f"{args.command} failed: {e}")
        print(json.dumps(e.to_dict()), file=sys.stderr)
        code = 2
    except Exception as e:
        stats.record_error(str(e))
        logger.exception(f"Execution failed: {e}")
        print(json.dumps({"error": "internal", "type": e.__class__.__name__, "message": str(e)}), file=sys.stderr)
        code = 1
    finally:
        stats.finalize_stats()
        stats.print_summary()
        stats.save_stats(Path(config.LOG_DIR) / f"stats_{args.command}.txt")
    return code


def run():
    sys.exit(main())


if __name__ == '__main__':
    run()
