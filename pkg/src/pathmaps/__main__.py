"""
Command-line entry point for pathmaps.

Each sub-command runs one step of the pipeline: synthesize a dataset, train
the tokenizers (stage 1), train fusion and mapper (stage 2), fine-tune,
evaluate, ablate, score top-N paths, extend the model with a new parameter,
run a few-shot sweep and render plots. Artifacts go under --out (default
PATHMAPS_OUT_DIR).
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import torch

from .config import ExperimentConfig, RuntimeSettings, load_config, runtime_settings
from .core.evaluation import (
    DENOMINATOR_PREDICTION,
    DENOMINATOR_TARGET,
    HOLDOUT_AXES,
    PRETRAINED,
    AblationFlags,
    ablate,
    ablation_table,
    add_param,
    emit_plots,
    few_shot_sweep,
    full_retrain,
    holdout_split,
    in_distribution_split,
    median_curve,
    plot_few_shot,
    read_report,
    run_eval,
    topn_report,
    topn_summary,
    zero_shot
)
from .core.fusion import numpy_embedder
from .core.mapper import FREEZE_POLICIES, FREEZE_TASK_WISE
from .core.model import PathMapModel, model_from_checkpoint
from .core.scene import Trajectory, build_scene, condition_matrix, sweep_conditions, sweep_trajectory
from .core.tokenizer import TokenizerBank, VQTokenizer, init_codebook_from
from .core.training import (
    IMAGE_SOURCE,
    FinetunePolicy,
    TrainingState,
    collect_rasters,
    finetune,
    take_subset,
    tokenizer_from_checkpoint,
    train_stage1,
    train_stage2
)
from .exceptions import PathmapsError
from .storage import (
    SnapshotDataset,
    checkpoint_id,
    load_checkpoint,
    read_curves,
    read_manifest,
    save_checkpoint,
    write_curves
)

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[logging.StreamHandler(sys.stdout)]
)

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("synth", "train-stage1", "train-stage2", "finetune", "eval", "ablate", "topn", "add-param",
               "few-shot", "plot")
ALL_SOURCES = "all"
MODEL_FILE = "model.pt"


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected comma-separated integers, got {text!r}")


def _xy(text: str) -> Tuple[float, float]:
    values = _floats(text)
    if len(values) != 2:
        raise argparse.ArgumentTypeError(f"Expected x,y, got {text!r}")
    return values[0], values[1]


def _add_common(parser: argparse.ArgumentParser, default: object = None) -> None:
    parser.add_argument("--config", type=Path, default=default, help="JSON experiment config")
    parser.add_argument("--preset", choices=("small", "base", "large"), default=default,
                        help="Model size preset under --config")
    parser.add_argument("--seed", type=int, default=default, help="Overrides train.seed (and the scene seed for synth)")
    parser.add_argument("--out", type=Path, default=default, help="Output directory (default PATHMAPS_OUT_DIR)")
    parser.add_argument("--debug", action="store_true", default=False if default is None else default,
                        help="Enable debug logging")


def build_parser() -> argparse.ArgumentParser:
    """Global flags are accepted before or after the sub-command; a flag after it wins."""
    parser = argparse.ArgumentParser(prog="pathmaps", description="Multipath map generation from top-down images")
    _add_common(parser)
    common = argparse.ArgumentParser(add_help=False)
    _add_common(common, default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="Synthesize a snapshot dataset")
    p.add_argument("--scenario", choices=("crossroad", "wide_lane"), default="crossroad")
    p.add_argument("--altitudes", type=_floats, default=[50.0, 70.0, 80.0])
    p.add_argument("--freqs", type=_floats, default=[1.6e9, 5.9e9, 15e9, 28e9])
    p.add_argument("--conditions", action="store_true", help="Use the scenario condition matrix instead of the product")
    p.add_argument("--start", type=_xy, default=(0.0, 0.0))
    p.add_argument("--end", type=_xy, default=(0.0, -10.0))
    p.add_argument("--velocity", type=float, default=0.5, help="Metres per snapshot")
    p.add_argument("--n-paths", type=int, help="Overrides synth.n_paths")
    p.add_argument("--embeddings", action="store_true", help="Precompute semantic embeddings per pose")

    p = sub.add_parser("train-stage1", parents=[common], help="Train the image and map tokenizers")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--source", default=ALL_SOURCES, help="'image', a map parameter, or 'all'")
    p.add_argument("--image-tokenizer", type=Path, help="Trained image tokenizer (skips its training)")
    p.add_argument("--no-transfer", action="store_true", help="Initialize map codebooks randomly")

    p = sub.add_parser("train-stage2", parents=[common], help="Train fusion and mapper on frozen tokenizers")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--stage1", type=Path, required=True, help="Directory holding tokenizer_*.pt")

    p = sub.add_parser("finetune", parents=[common], help="Fine-tune a trained model on a small subset")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--mode", choices=FREEZE_POLICIES, default="full")
    p.add_argument("--budget", type=int, default=500)

    p = sub.add_parser("eval", parents=[common], help="Evaluate a model")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--denominator", choices=(DENOMINATOR_PREDICTION, DENOMINATOR_TARGET),
                   default=DENOMINATOR_PREDICTION)
    p.add_argument("--tasks", help="Comma-separated subset of the model tasks")
    p.add_argument("--name", default="eval")
    p.add_argument("--snap-codes", action="store_true", help="Snap projected tokens to the map codebook")

    p = sub.add_parser("ablate", parents=[common], help="Train and compare structural variants")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--test-data", type=Path, help="Evaluation split (default: hash split of --data)")
    p.add_argument("--variants", default="base,no_semantic,no_routed,no_shared,no_freq")

    p = sub.add_parser("topn", parents=[common], help="Per-path NMSE for path indices 1..N")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--n", type=int, default=6)

    p = sub.add_parser("add-param", parents=[common], help="Extend a model with a new multipath parameter")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--param", required=True)
    p.add_argument("--tokenizer", type=Path, help="Trained map tokenizer for the parameter")
    p.add_argument("--mode", choices=FREEZE_POLICIES, default=FREEZE_TASK_WISE)
    p.add_argument("--budget", type=int)
    p.add_argument("--test-data", type=Path)

    p = sub.add_parser("few-shot", parents=[common], help="Zero-shot and few-shot transfer to held-out conditions")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--axis", choices=HOLDOUT_AXES, default="frequency")
    p.add_argument("--values", required=True, help="Comma-separated held-out values")
    p.add_argument("--budgets", type=_ints, default=[50, 100, 200, 500])
    p.add_argument("--seeds", type=_ints, default=[0, 1, 2])
    p.add_argument("--mode", choices=FREEZE_POLICIES, default="full")

    p = sub.add_parser("plot", parents=[common], help="Render figures from report and curve CSVs")
    p.add_argument("--reports", type=Path, nargs="+", required=True)
    p.add_argument("--curves", type=Path, nargs="*", default=[])
    p.add_argument("--topn", type=Path)
    return parser


class Pipeline:
    """Runs one sub-command with the resolved configuration and settings."""

    def __init__(self, cfg: ExperimentConfig, settings: RuntimeSettings, out_dir: Path, seed: Optional[int]):
        self.cfg = cfg
        self.settings = settings
        self.out_dir = out_dir
        self.seed = seed if seed is not None else cfg.train.seed
        self.train_cfg = replace(cfg.train, seed=self.seed)

    def _load_model(self, path: Path) -> PathMapModel:
        model = model_from_checkpoint(load_checkpoint(path, map_location=self.settings.device))
        return model.to(self.settings.device)

    def _save_model(self, model: PathMapModel, name: str, metadata: dict) -> Path:
        path = save_checkpoint(self.out_dir / name, model.to_checkpoint({"seed": self.seed, **metadata}))
        logger.info(f"Saved model checkpoint {path}")
        return path

    def synth(self, args: argparse.Namespace) -> None:
        synth_cfg = self.cfg.synth if args.n_paths is None else replace(self.cfg.synth, n_paths=args.n_paths)
        scene = build_scene(self.seed, args.scenario, synth_cfg.material_loss_db)
        trajectory = Trajectory(args.start, args.end, args.velocity)
        embedder = numpy_embedder(self.cfg.fusion.provider_id) if args.embeddings else None
        if args.conditions:
            manifest = sweep_conditions(scene, trajectory, condition_matrix(args.scenario), self.out_dir, synth_cfg,
                                        self.settings.workers, embedder)
        else:
            manifest = sweep_trajectory(scene, trajectory, args.altitudes, args.freqs, self.out_dir, synth_cfg,
                                        self.settings.workers, embedder)
        logger.info(f"Synthesized {len(manifest)} snapshots in {len(manifest.datasets())} datasets to {self.out_dir}")

    def train_stage1(self, args: argparse.Namespace) -> None:
        manifest = read_manifest(args.data)
        tasks = list(self.cfg.mapper.tasks)
        if args.source == ALL_SOURCES:
            sources = [IMAGE_SOURCE] + tasks
        else:
            sources = [args.source]
        image_tokenizer = None
        if args.image_tokenizer is not None:
            image_tokenizer = tokenizer_from_checkpoint(load_checkpoint(args.image_tokenizer))
        for source in sources:
            torch.manual_seed(self.seed)
            if source == IMAGE_SOURCE:
                tokenizer = VQTokenizer(self.cfg.tokenizer)
            else:
                codebook = None
                if image_tokenizer is not None and not args.no_transfer:
                    codebook = init_codebook_from(image_tokenizer.codebook, self.cfg.map_tokenizer)
                tokenizer = VQTokenizer(self.cfg.map_tokenizer, codebook)
            tokenizer.to(self.settings.device)
            result = train_stage1(tokenizer, collect_rasters(manifest, source), self.train_cfg, source)
            result.checkpoint.metadata.update({"seed": self.seed, "data": str(args.data)})
            save_checkpoint(self.out_dir / f"tokenizer_{source}.pt", result.checkpoint)
            write_curves(self.out_dir / f"curves_stage1_{source}.csv", result.curves)
            if source == IMAGE_SOURCE:
                image_tokenizer = tokenizer

    def train_stage2(self, args: argparse.Namespace) -> None:
        tasks = list(self.cfg.mapper.tasks)
        image_tokenizer = tokenizer_from_checkpoint(load_checkpoint(args.stage1 / f"tokenizer_{IMAGE_SOURCE}.pt"))
        decoders = [tokenizer_from_checkpoint(load_checkpoint(args.stage1 / f"tokenizer_{t}.pt")) for t in tasks]
        bank = TokenizerBank(decoders[0].cfg)
        for task, decoder in zip(tasks, decoders):
            bank.register(task, decoder)
        torch.manual_seed(self.seed)
        model = PathMapModel.build(image_tokenizer.cfg, bank.cfg, self.cfg.fusion, self.cfg.mapper,
                                   self.cfg.synth.map_size, image_tokenizer=image_tokenizer, bank=bank)
        model.to(self.settings.device)
        dataset = SnapshotDataset(read_manifest(args.data), tasks)
        result = train_stage2(model, dataset, self.train_cfg, tasks, TrainingState(tasks),
                              gate_log_path=self.out_dir / "gates.csv")
        write_curves(self.out_dir / "curves_stage2.csv", result.curves)
        self._save_model(model, MODEL_FILE, {"stage": "stage2", "data": str(args.data)})

    def finetune(self, args: argparse.Namespace) -> None:
        model = self._load_model(args.checkpoint)
        tasks = model.tasks
        subset = take_subset(SnapshotDataset(read_manifest(args.data), tasks), args.budget, self.seed)
        result = finetune(model, subset, FinetunePolicy(args.mode, args.budget), self.train_cfg, tasks)
        write_curves(self.out_dir / "curves_finetune.csv", result.run.curves)
        logger.info(f"Fine-tuned ({args.mode}) with {len(subset)} snapshots; "
                    f"trainable fraction {result.trainable_fraction:.3f}")
        self._save_model(model, f"finetuned_{args.mode}.pt",
                         {"stage": "finetune", "mode": args.mode, "from": checkpoint_id(args.checkpoint)})

    def eval(self, args: argparse.Namespace) -> None:
        model = self._load_model(args.checkpoint)
        tasks = args.tasks.split(",") if args.tasks else None
        report = run_eval(model, read_manifest(args.data), tasks, args.denominator,
                          checkpoint=checkpoint_id(args.checkpoint), seed=self.seed, snap_codes=args.snap_codes)
        report.write(self.out_dir, args.name)
        print(report.render_table())

    def ablate(self, args: argparse.Namespace) -> None:
        base = self._load_model(args.checkpoint)
        if args.test_data is not None:
            train, test = read_manifest(args.data), read_manifest(args.test_data)
        else:
            train, test = in_distribution_split(read_manifest(args.data))
        variants = [AblationFlags.single(name.strip()) for name in args.variants.split(",") if name.strip()]
        reports = ablate(variants, base, train, test, self.train_cfg)
        for name, report in reports.items():
            report.write(self.out_dir, f"ablation_{name}")
        table = ablation_table(reports)
        (self.out_dir / "ablation.txt").write_text(table, encoding="utf-8")
        print(table)
        emit_plots(reports, self.out_dir)

    def topn(self, args: argparse.Namespace) -> None:
        model = self._load_model(args.checkpoint)
        report = topn_report(model, read_manifest(args.data), args.n, seed=self.seed,
                             checkpoint=checkpoint_id(args.checkpoint))
        report.write(self.out_dir, f"top{args.n}")
        for key, value in topn_summary(report).items():
            logger.info(f"Path {key}: NMSE {value:.6f}")

    def add_param(self, args: argparse.Namespace) -> None:
        model = self._load_model(args.checkpoint)
        decoder = None
        if args.tokenizer is not None:
            decoder = tokenizer_from_checkpoint(load_checkpoint(args.tokenizer)).to(self.settings.device)
        train = read_manifest(args.data)
        target = read_manifest(args.test_data) if args.test_data is not None else train
        result = add_param(model, args.param, train, target, self.train_cfg, decoder, args.mode, args.budget)
        result.report.write(self.out_dir, f"add_param_{args.param}")
        logger.info(f"Trainable fraction for {args.param} ({args.mode}): {result.trainable_fraction:.3f}; "
                    f"frozen scopes {result.frozen}")
        self._save_model(model, f"model_{args.param}.pt", {"stage": "add-param", "param": args.param})

    def few_shot(self, args: argparse.Namespace) -> None:
        model = self._load_model(args.checkpoint)
        manifest = read_manifest(args.data)
        values = args.values.split(",")
        source, held = holdout_split(manifest, args.axis, values)
        pool, target = in_distribution_split(held)
        zero_shot(model, target, seed=self.seed).write(self.out_dir, "zero_shot")
        points = few_shot_sweep(model, pool, target, args.budgets, args.seeds, self.train_cfg, args.mode)
        plot_few_shot(points, self.out_dir)
        reference = full_retrain(model, pool, target, self.train_cfg)
        reference.write(self.out_dir, "full_retrain")
        curve = median_curve(points, PRETRAINED)
        logger.info(f"Held out {args.axis}={values} ({len(source)} source snapshots): "
                    f"fine-tuned medians {curve}, full retrain {reference.average:.6f}")

    def plot(self, args: argparse.Namespace) -> None:
        reports = {path.stem: read_report(path) for path in args.reports}
        curves = {path.stem: read_curves(path) for path in args.curves}
        topn = read_report(args.topn) if args.topn is not None else None
        emit_plots(reports, self.out_dir, topn=topn, curves=curves)


def main(argv: Optional[Sequence[str]] = None) -> bool:
    """Parse arguments and run one sub-command.

    Returns:
        bool: True if the command completed, False on a pipeline error
    """
    args = build_parser().parse_args(argv)
    try:
        settings = runtime_settings()
        if args.debug or settings.debug:
            logging.getLogger().setLevel(logging.DEBUG)
            logger.debug("Debug logging enabled")
        cfg = load_config(args.config, args.preset)
        out_dir = args.out or settings.out_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        pipeline = Pipeline(cfg, settings, out_dir, args.seed)
        logger.info(f"Running {args.command} (seed {pipeline.seed}, device {settings.device}) into {out_dir}")
        getattr(pipeline, args.command.replace("-", "_"))(args)
    except PathmapsError as e:
        logger.error(f"{args.command} failed: {e}")
        return False
    logger.info(f"{args.command} finished")
    return True


def run() -> None:
    try:
        sys.exit(0 if main() else 1)
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        sys.exit(130)
    except Exception as e:
        error_msg = f"Unhandled exception: {str(e)}"
        logger.error(error_msg)
        sys.exit(1)


if __name__ == "__main__":
    run()
