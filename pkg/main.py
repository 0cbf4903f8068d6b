"""
slotforge command line.

    python main.py gen       --config c.json --seed 0 --out data/ --num-clips 64
    python main.py pretrain  --config c.json --data data/ --out ckpt_pre.slot
    python main.py train     --config c.json --data data/ --init ckpt_pre.slot --out ckpt.slot
    python main.py eval      --ckpt ckpt.slot --data data/ --report out/ [--theta-sweep ...] [--export-masks]
    python main.py infer     --ckpt ckpt.slot --video clipdir/ --export-masks out/
    python main.py gradcheck --dims tiny
"""

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from scripts.checkpoint import TrainingState, load_checkpoint, save_checkpoint
from scripts.data import generate_sprite_video, load_dataset, load_frames_dir, write_clip
from scripts.errors import ConfigError, SlotforgeError
from scripts.evaluation.evaluator import METRIC_KEYS, Evaluator, run_sweep
from scripts.evaluation.export import export_clip, write_reports
from scripts.runconfig import RunConfig, parse_config
from scripts.training import Trainer, clip_features, feature_encoder, initial_store, run_gradcheck
from utils import ensure_directories, load_config, save_to_json, setup_logger

# ─── LOGGER & CONFIG ────────────────────────────────────────────────────────────────
config = load_config()
logger = setup_logger(__name__, config)

SETTINGS = config.get("slotforge", {})
EFFECTIVE_CONFIG_NAME = SETTINGS.get("effective_config_name", "effective_config.json")
METRICS_LOG_SUFFIX = SETTINGS.get("metrics_log_suffix", ".metrics.jsonl")
GRADCHECK_TOLERANCE = float(SETTINGS.get("gradcheck_tolerance", 1e-4))
LATENCY_BUDGET_MS = float(SETTINGS.get("latency_budget_ms", 100))


# ─── HELPERS ─────────────────────────────────────────────────────────────────────────
def write_effective_config(run_cfg: RunConfig, out: Path) -> Path:
    """`<dir>/effective_config.json` for directory outputs, `<file>.effective_config.json` otherwise."""
    out = Path(out)
    path = out / EFFECTIVE_CONFIG_NAME if out.is_dir() else out.with_name(f"{out.name}.{EFFECTIVE_CONFIG_NAME}")
    save_to_json(run_cfg.to_dict(), path)
    return path


def parse_float_list(text: Optional[str]) -> List[float]:
    if not text:
        return []
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("sweep", f"expected comma-separated numbers, got {text!r}") from None


def parse_int_list(text: Optional[str]) -> List[int]:
    values = parse_float_list(text)
    if any(v != int(v) for v in values):
        raise ConfigError("sweep", f"expected comma-separated integers, got {text!r}")
    return [int(v) for v in values]


def dataset_features(run_cfg: RunConfig, data_dir: Path):
    dataset = load_dataset(data_dir)
    encoder = feature_encoder(run_cfg)
    return [clip_features(video.frames, run_cfg, encoder) for _, video in dataset]


def print_metrics(title: str, aggregate: Dict[str, Any]) -> None:
    values = ", ".join(
        f"{k}={aggregate[k]:.4f}" if isinstance(aggregate.get(k), float) else f"{k}={aggregate.get(k)}"
        for k in METRIC_KEYS
    )
    print(f"{title}: {values}")


def print_latency(latency_ms: float) -> None:
    verdict = "within" if latency_ms < LATENCY_BUDGET_MS else "over"
    print(f"Forward latency: {latency_ms:.2f} ms/frame ({verdict} the {LATENCY_BUDGET_MS:.0f} ms budget)")


# ─── COMMANDS ────────────────────────────────────────────────────────────────────────
def cmd_gen(args) -> int:
    run_cfg = parse_config(args.config, args.set)
    gen_cfg = run_cfg.generator_config()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(args.seed).generate_state(args.num_clips)
    for index in tqdm(range(args.num_clips), desc="gen"):
        clip_seed = int(seeds[index])
        video = generate_sprite_video(gen_cfg, clip_seed)
        write_clip(video, out / f"clip_{index:04d}", meta={"seed": clip_seed, "generator": gen_cfg.to_dict()})
    write_effective_config(run_cfg, out)
    logger.info("Generated %s clips into '%s' (seed %s)", args.num_clips, out, args.seed)
    print(f"Wrote {args.num_clips} clips to {out}")
    return 0


def _train(args, stage: str, forced: Sequence[str]) -> int:
    """
    Shared body of pretrain and train.

    The run config starts from the config echo of --resume or --init when one is given, so a
    stage-2 run started with --init keeps the pretraining steps and lr unless --config or
    --set replace them.
    """
    resume: Optional[TrainingState] = load_checkpoint(args.resume) if args.resume else None
    init: Optional[TrainingState] = None
    if getattr(args, "init", None):
        init = load_checkpoint(args.init)
    source = resume or init
    run_cfg = parse_config(
        args.config, list(args.set) + [f"stage={stage}"] + list(forced), base=source.config if source else None
    )
    if resume is None and init is not None:
        logger.info(
            "Stage 2 runs %s steps at lr %s, starting from the config of '%s'", run_cfg.steps, run_cfg.lr, args.init
        )
    clips = dataset_features(run_cfg, Path(args.data))

    if resume is not None:
        trainer = Trainer.from_state(resume, run_cfg, clips)
    else:
        trainer = Trainer(run_cfg, clips, store=initial_store(run_cfg, init))

    out = Path(args.out)
    metrics_path = out.with_name(out.name + METRICS_LOG_SUFFIX)
    records = trainer.fit(metrics_path=metrics_path, progress=True)
    save_checkpoint(trainer.state(), out)
    write_effective_config(run_cfg, out)
    if records:
        print(f"{stage}: step {trainer.step}, loss {records[0]['loss']:.6f} -> {records[-1]['loss']:.6f}")
    print(f"Checkpoint written to {out}")
    return 0


def cmd_pretrain(args) -> int:
    return _train(args, "pretrain", [])


def cmd_train(args) -> int:
    forced = []
    if args.cold_start:
        forced.append("cold_start=true")
    if args.no_dtst:
        forced += ["use_dtst=false", "use_xslot=false"]
    if args.no_merger:
        forced.append("use_merger=false")
    if args.no_xslot:
        forced.append("use_xslot=false")
    return _train(args, "stage2", forced)


def _eval_config(args, state: TrainingState) -> RunConfig:
    return parse_config(args.config, args.set, base=state.config)


def cmd_eval(args) -> int:
    state = load_checkpoint(args.ckpt)
    run_cfg = _eval_config(args, state)
    dataset = load_dataset(Path(args.data))
    report_dir = Path(args.report)
    report_dir.mkdir(parents=True, exist_ok=True)

    evaluator = Evaluator(run_cfg, state.store)
    report, results = evaluator.evaluate(dataset, keep_results=True)
    write_reports(report, report_dir)
    print_metrics("aggregate", report.aggregate)
    print_latency(report.latency_ms)

    if args.export_masks:
        for clip in results:
            export_clip(clip, evaluator.patch_grid, report_dir / "masks")

    sweeps = [
        ("theta", parse_float_list(args.theta_sweep)),
        ("clip_length", parse_int_list(args.clip_lengths)),
        ("slot_count", parse_int_list(args.slot_counts)),
    ]
    for name, values in sweeps:
        if not values:
            continue
        summary = run_sweep(state.store, run_cfg, dataset, name, values)
        save_to_json(summary, report_dir / f"sweep_{name}.json")
        for entry in summary["entries"]:
            print_metrics(f"{name}={entry['value']}", entry["aggregate"])

    write_effective_config(run_cfg, report_dir)
    return 0


def cmd_infer(args) -> int:
    state = load_checkpoint(args.ckpt)
    run_cfg = _eval_config(args, state)
    video_dir = Path(args.video)
    video = load_frames_dir(video_dir)
    out = Path(args.export_masks)
    out.mkdir(parents=True, exist_ok=True)

    evaluator = Evaluator(run_cfg, state.store)
    clip = evaluator.evaluate_clip(video_dir.name, video)
    clip_dir = export_clip(clip, evaluator.patch_grid, out)
    record = clip.report(run_cfg.to_dict())
    save_to_json(record, clip_dir / "report.json")
    if video.annotated:
        print_metrics(clip.clip_id, record)
    print(f"Active slots per frame: {clip.result.active_slots_per_frame}")
    print_latency(clip.latency_ms)
    write_effective_config(run_cfg, out)
    return 0


def cmd_gradcheck(args) -> int:
    run_cfg = RunConfig.tiny()
    if args.set:
        run_cfg = parse_config(None, args.set, base=run_cfg.to_dict())
    errors = run_gradcheck(run_cfg)
    worst = max(errors.values())
    for name, value in errors.items():
        print(f"{name}: max relative error {value:.3e}")
    if worst >= GRADCHECK_TOLERANCE:
        logger.error("Gradient check failed: %.3e >= %.1e", worst, GRADCHECK_TOLERANCE)
        print(f"FAILED: {worst:.3e} >= {GRADCHECK_TOLERANCE:.1e}")
        return 1
    print(f"OK: {worst:.3e} < {GRADCHECK_TOLERANCE:.1e}")
    return 0


# ─── ARGUMENTS ───────────────────────────────────────────────────────────────────────
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slotforge", description="Dynamic slot allocation for video object discovery.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None, help="JSON run config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a run config key")

    p = sub.add_parser("gen", help="generate synthetic sprite clips")
    common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--num-clips", type=int, default=64)
    p.set_defaults(func=cmd_gen)

    for name, func, help_text in (
        ("pretrain", cmd_pretrain, "stage 1: recurrent slot initialisation"),
        ("train", cmd_train, "stage 2: predicted initialisation, masking, merging"),
    ):
        p = sub.add_parser(name, help=help_text)
        common(p)
        p.add_argument("--data", type=Path, required=True)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--resume", type=Path, default=None, help="continue a checkpoint of the same stage")
        if name == "train":
            p.add_argument(
                "--init",
                type=Path,
                default=None,
                help=(
                    "pretraining checkpoint; stage 2 inherits its run config, steps and lr included, "
                    "unless --config or --set override them"
                ),
            )
            p.add_argument("--cold-start", action="store_true", help="start stage 2 without --init")
            p.add_argument("--no-dtst", action="store_true")
            p.add_argument("--no-merger", action="store_true")
            p.add_argument("--no-xslot", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="score a checkpoint on a clip directory")
    common(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--theta-sweep", default=None, help="e.g. 0.70,0.80,0.85,0.90,0.95,0.99")
    p.add_argument("--clip-lengths", default=None, help="e.g. 5,7,11")
    p.add_argument("--slot-counts", default=None, help="e.g. 5,11 (merging disabled)")
    p.add_argument("--export-masks", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="roll a checkpoint over one clip and export its masks")
    common(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--video", type=Path, required=True)
    p.add_argument("--export-masks", type=Path, required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference check of both training losses")
    p.add_argument("--dims", choices=["tiny"], default="tiny")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    ensure_directories()
    try:
        return args.func(args)
    except SlotforgeError as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
