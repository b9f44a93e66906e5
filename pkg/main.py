"""
CyclicPrompt command-line entry point.

- make-scenes: procedural clean images for the desk pipeline
- synth: degraded/clean pairs with train/val/test manifests
- train: cyclic two-iteration training
- infer: restore a file or a directory
- eval: PSNR/SSIM report over a manifest
- ablate: component ablation with ordering checks
- info: parameter counts and MACs
"""
import argparse
import json
import os
import sys
import time

import torch
from dotenv import load_dotenv

from config import ConfigManager, reload_config
from utils.errors import CyclicPromptError
from utils.logger import logger, progress


def parse_arguments(argv=None):
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(description="CyclicPrompt adverse weather restoration")
    parser.add_argument("--config", type=str, default=None,
                        help="Path to configuration file (defaults to config/base_config.yaml)")
    parser.add_argument("--preset", type=str, default=None,
                        help="Preset overlaid on the configuration (e.g. paper)")
    parser.add_argument("--override", type=str,
                        help="JSON string with configuration overrides")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-scenes", help="Write procedural clean scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=24)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="Synthesize degraded pairs and manifests")
    p.add_argument("--clean-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mix", type=str, default=None, help="JSON degradation mix (defaults to data.mix)")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="Train on a synthesized dataset")
    p.add_argument("--data", required=True, help="Directory holding train.tsv (and val.tsv)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("infer", help="Restore an image or a directory of images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--both-iterations", action="store_true", help="Also write the first-pass restoration")
    p.add_argument("--weather", type=str, default="adverse weather",
                   help="Weather phrase for metadata captions")
    p.add_argument("--save-residual", action="store_true",
                   help="Also write the residue map of the first-pass restoration")

    p = sub.add_parser("eval", help="Score a checkpoint on a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--both-iterations", action="store_true")

    p = sub.add_parser("ablate", help="Train and score ablation variants")
    p.add_argument("--data", required=True)
    p.add_argument("--variants", nargs="+", default=["baseline", "c2p", "full"])
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)

    p = sub.add_parser("info", help="Report parameter counts and MACs")
    p.add_argument("--size", type=int, default=64)

    return parser.parse_args(argv)


def setup_environment(config: ConfigManager):
    """Set up the environment based on configuration."""
    config.create_output_directories()
    a = config.ablation
    logger.info("CyclicPrompt initialized")
    logger.info(f"Backbone channels: {config.model.channels}, prompt N={config.prompt.N} D={config.prompt.D}")
    logger.info(f"Embedder: {config.embedder.backend} (seed {config.embedder.seed}), "
                f"attention scale: {config.attn.scale_mode}")
    logger.info(f"Components: prompt={a.use_prompt} knowledge={a.use_knowledge} vectors={a.use_input_vectors} "
                f"text={a.use_text} epm={a.use_epm} rpm={a.use_rpm}")


def cmd_make_scenes(args, config):
    from utils.dataset import make_clean_scenes

    make_clean_scenes(args.out, count=args.count, size=args.size, seed=args.seed)


def cmd_synth(args, config):
    from utils.dataset import make_dataset

    mix = json.loads(args.mix) if args.mix else config.data.mix
    seed = config.data.seed if args.seed is None else args.seed
    make_dataset(args.clean_dir, args.out, mix, seed=seed, split=config.data.split,
                 size=config.data.size, progress_bar=config.output.progress_bar)


def cmd_train(args, config):
    from models.restoration.embedder import Captioner
    from models.training.trainer import Trainer
    from utils.dataset import PairedWeatherDataset

    captioner = Captioner.from_config(config.embedder)
    train_set = PairedWeatherDataset.from_manifest(os.path.join(args.data, "train.tsv"), captioner)
    val_set = None
    val_manifest = os.path.join(args.data, "val.tsv")
    if config.train.val_every and os.path.isfile(val_manifest):
        val_set = PairedWeatherDataset.from_manifest(val_manifest, captioner)

    start_time = time.time()
    result = Trainer(config, train_set, args.out, val_set=val_set).train()
    logger.info(f"Final loss {result.final_loss:.5f} after {result.steps} steps "
                f"({time.time() - start_time:.1f}s)")


def cmd_infer(args, config):
    from models.restoration.embedder import Captioner
    from models.training.trainer import resolve_device
    from utils.checkpoint import load_checkpoint
    from utils.dataset import scene_label
    from utils.errors import EmptyDirectoryError
    from utils.image_io import is_image_file, read_image, to_numpy, to_tensor, write_gray_image, write_image

    model, ckpt_config, _ = load_checkpoint(args.ckpt)
    device = resolve_device(ckpt_config.eval.device)
    model.to(device)
    captioner = Captioner.from_config(ckpt_config.embedder)

    if os.path.isdir(args.input):
        files = sorted(os.path.join(args.input, f) for f in os.listdir(args.input) if is_image_file(f))
        if not files:
            raise EmptyDirectoryError(f"No images found in {args.input}")
    else:
        files = [args.input]

    os.makedirs(args.out, exist_ok=True)
    for path in files:
        img = read_image(path)
        caption = captioner.generate_caption({"scene": scene_label(path), "weather": args.weather})
        out = model.restore(to_tensor(img).unsqueeze(0).to(device), [caption])
        stem = os.path.splitext(os.path.basename(path))[0]
        write_image(os.path.join(args.out, f"{stem}.png"), to_numpy(out.final))
        if args.both_iterations:
            write_image(os.path.join(args.out, f"{stem}_first.png"), to_numpy(out.first))
        if args.save_residual:
            if out.residual is None:
                logger.warning("No residue map: erase-and-paste is disabled in this checkpoint")
            else:
                write_gray_image(os.path.join(args.out, f"{stem}_residual.png"), out.residual[0, 0].cpu().numpy())
    progress("infer", f"restored {len(files)} image(s) into {args.out}", done=True)


def cmd_eval(args, config):
    from utils.eval import evaluate

    evaluate(args.ckpt, args.manifest, both_iterations=args.both_iterations or None, report_path=args.report)


def cmd_ablate(args, config):
    from models.training.ablation import run_ablation

    report_path = args.report or os.path.join(args.out, "ablation_report.yaml")
    report = run_ablation(config, args.data, args.variants, args.seeds, args.out, report_path=report_path)
    if report["inversions"]:
        logger.warning(f"{len(report['inversions'])} ordering inversion(s) flagged in {report_path}")


def cmd_info(args, config):
    import copy

    from thop import clever_format, profile

    from models.restoration.backbone import CyclicPromptNet

    torch.manual_seed(config.train.seed)
    model = CyclicPromptNet(config).eval()
    for name, count in model.parameter_counts().items():
        logger.info(f"params {name:<28} {count:>12,}")

    size = args.size - args.size % 8 or 8
    img = torch.rand(1, 3, size, size)
    with torch.no_grad():
        macs, params = profile(copy.deepcopy(model), inputs=(img, ["a photo of scene in rain"]), verbose=False)
    macs_text, params_text = clever_format([macs, params], "%.3f")
    logger.info(f"forward_cyclic at {size}x{size}: {macs_text} MACs, {params_text} profiled params")


COMMANDS = {
    "make-scenes": cmd_make_scenes,
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "info": cmd_info,
}


def main(argv=None) -> int:
    load_dotenv()
    args = parse_arguments(argv)
    try:
        config = reload_config(args.config, preset=args.preset)
        if args.override:
            try:
                overrides = json.loads(args.override)
            except json.JSONDecodeError as e:
                logger.error(f"Invalid JSON in override parameter: {e}")
                return 1
            config.override_config(overrides)
            logger.info("Applied configuration overrides")

        setup_environment(config)
        COMMANDS[args.command](args, config)
    except CyclicPromptError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
