"""Command-line surface: corpus generation, fragment inspection,
training, scoring, quality-map export, stability and cost reports.

Every command resolves its configuration as defaults <- config file
(--config, YAML) <- flags, emits the result with a sha256 hash, and
fails with ``<ErrorClass>: <message>`` on stderr plus the class's exit
code. Outputs go only under --out; an existing non-empty --out is
refused without --force. Relative --out paths resolve under
$FRAGVQA_OUT_ROOT when that is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .configio import emit_effective_config, merge_config
from .errors import ConfigurationError, FragVqaError
from .fanet import load_checkpoint, predict, preset
from .fanet.quality import export_quality_map
from .harness import (TrainConfig, evaluate, flops_count, score_clip,
                      stability_analysis, train)
from .harness.data import make_splits
from .media import ManifestRecord, load_clip, read_manifest, save_clip, write_manifest
from .sampling import (VARIANTS, GridSpec, sample_variant, save_fragments,
                       select_count)
from .synth import DistortionProfile, synthesize_corpus

_PROFILES = {
    "default": DistortionProfile,
    "zero": DistortionProfile.zero,
    "blur_only": DistortionProfile.blur_only,
}


def _resolve_out(path: str) -> str:
    root = os.environ.get("FRAGVQA_OUT_ROOT")
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _ensure_out(path: str, force: bool) -> str:
    path = _resolve_out(path)
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise ConfigurationError(
            f"output directory {path} is not empty; pass --force to reuse it")
    os.makedirs(path, exist_ok=True)
    return path


def _load_profile(name: str) -> DistortionProfile:
    if name in _PROFILES:
        return _PROFILES[name]()
    if os.path.exists(name):
        from .configio import load_config_file

        fields = load_config_file(name)
        for key in ("blur_sigma", "noise_std", "shake_amp", "blur_region",
                    "noise_region"):
            if key in fields and isinstance(fields[key], list):
                fields[key] = tuple(fields[key])
        try:
            profile = DistortionProfile(**fields)
        except TypeError as exc:
            raise ConfigurationError(f"bad profile fields in {name}: {exc}") from exc
        profile.validate()
        return profile
    raise ConfigurationError(
        f"unknown profile {name!r}; use one of {', '.join(sorted(_PROFILES))} "
        f"or a YAML file path")


def _flag_overrides(args, keys) -> dict:
    return {k: getattr(args, k.replace("-", "_"), None) for k in keys}


# Per-command configuration defaults; values must stay JSON-serializable
# because the effective config is hashed as canonical JSON.
_SYNTH_DEFAULTS = {
    "n": 20, "seed": 0, "profile": "default", "frames": 8, "height": 192,
    "width": 192, "fps": 24.0, "splits": [0.7, 0.15, 0.15],
}
_FRAGMENTS_DEFAULTS = {
    "gf": 7, "sf": 32, "t": 32, "seed": 0, "variant": "gms",
    "pre_upscale": False, "sheet": False,
}
_TRAIN_DEFAULTS = {
    "preset": "tiny", "epochs": 20, "batch_size": 16, "lr": 1e-3,
    "weight_decay": 0.05, "seed": 0, "variant": "gms", "redraw": True,
    "lr_schedule": "cosine", "device": "cpu",
}
_EVAL_DEFAULTS = {
    "split": "test", "variant": "gms", "n_samples": 1, "seed": 0,
    "device": "cpu",
}
_SCORE_DEFAULTS = {"variant": "gms", "seed": 0, "device": "cpu"}
_MAP_DEFAULTS = {"seed": 0, "frame_index": 0, "device": "cpu"}
_STABILITY_DEFAULTS = {
    "split": "test", "variant": "gms", "n_repeats": 16, "ensemble_k": 6,
    "seed": 0, "label_range": 4.0, "device": "cpu",
}
_FLOPS_DEFAULTS = {"preset": "full", "frames": 0, "height": 0, "width": 0}


def cmd_synth(args) -> int:
    cfg = merge_config(_SYNTH_DEFAULTS, args.config,
                       _flag_overrides(args, _SYNTH_DEFAULTS))
    if cfg["n"] < 1:
        raise ConfigurationError(f"--n must be >= 1, got {cfg['n']}")
    out = _ensure_out(args.out, args.force)
    emit_effective_config(cfg, out, "synth")
    profile = _load_profile(cfg["profile"])
    corpus = synthesize_corpus(cfg["n"], cfg["seed"], profile,
                               frames=cfg["frames"], height=cfg["height"],
                               width=cfg["width"], fps=cfg["fps"])
    clip_dir = os.path.join(out, "clips")
    os.makedirs(clip_dir, exist_ok=True)
    ids = [clip.source_id for clip, _ in corpus]
    splits = make_splits(ids, tuple(cfg["splits"]))
    records, labels = [], {}
    for clip, label in corpus:
        rel = os.path.join("clips", f"{clip.source_id}.rvc")
        save_clip(clip, os.path.join(out, rel))
        records.append(ManifestRecord(path=rel, mos=label.mos,
                                      split=splits[clip.source_id]))
        labels[clip.source_id] = label.degradation
    write_manifest(records, os.path.join(out, "manifest.tsv"))
    with open(os.path.join(out, "labels.json"), "w", encoding="utf-8") as fh:
        json.dump(labels, fh, indent=2, sort_keys=True)
        fh.write("\n")
    counts = {s: sum(1 for r in records if r.split == s)
              for s in ("train", "val", "test")}
    print(f"wrote {len(records)} clips to {out} "
          f"(train {counts['train']}, val {counts['val']}, test {counts['test']})")
    return 0


def cmd_fragments(args) -> int:
    cfg = merge_config(_FRAGMENTS_DEFAULTS, args.config,
                       _flag_overrides(args, _FRAGMENTS_DEFAULTS))
    if cfg["variant"] not in VARIANTS:
        raise ConfigurationError(
            f"unknown variant {cfg['variant']!r}; use one of {', '.join(VARIANTS)}")
    out = _ensure_out(args.out, args.force)
    emit_effective_config({**cfg, "in": os.path.abspath(args.inp)}, out, "fragments")
    clip = load_clip(args.inp)
    spec = GridSpec(cfg["gf"], cfg["sf"], cfg["t"])
    batch = sample_variant(clip, spec, cfg["variant"], cfg["seed"],
                           pre_upscale=cfg["pre_upscale"])
    save_fragments(batch, os.path.join(out, "fragments.frb"))
    if cfg["sheet"]:
        from .viz import render_contact_sheet

        render_contact_sheet(batch.fragments, os.path.join(out, "sheet.png"),
                             grid_count=cfg["gf"])
    print(f"wrote {batch.fragments.shape} {cfg['variant']} fragments to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = merge_config(_TRAIN_DEFAULTS, args.config,
                       _flag_overrides(args, _TRAIN_DEFAULTS))
    out = _ensure_out(args.out, args.force)
    emit_effective_config({**cfg, "manifest": os.path.abspath(args.manifest)},
                          out, "train")
    records = read_manifest(args.manifest)
    train_cfg = TrainConfig(batch_size=cfg["batch_size"], lr=cfg["lr"],
                            weight_decay=cfg["weight_decay"],
                            epochs=cfg["epochs"], seed=cfg["seed"],
                            sampler_variant=cfg["variant"],
                            redraw_plan_per_iter=cfg["redraw"],
                            lr_schedule=cfg["lr_schedule"])
    best_path, history = train(records, train_cfg, preset(cfg["preset"]), out,
                               device=cfg["device"])
    from .viz import render_training_curves

    render_training_curves(history, os.path.join(out, "curves.png"))
    last = history[-1]
    print(f"trained {cfg['preset']} for {len(history)} epochs; "
          f"final train_loss {last['train_loss']:.4f}; best checkpoint {best_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = merge_config(_EVAL_DEFAULTS, args.config,
                       _flag_overrides(args, _EVAL_DEFAULTS))
    out = _ensure_out(args.out, args.force)
    digest = emit_effective_config(
        {**cfg, "manifest": os.path.abspath(args.manifest),
         "checkpoint": os.path.abspath(args.checkpoint)}, out, "eval")
    model, _ = load_checkpoint(args.checkpoint)
    records = read_manifest(args.manifest)
    result = evaluate(model, records, variant=cfg["variant"],
                      n_samples=cfg["n_samples"], seed=cfg["seed"],
                      device=cfg["device"], split=cfg["split"])
    result["config_sha256"] = digest
    with open(os.path.join(out, "eval.json"), "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    from .viz import render_eval_scatter

    render_eval_scatter(result, os.path.join(out, "scatter.png"))
    m = result["metrics"]
    print(f"{cfg['split']} n={len(result['per_video'])} "
          f"srcc {m['srcc']:.4f} plcc {m['plcc']:.4f} krcc {m['krcc']:.4f}")
    return 0


def cmd_score(args) -> int:
    cfg = merge_config(_SCORE_DEFAULTS, args.config,
                       _flag_overrides(args, _SCORE_DEFAULTS))
    from .configio import config_hash

    model, _ = load_checkpoint(args.checkpoint)
    mcfg = model.cfg
    spec = GridSpec(mcfg.grid_count, mcfg.patch_size, mcfg.frames)
    print(f"# config sha256 {config_hash(cfg)}")
    for path in args.inputs:
        clip = load_clip(path)
        score = score_clip(model, clip, spec, cfg["variant"], [cfg["seed"]],
                           device=cfg["device"])
        print(f"{score!r}\t{path}")
    return 0


def cmd_map(args) -> int:
    cfg = merge_config(_MAP_DEFAULTS, args.config,
                       _flag_overrides(args, _MAP_DEFAULTS))
    out = _ensure_out(args.out, args.force)
    emit_effective_config(
        {**cfg, "in": os.path.abspath(args.inp),
         "checkpoint": os.path.abspath(args.checkpoint)}, out, "map")
    model, _ = load_checkpoint(args.checkpoint)
    mcfg = model.cfg
    spec = GridSpec(mcfg.grid_count, mcfg.patch_size, mcfg.frames)
    clip = select_count(load_clip(args.inp), mcfg.frames)
    batch = sample_variant(clip, spec, "gms", cfg["seed"])
    result = predict(model, batch, device=cfg["device"])
    fi = cfg["frame_index"]
    if not 0 <= fi < clip.num_frames:
        raise ConfigurationError(
            f"--frame-index {fi} out of range for {clip.num_frames} frames")
    export_quality_map(result, batch.plan, mcfg.patch_size,
                       os.path.join(out, "quality_map.tsv"),
                       overlay_path=os.path.join(out, "overlay.png"),
                       frame=clip.frames[fi])
    print(f"score {result.score!r}; map and overlay in {out}")
    return 0


def cmd_stability(args) -> int:
    cfg = merge_config(_STABILITY_DEFAULTS, args.config,
                       _flag_overrides(args, _STABILITY_DEFAULTS))
    out = _ensure_out(args.out, args.force)
    digest = emit_effective_config(
        {**cfg, "manifest": os.path.abspath(args.manifest),
         "checkpoint": os.path.abspath(args.checkpoint)}, out, "stability")
    model, _ = load_checkpoint(args.checkpoint)
    records = read_manifest(args.manifest)
    result = stability_analysis(model, records, n_repeats=cfg["n_repeats"],
                                ensemble_k=cfg["ensemble_k"], seed=cfg["seed"],
                                variant=cfg["variant"],
                                label_range=cfg["label_range"],
                                device=cfg["device"], split=cfg["split"])
    result["config_sha256"] = digest
    with open(os.path.join(out, "stability.json"), "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    from .viz import render_stability

    render_stability(result, os.path.join(out, "stability.png"))
    print(f"pair accuracy {result['pair_accuracy']:.4f} "
          f"normalized std {result['normalized_std']:.5f} "
          f"over {len(result['per_video'])} videos")
    return 0


def cmd_flops(args) -> int:
    cfg = merge_config(_FLOPS_DEFAULTS, args.config,
                       _flag_overrides(args, _FLOPS_DEFAULTS))
    fanet_cfg = preset(cfg["preset"])
    shape = None
    if cfg["height"] or cfg["width"] or cfg["frames"]:
        if not (cfg["height"] and cfg["width"] and cfg["frames"]):
            raise ConfigurationError(
                "--height, --width, and --frames must be given together")
        shape = (cfg["frames"], cfg["height"], cfg["width"], 3)
    report = flops_count(fanet_cfg, input_shape=shape)
    text = report.as_text()
    print(text)
    if args.out:
        out = _ensure_out(args.out, args.force)
        emit_effective_config(cfg, out, "flops")
        with open(os.path.join(out, "flops.txt"), "w", encoding="utf-8") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fragvqa",
        description="Fragment-based no-reference video quality assessment.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_out=True):
        p.add_argument("--config", help="YAML config file merged under flags")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
            p.add_argument("--force", action="store_true",
                           help="reuse a non-empty output directory")

    p = sub.add_parser("synth", help="generate a labeled synthetic corpus")
    add_common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--profile", help="default, zero, blur_only, or a YAML path")
    p.add_argument("--frames", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--fps", type=float)
    p.add_argument("--splits", type=float, nargs=3,
                   metavar=("TRAIN", "VAL", "TEST"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fragments", help="sample and serialize fragments")
    add_common(p)
    p.add_argument("--in", dest="inp", required=True, help="input clip")
    p.add_argument("--gf", type=int, help="grid count per side")
    p.add_argument("--sf", type=int, help="patch size in pixels")
    p.add_argument("--t", type=int, help="frame count")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--pre-upscale", action="store_const", const=True,
                   dest="pre_upscale",
                   help="enlarge sub-grid-size frames instead of failing")
    p.add_argument("--sheet", action="store_const", const=True,
                   help="also render a contact-sheet image")
    p.set_defaults(func=cmd_fragments)

    p = sub.add_parser("train", help="train a model on a manifest")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--preset", choices=("full", "mobile", "tiny"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--no-redraw", action="store_const", const=False,
                   dest="redraw", help="keep one sampling plan per clip")
    p.add_argument("--lr-schedule", choices=("cosine", "flat-cosine"),
                   dest="lr_schedule")
    p.add_argument("--device")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--n-samples", type=int, dest="n_samples",
                   help="samplings averaged per video")
    p.add_argument("--seed", type=int)
    p.add_argument("--device")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="print one score per input clip")
    add_common(p, needs_out=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--seed", type=int)
    p.add_argument("--device")
    p.add_argument("inputs", nargs="+", help="clip paths")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("map", help="export a re-projected quality map")
    add_common(p)
    p.add_argument("--in", dest="inp", required=True, help="input clip")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--frame-index", type=int, dest="frame_index",
                   help="source frame under the overlay")
    p.add_argument("--device")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("stability", help="repeated-sampling stability report")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--n-repeats", type=int, dest="n_repeats")
    p.add_argument("--ensemble-k", type=int, dest="ensemble_k")
    p.add_argument("--seed", type=int)
    p.add_argument("--label-range", type=float, dest="label_range")
    p.add_argument("--device")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("flops", help="analytic cost report for a preset")
    p.add_argument("--config", help="YAML config file merged under flags")
    p.add_argument("--preset", choices=("full", "mobile", "tiny"))
    p.add_argument("--frames", type=int, help="source frame count")
    p.add_argument("--height", type=int, help="source height")
    p.add_argument("--width", type=int, help="source width")
    p.add_argument("--out", help="optionally also write the report here")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_flops)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FragVqaError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
