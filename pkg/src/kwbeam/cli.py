"""
kwbeam command line: simulate | train | enhance | evaluate.

Exit codes: 0 success, 2 validation error, 3 numeric failure.
"""

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .audio_io import (AudioBuffer, ManifestEntry, lookup_region,
                       read_annotations, read_manifest, read_wav,
                       require_sample_rate, write_manifest, write_wav)
from .beamformer import save_filter
from .config import load_config
from .errors import KwbeamError, NumericError, ValidationError
from .masknet import load_model, save_model
from .metrics import MASK_TYPES, aggregate, write_report_csv, write_report_json
from .pipeline import enhance, evaluate_scene, train_model
from .simulator import (read_scene, render_scene_spec, simu_set_specs,
                        synth_corpus, write_scene)

logger = logging.getLogger("kwbeam")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3


def _config(args, **sections):
    overrides = {k: v for k, v in sections.items() if v}
    return load_config(args.config, overrides)


def _seed_override(args, key="seed"):
    return {key: args.seed} if args.seed is not None else {}


# --------------------------------------------------------------------- simulate

def _render_one(job):
    spec, out_dir, cfg = job
    render = render_scene_spec(spec, cfg.geometry(), cfg.stft.sample_rate)
    write_scene(render, Path(out_dir) / spec["id"], spec)
    return spec["id"]


def cmd_simulate(args):
    sim = {"num_targets": args.targets, "num_interferers": args.interferers,
           "patterns": args.patterns, "snr_db": args.snr_db,
           "min_separation": args.min_separation, "channels": args.channels,
           "spacing": args.spacing, "gap_s": args.gap}
    sim.update(_seed_override(args))
    cfg = _config(args, simulate=sim)
    s = cfg.simulate
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.scenes:
        with open(args.scenes) as fp:
            specs = json.load(fp)
        base = Path(args.scenes).parent
        for i, spec in enumerate(specs):
            spec.setdefault("id", f"scene{i:04d}")
            spec.setdefault("gap_s", s.gap_s)
            for key in ("keyword", "command", "interference"):
                if spec.get(key) and not Path(spec[key]).is_absolute():
                    spec[key] = str(base / spec[key])
    else:
        specs = simu_set_specs(s.num_targets, s.num_interferers, s.patterns,
                               s.seed, s.min_separation, s.snr_db)
        for spec in specs:
            spec["gap_s"] = s.gap_s
    if args.count is not None:
        specs = specs[: args.count]

    jobs = [(spec, out, cfg) for spec in specs]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            list(pool.map(_render_one, jobs))
    else:
        for job in jobs:
            _render_one(job)
    with open(out / "scenes.json", "w") as fp:
        json.dump(specs, fp, indent=2, sort_keys=True)
    logger.info("wrote %d scenes to %s", len(specs), out)

    if args.corpus:
        _write_corpus(args, cfg)
    return EXIT_OK


def _write_corpus(args, cfg):
    root = Path(args.corpus)
    keywords, backgrounds = synth_corpus(
        args.keyword_speakers, args.keywords_per_speaker,
        args.background_speakers, args.backgrounds_per_speaker,
        cfg.simulate.seed)
    entries = []
    for kind, items in (("keyword", keywords), ("background", backgrounds)):
        for i, (samples, speaker) in enumerate(items):
            path = root / kind / f"{speaker}_{i:04d}.wav"
            write_wav(AudioBuffer(samples, cfg.stft.sample_rate), path)
            entries.append(ManifestEntry(kind, path, speaker=speaker))
    write_manifest(entries, root / "manifest.jsonl")
    logger.info("wrote corpus of %d keywords, %d backgrounds to %s",
                len(keywords), len(backgrounds), root)


# ------------------------------------------------------------------------ train

def _load_corpus(manifest, rate):
    keywords, backgrounds = [], []
    for entry in read_manifest(manifest):
        if entry.kind == "mixture":
            continue
        buf = require_sample_rate(read_wav(entry.path), rate)
        # every channel is its own single-channel training signal
        for ch in range(buf.channels):
            item = (buf.samples[ch], entry.speaker)
            (keywords if entry.kind == "keyword" else backgrounds).append(item)
    if not keywords or not backgrounds:
        raise ValidationError(
            f"{manifest}: need both keyword and background entries")
    return keywords, backgrounds


def cmd_train(args):
    train = {"epochs": args.epochs, "lr": args.lr, "batch_size": args.batch}
    train.update(_seed_override(args))
    cfg = _config(args, train=train, simulate={"mixtures": args.mixtures})
    keywords, backgrounds = _load_corpus(args.manifest, cfg.stft.sample_rate)
    model, losses, _ = train_model(keywords, backgrounds, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    log_path = Path(args.loss_log) if args.loss_log else out.with_suffix(
        ".loss.csv")
    with open(log_path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(losses, 1):
            writer.writerow([i, repr(float(loss))])
    if args.figures:
        from .plotting import plot_loss
        Path(args.figures).mkdir(parents=True, exist_ok=True)
        plot_loss(losses, Path(args.figures) / "loss.png")
    logger.info("saved %s (final loss %.4f)", out, losses[-1])
    return EXIT_OK


# ---------------------------------------------------------------------- enhance

def _write_diagnostics(path, diagnostics):
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fp:
            json.dump(diagnostics, fp, indent=2, default=str)


def cmd_enhance(args):
    diag_path = args.diagnostics or str(Path(args.out).with_suffix(".json"))
    try:
        cfg = _config(args)
        mixture = require_sample_rate(read_wav(args.mixture),
                                      cfg.stft.sample_rate)
        region = lookup_region(read_annotations(args.regions), args.mixture)
        oracle = model = None
        if args.oracle:
            if not (args.target and args.interference):
                raise ValidationError("--oracle needs --target and "
                                      "--interference clean references")
            oracle = (read_wav(args.target), read_wav(args.interference))
        else:
            if not args.model:
                raise ValidationError("--model is required without --oracle")
            model = load_model(args.model, cfg.model_dims)
        enhanced, gamma, diagnostics = enhance(mixture, region, cfg, model,
                                               oracle)
    except NumericError as exc:
        _write_diagnostics(diag_path, {"error": str(exc), **exc.diagnostics})
        raise
    except KwbeamError as exc:
        _write_diagnostics(diag_path, {"error": str(exc)})
        raise
    write_wav(enhanced, args.out)
    if args.filter_out:
        save_filter(gamma, args.filter_out)
    diagnostics["region"] = [region.start_s, region.end_s]
    _write_diagnostics(diag_path, diagnostics)
    return EXIT_OK


# --------------------------------------------------------------------- evaluate

def _scene_dirs(root):
    root = Path(root)
    dirs = sorted(p for p in root.iterdir()
                  if (p / "mixture.wav").exists() and (p / "regions.tsv").exists())
    if not dirs:
        raise ValidationError(f"no scene directories under {root}")
    return dirs


def _evaluate_one(job):
    scene_dir, model, cfg = job
    render = read_scene(scene_dir)
    return evaluate_scene(render, model, cfg, scene_dir.name)


def cmd_evaluate(args):
    cfg = _config(args)
    model = load_model(args.model, cfg.model_dims)
    dirs = _scene_dirs(args.scenes)
    jobs = [(d, model, cfg) for d in dirs]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_evaluate_one, jobs))
    else:
        results = [_evaluate_one(job) for job in jobs]

    rows = [row for scene_rows, _ in results for row in scene_rows]
    per_scene = []
    for scene_rows, detail in results:
        entry = {"scene_id": detail["scene_id"]}
        for row in scene_rows:
            entry[row["mask_type"]] = row["sdri_db"]
        entry["sir_improvement_estimated_db"] = \
            detail["sir_estimated"]["improvement_db"]
        entry["sir_improvement_ibm_db"] = detail["sir_ibm"]["improvement_db"]
        entry["sir_in_db"] = detail["sir_estimated"]["sir_in_db"]
        per_scene.append(entry)
    summary = aggregate(per_scene, list(MASK_TYPES) + [
        "sir_improvement_estimated_db", "sir_improvement_ibm_db"])

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = Path(args.csv) if args.csv else out.with_suffix(".csv")
    write_report_csv(rows, csv_path)
    write_report_json({"summary": summary, "scenes": per_scene,
                       "details": [{k: v for k, v in d.items() if k != "example"}
                                   for _, d in results]}, out)
    if args.figures:
        from .plotting import (plot_mask_example, plot_sdri_summary,
                               plot_sir_improvements)
        fig_dir = Path(args.figures)
        fig_dir.mkdir(parents=True, exist_ok=True)
        plot_sdri_summary(summary, fig_dir / "sdri_summary.png")
        plot_sir_improvements(rows, fig_dir / "sir_improvement.png")
        plot_mask_example(results[0][1]["example"],
                          fig_dir / f"masks_{results[0][1]['scene_id']}.png")
    for key in MASK_TYPES:
        if key in summary:
            logger.info("SDRi %-6s %6.2f +- %.2f dB", key,
                        summary[key]["mean"], summary[key]["std"])
    return EXIT_OK


# ------------------------------------------------------------------------ main

def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="TOML config file")
    shared.add_argument("--seed", type=int, default=None)
    shared.add_argument("--jobs", type=int, default=1,
                        help="parallel worker processes (file level)")
    shared.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="kwbeam",
        description="Keyword-cued mask-based MVDR speech enhancement")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[shared],
                       help="render synthetic two-talker scenes")
    p.add_argument("--out", required=True, help="scene tree directory")
    p.add_argument("--scenes", help="JSON list of scene descriptions")
    p.add_argument("--count", type=int, help="keep only the first N scenes")
    p.add_argument("--targets", type=int)
    p.add_argument("--interferers", type=int)
    p.add_argument("--patterns", type=int)
    p.add_argument("--snr-db", type=float)
    p.add_argument("--min-separation", type=float)
    p.add_argument("--channels", type=int)
    p.add_argument("--spacing", type=float)
    p.add_argument("--gap", type=float, help="keyword-command gap (s)")
    p.add_argument("--corpus", help="also write a training corpus here")
    p.add_argument("--keyword-speakers", type=int, default=20)
    p.add_argument("--keywords-per-speaker", type=int, default=10)
    p.add_argument("--background-speakers", type=int, default=15)
    p.add_argument("--backgrounds-per-speaker", type=int, default=10)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[shared], help="train the mask net")
    p.add_argument("--manifest", required=True, help="corpus manifest (JSONL)")
    p.add_argument("--out", required=True, help="model file (.kwnet)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--mixtures", type=int, help="number of training mixtures")
    p.add_argument("--loss-log", help="CSV of per-epoch loss")
    p.add_argument("--figures", help="directory for the loss curve")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", parents=[shared],
                       help="enhance one multichannel mixture")
    p.add_argument("--mixture", required=True)
    p.add_argument("--regions", required=True, help="keyword region TSV")
    p.add_argument("--out", required=True, help="enhanced mono WAV")
    p.add_argument("--model")
    p.add_argument("--oracle", action="store_true",
                   help="use IBMs from clean references instead of the model")
    p.add_argument("--target", help="clean multichannel target (oracle)")
    p.add_argument("--interference", help="clean interference (oracle)")
    p.add_argument("--diagnostics", help="diagnostics JSON path")
    p.add_argument("--filter-out", help="dump the filter (KWBF1)")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", parents=[shared],
                       help="SDRi / SIR report over a scene tree")
    p.add_argument("--model", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--csv", help="per-scene CSV (default: next to --out)")
    p.add_argument("--figures", help="directory for report figures")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(json.dumps({"error": str(exc), **exc.diagnostics}, default=str),
              file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, FileNotFoundError) as exc:
        print(f"kwbeam: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
