"""Command-line entry point: features, synth, rotate, train, infer, eval, report."""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

from .audio_io import DatasetCatalog, parse_metadata_csv, read_wav, write_metadata_csv, write_wav
from .augment import ROTATIONS, SrirSet, channel_rotate
from .config import load_settings, valid_keys, write_config_file, parse_value
from .errors import ConfigurationError, SeldError
from .features import salsa_mel, write_feature_cache

log = logging.getLogger("dkseld")


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "matplotlib"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def write_manifest(path: Path, command: str, settings, extra: dict | None = None) -> Path:
    """Record what produced an output: command line, config hash, seed, versions."""
    data = {"command": command, "argv": sys.argv[1:], "config_hash": settings.hash(),
            "seed": settings.train.seed, "versions": _versions(), "settings": settings.to_dict()}
    data.update(extra or {})
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, default=str))
    return path


def _settings(args):
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = parse_value(v)
    for key, attr in (("train.strategy", "strategy"), ("train.seed", "seed"), ("train.model", "model")):
        if getattr(args, attr, None) is not None:
            overrides[key] = getattr(args, attr)
    return load_settings(args.config, args.profile, overrides)


def cmd_features(args, settings) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for audio in args.audio:
        feat = salsa_mel(read_wav(audio), settings.features)
        write_feature_cache(out / (Path(audio).stem + ".feat"), feat, settings.features)
        log.info("%s -> %s frames", audio, feat.values.shape[1])
    write_manifest(out / "manifest.json", "features", settings, {"inputs": args.audio})
    return 0


def cmd_synth(args, settings) -> int:
    from .toy import make_toy_dataset
    srir = SrirSet.load(args.srir) if args.srir else None
    cat = make_toy_dataset(args.out, args.clips, args.classes, args.duration, settings.train.seed,
                           args.snr, srir=srir, split=args.split, scene=args.scene)
    write_manifest(Path(args.out) / "manifest.json", "synth", settings, {"clips": len(cat)})
    print(Path(args.out) / "catalog.csv")
    return 0


def cmd_rotate(args, settings) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clip = read_wav(args.audio)
    events = parse_metadata_csv(args.metadata)
    ids = args.rotation if args.rotation else list(range(len(ROTATIONS)))
    stem = Path(args.audio).stem
    for r in ids:
        rc, rev = channel_rotate(clip, events, r)
        write_wav(out / f"{stem}_rot{r}.wav", rc, bits=-32)
        write_metadata_csv(rev, out / f"{stem}_rot{r}.csv")
    write_manifest(out / "manifest.json", "rotate", settings, {"rotations": ids})
    return 0


def cmd_train(args, settings) -> int:
    from .plotting import plot_loss_curves
    from .training import train
    catalog = DatasetCatalog.load(args.catalog)
    out = Path(args.out)
    result = train(settings, catalog, out_dir=out)
    write_config_file(settings, out / "run.cfg")
    plot_loss_curves({out.name: result.history}, out / "loss_curves.png")
    write_manifest(out / "manifest.json", "train", settings,
                   {"catalog": str(args.catalog), "best": result.best, "deviations": settings.deviations()})
    print(result.checkpoint)
    return 0


def cmd_infer(args, settings) -> int:
    from dataclasses import replace
    from .inference import infer_events, load_model
    checkpoints = args.checkpoint or list(settings.infer.checkpoints)
    if not checkpoints:
        raise ConfigurationError("no checkpoint given (--checkpoint or infer.checkpoints)")
    models = [load_model(p) for p in checkpoints]
    icfg = replace(settings.infer, tta_rotations=False) if args.no_tta else settings.infer
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for audio in args.audio:
        events = infer_events(models, read_wav(audio), icfg, settings.features)
        write_metadata_csv(events, out / (Path(audio).stem + ".csv"))
    write_manifest(out / "manifest.json", "infer", settings, {"checkpoints": checkpoints})
    return 0


def _pairs(pred: Path, ref: Path) -> list[tuple[Path, Path]]:
    if pred.is_dir() != ref.is_dir():
        raise ConfigurationError("--pred and --ref must both be files or both be directories")
    if not pred.is_dir():
        return [(pred, ref)]
    pairs = [(p, ref / p.name) for p in sorted(pred.glob("*.csv"))]
    if not pairs:
        raise ConfigurationError(f"no prediction CSV files in {pred}")
    missing = [str(r) for _, r in pairs if not r.exists()]
    if missing:
        raise ConfigurationError(f"missing references: {missing}")
    return pairs


def cmd_eval(args, settings) -> int:
    from .metrics import evaluate_events
    pairs = _pairs(Path(args.pred), Path(args.ref))
    report = evaluate_events([parse_metadata_csv(r) for _, r in pairs],
                             [parse_metadata_csv(p) for p, _ in pairs],
                             settings.model.n_classes)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_json(out)
    report.write_class_csv(out.with_suffix(".classes.csv"))
    write_manifest(out.with_suffix(".manifest.json"), "eval", settings,
                   {"pred": args.pred, "ref": args.ref})
    print(json.dumps(report.row()))
    return 0


def _load_run(spec: str):
    from .metrics import MetricsReport
    p = Path(spec)
    report_path = p / "report.json" if p.is_dir() else p
    if not report_path.is_file():
        raise FileNotFoundError(f"no report found for run {spec!r}")
    history = []
    log_path = (p if p.is_dir() else p.parent) / "train_log.jsonl"
    if log_path.is_file():
        history = [json.loads(line) for line in log_path.read_text().splitlines() if line.strip()]
    name = p.name if p.is_dir() else p.stem
    return name, MetricsReport.read_json(report_path), history


def cmd_report(args, settings) -> int:
    from .plotting import plot_class_metrics, plot_comparison, plot_loss_curves
    runs = [_load_run(r) for r in args.runs.split(",") if r.strip()]
    if not runs:
        raise ConfigurationError("--runs is empty")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = {n: r for n, r, _ in runs}
    plot_comparison(reports, out / "comparison.png")
    plot_class_metrics(reports, out / "class_metrics.png")
    histories = {n: h for n, _, h in runs if h}
    if histories:
        plot_loss_curves(histories, out / "loss_curves.png")
    write_manifest(out / "manifest.json", "report", settings, {"runs": args.runs})
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--profile", default="full", help="named settings profile (full, desk)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dkseld", description="Sound event localization and detection toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("features", parents=[common], help="extract SALSA-Mel feature caches")
    s.add_argument("audio", nargs="+")
    s.add_argument("--out", required=True)

    s = sub.add_parser("synth", parents=[common], help="synthesize a spatialized toy corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--srir", help="SRIR directory with manifest.json (default: free field)")
    s.add_argument("--clips", type=int, default=16)
    s.add_argument("--classes", type=int, default=2)
    s.add_argument("--duration", type=float, default=2.0)
    s.add_argument("--snr", type=float, default=20.0)
    s.add_argument("--split", default="train")
    s.add_argument("--scene", default="synthetic", help="scene tag written to the catalog")
    s.add_argument("--seed", type=int)

    s = sub.add_parser("rotate", parents=[common], help="write channel-rotated copies of a clip")
    s.add_argument("audio")
    s.add_argument("metadata")
    s.add_argument("--rotation", type=int, action="append", help="row index 0..7 (default: all)")
    s.add_argument("--out", required=True)

    s = sub.add_parser("train", parents=[common], help="train a model on a dataset catalog")
    s.add_argument("--catalog", required=True)
    s.add_argument("--strategy", type=str.lower)
    s.add_argument("--model")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)

    s = sub.add_parser("infer", parents=[common], help="predict events for audio files")
    s.add_argument("audio", nargs="+")
    s.add_argument("--checkpoint", action="append")
    s.add_argument("--no-tta", action="store_true")
    s.add_argument("--out", required=True)

    s = sub.add_parser("eval", parents=[common], help="score predictions against references")
    s.add_argument("--pred", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--out", default="report.json")

    s = sub.add_parser("report", parents=[common], help="compare runs side by side")
    s.add_argument("--runs", required=True, help="comma-separated run directories or report JSON files")
    s.add_argument("--out", required=True)

    sub.add_parser("keys", help="list valid config keys")
    return p


COMMANDS = {"features": cmd_features, "synth": cmd_synth, "rotate": cmd_rotate, "train": cmd_train,
            "infer": cmd_infer, "eval": cmd_eval, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "keys":
        print("\n".join(valid_keys()))
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = _settings(args)
        return COMMANDS[args.command](args, settings)
    except (SeldError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
