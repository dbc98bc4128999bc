"""Command-line pipeline: generate, train, eval, stream.

Exit codes: 0 success, 1 runtime failure (including divergence), 2 usage
or input errors. All file outputs start with a provenance comment line
carrying the package version and the effective config hash.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, PRESETS, RunConfig, load_config
from .events import (EventStream, PatternSpecError, StreamError,
                     SyntheticPatternSpec, generate_synthetic, parse_stream,
                     serialize_stream)
from .gabor import afferent_count, extract_features, spikes_to_train
from .model_io import (WeightFileError, WeightsMeta, load_weights,
                       save_weights)
from .neuron import PspKernel
from .readout import classify_stream, decisions_to_text, evaluate
from .training import (DivergenceError, TrainingSample, train)

USAGE_ERROR = 2
RUNTIME_ERROR = 1

# class index -> synthetic pattern; bars cover the four filter orientations
CLASS_PATTERNS = [
    ("bar", 0.0),
    ("bar", 45.0),
    ("bar", 90.0),
    ("bar", 135.0),
    ("filled", 0.0),
    ("hollow", 0.0),
]


class UsageError(Exception):
    pass


def _provenance(config: RunConfig) -> str:
    return f"# spikestream {__version__} config={config.config_hash()}\n"


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "preset", None):
        config = config.with_preset(args.preset)
    overrides = {}
    for attr, key in [("seed", "seed"), ("lr", "learning_rate"),
                      ("iters", "iterations"), ("tr", "search_range_ms"),
                      ("tau_m", "tau_m_ms"), ("population", "population"),
                      ("period_ms", "period_ms"), ("window_ms", "window_ms")]:
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    if overrides:
        from dataclasses import replace
        config = replace(config, **overrides)
    return config


def read_manifest(path) -> list[tuple[Path, int]]:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"manifest not found: {path}")
    entries = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t") if "\t" in line else line.split()
        if len(fields) != 2:
            raise UsageError(f"{path}:{lineno}: expected '<file> <label>'")
        try:
            label = int(fields[1])
        except ValueError:
            raise UsageError(f"{path}:{lineno}: label must be an integer") from None
        entries.append((path.parent / fields[0], label))
    return entries


def _load_streams(entries, truncate_ms=None) -> list[EventStream]:
    streams = []
    for file, label in entries:
        if not file.exists():
            raise UsageError(f"stream file not found: {file}")
        fmt = "packed" if file.suffix == ".aerb" else "text"
        stream = parse_stream(file.read_bytes(), fmt, label=label)
        if truncate_ms is not None:
            stream = stream.truncated(int(round(truncate_ms * 1000)))
        streams.append(stream)
    return streams


def _featurize(streams, config: RunConfig, threads: int):
    """Feature spike trains for each stream, order preserved."""
    bank = config.build_bank()
    frontend = config.frontend_config()
    n_maps = bank.n_maps * (2 if frontend.polarity_split else 1)

    def one(stream):
        units_w = (stream.width + 1) // 2
        units_h = (stream.height + 1) // 2
        feats = extract_features(stream, bank, frontend)
        return spikes_to_train(feats, n_maps, units_w, units_h)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, streams))
    return [one(s) for s in streams]


def cmd_generate(args) -> int:
    config = _load_run_config(args)
    if args.classes < 1 or args.classes > len(CLASS_PATTERNS):
        raise UsageError(f"classes must be 1..{len(CLASS_PATTERNS)}")
    if args.per_class < 0:
        raise UsageError("per-class count must be non-negative")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    suffix = ".aerb" if args.format == "packed" else ".aer"
    manifest_lines = [_provenance(config).rstrip("\n")]
    for label in range(args.classes):
        kind, orientation = CLASS_PATTERNS[label]
        for i in range(args.per_class):
            spec = SyntheticPatternSpec(
                kind=kind,
                orientation_deg=orientation,
                velocity=args.velocity * float(rng.uniform(0.8, 1.2)),
                noise_rate=args.noise,
                width=config.width,
                height=config.height,
                duration_ms=args.duration_ms,
                phase=float(rng.uniform(0.0, 1.0)),
            )
            stream = generate_synthetic(spec, seed=int(rng.integers(2**63)),
                                        label=label)
            name = f"sample_c{label}_{i:04d}{suffix}"
            (out_dir / name).write_bytes(serialize_stream(stream, args.format))
            manifest_lines.append(f"{name}\t{label}")
    (out_dir / "manifest.tsv").write_text("\n".join(manifest_lines) + "\n")
    print(f"wrote {args.classes * args.per_class} samples to {out_dir}")
    return 0


def cmd_train(args) -> int:
    config = _load_run_config(args)
    entries = read_manifest(args.manifest)
    if not entries:
        raise UsageError("manifest lists no samples")
    labels = sorted({label for _, label in entries})
    classes = max(labels) + 1
    if classes < 2:
        raise UsageError("training needs at least 2 classes")

    streams = _load_streams(entries)
    geometry = {(s.width, s.height) for s in streams}
    if len(geometry) != 1:
        raise UsageError(f"streams disagree on geometry: {sorted(geometry)}")
    trains = _featurize(streams, config, args.threads)
    samples = [TrainingSample(tr, s.label, s.duration_ms)
               for tr, s in zip(trains, streams)]

    trainer = config.trainer_config(classes)
    result = train(samples, trainer)

    bank = config.build_bank()
    n_aff = afferent_count(bank, config.width, config.height,
                           config.polarity_split)
    meta = WeightsMeta(
        classes=classes, population=trainer.population, n_afferents=n_aff,
        tau_m_ms=trainer.tau_m_ms, search_range_ms=trainer.search_range_ms,
        extra={"version": __version__, "config_hash": config.config_hash(),
               "seed": trainer.seed, "geometry": [config.width, config.height]},
    )
    save_weights(args.weights_out, result.weights, meta)

    if args.log:
        with open(args.log, "w") as fh:
            fh.write(_provenance(config))
            fh.write("# iter sample t_start t_peak_per_class loss\n")
            for r in result.records:
                peaks = " ".join(f"{t:.3f}" for t in r.t_peaks)
                fh.write(f"{r.iteration} {r.sample} {r.t_start:.3f} "
                         f"{peaks} {r.loss:.6f}\n")
    final = result.iteration_losses[-1] if result.iteration_losses else float("nan")
    print(f"trained {len(samples)} samples, {classes} classes; "
          f"final mean loss {final:.6f}")
    print(f"weights written to {args.weights_out}")
    return 0


def _load_model(args):
    path = Path(args.weights)
    if not path.exists():
        raise UsageError(f"weights file not found: {path}")
    weights, meta = load_weights(path)
    return weights, meta


def cmd_eval(args) -> int:
    config = _load_run_config(args)
    weights, meta = _load_model(args)
    entries = read_manifest(args.manifest)
    if not entries:
        raise UsageError("manifest lists no samples")
    streams = _load_streams(entries, truncate_ms=args.truncate_ms)
    trains = _featurize(streams, config, args.threads)
    for tr in trains:
        if tr.n_afferents != meta.n_afferents:
            raise UsageError(
                f"weights expect {meta.n_afferents} afferents, "
                f"streams provide {tr.n_afferents}; check geometry/config")
    samples = [(tr, s.label, s.duration_ms) for tr, s in zip(trains, streams)]
    kernel = PspKernel(meta.tau_m_ms)
    report = evaluate(samples, weights, kernel, meta.population,
                      config.inference_config(), meta.classes,
                      search_range_ms=meta.search_range_ms,
                      streaming=args.streaming)
    sys.stdout.write(_provenance(config))
    sys.stdout.write(report.to_text())
    if args.json_out:
        import json
        Path(args.json_out).write_text(json.dumps(report.to_json(), indent=2)
                                       + "\n")
    return 0


def cmd_stream(args) -> int:
    config = _load_run_config(args)
    weights, meta = _load_model(args)
    path = Path(args.input)
    if not path.exists():
        raise UsageError(f"stream file not found: {path}")
    fmt = "packed" if path.suffix == ".aerb" else "text"
    stream = parse_stream(path.read_bytes(), fmt)
    kernel = PspKernel(meta.tau_m_ms)
    decisions = classify_stream(stream, config.build_bank(),
                                config.frontend_config(), weights, kernel,
                                meta.population, config.inference_config(),
                                meta.search_range_ms)
    text = _provenance(config) + "# time_ms predicted rate_per_class\n" \
        + decisions_to_text(decisions)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikestream",
        description="Event-driven spiking classification for AER streams")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file (key = value sections)")
        p.add_argument("--preset", choices=sorted(PRESETS),
                       help="dataset-scale preset for tau_m and search range")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, default=1,
                       help="feature-extraction threads")

    p = sub.add_parser("generate", help="write labeled synthetic streams")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--velocity", type=float, default=0.3,
                   help="stimulus speed, pixels per ms")
    p.add_argument("--noise", type=float, default=2.0,
                   help="noise events per ms")
    p.add_argument("--duration-ms", type=float, default=120.0)
    p.add_argument("--format", choices=("text", "packed"), default="text")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit decision weights on a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights-out", required=True)
    p.add_argument("--log", help="per-segment loss log path")
    p.add_argument("--lr", type=float, help="learning rate override")
    p.add_argument("--iters", type=int, help="iteration count override")
    p.add_argument("--tr", type=float, help="search range override (ms)")
    p.add_argument("--tau-m", dest="tau_m", type=float,
                   help="kernel tau_m override (ms)")
    p.add_argument("--population", type=int,
                   help="decision neurons per class")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy report over a labeled manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--truncate-ms", type=float,
                   help="evaluate on the first T ms of each recording")
    p.add_argument("--streaming", action="store_true",
                   help="judge samples by periodic decisions")
    p.add_argument("--json-out", help="also write a machine-readable report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stream", help="rolling decisions over one stream")
    common(p)
    p.add_argument("--input", required=True, help="event stream file")
    p.add_argument("--weights", required=True)
    p.add_argument("--period-ms", dest="period_ms", type=float,
                   help="decision period override")
    p.add_argument("--window-ms", dest="window_ms", type=float,
                   help="trailing rate window override")
    p.add_argument("--out", help="decision trace file (default stdout)")
    p.set_defaults(func=cmd_stream)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, StreamError, PatternSpecError,
            WeightFileError) as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return RUNTIME_ERROR
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
