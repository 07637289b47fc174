"""Command-line interface.

Subcommands wrap the library for batch use and CI. Every command is
deterministic given --seed; exit codes are 0 success, 2 usage, 3 I/O or
format problems, 4 contract violations.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import feature_io, gru_infer, metrics, pfm_tdc, pipeline, postproc, signal_io, td_fex
from .errors import (CalibrationError, ContractError, FormatError,
                     IngestionError, SimulationError)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONTRACT = 4


def _worker_count() -> int:
    env = os.environ.get("TDFX_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def _load_frontend(args) -> pipeline.FrontendConfig:
    channels = (td_fex.load_channel_configs(args.channels)
                if getattr(args, "channels", None) else td_fex.default_channel_configs())
    return pipeline.FrontendConfig(channels=channels, seed=args.seed)


def _load_input_clip(path: str) -> signal_io.PcmClip:
    """WAV at 16 or 32 kHz; 16 kHz input is upsampled to the front-end rate."""
    try:
        clip = signal_io.load_clip(path, 32000)
    except ContractError:
        clip = signal_io.resample_2x(signal_io.load_clip(path, 16000))
    return clip


def _stage_of(name: str) -> feature_io.Stage:
    return feature_io.Stage[name.upper()]


def cmd_features(args) -> int:
    fe = _load_frontend(args)
    calib = postproc.load_calibration(args.calib) if args.calib else None
    stage = _stage_of(args.stage)
    if stage != feature_io.Stage.RAW and calib is None:
        raise ContractError(f"stage {args.stage} needs --calib")

    stage_s = {"frontend": 0.0, "postproc": 0.0}

    def extract(path: str) -> tuple[np.ndarray, int]:
        t0 = time.perf_counter()
        clip = _load_input_clip(path)
        if args.model == "ref":
            frames = pipeline.ref_raw_frames(clip)
            shift_us = 16000
        else:
            frames = pipeline.td_raw_frames(clip, fe)
            shift_us = round(pfm_tdc.FRAME_SHIFT_S * 1e6)
        t1 = time.perf_counter()
        if calib is not None:
            frames = postproc.apply_offset_gain(frames, calib)
            if stage == feature_io.Stage.LOG:
                frames = postproc.log_compress(frames)
            elif stage == feature_io.Stage.NORM:
                frames = postproc.normalize(postproc.log_compress(frames),
                                            calib.mu, calib.sigma)
        else:
            frames = np.clip(frames, 0, postproc.RAW_MAX)
        t2 = time.perf_counter()
        stage_s["frontend"] += t1 - t0
        stage_s["postproc"] += t2 - t1
        return frames, shift_us

    out = Path(args.output)
    t0 = time.perf_counter()
    if not args.input.endswith(".jsonl"):
        frames, shift_us = extract(args.input)
        feature_io.write_features(out, frames, stage, shift_us)
        print(f"{out}: {frames.shape[0]} frames x {frames.shape[1]} channels")
        total_frames = frames.shape[0]
    else:
        manifest = signal_io.load_manifest(args.input)
        entries = manifest.entries
        out.mkdir(parents=True, exist_ok=True)
        total_frames = 0
        with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
            results = list(pool.map(extract, [e["path"] for e in entries]))
        index_lines = []
        for i, (entry, (frames, shift_us)) in enumerate(zip(entries, results)):
            name = f"{i:06d}.tdfx"
            feature_io.write_features(out / name, frames, stage, shift_us)
            total_frames += frames.shape[0]
            index_lines.append(json.dumps(
                {"feature": name, "path": entry["path"], "label": entry["label"],
                 "split": entry["split"]}, sort_keys=True))
        (out / "index.jsonl").write_text("\n".join(index_lines) + "\n",
                                         encoding="utf-8")
        print(f"{out}: {len(entries)} files, {total_frames} frames")
    if args.profile:
        dt = time.perf_counter() - t0
        print(f"profile: {total_frames / dt:.1f} frames/s overall")
        for name, secs in stage_s.items():
            rate = total_frames / secs if secs > 0 else float("inf")
            print(f"profile: {rate:.1f} frames/s {name}")
    return EXIT_OK


def cmd_classify(args) -> int:
    weights = gru_infer.load_weights(args.weights)
    if args.input.endswith(".tdfx"):
        norm, stage, _ = feature_io.read_features(args.input)
        if stage != feature_io.Stage.NORM:
            raise ContractError(f"classify needs NORM features, got {stage.name}")
    else:
        if not args.calib:
            raise ContractError("classifying a WAV needs --calib")
        calib = postproc.load_calibration(args.calib)
        fe = _load_frontend(args)
        clip = _load_input_clip(args.input)
        if clip.samples.size == 0:
            raise ContractError("empty input clip")
        norm = pipeline.td_norm_frames(clip, fe, calib)
    idx, scores = gru_infer.classify_stream(norm, weights)
    class_names = args.class_names.split(",") if args.class_names else [
        f"class{i}" for i in range(weights.n_classes)]
    payload = {
        "class": class_names[int(idx)],
        "class_index": int(idx),
        "scores": [float(s) / gru_infer.Q_ONE for s in scores],
    }
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    fe = _load_frontend(args)
    if args.corpus:
        manifest = signal_io.load_manifest(args.corpus)
        entries = manifest.split("train")[: args.corpus_limit]
        chunks = []
        for e in entries:
            clip = _load_input_clip(e["path"])
            chunks.append(pipeline.td_raw_frames(clip, fe))
        corpus = np.vstack(chunks)
        sha = signal_io.manifest_sha256(manifest)
    else:
        # synthetic conditioning corpus: per-channel center tones at a few levels
        chunks = []
        for ccfg in fe.channels:
            for amp in (0.05, 0.15, 0.25):
                clip = signal_io.synth_tone(ccfg.center, 0.25, 32000, amp)
                chunks.append(pipeline.td_raw_frames(clip, fe))
        corpus = np.vstack(chunks)
        sha = ""
    calib = pipeline.default_calibration(fe, corpus, corpus_sha256=sha)
    postproc.save_calibration(calib, args.output)
    print(f"{args.output}: beta[0]={calib.beta[0]:.1f} alpha[0]={calib.alpha[0]:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    fe = _load_frontend(args)
    lo = min(c.center for c in fe.channels)
    hi = max(c.center for c in fe.channels)
    freqs = np.logspace(np.log10(lo * 0.62), np.log10(hi * 1.45),
                        args.points).tolist()
    result = metrics.freq_sweep(lambda f, a: pipeline.td_tone_response(fe, f, a),
                                freqs, amplitude=args.amplitude, nyquist=16000.0)
    metrics.write_sweep_csv(args.output, result)
    print("channel,target_hz,measured_hz,err_pct,q")
    for ch, ccfg in enumerate(fe.channels):
        err = 100.0 * (result.centers[ch] - ccfg.center) / ccfg.center
        print(f"{ch},{ccfg.center:.1f},{result.centers[ch]:.1f},{err:+.2f},{result.q[ch]:.3f}")
    return EXIT_OK


def cmd_spectrum(args) -> int:
    cfg = pfm_tdc.PfmConfig(jitter_lanes=args.jitter)
    n = args.samples
    zeros = np.zeros(int(np.ceil(n * 8 * 32000 / pfm_tdc.OVERSAMPLE_HZ)) + 8)
    out = pfm_tdc.pfm_encode(zeros, zeros, 8 * 32000, cfg, seed=args.seed)
    increments = out.increments[:n]
    f, psd = metrics.spectrum_welch(increments - increments.mean(), pfm_tdc.OVERSAMPLE_HZ)
    metrics.write_spectrum_csv(args.output, f, psd)
    slope = metrics.noise_spectrum_slope(increments, pfm_tdc.OVERSAMPLE_HZ)
    print(f"slope_db_per_decade={slope:.2f}")
    return EXIT_OK


def cmd_fom(args) -> int:
    if args.table:
        rows = metrics.fom_comparison_report()
        print("name,computed_db,published_db,deviation_db")
        for row in rows:
            print(f"{row['name']},{row['computed_db']},{row['published_db']},"
                  f"{row['deviation_db']}")
        return EXIT_OK
    inp = metrics.FomInput(dr_db=args.dr, power_mw=args.power_uw / 1000.0,
                           n_channels=args.n_channels, f_lo=args.f_lo,
                           f_hi=args.f_hi, frame_shift_s=args.frame_shift_ms / 1000.0)
    print(f"{metrics.fom_schreier(inp):.2f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    """Per-channel correlation between two feature files (any frame rates)."""
    a, stage_a, shift_a = feature_io.read_features(args.file_a)
    b, stage_b, shift_b = feature_io.read_features(args.file_b)
    if a.shape[1] != b.shape[1]:
        raise ContractError("channel counts differ")
    if min(a.shape[0], b.shape[0]) < 4:
        raise ContractError("need at least 4 frames per file")
    t_a = (np.arange(a.shape[0]) + 0.5) * shift_a
    t_b = (np.arange(b.shape[0]) + 0.5) * shift_b
    cors = []
    for ch in range(a.shape[1]):
        b_i = np.interp(t_a, t_b, b[:, ch].astype(float))
        x = a[:, ch].astype(float)
        if x.std() == 0 or b_i.std() == 0:
            cors.append(float("nan"))
        else:
            cors.append(float(np.corrcoef(x, b_i)[0, 1]))
    print("channel,correlation")
    for ch, c in enumerate(cors):
        print(f"{ch},{c:.6f}")
    finite = [c for c in cors if np.isfinite(c)]
    print(f"min,{min(finite):.6f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    manifest = signal_io.load_manifest(args.manifest)
    calib = postproc.load_calibration(args.calib)
    weights = gru_infer.load_weights(args.weights)
    fe = _load_frontend(args)
    entries = manifest.split(args.split)
    if args.limit:
        entries = entries[: args.limit]

    def predict(entry) -> int:
        clip = _load_input_clip(entry["path"])
        norm = pipeline.td_norm_frames(clip, fe, calib)
        idx, _ = gru_infer.classify_stream(norm, weights)
        return int(idx)

    result = metrics.evaluate(entries, predict, manifest.class_names)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_confusion_csv(out / "confusion.csv", result)
    metrics.write_summary_json(out / "summary.json", {
        "accuracy": result.accuracy,
        "per_class_tpr": {n: float(t) for n, t in
                          zip(result.class_names, result.per_class_tpr)},
        "n_clips": len(entries),
    })
    print(f"accuracy={result.accuracy:.4f} over {len(entries)} clips")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdfex",
                                     description="time-domain audio feature extractor toolkit")
    parser.add_argument("--seed", type=int, default=0, help="global determinism seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract feature files from WAV or manifest")
    p.add_argument("input", help="WAV file or .jsonl manifest")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--model", choices=("ref", "td"), default="td")
    p.add_argument("--stage", choices=("raw", "log", "norm"), default="raw")
    p.add_argument("--calib")
    p.add_argument("--channels", help="channel config file")
    p.add_argument("--profile", action="store_true")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("classify", help="classify one clip (WAV or NORM .tdfx)")
    p.add_argument("input")
    p.add_argument("--calib")
    p.add_argument("--weights", required=True)
    p.add_argument("--channels")
    p.add_argument("--class-names", default="")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("calibrate", help="derive beta/alpha/mu/sigma")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--channels")
    p.add_argument("--corpus", help="manifest whose train split conditions mu/sigma")
    p.add_argument("--corpus-limit", type=int, default=200)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="frequency response of the bank")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--channels")
    p.add_argument("--points", type=int, default=140)
    p.add_argument("--amplitude", type=float, default=0.25)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("spectrum", help="zero-input pre-decimation noise spectrum")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--samples", type=int, default=1 << 18)
    p.add_argument("--jitter", type=float, default=2.0,
                   help="sampling jitter in lane quanta; must exceed 1 to dither")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("fom", help="Schreier figure of merit")
    p.add_argument("--table", action="store_true", help="print published comparison rows")
    p.add_argument("--dr", type=float)
    p.add_argument("--power-uw", type=float)
    p.add_argument("--n-channels", type=int, default=16)
    p.add_argument("--f-lo", type=float)
    p.add_argument("--f-hi", type=float)
    p.add_argument("--frame-shift-ms", type=float)
    p.set_defaults(func=cmd_fom)

    p = sub.add_parser("compare", help="correlate two feature files per channel")
    p.add_argument("file_a")
    p.add_argument("file_b")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("evaluate", help="accuracy/confusion over a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--channels")
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "fom" and not args.table:
        missing = [n for n in ("dr", "power_uw", "f_lo", "f_hi", "frame_shift_ms")
                   if getattr(args, n) is None]
        if missing:
            parser.error(f"fom needs {', '.join(missing)} (or --table)")
    try:
        return args.func(args)
    except (FormatError, IngestionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ContractError, CalibrationError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
