"""Command-line entry point: ``ivdoa {synth,estimate,eval,fit,gradcheck}``."""
import argparse
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import formats
from .core_dsp import StftConfig, mel_bank, stft
from .foa_scene import frame_labels, synth_scene
from .intensity import angle_refiner, estimate_track, identity_refiner, make_logpower_refiner
from .music import direction_grid, music_noas, music_track
from .oracle import OracleRefiner
from .refine_fit import FittedRefiner, FitDivergence, LossWeights, OptimConfig, fit_refiner, gradient_check, prepare_scene
from .tracker import metrics_report, postprocess_doa, segment_events, smooth_noas

log = logging.getLogger("ivdoa")

GRADCHECK_TOL = 1e-4


class CliError(Exception):
    pass


def _config(args) -> StftConfig:
    return StftConfig(sample_rate=48000, window_len=args.stft_win, hop=args.stft_hop)


def bundled_scene_paths():
    root = resources.files("ivdoa") / "data" / "scenes"
    return sorted(str(p) for p in root.iterdir() if p.name.endswith(".json"))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args):
    spec = formats.read_scene(args.scene)
    config = _config(args)
    if spec.sample_rate != config.sample_rate:
        raise CliError(f"scene sample_rate must be {config.sample_rate} Hz")
    comps = synth_scene(spec)
    formats.write_components(args.out_wav, comps, spec.sample_rate)
    labels = frame_labels(spec, config)
    formats.write_labels(args.out_labels, spec, labels, config)
    print(f"wrote {args.out_wav} ({spec.n_samples} samples, {len(comps.direct)} events) and {args.out_labels}")
    return 0


def _parse_noas(value: str, spec, labels_cache):
    kind, _, arg = value.partition(":")
    if kind == "fixed":
        try:
            n = int(arg)
        except ValueError:
            raise CliError(f"bad --noas {value!r}; expected fixed:N") from None
        if n not in (0, 1, 2):
            raise CliError("fixed NOAS must be 0, 1 or 2")
        return np.full(spec.n_frames, n, dtype=np.int64), False
    if kind == "oracle":
        if not arg:
            raise CliError("--noas oracle needs a labels path: oracle:LABELS_JSON")
        labels, scene, _ = formats.read_labels(arg)
        labels_cache["labels"], labels_cache["scene"] = labels, scene
        if labels.n_frames != spec.n_frames:
            raise CliError(f"labels have {labels.n_frames} frames, input has {spec.n_frames}")
        return labels.noas.copy(), False
    if kind == "music":
        return music_noas(spec), True
    raise CliError(f"unknown --noas source {value!r}")


def _make_refiner(name: str, args, config, cache):
    if name == "identity":
        return identity_refiner
    if name == "angle":
        return angle_refiner
    if name == "logpower":
        return make_logpower_refiner(args.lp_sharpness, args.lp_threshold)
    if name == "oracle":
        try:
            comps = formats.read_components(args.in_wav, cache.get("scene"))
        except FileNotFoundError as exc:
            raise CliError(str(exc)) from None
        return OracleRefiner(comps, config, cache.get("labels"))
    if name.startswith("fitted:"):
        params, pconfig, n_mels = formats.read_params(name.split(":", 1)[1])
        if (pconfig.window_len, pconfig.hop) != (config.window_len, config.hop):
            raise CliError("fitted params were trained with a different STFT configuration")
        return FittedRefiner(params, mel_bank(config, n_mels))
    raise CliError(f"unknown refiner {name!r}")


def cmd_estimate(args):
    sr, x = formats.read_wav(args.in_wav)
    config = _config(args)
    if sr != config.sample_rate:
        raise CliError(f"input is {sr} Hz, expected {config.sample_rate} Hz")
    if x.shape[0] != 4:
        raise CliError(f"input has {x.shape[0]} channels, expected 4 (W, X, Y, Z)")
    spec = stft(x, config)
    cache = {}
    noas, estimated = _parse_noas(args.noas, spec, cache)
    if args.postprocess and estimated:
        noas = smooth_noas(noas, args.smooth_window)
    if args.method == "music":
        track = music_track(spec, noas, grid=direction_grid(args.grid_step))
    else:
        refiner = _make_refiner(args.refiner, args, config, cache)
        track = estimate_track(spec, refiner, noas)
    if args.postprocess:
        track = postprocess_doa(track, segment_events(track.noas))
    formats.write_predictions(args.out_csv, track, config.frame_times(spec.n_frames))
    print(f"wrote {args.out_csv} ({spec.n_frames} frames)")
    return 0


def cmd_eval(args):
    pred, _ = formats.read_predictions(args.pred_csv)
    truth, scene, _ = formats.read_labels(args.labels)
    if pred.n_frames != truth.n_frames:
        raise CliError(f"prediction has {pred.n_frames} frames, labels have {truth.n_frames}")
    report = metrics_report(pred, truth, n_events=len(scene.events))
    formats.write_metrics(args.out_json, report)
    print(f"DE {report['doa_error_deg']:.3f} deg  FR {report['frame_recall']:.3f}  ({report['n_frames']} frames)")
    return 0


def cmd_fit(args):
    config = _config(args)
    paths = args.scenes or bundled_scene_paths()
    bank = mel_bank(config, args.n_mels)
    scenes = []
    for p in paths:
        spec = formats.read_scene(p)
        scenes.append(prepare_scene(synth_scene(spec), config, bank, use_oracle_eps=args.oracle_eps, name=Path(p).stem))
    opt = OptimConfig(steps=args.steps, lr=args.lr)
    weights = LossWeights(args.lambda1, args.lambda2)
    try:
        result = fit_refiner(scenes, opt, seed=args.seed, weights=weights)
    except FitDivergence as exc:
        print(f"fit aborted: {exc}", file=sys.stderr)
        return 3
    formats.write_params(args.out_params, result.params, config, args.n_mels)
    formats.write_trace(args.out_trace, result.trace)
    print(f"L_doa {result.initial.doa:.4f} -> {result.final.doa:.4f} over {opt.steps} steps on {len(scenes)} scene(s)")
    return 0


def cmd_gradcheck(args):
    draws = gradient_check(args.seed, args.n_draws, corrupt=args.corrupt_gradient, weights=LossWeights(args.lambda1, args.lambda2))
    for d in draws:
        note = f"  excluded ({d.reason})" if d.excluded else ""
        print(f"draw {d.index:03d} rel_err={d.rel_error:.3e}{note}")
    used = [d.rel_error for d in draws if not d.excluded]
    worst = max(used) if used else float("nan")
    print(f"max relative gradient error: {worst:.3e} over {len(used)} draws ({len(draws) - len(used)} excluded)")
    return 0 if used and worst <= GRADCHECK_TOL else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--stft-win", type=int, default=8192, help="STFT window length in samples")
    p.add_argument("--stft-hop", type=int, default=960, help="STFT hop in samples")
    p.add_argument("--n-mels", type=int, default=96)
    p.add_argument("--lambda1", type=float, default=10.0, help="NOAS loss weight")
    p.add_argument("--lambda2", type=float, default=0.1, help="DOA' loss weight")
    p.add_argument("--smooth-window", type=int, default=11, help="NOAS majority window (frames, odd)")
    p.add_argument("--grid-step", type=float, default=10.0, help="MUSIC grid step in degrees")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="ivdoa", description="Intensity-vector DOA estimation for FOA recordings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="render a scene spec to WAVs + labels")
    p.add_argument("scene")
    p.add_argument("out_wav")
    p.add_argument("out_labels")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("estimate", parents=[common], help="estimate per-frame DOAs")
    p.add_argument("in_wav")
    p.add_argument("out_csv")
    p.add_argument("--refiner", default="identity", help="identity | logpower | angle | oracle | fitted:PARAMS_JSON")
    p.add_argument("--noas", default="fixed:1", help="oracle:LABELS_JSON | music | fixed:N")
    p.add_argument("--method", choices=["iv", "music"], default="iv")
    p.add_argument("--postprocess", action="store_true", help="smooth estimated NOAS, snap DOAs to the grid and take event medians")
    p.add_argument("--lp-sharpness", type=float, default=1.0)
    p.add_argument("--lp-threshold", type=float, default=None, help="log-power threshold (default: per-frame median)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("eval", parents=[common], help="score a prediction CSV against labels")
    p.add_argument("pred_csv")
    p.add_argument("labels")
    p.add_argument("out_json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fit", parents=[common], help="fit the logistic refiner")
    p.add_argument("scenes", nargs="*", help="scene spec JSONs (default: bundled scenes)")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--oracle-eps", action="store_true", help="subtract the oracle epsilon field during fitting")
    p.add_argument("--out-params", required=True)
    p.add_argument("--out-trace", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the loss gradient")
    p.add_argument("--n-draws", type=int, default=100)
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, formats.SchemaError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
