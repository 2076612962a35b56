"""File formats: scene JSON, labels JSON, prediction/trace CSV, metrics/params JSON, WAV.

Angles are degrees at every file boundary. Every JSON document carries a
``schema_version`` string and CSV files start with a ``# schema_version=``
comment line; readers refuse unknown major versions.
"""
import csv
import json
import math
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .core_dsp import StftConfig
from .foa_scene import EventLabel, ReverbParams, SceneComponents, SceneSpec, wrap_azimuth
from .intensity import DoaTrack
from .refine_fit import RefinerParams

SCHEMA_VERSION = "1.0"
PREDICTION_COLUMNS = ["frame_index", "time_s", "noas", "az1_deg", "el1_deg", "az2_deg", "el2_deg"]
TRACE_COLUMNS = ["step", "L", "L_doa", "L_noas", "L_doa_prime"]
COMPONENT_SUFFIXES = ("noise", "epsilon")


class SchemaError(ValueError):
    pass


def check_version(version, what: str = "document"):
    if version is None:
        return
    major = str(version).split(".")[0]
    if major != SCHEMA_VERSION.split(".")[0]:
        raise SchemaError(f"unsupported {what} schema_version {version!r} (expected {SCHEMA_VERSION})")


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False, allow_nan=False) + "\n")


def _none_if_nan(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


# ---------------------------------------------------------------------------
# Scene spec
# ---------------------------------------------------------------------------


def event_to_dict(e: EventLabel) -> dict:
    return {
        "event_id": e.event_id,
        "onset": e.onset,
        "offset": e.offset,
        "azimuth": float(np.degrees(e.azimuth)),
        "elevation": float(np.degrees(e.elevation)),
        "source_kind": e.source_kind,
        "gain": e.gain,
        "band": list(e.band),
    }


def event_from_dict(d: dict) -> EventLabel:
    return EventLabel(
        event_id=int(d["event_id"]),
        onset=float(d["onset"]),
        offset=float(d["offset"]),
        azimuth=float(wrap_azimuth(np.radians(float(d["azimuth"])))),
        elevation=float(np.radians(float(d["elevation"]))),
        source_kind=d.get("source_kind", "noise"),
        gain=float(d.get("gain", 1.0)),
        band=tuple(float(b) for b in d.get("band", (200.0, 8000.0))),
    )


def scene_to_dict(spec: SceneSpec) -> dict:
    reverb = None
    if spec.reverb is not None:
        r = spec.reverb
        reverb = {
            "echo_count": r.echo_count,
            "delay_range": list(r.delay_range),
            "decay": r.decay,
            "direction_jitter_deg": float(np.degrees(r.direction_jitter)),
        }
    return {
        "schema_version": SCHEMA_VERSION,
        "duration": spec.duration,
        "sample_rate": spec.sample_rate,
        "seed": spec.seed,
        "noise_snr": spec.noise_snr,
        "noise_directions": spec.noise_directions,
        "reverb": reverb,
        "events": [event_to_dict(e) for e in spec.events],
    }


def scene_from_dict(d: dict) -> SceneSpec:
    check_version(d.get("schema_version"), "scene")
    try:
        reverb = None
        if d.get("reverb"):
            r = d["reverb"]
            dflt = ReverbParams()
            reverb = ReverbParams(
                int(r.get("echo_count", dflt.echo_count)),
                tuple(float(x) for x in r.get("delay_range", dflt.delay_range)),
                float(r.get("decay", dflt.decay)),
                float(np.radians(r["direction_jitter_deg"])) if "direction_jitter_deg" in r else dflt.direction_jitter,
            )
        spec = SceneSpec(
            duration=float(d["duration"]),
            events=tuple(event_from_dict(e) for e in d.get("events", [])),
            noise_snr=None if d.get("noise_snr") is None else float(d["noise_snr"]),
            reverb=reverb,
            seed=int(d.get("seed", 0)),
            sample_rate=int(d.get("sample_rate", 48000)),
            noise_directions=int(d.get("noise_directions", 64)),
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed scene spec: {exc}") from exc
    return spec.validate()


def read_scene(path) -> SceneSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return scene_from_dict(doc)


def write_scene(path, spec: SceneSpec):
    _write_json(path, scene_to_dict(spec))


# ---------------------------------------------------------------------------
# Labels
# ---------------------------------------------------------------------------


def _pair_deg(track: DoaTrack, t: int, k: int):
    if k >= track.noas[t] or track.degenerate[t, k]:
        return None
    return [float(np.degrees(track.doas[t, k, 0])), float(np.degrees(track.doas[t, k, 1]))]


def write_labels(path, spec: SceneSpec, labels: DoaTrack, config: StftConfig):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "sample_rate": config.sample_rate,
        "window_len": config.window_len,
        "hop": config.hop,
        "n_frames": labels.n_frames,
        "frame_times": [float(x) for x in labels.frame_times],
        "scene": scene_to_dict(spec),
        "events": [event_to_dict(e) for e in spec.ordered_events()],
        "frames": {
            "noas": [int(n) for n in labels.noas],
            "doas_deg": [[_pair_deg(labels, t, k) for k in range(2)] for t in range(labels.n_frames)],
            "event_ids": labels.event_ids.tolist() if labels.event_ids is not None else None,
        },
    }
    _write_json(path, doc)


def read_labels(path):
    """Returns (DoaTrack, SceneSpec, StftConfig)."""
    doc = json.loads(Path(path).read_text())
    check_version(doc.get("schema_version"), "labels")
    frames = doc["frames"]
    T = int(doc["n_frames"])
    doas = np.full((T, 2, 2), np.nan)
    for t, row in enumerate(frames["doas_deg"]):
        for k, pair in enumerate(row):
            if pair is not None:
                doas[t, k] = np.radians(pair)
                doas[t, k, 0] = wrap_azimuth(doas[t, k, 0])
    ids = frames.get("event_ids")
    track = DoaTrack(
        np.asarray(frames["noas"], dtype=np.int64),
        doas,
        event_ids=None if ids is None else np.asarray(ids, dtype=np.int64),
        frame_times=np.asarray(doc.get("frame_times", []), dtype=np.float64) if doc.get("frame_times") else None,
    )
    config = StftConfig(int(doc["sample_rate"]), int(doc["window_len"]), int(doc["hop"]))
    return track, scene_from_dict(doc["scene"]), config


# ---------------------------------------------------------------------------
# Predictions
# ---------------------------------------------------------------------------


def _fmt(x):
    return "" if x is None else repr(float(x))


def write_predictions(path, track: DoaTrack, frame_times):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(PREDICTION_COLUMNS)
        for t in range(track.n_frames):
            row = [t, repr(float(frame_times[t])), int(track.noas[t])]
            for k in range(2):
                pair = _pair_deg(track, t, k)
                row += [_fmt(None), _fmt(None)] if pair is None else [_fmt(pair[0]), _fmt(pair[1])]
            w.writerow(row)


def _read_versioned_csv(path, what):
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# schema_version="):
            raise SchemaError(f"{path}: missing '# schema_version=' header")
        check_version(first.strip().split("=", 1)[1], what)
        return list(csv.DictReader(fh))


def read_predictions(path):
    """Returns (DoaTrack, frame_times)."""
    rows = _read_versioned_csv(path, "prediction")
    T = len(rows)
    noas = np.zeros(T, dtype=np.int64)
    doas = np.full((T, 2, 2), np.nan)
    deg = np.zeros((T, 2), dtype=bool)
    times = np.zeros(T)
    for t, r in enumerate(rows):
        if int(r["frame_index"]) != t:
            raise SchemaError(f"{path}: frame_index {r['frame_index']} out of sequence at row {t}")
        times[t] = float(r["time_s"])
        noas[t] = int(r["noas"])
        for k in range(noas[t]):
            az, el = r[f"az{k + 1}_deg"], r[f"el{k + 1}_deg"]
            if az == "" or el == "":
                doas[t, k] = 0.0
                deg[t, k] = True
            else:
                doas[t, k] = (wrap_azimuth(np.radians(float(az))), np.radians(float(el)))
    return DoaTrack(noas, doas, deg, frame_times=times), times


# ---------------------------------------------------------------------------
# Metrics, params, trace
# ---------------------------------------------------------------------------


def write_metrics(path, report: dict):
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update({k: _none_if_nan(v) for k, v in report.items()})
    _write_json(path, doc)


def read_metrics(path) -> dict:
    doc = json.loads(Path(path).read_text())
    check_version(doc.get("schema_version"), "metrics")
    return doc


def write_params(path, params: RefinerParams, config: StftConfig, n_mels: int):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "stft": {"sample_rate": config.sample_rate, "window_len": config.window_len, "hop": config.hop},
        "n_mels": n_mels,
        "params": params.to_dict(),
    }
    _write_json(path, doc)


def read_params(path):
    """Returns (RefinerParams, StftConfig, n_mels)."""
    doc = json.loads(Path(path).read_text())
    check_version(doc.get("schema_version"), "params")
    s = doc["stft"]
    return RefinerParams.from_dict(doc["params"]), StftConfig(s["sample_rate"], s["window_len"], s["hop"]), int(doc["n_mels"])


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for step, *vals in trace:
            w.writerow([step] + [repr(float(v)) for v in vals])


def read_trace(path):
    rows = _read_versioned_csv(path, "trace")
    return [(int(r["step"]),) + tuple(float(r[c]) for c in TRACE_COLUMNS[1:]) for r in rows]


# ---------------------------------------------------------------------------
# WAV
# ---------------------------------------------------------------------------


def write_wav(path, sample_rate: int, signal: np.ndarray):
    """(channels, N) float signal -> 32-bit float WAV."""
    wavfile.write(str(path), sample_rate, np.ascontiguousarray(np.asarray(signal, dtype=np.float32).T))


def read_wav(path):
    """Returns (sample_rate, (channels, N) float64 array)."""
    sr, data = wavfile.read(str(path))
    if data.dtype.kind in "iu":
        data = data / float(np.iinfo(data.dtype).max)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    return int(sr), data.T.copy()


def component_paths(wav_path, n_direct: int):
    p = Path(wav_path)
    stem = p.with_suffix("")
    names = [f"direct{i + 1}" for i in range(n_direct)] + list(COMPONENT_SUFFIXES)
    return {name: stem.with_name(f"{stem.name}.{name}.wav") for name in names}


def write_components(wav_path, components: SceneComponents, sample_rate: int):
    paths = component_paths(wav_path, len(components.direct))
    write_wav(wav_path, sample_rate, components.mixture)
    for i, d in enumerate(components.direct):
        write_wav(paths[f"direct{i + 1}"], sample_rate, d)
    write_wav(paths["noise"], sample_rate, components.noise)
    write_wav(paths["epsilon"], sample_rate, components.epsilon)
    return paths


def read_components(wav_path, spec: SceneSpec | None = None) -> SceneComponents:
    """Load a mixture and its ``.directN`` / ``.noise`` / ``.epsilon`` siblings."""
    sr, mix = read_wav(wav_path)
    stem = Path(wav_path).with_suffix("")
    direct = []
    i = 1
    while True:
        p = stem.with_name(f"{stem.name}.direct{i}.wav")
        if not p.exists():
            break
        direct.append(read_wav(p)[1])
        i += 1
    missing = [name for name in COMPONENT_SUFFIXES if not stem.with_name(f"{stem.name}.{name}.wav").exists()]
    if not direct:
        missing.insert(0, "direct1")
    if missing:
        raise FileNotFoundError(
            f"oracle refiner needs component WAVs beside {wav_path}; missing: " + ", ".join(f"{stem.name}.{m}.wav" for m in missing)
        )
    noise = read_wav(stem.with_name(f"{stem.name}.noise.wav"))[1]
    eps = read_wav(stem.with_name(f"{stem.name}.epsilon.wav"))[1]
    return SceneComponents(direct, noise, eps, mix, spec)
