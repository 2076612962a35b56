import csv
import subprocess
import sys

import numpy as np
import pytest

from ivdoa import formats
from ivdoa.cli import bundled_scene_paths, main
from ivdoa.foa_scene import SceneSpec, synth_scene

from conftest import disjoint_pair_spec, single_source_spec


def _rows(path):
    with open(path) as fh:
        fh.readline()
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def single(tmp_path_factory):
    d = tmp_path_factory.mktemp("single")
    spec = single_source_spec(30.0, 10.0, duration=1.0, seed=3)
    formats.write_scene(d / "scene.json", spec)
    assert main(["synth", str(d / "scene.json"), str(d / "mix.wav"), str(d / "labels.json")]) == 0
    return d, spec


@pytest.fixture(scope="module")
def pair(tmp_path_factory):
    d = tmp_path_factory.mktemp("pair")
    spec = disjoint_pair_spec(12, duration=1.5)
    formats.write_scene(d / "scene.json", spec)
    assert main(["synth", str(d / "scene.json"), str(d / "mix.wav"), str(d / "labels.json")]) == 0
    return d, spec


class TestSynth:
    def test_outputs(self, single):
        d, spec = single
        sr, x = formats.read_wav(d / "mix.wav")
        assert sr == 48000 and x.shape == (4, 48000)
        for suffix in ("direct1", "noise", "epsilon"):
            assert (d / f"mix.{suffix}.wav").exists()
        assert formats.read_labels(d / "labels.json")[0].n_frames > 0

    def test_bit_exact_with_memory(self, single):
        d, spec = single
        _, x = formats.read_wav(d / "mix.wav")
        np.testing.assert_array_equal(x, synth_scene(spec).mixture.astype(np.float32))

    def test_repeatable(self, single, tmp_path):
        d, _ = single
        assert main(["synth", str(d / "scene.json"), str(tmp_path / "b.wav"), str(tmp_path / "b.json")]) == 0
        assert (tmp_path / "b.wav").read_bytes() == (d / "mix.wav").read_bytes()
        assert (tmp_path / "b.json").read_text() == (d / "labels.json").read_text()

    def test_three_overlap(self, tmp_path, capsys):
        d = formats.scene_to_dict(SceneSpec(1.0))
        d["events"] = [{"event_id": i, "onset": 0.0, "offset": 1.0, "azimuth": 40.0 * i, "elevation": 0.0} for i in range(3)]
        import json

        (tmp_path / "s.json").write_text(json.dumps(d))
        rc = main(["synth", str(tmp_path / "s.json"), str(tmp_path / "m.wav"), str(tmp_path / "l.json")])
        assert rc == 2 and "overlap" in capsys.readouterr().err

    def test_malformed(self, tmp_path, capsys):
        (tmp_path / "s.json").write_text("{not json")
        assert main(["synth", str(tmp_path / "s.json"), str(tmp_path / "m.wav"), str(tmp_path / "l.json")]) == 2
        assert "error" in capsys.readouterr().err


class TestEstimate:
    def test_identity_single(self, single, tmp_path):
        d, _ = single
        out = tmp_path / "p.csv"
        assert main(["estimate", str(d / "mix.wav"), str(out), "--refiner", "identity", "--noas", "fixed:1"]) == 0
        rows = _rows(out)
        assert all(r["noas"] == "1" and r["az2_deg"] == "" for r in rows)
        az = np.array([float(r["az1_deg"]) for r in rows])
        el = np.array([float(r["el1_deg"]) for r in rows])
        assert np.abs(az[2:-2] - 30).max() < 0.5 and np.abs(el[2:-2] - 10).max() < 0.5

    def test_fixed_zero(self, single, tmp_path):
        d, _ = single
        out = tmp_path / "p.csv"
        assert main(["estimate", str(d / "mix.wav"), str(out), "--noas", "fixed:0"]) == 0
        for r in _rows(out):
            assert r["noas"] == "0" and all(r[c] == "" for c in formats.PREDICTION_COLUMNS[3:])

    def test_oracle_missing_components(self, tmp_path, single, capsys):
        d, _ = single
        (tmp_path / "lonely.wav").write_bytes((d / "mix.wav").read_bytes())
        rc = main(["estimate", str(tmp_path / "lonely.wav"), str(tmp_path / "p.csv"), "--refiner", "oracle"])
        assert rc == 2 and "component" in capsys.readouterr().err

    def test_oracle_pair_postprocessed(self, pair, tmp_path):
        d, _ = pair
        out, met = tmp_path / "p.csv", tmp_path / "m.json"
        args = ["estimate", str(d / "mix.wav"), str(out), "--refiner", "oracle", "--noas", f"oracle:{d / 'labels.json'}", "--postprocess"]
        assert main(args) == 0
        assert main(["eval", str(out), str(d / "labels.json"), str(met)]) == 0
        m = formats.read_metrics(met)
        assert m["doa_error_deg"] <= 2.0 and m["frame_recall"] == 1.0

    def test_wrong_channels(self, tmp_path, capsys):
        formats.write_wav(tmp_path / "st.wav", 48000, np.zeros((2, 48000)))
        assert main(["estimate", str(tmp_path / "st.wav"), str(tmp_path / "p.csv")]) == 2
        assert "channels" in capsys.readouterr().err

    def test_wrong_rate(self, tmp_path, capsys):
        formats.write_wav(tmp_path / "r.wav", 44100, np.zeros((4, 44100)))
        assert main(["estimate", str(tmp_path / "r.wav"), str(tmp_path / "p.csv")]) == 2
        assert "Hz" in capsys.readouterr().err

    def test_bad_noas(self, single, tmp_path):
        d, _ = single
        assert main(["estimate", str(d / "mix.wav"), str(tmp_path / "p.csv"), "--noas", "fixed:3"]) == 2
        assert main(["estimate", str(d / "mix.wav"), str(tmp_path / "p.csv"), "--refiner", "nope"]) == 2

    @pytest.mark.parametrize("refiner", ["angle", "logpower"])
    def test_other_refiners(self, single, tmp_path, refiner):
        d, _ = single
        out = tmp_path / "p.csv"
        assert main(["estimate", str(d / "mix.wav"), str(out), "--refiner", refiner, "--noas", "music", "--postprocess"]) == 0
        assert len(_rows(out)) == formats.read_labels(d / "labels.json")[0].n_frames


class TestEval:
    def _export_truth(self, d, out, shift=0.0):
        truth, _, cfg = formats.read_labels(d / "labels.json")
        doas = truth.doas.copy()
        doas[..., 0] += np.radians(shift)
        formats.write_predictions(out, type(truth)(truth.noas, doas), cfg.frame_times(truth.n_frames))

    def test_perfect(self, pair, tmp_path):
        d, _ = pair
        self._export_truth(d, tmp_path / "p.csv")
        assert main(["eval", str(tmp_path / "p.csv"), str(d / "labels.json"), str(tmp_path / "m.json")]) == 0
        m = formats.read_metrics(tmp_path / "m.json")
        assert m["doa_error_deg"] == pytest.approx(0.0, abs=1e-9) and m["frame_recall"] == 1.0
        assert m["n_frames"] == formats.read_labels(d / "labels.json")[0].n_frames and m["n_events"] == 2

    def test_shift(self, single, tmp_path):
        d, _ = single
        self._export_truth(d, tmp_path / "p.csv", shift=10.0)
        main(["eval", str(tmp_path / "p.csv"), str(d / "labels.json"), str(tmp_path / "m.json")])
        # great-circle distance of a 10 degree azimuth shift at 10 degrees elevation
        expected = np.degrees(np.arccos(np.sin(np.radians(10)) ** 2 + np.cos(np.radians(10)) ** 2 * np.cos(np.radians(10))))
        assert formats.read_metrics(tmp_path / "m.json")["doa_error_deg"] == pytest.approx(expected, abs=1e-9)

    def test_shift_equator(self, tmp_path):
        spec = single_source_spec(0.0, 0.0, duration=0.5)
        formats.write_scene(tmp_path / "s.json", spec)
        main(["synth", str(tmp_path / "s.json"), str(tmp_path / "m.wav"), str(tmp_path / "l.json")])
        truth, _, cfg = formats.read_labels(tmp_path / "l.json")
        doas = truth.doas.copy()
        doas[..., 0] += np.radians(10)
        formats.write_predictions(tmp_path / "p.csv", type(truth)(truth.noas, doas), cfg.frame_times(truth.n_frames))
        main(["eval", str(tmp_path / "p.csv"), str(tmp_path / "l.json"), str(tmp_path / "r.json")])
        assert formats.read_metrics(tmp_path / "r.json")["doa_error_deg"] == pytest.approx(10.0, abs=1e-9)

    def test_length_mismatch(self, pair, tmp_path, capsys):
        d, _ = pair
        self._export_truth(d, tmp_path / "p.csv")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        (tmp_path / "p.csv").write_text("\n".join(lines[:-1]) + "\n")
        assert main(["eval", str(tmp_path / "p.csv"), str(d / "labels.json"), str(tmp_path / "m.json")]) == 2
        assert "frames" in capsys.readouterr().err


@pytest.fixture(scope="module")
def fit200(tmp_path_factory):
    d = tmp_path_factory.mktemp("fit")
    rc = main(["fit", "--steps", "200", "--out-params", str(d / "p.json"), "--out-trace", str(d / "t.csv")])
    return rc, d


class TestFit:
    def test_bundled(self):
        assert len(bundled_scene_paths()) >= 2

    def test_200_steps(self, fit200):
        rc, d = fit200
        assert rc == 0
        trace = formats.read_trace(d / "t.csv")
        assert len(trace) == 200 and [t[0] for t in trace] == list(range(200))
        assert trace[-1][2] < trace[0][2]

    def test_fitted_refiner_usable(self, fit200, single, tmp_path):
        _, d = fit200
        sd, _ = single
        assert main(["estimate", str(sd / "mix.wav"), str(tmp_path / "p.csv"), "--refiner", f"fitted:{d / 'p.json'}"]) == 0
        assert main(["estimate", str(sd / "mix.wav"), str(tmp_path / "p.csv"), "--refiner", f"fitted:{d / 'p.json'}", "--stft-win", "1024"]) == 2

    def test_zero_steps(self, tmp_path):
        from ivdoa.refine_fit import RefinerParams

        assert main(["fit", "--steps", "0", "--seed", "4", "--out-params", str(tmp_path / "p.json"), "--out-trace", str(tmp_path / "t.csv")]) == 0
        p, _, _ = formats.read_params(tmp_path / "p.json")
        np.testing.assert_array_equal(p.to_vector(), RefinerParams.initial(4).to_vector())
        assert formats.read_trace(tmp_path / "t.csv") == []

    def test_same_seed_identical(self, tmp_path):
        scene = bundled_scene_paths()[0]
        for tag in "ab":
            assert main(["fit", scene, "--steps", "5", "--seed", "7", "--out-params", str(tmp_path / f"{tag}.json"), "--out-trace", str(tmp_path / f"{tag}.csv")]) == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestGradcheck:
    def test_default_ok(self, capsys):
        assert main(["gradcheck", "--n-draws", "10"]) == 0
        out = capsys.readouterr().out
        assert "max relative gradient error" in out

    def test_corrupt(self):
        assert main(["gradcheck", "--n-draws", "3", "--corrupt-gradient"]) != 0

    def test_fixed_order(self, capsys):
        main(["gradcheck", "--n-draws", "4", "--seed", "2"])
        a = capsys.readouterr().out
        main(["gradcheck", "--n-draws", "4", "--seed", "2"])
        b = capsys.readouterr().out
        assert a == b
        idx = [line.split()[1] for line in a.splitlines() if line.startswith("draw ")]
        assert idx == ["000", "001", "002", "003"]


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "ivdoa", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "gradcheck" in r.stdout
