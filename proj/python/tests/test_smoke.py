import json
from pathlib import Path

import numpy as np
import pytest

import pieeg

ROOT = Path(__file__).resolve().parents[2]
SCENARIOS = ROOT / "scenarios"


def test_frame_round_trip_and_edges():
    status = pieeg.make_status(0b0000_1000)
    chans = [0, 1, -1, 8_388_607, -8_388_608, 12345, -54321, 42]
    frame = pieeg.encode_frame(status, chans)
    assert len(frame) == pieeg.FRAME_BYTES == 27
    s, c, sync = pieeg.decode_frame(frame)
    assert (s, list(c), sync) == (status, chans, True)
    assert pieeg.sign_extend_24(0x800000) == -8_388_608
    with pytest.raises(pieeg.FrameError):
        pieeg.decode_frame(frame[:26])


def test_conversion_and_config():
    assert pieeg.raw_to_microvolts(8_388_607, 24, 4.5) == pytest.approx(187_500, rel=1e-4)
    raw, saturated = pieeg.microvolts_to_raw(1e9)
    assert saturated and raw == 8_388_607
    assert pieeg.validate_config(250, [24] * 8) == []
    assert pieeg.validate_config(300, [24] * 8)
    assert pieeg.validate_config(250, [24] * 7 + [3])


def test_bandpass_matches_scipy():
    signal = pytest.importorskip("scipy.signal")
    ours = np.array(pieeg.bandpass_sos(250.0))
    ref = signal.butter(4, [1, 30], "bandpass", fs=250, output="sos")
    w, h_ours = signal.sosfreqz(ours, worN=512, fs=250)
    _, h_ref = signal.sosfreqz(ref, worN=512, fs=250)
    assert np.allclose(np.abs(h_ours), np.abs(h_ref), atol=1e-9)
    x = np.random.default_rng(1).normal(size=(8, 2000))
    assert np.allclose(pieeg.bandpass(x, 250.0), signal.sosfilt(ref, x, axis=1), atol=1e-8)


def test_simulate_and_detect_blink():
    data = pieeg.render_scenario(SCENARIOS / "blink.scn")
    assert data.shape == (8, 6 * 250)
    events = pieeg.detect(data, 250.0, "blink")
    assert len(events) == 1
    assert abs(0.5 * (events[0]["t_start"] + events[0]["t_end"]) - 2.0) <= 0.2
    causal = pieeg.detect(data, 250.0, "blink", offline=False)
    assert len(causal) == 1


def test_alpha_report():
    data = pieeg.render_scenario(SCENARIOS / "alpha.scn")
    report = pieeg.analyze(data, 250.0)
    kinds = [e["kind"] for e in report["events"]]
    assert kinds == ["alpha"]
    o1 = report["band_power"][6]
    assert o1["label"] == "O1"
    assert o1["alpha_uV2"] > 10 * o1["beta_uV2"]
    idx = pieeg.alpha_index(data[:, 6 * 250 : 9 * 250], 250.0)
    assert idx[6] > 0.8 and idx[0] < 0.4


def test_cli_simulate_export_and_recording(tmp_path):
    rec = tmp_path / "a.rec"
    code, out, err = pieeg.run_cli(
        ["simulate", "--scenario", str(SCENARIOS / "alpha.scn"), "--duration", "10", "--out", str(rec)]
    )
    assert code == 0, err
    assert json.loads(out)["frames"] == 2500
    r = pieeg.read_recording(rec)
    assert r.complete and r.fs == 250 and r.data.shape == (8, 2500)
    assert r.header["labels"][0] == "Fp1"
    rows = pieeg.export_csv(rec, tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert rows == 2500 and len(lines) == 2501
    assert lines[0] == "t_s,ch1_uV,ch2_uV,ch3_uV,ch4_uV,ch5_uV,ch6_uV,ch7_uV,ch8_uV"
    code, _, err = pieeg.run_cli(["analyze", "--in", str(tmp_path / "missing.rec")])
    assert code == 1 and "missing.rec" in err


def test_bad_recording_raises(tmp_path):
    bad = tmp_path / "bad.rec"
    bad.write_bytes(b"XXXX" + bytes(60))
    with pytest.raises(pieeg.RecordingFormatError):
        pieeg.read_recording(bad)
