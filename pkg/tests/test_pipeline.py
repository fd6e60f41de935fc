import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import decimate_oracle, quantile_type7
from seizure_forecast.errors import ContractError, DataError, DegenerateDataError, IngestionError
from seizure_forecast.pipeline import (
    MODEL_CHANNELS,
    ChannelSeries,
    PatientProfile,
    SampleSet,
    SeizureAnnotation,
    WindowParams,
    acc_magnitude,
    build_splits,
    ingest_patient,
    label_windows,
    load_profiles,
    read_archive,
    resample,
    robust_scale,
    split,
    synth_generate,
    write_archive,
    write_patient,
)
from seizure_forecast.pipeline.series import series_from_samples
from seizure_forecast.pipeline.split import split_indices
from seizure_forecast.pipeline.windows import classify_window

MIN = 60_000


# ---------------------------------------------------------------- ingestion


def _tiny_recording(pid="X"):
    profile = PatientProfile(pid, [(0.5, "Focal"), (0.9, "GTC")], drift={"HR": 2.0}, ramp_minutes=10,
                             preictal_horizon_minutes=10, rng_seed=4)
    return synth_generate(profile, 1.0)


def test_ingest_round_trip(tmp_path):
    rec = _tiny_recording()
    write_patient(tmp_path / "X", rec)
    back = ingest_patient(tmp_path / "X")
    assert set(back.series) == {"BVP", "EDA", "HR", "TEMP", "ACC_X", "ACC_Y", "ACC_Z"}
    assert [a.onset_time for a in back.annotations] == [a.onset_time for a in rec.annotations]
    for ch, s in rec.series.items():
        assert back.series[ch].start_time == s.start_time
        assert np.max(np.abs(back.series[ch].values - s.values)) < 1e-6


def test_ingest_missing_channel(tmp_path):
    write_patient(tmp_path / "X", _tiny_recording())
    (tmp_path / "X" / "EDA.csv").unlink()
    with pytest.raises(IngestionError, match="channel EDA absent"):
        ingest_patient(tmp_path / "X")


def test_ingest_rejects_bad_header(tmp_path):
    write_patient(tmp_path / "X", _tiny_recording())
    (tmp_path / "X" / "HR.csv").write_text("time,value\n0,1\n")
    with pytest.raises(IngestionError, match="header"):
        ingest_patient(tmp_path / "X")


def test_gap_splits_segments():
    ts = np.concatenate([np.arange(0, 20_000, 250), np.arange(30_000, 50_000, 250)]).astype(float)
    s = series_from_samples("X", "EDA", ts, np.ones(len(ts)), 4.0)
    deltas = np.diff(ts)
    assert len(s.segments) == int(np.sum(deltas > 5000)) + 1 == 2


def test_non_monotonic_timestamps_rejected():
    with pytest.raises(DataError, match="row 3"):
        series_from_samples("X", "HR", np.array([0.0, 1000.0, 1000.0]), np.ones(3), 1.0)


def test_acc_magnitude():
    assert acc_magnitude([3.0], [4.0], [0.0])[0] == 5.0
    assert acc_magnitude([0.0], [0.0], [0.0])[0] == 0.0
    rng = np.random.default_rng(0)
    x, y, z = rng.normal(size=(3, 50))
    ref = [(a * a + b * b + c * c) ** 0.5 for a, b, c in zip(x, y, z)]
    assert np.max(np.abs(acc_magnitude(x, y, z) - ref)) < 1e-14


# ---------------------------------------------------------------- scaling


def test_robust_scale_examples():
    scaled, sc = robust_scale(np.array([1.0, 2.0, 3.0, 4.0, 100.0]))
    assert (sc.median, sc.iqr) == (3.0, 2.0)
    assert scaled.tolist() == [-1.0, -0.5, 0.0, 0.5, 48.5]
    scaled, sc = robust_scale(np.full(4, 7.0))
    assert sc.degenerate and scaled.tolist() == [0.0] * 4
    with pytest.raises(ContractError):
        robust_scale(np.ones(3))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=40))
def test_robust_scale_matches_type7(values):
    _, sc = robust_scale(np.array(values))
    assert sc.median == pytest.approx(quantile_type7(values, 0.5), abs=1e-9)
    assert sc.iqr == pytest.approx(quantile_type7(values, 0.75) - quantile_type7(values, 0.25), abs=1e-9)


# ---------------------------------------------------------------- resampling


def test_resample_constant_and_ramp():
    s = ChannelSeries("X", "EDA", 0, 32.0, np.full(320, 2.5))
    assert np.all(resample(s, 4.0).values == 2.5)
    ramp = ChannelSeries("X", "HR", 0, 1.0, np.arange(10.0))
    out = resample(ramp, 2.0).values
    assert np.allclose(out, np.arange(19) * 0.5, atol=1e-12)


def test_resample_matches_decimation_oracle():
    t = np.arange(64 * 20) / 64.0
    values = np.sin(2 * np.pi * 0.3 * t) + 0.2 * np.sin(2 * np.pi * 1.7 * t)
    s = ChannelSeries("X", "BVP", 1_000, 64.0, values)
    out = resample(s, 4.0).values
    ref = decimate_oracle(values, 64.0, 4.0, start_ms=1_000)
    assert len(out) == len(ref)
    assert np.max(np.abs(out - ref)) < 1e-9


def test_resample_rejects_bad_rate():
    with pytest.raises(ContractError):
        resample(ChannelSeries("X", "HR", 0, 1.0, np.ones(5)), 0.0)


# ---------------------------------------------------------------- windows


def test_classify_examples():
    p = WindowParams(preictal_horizon_minutes=120)
    ann = [SeizureAnnotation("X", "s1", 10_000_000)]
    assert classify_window(9_000_000, 9_030_000, ann, p) == 1
    far = 10_000_000 + 6 * 60 * MIN
    assert classify_window(far, far + 30_000, ann, WindowParams()) == 0
    assert classify_window(10_000_000 + MIN, 10_000_000 + MIN + 30_000, ann, WindowParams()) is None
    # straddling the onset is never pre-ictal
    assert classify_window(9_990_000, 10_020_000, ann, p) is None


def _flat_series(hours, rate=4.0, start=0):
    n = int(hours * 3600 * rate)
    return {ch: ChannelSeries("X", ch, start, rate, np.random.default_rng(0).normal(size=n)) for ch in MODEL_CHANNELS}


def _enumerate_preictal(origin, n_rows, onset, horizon_ms, rows=120, step=250):
    count = 0
    for r in range(0, n_rows - rows + 1, rows):
        a = origin + r * step
        b = a + rows * step
        if a >= onset - horizon_ms and b <= onset:
            count += 1
    return count


@pytest.mark.parametrize("onset_s", [3 * 3600, 3 * 3600 + 17, 2 * 3600 + 4321])
def test_preictal_window_count(onset_s):
    series = _flat_series(5)
    onset = onset_s * 1000
    ann = [SeizureAnnotation("X", "s1", onset)]
    samples = label_windows(series, ann, WindowParams())
    got = int(np.sum(samples.labels == 1))
    assert got == _enumerate_preictal(0, len(series["HR"]), onset, 60 * MIN)
    if onset_s % 30 == 0:
        assert got == (60 * 60) // 30


def test_windows_drop_large_gaps_and_fill_small():
    series = _flat_series(12)
    series["EDA"].values[1000:1010] = np.nan  # 10 rows: inside one window, below 10%
    series["HR"].values[3000:3020] = np.nan  # 20 rows: above 10%
    ann = [SeizureAnnotation("X", "s1", 11 * 3600 * 1000)]
    s = label_windows(series, ann, WindowParams())
    starts = set(s.window_start_ms.tolist())
    assert 960 * 250 in starts and 3000 * 250 not in starts
    assert np.all(np.isfinite(s.windows))


def test_no_windows_is_degenerate():
    series = _flat_series(0.5)
    with pytest.raises(DegenerateDataError):
        label_windows(series, [SeizureAnnotation("X", "s1", 100 * MIN)], WindowParams())


# ---------------------------------------------------------------- split


def _samples(n, pos_frac=0.4, patients=("A",)):
    labels = (np.arange(n) < int(n * pos_frac)).astype(int)
    pids = [patients[i % len(patients)] for i in range(n)]
    return SampleSet(np.zeros((n, 2, 5)), labels, pids, np.arange(n) * 30_000)


def test_split_proportions_and_partition():
    s = split(_samples(100), seed=0)
    assert (len(s.train), len(s.validation), len(s.test)) == (60, 20, 20)
    keys = [set(p.keys()) for p in s.parts().values()]
    assert not (keys[0] & keys[1] or keys[0] & keys[2] or keys[1] & keys[2])
    assert len(keys[0] | keys[1] | keys[2]) == 100


def test_split_determinism():
    base = _samples(200)
    assignments = []
    for seed in range(10):
        a = split(base, seed=seed).train.window_start_ms.tolist()
        assert a == split(base, seed=seed).train.window_start_ms.tolist()
        assignments.append(tuple(a))
    assert len(set(assignments)) == 10


def test_split_too_small():
    with pytest.raises(ContractError):
        split_indices([0, 1, 0, 1])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "c"]), min_size=5, max_size=200), st.integers(0, 2**32 - 1))
def test_split_indices_property(strata, seed):
    parts = split_indices(strata, seed=seed)
    allidx = np.concatenate(parts)
    assert sorted(allidx.tolist()) == list(range(len(strata)))
    n = len(strata)
    for part, r in zip(parts, (0.6, 0.2, 0.2)):
        assert abs(len(part) - r * n) <= 1
    for key in set(strata):
        size = strata.count(key)
        for part, r in zip(parts, (0.6, 0.2, 0.2)):
            inside = sum(1 for i in part if strata[i] == key)
            assert abs(inside - r * size) < 1 + 1e-9


# ---------------------------------------------------------------- synthetic + archive


def test_synthetic_is_deterministic():
    a, b = _tiny_recording(), _tiny_recording()
    for ch in a.series:
        assert np.array_equal(a.series[ch].values, b.series[ch].values)


def test_synthetic_drift_separates_and_null_does_not():
    params = WindowParams(preictal_horizon_minutes=10, interictal_exclusion_minutes=20, postictal_buffer_minutes=10)

    def hr_gap(drift):
        p = PatientProfile("X", [(0.75, "F"), (1.3, "F")], drift={"HR": drift}, noise_level=0.1,
                           ramp_minutes=10, preictal_horizon_minutes=10, rng_seed=2)
        rec = synth_generate(p, 1.5)
        from seizure_forecast.pipeline.dataset import windows_for_recording
        s = windows_for_recording(rec, params)
        hr = s.windows[:, :, MODEL_CHANNELS.index("HR")].mean(axis=1)
        return hr, s.labels

    hr, y = hr_gap(20.0)
    # every pre-ictal window rises above the interictal baseline
    assert hr[y == 1].min() > hr[y == 0].max()
    assert hr[y == 1].mean() - hr[y == 0].mean() > 10
    hr, y = hr_gap(0.0)
    assert abs(hr[y == 1].mean() - hr[y == 0].mean()) < 0.1


def test_profile_loading(tmp_path):
    corpus = load_profiles("tests/fixtures/tiny_profile.yaml")
    assert [p.patient_id for p in corpus.profiles] == ["P1", "P2", "P3"]
    assert corpus.profiles[2].drift["HR"] == -corpus.profiles[0].drift["HR"]


def test_archive_round_trip_and_bad_magic(tmp_path):
    recs = [synth_generate(p, 1.5) for p in load_profiles("tests/fixtures/tiny_profile.yaml").profiles]
    params = WindowParams(preictal_horizon_minutes=10, interictal_exclusion_minutes=20, postictal_buffer_minutes=10)
    splits, _ = build_splits(recs, params, seed=3)
    write_archive(tmp_path / "a", splits)
    back, manifest = read_archive(tmp_path / "a")
    assert manifest["split_seed"] == 3
    for name, part in splits.parts().items():
        other = back.parts()[name]
        assert np.array_equal(part.windows, other.windows)
        assert part.keys() == other.keys() and np.array_equal(part.labels, other.labels)
    raw = bytearray((tmp_path / "a" / "train.bin").read_bytes())
    raw[0] ^= 0xFF
    (tmp_path / "a" / "train.bin").write_bytes(bytes(raw))
    with pytest.raises(DataError, match="magic"):
        read_archive(tmp_path / "a")


def test_scaling_fitted_on_train_only():
    recs = [synth_generate(p, 1.5) for p in load_profiles("tests/fixtures/tiny_profile.yaml").profiles]
    params = WindowParams(preictal_horizon_minutes=10, interictal_exclusion_minutes=20, postictal_buffer_minutes=10)
    splits, meta = build_splits(recs, params, seed=0)
    for pid in splits.train.patients:
        w = splits.train.windows[splits.train.patient_ids == pid]
        for c in range(5):
            assert abs(np.median(w[:, :, c])) < 1e-9
    assert set(meta["scalers"]) == {"P1", "P2", "P3"}
