import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trs_engine.tide import (
    CONSTITUENT_PERIODS_H,
    HarmonicConstituent,
    TideSeries,
    apply_correction,
    calibrate_correction_factor,
    export_tide_csv,
    ingest_tide_csv,
    level_at,
    synthesize_tide,
)

M2 = HarmonicConstituent(3.5, 12.42)
S2 = HarmonicConstituent(1.2, 12.0)


def test_single_constituent_at_phase_zero():
    series = synthesize_tide(
        [HarmonicConstituent(4.0, 12.42, 0.0)], 6.0, 0.0, 3600.0, 360.0
    )
    assert series.levels_m[0] == pytest.approx(10.0)


def test_zero_constituents_constant_series():
    series = synthesize_tide([], 6.0, 0.0, 86400.0, 360.0)
    assert np.all(series.levels_m == 6.0)


def test_spring_range_over_synodic_beat():
    # oracle: dense scan of one M2/S2 beat (~14.77 days) for max minus min
    beat_s = 14.77 * 86400.0
    series = synthesize_tide([M2, S2], 6.0, 0.0, beat_s, 60.0)
    spring_range = float(series.levels_m.max() - series.levels_m.min())
    assert spring_range == pytest.approx(2 * (3.5 + 1.2), abs=0.02)


def test_synthesis_rejects_bad_inputs():
    with pytest.raises(ValueError):
        synthesize_tide([M2], 6.0, 0.0, 100.0, 360.0)
    with pytest.raises(ValueError):
        synthesize_tide([M2], 6.0, 0.0, 3600.0, -1.0)


def test_constituent_invariants():
    with pytest.raises(ValueError):
        HarmonicConstituent(-1.0, 12.0)
    with pytest.raises(ValueError):
        HarmonicConstituent(1.0, 0.0)


def test_periodicity_on_commensurate_constituents():
    # 12 h and 6 h periods share a 12 h fundamental, a multiple of dt
    series = synthesize_tide(
        [HarmonicConstituent(2.0, 12.0), HarmonicConstituent(0.5, 6.0)],
        5.0, 0.0, 48 * 3600.0, 1800.0,
    )
    per = int(12 * 3600 / 1800)
    np.testing.assert_allclose(series.levels_m[per:], series.levels_m[:-per], atol=1e-9)


def test_calibration_identity_and_scalar():
    series = synthesize_tide([M2, S2], 6.0, 0.0, 5 * 86400.0, 360.0)
    assert calibrate_correction_factor(series, series) == pytest.approx(1.0)
    scaled = apply_correction(series, 1.1)
    assert calibrate_correction_factor(series, scaled) == pytest.approx(1.1)


def test_calibration_scale_equivariance():
    rng = np.random.default_rng(7)
    pred = TideSeries(0.0, 60.0, 4.0 + rng.normal(0, 1, 500))
    ref = TideSeries(0.0, 60.0, 4.0 + rng.normal(0, 1, 500))
    c1 = calibrate_correction_factor(pred, ref)
    ref2 = TideSeries(0.0, 60.0, ref.levels_m * 3.0)
    assert calibrate_correction_factor(pred, ref2) == pytest.approx(3.0 * c1)


def test_calibration_reduces_rms_residual():
    rng = np.random.default_rng(11)
    pred = synthesize_tide([M2], 0.0, 0.0, 2 * 86400.0, 360.0)
    ref = TideSeries(0.0, 360.0, 1.08 * pred.levels_m + rng.normal(0, 0.05, len(pred)))
    c_f = calibrate_correction_factor(pred, ref)
    before = np.sqrt(np.mean((pred.levels_m - ref.levels_m) ** 2))
    corrected = apply_correction(pred, c_f)
    after = np.sqrt(
        np.mean(
            (
                (corrected.levels_m - corrected.mean_level_m)
                - (ref.levels_m - ref.mean_level_m)
            )
            ** 2
        )
    )
    assert after <= before


def test_calibration_degenerate_input():
    flat = TideSeries(0.0, 360.0, np.full(10, 5.0))
    wave = synthesize_tide([M2], 5.0, 0.0, 9 * 360.0, 360.0)
    with pytest.raises(ValueError):
        calibrate_correction_factor(flat, wave)


def test_apply_correction_preserves_mean_and_scales_amplitude():
    series = synthesize_tide([HarmonicConstituent(4.0, 12.42)], 6.0, 0.0, 86400.0, 60.0)
    out = apply_correction(series, 1.1)
    assert out.mean_level_m == pytest.approx(series.mean_level_m)
    half_range = (out.levels_m.max() - out.levels_m.min()) / 2
    assert half_range == pytest.approx(4.4, abs=1e-3)
    same = apply_correction(series, 1.0)
    np.testing.assert_array_equal(same.levels_m, series.levels_m)


def test_level_at_interpolation():
    series = TideSeries(100.0, 10.0, np.array([4.0, 6.0, 5.0]))
    assert level_at(series, 100.0) == 4.0
    assert level_at(series, 110.0) == 6.0
    assert level_at(series, 105.0) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        level_at(series, 99.0)
    with pytest.raises(ValueError):
        level_at(series, 121.0)


def test_ingest_minimal_and_roundtrip(tmp_path):
    path = tmp_path / "tide.csv"
    path.write_text("timestamp_s,level_m\n0,4.0\n360,4.5\n")
    series = ingest_tide_csv(path)
    assert len(series) == 2
    assert series.dt_s == 360.0

    # write-then-read oracle: bit-exact round trip
    full = synthesize_tide([M2, S2], 6.0, 1735689600.0, 86400.0, 360.0)
    out = tmp_path / "rt.csv"
    export_tide_csv(full, out)
    back = ingest_tide_csv(out)
    np.testing.assert_array_equal(back.levels_m, full.levels_m)
    assert back.dt_s == full.dt_s
    assert back.start_time_s == full.start_time_s


def test_ingest_rejects_gap_naming_row(tmp_path):
    path = tmp_path / "gap.csv"
    path.write_text("timestamp_s,level_m\n0,4.0\n360,4.5\n1080,4.7\n")
    with pytest.raises(ValueError, match="row 4"):
        ingest_tide_csv(path)


def test_ingest_rejects_non_monotone_and_bad_values(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("timestamp_s,level_m\n0,4.0\n-360,4.5\n")
    with pytest.raises(ValueError, match="non-monotone"):
        ingest_tide_csv(path)
    path.write_text("timestamp_s,level_m\n0,4.0\n360,abc\n")
    with pytest.raises(ValueError, match="row 3"):
        ingest_tide_csv(path)
    path.write_text("time,level\n0,4.0\n")
    with pytest.raises(ValueError, match="header"):
        ingest_tide_csv(path)


@settings(max_examples=25, deadline=None)
@given(
    scale=st.floats(0.1, 5.0),
    amp=st.floats(0.5, 5.0),
    seed=st.integers(0, 2**16),
)
def test_calibration_recovers_pure_scaling(scale, amp, seed):
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0, 2 * math.pi)
    pred = synthesize_tide(
        [HarmonicConstituent(amp, CONSTITUENT_PERIODS_H["M2"], phase)],
        6.0, 0.0, 86400.0, 360.0,
    )
    ref = apply_correction(pred, scale)
    assert calibrate_correction_factor(pred, ref) == pytest.approx(scale, rel=1e-9)
