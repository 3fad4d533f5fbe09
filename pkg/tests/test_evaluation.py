import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vstgnn.errors import ShapeError, ValidationError
from vstgnn.evaluation import (
    MetricReport,
    OutageMap,
    baseline_composites,
    colorize,
    evaluate_case,
    mae,
    mape,
    oracle_forecast,
    percent_of_normal,
    persistence_forecast,
    read_metrics_csv,
    render_outage_map,
    rmse,
    write_metrics_csv,
    write_outage_geotiff,
)
from vstgnn.ingest import GeoRef, RasterTile, SyntheticEventConfig, prepare_archive, synthesize_events
from vstgnn.trainer import make_case_split

D = dt.date(2022, 9, 29)
G = GeoRef.from_bounds(-82, 26, -81, 27, 2, 2)


def brute_metrics(p, a, eps=0.01):
    n = len(p)
    se = ae = pe = 0.0
    for i in range(n):
        r = p[i] - a[i]
        se += r * r
        ae += abs(r)
        pe += abs(r) / max(abs(a[i]), eps)
    return (se / n) ** 0.5, ae / n, 100 * pe / n


def brute_pon(day, comps, eps=1e-6):
    h, w = day.shape
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            base = sum(c[i, j] for c in comps) / len(comps)
            out[i, j] = 100.0 if base <= eps else 100.0 * day[i, j] / base
    return out


def rt(values, date=D, county="12001", georef=G):
    return RasterTile(county, date, np.asarray(values, dtype=np.float64), georef)


# --------------------------------------------------------------------------- metrics

def test_metrics_zero_residual():
    a = np.array([1.0, 2.0, 0.0])
    assert rmse(a, a) == mae(a, a) == mape(a, a) == 0


def test_metrics_hand_values():
    assert rmse([0, 0], [3, 4]) == pytest.approx(np.sqrt(12.5))
    assert rmse([0, 0], [3, 4]) == pytest.approx(3.5355, abs=1e-4)
    assert mae([0, 0], [3, 4]) == 3.5
    assert mape([0, 0], [3, 4]) == pytest.approx(100.0)


def test_mape_epsilon_guard():
    assert mape([0.5], [0.0], eps=0.01) == pytest.approx(100 * 0.5 / 0.01)


def test_metric_errors():
    with pytest.raises(ValidationError):
        rmse([], [])
    with pytest.raises(ShapeError):
        mae([1, 2], [1])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 400), st.integers(0, 2 ** 31 - 1))
def test_metrics_match_loop_and_power_mean(n, seed):
    rng = np.random.default_rng(seed)
    p, a = rng.normal(size=n), rng.normal(size=n) * (rng.random(n) > 0.1)
    r, m, pe = brute_metrics(p, a)
    assert abs(rmse(p, a) - r) < 1e-9 and abs(mae(p, a) - m) < 1e-9
    assert abs(mape(p, a) - pe) <= 1e-9 * max(1.0, pe)
    assert rmse(p, a) >= mae(p, a) >= 0


def test_metrics_csv_round_trip(tmp_path):
    reports = [MetricReport("Michael", 0.43, 0.2, 146.94, 53)]
    write_metrics_csv(reports, tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "case,rmse,mae,mape,num_windows,space"
    assert read_metrics_csv(tmp_path / "m.csv") == reports


# --------------------------------------------------------------------------- percent of normal

def test_pon_identity_baseline():
    m = percent_of_normal(rt([[10.0]]), [rt([[10.0]])] * 3)
    assert m.percent_normal[0, 0] == 100


def test_pon_quarter():
    assert percent_of_normal(rt([[2.5]]), [rt([[10.0]])] * 3).percent_normal[0, 0] == pytest.approx(25)


def test_pon_zero_baseline_sentinel():
    assert percent_of_normal(rt([[5.0]]), [rt([[0.0]])] * 3).percent_normal[0, 0] == 100


def test_pon_mean_of_three():
    comps = [rt([[c]]) for c in (4.0, 8.0, 12.0)]
    assert percent_of_normal(rt([[4.0]]), comps).percent_normal[0, 0] == pytest.approx(50)


def test_pon_validation():
    with pytest.raises(ValidationError):
        percent_of_normal(rt([[1.0, 2.0]]), [rt([[1.0]])] * 3)
    with pytest.raises(ValidationError):
        percent_of_normal(rt([[1.0]]), [])
    with pytest.raises(ValidationError):
        percent_of_normal(rt([[1.0]]), [rt([[1.0]], county="x")] * 3)
    with pytest.raises(ValidationError):
        percent_of_normal(rt([[1.0]]), [rt([[1.0]], georef=GeoRef())] * 3)


def test_pon_fewer_composites_warns(caplog):
    m = percent_of_normal(rt([[3.0]]), [rt([[6.0]])])
    assert m.percent_normal[0, 0] == 50
    assert "uses 1 composites" in caplog.text


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_pon_scale_equivariance(seed):
    rng = np.random.default_rng(seed)
    comps = [rt(rng.random((3, 3)) * (rng.random((3, 3)) > 0.3)) for _ in range(3)]
    day = rt(rng.random((3, 3)) * 20)
    a = percent_of_normal(day, comps)
    b = percent_of_normal(rt(day.radiance * 2), comps)
    lit = np.mean([c.radiance for c in comps], axis=0) > 1e-6
    np.testing.assert_array_equal(b.percent_normal[lit], 2 * a.percent_normal[lit])
    assert np.all(b.percent_normal[~lit] == 100)


def test_pon_matches_brute_loop():
    rng = np.random.default_rng(7)
    for _ in range(20):
        comps = [rng.random((5, 4)) * 30 * (rng.random((5, 4)) > 0.2) for _ in range(3)]
        day = rng.random((5, 4)) * 30
        got = percent_of_normal(rt(day), [rt(c) for c in comps]).percent_normal
        np.testing.assert_allclose(got, brute_pon(day, comps), rtol=0, atol=1e-9)


def test_baseline_selection_strictly_preceding_months():
    comps = [rt([[1.0]], date=dt.date(2022, m, 1)) for m in (5, 6, 7, 8, 9)]
    chosen = baseline_composites(comps, dt.date(2022, 9, 29))
    assert [c.date.month for c in chosen] == [6, 7, 8]
    assert [c.date.month for c in baseline_composites(comps, dt.date(2022, 10, 1))] == [7, 8, 9]


# --------------------------------------------------------------------------- rendering

def om(values):
    return OutageMap("12001", D, np.asarray(values, dtype=np.float64), G)


def test_colorize_clamps():
    green = colorize(np.full((2, 2), 100.0))
    red = colorize(np.zeros((2, 2)))
    assert np.all(green == green[0, 0]) and np.all(red == red[0, 0])
    assert green[0, 0, 1] > green[0, 0, 0]  # green channel dominates
    assert red[0, 0, 0] > red[0, 0, 1]
    np.testing.assert_array_equal(colorize(np.array([[150.0]])), colorize(np.array([[100.0]])))
    np.testing.assert_array_equal(colorize(np.array([[-5.0]])), colorize(np.array([[0.0]])))


def test_render_deterministic_and_clamped(tmp_path):
    base = np.full((8, 8), 60.0)
    a = render_outage_map(om(np.where(np.eye(8) > 0, 100.0, base)), tmp_path / "a.png")
    b = render_outage_map(om(np.where(np.eye(8) > 0, 1000.0, base)))
    assert a == b == (tmp_path / "a.png").read_bytes()
    assert a[:8] == b"\x89PNG\r\n\x1a\n"
    assert render_outage_map(om(np.zeros((8, 8)))) != render_outage_map(om(np.full((8, 8), 100.0)))


def test_outage_geotiff(tmp_path):
    import rasterio
    write_outage_geotiff(om([[50.0, 120.0], [100.0, 0.0]]), tmp_path / "m.tif")
    with rasterio.open(tmp_path / "m.tif") as src:
        np.testing.assert_array_equal(src.read(1), [[50, 120], [100, 0]])
        assert src.transform == G.transform


# --------------------------------------------------------------------------- case evaluation

@pytest.fixture(scope="module")
def small_split():
    base = SyntheticEventConfig(node_count=3, grid_size=8, num_days=14, landfall_day=6)
    archives = [prepare_archive(a, 8, 8) for a in synthesize_events(base, ["A", "B", "C"])]
    return make_case_split(archives, "B", S=4, T=1), archives[1]


def test_oracle_gives_zero_metrics(small_split):
    split, archive = small_split
    report, maps = evaluate_case(oracle_forecast, split, archive)
    assert (report.rmse, report.mae, report.mape) == (0, 0, 0)
    assert report.num_windows == len(split.test_windows) == 10
    assert len(maps) == 10 * 3
    for pred, actual in maps:
        np.testing.assert_array_equal(pred.percent_normal, actual.percent_normal)


def test_persistence_forecast_shape_and_metrics(small_split):
    split, _ = small_split
    preds = persistence_forecast(split.test_windows)
    assert preds[0].shape == split.test_windows[0].targets.shape
    np.testing.assert_array_equal(preds[0][:, 0], split.test_windows[0].inputs[:, -1])
    report, maps = evaluate_case(persistence_forecast, split)
    assert report.rmse > 0 and maps == []
    raw, _ = evaluate_case(persistence_forecast, split, raw=True)
    assert raw.space == "raw" and raw.rmse > report.rmse


def test_evaluate_empty_test_set(small_split):
    split, _ = small_split
    from vstgnn.trainer import CaseSplit
    with pytest.raises(ValidationError):
        evaluate_case(oracle_forecast, CaseSplit("x", split.train_windows, [], []))
