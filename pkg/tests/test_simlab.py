import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from robustdlm.simlab import (ComparisonReport, ScenarioConfig, SimulationError, draw_innovations,
                              efficiency, figure_table, run_replicate, run_study, scenario_grid,
                              simulate_series, summarize, write_json, write_records_csv,
                              write_summary_csv)


def test_pure_gaussian_innovations():
    rng = np.random.default_rng(1)
    w, outlier = draw_innovations(rng, 100_000, 0.0, 8.0, 2.0)
    assert not outlier.any()
    # sd of the sample variance is about theta2 * sqrt(2 / n)
    assert abs(np.var(w) - 2.0) < 3 * 2.0 * np.sqrt(2 / w.size)


def test_unit_factor_is_plain_gaussian():
    w, _ = draw_innovations(np.random.default_rng(2), 20_000, 0.3, 1.0, 2.0)
    ref = np.random.default_rng(3).normal(0, np.sqrt(2.0), 20_000)
    assert stats.ks_2samp(w, ref).pvalue > 0.01


@pytest.mark.parametrize("p,f", [(0.1, 8.0), (0.25, 2.0), (0.05, 4.0)])
def test_mixture_variance_identity(p, f):
    w, _ = draw_innovations(np.random.default_rng(4), 2_000_000, p, f, 2.0)
    assert np.var(w) == pytest.approx((1 - p + p * f * f) * 2.0, rel=0.01)


def test_contaminated_component_scale():
    w, outlier = draw_innovations(np.random.default_rng(5), 400_000, 0.2, 8.0, 2.0)
    assert np.std(w[outlier]) == pytest.approx(8.0 * np.sqrt(2.0), rel=0.01)


def test_series_is_deterministic_per_replicate():
    cfg = ScenarioConfig(n_d=50, p=0.1, f=8.0, seed=77)
    y1, a1 = simulate_series(cfg, 3)
    y2, a2 = simulate_series(cfg, 3)
    assert np.array_equal(y1, y2) and np.array_equal(a1, a2)
    assert not np.array_equal(simulate_series(cfg, 4)[0], y1)
    # the draw count does not depend on p, so shocks line up across scenarios
    _, a0 = simulate_series(ScenarioConfig(n_d=50, p=0.0, f=8.0, seed=77), 3)
    assert a0[0] == a1[0]


def test_config_validation():
    for kw in (dict(p=1.5), dict(f=0.5), dict(replicates=0), dict(n_d=1), dict(seed=-1),
               dict(obs_var=0.0)):
        with pytest.raises(SimulationError):
            ScenarioConfig(**kw)


def test_efficiency_examples():
    a = np.linspace(0, 1, 10)
    est = a + 0.1
    assert efficiency(a, est, est) == 0.0
    assert efficiency(a, a + 0.2, a + 0.1) == pytest.approx(3.0)
    assert np.isnan(efficiency(a, est, a))


@given(st.integers(0, 2**32 - 1))
def test_efficiency_exceeds_minus_one(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=20)
    assert efficiency(a, a + rng.normal(size=20), a + rng.normal(size=20)) > -1


def test_efficiency_recomputed_from_stored_means():
    cfg = ScenarioConfig(n_d=100, p=0.1, f=8.0, replicates=1, seed=11)
    rec = run_replicate(cfg, 0, keep_paths=True)
    a, g, t = (np.array(v) for v in (rec.truth, rec.mean_gauss, rec.mean_t))
    independent = ((g - a) ** 2).sum() / ((t - a) ** 2).sum() - 1
    assert rec.efficiency == pytest.approx(independent, abs=1e-12)
    assert np.array_equal(a, simulate_series(cfg, 0)[1])


def _tiny():
    return [ScenarioConfig(n_d=30, p=0.1, f=8.0, replicates=3, seed=5),
            ScenarioConfig(n_d=30, p=0.0, f=2.0, replicates=2, seed=5)]


def test_study_is_reproducible_across_worker_counts(tmp_path):
    a = run_study(_tiny(), workers=1)
    b = run_study(_tiny(), workers=2)
    for rep, tag in ((a, "a"), (b, "b")):
        write_records_csv(rep, tmp_path / f"{tag}.csv")
        write_summary_csv(rep, tmp_path / f"{tag}_s.csv")
        write_json(rep, tmp_path / f"{tag}.json")
    for suffix in (".csv", "_s.csv", ".json"):
        assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()
    assert [s.completed for s in a.scenarios] == [3, 2]


def test_medians_ignore_replicate_order():
    rep = run_study(_tiny()[:1], workers=1)
    cfg = rep.scenarios[0].config
    shuffled = summarize(cfg, rep.records[::-1])
    assert shuffled.stats == rep.scenarios[0].stats


def test_failed_replicates_are_excluded(monkeypatch):
    import robustdlm.simlab as sl

    calls = {"n": 0}
    real_fit = sl.fit

    def flaky(spec, settings=None):
        calls["n"] += 1
        if calls["n"] == 1:
            raise RuntimeError("boom")
        return real_fit(spec, settings)

    monkeypatch.setattr(sl, "fit", flaky)
    rep = run_study([ScenarioConfig(n_d=20, p=0.0, f=2.0, replicates=2, seed=1)], workers=1)
    s = rep.scenarios[0]
    assert (s.completed, s.failed) == (1, 1)
    assert "boom" in rep.records[0].error


def test_scenario_grid_and_table():
    cfgs = scenario_grid()
    assert len(cfgs) == 6
    full = scenario_grid((100, 250, 500), (0, .05, .1, .15, .2, .25), (2, 4, 8))
    assert len(full) == 54
    fake = ComparisonReport([summarize(c, []) for c in cfgs], [])
    table = figure_table(fake)
    assert table[0] == ["f", "n_d", "p=0", "p=0.1", "p=0.25"]
    assert len(table) == 3
