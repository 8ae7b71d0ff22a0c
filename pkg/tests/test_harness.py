import csv
import io
import json
import math

import numpy as np
import pytest

from cesbound.config import ConfigError, ExperimentConfig, load_config, parse_config
from cesbound.harness import Moments, Record, Report, mc_reduce, run_experiment, sweep, to_csv
from cesbound.rng import stream

from pathlib import Path

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def xi_config(**kw):
    base = {"kind": "xi", "seed": 5, "samples": 20_000, "batch": 5_000,
            "generator": {"kind": "gaussian"}, "model": {"M": 3}}
    base.update(kw)
    return parse_config(base)


def by_name(report):
    return {r.name: r for r in report.records}


class TestRecord:
    def test_statistical_rule(self):
        assert Record.statistical("a", 1.0, 1.29, 0.1).passed
        assert not Record.statistical("a", 1.0, 1.31, 0.1).passed
        assert Record.statistical("a", 1.0, 1.31, 0.1).tolerance == pytest.approx(0.3)

    def test_relative_and_algebraic(self):
        assert Record.relative("r", 100.0, 100.0 + 1e-7, 1e-10).passed is False
        assert Record.relative("r", 100.0, 100.0 + 1e-7, 1e-8).passed
        assert Record.algebraic("z", 0.0, 5e-11, 1e-10).passed

    def test_non_finite_values_are_json_safe(self):
        rep = Report("xi", [Record.algebraic("inf", math.inf, math.nan, 1.0)])
        assert not rep.passed
        data = json.loads(rep.body_json())
        assert data["records"][0]["analytic"] == "inf"
        assert data["summary"] == {"total": 1, "failed": 1, "passed": False}


class TestMcReduce:
    def test_moments_merge_matches_pooled(self, rng):
        x = rng.standard_normal((1000, 2))
        merged = Moments.of(x[:300]).merge(Moments.of(x[300:]))
        np.testing.assert_allclose(merged.mean, x.mean(axis=0))
        np.testing.assert_allclose(merged.stderr, x.std(axis=0, ddof=1) / np.sqrt(1000), rtol=1e-10)

    def test_batches_cover_n_and_are_seeded(self):
        def work(rng, size):
            return Moments.of(rng.standard_normal((size, 1)))

        a = mc_reduce(10_001, 3, 1000, work, Moments.merge)
        b = mc_reduce(10_001, 3, 1000, work, Moments.merge, workers=4)
        assert a.n == 10_001
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.s2, b.s2)
        c = mc_reduce(10_001, 4, 1000, work, Moments.merge)
        assert c.mean[0] != a.mean[0]

    def test_key_separates_streams(self):
        first = mc_reduce(2000, 1, 1000, lambda rng, n: rng.random(n).sum(), lambda x, y: x + y, key=(1,))
        second = mc_reduce(2000, 1, 1000, lambda rng, n: rng.random(n).sum(), lambda x, y: x + y, key=(2,))
        assert first != second
        assert first == stream(1, 1, 0).random(1000).sum() + stream(1, 1, 1).random(1000).sum()


class TestExperiments:
    def test_gaussian_xi_rows(self):
        rep = run_experiment(xi_config())
        rows = by_name(rep)
        assert rep.passed
        assert rows["xi1 closed form"].empirical == pytest.approx(1.0, abs=1e-8)
        assert rows["xi2 closed form"].empirical == pytest.approx(1.0, abs=1e-8)
        assert rows["E[Q phi(Q)] quadrature"].empirical == pytest.approx(-3.0, abs=1e-8)
        assert rows["E[Q] quadrature"].empirical == pytest.approx(3.0, abs=1e-8)
        assert rows["E[Q] monte carlo"].analytic == 3.0

    def test_body_is_deterministic(self):
        a = run_experiment(xi_config()).body_json()
        b = run_experiment(xi_config()).body_json()
        assert a == b
        assert "wall_time" not in a

    def test_workers_do_not_change_results(self):
        serial = run_experiment(xi_config())
        threaded = run_experiment(xi_config(workers=3))
        assert serial.body_json() == threaded.body_json()

    def test_seed_changes_monte_carlo_only(self):
        a, b = by_name(run_experiment(xi_config())), by_name(run_experiment(xi_config(seed=6)))
        assert a["xi1 closed form"] == b["xi1 closed form"]
        assert a["xi1 monte carlo"].empirical != b["xi1 monte carlo"].empirical

    def test_fim_experiment(self):
        cfg = load_config(CONFIGS / "fim_student.yaml")
        cfg.samples, cfg.batch = 50_000, 25_000
        rep = run_experiment(cfg)
        names = [r.name for r in rep.records]
        assert sum(n.startswith("score mean") for n in names) == 4
        assert sum(n.startswith("fim[") for n in names) == 10
        assert rep.passed

    @pytest.mark.parametrize("name", ["scrb_circular.yaml", "scrb_noncircular.yaml"])
    def test_scrb_experiment(self, name):
        rep = run_experiment(load_config(CONFIGS / name))
        assert rep.passed
        assert rep.records[-1].name == "orthogonality residual"

    def test_numeric_failure_is_wrapped(self):
        cfg = parse_config({"kind": "scrb", "seed": 1, "model": {"M": 4, "theta": [0.2, 0.2], "xi2": 1.0}})
        from cesbound.harness import ExperimentError

        with pytest.raises(ExperimentError, match="seed 1"):
            run_experiment(cfg)

    def test_output_written(self, tmp_path):
        cfg = xi_config(output={"path": str(tmp_path / "sub" / "xi.json")})
        rep = run_experiment(cfg)
        written = json.loads((tmp_path / "sub" / "xi.json").read_text())
        assert written["summary"] == rep.summary()
        assert "wall_time" in written["metadata"]
        assert written["metadata"]["config_hash"] == cfg.digest()


class TestSweep:
    def test_snr_sweep_decreasing(self):
        res = sweep(load_config(CONFIGS / "sweep_snr.yaml"))
        assert res.axes == ["model.snr_db"]
        assert len(res.points) == 5
        bounds = [by_name(rep)["crb[theta0,theta0]"].analytic for _, rep in res.points]
        assert np.all(np.diff(bounds) < 0)
        assert res.passed

    def test_correlation_sweep(self):
        res = sweep(load_config(CONFIGS / "sweep_correlation.yaml"))
        assert [v["model.source_correlation"] for v, _ in res.points] == [0, 0.5, 0.99]
        bounds = [by_name(rep)["crb[theta0,theta0]"].analytic for _, rep in res.points]
        assert all(np.isfinite(bounds)) and min(bounds) > 0
        assert res.passed

    def test_grid_is_cartesian_and_csv(self):
        cfg = xi_config(sweep=[{"path": "model.M", "values": [1, 2]},
                               {"path": "generator.nu", "values": [5, 8]}],
                        generator={"kind": "student-t", "nu": 5})
        res = sweep(cfg)
        assert [tuple(v.values()) for v, _ in res.points] == [(1, 5), (1, 8), (2, 5), (2, 8)]
        rows = list(csv.DictReader(io.StringIO(to_csv(res.points, res.axes))))
        assert len(rows) == sum(len(rep.records) for _, rep in res.points)
        assert set(rows[0]) == {"model.M", "generator.nu", "name", "analytic", "empirical", "stderr",
                                "tolerance", "passed"}
        threaded = sweep(cfg.__class__(**{**cfg.__dict__, "workers": 3}))
        assert to_csv(threaded.points, threaded.axes) == to_csv(res.points, res.axes)

    def test_bad_grids(self):
        with pytest.raises(ConfigError):
            xi_config(sweep=[])
        with pytest.raises(ConfigError):
            xi_config(sweep=[{"path": "model.M", "values": []}])
        with pytest.raises(ConfigError):
            sweep(xi_config(sweep=[{"path": "model.nothing.0", "values": [1]}]))
        with pytest.raises(ConfigError):
            sweep(xi_config(sweep=[{"path": "seed", "values": [1]}]))
        with pytest.raises(ConfigError):
            sweep(xi_config())


class TestConfig:
    def test_error_carries_path(self):
        with pytest.raises(ConfigError) as err:
            parse_config({"kind": "xi", "seed": 1, "generator": {"kind": "student-t", "nu": -1}})
        assert "generator" in str(err.value) and "nu" in str(err.value)

    @pytest.mark.parametrize("raw", [
        {"kind": "nope", "seed": 1},
        {"kind": "xi", "seed": -1},
        {"kind": "xi", "seed": 2**64},
        {"kind": "xi", "seed": 1, "samples": 10},
        {"kind": "xi", "seed": 1, "extra": 1},
        {"kind": "xi"},
        [1, 2],
    ])
    def test_rejected(self, raw):
        with pytest.raises(ConfigError):
            parse_config(raw)

    def test_complex_formats(self):
        cfg = parse_config({"kind": "fim", "seed": 1, "model": {
            "A": [[1, "0.5j"], [[0, 0.1], "1-0.2j"]], "mu": ["1+1j", 0],
            "params": [{"target": "mu", "index": [0]}]}})
        from cesbound.config import build_ces_model

        model = build_ces_model(cfg)
        np.testing.assert_allclose(model.a, [[1, 0.5j], [0.1j, 1 - 0.2j]])
        np.testing.assert_allclose(model.mu, [1 + 1j, 0])

    def test_doa_builder_errors(self):
        from cesbound.config import build_doa_model

        with pytest.raises(ConfigError):
            build_doa_model(parse_config({"kind": "scrb", "seed": 1, "model": {"M": 4}}))
        with pytest.raises(ConfigError):
            build_doa_model(parse_config({"kind": "scrb", "seed": 1,
                                          "model": {"M": 4, "theta": [0.1], "sigma2": 1, "snr_db": 0}}))
        with pytest.raises(ConfigError):
            build_doa_model(parse_config({"kind": "scrb", "seed": 1,
                                          "model": {"M": 2, "theta": [0.1, 0.4, 0.6]}}))

    def test_digest_ignores_output(self):
        a = xi_config()
        b = xi_config(output={"path": "x.csv", "format": "csv"}, workers=4)
        assert a.digest() == b.digest()
        assert a.digest() != xi_config(seed=9).digest()

    def test_json_config(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"kind": "xi", "seed": 3, "model": {"M": 2}}))
        assert load_config(path).model == {"M": 2}
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.yaml")
        (tmp_path / "bad.yaml").write_text("kind: [unclosed")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "bad.yaml")

    def test_default_values(self):
        cfg = ExperimentConfig(kind="validate", seed=0)
        assert cfg.samples == 200_000 and cfg.output_format == "report"


def test_scatter_check_skips_structural_zeros():
    from cesbound.checks import check_ces_sampling

    names = [r.name for r in check_ces_sampling(7, 20_000, 10_000, 1)]
    assert not any(f"Sigma.im[{i},{i}]" in n for n in names for i in range(3))
    assert "sample scatter Sigma.im[0,1]" in names
