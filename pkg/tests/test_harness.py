import json
from dataclasses import replace

import numpy as np
import pytest

from entity_embedding.errors import ConfigError, StepError
from entity_embedding.services.harness import (
    AnalysisConfig,
    AnalysisFlag,
    BenchmarkConfig,
    EmbeddingSource,
    ForestSettings,
    GbtSettings,
    Method,
    export_embeddings,
    load_data,
    render_table,
    run_analysis,
    run_benchmark,
    select_embeddings,
    train_networks,
    write_report,
)
from entity_embedding.services.knn import KnnConfig
from entity_embedding.services.net import TrainConfig
from entity_embedding.services.synthetic import SyntheticConfig, generate_synthetic
from entity_embedding.services.tabular import Dataset, SplitMode, split
from entity_embedding.services.tsne import TsneConfig
from entity_embedding.toolkit import get_default_config
from entity_embedding.utils.serialization import read_embeddings, save_dataset

TINY_DATA = SyntheticConfig(n_stores=20, n_rows=1500, n_days=120, n_states=4, seed=3)
TINY_NET = TrainConfig(epochs=2, batch_size=64, ensemble_size=2, hidden_sizes=(16, 8), seed=0)


def tiny_benchmark(**overrides) -> BenchmarkConfig:
    cfg = BenchmarkConfig(
        test_fraction=0.1,
        sparsify=None,
        methods=tuple(Method),
        net=TINY_NET,
        knn=KnnConfig(n_neighbors=5),
        forest=ForestSettings(n_trees=5, max_depth=6),
        gbt=GbtSettings(rounds=20, shrinkage=0.1, max_depth=3),
    )
    return replace(cfg, **overrides)


@pytest.fixture(scope="module")
def tiny_data():
    return generate_synthetic(TINY_DATA)


@pytest.fixture(scope="module")
def tiny_report(tiny_data):
    data, truth = tiny_data
    return run_benchmark(tiny_benchmark(), data, truth)


@pytest.fixture(scope="module")
def tiny_networks(tiny_data):
    data, _ = tiny_data
    train, _ = split(data, SplitMode.SHUFFLED, 0.1, seed=0)
    networks, _ = train_networks(TINY_NET, train)
    return networks


class TestBenchmarkConfig:
    def test_from_default_config(self):
        cfg = BenchmarkConfig.from_config(get_default_config())
        assert cfg.methods == (Method.KNN, Method.RANDOM_FOREST, Method.GBT, Method.NN)
        assert cfg.net.hidden_sizes == (1000, 500)
        assert cfg.gbt.rounds == 3000

    def test_nested_section_rejected(self):
        config = get_default_config()
        config["benchmark"]["knn"] = {"n_neighbors": 3}
        with pytest.raises(ConfigError):
            BenchmarkConfig.from_config(config)

    @pytest.mark.parametrize("overrides", [
        {"methods": ()},
        {"methods": ("knn", "knn")},
        {"with_embeddings": False, "without_embeddings": False},
        {"sparsify": 0},
        {"methods": ("svm",)},
    ])
    def test_invalid(self, overrides):
        with pytest.raises((ConfigError, ValueError)):
            BenchmarkConfig(**overrides)

    def test_unknown_forest_setting(self):
        with pytest.raises(ConfigError):
            ForestSettings.from_mapping({"criterion": "mse"})


class TestRunBenchmark:
    def test_one_result_per_method_and_representation(self, tiny_report):
        pairs = [(r.method, r.with_embeddings) for r in tiny_report.results]
        assert len(pairs) == 9
        assert ("nn_extra_dense", False) in pairs
        assert ("nn_extra_dense", True) not in pairs
        for r in tiny_report.results:
            assert np.isfinite(r.mape) and r.mape >= 0.0
            assert r.split_mode is SplitMode.SHUFFLED

    def test_row_counts(self, tiny_report):
        assert tiny_report.n_test == 150
        assert tiny_report.n_train == 1350
        assert tiny_report.bayes_floor == pytest.approx(0.1195, abs=0.002)

    def test_get(self, tiny_report):
        assert tiny_report.get("knn", True).method == "knn"
        with pytest.raises(KeyError):
            tiny_report.get(Method.NN_EXTRA_DENSE, True)

    def test_report_sections(self, tiny_report):
        payload = tiny_report.to_dict()
        assert set(payload) == {"report", "run"}
        assert all("runtime_s" not in r for r in payload["report"]["results"])
        assert "nn/ee" in payload["run"]["runtimes_s"]
        assert payload["report"]["config"]["knn"]["n_neighbors"] == 5
        assert tiny_report.version.startswith("1.0.0+")

    def test_table(self, tiny_report):
        table = render_table(tiny_report)
        lines = table.splitlines()
        assert lines[0].split() == ["method", "without", "EE", "with", "EE"]
        extra = next(line for line in lines if line.startswith("nn_extra_dense"))
        assert extra.split()[-1] == "-"
        assert "Bayes MAPE floor" in table

    def test_write_report(self, tiny_report, tmp_path):
        json_path, text_path = write_report(tiny_report, tmp_path / "bench")
        payload = json.loads(json_path.read_text(encoding="utf-8"))
        assert len(payload["report"]["results"]) == 9
        assert text_path.read_text(encoding="utf-8") == render_table(tiny_report)

    def test_deterministic_report(self, tiny_data):
        data, truth = tiny_data
        cfg = tiny_benchmark(methods=(Method.KNN, Method.GBT))
        first = run_benchmark(cfg, data, truth).to_dict()["report"]
        second = run_benchmark(cfg, data, truth).to_dict()["report"]
        assert first == second

    def test_native_only(self, tiny_data):
        data, _ = tiny_data
        report = run_benchmark(tiny_benchmark(methods=(Method.KNN,), with_embeddings=False), data)
        assert [(r.method, r.with_embeddings) for r in report.results] == [("knn", False)]
        assert report.bayes_floor is None

    def test_failing_step_is_named(self, tiny_data):
        data, _ = tiny_data
        with pytest.raises(StepError) as info:
            run_benchmark(tiny_benchmark(test_fraction=1.5), data)
        assert info.value.step == "split"

    def test_progress_messages(self, tiny_data):
        data, _ = tiny_data
        messages = []
        run_benchmark(tiny_benchmark(methods=(Method.KNN,), with_embeddings=False), data,
                      progress_callback=messages.append)
        assert messages[0] == "split..."
        assert messages[-1] == "Benchmark finished."


class TestAnalysis:
    def test_all_flags(self, tiny_data, tiny_networks, tmp_path):
        data, truth = tiny_data
        cfg = AnalysisConfig(
            flags=tuple(AnalysisFlag),
            tsne_features=("store",),
            metric_samples=20,
            scatter_pairs=50,
            tsne=TsneConfig(iterations=60),
        )
        result = run_analysis(tiny_networks, data, cfg, tmp_path, truth)
        names = {p.name for p in result.files}
        assert {"tsne_store.csv", "tsne_store.svg", "scatter_store.csv", "scatter_store.svg",
                "pc_density_store.csv", "pc_sales_store.csv", "summary.json"} <= names
        summary = json.loads((tmp_path / "summary.json").read_text(encoding="utf-8"))
        for key in ("tsne", "scatter", "schoenberg", "pc_density", "pc_sales", "cross_corr", "mardia",
                    "latent_alignment", "date_range", "features"):
            assert key in summary
        assert summary["scatter"]["pairs"] == 50
        assert len(summary["schoenberg"]["checks"]) == 3
        assert set(summary["pc_sales"]) == {"pc1", "random1", "random2"}
        assert summary["features"]["store"]["cardinality"] == 20

    def test_no_flags_writes_summary_only(self, tiny_data, tiny_networks, tmp_path):
        data, _ = tiny_data
        result = run_analysis(tiny_networks, data, AnalysisConfig(), tmp_path)
        assert [p.name for p in result.files] == ["summary.json"]
        assert "latent_alignment" not in result.summary

    def test_failing_analysis_is_named(self, tiny_data, tiny_networks, tmp_path):
        data, _ = tiny_data
        # four state values are too few for the default perplexity
        cfg = AnalysisConfig(flags=("tsne",), tsne_features=("state",))
        with pytest.raises(StepError) as info:
            run_analysis(tiny_networks, data, cfg, tmp_path)
        assert info.value.step == "tsne"

    def test_from_config(self):
        config = get_default_config()
        config["analysis"]["flags"] = ["schoenberg"]
        config["geometry"]["tsne"]["iterations"] = 10
        cfg = AnalysisConfig.from_config(config)
        assert cfg.flags == (AnalysisFlag.SCHOENBERG,)
        assert cfg.tsne.iterations == 10
        assert cfg.lambdas == (0.1, 1.0, 10.0)

    def test_unknown_analysis_setting(self):
        config = get_default_config()
        config["analysis"]["colour"] = "red"
        with pytest.raises(ConfigError):
            AnalysisConfig.from_config(config)


class TestEmbeddingsExport:
    def test_round_trip(self, tiny_networks, tmp_path):
        written = export_embeddings(tiny_networks, tmp_path)
        assert len(written) == 7
        loaded = read_embeddings(tmp_path)
        for original, restored in zip(select_embeddings(tiny_networks, "first"), loaded):
            assert restored.name == original.name
            assert restored.labels == original.labels
            np.testing.assert_array_equal(restored.weights, original.weights)

    def test_average_source(self, tiny_networks):
        averaged = select_embeddings(tiny_networks, EmbeddingSource.AVERAGE)
        expected = (tiny_networks[0].params["embedding_0"] + tiny_networks[1].params["embedding_0"]) / 2.0
        np.testing.assert_allclose(averaged[0].weights, expected)


class TestTestSplitIsolation:
    @pytest.mark.parametrize("mode", list(SplitMode))
    def test_test_targets_do_not_reach_training(self, tiny_data, mode):
        data, _ = tiny_data
        row_ids = Dataset(data.schema, data.x, np.arange(1.0, len(data) + 1.0), data.dates)
        _, test_rows = split(row_ids, mode, 0.1, seed=0)
        test_idx = test_rows.y.astype(np.int64) - 1
        y = data.y.copy()
        y[test_idx] = y[np.random.default_rng(4).permutation(test_idx)]
        shuffled = Dataset(data.schema, data.x, y, data.dates)

        net_cfg = replace(TINY_NET, ensemble_size=1)
        train_a, test_a = split(data, mode, 0.1, seed=0)
        train_b, test_b = split(shuffled, mode, 0.1, seed=0)
        assert not np.array_equal(test_a.y, test_b.y)
        networks_a, _ = train_networks(net_cfg, train_a)
        networks_b, _ = train_networks(net_cfg, train_b)
        for a, b in zip(select_embeddings(networks_a, EmbeddingSource.FIRST),
                        select_embeddings(networks_b, EmbeddingSource.FIRST)):
            np.testing.assert_array_equal(a.weights, b.weights)


class TestLoadData:
    def test_synthetic_by_default(self):
        config = get_default_config()
        config["synthetic"].update(n_stores=5, n_rows=200, n_days=60, n_states=2)
        data, truth = load_data(None, config)
        assert len(data) == 200
        assert truth is not None

    def test_csv_source(self, toy_csv):
        data, truth = load_data(toy_csv, get_default_config())
        assert len(data) == 240
        assert truth is None

    def test_cached_dataset(self, toy_dataset, tmp_path):
        path = save_dataset(toy_dataset, tmp_path / "dataset.npz")
        data, _ = load_data(str(path), get_default_config())
        np.testing.assert_array_equal(data.x, toy_dataset.x)

    def test_missing_csv(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_data(tmp_path / "absent.csv", get_default_config())


@pytest.mark.slow
class TestDeskScaleBenchmark:
    """Full-size synthetic comparison with a reduced network and reduced tree ensembles."""

    @pytest.fixture(scope="class")
    def desk(self):
        data, truth = generate_synthetic(SyntheticConfig(n_rows=50000, n_stores=100, noise_sigma=0.15, seed=0))
        net = TrainConfig(epochs=10, batch_size=128, ensemble_size=3, hidden_sizes=(256, 128), seed=0)
        cfg = BenchmarkConfig(
            sparsify=None,
            methods=(Method.KNN, Method.RANDOM_FOREST, Method.GBT, Method.NN),
            net=net,
            forest=ForestSettings(n_trees=20, max_depth=20),
            gbt=GbtSettings(rounds=300, shrinkage=0.05, max_depth=6),
        )
        return data, truth, cfg

    def test_embeddings_help_every_baseline(self, desk):
        data, truth, cfg = desk
        report = run_benchmark(cfg, data, truth)
        for method in (Method.KNN, Method.RANDOM_FOREST, Method.GBT):
            assert report.get(method, True).mape <= report.get(method, False).mape
        assert report.get(Method.NN, True).mape <= 1.3 * truth.bayes_floor

    def test_temporal_split_favours_embeddings(self, desk):
        data, truth, cfg = desk
        report = run_benchmark(replace(cfg, split_mode=SplitMode.TEMPORAL, methods=(Method.NN,)), data, truth)
        assert report.get(Method.NN, True).mape <= report.get(Method.NN, False).mape


@pytest.mark.slow
def test_store_embedding_recovers_latent_plane(tmp_path):
    data, truth = generate_synthetic(SyntheticConfig(n_rows=50000, n_stores=100, seed=1))
    train, _ = split(data, SplitMode.SHUFFLED, 0.1, seed=0)
    networks, _ = train_networks(TrainConfig(epochs=10, ensemble_size=1, hidden_sizes=(256, 128), seed=0), train)
    result = run_analysis(networks, data, AnalysisConfig(), tmp_path, truth)
    assert result.summary["latent_alignment"]["correlation"] > 0.8
