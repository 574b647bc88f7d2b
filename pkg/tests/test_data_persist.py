import inspect
import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from conftest import random_dataset
from spatrf.baselines import fit_rf_with_basis_covariates, fit_smoother, fit_two_step
from spatrf.data import LocatedDataset, dataset_to_csv, load_csv, write_predictions
from spatrf.forest import ForestParams, fit_sprf_np, fit_sprf_pl
from spatrf.harness import cross_validate, r2_score
from spatrf.persist import ModelArchiveError, load_model, save_model
from spatrf.tree import TreeParams


class TestLoadCsv:
    def test_basic_shape(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x,y,z,cov1\n0,0,1.5,2\n1,0,2.5,3\n0,1,3.5,4\n")
        data = load_csv(path, ["x", "y"], "z")
        assert data.n == 3
        assert data.coords.shape == (3, 2)
        assert data.p == 1
        assert data.covariate_names == ["cov1"]
        assert_array_equal(data.Z, [1.5, 2.5, 3.5])
        assert data.ids == ["0", "1", "2"]

    def test_missing_response_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x,y,cov1\n0,0,2\n")
        with pytest.raises(ValueError, match="missing column 'z'"):
            load_csv(path, ["x", "y"], "z")

    def test_non_numeric_cell_reported(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x,y,z,cov1\n0,0,1.5,2\n1,0,oops,3\n")
        with pytest.raises(ValueError, match="row 2.*'z'"):
            load_csv(path, ["x", "y"], "z")

    def test_empty_file(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("")
        with pytest.raises(ValueError, match="empty file"):
            load_csv(path, ["x", "y"], "z")

    def test_id_column_detected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("id,x,y,z,cov1\nsiteA,0,0,1,2\nsiteB,1,0,2,3\n")
        data = load_csv(path, ["x", "y"], "z")
        assert data.ids == ["siteA", "siteB"]
        assert data.covariate_names == ["cov1"]

    def test_round_trip_preserves_values_exactly(self, rng, tmp_path):
        data = random_dataset(rng, n=20, p=3)
        path = tmp_path / "out.csv"
        dataset_to_csv(data, path)
        back = load_csv(path, data.coord_names or ["c0", "c1"], "z")
        assert_array_equal(back.coords, data.coords)
        assert_array_equal(back.X, data.X)
        assert_array_equal(back.Z, data.Z)


class TestModelArchive:
    def _data(self, rng):
        return random_dataset(rng, n=40, p=3)

    def _roundtrip(self, model, data, tmp_path):
        path = tmp_path / "model.json"
        save_model(model, path, covariate_names=data.covariate_names,
                   coord_names=data.coord_names, response_name="z", seed=1)
        loaded, meta = load_model(path)
        assert meta["column_names"]["covariates"] == data.covariate_names
        assert_array_equal(loaded.predict(data.X, data.coords),
                           model.predict(data.X, data.coords))

    def test_np_forest_round_trip(self, rng, tmp_path):
        data = self._data(rng)
        params = ForestParams(n_trees=6, tree_params=TreeParams(min_node_size=5, n_knots=4),
                              delta_grid=np.array([0.0, 0.5]), seed=2)
        model, _ = fit_sprf_np(data, params)
        self._roundtrip(model, data, tmp_path)

    def test_pl_forest_round_trip(self, rng, tmp_path):
        data = self._data(rng)
        params = ForestParams(n_trees=6, tree_params=TreeParams(min_node_size=5, n_knots=4),
                              delta_grid=np.array([0.0, 0.5]), seed=3)
        model, _ = fit_sprf_pl(data, params)
        self._roundtrip(model, data, tmp_path)

    def test_smoother_round_trip(self, rng, tmp_path):
        data = self._data(rng)
        self._roundtrip(fit_smoother(data, n_knots=5), data, tmp_path)

    def test_two_step_round_trip(self, rng, tmp_path):
        data = self._data(rng)
        params = ForestParams(n_trees=5, tree_params=TreeParams(min_node_size=5), seed=4)
        self._roundtrip(fit_two_step(data, "smoother_first", params, n_knots=5),
                        data, tmp_path)

    def test_basis_covariate_forest_round_trip(self, rng, tmp_path):
        data = self._data(rng)
        params = ForestParams(n_trees=5, tree_params=TreeParams(min_node_size=5), seed=5)
        self._roundtrip(fit_rf_with_basis_covariates(data, params, n_knots=4),
                        data, tmp_path)

    def test_truncated_file_rejected(self, rng, tmp_path):
        data = self._data(rng)
        path = tmp_path / "model.json"
        save_model(fit_smoother(data, n_knots=4), path)
        raw = path.read_text()
        path.write_text(raw[: len(raw) // 2])
        with pytest.raises(ModelArchiveError, match="corrupt"):
            load_model(path)

    def test_tampered_payload_fails_fingerprint(self, rng, tmp_path):
        data = self._data(rng)
        path = tmp_path / "model.json"
        save_model(fit_smoother(data, n_knots=4), path)
        doc = json.loads(path.read_text())
        doc["payload"]["intercept"] = doc["payload"]["intercept"] + 1.0
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelArchiveError, match="fingerprint"):
            load_model(path)

    def test_unsupported_version(self, rng, tmp_path):
        data = self._data(rng)
        path = tmp_path / "model.json"
        save_model(fit_smoother(data, n_knots=4), path)
        doc = json.loads(path.read_text())
        doc["format_version"] = 2
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelArchiveError, match="unsupported format_version 2"):
            load_model(path)


class TestWritePredictions:
    def test_order_and_count(self, tmp_path):
        path = tmp_path / "p.csv"
        write_predictions(path, ["b", "a"], [1.25, -3.5])
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "id,prediction"
        assert lines[1].startswith("b,1.25")
        assert lines[2].startswith("a,-3.5")


class _Oracle:
    """Test double that knows the generating function."""

    def __init__(self, fn):
        self.fn = fn

    def predict(self, X, locations):
        return self.fn(np.asarray(X), np.asarray(locations))


class TestCrossValidate:
    def test_perfect_oracle_scores_one(self, rng):
        data = random_dataset(rng, n=40, p=2)
        data.Z = 2.0 * data.X[:, 0] + data.coords[:, 1]
        fitter = lambda d, seed: _Oracle(lambda X, loc: 2.0 * X[:, 0] + loc[:, 1])
        scores, mean = cross_validate(data, fitter, k_folds=5, n_repeats=3, seed=0)
        assert all(s == pytest.approx(1.0) for s in scores)
        assert mean == pytest.approx(1.0)

    def test_pooled_mean_predictor_scores_zero(self, rng):
        data = random_dataset(rng, n=30)
        zbar = float(data.Z.mean())
        fitter = lambda d, seed: _Oracle(lambda X, loc: np.full(len(X), zbar))
        scores, mean = cross_validate(data, fitter, k_folds=5, n_repeats=2, seed=0)
        assert all(s == pytest.approx(0.0, abs=1e-12) for s in scores)

    def test_defaults_are_ten_by_ten(self):
        sig = inspect.signature(cross_validate)
        assert sig.parameters["k_folds"].default == 10
        assert sig.parameters["n_repeats"].default == 10

    def test_fold_partition_exact(self, rng):
        # folds from the same seeded permutation cover each index exactly once
        n = 23
        seen = np.zeros(n, dtype=int)
        gen = np.random.default_rng(np.random.SeedSequence((5, 0)))
        folds = np.array_split(gen.permutation(n), 4)
        for f in folds:
            seen[f] += 1
        assert_array_equal(seen, np.ones(n, dtype=int))

    def test_fit_failure_marks_repeat_failed(self, rng):
        data = random_dataset(rng, n=30)

        def exploding(d, seed):
            raise RuntimeError("boom")

        scores, mean = cross_validate(data, exploding, k_folds=3, n_repeats=2, seed=0)
        assert all(np.isnan(s) for s in scores)
        assert np.isnan(mean)

    def test_validation_errors(self, rng):
        data = random_dataset(rng, n=10)
        with pytest.raises(ValueError, match="k_folds"):
            cross_validate(data, lambda d, s: None, k_folds=1)
        with pytest.raises(ValueError, match="at least"):
            cross_validate(data, lambda d, s: None, k_folds=11)


class TestR2Score:
    def test_truth_predictor_is_one(self, rng):
        y = rng.normal(size=25)
        assert r2_score(y, y) == 1.0

    def test_validation_mean_predictor_is_zero(self, rng):
        y = rng.normal(size=25)
        assert r2_score(y, np.full(25, y.mean())) == pytest.approx(0.0, abs=1e-15)
