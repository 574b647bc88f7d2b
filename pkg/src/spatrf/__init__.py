"""Random spatial forests: bagged regression trees whose splits are chosen
under a spatial-correlation-adjusted generalized least squares loss."""

from .baselines import (SmootherModel, TwoStepModel, fit_rf_with_basis_covariates,
                        fit_smoother, fit_two_step)
from .data import LocatedDataset, load_csv
from .forest import (DeltaProfile, ForestParams, SpatialForest, default_delta_grid,
                     fit_fixed_delta, fit_sprf_np, fit_sprf_pl, oob_predict,
                     predict_forest, pseudo_log_likelihood)
from .geometry import (DenseCovariance, KnotSet, LowRankCorrelation, SpatialBasis,
                       build_basis, evaluate_basis_at, exponential_covariance,
                       low_rank_inverse_apply, low_rank_log_det, sample_gp,
                       select_knots)
from .gls import (CharacteristicMatrix, SplitIndicator, brute_force_gls_loss,
                  incremental_gain_scan, init_characteristic, update_characteristic)
from .harness import METHODS, cross_validate, make_fitter, r2_score
from .persist import ModelArchiveError, load_model, save_model
from .simulation import (ExperimentResult, GeneratedSurface, SurfaceSpec,
                         generate_surface, run_experiment, sample_train_validate)
from .tree import SpatialTree, SplitRecord, TreeParams, fit_tree, predict_tree, tree_blup

__version__ = "0.1.0"
