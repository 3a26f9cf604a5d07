"""Normalized axes-aligned Gaussian splatting for physics-informed
super-resolution of scalar and vector fields."""

__version__ = "0.1.0"

from .kernels import BACKEND
from .field import (
    AxesGaussian, FieldError, GaussianField, InitSpec, init_from_grid, load_field, new_field,
    save_field,
)
from .splatting import (
    field_from_points, influence, influence_matrix, nadaraya_watson, predict,
    predict_unnormalized, weights,
)
from .calculus import laplacian, loss_param_gradient, spatial_jacobian, spatial_second_diag
from .physics import (
    LayoutError, NonFiniteLoss, PdeSpec, burgers_residual, data_loss, ns_residual, pde_loss,
    residuals, total_loss,
)
from .density import DensifyConfig, connected_components, densify, gaussian_errors, merge, select_densify
from .training import AdamState, TrainConfig, TrainReport, adam_step, train
from .data import (
    DatasetError, FieldDataset, Layout, generate_rosenbrock, generate_taylor_green, grid_subsample,
    load_dataset, metrics_record, nondimensionalize, relative_l2, rmse, save_dataset, spatial_average,
)
from .burgers import OracleMismatch, cole_hopf, finite_difference, generate_burgers
from .theory import RateExperiment, run_rate_experiment, run_unnormalized_decay_demo

__all__ = [name for name in dir() if not name.startswith("_")]
