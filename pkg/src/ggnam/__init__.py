"""Generalized additive neural models with linear terms, individual nonlinear
terms and locally interacting nonlinear groups, plus the search that finds
which feature plays which role."""

from .additive import (
    GgnamModel,
    Hyperparams,
    PartitionSpec,
    fit,
    make_partition,
    preset_partition,
    shape_function,
)
from .data import PreparedData, Scaler, SplitSpec, TabularDataset, load_csv, prepare
from .metrics import auc, integrated_hessian, joint_marginal_matrix, rmse
from .nn import DenseNet, LayerSpec, LossSpec, init_network
from .structure import (
    fit_ggnam_pipeline,
    forward_stepwise_select,
    group_nonlinear,
    separability_matrix,
)

__version__ = "0.1.0"
