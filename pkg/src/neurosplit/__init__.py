"""Splitting physics-informed neural networks for neuron models."""

from __future__ import annotations

from .fracl1 import L1Memory, caputo_analytic_power, l1_apply, l1_coeffs, split_fohh_march
from .harness import (
    ErrorReport,
    ExperimentConfig,
    emit_plot,
    preset,
    relative_l2_error,
    run_experiment,
)
from .models import (
    CurrentSource,
    FractionalOrders,
    HhParams,
    IzhikevichParams,
    LifParams,
    ModelSpec,
    hh_model,
    izhikevich_model,
    lif_model,
)
from .net import Architecture, DivergenceError
from .pinn import TrainConfig, march_pinn, train_subproblem
from .refsolve import solve_model
from .splitting import MarchConfig, SplitScheme, split_hh, split_izhikevich, split_march
from .trajectory import Trajectory, read_csv, write_csv

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "CurrentSource",
    "DivergenceError",
    "ErrorReport",
    "ExperimentConfig",
    "FractionalOrders",
    "HhParams",
    "IzhikevichParams",
    "L1Memory",
    "LifParams",
    "MarchConfig",
    "ModelSpec",
    "SplitScheme",
    "TrainConfig",
    "Trajectory",
    "caputo_analytic_power",
    "emit_plot",
    "hh_model",
    "izhikevich_model",
    "l1_apply",
    "l1_coeffs",
    "lif_model",
    "march_pinn",
    "preset",
    "read_csv",
    "relative_l2_error",
    "run_experiment",
    "solve_model",
    "split_fohh_march",
    "split_hh",
    "split_izhikevich",
    "split_march",
    "train_subproblem",
    "write_csv",
]
