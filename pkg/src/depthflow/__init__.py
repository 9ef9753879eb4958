"""Continuous-depth model engine: hand-written networks, depth-varying
parameters, adaptive solvers, costate gradients, and a benchmark harness."""

from . import adjoint, cli, data, depth, gradcheck, models, nn, presets, solve, train
from .adjoint import (
    GradientReport,
    LossSpec,
    adaptive_depth_grad,
    adjoint_gradient,
    custom_adjoint_gradient,
    depth_bound_grad,
    forward_loss,
    generalized_adjoint_grad,
    spectral_adjoint_grad,
    stacked_adjoint_grad,
)
from .data import Dataset, make_dataset
from .depth import (
    BasisSet,
    Constant,
    DepthDomainError,
    Galerkin,
    Stacked,
    basis_eval,
    eval_theta,
    param_coefficients,
    set_param_coefficients,
)
from .models import (
    AugmentationStrategy,
    Cnf1d,
    DepthHypernet,
    NodeModel,
    apply_hx,
    cnf_logprob,
    cnf_sample,
    eval_depth,
    load_checkpoint,
    node_forward,
    save_checkpoint,
    wrap_field,
)
from .nn import (
    FieldSpec,
    ParamVector,
    ShapeError,
    init_params,
    mlp_forward,
    mlp_jvp,
    mlp_vjp,
)
from .solve import (
    DivergenceError,
    IvpProblem,
    Solution,
    StiffnessError,
    dopri5_integrate,
    rk4_integrate,
)
from .train import OptimizerState, TrainConfig, TrainHistory, loss_eval, optimizer_step, train_loop

__version__ = "0.1.0"
