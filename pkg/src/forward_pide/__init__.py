"""Forward equations for call and tranche surfaces under jump models."""

from .cdo_engine import (
    AffineIntensity,
    BetaMark,
    ConstantLGD,
    LossGrid,
    PointMark,
    PortfolioLossSpec,
    TrancheSurface,
    UniformMark,
    cont_savescu_recursion,
    mc_tranche,
    solve_tranche_forward,
)
from .estimators import ForwardPIDEPricer, MarkovianProjector, MonteCarloPricer, TrancheForwardSolver
from .grid import GridSpec
from .levy_tails import (
    DivergenceError,
    ExpDoubleTailTable,
    Kou,
    LevyMeasure,
    Merton,
    PointMasses,
    Tabulated,
    build_tail_table,
    check_integrability,
    exp_double_tail,
    lemma1_payoff_integral,
)
from .mc_oracle import (
    MCConfig,
    MCEstimate,
    MCResult,
    martingale_check,
    price_calls_mc,
    project_effective_coefficients,
    project_index,
)
from .models import (
    Basket,
    BasketJumps,
    EffectiveCoefficients,
    JumpDiffusion,
    LocalVol,
    PiecewiseConstant,
    PureJumpLocalLevy,
    RateCurve,
    SquareRootProcess,
    StateSurface,
    StochVolJump,
    TimeChangedLevy,
    effective_coefficients,
    model_from_dict,
    model_to_dict,
    suggest_grid,
    validate_model,
)
from .pide_engine import (
    CallSurface,
    StepSizeError,
    apply_jump_operator,
    price_surface,
    solve_forward,
    validate_surface,
)

__version__ = "0.1.0"

__all__ = [
    "AffineIntensity",
    "Basket",
    "BasketJumps",
    "BetaMark",
    "CallSurface",
    "ConstantLGD",
    "DivergenceError",
    "EffectiveCoefficients",
    "ExpDoubleTailTable",
    "ForwardPIDEPricer",
    "GridSpec",
    "JumpDiffusion",
    "Kou",
    "LevyMeasure",
    "LocalVol",
    "LossGrid",
    "MCConfig",
    "MCEstimate",
    "MCResult",
    "MarkovianProjector",
    "Merton",
    "MonteCarloPricer",
    "PiecewiseConstant",
    "PointMark",
    "PointMasses",
    "PortfolioLossSpec",
    "PureJumpLocalLevy",
    "RateCurve",
    "SquareRootProcess",
    "StateSurface",
    "StepSizeError",
    "StochVolJump",
    "Tabulated",
    "TimeChangedLevy",
    "TrancheForwardSolver",
    "TrancheSurface",
    "UniformMark",
    "apply_jump_operator",
    "build_tail_table",
    "check_integrability",
    "cont_savescu_recursion",
    "effective_coefficients",
    "exp_double_tail",
    "lemma1_payoff_integral",
    "martingale_check",
    "mc_tranche",
    "model_from_dict",
    "model_to_dict",
    "price_calls_mc",
    "price_surface",
    "project_effective_coefficients",
    "project_index",
    "solve_forward",
    "solve_tranche_forward",
    "suggest_grid",
    "validate_model",
    "validate_surface",
]
