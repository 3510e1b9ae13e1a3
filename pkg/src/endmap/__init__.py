"""End-point maps, extremal shooting, and value-function level sets for
analytic affine control systems with quadratic cost."""

from .dynamics import (
    AffineSystem,
    ControlGrid,
    ExplosionGuard,
    Trajectory,
    VariationalFrame,
    cost,
    cost_gradient,
    endpoint,
    integrate,
    variational_jacobian,
)
from .extremal import (
    ConeReport,
    ExtremalArc,
    MultiplierSolution,
    ShootResult,
    ShootSolution,
    conjugate_scan,
    exp_map,
    kalman_regularity,
    lagrange_multipliers,
    normal_flow,
    phi,
    pontryagin_cone,
    shoot,
)
from .systems import (
    BUILTIN_NAMES,
    AnalyticityWarning,
    SystemDefinition,
    SystemFormatError,
    builtin,
    load_definition,
    load_system,
    make_system,
)
from .value import (
    DirectResult,
    LevelPoint,
    LevelSetCloud,
    PropernessScan,
    ScanRow,
    TangencyReport,
    TangencyWindow,
    ValueResult,
    direct_minimize,
    level_set_sample,
    properness_scan,
    tangency_fit,
    value_at,
)
from .vfexpr import (
    EvalDomainError,
    ExprVectorField,
    FieldJet,
    ParseError,
    VectorFieldExpr,
    ad,
    eval_jet,
    lie_bracket,
    make_field,
    parse_field,
)

__version__ = "0.1.0"

__all__ = [
    "AffineSystem",
    "AnalyticityWarning",
    "BUILTIN_NAMES",
    "ConeReport",
    "ControlGrid",
    "DirectResult",
    "EvalDomainError",
    "ExplosionGuard",
    "ExprVectorField",
    "ExtremalArc",
    "FieldJet",
    "LevelPoint",
    "LevelSetCloud",
    "MultiplierSolution",
    "ParseError",
    "PropernessScan",
    "ScanRow",
    "ShootResult",
    "ShootSolution",
    "SystemDefinition",
    "SystemFormatError",
    "TangencyReport",
    "TangencyWindow",
    "Trajectory",
    "ValueResult",
    "VariationalFrame",
    "VectorFieldExpr",
    "ad",
    "builtin",
    "conjugate_scan",
    "cost",
    "cost_gradient",
    "direct_minimize",
    "endpoint",
    "eval_jet",
    "exp_map",
    "integrate",
    "kalman_regularity",
    "lagrange_multipliers",
    "level_set_sample",
    "lie_bracket",
    "load_definition",
    "load_system",
    "make_field",
    "make_system",
    "normal_flow",
    "parse_field",
    "phi",
    "pontryagin_cone",
    "properness_scan",
    "shoot",
    "tangency_fit",
    "value_at",
    "variational_jacobian",
]
