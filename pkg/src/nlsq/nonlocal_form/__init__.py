"""Non-local forms, reversible jump chains and the windowed local limit."""

from .form import (
    ConditionalDensity,
    ConditionalEngine,
    CylinderFunction,
    FormEstimate,
    InnerRule,
    conditional_density,
    constant,
    coordinate,
    cylinder_panel,
    form_value,
    linear_combination,
    phi_alpha,
    unit_contraction,
)
from .chain import (
    ChainResult,
    InvarianceRow,
    JumpChainConfig,
    detailed_balance_residual,
    importance_resample,
    invariance_report,
    proposal_density,
    sample_jump_radius,
    simulate_chain,
    trajectory_csv,
)
from .local_limit import (
    GaussianDensity1D,
    ScanRow,
    Smooth1D,
    WindowRule,
    errors_decrease,
    gaussian_bump,
    local_limit_oracle,
    local_limit_scan,
    scan_csv,
    window_global,
    window_local,
    windowed_form_1d,
)
