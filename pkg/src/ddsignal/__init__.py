"""Level vs log difference-in-differences: estimation, sign-switch diagnostics and Monte Carlo."""

__version__ = "0.1.0"

from .data import (  # noqa: E402
    ColumnMapping,
    DDCellMeans,
    OutcomeTransform,
    PanelDataset,
    PanelObservation,
    cell_means,
    ingest_csv,
)
from .diagnostics import (  # noqa: E402
    Observed,
    Prediction,
    SignSwitchReport,
    crossing_point,
    diagnose_from_cells,
    diagnose_from_fits,
    observed_relation,
)
from .estimators import (  # noqa: E402
    DDEstimator,
    DDFit,
    GrowthDecomposition,
    OutcomeTransformer,
    balance_table,
    dd_from_cells,
    delta_method,
    estimate_dd,
)
from .ols import (  # noqa: E402
    DesignSpec,
    FitResult,
    RobustOLS,
    WithinTransformer,
    fit_ols,
    linear_combination_se,
    within_transform,
)
from .simulation import (  # noqa: E402
    SimConfig,
    SweepConfig,
    generate_run,
    run_monte_carlo,
    run_single,
    run_sweep,
    sweep_preset,
    table_preset,
)

__all__ = [
    "ColumnMapping", "DDCellMeans", "OutcomeTransform", "PanelDataset", "PanelObservation", "cell_means",
    "ingest_csv", "Observed", "Prediction", "SignSwitchReport", "crossing_point", "diagnose_from_cells",
    "diagnose_from_fits", "observed_relation", "DDEstimator", "DDFit", "GrowthDecomposition", "OutcomeTransformer", "balance_table",
    "dd_from_cells", "delta_method", "estimate_dd", "DesignSpec", "FitResult", "RobustOLS", "WithinTransformer",
    "fit_ols", "linear_combination_se", "within_transform", "SimConfig", "SweepConfig", "generate_run",
    "run_monte_carlo", "run_single", "run_sweep", "sweep_preset", "table_preset",
]
