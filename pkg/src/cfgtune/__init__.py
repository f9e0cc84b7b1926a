"""Black-box tuning of batch-platform configuration parameters for job execution time."""

from .cmpe import (
    CostModel,
    PlatformProfile,
    Trial,
    TrialRunner,
    command_evaluator,
    replay_evaluator,
    synthetic_evaluator,
)
from .crs import Bounds, CrsOptions, contract_bounds, controlled_random_search, random_round, variation
from .grid import GridOptions, build_grid, enumerate_grid, finer_window, grid_search, tune_grid_finer
from .params import (
    Configuration,
    ParameterSpace,
    ParameterSpec,
    preset_hadoop,
    preset_spark,
    random_value,
    render_value,
    sample_values,
    validate,
)
from .result import NoIncumbent, TunerResult

__version__ = "0.1.0"
