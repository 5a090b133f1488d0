"""Boosted regression trees with explanations and a synthetic CDS generator."""

__version__ = "0.1.0"

from .data import (  # noqa: F401
    FoldPlan,
    Table,
    kfold_split,
    load_csv,
    summarize,
    train_test_split,
    write_csv,
)
from .gbt import (  # noqa: F401
    Ensemble,
    RegressionTree,
    TrainConfig,
    TrainTrace,
    best_split,
    deserialize_model,
    rmse,
    serialize_model,
    train,
)
from .synthgen import (  # noqa: F401
    IntensityModel,
    PanelSpec,
    SurvivalCurve,
    forward_intensity,
    generate_panel,
    spread_from_intensity,
    survival_probability,
)
from .tune import (  # noqa: F401
    Grid,
    Leaderboard,
    TrialResult,
    enumerate_grid,
    run_search,
    select_best,
)
