from .analysis import FundamentalDiagram, fundamental_diagram, lane_change_frequency
from .edie import EdieRegion, MeasurementRecord, edie_measures, edie_table
from .equilibrium import InsufficientDataError, NeCriteria, ParetoVerdict, detect_equilibrium, pareto_check
from .spatial import (
    PlatoonBenefit,
    PlatoonPolicy,
    SpatialGrid,
    build_spatial_distribution,
    hellinger_1d,
    hellinger_2d,
    platoon_benefit,
    platoon_partition,
    spatial_distribution,
    spatial_metric,
    spatial_series,
)

__all__ = [
    "EdieRegion", "MeasurementRecord", "edie_measures", "edie_table",
    "NeCriteria", "InsufficientDataError", "detect_equilibrium", "ParetoVerdict", "pareto_check",
    "PlatoonPolicy", "PlatoonBenefit", "platoon_partition", "platoon_benefit",
    "hellinger_1d", "hellinger_2d", "SpatialGrid", "build_spatial_distribution", "spatial_distribution",
    "spatial_metric", "spatial_series", "lane_change_frequency", "fundamental_diagram", "FundamentalDiagram",
]
