"""Dimensional analysis and level-curve inversion for eddy-current plate testing."""

from .dimensions import (
    DimensionalSystem,
    DimensionVector,
    PiGroup,
    Presentation,
    QuantitySpec,
    check_repeating_set,
    derive_pi_groups,
    ect_system,
    evaluate_pi_group,
    rlc_system,
)
from .errors import (
    ArityError,
    DimectError,
    DomainError,
    EstimationInfeasibleError,
    InputError,
    NumericalError,
)
from .forward import (
    DEFAULT_PROBE,
    FGrid,
    PlateSpec,
    ProbeGeometry,
    coil_radial_integral,
    compute_f_grid,
    mutual_impedance_delta,
    skin_depth,
    to_pi1,
)
from .inversion import (
    EstimateRecord,
    IntersectionPoint,
    LevelCurve,
    RegionLabel,
    classify_region,
    estimate_single_frequency,
    extract_level_curve,
    fuse_multi_frequency,
    intersect_curves,
    map_curve_to_physical,
)
from .pipeline import (
    CalibrationTable,
    MeasurementRecord,
    MeritReport,
    NoiseModel,
    ProcedureConfig,
    apply_calibration,
    fit_calibration,
    run_procedure,
    synthesize_measurements,
)

__version__ = "0.1.0"
