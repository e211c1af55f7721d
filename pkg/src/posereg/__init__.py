"""Nuclear-norm regularized regression for pose classification under
block occlusion: ADMM solver, dictionary classifier, synthetic data, and a
reproducible experiment harness."""

from .classify import ClassificationResult, class_residuals, classify, pick_label, reconstruct_class
from .data import (
    POSE_ANGLES,
    DatasetManifest,
    OcclusionSpec,
    TrainingDictionary,
    apply_block_occlusion,
    build_dictionary,
    class_prototypes,
    generate_synthetic_dataset,
    load_image,
    load_test_set,
    occlusion_stream_seed,
    parse_key_values,
    read_manifest,
    save_image,
    validate_pose,
    write_manifest,
)
from .errors import ConfigError, DataError, NumericalError, PoseRegError
from .harness import (
    ACCURACY_SCHEMA,
    CONFUSION_SCHEMA,
    DEFAULT_OCCLUSIONS,
    DIAGNOSE_SCHEMA,
    TIMING_SCHEMA,
    ErrorDiagnosis,
    ExperimentConfig,
    ExperimentReport,
    ReportRow,
    SyntheticSpec,
    diagnose_error,
    load_dataset,
    run_experiment,
    sweep_parameters,
    write_diagnosis_csv,
    write_gnuplot_script,
)
from .linalg import (
    SingularTriple,
    frobenius_norm,
    nuclear_norm,
    ridge_solve,
    soft_threshold,
    svd_triple,
    svt,
    unvectorize,
    vectorize,
)
from .solver import (
    LinearSystem,
    SolveResult,
    SolverConfig,
    SolverState,
    assemble_system,
    compute_g,
    objective,
    solve,
    update_E,
    update_x_l1,
    update_x_l2,
    update_Z,
)

__version__ = "0.1.0"

__all__ = [
    "ACCURACY_SCHEMA",
    "CONFUSION_SCHEMA",
    "DEFAULT_OCCLUSIONS",
    "DIAGNOSE_SCHEMA",
    "POSE_ANGLES",
    "TIMING_SCHEMA",
    "ClassificationResult",
    "ConfigError",
    "DataError",
    "DatasetManifest",
    "ErrorDiagnosis",
    "ExperimentConfig",
    "ExperimentReport",
    "LinearSystem",
    "NumericalError",
    "OcclusionSpec",
    "PoseRegError",
    "ReportRow",
    "SingularTriple",
    "SolveResult",
    "SolverConfig",
    "SolverState",
    "SyntheticSpec",
    "TrainingDictionary",
    "apply_block_occlusion",
    "assemble_system",
    "build_dictionary",
    "class_prototypes",
    "class_residuals",
    "classify",
    "compute_g",
    "diagnose_error",
    "frobenius_norm",
    "generate_synthetic_dataset",
    "load_dataset",
    "load_image",
    "load_test_set",
    "nuclear_norm",
    "objective",
    "occlusion_stream_seed",
    "parse_key_values",
    "pick_label",
    "read_manifest",
    "reconstruct_class",
    "ridge_solve",
    "run_experiment",
    "save_image",
    "soft_threshold",
    "solve",
    "svd_triple",
    "svt",
    "sweep_parameters",
    "unvectorize",
    "update_E",
    "update_Z",
    "update_x_l1",
    "update_x_l2",
    "validate_pose",
    "vectorize",
    "write_diagnosis_csv",
    "write_gnuplot_script",
    "write_manifest",
]
