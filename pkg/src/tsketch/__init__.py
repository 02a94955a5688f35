"""One-pass sketching and recovery of low Tucker-rank tensor factorizations.

The pipeline: describe the measurement operators with a `SketchPlan`, push the
tensor (whole or in last-mode slabs) through `sketch` / `SketchAccumulator`,
then call `one_pass` (or `two_pass`, given a second look at the data) to get a
`TuckerFactorization` back. Everything downstream of the plan is deterministic
in the plan's seed.
"""

from .ensembles import (
    FAMILIES,
    DistortionStats,
    EnsembleSpec,
    derive_seed,
    jl_distortion,
    keyed_generator,
    materialize,
)
from .errors import (
    ConfigError,
    IOFormatError,
    RankError,
    ShapeError,
    SingularError,
    TsketchError,
)
from .evaluate import (
    ErrorReport,
    add_noise_snr,
    bound_rhs,
    gen_lowrank,
    gen_superdiag_exp,
    gen_superdiag_poly,
    hosvd_truncate,
    max_principal_angle,
    relative_error,
    snr_db,
    tail_baseline,
    tail_energy,
)
from .formats import (
    read_bundle,
    read_chunks,
    read_factorization,
    read_tensor,
    write_bundle,
    write_chunks,
    write_factorization,
    write_tensor,
)
from .recover import (
    TuckerFactorization,
    compute_core_twopass,
    one_pass,
    reconstruct,
    recover_core_onepass,
    recover_core_recycled,
    recover_factors,
    two_pass,
)
from .sketch import (
    LOO_KINDS,
    SketchAccumulator,
    SketchBundle,
    SketchPlan,
    SlabChunk,
    accumulator_finalize,
    accumulator_init,
    accumulator_merge,
    accumulator_update,
    core_sketch,
    khat_loo_sketch,
    kron_loo_sketch,
    make_plan,
    sketch,
    slab_chunks,
    unstructured_loo_sketch,
)
from .tensor import (
    face_split,
    fold,
    inner,
    khatri_rao,
    kron,
    mode_product,
    multi_mode_product,
    norm,
    unfold,
    vec,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DistortionStats",
    "EnsembleSpec",
    "ErrorReport",
    "FAMILIES",
    "IOFormatError",
    "LOO_KINDS",
    "RankError",
    "ShapeError",
    "SingularError",
    "SketchAccumulator",
    "SketchBundle",
    "SketchPlan",
    "SlabChunk",
    "TsketchError",
    "TuckerFactorization",
    "accumulator_finalize",
    "accumulator_init",
    "accumulator_merge",
    "accumulator_update",
    "add_noise_snr",
    "bound_rhs",
    "compute_core_twopass",
    "core_sketch",
    "derive_seed",
    "face_split",
    "fold",
    "gen_lowrank",
    "gen_superdiag_exp",
    "gen_superdiag_poly",
    "hosvd_truncate",
    "inner",
    "jl_distortion",
    "keyed_generator",
    "khat_loo_sketch",
    "khatri_rao",
    "kron",
    "kron_loo_sketch",
    "make_plan",
    "materialize",
    "max_principal_angle",
    "mode_product",
    "multi_mode_product",
    "norm",
    "one_pass",
    "read_bundle",
    "read_chunks",
    "read_factorization",
    "read_tensor",
    "reconstruct",
    "recover_core_onepass",
    "recover_core_recycled",
    "recover_factors",
    "relative_error",
    "sketch",
    "slab_chunks",
    "snr_db",
    "tail_baseline",
    "tail_energy",
    "two_pass",
    "unfold",
    "unstructured_loo_sketch",
    "vec",
    "write_bundle",
    "write_chunks",
    "write_factorization",
    "write_tensor",
]
