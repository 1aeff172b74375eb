//! Randomization designs, exposure mappings, counterfactual assignments and
//! likelihood-ratio weights.

mod counterfactual;
mod design;
mod diagnostics;
mod exposure;

pub use counterfactual::{
    likelihood_ratio_weight, rao_blackwell_weight, CounterfactualMode, LocalCounterfactual,
};
pub use design::{
    all_assignments, local_pattern, set_pattern, Assignment, Bernoulli, Design, TwoStage,
    SATURATION_PROFILE_CAP,
};
pub use diagnostics::{design_diagnostics, DesignDiagnostics, UnitDiagnostics, INFLUENCE_CAP};
pub use exposure::{
    fraction_target, ExposureCell, ExposureKind, ExposureSpec, LOCAL_ENUMERATION_CAP,
};
