//! Spatial harmonization: electrode-template interpolation, Euclidean
//! alignment, and the CSP+LDA classifier used for subject screening and as a
//! baseline.

mod align;
mod csp;
mod linalg;
mod screen;
mod template;

pub use align::{ea_reference, ea_whiten, mean_covariance, AlignReference};
pub use csp::{csp_fit, csp_lda_fit, generalized_eigen, CspLdaModel};
pub use linalg::{sym_eigen, sym_inv_sqrt};
pub use screen::{
    cross_val_accuracy, screen_subjects, ScreeningResult, DEFAULT_CSP_PAIRS, DEFAULT_FOLDS,
    DEFAULT_THRESHOLD,
};
pub use template::{
    apply_template, electrode_distances, interp_weights, TemplateSpec, TemplateWeights,
    TEMPLATE_ELECTRODES,
};
