//! Spectral total-variation decomposition toolkit.
//!
//! Images are decomposed by an implicit TV gradient flow into multiscale
//! spectral components; per-pixel scale signatures feed a band ensemble of
//! decision trees whose scores are aggregated from pixels up to patients.

pub mod container;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod image;
pub mod phantom;
pub mod spectral;
pub mod tvflow;

pub use error::{Result, StvError};
pub use dataset::{Label3, Manifest, MaskOffsets, PatchRecord};
pub use ensemble::{BandConfig, EnsembleConfig, EnsembleModel, Mode};
pub use eval::{CvConfig, CvResult, FeatureSet, RocCurve};
pub use image::GrayImage;
pub use spectral::{
    decompose, enhance_signatures, extract_signatures, reconstruct, spectrum, stv_filter, stv_transform,
    SignatureField, SpectralStack, Spectrum, TransferFunction,
};
pub use tvflow::{rof_prox, tv_energy, tv_flow, Boundary, FlowConfig, ScaleSpace};
