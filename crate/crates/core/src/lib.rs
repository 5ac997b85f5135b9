//! Sea-ice segmentation from co-registered multispectral (MSI) and radar
//! (SAR) imagery.
//!
//! The modules follow the pipeline: [`raster`] grids and resampling,
//! [`labeling`] reference labels, [`dataset`] pairing, patches and variants,
//! [`nn`] and [`model`] the networks, [`training`], [`inference`] on whole
//! scenes, [`evaluation`], [`explain`] for permutation importance, [`sic`]
//! for ice concentration, and [`synth`] for synthetic test scenes.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod inference;
pub mod labeling;
pub mod model;
pub mod nn;
pub mod raster;
pub mod sic;
pub mod synth;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/rasters.md")]
    mod rasters {}
    #[doc = include_str!("../../../book/src/labels.md")]
    mod labels {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/explain.md")]
    mod explain {}
    #[doc = include_str!("../../../book/src/sic.md")]
    mod sic {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
