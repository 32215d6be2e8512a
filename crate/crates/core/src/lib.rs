//! Compressive population health toolkit: spatio-temporal correlation
//! analysis, region selection and missing-entry completion for
//! region x disease x year morbidity cubes.

pub mod completion;
pub mod correlation;
pub mod data;
pub mod exec;
pub mod geo;
pub mod harness;
pub mod selection;
pub mod io;
