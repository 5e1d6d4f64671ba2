//! Dataset generation, file formats, training and evaluation harness for
//! [`sosnet_core`].

pub mod datagen;
pub mod formats;
pub mod harness;
