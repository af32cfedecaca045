//! Operational shell: synthetic data, file formats, image I/O, manifests.

mod synth;

pub use synth::{synth_image, SynthKind};
