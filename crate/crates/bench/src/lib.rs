//! Shared setup for the criterion benches in `benches/`.

use swapmix_core::ingestion::DatasetBundle;
use swapmix_core::synth::{generate, SynthConfig, SynthDataset};

/// The default synthetic dataset and its bundle.
pub fn fixture() -> (SynthDataset, DatasetBundle) {
    let ds = generate(&SynthConfig::default()).expect("fixture generates");
    let bundle = ds.bundle().expect("fixture is consistent");
    (ds, bundle)
}
