//! Shared setup for the criterion benches.

use heatfreq_core::fixtures::{self, Fixture};
use heatfreq_core::Model;

/// Compiled model and fixture for a bundled scenario.
pub fn prepared(fixture: Fixture) -> (Model, Fixture) {
    let model = Model::new(fixture.system.clone()).expect("bundled fixtures are valid");
    (model, fixture)
}

pub fn f39_mode2() -> (Model, Fixture) {
    prepared(fixtures::f39_mode2_fixture())
}

pub fn f39_mode1() -> (Model, Fixture) {
    prepared(fixtures::f39_mode1_fixture())
}
