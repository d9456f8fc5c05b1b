//! Configs bundled into the library, with the sampling parameters each one
//! is meant to be box-counted at.

use crate::error::SpecError;
use crate::system::SystemSpec;

const FIXTURES: &[(&str, &str)] = &[
    (
        "middle_thirds",
        include_str!("../fixtures/middle_thirds.json"),
    ),
    ("example_5_1", include_str!("../fixtures/example_5_1.json")),
    ("example_5_2", include_str!("../fixtures/example_5_2.json")),
    ("example_5_3", include_str!("../fixtures/example_5_3.json")),
    ("example_5_4", include_str!("../fixtures/example_5_4.json")),
    (
        "sierpinski_carpet",
        include_str!("../fixtures/sierpinski_carpet.json"),
    ),
    (
        "similarity_pair",
        include_str!("../fixtures/similarity_pair.json"),
    ),
    ("four_halves", include_str!("../fixtures/four_halves.json")),
    (
        "diagonal_triple",
        include_str!("../fixtures/diagonal_triple.json"),
    ),
    ("random_pair", include_str!("../fixtures/random_pair.json")),
    (
        "scalar_blocks",
        include_str!("../fixtures/scalar_blocks.json"),
    ),
    (
        "random_translation",
        include_str!("../fixtures/random_translation.json"),
    ),
];

/// Recommended box-counting setup for a fixture.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingDefaults {
    pub depth: usize,
    pub count: usize,
    pub scales: Vec<f64>,
}

pub fn names() -> impl Iterator<Item = &'static str> {
    FIXTURES.iter().map(|(n, _)| *n)
}

/// Raw JSON text of a fixture.
pub fn source(name: &str) -> Result<&'static str, SpecError> {
    FIXTURES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .ok_or_else(|| SpecError::UnknownFixture(name.to_string()))
}

/// Parses a fixture without validation (some fixtures exist to fail it).
pub fn load(name: &str) -> Result<SystemSpec, SpecError> {
    SystemSpec::parse_unvalidated(source(name)?)
}

fn geometric(base: f64, from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|i| base.powi(-i)).collect()
}

pub fn sampling_defaults(name: &str) -> Option<SamplingDefaults> {
    let d = match name {
        "middle_thirds" => SamplingDefaults {
            depth: 12,
            count: 4096,
            scales: geometric(3.0, 1, 10),
        },
        // Scales run from the unit square to the end of the first complete
        // 9-branch block (ε = 3^-6 resolves levels 1..3 horizontally) plus
        // one step beyond.
        "example_5_4" => SamplingDefaults {
            depth: 10,
            count: 200_000,
            scales: geometric(3.0, 0, 7),
        },
        "sierpinski_carpet" => SamplingDefaults {
            depth: 6,
            count: 262_144,
            scales: geometric(3.0, 1, 5),
        },
        "random_translation" => SamplingDefaults {
            depth: 12,
            count: 1_000_000,
            scales: geometric(2.0, 3, 11),
        },
        "similarity_pair" => SamplingDefaults {
            depth: 16,
            count: 65_536,
            scales: geometric(3.0, 1, 12),
        },
        "scalar_blocks" => SamplingDefaults {
            depth: 14,
            count: 200_000,
            scales: geometric(2.0, 1, 12),
        },
        _ => return None,
    };
    Some(d)
}
