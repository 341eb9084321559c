//! Label maps and sampling rates for the public bearing datasets. Label `k`
//! follows the usual CWRU fault listing: ball, inner race, outer race, normal.

pub const CWRU_SAMPLE_RATE_HZ: f64 = 12_000.0;
pub const PU_SAMPLE_RATE_HZ: f64 = 64_000.0;
/// Segments per bearing state used for CWRU experiments.
pub const CWRU_SEGMENTS_PER_CLASS: usize = 2000;

pub const CWRU_CLASSES: [&str; 10] = [
    "ball_0.18mm",
    "ball_0.355mm",
    "ball_0.533mm",
    "inner_0.18mm",
    "inner_0.355mm",
    "inner_0.533mm",
    "outer_0.18mm",
    "outer_0.355mm",
    "outer_0.533mm",
    "normal",
];

/// Fourteen-class PU bearing-code table (N15_M07_F04 condition).
pub const PU_CLASSES_14: [&str; 14] = [
    "KA04", "KA15", "KA16", "KA22", "KA30", "KB23", "KB24", "KB27", "KI14", "KI16", "KI17", "KI18", "KI21",
    "KI04",
];

/// Six-state PU selection, trained with 250/250 segments per state (1:1 split).
pub const PU_CLASSES_6: [&str; 6] = ["K001", "KA01", "KA03", "KA07", "KI01", "KI03"];

pub fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}
