//! Scenarios compiled into the binary, addressable by name.

pub const SCENARIOS: &[(&str, &str)] = &[
    ("happy-owned", include_str!("../scenarios/happy-owned.toml")),
    ("shared-counter", include_str!("../scenarios/shared-counter.toml")),
    ("equivocation", include_str!("../scenarios/equivocation.toml")),
    ("crash-recover", include_str!("../scenarios/crash-recover.toml")),
    ("crasher", include_str!("../scenarios/crasher.toml")),
    ("epochs", include_str!("../scenarios/epochs.toml")),
    ("ptb-100", include_str!("../scenarios/ptb-100.toml")),
];

pub fn get(name: &str) -> Option<&'static str> {
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}
