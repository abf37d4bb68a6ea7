//! Built-in configurations for the shipped design recipes.

const PRESETS: &[(&str, &str)] = &[
    (
        "afp_2p3_cycles",
        include_str!("../../../presets/afp_2p3_cycles.json"),
    ),
    (
        "dipolar_electron",
        include_str!("../../../presets/dipolar_electron.json"),
    ),
    (
        "dipolar_reference",
        include_str!("../../../presets/dipolar_reference.json"),
    ),
    (
        "selective_larmor",
        include_str!("../../../presets/selective_larmor.json"),
    ),
    (
        "arbitrary_state",
        include_str!("../../../presets/arbitrary_state.json"),
    ),
];

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

pub fn get(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|p| p.0 == name).map(|p| p.1)
}
