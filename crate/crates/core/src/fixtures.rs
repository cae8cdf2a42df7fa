//! Bundled example models.

use crate::model::Model;

pub const GENE_JSON: &str = include_str!("../fixtures/gene.json");
pub const TOGGLE_JSON: &str = include_str!("../fixtures/toggle.json");
pub const FLIP_JSON: &str = include_str!("../fixtures/flip.json");
pub const BIRTH_JSON: &str = include_str!("../fixtures/birth.json");

/// Self-repressing gene: repressed gene, active gene, protein.
pub fn gene() -> Model {
    Model::from_json(GENE_JSON).expect("bundled fixture is valid")
}

/// Symmetric toggle switch with a slow read-out species.
pub fn toggle() -> Model {
    Model::from_json(TOGGLE_JSON).expect("bundled fixture is valid")
}

/// Two-state chain with rates `a` (0 → 1) and `b` (1 → 0).
pub fn flip() -> Model {
    Model::from_json(FLIP_JSON).expect("bundled fixture is valid")
}

/// Poisson process with rate `lambda`.
pub fn birth() -> Model {
    Model::from_json(BIRTH_JSON).expect("bundled fixture is valid")
}

/// Look up a bundled model by name.
pub fn by_name(name: &str) -> Option<Model> {
    match name {
        "gene" => Some(gene()),
        "toggle" => Some(toggle()),
        "flip" => Some(flip()),
        "birth" => Some(birth()),
        _ => None,
    }
}
