//! Rules for turning the two cell conductivities adjacent to a face into a
//! face transmissibility.

use crate::error::{NiotError, Result};

pub trait FaceMean: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;

    /// Face value from the two (offset, strictly positive) neighbour values.
    fn coefficient(&self, a: f64, b: f64) -> f64;

    /// ∂coefficient/∂a.
    fn d_first(&self, a: f64, b: f64) -> f64;
}

/// `2ab / (a + b)`; conserves flux across coefficient jumps.
#[derive(Debug, Clone, Copy, Default)]
pub struct Harmonic;

impl FaceMean for Harmonic {
    fn name(&self) -> &'static str {
        "harmonic"
    }

    #[inline]
    fn coefficient(&self, a: f64, b: f64) -> f64 {
        2.0 * a * b / (a + b)
    }

    #[inline]
    fn d_first(&self, a: f64, b: f64) -> f64 {
        let s = a + b;
        2.0 * b * b / (s * s)
    }
}

/// `(a + b) / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Arithmetic;

impl FaceMean for Arithmetic {
    fn name(&self) -> &'static str {
        "arithmetic"
    }

    #[inline]
    fn coefficient(&self, a: f64, b: f64) -> f64 {
        0.5 * (a + b)
    }

    #[inline]
    fn d_first(&self, _a: f64, _b: f64) -> f64 {
        0.5
    }
}

type Factory = fn() -> Box<dyn FaceMean>;

const REGISTRY: &[(&str, Factory)] = &[
    ("harmonic", || Box::new(Harmonic)),
    ("arithmetic", || Box::new(Arithmetic)),
];

/// Names accepted by [`face_mean_by_name`].
pub fn face_mean_names() -> impl Iterator<Item = &'static str> {
    REGISTRY.iter().map(|(n, _)| *n)
}

pub fn face_mean_by_name(name: &str) -> Result<Box<dyn FaceMean>> {
    REGISTRY
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, f)| f())
        .ok_or_else(|| NiotError::UnknownStrategy {
            kind: "face mean",
            name: name.to_string(),
            known: face_mean_names().collect::<Vec<_>>().join(", "),
        })
}
