//! Conductivity-to-image maps, selected by name at runtime.

use crate::error::{NiotError, Result};
use crate::grid::CellField;
use crate::porous::{pm_adjoint_apply, pm_forward, pm_tangent_apply, NewtonTrace, PmParams};

/// Parameters any registered map may draw from.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSettings {
    pub alpha: f64,
    pub pm: PmParams,
}

/// Derivative of a map at the point it was evaluated.
pub trait Linearization: Send + Sync {
    /// `I′(μ) v`.
    fn tangent(&self, v: &CellField) -> Result<CellField>;
    /// `I′(μ)ᵀ r`.
    fn adjoint(&self, r: &CellField) -> Result<CellField>;
}

pub struct MapEvaluation {
    pub image: CellField,
    pub linearization: Box<dyn Linearization>,
}

pub trait ImageMap: Send + Sync {
    fn name(&self) -> &'static str;

    fn alpha(&self) -> f64;

    fn evaluate(&self, mu: &CellField) -> Result<MapEvaluation>;

    /// A conductivity whose image reproduces `image`, when the map has an
    /// inverse.
    fn invert(&self, image: &CellField) -> Option<CellField>;
}

/// `I(μ) = α μ`.
#[derive(Debug, Clone, Copy)]
pub struct IdentityMap {
    pub alpha: f64,
}

struct Scale(f64);

impl Linearization for Scale {
    fn tangent(&self, v: &CellField) -> Result<CellField> {
        Ok(v.scaled(self.0))
    }

    fn adjoint(&self, r: &CellField) -> Result<CellField> {
        Ok(r.scaled(self.0))
    }
}

impl ImageMap for IdentityMap {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn evaluate(&self, mu: &CellField) -> Result<MapEvaluation> {
        Ok(MapEvaluation {
            image: crate::porous::identity_map(mu, self.alpha),
            linearization: Box::new(Scale(self.alpha)),
        })
    }

    fn invert(&self, image: &CellField) -> Option<CellField> {
        Some(image.scaled(1.0 / self.alpha))
    }
}

/// `I(μ) = α ρ(t*, m, μ)`.
#[derive(Debug, Clone)]
pub struct PorousMediaMap {
    pub params: PmParams,
}

struct PorousLinearization {
    trace: NewtonTrace,
    params: PmParams,
}

impl Linearization for PorousLinearization {
    fn tangent(&self, v: &CellField) -> Result<CellField> {
        pm_tangent_apply(v, &self.trace, &self.params)
    }

    fn adjoint(&self, r: &CellField) -> Result<CellField> {
        pm_adjoint_apply(r, &self.trace, &self.params)
    }
}

impl ImageMap for PorousMediaMap {
    fn name(&self) -> &'static str {
        "pm"
    }

    fn alpha(&self) -> f64 {
        self.params.alpha
    }

    fn evaluate(&self, mu: &CellField) -> Result<MapEvaluation> {
        let (image, trace) = pm_forward(mu, &self.params)?;
        Ok(MapEvaluation {
            image,
            linearization: Box::new(PorousLinearization {
                trace,
                params: self.params.clone(),
            }),
        })
    }

    fn invert(&self, _image: &CellField) -> Option<CellField> {
        None
    }
}

type MapFactory = fn(&MapSettings) -> Result<Box<dyn ImageMap>>;

const MAPS: &[(&str, MapFactory)] = &[
    ("identity", |s| {
        if !(s.alpha > 0.0) {
            return Err(NiotError::InvalidParameter(format!(
                "alpha must be positive, got {}",
                s.alpha
            )));
        }
        Ok(Box::new(IdentityMap { alpha: s.alpha }))
    }),
    ("pm", |s| {
        let params = PmParams {
            alpha: s.alpha,
            ..s.pm.clone()
        };
        params.validate()?;
        Ok(Box::new(PorousMediaMap { params }))
    }),
];

pub fn map_names() -> impl Iterator<Item = &'static str> {
    MAPS.iter().map(|(n, _)| *n)
}

/// Instantiates the map registered under `name`.
pub fn build_map(name: &str, settings: &MapSettings) -> Result<Box<dyn ImageMap>> {
    let (_, factory) = MAPS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| NiotError::UnknownStrategy {
            kind: "image map",
            name: name.to_string(),
            known: map_names().collect::<Vec<_>>().join(", "),
        })?;
    factory(settings)
}
