//! TOML geometry configuration.
//!
//! ```toml
//! name = "disk"
//! resolution_level = 9
//! bbox = [[-4.0, 4.0], [-4.0, 4.0]]   # optional, one [lo, hi] pair per axis
//!
//! [parameters]                        # optional
//! radius = 1.0                        # disk only
//! x_min = -8.0                        # exp_whitney_cusp only
//! ```

use serde::{Deserialize, Serialize};

use super::builtin::{builtin_geometry, AnalyticRegion, Shape};
use super::{BBox, Region};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub name: String,
    pub resolution_level: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameters: Option<GeometryParameters>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryParameters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_min: Option<f64>,
}

impl GeometryConfig {
    pub fn builtin(name: &str, level: u32) -> Self {
        GeometryConfig { name: name.to_string(), resolution_level: level, bbox: None, parameters: None }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("geometry config serializes")
    }

    pub fn build(&self) -> Result<AnalyticRegion> {
        let base = builtin_geometry(&self.name, self.resolution_level)?;
        let mut shape = base.shape();
        if let Some(p) = &self.parameters {
            match (&mut shape, p) {
                (Shape::Disk { radius }, GeometryParameters { radius: Some(r), x_min: None }) => {
                    if !(*r > 0.0) {
                        return Err(Error::Config("radius must be positive".into()));
                    }
                    *radius = *r;
                }
                (Shape::ExpWhitneyCusp { x_min }, GeometryParameters { radius: None, x_min: Some(m) }) => {
                    if !(*m < 0.0 && *m == m.round()) {
                        return Err(Error::Config("x_min must be a negative integer".into()));
                    }
                    *x_min = *m;
                }
                (_, GeometryParameters { radius: None, x_min: None }) => {}
                _ => {
                    return Err(Error::Config(format!(
                        "parameters not applicable to geometry `{}`",
                        self.name
                    )))
                }
            }
        }
        let bbox = match &self.bbox {
            None => *base.bbox(),
            Some(axes) => {
                let lo: Vec<f64> = axes.iter().map(|a| a[0]).collect();
                let hi: Vec<f64> = axes.iter().map(|a| a[1]).collect();
                if axes.len() != base.dim() {
                    return Err(Error::Config(format!(
                        "bbox has {} axes, geometry `{}` has dimension {}",
                        axes.len(),
                        self.name,
                        base.dim()
                    )));
                }
                let b = BBox::new(base.dim(), &lo, &hi)?;
                if !b.is_dyadic(0) {
                    return Err(Error::Config("bbox corners must be integers".into()));
                }
                b
            }
        };
        Ok(AnalyticRegion::new(&self.name, shape, bbox, self.resolution_level))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Label;

    #[test]
    fn parse_and_build() {
        let cfg = GeometryConfig::from_toml(
            "name = \"disk\"\nresolution_level = 6\nbbox = [[-2.0, 2.0], [-2.0, 2.0]]\n[parameters]\nradius = 0.5\n",
        )
        .unwrap();
        let g = cfg.build().unwrap();
        assert_eq!(g.bbox().volume(), 16.0);
        assert_eq!(g.classify(&[0.4, 0.0, 0.0]).unwrap(), Label::InsideO);
        assert_eq!(g.classify(&[0.6, 0.0, 0.0]).unwrap(), Label::Outside);
        let back = GeometryConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(GeometryConfig::from_toml("name = \"disk\"").is_err());
        let bad = GeometryConfig::from_toml("name = \"halfplane\"\nresolution_level = 4\n[parameters]\nradius = 2.0\n").unwrap();
        assert!(matches!(bad.build(), Err(Error::Config(_))));
        let unknown = GeometryConfig::builtin("torus", 4);
        assert!(matches!(unknown.build(), Err(Error::Config(_))));
    }
}
