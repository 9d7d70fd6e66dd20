//! Variogram models and their supporting machinery.
//!
//! All models are isotropic: `γ(s, t)` depends on the Euclidean separation
//! `‖s − t‖` only. Stationary families saturate at a sill `σ_z²`; the
//! intrinsic families (Brownian and convolved Brownian) grow without bound.

mod oracle;
mod special;

pub use oracle::convolved_variogram_oracle;
pub use special::{kummer_1f1, std_normal_cdf};

use crate::error::{Error, Result};
use crate::geom::Location;
use serde_json::{json, Map, Value};

/// Sill `ϑ²` used by limit/rational kriging under the working stationarity
/// assumption.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SillSpec {
    pub vartheta2: f64,
}

impl SillSpec {
    pub fn new(vartheta2: f64) -> Result<Self> {
        if !(vartheta2 > 0.0) {
            return Err(Error::Domain("sill must be positive".into()));
        }
        Ok(SillSpec { vartheta2 })
    }
}

/// Tagged family of variogram functions.
#[derive(Debug, Clone, PartialEq)]
pub enum VariogramModel {
    /// `γ(d) = σ_z²·‖d‖` — the rough zeroth-order intrinsic field.
    Brownian { sigma2: f64 },
    /// Brownian field smoothed by a normal kernel with standard deviation
    /// `r`; smooth realizations, still intrinsic. `dim` selects the 1-d
    /// `Φ`-based closed form or the 2-d `₁F₁`-based one.
    ConvolvedBrownian { sigma2: f64, r: f64, dim: usize },
    /// `γ(d) = σ_z²(1 − e^{−θd})`.
    StationaryExp { sigma2: f64, theta: f64 },
    /// `γ(d) = σ_z²(1 − e^{−θd²})`.
    StationaryGauss { sigma2: f64, theta: f64 },
    /// Sill-free transform `γ̂ = ϱ·γ_b/(1 − γ_b)` of a sill-normalized
    /// stationary base (`ϑ² = 1`), extending its dynamic range.
    Surrogate { base: Box<VariogramModel>, rho: f64 },
}

impl VariogramModel {
    /// Check parameter invariants (recursively for `Surrogate`).
    pub fn validate(&self) -> Result<()> {
        match self {
            VariogramModel::Brownian { sigma2 } => positive("sigma2", *sigma2),
            VariogramModel::ConvolvedBrownian { sigma2, r, dim } => {
                positive("sigma2", *sigma2)?;
                positive("r", *r)?;
                if !(*dim == 1 || *dim == 2) {
                    return Err(Error::Domain(format!(
                        "convolved Brownian supports dim 1 or 2, got {dim}"
                    )));
                }
                Ok(())
            }
            VariogramModel::StationaryExp { sigma2, theta }
            | VariogramModel::StationaryGauss { sigma2, theta } => {
                positive("sigma2", *sigma2)?;
                positive("theta", *theta)
            }
            VariogramModel::Surrogate { base, rho } => {
                positive("rho", *rho)?;
                base.validate()?;
                match base.sill() {
                    Some(s) if (s - 1.0).abs() <= 1e-12 => Ok(()),
                    Some(s) => Err(Error::Domain(format!(
                        "surrogate base must be sill-normalized (ϑ² = 1), got sill {s}"
                    ))),
                    None => Err(Error::Domain(
                        "surrogate base must be a stationary (bounded) model".into(),
                    )),
                }
            }
        }
    }

    /// Saturation value for stationary families; `None` for intrinsic and
    /// surrogate models (unbounded variograms).
    pub fn sill(&self) -> Option<f64> {
        match self {
            VariogramModel::StationaryExp { sigma2, .. }
            | VariogramModel::StationaryGauss { sigma2, .. } => Some(*sigma2),
            _ => None,
        }
    }

    pub fn is_stationary(&self) -> bool {
        self.sill().is_some()
    }

    /// Spatial dimension the model insists on, if any.
    fn required_dim(&self) -> Option<usize> {
        match self {
            VariogramModel::ConvolvedBrownian { dim, .. } => Some(*dim),
            VariogramModel::Surrogate { base, .. } => base.required_dim(),
            _ => None,
        }
    }

    /// Evaluate `γ` at a Euclidean separation `d ≥ 0`.
    pub fn eval_dist(&self, d: f64) -> Result<f64> {
        if !(d >= 0.0) {
            return Err(Error::Domain(format!("separation must be nonnegative, got {d}")));
        }
        match self {
            VariogramModel::Brownian { sigma2 } => Ok(sigma2 * d),
            VariogramModel::ConvolvedBrownian { sigma2, r, dim } => match dim {
                1 => Ok(convolved_1d(*sigma2, *r, d)),
                2 => convolved_2d(*sigma2, *r, d),
                _ => Err(Error::Domain("convolved Brownian dim must be 1 or 2".into())),
            },
            VariogramModel::StationaryExp { sigma2, theta } => {
                Ok(sigma2 * (1.0 - (-theta * d).exp()))
            }
            VariogramModel::StationaryGauss { sigma2, theta } => {
                Ok(sigma2 * (1.0 - (-theta * d * d).exp()))
            }
            VariogramModel::Surrogate { base, rho } => {
                let g = base.eval_dist(d)?;
                if g >= 1.0 {
                    return Err(Error::Domain(format!(
                        "surrogate base variogram saturated (γ = {g} ≥ 1) at separation {d}"
                    )));
                }
                Ok(rho * g / (1.0 - g))
            }
        }
    }

    /// Evaluate `γ(s, t)`.
    pub fn eval(&self, s: &Location, t: &Location) -> Result<f64> {
        if s.dim() != t.dim() {
            return Err(Error::DimensionMismatch(format!(
                "locations have dimensions {} and {}",
                s.dim(),
                t.dim()
            )));
        }
        if let Some(d) = self.required_dim() {
            if s.dim() != d {
                return Err(Error::DimensionMismatch(format!(
                    "model expects dimension {d}, locations have {}",
                    s.dim()
                )));
            }
        }
        self.eval_dist(s.distance(t))
    }

    /// Serialize to the tagged JSON object format.
    pub fn to_json(&self) -> Value {
        match self {
            VariogramModel::Brownian { sigma2 } => {
                json!({"family": "brownian", "sigma2": sigma2})
            }
            VariogramModel::ConvolvedBrownian { sigma2, r, dim } => {
                json!({"family": "convolved_brownian", "sigma2": sigma2, "r": r, "dim": dim})
            }
            VariogramModel::StationaryExp { sigma2, theta } => {
                json!({"family": "stationary_exp", "sigma2": sigma2, "theta": theta})
            }
            VariogramModel::StationaryGauss { sigma2, theta } => {
                json!({"family": "stationary_gauss", "sigma2": sigma2, "theta": theta})
            }
            VariogramModel::Surrogate { base, rho } => {
                json!({"family": "surrogate", "rho": rho, "base": base.to_json()})
            }
        }
    }

    /// Parse from the tagged JSON object format. Unknown or missing fields
    /// for the chosen family are rejected.
    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Config("variogram model must be a JSON object".into()))?;
        let family = obj
            .get("family")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Config("model object needs a string \"family\" field".into()))?;
        let model = match family {
            "brownian" => {
                expect_keys(obj, &["family", "sigma2"])?;
                VariogramModel::Brownian { sigma2: get_f64(obj, "sigma2")? }
            }
            "convolved_brownian" => {
                expect_keys(obj, &["family", "sigma2", "r", "dim"])?;
                VariogramModel::ConvolvedBrownian {
                    sigma2: get_f64(obj, "sigma2")?,
                    r: get_f64(obj, "r")?,
                    dim: get_dim(obj)?,
                }
            }
            "stationary_exp" => {
                expect_keys(obj, &["family", "sigma2", "theta"])?;
                VariogramModel::StationaryExp {
                    sigma2: get_f64(obj, "sigma2")?,
                    theta: get_f64(obj, "theta")?,
                }
            }
            "stationary_gauss" => {
                expect_keys(obj, &["family", "sigma2", "theta"])?;
                VariogramModel::StationaryGauss {
                    sigma2: get_f64(obj, "sigma2")?,
                    theta: get_f64(obj, "theta")?,
                }
            }
            "surrogate" => {
                expect_keys(obj, &["family", "rho", "base"])?;
                let base = obj
                    .get("base")
                    .ok_or_else(|| Error::Config("surrogate needs a \"base\" model".into()))?;
                VariogramModel::Surrogate {
                    base: Box::new(VariogramModel::from_json(base)?),
                    rho: get_f64(obj, "rho")?,
                }
            }
            other => {
                return Err(Error::Config(format!("unknown variogram family \"{other}\"")));
            }
        };
        model.validate()?;
        Ok(model)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be strictly positive, got {v}")))
    }
}

fn expect_keys(obj: &Map<String, Value>, allowed: &[&str]) -> Result<()> {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "field \"{key}\" is not allowed for this family (expected {allowed:?})"
            )));
        }
    }
    for key in allowed {
        if !obj.contains_key(*key) {
            return Err(Error::Config(format!("missing required field \"{key}\"")));
        }
    }
    Ok(())
}

fn get_f64(obj: &Map<String, Value>, key: &str) -> Result<f64> {
    obj.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::Config(format!("field \"{key}\" must be a number")))
}

fn get_dim(obj: &Map<String, Value>) -> Result<usize> {
    let d = obj
        .get("dim")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Config("field \"dim\" must be a positive integer".into()))?;
    Ok(d as usize)
}

/// 1-d convolved-Brownian closed form:
/// `γ(d) = σ_z²/2 · { 2r/√π·[e^{−d²/(4r²)} − 1] + d·[Φ(d/(√2 r)) − Φ(−d/(√2 r))] }`.
fn convolved_1d(sigma2: f64, r: f64, d: f64) -> f64 {
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let z = d / (std::f64::consts::SQRT_2 * r);
    0.5 * sigma2
        * ((2.0 * r / sqrt_pi) * ((-d * d / (4.0 * r * r)).exp() - 1.0)
            + d * (std_normal_cdf(z) - std_normal_cdf(-z)))
}

/// 2-d convolved-Brownian closed form
/// `γ(d) = 2rσ_z²·Γ(3/2)·[₁F₁(−½; 1; −d²/(4r²)) − 1]`.
///
/// The subtraction sits outside the `₁F₁` argument so that `γ(0) = 0`; the
/// quadrature oracle confirms this reading.
fn convolved_2d(sigma2: f64, r: f64, d: f64) -> Result<f64> {
    let f = kummer_1f1(-0.5, 1.0, -d * d / (4.0 * r * r))?;
    Ok(2.0 * r * sigma2 * libm::tgamma(1.5) * (f - 1.0))
}

/// Surrogate transform and its inverse: `γ̂ = ϱ·γ/(1 − γ)` together with the
/// base value recovered from `γ̂` via `γ = (γ̂/ϱ)/(1 + γ̂/ϱ)`.
pub fn surrogate_and_inverse(base_gamma: f64, rho: f64) -> Result<(f64, f64)> {
    if !(rho > 0.0) {
        return Err(Error::Domain("surrogate scale ϱ must be positive".into()));
    }
    if !(0.0..1.0).contains(&base_gamma) {
        return Err(Error::Domain(format!(
            "surrogate base variogram must lie in [0, 1), got {base_gamma}"
        )));
    }
    let hat = rho * base_gamma / (1.0 - base_gamma);
    let scaled = hat / rho;
    let recovered = scaled / (1.0 + scaled);
    Ok((hat, recovered))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Location;

    fn b(sigma2: f64) -> VariogramModel {
        VariogramModel::Brownian { sigma2 }
    }

    #[test]
    fn brownian_is_linear_in_distance() {
        let m = b(1.0);
        let s = Location::scalar(0.0);
        let t = Location::scalar(2.0);
        assert_eq!(m.eval(&s, &t).unwrap(), 2.0);
        assert_eq!(m.eval(&s, &s).unwrap(), 0.0);
    }

    #[test]
    fn all_models_vanish_at_zero_and_are_symmetric() {
        let models = [
            b(1.7),
            VariogramModel::ConvolvedBrownian { sigma2: 1.0, r: 0.3, dim: 1 },
            VariogramModel::StationaryExp { sigma2: 2.0, theta: 0.7 },
            VariogramModel::StationaryGauss { sigma2: 0.5, theta: 2.0 },
            VariogramModel::Surrogate {
                base: Box::new(VariogramModel::StationaryExp { sigma2: 1.0, theta: 1.0 }),
                rho: 0.2,
            },
        ];
        let s = Location::scalar(0.4);
        let t = Location::scalar(1.3);
        for m in &models {
            m.validate().unwrap();
            assert_eq!(m.eval(&s, &s).unwrap(), 0.0);
            let a = m.eval(&s, &t).unwrap();
            let bb = m.eval(&t, &s).unwrap();
            assert_eq!(a, bb);
            assert!(a > 0.0);
        }
    }

    #[test]
    fn convolved_1d_large_distance_asymptote() {
        // for d >> r: γ ≈ ½(d − 2r/√π)
        let (s2, r, d) = (1.0, 0.1, 10.0);
        let m = VariogramModel::ConvolvedBrownian { sigma2: s2, r, dim: 1 };
        let expect = 0.5 * (d - 2.0 * r / std::f64::consts::PI.sqrt());
        let got = m.eval_dist(d).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn closed_forms_match_quadrature_oracle() {
        let m1 = VariogramModel::ConvolvedBrownian { sigma2: 1.0, r: 1.0, dim: 1 };
        for d in [0.05, 0.3, 1.0, 3.0, 11.0] {
            let cf = m1.eval_dist(d).unwrap();
            let or = convolved_variogram_oracle(1.0, 1.0, 1, d).unwrap();
            assert!(((cf - or) / or).abs() < 1e-6, "1d mismatch at d={d}: {cf} vs {or}");
        }
        let m2 = VariogramModel::ConvolvedBrownian { sigma2: 8e-5, r: 50.0, dim: 2 };
        for d in [5.0, 40.0, 100.0, 300.0] {
            let cf = m2.eval_dist(d).unwrap();
            let or = convolved_variogram_oracle(8e-5, 50.0, 2, d).unwrap();
            assert!(((cf - or) / or).abs() < 1e-5, "2d mismatch at d={d}: {cf} vs {or}");
        }
    }

    #[test]
    fn stationary_models_saturate_and_intrinsic_grow() {
        let exp = VariogramModel::StationaryExp { sigma2: 1.5, theta: 1.0 };
        let far = exp.eval_dist(50.0).unwrap();
        assert!((far - 1.5).abs() < 1e-15);
        let br = b(1.0);
        assert!(br.eval_dist(1e6).unwrap() > 1e5);
    }

    #[test]
    fn surrogate_round_trip_and_pole() {
        let (hat, rec) = surrogate_and_inverse(0.5, 1.0).unwrap();
        assert!((hat - 1.0).abs() < 1e-15);
        assert!((rec - 0.5).abs() < 1e-14);
        let (h0, r0) = surrogate_and_inverse(0.0, 3.0).unwrap();
        assert_eq!((h0, r0), (0.0, 0.0));
        let (hbig, _) = surrogate_and_inverse(1.0 - 1e-12, 1.0).unwrap();
        assert!(hbig > 1e10);
        assert!(surrogate_and_inverse(1.0, 1.0).is_err());
        // strictly increasing in the base value, round trip tight
        let mut prev = -1.0;
        for i in 0..50 {
            let g = i as f64 / 50.0 * 0.99;
            let (h, rec) = surrogate_and_inverse(g, 0.37).unwrap();
            assert!(h > prev);
            assert!((rec - g).abs() < 1e-14);
            prev = h;
        }
    }

    #[test]
    fn surrogate_requires_normalized_base() {
        let bad = VariogramModel::Surrogate {
            base: Box::new(VariogramModel::StationaryExp { sigma2: 2.0, theta: 1.0 }),
            rho: 1.0,
        };
        assert!(bad.validate().is_err());
        let intrinsic_base = VariogramModel::Surrogate { base: Box::new(b(1.0)), rho: 1.0 };
        assert!(intrinsic_base.validate().is_err());
    }

    #[test]
    fn dimension_checks() {
        let m = VariogramModel::ConvolvedBrownian { sigma2: 1.0, r: 1.0, dim: 2 };
        let s1 = Location::scalar(0.0);
        assert!(m.eval(&s1, &s1).is_err());
        let s2 = Location::xy(0.0, 0.0);
        let t2 = Location::xy(3.0, 4.0);
        assert!(m.eval(&s2, &t2).is_ok());
        assert!(b(1.0).eval(&s1, &t2).is_err());
    }

    #[test]
    fn json_round_trip_and_strictness() {
        let m = VariogramModel::Surrogate {
            base: Box::new(VariogramModel::StationaryGauss { sigma2: 1.0, theta: 2.0 }),
            rho: 0.01,
        };
        let v = m.to_json();
        let back = VariogramModel::from_json(&v).unwrap();
        assert_eq!(m, back);

        let extra: Value =
            serde_json::from_str(r#"{"family":"brownian","sigma2":1.0,"theta":2.0}"#).unwrap();
        assert!(VariogramModel::from_json(&extra).is_err());
        let missing: Value = serde_json::from_str(r#"{"family":"stationary_exp","sigma2":1.0}"#).unwrap();
        assert!(VariogramModel::from_json(&missing).is_err());
        let unknown: Value = serde_json::from_str(r#"{"family":"matern","sigma2":1.0}"#).unwrap();
        assert!(VariogramModel::from_json(&unknown).is_err());
    }
}
