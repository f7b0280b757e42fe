use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{checked_symmetric, Mat};

/// Quadratic supply rate `[y; w]' [[Q, S], [S', R]] [y; w]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplyRate {
    #[serde(rename = "Q", with = "crate::linalg::rows")]
    pub q: Mat,
    #[serde(rename = "S", with = "crate::linalg::rows")]
    pub s: Mat,
    #[serde(rename = "R", with = "crate::linalg::rows")]
    pub r: Mat,
}

impl SupplyRate {
    /// Builds a supply rate, symmetrizing Q and R within tolerance.
    pub fn new(q: Mat, s: Mat, r: Mat) -> Result<Self> {
        let m = q.nrows();
        let l = r.nrows();
        if !q.is_square() || !r.is_square() || s.shape() != (m, l) {
            return Err(Error::Dimension(format!(
                "supply Q {:?}, S {:?}, R {:?} do not conform",
                q.shape(),
                s.shape(),
                r.shape()
            )));
        }
        let q = checked_symmetric(&q, "Q")?;
        let r = checked_symmetric(&r, "R")?;
        Ok(Self { q, s, r })
    }

    pub fn output_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.r.nrows()
    }

    /// Effective disturbance block `R + D'QD + D'S + S'D` (just `R` without feedthrough).
    pub fn tail(&self, d: Option<&Mat>) -> Mat {
        match d {
            None => self.r.clone(),
            Some(d) => {
                let ds = d.transpose() * &self.s;
                &self.r + d.transpose() * &self.q * d + &ds + ds.transpose()
            }
        }
    }

    /// The form the simplified feedthrough substitution produces: `-D'QD - (D'S + S'D)`.
    pub fn tail_as_published(&self, d: Option<&Mat>) -> Mat {
        match d {
            None => self.r.clone(),
            Some(d) => {
                let ds = d.transpose() * &self.s;
                -(d.transpose() * &self.q * d) - (&ds + ds.transpose())
            }
        }
    }
}

/// Named supply-rate families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SupplyPreset {
    Passive,
    StrictlyPassive { rho: f64, nu: f64 },
    L2 { gamma: f64 },
    Conic { c: f64, r: f64 },
    Sector { a: f64, b: f64 },
}

impl SupplyPreset {
    /// Parses a preset name plus its scalar parameters.
    pub fn from_name(kind: &str, params: &[f64]) -> Result<Self> {
        let need = |k: usize| -> Result<()> {
            if params.len() != k {
                Err(Error::InvalidSupply(format!(
                    "preset `{kind}` takes {k} parameter(s), got {}",
                    params.len()
                )))
            } else {
                Ok(())
            }
        };
        let preset = match kind {
            "passive" => {
                need(0)?;
                SupplyPreset::Passive
            }
            "strictly-passive" => {
                need(2)?;
                SupplyPreset::StrictlyPassive { rho: params[0], nu: params[1] }
            }
            "l2" | "L2" => {
                need(1)?;
                SupplyPreset::L2 { gamma: params[0] }
            }
            "conic" => {
                need(2)?;
                SupplyPreset::Conic { c: params[0], r: params[1] }
            }
            "sector" => {
                need(2)?;
                SupplyPreset::Sector { a: params[0], b: params[1] }
            }
            other => return Err(Error::InvalidSupply(format!("unknown preset `{other}`"))),
        };
        Ok(preset)
    }

    pub fn name(&self) -> &'static str {
        match self {
            SupplyPreset::Passive => "passive",
            SupplyPreset::StrictlyPassive { .. } => "strictly-passive",
            SupplyPreset::L2 { .. } => "l2",
            SupplyPreset::Conic { .. } => "conic",
            SupplyPreset::Sector { .. } => "sector",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            SupplyPreset::Passive => vec![],
            SupplyPreset::StrictlyPassive { rho, nu } => vec![rho, nu],
            SupplyPreset::L2 { gamma } => vec![gamma],
            SupplyPreset::Conic { c, r } => vec![c, r],
            SupplyPreset::Sector { a, b } => vec![a, b],
        }
    }

    /// Instantiates the preset for `m` outputs and `l` disturbances.
    pub fn rate(&self, m: usize, l: usize) -> Result<SupplyRate> {
        let eye_m = Mat::identity(m, m);
        let eye_l = Mat::identity(l, l);
        let square = || -> Result<Mat> {
            if m != l {
                return Err(Error::Dimension(format!(
                    "preset `{}` pairs outputs with disturbances and needs m = l (got m={m}, l={l})",
                    self.name()
                )));
            }
            Ok(Mat::identity(m, l))
        };
        let positive = |name: &str, v: f64| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidSupply(format!("`{name}` must be positive, got {v}")))
            }
        };
        let (q, s, r) = match *self {
            SupplyPreset::Passive => (Mat::zeros(m, m), square()? * 0.5, Mat::zeros(l, l)),
            SupplyPreset::StrictlyPassive { rho, nu } => {
                positive("rho", rho)?;
                positive("nu", nu)?;
                (eye_m * -rho, square()? * 0.5, eye_l * -nu)
            }
            SupplyPreset::L2 { gamma } => {
                positive("gamma", gamma)?;
                (eye_m * (-1.0 / gamma), Mat::zeros(m, l), eye_l * gamma)
            }
            SupplyPreset::Conic { c, r } => {
                positive("r", r)?;
                if !c.is_finite() {
                    return Err(Error::InvalidSupply("`c` must be finite".into()));
                }
                (-eye_m, square()? * c, eye_l * (r * r - c * c))
            }
            SupplyPreset::Sector { a, b } => {
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::InvalidSupply("sector bounds must be finite".into()));
                }
                (-eye_m, square()? * (0.5 * (a + b)), eye_l * (-a * b))
            }
        };
        Ok(SupplyRate { q, s, r })
    }
}

/// Convenience wrapper: `supply_preset("l2", &[1.0], 1, 1)`.
pub fn supply_preset(kind: &str, params: &[f64], m: usize, l: usize) -> Result<SupplyRate> {
    SupplyPreset::from_name(kind, params)?.rate(m, l)
}

/// Per-subsystem dissipativity target.
///
/// `L2Free` fixes `Q = -I`, `S = 0` and leaves `R = rho I` as a decision
/// variable; the achieved gain is `gamma = sqrt(rho)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SupplyTarget {
    Fixed(SupplyRate),
    L2Free,
}

impl SupplyTarget {
    pub fn fixed(&self) -> Option<&SupplyRate> {
        match self {
            SupplyTarget::Fixed(s) => Some(s),
            SupplyTarget::L2Free => None,
        }
    }

    /// Resolves to a concrete rate, using `rho` for the free L2 case.
    pub fn resolve(&self, m: usize, l: usize, rho: Option<f64>) -> Result<SupplyRate> {
        match self {
            SupplyTarget::Fixed(s) => Ok(s.clone()),
            SupplyTarget::L2Free => {
                let rho = rho.ok_or_else(|| {
                    Error::InvalidSupply("free L2 target needs a resolved rho".into())
                })?;
                Ok(SupplyRate {
                    q: -Mat::identity(m, m),
                    s: Mat::zeros(m, l),
                    r: Mat::identity(l, l) * rho,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: &Mat) -> f64 {
        assert_eq!(x.shape(), (1, 1));
        x[(0, 0)]
    }

    #[test]
    fn passive_scalar() {
        let s = supply_preset("passive", &[], 1, 1).unwrap();
        assert_eq!((scalar(&s.q), scalar(&s.s), scalar(&s.r)), (0.0, 0.5, 0.0));
    }

    #[test]
    fn l2_unit_gain() {
        let s = supply_preset("l2", &[1.0], 1, 1).unwrap();
        assert_eq!((scalar(&s.q), scalar(&s.s), scalar(&s.r)), (-1.0, 0.0, 1.0));
    }

    #[test]
    fn sector_zero_bounds() {
        let s = supply_preset("sector", &[0.0, 0.0], 1, 1).unwrap();
        assert_eq!((scalar(&s.q), scalar(&s.s)), (-1.0, 0.0));
        assert_eq!(scalar(&s.r), 0.0);
    }

    #[test]
    fn sector_midpoint_and_product() {
        let s = supply_preset("sector", &[1.0, 3.0], 2, 2).unwrap();
        assert_eq!(s.s, Mat::identity(2, 2) * 2.0);
        assert_eq!(s.r, Mat::identity(2, 2) * -3.0);
    }

    #[test]
    fn conic_and_strict() {
        let s = supply_preset("conic", &[0.5, 2.0], 1, 1).unwrap();
        assert_eq!((scalar(&s.q), scalar(&s.s), scalar(&s.r)), (-1.0, 0.5, 3.75));
        let s = supply_preset("strictly-passive", &[0.1, 0.2], 1, 1).unwrap();
        assert_eq!((scalar(&s.q), scalar(&s.s), scalar(&s.r)), (-0.1, 0.5, -0.2));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(supply_preset("bogus", &[], 1, 1), Err(Error::InvalidSupply(_))));
        assert!(matches!(supply_preset("l2", &[0.0], 1, 1), Err(Error::InvalidSupply(_))));
        assert!(matches!(supply_preset("l2", &[-1.0], 1, 1), Err(Error::InvalidSupply(_))));
        assert!(matches!(
            supply_preset("strictly-passive", &[1.0, -1.0], 1, 1),
            Err(Error::InvalidSupply(_))
        ));
        assert!(matches!(supply_preset("conic", &[0.0, 0.0], 1, 1), Err(Error::InvalidSupply(_))));
        assert!(matches!(supply_preset("passive", &[], 2, 1), Err(Error::Dimension(_))));
        assert!(supply_preset("l2", &[2.0], 2, 1).is_ok());
    }

    #[test]
    fn tail_with_feedthrough() {
        let s = supply_preset("passive", &[], 1, 1).unwrap();
        let d = Mat::from_element(1, 1, 2.0);
        assert_eq!(scalar(&s.tail(Some(&d))), 2.0);
        assert_eq!(scalar(&s.tail_as_published(Some(&d))), -2.0);
        assert_eq!(scalar(&s.tail(None)), 0.0);
    }
}
