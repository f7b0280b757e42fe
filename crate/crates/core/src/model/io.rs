//! JSON interchange for networks and single-subsystem extension files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CouplingMap, NetworkModel, Subsystem, SubsystemDynamics, SupplyPreset, SupplyRate, SupplyTarget};
use crate::error::{Error, Result};
use crate::linalg::{from_rows, to_rows, Mat};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDynamics {
    #[serde(rename = "A")]
    a: Rows,
    #[serde(rename = "B1")]
    b1: Rows,
    #[serde(rename = "B2")]
    b2: Rows,
    #[serde(rename = "B3")]
    b3: Rows,
    #[serde(rename = "C")]
    c: Rows,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    d: Option<Rows>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSubsystem {
    name: String,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<Rows>,
    #[serde(rename = "B1", default, skip_serializing_if = "Option::is_none")]
    b1: Option<Rows>,
    #[serde(rename = "B2", default, skip_serializing_if = "Option::is_none")]
    b2: Option<Rows>,
    #[serde(rename = "B3", default, skip_serializing_if = "Option::is_none")]
    b3: Option<Rows>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    c: Option<Rows>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    d: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    modes: Option<Vec<RawDynamics>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoupling {
    from: usize,
    to: usize,
    #[serde(rename = "H")]
    h: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSupply {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subsystem: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    params: Vec<f64>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    q: Option<Rows>,
    #[serde(rename = "S", default, skip_serializing_if = "Option::is_none")]
    s: Option<Rows>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    r: Option<Rows>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    comment: Option<String>,
    subsystems: Vec<RawSubsystem>,
    #[serde(default)]
    coupling: Vec<RawCoupling>,
    supplies: Vec<RawSupply>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sequence: Option<Vec<usize>>,
}

/// File describing one subsystem to append to an existing network.
/// Coupling indices refer to the extended network.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNewSubsystem {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    comment: Option<String>,
    subsystem: RawSubsystem,
    #[serde(default)]
    coupling: Vec<RawCoupling>,
    supply: RawSupply,
}

/// Parsed extension file: the new subsystem, its couplings and target.
#[derive(Debug, Clone, PartialEq)]
pub struct NewSubsystemFile {
    pub subsystem: Subsystem,
    pub coupling: Vec<(usize, usize, Mat)>,
    pub supply: SupplyTarget,
    pub comment: Option<String>,
}

fn mat(rows: &Rows, name: &str, cols_if_empty: usize) -> Result<Mat> {
    if rows.is_empty() {
        return Ok(Mat::zeros(0, cols_if_empty));
    }
    from_rows(rows, name).map_err(|e| match e {
        Error::Dimension(m) => Error::Parse(m),
        other => other,
    })
}

fn dynamics_from_raw(raw: &RawDynamics, who: &str) -> Result<SubsystemDynamics> {
    let a = mat(&raw.a, &format!("{who}.A"), 0)?;
    let n = a.nrows();
    Ok(SubsystemDynamics {
        b1: mat(&raw.b1, &format!("{who}.B1"), 0)?,
        b2: mat(&raw.b2, &format!("{who}.B2"), 0)?,
        b3: mat(&raw.b3, &format!("{who}.B3"), 0)?,
        c: mat(&raw.c, &format!("{who}.C"), n)?,
        d: raw.d.as_ref().map(|d| mat(d, &format!("{who}.D"), 0)).transpose()?,
        a,
    })
}

fn dynamics_to_raw(d: &SubsystemDynamics) -> RawDynamics {
    RawDynamics {
        a: to_rows(&d.a),
        b1: to_rows(&d.b1),
        b2: to_rows(&d.b2),
        b3: to_rows(&d.b3),
        c: to_rows(&d.c),
        d: d.d.as_ref().map(to_rows),
    }
}

fn subsystem_from_raw(raw: &RawSubsystem) -> Result<Subsystem> {
    let flat = [&raw.a, &raw.b1, &raw.b2, &raw.b3, &raw.c];
    let modes = match &raw.modes {
        Some(modes) => {
            if flat.iter().any(|m| m.is_some()) || raw.d.is_some() {
                return Err(Error::Parse(format!("subsystem `{}` mixes `modes` with top-level matrices", raw.name)));
            }
            if modes.is_empty() {
                return Err(Error::Parse(format!("subsystem `{}` has an empty `modes` list", raw.name)));
            }
            modes
                .iter()
                .enumerate()
                .map(|(k, m)| dynamics_from_raw(m, &format!("{}[mode {k}]", raw.name)))
                .collect::<Result<Vec<_>>>()?
        }
        None => {
            let missing = |x: &Option<Rows>, n: &str| {
                x.clone().ok_or_else(|| Error::Parse(format!("subsystem `{}` is missing `{n}`", raw.name)))
            };
            let r = RawDynamics {
                a: missing(&raw.a, "A")?,
                b1: missing(&raw.b1, "B1")?,
                b2: missing(&raw.b2, "B2")?,
                b3: missing(&raw.b3, "B3")?,
                c: missing(&raw.c, "C")?,
                d: raw.d.clone(),
            };
            vec![dynamics_from_raw(&r, &raw.name)?]
        }
    };
    Ok(Subsystem { name: raw.name.clone(), modes })
}

fn subsystem_to_raw(s: &Subsystem) -> RawSubsystem {
    if s.modes.len() == 1 {
        let r = dynamics_to_raw(&s.modes[0]);
        RawSubsystem {
            name: s.name.clone(),
            a: Some(r.a),
            b1: Some(r.b1),
            b2: Some(r.b2),
            b3: Some(r.b3),
            c: Some(r.c),
            d: r.d,
            modes: None,
        }
    } else {
        RawSubsystem {
            name: s.name.clone(),
            a: None,
            b1: None,
            b2: None,
            b3: None,
            c: None,
            d: None,
            modes: Some(s.modes.iter().map(dynamics_to_raw).collect()),
        }
    }
}

fn supply_from_raw(raw: &RawSupply, sub: Option<&Subsystem>) -> Result<SupplyTarget> {
    match (&raw.preset, &raw.q, &raw.s, &raw.r) {
        (Some(p), None, None, None) if p == "l2-free" => Ok(SupplyTarget::L2Free),
        (Some(p), None, None, None) => {
            let sub = sub.ok_or_else(|| Error::Parse("supply references a missing subsystem".into()))?;
            let d = sub.modes.first().ok_or_else(|| Error::Parse("subsystem has no modes".into()))?.dims();
            Ok(SupplyTarget::Fixed(SupplyPreset::from_name(p, &raw.params)?.rate(d.m, d.l)?))
        }
        (None, Some(q), Some(s), Some(r)) => {
            let q = mat(q, "Q", 0)?;
            let r = mat(r, "R", 0)?;
            let s = mat(s, "S", r.nrows())?;
            Ok(SupplyTarget::Fixed(SupplyRate::new(q, s, r)?))
        }
        _ => Err(Error::Parse("a supply needs either `preset` or all of `Q`, `S`, `R`".into())),
    }
}

fn supply_to_raw(s: &SupplyTarget, subsystem: Option<usize>) -> RawSupply {
    match s {
        SupplyTarget::L2Free => RawSupply {
            subsystem,
            preset: Some("l2-free".into()),
            params: vec![],
            q: None,
            s: None,
            r: None,
        },
        SupplyTarget::Fixed(rate) => RawSupply {
            subsystem,
            preset: None,
            params: vec![],
            q: Some(to_rows(&rate.q)),
            s: Some(to_rows(&rate.s)),
            r: Some(to_rows(&rate.r)),
        },
    }
}

fn coupling_from_raw(raw: &RawCoupling) -> Result<(usize, usize, Mat)> {
    let h = mat(&raw.h, &format!("H[{},{}]", raw.to, raw.from), 0)?;
    Ok((raw.to, raw.from, h))
}

impl NetworkModel {
    /// Parses the JSON network format. Structural defects that are not
    /// parse errors (shapes, sequence) are left for `validate`.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawNetwork = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let subsystems = raw.subsystems.iter().map(subsystem_from_raw).collect::<Result<Vec<_>>>()?;
        let mut coupling = CouplingMap::new();
        for c in &raw.coupling {
            let (to, from, h) = coupling_from_raw(c)?;
            if coupling.get(to, from).is_some() {
                return Err(Error::Parse(format!("duplicate coupling block H[{to},{from}]")));
            }
            coupling.insert(to, from, h);
        }
        let mut slots: Vec<Option<SupplyTarget>> = vec![None; subsystems.len()];
        for (k, s) in raw.supplies.iter().enumerate() {
            let idx = s.subsystem.unwrap_or(k);
            if idx >= subsystems.len() {
                return Err(Error::Parse(format!("supply references missing subsystem {idx}")));
            }
            if slots[idx].is_some() {
                return Err(Error::Parse(format!("duplicate supply for subsystem {idx}")));
            }
            slots[idx] = Some(supply_from_raw(s, subsystems.get(idx))?);
        }
        let supplies = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::Parse(format!("no supply for subsystem {i}"))))
            .collect::<Result<Vec<_>>>()?;
        let sequence = raw.sequence.unwrap_or_else(|| (0..subsystems.len()).collect());
        Ok(NetworkModel { subsystems, coupling, supplies, sequence, comment: raw.comment })
    }

    /// Canonical JSON text (fixed key order, supplies as explicit Q/S/R).
    pub fn to_json_string(&self) -> String {
        let raw = RawNetwork {
            comment: self.comment.clone(),
            subsystems: self.subsystems.iter().map(subsystem_to_raw).collect(),
            coupling: self
                .coupling
                .iter()
                .map(|(&(to, from), h)| RawCoupling { from, to, h: to_rows(h) })
                .collect(),
            supplies: self.supplies.iter().enumerate().map(|(i, s)| supply_to_raw(s, Some(i))).collect(),
            sequence: Some(self.sequence.clone()),
        };
        serde_json::to_string_pretty(&raw).expect("network serialization cannot fail")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string() + "\n")?;
        Ok(())
    }
}

impl NewSubsystemFile {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawNewSubsystem = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let subsystem = subsystem_from_raw(&raw.subsystem)?;
        let coupling = raw.coupling.iter().map(coupling_from_raw).collect::<Result<Vec<_>>>()?;
        let supply = supply_from_raw(&raw.supply, Some(&subsystem))?;
        Ok(Self { subsystem, coupling, supply, comment: raw.comment })
    }

    pub fn to_json_string(&self) -> String {
        let raw = RawNewSubsystem {
            comment: self.comment.clone(),
            subsystem: subsystem_to_raw(&self.subsystem),
            coupling: self
                .coupling
                .iter()
                .map(|(to, from, h)| RawCoupling { from: *from, to: *to, h: to_rows(h) })
                .collect(),
            supply: supply_to_raw(&self.supply, None),
        };
        serde_json::to_string_pretty(&raw).expect("serialization cannot fail")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// SHA-256 of the canonical JSON form without the comment, hex encoded.
pub fn canonical_hash(net: &NetworkModel) -> String {
    let mut bare = net.clone();
    bare.comment = None;
    hex::encode(Sha256::digest(bare.to_json_string().as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn round_trip_preserves_network() {
        for net in [fixtures::t3_passive(), fixtures::t4_passive(), fixtures::microgrid()] {
            let back = NetworkModel::from_json_str(&net.to_json_string()).unwrap();
            assert_eq!(back, net);
            assert_eq!(canonical_hash(&back), canonical_hash(&net));
        }
    }

    #[test]
    fn presets_and_defaults_parse() {
        let text = r#"{
            "subsystems": [{"name": "a", "A": [[-1]], "B1": [[1]], "B2": [[1]], "B3": [[1]], "C": [[1]]}],
            "supplies": [{"preset": "passive"}]
        }"#;
        let net = NetworkModel::from_json_str(text).unwrap();
        assert_eq!(net.sequence, vec![0]);
        assert!(net.validate().is_empty());
        assert_eq!(net.supplies[0].fixed().unwrap().s[(0, 0)], 0.5);
    }

    #[test]
    fn malformed_inputs_are_parse_errors() {
        assert!(matches!(NetworkModel::from_json_str("{"), Err(Error::Parse(_))));
        let ragged = r#"{"subsystems": [{"name": "a", "A": [[1, 2], [3]], "B1": [[1]], "B2": [[1]], "B3": [[1]], "C": [[1]]}], "supplies": [{"preset": "passive"}]}"#;
        assert!(matches!(NetworkModel::from_json_str(ragged), Err(Error::Parse(_))));
        let missing = r#"{"subsystems": [{"name": "a", "A": [[1]], "B1": [[1]], "B2": [[1]], "B3": [[1]], "C": [[1]]}], "supplies": []}"#;
        assert!(matches!(NetworkModel::from_json_str(missing), Err(Error::Parse(_))));
    }

    #[test]
    fn nested_row_format_for_records() {
        let rec = super::super::MessengerRecord { m: Mat::identity(2, 2), p: Mat::from_element(1, 1, 0.5) };
        let text = serde_json::to_string(&rec).unwrap();
        assert_eq!(text, r#"{"M":[[1.0,0.0],[0.0,1.0]],"P":[[0.5]]}"#);
        let back: super::super::MessengerRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rec);
    }
}
