//! Domain types: subsystems, couplings, supply rates, networks, gains and
//! messenger records.

mod io;
mod supply;

pub use io::{canonical_hash, NewSubsystemFile};
pub use supply::{supply_preset, SupplyPreset, SupplyRate, SupplyTarget};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, is_symmetric, is_zero, min_eig, Mat};

/// Dimensions `(n, z, l, p, m)`: states, coupling inputs, disturbances,
/// control inputs, outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub z: usize,
    pub l: usize,
    pub p: usize,
    pub m: usize,
}

/// One subsystem's state-space matrices:
///
/// ```text
/// dx/dt = A x + B1 v + B2 w + B3 u,   y = C x + D w
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemDynamics {
    pub a: Mat,
    pub b1: Mat,
    pub b2: Mat,
    pub b3: Mat,
    pub c: Mat,
    pub d: Option<Mat>,
}

impl SubsystemDynamics {
    /// Builds and checks a subsystem.
    pub fn new(a: Mat, b1: Mat, b2: Mat, b3: Mat, c: Mat, d: Option<Mat>) -> Result<Self> {
        let s = Self { a, b1, b2, b3, c, d };
        match s.problems().into_iter().next() {
            Some(p) => Err(Error::Dimension(p)),
            None => Ok(s),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n: self.a.nrows(),
            z: self.b1.ncols(),
            l: self.b2.ncols(),
            p: self.b3.ncols(),
            m: self.c.nrows(),
        }
    }

    /// Every dimension or finiteness defect, as readable strings.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.a.nrows();
        if !self.a.is_square() {
            out.push(format!("A is {:?}, expected square", self.a.shape()));
        }
        for (name, mat) in [("B1", &self.b1), ("B2", &self.b2), ("B3", &self.b3)] {
            if mat.nrows() != n {
                out.push(format!("{name} has {} rows, expected {n}", mat.nrows()));
            }
        }
        if self.c.ncols() != n {
            out.push(format!("C has {} columns, expected {n}", self.c.ncols()));
        }
        if let Some(d) = &self.d {
            if d.shape() != (self.c.nrows(), self.b2.ncols()) {
                out.push(format!(
                    "D is {:?}, expected {:?}",
                    d.shape(),
                    (self.c.nrows(), self.b2.ncols())
                ));
            }
        }
        let mats = [("A", &self.a), ("B1", &self.b1), ("B2", &self.b2), ("B3", &self.b3), ("C", &self.c)];
        for (name, mat) in mats {
            if !all_finite(mat) {
                out.push(format!("{name} has non-finite entries"));
            }
        }
        if let Some(d) = &self.d {
            if !all_finite(d) {
                out.push("D has non-finite entries".into());
            }
        }
        out
    }
}

/// A subsystem with one or more switching modes sharing dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsystem {
    pub name: String,
    pub modes: Vec<SubsystemDynamics>,
}

impl Subsystem {
    pub fn single(name: impl Into<String>, dynamics: SubsystemDynamics) -> Self {
        Self { name: name.into(), modes: vec![dynamics] }
    }

    pub fn switched(name: impl Into<String>, modes: Vec<SubsystemDynamics>) -> Result<Self> {
        let s = Self { name: name.into(), modes };
        match s.problems().into_iter().next() {
            Some(p) => Err(Error::Dimension(p)),
            None => Ok(s),
        }
    }

    /// Dimensions of the first mode.
    pub fn dims(&self) -> Dims {
        self.modes[0].dims()
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn is_switched(&self) -> bool {
        self.modes.len() > 1
    }

    pub fn problems(&self) -> Vec<String> {
        if self.modes.is_empty() {
            return vec![format!("subsystem `{}` has no modes", self.name)];
        }
        let mut out = Vec::new();
        let d0 = self.modes[0].dims();
        for (k, mode) in self.modes.iter().enumerate() {
            for p in mode.problems() {
                out.push(format!("subsystem `{}` mode {k}: {p}", self.name));
            }
            let dk = mode.dims();
            if dk != d0 {
                out.push(format!("subsystem `{}` mode {k} dimensions {dk:?} differ from mode 0 {d0:?}", self.name));
            }
            if mode.d.is_some() != self.modes[0].d.is_some() {
                out.push(format!("subsystem `{}` mode {k} disagrees on feedthrough presence", self.name));
            }
        }
        out
    }
}

/// Sparse block coupling `v_i = sum_j H_{i,j} x_j`, keyed by `(to, from)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CouplingMap {
    blocks: BTreeMap<(usize, usize), Mat>,
}

impl CouplingMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `H_{to,from}`; all-zero blocks are dropped.
    pub fn insert(&mut self, to: usize, from: usize, h: Mat) {
        if is_zero(&h) {
            self.blocks.remove(&(to, from));
        } else {
            self.blocks.insert((to, from), h);
        }
    }

    pub fn get(&self, to: usize, from: usize) -> Option<&Mat> {
        self.blocks.get(&(to, from))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &Mat)> {
        self.blocks.iter()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Neighbor set: `j != i` with `H_{i,j}` stored.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.blocks.keys().filter(|(to, from)| *to == i && *from != i).map(|(_, from)| *from).collect()
    }

    /// Nodes coupled to `i` in either direction.
    pub fn interacting(&self, i: usize) -> BTreeSet<usize> {
        self.blocks
            .keys()
            .filter_map(|&(to, from)| {
                if to == i && from != i {
                    Some(from)
                } else if from == i && to != i {
                    Some(to)
                } else {
                    None
                }
            })
            .collect()
    }
}

/// Sparse gain map `u_i = sum_j K_{i,j} x_j`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControllerSet {
    gains: BTreeMap<(usize, usize), Mat>,
}

impl ControllerSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `K_{i,j}`; all-zero blocks are dropped.
    pub fn insert(&mut self, i: usize, j: usize, k: Mat) {
        if is_zero(&k) {
            self.gains.remove(&(i, j));
        } else {
            self.gains.insert((i, j), k);
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&Mat> {
        self.gains.get(&(i, j))
    }

    /// Gain block or an explicit zero of size `p_i x n_j`.
    pub fn get_or_zero(&self, i: usize, j: usize, p_i: usize, n_j: usize) -> Mat {
        self.get(i, j).cloned().unwrap_or_else(|| Mat::zeros(p_i, n_j))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &Mat)> {
        self.gains.iter()
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Checks gain shapes against the network.
    pub fn problems(&self, net: &NetworkModel) -> Vec<String> {
        let mut out = Vec::new();
        let n = net.subsystems.len();
        for (&(i, j), k) in &self.gains {
            if i >= n || j >= n {
                out.push(format!("gain K[{i},{j}] references a missing subsystem"));
                continue;
            }
            let want = (net.subsystems[i].dims().p, net.subsystems[j].dims().n);
            if k.shape() != want {
                out.push(format!("gain K[{i},{j}] is {:?}, expected {want:?}", k.shape()));
            }
        }
        out
    }
}

/// Certified pair exchanged between subsystems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessengerRecord {
    #[serde(rename = "M", with = "crate::linalg::rows")]
    pub m: Mat,
    #[serde(rename = "P", with = "crate::linalg::rows")]
    pub p: Mat,
}

impl MessengerRecord {
    /// Checks that `P` is positive definite and `M` symmetric.
    pub fn check(&self) -> Result<()> {
        if !is_symmetric(&self.m) {
            return Err(Error::NotSymmetric("M".into()));
        }
        if !is_symmetric(&self.p) {
            return Err(Error::NotSymmetric("P".into()));
        }
        let tol = 1e-8 * (1.0 + self.p.norm());
        if min_eig(&self.p) <= tol {
            return Err(Error::NotPositiveDefinite("P".into()));
        }
        Ok(())
    }
}

/// Kinds of problem `validate` can report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Dimension,
    Asymmetric,
    DanglingIndex,
    InvalidSequence,
    MissingSupply,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub kind: ProblemKind,
    pub detail: String,
}

/// Outcome of `NetworkModel::validate`; empty means the network is proper.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub problems: Vec<Problem>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn count(&self, kind: ProblemKind) -> usize {
        self.problems.iter().filter(|p| p.kind == kind).count()
    }

    fn push(&mut self, kind: ProblemKind, detail: String) {
        self.problems.push(Problem { kind, detail });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.problems {
            writeln!(f, "{:?}: {}", p.kind, p.detail)?;
        }
        Ok(())
    }
}

/// Ordered subsystems, block coupling, per-subsystem targets and the
/// processing sequence (0-based indices).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub subsystems: Vec<Subsystem>,
    pub coupling: CouplingMap,
    pub supplies: Vec<SupplyTarget>,
    pub sequence: Vec<usize>,
    pub comment: Option<String>,
}

impl Default for NetworkModel {
    fn default() -> Self {
        Self::empty()
    }
}

impl NetworkModel {
    pub fn empty() -> Self {
        Self {
            subsystems: Vec::new(),
            coupling: CouplingMap::new(),
            supplies: Vec::new(),
            sequence: Vec::new(),
            comment: None,
        }
    }

    /// Builds a network with the declaration order as sequence.
    pub fn new(subsystems: Vec<Subsystem>, coupling: CouplingMap, supplies: Vec<SupplyTarget>) -> Self {
        let sequence = (0..subsystems.len()).collect();
        Self { subsystems, coupling, supplies, sequence, comment: None }
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn with_sequence(mut self, sequence: Vec<usize>) -> Self {
        self.sequence = sequence;
        self
    }

    pub fn dims(&self, i: usize) -> Dims {
        self.subsystems[i].dims()
    }

    pub fn is_switched(&self) -> bool {
        self.subsystems.iter().any(Subsystem::is_switched)
    }

    /// Lists every defect; an empty report means the network is proper.
    pub fn validate(&self) -> ValidationReport {
        let mut rep = ValidationReport::default();
        let n = self.subsystems.len();
        for s in &self.subsystems {
            for p in s.problems() {
                let kind = if p.contains("non-finite") { ProblemKind::NonFinite } else { ProblemKind::Dimension };
                rep.push(kind, p);
            }
        }
        let dims: Vec<Option<Dims>> = self.subsystems.iter().map(|s| s.modes.first().map(|m| m.dims())).collect();
        for (&(to, from), h) in self.coupling.iter() {
            if to >= n || from >= n {
                rep.push(ProblemKind::DanglingIndex, format!("coupling H[{to},{from}] references a missing subsystem"));
                continue;
            }
            if let (Some(dt), Some(df)) = (dims[to], dims[from]) {
                if h.shape() != (dt.z, df.n) {
                    rep.push(
                        ProblemKind::Dimension,
                        format!("coupling H[{to},{from}] is {:?}, expected {:?}", h.shape(), (dt.z, df.n)),
                    );
                }
            }
            if !all_finite(h) {
                rep.push(ProblemKind::NonFinite, format!("coupling H[{to},{from}] has non-finite entries"));
            }
        }
        if self.supplies.len() != n {
            rep.push(
                ProblemKind::MissingSupply,
                format!("{} supply rate(s) for {n} subsystem(s)", self.supplies.len()),
            );
        }
        for (i, sup) in self.supplies.iter().enumerate().take(n) {
            let Some(d) = dims[i] else { continue };
            if let SupplyTarget::Fixed(s) = sup {
                if s.q.shape() != (d.m, d.m) || s.s.shape() != (d.m, d.l) || s.r.shape() != (d.l, d.l) {
                    rep.push(
                        ProblemKind::Dimension,
                        format!(
                            "supply {i}: Q {:?}, S {:?}, R {:?} do not match m={}, l={}",
                            s.q.shape(),
                            s.s.shape(),
                            s.r.shape(),
                            d.m,
                            d.l
                        ),
                    );
                }
                if !is_symmetric(&s.q) {
                    rep.push(ProblemKind::Asymmetric, format!("supply {i}: Q is not symmetric"));
                }
                if !is_symmetric(&s.r) {
                    rep.push(ProblemKind::Asymmetric, format!("supply {i}: R is not symmetric"));
                }
            }
        }
        let mut seen = vec![false; n];
        let mut valid = self.sequence.len() == n;
        for &k in &self.sequence {
            if k >= n || seen[k] {
                valid = false;
            } else {
                seen[k] = true;
            }
        }
        if !valid {
            rep.push(
                ProblemKind::InvalidSequence,
                format!("sequence {:?} is not a permutation of 0..{n}", self.sequence),
            );
        }
        rep
    }

    /// Fails with the first problem when the network is not proper.
    pub fn ensure_valid(&self) -> Result<()> {
        let rep = self.validate();
        match rep.problems.first() {
            None => Ok(()),
            Some(p) => Err(Error::InvalidNetwork(format!("{} ({} problem(s) total)", p.detail, rep.problems.len()))),
        }
    }

    /// Appends a subsystem with its couplings (indices refer to the extended
    /// network, the new node being `self.len()`). Existing data is untouched.
    pub fn extend(&self, new_sub: Subsystem, new_coupling: Vec<(usize, usize, Mat)>, new_supply: SupplyTarget) -> Result<NetworkModel> {
        let new = self.subsystems.len();
        if let Some(p) = new_sub.problems().into_iter().next() {
            return Err(Error::Dimension(p));
        }
        let mut out = self.clone();
        out.subsystems.push(new_sub);
        let dn = out.dims(new);
        for (to, from, h) in new_coupling {
            if to != new && from != new {
                return Err(Error::InvalidNetwork(format!(
                    "extension block H[{to},{from}] does not involve the new subsystem {new}"
                )));
            }
            if to > new || from > new {
                return Err(Error::InvalidNetwork(format!("extension block H[{to},{from}] references a missing subsystem")));
            }
            let want = (out.dims(to).z, out.dims(from).n);
            if h.shape() != want {
                return Err(Error::Dimension(format!("extension block H[{to},{from}] is {:?}, expected {want:?}", h.shape())));
            }
            if to != from && out.coupling.get(to, from).is_some() {
                return Err(Error::InvalidNetwork(format!("coupling H[{to},{from}] already present")));
            }
            out.coupling.insert(to, from, h);
        }
        if let SupplyTarget::Fixed(s) = &new_supply {
            if s.q.shape() != (dn.m, dn.m) || s.s.shape() != (dn.m, dn.l) || s.r.shape() != (dn.l, dn.l) {
                return Err(Error::Dimension("supply of the new subsystem does not match its dimensions".into()));
            }
        }
        out.supplies.push(new_supply);
        out.sequence.push(new);
        Ok(out)
    }

    /// Total state dimension.
    pub fn total_states(&self) -> usize {
        self.subsystems.iter().map(|s| s.dims().n).sum()
    }

    /// Total disturbance dimension.
    pub fn total_disturbances(&self) -> usize {
        self.subsystems.iter().map(|s| s.dims().l).sum()
    }

    /// Number of mode combinations across the whole network.
    pub fn combination_count(&self) -> usize {
        self.subsystems.iter().fold(1usize, |acc, s| acc.saturating_mul(s.mode_count()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn t3_is_proper() {
        let net = fixtures::t3_passive();
        assert!(net.validate().is_empty(), "{}", net.validate());
    }

    #[test]
    fn wrong_width_coupling_is_reported_once() {
        let mut net = fixtures::t3_passive();
        net.coupling.insert(1, 0, Mat::from_row_slice(1, 3, &[1.0, -0.5, 0.0]));
        let rep = net.validate();
        assert_eq!(rep.problems.len(), 1, "{rep}");
        assert_eq!(rep.count(ProblemKind::Dimension), 1);
    }

    #[test]
    fn duplicate_sequence_index_is_reported() {
        let net = fixtures::t3_passive().with_sequence(vec![1, 1, 2]);
        let rep = net.validate();
        assert_eq!(rep.problems.len(), 1);
        assert_eq!(rep.count(ProblemKind::InvalidSequence), 1);
    }

    #[test]
    fn dangling_and_asymmetric_are_reported() {
        let mut net = fixtures::t3_passive();
        net.coupling.insert(7, 0, Mat::from_element(1, 2, 1.0));
        net.supplies[1] = SupplyTarget::Fixed(SupplyRate {
            q: Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            s: Mat::from_element(1, 1, 0.5),
            r: Mat::from_element(1, 1, 0.0),
        });
        let rep = net.validate();
        assert_eq!(rep.count(ProblemKind::DanglingIndex), 1);
        assert_eq!(rep.count(ProblemKind::Asymmetric), 1);
        assert_eq!(rep.count(ProblemKind::Dimension), 1);
    }

    #[test]
    fn extension_reaches_t4() {
        let t3 = fixtures::t3_passive();
        let (sub, coupling, supply) = fixtures::sigma4_parts();
        let t4 = t3.extend(sub, coupling, supply).unwrap();
        assert!(t4.validate().is_empty(), "{}", t4.validate());
        assert_eq!(t4, fixtures::t4_passive());
        assert_eq!(t4.total_states(), 6);
    }

    #[test]
    fn disconnected_extension_and_base_case() {
        let t3 = fixtures::t3_passive();
        let node = fixtures::stable_scalar("iso", -1.0);
        let passive = SupplyTarget::Fixed(supply_preset("passive", &[], 1, 1).unwrap());
        let t4 = t3.extend(node.clone(), vec![], passive.clone()).unwrap();
        assert_eq!(t4.len(), 4);
        assert!(t4.coupling.interacting(3).is_empty());
        assert!(t4.validate().is_empty());
        let one = NetworkModel::empty().extend(node, vec![], passive).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.sequence, vec![0]);
        assert!(one.validate().is_empty());
    }

    #[test]
    fn extension_rejects_bad_shapes() {
        let t3 = fixtures::t3_passive();
        let node = fixtures::stable_scalar("iso", -1.0);
        let passive = SupplyTarget::Fixed(supply_preset("passive", &[], 1, 1).unwrap());
        let err = t3.extend(node, vec![(0, 3, Mat::zeros(1, 2))], passive).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn neighbor_sets_exclude_self_and_allow_asymmetry() {
        let net = fixtures::t3_passive();
        assert_eq!(net.coupling.neighbors(0), vec![1]);
        assert_eq!(net.coupling.neighbors(1), vec![0, 2]);
        assert_eq!(net.coupling.neighbors(2), vec![1]);
        let t4 = fixtures::t4_passive();
        assert_eq!(t4.coupling.neighbors(0), vec![1, 3]);
        assert_eq!(t4.coupling.neighbors(3), vec![0, 1]);
    }
}
