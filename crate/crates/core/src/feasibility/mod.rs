//! Node-level semidefinite problems: analysis (find `P_i`), synthesis (find
//! `P_i` and gains), and their compositional and switched forms.
//!
//! Coupling to processed subsystems enters through one block LMI
//!
//! ```text
//! [[mu_s - margin,  F_i1 ... F_ir],
//!  [F_i1' ...,      diag(S_1 ... S_r)]] >= 0
//! ```
//!
//! where `S_k` is the state Schur complement of `M_k`. By a Schur complement
//! this is exactly `M_i - margin >= 0`. Synthesis first solves in
//! `X = P^{-1}` coordinates (with `Y = K X`), where every term is affine,
//! then refines the gains with `P` fixed.

pub mod sdp;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frob, is_zero, max_abs, min_eig, spd_inverse, spectral_norm, sym_eigenvalues, symmetrize, Mat};
use crate::messenger::{
    effective_tail, messenger_matrix, robust_margin, state_schur, supply_cross, CouplingScheme, FeedthroughRule,
    MessengerInputs, NeighborInputs, COMBINATION_CAP,
};
use crate::model::{MessengerRecord, SubsystemDynamics, SupplyRate, SupplyTarget};
use sdp::{AffMat, Model, SdpOptions, SdpStatus};

/// Published data of one processed subsystem as seen by a later one.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborData {
    pub index: usize,
    /// `H_ik`: coupling into the node from this neighbor.
    pub h_in: Option<Mat>,
    /// Distinct `(P_k B1_k H_ki, P_k B3_k)` pairs over the neighbor's modes.
    pub variants: Vec<(Mat, Mat)>,
    pub record: MessengerRecord,
    pub structured: bool,
    /// `F_km` rows of the neighbor.
    pub fill: BTreeMap<usize, Mat>,
    /// Gains `K_ik`, `K_ki` may be designed with this neighbor.
    pub interacting: bool,
}

impl NeighborData {
    fn n(&self) -> usize {
        self.record.p.nrows()
    }

    fn inputs(&self, variant: usize, k_ij: Option<Mat>, k_ji: Option<Mat>) -> NeighborInputs {
        let (pb1h, pb3) = &self.variants[variant];
        NeighborInputs {
            index: self.index,
            h_in: self.h_in.clone(),
            pb1h: pb1h.clone(),
            pb3: pb3.clone(),
            k_ij,
            k_ji,
            record: self.record.clone(),
            structured: self.structured,
            fill: self.fill.clone(),
        }
    }
}

/// Everything one subsystem knows when it solves its step.
#[derive(Debug, Clone)]
pub struct NodeProblem {
    pub index: usize,
    pub modes: Vec<SubsystemDynamics>,
    pub supply: SupplyTarget,
    pub h_self: Option<Mat>,
    /// Relevant processed subsystems, in sequence order.
    pub neighbors: Vec<NeighborData>,
}

/// Which gains a step may design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainLevel {
    None,
    SelfOnly,
    Full,
}

/// Step settings.
#[derive(Debug, Clone)]
pub struct StepOptions {
    /// LMI slack; `None` means `1e-6 (1 + ||data||)`.
    pub eps: Option<f64>,
    /// Bound on additive state-matrix uncertainty (`0` disables).
    pub robust_eps: f64,
    pub rule: FeedthroughRule,
    pub scheme: CouplingScheme,
    /// Weight of the gain-norm and trace penalties.
    pub lambda: f64,
    /// Allowed growth of a free L2 level over its minimum.
    pub rho_slack: f64,
    pub combination_cap: usize,
    pub sdp: SdpOptions,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            eps: None,
            robust_eps: 0.0,
            rule: FeedthroughRule::Exact,
            scheme: CouplingScheme::ExactFill,
            lambda: 1e-3,
            rho_slack: 1.5,
            combination_cap: COMBINATION_CAP,
            sdp: SdpOptions::default(),
        }
    }
}

/// Status of a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeasibilityStatus {
    Feasible,
    Infeasible,
    NumericalFailure,
}

/// Certified data produced by a feasible step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCertificate {
    pub p: Mat,
    pub k_self: Option<Mat>,
    /// `K_ik` for processed neighbors `k`.
    pub k_out: BTreeMap<usize, Mat>,
    /// `K_ki` for processed neighbors `k` (sent back).
    pub k_back: BTreeMap<usize, Mat>,
    /// Resolved free L2 level (`R = rho I`).
    pub rho: Option<f64>,
    pub supply: SupplyRate,
    /// Published record: a lower bound on every mode's messenger matrix.
    pub record: MessengerRecord,
    pub structured: bool,
    pub fill: BTreeMap<usize, Mat>,
}

/// Result of one step.
#[derive(Debug, Clone)]
pub struct FeasibilityOutcome {
    pub status: FeasibilityStatus,
    pub certificate: Option<StepCertificate>,
    /// Smallest eigenvalue of the published record's tested block.
    pub margin: f64,
    /// Independent re-check margin of every mode combination.
    pub combination_margins: Vec<f64>,
    pub eps: f64,
    pub level: GainLevel,
    pub detail: String,
}

impl FeasibilityOutcome {
    pub fn failed(status: FeasibilityStatus, eps: f64, level: GainLevel, detail: impl Into<String>) -> Self {
        Self {
            status,
            certificate: None,
            margin: f64::NEG_INFINITY,
            combination_margins: vec![],
            eps,
            level,
            detail: detail.into(),
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.status == FeasibilityStatus::Feasible
    }
}

// ---------------------------------------------------------------------------
// Problem data shared by all passes.

struct Combo {
    own: usize,
    picks: Vec<usize>,
}

struct Ctx<'a> {
    node: &'a NodeProblem,
    opts: &'a StepOptions,
    n: usize,
    l: usize,
    p_dim: usize,
    structured: bool,
    combos: Vec<Combo>,
    /// `(E_k, S_k)` per neighbor.
    es: Vec<(Mat, Mat)>,
    scale: f64,
    eps: f64,
}

/// The `(Q, S, R)` pieces for the node; for a free L2 target `R = rho I`
/// is added separately.
fn base_rate(supply: &SupplyTarget, m: usize, l: usize) -> SupplyRate {
    match supply {
        SupplyTarget::Fixed(s) => s.clone(),
        SupplyTarget::L2Free => SupplyRate { q: -Mat::identity(m, m), s: Mat::zeros(m, l), r: Mat::zeros(l, l) },
    }
}

impl<'a> Ctx<'a> {
    fn new(node: &'a NodeProblem, opts: &'a StepOptions) -> Result<Self> {
        let first = node.modes.first().ok_or_else(|| Error::Dimension("subsystem without modes".into()))?;
        let d = first.dims();
        for m in &node.modes {
            if m.dims() != d {
                return Err(Error::Dimension("modes disagree on dimensions".into()));
            }
        }
        let base = base_rate(&node.supply, d.m, d.l);
        if base.q.shape() != (d.m, d.m) || base.s.shape() != (d.m, d.l) || base.r.shape() != (d.l, d.l) {
            return Err(Error::Dimension(format!("supply does not match m={}, l={}", d.m, d.l)));
        }
        let structured = d.l > 0
            && !matches!(node.supply, SupplyTarget::L2Free)
            && node.modes.iter().all(|m| is_zero(&effective_tail(m, &base, opts.rule)));
        if !structured && matches!(node.supply, SupplyTarget::Fixed(_)) {
            let zero_tail = node.modes.iter().any(|m| is_zero(&effective_tail(m, &base, opts.rule)));
            if zero_tail && d.l > 0 {
                return Err(Error::Unsupported("modes disagree on whether the supply tail vanishes".into()));
            }
        }
        let mut es = Vec::with_capacity(node.neighbors.len());
        for nb in &node.neighbors {
            if nb.variants.is_empty() {
                return Err(Error::Dimension(format!("neighbor {} publishes no coupling data", nb.index)));
            }
            let s = state_schur(&nb.record.m, nb.n(), nb.structured)?;
            let e = spd_inverse(&s).ok_or_else(|| {
                Error::NotPositiveDefinite(format!("state block of messenger matrix {}", nb.index))
            })?;
            es.push((e, s));
        }
        let count = node
            .neighbors
            .iter()
            .fold(node.modes.len(), |acc, nb| acc.saturating_mul(nb.variants.len()));
        if count > opts.combination_cap {
            return Err(Error::CombinationBudget { count, cap: opts.combination_cap });
        }
        let mut combos = Vec::with_capacity(count);
        for c in 0..count {
            let own = c % node.modes.len();
            let mut rest = c / node.modes.len();
            let mut picks = Vec::new();
            for nb in &node.neighbors {
                picks.push(rest % nb.variants.len());
                rest /= nb.variants.len();
            }
            combos.push(Combo { own, picks });
        }
        let mut scale = 0.0_f64;
        for m in &node.modes {
            for x in [&m.a, &m.b1, &m.b2, &m.b3, &m.c] {
                scale = scale.max(frob(x));
            }
            if let Some(dd) = &m.d {
                scale = scale.max(frob(dd));
            }
        }
        for x in [&base.q, &base.s, &base.r] {
            scale = scale.max(frob(x));
        }
        if let Some(h) = &node.h_self {
            scale = scale.max(frob(h));
        }
        let eps = opts.eps.unwrap_or(1e-6 * (1.0 + scale));
        Ok(Self {
            node,
            opts,
            n: d.n,
            l: d.l,
            p_dim: d.p,
            structured,
            combos,
            es,
            scale: 1.0 + scale,
            eps,
        })
    }

    fn base(&self) -> SupplyRate {
        let d = self.node.modes[0].dims();
        base_rate(&self.node.supply, d.m, d.l)
    }

    fn free_rho(&self) -> bool {
        matches!(self.node.supply, SupplyTarget::L2Free)
    }

    fn switched(&self) -> bool {
        self.combos.len() > 1
    }
}

// ---------------------------------------------------------------------------
// Pass description.

#[derive(Clone)]
enum Coords {
    /// Energy matrix as variable (`None`) or fixed.
    P(Option<Mat>),
    /// Inverse coordinates with the optional robust linearization `(c, xbar)`.
    X(Option<(f64, f64)>),
}

#[derive(Clone, Default)]
struct FixedGains {
    k_self: Option<Mat>,
    k_out: BTreeMap<usize, Mat>,
    k_back: BTreeMap<usize, Mat>,
}

#[derive(Clone, Copy)]
enum Goal {
    /// Minimize the free L2 level with margin at least `floor`.
    MinRho { floor: f64 },
    /// Maximize the margin up to `cap`.
    MaxMargin { cap: f64 },
    /// Smallest gains with margin at least `floor`.
    MinGain { floor: f64 },
}

#[derive(Clone)]
struct Pass {
    coords: Coords,
    level: GainLevel,
    fixed: FixedGains,
    goal: Goal,
    rho_cap: Option<f64>,
    lower_bound: bool,
}

struct PassResult {
    p: Mat,
    gains: FixedGains,
    rho: Option<f64>,
    t: f64,
    m_lb: Option<Mat>,
}

fn konst(m: &Mat) -> AffMat {
    AffMat::constant(m.clone())
}

/// `a * mid * b` where at least one of `a`, `b` is constant.
fn prod(a: &AffMat, mid: &Mat, b: &AffMat) -> AffMat {
    if a.is_constant() {
        b.lmul(&(&a.constant * mid))
    } else if b.is_constant() {
        a.rmul(&(mid * &b.constant))
    } else {
        panic!("bilinear product in a convex pass");
    }
}

/// Factor `-Q_neg = V V'` of the negative part of `Q`.
fn neg_factor(q: &Mat) -> Mat {
    let m = q.nrows();
    if m == 0 {
        return Mat::zeros(0, 0);
    }
    let e = nalgebra::SymmetricEigen::new(symmetrize(q));
    let cols: Vec<usize> = (0..m).filter(|&k| e.eigenvalues[k] < 0.0).collect();
    let mut v = Mat::zeros(m, cols.len());
    for (c, &k) in cols.iter().enumerate() {
        let s = (-e.eigenvalues[k]).sqrt();
        for r in 0..m {
            v[(r, c)] = e.eigenvectors[(r, k)] * s;
        }
    }
    v
}

fn gain_norm_block(model: &mut Model, kappa: &AffMat, g: &AffMat) {
    let (r, c) = g.shape();
    let big = AffMat::sym_grid(&[r, c], &[vec![Some(kappa.times_identity(r)), Some(g.clone())], vec![None, Some(kappa.times_identity(c))]]);
    model.psd("gain-norm", big);
}

impl<'a> Ctx<'a> {
    fn run_pass(&self, pass: &Pass) -> Option<PassResult> {
        let (n, l) = (self.n, self.l);
        let mut model = Model::new();
        let eye_n = Mat::identity(n, n);
        let base = self.base();

        let t = model.scalar();
        let rho = if self.free_rho() { Some(model.scalar()) } else { None };

        // Energy matrix or its inverse.
        let (pmat, xmat, is_x) = match &pass.coords {
            Coords::P(Some(p)) => (konst(p), None, false),
            Coords::P(None) => {
                let p = model.symmetric(n);
                model.psd("P-lower", p.add_const(&(-&eye_n * self.eps)));
                model.psd("P-upper", p.scale(-1.0).add_const(&(&eye_n * 1e6 * self.scale)));
                (p, None, false)
            }
            Coords::X(_) => {
                let x = model.symmetric(n);
                model.psd("X-lower", x.add_const(&(-&eye_n * 1e-9)));
                model.psd("X-upper", x.scale(-1.0).add_const(&(&eye_n * 1e6)));
                (AffMat::zeros(n, n), Some(x), true)
            }
        };
        if let (Coords::X(Some((c, xbar))), Some(x)) = (&pass.coords, &xmat) {
            model.psd("X-robust-lower", x.add_const(&(-&eye_n / *c)));
            model.psd("X-robust-upper", x.scale(-1.0).add_const(&(&eye_n * *xbar)));
        }

        // Gains (Y = K X in X coordinates for self and back gains).
        let kappa = if pass.level > GainLevel::None { Some(model.scalar()) } else { None };
        let k_self = if pass.level >= GainLevel::SelfOnly {
            Some(model.matrix(self.p_dim, n))
        } else {
            pass.fixed.k_self.as_ref().map(konst)
        };
        let mut k_out: BTreeMap<usize, AffMat> = BTreeMap::new();
        let mut k_back: BTreeMap<usize, AffMat> = BTreeMap::new();
        for nb in &self.node.neighbors {
            if pass.level == GainLevel::Full && nb.interacting {
                k_out.insert(nb.index, model.matrix(self.p_dim, nb.n()));
                k_back.insert(nb.index, model.matrix(nb.variants[0].1.ncols(), n));
            } else {
                if let Some(k) = pass.fixed.k_out.get(&nb.index) {
                    k_out.insert(nb.index, konst(k));
                }
                if let Some(k) = pass.fixed.k_back.get(&nb.index) {
                    k_back.insert(nb.index, konst(k));
                }
            }
        }
        if let Some(kap) = &kappa {
            let mut all: Vec<AffMat> = Vec::new();
            all.extend(k_self.iter().filter(|k| !k.is_constant()).cloned());
            all.extend(k_out.values().filter(|k| !k.is_constant()).cloned());
            all.extend(k_back.values().filter(|k| !k.is_constant()).cloned());
            for g in &all {
                gain_norm_block(&mut model, kap, g);
            }
        }

        // Robust bound.
        let robust = self.opts.robust_eps;
        let bound_xx: Option<AffMat> = if robust > 0.0 {
            match &pass.coords {
                Coords::P(Some(p)) => Some(konst(&(&eye_n * (2.0 * robust * spectral_norm(p))))),
                Coords::P(None) => {
                    let pi = model.scalar();
                    model.psd("P-norm", pi.times_identity(n).sub(&pmat));
                    Some(pi.times_identity(n).scale(2.0 * robust))
                }
                Coords::X(Some((c, xbar))) => Some(xmat.as_ref().unwrap().scale(2.0 * robust * c * xbar)),
                Coords::X(None) => None,
            }
        } else {
            None
        };

        // Common lower bound of the messenger matrices.
        let m_lb = if pass.lower_bound {
            let d = if self.structured { n } else { n + l };
            let lb = model.symmetric(d);
            model.psd("lower-bound", lb.sub(&t.times_identity(d)));
            Some(lb)
        } else {
            None
        };

        for combo in &self.combos {
            let dy = &self.node.modes[combo.own];
            let cross = supply_cross(dy, &base, self.opts.rule);
            let mut a_h = dy.a.clone();
            if let Some(h) = &self.node.h_self {
                a_h += &dy.b1 * h;
            }
            // State block, off block, fill rows.
            let (xx, xw, fills, extra): (AffMat, AffMat, Vec<AffMat>, Option<AffMat>) = if let Some(x) = &xmat {
                let mut xx = x.rmul(&a_h.transpose()).plus_t().scale(-1.0);
                if let Some(y) = &k_self {
                    xx = xx.sub(&y.lmul(&dy.b3).plus_t());
                }
                let v = neg_factor(&base.q);
                let extra = if v.ncols() > 0 { Some(x.rmul(&(dy.c.transpose() * &v))) } else { None };
                let xw = x.rmul(&cross).add_const(&(-&dy.b2));
                let mut fills: Vec<AffMat> = Vec::new();
                for (kpos, nb) in self.node.neighbors.iter().enumerate() {
                    let (pb1h, pb3) = &nb.variants[combo.picks[kpos]];
                    let mut f = x.rmul(&pb1h.transpose());
                    if let Some(y) = k_back.get(&nb.index) {
                        f = f.add(&y.t().rmul(&pb3.transpose()));
                    }
                    let mut inner = Mat::zeros(n, nb.n());
                    if let Some(h) = &nb.h_in {
                        inner += &dy.b1 * h;
                    }
                    f = f.add_const(&inner);
                    if let Some(k) = k_out.get(&nb.index) {
                        f = f.add(&k.lmul(&dy.b3));
                    }
                    for (mpos, prev) in self.node.neighbors[..kpos].iter().enumerate() {
                        if let Some(fkm) = nb.fill.get(&prev.index) {
                            f = f.add(&fills[mpos].rmul(&(&self.es[mpos].0 * fkm.transpose())));
                        }
                    }
                    fills.push(f);
                }
                (xx, xw, fills, extra)
            } else {
                let p = &pmat;
                let mut xx = p.rmul(&a_h).plus_t().scale(-1.0);
                if let Some(k) = &k_self {
                    xx = xx.sub(&prod(p, &dy.b3, k).plus_t());
                }
                xx = xx.add_const(&(dy.c.transpose() * &base.q * &dy.c));
                let xw = p.rmul(&dy.b2).scale(-1.0).add_const(&cross);
                let mut fills: Vec<AffMat> = Vec::new();
                for (kpos, nb) in self.node.neighbors.iter().enumerate() {
                    let (pb1h, pb3) = &nb.variants[combo.picks[kpos]];
                    let mut f = konst(&pb1h.transpose());
                    if let Some(k) = k_back.get(&nb.index) {
                        f = f.add(&k.t().rmul(&pb3.transpose()));
                    }
                    if let Some(h) = &nb.h_in {
                        f = f.add(&p.rmul(&(&dy.b1 * h)));
                    }
                    if let Some(k) = k_out.get(&nb.index) {
                        f = f.add(&prod(p, &dy.b3, k));
                    }
                    for (mpos, prev) in self.node.neighbors[..kpos].iter().enumerate() {
                        if let Some(fkm) = nb.fill.get(&prev.index) {
                            f = f.add(&fills[mpos].rmul(&(&self.es[mpos].0 * fkm.transpose())));
                        }
                    }
                    fills.push(f);
                }
                (xx, xw, fills, None)
            };
            let mut xx = xx;
            if let Some(b) = &bound_xx {
                xx = xx.sub(b);
            }
            let tail_const = effective_tail(dy, &base, self.opts.rule);
            let mut tail = konst(&tail_const);
            if let Some(r) = &rho {
                tail = tail.add(&r.times_identity(l));
            }
            // Margin.
            let (xx_m, xw_m, tail_m) = match &m_lb {
                Some(lb) if self.structured => (xx.sub(lb), xw.clone(), tail.clone()),
                Some(lb) => (xx.sub(&lb.view(0, 0, n, n)), xw.sub(&lb.view(0, n, n, l)), tail.sub(&lb.view(n, n, l, l))),
                None => (xx.sub(&t.times_identity(n)), xw.clone(), tail.sub(&t.times_identity(l))),
            };
            // Assemble.
            let mut sizes = vec![n];
            let mut row0: Vec<Option<AffMat>> = vec![Some(xx_m)];
            let mut diag: Vec<AffMat> = Vec::new();
            if self.structured {
                model.equal_zero(&xw);
            } else if l > 0 {
                sizes.push(l);
                row0.push(Some(xw_m));
                diag.push(tail_m);
            }
            for (kpos, f) in fills.into_iter().enumerate() {
                sizes.push(self.node.neighbors[kpos].n());
                row0.push(Some(f));
                diag.push(konst(&self.es[kpos].1));
            }
            if let Some(e) = extra {
                sizes.push(e.cols());
                row0.push(Some(e));
                diag.push(konst(&Mat::identity(sizes[sizes.len() - 1], sizes[sizes.len() - 1])));
            }
            let k = sizes.len();
            let mut upper: Vec<Vec<Option<AffMat>>> = vec![vec![None; k]; k];
            upper[0] = row0;
            for (j, dblk) in diag.into_iter().enumerate() {
                upper[j + 1][j + 1] = Some(dblk);
            }
            let _ = is_x;
            model.psd(format!("messenger-{}", combo.own), AffMat::sym_grid(&sizes, &upper));
        }

        // Size of the storage: trace of P, or of a bound Pi >= X^{-1}.
        let size = match (&pass.coords, &xmat) {
            (Coords::P(None), _) => {
                let mut tr = AffMat::zeros(1, 1);
                for i in 0..n {
                    tr = tr.add(&pmat.view(i, i, 1, 1));
                }
                Some(tr.scale(1.0 / n as f64))
            }
            (Coords::X(_), Some(x)) => {
                let pi = model.symmetric(n);
                let big = AffMat::sym_grid(&[n, n], &[vec![Some(pi.clone()), Some(konst(&eye_n))], vec![None, Some(x.clone())]]);
                model.psd("inverse-bound", big);
                let mut tr = AffMat::zeros(1, 1);
                for i in 0..n {
                    tr = tr.add(&pi.view(i, i, 1, 1));
                }
                Some(tr.scale(1.0 / n as f64))
            }
            _ => None,
        };

        // Objective.
        let lam = self.opts.lambda;
        let mut obj = AffMat::zeros(1, 1);
        let add = |obj: &mut AffMat, e: &Option<AffMat>, w: f64| {
            if let Some(e) = e {
                *obj = obj.add(&e.scale(w));
            }
        };
        match pass.goal {
            Goal::MinRho { floor } => {
                model.psd("margin-floor", t.add_const(&Mat::from_element(1, 1, -floor)));
                obj = obj.add(rho.as_ref().expect("free L2 level"));
            }
            Goal::MaxMargin { cap } => {
                model.psd("margin-cap", t.scale(-1.0).add_const(&Mat::from_element(1, 1, cap)));
                obj = obj.sub(&t);
            }
            Goal::MinGain { floor } => {
                model.psd("margin-floor", t.add_const(&Mat::from_element(1, 1, -floor)));
                add(&mut obj, &kappa, 1.0);
                add(&mut obj, &size, 1.0);
                add(&mut obj, &rho, lam);
            }
        }
        if let (Some(r), Some(rc), false) = (&rho, pass.rho_cap, matches!(pass.goal, Goal::MinRho { .. })) {
            model.psd("rho-cap", r.scale(-1.0).add_const(&Mat::from_element(1, 1, rc)));
        }
        model.minimize(&obj);
        let sol = model.solve(&self.opts.sdp);
        log::debug!(
            "node {} level {:?}: {:?} after {} Newton steps",
            self.node.index,
            pass.level,
            sol.status,
            sol.iterations
        );
        if sol.status != SdpStatus::Optimal {
            log::debug!("node {} pass failed: {}", self.node.index, sol.detail);
            return None;
        }
        let tv = sol.scalar(&t);
        let rho_v = rho.as_ref().map(|r| sol.scalar(r));
        let (p, gains) = if let Some(x) = &xmat {
            let xv = symmetrize(&sol.value(x));
            let p = spd_inverse(&xv)?;
            let mut g = FixedGains::default();
            if let Some(y) = &k_self {
                g.k_self = Some(sol.value(y) * &p);
            }
            for (k, y) in &k_back {
                g.k_back.insert(*k, sol.value(y) * &p);
            }
            for (k, kk) in &k_out {
                g.k_out.insert(*k, sol.value(kk));
            }
            (p, g)
        } else {
            let p = symmetrize(&sol.value(&pmat));
            let mut g = FixedGains::default();
            g.k_self = k_self.as_ref().map(|k| sol.value(k));
            for (k, kk) in &k_out {
                g.k_out.insert(*k, sol.value(kk));
            }
            for (k, kk) in &k_back {
                g.k_back.insert(*k, sol.value(kk));
            }
            (p, g)
        };
        let m_lb = m_lb.as_ref().map(|lb| symmetrize(&sol.value(lb)));
        Some(PassResult { p, gains, rho: rho_v, t: tv, m_lb })
    }

    /// Independent re-check through the messenger module. Returns the
    /// certificate, the published record's margin and per-combination margins.
    fn certify(&self, res: &PassResult) -> Result<(StepCertificate, f64, Vec<f64>)> {
        let (n, l) = (self.n, self.l);
        let d0 = self.node.modes[0].dims();
        let supply = match &self.node.supply {
            SupplyTarget::Fixed(s) => s.clone(),
            SupplyTarget::L2Free => SupplyTarget::L2Free.resolve(d0.m, d0.l, res.rho)?,
        };
        let bound = if self.opts.robust_eps > 0.0 {
            robust_margin(&res.p, self.opts.robust_eps, l)?
        } else {
            Mat::zeros(n + l, n + l)
        };
        let mut outputs = Vec::new();
        for combo in &self.combos {
            let incoming: Vec<NeighborInputs> = self
                .node
                .neighbors
                .iter()
                .enumerate()
                .map(|(kpos, nb)| {
                    nb.inputs(
                        combo.picks[kpos],
                        res.gains.k_out.get(&nb.index).cloned(),
                        res.gains.k_back.get(&nb.index).cloned(),
                    )
                })
                .collect();
            let out = messenger_matrix(&MessengerInputs {
                dynamics: &self.node.modes[combo.own],
                supply: &supply,
                p: res.p.clone(),
                h_self: self.node.h_self.clone(),
                k_self: res.gains.k_self.clone(),
                incoming,
                rule: self.opts.rule,
                scheme: self.opts.scheme,
            })?;
            outputs.push(out);
        }
        let fill = outputs[0].fill.clone();
        for o in &outputs[1..] {
            let same = o.fill.len() == fill.len()
                && o.fill.iter().all(|(k, f)| fill.get(k).map(|g| (f - g).norm() <= 1e-12 * (1.0 + g.norm())).unwrap_or(false));
            if !same {
                return Err(Error::Unsupported(
                    "published coupling rows would depend on the switching mode".into(),
                ));
            }
        }
        let tested = |m: &Mat| -> f64 {
            if self.structured {
                min_eig(&m.view((0, 0), (n, n)).into_owned())
            } else {
                min_eig(m)
            }
        };
        let published = match &res.m_lb {
            Some(lb) if self.structured => {
                let mut m = Mat::zeros(n + l, n + l);
                m.view_mut((0, 0), (n, n)).copy_from(lb);
                m
            }
            Some(lb) => lb.clone(),
            None => symmetrize(&(&outputs[0].record.m - &bound)),
        };
        let mut combo_margins = Vec::new();
        for o in &outputs {
            let diff = symmetrize(&(&o.record.m - &bound - &published));
            let dm = if self.structured {
                // Off-block must vanish; the tail is zero by construction.
                let off = max_abs(&o.record.m.view((0, n), (n, l)).into_owned());
                let e = min_eig(&diff.view((0, 0), (n, n)).into_owned());
                if off > 1e-6 * self.scale {
                    -off
                } else {
                    e
                }
            } else {
                min_eig(&diff)
            };
            combo_margins.push(dm);
        }
        let margin = tested(&published);
        let cert = StepCertificate {
            p: res.p.clone(),
            k_self: res.gains.k_self.clone(),
            k_out: res.gains.k_out.clone(),
            k_back: res.gains.k_back.clone(),
            rho: res.rho,
            supply,
            record: MessengerRecord { m: published, p: res.p.clone() },
            structured: self.structured,
            fill,
        };
        Ok((cert, margin, combo_margins))
    }

    fn accept(&self, res: &PassResult, level: GainLevel) -> Result<Option<FeasibilityOutcome>> {
        if min_eig(&res.p) < self.eps * 0.5 {
            return Ok(None);
        }
        let (cert, margin, combo) = self.certify(res)?;
        let combo_ok = combo.iter().all(|m| *m >= -1e-7 * self.scale);
        if margin >= self.eps && combo_ok {
            return Ok(Some(FeasibilityOutcome {
                status: FeasibilityStatus::Feasible,
                certificate: Some(cert),
                margin,
                combination_margins: combo,
                eps: self.eps,
                level,
                detail: String::new(),
            }));
        }
        log::debug!("node {} rejected: margin {margin:.3e}, combos {combo:?}", self.node.index);
        Ok(None)
    }

    fn margin_cap(&self) -> f64 {
        self.scale
    }

    fn rho_cap(&self, pass: &Pass) -> Option<f64> {
        if !self.free_rho() {
            return None;
        }
        let mut p = pass.clone();
        // Margins in inverse coordinates are scaled by the storage, so only
        // strict feasibility is asked there.
        let floor = if matches!(pass.coords, Coords::X(_)) { 0.0 } else { 2.0 * self.eps };
        p.goal = Goal::MinRho { floor };
        p.lower_bound = false;
        let r = self.run_pass(&p)?;
        let rho = r.rho?;
        Some(rho * self.opts.rho_slack + self.eps)
    }

    /// Largest margin, then the smallest storage and gains keeping half of it.
    fn two_stage(&self, pass: &Pass) -> Option<PassResult> {
        let first = self.run_pass(pass)?;
        if first.t <= 0.0 {
            return Some(first);
        }
        let floor = match pass.coords {
            Coords::X(_) => 0.5 * first.t,
            Coords::P(_) => (0.5 * first.t).max(first.t.min(2.0 * self.eps)),
        };
        let mut small = pass.clone();
        small.goal = Goal::MinGain { floor };
        match self.run_pass(&small) {
            Some(r) if r.t >= floor * (1.0 - 1e-6) => Some(r),
            _ => Some(first),
        }
    }

    fn solve(&self, level: GainLevel) -> Result<FeasibilityOutcome> {
        let lb = self.switched();
        let cap = self.margin_cap();
        if level == GainLevel::None {
            let mut pass = Pass {
                coords: Coords::P(None),
                level,
                fixed: FixedGains::default(),
                goal: Goal::MaxMargin { cap },
                rho_cap: None,
                lower_bound: lb,
            };
            if self.free_rho() {
                match self.rho_cap(&pass) {
                    Some(rc) => pass.rho_cap = Some(rc),
                    None => return Ok(FeasibilityOutcome::failed(FeasibilityStatus::Infeasible, self.eps, level, "no storage certifies the step")),
                }
            }
            return Ok(match self.two_stage(&pass) {
                Some(res) => self.accept(&res, level)?.unwrap_or_else(|| {
                    FeasibilityOutcome::failed(FeasibilityStatus::Infeasible, self.eps, level, format!("best margin {:.3e} below slack", res.t))
                }),
                None => FeasibilityOutcome::failed(FeasibilityStatus::Infeasible, self.eps, level, "no storage certifies the step"),
            });
        }

        // Inverse coordinates: find a storage and gains.
        let mut xpass = Pass {
            coords: Coords::X(None),
            level,
            fixed: FixedGains::default(),
            goal: Goal::MaxMargin { cap },
            rho_cap: None,
            lower_bound: false,
        };
        if self.free_rho() {
            match self.rho_cap(&xpass) {
                Some(rc) => xpass.rho_cap = Some(rc),
                None => return Ok(FeasibilityOutcome::failed(FeasibilityStatus::Infeasible, self.eps, level, "no controller found")),
            }
        }
        let Some(mut xres) = self.two_stage(&xpass) else {
            return Ok(FeasibilityOutcome::failed(FeasibilityStatus::Infeasible, self.eps, level, "no controller found"));
        };
        if xres.t <= 0.0 {
            return Ok(FeasibilityOutcome::failed(
                FeasibilityStatus::Infeasible,
                self.eps,
                level,
                format!("best margin {:.3e} in inverse coordinates", xres.t),
            ));
        }
        if self.opts.robust_eps > 0.0 {
            let ev = sym_eigenvalues(&spd_inverse(&xres.p).unwrap_or_else(|| Mat::identity(self.n, self.n)));
            let (lo, hi) = (ev[0], ev[ev.len() - 1]);
            let mut rp = xpass.clone();
            rp.coords = Coords::X(Some((2.0 / lo, 2.0 * hi)));
            match self.two_stage(&rp) {
                Some(r) if r.t > 0.0 => xres = r,
                _ => {
                    return Ok(FeasibilityOutcome::failed(
                        FeasibilityStatus::Infeasible,
                        self.eps,
                        level,
                        "no controller meets the robustness margin",
                    ))
                }
            }
        }
        // Gains with the storage fixed, then the storage with gains fixed.
        let gpass = Pass {
            coords: Coords::P(Some(xres.p.clone())),
            level,
            fixed: FixedGains::default(),
            goal: Goal::MaxMargin { cap },
            rho_cap: xpass.rho_cap,
            lower_bound: lb,
        };
        let best = self.two_stage(&gpass).filter(|r| r.t >= self.eps);
        let candidate = best.unwrap_or(PassResult { p: xres.p.clone(), gains: xres.gains.clone(), rho: xres.rho, t: xres.t, m_lb: None });
        if let Some(out) = self.accept(&candidate, level)? {
            return Ok(out);
        }
        // Fallback: storage re-solve with the recovered gains.
        let ppass = Pass {
            coords: Coords::P(None),
            level: GainLevel::None,
            fixed: candidate.gains.clone(),
            goal: Goal::MaxMargin { cap },
            rho_cap: xpass.rho_cap,
            lower_bound: lb,
        };
        if let Some(r) = self.run_pass(&ppass) {
            if let Some(out) = self.accept(&r, level)? {
                return Ok(out);
            }
        }
        Ok(FeasibilityOutcome::failed(
            FeasibilityStatus::NumericalFailure,
            self.eps,
            level,
            "inverse-coordinate solution could not be certified",
        ))
    }
}

/// Solves one step at a fixed gain level.
pub fn solve_step(node: &NodeProblem, level: GainLevel, opts: &StepOptions) -> Result<FeasibilityOutcome> {
    let ctx = Ctx::new(node, opts)?;
    ctx.solve(level)
}

/// Largest `t` for which the step LMI, with `t I` taken off its state and
/// disturbance blocks, holds at the given `P_i` and `K_ii`. The sign agrees
/// with the smallest eigenvalue of the messenger matrix. Returns `-inf`
/// when the LMI is infeasible for every `t`.
pub fn embedded_margin(node: &NodeProblem, p: &Mat, k_self: Option<&Mat>, opts: &StepOptions) -> Result<f64> {
    if matches!(node.supply, SupplyTarget::L2Free) {
        return Err(Error::Unsupported("embedded margin needs a fixed supply".into()));
    }
    let ctx = Ctx::new(node, opts)?;
    let pass = Pass {
        coords: Coords::P(Some(p.clone())),
        level: GainLevel::None,
        fixed: FixedGains { k_self: k_self.cloned(), ..FixedGains::default() },
        goal: Goal::MaxMargin { cap: 1e3 * ctx.scale },
        rho_cap: None,
        lower_bound: false,
    };
    Ok(ctx.run_pass(&pass).map_or(f64::NEG_INFINITY, |r| r.t))
}

/// Analysis step: find `P_i` only.
pub fn solve_analysis_step(node: &NodeProblem, opts: &StepOptions) -> Result<FeasibilityOutcome> {
    solve_step(node, GainLevel::None, opts)
}

/// Synthesis step: tries the self gain alone, then all gains with
/// interacting processed neighbors.
pub fn solve_synthesis_step(node: &NodeProblem, opts: &StepOptions) -> Result<FeasibilityOutcome> {
    let ctx = Ctx::new(node, opts)?;
    let first = ctx.solve(GainLevel::SelfOnly)?;
    if first.is_feasible() || !node.neighbors.iter().any(|n| n.interacting) {
        return Ok(first);
    }
    ctx.solve(GainLevel::Full)
}

/// Compositional step for a node joining a certified network (all of its
/// neighbors are processed).
pub fn solve_compositional_step(node: &NodeProblem, opts: &StepOptions) -> Result<FeasibilityOutcome> {
    solve_synthesis_step(node, opts)
}

/// Switched step: one storage and one gain set for every mode combination.
pub fn solve_switched_step(node: &NodeProblem, opts: &StepOptions) -> Result<FeasibilityOutcome> {
    solve_synthesis_step(node, opts)
}
