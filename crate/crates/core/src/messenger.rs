//! Messenger matrices: a subsystem's own dissipativity term minus the energy
//! flowing in from already-processed subsystems.
//!
//! For node `i` processed after nodes `k` (in sequence order), with
//! `N_ik = Hh_ki' + Hh_ik` and `Hh_ik = P_i (B1_i H_ik + B3_i K_ik)`:
//!
//! ```text
//! F_ik  = N_ik + sum_{m before k} F_im E_m F_km'
//! mu_c  = sum_k F_ik E_k F_ik'            (state block only)
//! M_i   = mu_s - [[mu_c, 0], [0, 0]]
//! ```
//!
//! `E_k` is the inverse of the Schur complement of `M_k` onto its state
//! block (the inverse of the leading block when the tail of `M_k` is zero).
//! The fill rows `F_ik` make the messenger matrices coincide with the block
//! LDL' pivots of the permuted network matrix.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frob, is_zero, lu_inverse, min_eig, spectral_norm, symmetrize, Mat};
use crate::model::{MessengerRecord, SubsystemDynamics, SupplyRate};

/// Disturbance block used when a feedthrough `D` is present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedthroughRule {
    /// `R + D'QD + D'S + S'D`, and `C'QD` in the off-block.
    #[default]
    Exact,
    /// `-D'QD - (D'S + S'D)` in place of `R`, off-block unchanged.
    AsPublished,
}

/// Which processed subsystems contribute to the coupling term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingScheme {
    /// Every processed subsystem reachable through coupling or fill-in.
    #[default]
    ExactFill,
    /// Only processed neighbors `j` with `H_ij` stored, without fill-in.
    NeighborOnly,
}

/// Measure used to pick one mode combination's messenger matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMeasure {
    #[default]
    MinEigenvalue,
    Frobenius,
}

/// The `(n+l) x (n+l)` corner used in place of `R`.
pub fn effective_tail(dynamics: &SubsystemDynamics, supply: &SupplyRate, rule: FeedthroughRule) -> Mat {
    match rule {
        FeedthroughRule::Exact => supply.tail(dynamics.d.as_ref()),
        FeedthroughRule::AsPublished => supply.tail_as_published(dynamics.d.as_ref()),
    }
}

/// Off-block of `mu_s` without the `-P B2` term: `C'S (+ C'QD)`.
pub fn supply_cross(dynamics: &SubsystemDynamics, supply: &SupplyRate, rule: FeedthroughRule) -> Mat {
    let ct = dynamics.c.transpose();
    let mut x = &ct * &supply.s;
    if let (FeedthroughRule::Exact, Some(d)) = (rule, dynamics.d.as_ref()) {
        x += &ct * &supply.q * d;
    }
    x
}

fn check_supply(dynamics: &SubsystemDynamics, supply: &SupplyRate) -> Result<()> {
    let d = dynamics.dims();
    if supply.q.shape() != (d.m, d.m) || supply.s.shape() != (d.m, d.l) || supply.r.shape() != (d.l, d.l) {
        return Err(Error::Dimension(format!(
            "supply does not match m={}, l={} of the subsystem",
            d.m, d.l
        )));
    }
    Ok(())
}

/// Own term
///
/// ```text
/// mu_s = [[-(A'P + PA) - (Hh_ii + Hh_ii') + C'QC,  -P B2 + C'S],
///         [*,                                      R          ]]
/// ```
///
/// with `Hh_ii = P (B1 H_ii + B3 K_ii)`.
pub fn mu_self(
    dynamics: &SubsystemDynamics,
    supply: &SupplyRate,
    p: &Mat,
    h_self: Option<&Mat>,
    k_self: Option<&Mat>,
    rule: FeedthroughRule,
) -> Result<Mat> {
    let dm = dynamics.dims();
    check_supply(dynamics, supply)?;
    if p.shape() != (dm.n, dm.n) {
        return Err(Error::Dimension(format!("P is {:?}, expected {:?}", p.shape(), (dm.n, dm.n))));
    }
    let mut a_hat = dynamics.a.clone();
    if let Some(h) = h_self {
        if h.shape() != (dm.z, dm.n) {
            return Err(Error::Dimension(format!("H_ii is {:?}", h.shape())));
        }
        a_hat += &dynamics.b1 * h;
    }
    if let Some(k) = k_self {
        if k.shape() != (dm.p, dm.n) {
            return Err(Error::Dimension(format!("K_ii is {:?}", k.shape())));
        }
        a_hat += &dynamics.b3 * k;
    }
    let xx = -(a_hat.transpose() * p + p * &a_hat) + dynamics.c.transpose() * &supply.q * &dynamics.c;
    let xw = supply_cross(dynamics, supply, rule) - p * &dynamics.b2;
    let ww = effective_tail(dynamics, supply, rule);
    Ok(symmetrize(&crate::linalg::assemble(
        &[dm.n, dm.l],
        &[dm.n, dm.l],
        &[vec![Some(xx), Some(xw.clone())], vec![Some(xw.transpose()), Some(ww)]],
    )))
}

/// Whether a messenger matrix of state size `n` has the zero-tail structure.
pub fn has_zero_tail(m: &Mat, n: usize) -> bool {
    let l = m.nrows() - n;
    l > 0 && is_zero(&m.view((n, n), (l, l)).into_owned())
}

/// Schur complement of `M` onto its leading `n x n` state block; just the
/// leading block when the tail is structurally zero.
pub fn state_schur(m: &Mat, n: usize, structured: bool) -> Result<Mat> {
    let d = m.nrows();
    let l = d - n;
    let a1 = m.view((0, 0), (n, n)).into_owned();
    if structured || l == 0 {
        return Ok(a1);
    }
    let a2 = m.view((0, n), (n, l)).into_owned();
    let a4 = m.view((n, n), (l, l)).into_owned();
    let inv = lu_inverse(&a4).ok_or_else(|| Error::SingularPivot("messenger tail block".into()))?;
    Ok(symmetrize(&(a1 - &a2 * inv * a2.transpose())))
}

/// `E = state_schur(M)^{-1}`.
pub fn state_inverse(m: &Mat, n: usize, structured: bool) -> Result<Mat> {
    let s = state_schur(m, n, structured)?;
    lu_inverse(&s)
        .map(|x| symmetrize(&x))
        .ok_or_else(|| Error::SingularPivot("messenger state block".into()))
}

/// What a processed subsystem `j` contributes to a later subsystem `i`.
/// Only products are carried: `P_j B1_j H_ji` and `P_j B3_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborInputs {
    pub index: usize,
    /// `H_ij` (coupling into `i` from `j`).
    pub h_in: Option<Mat>,
    /// `P_j B1_j H_ji` (`n_j x n_i`).
    pub pb1h: Mat,
    /// `P_j B3_j` (`n_j x p_j`).
    pub pb3: Mat,
    pub k_ij: Option<Mat>,
    pub k_ji: Option<Mat>,
    pub record: MessengerRecord,
    pub structured: bool,
    /// `F_jm` for subsystems `m` processed before `j`.
    pub fill: BTreeMap<usize, Mat>,
}

impl NeighborInputs {
    /// Builds the products from raw matrices (tests and single-process use).
    #[allow(clippy::too_many_arguments)]
    pub fn from_raw(
        index: usize,
        n_i: usize,
        h_ij: Option<Mat>,
        h_ji: Option<&Mat>,
        b1_j: &Mat,
        b3_j: &Mat,
        k_ij: Option<Mat>,
        k_ji: Option<Mat>,
        record: MessengerRecord,
        structured: bool,
        fill: BTreeMap<usize, Mat>,
    ) -> Self {
        let n_j = record.p.nrows();
        let pb1h = match h_ji {
            Some(h) => &record.p * b1_j * h,
            None => Mat::zeros(n_j, n_i),
        };
        let pb3 = &record.p * b3_j;
        Self { index, h_in: h_ij, pb1h, pb3, k_ij, k_ji, record, structured, fill }
    }

    pub fn e(&self) -> Result<Mat> {
        state_inverse(&self.record.m, self.record.p.nrows(), self.structured)
    }
}

/// Everything needed to form one subsystem's messenger matrix.
#[derive(Debug, Clone)]
pub struct MessengerInputs<'a> {
    pub dynamics: &'a SubsystemDynamics,
    pub supply: &'a SupplyRate,
    pub p: Mat,
    pub h_self: Option<Mat>,
    pub k_self: Option<Mat>,
    /// Processed subsystems, in sequence order.
    pub incoming: Vec<NeighborInputs>,
    pub rule: FeedthroughRule,
    pub scheme: CouplingScheme,
}

/// A messenger matrix together with its pieces.
#[derive(Debug, Clone)]
pub struct MessengerOutput {
    pub record: MessengerRecord,
    pub mu_s: Mat,
    /// Full-size coupling term (zero outside the state block).
    pub mu_c: Mat,
    /// Fill row `F_ik` for every processed `k` with a nonzero block.
    pub fill: BTreeMap<usize, Mat>,
    pub structured: bool,
}

/// `N_ik = (P_k B1_k H_ki + P_k B3_k K_ki)' + P_i (B1_i H_ik + B3_i K_ik)`.
pub fn coupling_block(dynamics: &SubsystemDynamics, p: &Mat, nb: &NeighborInputs) -> Result<Mat> {
    let dm = dynamics.dims();
    let n_k = nb.record.p.nrows();
    let mut hk = nb.pb1h.clone();
    if hk.shape() != (n_k, dm.n) {
        return Err(Error::Dimension(format!("P_k B1_k H_ki is {:?}", hk.shape())));
    }
    if let Some(k) = &nb.k_ji {
        if nb.pb3.ncols() != k.nrows() || k.ncols() != dm.n {
            return Err(Error::Dimension(format!("K_ki is {:?}", k.shape())));
        }
        hk += &nb.pb3 * k;
    }
    let mut inner = Mat::zeros(dm.n, n_k);
    if let Some(h) = &nb.h_in {
        if h.shape() != (dm.z, n_k) {
            return Err(Error::Dimension(format!("H_ik is {:?}", h.shape())));
        }
        inner += &dynamics.b1 * h;
    }
    if let Some(k) = &nb.k_ij {
        if k.shape() != (dm.p, n_k) {
            return Err(Error::Dimension(format!("K_ik is {:?}", k.shape())));
        }
        inner += &dynamics.b3 * k;
    }
    Ok(hk.transpose() + p * inner)
}

/// Fill row `F_ik` over the processed subsystems (sequence order).
pub fn fill_row(
    n_blocks: &[(usize, Mat)],
    incoming: &[NeighborInputs],
    scheme: CouplingScheme,
) -> Result<BTreeMap<usize, Mat>> {
    let mut out: BTreeMap<usize, Mat> = BTreeMap::new();
    let mut es: BTreeMap<usize, Mat> = BTreeMap::new();
    for (nb, (idx, nik)) in incoming.iter().zip(n_blocks) {
        debug_assert_eq!(nb.index, *idx);
        let mut f = nik.clone();
        if scheme == CouplingScheme::ExactFill {
            for (m, fim) in &out {
                if let Some(fkm) = nb.fill.get(m) {
                    f += fim * &es[m] * fkm.transpose();
                }
            }
        }
        es.insert(nb.index, nb.e()?);
        if !is_zero(&f) {
            out.insert(nb.index, f);
        }
    }
    Ok(out)
}

/// Coupling term `sum_k F_ik E_k F_ik'`, embedded in the `(n+l)` square.
pub fn mu_coupling(fill: &BTreeMap<usize, Mat>, incoming: &[NeighborInputs], n: usize, l: usize) -> Result<Mat> {
    let mut acc = Mat::zeros(n, n);
    for nb in incoming {
        if let Some(f) = fill.get(&nb.index) {
            acc += f * nb.e()? * f.transpose();
        }
    }
    let mut out = Mat::zeros(n + l, n + l);
    out.view_mut((0, 0), (n, n)).copy_from(&symmetrize(&acc));
    Ok(out)
}

/// `M_i = mu_s - mu_c`, paired with `P_i`. Positivity is not checked here.
pub fn messenger_matrix(inputs: &MessengerInputs<'_>) -> Result<MessengerOutput> {
    let dm = inputs.dynamics.dims();
    let mu_s = mu_self(
        inputs.dynamics,
        inputs.supply,
        &inputs.p,
        inputs.h_self.as_ref(),
        inputs.k_self.as_ref(),
        inputs.rule,
    )?;
    let mut used: Vec<NeighborInputs> = Vec::new();
    let mut n_blocks = Vec::new();
    for nb in &inputs.incoming {
        if inputs.scheme == CouplingScheme::NeighborOnly && nb.h_in.is_none() {
            continue;
        }
        n_blocks.push((nb.index, coupling_block(inputs.dynamics, &inputs.p, nb)?));
        used.push(nb.clone());
    }
    let fill = fill_row(&n_blocks, &used, inputs.scheme)?;
    let mu_c = mu_coupling(&fill, &used, dm.n, dm.l)?;
    let m = symmetrize(&(&mu_s - &mu_c));
    let structured = is_zero(&effective_tail(inputs.dynamics, inputs.supply, inputs.rule)) && dm.l > 0;
    Ok(MessengerOutput { record: MessengerRecord { m, p: inputs.p.clone() }, mu_s, mu_c, fill, structured })
}

/// Messenger matrix of a subsystem joining an existing network: the new
/// node is last, so every neighbor is already processed.
pub fn compositional_messenger(inputs: &MessengerInputs<'_>) -> Result<MessengerOutput> {
    messenger_matrix(inputs)
}

/// Default cap on enumerated mode combinations.
pub const COMBINATION_CAP: usize = 10_000;

/// One mode combination's inputs: the node's own mode plus one variant of
/// every processed neighbor's published products.
#[derive(Debug, Clone)]
pub struct ModeCombination {
    pub own_mode: usize,
    pub neighbor_modes: Vec<usize>,
}

/// Messenger matrices for every mode combination and the selected one.
#[derive(Debug, Clone)]
pub struct SwitchedMessenger {
    pub combinations: Vec<ModeCombination>,
    pub outputs: Vec<MessengerOutput>,
    pub selected: usize,
}

/// Enumerates all `(own mode, neighbor variant...)` combinations.
/// `variants[j]` lists the mode-resolved inputs of the `j`-th neighbor.
pub fn switched_messenger(
    modes: &[SubsystemDynamics],
    supply: &SupplyRate,
    p: &Mat,
    h_self: Option<&Mat>,
    k_self: Option<&Mat>,
    variants: &[Vec<NeighborInputs>],
    rule: FeedthroughRule,
    scheme: CouplingScheme,
    measure: SelectionMeasure,
    cap: usize,
) -> Result<SwitchedMessenger> {
    if modes.is_empty() || variants.iter().any(|v| v.is_empty()) {
        return Err(Error::Dimension("every subsystem needs at least one mode".into()));
    }
    let count = variants.iter().fold(modes.len(), |acc, v| acc.saturating_mul(v.len()));
    if count > cap {
        return Err(Error::CombinationBudget { count, cap });
    }
    let mut combinations = Vec::with_capacity(count);
    let mut outputs = Vec::with_capacity(count);
    for c in 0..count {
        let own = c % modes.len();
        let mut rest = c / modes.len();
        let mut picks = Vec::with_capacity(variants.len());
        for v in variants {
            picks.push(rest % v.len());
            rest /= v.len();
        }
        let incoming: Vec<NeighborInputs> = variants.iter().zip(&picks).map(|(v, k)| v[*k].clone()).collect();
        let inputs = MessengerInputs {
            dynamics: &modes[own],
            supply,
            p: p.clone(),
            h_self: h_self.cloned(),
            k_self: k_self.cloned(),
            incoming,
            rule,
            scheme,
        };
        outputs.push(messenger_matrix(&inputs)?);
        combinations.push(ModeCombination { own_mode: own, neighbor_modes: picks });
    }
    let score = |o: &MessengerOutput| match measure {
        SelectionMeasure::MinEigenvalue => {
            let n = o.record.p.nrows();
            if o.structured {
                min_eig(&o.record.m.view((0, 0), (n, n)).into_owned())
            } else {
                min_eig(&o.record.m)
            }
        }
        SelectionMeasure::Frobenius => frob(&o.record.m),
    };
    let mut selected = 0;
    let mut best = score(&outputs[0]);
    for (k, o) in outputs.iter().enumerate().skip(1) {
        let s = score(o);
        if s < best {
            best = s;
            selected = k;
        }
    }
    Ok(SwitchedMessenger { combinations, outputs, selected })
}

/// Lower bound `[[2 eps ||P||_2 I, 0], [0, 0]]` that absorbs any additive
/// state-matrix uncertainty with `||dA||_2 <= eps`.
pub fn robust_margin(p: &Mat, eps: f64, l: usize) -> Result<Mat> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidSupply(format!("uncertainty bound must be nonnegative, got {eps}")));
    }
    let n = p.nrows();
    if min_eig(p) <= 0.0 {
        return Err(Error::NotPositiveDefinite("P".into()));
    }
    let mut out = Mat::zeros(n + l, n + l);
    let v = 2.0 * eps * spectral_norm(p);
    for i in 0..n {
        out[(i, i)] = v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::supply_preset;

    fn s(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn passive() -> SupplyRate {
        supply_preset("passive", &[], 1, 1).unwrap()
    }

    #[test]
    fn sigma3_self_term() {
        let sub = fixtures::sigma3();
        let mu = mu_self(&sub.modes[0], &passive(), &s(0.5), Some(&s(0.2)), None, FeedthroughRule::Exact).unwrap();
        assert!((mu - Mat::from_row_slice(2, 2, &[0.8, 0.0, 0.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn zero_dynamics_self_term() {
        let z = Mat::zeros(2, 2);
        let d = SubsystemDynamics::new(z.clone(), Mat::zeros(2, 1), Mat::zeros(2, 1), Mat::zeros(2, 1), Mat::zeros(1, 2), None).unwrap();
        let sup = SupplyRate::new(Mat::zeros(1, 1), Mat::zeros(1, 1), s(1.0)).unwrap();
        let mu = mu_self(&d, &sup, &Mat::identity(2, 2), None, None, FeedthroughRule::Exact).unwrap();
        let mut want = Mat::zeros(3, 3);
        want[(2, 2)] = 1.0;
        assert_eq!(mu, want);
    }

    #[test]
    fn zero_gain_matches_open_loop() {
        let sub = fixtures::sigma1();
        let p = Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let h = Mat::from_row_slice(1, 2, &[0.5, -0.7]);
        let a = mu_self(&sub.modes[0], &passive(), &p, Some(&h), None, FeedthroughRule::Exact).unwrap();
        let b = mu_self(&sub.modes[0], &passive(), &p, Some(&h), Some(&Mat::zeros(2, 2)), FeedthroughRule::Exact).unwrap();
        assert!((a - b).norm() <= 1e-12);
    }

    #[test]
    fn structured_neighbor_coupling_term() {
        // h = 1.5, M_j = diag(3, 0) => mu_c = diag(h^2 / 3, 0)
        let rec = MessengerRecord { m: Mat::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]), p: s(1.0) };
        let nb = NeighborInputs {
            index: 0,
            h_in: None,
            pb1h: s(1.5),
            pb3: s(0.0),
            k_ij: None,
            k_ji: None,
            record: rec,
            structured: true,
            fill: BTreeMap::new(),
        };
        let sub = fixtures::stable_scalar("x", -1.0);
        let nblk = coupling_block(&sub.modes[0], &s(1.0), &nb).unwrap();
        assert_eq!(nblk, s(1.5));
        let fill = fill_row(&[(0, nblk)], std::slice::from_ref(&nb), CouplingScheme::ExactFill).unwrap();
        let mc = mu_coupling(&fill, &[nb], 1, 1).unwrap();
        assert!((mc - Mat::from_row_slice(2, 2, &[0.75, 0.0, 0.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn first_node_has_no_coupling_term() {
        let sub = fixtures::sigma3();
        let sup = passive();
        let out = messenger_matrix(&MessengerInputs {
            dynamics: &sub.modes[0],
            supply: &sup,
            p: s(0.5),
            h_self: Some(s(0.2)),
            k_self: None,
            incoming: vec![],
            rule: FeedthroughRule::Exact,
            scheme: CouplingScheme::ExactFill,
        })
        .unwrap();
        assert_eq!(out.record.m, out.mu_s);
        assert!(out.structured);
        assert!(is_zero(&out.mu_c));
    }

    #[test]
    fn robust_margin_examples() {
        assert_eq!(robust_margin(&Mat::identity(2, 2), 0.0, 1).unwrap(), Mat::zeros(3, 3));
        let b = robust_margin(&Mat::identity(2, 2), 0.1, 1).unwrap();
        let want = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![0.2, 0.2, 0.0]));
        assert!((b - want).norm() < 1e-15);
        assert!(robust_margin(&Mat::identity(2, 2), -0.1, 1).is_err());
    }

    #[test]
    fn duplicate_modes_select_the_first() {
        let sub = fixtures::sigma3();
        let modes = vec![sub.modes[0].clone(), sub.modes[0].clone()];
        let out = switched_messenger(
            &modes,
            &passive(),
            &s(0.5),
            Some(&s(0.2)),
            None,
            &[],
            FeedthroughRule::Exact,
            CouplingScheme::ExactFill,
            SelectionMeasure::MinEigenvalue,
            COMBINATION_CAP,
        )
        .unwrap();
        assert_eq!(out.outputs.len(), 2);
        assert_eq!(out.outputs[0].record, out.outputs[1].record);
        assert_eq!(out.selected, 0);
    }

    #[test]
    fn combination_cap_is_enforced() {
        let sub = fixtures::sigma3();
        let modes = vec![sub.modes[0].clone(); 3];
        let err = switched_messenger(
            &modes,
            &passive(),
            &s(0.5),
            None,
            None,
            &[],
            FeedthroughRule::Exact,
            CouplingScheme::ExactFill,
            SelectionMeasure::Frobenius,
            2,
        );
        assert!(matches!(err, Err(Error::CombinationBudget { count: 3, cap: 2 })));
    }
}
