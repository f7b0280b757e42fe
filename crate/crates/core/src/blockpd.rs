//! Sequential block positive-definiteness, the block Cholesky factor, the
//! state/disturbance interleaving permutation and the centralized
//! dissipativity matrix of a closed-loop network.

use crate::error::{Error, Result};
use crate::linalg::{checked_symmetric, frob, lu_inverse, min_eig, spd_inverse, symmetrize, Mat};
use crate::messenger::FeedthroughRule;
use crate::model::{ControllerSet, NetworkModel, SupplyRate};

/// Partition of a square matrix into consecutive diagonal blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockPartition {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.iter().any(|s| *s == 0) {
            return Err(Error::Dimension("block sizes must be positive".into()));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        Ok(Self { sizes, offsets })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    fn block(&self, w: &Mat, i: usize, j: usize) -> Mat {
        w.view((self.offsets[i], self.offsets[j]), (self.sizes[i], self.sizes[j])).into_owned()
    }
}

/// How a pivot is tested and inverted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PivotTest {
    /// Pivot must be positive definite; inverted in full.
    #[default]
    Strict,
    /// The trailing `l` rows form a zero tail: the leading block must be
    /// positive definite, the rest must vanish, and only the leading block is
    /// inverted.
    SemidefiniteTail(usize),
}

/// Positive-definiteness threshold `1e-8 (1 + ||W||_F)`.
pub fn eps_pd(w: &Mat) -> f64 {
    1e-8 * (1.0 + frob(w))
}

/// Structured inverse `[[a1^{-1}, 0], [0, 0]]` of a pivot with a zero tail of size `l`.
pub fn structured_inverse(m: &Mat, l: usize) -> Option<Mat> {
    let d = m.nrows();
    let n = d.checked_sub(l)?;
    let a1 = m.view((0, 0), (n, n)).into_owned();
    let inv = lu_inverse(&a1)?;
    let mut out = Mat::zeros(d, d);
    out.view_mut((0, 0), (n, n)).copy_from(&inv);
    Some(out)
}

fn pivot_inverse(m: &Mat, test: PivotTest) -> Option<Mat> {
    match test {
        PivotTest::Strict => lu_inverse(m),
        PivotTest::SemidefiniteTail(l) => structured_inverse(m, l),
    }
}

fn pivot_passes(m: &Mat, test: PivotTest, eps: f64) -> (bool, f64) {
    match test {
        PivotTest::Strict => {
            let e = min_eig(m);
            (e > eps, e)
        }
        PivotTest::SemidefiniteTail(l) => {
            let n = m.nrows() - l;
            let e = min_eig(&m.view((0, 0), (n, n)).into_owned());
            let rest = m.view((0, n), (n, l)).iter().chain(m.view((n, n), (l, l)).iter()).fold(0.0_f64, |a, v| a.max(v.abs()));
            (e > eps && rest <= eps, e)
        }
    }
}

/// Block LDL' pivots with full fill-in:
///
/// ```text
/// G_ik = W_ik - sum_{m<k} G_im M_m^{-1} G_km',   M_i = W_ii - sum_{k<i} G_ik M_k^{-1} G_ik'
/// ```
///
/// Returns the pivots and the strictly lower factors `G_ik`. Fails when a
/// pivot cannot be inverted.
pub fn block_ldl(w: &Mat, part: &BlockPartition, tests: &[PivotTest]) -> Result<(Vec<Mat>, Vec<Vec<Mat>>)> {
    let n = part.len();
    let mut pivots: Vec<Mat> = Vec::with_capacity(n);
    let mut inverses: Vec<Mat> = Vec::with_capacity(n);
    let mut g: Vec<Vec<Mat>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut row: Vec<Mat> = Vec::with_capacity(i);
        for k in 0..i {
            let mut gik = part.block(w, i, k);
            for m in 0..k {
                gik -= &row[m] * &inverses[m] * g[k][m].transpose();
            }
            row.push(gik);
        }
        let mut piv = part.block(w, i, i);
        for k in 0..i {
            piv -= &row[k] * &inverses[k] * row[k].transpose();
        }
        let piv = symmetrize(&piv);
        let test = tests.get(i).copied().unwrap_or_default();
        let inv = pivot_inverse(&piv, test)
            .ok_or_else(|| Error::SingularPivot(format!("pivot {i} is not invertible")))?;
        pivots.push(piv);
        inverses.push(inv);
        g.push(row);
    }
    Ok((pivots, g))
}

/// Outcome of the sequential test.
#[derive(Debug, Clone)]
pub struct Positivity {
    pub positive: bool,
    /// Pivots computed up to and including the first failing one.
    pub pivots: Vec<Mat>,
    /// Minimum eigenvalue of each computed pivot (leading block when structured).
    pub margins: Vec<f64>,
    pub failed_at: Option<usize>,
}

/// Row-wise positivity test of a symmetric block matrix. Stops at the
/// first pivot that fails its test.
pub fn sequential_positivity(w: &Mat, part: &BlockPartition, tests: &[PivotTest]) -> Result<Positivity> {
    if w.nrows() != part.dim() || !w.is_square() {
        return Err(Error::Dimension(format!("matrix {:?} vs partition of {}", w.shape(), part.dim())));
    }
    if !tests.is_empty() && tests.len() != part.len() {
        return Err(Error::Dimension("one pivot test per block expected".into()));
    }
    let w = checked_symmetric(w, "W")?;
    let eps = eps_pd(&w);
    let n = part.len();
    let mut pivots: Vec<Mat> = Vec::new();
    let mut inverses: Vec<Mat> = Vec::new();
    let mut g: Vec<Vec<Mat>> = Vec::new();
    let mut margins = Vec::new();
    for i in 0..n {
        let mut row: Vec<Mat> = Vec::with_capacity(i);
        for k in 0..i {
            let mut gik = part.block(&w, i, k);
            for m in 0..k {
                gik -= &row[m] * &inverses[m] * g[k][m].transpose();
            }
            row.push(gik);
        }
        let mut piv = part.block(&w, i, i);
        for k in 0..i {
            piv -= &row[k] * &inverses[k] * row[k].transpose();
        }
        let piv = symmetrize(&piv);
        let test = tests.get(i).copied().unwrap_or_default();
        let (ok, margin) = pivot_passes(&piv, test, eps);
        margins.push(margin);
        let inv = if ok { pivot_inverse(&piv, test) } else { None };
        pivots.push(piv);
        match inv {
            Some(inv) => {
                inverses.push(inv);
                g.push(row);
            }
            None => return Ok(Positivity { positive: false, pivots, margins, failed_at: Some(i) }),
        }
    }
    Ok(Positivity { positive: true, pivots, margins, failed_at: None })
}

/// Block lower-triangular `L` with `W = L L'`, built from the block LDL'
/// pivots: `L_ii = chol(M_i)`, `L_ik = G_ik L_kk^{-T}`.
pub fn block_cholesky(w: &Mat, part: &BlockPartition) -> Result<Mat> {
    let verdict = sequential_positivity(w, part, &[])?;
    if !verdict.positive {
        return Err(Error::NotPositiveDefinite("W".into()));
    }
    let w = symmetrize(w);
    let (pivots, g) = block_ldl(&w, part, &[])?;
    let mut l = Mat::zeros(w.nrows(), w.ncols());
    let mut diag: Vec<Mat> = Vec::with_capacity(part.len());
    for (i, piv) in pivots.iter().enumerate() {
        let c = piv.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite(format!("pivot {i}")))?.l();
        diag.push(c);
    }
    for i in 0..part.len() {
        let (oi, si) = (part.offset(i), part.sizes()[i]);
        l.view_mut((oi, oi), (si, si)).copy_from(&diag[i]);
        for k in 0..i {
            let (ok, sk) = (part.offset(k), part.sizes()[k]);
            // G_ik L_kk^{-T}: solve L_kk X' = G_ik'.
            let xt = diag[k]
                .solve_lower_triangular(&g[i][k].transpose())
                .ok_or_else(|| Error::SingularPivot(format!("factor {k}")))?;
            l.view_mut((oi, ok), (si, sk)).copy_from(&xt.transpose());
        }
    }
    Ok(l)
}

/// Permutation `E` with `E [x_1..x_N, w_1..w_N] = [x_1, w_1, ..., x_N, w_N]`.
pub fn interleaving_permutation(state_dims: &[usize], dist_dims: &[usize]) -> Result<Mat> {
    if state_dims.len() != dist_dims.len() {
        return Err(Error::Dimension(format!(
            "{} state sizes vs {} disturbance sizes",
            state_dims.len(),
            dist_dims.len()
        )));
    }
    let ns: usize = state_dims.iter().sum();
    let nl: usize = dist_dims.iter().sum();
    let d = ns + nl;
    let mut e = Mat::zeros(d, d);
    let (mut row, mut xo, mut wo) = (0, 0, ns);
    for (n, l) in state_dims.iter().zip(dist_dims) {
        for k in 0..*n {
            e[(row, xo + k)] = 1.0;
            row += 1;
        }
        for k in 0..*l {
            e[(row, wo + k)] = 1.0;
            row += 1;
        }
        xo += n;
        wo += l;
    }
    Ok(e)
}

/// Permutation reordering consecutive blocks of the given sizes so that
/// block `order[k]` comes `k`-th.
pub fn block_order_permutation(sizes: &[usize], order: &[usize]) -> Result<Mat> {
    let mut seen = vec![false; sizes.len()];
    if order.len() != sizes.len() || order.iter().any(|&k| k >= sizes.len() || std::mem::replace(&mut seen[k], true)) {
        return Err(Error::Dimension(format!("{order:?} is not a permutation of {} blocks", sizes.len())));
    }
    let part = BlockPartition { offsets: sizes.iter().scan(0, |acc, s| { let o = *acc; *acc += s; Some(o) }).collect(), sizes: sizes.to_vec() };
    let d = part.dim();
    let mut e = Mat::zeros(d, d);
    let mut row = 0;
    for &k in order {
        for c in 0..sizes[k] {
            e[(row, part.offset(k) + c)] = 1.0;
            row += 1;
        }
    }
    Ok(e)
}

/// Stacked closed-loop matrices of a network for one mode combination.
#[derive(Debug, Clone)]
pub struct StackedSystem {
    pub a_cl: Mat,
    pub b2: Mat,
    pub c: Mat,
    pub d: Mat,
    pub q: Mat,
    pub s: Mat,
    pub r: Mat,
    pub state_dims: Vec<usize>,
    pub dist_dims: Vec<usize>,
}

fn diag_of(blocks: Vec<Mat>) -> Mat {
    let refs: Vec<&Mat> = blocks.iter().collect();
    crate::linalg::block_diag(&refs)
}

/// Assembles `A + B1 H + B3 K`, `B2`, `C`, `D` and the block-diagonal
/// supply for the mode combination `modes`.
pub fn stack_network(net: &NetworkModel, gains: &ControllerSet, modes: &[usize], supplies: &[SupplyRate]) -> Result<StackedSystem> {
    net.ensure_valid()?;
    let nsub = net.len();
    if modes.len() != nsub || supplies.len() != nsub {
        return Err(Error::Dimension("one mode and one supply per subsystem expected".into()));
    }
    let dyns: Vec<_> = (0..nsub)
        .map(|i| {
            net.subsystems[i]
                .modes
                .get(modes[i])
                .ok_or_else(|| Error::InvalidNetwork(format!("mode {} out of range for subsystem {i}", modes[i])))
        })
        .collect::<Result<_>>()?;
    let n: Vec<usize> = dyns.iter().map(|d| d.dims().n).collect();
    let l: Vec<usize> = dyns.iter().map(|d| d.dims().l).collect();
    let ntot: usize = n.iter().sum();
    let mut offs = vec![0; nsub];
    for i in 1..nsub {
        offs[i] = offs[i - 1] + n[i - 1];
    }
    let mut a = Mat::zeros(ntot, ntot);
    for i in 0..nsub {
        let di = dyns[i];
        a.view_mut((offs[i], offs[i]), (n[i], n[i])).copy_from(&di.a);
        for j in 0..nsub {
            let mut blk = Mat::zeros(n[i], n[j]);
            if let Some(h) = net.coupling.get(i, j) {
                blk += &di.b1 * h;
            }
            if let Some(k) = gains.get(i, j) {
                if k.shape() != (di.dims().p, n[j]) {
                    return Err(Error::Dimension(format!("gain K[{i},{j}] is {:?}", k.shape())));
                }
                blk += &di.b3 * k;
            }
            let mut v = a.view_mut((offs[i], offs[j]), (n[i], n[j]));
            v += &blk;
        }
    }
    for ((i, j), _) in gains.iter() {
        if *i >= nsub || *j >= nsub {
            return Err(Error::InvalidNetwork(format!("gain K[{i},{j}] references a missing subsystem")));
        }
    }
    let d = diag_of(
        dyns.iter()
            .map(|x| x.d.clone().unwrap_or_else(|| Mat::zeros(x.dims().m, x.dims().l)))
            .collect(),
    );
    Ok(StackedSystem {
        a_cl: a,
        b2: diag_of(dyns.iter().map(|x| x.b2.clone()).collect()),
        c: diag_of(dyns.iter().map(|x| x.c.clone()).collect()),
        d,
        q: diag_of(supplies.iter().map(|s| s.q.clone()).collect()),
        s: diag_of(supplies.iter().map(|s| s.s.clone()).collect()),
        r: diag_of(supplies.iter().map(|s| s.r.clone()).collect()),
        state_dims: n,
        dist_dims: l,
    })
}

/// Centralized dissipativity matrix and verdict.
#[derive(Debug, Clone)]
pub struct GammaCheck {
    pub gamma: Mat,
    pub min_eig: f64,
    pub dissipative: bool,
}

/// `Gamma = [[C'QC - A'P - PA, C'S + C'QD - PB2], [*, R + D'QD + D'S + S'D]]`
/// for the closed loop of one mode combination. With
/// [`FeedthroughRule::AsPublished`] the disturbance block is
/// `-D'QD - (D'S + S'D)` and the off-block omits `C'QD`.
pub fn centralized_gamma(
    net: &NetworkModel,
    gains: &ControllerSet,
    p_blocks: &[Mat],
    modes: &[usize],
    supplies: &[SupplyRate],
    rule: FeedthroughRule,
) -> Result<GammaCheck> {
    let sys = stack_network(net, gains, modes, supplies)?;
    if p_blocks.len() != net.len() {
        return Err(Error::Dimension("one energy matrix per subsystem expected".into()));
    }
    for (i, p) in p_blocks.iter().enumerate() {
        if p.shape() != (sys.state_dims[i], sys.state_dims[i]) {
            return Err(Error::Dimension(format!("P[{i}] is {:?}", p.shape())));
        }
        let p = checked_symmetric(p, &format!("P[{i}]"))?;
        if spd_inverse(&p).is_none() || min_eig(&p) <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!("P[{i}]")));
        }
    }
    let p = diag_of(p_blocks.iter().map(symmetrize).collect());
    Ok(gamma_from_stack(&sys, &p, rule))
}

/// Same as [`centralized_gamma`] on an already stacked system.
pub fn gamma_from_stack(sys: &StackedSystem, p: &Mat, rule: FeedthroughRule) -> GammaCheck {
    let ct = sys.c.transpose();
    let xx = &ct * &sys.q * &sys.c - sys.a_cl.transpose() * p - p * &sys.a_cl;
    let dt = sys.d.transpose();
    let ds = &dt * &sys.s;
    let (xw, ww) = match rule {
        FeedthroughRule::Exact => (
            &ct * &sys.s + &ct * &sys.q * &sys.d - p * &sys.b2,
            &sys.r + &dt * &sys.q * &sys.d + &ds + ds.transpose(),
        ),
        FeedthroughRule::AsPublished => {
            let r = if sys.d.iter().all(|v| *v == 0.0) { sys.r.clone() } else { -(&dt * &sys.q * &sys.d) - (&ds + ds.transpose()) };
            (&ct * &sys.s - p * &sys.b2, r)
        }
    };
    let (ns, nl) = (xx.nrows(), ww.nrows());
    let gamma = symmetrize(&crate::linalg::assemble(
        &[ns, nl],
        &[ns, nl],
        &[vec![Some(xx), Some(xw.clone())], vec![Some(xw.transpose()), Some(ww)]],
    ));
    let me = min_eig(&gamma);
    let dissipative = me >= -eps_pd(&gamma);
    GammaCheck { gamma, min_eig: me, dissipative }
}
