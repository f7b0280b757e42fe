//! Affine matrix expressions and a small primal barrier solver for
//! semidefinite programs of the form
//!
//! ```text
//! minimize c'u  s.t.  F_j(u) = F_j0 + sum_k u_k F_jk >= 0,   A u = b,   |u_k| <= box
//! ```
//!
//! Sized for node-level problems (tens of variables, blocks of a few dozen
//! rows). Equalities are eliminated through an SVD null-space basis; blocks
//! and variables are equilibrated before the solve.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DVector, Dyn};

use crate::linalg::{min_eig, null_space, pinv, symmetrize, Mat};

/// Matrix whose entries are affine in the model variables.
#[derive(Debug, Clone, PartialEq)]
pub struct AffMat {
    pub constant: Mat,
    pub terms: BTreeMap<usize, Mat>,
}

impl AffMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { constant: Mat::zeros(rows, cols), terms: BTreeMap::new() }
    }

    pub fn constant(m: Mat) -> Self {
        Self { constant: m, terms: BTreeMap::new() }
    }

    pub fn rows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn cols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    fn add_term(&mut self, k: usize, m: Mat) {
        match self.terms.get_mut(&k) {
            Some(t) => *t += m,
            None => {
                self.terms.insert(k, m);
            }
        }
    }

    pub fn add(&self, o: &AffMat) -> AffMat {
        assert_eq!(self.shape(), o.shape(), "affine add shape mismatch");
        let mut out = self.clone();
        out.constant += &o.constant;
        for (&k, m) in &o.terms {
            out.add_term(k, m.clone());
        }
        out
    }

    pub fn sub(&self, o: &AffMat) -> AffMat {
        self.add(&o.scale(-1.0))
    }

    pub fn add_const(&self, m: &Mat) -> AffMat {
        let mut out = self.clone();
        out.constant += m;
        out
    }

    pub fn scale(&self, f: f64) -> AffMat {
        AffMat {
            constant: &self.constant * f,
            terms: self.terms.iter().map(|(&k, m)| (k, m * f)).collect(),
        }
    }

    /// `L * self`.
    pub fn lmul(&self, l: &Mat) -> AffMat {
        AffMat {
            constant: l * &self.constant,
            terms: self.terms.iter().map(|(&k, m)| (k, l * m)).collect(),
        }
    }

    /// `self * R`.
    pub fn rmul(&self, r: &Mat) -> AffMat {
        AffMat {
            constant: &self.constant * r,
            terms: self.terms.iter().map(|(&k, m)| (k, m * r)).collect(),
        }
    }

    pub fn t(&self) -> AffMat {
        AffMat {
            constant: self.constant.transpose(),
            terms: self.terms.iter().map(|(&k, m)| (k, m.transpose())).collect(),
        }
    }

    /// `self + self'`.
    pub fn plus_t(&self) -> AffMat {
        self.add(&self.t())
    }

    pub fn sym(&self) -> AffMat {
        self.plus_t().scale(0.5)
    }

    pub fn eval(&self, u: &[f64]) -> Mat {
        let mut out = self.constant.clone();
        for (&k, m) in &self.terms {
            out += m * u[k];
        }
        out
    }

    /// `s * I_n` for a 1x1 expression `s`.
    pub fn times_identity(&self, n: usize) -> AffMat {
        assert_eq!(self.shape(), (1, 1));
        let eye = Mat::identity(n, n);
        AffMat {
            constant: &eye * self.constant[(0, 0)],
            terms: self.terms.iter().map(|(&k, m)| (k, &eye * m[(0, 0)])).collect(),
        }
    }

    /// Same expression padded with zeros into a larger matrix at `(r0, c0)`.
    pub fn embed(&self, rows: usize, cols: usize, r0: usize, c0: usize) -> AffMat {
        AffMat::grid(
            &[r0, self.rows(), rows - r0 - self.rows()],
            &[c0, self.cols(), cols - c0 - self.cols()],
            &[vec![], vec![None, Some(self.clone()), None]],
        )
    }

    pub fn is_constant(&self) -> bool {
        self.terms.values().all(|m| m.iter().all(|v| *v == 0.0))
    }

    /// Sub-block view as a new expression.
    pub fn view(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> AffMat {
        AffMat {
            constant: self.constant.view((r0, c0), (nr, nc)).into_owned(),
            terms: self.terms.iter().map(|(&k, m)| (k, m.view((r0, c0), (nr, nc)).into_owned())).collect(),
        }
    }

    /// Assembles a grid of blocks; `None` entries are zero.
    pub fn grid(heights: &[usize], widths: &[usize], blocks: &[Vec<Option<AffMat>>]) -> AffMat {
        let rows: usize = heights.iter().sum();
        let cols: usize = widths.iter().sum();
        let mut out = AffMat::zeros(rows, cols);
        let mut r = 0;
        for (bi, &h) in heights.iter().enumerate() {
            let mut c = 0;
            for (bj, &w) in widths.iter().enumerate() {
                if let Some(Some(b)) = blocks.get(bi).and_then(|row| row.get(bj)) {
                    assert_eq!(b.shape(), (h, w), "grid block ({bi},{bj}) shape mismatch");
                    out.constant.view_mut((r, c), (h, w)).copy_from(&b.constant);
                    for (&k, m) in &b.terms {
                        let t = out.terms.entry(k).or_insert_with(|| Mat::zeros(rows, cols));
                        t.view_mut((r, c), (h, w)).copy_from(m);
                    }
                }
                c += w;
            }
            r += h;
        }
        out
    }

    /// Symmetric grid from the upper triangle (lower blocks are transposes).
    pub fn sym_grid(sizes: &[usize], upper: &[Vec<Option<AffMat>>]) -> AffMat {
        let n = sizes.len();
        let mut full: Vec<Vec<Option<AffMat>>> = vec![vec![None; n]; n];
        for i in 0..n {
            for j in i..n {
                if let Some(Some(b)) = upper.get(i).and_then(|row| row.get(j)) {
                    if i == j {
                        full[i][j] = Some(b.sym());
                    } else {
                        full[i][j] = Some(b.clone());
                        full[j][i] = Some(b.t());
                    }
                }
            }
        }
        AffMat::grid(sizes, sizes, &full)
    }
}

/// Solve status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub u: Vec<f64>,
    pub objective: f64,
    /// Smallest eigenvalue of each constraint block at `u` (unscaled).
    pub block_margins: Vec<f64>,
    pub iterations: usize,
    pub detail: String,
}

impl SdpSolution {
    pub fn value(&self, e: &AffMat) -> Mat {
        e.eval(&self.u)
    }

    pub fn scalar(&self, e: &AffMat) -> f64 {
        e.eval(&self.u)[(0, 0)]
    }
}

/// Solver settings.
#[derive(Debug, Clone)]
pub struct SdpOptions {
    pub box_bound: f64,
    pub gap_tol: f64,
    pub max_newton: usize,
    pub max_outer: usize,
    pub mu: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self { box_bound: 1e7, gap_tol: 1e-8, max_newton: 200, max_outer: 40, mu: 10.0 }
    }
}

/// Problem builder.
#[derive(Debug, Clone, Default)]
pub struct Model {
    nvars: usize,
    blocks: Vec<(String, AffMat)>,
    eqs: Vec<(Vec<(usize, f64)>, f64)>,
    objective: BTreeMap<usize, f64>,
}

impl Model {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn scalar(&mut self) -> AffMat {
        let k = self.nvars;
        self.nvars += 1;
        let mut e = AffMat::zeros(1, 1);
        e.terms.insert(k, Mat::from_element(1, 1, 1.0));
        e
    }

    /// Free `rows x cols` matrix variable.
    pub fn matrix(&mut self, rows: usize, cols: usize) -> AffMat {
        let mut e = AffMat::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                let mut m = Mat::zeros(rows, cols);
                m[(i, j)] = 1.0;
                e.terms.insert(self.nvars, m);
                self.nvars += 1;
            }
        }
        e
    }

    /// Symmetric `n x n` matrix variable.
    pub fn symmetric(&mut self, n: usize) -> AffMat {
        let mut e = AffMat::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let mut m = Mat::zeros(n, n);
                m[(i, j)] = 1.0;
                m[(j, i)] = 1.0;
                e.terms.insert(self.nvars, m);
                self.nvars += 1;
            }
        }
        e
    }

    /// Adds `e >= 0` (semidefinite); `e` must be square and symmetric.
    pub fn psd(&mut self, name: impl Into<String>, e: AffMat) {
        assert_eq!(e.rows(), e.cols(), "psd block must be square");
        if e.rows() == 0 {
            return;
        }
        self.blocks.push((name.into(), e.sym()));
    }

    /// Adds `e == 0` entrywise (upper triangle only for square symmetric use).
    pub fn equal_zero(&mut self, e: &AffMat) {
        for j in 0..e.cols() {
            for i in 0..e.rows() {
                let row: Vec<(usize, f64)> =
                    e.terms.iter().map(|(&k, m)| (k, m[(i, j)])).filter(|(_, v)| *v != 0.0).collect();
                self.eqs.push((row, -e.constant[(i, j)]));
            }
        }
    }

    /// Sets the objective to minimize a 1x1 affine expression.
    pub fn minimize(&mut self, e: &AffMat) {
        assert_eq!(e.shape(), (1, 1));
        self.objective = e.terms.iter().map(|(&k, m)| (k, m[(0, 0)])).collect();
    }

    pub fn block_names(&self) -> Vec<&str> {
        self.blocks.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn solve(&self, opts: &SdpOptions) -> SdpSolution {
        Solver::new(self, opts).run()
    }
}

struct Block {
    f0: Mat,
    g: Vec<Mat>,
}

struct Solver<'a> {
    model: &'a Model,
    opts: &'a SdpOptions,
}

struct Reduced {
    blocks: Vec<Block>,
    /// Linear inequalities `a_i' v + b_i >= 0`.
    lin_a: Vec<DVector<f64>>,
    lin_b: Vec<f64>,
    c: DVector<f64>,
    nv: usize,
    /// Map back: u = col_inv .* (w0 + Z v).
    w0: DVector<f64>,
    z: Mat,
    col: Vec<f64>,
}

impl Reduced {
    fn u_of(&self, v: &DVector<f64>) -> Vec<f64> {
        let w = &self.w0 + &self.z * v;
        w.iter().zip(&self.col).map(|(w, c)| w / c).collect()
    }

    fn degree(&self) -> f64 {
        (self.blocks.iter().map(|b| b.f0.nrows()).sum::<usize>() + self.lin_b.len()) as f64
    }
}

fn block_value(b: &Block, v: &DVector<f64>, shift: f64) -> Mat {
    let mut f = b.f0.clone();
    for (k, g) in b.g.iter().enumerate() {
        if v[k] != 0.0 {
            f += g * v[k];
        }
    }
    if shift != 0.0 {
        for i in 0..f.nrows() {
            f[(i, i)] += shift;
        }
    }
    f
}

enum Eval {
    Infeasible,
    Ok { phi: f64, grad: DVector<f64>, hess: Mat },
}

impl<'a> Solver<'a> {
    fn new(model: &'a Model, opts: &'a SdpOptions) -> Self {
        Self { model, opts }
    }

    fn fail(&self, status: SdpStatus, detail: String, it: usize) -> SdpSolution {
        SdpSolution {
            status,
            u: vec![0.0; self.model.nvars],
            objective: f64::NAN,
            block_margins: vec![],
            iterations: it,
            detail,
        }
    }

    fn reduce(&self) -> Result<Reduced, String> {
        let n = self.model.nvars;
        // Block equilibration by a diagonal congruence.
        let mut blocks: Vec<Block> = Vec::new();
        for (_, e) in &self.model.blocks {
            let d = e.rows();
            let mut r = vec![0.0_f64; d];
            let mut upd = |m: &Mat| {
                for i in 0..d {
                    for j in 0..d {
                        r[i] = r[i].max(m[(i, j)].abs());
                    }
                }
            };
            upd(&e.constant);
            for m in e.terms.values() {
                upd(m);
            }
            let s: Vec<f64> = r.iter().map(|x| if *x > 0.0 { 1.0 / x.sqrt() } else { 1.0 }).collect();
            let scale = |m: &Mat| Mat::from_fn(d, d, |i, j| m[(i, j)] * s[i] * s[j]);
            let mut g = vec![Mat::zeros(d, d); n];
            for (&k, m) in &e.terms {
                g[k] = scale(m);
            }
            blocks.push(Block { f0: scale(&e.constant), g });
        }
        // Variable equilibration.
        let mut col = vec![0.0_f64; n];
        for b in &blocks {
            for (k, g) in b.g.iter().enumerate() {
                col[k] += g.norm_squared();
            }
        }
        for (row, _) in &self.model.eqs {
            for &(k, v) in row {
                col[k] += v * v;
            }
        }
        for c in col.iter_mut() {
            *c = if *c > 0.0 { c.sqrt() } else { 1.0 };
        }
        // u_k = w_k / col_k.
        for b in blocks.iter_mut() {
            for (k, g) in b.g.iter_mut().enumerate() {
                *g /= col[k];
            }
        }
        let mut c = DVector::zeros(n);
        for (&k, v) in &self.model.objective {
            c[k] = v / col[k];
        }
        // Equality elimination.
        let ne = self.model.eqs.len();
        let (w0, z) = if ne == 0 {
            (DVector::zeros(n), Mat::identity(n, n))
        } else {
            let mut a = Mat::zeros(ne, n);
            let mut bvec = DVector::zeros(ne);
            for (r, (row, rhs)) in self.model.eqs.iter().enumerate() {
                let norm = row.iter().map(|(k, v)| (v / col[*k]).powi(2)).sum::<f64>().sqrt();
                if norm == 0.0 {
                    if rhs.abs() > 1e-12 {
                        return Err("inconsistent constant equality".into());
                    }
                    continue;
                }
                for &(k, v) in row {
                    a[(r, k)] = v / col[k] / norm;
                }
                bvec[r] = rhs / norm;
            }
            let w0 = pinv(&a) * &bvec;
            let resid = (&a * &w0 - &bvec).norm();
            if resid > 1e-8 * (1.0 + bvec.norm()) {
                return Err(format!("equality constraints are inconsistent (residual {resid:.2e})"));
            }
            (w0, null_space(&a, 1e-10))
        };
        let nv = z.ncols();
        let mut rblocks = Vec::with_capacity(blocks.len());
        for b in &blocks {
            let mut f0 = b.f0.clone();
            for k in 0..n {
                if w0[k] != 0.0 {
                    f0 += &b.g[k] * w0[k];
                }
            }
            let mut g = vec![Mat::zeros(f0.nrows(), f0.ncols()); nv];
            for (l, gl) in g.iter_mut().enumerate() {
                for k in 0..n {
                    let zk = z[(k, l)];
                    if zk != 0.0 {
                        *gl += &b.g[k] * zk;
                    }
                }
            }
            rblocks.push(Block { f0, g });
        }
        let cv = z.transpose() * &c;
        // Box |u_k| <= B  <=>  |w_k| <= B col_k.
        let mut lin_a = Vec::new();
        let mut lin_b = Vec::new();
        for k in 0..n {
            let row = DVector::from_iterator(nv, (0..nv).map(|l| z[(k, l)]));
            if row.norm() == 0.0 {
                continue;
            }
            let bound = self.opts.box_bound * col[k];
            lin_a.push(-row.clone());
            lin_b.push(bound - w0[k]);
            lin_a.push(row);
            lin_b.push(bound + w0[k]);
        }
        if lin_b.iter().any(|b| *b <= 0.0) {
            return Err("equality solution violates the variable box".into());
        }
        Ok(Reduced { blocks: rblocks, lin_a, lin_b, c: cv, nv, w0, z, col })
    }

    /// Barrier value, gradient and Hessian of
    /// `tau * c'v + t_coef * s - sum log det(F_j(v) + s I) - sum log(lin)`.
    /// In phase I the last coordinate of `x` is `s`.
    fn value_only(red: &Reduced, x: &DVector<f64>, tau: f64, phase1: bool) -> Option<f64> {
        let nv = red.nv;
        let v = x.rows(0, nv).into_owned();
        let s = if phase1 { x[nv] } else { 0.0 };
        let mut phi = if phase1 { tau * s } else { tau * red.c.dot(&v) };
        for b in &red.blocks {
            let f = block_value(b, &v, s);
            let ch = Cholesky::<f64, Dyn>::new(f)?;
            let l = ch.l_dirty();
            let logdet: f64 = (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
            if !logdet.is_finite() {
                return None;
            }
            phi -= logdet;
        }
        for (a, b0) in red.lin_a.iter().zip(&red.lin_b) {
            let val = a.dot(&v) + b0;
            if val <= 0.0 || !val.is_finite() {
                return None;
            }
            phi -= val.ln();
        }
        Some(phi)
    }

    fn evaluate(red: &Reduced, x: &DVector<f64>, tau: f64, phase1: bool) -> Eval {
        let nv = red.nv;
        let dim = if phase1 { nv + 1 } else { nv };
        let v = x.rows(0, nv).into_owned();
        let s = if phase1 { x[nv] } else { 0.0 };
        let mut phi = if phase1 { tau * s } else { tau * red.c.dot(&v) };
        let mut grad = DVector::zeros(dim);
        if phase1 {
            grad[nv] = tau;
        } else {
            grad.rows_mut(0, nv).copy_from(&(&red.c * tau));
        }
        let mut hess = Mat::zeros(dim, dim);
        for b in &red.blocks {
            let f = block_value(b, &v, s);
            let d = f.nrows();
            let Some(ch) = Cholesky::<f64, Dyn>::new(f) else {
                return Eval::Infeasible;
            };
            let l = ch.l();
            let logdet: f64 = (0..d).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
            if !logdet.is_finite() {
                return Eval::Infeasible;
            }
            phi -= logdet;
            // A_k = L^{-1} G_k L^{-T}
            let mut amats: Vec<Option<Mat>> = Vec::with_capacity(dim);
            for g in &b.g {
                if g.iter().all(|x| *x == 0.0) {
                    amats.push(None);
                    continue;
                }
                let y = l.solve_lower_triangular(g).expect("triangular solve");
                let a = l.solve_lower_triangular(&y.transpose()).expect("triangular solve");
                amats.push(Some(a));
            }
            if phase1 {
                let y = l.solve_lower_triangular(&Mat::identity(d, d)).expect("triangular solve");
                amats.push(Some(&y * y.transpose()));
            }
            for (k, ak) in amats.iter().enumerate() {
                let Some(ak) = ak else { continue };
                grad[k] -= ak.trace();
                for (m, am) in amats.iter().enumerate().skip(k) {
                    let Some(am) = am else { continue };
                    let h = ak.component_mul(am).sum();
                    hess[(k, m)] += h;
                    if m != k {
                        hess[(m, k)] += h;
                    }
                }
            }
        }
        for (a, b0) in red.lin_a.iter().zip(&red.lin_b) {
            let val = a.dot(&v) + b0;
            if val <= 0.0 || !val.is_finite() {
                return Eval::Infeasible;
            }
            phi -= val.ln();
            for k in 0..nv {
                if a[k] == 0.0 {
                    continue;
                }
                grad[k] -= a[k] / val;
                for m in 0..nv {
                    if a[m] != 0.0 {
                        hess[(k, m)] += a[k] * a[m] / (val * val);
                    }
                }
            }
        }
        Eval::Ok { phi, grad, hess }
    }

    /// Damped Newton centering; returns the new point and Newton steps used.
    fn center(&self, red: &Reduced, mut x: DVector<f64>, tau: f64, phase1: bool, stop_negative_s: bool) -> Option<(DVector<f64>, usize)> {
        let nv = red.nv;
        for it in 0..self.opts.max_newton {
            let Eval::Ok { phi, grad, hess } = Self::evaluate(red, &x, tau, phase1) else {
                return None;
            };
            let dim = grad.len();
            let scale = (0..dim).map(|i| hess[(i, i)].abs()).fold(0.0_f64, f64::max).max(1e-300);
            let mut step = None;
            for reg in [0.0, 1e-14, 1e-12, 1e-10, 1e-8] {
                let h = &hess + Mat::identity(dim, dim) * (reg * scale);
                if let Some(ch) = Cholesky::<f64, Dyn>::new(h) {
                    step = Some(-ch.solve(&grad));
                    break;
                }
            }
            let dx = step?;
            let dec2 = -grad.dot(&dx);
            if !dec2.is_finite() {
                return None;
            }
            if dec2 / 2.0 < 1e-9 {
                return Some((x, it));
            }
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..80 {
                let cand = &x + &dx * alpha;
                if let Some(pc) = Self::value_only(red, &cand, tau, phase1) {
                    if pc <= phi - 0.25 * alpha * dec2 {
                        x = cand;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                // No further progress is representable at this precision.
                return Some((x, it));
            }
            if phase1 && stop_negative_s && x[nv] < 0.0 {
                return Some((x, it));
            }
        }
        Some((x, self.opts.max_newton))
    }

    fn run(&self) -> SdpSolution {
        let red = match self.reduce() {
            Ok(r) => r,
            Err(e) => return self.fail(SdpStatus::Infeasible, e, 0),
        };
        let nv = red.nv;
        let m = red.degree();
        let mut newton = 0usize;

        // Phase I: find v with every block strictly positive definite.
        let v0 = DVector::zeros(nv);
        let worst = red
            .blocks
            .iter()
            .map(|b| min_eig(&symmetrize(&block_value(b, &v0, 0.0))))
            .fold(f64::INFINITY, f64::min);
        let mut v = v0;
        if !(worst > 0.0) || !worst.is_finite() {
            let s0 = if worst.is_finite() { -worst + 1.0 } else { 1.0 };
            let mut x = DVector::zeros(nv + 1);
            x[nv] = s0.max(1.0);
            let mut tau = 1.0 / x[nv].abs().max(1.0);
            let mut found = false;
            for _ in 0..self.opts.max_outer * 2 {
                let Some((xn, it)) = self.center(&red, x.clone(), tau, true, true) else {
                    return self.fail(SdpStatus::NumericalFailure, "phase I centering failed".into(), newton);
                };
                newton += it;
                x = xn;
                if x[nv] < 0.0 {
                    found = true;
                    break;
                }
                if x[nv] - m / tau > 0.0 {
                    return self.fail(
                        SdpStatus::Infeasible,
                        format!("phase I bound: min shift >= {:.3e}", x[nv] - m / tau),
                        newton,
                    );
                }
                if m / tau < 1e-13 {
                    break;
                }
                tau *= self.opts.mu;
            }
            if !found {
                return self.fail(
                    SdpStatus::Infeasible,
                    format!("phase I stalled at shift {:.3e}", x[nv]),
                    newton,
                );
            }
            v = x.rows(0, nv).into_owned();
        }

        // Phase II.
        let obj0 = red.c.dot(&v).abs();
        let mut tau = if red.c.norm() == 0.0 { 1.0 } else { (m / (1.0 + obj0)).max(1e-6) };
        let mut x = v;
        for _ in 0..self.opts.max_outer {
            let Some((xn, it)) = self.center(&red, x.clone(), tau, false, false) else {
                break;
            };
            newton += it;
            x = xn;
            let obj = red.c.dot(&x);
            if red.c.norm() == 0.0 || m / tau < self.opts.gap_tol * (1.0 + obj.abs()) {
                break;
            }
            tau *= self.opts.mu;
        }
        let u = red.u_of(&x);
        let block_margins =
            self.model.blocks.iter().map(|(_, e)| min_eig(&symmetrize(&e.eval(&u)))).collect::<Vec<_>>();
        let objective = self.model.objective.iter().map(|(&k, c)| c * u[k]).sum();
        SdpSolution {
            status: SdpStatus::Optimal,
            u,
            objective,
            block_margins,
            iterations: newton,
            detail: String::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_lp_through_one_by_one_blocks() {
        // minimize x s.t. x >= 2, x <= 5
        let mut m = Model::new();
        let x = m.scalar();
        m.psd("lo", x.add_const(&Mat::from_element(1, 1, -2.0)));
        m.psd("hi", x.scale(-1.0).add_const(&Mat::from_element(1, 1, 5.0)));
        m.minimize(&x);
        let sol = m.solve(&SdpOptions::default());
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.scalar(&x) - 2.0).abs() < 1e-6, "{}", sol.scalar(&x));
    }

    #[test]
    fn max_eigenvalue_minimization() {
        // minimize t s.t. t I - A >= 0  => t = lambda_max(A)
        let a = Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let mut m = Model::new();
        let t = m.scalar();
        m.psd("t-a", t.times_identity(2).add_const(&(-a.clone())));
        m.minimize(&t);
        let sol = m.solve(&SdpOptions::default());
        let want = 2.5 + 1.25_f64.sqrt();
        assert!((sol.scalar(&t) - want).abs() < 1e-6);
    }

    #[test]
    fn infeasible_is_detected() {
        let mut m = Model::new();
        let x = m.scalar();
        m.psd("lo", x.add_const(&Mat::from_element(1, 1, -3.0)));
        m.psd("hi", x.scale(-1.0).add_const(&Mat::from_element(1, 1, 1.0)));
        let sol = m.solve(&SdpOptions::default());
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    #[test]
    fn equalities_are_respected() {
        // Lyapunov: A'P + PA = -I with A = -1 => P = 0.5; require P >= 0.
        let mut m = Model::new();
        let p = m.symmetric(1);
        let a = Mat::from_element(1, 1, -1.0);
        let lyap = p.lmul(&a.transpose()).add(&p.rmul(&a)).add_const(&Mat::identity(1, 1));
        m.equal_zero(&lyap);
        m.psd("p", p.clone());
        m.minimize(&p);
        let sol = m.solve(&SdpOptions::default());
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.value(&p)[(0, 0)] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let mut m = Model::new();
        let x = m.scalar();
        m.equal_zero(&x.add_const(&Mat::from_element(1, 1, -1.0)));
        m.equal_zero(&x.add_const(&Mat::from_element(1, 1, -2.0)));
        assert_eq!(m.solve(&SdpOptions::default()).status, SdpStatus::Infeasible);
    }

    #[test]
    fn lyapunov_feasibility_for_stable_matrix() {
        let a = Mat::from_row_slice(2, 2, &[-1.0, 10.0, 0.0, -2.0]);
        let mut m = Model::new();
        let p = m.symmetric(2);
        let t = m.scalar();
        let eye = Mat::identity(2, 2);
        let lyap = p.lmul(&a.transpose()).add(&p.rmul(&a)).scale(-1.0);
        m.psd("lyap", lyap.sub(&t.times_identity(2)));
        m.psd("p-lo", p.add_const(&(-eye.clone())));
        m.psd("p-hi", p.scale(-1.0).add_const(&(eye * 100.0)));
        m.psd("t-cap", t.scale(-1.0).add_const(&Mat::from_element(1, 1, 1.0)));
        m.minimize(&t.scale(-1.0));
        let sol = m.solve(&SdpOptions::default());
        assert_eq!(sol.status, SdpStatus::Optimal);
        let pv = sol.value(&p);
        let l = -(a.transpose() * &pv + &pv * &a);
        assert!(min_eig(&l) > 0.5);
        assert!((sol.scalar(&t) - 1.0).abs() < 1e-6);
    }
}
