//! Small dense semidefinite programs in linear-matrix-inequality form.
//!
//! A [`ConicProblem`] maximizes `cᵀv` subject to a list of blocks
//! `F₀ + Σ_k v_k F_k ⪰ 0` and, optionally, a contiguous group of variables
//! constrained to the probability simplex. The simplex group is eliminated
//! (last coordinate expressed through the others) before the problem is
//! handed to the interior-point routine, which works on the standard pair
//!
//! ```text
//! primal:  min ⟨C, X⟩  s.t. ⟨A_i, X⟩ = b_i,  X ⪰ 0
//! dual:    max bᵀy     s.t. S = C − Σ y_i A_i ⪰ 0
//! ```
//!
//! with a Mehrotra predictor-corrector on the HKM search direction.
//! Coefficient matrices are stored as short sums `Σ s_k u_k u_kᵀ`; every
//! coefficient in the sensor-selection programs is rank one or two, which
//! keeps the Schur-complement assembly at `O(T²)` per block.

use std::ops::Range;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::matrix::symmetrize;

/// Coefficient of one variable inside one block.
#[derive(Clone, Debug)]
pub enum Coef {
    /// `Σ s_k u_k u_kᵀ`.
    LowRank(Vec<(f64, DVector<f64>)>),
    Dense(DMatrix<f64>),
}

impl Coef {
    pub fn rank_one(scale: f64, u: DVector<f64>) -> Self {
        Coef::LowRank(vec![(scale, u)])
    }

    /// `scale · I_d`.
    pub fn scaled_identity(d: usize, scale: f64) -> Self {
        Coef::LowRank((0..d).map(|k| (scale, unit(d, k))).collect())
    }

    /// Symmetric unit coefficient for entry `(k, l)` of a matrix variable
    /// placed at `offset` inside a block of order `d`.
    pub fn sym_unit(d: usize, offset: usize, k: usize, l: usize, scale: f64) -> Self {
        if k == l {
            Coef::rank_one(scale, unit(d, offset + k))
        } else {
            let (ek, el) = (unit(d, offset + k), unit(d, offset + l));
            Coef::LowRank(vec![(0.5 * scale, &ek + &el), (-0.5 * scale, ek - el)])
        }
    }

    fn terms(&self) -> Vec<(f64, DVector<f64>)> {
        match self {
            Coef::LowRank(t) => t.clone(),
            Coef::Dense(m) => {
                let eig = SymmetricEigen::new(symmetrize(m));
                let cutoff = 1e-14 * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
                (0..eig.eigenvalues.len())
                    .filter(|&i| eig.eigenvalues[i].abs() > cutoff)
                    .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()))
                    .collect()
            }
        }
    }
}

pub(crate) fn unit(d: usize, k: usize) -> DVector<f64> {
    let mut v = DVector::zeros(d);
    v[k] = 1.0;
    v
}

/// `constant + Σ v_k coef_k ⪰ 0`.
#[derive(Clone, Debug)]
pub struct LmiBlock {
    pub label: String,
    pub constant: DMatrix<f64>,
    pub terms: Vec<(usize, Coef)>,
}

impl LmiBlock {
    pub fn new(label: impl Into<String>, constant: DMatrix<f64>) -> Self {
        Self {
            label: label.into(),
            constant,
            terms: Vec::new(),
        }
    }

    pub fn with(mut self, var: usize, coef: Coef) -> Self {
        self.terms.push((var, coef));
        self
    }

    pub fn push(&mut self, var: usize, coef: Coef) {
        self.terms.push((var, coef));
    }

    pub fn order(&self) -> usize {
        self.constant.nrows()
    }

    /// Block value at a point.
    pub fn evaluate(&self, v: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (var, coef) in &self.terms {
            match coef {
                Coef::LowRank(t) => {
                    for (s, u) in t {
                        out += u * u.transpose() * (s * v[*var]);
                    }
                }
                Coef::Dense(m) => out += m * v[*var],
            }
        }
        symmetrize(&out)
    }
}

/// Linear objective over LMI blocks, optionally with a simplex group.
#[derive(Clone, Debug)]
pub struct ConicProblem {
    pub num_vars: usize,
    /// Maximized.
    pub objective: Vec<f64>,
    pub blocks: Vec<LmiBlock>,
    pub simplex: Option<Range<usize>>,
}

impl ConicProblem {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            blocks: Vec::new(),
            simplex: None,
        }
    }

    pub fn add_block(&mut self, block: LmiBlock) {
        self.blocks.push(block);
    }

    /// Smallest eigenvalue over all blocks at `v` (block feasibility margin).
    pub fn min_block_eigenvalue(&self, v: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| SymmetricEigen::new(b.evaluate(v)).eigenvalues.min())
            .fold(f64::INFINITY, f64::min)
    }

    fn validate(&self) -> Result<()> {
        if self.objective.len() != self.num_vars {
            return Err(Error::Dimension {
                context: "objective length",
                expected: self.num_vars,
                found: self.objective.len(),
            });
        }
        if let Some(r) = &self.simplex {
            if r.is_empty() || r.end > self.num_vars {
                return Err(Error::InvalidInput(format!("bad simplex range {r:?}")));
            }
        }
        for b in &self.blocks {
            let d = b.order();
            if b.constant.ncols() != d || d == 0 {
                return Err(Error::InvalidInput(format!(
                    "block '{}' constant must be square",
                    b.label
                )));
            }
            for (var, coef) in &b.terms {
                if *var >= self.num_vars {
                    return Err(Error::InvalidInput(format!(
                        "block '{}' references variable {var}",
                        b.label
                    )));
                }
                let ok = match coef {
                    Coef::LowRank(t) => t.iter().all(|(_, u)| u.len() == d),
                    Coef::Dense(m) => m.nrows() == d && m.ncols() == d,
                };
                if !ok {
                    return Err(Error::Dimension {
                        context: "coefficient order",
                        expected: d,
                        found: 0,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 150,
            step_fraction: 0.98,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Stalled with residuals within 1e3 × tolerance.
    AlmostOptimal,
    MaxIterations,
    NumericalError,
    /// The LMI system appears to have no feasible point (dual iterates diverge).
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::AlmostOptimal => "almost_optimal",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::NumericalError => "numerical_error",
            SolveStatus::Infeasible => "infeasible",
        }
    }

    pub fn is_usable(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::AlmostOptimal)
    }
}

#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub vars: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub relative_gap: f64,
    pub solve_time_ms: f64,
}

// ---------------------------------------------------------------------------
// standard-form data

struct StdBlock {
    c: DMatrix<f64>,
    /// Columns `u_k`; `owner[k]` is the variable, `scale[k]` is `s_k` of `A_i = Σ s u uᵀ`.
    w: DMatrix<f64>,
    owner: Vec<usize>,
    scale: Vec<f64>,
}

impl StdBlock {
    fn dim(&self) -> usize {
        self.c.nrows()
    }

    /// `Σ_i y_i A_i`.
    fn combine(&self, y: &[f64]) -> DMatrix<f64> {
        let weights = DVector::from_iterator(
            self.owner.len(),
            self.owner.iter().zip(&self.scale).map(|(&o, &s)| s * y[o]),
        );
        let scaled = DMatrix::from_fn(self.w.nrows(), self.w.ncols(), |r, c| {
            self.w[(r, c)] * weights[c]
        });
        symmetrize(&(scaled * self.w.transpose()))
    }

    /// Adds `⟨A_i, K⟩` into `out[i]`.
    fn apply_adjoint(&self, k: &DMatrix<f64>, out: &mut [f64]) {
        let kw = k * &self.w;
        for col in 0..self.w.ncols() {
            let val = self.w.column(col).dot(&kw.column(col));
            out[self.owner[col]] += self.scale[col] * val;
        }
    }
}

struct Reduced {
    /// Map reduced → original variable, with simplex elimination.
    keep: Vec<usize>,
    eliminated: Option<(usize, Vec<usize>)>,
    b: Vec<f64>,
    objective_offset: f64,
    blocks: Vec<StdBlock>,
}

fn reduce(problem: &ConicProblem) -> Reduced {
    let n = problem.num_vars;
    let (eliminated, simplex_members) = match &problem.simplex {
        Some(r) => (Some(r.end - 1), r.clone().collect::<Vec<_>>()),
        None => (None, Vec::new()),
    };
    let keep: Vec<usize> = (0..n).filter(|v| Some(*v) != eliminated).collect();
    let mut position = vec![usize::MAX; n];
    for (i, &v) in keep.iter().enumerate() {
        position[v] = i;
    }
    let others: Vec<usize> = simplex_members
        .iter()
        .copied()
        .filter(|v| Some(*v) != eliminated)
        .collect();

    let mut b: Vec<f64> = keep.iter().map(|&v| problem.objective[v]).collect();
    let mut objective_offset = 0.0;
    if let Some(last) = eliminated {
        let c_last = problem.objective[last];
        objective_offset = c_last;
        for &o in &others {
            b[position[o]] -= c_last;
        }
    }

    let mut blocks = Vec::new();
    let mut push_block = |constant: DMatrix<f64>, terms: Vec<(usize, f64, DVector<f64>)>| {
        // normalize the block so that all of its data has unit scale
        let scale = terms
            .iter()
            .map(|(_, s, u)| s.abs() * u.norm_squared())
            .chain(std::iter::once(constant.amax()))
            .fold(1e-300, f64::max);
        let norm = if scale > 1.0 { 1.0 / scale } else { 1.0 };
        let d = constant.nrows();
        let t = terms.len();
        let mut w = DMatrix::zeros(d, t);
        let mut owner = Vec::with_capacity(t);
        let mut sc = Vec::with_capacity(t);
        for (k, (var, s, u)) in terms.into_iter().enumerate() {
            w.set_column(k, &u);
            owner.push(var);
            // S = C − Σ y A  with  A = −coef
            sc.push(-s * norm);
        }
        blocks.push(StdBlock {
            c: symmetrize(&(constant * norm)),
            w,
            owner,
            scale: sc,
        });
    };

    for block in &problem.blocks {
        let mut constant = block.constant.clone();
        let mut terms: Vec<(usize, f64, DVector<f64>)> = Vec::new();
        for (var, coef) in &block.terms {
            for (s, u) in coef.terms() {
                if Some(*var) == eliminated {
                    constant += &u * u.transpose() * s;
                    for &o in &others {
                        terms.push((position[o], -s, u.clone()));
                    }
                } else {
                    terms.push((position[*var], s, u));
                }
            }
        }
        push_block(constant, terms);
    }

    if eliminated.is_some() {
        for &o in &others {
            push_block(
                DMatrix::zeros(1, 1),
                vec![(position[o], 1.0, DVector::from_element(1, 1.0))],
            );
        }
        let terms = others
            .iter()
            .map(|&o| (position[o], -1.0, DVector::from_element(1, 1.0)))
            .collect();
        push_block(DMatrix::from_element(1, 1, 1.0), terms);
    }

    Reduced {
        keep,
        eliminated: eliminated.map(|e| (e, others)),
        b,
        objective_offset,
        blocks,
    }
}

impl Reduced {
    fn expand(&self, y: &[f64], n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for (i, &orig) in self.keep.iter().enumerate() {
            v[orig] = y[i];
        }
        if let Some((last, others)) = &self.eliminated {
            v[*last] = 1.0 - others.iter().map(|&o| v[o]).sum::<f64>();
        }
        v
    }
}

fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// Largest `α` with `X + αΔX ⪰ 0` (∞ when the direction never leaves the cone).
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let Some(chol) = nalgebra::Cholesky::new(x.clone()) else {
        return 0.0;
    };
    let l = chol.l();
    let Some(linv) = l.clone().try_inverse() else {
        return 0.0;
    };
    let t = symmetrize(&(&linv * dx * linv.transpose()));
    let min = SymmetricEigen::new(t).eigenvalues.min();
    if min >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / min
    }
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = nalgebra::Cholesky::new(m.clone()) {
        let sol = ch.solve(rhs);
        if sol.iter().all(|x| x.is_finite()) {
            return Some(sol);
        }
    }
    let sol = m.clone().lu().solve(rhs)?;
    sol.iter().all(|x| x.is_finite()).then_some(sol)
}

/// Solves `problem` with the embedded primal-dual interior-point method.
pub fn solve(problem: &ConicProblem, settings: &SolverSettings) -> Result<ConicSolution> {
    problem.validate()?;
    let start = Instant::now();
    let red = reduce(problem);
    let k = red.b.len();
    let blocks = &red.blocks;
    let nb = blocks.len();
    let n_total: usize = blocks.iter().map(StdBlock::dim).sum();
    let b = DVector::from_column_slice(&red.b);
    let b_norm = b.norm();
    let c_norm = blocks
        .iter()
        .map(|blk| blk.c.norm_squared())
        .sum::<f64>()
        .sqrt();

    // starting point
    let mut x: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
    let mut s: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
    for blk in blocks {
        let d = blk.dim();
        let sqrt_d = (d as f64).sqrt();
        let mut a_norm = vec![0.0f64; k];
        for (col, &o) in blk.owner.iter().enumerate() {
            a_norm[o] += blk.scale[col].abs() * blk.w.column(col).norm_squared();
        }
        let mut xi = 10f64.max(sqrt_d);
        let mut eta = 10f64.max(sqrt_d).max(blk.c.norm());
        for i in 0..k {
            if a_norm[i] > 0.0 {
                xi = xi.max(sqrt_d * (1.0 + red.b[i].abs()) / (1.0 + a_norm[i]));
                eta = eta.max(a_norm[i]);
            }
        }
        x.push(DMatrix::identity(d, d) * xi);
        s.push(DMatrix::identity(d, d) * eta);
    }
    let mut y = vec![0.0; k];

    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let (mut pinf, mut dinf, mut gap) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut best: Option<(Vec<f64>, f64, f64, f64)> = None;
    let mut stall = 0;

    for it in 0..settings.max_iter {
        iterations = it;
        // residuals
        let mut ax = vec![0.0; k];
        for (blk, xb) in blocks.iter().zip(&x) {
            blk.apply_adjoint(xb, &mut ax);
        }
        let rp = DVector::from_iterator(k, (0..k).map(|i| red.b[i] - ax[i]));
        let rd: Vec<DMatrix<f64>> = blocks
            .iter()
            .zip(&s)
            .map(|(blk, sb)| &blk.c - sb - blk.combine(&y))
            .collect();
        let pobj: f64 = blocks
            .iter()
            .zip(&x)
            .map(|(blk, xb)| frob_inner(&blk.c, xb))
            .sum();
        let dobj: f64 = b.dot(&DVector::from_column_slice(&y));
        let xs: f64 = x.iter().zip(&s).map(|(xb, sb)| frob_inner(xb, sb)).sum();
        let mu = xs / n_total as f64;

        pinf = rp.norm() / (1.0 + b_norm);
        dinf = rd.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt() / (1.0 + c_norm);
        gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());

        if !(pinf.is_finite() && dinf.is_finite() && gap.is_finite()) {
            status = SolveStatus::NumericalError;
            break;
        }
        let merit = pinf.max(dinf).max(gap);
        if best.as_ref().is_none_or(|(_, m, _, _)| merit < *m) {
            best = Some((y.clone(), merit, pinf, dinf));
        }
        if pinf <= settings.feas_tol && dinf <= settings.feas_tol && gap <= settings.gap_tol {
            status = SolveStatus::Optimal;
            break;
        }
        let y_norm = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let x_norm = x.iter().map(|xb| xb.amax()).fold(0.0, f64::max);
        if x_norm > 1e12 && pobj < -1e10 * (1.0 + dobj.abs()) {
            status = SolveStatus::Infeasible;
            break;
        }
        if y_norm > 1e13 {
            status = SolveStatus::NumericalError;
            break;
        }

        // Schur complement M_ij = tr(A_i X A_j S⁻¹)
        let mut s_inv = Vec::with_capacity(nb);
        for sb in &s {
            match crate::matrix::strict_spd_inverse(sb) {
                Some(inv) => s_inv.push(inv),
                None => {
                    status = SolveStatus::NumericalError;
                    break;
                }
            }
        }
        if s_inv.len() != nb {
            break;
        }
        let mut m = DMatrix::<f64>::zeros(k, k);
        for (bi, blk) in blocks.iter().enumerate() {
            let t = blk.owner.len();
            if t == 0 {
                continue;
            }
            let p = blk.w.transpose() * &x[bi] * &blk.w;
            let q = blk.w.transpose() * &s_inv[bi] * &blk.w;
            for a in 0..t {
                let sa = blk.scale[a];
                let oa = blk.owner[a];
                for c in 0..t {
                    m[(oa, blk.owner[c])] += sa * blk.scale[c] * p[(a, c)] * q[(a, c)];
                }
            }
        }
        let m = symmetrize(&m);

        // one Newton solve for a given complementarity right-hand side
        let direction =
            |rc: &[DMatrix<f64>]| -> Option<(Vec<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
                let mut rhs_adj = vec![0.0; k];
                let mut terms = Vec::with_capacity(nb);
                for bi in 0..nb {
                    let term = (&rc[bi] - &x[bi] * &rd[bi]) * &s_inv[bi];
                    blocks[bi].apply_adjoint(&term, &mut rhs_adj);
                    terms.push(term);
                }
                let rhs = DVector::from_iterator(k, (0..k).map(|i| rp[i] - rhs_adj[i]));
                let dy = if k == 0 {
                    DVector::zeros(0)
                } else {
                    solve_spd(&m, &rhs)?
                };
                let dy: Vec<f64> = dy.iter().copied().collect();
                let mut ds = Vec::with_capacity(nb);
                let mut dx = Vec::with_capacity(nb);
                for bi in 0..nb {
                    let dsb = &rd[bi] - blocks[bi].combine(&dy);
                    let dxb = symmetrize(&((&rc[bi] - &x[bi] * &dsb) * &s_inv[bi]));
                    ds.push(dsb);
                    dx.push(dxb);
                }
                Some((dy, dx, ds))
            };

        let steps = |dx: &[DMatrix<f64>], ds: &[DMatrix<f64>]| -> (f64, f64) {
            let ap = x
                .iter()
                .zip(dx)
                .map(|(xb, d)| max_step(xb, d))
                .fold(f64::INFINITY, f64::min);
            let ad = s
                .iter()
                .zip(ds)
                .map(|(sb, d)| max_step(sb, d))
                .fold(f64::INFINITY, f64::min);
            (ap, ad)
        };

        // predictor
        let rc_aff: Vec<DMatrix<f64>> = x.iter().zip(&s).map(|(xb, sb)| -(xb * sb)).collect();
        let Some((_, dx_a, ds_a)) = direction(&rc_aff) else {
            status = SolveStatus::NumericalError;
            break;
        };
        let (ap, ad) = steps(&dx_a, &ds_a);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let xs_aff: f64 = (0..nb)
            .map(|bi| frob_inner(&(&x[bi] + &dx_a[bi] * ap), &(&s[bi] + &ds_a[bi] * ad)))
            .sum();
        let sigma = (xs_aff / xs).clamp(0.0, 1.0).powi(3);

        // corrector
        let rc: Vec<DMatrix<f64>> = (0..nb)
            .map(|bi| {
                let d = blocks[bi].dim();
                DMatrix::identity(d, d) * (sigma * mu) - &x[bi] * &s[bi] - &dx_a[bi] * &ds_a[bi]
            })
            .collect();
        let Some((dy, dx, ds)) = direction(&rc) else {
            status = SolveStatus::NumericalError;
            break;
        };
        let (ap, ad) = steps(&dx, &ds);
        let ap = (settings.step_fraction * ap).min(1.0);
        let ad = (settings.step_fraction * ad).min(1.0);
        if ap < 1e-10 && ad < 1e-10 {
            stall += 1;
        } else {
            stall = 0;
        }
        if stall >= 3 {
            status = SolveStatus::NumericalError;
            break;
        }
        for bi in 0..nb {
            x[bi] = symmetrize(&(&x[bi] + &dx[bi] * ap));
            s[bi] = symmetrize(&(&s[bi] + &ds[bi] * ad));
        }
        for (yi, d) in y.iter_mut().zip(&dy) {
            *yi += ad * d;
        }
    }

    if status != SolveStatus::Optimal && status != SolveStatus::Infeasible {
        if let Some((yb, merit, pi, di)) = best {
            if merit <= 1e3 * settings.feas_tol.max(settings.gap_tol) {
                y = yb;
                pinf = pi;
                dinf = di;
                status = SolveStatus::AlmostOptimal;
            }
        }
    }

    let vars = red.expand(&y, problem.num_vars);
    let objective = problem
        .objective
        .iter()
        .zip(&vars)
        .map(|(c, v)| c * v)
        .sum::<f64>();
    let _ = red.objective_offset;
    Ok(ConicSolution {
        vars,
        objective,
        status,
        iterations,
        primal_infeasibility: pinf,
        dual_infeasibility: dinf,
        relative_gap: gap,
        solve_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Like [`solve`], but maps unusable statuses to [`Error::Solver`].
pub fn solve_checked(problem: &ConicProblem, settings: &SolverSettings) -> Result<ConicSolution> {
    let sol = solve(problem, settings)?;
    if !sol.status.is_usable() {
        return Err(Error::Solver(format!(
            "status {} after {} iterations (pinf {:.2e}, dinf {:.2e}, gap {:.2e})",
            sol.status.as_str(),
            sol.iterations,
            sol.primal_infeasibility,
            sol.dual_infeasibility,
            sol.relative_gap
        )));
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_block(label: &str, constant: f64, terms: &[(usize, f64)]) -> LmiBlock {
        let mut b = LmiBlock::new(label, DMatrix::from_element(1, 1, constant));
        for &(v, s) in terms {
            b.push(v, Coef::rank_one(s, DVector::from_element(1, 1.0)));
        }
        b
    }

    #[test]
    fn linear_program() {
        // max x + 2y  s.t. x >= 0, y >= 0, x + y <= 1  → (0, 1), value 2
        let mut p = ConicProblem::new(2);
        p.objective = vec![1.0, 2.0];
        p.add_block(scalar_block("x>=0", 0.0, &[(0, 1.0)]));
        p.add_block(scalar_block("y>=0", 0.0, &[(1, 1.0)]));
        p.add_block(scalar_block("sum<=1", 1.0, &[(0, -1.0), (1, -1.0)]));
        let sol = solve_checked(&p, &SolverSettings::default()).unwrap();
        assert!((sol.objective - 2.0).abs() < 1e-7, "{sol:?}");
        assert!((sol.vars[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn max_min_eigenvalue_on_simplex() {
        // max λ s.t. diag(p1, p2) − λI ⪰ 0, p ∈ Δ² → λ = 1/2
        let mut p = ConicProblem::new(3);
        p.objective = vec![1.0, 0.0, 0.0];
        p.simplex = Some(1..3);
        let mut blk = LmiBlock::new("X>=λI", DMatrix::zeros(2, 2));
        blk.push(0, Coef::scaled_identity(2, -1.0));
        blk.push(1, Coef::rank_one(1.0, unit(2, 0)));
        blk.push(2, Coef::rank_one(1.0, unit(2, 1)));
        p.add_block(blk);
        let sol = solve_checked(&p, &SolverSettings::default()).unwrap();
        assert!((sol.objective - 0.5).abs() < 1e-7);
        assert!((sol.vars[1] - 0.5).abs() < 1e-6 && (sol.vars[2] - 0.5).abs() < 1e-6);
        assert!((sol.vars[1] + sol.vars[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matrix_variable_with_dense_coefficients() {
        // max -tr(X) s.t. X ⪰ B, B = [[2,1],[1,2]] → X = B, value -4
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let mut p = ConicProblem::new(3);
        p.objective = vec![-1.0, 0.0, -1.0];
        let mut blk = LmiBlock::new("X>=B", -b.clone());
        let pairs = [(0, 0), (0, 1), (1, 1)];
        for (v, &(r, c)) in pairs.iter().enumerate() {
            blk.push(v, Coef::sym_unit(2, 0, r, c, 1.0));
        }
        p.add_block(blk);
        let sol = solve_checked(&p, &SolverSettings::default()).unwrap();
        assert!((sol.objective + 4.0).abs() < 1e-7, "{sol:?}");
        assert!((sol.vars[1] - 1.0).abs() < 1e-6);

        // the same with a dense coefficient representation
        let mut q = ConicProblem::new(3);
        q.objective = vec![-1.0, 0.0, -1.0];
        let mut blk = LmiBlock::new("X>=B dense", -b);
        for (v, &(r, c)) in pairs.iter().enumerate() {
            let mut e = DMatrix::zeros(2, 2);
            e[(r, c)] = 1.0;
            e[(c, r)] = 1.0;
            blk.push(v, Coef::Dense(e));
        }
        q.add_block(blk);
        let sol = solve_checked(&q, &SolverSettings::default()).unwrap();
        assert!((sol.objective + 4.0).abs() < 1e-7);
    }

    #[test]
    fn infeasible_system_is_not_reported_optimal() {
        // x >= 1 and x <= 0
        let mut p = ConicProblem::new(1);
        p.objective = vec![1.0];
        p.add_block(scalar_block("x>=1", -1.0, &[(0, 1.0)]));
        p.add_block(scalar_block("x<=0", 0.0, &[(0, -1.0)]));
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert!(!sol.status.is_usable(), "{sol:?}");
    }

    #[test]
    fn evaluate_matches_definition() {
        let blk =
            LmiBlock::new("b", DMatrix::identity(2, 2)).with(0, Coef::sym_unit(2, 0, 0, 1, 2.0));
        let v = blk.evaluate(&[0.25]);
        assert_eq!(v, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
    }
}
