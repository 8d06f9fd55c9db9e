//! Dense two-phase simplex for small linear programs.
//!
//! Problems are stated as
//!
//! ```text
//! minimize    c^T x
//! subject to  row_lower <= A x <= row_upper
//!             var_lower <=   x <= var_upper
//! ```
//!
//! with infinite bounds allowed. Internally the problem is brought to
//! standard form `min c^T x, A x = b, x >= 0, b >= 0` and solved on a dense
//! tableau with Bland's rule, so the pivot sequence is fully deterministic.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
/// Tolerance on the optimality certificate residuals.
pub const CERT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLP {
    pub objective: DVector<f64>,
    pub constraints: DMatrix<f64>,
    pub row_lower: Vec<f64>,
    pub row_upper: Vec<f64>,
    pub var_lower: Vec<f64>,
    pub var_upper: Vec<f64>,
}

impl DenseLP {
    /// LP with `x >= 0` and no row constraints yet.
    pub fn new(objective: DVector<f64>) -> Self {
        let n = objective.len();
        DenseLP {
            objective,
            constraints: DMatrix::zeros(0, n),
            row_lower: Vec::new(),
            row_upper: Vec::new(),
            var_lower: vec![0.0; n],
            var_upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.constraints.nrows()
    }

    pub fn add_row(&mut self, coef: &[f64], lower: f64, upper: f64) {
        assert_eq!(coef.len(), self.n_vars(), "row length must match the number of variables");
        let m = self.n_rows();
        let n = self.n_vars();
        let mut a = self.constraints.clone().resize(m + 1, n, 0.0);
        for (j, &v) in coef.iter().enumerate() {
            a[(m, j)] = v;
        }
        self.constraints = a;
        self.row_lower.push(lower);
        self.row_upper.push(upper);
    }

    pub fn set_var_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.var_lower[j] = lower;
        self.var_upper[j] = upper;
    }

    fn validate(&self) -> Result<()> {
        let (m, n) = (self.n_rows(), self.n_vars());
        if self.constraints.ncols() != n
            || self.row_lower.len() != m
            || self.row_upper.len() != m
            || self.var_lower.len() != n
            || self.var_upper.len() != n
        {
            return Err(Error::DimensionMismatch("LP data has inconsistent dimensions".into()));
        }
        if !self.objective.iter().chain(self.constraints.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("LP coefficients"));
        }
        let bounds = self.row_lower.iter().zip(&self.row_upper).chain(self.var_lower.iter().zip(&self.var_upper));
        for (&lo, &hi) in bounds {
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::InvalidParameter(format!("invalid bound pair [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Largest violation of any row or variable bound at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let ax = &self.constraints * x;
        let rows = (0..self.n_rows()).map(|i| excess(ax[i], self.row_lower[i], self.row_upper[i]));
        let vars = (0..self.n_vars()).map(|j| excess(x[j], self.var_lower[j], self.var_upper[j]));
        rows.chain(vars).fold(0.0, f64::max)
    }
}

fn excess(v: f64, lo: f64, hi: f64) -> f64 {
    (lo - v).max(v - hi).max(0.0)
}

/// Residuals of the KKT conditions of the standard-form problem at the
/// returned basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub primal_residual: f64,
    pub dual_infeasibility: f64,
    pub complementarity: f64,
}

impl Certificate {
    pub fn verified(&self) -> bool {
        self.primal_residual <= CERT_TOL && self.dual_infeasibility <= CERT_TOL && self.complementarity <= CERT_TOL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, objective: f64, certificate: Certificate },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(self) -> Option<(DVector<f64>, f64)> {
        match self {
            LpOutcome::Optimal { x, objective, .. } => Some((x, objective)),
            _ => None,
        }
    }
}

/// How an original variable is rebuilt from standard-form columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    Shift { col: usize, offset: f64 },
    Mirror { col: usize, offset: f64 },
    Free { pos: usize, neg: usize },
    Fixed(f64),
}

struct StandardForm {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    constant: f64,
    map: Vec<VarMap>,
}

fn standardize(lp: &DenseLP) -> StandardForm {
    let n = lp.n_vars();
    let mut map = Vec::with_capacity(n);
    let mut ncols = 0;
    // Extra rows `x' <= u - l` for doubly bounded variables.
    let mut upper_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (lo, hi) = (lp.var_lower[j], lp.var_upper[j]);
        let m = if lo.is_finite() && hi.is_finite() && lo == hi {
            VarMap::Fixed(lo)
        } else if lo.is_finite() {
            if hi.is_finite() {
                upper_rows.push((ncols, hi - lo));
            }
            ncols += 1;
            VarMap::Shift { col: ncols - 1, offset: lo }
        } else if hi.is_finite() {
            ncols += 1;
            VarMap::Mirror { col: ncols - 1, offset: hi }
        } else {
            ncols += 2;
            VarMap::Free { pos: ncols - 2, neg: ncols - 1 }
        };
        map.push(m);
    }

    // Each original row becomes one equality (with a slack) or two
    // inequalities when both sides are finite and distinct.
    struct Row {
        coef: Vec<f64>,
        rhs: f64,
        slack: f64,
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut constant = 0.0;
    let mut c = vec![0.0; ncols];
    for j in 0..n {
        let cj = lp.objective[j];
        match map[j] {
            VarMap::Shift { col, offset } => {
                c[col] += cj;
                constant += cj * offset;
            }
            VarMap::Mirror { col, offset } => {
                c[col] -= cj;
                constant += cj * offset;
            }
            VarMap::Free { pos, neg } => {
                c[pos] += cj;
                c[neg] -= cj;
            }
            VarMap::Fixed(v) => constant += cj * v,
        }
    }
    for i in 0..lp.n_rows() {
        let mut coef = vec![0.0; ncols];
        let mut shift = 0.0;
        for j in 0..n {
            let aij = lp.constraints[(i, j)];
            match map[j] {
                VarMap::Shift { col, offset } => {
                    coef[col] += aij;
                    shift += aij * offset;
                }
                VarMap::Mirror { col, offset } => {
                    coef[col] -= aij;
                    shift += aij * offset;
                }
                VarMap::Free { pos, neg } => {
                    coef[pos] += aij;
                    coef[neg] -= aij;
                }
                VarMap::Fixed(v) => shift += aij * v,
            }
        }
        let (lo, hi) = (lp.row_lower[i], lp.row_upper[i]);
        if lo.is_finite() && hi.is_finite() && lo == hi {
            rows.push(Row { coef, rhs: lo - shift, slack: 0.0 });
            continue;
        }
        if hi.is_finite() {
            rows.push(Row { coef: coef.clone(), rhs: hi - shift, slack: 1.0 });
        }
        if lo.is_finite() {
            rows.push(Row { coef, rhs: lo - shift, slack: -1.0 });
        }
    }
    for &(col, width) in &upper_rows {
        let mut coef = vec![0.0; ncols];
        coef[col] = 1.0;
        rows.push(Row { coef, rhs: width, slack: 1.0 });
    }

    let n_slack = rows.iter().filter(|r| r.slack != 0.0).count();
    let total = ncols + n_slack;
    let m = rows.len();
    let mut a = DMatrix::zeros(m, total);
    let mut b = DVector::zeros(m);
    let mut next_slack = ncols;
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.coef.iter().enumerate() {
            a[(i, j)] = v;
        }
        if row.slack != 0.0 {
            a[(i, next_slack)] = row.slack;
            next_slack += 1;
        }
        b[i] = row.rhs;
        if b[i] < 0.0 {
            a.row_mut(i).neg_mut();
            b[i] = -b[i];
        }
    }
    let mut c_full = DVector::zeros(total);
    c_full.rows_mut(0, ncols).copy_from_slice(&c);
    StandardForm { a, b, c: c_full, constant, map }
}

struct Tableau {
    /// `m` constraint rows followed by the objective row; last column is the rhs.
    t: DMatrix<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn rhs_col(&self) -> usize {
        self.t.ncols() - 1
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[(row, col)];
        let w = self.t.ncols();
        for j in 0..w {
            self.t[(row, j)] /= p;
        }
        for i in 0..self.t.nrows() {
            if i == row {
                continue;
            }
            let f = self.t[(i, col)];
            if f != 0.0 {
                for j in 0..w {
                    let v = self.t[(row, j)];
                    self.t[(i, j)] -= f * v;
                }
            }
        }
        self.basis[row] = col;
    }

    /// Runs Bland's rule over columns `< n_allowed`. Returns `false` when unbounded.
    fn optimize(&mut self, n_allowed: usize) -> bool {
        let m = self.basis.len();
        let rhs = self.rhs_col();
        loop {
            let Some(enter) = (0..n_allowed).find(|&j| self.t[(m, j)] < -PIVOT_EPS) else {
                return true;
            };
            let mut leave: Option<usize> = None;
            let mut best = f64::INFINITY;
            for i in 0..m {
                let a = self.t[(i, enter)];
                if a > PIVOT_EPS {
                    let ratio = self.t[(i, rhs)] / a;
                    let better = match leave {
                        None => true,
                        Some(l) => ratio < best - 1e-12 || (ratio <= best + 1e-12 && self.basis[i] < self.basis[l]),
                    };
                    if better {
                        leave = Some(i);
                        best = best.min(ratio);
                    }
                }
            }
            match leave {
                Some(row) => self.pivot(row, enter),
                None => return false,
            }
        }
    }
}

/// Solves the LP. Infeasible and unbounded problems are reported as outcomes;
/// `Err` is reserved for malformed input.
pub fn solve(lp: &DenseLP) -> Result<LpOutcome> {
    lp.validate()?;
    let sf = standardize(lp);
    let (m, n) = sf.a.shape();

    // Phase 1: artificial variable per row, minimise their sum.
    let width = n + m + 1;
    let mut t = DMatrix::zeros(m + 1, width);
    for i in 0..m {
        for j in 0..n {
            t[(i, j)] = sf.a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, width - 1)] = sf.b[i];
    }
    for j in 0..n {
        t[(m, j)] = -(0..m).map(|i| sf.a[(i, j)]).sum::<f64>();
    }
    t[(m, width - 1)] = -sf.b.sum();
    let mut tab = Tableau { t, basis: (n..n + m).collect() };
    tab.optimize(n + m);
    let scale = 1.0 + sf.b.amax();
    if -tab.t[(m, width - 1)] > FEAS_TOL * scale {
        return Ok(LpOutcome::Infeasible);
    }
    // Drive remaining artificials out of the basis where possible.
    for i in 0..m {
        if tab.basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| tab.t[(i, j)].abs() > 1e-9) {
                tab.pivot(i, j);
            }
        }
    }

    // Phase 2 on the original objective.
    for j in 0..width {
        tab.t[(m, j)] = 0.0;
    }
    for j in 0..n {
        tab.t[(m, j)] = sf.c[j];
    }
    for i in 0..m {
        let bj = tab.basis[i];
        let cb = if bj < n { sf.c[bj] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..width {
                let v = tab.t[(i, j)];
                tab.t[(m, j)] -= cb * v;
            }
        }
    }
    if !tab.optimize(n) {
        return Ok(LpOutcome::Unbounded);
    }

    let mut xs = DVector::zeros(n);
    for i in 0..m {
        if tab.basis[i] < n {
            xs[tab.basis[i]] = tab.t[(i, width - 1)].max(0.0);
        }
    }
    let certificate = certify(&sf, &tab, &xs);
    let x = DVector::from_iterator(
        lp.n_vars(),
        sf.map.iter().map(|m| match *m {
            VarMap::Shift { col, offset } => offset + xs[col],
            VarMap::Mirror { col, offset } => offset - xs[col],
            VarMap::Free { pos, neg } => xs[pos] - xs[neg],
            VarMap::Fixed(v) => v,
        }),
    );
    let objective = lp.objective.dot(&x);
    debug_assert!((objective - (sf.c.dot(&xs) + sf.constant)).abs() <= 1e-6 * (1.0 + objective.abs()));
    Ok(LpOutcome::Optimal { x, objective, certificate })
}

/// Duals from `B^T y = c_B`, then residuals of `A x = b`, `c - A^T y >= 0`
/// and `x_j (c - A^T y)_j = 0`, each relative to the data scale.
fn certify(sf: &StandardForm, tab: &Tableau, xs: &DVector<f64>) -> Certificate {
    let (m, n) = sf.a.shape();
    let primal = (&sf.a * xs - &sf.b).amax() / (1.0 + sf.b.amax());
    // Rows whose artificial stayed basic are redundant; drop them.
    let rows: Vec<usize> = (0..m).filter(|&i| tab.basis[i] < n).collect();
    let cols: Vec<usize> = rows.iter().map(|&i| tab.basis[i]).collect();
    let k = rows.len();
    let bt = DMatrix::from_fn(k, k, |r, s| sf.a[(rows[s], cols[r])]);
    let cb = DVector::from_fn(k, |r, _| sf.c[cols[r]]);
    let y_sub = bt.lu().solve(&cb).unwrap_or_else(|| DVector::zeros(k));
    let mut y = DVector::zeros(m);
    for (r, &i) in rows.iter().enumerate() {
        y[i] = y_sub[r];
    }
    let reduced = &sf.c - sf.a.tr_mul(&y);
    let scale = 1.0 + sf.c.amax();
    let dual = reduced.iter().fold(0.0_f64, |acc, &d| acc.max(-d)) / scale;
    let comp = xs.iter().zip(reduced.iter()).fold(0.0_f64, |acc, (x, d)| acc.max((x * d).abs()))
        / (scale * (1.0 + xs.amax()));
    Certificate { primal_residual: primal, dual_infeasibility: dual, complementarity: comp }
}

/// `min ||beta||_1  s.t.  ||q beta - b||_inf <= mu`, via `beta = beta+ - beta-`.
pub fn l1_min_inf_constraint(q: &DMatrix<f64>, b: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
    let k = q.nrows();
    if q.ncols() != k || b.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "expected a square Q matching b, got {}x{} and {}",
            q.nrows(),
            q.ncols(),
            b.len()
        )));
    }
    if !(mu >= 0.0) {
        return Err(Error::InvalidParameter(format!("mu must be non-negative, got {mu}")));
    }
    let mut lp = DenseLP::new(DVector::from_element(2 * k, 1.0));
    for i in 0..k {
        let coef: Vec<f64> = (0..2 * k).map(|j| if j < k { q[(i, j)] } else { -q[(i, j - k)] }).collect();
        lp.add_row(&coef, b[i] - mu, b[i] + mu);
    }
    match solve(&lp)? {
        LpOutcome::Optimal { x, .. } => Ok(DVector::from_fn(k, |i, _| x[i] - x[i + k])),
        LpOutcome::Infeasible => Err(Error::Lp("infeasible")),
        LpOutcome::Unbounded => Err(Error::Lp("unbounded")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp1(c: f64) -> DenseLP {
        DenseLP::new(DVector::from_element(1, c))
    }

    #[test]
    fn single_lower_bound() {
        let mut lp = lp1(1.0);
        lp.set_var_bounds(0, f64::NEG_INFINITY, f64::INFINITY);
        lp.add_row(&[1.0], 3.0, f64::INFINITY);
        let (x, obj) = solve(&lp).unwrap().optimal().unwrap();
        assert!((x[0] - 3.0).abs() < 1e-12);
        assert!((obj - 3.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_bounds_infeasible() {
        let mut lp = lp1(0.0);
        lp.set_var_bounds(0, f64::NEG_INFINITY, f64::INFINITY);
        lp.add_row(&[1.0], f64::NEG_INFINITY, 0.0);
        lp.add_row(&[1.0], 1.0, f64::INFINITY);
        assert_eq!(solve(&lp).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn unbounded_ray() {
        let mut lp = lp1(-1.0);
        lp.add_row(&[1.0], 1.0, f64::INFINITY);
        assert_eq!(solve(&lp).unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn textbook_maximisation() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), value 36
        let mut lp = DenseLP::new(DVector::from_vec(vec![-3.0, -5.0]));
        lp.add_row(&[1.0, 0.0], f64::NEG_INFINITY, 4.0);
        lp.add_row(&[0.0, 2.0], f64::NEG_INFINITY, 12.0);
        lp.add_row(&[3.0, 2.0], f64::NEG_INFINITY, 18.0);
        match solve(&lp).unwrap() {
            LpOutcome::Optimal { x, objective, certificate } => {
                assert!((x[0] - 2.0).abs() < 1e-10 && (x[1] - 6.0).abs() < 1e-10);
                assert!((objective + 36.0).abs() < 1e-10);
                assert!(certificate.verified());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn boxed_and_fixed_variables() {
        // min -x - y with x in [-1, 2], y fixed at 0.5, x + y <= 10
        let mut lp = DenseLP::new(DVector::from_vec(vec![-1.0, -1.0]));
        lp.set_var_bounds(0, -1.0, 2.0);
        lp.set_var_bounds(1, 0.5, 0.5);
        lp.add_row(&[1.0, 1.0], f64::NEG_INFINITY, 10.0);
        let (x, obj) = solve(&lp).unwrap().optimal().unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12);
        assert!((obj + 2.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example cycles under the textbook largest-coefficient rule.
        let mut lp = DenseLP::new(DVector::from_vec(vec![-0.75, 150.0, -0.02, 6.0]));
        lp.add_row(&[0.25, -60.0, -0.04, 9.0], f64::NEG_INFINITY, 0.0);
        lp.add_row(&[0.5, -90.0, -0.02, 3.0], f64::NEG_INFINITY, 0.0);
        lp.add_row(&[0.0, 0.0, 1.0, 0.0], f64::NEG_INFINITY, 1.0);
        let (_, obj) = solve(&lp).unwrap().optimal().unwrap();
        assert!((obj + 0.05).abs() < 1e-10);
    }

    #[test]
    fn malformed_input_is_an_error() {
        let mut lp = lp1(1.0);
        lp.objective[0] = f64::NAN;
        assert!(solve(&lp).is_err());
        let mut lp = lp1(1.0);
        lp.row_lower.push(0.0);
        assert!(solve(&lp).is_err());
    }

    #[test]
    fn dantzig_identity_examples() {
        let q = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        let exact = l1_min_inf_constraint(&q, &b, 0.0).unwrap();
        assert!((exact - &b).amax() < 1e-12);
        let loose = l1_min_inf_constraint(&q, &b, 1.0).unwrap();
        assert!(loose.amax() < 1e-12);
        assert!(l1_min_inf_constraint(&q, &b, -0.1).is_err());
    }

    #[test]
    fn dantzig_singular_q_infeasible_at_zero_radius() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(l1_min_inf_constraint(&q, &b, 0.0), Err(Error::Lp("infeasible")));
    }
}
