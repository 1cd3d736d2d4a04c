//! Dense linear-program solver used for every convex subproblem.
//!
//! All subproblems in this crate (the relaxation baseline and the SCP
//! iterates) reduce to linear programs after epigraph and linearization
//! transforms, so a single deterministic solver backs them all. The
//! implementation is a two-phase primal simplex on the full tableau with
//! bounded variables, Dantzig pricing, and Bland's rule as the anti-cycling
//! fallback. Variable bounds (including two-sided "range" behaviour via
//! bounded auxiliary variables) never consume tableau rows, which keeps the
//! basis small for the trajectory subproblems.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Canonical-form linear program: minimize `c'z` subject to
/// `a_ub * z <= b_ub`, `a_eq * z = b_eq`, and `lb <= z <= ub`
/// (infinite bounds allowed).
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub c: DVector<f64>,
    pub a_ub: DMatrix<f64>,
    pub b_ub: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite coefficient in {0}")]
    InvalidCoefficient(&'static str),
}

/// Outcome classification for a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// Solution report. `z` and `objective` are meaningful only when the status
/// is `Optimal`. `row_duals` holds the simplex multipliers `y` (equality rows
/// first, then inequality rows) such that the reduced costs are `c - A'y` at
/// the final basis; they form the dual certificate checked by the
/// weak-duality tests.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub z: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub row_duals: DVector<f64>,
}

impl LinearProgram {
    /// Validates shapes and coefficient finiteness (bounds may be infinite).
    pub fn new(
        c: DVector<f64>,
        a_ub: DMatrix<f64>,
        b_ub: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        lb: DVector<f64>,
        ub: DVector<f64>,
    ) -> Result<Self, LpError> {
        let n = c.len();
        if a_ub.nrows() > 0 && a_ub.ncols() != n {
            return Err(LpError::DimensionMismatch(format!(
                "a_ub has {} columns, expected {}",
                a_ub.ncols(),
                n
            )));
        }
        if a_eq.nrows() > 0 && a_eq.ncols() != n {
            return Err(LpError::DimensionMismatch(format!(
                "a_eq has {} columns, expected {}",
                a_eq.ncols(),
                n
            )));
        }
        if a_ub.nrows() != b_ub.len() {
            return Err(LpError::DimensionMismatch(format!(
                "a_ub has {} rows but b_ub has {}",
                a_ub.nrows(),
                b_ub.len()
            )));
        }
        if a_eq.nrows() != b_eq.len() {
            return Err(LpError::DimensionMismatch(format!(
                "a_eq has {} rows but b_eq has {}",
                a_eq.nrows(),
                b_eq.len()
            )));
        }
        if lb.len() != n || ub.len() != n {
            return Err(LpError::DimensionMismatch(format!(
                "bounds have lengths {}/{}, expected {}",
                lb.len(),
                ub.len(),
                n
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(LpError::InvalidCoefficient("c"));
        }
        if a_ub.iter().any(|v| !v.is_finite()) {
            return Err(LpError::InvalidCoefficient("a_ub"));
        }
        if a_eq.iter().any(|v| !v.is_finite()) {
            return Err(LpError::InvalidCoefficient("a_eq"));
        }
        if b_ub.iter().any(|v| !v.is_finite()) {
            return Err(LpError::InvalidCoefficient("b_ub"));
        }
        if b_eq.iter().any(|v| !v.is_finite()) {
            return Err(LpError::InvalidCoefficient("b_eq"));
        }
        if lb.iter().any(|v| v.is_nan()) || ub.iter().any(|v| v.is_nan()) {
            return Err(LpError::InvalidCoefficient("bounds"));
        }
        Ok(Self {
            c,
            a_ub,
            b_ub,
            a_eq,
            b_eq,
            lb,
            ub,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    /// Writes the program in the plain-text canonical form used for
    /// debugging dumps: a dimensions header `n m_eq m_ub`, then the blocks
    /// `c`, `a_eq` (row-major, one line per row), `b_eq`, `a_ub` (row-major),
    /// `b_ub`, `lb`, `ub`, entries space-separated.
    pub fn write_canonical<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        fn line<W: std::io::Write>(w: &mut W, vals: impl Iterator<Item = f64>) -> std::io::Result<()> {
            let parts: Vec<String> = vals.map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", parts.join(" "))
        }
        writeln!(
            w,
            "{} {} {}",
            self.num_vars(),
            self.a_eq.nrows(),
            self.a_ub.nrows()
        )?;
        line(w, self.c.iter().copied())?;
        for i in 0..self.a_eq.nrows() {
            line(w, self.a_eq.row(i).iter().copied().collect::<Vec<_>>().into_iter())?;
        }
        line(w, self.b_eq.iter().copied())?;
        for i in 0..self.a_ub.nrows() {
            line(w, self.a_ub.row(i).iter().copied().collect::<Vec<_>>().into_iter())?;
        }
        line(w, self.b_ub.iter().copied())?;
        line(w, self.lb.iter().copied())?;
        line(w, self.ub.iter().copied())?;
        Ok(())
    }
}

const FEAS_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
const BLAND_TRIGGER: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
    /// Free variable resting at zero.
    FreeZero,
}

/// Internal computational form: rows `row_lo <= a*z <= row_hi`, each owning
/// one logical variable, so the basis size equals the row count regardless of
/// how many variable bounds the problem carries.
struct Simplex {
    n: usize,
    m: usize,
    /// Row-major tableau `B^-1 [A | -I | art]`, m x nc.
    tab: Vec<f64>,
    nc: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    /// Phase-2 reduced costs, maintained through both phases.
    d2: Vec<f64>,
    /// Phase-1 reduced costs (artificial infeasibility sum).
    d1: Vec<f64>,
    state: Vec<VarState>,
    basis: Vec<usize>,
    xb: Vec<f64>,
    /// Artificial columns: (row, sign) of the +-1 entry.
    art: Vec<(usize, f64)>,
    iterations: usize,
    bland: bool,
    stall: usize,
    last_obj: f64,
    /// Original `[A | -I]` columns for refactorization.
    g: DMatrix<f64>,
}

enum StepOutcome {
    Moved,
    Optimal,
    Unbounded,
}

impl Simplex {
    fn new(
        a: &DMatrix<f64>,
        row_lo: &[f64],
        row_hi: &[f64],
        col_lo: &[f64],
        col_hi: &[f64],
        c: &[f64],
    ) -> Self {
        let m = a.nrows();
        let n = a.ncols();

        // Nonbasic start: every structural variable at its bound nearest zero.
        let mut state = Vec::with_capacity(n + m);
        let mut value = vec![0.0; n];
        for j in 0..n {
            let (s, v) = initial_state(col_lo[j], col_hi[j]);
            state.push(s);
            value[j] = v;
        }

        // Row activities at the starting point decide which rows need an
        // artificial column.
        let mut activity = vec![0.0; m];
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..n {
                let v = value[j];
                if v != 0.0 {
                    acc += a[(i, j)] * v;
                }
            }
            activity[i] = acc;
        }

        let mut art: Vec<(usize, f64)> = Vec::new();
        let mut basis = vec![usize::MAX; m];
        let mut xb = vec![0.0; m];
        let mut diag = vec![-1.0; m]; // logical basis columns carry -1
        for i in 0..m {
            if activity[i] > row_hi[i] + FEAS_TOL {
                state.push(VarState::AtUpper);
                art.push((i, -1.0));
            } else if activity[i] < row_lo[i] - FEAS_TOL {
                state.push(VarState::AtLower);
                art.push((i, 1.0));
            } else {
                state.push(VarState::Basic(i));
                basis[i] = n + i;
                xb[i] = activity[i];
            }
        }
        let n_art = art.len();
        let nc = n + m + n_art;

        for (k, &(i, sign)) in art.iter().enumerate() {
            let col = n + m + k;
            basis[i] = col;
            state.push(VarState::Basic(i));
            diag[i] = sign;
            let bound = if sign < 0.0 { row_hi[i] } else { row_lo[i] };
            xb[i] = (bound - activity[i]) / sign;
        }

        let mut lo = Vec::with_capacity(nc);
        let mut hi = Vec::with_capacity(nc);
        lo.extend_from_slice(col_lo);
        hi.extend_from_slice(col_hi);
        lo.extend_from_slice(row_lo);
        hi.extend_from_slice(row_hi);
        lo.extend(std::iter::repeat(0.0).take(n_art));
        hi.extend(std::iter::repeat(f64::INFINITY).take(n_art));

        let mut cost = vec![0.0; nc];
        cost[..n].copy_from_slice(c);

        let mut g = DMatrix::zeros(m, n + m);
        if m > 0 && n > 0 {
            g.view_mut((0, 0), (m, n)).copy_from(a);
        }
        for i in 0..m {
            g[(i, n + i)] = -1.0;
        }

        // Basis matrix is diagonal (+-1), so the initial tableau is the rows
        // of [A | -I | art] scaled by the inverse diagonal entries.
        let mut tab = vec![0.0; m * nc];
        for i in 0..m {
            let inv = 1.0 / diag[i];
            let row = &mut tab[i * nc..(i + 1) * nc];
            for j in 0..n {
                row[j] = a[(i, j)] * inv;
            }
            row[n + i] = -inv;
        }
        for (k, &(i, sign)) in art.iter().enumerate() {
            tab[i * nc + n + m + k] = sign / diag[i];
        }

        // Reduced costs d = c - c_B' T. Initial basic costs are zero for
        // phase 2 (logicals and artificials), and one per artificial for
        // phase 1.
        let mut d2 = cost.clone();
        let mut d1 = vec![0.0; nc];
        for j in 0..nc {
            let mut acc = 0.0;
            for &(i, _) in art.iter() {
                acc += tab[i * nc + j];
            }
            d1[j] = if j >= n + m { 1.0 } else { 0.0 } - acc;
        }
        for i in 0..m {
            d1[basis[i]] = 0.0;
            d2[basis[i]] = 0.0;
        }

        Simplex {
            n,
            m,
            tab,
            nc,
            lo,
            hi,
            cost,
            d2,
            d1,
            state,
            basis,
            xb,
            art,
            iterations: 0,
            bland: false,
            stall: 0,
            last_obj: f64::INFINITY,
            g,
        }
    }

    fn var_value(&self, j: usize) -> f64 {
        match self.state[j] {
            VarState::Basic(r) => self.xb[r],
            VarState::AtLower => self.lo[j],
            VarState::AtUpper => self.hi[j],
            VarState::FreeZero => 0.0,
        }
    }

    fn phase1_infeasibility(&self) -> f64 {
        (0..self.art.len())
            .map(|k| self.var_value(self.n + self.m + k).max(0.0))
            .sum()
    }

    fn objective(&self) -> f64 {
        (0..self.n).map(|j| self.cost[j] * self.var_value(j)).sum()
    }

    /// Column of the basis matrix for basis entry `i` (handles artificials).
    fn basis_column(&self, i: usize) -> DVector<f64> {
        let j = self.basis[i];
        if j < self.n + self.m {
            self.g.column(j).into_owned()
        } else {
            let (row, sign) = self.art[j - self.n - self.m];
            let mut col = DVector::zeros(self.m);
            col[row] = sign;
            col
        }
    }

    /// One pricing + ratio-test + pivot step against the given cost row.
    fn step(&mut self, phase1: bool) -> StepOutcome {
        let d = if phase1 { &self.d1 } else { &self.d2 };

        // Entering variable: Dantzig pricing, or lowest eligible index once
        // Bland's rule engages.
        let mut entering: Option<(usize, f64, f64)> = None; // (col, dir, score)
        for j in 0..self.nc {
            if matches!(self.state[j], VarState::Basic(_)) {
                continue;
            }
            if self.lo[j] == self.hi[j] {
                continue; // fixed (includes retired artificials)
            }
            if !phase1 && j >= self.n + self.m {
                continue; // artificials never re-enter in phase 2
            }
            let dj = d[j];
            let cand = match self.state[j] {
                VarState::AtLower => (dj < -DUAL_TOL).then_some((1.0, -dj)),
                VarState::AtUpper => (dj > DUAL_TOL).then_some((-1.0, dj)),
                VarState::FreeZero => {
                    if dj < -DUAL_TOL {
                        Some((1.0, -dj))
                    } else if dj > DUAL_TOL {
                        Some((-1.0, dj))
                    } else {
                        None
                    }
                }
                VarState::Basic(_) => None,
            };
            if let Some((dir, score)) = cand {
                if self.bland {
                    entering = Some((j, dir, score));
                    break;
                }
                if entering.map(|(_, _, s)| score > s).unwrap_or(true) {
                    entering = Some((j, dir, score));
                }
            }
        }
        let Some((q, dir, _)) = entering else {
            return StepOutcome::Optimal;
        };

        // Ratio test over the basic variables plus the entering variable's
        // own opposite bound (bound flip).
        let col: Vec<f64> = (0..self.m).map(|i| self.tab[i * self.nc + q]).collect();
        let mut t_best = f64::INFINITY;
        let mut leave: Option<usize> = None;
        let mut leave_pivot = 0.0f64;
        for i in 0..self.m {
            let step = dir * col[i];
            let (slack, p) = if step > PIVOT_TOL {
                ((self.xb[i] - self.lo[self.basis[i]]).max(0.0), step)
            } else if step < -PIVOT_TOL {
                ((self.hi[self.basis[i]] - self.xb[i]).max(0.0), -step)
            } else {
                continue;
            };
            if !slack.is_finite() {
                continue;
            }
            let t = slack / p;
            let replace = match leave {
                None => t < t_best,
                Some(r) => {
                    t < t_best - 1e-12
                        || (t < t_best + 1e-12 && {
                            if self.bland {
                                self.basis[i] < self.basis[r]
                            } else {
                                col[i].abs() > leave_pivot.abs()
                            }
                        })
                }
            };
            if replace {
                t_best = t;
                leave = Some(i);
                leave_pivot = col[i];
            }
        }
        let flip_limit = self.hi[q] - self.lo[q];
        let use_flip = flip_limit.is_finite() && flip_limit < t_best - 1e-12;

        if use_flip {
            let t = flip_limit;
            for i in 0..self.m {
                if col[i] != 0.0 {
                    self.xb[i] -= t * dir * col[i];
                }
            }
            self.state[q] = match self.state[q] {
                VarState::AtLower => VarState::AtUpper,
                VarState::AtUpper => VarState::AtLower,
                s => s,
            };
            self.iterations += 1;
            self.track_progress(phase1);
            return StepOutcome::Moved;
        }

        let Some(r) = leave else {
            if phase1 {
                // The phase-1 objective is bounded below, so an unbounded ray
                // here is numerical noise; stop and let the residual check
                // decide.
                return StepOutcome::Optimal;
            }
            return StepOutcome::Unbounded;
        };

        // Move the basics, bring q in at row r, send basis[r] to the bound
        // it hit.
        let t = t_best;
        let entering_value = match self.state[q] {
            VarState::AtLower => self.lo[q] + t,
            VarState::AtUpper => self.hi[q] - t,
            VarState::FreeZero => dir * t,
            VarState::Basic(_) => unreachable!(),
        };
        for i in 0..self.m {
            if i != r && col[i] != 0.0 {
                self.xb[i] -= t * dir * col[i];
            }
        }
        let old = self.basis[r];
        self.state[old] = if dir * col[r] > 0.0 {
            VarState::AtLower
        } else {
            VarState::AtUpper
        };
        self.basis[r] = q;
        self.state[q] = VarState::Basic(r);
        self.xb[r] = entering_value;

        // Row reduction on the tableau and both cost rows.
        let nc = self.nc;
        let pivot = col[r];
        let (before, rest) = self.tab.split_at_mut(r * nc);
        let (prow, after) = rest.split_at_mut(nc);
        let inv = 1.0 / pivot;
        for v in prow.iter_mut() {
            *v *= inv;
        }
        prow[q] = 1.0;
        fn eliminate(row: &mut [f64], prow: &[f64], q: usize) {
            let f = row[q];
            if f != 0.0 {
                for (x, p) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * *p;
                }
                row[q] = 0.0;
            }
        }
        for chunk in before.chunks_exact_mut(nc) {
            eliminate(chunk, prow, q);
        }
        for chunk in after.chunks_exact_mut(nc) {
            eliminate(chunk, prow, q);
        }
        eliminate(&mut self.d1, prow, q);
        eliminate(&mut self.d2, prow, q);

        self.iterations += 1;
        self.track_progress(phase1);
        StepOutcome::Moved
    }

    fn track_progress(&mut self, phase1: bool) {
        let obj = if phase1 {
            self.phase1_infeasibility()
        } else {
            self.objective()
        };
        if obj < self.last_obj - 1e-12 * (1.0 + self.last_obj.abs()) {
            self.stall = 0;
        } else {
            self.stall += 1;
            if self.stall > BLAND_TRIGGER {
                self.bland = true;
            }
        }
        self.last_obj = obj;
    }

    /// Recomputes the basic values from the original columns through an LU
    /// factorization, washing out accumulated tableau drift.
    fn refine(&mut self) {
        if self.m == 0 {
            return;
        }
        let mut b = DMatrix::zeros(self.m, self.m);
        for i in 0..self.m {
            b.set_column(i, &self.basis_column(i));
        }
        let mut rhs = DVector::zeros(self.m);
        for j in 0..self.n + self.m {
            if matches!(self.state[j], VarState::Basic(_)) {
                continue;
            }
            let v = self.var_value(j);
            if v != 0.0 {
                rhs -= self.g.column(j) * v;
            }
        }
        if let Some(xb) = b.lu().solve(&rhs) {
            for i in 0..self.m {
                self.xb[i] = xb[i];
            }
        }
    }

    fn max_bound_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.m {
            let j = self.basis[i];
            let v = self.xb[i];
            worst = worst.max(self.lo[j] - v).max(v - self.hi[j]);
        }
        worst
    }

    /// Dual multipliers for the rows from the final basis: solve B'y = c_B.
    fn row_duals(&self) -> DVector<f64> {
        if self.m == 0 {
            return DVector::zeros(0);
        }
        let mut b = DMatrix::zeros(self.m, self.m);
        let mut cb = DVector::zeros(self.m);
        for (i, &j) in self.basis.iter().enumerate() {
            b.set_column(i, &self.basis_column(i));
            cb[i] = if j < self.n { self.cost[j] } else { 0.0 };
        }
        b.transpose()
            .lu()
            .solve(&cb)
            .unwrap_or_else(|| DVector::zeros(self.m))
    }
}

fn initial_state(lo: f64, hi: f64) -> (VarState, f64) {
    if lo.is_finite() {
        if hi.is_finite() && hi.abs() < lo.abs() {
            (VarState::AtUpper, hi)
        } else {
            (VarState::AtLower, lo)
        }
    } else if hi.is_finite() {
        (VarState::AtUpper, hi)
    } else {
        (VarState::FreeZero, 0.0)
    }
}

/// Solves the program to the requested tolerance. Deterministic: identical
/// inputs produce identical outputs, including the pivot sequence.
pub fn solve_lp(lp: &LinearProgram, tol: f64, max_iter: usize) -> LpSolution {
    assert!(tol > 0.0, "tolerance must be positive");
    let n = lp.num_vars();
    let m_eq = lp.a_eq.nrows();
    let m_ub = lp.a_ub.nrows();
    let m = m_eq + m_ub;

    let mut a = DMatrix::zeros(m, n);
    let mut row_lo = vec![0.0; m];
    let mut row_hi = vec![0.0; m];
    if m_eq > 0 {
        a.view_mut((0, 0), (m_eq, n)).copy_from(&lp.a_eq);
    }
    for i in 0..m_eq {
        row_lo[i] = lp.b_eq[i];
        row_hi[i] = lp.b_eq[i];
    }
    if m_ub > 0 {
        a.view_mut((m_eq, 0), (m_ub, n)).copy_from(&lp.a_ub);
    }
    for i in 0..m_ub {
        row_lo[m_eq + i] = f64::NEG_INFINITY;
        row_hi[m_eq + i] = lp.b_ub[i];
    }

    let col_lo: Vec<f64> = lp.lb.iter().copied().collect();
    let col_hi: Vec<f64> = lp.ub.iter().copied().collect();
    let c: Vec<f64> = lp.c.iter().copied().collect();

    // Inconsistent variable bounds are an immediate infeasibility.
    if col_lo.iter().zip(&col_hi).any(|(l, h)| l > h) {
        return LpSolution {
            status: LpStatus::Infeasible,
            z: DVector::zeros(n),
            objective: f64::NAN,
            iterations: 0,
            row_duals: DVector::zeros(m),
        };
    }

    let mut sx = Simplex::new(&a, &row_lo, &row_hi, &col_lo, &col_hi, &c);

    let mut restarts = 0;
    loop {
        // Phase 1: drive the artificial infeasibility to zero.
        if !sx.art.is_empty() {
            loop {
                if sx.iterations >= max_iter {
                    return finish(lp, sx, LpStatus::IterationLimit);
                }
                if sx.phase1_infeasibility() <= FEAS_TOL {
                    break;
                }
                match sx.step(true) {
                    StepOutcome::Moved => {}
                    StepOutcome::Optimal | StepOutcome::Unbounded => break,
                }
            }
            if sx.phase1_infeasibility() > tol.max(1e-8) {
                return finish(lp, sx, LpStatus::Infeasible);
            }
            // Retire the artificial columns.
            for k in 0..sx.art.len() {
                let j = sx.n + sx.m + k;
                sx.lo[j] = 0.0;
                sx.hi[j] = 0.0;
            }
        }

        // Phase 2.
        sx.stall = 0;
        sx.last_obj = f64::INFINITY;
        loop {
            if sx.iterations >= max_iter {
                return finish(lp, sx, LpStatus::IterationLimit);
            }
            match sx.step(false) {
                StepOutcome::Moved => {}
                StepOutcome::Optimal => break,
                StepOutcome::Unbounded => {
                    return finish(lp, sx, LpStatus::Unbounded);
                }
            }
        }

        // Refine the basic values from first principles and verify.
        sx.refine();
        let viol = sx.max_bound_violation();
        if viol <= tol || restarts >= 2 {
            return finish(lp, sx, LpStatus::Optimal);
        }
        // Accumulated drift: rebuild the tableau from the current basis and
        // keep pivoting.
        restarts += 1;
        if !rebuild(&mut sx) {
            return finish(lp, sx, LpStatus::Optimal);
        }
    }
}

fn rebuild(sx: &mut Simplex) -> bool {
    let m = sx.m;
    let nc = sx.nc;
    let mut b = DMatrix::zeros(m, m);
    for i in 0..m {
        b.set_column(i, &sx.basis_column(i));
    }
    let lu = b.lu();
    let mut fresh = vec![0.0; m * nc];
    let mut col = DVector::zeros(m);
    for j in 0..nc {
        col.fill(0.0);
        if j < sx.n + m {
            col.copy_from(&sx.g.column(j));
        } else {
            let (row, sign) = sx.art[j - sx.n - m];
            col[row] = sign;
        }
        match lu.solve(&col) {
            Some(s) => {
                for i in 0..m {
                    fresh[i * nc + j] = s[i];
                }
            }
            None => return false,
        }
    }
    sx.tab = fresh;
    let mut cb = vec![0.0; m];
    for (i, &j) in sx.basis.iter().enumerate() {
        cb[i] = if j < sx.n { sx.cost[j] } else { 0.0 };
    }
    for j in 0..nc {
        let mut acc = 0.0;
        for i in 0..m {
            acc += cb[i] * sx.tab[i * nc + j];
        }
        sx.d2[j] = if j < sx.n { sx.cost[j] } else { 0.0 } - acc;
    }
    sx.d1 = vec![0.0; nc];
    sx.refine();
    true
}

fn finish(lp: &LinearProgram, sx: Simplex, status: LpStatus) -> LpSolution {
    let n = lp.num_vars();
    let mut z = DVector::zeros(n);
    for j in 0..n {
        z[j] = sx.var_value(j);
    }
    let objective = if status == LpStatus::Optimal {
        lp.c.dot(&z)
    } else {
        f64::NAN
    };
    let row_duals = if status == LpStatus::Optimal {
        sx.row_duals()
    } else {
        DVector::zeros(sx.m)
    };
    LpSolution {
        status,
        z,
        objective,
        iterations: sx.iterations,
        row_duals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn empty(n: usize) -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::zeros(0, n), DVector::zeros(0))
    }

    fn vecd(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn box_bound_optimum() {
        let (a0, b0) = empty(1);
        let lp = LinearProgram::new(
            vecd(&[-1.0]),
            a0.clone(),
            b0.clone(),
            a0,
            b0,
            vecd(&[0.0]),
            vecd(&[1.0]),
        )
        .unwrap();
        let sol = solve_lp(&lp, 1e-6, 1000);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.z[0] - 1.0).abs() < 1e-9);
        assert!((sol.objective + 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_face_objective_unique() {
        // min z1 + z2 s.t. z1 + z2 >= 1, z >= 0.
        let a_ub = DMatrix::from_row_slice(1, 2, &[-1.0, -1.0]);
        let b_ub = vecd(&[-1.0]);
        let (a_eq, b_eq) = empty(2);
        let lp = LinearProgram::new(
            vecd(&[1.0, 1.0]),
            a_ub,
            b_ub,
            a_eq,
            b_eq,
            vecd(&[0.0, 0.0]),
            vecd(&[f64::INFINITY, f64::INFINITY]),
        )
        .unwrap();
        let sol = solve_lp(&lp, 1e-6, 1000);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn detects_unbounded() {
        let (a0, b0) = empty(1);
        let lp = LinearProgram::new(
            vecd(&[-1.0]),
            a0.clone(),
            b0.clone(),
            a0,
            b0,
            vecd(&[0.0]),
            vecd(&[f64::INFINITY]),
        )
        .unwrap();
        assert_eq!(solve_lp(&lp, 1e-6, 1000).status, LpStatus::Unbounded);
    }

    #[test]
    fn detects_infeasible() {
        // z <= -1 with z >= 0.
        let a_ub = DMatrix::from_row_slice(1, 1, &[1.0]);
        let lp = LinearProgram::new(
            vecd(&[0.0]),
            a_ub,
            vecd(&[-1.0]),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            vecd(&[0.0]),
            vecd(&[f64::INFINITY]),
        )
        .unwrap();
        assert_eq!(solve_lp(&lp, 1e-6, 1000).status, LpStatus::Infeasible);
    }

    #[test]
    fn rejects_nan_and_shape_mismatch() {
        let (a0, b0) = empty(1);
        assert_eq!(
            LinearProgram::new(
                vecd(&[f64::NAN]),
                a0.clone(),
                b0.clone(),
                a0.clone(),
                b0.clone(),
                vecd(&[0.0]),
                vecd(&[1.0])
            )
            .unwrap_err(),
            LpError::InvalidCoefficient("c")
        );
        assert!(matches!(
            LinearProgram::new(
                vecd(&[1.0, 2.0]),
                DMatrix::zeros(1, 1),
                vecd(&[1.0]),
                DMatrix::zeros(0, 2),
                DVector::zeros(0),
                vecd(&[0.0, 0.0]),
                vecd(&[1.0, 1.0])
            ),
            Err(LpError::DimensionMismatch(_))
        ));
    }

    /// Brute-force oracle: enumerate all candidate vertices (active-set
    /// combinations of rows and bounds), keep the feasible ones, and return
    /// the best objective. Independent of the simplex path.
    fn vertex_enumeration_optimum(lp: &LinearProgram) -> Option<f64> {
        let n = lp.num_vars();
        let mut planes: Vec<(DVector<f64>, f64)> = Vec::new();
        for i in 0..lp.a_ub.nrows() {
            planes.push((lp.a_ub.row(i).transpose(), lp.b_ub[i]));
        }
        for j in 0..n {
            if lp.lb[j].is_finite() {
                let mut e = DVector::zeros(n);
                e[j] = 1.0;
                planes.push((e, lp.lb[j]));
            }
            if lp.ub[j].is_finite() {
                let mut e = DVector::zeros(n);
                e[j] = 1.0;
                planes.push((e, lp.ub[j]));
            }
        }
        let m_eq = lp.a_eq.nrows();
        let need = n.saturating_sub(m_eq);
        let k = planes.len();
        if need > k {
            return None;
        }
        let mut best: Option<f64> = None;
        let mut idx: Vec<usize> = (0..need).collect();
        loop {
            let mut a = DMatrix::zeros(m_eq + need, n);
            let mut b = DVector::zeros(m_eq + need);
            for r in 0..m_eq {
                a.row_mut(r).copy_from(&lp.a_eq.row(r));
                b[r] = lp.b_eq[r];
            }
            for (t, &p) in idx.iter().enumerate() {
                a.row_mut(m_eq + t).copy_from(&planes[p].0.transpose());
                b[m_eq + t] = planes[p].1;
            }
            if let Some(z) = a.clone().lu().solve(&b) {
                if (&a * &z - &b).amax() < 1e-7 && feasible(lp, &z) {
                    let obj = lp.c.dot(&z);
                    best = Some(best.map_or(obj, |cur: f64| cur.min(obj)));
                }
            }
            let mut t = need;
            loop {
                if t == 0 {
                    return best;
                }
                t -= 1;
                if idx[t] + (need - t) < k {
                    idx[t] += 1;
                    for u in t + 1..need {
                        idx[u] = idx[u - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    fn feasible(lp: &LinearProgram, z: &DVector<f64>) -> bool {
        let tol = 1e-7;
        for j in 0..lp.num_vars() {
            if z[j] < lp.lb[j] - tol || z[j] > lp.ub[j] + tol {
                return false;
            }
        }
        for i in 0..lp.a_ub.nrows() {
            if lp.a_ub.row(i).transpose().dot(z) > lp.b_ub[i] + tol {
                return false;
            }
        }
        for i in 0..lp.a_eq.nrows() {
            if (lp.a_eq.row(i).transpose().dot(z) - lp.b_eq[i]).abs() > tol {
                return false;
            }
        }
        true
    }

    fn random_dense_lp(rng: &mut ChaCha8Rng) -> LinearProgram {
        let n = 5;
        let m = 8;
        // Feasible by construction: bounds [0, u] and b_ub = A z0 + margin
        // for an interior z0.
        let ub: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let z0: Vec<f64> = ub.iter().map(|&u| u * rng.gen_range(0.1..0.9)).collect();
        let a: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a_ub = DMatrix::from_row_slice(m, n, &a);
        let z0v = vecd(&z0);
        let mut b_ub = &a_ub * &z0v;
        for v in b_ub.iter_mut() {
            *v += rng.gen_range(0.05..0.8);
        }
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        LinearProgram::new(
            vecd(&c),
            a_ub,
            b_ub,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DVector::zeros(n),
            vecd(&ub),
        )
        .unwrap()
    }

    #[test]
    fn random_lps_match_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let lp = random_dense_lp(&mut rng);
            let sol = solve_lp(&lp, 1e-6, 10_000);
            assert_eq!(sol.status, LpStatus::Optimal);
            let oracle = vertex_enumeration_optimum(&lp).expect("oracle found no vertex");
            assert!(
                (sol.objective - oracle).abs() < 1e-8,
                "simplex {} vs oracle {}",
                sol.objective,
                oracle
            );
        }
    }

    #[test]
    fn weak_duality_certificate_bounds_primal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let lp = random_dense_lp(&mut rng);
            let sol = solve_lp(&lp, 1e-6, 10_000);
            assert_eq!(sol.status, LpStatus::Optimal);
            // Dual objective from the certificate y: g = y'b plus the bound
            // term selected by the sign of each reduced cost.
            let m_eq = lp.a_eq.nrows();
            let y = &sol.row_duals;
            let mut g = 0.0;
            for i in 0..m_eq {
                g += y[i] * lp.b_eq[i];
            }
            for i in 0..lp.a_ub.nrows() {
                g += y[m_eq + i] * lp.b_ub[i];
            }
            for j in 0..lp.num_vars() {
                let mut d = lp.c[j];
                for i in 0..m_eq {
                    d -= y[i] * lp.a_eq[(i, j)];
                }
                for i in 0..lp.a_ub.nrows() {
                    d -= y[m_eq + i] * lp.a_ub[(i, j)];
                }
                if d > 0.0 {
                    g += lp.lb[j] * d;
                } else {
                    g += lp.ub[j] * d;
                }
            }
            assert!(
                g <= sol.objective + 1e-7,
                "dual {} exceeds primal {}",
                g,
                sol.objective
            );
            // At a simplex optimum the certificate is tight.
            assert!((g - sol.objective).abs() < 1e-6);
        }
    }

    #[test]
    fn deterministic_and_scaling_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lp = random_dense_lp(&mut rng);
        let s1 = solve_lp(&lp, 1e-6, 10_000);
        let s2 = solve_lp(&lp, 1e-6, 10_000);
        assert_eq!(s1.iterations, s2.iterations);
        assert_eq!(s1.z.as_slice(), s2.z.as_slice());
        assert_eq!(s1.objective.to_bits(), s2.objective.to_bits());

        // Scaling the objective by a positive factor keeps the minimizer.
        let mut scaled = lp.clone();
        scaled.c *= 3.5;
        let s3 = solve_lp(&scaled, 1e-6, 10_000);
        assert_eq!(s1.z.as_slice(), s3.z.as_slice());
        assert!((s3.objective - 3.5 * s1.objective).abs() < 1e-9);
    }

    #[test]
    fn iteration_limit_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lp = random_dense_lp(&mut rng);
        let sol = solve_lp(&lp, 1e-6, 1);
        assert_eq!(sol.status, LpStatus::IterationLimit);
    }

    #[test]
    fn canonical_dump_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lp = random_dense_lp(&mut rng);
        let mut buf = Vec::new();
        lp.write_canonical(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(first, "5 0 8");
        // header + c + b_eq + 8 a_ub rows + b_ub + lb + ub.
        assert_eq!(text.lines().count(), 14);
    }
}
