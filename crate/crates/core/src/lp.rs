//! Dense bounded-variable primal simplex.
//!
//! Problems are `min cᵀx` subject to `lo ≤ A x ≤ hi` row ranges and
//! `l ≤ x ≤ u` column bounds. Every row gets a slack `s = A x` carrying the
//! row range as its bounds, so the only equality system is `A x − s = 0`.
//! Phase one adds artificials on rows whose slack starts outside its range.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIMPLEX_TOL: f64 = 1e-7;
const PIVOT_TOL: f64 = 1e-9;
const DEGENERATE_STREAK: usize = 50;
const REFRESH_EVERY: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub name: String,
    pub coefs: Vec<(usize, f64)>,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearProgram {
    pub names: Vec<String>,
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpResult {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl LinearProgram {
    pub fn add_var(&mut self, name: impl Into<String>, cost: f64, lower: f64, upper: f64) -> usize {
        self.names.push(name.into());
        self.cost.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.names.len() - 1
    }

    pub fn add_row(&mut self, name: impl Into<String>, coefs: Vec<(usize, f64)>, lo: f64, hi: f64) {
        self.rows.push(Row { name: name.into(), coefs, lo, hi });
    }

    pub fn n_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if self.lower.len() != n || self.upper.len() != n || self.names.len() != n {
            return Err(Error::InvalidInput("column arrays differ in length".into()));
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if !l.is_finite() || !u.is_finite() || l > u || !self.cost[j].is_finite() {
                return Err(Error::InvalidInput(format!("column {} has bounds [{l}, {u}]", self.names[j])));
            }
        }
        for r in &self.rows {
            if r.coefs.iter().any(|&(j, a)| j >= n || !a.is_finite()) {
                return Err(Error::InvalidInput(format!("row {} references an unknown column", r.name)));
            }
            if r.lo.is_nan() || r.hi.is_nan() || r.lo > r.hi || r.lo == f64::INFINITY || r.hi == f64::NEG_INFINITY {
                return Err(Error::InvalidInput(format!("row {} has range [{}, {}]", r.name, r.lo, r.hi)));
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest bound or row-range violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.n_vars() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        for r in &self.rows {
            let v: f64 = r.coefs.iter().map(|&(j, a)| a * x[j]).sum();
            worst = worst.max(r.lo - v).max(v - r.hi);
        }
        worst
    }

    /// CPLEX LP text format.
    pub fn to_lp_format(&self, objective_offset: f64) -> String {
        let mut out = String::new();
        let term = |out: &mut String, a: f64, name: &str, first: bool| {
            if first {
                let _ = write!(out, " {a:+} {name}");
            } else {
                let _ = write!(out, " {} {} {name}", if a < 0.0 { '-' } else { '+' }, a.abs());
            }
        };
        let _ = writeln!(out, "\\ objective offset {objective_offset}");
        out.push_str("Minimize\n obj:");
        let mut first = true;
        for (j, &c) in self.cost.iter().enumerate() {
            if c != 0.0 {
                term(&mut out, c, &self.names[j], first);
                first = false;
            }
        }
        if first {
            out.push_str(" 0");
        }
        out.push_str("\nSubject To\n");
        for r in &self.rows {
            let _ = write!(out, " {}:", r.name);
            if r.lo.is_finite() && r.hi.is_finite() && r.lo != r.hi {
                let _ = write!(out, " {} <=", r.lo);
            }
            let mut first = true;
            for &(j, a) in &r.coefs {
                term(&mut out, a, &self.names[j], first);
                first = false;
            }
            if first {
                out.push_str(" 0");
            }
            if r.lo == r.hi {
                let _ = writeln!(out, " = {}", r.lo);
            } else if r.hi.is_finite() {
                let _ = writeln!(out, " <= {}", r.hi);
            } else {
                let _ = writeln!(out, " >= {}", r.lo);
            }
        }
        out.push_str("Bounds\n");
        for j in 0..self.n_vars() {
            let _ = writeln!(out, " {} <= {} <= {}", self.lower[j], self.names[j], self.upper[j]);
        }
        out.push_str("End\n");
        out
    }
}

struct Tableau {
    m: usize,
    ncols: usize,
    t: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    x: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    d: Vec<f64>,
    iterations: usize,
}

enum Step {
    Optimal,
    Unbounded,
    Moved,
}

impl Tableau {
    fn row(&self, r: usize) -> &[f64] {
        &self.t[r * self.ncols..(r + 1) * self.ncols]
    }

    fn reprice(&mut self) {
        self.d.copy_from_slice(&self.cost);
        for r in 0..self.m {
            let cb = self.cost[self.basis[r]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.t[r * self.ncols..(r + 1) * self.ncols];
            for (dj, &a) in self.d.iter_mut().zip(row) {
                *dj -= cb * a;
            }
        }
    }

    fn refresh_basics(&mut self) {
        for r in 0..self.m {
            let row = self.row(r);
            let v: f64 = (0..self.ncols).filter(|&j| !self.is_basic[j]).map(|j| row[j] * self.x[j]).sum();
            let b = self.basis[r];
            self.x[b] = -v;
        }
    }

    fn choose_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.ncols {
            if self.is_basic[j] || self.hi[j] - self.lo[j] <= 0.0 {
                continue;
            }
            let dj = self.d[j];
            let dir = if dj < -SIMPLEX_TOL && self.x[j] < self.hi[j] {
                1.0
            } else if dj > SIMPLEX_TOL && self.x[j] > self.lo[j] {
                -1.0
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            if best.is_none_or(|(b, _)| dj.abs() > self.d[b].abs()) {
                best = Some((j, dir));
            }
        }
        best
    }

    fn step(&mut self, bland: bool) -> (Step, f64) {
        let Some((j, dir)) = self.choose_entering(bland) else {
            return (Step::Optimal, 0.0);
        };
        let mut theta = self.hi[j] - self.lo[j];
        let mut leave: Option<(usize, f64)> = None;
        let mut leave_g = 0.0_f64;
        for r in 0..self.m {
            let g = -self.t[r * self.ncols + j] * dir;
            if g.abs() <= PIVOT_TOL {
                continue;
            }
            let b = self.basis[r];
            let (room, bound) = if g > 0.0 { (self.hi[b] - self.x[b], self.hi[b]) } else { (self.lo[b] - self.x[b], self.lo[b]) };
            if !room.is_finite() {
                continue;
            }
            let ratio = (room / g).max(0.0);
            let better = ratio < theta - 1e-12
                || (ratio <= theta + 1e-12
                    && leave.is_some()
                    && if bland { b < self.basis[leave.unwrap().0] } else { g.abs() > leave_g.abs() });
            if better {
                theta = ratio;
                leave = Some((r, bound));
                leave_g = g;
            }
        }
        if !theta.is_finite() {
            return (Step::Unbounded, 0.0);
        }
        for r in 0..self.m {
            let g = -self.t[r * self.ncols + j] * dir;
            if g != 0.0 {
                let b = self.basis[r];
                self.x[b] += g * theta;
            }
        }
        self.x[j] += dir * theta;
        match leave {
            None => {
                // bound flip
                self.x[j] = if dir > 0.0 { self.hi[j] } else { self.lo[j] };
            }
            Some((r, bound)) => {
                let out = self.basis[r];
                self.x[out] = bound;
                self.pivot(r, j);
            }
        }
        self.iterations += 1;
        (Step::Moved, theta)
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let n = self.ncols;
        let p = self.t[r * n + j];
        for v in &mut self.t[r * n..(r + 1) * n] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.t[r * n..(r + 1) * n].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * n + j];
            if f == 0.0 {
                continue;
            }
            for (v, &pr) in self.t[i * n..(i + 1) * n].iter_mut().zip(&pivot_row) {
                if pr != 0.0 {
                    *v -= f * pr;
                }
            }
            self.t[i * n + j] = 0.0;
        }
        let f = self.d[j];
        if f != 0.0 {
            for (v, &pr) in self.d.iter_mut().zip(&pivot_row) {
                *v -= f * pr;
            }
            self.d[j] = 0.0;
        }
        let out = self.basis[r];
        self.is_basic[out] = false;
        self.is_basic[j] = true;
        self.basis[r] = j;
    }

    fn run(&mut self, max_iter: usize) -> Result<Step> {
        self.reprice();
        let mut streak = 0;
        let mut since_refresh = 0;
        loop {
            if self.iterations >= max_iter {
                return Err(Error::Solver(format!("simplex iteration limit {max_iter} reached")));
            }
            let (step, theta) = self.step(streak >= DEGENERATE_STREAK);
            match step {
                Step::Optimal | Step::Unbounded => return Ok(step),
                Step::Moved => {}
            }
            streak = if theta <= 1e-12 { streak + 1 } else { 0 };
            since_refresh += 1;
            if since_refresh >= REFRESH_EVERY {
                self.refresh_basics();
                self.reprice();
                since_refresh = 0;
            }
        }
    }
}

/// Solve `lp`. The result vector holds the structural columns only.
pub fn solve(lp: &LinearProgram) -> Result<LpResult> {
    lp.validate()?;
    let n = lp.n_vars();
    let m = lp.rows.len();
    let x0: Vec<f64> = lp.lower.clone();
    let activity: Vec<f64> = lp.rows.iter().map(|r| r.coefs.iter().map(|&(j, a)| a * x0[j]).sum()).collect();
    let violated: Vec<usize> = (0..m).filter(|&r| activity[r] < lp.rows[r].lo || activity[r] > lp.rows[r].hi).collect();
    let k = violated.len();
    let ncols = n + m + k;
    let mut t = vec![0.0; m * ncols];
    let mut lo = lp.lower.clone();
    let mut hi = lp.upper.clone();
    let mut x = x0;
    let mut cost = vec![0.0; ncols];
    lo.extend(lp.rows.iter().map(|r| r.lo));
    hi.extend(lp.rows.iter().map(|r| r.hi));
    x.extend(&activity);
    let mut basis: Vec<usize> = (n..n + m).collect();
    for (r, row) in lp.rows.iter().enumerate() {
        for &(j, a) in &row.coefs {
            t[r * ncols + j] -= a;
        }
        t[r * ncols + n + r] = 1.0;
    }
    for (a, &r) in violated.iter().enumerate() {
        let col = n + m + a;
        let row = &lp.rows[r];
        let clamped = activity[r].clamp(row.lo, row.hi);
        x[n + r] = clamped;
        let excess = activity[r] - clamped;
        t[r * ncols + col] = 1.0;
        basis[r] = col;
        x.push(excess);
        if excess > 0.0 {
            lo.push(0.0);
            hi.push(f64::INFINITY);
            cost[col] = 1.0;
        } else {
            lo.push(f64::NEG_INFINITY);
            hi.push(0.0);
            cost[col] = -1.0;
        }
    }
    let mut is_basic = vec![false; ncols];
    basis.iter().for_each(|&b| is_basic[b] = true);
    let mut tab = Tableau { m, ncols, t, basis, is_basic, x, lo, hi, cost, d: vec![0.0; ncols], iterations: 0 };
    let max_iter = 50 * (m + ncols) + 1000;
    let scale = 1.0 + lp.rows.iter().map(|r| r.lo.abs().min(r.hi.abs())).filter(|v| v.is_finite()).fold(0.0, f64::max);

    if k > 0 {
        tab.run(max_iter)?;
        tab.refresh_basics();
        let infeas: f64 = (n + m..ncols).map(|c| tab.x[c].abs()).sum();
        if infeas > SIMPLEX_TOL * scale {
            return Ok(LpResult { status: LpStatus::Infeasible, x: tab.x[..n].to_vec(), objective: f64::NAN, iterations: tab.iterations });
        }
        for c in n + m..ncols {
            tab.lo[c] = 0.0;
            tab.hi[c] = 0.0;
            tab.cost[c] = 0.0;
            if !tab.is_basic[c] {
                tab.x[c] = 0.0;
            }
        }
    }
    tab.cost[..n].copy_from_slice(&lp.cost);
    let status = match tab.run(max_iter)? {
        Step::Unbounded => LpStatus::Unbounded,
        _ => LpStatus::Optimal,
    };
    tab.refresh_basics();
    let xs: Vec<f64> = (0..n).map(|j| tab.x[j].clamp(lp.lower[j], lp.upper[j])).collect();
    let objective = lp.evaluate(&xs);
    Ok(LpResult { status, x: xs, objective, iterations: tab.iterations })
}
