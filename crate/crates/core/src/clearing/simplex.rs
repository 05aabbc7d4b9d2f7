//! Dense primal simplex for `max c·x  s.t.  A x <= b, x >= 0` with `b >= 0`,
//! so the all-slack basis is a feasible start. Pivoting follows Bland's rule.

use std::fmt::Write as _;
use thiserror::Error;

const PIVOT_EPS: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;
const MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("row {row} has {got} coefficients, expected {expected}")]
    Shape { row: usize, got: usize, expected: usize },
    #[error("row {row} has negative right-hand side {value}; the origin must be feasible")]
    InfeasibleOrigin { row: usize, value: f64 },
    #[error("objective is unbounded along variable {variable}")]
    Unbounded { variable: usize },
    #[error("no optimum after {0} pivots")]
    IterationLimit(usize),
    #[error("non-finite coefficient in the program")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub variable_names: Vec<String>,
    pub row_names: Vec<String>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        let variable_names = (0..objective.len()).map(|j| format!("x{j}")).collect();
        LinearProgram { objective, variable_names, ..Default::default() }
    }

    pub fn num_variables(&self) -> usize {
        self.objective.len()
    }

    /// Adds `coeffs · x <= rhs`.
    pub fn add_row(&mut self, name: impl Into<String>, coeffs: Vec<f64>, rhs: f64) {
        self.rows.push(coeffs);
        self.rhs.push(rhs);
        self.row_names.push(name.into());
    }

    /// Largest violation of any row or sign constraint at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let sign = x.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(row, b)| (dot(row, x) - b).max(0.0))
            .fold(sign, f64::max)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        dot(&self.objective, x)
    }

    /// The constraint matrix as CSV, one row per constraint.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row");
        for name in &self.variable_names {
            let _ = write!(out, ",{name}");
        }
        out.push_str(",rhs\n");
        out.push_str("objective");
        for c in &self.objective {
            let _ = write!(out, ",{c}");
        }
        out.push_str(",\n");
        for ((name, row), b) in self.row_names.iter().zip(&self.rows).zip(&self.rhs) {
            out.push_str(name);
            for a in row {
                let _ = write!(out, ",{a}");
            }
            let _ = writeln!(out, ",{b}");
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    let n = lp.num_variables();
    let m = lp.rows.len();
    for (row, coeffs) in lp.rows.iter().enumerate() {
        if coeffs.len() != n {
            return Err(LpError::Shape { row, got: coeffs.len(), expected: n });
        }
    }
    if lp.rows.iter().flatten().chain(&lp.rhs).chain(&lp.objective).any(|v| !v.is_finite()) {
        return Err(LpError::NonFinite);
    }
    if let Some((row, &value)) = lp.rhs.iter().enumerate().find(|(_, b)| **b < 0.0) {
        return Err(LpError::InfeasibleOrigin { row, value });
    }

    // Tableau columns: structural, slack, rhs. Row m holds reduced costs.
    let width = n + m + 1;
    let mut tab = vec![0.0; (m + 1) * width];
    for i in 0..m {
        let r = &mut tab[i * width..(i + 1) * width];
        r[..n].copy_from_slice(&lp.rows[i]);
        r[n + i] = 1.0;
        r[width - 1] = lp.rhs[i];
    }
    for j in 0..n {
        tab[m * width + j] = -lp.objective[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    let mut pivots = 0;
    // Bland: lowest-index improving column
    while let Some(enter) = (0..n + m).find(|&j| tab[m * width + j] < -PIVOT_EPS) {
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            let a = tab[i * width + enter];
            if a > PIVOT_EPS {
                let ratio = tab[i * width + width - 1] / a;
                let better = match leave {
                    None => true,
                    Some(l) => ratio < best - 1e-12 || (ratio <= best + 1e-12 && basis[i] < basis[l]),
                };
                if better {
                    best = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(leave) = leave else {
            return Err(LpError::Unbounded { variable: enter });
        };
        pivot(&mut tab, width, m, leave, enter);
        basis[leave] = enter;
        pivots += 1;
        if pivots >= MAX_ITERATIONS {
            return Err(LpError::IterationLimit(pivots));
        }
    }

    let mut x = vec![0.0; n];
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            let v = tab[i * width + width - 1];
            x[b] = if v.abs() < PIVOT_EPS { 0.0 } else { v.max(0.0) };
        }
    }
    let violation = lp.max_violation(&x);
    if violation > FEAS_TOL {
        // accumulated round-off; re-solving will not help on a dense tableau
        return Err(LpError::IterationLimit(pivots));
    }
    Ok(LpSolution { objective: lp.objective_value(&x), x, pivots })
}

fn pivot(tab: &mut [f64], width: usize, m: usize, row: usize, col: usize) {
    let p = tab[row * width + col];
    for v in &mut tab[row * width..(row + 1) * width] {
        *v /= p;
    }
    let pivot_row: Vec<f64> = tab[row * width..(row + 1) * width].to_vec();
    for i in 0..=m {
        if i == row {
            continue;
        }
        let factor = tab[i * width + col];
        if factor.abs() < 1e-15 {
            continue;
        }
        let r = &mut tab[i * width..(i + 1) * width];
        for (v, pv) in r.iter_mut().zip(&pivot_row) {
            *v -= factor * pv;
        }
        r[col] = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_bound() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_row("cap", vec![1.0], 5.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.x, vec![5.0]);
        assert_eq!(s.objective, 5.0);
    }

    #[test]
    fn zero_capacity_program() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.add_row("a", vec![1.0, 0.0], 0.0);
        lp.add_row("b", vec![0.0, 1.0], 0.0);
        assert_eq!(solve_lp(&lp).unwrap().objective, 0.0);
    }

    #[test]
    fn textbook_two_variable() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18  ->  (2, 6), 36
        let mut lp = LinearProgram::new(vec![3.0, 5.0]);
        lp.add_row("r1", vec![1.0, 0.0], 4.0);
        lp.add_row("r2", vec![0.0, 2.0], 12.0);
        lp.add_row("r3", vec![3.0, 2.0], 18.0);
        let s = solve_lp(&lp).unwrap();
        assert!((s.objective - 36.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn detects_unbounded_and_bad_input() {
        let mut lp = LinearProgram::new(vec![1.0, 0.0]);
        lp.add_row("r", vec![0.0, 1.0], 1.0);
        assert!(matches!(solve_lp(&lp), Err(LpError::Unbounded { variable: 0 })));

        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_row("r", vec![1.0], -1.0);
        assert!(matches!(solve_lp(&lp), Err(LpError::InfeasibleOrigin { row: 0, .. })));

        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_row("r", vec![1.0, 2.0], 1.0);
        assert!(matches!(solve_lp(&lp), Err(LpError::Shape { .. })));
    }

    #[test]
    fn degenerate_cycling_example_terminates() {
        // Beale's example cycles under the largest-coefficient rule.
        let mut lp = LinearProgram::new(vec![0.75, -150.0, 0.02, -6.0]);
        lp.add_row("r1", vec![0.25, -60.0, -0.04, 9.0], 0.0);
        lp.add_row("r2", vec![0.5, -90.0, -0.02, 3.0], 0.0);
        lp.add_row("r3", vec![0.0, 0.0, 1.0, 0.0], 1.0);
        let s = solve_lp(&lp).unwrap();
        assert!((s.objective - 0.05).abs() < 1e-9);
    }

    /// Vertex enumeration oracle for two-variable programs.
    fn brute_2d(lp: &LinearProgram) -> f64 {
        let mut lines: Vec<(f64, f64, f64)> = lp
            .rows
            .iter()
            .zip(&lp.rhs)
            .map(|(r, b)| (r[0], r[1], *b))
            .collect();
        lines.push((1.0, 0.0, 0.0));
        lines.push((0.0, 1.0, 0.0));
        let mut best = 0.0f64;
        for i in 0..lines.len() {
            for j in i + 1..lines.len() {
                let (a1, b1, c1) = lines[i];
                let (a2, b2, c2) = lines[j];
                let det = a1 * b2 - a2 * b1;
                if det.abs() < 1e-12 {
                    continue;
                }
                let x = [(c1 * b2 - c2 * b1) / det, (a1 * c2 - a2 * c1) / det];
                if lp.max_violation(&x) < 1e-9 {
                    best = best.max(lp.objective_value(&x));
                }
            }
        }
        best
    }

    #[test]
    fn random_two_variable_programs_match_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let mut lp = LinearProgram::new(vec![rng.random_range(-1.0..2.0), rng.random_range(-1.0..2.0)]);
            lp.add_row("box", vec![1.0, 1.0], rng.random_range(0.0..10.0));
            for k in 0..rng.random_range(1..5) {
                lp.add_row(
                    format!("r{k}"),
                    vec![rng.random_range(-2.0..3.0), rng.random_range(-2.0..3.0)],
                    rng.random_range(0.0..10.0),
                );
            }
            let s = solve_lp(&lp).unwrap();
            assert!(lp.max_violation(&s.x) < 1e-7);
            assert!((s.objective - brute_2d(&lp)).abs() < 1e-6);
        }
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_row("cap", vec![1.0], 5.0);
        let csv = lp.to_csv();
        assert_eq!(csv, "row,x0,rhs\nobjective,1,\ncap,1,5\n");
    }
}
