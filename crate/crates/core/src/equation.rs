//! Systems of stochastic fixed-point equations
//!
//! ```text
//! X_r  =d  sum_j A_{r,j} X^{(j)}_{l_r(j)} + b_r,   r = 0..m
//! ```
//!
//! with random `d x d` coefficient matrices and shifts. A system is a
//! samplable description: the index maps `l_r` are fixed, the joint law of
//! `((A_{r,j})_j, b_r)` is supplied by a [`CoefficientLaw`].

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Default hard cap on the number of retained terms per equation.
pub const DEFAULT_J_MAX: usize = 64;

/// Largest supported ambient dimension.
pub const MAX_DIM: usize = 4;

/// Dense square matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    d: usize,
    entries: Vec<f64>,
}

impl SquareMatrix {
    pub fn new(d: usize, entries: Vec<f64>) -> Result<Self> {
        if d == 0 || entries.len() != d * d {
            return Err(Error::domain(format!(
                "a {d}x{d} matrix needs {} entries, got {}",
                d * d,
                entries.len()
            )));
        }
        Ok(SquareMatrix { d, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::domain("matrix rows must all have length d"));
        }
        SquareMatrix::new(d, rows.concat())
    }

    pub fn identity(d: usize) -> Self {
        SquareMatrix::scalar(d, 1.0)
    }

    /// `c * I`.
    pub fn scalar(d: usize, c: f64) -> Self {
        let mut entries = vec![0.0; d * d];
        for i in 0..d {
            entries[i * d + i] = c;
        }
        SquareMatrix { d, entries }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.d + j]
    }

    pub fn transpose(&self) -> SquareMatrix {
        let d = self.d;
        let mut entries = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                entries[j * d + i] = self.entries[i * d + j];
            }
        }
        SquareMatrix { d, entries }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        mat_vec_acc(self.d, &self.entries, x, &mut out);
        out
    }
}

/// `out += A x` for a row-major `d x d` block.
#[inline]
pub(crate) fn mat_vec_acc(d: usize, a: &[f64], x: &[f64], out: &mut [f64]) {
    if d == 1 {
        out[0] += a[0] * x[0];
        return;
    }
    for i in 0..d {
        let row = &a[i * d..(i + 1) * d];
        out[i] += row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
    }
}

/// Smallest and largest singular value of a row-major `d x d` block.
///
/// `d = 1` and `d = 2` use closed forms; `d = 3, 4` go through a dense SVD.
pub(crate) fn singular_pair(d: usize, a: &[f64]) -> (f64, f64) {
    match d {
        1 => {
            let s = a[0].abs();
            (s, s)
        }
        2 => {
            let (p, q, r, s) = (a[0], a[1], a[2], a[3]);
            // sigma_max +- sigma_min = sqrt(||A||_F^2 +- 2|det A|)
            let plus = (p + s).hypot(q - r);
            let minus = (p - s).hypot(q + r);
            let hi = 0.5 * (plus + minus);
            let det = (p * s - q * r).abs();
            let lo = if hi > 0.0 { (det / hi).min(hi) } else { 0.0 };
            (lo, hi)
        }
        _ => {
            let m = nalgebra::DMatrix::from_row_slice(d, d, a);
            let sv = m.singular_values();
            let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = sv.iter().cloned().fold(0.0, f64::max);
            (lo, hi)
        }
    }
}

fn check_matrix(m: &SquareMatrix) -> Result<()> {
    if m.d > MAX_DIM {
        return Err(Error::domain(format!("dimension {} exceeds the supported maximum {MAX_DIM}", m.d)));
    }
    if m.entries.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("matrix has non-finite entries"));
    }
    Ok(())
}

/// `min_{|t|=1} |A^T t|`, the smallest singular value.
pub fn min_gain(matrix: &SquareMatrix) -> Result<f64> {
    check_matrix(matrix)?;
    Ok(singular_pair(matrix.d, &matrix.entries).0)
}

/// `max_{|t|=1} |A^T t|`, the operator norm of the transpose (equal to that of `A`).
pub fn op_norm(matrix: &SquareMatrix) -> Result<f64> {
    check_matrix(matrix)?;
    Ok(singular_pair(matrix.d, &matrix.entries).1)
}

/// A real interval with independently open or closed ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn open(lo: f64, hi: f64) -> Self {
        Interval { lo, hi, lo_closed: false, hi_closed: false }
    }

    /// `(lo, hi]`
    pub fn open_closed(lo: f64, hi: f64) -> Self {
        Interval { lo, hi, lo_closed: false, hi_closed: true }
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }
}

/// One realization `((A_{r,j})_j, b_r)` with its per-term spectral statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientDraw {
    pub matrices: Vec<SquareMatrix>,
    pub shift: Vec<f64>,
    /// Smallest singular value of each matrix.
    pub alphas: Vec<f64>,
    /// Largest singular value of each matrix.
    pub opnorms: Vec<f64>,
}

impl CoefficientDraw {
    pub fn from_parts(matrices: Vec<SquareMatrix>, shift: Vec<f64>) -> Result<Self> {
        let mut alphas = Vec::with_capacity(matrices.len());
        let mut opnorms = Vec::with_capacity(matrices.len());
        for m in &matrices {
            check_matrix(m)?;
            let (lo, hi) = singular_pair(m.d, &m.entries);
            alphas.push(lo);
            opnorms.push(hi);
        }
        Ok(CoefficientDraw { matrices, shift, alphas, opnorms })
    }

    /// Builds the draw for a 1x1 system from scalar coefficients.
    pub fn scalar(coeffs: &[f64], shift: f64) -> Result<Self> {
        let ms = coeffs.iter().map(|&c| SquareMatrix::scalar(1, c)).collect();
        CoefficientDraw::from_parts(ms, vec![shift])
    }
}

/// `alpha^max`, `alpha^sec` and `N_r(I)` of one draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub alpha_max: f64,
    /// Second largest alpha; 0 when the draw has fewer than two terms.
    pub alpha_sec: f64,
    pub n_interval: usize,
}

/// Two largest `alphas` and the number of terms whose smallest and largest
/// singular values both fall in `interval`.
pub fn spectral_summary(draw: &CoefficientDraw, interval: Interval) -> SpectralSummary {
    spectral_summary_of(&draw.alphas, &draw.opnorms, interval)
}

pub(crate) fn spectral_summary_of(alphas: &[f64], opnorms: &[f64], interval: Interval) -> SpectralSummary {
    let (mut first, mut second) = (0.0f64, 0.0f64);
    for &a in alphas {
        if a > first {
            second = first;
            first = a;
        } else if a > second {
            second = a;
        }
    }
    let n_interval = alphas
        .iter()
        .zip(opnorms)
        .filter(|(a, o)| interval.contains(**a) && interval.contains(**o))
        .count();
    SpectralSummary { alpha_max: first, alpha_sec: second, n_interval }
}

/// Flat scratch buffer a [`CoefficientLaw`] writes one realization into.
#[derive(Clone, Debug, Default)]
pub struct RawDraw {
    d: usize,
    /// `terms * d * d` entries, one row-major block per term.
    pub coeffs: Vec<f64>,
    pub shift: Vec<f64>,
}

impl RawDraw {
    pub fn new(d: usize) -> Self {
        RawDraw { d, coeffs: Vec::with_capacity(8 * d * d), shift: vec![0.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn terms(&self) -> usize {
        self.coeffs.len() / (self.d * self.d)
    }

    pub fn matrix(&self, j: usize) -> &[f64] {
        let b = self.d * self.d;
        &self.coeffs[j * b..(j + 1) * b]
    }

    pub fn clear(&mut self) {
        self.coeffs.clear();
        self.shift.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn push_scalar(&mut self, c: f64) {
        debug_assert_eq!(self.d, 1);
        self.coeffs.push(c);
    }

    pub fn push_block(&mut self, block: &[f64]) {
        debug_assert_eq!(block.len(), self.d * self.d);
        self.coeffs.extend_from_slice(block);
    }

    pub fn to_draw(&self) -> Result<CoefficientDraw> {
        let ms = (0..self.terms())
            .map(|j| SquareMatrix::new(self.d, self.matrix(j).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        CoefficientDraw::from_parts(ms, self.shift.clone())
    }
}

/// Joint law of the coefficients and shift of every equation of a system.
///
/// Implementations must write exactly `index_map[r].len()` blocks for
/// equation `r` (zero blocks are allowed) and be deterministic given the
/// stream state.
pub trait CoefficientLaw: Send + Sync + fmt::Debug {
    fn sample_into(&self, r: usize, rng: &mut Stream, out: &mut RawDraw);
}

/// Which convergence guard for the series holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Guard {
    /// Almost surely finitely many nonzero terms, all within `j_max`.
    FiniteTerms,
    /// Truncated infinite series; `bound` documents the truncation error.
    TailBounded { epsilon: f64, bound: String },
}

/// A samplable system of fixed-point equations.
#[derive(Clone)]
pub struct EquationSystem {
    name: String,
    d: usize,
    index_map: Vec<Vec<usize>>,
    law: Arc<dyn CoefficientLaw>,
    j_max: usize,
    guard: Guard,
    initial_means: Option<Vec<Vec<f64>>>,
    recenter: bool,
}

impl fmt::Debug for EquationSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EquationSystem")
            .field("name", &self.name)
            .field("m", &self.index_map.len())
            .field("d", &self.d)
            .field("index_map", &self.index_map)
            .field("j_max", &self.j_max)
            .field("guard", &self.guard)
            .field("recenter", &self.recenter)
            .finish()
    }
}

impl EquationSystem {
    pub fn new(
        name: impl Into<String>,
        d: usize,
        index_map: Vec<Vec<usize>>,
        law: Arc<dyn CoefficientLaw>,
    ) -> Result<Self> {
        let sys = EquationSystem {
            name: name.into(),
            d,
            index_map,
            law,
            j_max: DEFAULT_J_MAX,
            guard: Guard::FiniteTerms,
            initial_means: None,
            recenter: false,
        };
        sys.validate()?;
        Ok(sys)
    }

    fn validate(&self) -> Result<()> {
        let m = self.index_map.len();
        if m == 0 {
            return Err(Error::config("a system needs at least one equation"));
        }
        if self.d == 0 || self.d > MAX_DIM {
            return Err(Error::config(format!("dimension must be in 1..={MAX_DIM}, got {}", self.d)));
        }
        if self.j_max == 0 {
            return Err(Error::config("j_max must be at least 1"));
        }
        for (r, map) in self.index_map.iter().enumerate() {
            if map.is_empty() {
                return Err(Error::config(format!("equation {r} has no terms")));
            }
            if map.len() > self.j_max {
                return Err(Error::config(format!(
                    "equation {r} has {} terms, above j_max = {}",
                    map.len(),
                    self.j_max
                )));
            }
            if let Some(bad) = map.iter().find(|&&l| l >= m) {
                return Err(Error::config(format!("equation {r} refers to equation {bad}, but m = {m}")));
            }
        }
        if let Some(means) = &self.initial_means {
            if means.len() != m || means.iter().any(|v| v.len() != self.d) {
                return Err(Error::config("initial means must be one d-vector per equation"));
            }
        }
        if let Guard::TailBounded { epsilon, bound } = &self.guard {
            if !(*epsilon > 0.0) || bound.trim().is_empty() {
                return Err(Error::config("a tail-bounded system must state epsilon > 0 and its truncation bound"));
            }
        }
        Ok(())
    }

    pub fn with_j_max(mut self, j_max: usize) -> Result<Self> {
        self.j_max = j_max;
        self.validate()?;
        Ok(self)
    }

    pub fn with_guard(mut self, guard: Guard) -> Result<Self> {
        self.guard = guard;
        self.validate()?;
        Ok(self)
    }

    /// Means the solver starts from instead of the zero pool.
    pub fn with_initial_means(mut self, means: Vec<Vec<f64>>) -> Result<Self> {
        self.initial_means = Some(means);
        self.validate()?;
        Ok(self)
    }

    /// Restricts the solution to the class of laws with the initial means
    /// (zero when none are set): the solver shifts every pool back to its
    /// target mean after each iteration. Needed when the mean map expands
    /// and the fixed point is unique only within a moment class.
    pub fn with_mean_constraint(mut self) -> Self {
        self.recenter = true;
        self
    }

    pub fn has_mean_constraint(&self) -> bool {
        self.recenter
    }

    /// Target mean of equation `r`.
    pub fn target_mean(&self, r: usize) -> Vec<f64> {
        self.initial_means.as_ref().map(|m| m[r].clone()).unwrap_or_else(|| vec![0.0; self.d])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn m(&self) -> usize {
        self.index_map.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn j_max(&self) -> usize {
        self.j_max
    }

    pub fn guard(&self) -> &Guard {
        &self.guard
    }

    pub fn index_map(&self, r: usize) -> &[usize] {
        &self.index_map[r]
    }

    pub fn initial_means(&self) -> Option<&[Vec<f64>]> {
        self.initial_means.as_deref()
    }

    pub fn law(&self) -> &Arc<dyn CoefficientLaw> {
        &self.law
    }

    fn check_equation(&self, r: usize) -> Result<()> {
        if r >= self.m() {
            return Err(Error::domain(format!("equation index {r} out of range (m = {})", self.m())));
        }
        Ok(())
    }

    /// Fast path used by the solver: fills `out` without spectral statistics.
    pub fn sample_raw(&self, r: usize, rng: &mut Stream, out: &mut RawDraw) {
        out.clear();
        self.law.sample_into(r, rng, out);
        debug_assert_eq!(out.terms(), self.index_map[r].len(), "law wrote the wrong number of terms");
    }

    /// A fresh realization for equation `r` with spectral statistics filled in.
    pub fn sample_draw(&self, r: usize, rng: &mut Stream) -> Result<CoefficientDraw> {
        self.check_equation(r)?;
        let mut raw = RawDraw::new(self.d);
        self.law.sample_into(r, rng, &mut raw);
        if raw.terms() != self.index_map[r].len() || raw.shift.len() != self.d {
            return Err(Error::numerical(format!(
                "law for '{}' produced {} terms for equation {r}, expected {}",
                self.name,
                raw.terms(),
                self.index_map[r].len()
            )));
        }
        raw.to_draw()
    }
}

/// Joint law of complex scalar coefficients `V_{r,j}` and shifts `B_r`.
pub trait ComplexCoefficientLaw: Send + Sync + fmt::Debug {
    /// Clears and fills `coeffs` with `index_map[r].len()` values and returns `B_r`.
    fn sample_complex(&self, r: usize, rng: &mut Stream, coeffs: &mut Vec<Complex64>) -> Complex64;
}

/// A system over the complex numbers, `Y_r =d sum_j V_{r,j} Y_{l_r(j)} + B_r`.
#[derive(Clone, Debug)]
pub struct ComplexSystem {
    pub name: String,
    pub index_map: Vec<Vec<usize>>,
    pub law: Arc<dyn ComplexCoefficientLaw>,
    /// Optional starting means for the solver.
    pub initial_means: Option<Vec<Complex64>>,
}

#[derive(Debug)]
struct EmbeddedLaw {
    inner: Arc<dyn ComplexCoefficientLaw>,
}

/// `x + iy  ->  [[x, -y], [y, x]]`
pub fn complex_block(v: Complex64) -> [f64; 4] {
    [v.re, -v.im, v.im, v.re]
}

impl CoefficientLaw for EmbeddedLaw {
    fn sample_into(&self, r: usize, rng: &mut Stream, out: &mut RawDraw) {
        let mut coeffs = Vec::new();
        let shift = self.inner.sample_complex(r, rng, &mut coeffs);
        for v in coeffs {
            out.push_block(&complex_block(v));
        }
        out.shift[0] = shift.re;
        out.shift[1] = shift.im;
    }
}

/// Embeds a complex system into a real system with `d = 2`.
pub fn embed_complex(system: ComplexSystem) -> Result<EquationSystem> {
    let sys = EquationSystem::new(system.name, 2, system.index_map, Arc::new(EmbeddedLaw { inner: system.law }))?;
    match system.initial_means {
        Some(means) => sys.with_initial_means(means.iter().map(|z| vec![z.re, z.im]).collect()),
        None => Ok(sys),
    }
}
