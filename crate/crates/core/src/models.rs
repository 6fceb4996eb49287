//! Model zoo: fixed-point systems for Quicksort, Pólya urns, random
//! recursive trees and split trees.
//!
//! Every constructor validates its parameters and returns an
//! [`EquationSystem`] with the exact coefficient law of the model.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::equation::{
    embed_complex, CoefficientLaw, ComplexCoefficientLaw, ComplexSystem, EquationSystem, RawDraw, SquareMatrix,
};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// `x ln x` with the continuous extension `0 ln 0 = 0`.
fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Uniform on the open interval (0, 1).
fn open_uniform(rng: &mut Stream) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Quicksort toll `g(u) = 2u ln u + 2(1-u) ln(1-u) + 1`.
pub fn quicksort_toll(u: f64) -> f64 {
    2.0 * xlnx(u) + 2.0 * xlnx(1.0 - u) + 1.0
}

/// Random recursive tree toll `h(u) = u + u ln u + (1-u) ln(1-u)`.
pub fn rrt_toll(u: f64) -> f64 {
    u + xlnx(u) + xlnx(1.0 - u)
}

/// Which entropy weighting the bivariate Quicksort toll uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quicksort2dShift {
    /// `(u ln u + (1-u) ln(1-u)) (2, 1/3) + (1, u(1-u))`; both components have mean 0.
    #[default]
    Centered,
    /// `(2u ln u + 2(1-u) ln(1-u)) (2, 1/3) + (1, u(1-u))`. Its mean is
    /// `(-1, -1/6)`, so the equation has no fixed point with a finite mean.
    DoubledEntropy,
}

/// Toll vector of the joint (comparisons, exchanges) Quicksort equation.
pub fn quicksort2d_toll(u: f64, shift: Quicksort2dShift) -> [f64; 2] {
    let mut e = xlnx(u) + xlnx(1.0 - u);
    if shift == Quicksort2dShift::DoubledEntropy {
        e *= 2.0;
    }
    [2.0 * e + 1.0, e / 3.0 + u * (1.0 - u)]
}

/// Law of a split vector on the unit simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitLaw {
    /// A fixed probability vector.
    Deterministic { v: Vec<f64> },
    /// Symmetric Dirichlet(alpha, ..., alpha).
    Dirichlet { alpha: f64 },
    /// `(U, 1-U)` with `U` uniform; the binary search tree kernel (`b = 2`).
    Uniform,
}

impl SplitLaw {
    pub fn validate(&self, b: usize) -> Result<()> {
        if b < 2 {
            return Err(Error::config(format!("branch factor b must be at least 2, got {b}")));
        }
        match self {
            SplitLaw::Deterministic { v } => {
                if v.len() != b {
                    return Err(Error::config(format!("split vector has {} entries, b = {b}", v.len())));
                }
                if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(Error::config("split vector entries must be finite and non-negative"));
                }
                if (v.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(Error::config("split vector must sum to 1"));
                }
                if v.iter().any(|&x| x >= 1.0) {
                    return Err(Error::config("split vector with a unit entry violates P(exists i: V_i = 1) < 1"));
                }
            }
            SplitLaw::Dirichlet { alpha } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(Error::config(format!("Dirichlet parameter must be positive, got {alpha}")));
                }
            }
            SplitLaw::Uniform => {
                if b != 2 {
                    return Err(Error::config(format!("the (U, 1-U) split law needs b = 2, got b = {b}")));
                }
            }
        }
        Ok(())
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, SplitLaw::Deterministic { .. })
    }

    /// Writes one split vector into `out` (length `b`). The last entry is
    /// `1 - (sum of the others)` so that the left-to-right sum is exactly 1.
    pub fn sample(&self, b: usize, rng: &mut Stream, out: &mut [f64]) {
        match self {
            SplitLaw::Deterministic { v } => out.copy_from_slice(v),
            SplitLaw::Uniform => {
                let u = open_uniform(rng);
                out[0] = u;
                out[1] = 1.0 - u;
            }
            SplitLaw::Dirichlet { alpha } => dirichlet_into(*alpha, rng, out),
        }
        let head: f64 = out[..b - 1].iter().sum();
        out[b - 1] = 1.0 - head;
    }

    /// `mu = -E[sum_j V_j ln V_j]`.
    pub fn entropy_mean(&self, b: usize) -> f64 {
        match self {
            SplitLaw::Deterministic { v } => -v.iter().map(|&x| xlnx(x)).sum::<f64>(),
            SplitLaw::Uniform => 0.5,
            SplitLaw::Dirichlet { alpha } => digamma(b as f64 * alpha + 1.0) - digamma(alpha + 1.0),
        }
    }

    /// `E[sum_j V_j^2]`.
    pub fn mean_square_sum(&self, b: usize) -> f64 {
        match self {
            SplitLaw::Deterministic { v } => v.iter().map(|x| x * x).sum(),
            SplitLaw::Uniform => 2.0 / 3.0,
            SplitLaw::Dirichlet { alpha } => (alpha + 1.0) / (b as f64 * alpha + 1.0),
        }
    }
}

/// Normalized independent Gamma(alpha) variates with the last entry set to
/// `1 - (sum of the others)`; draws with a non-positive entry are redrawn.
fn dirichlet_into(alpha: f64, rng: &mut Stream, out: &mut [f64]) {
    let gamma = Gamma::new(alpha, 1.0).expect("validated Dirichlet parameter");
    let k = out.len();
    loop {
        let mut total = 0.0;
        for x in out.iter_mut() {
            *x = gamma.sample(rng);
            total += *x;
        }
        if !(total > 0.0 && total.is_finite()) {
            continue;
        }
        out.iter_mut().for_each(|x| *x /= total);
        let head: f64 = out[..k - 1].iter().sum();
        out[k - 1] = 1.0 - head;
        if out.iter().all(|&x| x > 0.0) {
            return;
        }
    }
}

/// `C(V) = 1 + (1/mu) sum_j V_j ln V_j`.
pub fn split_toll(v: &[f64], mu: f64) -> f64 {
    1.0 + v.iter().map(|&x| xlnx(x)).sum::<f64>() / mu
}

/// Inline table of a finitely supported coefficient law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomOutcome {
    pub prob: f64,
    /// One `d x d` matrix (list of rows) per term.
    pub matrices: Vec<Vec<Vec<f64>>>,
    pub shift: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomEquation {
    pub index_map: Vec<usize>,
    pub outcomes: Vec<CustomOutcome>,
}

/// Model parameters, loadable from JSON as `{"model": "<name>", ...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Quicksort {},
    Quicksort2d {
        #[serde(default)]
        shift: Quicksort2dShift,
    },
    Rrt {},
    UrnDet { a: u32, b: u32, c: u32, d: u32 },
    UrnRand { p1: f64, p2: f64 },
    UrnMulti {
        replacement: Vec<Vec<u32>>,
        /// `[re, im]` of a large eigenvalue of the replacement matrix.
        eigenvalue: [f64; 2],
    },
    Split { b: usize, law: SplitLaw },
    Split2d {
        b: usize,
        law: SplitLaw,
        /// Defaults to the centering value `1 / (1 - E[sum V_j^2])`.
        #[serde(default)]
        c_const: Option<f64>,
    },
    Custom {
        #[serde(default = "custom_name")]
        name: String,
        d: usize,
        equations: Vec<CustomEquation>,
    },
}

fn custom_name() -> String {
    "custom".to_string()
}

/// Parameters derived from a configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub m: usize,
    pub d: usize,
    /// Urn growth exponent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_urn: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_terms: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_split: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_const: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dirichlet_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub balance: Option<u32>,
}

/// A user supplied shift function of an urn equation.
pub type UrnShift = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Quicksort {} => "quicksort",
            ModelConfig::Quicksort2d { .. } => "quicksort2d",
            ModelConfig::Rrt {} => "rrt",
            ModelConfig::UrnDet { .. } => "urn_det",
            ModelConfig::UrnRand { .. } => "urn_rand",
            ModelConfig::UrnMulti { .. } => "urn_multi",
            ModelConfig::Split { .. } => "split",
            ModelConfig::Split2d { .. } => "split2d",
            ModelConfig::Custom { .. } => "custom",
        }
    }

    /// Default configuration for a model name.
    pub fn default_for(name: &str) -> Result<Self> {
        Ok(match name {
            "quicksort" => ModelConfig::Quicksort {},
            "quicksort2d" => ModelConfig::Quicksort2d { shift: Quicksort2dShift::Centered },
            "rrt" => ModelConfig::Rrt {},
            "urn_det" => ModelConfig::UrnDet { a: 4, b: 1, c: 1, d: 4 },
            "urn_rand" => ModelConfig::UrnRand { p1: 0.9, p2: 0.85 },
            "urn_multi" => ModelConfig::UrnMulti {
                replacement: vec![vec![5, 1, 0], vec![0, 5, 1], vec![1, 0, 5]],
                eigenvalue: [4.5, 3f64.sqrt() / 2.0],
            },
            "split" => ModelConfig::Split { b: 2, law: SplitLaw::Uniform },
            "split2d" => ModelConfig::Split2d { b: 2, law: SplitLaw::Uniform, c_const: None },
            other => return Err(Error::config(format!("unknown model '{other}'"))),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        crate::error::parse_config(text)
    }

    /// Validates the configuration and computes derived parameters.
    pub fn derived(&self) -> Result<DerivedParams> {
        let mut p = DerivedParams { m: 1, d: 1, ..Default::default() };
        match self {
            ModelConfig::Quicksort {} | ModelConfig::Rrt {} => {}
            ModelConfig::Quicksort2d { .. } => p.d = 2,
            ModelConfig::UrnDet { a, b, c, d } => {
                let (a, b, c, d) = (*a as u64, *b as u64, *c as u64, *d as u64);
                if a + b != c + d {
                    return Err(Error::config(format!("urn_det needs a balanced scheme a+b = c+d, got {} vs {}", a + b, c + d)));
                }
                if b * c == 0 {
                    return Err(Error::config("urn_det needs bc > 0"));
                }
                let lambda = (a as f64 - c as f64) / (a + b) as f64;
                if !(lambda > 0.5 && lambda <= 1.0) {
                    return Err(Error::config(format!(
                        "urn_det exponent lambda = (a-c)/(a+b) = {lambda} violates 1/2 < lambda <= 1"
                    )));
                }
                let k = (a + b + 1) as usize;
                p.m = 2;
                p.lambda_urn = Some(lambda);
                p.k_terms = Some(k);
                p.dirichlet_alpha = Some(1.0 / (k - 1) as f64);
                p.balance = Some((a + b) as u32);
            }
            ModelConfig::UrnRand { p1, p2 } => {
                if !(0.0..=1.0).contains(p1) || !(0.0..=1.0).contains(p2) {
                    return Err(Error::config("urn_rand probabilities must lie in [0, 1]"));
                }
                let lambda = p1 + p2 - 1.0;
                if !(lambda > 0.5 && lambda < 1.0) {
                    return Err(Error::config(format!(
                        "urn_rand exponent lambda = p1+p2-1 = {lambda} violates 1/2 < lambda < 1"
                    )));
                }
                p.m = 2;
                p.lambda_urn = Some(lambda);
                p.k_terms = Some(3);
            }
            ModelConfig::UrnMulti { replacement, eigenvalue } => {
                let info = multi_urn_info(replacement, Complex64::new(eigenvalue[0], eigenvalue[1]))?;
                p.m = replacement.len();
                p.d = 2;
                p.lambda_urn = Some(eigenvalue[0] / info.balance as f64);
                p.k_terms = Some(info.balance as usize + 1);
                p.dirichlet_alpha = Some(1.0 / info.balance as f64);
                p.balance = Some(info.balance);
            }
            ModelConfig::Split { b, law } => {
                law.validate(*b)?;
                p.mu_split = Some(law.entropy_mean(*b));
                p.k_terms = Some(*b);
            }
            ModelConfig::Split2d { b, law, c_const } => {
                law.validate(*b)?;
                p.d = 2;
                p.mu_split = Some(law.entropy_mean(*b));
                p.k_terms = Some(*b);
                let forced = 1.0 / (1.0 - law.mean_square_sum(*b));
                p.c_const = Some(c_const.unwrap_or(forced));
            }
            ModelConfig::Custom { d, equations, .. } => {
                validate_custom(*d, equations)?;
                p.m = equations.len();
                p.d = *d;
            }
        }
        if let Some(SplitLaw::Dirichlet { alpha }) = match self {
            ModelConfig::Split { law, .. } | ModelConfig::Split2d { law, .. } => Some(law),
            _ => None,
        } {
            p.dirichlet_alpha = Some(*alpha);
        }
        Ok(p)
    }
}

/// Builds the system of a validated configuration with default urn shifts.
pub fn build(config: &ModelConfig) -> Result<EquationSystem> {
    let p = config.derived()?;
    match config {
        ModelConfig::Quicksort {} => EquationSystem::new("quicksort", 1, vec![vec![0, 0]], Arc::new(BinaryLaw { toll: quicksort_toll })),
        ModelConfig::Rrt {} => EquationSystem::new("rrt", 1, vec![vec![0, 0]], Arc::new(BinaryLaw { toll: rrt_toll })),
        ModelConfig::Quicksort2d { shift } => {
            EquationSystem::new("quicksort2d", 2, vec![vec![0, 0]], Arc::new(Quicksort2dLaw { shift: *shift }))
        }
        ModelConfig::UrnDet { a, b, c, d } => {
            let k = p.k_terms.unwrap();
            let (a, c) = (*a as usize, *c as usize);
            let default: [UrnShift; 2] = [
                Arc::new(move |dv: &[f64]| dv[..a + 1].iter().sum::<f64>() - (a + 1) as f64 / k as f64),
                Arc::new(move |dv: &[f64]| dv[..c].iter().sum::<f64>() - c as f64 / k as f64),
            ];
            urn_det_system(a as u32, *b, c as u32, *d, default)
        }
        ModelConfig::UrnRand { p1, p2 } => {
            let (p1, p2) = (*p1, *p2);
            let default: [UrnShift; 2] = [
                Arc::new(move |uf: &[f64]| (2.0 * uf[0] - 1.0) + (uf[1] - p1)),
                Arc::new(move |uf: &[f64]| (2.0 * uf[0] - 1.0) + (uf[1] - p2)),
            ];
            urn_rand_system(p1, p2, default)
        }
        ModelConfig::UrnMulti { replacement, eigenvalue } => {
            urn_multi_system(replacement, Complex64::new(eigenvalue[0], eigenvalue[1]))
        }
        ModelConfig::Split { b, law } => EquationSystem::new(
            format!("split(b={b})"),
            1,
            vec![vec![0; *b]],
            Arc::new(SplitLawCoeffs { b: *b, law: law.clone(), mu: p.mu_split.unwrap(), bivariate: None }),
        ),
        ModelConfig::Split2d { b, law, .. } => EquationSystem::new(
            format!("split2d(b={b})"),
            2,
            vec![vec![0; *b]],
            Arc::new(SplitLawCoeffs { b: *b, law: law.clone(), mu: p.mu_split.unwrap(), bivariate: p.c_const }),
        ),
        ModelConfig::Custom { name, d, equations } => {
            let law = FiniteLaw::new(*d, equations);
            EquationSystem::new(name.clone(), *d, equations.iter().map(|e| e.index_map.clone()).collect(), Arc::new(law))
        }
    }
}

/// The bivariate split-tree system for a deterministic split vector, whose
/// centered solution is concentrated on the diagonal.
pub fn degenerate_variant(config: &ModelConfig) -> Result<EquationSystem> {
    let ModelConfig::Split2d { b, law, c_const } = config else {
        return Err(Error::domain("degenerate_variant needs a split2d configuration"));
    };
    let SplitLaw::Deterministic { v } = law else {
        return Err(Error::domain("degenerate_variant needs a deterministic split vector"));
    };
    law.validate(*b)?;
    let forced = 1.0 / (1.0 - v.iter().map(|x| x * x).sum::<f64>());
    if let Some(c) = c_const {
        if (c - forced).abs() > 1e-12 * forced.abs() {
            return Err(Error::domain(format!("c_const = {c} differs from the centering value {forced}")));
        }
    }
    build(&ModelConfig::Split2d { b: *b, law: law.clone(), c_const: Some(forced) })
}

#[derive(Debug)]
struct BinaryLaw {
    toll: fn(f64) -> f64,
}

impl CoefficientLaw for BinaryLaw {
    fn sample_into(&self, _r: usize, rng: &mut Stream, out: &mut RawDraw) {
        let u = open_uniform(rng);
        out.push_scalar(u);
        out.push_scalar(1.0 - u);
        out.shift[0] = (self.toll)(u);
    }
}

#[derive(Debug)]
struct Quicksort2dLaw {
    shift: Quicksort2dShift,
}

impl CoefficientLaw for Quicksort2dLaw {
    fn sample_into(&self, _r: usize, rng: &mut Stream, out: &mut RawDraw) {
        let u = open_uniform(rng);
        out.push_block(&[u, 0.0, 0.0, u]);
        out.push_block(&[1.0 - u, 0.0, 0.0, 1.0 - u]);
        out.shift.copy_from_slice(&quicksort2d_toll(u, self.shift));
    }
}

/// The bivariate split-tree coefficient `[[v^2, v(1-v)], [0, v]]`.
pub fn split2d_matrix(v: f64) -> SquareMatrix {
    SquareMatrix::new(2, vec![v * v, v * (1.0 - v), 0.0, v]).expect("2x2")
}

#[derive(Debug)]
struct SplitLawCoeffs {
    b: usize,
    law: SplitLaw,
    mu: f64,
    /// `Some(c)` for the (Wiener index, path length) system.
    bivariate: Option<f64>,
}

impl CoefficientLaw for SplitLawCoeffs {
    fn sample_into(&self, _r: usize, rng: &mut Stream, out: &mut RawDraw) {
        let mut v = [0.0f64; 32];
        let v = if self.b <= 32 { &mut v[..self.b] } else { return self.sample_large(rng, out) };
        self.law.sample(self.b, rng, v);
        self.write(v, out);
    }
}

impl SplitLawCoeffs {
    fn sample_large(&self, rng: &mut Stream, out: &mut RawDraw) {
        let mut v = vec![0.0; self.b];
        self.law.sample(self.b, rng, &mut v);
        self.write(&v, out);
    }

    fn write(&self, v: &[f64], out: &mut RawDraw) {
        let toll = split_toll(v, self.mu);
        match self.bivariate {
            None => {
                v.iter().for_each(|&x| out.push_scalar(x));
                out.shift[0] = toll;
            }
            Some(c) => {
                for &x in v {
                    out.push_block(&[x * x, x * (1.0 - x), 0.0, x]);
                }
                let sq: f64 = v.iter().map(|x| x * x).sum();
                out.shift[0] = toll + c * (1.0 - sq) - 1.0;
                out.shift[1] = toll;
            }
        }
    }
}

struct UrnDetLaw {
    lambda: f64,
    k: usize,
    alpha: f64,
    shifts: [UrnShift; 2],
}

impl fmt::Debug for UrnDetLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UrnDetLaw").field("lambda", &self.lambda).field("k", &self.k).finish()
    }
}

impl CoefficientLaw for UrnDetLaw {
    fn sample_into(&self, r: usize, rng: &mut Stream, out: &mut RawDraw) {
        let mut dv = vec![0.0; self.k];
        dirichlet_into(self.alpha, rng, &mut dv);
        for &x in &dv {
            out.push_scalar(x.powf(self.lambda));
        }
        out.shift[0] = (self.shifts[r])(&dv);
    }
}

/// Two-colour urn with deterministic replacement `[[a, b], [c, d]]` and
/// caller supplied shift functions of the Dirichlet vector.
pub fn urn_det_system(a: u32, b: u32, c: u32, d: u32, shifts: [UrnShift; 2]) -> Result<EquationSystem> {
    let p = ModelConfig::UrnDet { a, b, c, d }.derived()?;
    let k = p.k_terms.unwrap();
    let (a, c) = (a as usize, c as usize);
    let first: Vec<usize> = (0..k).map(|j| if j < a + 1 { 0 } else { 1 }).collect();
    let second: Vec<usize> = (0..k).map(|j| if j < c { 0 } else { 1 }).collect();
    let law = UrnDetLaw { lambda: p.lambda_urn.unwrap(), k, alpha: p.dirichlet_alpha.unwrap(), shifts };
    Ok(EquationSystem::new(format!("urn_det({a},{b},{c},{d})"), 1, vec![first, second], Arc::new(law))?.with_mean_constraint())
}

struct UrnRandLaw {
    lambda: f64,
    p: [f64; 2],
    shifts: [UrnShift; 2],
}

impl fmt::Debug for UrnRandLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UrnRandLaw").field("lambda", &self.lambda).field("p", &self.p).finish()
    }
}

impl CoefficientLaw for UrnRandLaw {
    fn sample_into(&self, r: usize, rng: &mut Stream, out: &mut RawDraw) {
        let u = open_uniform(rng);
        let f = if rng.random::<f64>() < self.p[r] { 1.0 } else { 0.0 };
        let tail = (1.0 - u).powf(self.lambda);
        out.push_scalar(u.powf(self.lambda));
        out.push_scalar(f * tail);
        out.push_scalar((1.0 - f) * tail);
        out.shift[0] = (self.shifts[r])(&[u, f]);
    }
}

/// Two-colour urn with Bernoulli replacement; shifts are functions of `(U, F)`.
pub fn urn_rand_system(p1: f64, p2: f64, shifts: [UrnShift; 2]) -> Result<EquationSystem> {
    let p = ModelConfig::UrnRand { p1, p2 }.derived()?;
    let law = UrnRandLaw { lambda: p.lambda_urn.unwrap(), p: [p1, p2], shifts };
    Ok(EquationSystem::new(format!("urn_rand({p1},{p2})"), 1, vec![vec![0, 0, 1], vec![1, 1, 0]], Arc::new(law))?
        .with_mean_constraint())
}

struct MultiUrnInfo {
    balance: u32,
    /// Right eigenvector for the chosen eigenvalue, largest entry scaled to 1.
    eigenvector: Vec<Complex64>,
}

fn multi_urn_info(replacement: &[Vec<u32>], lambda: Complex64) -> Result<MultiUrnInfo> {
    let q = replacement.len();
    if q < 2 || replacement.iter().any(|row| row.len() != q) {
        return Err(Error::config("urn_multi needs a square replacement matrix with at least two colours"));
    }
    let balance: u32 = replacement[0].iter().sum();
    if balance == 0 || replacement.iter().any(|row| row.iter().sum::<u32>() != balance) {
        return Err(Error::config("urn_multi needs a balanced replacement matrix (equal positive row sums)"));
    }
    let s = balance as f64;
    if !(lambda.re > s / 2.0) {
        return Err(Error::config(format!("urn_multi eigenvalue {lambda} is not large: need Re(lambda) > S/2 = {}", s / 2.0)));
    }
    if (lambda - Complex64::new(s, 0.0)).norm() < 1e-9 {
        return Err(Error::config("urn_multi eigenvalue must differ from the balance S"));
    }
    let mut m = DMatrix::<Complex64>::from_fn(q, q, |i, j| Complex64::new(replacement[i][j] as f64, 0.0));
    for i in 0..q {
        m[(i, i)] -= lambda;
    }
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::numerical("SVD failed"))?;
    let (imin, smin) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &x)| if x < acc.1 { (i, x) } else { acc });
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    if smin > 1e-9 * scale {
        return Err(Error::config(format!("{lambda} is not an eigenvalue of the replacement matrix")));
    }
    let mut u: Vec<Complex64> = (0..q).map(|j| v_t[(imin, j)].conj()).collect();
    let pivot = *u.iter().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap();
    u.iter_mut().for_each(|z| *z /= pivot);
    Ok(MultiUrnInfo { balance, eigenvector: u })
}

#[derive(Debug)]
struct MultiUrnLaw {
    exponent: Complex64,
    terms: usize,
    alpha: f64,
}

impl ComplexCoefficientLaw for MultiUrnLaw {
    fn sample_complex(&self, _r: usize, rng: &mut Stream, coeffs: &mut Vec<Complex64>) -> Complex64 {
        let mut dv = vec![0.0; self.terms];
        dirichlet_into(self.alpha, rng, &mut dv);
        coeffs.clear();
        coeffs.extend(dv.iter().map(|&x| (self.exponent * x.ln()).exp()));
        Complex64::new(0.0, 0.0)
    }
}

/// Balanced `q`-colour urn projected on a large eigenvalue, embedded in `R^2`.
///
/// Equation `r` has `S + 1` terms (the drawn ball plus the `S` added balls)
/// with coefficients `D_j^{lambda/S}`, `D ~ Dirichlet(1/S, ..., 1/S)`. The
/// means are pinned to the right eigenvector of `lambda`, which the mean map
/// `m -> (I + R) m / (1 + lambda)` leaves fixed.
pub fn urn_multi_system(replacement: &[Vec<u32>], lambda: Complex64) -> Result<EquationSystem> {
    let info = multi_urn_info(replacement, lambda)?;
    let s = info.balance as usize;
    let index_map = replacement
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let mut map = vec![r];
            for (colour, &count) in row.iter().enumerate() {
                map.extend(std::iter::repeat_n(colour, count as usize));
            }
            map
        })
        .collect();
    let law = MultiUrnLaw { exponent: lambda / s as f64, terms: s + 1, alpha: 1.0 / s as f64 };
    Ok(embed_complex(ComplexSystem {
        name: format!("urn_multi(q={}, S={s})", replacement.len()),
        index_map,
        law: Arc::new(law),
        initial_means: Some(info.eigenvector),
    })?
    .with_mean_constraint())
}

#[derive(Debug)]
struct FiniteLaw {
    /// Per equation: cumulative probabilities, blocks, shifts.
    tables: Vec<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl FiniteLaw {
    fn new(_d: usize, equations: &[CustomEquation]) -> Self {
        let tables = equations
            .iter()
            .map(|eq| {
                let mut acc = 0.0;
                let mut cum = Vec::new();
                let mut blocks = Vec::new();
                let mut shifts = Vec::new();
                for o in &eq.outcomes {
                    acc += o.prob;
                    cum.push(acc);
                    blocks.push(o.matrices.iter().flat_map(|m| m.iter().flatten().cloned()).collect());
                    shifts.push(o.shift.clone());
                }
                (cum, blocks, shifts)
            })
            .collect();
        FiniteLaw { tables }
    }
}

impl CoefficientLaw for FiniteLaw {
    fn sample_into(&self, r: usize, rng: &mut Stream, out: &mut RawDraw) {
        let (cum, blocks, shifts) = &self.tables[r];
        let total = *cum.last().unwrap();
        let u = rng.random::<f64>() * total;
        let i = cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1);
        out.coeffs.extend_from_slice(&blocks[i]);
        out.shift.copy_from_slice(&shifts[i]);
    }
}

fn validate_custom(d: usize, equations: &[CustomEquation]) -> Result<()> {
    if d == 0 || d > crate::equation::MAX_DIM {
        return Err(Error::config(format!("custom system dimension must be in 1..=4, got {d}")));
    }
    if equations.is_empty() {
        return Err(Error::config("custom system needs at least one equation"));
    }
    for (r, eq) in equations.iter().enumerate() {
        if eq.outcomes.is_empty() {
            return Err(Error::config(format!("equation {r}: no outcomes")));
        }
        let mut total = 0.0;
        for (i, o) in eq.outcomes.iter().enumerate() {
            if !(o.prob >= 0.0 && o.prob.is_finite()) {
                return Err(Error::config(format!("equation {r}, outcome {i}: probability must be non-negative")));
            }
            total += o.prob;
            if o.matrices.len() != eq.index_map.len() {
                return Err(Error::config(format!(
                    "equation {r}, outcome {i}: {} matrices for {} terms",
                    o.matrices.len(),
                    eq.index_map.len()
                )));
            }
            if o.matrices.iter().any(|m| m.len() != d || m.iter().any(|row| row.len() != d)) {
                return Err(Error::config(format!("equation {r}, outcome {i}: matrices must be {d}x{d}")));
            }
            if o.shift.len() != d {
                return Err(Error::config(format!("equation {r}, outcome {i}: shift must have length {d}")));
            }
            let finite = o.matrices.iter().flatten().flatten().chain(&o.shift).all(|x| x.is_finite());
            if !finite {
                return Err(Error::config(format!("equation {r}, outcome {i}: non-finite entries")));
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("equation {r}: probabilities sum to {total}, not 1")));
        }
    }
    Ok(())
}

/// Documentation entry for `models` listings.
#[derive(Clone, Debug, Serialize)]
pub struct ModelDoc {
    pub name: &'static str,
    pub parameters: &'static str,
    pub description: &'static str,
    pub example: serde_json::Value,
}

pub fn catalog() -> Vec<ModelDoc> {
    let ex = |name: &str| serde_json::to_value(ModelConfig::default_for(name).unwrap()).unwrap();
    vec![
        ModelDoc {
            name: "quicksort",
            parameters: "none",
            description: "Quicksort comparisons limit: X = U X' + (1-U) X'' + g(U), m = 1, d = 1",
            example: ex("quicksort"),
        },
        ModelDoc {
            name: "quicksort2d",
            parameters: "shift: centered (default) | doubled_entropy",
            description: "Joint comparisons/exchanges limit in R^2 with diagonal coefficients U I, (1-U) I",
            example: ex("quicksort2d"),
        },
        ModelDoc {
            name: "rrt",
            parameters: "none",
            description: "Random recursive tree path length: X = U X' + (1-U) X'' + h(U)",
            example: ex("rrt"),
        },
        ModelDoc {
            name: "urn_det",
            parameters: "a, b, c, d: replacement [[a,b],[c,d]] with a+b = c+d, bc > 0, 1/2 < (a-c)/(a+b) <= 1",
            description: "Two-colour urn, K = a+b+1 terms D_j^lambda, D ~ Dirichlet(1/(K-1)); mean-zero stand-in shifts",
            example: ex("urn_det"),
        },
        ModelDoc {
            name: "urn_rand",
            parameters: "p1, p2 with 1/2 < p1+p2-1 < 1",
            description: "Two-colour urn with Bernoulli replacement; terms U^l, F(1-U)^l, (1-F)(1-U)^l",
            example: ex("urn_rand"),
        },
        ModelDoc {
            name: "urn_multi",
            parameters: "replacement: balanced q x q matrix, eigenvalue: [re, im] with Re > S/2",
            description: "q-colour balanced urn, S+1 complex terms D_j^(lambda/S) embedded in R^2",
            example: ex("urn_multi"),
        },
        ModelDoc {
            name: "split",
            parameters: "b >= 2, law: {kind: uniform | dirichlet(alpha) | deterministic(v)}",
            description: "Split tree path length: X = sum_j V_j X_j + C(V)",
            example: ex("split"),
        },
        ModelDoc {
            name: "split2d",
            parameters: "b, law as for split, optional c_const (default 1/(1-E[sum V^2]))",
            description: "Split tree (Wiener index, path length) with [[V^2, V(1-V)], [0, V]] coefficients",
            example: ex("split2d"),
        },
        ModelDoc {
            name: "custom",
            parameters: "name, d, equations: [{index_map, outcomes: [{prob, matrices, shift}]}]",
            description: "Finitely supported coefficient law given inline",
            example: serde_json::json!({
                "model": "custom", "name": "perpetuity", "d": 1,
                "equations": [{"index_map": [0], "outcomes": [{"prob": 1.0, "matrices": [[[1.0]]], "shift": [0.0]}]}]
            }),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equation::{min_gain, op_norm};
    use crate::rng::{Purpose, SeedTree};

    fn stream() -> Stream {
        SeedTree::new(11).stream(Purpose::Misc, 0, 0)
    }

    #[test]
    fn quicksort_draw_shape() {
        let sys = build(&ModelConfig::Quicksort {}).unwrap();
        let mut rng = stream();
        for _ in 0..100 {
            let d = sys.sample_draw(0, &mut rng).unwrap();
            let u = d.matrices[0].get(0, 0);
            assert!(u > 0.0 && u < 1.0);
            assert_eq!(d.matrices[1].get(0, 0), 1.0 - u);
            assert_eq!(d.shift[0], quicksort_toll(u));
        }
    }

    #[test]
    fn urn_det_example() {
        let cfg = ModelConfig::UrnDet { a: 4, b: 1, c: 1, d: 4 };
        let p = cfg.derived().unwrap();
        assert_eq!(p.k_terms, Some(6));
        assert!((p.lambda_urn.unwrap() - 0.6).abs() < 1e-15);
        assert!((p.dirichlet_alpha.unwrap() - 0.2).abs() < 1e-15);
        let sys = build(&cfg).unwrap();
        assert_eq!(sys.index_map(0), &[0, 0, 0, 0, 0, 1]);
        assert_eq!(sys.index_map(1), &[0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn urn_det_rejects_small_lambda() {
        let err = ModelConfig::UrnDet { a: 1, b: 1, c: 1, d: 1 }.derived().unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("1/2 < lambda")), "{err}");
        assert!(ModelConfig::UrnDet { a: 4, b: 0, c: 0, d: 4 }.derived().is_err());
        assert!(ModelConfig::UrnDet { a: 4, b: 1, c: 2, d: 4 }.derived().is_err());
    }

    #[test]
    fn urn_rand_bounds() {
        assert!(ModelConfig::UrnRand { p1: 0.9, p2: 0.85 }.derived().is_ok());
        assert!(ModelConfig::UrnRand { p1: 0.7, p2: 0.7 }.derived().is_err());
        assert!(ModelConfig::UrnRand { p1: 1.0, p2: 1.0 }.derived().is_err());
    }

    #[test]
    fn split_toll_at_half() {
        assert!(split_toll(&[0.5, 0.5], std::f64::consts::LN_2).abs() < 1e-15);
        let law = SplitLaw::Uniform;
        assert_eq!(law.entropy_mean(2), 0.5);
        let dir = SplitLaw::Dirichlet { alpha: 1.0 };
        assert!((dir.entropy_mean(2) - 0.5).abs() < 1e-12);
        assert!((dir.mean_square_sum(2) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn split_vectors_sum_to_one() {
        let mut rng = stream();
        for law in [SplitLaw::Uniform, SplitLaw::Dirichlet { alpha: 0.7 }, SplitLaw::Deterministic { v: vec![0.2, 0.3, 0.5] }] {
            let b = if law == SplitLaw::Uniform { 2 } else { 3 };
            let mut v = vec![0.0; b];
            for _ in 0..1000 {
                law.sample(b, &mut rng, &mut v);
                let mut s = 0.0;
                for x in &v {
                    s += x;
                }
                assert_eq!(s, 1.0);
            }
        }
    }

    #[test]
    fn quicksort2d_tolls() {
        let ln2 = std::f64::consts::LN_2;
        let t = quicksort2d_toll(0.5, Quicksort2dShift::DoubledEntropy);
        assert!((t[0] - (1.0 - 4.0 * ln2)).abs() < 1e-14);
        assert!((t[1] - (0.25 - 2.0 / 3.0 * ln2)).abs() < 1e-14);
        assert!((t[0] + 1.77259).abs() < 1e-5 && (t[1] + 0.21210).abs() < 1e-5);
        let c = quicksort2d_toll(0.5, Quicksort2dShift::Centered);
        assert!((c[0] - (1.0 - 2.0 * ln2)).abs() < 1e-14);
    }

    #[test]
    fn split2d_matrix_closed_form() {
        let mut rng = stream();
        for _ in 0..1000 {
            let v: f64 = rng.random();
            let m = split2d_matrix(v);
            let r = (1.0 + v * v).sqrt();
            let hi = v * (1.0 - v * (1.0 - v) + (1.0 - v) * r).sqrt();
            let lo = v * (1.0 - v * (1.0 - v) - (1.0 - v) * r).max(0.0).sqrt();
            assert!((op_norm(&m).unwrap() - hi).abs() < 1e-10);
            assert!((min_gain(&m).unwrap() - lo).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_variant_rules() {
        let det = ModelConfig::Split2d { b: 2, law: SplitLaw::Deterministic { v: vec![0.5, 0.5] }, c_const: None };
        let sys = degenerate_variant(&det).unwrap();
        let d = sys.sample_draw(0, &mut stream()).unwrap();
        // C(v) = 0 and c (1 - sum v^2) - 1 = 0: the shift lies on the diagonal
        assert!(d.shift[0].abs() < 1e-12 && d.shift[1].abs() < 1e-12);
        let third = ModelConfig::Split2d { b: 2, law: SplitLaw::Deterministic { v: vec![1.0 / 3.0, 2.0 / 3.0] }, c_const: None };
        assert!(degenerate_variant(&third).is_ok());
        let random = ModelConfig::Split2d { b: 2, law: SplitLaw::Uniform, c_const: None };
        assert!(matches!(degenerate_variant(&random), Err(Error::Domain(_))));
    }

    #[test]
    fn multi_urn_embedding() {
        let cfg = ModelConfig::default_for("urn_multi").unwrap();
        let sys = build(&cfg).unwrap();
        assert_eq!(sys.m(), 3);
        assert_eq!(sys.d(), 2);
        assert_eq!(sys.index_map(0), &[0, 0, 0, 0, 0, 0, 1]);
        let means = sys.initial_means().unwrap();
        assert_eq!(means.len(), 3);
        let mut rng = stream();
        let draw = sys.sample_draw(1, &mut rng).unwrap();
        for (a, o) in draw.alphas.iter().zip(&draw.opnorms) {
            assert!((a - o).abs() < 1e-12);
        }
        let bad = ModelConfig::UrnMulti { replacement: vec![vec![5, 1, 0], vec![0, 5, 1], vec![1, 0, 5]], eigenvalue: [4.0, 1.0] };
        assert!(bad.derived().is_err());
        let small = ModelConfig::UrnMulti { replacement: vec![vec![0, 1, 0], vec![0, 0, 1], vec![1, 0, 0]], eigenvalue: [-0.5, 3f64.sqrt() / 2.0] };
        assert!(small.derived().is_err());
    }

    #[test]
    fn json_round_trip_and_errors() {
        for doc in catalog() {
            let cfg: ModelConfig = serde_json::from_value(doc.example.clone()).unwrap();
            assert!(build(&cfg).is_ok(), "{}", doc.name);
        }
        let err = ModelConfig::from_json("{\"model\": \"urn_det\",\n \"a\": 1, \"b\": 1, \"c\": 1}").unwrap_err();
        assert!(err.to_string().contains("line"));
        assert!(ModelConfig::from_json("{\"model\": \"quicksort\", \"extra\": 1}").is_err());
    }

    #[test]
    fn custom_validation() {
        let bad = r#"{"model":"custom","d":1,"equations":[{"index_map":[0],"outcomes":[{"prob":0.5,"matrices":[[[1.0]]],"shift":[0.0]}]}]}"#;
        let cfg = ModelConfig::from_json(bad).unwrap();
        assert!(build(&cfg).is_err());
    }
}
