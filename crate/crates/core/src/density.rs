//! Empirical characteristic functions, Fourier inversion, kernel density
//! estimates and tail-decay fits of `|phi|`.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::SamplePool;
use crate::stats;

/// Largest `|phi|` allowed on the boundary of a grid that is inverted.
pub const BOUNDARY_LIMIT: f64 = 0.01;
/// Default cap on grid points per axis.
pub const DEFAULT_CAP_1D: usize = 1 << 12;
pub const DEFAULT_CAP_2D: usize = 1 << 8;

/// Points per parallel work unit; fixed so sums do not depend on threads.
const POINT_CHUNK: usize = 2048;
/// Recurrence steps between exact recomputations of `e^{itx}`.
const REFRESH: usize = 128;
/// Profile points in one decay-fit quiet run (one period at the
/// [`decay_ecf`] spacing).
const LOCAL_RUN: usize = 16;

/// Uniform grid `start + k * step`, `k < len`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl Axis {
    pub fn new(start: f64, step: f64, len: usize) -> Result<Self> {
        if !(step > 0.0 && step.is_finite() && start.is_finite()) || len == 0 {
            return Err(Error::domain("an axis needs a finite start, a positive step and at least one point"));
        }
        Ok(Axis { start, step, len })
    }

    /// Frequencies `(k - n/2) * step`, the layout the FFT inversion expects.
    pub fn symmetric(step: f64, len: usize) -> Result<Self> {
        if len < 4 || len % 2 != 0 {
            return Err(Error::domain(format!("symmetric axes need an even length >= 4, got {len}")));
        }
        Axis::new(-((len / 2) as f64) * step, step, len)
    }

    /// Checks that `points` are uniformly spaced and returns their axis.
    pub fn from_points(points: &[f64]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::domain("an axis needs at least two points"));
        }
        let step = (points[points.len() - 1] - points[0]) / (points.len() - 1) as f64;
        let tol = 1e-9 * step.abs().max(points[0].abs());
        for (k, &p) in points.iter().enumerate() {
            if (p - (points[0] + k as f64 * step)).abs() > tol {
                return Err(Error::domain(format!("axis point {k} breaks uniform spacing")));
            }
        }
        Axis::new(points[0], step, points.len())
    }

    pub fn value(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len).map(|k| self.value(k)).collect()
    }

    pub fn end(&self) -> f64 {
        self.value(self.len - 1)
    }

    /// The axis is laid out as `(k - n/2) * step`.
    pub fn is_symmetric(&self) -> bool {
        self.len >= 4 && self.len % 2 == 0 && (self.start + (self.len / 2) as f64 * self.step).abs() <= 1e-12 * self.step * self.len as f64
    }
}

/// `phi_hat(t) = (1/N) sum_k exp(i <t, x_k>)` on a grid, row-major with the
/// first axis slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharFunGrid {
    pub axes: Vec<Axis>,
    pub values: Vec<Complex64>,
    /// Pool size behind the estimate (`0` for analytic functions).
    pub n_samples: usize,
    /// Location hint: inversion centres its spatial grid here.
    pub center: Vec<f64>,
}

impl CharFunGrid {
    /// Tabulates an analytic characteristic function.
    pub fn from_fn(axes: Vec<Axis>, f: impl Fn(&[f64]) -> Complex64) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::domain("grids have one or two axes"));
        }
        let d = axes.len();
        let values = grid_points(&axes).iter().map(|t| f(&t[..d])).collect();
        Ok(CharFunGrid { center: vec![0.0; d], axes, values, n_samples: 0 })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// `a * self + b * other` on the same grid.
    pub fn combine(&self, a: f64, other: &CharFunGrid, b: f64) -> Result<CharFunGrid> {
        if self.axes != other.axes || self.center != other.center {
            return Err(Error::domain("grids differ"));
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x * a + y * b).collect();
        Ok(CharFunGrid { axes: self.axes.clone(), values, n_samples: self.n_samples.min(other.n_samples), center: self.center.clone() })
    }

    /// Largest `|phi|` over the outer boundary of the grid.
    pub fn boundary_magnitude(&self) -> f64 {
        match self.axes.len() {
            1 => self.values[0].norm().max(self.values[self.values.len() - 1].norm()),
            _ => {
                let (n1, n2) = (self.axes[0].len, self.axes[1].len);
                let mut m: f64 = 0.0;
                for i in 0..n1 {
                    for j in 0..n2 {
                        if i == 0 || j == 0 || i == n1 - 1 || j == n2 - 1 {
                            m = m.max(self.values[i * n2 + j].norm());
                        }
                    }
                }
                m
            }
        }
    }
}

fn grid_points(axes: &[Axis]) -> Vec<[f64; 2]> {
    match axes.len() {
        1 => axes[0].values().into_iter().map(|t| [t, 0.0]).collect(),
        _ => {
            let (a, b) = (axes[0].values(), axes[1].values());
            a.iter().flat_map(|&x| b.iter().map(move |&y| [x, y])).collect()
        }
    }
}

/// `sum_k e^{i t x_k}` for `t = t0 + j dt`, `j < count`.
fn exp_sums_1d(xs: &[f64], t0: f64, dt: f64, count: usize) -> Vec<Complex64> {
    let partial: Vec<Vec<Complex64>> = xs
        .par_chunks(POINT_CHUNK)
        .map(|chunk| {
            let mut acc = vec![Complex64::new(0.0, 0.0); count];
            for &x in chunk {
                let step = Complex64::from_polar(1.0, dt * x);
                let mut z = Complex64::new(0.0, 0.0);
                for (j, a) in acc.iter_mut().enumerate() {
                    z = if j % REFRESH == 0 { Complex64::from_polar(1.0, (t0 + j as f64 * dt) * x) } else { z * step };
                    *a += z;
                }
            }
            acc
        })
        .collect();
    reduce_ordered(partial, count)
}

fn reduce_ordered(partial: Vec<Vec<Complex64>>, count: usize) -> Vec<Complex64> {
    let mut total = vec![Complex64::new(0.0, 0.0); count];
    for p in partial {
        total.iter_mut().zip(p).for_each(|(t, v)| *t += v);
    }
    total
}

/// `sum_k e^{i (s x_k + u y_k)}` over the product grid `s` x `u`.
fn exp_sums_2d(points: &[f64], a: Axis, b: Axis) -> Vec<Complex64> {
    let (n1, n2) = (a.len, b.len);
    let partial: Vec<Vec<Complex64>> = points
        .par_chunks(2 * POINT_CHUNK)
        .map(|chunk| {
            let mut acc = vec![Complex64::new(0.0, 0.0); n1 * n2];
            let mut row = vec![Complex64::new(0.0, 0.0); n2];
            for p in chunk.chunks_exact(2) {
                let (x, y) = (p[0], p[1]);
                let sy = Complex64::from_polar(1.0, b.step * y);
                let mut z = Complex64::new(0.0, 0.0);
                for (j, r) in row.iter_mut().enumerate() {
                    z = if j % REFRESH == 0 { Complex64::from_polar(1.0, b.value(j) * y) } else { z * sy };
                    *r = z;
                }
                let sx = Complex64::from_polar(1.0, a.step * x);
                let mut w = Complex64::new(0.0, 0.0);
                for i in 0..n1 {
                    w = if i % REFRESH == 0 { Complex64::from_polar(1.0, a.value(i) * x) } else { w * sx };
                    let out = &mut acc[i * n2..(i + 1) * n2];
                    out.iter_mut().zip(&row).for_each(|(o, r)| *o += w * r);
                }
            }
            acc
        })
        .collect();
    reduce_ordered(partial, n1 * n2)
}

/// Empirical characteristic function of a pool on the given axes (one per
/// coordinate, `d <= 2`). On symmetric axes `phi_hat(-t)` is set to
/// `conj(phi_hat(t))` and `phi_hat(0) = 1`.
pub fn ecf(pool: &SamplePool, axes: &[Axis]) -> Result<CharFunGrid> {
    ecf_about(pool, axes, &pool.mean())
}

/// As [`ecf`]; phases are accumulated relative to `center`, which also
/// becomes the grid's location hint.
pub fn ecf_about(pool: &SamplePool, axes: &[Axis], center: &[f64]) -> Result<CharFunGrid> {
    let d = pool.d();
    if axes.len() != d || d > 2 {
        return Err(Error::domain(format!("{} axes for a pool of dimension {d} (d <= 2 supported)", axes.len())));
    }
    if center.len() != d {
        return Err(Error::domain("center has the wrong dimension"));
    }
    let n = pool.len() as f64;
    let shifted: Vec<f64> = pool.values().chunks_exact(d).flat_map(|x| x.iter().zip(center).map(|(a, c)| a - c)).collect();
    let mut values = if d == 1 {
        let ax = axes[0];
        if ax.is_symmetric() {
            // non-negative half by recurrence, negative half by conjugation
            let half = ax.len / 2;
            let pos = exp_sums_1d(&shifted, 0.0, ax.step, half);
            let edge = exp_sums_1d(&shifted, ax.start, ax.step, 1)[0];
            let mut v = vec![Complex64::new(0.0, 0.0); ax.len];
            v[0] = edge;
            for k in 0..half {
                v[half + k] = pos[k];
                if k > 0 {
                    v[half - k] = pos[k].conj();
                }
            }
            v
        } else {
            exp_sums_1d(&shifted, ax.start, ax.step, ax.len)
        }
    } else {
        let (a, b) = (axes[0], axes[1]);
        if a.is_symmetric() && b.is_symmetric() {
            half_plane_2d(&shifted, a, b)
        } else {
            exp_sums_2d(&shifted, a, b)
        }
    };
    values.iter_mut().for_each(|v| *v /= n);
    // undo the centering: phi(t) = e^{i<t,c>} phi_c(t)
    let pts = grid_points(axes);
    for (v, t) in values.iter_mut().zip(&pts) {
        let phase: f64 = t[..d].iter().zip(center).map(|(a, b)| a * b).sum();
        if phase != 0.0 {
            *v *= Complex64::from_polar(1.0, phase);
        }
    }
    if d == 1 && axes[0].is_symmetric() {
        let half = axes[0].len / 2;
        for k in 1..half {
            values[half - k] = values[half + k].conj();
        }
        values[half] = Complex64::new(1.0, 0.0);
    } else if d == 2 && axes[0].is_symmetric() && axes[1].is_symmetric() {
        symmetrize_2d(&mut values, axes[0].len, axes[1].len);
        values[(axes[0].len / 2) * axes[1].len + axes[1].len / 2] = Complex64::new(1.0, 0.0);
    }
    Ok(CharFunGrid { axes: axes.to_vec(), values, n_samples: pool.len(), center: center.to_vec() })
}

/// Sums on a symmetric 2D grid: rows with `t1 >= 0` plus the edge row and
/// edge column directly, the rest by conjugation.
fn half_plane_2d(shifted: &[f64], a: Axis, b: Axis) -> Vec<Complex64> {
    let (n1, n2) = (a.len, b.len);
    let (h1, h2) = (n1 / 2, n2 / 2);
    let upper = exp_sums_2d(shifted, Axis { start: 0.0, step: a.step, len: h1 }, b);
    let edge_row = exp_sums_2d(shifted, Axis { start: a.start, step: a.step, len: 1 }, b);
    let edge_col = exp_sums_2d(shifted, Axis { start: a.start + a.step, step: a.step, len: h1 - 1 }, Axis { start: b.start, step: b.step, len: 1 });
    let mut v = vec![Complex64::new(0.0, 0.0); n1 * n2];
    v[h1 * n2..].copy_from_slice(&upper);
    v[..n2].copy_from_slice(&edge_row);
    for i in 1..h1 {
        v[i * n2] = edge_col[i - 1];
        for j in 1..n2 {
            v[i * n2 + j] = v[(2 * h1 - i) * n2 + (2 * h2 - j)].conj();
        }
    }
    v
}

/// Makes mirrored pairs `(t, -t)` exact conjugates.
fn symmetrize_2d(v: &mut [Complex64], n1: usize, n2: usize) {
    let (h1, h2) = (n1 / 2, n2 / 2);
    for i in 1..n1 {
        for j in 1..n2 {
            let (mi, mj) = (2 * h1 - i, 2 * h2 - j);
            let (a, b) = (i * n2 + j, mi * n2 + mj);
            if a < b {
                let avg = (v[a] + v[b].conj()) * 0.5;
                v[a] = avg;
                v[b] = avg.conj();
            } else if a == b {
                v[a] = Complex64::new(v[a].re, 0.0);
            }
        }
    }
}

/// Grid selection for [`auto_ecf`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    /// Largest number of points per axis.
    pub cap: usize,
    /// Smallest number of points per axis.
    pub start: usize,
}

impl GridOptions {
    pub fn for_dim(d: usize) -> Self {
        if d == 1 {
            GridOptions { cap: DEFAULT_CAP_1D, start: 64 }
        } else {
            GridOptions { cap: DEFAULT_CAP_2D, start: 16 }
        }
    }
}

/// ECF on symmetric axes sized for inversion: the spatial window covers the
/// pool's range with a 50% margin and the number of frequencies doubles
/// until `|phi_hat|` on the boundary drops below [`BOUNDARY_LIMIT`] or the
/// cap is reached.
pub fn auto_ecf(pool: &SamplePool, options: GridOptions) -> Result<CharFunGrid> {
    let d = pool.d();
    if d > 2 {
        return Err(Error::domain("density estimation supports d <= 2"));
    }
    let center = pool.mean();
    let steps: Vec<f64> = (0..d)
        .map(|k| {
            let half = pool.component(k).iter().map(|x| (x - center[k]).abs()).fold(0.0, f64::max);
            let half = if half > 0.0 { half } else { 1.0 };
            std::f64::consts::PI / (1.5 * half)
        })
        .collect();
    let mut n = options.start.max(4).next_power_of_two();
    let cap = options.cap.max(n);
    loop {
        let axes: Vec<Axis> = steps.iter().map(|&s| Axis::symmetric(s, n)).collect::<Result<_>>()?;
        if n >= cap || boundary_probe(pool, &axes, &center) < BOUNDARY_LIMIT {
            return ecf_about(pool, &axes, &center);
        }
        n *= 2;
    }
}

/// `|phi_hat|` on the boundary of a symmetric grid, evaluated directly.
fn boundary_probe(pool: &SamplePool, axes: &[Axis], center: &[f64]) -> f64 {
    let d = pool.d();
    let shifted: Vec<f64> = pool.values().chunks_exact(d).flat_map(|x| x.iter().zip(center).map(|(a, c)| a - c)).collect();
    let n = pool.len() as f64;
    if d == 1 {
        let a = axes[0];
        let lo = exp_sums_1d(&shifted, a.start, a.step, 1)[0].norm() / n;
        let hi = exp_sums_1d(&shifted, a.end(), a.step, 1)[0].norm() / n;
        lo.max(hi)
    } else {
        let edge = |a: Axis, b: Axis, swap: bool| -> f64 {
            let mut m: f64 = 0.0;
            for t in [a.start, a.end()] {
                let line = Axis { start: t, step: a.step, len: 1 };
                let sums = if swap { exp_sums_2d(&shifted, b, line) } else { exp_sums_2d(&shifted, line, b) };
                m = sums.iter().map(|v| v.norm() / n).fold(m, f64::max);
            }
            m
        };
        edge(axes[0], axes[1], false).max(edge(axes[1], axes[0], true))
    }
}

/// ECF for [`decay_fit`]. In 1D: frequencies `t >= 0` with 16 points per
/// period of the pool's half-range, extended in blocks until a whole block
/// lies below `3 / sqrt(N)` (at most 2^14 points). In 2D: [`auto_ecf`].
pub fn decay_ecf(pool: &SamplePool) -> Result<CharFunGrid> {
    if pool.d() != 1 {
        return auto_ecf(pool, GridOptions::for_dim(pool.d()));
    }
    const BLOCK: usize = 256;
    let center = pool.mean();
    let shifted: Vec<f64> = pool.values().iter().map(|x| x - center[0]).collect();
    let half = shifted.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let step = std::f64::consts::PI / (8.0 * if half > 0.0 { half } else { 1.0 });
    let n = pool.len() as f64;
    let floor = 3.0 / n.sqrt();
    let mut values: Vec<Complex64> = Vec::new();
    while values.len() < 1 << 14 {
        let block: Vec<Complex64> =
            exp_sums_1d(&shifted, values.len() as f64 * step, step, BLOCK).into_iter().map(|v| v / n).collect();
        let quiet = block.iter().all(|v| v.norm() < floor);
        values.extend(block);
        if quiet {
            break;
        }
    }
    values[0] = Complex64::new(1.0, 0.0);
    let axis = Axis::new(0.0, step, values.len())?;
    for (k, v) in values.iter_mut().enumerate() {
        *v *= Complex64::from_polar(1.0, axis.value(k) * center[0]);
    }
    Ok(CharFunGrid { axes: vec![axis], values, n_samples: pool.len(), center })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    None,
    Hann,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityMethod {
    FourierInversion { window: Window },
    Kde { bandwidth: Vec<f64> },
}

/// Density values on a regular spatial grid, row-major, first axis slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub axes: Vec<Axis>,
    pub values: Vec<f64>,
    pub method: DensityMethod,
    /// Largest `|Im|` of the inverted values relative to the largest `|Re|`
    /// (zero for kernel estimates).
    pub imag_ratio: f64,
}

impl DensityGrid {
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.step).product()
    }

    /// Riemann sum times cell volume.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Grid coordinates of entry `i`.
    pub fn point(&self, i: usize) -> Vec<f64> {
        match self.axes.len() {
            1 => vec![self.axes[0].value(i)],
            _ => {
                let n2 = self.axes[1].len;
                vec![self.axes[0].value(i / n2), self.axes[1].value(i % n2)]
            }
        }
    }

    /// `sum |f - g| * cell volume` on a shared grid.
    pub fn l1_distance(&self, other: &DensityGrid) -> Result<f64> {
        if self.axes.len() != other.axes.len() || self.values.len() != other.values.len() {
            return Err(Error::domain("density grids differ"));
        }
        for (a, b) in self.axes.iter().zip(&other.axes) {
            if a.len != b.len || (a.start - b.start).abs() > 1e-9 * a.step || (a.step - b.step).abs() > 1e-12 * a.step {
                return Err(Error::domain("density grids differ"));
            }
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.cell_volume())
    }

    /// Linear interpolation at `x` (one-dimensional grids; zero outside).
    pub fn interpolate(&self, x: f64) -> f64 {
        let a = self.axes[0];
        let pos = (x - a.start) / a.step;
        if pos < 0.0 || pos > (a.len - 1) as f64 {
            return 0.0;
        }
        let k = (pos.floor() as usize).min(a.len - 2);
        let w = pos - k as f64;
        self.values[k] * (1.0 - w) + self.values[k + 1] * w
    }
}

/// Taper value at frequency `t` on an axis reaching `|t| = half_width`.
fn taper(window: Window, t: f64, half_width: f64) -> f64 {
    match window {
        Window::None => 1.0,
        Window::Hann => 0.5 * (1.0 + (std::f64::consts::PI * t / half_width).cos()),
    }
}

/// Fourier inversion `(2 pi)^-d int e^{-i<x,t>} phi(t) dt` by FFT. The
/// spatial axes are the FFT duals of the frequency axes, centred on the
/// grid's location hint.
pub fn invert(cf: &CharFunGrid, window: Window) -> Result<DensityGrid> {
    let d = cf.dim();
    if d == 0 || d > 2 {
        return Err(Error::domain("inversion supports one or two axes"));
    }
    if let Some(a) = cf.axes.iter().find(|a| !a.is_symmetric()) {
        return Err(Error::domain(format!(
            "frequency axis must be uniform and laid out as (k - n/2) * step; got start {} step {} len {}",
            a.start, a.step, a.len
        )));
    }
    let boundary = cf.boundary_magnitude();
    if !(boundary < BOUNDARY_LIMIT) {
        return Err(Error::numerical(format!(
            "grid too small: |phi| = {boundary:.4} on the boundary (limit {BOUNDARY_LIMIT}); the density would alias"
        )));
    }
    let lens: Vec<usize> = cf.axes.iter().map(|a| a.len).collect();
    let halves: Vec<f64> = cf.axes.iter().map(|a| (a.len / 2) as f64 * a.step).collect();
    let pts = grid_points(&cf.axes);
    let mut buf: Vec<Complex64> = cf
        .values
        .iter()
        .zip(&pts)
        .enumerate()
        .map(|(idx, (v, t))| {
            let ks = index_split(idx, &lens);
            let mut w = 1.0;
            let mut phase = 0.0;
            let mut sign = 1.0;
            for k in 0..d {
                w *= taper(window, t[k], halves[k]);
                phase -= t[k] * cf.center[k];
                if ks[k] % 2 == 1 {
                    sign = -sign;
                }
            }
            v * Complex64::from_polar(w * sign, phase)
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    if d == 1 {
        planner.plan_fft_forward(lens[0]).process(&mut buf);
    } else {
        let (n1, n2) = (lens[0], lens[1]);
        planner.plan_fft_forward(n2).process(&mut buf);
        let mut t = transpose(&buf, n1, n2);
        planner.plan_fft_forward(n1).process(&mut t);
        buf = transpose(&t, n2, n1);
    }
    let scale: f64 = cf.axes.iter().map(|a| a.step / (2.0 * std::f64::consts::PI)).product();
    // e^{-i pi n / 2} from the centred index shift, per axis
    let mut constant = Complex64::new(scale, 0.0);
    for &n in &lens {
        constant *= Complex64::from_polar(1.0, -std::f64::consts::PI * (n as f64) / 2.0);
    }
    let mut values = Vec::with_capacity(buf.len());
    let mut max_re: f64 = 0.0;
    let mut max_im: f64 = 0.0;
    for (idx, v) in buf.iter().enumerate() {
        let js = index_split(idx, &lens);
        let sign = if js.iter().sum::<usize>() % 2 == 1 { -1.0 } else { 1.0 };
        let z = v * constant * sign;
        max_re = max_re.max(z.re.abs());
        max_im = max_im.max(z.im.abs());
        values.push(z.re);
    }
    let axes = cf
        .axes
        .iter()
        .zip(&cf.center)
        .map(|(a, &c)| {
            let dx = 2.0 * std::f64::consts::PI / (a.len as f64 * a.step);
            Axis::new(c - (a.len / 2) as f64 * dx, dx, a.len)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DensityGrid {
        axes,
        values,
        method: DensityMethod::FourierInversion { window },
        imag_ratio: if max_re > 0.0 { max_im / max_re } else { 0.0 },
    })
}

fn index_split(idx: usize, lens: &[usize]) -> [usize; 2] {
    if lens.len() == 1 {
        [idx, 0]
    } else {
        [idx / lens[1], idx % lens[1]]
    }
}

fn transpose(v: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = v[i * cols + j];
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// `0.9 * min(sd, IQR / 1.34) * N^(-1/5)` per axis.
    Auto,
    Fixed(Vec<f64>),
}

/// Automatic per-axis bandwidths.
pub fn silverman_bandwidth(pool: &SamplePool) -> Vec<f64> {
    let n = pool.len() as f64;
    (0..pool.d())
        .map(|k| {
            let xs = stats::sorted_copy(&pool.component(k));
            let sd = stats::variance(&xs).sqrt();
            let iqr = stats::quantile_sorted(&xs, 0.75) - stats::quantile_sorted(&xs, 0.25);
            let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
            0.9 * spread * n.powf(-0.2)
        })
        .collect()
}

/// Gaussian-kernel density estimate on the given spatial axes (`d <= 2`).
/// Kernels are truncated at 8 bandwidths.
pub fn kde(pool: &SamplePool, bandwidth: &Bandwidth, axes: &[Axis]) -> Result<DensityGrid> {
    let d = pool.d();
    if d > 2 || axes.len() != d {
        return Err(Error::domain(format!("{} axes for a pool of dimension {d} (d <= 2 supported)", axes.len())));
    }
    let h = match bandwidth {
        Bandwidth::Auto => {
            let h = silverman_bandwidth(pool);
            if h.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::domain("pool has no spread on some axis; pass an explicit bandwidth"));
            }
            h
        }
        Bandwidth::Fixed(h) => {
            if h.len() != d || h.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::domain("bandwidth must be one positive value per axis"));
            }
            h.clone()
        }
    };
    let n = pool.len() as f64;
    let lens: Vec<usize> = axes.iter().map(|a| a.len).collect();
    let total: usize = lens.iter().product();
    let norm: f64 = h.iter().map(|hk| 1.0 / (hk * (2.0 * std::f64::consts::PI).sqrt())).product::<f64>() / n;
    // per axis: index range and kernel weights of one coordinate
    let weights = |k: usize, x: f64| -> (usize, Vec<f64>) {
        let a = axes[k];
        let lo = ((x - 8.0 * h[k] - a.start) / a.step).ceil().max(0.0);
        let hi = ((x + 8.0 * h[k] - a.start) / a.step).floor().min((a.len - 1) as f64);
        if hi < lo {
            return (0, Vec::new());
        }
        let (lo, hi) = (lo as usize, hi as usize);
        let w = (lo..=hi)
            .map(|i| {
                let u = (a.value(i) - x) / h[k];
                (-0.5 * u * u).exp()
            })
            .collect();
        (lo, w)
    };
    let partial: Vec<Vec<f64>> = pool
        .values()
        .par_chunks(d * POINT_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; total];
            for x in chunk.chunks_exact(d) {
                if d == 1 {
                    let (lo, w) = weights(0, x[0]);
                    acc[lo..lo + w.len()].iter_mut().zip(&w).for_each(|(a, v)| *a += v);
                } else {
                    let (lo1, w1) = weights(0, x[0]);
                    let (lo2, w2) = weights(1, x[1]);
                    for (i, a) in w1.iter().enumerate() {
                        let row = &mut acc[(lo1 + i) * lens[1] + lo2..(lo1 + i) * lens[1] + lo2 + w2.len()];
                        row.iter_mut().zip(&w2).for_each(|(o, b)| *o += a * b);
                    }
                }
            }
            acc
        })
        .collect();
    let mut values = vec![0.0; total];
    for p in partial {
        values.iter_mut().zip(p).for_each(|(v, x)| *v += x);
    }
    values.iter_mut().for_each(|v| *v *= norm);
    Ok(DensityGrid { axes: axes.to_vec(), values, method: DensityMethod::Kde { bandwidth: h }, imag_ratio: 0.0 })
}

/// Log-log fit of the envelope `psi(t) = sup_{s >= t} |phi_hat(s)|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Minus the fitted slope: `|phi| ~ C t^(-beta_hat)`.
    pub beta_hat: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    pub points: usize,
    /// `3 / sqrt(n_samples)`; the window stops where the envelope reaches it.
    pub noise_floor: f64,
    /// `(lower edge, beta)` for lower edges doubling from the window start.
    pub window_slopes: Vec<(f64, f64)>,
    /// The slope magnitude keeps growing as the lower edge doubles.
    pub super_polynomial: bool,
    /// Too few points above the noise floor for a fit.
    pub inconclusive: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayOptions {
    /// Lower edge of the window; by default the first `t` with `psi(t) < 0.5`.
    pub t_min: Option<f64>,
    /// Log-spaced fitting points per decade.
    pub per_decade: usize,
}

impl Default for DecayOptions {
    fn default() -> Self {
        DecayOptions { t_min: None, per_decade: 40 }
    }
}

/// Radial profile `(t, |phi_hat|)` for `t > 0`: the positive half-axis in
/// 1D; in 2D the mean over 32 directions (bilinear interpolation) per radius.
pub fn radial_profile(cf: &CharFunGrid) -> Result<Vec<(f64, f64)>> {
    match cf.dim() {
        1 => Ok(cf.axes[0].values().into_iter().zip(&cf.values).filter(|(t, _)| *t > 0.0).map(|(t, v)| (t, v.norm())).collect()),
        2 => {
            let (a, b) = (cf.axes[0], cf.axes[1]);
            let n2 = b.len;
            let reach = (-a.start).min(a.end()).min(-b.start).min(b.end());
            let dr = a.step.min(b.step);
            let mags: Vec<f64> = cf.values.iter().map(|v| v.norm()).collect();
            let at = |s: f64, u: f64| -> f64 {
                let (p, q) = ((s - a.start) / a.step, (u - b.start) / b.step);
                let (i, j) = ((p.floor() as usize).min(a.len - 2), (q.floor() as usize).min(b.len - 2));
                let (wp, wq) = (p - i as f64, q - j as f64);
                mags[i * n2 + j] * (1.0 - wp) * (1.0 - wq)
                    + mags[(i + 1) * n2 + j] * wp * (1.0 - wq)
                    + mags[i * n2 + j + 1] * (1.0 - wp) * wq
                    + mags[(i + 1) * n2 + j + 1] * wp * wq
            };
            let mut out = Vec::new();
            let mut r = dr;
            while r <= reach {
                let mean = (0..32)
                    .map(|k| {
                        let th = 2.0 * std::f64::consts::PI * k as f64 / 32.0;
                        at(r * th.cos(), r * th.sin())
                    })
                    .sum::<f64>()
                    / 32.0;
                out.push((r, mean));
                r += dr;
            }
            Ok(out)
        }
        _ => Err(Error::domain("decay fits need a 1D or 2D grid")),
    }
}

pub fn decay_fit(cf: &CharFunGrid, options: DecayOptions) -> Result<DecayFit> {
    let profile = radial_profile(cf)?;
    let floor = if cf.n_samples > 0 { 3.0 / (cf.n_samples as f64).sqrt() } else { 1e-12 };
    // the window ends where a run of LOCAL_RUN consecutive values stays under
    // the floor; isolated noise spikes further out are ignored
    let t_max = profile
        .windows(LOCAL_RUN)
        .find(|w| w.iter().all(|p| p.1 <= floor))
        .map(|w| w[0].0)
        .unwrap_or_else(|| profile.last().map(|p| p.0).unwrap_or(f64::NAN));
    let profile: Vec<(f64, f64)> = profile.into_iter().filter(|p| p.0 < t_max).collect();
    let mut psi = profile.clone();
    for k in (0..psi.len().saturating_sub(1)).rev() {
        psi[k].1 = psi[k].1.max(psi[k + 1].1);
    }
    // fit only where the envelope is attained, i.e. on the upper hull
    let records: Vec<(f64, f64)> = psi.iter().zip(&profile).filter(|(e, p)| e.1 == p.1).map(|(e, _)| *e).collect();
    let t_min = options.t_min.unwrap_or_else(|| psi.iter().find(|p| p.1 < 0.5).map(|p| p.0).unwrap_or(f64::INFINITY));
    let empty = DecayFit {
        beta_hat: f64::NAN,
        window: (t_min, t_max),
        r_squared: f64::NAN,
        points: 0,
        noise_floor: floor,
        window_slopes: Vec::new(),
        super_polynomial: false,
        inconclusive: true,
    };
    let fit_between = |lo: f64, hi: f64| -> Option<stats::LinearFit> {
        if !(hi > lo) || lo <= 0.0 {
            return None;
        }
        let decades = (hi / lo).log10();
        let count = ((decades * options.per_decade as f64).ceil() as usize).max(2);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut last = usize::MAX;
        for k in 0..=count {
            let t = lo * (hi / lo).powf(k as f64 / count as f64);
            // nearest profile point at or below t
            let idx = records.partition_point(|p| p.0 <= t).saturating_sub(1);
            if records.is_empty() || idx == last || records[idx].0 < lo * (1.0 - 1e-12) || records[idx].1 <= 0.0 {
                continue;
            }
            last = idx;
            xs.push(records[idx].0.ln());
            ys.push(records[idx].1.ln());
        }
        if xs.len() < 3 {
            return None;
        }
        stats::linear_fit(&xs, &ys)
    };
    let Some(main) = fit_between(t_min, t_max) else {
        return Ok(empty);
    };
    let mut window_slopes = vec![(t_min, -main.slope)];
    let mut edge = 2.0 * t_min;
    while let Some(f) = fit_between(edge, t_max) {
        window_slopes.push((edge, -f.slope));
        edge *= 2.0;
    }
    let betas: Vec<f64> = window_slopes.iter().map(|w| w.1).collect();
    let super_polynomial = betas.len() >= 2
        && betas.windows(2).all(|w| w[1] >= w[0])
        && betas[betas.len() - 1] >= 1.25 * betas[0];
    Ok(DecayFit {
        beta_hat: -main.slope,
        window: (t_min, t_max),
        r_squared: main.r_squared,
        points: main.n,
        noise_floor: floor,
        window_slopes,
        super_polynomial,
        inconclusive: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_cf_peak() {
        let ax = Axis::symmetric(40.0 / 4096.0, 4096).unwrap();
        let cf = CharFunGrid::from_fn(vec![ax], |t| Complex64::new((-t[0] * t[0] / 2.0).exp(), 0.0)).unwrap();
        let g = invert(&cf, Window::None).unwrap();
        assert!((g.max() - 0.398_942_280_401_432_7).abs() < 1e-3);
        assert!((g.integral() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn point_mass_is_rejected() {
        let ax = Axis::symmetric(0.1, 64).unwrap();
        let cf = CharFunGrid::from_fn(vec![ax], |_| Complex64::new(1.0, 0.0)).unwrap();
        assert!(matches!(invert(&cf, Window::Hann), Err(Error::Numerical(_))));
        let bad = CharFunGrid { axes: vec![Axis::new(0.0, 0.1, 64).unwrap()], ..cf };
        assert!(matches!(invert(&bad, Window::Hann), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_pool_cf_is_one() {
        let pool = SamplePool::constant(&[0.0], 100).unwrap();
        let cf = ecf(&pool, &[Axis::symmetric(0.5, 16).unwrap()]).unwrap();
        assert!(cf.values.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn two_point_cf() {
        let pool = SamplePool::from_values((0..1000).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect()).unwrap();
        let ax = Axis::symmetric(std::f64::consts::PI / 8.0, 32).unwrap();
        let cf = ecf(&pool, &[ax]).unwrap();
        for (t, v) in ax.values().iter().zip(&cf.values) {
            assert!((v.re - t.cos()).abs() < 1e-12 && v.im.abs() < 1e-12);
        }
        assert!((cf.values[16 + 8].re + 1.0).abs() < 1e-12);
    }

    #[test]
    fn conjugate_symmetry_exact() {
        let pool = SamplePool::from_values((0..3000).map(|i| ((i * 7919) % 1000) as f64 / 997.0 + 0.3).collect()).unwrap();
        let ax = Axis::symmetric(0.37, 128).unwrap();
        let cf = ecf(&pool, &[ax]).unwrap();
        for k in 1..64 {
            assert_eq!(cf.values[64 + k], cf.values[64 - k].conj());
        }
        assert_eq!(cf.values[64], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn kde_of_zero_pool_is_normal() {
        let pool = SamplePool::constant(&[0.0], 50).unwrap();
        let ax = Axis::new(-4.0, 0.01, 801).unwrap();
        let g = kde(&pool, &Bandwidth::Fixed(vec![1.0]), &[ax]).unwrap();
        for i in (0..801).step_by(50) {
            let x = ax.value(i);
            assert!((g.values[i] - (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        }
        assert!(kde(&pool, &Bandwidth::Auto, &[ax]).is_err());
    }
}
