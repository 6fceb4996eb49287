//! Population-dynamics solver: the distributional map applied to empirical
//! sample pools, plus distances and moment checks between pools.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equation::{mat_vec_acc, EquationSystem, RawDraw};
use crate::error::{Error, Result};
use crate::rng::{minor, Purpose, SeedTree, Stream, CHUNK};
use crate::stats;

/// Where a pool's randomness came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub master: u64,
    /// Slash-separated derivation path below the master seed.
    pub path: String,
}

impl SeedLineage {
    pub fn root(master: u64) -> Self {
        SeedLineage { master, path: String::new() }
    }
}

/// `N` points in `R^d`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePool {
    d: usize,
    values: Vec<f64>,
    generation: u64,
    lineage: SeedLineage,
}

impl SamplePool {
    pub fn new(d: usize, values: Vec<f64>, generation: u64, lineage: SeedLineage) -> Result<Self> {
        if d == 0 || values.is_empty() || values.len() % d != 0 {
            return Err(Error::domain(format!("pool of {} values is not a nonempty set of {d}-vectors", values.len())));
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::domain(format!("pool entry {i} is not finite")));
        }
        Ok(SamplePool { d, values, generation, lineage })
    }

    /// One-dimensional pool from plain values.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        Self::new(1, values, 0, SeedLineage::root(0))
    }

    /// `n` copies of `point`.
    pub fn constant(point: &[f64], n: usize) -> Result<Self> {
        let values = point.iter().copied().cycle().take(point.len() * n).collect();
        Self::new(point.len(), values, 0, SeedLineage::root(0))
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn lineage(&self) -> &SeedLineage {
        &self.lineage
    }

    /// Coordinate `k` of every point.
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.values.iter().skip(k).step_by(self.d).copied().collect()
    }

    /// `<s, x>` for every point.
    pub fn project(&self, s: &[f64]) -> Vec<f64> {
        self.values.chunks_exact(self.d).map(|x| x.iter().zip(s).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        stats::mean_and_covariance(&self.values, self.d).0
    }

    /// Unbiased covariance, row-major `d x d`.
    pub fn covariance(&self) -> Vec<f64> {
        stats::mean_and_covariance(&self.values, self.d).1
    }
}

/// Initial pools.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    /// Every point equals the system's initial mean (zero unless the system sets one).
    #[default]
    Constant,
    /// Initial mean plus independent `N(0, scale^2)` coordinates.
    Gaussian { scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub pool_size: usize,
    pub max_iters: usize,
    pub tol: f64,
    /// Order of the Wasserstein distance used for the stopping rule.
    pub p: f64,
    /// Random directions of the sliced distance when `d >= 2`.
    pub directions: usize,
    /// Consecutive sub-tolerance iterations required to stop.
    pub patience: usize,
    /// Iterations always performed before the tolerance rule may stop.
    pub min_iters: usize,
    /// Points of each pool entering the sliced stopping-rule distance when
    /// `d >= 2` (`0`: all). One-dimensional distances always use every point.
    pub distance_sample: usize,
    pub init: Init,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            pool_size: 100_000,
            max_iters: 60,
            tol: 2e-2,
            p: 2.0,
            directions: 64,
            patience: 3,
            min_iters: 20,
            distance_sample: 1 << 15,
            init: Init::Constant,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub generation: u64,
    /// Distance between consecutive pools, per equation.
    pub distances: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
    /// Slots whose first draw overflowed and were drawn again.
    pub resampled: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    Tolerance,
    MaxIters,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub stop_rule: StopRule,
    pub p: f64,
    pub tol: f64,
    pub pool_size: usize,
    pub seed: u64,
}

impl SolveDiagnostics {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

/// Initial pools for `system`.
pub fn initial_pools(system: &EquationSystem, n: usize, init: Init, seeds: &SeedTree) -> Result<Vec<SamplePool>> {
    let d = system.d();
    (0..system.m())
        .map(|r| {
            let mean = system.initial_means().map(|m| m[r].clone()).unwrap_or_else(|| vec![0.0; d]);
            let mut values: Vec<f64> = mean.iter().copied().cycle().take(n * d).collect();
            if let Init::Gaussian { scale } = init {
                if !(scale.is_finite() && scale >= 0.0) {
                    return Err(Error::config("Gaussian warm start needs a finite non-negative scale"));
                }
                values.par_chunks_mut(CHUNK * d).enumerate().for_each(|(c, chunk)| {
                    let mut rng = seeds.stream(Purpose::Init, 0, minor(r, c));
                    for x in chunk.iter_mut() {
                        let z: f64 = rng.sample(StandardNormal);
                        *x += scale * z;
                    }
                });
            }
            SamplePool::new(d, values, 0, SeedLineage { master: seeds.master(), path: format!("init/{r}") })
        })
        .collect()
}

fn check_aligned(system: &EquationSystem, pools: &[SamplePool]) -> Result<usize> {
    if pools.len() != system.m() {
        return Err(Error::domain(format!("{} pools for a system with m = {}", pools.len(), system.m())));
    }
    let n = pools[0].len();
    for (r, p) in pools.iter().enumerate() {
        if p.d() != system.d() {
            return Err(Error::domain(format!("pool {r} has dimension {}, system has d = {}", p.d(), system.d())));
        }
        if p.len() != n {
            return Err(Error::domain(format!("pool {r} has {} points, pool 0 has {n}", p.len())));
        }
    }
    Ok(n)
}

/// Result of one application of the distributional map.
#[derive(Clone, Debug)]
pub struct IterateOutput {
    pub pools: Vec<SamplePool>,
    pub resampled: usize,
}

/// One application of the map: every output slot of pool `r` is
/// `sum_j A_{r,j} x_j + b_r` with fresh coefficients and independent uniform
/// picks `x_j` from pool `l_r(j)`. Systems with a mean constraint have their
/// pools shifted back to the target means afterwards.
pub fn iterate(system: &EquationSystem, pools: &[SamplePool], seeds: &SeedTree) -> Result<IterateOutput> {
    let n = check_aligned(system, pools)?;
    let d = system.d();
    let generation = pools[0].generation() + 1;
    let mut out = Vec::with_capacity(system.m());
    let mut resampled = 0;
    for r in 0..system.m() {
        let map = system.index_map(r);
        let mut values = vec![0.0; n * d];
        let counts = values
            .par_chunks_mut(CHUNK * d)
            .enumerate()
            .map(|(c, chunk)| {
                let mut rng = seeds.stream(Purpose::Iterate, generation, minor(r, c));
                let mut raw = RawDraw::new(d);
                let mut redrawn = 0;
                for slot in chunk.chunks_exact_mut(d) {
                    let mut attempt = 0;
                    loop {
                        fill_slot(system, r, map, pools, n, &mut rng, &mut raw, slot);
                        if slot.iter().all(|x| x.is_finite()) {
                            break;
                        }
                        attempt += 1;
                        if attempt > 1 {
                            return Err(Error::numerical(format!(
                                "equation {r} produced a non-finite value twice in a row at generation {generation}"
                            )));
                        }
                        redrawn += 1;
                    }
                }
                Ok(redrawn)
            })
            .collect::<Result<Vec<usize>>>()?;
        resampled += counts.iter().sum::<usize>();
        if system.has_mean_constraint() {
            let target = system.target_mean(r);
            let mean = stats::mean_and_covariance(&values, d).0;
            let delta: Vec<f64> = mean.iter().zip(&target).map(|(m, t)| m - t).collect();
            for x in values.chunks_exact_mut(d) {
                x.iter_mut().zip(&delta).for_each(|(v, s)| *v -= s);
            }
        }
        let lineage = SeedLineage { master: seeds.master(), path: format!("iterate/{generation}/{r}") };
        out.push(SamplePool::new(d, values, generation, lineage)?);
    }
    Ok(IterateOutput { pools: out, resampled })
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn fill_slot(
    system: &EquationSystem,
    r: usize,
    map: &[usize],
    pools: &[SamplePool],
    n: usize,
    rng: &mut Stream,
    raw: &mut RawDraw,
    slot: &mut [f64],
) {
    let d = slot.len();
    system.sample_raw(r, rng, raw);
    slot.copy_from_slice(&raw.shift);
    for (j, &l) in map.iter().enumerate() {
        let idx = rng.random_range(0..n);
        mat_vec_acc(d, raw.matrix(j), &pools[l].values[idx * d..(idx + 1) * d], slot);
    }
}

/// Distance between two pools of equal size: exact `l_p` for `d = 1`, the
/// sliced surrogate otherwise.
pub fn pool_distance(a: &SamplePool, b: &SamplePool, p: f64, directions: usize, rng: &mut Stream) -> Result<f64> {
    if a.d() != b.d() {
        return Err(Error::domain("pools of different dimensions"));
    }
    if a.d() == 1 {
        let (sa, sb) = (par_sorted(a.values()), par_sorted(b.values()));
        wasserstein_1d(&sa, &sb, p)
    } else {
        sliced_distance(a, b, directions, p, rng)
    }
}

fn par_sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.par_sort_unstable_by(f64::total_cmp);
    v
}

/// Iterates until the distance between consecutive pools is below `tol`
/// for every equation on `patience` consecutive iterations.
pub fn solve(system: &EquationSystem, config: &SolverConfig, seed: u64) -> Result<(Vec<SamplePool>, SolveDiagnostics)> {
    if config.pool_size < 1000 {
        return Err(Error::config(format!("pool size must be at least 1000, got {}", config.pool_size)));
    }
    if !(config.p >= 1.0) || !(config.tol > 0.0) || config.directions == 0 || config.patience == 0 {
        return Err(Error::config("solver needs p >= 1, tol > 0, directions >= 1 and patience >= 1"));
    }
    let seeds = SeedTree::new(seed);
    let mut pools = initial_pools(system, config.pool_size, config.init, &seeds)?;
    let mut records = Vec::new();
    let mut streak = 0;
    let mut converged = false;
    for _ in 0..config.max_iters {
        let next = iterate(system, &pools, &seeds)?;
        let generation = next.pools[0].generation();
        let mut rng = seeds.stream(Purpose::Distance, generation, 0);
        let distances = pools
            .iter()
            .zip(&next.pools)
            .map(|(a, b)| pool_distance(&head(a, config.distance_sample)?, &head(b, config.distance_sample)?, config.p, config.directions, &mut rng))
            .collect::<Result<Vec<f64>>>()?;
        let (means, covariances) = next
            .pools
            .iter()
            .map(|p| stats::mean_and_covariance(p.values(), p.d()))
            .unzip();
        streak = if distances.iter().all(|&x| x < config.tol) { streak + 1 } else { 0 };
        records.push(IterationRecord { generation, distances, means, covariances, resampled: next.resampled });
        pools = next.pools;
        if streak >= config.patience && records.len() >= config.min_iters {
            converged = true;
            break;
        }
    }
    let diagnostics = SolveDiagnostics {
        records,
        converged,
        stop_rule: if converged { StopRule::Tolerance } else { StopRule::MaxIters },
        p: config.p,
        tol: config.tol,
        pool_size: config.pool_size,
        seed,
    };
    Ok((pools, diagnostics))
}

/// The first `k` points of a pool. Output slots are exchangeable, so this
/// is a uniform subsample.
fn head(pool: &SamplePool, k: usize) -> Result<SamplePool> {
    if pool.d() == 1 || k == 0 || k >= pool.len() {
        return Ok(pool.clone());
    }
    SamplePool::new(pool.d(), pool.values()[..k * pool.d()].to_vec(), pool.generation(), pool.lineage().clone())
}

/// Exact empirical `l_p` distance of two equal-size sorted samples.
pub fn wasserstein_1d(a: &[f64], b: &[f64], p: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::domain(format!("samples of sizes {} and {} (equal sizes required)", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::domain("empty samples"));
    }
    if !(p >= 1.0) {
        return Err(Error::domain(format!("order p must be at least 1, got {p}")));
    }
    let n = a.len() as f64;
    let s: f64 = if p == 1.0 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
    } else if p == 2.0 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    } else {
        a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(p)).sum()
    };
    Ok(if p == 1.0 { s / n } else { (s / n).powf(1.0 / p) })
}

/// `l_p` distance between two sorted samples of any sizes, computed on the
/// merged quantile grid.
pub fn wasserstein_1d_general(a: &[f64], b: &[f64], p: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("empty samples"));
    }
    if !(p >= 1.0) {
        return Err(Error::domain(format!("order p must be at least 1, got {p}")));
    }
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut s = 0.0;
    while i < na && j < nb {
        // a[i] is the quantile on (i/na, (i+1)/na], likewise for b
        let (ka, kb) = ((i + 1) * nb, (j + 1) * na);
        let next = ka.min(kb) as f64 / (na * nb) as f64;
        s += (next - u) * (a[i] - b[j]).abs().powf(p);
        u = next;
        if ka <= kb {
            i += 1;
        }
        if kb <= ka {
            j += 1;
        }
    }
    Ok(s.powf(1.0 / p))
}

/// Mean of the 1D distances of random projections (`d >= 2`).
pub fn sliced_distance(a: &SamplePool, b: &SamplePool, directions: usize, p: f64, rng: &mut Stream) -> Result<f64> {
    if a.d() != b.d() || a.d() < 2 {
        return Err(Error::domain("sliced distance needs two pools of the same dimension d >= 2"));
    }
    if a.len() != b.len() {
        return Err(Error::domain(format!("pools of sizes {} and {} (equal sizes required)", a.len(), b.len())));
    }
    if directions == 0 {
        return Err(Error::domain("at least one direction required"));
    }
    let dirs: Vec<Vec<f64>> = (0..directions).map(|_| random_direction(a.d(), rng)).collect();
    let total = dirs
        .par_iter()
        .map(|s| {
            let pa = stats::sorted_copy(&a.project(s));
            let pb = stats::sorted_copy(&b.project(s));
            wasserstein_1d(&pa, &pb, p)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(total.iter().sum::<f64>() / directions as f64)
}

/// Uniform direction on the unit sphere of `R^d`.
pub fn random_direction(d: usize, rng: &mut Stream) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Distance between two independent bootstrap resamples of `pool`: the
/// level below which consecutive-pool distances cannot be expected to fall.
pub fn noise_floor(pool: &SamplePool, p: f64, directions: usize, seeds: &SeedTree) -> Result<f64> {
    let resample = |k: u64| {
        let mut rng = seeds.stream(Purpose::Distance, u64::MAX - k, 0);
        let n = pool.len();
        let mut v = Vec::with_capacity(pool.values().len());
        for _ in 0..n {
            v.extend_from_slice(pool.point(rng.random_range(0..n)));
        }
        SamplePool::new(pool.d(), v, pool.generation(), pool.lineage().clone())
    };
    let (a, b) = (resample(0)?, resample(1)?);
    let mut rng = seeds.stream(Purpose::Distance, u64::MAX - 2, 0);
    pool_distance(&a, &b, p, directions, &mut rng)
}

/// Moment consistency of a solved system, per equation: `residual` has `d`
/// entries for order 1 and `d * d` (row-major) for order 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentResidual {
    pub order: u8,
    pub residual: Vec<Vec<f64>>,
    pub std_error: Vec<Vec<f64>>,
}

impl MomentResidual {
    /// Largest `|residual| / std_error` over all entries.
    pub fn max_z(&self) -> f64 {
        self.residual
            .iter()
            .flatten()
            .zip(self.std_error.iter().flatten())
            .map(|(r, s)| if *s > 0.0 { r.abs() / s } else if *r == 0.0 { 0.0 } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }
}

/// Both sides of the equation must share their first (`order = 1`) or
/// second (`order = 2`) moments. Coefficient expectations are Monte Carlo
/// averages over `n_draws` fresh draws.
///
/// Order 2 compares `E[X_r X_r^T]` with
/// `E[z z^T] + sum_j E[A_j Cov(X_l(j)) A_j^T]`, `z = sum_j A_j E[X_l(j)] + b`,
/// which reduces to `m2_r - sum_j E[A_j^2] m2_l(j) - E[b^2]` for centered
/// one-dimensional systems.
pub fn moment_residual(
    system: &EquationSystem,
    pools: &[SamplePool],
    order: u8,
    n_draws: usize,
    seeds: &SeedTree,
) -> Result<MomentResidual> {
    let n = check_aligned(system, pools)?;
    if order != 1 && order != 2 {
        return Err(Error::domain(format!("moment order must be 1 or 2, got {order}")));
    }
    if n_draws < 2 {
        return Err(Error::domain("need at least two coefficient draws"));
    }
    let d = system.d();
    let moments: Vec<(Vec<f64>, Vec<f64>)> = pools.iter().map(|p| stats::mean_and_covariance(p.values(), d)).collect();
    let width = if order == 1 { d } else { d * d };
    let mut residual = Vec::new();
    let mut std_error = Vec::new();
    for (r, pool) in pools.iter().enumerate() {
        let map = system.index_map(r);
        let chunks = n_draws.div_ceil(CHUNK);
        // per-draw right-hand side statistic, `width` values each
        let per_draw: Vec<f64> = (0..chunks)
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut rng = seeds.stream(Purpose::Moments, order as u64, minor(r, c));
                let mut raw = RawDraw::new(d);
                let count = CHUNK.min(n_draws - c * CHUNK);
                let mut out = Vec::with_capacity(count * width);
                for _ in 0..count {
                    system.sample_raw(r, &mut rng, &mut raw);
                    let mut z = raw.shift.clone();
                    for (j, &l) in map.iter().enumerate() {
                        mat_vec_acc(d, raw.matrix(j), &moments[l].0, &mut z);
                    }
                    if order == 1 {
                        out.extend_from_slice(&z);
                    } else {
                        let mut w: Vec<f64> = (0..d * d).map(|k| z[k / d] * z[k % d]).collect();
                        for (j, &l) in map.iter().enumerate() {
                            add_sandwich(d, raw.matrix(j), &moments[l].1, &mut w);
                        }
                        out.extend(w);
                    }
                }
                out
            })
            .collect();
        // the pool-side statistic per point
        let pool_stat: Vec<f64> = if order == 1 {
            pool.values().to_vec()
        } else {
            pool.values().chunks_exact(d).flat_map(|x| (0..d * d).map(move |k| x[k / d] * x[k % d])).collect()
        };
        let mut res = Vec::with_capacity(width);
        let mut se = Vec::with_capacity(width);
        for k in 0..width {
            let rhs: Vec<f64> = per_draw.iter().skip(k).step_by(width).copied().collect();
            let lhs: Vec<f64> = pool_stat.iter().skip(k).step_by(width).copied().collect();
            res.push(stats::mean(&lhs) - stats::mean(&rhs));
            se.push((stats::variance(&rhs) / n_draws as f64 + stats::variance(&lhs) / n as f64).sqrt());
        }
        residual.push(res);
        std_error.push(se);
    }
    Ok(MomentResidual { order, residual, std_error })
}

/// `w += A C A^T`.
fn add_sandwich(d: usize, a: &[f64], c: &[f64], w: &mut [f64]) {
    for i in 0..d {
        for k in 0..d {
            let mut s = 0.0;
            for p in 0..d {
                for q in 0..d {
                    s += a[i * d + p] * c[p * d + q] * a[k * d + q];
                }
            }
            w[i * d + k] += s;
        }
    }
}

/// Kolmogorov distance bound from an `l_p` distance when the limit has a
/// density bounded by `f_sup`:
/// `((p+1) f_sup^p)^(1/(1+p)) * l_p^(p/(1+p))`.
pub fn ks_rate_bound(lp_distance: f64, f_sup: f64, p: f64) -> Result<f64> {
    if !(lp_distance > 0.0 && f_sup > 0.0 && lp_distance.is_finite() && f_sup.is_finite()) {
        return Err(Error::domain("ks_rate_bound needs a positive distance and a positive density bound"));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::domain(format!("order p must be at least 1, got {p}")));
    }
    Ok(((p + 1.0) * f_sup.powf(p)).powf(1.0 / (1.0 + p)) * lp_distance.powf(p / (1.0 + p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build, ModelConfig};

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein_1d(&[0.0, 1.0], &[0.0, 1.0], 1.0).unwrap(), 0.0);
        assert_eq!(wasserstein_1d(&[0.0], &[1.0], 1.0).unwrap(), 1.0);
        assert_eq!(wasserstein_1d(&[0.0, 2.0], &[1.0, 3.0], 1.0).unwrap(), 1.0);
        assert!(matches!(wasserstein_1d(&[0.0], &[1.0, 2.0], 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn general_matches_equal_size() {
        let a = [0.0, 0.5, 2.0, 3.0];
        let b = [-1.0, 0.25, 0.5, 4.0];
        for p in [1.0, 2.0, 3.0] {
            let x = wasserstein_1d(&a, &b, p).unwrap();
            let y = wasserstein_1d_general(&a, &b, p).unwrap();
            assert!((x - y).abs() < 1e-12, "{p}: {x} vs {y}");
        }
        // {0, 1} against {0, 0.5, 1}: quantiles differ by 1/2 on (1/3, 2/3)
        let w = wasserstein_1d_general(&[0.0, 1.0], &[0.0, 0.5, 1.0], 1.0).unwrap();
        assert!((w - (1.0 / 6.0) * 0.5 - (1.0 / 6.0) * 0.5).abs() < 1e-12, "{w}");
    }

    #[test]
    fn rate_bound_examples() {
        assert!((ks_rate_bound(0.01, 1.0, 1.0).unwrap() - 0.141_421_356).abs() < 1e-8);
        assert!((ks_rate_bound(0.01, 0.5, 2.0).unwrap() - 0.75f64.powf(1.0 / 3.0) * 0.01f64.powf(2.0 / 3.0)).abs() < 1e-15);
        assert!((ks_rate_bound(0.01, 0.5, 2.0).unwrap() - 0.0421).abs() < 1e-4);
        assert!(ks_rate_bound(0.0, 1.0, 1.0).is_err());
        assert!(ks_rate_bound(0.1, -1.0, 1.0).is_err());
    }

    #[test]
    fn constant_system_one_step() {
        let cfg = ModelConfig::from_json(
            r#"{"model":"custom","d":1,"equations":[{"index_map":[0],"outcomes":[{"prob":1.0,"matrices":[[[0.0]]],"shift":[2.5]}]}]}"#,
        )
        .unwrap();
        let sys = build(&cfg).unwrap();
        let seeds = SeedTree::new(1);
        let pools = initial_pools(&sys, 2000, Init::Gaussian { scale: 1.0 }, &seeds).unwrap();
        let out = iterate(&sys, &pools, &seeds).unwrap();
        assert!(out.pools[0].values().iter().all(|&x| x == 2.5));
        assert_eq!(out.pools[0].generation(), 1);
        let m = moment_residual(&sys, &out.pools, 1, 1000, &seeds).unwrap();
        assert_eq!(m.residual[0][0], 0.0);
    }

    #[test]
    fn misaligned_pools_rejected() {
        let sys = build(&ModelConfig::default_for("urn_det").unwrap()).unwrap();
        let seeds = SeedTree::new(1);
        let pools = initial_pools(&sys, 1000, Init::Constant, &seeds).unwrap();
        assert!(matches!(iterate(&sys, &pools[..1], &seeds), Err(Error::Domain(_))));
    }
}
