//! Finite-size discrete processes whose scaled statistics converge to the
//! fixed points of the model zoo.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Hypergeometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::SplitLaw;
use crate::rng::{Purpose, SeedTree, Stream};
use crate::solver::{SamplePool, SeedLineage};

/// Replacement rule of a Pólya urn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Replacement {
    /// Drawing colour `i` adds `matrix[i][j]` balls of colour `j`.
    Deterministic { matrix: Vec<Vec<u32>> },
    /// Two colours; drawing colour 1 adds one ball of colour 1 with
    /// probability `p1` (else colour 2), drawing colour 2 adds colour 2 with
    /// probability `p2` (else colour 1).
    Bernoulli { p1: f64, p2: f64 },
}

/// Devroye split-tree parameters. A leaf holds up to `s` balls; on overflow
/// it keeps `s0`, hands `s1` to each of its `b` children and sends the rest
/// down one at a time according to the node's split vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitTreeParams {
    pub b: usize,
    pub s: usize,
    pub s0: usize,
    pub s1: usize,
    pub law: SplitLaw,
}

impl Default for SplitTreeParams {
    /// The binary search tree.
    fn default() -> Self {
        SplitTreeParams { b: 2, s: 1, s0: 1, s1: 0, law: SplitLaw::Uniform }
    }
}

impl SplitTreeParams {
    pub fn validate(&self) -> Result<()> {
        self.law.validate(self.b)?;
        if self.s == 0 {
            return Err(Error::config("split trees need node capacity s >= 1"));
        }
        if self.s0 > self.s {
            return Err(Error::config(format!("s0 = {} exceeds s = {}", self.s0, self.s)));
        }
        if self.s0 + self.b * self.s1 > self.s + 1 {
            return Err(Error::config(format!(
                "s0 + b*s1 = {} exceeds s + 1 = {}",
                self.s0 + self.b * self.s1,
                self.s + 1
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessModel {
    /// Key comparisons of randomized Quicksort.
    QuicksortCmp {},
    /// Comparisons and key exchanges (Hoare partitioning).
    QuicksortCmpXch {},
    Polya {
        replacement: Replacement,
        init: Vec<u64>,
        /// Scaling exponent; by default `Re(lambda_2) / S` of the mean
        /// replacement matrix.
        #[serde(default)]
        exponent: Option<f64>,
    },
    /// Total path length of a random recursive tree.
    RrtPathlen {},
    SplitPathlen {
        #[serde(default)]
        params: SplitTreeParams,
    },
    /// Wiener index and total path length of a split tree.
    SplitPathlenWiener {
        #[serde(default)]
        params: SplitTreeParams,
    },
}

impl ProcessModel {
    pub fn name(&self) -> &'static str {
        match self {
            ProcessModel::QuicksortCmp {} => "quicksort_cmp",
            ProcessModel::QuicksortCmpXch {} => "quicksort_cmp_xch",
            ProcessModel::Polya { .. } => "polya",
            ProcessModel::RrtPathlen {} => "rrt_pathlen",
            ProcessModel::SplitPathlen { .. } => "split_pathlen",
            ProcessModel::SplitPathlenWiener { .. } => "split_pathlen_wiener",
        }
    }

    /// Default process for a process name or for the zoo model it feeds.
    pub fn default_for(name: &str) -> Result<Self> {
        Ok(match name {
            "quicksort_cmp" | "quicksort" => ProcessModel::QuicksortCmp {},
            "quicksort_cmp_xch" | "quicksort2d" => ProcessModel::QuicksortCmpXch {},
            "rrt_pathlen" | "rrt" => ProcessModel::RrtPathlen {},
            "polya" | "urn_det" => ProcessModel::Polya {
                replacement: Replacement::Deterministic { matrix: vec![vec![4, 1], vec![1, 4]] },
                init: vec![1, 0],
                exponent: None,
            },
            "urn_rand" => ProcessModel::Polya { replacement: Replacement::Bernoulli { p1: 0.9, p2: 0.85 }, init: vec![1, 0], exponent: None },
            "urn_multi" => ProcessModel::Polya {
                replacement: Replacement::Deterministic { matrix: vec![vec![5, 1, 0], vec![0, 5, 1], vec![1, 0, 5]] },
                init: vec![1, 0, 0],
                exponent: None,
            },
            "split_pathlen" | "split" => ProcessModel::SplitPathlen { params: SplitTreeParams::default() },
            "split_pathlen_wiener" | "split2d" => ProcessModel::SplitPathlenWiener { params: SplitTreeParams::default() },
            other => return Err(Error::config(format!("unknown process '{other}'"))),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        crate::error::parse_config(text)
    }

    /// Dimension of the scaled statistic.
    pub fn dim(&self) -> usize {
        match self {
            ProcessModel::QuicksortCmpXch {} | ProcessModel::SplitPathlenWiener { .. } => 2,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ProcessModel::Polya { replacement, init, exponent } => {
                if init.iter().sum::<u64>() == 0 {
                    return Err(Error::config("the initial composition needs at least one ball"));
                }
                match replacement {
                    Replacement::Deterministic { matrix } => {
                        if matrix.len() != init.len() || matrix.iter().any(|row| row.len() != init.len()) || init.len() < 2 {
                            return Err(Error::config(format!(
                                "replacement matrix must be q x q with q = {} colours (q >= 2)",
                                init.len()
                            )));
                        }
                        if matrix.iter().any(|row| row.iter().all(|&x| x == 0)) {
                            return Err(Error::config("every colour must add at least one ball"));
                        }
                    }
                    Replacement::Bernoulli { p1, p2 } => {
                        if init.len() != 2 {
                            return Err(Error::config("the Bernoulli rule has two colours"));
                        }
                        if !(0.0..=1.0).contains(p1) || !(0.0..=1.0).contains(p2) {
                            return Err(Error::config("p1 and p2 must lie in [0, 1]"));
                        }
                    }
                }
                if let Some(e) = exponent {
                    if !(e.is_finite() && *e > 0.0) {
                        return Err(Error::config("exponent must be positive"));
                    }
                }
                Ok(())
            }
            ProcessModel::SplitPathlen { params } | ProcessModel::SplitPathlenWiener { params } => params.validate(),
            _ => Ok(()),
        }
    }

    /// Scaling exponents of the statistic's components.
    pub fn exponents(&self) -> Result<Vec<f64>> {
        Ok(match self {
            ProcessModel::QuicksortCmp {} | ProcessModel::RrtPathlen {} | ProcessModel::SplitPathlen { .. } => vec![1.0],
            ProcessModel::QuicksortCmpXch {} => vec![1.0, 1.0],
            ProcessModel::SplitPathlenWiener { .. } => vec![2.0, 1.0],
            ProcessModel::Polya { replacement, exponent, .. } => vec![match exponent {
                Some(e) => *e,
                None => urn_exponent(replacement)?,
            }],
        })
    }

    /// `E[statistic]` where a closed form is known.
    pub fn exact_mean(&self, n: usize) -> Option<Vec<f64>> {
        let nf = n as f64;
        match self {
            ProcessModel::QuicksortCmp {} => Some(vec![(1..=n).map(|k| 2.0 * (nf + 1.0) / k as f64).sum::<f64>() - 4.0 * nf]),
            ProcessModel::RrtPathlen {} => Some(vec![(2..=n).map(|k| nf / k as f64).sum()]),
            _ => None,
        }
    }
}

/// `Re(lambda_2) / S` for the mean replacement matrix of a balanced urn.
fn urn_exponent(replacement: &Replacement) -> Result<f64> {
    let rows: Vec<Vec<f64>> = match replacement {
        Replacement::Deterministic { matrix } => matrix.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect(),
        Replacement::Bernoulli { p1, p2 } => vec![vec![*p1, 1.0 - p1], vec![1.0 - p2, *p2]],
    };
    let q = rows.len();
    let s = rows[0].iter().sum::<f64>();
    if rows.iter().any(|r| (r.iter().sum::<f64>() - s).abs() > 1e-12) {
        return Err(Error::config("unbalanced replacement rule: pass an explicit exponent"));
    }
    let m = DMatrix::from_fn(q, q, |i, j| rows[i][j]);
    let mut re: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.re).collect();
    re.sort_by(|a, b| b.total_cmp(a));
    Ok(re[1] / s)
}

/// One simulated process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessRun {
    pub model: String,
    pub n: usize,
    /// Raw statistic: a count, a pair of counts, or an urn composition.
    pub statistic: Vec<f64>,
    /// Centred by the exact mean and scaled, where the exact mean is known.
    pub scaled: Option<Vec<f64>>,
}

pub fn run(model: &ProcessModel, n: usize, rng: &mut Stream) -> Result<ProcessRun> {
    model.validate()?;
    if n == 0 {
        return Err(Error::config("process size n must be at least 1"));
    }
    let statistic = raw_statistic(model, n, rng);
    let scaled = match model.exact_mean(n) {
        Some(mean) => {
            let exps = model.exponents()?;
            Some(statistic.iter().zip(&mean).zip(&exps).map(|((x, m), e)| (x - m) / (n as f64).powf(*e)).collect())
        }
        None => None,
    };
    Ok(ProcessRun { model: model.name().to_string(), n, statistic, scaled })
}

fn raw_statistic(model: &ProcessModel, n: usize, rng: &mut Stream) -> Vec<f64> {
    match model {
        ProcessModel::QuicksortCmp {} => vec![quicksort_counts(n, false, rng).0 as f64],
        ProcessModel::QuicksortCmpXch {} => {
            let (c, x) = quicksort_counts(n, true, rng);
            vec![c as f64, x as f64]
        }
        ProcessModel::Polya { replacement, init, .. } => polya(replacement, init, n, rng).into_iter().map(|x| x as f64).collect(),
        ProcessModel::RrtPathlen {} => vec![rrt_pathlen(n, rng) as f64],
        ProcessModel::SplitPathlen { params } => vec![SplitTree::grow(params, n, rng).path_length() as f64],
        ProcessModel::SplitPathlenWiener { params } => {
            let t = SplitTree::grow(params, n, rng);
            vec![t.wiener_index() as f64, t.path_length() as f64]
        }
    }
}

/// Comparisons (and optionally exchanges) of Quicksort on a uniformly random
/// permutation of size `n`, via the subproblem-size recursion: a partition of
/// `m` keys costs `m - 1` comparisons and, with `k` keys below the pivot, a
/// hypergeometric number of exchanges (keys above the pivot among the first
/// `k` non-pivot positions).
pub fn quicksort_counts(n: usize, exchanges: bool, rng: &mut Stream) -> (u64, u64) {
    let mut stack = vec![n];
    let (mut cmp, mut xch) = (0u64, 0u64);
    while let Some(m) = stack.pop() {
        if m < 2 {
            continue;
        }
        cmp += (m - 1) as u64;
        let k = rng.random_range(0..m);
        if exchanges && k > 0 && k < m - 1 {
            let h = Hypergeometric::new((m - 1) as u64, (m - 1 - k) as u64, k as u64).expect("valid hypergeometric parameters");
            xch += h.sample(rng);
        }
        stack.push(k);
        stack.push(m - 1 - k);
    }
    (cmp, xch)
}

/// Sum of node depths of a random recursive tree on `n` nodes.
pub fn rrt_pathlen(n: usize, rng: &mut Stream) -> u64 {
    let mut depth = vec![0u64; n];
    let mut total = 0;
    for i in 1..n {
        depth[i] = depth[rng.random_range(0..i)] + 1;
        total += depth[i];
    }
    total
}

/// Urn composition after `n` draws.
pub fn polya(replacement: &Replacement, init: &[u64], n: usize, rng: &mut Stream) -> Vec<u64> {
    let mut comp = init.to_vec();
    let mut total: u64 = comp.iter().sum();
    for _ in 0..n {
        let mut pick = rng.random_range(0..total);
        let mut colour = 0;
        while pick >= comp[colour] {
            pick -= comp[colour];
            colour += 1;
        }
        match replacement {
            Replacement::Deterministic { matrix } => {
                for (c, &add) in comp.iter_mut().zip(&matrix[colour]) {
                    *c += add as u64;
                }
                total += matrix[colour].iter().map(|&x| x as u64).sum::<u64>();
            }
            Replacement::Bernoulli { p1, p2 } => {
                let p = if colour == 0 { *p1 } else { *p2 };
                let same = rng.random::<f64>() < p;
                comp[if same { colour } else { 1 - colour }] += 1;
                total += 1;
            }
        }
    }
    comp
}

/// Ball counts of a split tree. Children of node `u` occupy
/// `first_child[u] .. first_child[u] + b`.
#[derive(Clone, Debug)]
pub struct SplitTree {
    pub b: usize,
    pub depth: Vec<u32>,
    pub balls: Vec<u64>,
    pub parent: Vec<usize>,
    first_child: Vec<Option<usize>>,
    split: Vec<Vec<f64>>,
}

impl SplitTree {
    pub fn grow(params: &SplitTreeParams, n: usize, rng: &mut Stream) -> SplitTree {
        let mut t = SplitTree {
            b: params.b,
            depth: vec![0],
            balls: vec![0],
            parent: vec![usize::MAX],
            first_child: vec![None],
            split: vec![Vec::new()],
        };
        for _ in 0..n {
            let mut u = 0;
            while let Some(c) = t.first_child[u] {
                u = c + t.pick_child(u, rng);
            }
            t.balls[u] += 1;
            t.settle(u, params, rng);
        }
        t
    }

    fn pick_child(&self, u: usize, rng: &mut Stream) -> usize {
        let x: f64 = rng.random();
        let mut acc = 0.0;
        for (j, v) in self.split[u].iter().enumerate() {
            acc += v;
            if x < acc {
                return j;
            }
        }
        self.b - 1
    }

    /// Splits overflowing leaves, starting at `u`.
    fn settle(&mut self, u: usize, params: &SplitTreeParams, rng: &mut Stream) {
        let mut pending = vec![u];
        while let Some(u) = pending.pop() {
            if self.first_child[u].is_some() || self.balls[u] <= params.s as u64 {
                continue;
            }
            let first = self.depth.len();
            let mut v = vec![0.0; self.b];
            params.law.sample(self.b, rng, &mut v);
            self.split[u] = v;
            self.first_child[u] = Some(first);
            for _ in 0..self.b {
                self.depth.push(self.depth[u] + 1);
                self.balls.push(params.s1 as u64);
                self.parent.push(u);
                self.first_child.push(None);
                self.split.push(Vec::new());
            }
            let extra = self.balls[u] - params.s0 as u64 - (self.b * params.s1) as u64;
            self.balls[u] = params.s0 as u64;
            for _ in 0..extra {
                let j = self.pick_child(u, rng);
                self.balls[first + j] += 1;
            }
            pending.extend(first..first + self.b);
        }
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    /// `sum_u balls(u) * depth(u)`.
    pub fn path_length(&self) -> u64 {
        self.balls.iter().zip(&self.depth).map(|(&k, &d)| k * d as u64).sum()
    }

    /// Balls stored in the subtree of every node. Children always have
    /// larger indices than their parent, so one reverse pass suffices.
    pub fn subtree_balls(&self) -> Vec<u64> {
        let mut sub = self.balls.clone();
        for u in (1..self.len()).rev() {
            sub[self.parent[u]] += sub[u];
        }
        sub
    }

    /// Sum over pairs of balls of the distance between their nodes: every
    /// edge above `u` is crossed by `sub(u) * (n - sub(u))` pairs.
    pub fn wiener_index(&self) -> u64 {
        let sub = self.subtree_balls();
        let n = sub[0];
        sub[1..].iter().map(|&k| k * (n - k)).sum()
    }
}

/// Path length and Wiener index of a tree given by parent pointers
/// (`parents[0]` is ignored; parents precede children), one unit per node.
pub fn tree_pathlen_wiener(parents: &[usize]) -> (u64, u64) {
    let n = parents.len();
    let mut depth = vec![0u64; n];
    for u in 1..n {
        depth[u] = depth[parents[u]] + 1;
    }
    let mut sub = vec![1u64; n];
    for u in (1..n).rev() {
        sub[parents[u]] += sub[u];
    }
    (depth.iter().sum(), sub[1..].iter().map(|&k| k * (n as u64 - k)).sum())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// Exact mean where known, batch mean otherwise.
    #[default]
    Auto,
    BatchMean,
    Exact,
}

/// Independent runs with per-run streams `(Simulate, n, run)`.
pub fn simulate_batch(model: &ProcessModel, n: usize, runs: usize, seeds: &SeedTree) -> Result<Vec<Vec<f64>>> {
    model.validate()?;
    if n == 0 {
        return Err(Error::config("process size n must be at least 1"));
    }
    Ok((0..runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds.stream(Purpose::Simulate, n as u64, i as u64);
            raw_statistic(model, n, &mut rng)
        })
        .collect())
}

/// Centred statistics divided by `n^exponent` componentwise, as a pool.
/// Urns use the count of the first colour.
pub fn scaled_batch(model: &ProcessModel, n: usize, runs: usize, centering: Centering, seeds: &SeedTree) -> Result<SamplePool> {
    if runs < 1000 {
        return Err(Error::config(format!("scaled batches need at least 1000 runs, got {runs}")));
    }
    let raw = simulate_batch(model, n, runs, seeds)?;
    let lineage = SeedLineage { master: seeds.master(), path: format!("simulate/{}/n={n}", model.name()) };
    scale(model, n, &raw, centering, lineage)
}

/// Applies centring and scaling to raw statistics.
pub fn scale(model: &ProcessModel, n: usize, raw: &[Vec<f64>], centering: Centering, lineage: SeedLineage) -> Result<SamplePool> {
    let d = model.dim();
    let exps = model.exponents()?;
    let rows: Vec<&[f64]> = raw.iter().map(|r| &r[..d]).collect();
    let mean = match (centering, model.exact_mean(n)) {
        (Centering::Exact | Centering::Auto, Some(m)) => m,
        (Centering::Exact, None) => return Err(Error::config(format!("no exact mean is known for {}", model.name()))),
        _ => (0..d)
            .map(|k| {
                let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
                crate::stats::mean(&col)
            })
            .collect(),
    };
    let scales: Vec<f64> = exps.iter().map(|e| (n as f64).powf(*e)).collect();
    let values = rows.iter().flat_map(|r| (0..d).map(|k| (r[k] - mean[k]) / scales[k]).collect::<Vec<_>>()).collect();
    SamplePool::new(d, values, 0, lineage)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quicksort_small() {
        let seeds = SeedTree::new(3);
        let mut rng = seeds.stream(Purpose::Simulate, 0, 0);
        assert_eq!(quicksort_counts(1, false, &mut rng).0, 0);
        assert_eq!(quicksort_counts(2, false, &mut rng).0, 1);
        let c = quicksort_counts(3, false, &mut rng).0;
        assert!(c == 2 || c == 3);
        let m = ProcessModel::QuicksortCmp {}.exact_mean(3).unwrap()[0];
        assert!((m - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn urn_one_step() {
        let seeds = SeedTree::new(1);
        let mut rng = seeds.stream(Purpose::Simulate, 0, 0);
        let r = Replacement::Deterministic { matrix: vec![vec![4, 1], vec![1, 4]] };
        assert_eq!(polya(&r, &[1, 0], 1, &mut rng), vec![5, 1]);
        let after = polya(&r, &[1, 0], 100, &mut rng);
        assert_eq!(after.iter().sum::<u64>(), 1 + 500);
        assert!((urn_exponent(&r).unwrap() - 0.6).abs() < 1e-12);
        let rb = Replacement::Bernoulli { p1: 0.9, p2: 0.85 };
        assert!((urn_exponent(&rb).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rrt_small() {
        let seeds = SeedTree::new(5);
        let pool = scaled_batch(&ProcessModel::RrtPathlen {}, 2, 1000, Centering::Auto, &seeds).unwrap();
        assert!(pool.values().iter().all(|&x| x == 0.0));
        let pool = scaled_batch(&ProcessModel::RrtPathlen {}, 3, 1000, Centering::Auto, &seeds).unwrap();
        assert!(pool.values().iter().all(|&x| x == 1.0 / 6.0 || x == -1.0 / 6.0));
    }

    #[test]
    fn path_wiener_three_nodes() {
        assert_eq!(tree_pathlen_wiener(&[0, 0, 1]), (3, 4));
        assert_eq!(tree_pathlen_wiener(&[0, 0, 0]), (2, 4));
    }

    #[test]
    fn bst_split_tree_counts() {
        let seeds = SeedTree::new(9);
        let params = SplitTreeParams::default();
        for i in 0..50 {
            let mut rng = seeds.stream(Purpose::Simulate, 1, i);
            let t = SplitTree::grow(&params, 40, &mut rng);
            assert_eq!(t.balls.iter().sum::<u64>(), 40);
            assert!(t.balls.iter().all(|&k| k <= 1));
            let pl = t.path_length();
            assert!(pl <= 40 * 39 / 2);
        }
        let bad = SplitTreeParams { s0: 2, ..SplitTreeParams::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn bad_urn_rejected() {
        let m = ProcessModel::Polya { replacement: Replacement::Bernoulli { p1: 0.5, p2: 0.5 }, init: vec![0, 0], exponent: None };
        assert!(m.validate().is_err());
    }
}
