//! Exact Monte Carlo simulation of the iterated perturbed random walk tree
//! confined to `[0, t]`: per-generation counts `N_j(t)`, tree height `H(t)`,
//! leftmost birth times `B(n)`, and CLT-normalised statistics.
//!
//! Every node owns a [`StreamKey`] derived from `(master_seed, replica,
//! path)`, and its offspring points are a lazy function of that key alone.
//! The realised infinite tree is therefore a pure function of the replica
//! key: breadth-first counting, branch-and-bound minimisation and reruns at
//! different horizons all see the same tree, draw for draw. Children are
//! generated with the stopping rule "first index whose walk prefix exceeds
//! the horizon", which is exact because both steps are strictly positive.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dist::JointStepModel;
use crate::error::{Error, Result};
use crate::numerics::ln_factorial;
use crate::renewal::RenewalTables;
use crate::rng::{StreamKey, StreamRole};

/// Configuration of one simulation ensemble.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub model: JointStepModel,
    /// Confinement horizon `t`.
    pub t: f64,
    /// Number of generations whose counts are recorded.
    pub jmax: u32,
    pub replicas: u32,
    pub master_seed: u64,
    /// Safety cap on node expansions per replica.
    pub max_nodes: u64,
    /// Stop the height search after this generation; `None` expands until
    /// extinction or the node cap. Must be at least `jmax` so counts stay
    /// complete. Confined trees grow like `e^{t}` node visits, so exact
    /// heights are only affordable at small horizons; count-only ensembles
    /// set `height_horizon = Some(jmax)`.
    pub height_horizon: Option<u32>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t >= 0.0) || !self.t.is_finite() {
            return Err(Error::invalid("t", "horizon must be a finite nonnegative real"));
        }
        if self.jmax == 0 {
            return Err(Error::invalid("jmax", "need jmax >= 1"));
        }
        if self.replicas == 0 {
            return Err(Error::invalid("replicas", "need replicas >= 1"));
        }
        if self.max_nodes == 0 {
            return Err(Error::invalid("max_nodes", "need max_nodes >= 1"));
        }
        if let Some(hh) = self.height_horizon {
            if hh < self.jmax {
                return Err(Error::invalid(
                    "height_horizon",
                    "must be >= jmax so recorded counts are complete",
                ));
            }
        }
        Ok(())
    }
}

/// Outcome of one replica.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenerationOutcome {
    /// `counts[j - 1] = N_j(t)` for `j = 1..=jmax`.
    pub counts: Vec<u64>,
    /// First empty generation when exact; a lower bound when truncated.
    pub height: u32,
    /// Set when the node cap or height horizon cut the search.
    pub truncated: bool,
    /// Node expansions performed.
    pub visited: u64,
}

/// Derivation record tying every replica back to the master seed.
#[derive(Clone, Debug, Serialize)]
pub struct SeedTrace {
    pub master_seed: u64,
    pub scheme: &'static str,
    pub replica_keys: Vec<[u64; 2]>,
}

/// Ensemble results: a replicas-by-jmax count matrix plus heights and flags.
#[derive(Clone, Debug)]
pub struct SimResult {
    pub counts: Vec<Vec<u64>>,
    pub heights: Vec<u32>,
    pub truncated: Vec<bool>,
    pub seed_trace: SeedTrace,
}

impl SimResult {
    /// Sample mean and standard error of `N_j(t)` across replicas.
    pub fn count_mean_stderr(&self, j: u32) -> Result<(f64, f64)> {
        let width = self.counts.first().map_or(0, Vec::len) as u32;
        if j == 0 || j > width {
            return Err(Error::MissingTable { j, jmax: width });
        }
        let n = self.counts.len() as f64;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (k, row) in self.counts.iter().enumerate() {
            let x = row[j as usize - 1] as f64;
            let delta = x - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (x - mean);
        }
        let var = if self.counts.len() > 1 { m2 / (n - 1.0) } else { 0.0 };
        Ok((mean, (var / n).sqrt()))
    }
}

/// Emits the offspring of a node born at `b`, confined to `[0, t]`.
///
/// Children are `(birth, index)` with the index counting draws, accepted or
/// not, so identities are stable across horizons.
fn expand_node(
    model: &JointStepModel,
    b: f64,
    key: &StreamKey,
    t: f64,
    mut on_child: impl FnMut(f64, u64),
) {
    let mut rng = key.role(StreamRole::TreePoints).rng();
    let mut s = 0.0f64; // walk prefix S_{i-1}
    let mut i = 0u64;
    loop {
        i += 1;
        let (xi, eta) = model.sample_pair(&mut rng);
        let birth = b + s + eta;
        if birth <= t {
            on_child(birth, i);
        }
        s += xi;
        if b + s > t {
            break;
        }
    }
}

/// Birth times of one perturbed random walk in `[0, t]`, in index order.
pub fn simulate_prw_points(model: &JointStepModel, t: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut points = Vec::new();
    if t < 0.0 {
        return points;
    }
    let mut s = 0.0f64;
    loop {
        let (xi, eta) = model.sample_pair(rng);
        let birth = s + eta;
        if birth <= t {
            points.push(birth);
        }
        s += xi;
        if s > t {
            break;
        }
    }
    points
}

/// Breadth-first expansion of one replica tree.
///
/// Counts are recorded as generations complete; the height search continues
/// past `jmax` until the first empty generation, the height horizon, or the
/// node cap (whichever comes first). A cut search reports `height` as a
/// lower bound with the truncated flag set.
pub fn simulate_generations(
    model: &JointStepModel,
    t: f64,
    jmax: u32,
    replica_key: StreamKey,
    max_nodes: u64,
    height_horizon: Option<u32>,
) -> GenerationOutcome {
    let mut counts = vec![0u64; jmax as usize];
    let mut current: Vec<(f64, StreamKey)> = vec![(0.0, replica_key)];
    let mut visited = 0u64;
    let mut gen = 0u32;
    loop {
        gen += 1;
        let mut next: Vec<(f64, StreamKey)> = Vec::new();
        let mut hit_cap = false;
        for (b, key) in &current {
            if visited >= max_nodes {
                hit_cap = true;
                break;
            }
            visited += 1;
            expand_node(model, *b, key, t, |birth, index| {
                next.push((birth, key.child(index)));
            });
        }
        if gen <= jmax {
            counts[gen as usize - 1] = next.len() as u64;
        }
        if hit_cap {
            return GenerationOutcome { counts, height: gen, truncated: true, visited };
        }
        if next.is_empty() {
            return GenerationOutcome { counts, height: gen, truncated: false, visited };
        }
        if let Some(hh) = height_horizon {
            if gen >= hh {
                return GenerationOutcome { counts, height: gen + 1, truncated: true, visited };
            }
        }
        current = next;
    }
}

/// Runs the replica fan-out; a pure function of the configuration.
///
/// Replica `r` uses the stream `root(master_seed).child(r)`, so results are
/// identical for any degree of parallelism.
pub fn simulate_ensemble(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let root = StreamKey::root(config.master_seed);
    let outcomes: Vec<GenerationOutcome> = (0..config.replicas)
        .into_par_iter()
        .map(|r| {
            simulate_generations(
                &config.model,
                config.t,
                config.jmax,
                root.child(r as u64),
                config.max_nodes,
                config.height_horizon,
            )
        })
        .collect();
    let replica_keys = (0..config.replicas).map(|r| root.child(r as u64).as_words()).collect();
    Ok(SimResult {
        counts: outcomes.iter().map(|o| o.counts.clone()).collect(),
        heights: outcomes.iter().map(|o| o.height).collect(),
        truncated: outcomes.iter().map(|o| o.truncated).collect(),
        seed_trace: SeedTrace {
            master_seed: config.master_seed,
            scheme: "chacha8/splitmix128-v1",
            replica_keys,
        },
    })
}

/// Per-replica normalised fluctuation
/// `sqrt(j) (j-1)! (N_j(t) - V_j(t)) / sqrt(s2 m^{-2j-1} t^{2j-1})`,
/// with the factorial and powers combined in log-space.
pub fn clt_statistic(
    result: &SimResult,
    tables: &RenewalTables,
    j: u32,
    t: f64,
    s2: f64,
    m: f64,
) -> Result<Vec<f64>> {
    if !(s2 > 0.0) {
        return Err(Error::invalid("s2", "the walk-step variance must be positive"));
    }
    let width = result.counts.first().map_or(0, Vec::len) as u32;
    if j == 0 || j > width {
        return Err(Error::MissingTable { j, jmax: width });
    }
    let vj = tables.v_j(j)?.value_at(t)?;
    let jf = j as f64;
    let log_factor = 0.5 * jf.ln() + ln_factorial(j as u64 - 1)
        - 0.5 * (s2.ln() + (-2.0 * jf - 1.0) * m.ln() + (2.0 * jf - 1.0) * t.ln());
    let factor = log_factor.exp();
    Ok(result
        .counts
        .iter()
        .map(|row| (row[j as usize - 1] as f64 - vj) * factor)
        .collect())
}

/// Result of the leftmost-birth search.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LeftmostOutcome {
    /// `B(n)` exactly when `exact`, otherwise the best upper bound found.
    pub birth: f64,
    pub exact: bool,
    pub visited: u64,
}

/// Exact minimum birth offset among the children of one node, with the
/// index that attains it.
fn min_child(model: &JointStepModel, key: &StreamKey) -> (f64, u64) {
    let mut rng = key.role(StreamRole::TreePoints).rng();
    let mut s = 0.0f64;
    let mut best = f64::INFINITY;
    let mut best_i = 1u64;
    let mut i = 0u64;
    loop {
        i += 1;
        let (xi, eta) = model.sample_pair(&mut rng);
        let rel = s + eta;
        if rel < best {
            best = rel;
            best_i = i;
        }
        s += xi;
        if s >= best {
            // every later point sits at s' + eta' >= s >= best
            return (best, best_i);
        }
    }
}

/// `B(n)`: the minimal birth time in generation `n`, by branch-and-bound.
///
/// A greedy chain of locally minimal children seeds the bound; the search
/// then expands only nodes whose birth beats the incumbent, which is exact
/// for minimisation because births increase along every lineage. The node
/// cap turns the result into an upper bound flagged as inexact.
pub fn leftmost_birth(
    model: &JointStepModel,
    n: u32,
    replica_key: StreamKey,
    max_nodes: u64,
) -> Result<LeftmostOutcome> {
    if n == 0 {
        return Err(Error::invalid("n", "need a generation index n >= 1"));
    }
    // greedy descent for the initial incumbent
    let mut b = 0.0f64;
    let mut key = replica_key;
    for _ in 0..n {
        let (rel, idx) = min_child(model, &key);
        b += rel;
        key = key.child(idx);
    }
    let mut best = b;

    let mut stack: Vec<(f64, StreamKey, u32)> = vec![(0.0, replica_key, 0)];
    let mut visited = 0u64;
    let mut truncated = false;
    while let Some((birth, key, depth)) = stack.pop() {
        if birth >= best {
            continue;
        }
        if visited >= max_nodes {
            truncated = true;
            break;
        }
        visited += 1;
        let mut children: Vec<(f64, u64)> = Vec::new();
        {
            let mut rng = key.role(StreamRole::TreePoints).rng();
            let mut s = 0.0f64;
            let mut i = 0u64;
            loop {
                i += 1;
                let (xi, eta) = model.sample_pair(&mut rng);
                let rel = s + eta;
                if birth + rel < best {
                    children.push((birth + rel, i));
                }
                s += xi;
                if birth + s >= best {
                    break;
                }
            }
        }
        if depth + 1 == n {
            for (cb, _) in &children {
                if *cb < best {
                    best = *cb;
                }
            }
        } else {
            // explore the most promising child first
            children.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite births"));
            for (cb, idx) in children {
                stack.push((cb, key.child(idx), depth + 1));
            }
        }
    }
    Ok(LeftmostOutcome { birth: best, exact: !truncated, visited })
}
