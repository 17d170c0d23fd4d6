//! No-U-Turn sampling with an identity mass matrix: multinomial selection
//! within the trajectory, the generalised no-U-turn check across subtree
//! boundaries, and dual-averaging step-size adaptation during warmup.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::rng::RandomStream;

/// An unnormalised log density with its gradient. The BNN posterior
/// implements this, and so can any test target.
pub trait LogDensity {
    fn dim(&self) -> usize;
    fn log_density_and_grad(&self, position: &[f64]) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NutsConfig {
    pub warmup: usize,
    pub samples: usize,
    pub target_accept: f64,
    pub max_depth: usize,
    pub seed: u64,
    pub chains: usize,
    /// Initial positions are drawn uniformly from `[-r, r]` per coordinate.
    pub init_radius: f64,
    /// Energy error beyond which a trajectory is declared divergent.
    pub max_energy_error: f64,
}

impl Default for NutsConfig {
    fn default() -> Self {
        Self {
            warmup: 500,
            samples: 1000,
            target_accept: 0.8,
            max_depth: 10,
            seed: 0,
            chains: 1,
            init_radius: 2.0,
            max_energy_error: 1000.0,
        }
    }
}

impl NutsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup == 0 || self.samples == 0 {
            return Err(Error::InvalidConfig("warmup and sample counts must be at least 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "target acceptance {} is outside (0, 1)",
                self.target_accept
            )));
        }
        if self.max_depth == 0 || self.chains == 0 {
            return Err(Error::InvalidConfig("tree depth and chain count must be at least 1".into()));
        }
        if !(self.init_radius >= 0.0 && self.max_energy_error > 0.0) {
            return Err(Error::InvalidConfig("init radius must be ≥ 0 and energy threshold > 0".into()));
        }
        Ok(())
    }
}

/// Position, momentum, and the log density and gradient at the position.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub log_density: f64,
    pub gradient: Vec<f64>,
}

impl PhasePoint {
    pub fn new<T: LogDensity + ?Sized>(target: &T, position: Vec<f64>, momentum: Vec<f64>) -> Result<Self> {
        if position.len() != target.dim() || momentum.len() != target.dim() {
            return Err(Error::DimensionMismatch(format!(
                "target has dimension {}, got position {} and momentum {}",
                target.dim(),
                position.len(),
                momentum.len()
            )));
        }
        let (log_density, gradient) = target.log_density_and_grad(&position)?;
        check_finite(log_density, &gradient)?;
        Ok(Self {
            position,
            momentum,
            log_density,
            gradient,
        })
    }

    /// `H = -log p(q) + ½‖p‖²`.
    pub fn hamiltonian(&self) -> f64 {
        -self.log_density + 0.5 * dot(&self.momentum, &self.momentum)
    }
}

fn check_finite(value: f64, gradient: &[f64]) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::NonFinite("log density".into()));
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(i));
    }
    Ok(())
}

/// One kick-drift-kick step. A negative step size integrates backwards in time.
pub fn leapfrog<T: LogDensity + ?Sized>(target: &T, state: &PhasePoint, step_size: f64) -> Result<PhasePoint> {
    let half = 0.5 * step_size;
    let mut momentum: Vec<f64> = state.momentum.iter().zip(&state.gradient).map(|(p, g)| p + half * g).collect();
    let position: Vec<f64> = state.position.iter().zip(&momentum).map(|(q, p)| q + step_size * p).collect();
    let (log_density, gradient) = target.log_density_and_grad(&position)?;
    check_finite(log_density, &gradient)?;
    for (p, g) in momentum.iter_mut().zip(&gradient) {
        *p += half * g;
    }
    Ok(PhasePoint {
        position,
        momentum,
        log_density,
        gradient,
    })
}

/// Nesterov dual averaging of `log ε` towards a target mean acceptance.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    mu: f64,
    target: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub fn new(initial_step: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * initial_step).ln(),
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    /// Feeds one acceptance statistic and returns the next step size.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let accept = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let w = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - w) * self.x_bar + w * x;
        x.exp()
    }

    /// Step size to use once adaptation ends.
    pub fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Per-draw sampler diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawStats {
    pub chain: usize,
    pub accept_stat: f64,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub log_density: f64,
}

/// Post-warmup draws from every chain, chain-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NutsDraws {
    /// One row per draw.
    pub positions: DenseMatrix,
    pub stats: Vec<DrawStats>,
    /// Adapted step size of each chain.
    pub step_sizes: Vec<f64>,
}

impl NutsDraws {
    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn divergences(&self) -> usize {
        self.stats.iter().filter(|s| s.divergent).count()
    }

    pub fn mean_accept_stat(&self) -> f64 {
        self.stats.iter().map(|s| s.accept_stat).sum::<f64>() / self.len() as f64
    }

    /// Coordinate `j` of every draw, split by chain.
    pub fn chains_of(&self, j: usize) -> Vec<Vec<f64>> {
        let chains = self.stats.iter().map(|s| s.chain + 1).max().unwrap_or(0);
        let mut out = vec![Vec::new(); chains];
        for (i, s) in self.stats.iter().enumerate() {
            out[s.chain].push(self.positions[(i, j)]);
        }
        out
    }
}

/// Runs `config.chains` independent chains, each on its own fork of the
/// seed, concurrently when there is more than one.
pub fn nuts_sample<T: LogDensity + Sync>(target: &T, config: &NutsConfig) -> Result<NutsDraws> {
    config.validate()?;
    let root = RandomStream::new(config.seed).fork_named("nuts");
    let results: Vec<Result<ChainOutput>> = if config.chains == 1 {
        vec![run_chain(target, config, root.fork(0))]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..config.chains)
                .map(|c| {
                    let stream = root.fork(c as u64);
                    scope.spawn(move || run_chain(target, config, stream))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sampler thread panicked")).collect()
        })
    };
    let dim = target.dim();
    let mut positions = Vec::with_capacity(config.chains * config.samples * dim);
    let mut stats = Vec::with_capacity(config.chains * config.samples);
    let mut step_sizes = Vec::with_capacity(config.chains);
    for (c, result) in results.into_iter().enumerate() {
        let chain = result?;
        positions.extend(chain.positions);
        stats.extend(chain.stats.into_iter().map(|s| DrawStats { chain: c, ..s }));
        step_sizes.push(chain.step_size);
    }
    let draws = NutsDraws {
        positions: DenseMatrix::from_vec(stats.len(), dim, positions)?,
        stats,
        step_sizes,
    };
    if draws.divergences() == draws.len() {
        return Err(Error::AllDivergent(draws.len()));
    }
    Ok(draws)
}

struct ChainOutput {
    positions: Vec<f64>,
    stats: Vec<DrawStats>,
    step_size: f64,
}

fn run_chain<T: LogDensity + ?Sized>(target: &T, config: &NutsConfig, stream: RandomStream) -> Result<ChainOutput> {
    let mut init_stream = stream.fork_named("init");
    let mut rng = stream.fork_named("transitions");
    let dim = target.dim();
    let mut current = None;
    let mut last_err = None;
    for _ in 0..100 {
        let q: Vec<f64> = (0..dim)
            .map(|_| init_stream.uniform_range(-config.init_radius, config.init_radius))
            .collect();
        match PhasePoint::new(target, q, vec![0.0; dim]) {
            Ok(p) => {
                current = Some(p);
                break;
            }
            Err(e) => last_err = Some(e),
        }
    }
    let mut current = match current {
        Some(p) => p,
        None => return Err(last_err.expect("at least one attempt")),
    };

    let mut sampler = Sampler {
        target,
        rng: &mut rng,
        step_size: 1.0,
        max_depth: config.max_depth,
        max_energy_error: config.max_energy_error,
    };
    sampler.step_size = sampler.find_reasonable_step_size(&current)?;
    let mut adapt = DualAveraging::new(sampler.step_size, config.target_accept);

    let mut positions = Vec::with_capacity(config.samples * dim);
    let mut stats = Vec::with_capacity(config.samples);
    for i in 0..config.warmup + config.samples {
        let (next, stat) = sampler.transition(&current);
        current = next;
        if i < config.warmup {
            sampler.step_size = adapt.update(stat.accept_stat);
            if i + 1 == config.warmup {
                sampler.step_size = adapt.final_step();
            }
        } else {
            positions.extend_from_slice(&current.position);
            stats.push(stat);
        }
    }
    Ok(ChainOutput {
        positions,
        stats,
        step_size: sampler.step_size,
    })
}

struct Sampler<'a, T: ?Sized> {
    target: &'a T,
    rng: &'a mut RandomStream,
    step_size: f64,
    max_depth: usize,
    max_energy_error: f64,
}

struct Subtree {
    propose: PhasePoint,
    /// Momentum at the first and last state in the direction of integration.
    p_begin: Vec<f64>,
    p_end: Vec<f64>,
    /// Sum of momenta over the subtree.
    rho: Vec<f64>,
    log_sum_weight: f64,
}

#[derive(Default)]
struct TransitionTally {
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn no_u_turn(p_minus: &[f64], p_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_plus, rho) > 0.0 && dot(p_minus, rho) > 0.0
}

impl<T: LogDensity + ?Sized> Sampler<'_, T> {
    fn sample_momentum(&mut self) -> Vec<f64> {
        (0..self.target.dim()).map(|_| self.rng.normal()).collect()
    }

    fn with_momentum(&mut self, state: &PhasePoint) -> PhasePoint {
        let mut z = state.clone();
        z.momentum = self.sample_momentum();
        z
    }

    /// Doubles or halves ε from 1 until the one-step acceptance crosses 0.8.
    fn find_reasonable_step_size(&mut self, state: &PhasePoint) -> Result<f64> {
        let threshold = 0.8f64.ln();
        let energy_gain = |sampler: &mut Self, eps: f64| {
            let z = sampler.with_momentum(state);
            let h0 = z.hamiltonian();
            match leapfrog(sampler.target, &z, eps) {
                Ok(next) => {
                    let d = h0 - next.hamiltonian();
                    if d.is_nan() {
                        f64::NEG_INFINITY
                    } else {
                        d
                    }
                }
                Err(_) => f64::NEG_INFINITY,
            }
        };
        let mut eps = 1.0;
        let increase = energy_gain(self, eps) > threshold;
        for _ in 0..200 {
            let next = if increase { 2.0 * eps } else { 0.5 * eps };
            let gain = energy_gain(self, next);
            if increase && !(gain > threshold) || !increase && !(gain < threshold) {
                return Ok(if increase { eps } else { next });
            }
            eps = next;
        }
        Err(Error::NonFinite(format!("no usable step size found (last tried {eps:e})")))
    }

    fn transition(&mut self, state: &PhasePoint) -> (PhasePoint, DrawStats) {
        let z = self.with_momentum(state);
        let h0 = z.hamiltonian();
        let p0 = z.momentum.clone();
        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut sample = z;
        let (mut p_fwd_fwd, mut p_bck_bck) = (p0.clone(), p0.clone());
        let (mut p_fwd_bck, mut p_bck_fwd): (Vec<f64>, Vec<f64>);
        let mut rho = p0;
        let mut log_sum_weight = 0.0;
        let mut tally = TransitionTally::default();
        let mut depth = 0;

        while depth < self.max_depth {
            let forward = self.rng.uniform() > 0.5;
            let (rho_fwd, rho_bck);
            let sub = if forward {
                rho_bck = rho.clone();
                p_bck_fwd = p_fwd_fwd.clone();
                let sub = self.build_tree(&mut z_fwd, depth, 1.0, h0, &mut tally);
                let Some(sub) = sub else { break };
                rho_fwd = sub.rho.clone();
                p_fwd_bck = sub.p_begin.clone();
                p_fwd_fwd = sub.p_end.clone();
                sub
            } else {
                rho_fwd = rho.clone();
                p_fwd_bck = p_bck_bck.clone();
                let sub = self.build_tree(&mut z_bck, depth, -1.0, h0, &mut tally);
                let Some(sub) = sub else { break };
                rho_bck = sub.rho.clone();
                p_bck_fwd = sub.p_begin.clone();
                p_bck_bck = sub.p_end.clone();
                sub
            };
            depth += 1;

            if sub.log_sum_weight > log_sum_weight || self.rng.uniform() < (sub.log_sum_weight - log_sum_weight).exp() {
                sample = sub.propose;
            }
            log_sum_weight = log_sum_exp(log_sum_weight, sub.log_sum_weight);

            rho = add(&rho_bck, &rho_fwd);
            let persist = no_u_turn(&p_bck_bck, &p_fwd_fwd, &rho)
                && no_u_turn(&p_bck_bck, &p_fwd_bck, &add(&rho_bck, &p_fwd_bck))
                && no_u_turn(&p_bck_fwd, &p_fwd_fwd, &add(&rho_fwd, &p_bck_fwd));
            if !persist {
                break;
            }
        }

        let stats = DrawStats {
            chain: 0,
            accept_stat: tally.sum_metro_prob / tally.n_leapfrog as f64,
            tree_depth: depth,
            n_leapfrog: tally.n_leapfrog,
            divergent: tally.divergent,
            log_density: sample.log_density,
        };
        (sample, stats)
    }

    /// Extends the trajectory from `z` by `2^depth` leapfrog steps. `z` is left
    /// at the new frontier. Returns `None` when the subtree diverges or turns.
    fn build_tree(
        &mut self,
        z: &mut PhasePoint,
        depth: usize,
        direction: f64,
        h0: f64,
        tally: &mut TransitionTally,
    ) -> Option<Subtree> {
        if depth == 0 {
            tally.n_leapfrog += 1;
            let h = match leapfrog(self.target, z, direction * self.step_size) {
                Ok(next) => {
                    *z = next;
                    let h = z.hamiltonian();
                    if h.is_nan() {
                        f64::INFINITY
                    } else {
                        h
                    }
                }
                Err(_) => f64::INFINITY,
            };
            if h - h0 > self.max_energy_error {
                tally.divergent = true;
            }
            tally.sum_metro_prob += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            if tally.divergent {
                return None;
            }
            return Some(Subtree {
                propose: z.clone(),
                p_begin: z.momentum.clone(),
                p_end: z.momentum.clone(),
                rho: z.momentum.clone(),
                log_sum_weight: h0 - h,
            });
        }

        let init = self.build_tree(z, depth - 1, direction, h0, tally)?;
        let last = self.build_tree(z, depth - 1, direction, h0, tally)?;

        let log_sum_weight = log_sum_exp(init.log_sum_weight, last.log_sum_weight);
        let take_last = self.rng.uniform() < (last.log_sum_weight - log_sum_weight).exp();
        let rho = add(&init.rho, &last.rho);
        let persist = no_u_turn(&init.p_begin, &last.p_end, &rho)
            && no_u_turn(&init.p_begin, &last.p_begin, &add(&init.rho, &last.p_begin))
            && no_u_turn(&init.p_end, &last.p_end, &add(&last.rho, &init.p_end));
        if !persist {
            return None;
        }
        Some(Subtree {
            propose: if take_last { last.propose } else { init.propose },
            p_begin: init.p_begin,
            p_end: last.p_end,
            rho,
            log_sum_weight,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct StdNormal(usize);

    impl LogDensity for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_density_and_grad(&self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((-0.5 * dot(q, q), q.iter().map(|v| -v).collect()))
        }
    }

    fn point(q: &[f64], p: &[f64]) -> PhasePoint {
        PhasePoint::new(&StdNormal(q.len()), q.to_vec(), p.to_vec()).unwrap()
    }

    #[test]
    fn zero_step_is_identity() {
        let z = point(&[0.3, -1.2], &[0.7, 0.1]);
        assert_eq!(leapfrog(&StdNormal(2), &z, 0.0).unwrap(), z);
    }

    #[test]
    fn leapfrog_is_reversible() {
        let target = StdNormal(3);
        let start = point(&[0.3, -1.2, 2.0], &[0.7, 0.1, -0.4]);
        let mut z = start.clone();
        for _ in 0..50 {
            z = leapfrog(&target, &z, 0.13).unwrap();
        }
        z.momentum.iter_mut().for_each(|p| *p = -*p);
        for _ in 0..50 {
            z = leapfrog(&target, &z, 0.13).unwrap();
        }
        for (a, b) in z.position.iter().zip(&start.position) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in z.momentum.iter().zip(&start.momentum) {
            assert!((a + b).abs() < 1e-10);
        }
    }

    #[test]
    fn harmonic_energy_drift_is_small() {
        let target = StdNormal(1);
        let start = point(&[1.0], &[0.5]);
        let mut z = start.clone();
        for _ in 0..100 {
            z = leapfrog(&target, &z, 0.1).unwrap();
        }
        assert!((z.hamiltonian() - start.hamiltonian()).abs() < 1e-2);
    }

    #[test]
    fn negative_step_runs_backwards() {
        let target = StdNormal(2);
        let start = point(&[0.5, 0.5], &[1.0, -1.0]);
        let fwd = leapfrog(&target, &start, 0.2).unwrap();
        let back = leapfrog(&target, &fwd, -0.2).unwrap();
        for (a, b) in back.position.iter().zip(&start.position) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dual_averaging_settles() {
        // Acceptance falls linearly in log step size: a = 1 at ε = 0.01, 0 at ε = 1.
        let mut da = DualAveraging::new(1.0, 0.8);
        let mut eps = 1.0f64;
        for _ in 0..2000 {
            let a = (-(eps.ln()) / 100f64.ln()).clamp(0.0, 1.0);
            eps = da.update(a);
        }
        let expected = 100f64.powf(-0.8);
        assert!((da.final_step().ln() - expected.ln()).abs() < 0.05);
    }

    #[test]
    fn config_validation() {
        assert!(NutsConfig::default().validate().is_ok());
        let bad = NutsConfig {
            target_accept: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = NutsConfig {
            warmup: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn log_sum_exp_edges() {
        assert_eq!(log_sum_exp(f64::NEG_INFINITY, 1.5), 1.5);
        assert!((log_sum_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
