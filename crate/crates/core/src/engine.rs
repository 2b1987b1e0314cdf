//! Marked branching Brownian motion inside a space-time cylinder.
//!
//! Particles carry a sign and a derivative order. Each particle lives an
//! `Exp(k_beta)` lifetime while performing standard Brownian motion
//! (generator `1/2 d^2/dx^2`); when the clock fires before it leaves the
//! domain, a transition drawn from the rule replaces it by its offspring,
//! which compose their marks with the parent's. A particle reaching the
//! horizon or the lateral boundary freezes into an [`ExitAtom`].
//!
//! Events are processed in time order, so the heap size at an event is the
//! live population at that instant.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use thiserror::Error;

use crate::calculus::{validate_rule, BranchingRule, MarkTransition, RuleError, Sign};
use crate::math;
use crate::rng::TreeRng;

pub const DEFAULT_MAX_POPULATION: usize = 1_000_000;
pub const DEFAULT_MAX_DERIV_ORDER: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub position: f64,
    pub sign: Sign,
    pub deriv_order: u32,
    pub birth_time: f64,
}

impl Particle {
    /// Unmarked particle (`+delta_x`) born at time 0.
    pub fn root(position: f64) -> Self {
        Self {
            position,
            sign: Sign::Plus,
            deriv_order: 0,
            birth_time: 0.0,
        }
    }
}

/// `[0, horizon) x R`, or `[0, horizon) x (a, b)` when `interval` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub horizon: f64,
    pub interval: Option<(f64, f64)>,
}

impl Domain {
    pub fn cauchy(horizon: f64) -> Self {
        Self {
            horizon,
            interval: None,
        }
    }

    pub fn interval(horizon: f64, a: f64, b: f64) -> Self {
        Self {
            horizon,
            interval: Some((a, b)),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match self.interval {
            None => x.is_finite(),
            Some((a, b)) => a < x && x < b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExitKind {
    TimeBoundary,
    SpaceBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitAtom {
    pub position: f64,
    pub sign: Sign,
    pub deriv_order: u32,
    /// Elapsed tree time at exit, in `(0, horizon]`.
    pub exit_time: f64,
    pub kind: ExitKind,
}

/// The signed, derivative-marked exit configuration of one tree.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExitMeasure {
    pub atoms: Vec<ExitAtom>,
    /// Branching events processed.
    pub events: u64,
    pub peak_population: usize,
    pub horizon: f64,
}

impl ExitMeasure {
    pub fn is_dead(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Particles alive at the horizon.
    pub fn population_at_horizon(&self) -> usize {
        self.atoms
            .iter()
            .filter(|a| a.kind == ExitKind::TimeBoundary)
            .count()
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub beta: f64,
    pub rule: BranchingRule,
    pub domain: Domain,
    pub max_population: usize,
    /// Sub-step for lateral exit detection; unused without an interval.
    pub boundary_step: f64,
    pub seed: u64,
    pub max_deriv_order: u32,
}

impl EngineConfig {
    pub fn new(rule: BranchingRule, beta: f64, domain: Domain, seed: u64) -> Self {
        Self {
            beta,
            rule,
            domain,
            max_population: DEFAULT_MAX_POPULATION,
            boundary_step: 1e-3,
            seed,
            max_deriv_order: DEFAULT_MAX_DERIV_ORDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    InvalidRule(#[from] RuleError),
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("live population exceeded the cap of {limit} after {events} events")]
    PopulationExceeded { limit: usize, events: u64 },
    #[error("a transition pushed the derivative order past the maximum {limit}")]
    DerivOrderExceeded { limit: u32 },
    #[error("root position {0} is not strictly inside the domain")]
    RootOutsideDomain(f64),
}

/// Draws transitions with exactly one uniform per draw.
#[derive(Debug, Clone)]
pub struct TransitionSampler {
    cumulative: Vec<f64>,
}

impl TransitionSampler {
    pub fn new(rule: &BranchingRule) -> Self {
        // exact partial sums, so the last nonzero weight closes at 1.0
        let mut acc = BigRational::zero();
        let cumulative = rule
            .transitions
            .iter()
            .map(|t| {
                acc += &t.weight;
                acc.to_f64().unwrap_or(f64::NAN)
            })
            .collect();
        Self { cumulative }
    }

    #[inline]
    pub fn sample(&self, rng: &mut TreeRng) -> usize {
        let u = rng.uniform();
        let last = self.cumulative.len() - 1;
        self.cumulative.iter().position(|&c| u < c).unwrap_or(last)
    }
}

/// One transition drawn from a valid rule.
pub fn sample_transition<'r>(rule: &'r BranchingRule, rng: &mut TreeRng) -> &'r MarkTransition {
    &rule.transitions[TransitionSampler::new(rule).sample(rng)]
}

/// `E[N_t] = exp(k_beta (m - 1) t)` for Markov branching with mean offspring `m`.
pub fn expected_population(rule: &BranchingRule, beta: f64, t: f64) -> f64 {
    let k = rule.intensity.rate(beta);
    let m = rule.mean_offspring().to_f64().unwrap_or(f64::NAN);
    math::exp(k * (m - 1.0) * t)
}

#[derive(Debug, Clone, Copy)]
enum Outcome {
    Branch,
    Exit(ExitKind),
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    time: f64,
    seq: u64,
    particle: Particle,
    outcome: Outcome,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // reversed: BinaryHeap pops the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    sampler: TransitionSampler,
    rate: f64,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        validate_rule(&config.rule)?;
        if !(config.beta > 0.0 && config.beta.is_finite()) {
            return Err(EngineError::InvalidConfig(
                "beta must be positive and finite",
            ));
        }
        if !(config.domain.horizon > 0.0 && config.domain.horizon.is_finite()) {
            return Err(EngineError::InvalidConfig(
                "horizon must be positive and finite",
            ));
        }
        if let Some((a, b)) = config.domain.interval {
            if !(a < b) {
                return Err(EngineError::InvalidConfig("interval needs a < b"));
            }
            if !(config.boundary_step > 0.0) {
                return Err(EngineError::InvalidConfig("boundary step must be positive"));
            }
        }
        if config.max_population == 0 {
            return Err(EngineError::InvalidConfig(
                "max_population must be at least 1",
            ));
        }
        let rate = config.rule.intensity.rate(config.beta);
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(EngineError::InvalidConfig("k_beta must be finite"));
        }
        let sampler = TransitionSampler::new(&config.rule);
        Ok(Self {
            config,
            sampler,
            rate,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// `k_beta`.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn tree_rng(&self, tree: u64) -> TreeRng {
        TreeRng::new(self.config.seed, tree)
    }

    pub fn sample_transition(&self, rng: &mut TreeRng) -> &MarkTransition {
        &self.config.rule.transitions[self.sampler.sample(rng)]
    }

    /// Tree rooted at an unmarked particle at `x0`.
    pub fn simulate_tree(&self, x0: f64, rng: &mut TreeRng) -> Result<ExitMeasure, EngineError> {
        self.simulate_forest(&[Particle::root(x0)], rng)
    }

    /// Independent trees from several marked roots, sharing one stream.
    pub fn simulate_forest(
        &self,
        roots: &[Particle],
        rng: &mut TreeRng,
    ) -> Result<ExitMeasure, EngineError> {
        let horizon = self.config.domain.horizon;
        let mut out = ExitMeasure {
            horizon,
            ..ExitMeasure::default()
        };
        let mut heap: BinaryHeap<Pending> = BinaryHeap::new();
        let mut seq = 0u64;
        for root in roots {
            if !self.config.domain.contains(root.position) {
                return Err(EngineError::RootOutsideDomain(root.position));
            }
            if root.deriv_order > self.config.max_deriv_order {
                return Err(EngineError::DerivOrderExceeded {
                    limit: self.config.max_deriv_order,
                });
            }
            heap.push(self.advance(*root, rng, &mut seq));
        }
        self.check_population(heap.len(), out.events)?;
        out.peak_population = heap.len();

        while let Some(ev) = heap.pop() {
            match ev.outcome {
                Outcome::Exit(kind) => out.atoms.push(ExitAtom {
                    position: ev.particle.position,
                    sign: ev.particle.sign,
                    deriv_order: ev.particle.deriv_order,
                    exit_time: ev.time,
                    kind,
                }),
                Outcome::Branch => {
                    out.events += 1;
                    let transition = self.sample_transition(rng);
                    for d in &transition.offspring {
                        let child = Particle {
                            position: ev.particle.position,
                            sign: ev.particle.sign.compose(d.sign),
                            deriv_order: ev.particle.deriv_order + d.dderiv as u32,
                            birth_time: ev.time,
                        };
                        if child.deriv_order > self.config.max_deriv_order {
                            return Err(EngineError::DerivOrderExceeded {
                                limit: self.config.max_deriv_order,
                            });
                        }
                        heap.push(self.advance(child, rng, &mut seq));
                    }
                    self.check_population(heap.len(), out.events)?;
                    out.peak_population = out.peak_population.max(heap.len());
                }
            }
        }
        Ok(out)
    }

    fn check_population(&self, live: usize, events: u64) -> Result<(), EngineError> {
        if live > self.config.max_population {
            return Err(EngineError::PopulationExceeded {
                limit: self.config.max_population,
                events,
            });
        }
        Ok(())
    }

    /// Draws the particle's lifetime and path up to its next event.
    fn advance(&self, mut p: Particle, rng: &mut TreeRng, seq: &mut u64) -> Pending {
        let horizon = self.config.domain.horizon;
        let clock = if self.rate > 0.0 {
            p.birth_time + rng.exp1() / self.rate
        } else {
            f64::INFINITY
        };
        let (end, at_horizon) = if clock < horizon {
            (clock, false)
        } else {
            (horizon, true)
        };
        *seq += 1;
        let time_outcome = if at_horizon {
            Outcome::Exit(ExitKind::TimeBoundary)
        } else {
            Outcome::Branch
        };

        match self.config.domain.interval {
            None => {
                p.position += math::sqrt(end - p.birth_time) * rng.normal();
                Pending {
                    time: end,
                    seq: *seq,
                    particle: p,
                    outcome: time_outcome,
                }
            }
            Some((a, b)) => {
                let h = self.config.boundary_step;
                let mut t = p.birth_time;
                let mut x = p.position;
                while t < end {
                    let dt = if end - t > h { h } else { end - t };
                    let y = x + math::sqrt(dt) * rng.normal();
                    let t_next = if end - t > h { t + h } else { end };
                    let hit = if y <= a {
                        Some(a)
                    } else if y >= b {
                        Some(b)
                    } else {
                        // Brownian-bridge probability of touching each wall within the step
                        let pa = math::exp(-2.0 * (x - a) * (y - a) / dt);
                        let pb = math::exp(-2.0 * (b - x) * (b - y) / dt);
                        let u = rng.uniform();
                        if u < pa {
                            Some(a)
                        } else if u < pa + pb * (1.0 - pa) {
                            Some(b)
                        } else {
                            None
                        }
                    };
                    if let Some(wall) = hit {
                        p.position = wall;
                        return Pending {
                            time: t_next,
                            seq: *seq,
                            particle: p,
                            outcome: Outcome::Exit(ExitKind::SpaceBoundary),
                        };
                    }
                    x = y;
                    t = t_next;
                }
                p.position = x;
                Pending {
                    time: end,
                    seq: *seq,
                    particle: p,
                    outcome: time_outcome,
                }
            }
        }
    }
}
