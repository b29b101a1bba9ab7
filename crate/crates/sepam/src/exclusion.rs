//! Symmetric exclusion process by its graphical representation: Poisson link
//! events on unoriented bonds swap the occupations of their endpoints.

use crate::error::{invalid, Result};
use crate::lattice::{Kernel, Torus};
use crate::rng::stream;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Occupation state η ∈ {0,1}^sites on a torus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Configuration {
    pub torus: Torus,
    pub bits: Vec<u8>,
}

impl Configuration {
    pub fn new(torus: Torus, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != torus.sites() {
            return invalid("configuration length does not match torus");
        }
        if bits.iter().any(|b| *b > 1) {
            return invalid("occupations must be 0 or 1");
        }
        Ok(Self { torus, bits })
    }

    pub fn filled(torus: Torus, value: u8) -> Self {
        Self {
            torus,
            bits: vec![value.min(1); torus.sites()],
        }
    }

    /// Configuration whose site i is bit i of `mask`.
    pub fn from_mask(torus: Torus, mask: u64) -> Self {
        let bits = (0..torus.sites())
            .map(|i| ((mask >> i) & 1) as u8)
            .collect();
        Self { torus, bits }
    }

    pub fn mask(&self) -> u64 {
        assert!(self.bits.len() <= 64);
        self.bits
            .iter()
            .enumerate()
            .fold(0u64, |m, (i, b)| m | ((*b as u64) << i))
    }

    pub fn get(&self, site: usize) -> u8 {
        self.bits[site]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|b| *b as usize).sum()
    }

    pub fn swap(&mut self, a: usize, b: usize) {
        self.bits.swap(a, b);
    }

    pub fn to_bitstring(&self) -> String {
        self.bits
            .iter()
            .map(|b| if *b == 1 { '1' } else { '0' })
            .collect()
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return invalid(format!("density must lie in (0,1), got {rho}"));
    }
    Ok(())
}

/// Bernoulli(ρ) product configuration.
pub fn sample_initial(torus: Torus, rho: f64, seed: u64) -> Result<Configuration> {
    check_rho(rho)?;
    let mut rng = stream(seed, 0);
    Ok(sample_initial_with(torus, rho, &mut rng))
}

pub fn sample_initial_with<R: Rng>(torus: Torus, rho: f64, rng: &mut R) -> Configuration {
    let bits = (0..torus.sites())
        .map(|_| (rng.random::<f64>() < rho) as u8)
        .collect();
    Configuration { torus, bits }
}

/// Unoriented bond {a, b} with its Poisson link rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub rate: f64,
}

/// Bonds of the torus-wrapped kernel; the rate of {a,b} is rate·Σ_{e: a+e≡b} p(e).
pub fn torus_bonds(torus: &Torus, kernel: &Kernel) -> Result<Vec<Bond>> {
    if kernel.d != torus.d {
        return invalid("kernel and torus dimensions differ");
    }
    let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for a in 0..torus.sites() {
        for (z, w) in &kernel.offsets {
            let b = torus.shift(a, z);
            if a < b {
                *acc.entry((a, b)).or_insert(0.0) += w * kernel.rate;
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|((a, b), rate)| Bond { a, b, rate })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkEvent {
    pub time: f64,
    pub bond: usize,
}

/// Time-ordered link events on [0, horizon].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSchedule {
    pub horizon: f64,
    pub bonds: Vec<Bond>,
    pub events: Vec<LinkEvent>,
}

impl LinkSchedule {
    pub fn per_bond_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.bonds.len()];
        for e in &self.events {
            c[e.bond] += 1;
        }
        c
    }
}

pub fn build_schedule(
    torus: &Torus,
    kernel: &Kernel,
    horizon: f64,
    seed: u64,
) -> Result<LinkSchedule> {
    if !(horizon >= 0.0) {
        return invalid("horizon must be ≥ 0");
    }
    let bonds = torus_bonds(torus, kernel)?;
    let mut rng = stream(seed, 0);
    let mut events = Vec::new();
    fill_events(&bonds, horizon, &mut rng, &mut events);
    Ok(LinkSchedule {
        horizon,
        bonds,
        events,
    })
}

/// Writes the link events of independent per-bond Poisson processes into `out`.
/// Equal times (probability zero) keep generation order and are then nudged
/// to be strictly increasing.
pub fn fill_events<R: Rng>(bonds: &[Bond], horizon: f64, rng: &mut R, out: &mut Vec<LinkEvent>) {
    out.clear();
    for (i, b) in bonds.iter().enumerate() {
        if b.rate <= 0.0 {
            continue;
        }
        let exp = Exp::new(b.rate).expect("positive rate");
        let mut t = exp.sample(rng);
        while t <= horizon {
            out.push(LinkEvent { time: t, bond: i });
            t += exp.sample(rng);
        }
    }
    out.sort_by(|x, y| x.time.total_cmp(&y.time));
    for k in 1..out.len() {
        if out[k].time <= out[k - 1].time {
            out[k].time = out[k - 1].time.next_up();
        }
    }
}

/// Initial configuration plus schedule; evaluation is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: Configuration,
    pub schedule: LinkSchedule,
    pub checkpoints: Vec<(f64, Configuration)>,
}

impl Trajectory {
    pub fn new(initial: Configuration, schedule: LinkSchedule) -> Self {
        Self {
            initial,
            schedule,
            checkpoints: Vec::new(),
        }
    }

    /// Caches the states at the given times.
    pub fn with_checkpoints(mut self, times: &[f64]) -> Result<Self> {
        let mut cps = Vec::with_capacity(times.len());
        for &t in times {
            cps.push((t, self.evolve(t)?));
        }
        self.checkpoints = cps;
        Ok(self)
    }

    /// (time, bitstring) records of the cached checkpoints.
    pub fn checkpoint_records(&self) -> String {
        let mut s = String::from("time\tstate\n");
        for (t, c) in &self.checkpoints {
            let _ = writeln!(s, "{t}\t{}", c.to_bitstring());
        }
        s
    }
}

/// State at time t: all link events with time ≤ t applied in order.
pub fn evolve(traj: &Trajectory, t: f64) -> Result<Configuration> {
    traj.evolve(t)
}

impl Trajectory {
    pub fn evolve(&self, t: f64) -> Result<Configuration> {
        if t > self.schedule.horizon {
            return invalid("t exceeds the schedule horizon");
        }
        if let Some((_, c)) = self.checkpoints.iter().find(|(s, _)| *s == t) {
            return Ok(c.clone());
        }
        let mut c = self.initial.clone();
        for e in &self.schedule.events {
            if e.time > t {
                break;
            }
            let b = self.schedule.bonds[e.bond];
            c.swap(b.a, b.b);
        }
        Ok(c)
    }

    /// ∫₀ᵗ ξ_s(site) ds, exact over inter-event intervals.
    pub fn occupation_time(&self, site: usize, t: f64) -> Result<f64> {
        if t > self.schedule.horizon {
            return invalid("t exceeds the schedule horizon");
        }
        let mut c = self.initial.clone();
        let mut last = 0.0;
        let mut acc = 0.0;
        for e in &self.schedule.events {
            if e.time > t {
                break;
            }
            let b = self.schedule.bonds[e.bond];
            if b.a == site || b.b == site {
                acc += c.get(site) as f64 * (e.time - last);
                last = e.time;
            }
            c.swap(b.a, b.b);
        }
        acc += c.get(site) as f64 * (t - last);
        Ok(acc)
    }
}

pub fn occupation_time(traj: &Trajectory, site: usize, t: f64) -> Result<f64> {
    traj.occupation_time(site, t)
}
