use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::composition::{empirical_from_counts, EmpiricalMeasure, GeneticComposition};
use super::kingman;
use crate::error::{domain, Error, Result};

/// Event engine for the nested coalescent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Engine {
    /// Gillespie over every species and gene event, with a Fenwick tree over gene rates.
    Direct,
    /// Species events only; each species' gene chain is advanced when the species is touched.
    /// `fast_threshold` enables bridged descents above that level.
    Lazy { fast_threshold: Option<u64> },
}

impl Engine {
    pub const EXACT_LAZY: Engine = Engine::Lazy { fast_threshold: None };
    pub const FAST_LAZY: Engine = Engine::Lazy {
        fast_threshold: Some(kingman::DEFAULT_FAST_THRESHOLD),
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub species: u64,
    pub genes: u64,
    pub measure: EmpiricalMeasure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub gene_rate: f64,
    pub snapshots: Vec<Snapshot>,
    /// Events processed up to the last snapshot (species mergers plus gene mergers).
    pub events: u64,
}

impl TrajectoryRecord {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,species,genes,atom_mass,atom_weight")?;
        for s in &self.snapshots {
            for &(m, wt) in s.measure.atoms() {
                writeln!(w, "{},{},{},{},{}", s.time, s.species, s.genes, m, wt)?;
            }
        }
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let rows: Vec<_> = self
            .snapshots
            .iter()
            .map(|s| {
                serde_json::json!({
                    "time": s.time,
                    "species": s.species,
                    "genes": s.genes,
                    "mean": s.measure.moment(1),
                    "second_moment": s.measure.moment(2),
                })
            })
            .collect();
        serde_json::json!({ "gene_rate": self.gene_rate, "events": self.events, "snapshots": rows })
    }
}

fn check_times(times: &[f64], start: f64) -> Result<()> {
    if times.iter().any(|t| !t.is_finite()) {
        return Err(domain("snapshot times must be finite"));
    }
    if times.windows(2).any(|w| w[0] > w[1]) {
        return Err(domain("snapshot times must be sorted"));
    }
    if times.first().is_some_and(|&t| t < start) {
        return Err(domain(format!("snapshot time {} precedes the start time {start}", times[0])));
    }
    Ok(())
}

fn snapshot(time: f64, counts: &[u64]) -> Snapshot {
    Snapshot {
        time,
        species: counts.len() as u64,
        genes: counts.iter().sum(),
        measure: empirical_from_counts(counts),
    }
}

fn merged(a: u64, b: u64) -> Result<u64> {
    a.checked_add(b)
        .ok_or_else(|| Error::Overflow(format!("merging species with {a} and {b} genes")))
}

fn pick_pair<R: Rng + ?Sized>(s: usize, rng: &mut R) -> (usize, usize) {
    let i = rng.random_range(0..s);
    let mut j = rng.random_range(0..s - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

/// Runs the nested coalescent from `start` at time `t0`, recording snapshots at `times`.
///
/// Species pairs merge at rate 1 and pool their genes; gene pairs within a species merge at
/// `gene_rate`. The initial composition is put in canonical order first, so relabelling species
/// does not change the output for a given stream.
pub fn run<R: Rng + ?Sized>(
    engine: Engine,
    start: &GeneticComposition,
    gene_rate: f64,
    t0: f64,
    times: &[f64],
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    if !(gene_rate > 0.0 && gene_rate.is_finite()) {
        return Err(domain(format!("gene rate must be positive, got {gene_rate}")));
    }
    check_times(times, t0)?;
    let counts = start.canonical().into_inner();
    match engine {
        Engine::Direct => DirectState::new(counts, gene_rate, t0).run(times, rng),
        Engine::Lazy { fast_threshold } => {
            LazyState::new(counts, gene_rate, t0, fast_threshold).run(times, rng)
        }
    }
}

/// Initial gene counts per species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialGenes {
    Constant { genes: u64 },
    /// Geometric law on {1, 2, ...} with the given mean.
    Geometric { mean: f64 },
    /// Law on {1, ..., len} with the given (unnormalized) weights.
    Table { weights: Vec<f64> },
    /// Proxy for infinitely many genes: every species starts at `cap`.
    Capped { cap: u64 },
}

impl InitialGenes {
    pub fn sample<R: Rng + ?Sized>(&self, s0: u64, rng: &mut R) -> Result<GeneticComposition> {
        if s0 == 0 {
            return Err(domain("s0 must be positive"));
        }
        let counts = match self {
            InitialGenes::Constant { genes } | InitialGenes::Capped { cap: genes } => {
                vec![*genes; s0 as usize]
            }
            InitialGenes::Geometric { mean } => {
                if !(*mean >= 1.0 && mean.is_finite()) {
                    return Err(domain("geometric gene law needs mean >= 1"));
                }
                let p = 1.0 / mean;
                let g = rand_distr::Geometric::new(p).map_err(|e| domain(e.to_string()))?;
                (0..s0).map(|_| 1 + g.sample(rng)).collect()
            }
            InitialGenes::Table { weights } => {
                let d = rand_distr::weighted::WeightedIndex::new(weights)
                    .map_err(|e| domain(format!("gene law table: {e}")))?;
                (0..s0).map(|_| 1 + d.sample(rng) as u64).collect()
            }
        };
        GeneticComposition::new(counts)
    }
}

/// Simulates the nested coalescent from `s0` species with genes drawn from `init`, using the
/// exact lazy engine.
pub fn simulate_nested<R: Rng + ?Sized>(
    s0: u64,
    init: &InitialGenes,
    gene_rate: f64,
    times: &[f64],
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    let start = init.sample(s0, rng)?;
    run(Engine::EXACT_LAZY, &start, gene_rate, 0.0, times, rng)
}

struct LazyState {
    genes: Vec<u64>,
    touched: Vec<f64>,
    rate: f64,
    time: f64,
    fast: Option<u64>,
    events: u64,
}

impl LazyState {
    fn new(genes: Vec<u64>, rate: f64, t0: f64, fast: Option<u64>) -> Self {
        let touched = vec![t0; genes.len()];
        LazyState { genes, touched, rate, time: t0, fast, events: 0 }
    }

    fn advance<R: Rng + ?Sized>(&mut self, i: usize, t: f64, rng: &mut R) {
        let before = self.genes[i];
        let after = kingman::descent(before, self.rate, t - self.touched[i], self.fast, rng);
        self.events += before - after;
        self.genes[i] = after;
        self.touched[i] = t;
    }

    fn run<R: Rng + ?Sized>(mut self, times: &[f64], rng: &mut R) -> Result<TrajectoryRecord> {
        let mut snapshots = Vec::with_capacity(times.len());
        let mut next = 0;
        while next < times.len() {
            let s = self.genes.len();
            let event_time = if s >= 2 {
                let r = (s * (s - 1)) as f64 / 2.0;
                self.time + Exp::new(r).expect("positive rate").sample(rng)
            } else {
                f64::INFINITY
            };
            while next < times.len() && times[next] < event_time {
                for i in 0..self.genes.len() {
                    self.advance(i, times[next], rng);
                }
                snapshots.push(snapshot(times[next], &self.genes));
                next += 1;
            }
            if next == times.len() {
                break;
            }
            let (i, j) = pick_pair(s, rng);
            self.advance(i, event_time, rng);
            self.advance(j, event_time, rng);
            self.genes[i] = merged(self.genes[i], self.genes[j])?;
            self.genes.swap_remove(j);
            self.touched.swap_remove(j);
            self.time = event_time;
            self.events += 1;
        }
        Ok(TrajectoryRecord { gene_rate: self.rate, snapshots, events: self.events })
    }
}

/// Fenwick tree over `u128` weights.
#[derive(Debug, Clone)]
struct Fenwick {
    tree: Vec<u128>,
}

impl Fenwick {
    fn new(weights: &[u128]) -> Self {
        let n = weights.len();
        let mut tree = vec![0u128; n + 1];
        for (i, &w) in weights.iter().enumerate() {
            let k = i + 1;
            tree[k] += w;
            let parent = k + (k & k.wrapping_neg());
            if parent <= n {
                let v = tree[k];
                tree[parent] += v;
            }
        }
        Fenwick { tree }
    }

    fn add(&mut self, i: usize, delta: i128) {
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] = self.tree[k].wrapping_add_signed(delta);
            k += k & k.wrapping_neg();
        }
    }

    /// Smallest index whose prefix sum exceeds `target`.
    fn find(&self, mut target: u128) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                target -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        pos
    }
}

fn pair_weight(g: u64) -> u128 {
    let g = g as u128;
    g * g.saturating_sub(1) / 2
}

/// The exact event-by-event engine. Species occupy fixed slots; `alive` lists live slots.
pub(crate) struct DirectState {
    genes: Vec<u64>,
    alive: Vec<usize>,
    fenwick: Fenwick,
    gene_pairs: u128,
    rate: f64,
    pub(crate) time: f64,
    pub(crate) events: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Event {
    Species,
    Gene,
}

impl DirectState {
    pub(crate) fn new(genes: Vec<u64>, rate: f64, t0: f64) -> Self {
        let weights: Vec<u128> = genes.iter().map(|&g| pair_weight(g)).collect();
        let gene_pairs = weights.iter().sum();
        DirectState {
            alive: (0..genes.len()).collect(),
            fenwick: Fenwick::new(&weights),
            genes,
            gene_pairs,
            rate,
            time: t0,
            events: 0,
        }
    }

    fn set(&mut self, slot: usize, g: u64) {
        let old = pair_weight(self.genes[slot]);
        let new = pair_weight(g);
        self.fenwick.add(slot, new as i128 - old as i128);
        self.gene_pairs = self.gene_pairs - old + new;
        self.genes[slot] = g;
    }

    pub(crate) fn counts(&self) -> Vec<u64> {
        self.alive.iter().map(|&k| self.genes[k]).collect()
    }

    pub(crate) fn total_rate(&self) -> f64 {
        let s = self.alive.len() as f64;
        s * (s - 1.0) / 2.0 + self.rate * self.gene_pairs as f64
    }

    /// Proposes the next event time; `None` once absorbed.
    pub(crate) fn next_time<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<f64> {
        let r = self.total_rate();
        (r > 0.0).then(|| self.time + Exp::new(r).expect("positive rate").sample(rng))
    }

    pub(crate) fn apply<R: Rng + ?Sized>(&mut self, at: f64, rng: &mut R) -> Result<Event> {
        let s = self.alive.len();
        let species_rate = (s * (s.saturating_sub(1))) as f64 / 2.0;
        let u: f64 = rng.random::<f64>() * self.total_rate();
        self.time = at;
        self.events += 1;
        if u < species_rate || self.gene_pairs == 0 {
            let (a, b) = pick_pair(s, rng);
            let (ka, kb) = (self.alive[a], self.alive[b]);
            let g = merged(self.genes[ka], self.genes[kb])?;
            self.set(ka, g);
            self.set(kb, 0);
            self.alive.swap_remove(b);
            Ok(Event::Species)
        } else {
            let slot = self.fenwick.find(rng.random_range(0..self.gene_pairs));
            self.set(slot, self.genes[slot] - 1);
            Ok(Event::Gene)
        }
    }

    fn run<R: Rng + ?Sized>(mut self, times: &[f64], rng: &mut R) -> Result<TrajectoryRecord> {
        let mut snapshots = Vec::with_capacity(times.len());
        let mut next = 0;
        while next < times.len() {
            let event_time = self.next_time(rng).unwrap_or(f64::INFINITY);
            while next < times.len() && times[next] < event_time {
                snapshots.push(snapshot(times[next], &self.counts()));
                next += 1;
            }
            if next == times.len() {
                break;
            }
            self.apply(event_time, rng)?;
        }
        Ok(TrajectoryRecord { gene_rate: self.rate, snapshots, events: self.events })
    }
}

/// Runs the exact engine until one species with one gene remains; returns (time, events).
pub fn run_to_absorption<R: Rng + ?Sized>(
    start: &GeneticComposition,
    gene_rate: f64,
    rng: &mut R,
) -> Result<(f64, u64)> {
    if !(gene_rate > 0.0 && gene_rate.is_finite()) {
        return Err(domain(format!("gene rate must be positive, got {gene_rate}")));
    }
    let mut st = DirectState::new(start.canonical().into_inner(), gene_rate, 0.0);
    while let Some(t) = st.next_time(rng) {
        st.apply(t, rng)?;
    }
    Ok((st.time, st.events))
}

/// Time of the first species merger from a composition, sampled with the exact engine.
pub fn first_species_merger<R: Rng + ?Sized>(
    start: &GeneticComposition,
    gene_rate: f64,
    rng: &mut R,
) -> Result<Option<f64>> {
    let mut st = DirectState::new(start.canonical().into_inner(), gene_rate, 0.0);
    while let Some(t) = st.next_time(rng) {
        if st.apply(t, rng)? == Event::Species {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;

    #[test]
    fn fenwick_find_and_update() {
        let mut f = Fenwick::new(&[3, 0, 5, 1]);
        assert_eq!(f.find(0), 0);
        assert_eq!(f.find(2), 0);
        assert_eq!(f.find(3), 2);
        assert_eq!(f.find(7), 2);
        assert_eq!(f.find(8), 3);
        f.add(1, 4);
        f.add(2, -5);
        assert_eq!(f.find(3), 1);
        assert_eq!(f.find(7), 3);
    }

    #[test]
    fn initial_total_rate() {
        let st = DirectState::new(vec![2, 2], 1.0, 0.0);
        assert_eq!(st.total_rate(), 3.0);
    }

    #[test]
    fn snapshots_are_monotone() {
        let s = Streams::new(1);
        let start = GeneticComposition::new(vec![5, 1, 3, 8, 2, 2, 7]).unwrap();
        let times: Vec<f64> = (1..40).map(|i| i as f64 * 0.05).collect();
        for engine in [Engine::Direct, Engine::EXACT_LAZY, Engine::FAST_LAZY] {
            for rep in 0..20 {
                let rec = run(engine, &start, 1.3, 0.0, &times, &mut s.get("mono", rep)).unwrap();
                assert_eq!(rec.snapshots.len(), times.len());
                for w in rec.snapshots.windows(2) {
                    assert!(w[1].species <= w[0].species);
                    assert!(w[1].genes <= w[0].genes);
                    assert!(w[1].species >= 1);
                    assert!(w[1].measure.atoms()[0].0 >= 1.0);
                }
            }
        }
    }

    #[test]
    fn rejects_unsorted_times_and_bad_rate() {
        let start = GeneticComposition::uniform(3, 1).unwrap();
        let mut rng = Streams::new(0).get("x", 0);
        assert!(run(Engine::Direct, &start, 1.0, 0.0, &[1.0, 0.5], &mut rng).is_err());
        assert!(run(Engine::Direct, &start, 0.0, 0.0, &[1.0], &mut rng).is_err());
    }

    #[test]
    fn capped_start_overflow_is_reported() {
        let mut rng = Streams::new(0).get("x", 0);
        let init = InitialGenes::Capped { cap: u64::MAX / 3 };
        assert!(matches!(init.sample(4, &mut rng), Err(Error::Overflow(_))));
        assert!(init.sample(3, &mut rng).is_ok());
    }
}
