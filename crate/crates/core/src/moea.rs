//! NSGA-II over genomes: binary tournament, two-point crossover, integer
//! polynomial mutation, and rank-then-crowding environmental selection.
//!
//! Both objectives are minimized. Variation is single-threaded and driven by
//! one seeded stream; only evaluation fans out, and every evaluation's
//! randomness is keyed by the genome, so results do not depend on the
//! number of worker threads.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::time::{Duration, Instant};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::SearchData;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{self, Rng};
use crate::rwe::{self, EvalConfig};
use crate::search_space::{gene_bound, Genome, GENOME_LEN};

/// (validation error, FLOPs); both minimized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objectives {
    pub error: f64,
    pub flops: u64,
}

impl Objectives {
    pub fn as_array(&self) -> [f64; 2] {
        [self.error, self.flops as f64]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genome: Genome,
    pub objectives: Objectives,
    pub rank: usize,
    pub crowding: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub pop_size: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub eta_m: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            pop_size: 20,
            generations: 30,
            crossover_prob: 0.9,
            mutation_prob: 1.0 / GENOME_LEN as f64,
            eta_m: 20.0,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pop_size < 2 || !self.pop_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "population size must be even and at least 2, got {}",
                self.pop_size
            )));
        }
        for (name, p) in [
            ("crossover_prob", self.crossover_prob),
            ("mutation_prob", self.mutation_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if self.eta_m.is_nan() || self.eta_m < 0.0 {
            return Err(Error::Config("eta_m must be non-negative".into()));
        }
        Ok(())
    }
}

/// `a` dominates `b` under minimization.
pub fn dominates(a: &[f64; 2], b: &[f64; 2]) -> bool {
    a[0] <= b[0] && a[1] <= b[1] && (a[0] < b[0] || a[1] < b[1])
}

/// Deb's fast nondominated sort. Fronts hold indices in ascending order.
pub fn fast_nondominated_sort(points: &[[f64; 2]]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut count = vec![0usize; n];
    let mut current = Vec::new();
    for p in 0..n {
        for q in 0..n {
            if dominates(&points[p], &points[q]) {
                dominated_by[p].push(q);
            } else if dominates(&points[q], &points[p]) {
                count[p] += 1;
            }
        }
        if count[p] == 0 {
            current.push(p);
        }
    }
    let mut fronts = Vec::new();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by[p] {
                count[q] -= 1;
                if count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each point within one front. Boundary points per
/// objective get `+∞`; objectives with zero range contribute nothing.
pub fn crowding_distance(front: &[[f64; 2]]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    for m in [0, 1] {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| front[a][m].partial_cmp(&front[b][m]).unwrap_or(Ordering::Equal));
        let (lo, hi) = (front[order[0]][m], front[order[n - 1]][m]);
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for k in 1..n - 1 {
            dist[order[k]] += (front[order[k + 1]][m] - front[order[k - 1]][m]) / range;
        }
    }
    dist
}

/// Lower rank wins, then larger crowding, then a fair coin.
fn tournament_winner(pop: &[Individual], a: usize, b: usize, rng: &mut Rng) -> usize {
    let (x, y) = (&pop[a], &pop[b]);
    match x.rank.cmp(&y.rank) {
        Ordering::Less => a,
        Ordering::Greater => b,
        Ordering::Equal => match x.crowding.partial_cmp(&y.crowding) {
            Some(Ordering::Greater) => a,
            Some(Ordering::Less) => b,
            _ => {
                if rng.gen_bool(0.5) {
                    a
                } else {
                    b
                }
            }
        },
    }
}

/// Binary tournament over two distinct uniformly drawn individuals.
pub fn tournament_select(pop: &[Individual], rng: &mut Rng) -> usize {
    if pop.len() < 2 {
        return 0;
    }
    let a = rng.gen_range(0..pop.len());
    let mut b = rng.gen_range(0..pop.len() - 1);
    if b >= a {
        b += 1;
    }
    tournament_winner(pop, a, b, rng)
}

/// Swaps the gene segment `[start, end)` between two parents.
pub fn crossover_at(p1: &Genome, p2: &Genome, start: usize, end: usize) -> (Genome, Genome) {
    let (mut a, mut b) = (p1.flatten(), p2.flatten());
    a[start..end].swap_with_slice(&mut b[start..end]);
    (
        Genome::from_genes(&a).expect("aligned recombination stays in bounds"),
        Genome::from_genes(&b).expect("aligned recombination stays in bounds"),
    )
}

/// With probability `prob`, swaps a uniformly chosen segment `[i, j)`,
/// `0 ≤ i < j ≤ 40`; otherwise returns copies of the parents.
pub fn two_point_crossover(p1: &Genome, p2: &Genome, prob: f64, rng: &mut Rng) -> (Genome, Genome) {
    if !rng.gen_bool(prob) {
        return (*p1, *p2);
    }
    let i = rng.gen_range(0..=GENOME_LEN);
    let mut j = rng.gen_range(0..GENOME_LEN);
    if j >= i {
        j += 1;
    }
    let (start, end) = if i < j { (i, j) } else { (j, i) };
    crossover_at(p1, p2, start, end)
}

/// Bounded polynomial perturbation of `x ∈ [lo, hi]` for a uniform draw `u`.
pub fn polynomial_perturb(x: f64, lo: f64, hi: f64, eta: f64, u: f64) -> f64 {
    let range = hi - lo;
    if range <= 0.0 {
        return x;
    }
    let d1 = (x - lo) / range;
    let d2 = (hi - x) / range;
    let pow = 1.0 / (eta + 1.0);
    let dq = if u < 0.5 {
        let v = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1).powf(eta + 1.0);
        v.powf(pow) - 1.0
    } else {
        let v = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2).powf(eta + 1.0);
        1.0 - v.powf(pow)
    };
    (x + dq * range).clamp(lo, hi)
}

/// Mutates each gene with probability `p_gene` on its continuous relaxation
/// `[0, bound]`, then rounds and clamps back to an integer.
pub fn polynomial_mutation(genome: &Genome, rng: &mut Rng, eta_m: f64, p_gene: f64) -> Genome {
    let mut genes = genome.flatten();
    for (pos, g) in genes.iter_mut().enumerate() {
        if !rng.gen_bool(p_gene) {
            continue;
        }
        let u: f64 = rng.gen();
        let hi = f64::from(gene_bound(pos));
        let y = polynomial_perturb(f64::from(*g), 0.0, hi, eta_m, u);
        *g = y.round().clamp(0.0, hi) as u8;
    }
    Genome::from_genes(&genes).expect("mutation clamps to bounds")
}

/// Fills `rank` and `crowding` for a whole population.
pub fn assign_rank_and_crowding(pop: &mut [Individual]) {
    let pts: Vec<[f64; 2]> = pop.iter().map(|i| i.objectives.as_array()).collect();
    for (r, front) in fast_nondominated_sort(&pts).iter().enumerate() {
        let fp: Vec<[f64; 2]> = front.iter().map(|&i| pts[i]).collect();
        for (&i, d) in front.iter().zip(crowding_distance(&fp)) {
            pop[i].rank = r;
            pop[i].crowding = d;
        }
    }
}

/// Keeps `n` individuals: whole fronts in rank order, the last partial front
/// by descending crowding distance with ties in insertion order.
pub fn environmental_selection(mut merged: Vec<Individual>, n: usize) -> Vec<Individual> {
    let pts: Vec<[f64; 2]> = merged.iter().map(|i| i.objectives.as_array()).collect();
    let mut keep: Vec<usize> = Vec::with_capacity(n);
    for (r, front) in fast_nondominated_sort(&pts).iter().enumerate() {
        if keep.len() >= n {
            break;
        }
        let fp: Vec<[f64; 2]> = front.iter().map(|&i| pts[i]).collect();
        let dist = crowding_distance(&fp);
        let mut members: Vec<(usize, f64)> = front.iter().copied().zip(dist).collect();
        for &(i, d) in &members {
            merged[i].rank = r;
            merged[i].crowding = d;
        }
        if keep.len() + members.len() > n {
            members.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
            members.truncate(n - keep.len());
            members.sort_by_key(|m| m.0);
        }
        keep.extend(members.iter().map(|m| m.0));
    }
    let mut slots: Vec<Option<Individual>> = merged.into_iter().map(Some).collect();
    let mut out: Vec<Individual> = keep.iter().map(|&i| slots[i].take().expect("each kept once")).collect();
    // rank and crowding are reported relative to the surviving population
    assign_rank_and_crowding(&mut out);
    out
}

/// Scores genomes. Implementations must be deterministic in the genome.
pub trait Evaluator: Sync {
    fn evaluate(&self, genome: &Genome) -> Result<Objectives>;
}

/// Random-Weight Evaluation over a prepared dataset.
pub struct RweEvaluator<'a> {
    pub data: &'a SearchData,
    pub config: EvalConfig,
    /// Execution of the per-genome forward passes.
    pub exec: Exec,
}

impl Evaluator for RweEvaluator<'_> {
    fn evaluate(&self, genome: &Genome) -> Result<Objectives> {
        let r = rwe::evaluate(genome, self.data, &self.config, self.exec)?;
        Ok(Objectives {
            error: r.error,
            flops: r.flops,
        })
    }
}

impl<F> Evaluator for F
where
    F: Fn(&Genome) -> Result<Objectives> + Sync,
{
    fn evaluate(&self, genome: &Genome) -> Result<Objectives> {
        self(genome)
    }
}

/// Snapshot row for one individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualRecord {
    pub genome: Genome,
    pub error: f64,
    pub flops: u64,
    pub rank: usize,
    /// `None` encodes an infinite crowding distance.
    pub crowding: Option<f64>,
}

impl From<&Individual> for IndividualRecord {
    fn from(i: &Individual) -> Self {
        IndividualRecord {
            genome: i.genome,
            error: i.objectives.error,
            flops: i.objectives.flops,
            rank: i.rank,
            crowding: i.crowding.is_finite().then_some(i.crowding),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    /// Distinct genomes evaluated so far.
    pub evaluations: usize,
    /// Lookups answered from the cache so far.
    pub hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSnapshot {
    pub generation: usize,
    pub individuals: Vec<IndividualRecord>,
    /// Indices into `individuals` with rank 0.
    pub front: Vec<usize>,
    pub cache: CacheStats,
}

impl GenerationSnapshot {
    fn new(generation: usize, pop: &[Individual], cache: CacheStats) -> Self {
        GenerationSnapshot {
            generation,
            individuals: pop.iter().map(IndividualRecord::from).collect(),
            front: pop
                .iter()
                .enumerate()
                .filter(|(_, i)| i.rank == 0)
                .map(|(k, _)| k)
                .collect(),
            cache,
        }
    }

    pub fn min_error(&self) -> f64 {
        self.individuals.iter().map(|i| i.error).fold(f64::INFINITY, f64::min)
    }

    pub fn min_flops(&self) -> u64 {
        self.individuals.iter().map(|i| i.flops).min().unwrap_or(0)
    }
}

/// Per-generation population snapshots; entry 0 is the initial population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHistory {
    pub generations: Vec<GenerationSnapshot>,
    /// Wall time per snapshot. Not serialized: it would break byte-identical
    /// reruns.
    #[serde(skip)]
    pub timings: Vec<Duration>,
    #[serde(skip)]
    pub interrupted: bool,
}

struct Cache<'e, E: Evaluator + ?Sized> {
    evaluator: &'e E,
    map: HashMap<Genome, Objectives>,
    stats: CacheStats,
    exec: Exec,
}

impl<E: Evaluator + ?Sized> Cache<'_, E> {
    /// Evaluates every distinct unseen genome once (possibly in parallel) and
    /// returns objectives in input order.
    fn evaluate(&mut self, genomes: &[Genome]) -> Result<Vec<Objectives>> {
        let mut fresh: Vec<Genome> = Vec::new();
        for g in genomes {
            if self.map.contains_key(g) || fresh.contains(g) {
                self.stats.hits += 1;
            } else {
                fresh.push(*g);
            }
        }
        let evaluator = self.evaluator;
        let results = self.exec.map(&fresh, |g| evaluator.evaluate(g));
        for (g, r) in fresh.iter().zip(results) {
            self.map.insert(*g, r?);
            self.stats.evaluations += 1;
        }
        Ok(genomes.iter().map(|g| self.map[g]).collect())
    }
}

/// Cooperative cancellation flag checked between generations.
pub type CancelFlag = AtomicBool;

/// Runs NSGA-II with `evaluator`, recording a snapshot per generation.
///
/// When `cancel` is raised the loop stops at the next generation boundary
/// and returns the partial history with `interrupted` set.
pub fn run_search<E: Evaluator + ?Sized>(
    cfg: &SearchConfig,
    evaluator: &E,
    exec: Exec,
    cancel: Option<&CancelFlag>,
    mut on_generation: impl FnMut(&GenerationSnapshot, Duration),
) -> Result<SearchHistory> {
    cfg.validate()?;
    let mut rng = rng::rng(rng::derive(cfg.seed, 0xEA));
    let mut cache = Cache {
        evaluator,
        map: HashMap::new(),
        stats: CacheStats::default(),
        exec,
    };
    let mut history = SearchHistory {
        generations: Vec::with_capacity(cfg.generations + 1),
        timings: Vec::with_capacity(cfg.generations + 1),
        interrupted: false,
    };

    let start = Instant::now();
    let genomes: Vec<Genome> = (0..cfg.pop_size).map(|_| Genome::random(&mut rng)).collect();
    let objectives = cache.evaluate(&genomes)?;
    let mut pop: Vec<Individual> = genomes
        .into_iter()
        .zip(objectives)
        .map(|(genome, objectives)| Individual {
            genome,
            objectives,
            rank: 0,
            crowding: 0.0,
        })
        .collect();
    assign_rank_and_crowding(&mut pop);
    let snap = GenerationSnapshot::new(0, &pop, cache.stats);
    on_generation(&snap, start.elapsed());
    history.generations.push(snap);
    history.timings.push(start.elapsed());

    for gen in 1..=cfg.generations {
        if cancel.is_some_and(|c| c.load(AtomicOrdering::Relaxed)) {
            history.interrupted = true;
            break;
        }
        let start = Instant::now();
        let mut children = Vec::with_capacity(cfg.pop_size);
        while children.len() < cfg.pop_size {
            let a = tournament_select(&pop, &mut rng);
            let b = tournament_select(&pop, &mut rng);
            let (c1, c2) = two_point_crossover(&pop[a].genome, &pop[b].genome, cfg.crossover_prob, &mut rng);
            children.push(polynomial_mutation(&c1, &mut rng, cfg.eta_m, cfg.mutation_prob));
            children.push(polynomial_mutation(&c2, &mut rng, cfg.eta_m, cfg.mutation_prob));
        }
        let objectives = cache.evaluate(&children)?;
        let mut merged = pop;
        merged.extend(
            children
                .into_iter()
                .zip(objectives)
                .map(|(genome, objectives)| Individual {
                    genome,
                    objectives,
                    rank: 0,
                    crowding: 0.0,
                }),
        );
        pop = environmental_selection(merged, cfg.pop_size);
        let snap = GenerationSnapshot::new(gen, &pop, cache.stats);
        on_generation(&snap, start.elapsed());
        history.generations.push(snap);
        history.timings.push(start.elapsed());
    }
    Ok(history)
}
