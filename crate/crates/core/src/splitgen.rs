//! Local search for train/validation/test partitions of whole bags whose
//! class distribution and size shares match the corpus.
//!
//! The objective sums, over the three subsets, the L1 distance between the
//! subset's class distribution and the corpus class distribution plus the
//! absolute error of the subset's size share. Both are measured in posts or
//! in bags (see [`Basis`]). Each round proposes `k` candidates, half fresh
//! random partitions and half two-bag swaps of the incumbent, and accepts
//! the best candidate only if it strictly improves the objective.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::StudentBag;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Val, Subset::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subset::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown subset `{s}`")))
    }
}

/// Subset of every bag, indexed like the corpus it was built for.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    assignment: Vec<Subset>,
}

impl Partition {
    pub fn new(assignment: Vec<Subset>) -> Self {
        Partition { assignment }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn subset_of(&self, bag: usize) -> Subset {
        self.assignment[bag]
    }

    pub fn assignment(&self) -> &[Subset] {
        &self.assignment
    }

    pub fn members(&self, subset: Subset) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] == subset).collect()
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in &self.assignment {
            c[s.index()] += 1;
        }
        c
    }

    /// Number of bags whose subset differs.
    pub fn distance(&self, other: &Partition) -> usize {
        self.assignment
            .iter()
            .zip(&other.assignment)
            .filter(|(a, b)| a != b)
            .count()
    }

    pub fn to_map<'a>(&self, corpus: &'a [StudentBag]) -> BTreeMap<&'a str, Subset> {
        corpus
            .iter()
            .zip(&self.assignment)
            .map(|(b, &s)| (b.student_id.as_str(), s))
            .collect()
    }

    /// Builds the partition for `corpus` from an id map that must cover every
    /// bag and nothing else.
    pub fn from_map(corpus: &[StudentBag], map: &HashMap<String, Subset>) -> Result<Self> {
        let ids: HashSet<&str> = corpus.iter().map(|b| b.student_id.as_str()).collect();
        if let Some(unknown) = map.keys().find(|k| !ids.contains(k.as_str())) {
            return Err(Error::UnknownBag(unknown.clone()));
        }
        let assignment = corpus
            .iter()
            .map(|b| {
                map.get(&b.student_id)
                    .copied()
                    .ok_or_else(|| Error::PartitionNotTotal(format!("bag `{}` unassigned", b.student_id)))
            })
            .collect::<Result<_>>()?;
        Ok(Partition { assignment })
    }

    /// `bag_id,subset` CSV, one row per bag in corpus order.
    pub fn write_csv<W: Write>(&self, corpus: &[StudentBag], out: W, comment: Option<&str>) -> Result<()> {
        let mut out = out;
        if let Some(c) = comment {
            writeln!(out, "# {c}").map_err(|e| Error::io("<partition>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bag_id", "subset"])?;
        for (b, s) in corpus.iter().zip(&self.assignment) {
            w.write_record([b.student_id.as_str(), s.name()])?;
        }
        w.flush().map_err(|e| Error::io("<partition>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(corpus: &[StudentBag], input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(input);
        let mut map = HashMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let (Some(id), Some(subset)) = (rec.get(0), rec.get(1)) else {
                return Err(Error::PartitionNotTotal("short partition row".into()));
            };
            if map.insert(id.to_string(), subset.parse()?).is_some() {
                return Err(Error::DuplicateId(id.to_string()));
            }
        }
        Self::from_map(corpus, &map)
    }
}

/// What the distributions are measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Bags,
    Posts,
}

impl std::str::FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bags" => Ok(Basis::Bags),
            "posts" => Ok(Basis::Posts),
            _ => Err(Error::Config(format!("unknown basis `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitTargets {
    /// Train, validation and test shares.
    pub size_props: [f64; 3],
    /// Negative and positive shares.
    pub class_props: [f64; 2],
    pub basis: Basis,
}

impl SplitTargets {
    pub const DEFAULT_SIZES: [f64; 3] = [0.6, 0.2, 0.2];

    pub fn new(size_props: [f64; 3], class_props: [f64; 2], basis: Basis) -> Result<Self> {
        for (name, sum) in [
            ("size", size_props.iter().sum::<f64>()),
            ("class", class_props.iter().sum::<f64>()),
        ] {
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("{name} proportions sum to {sum}, not 1")));
            }
        }
        if size_props.iter().chain(&class_props).any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Config("proportions must lie in [0, 1]".into()));
        }
        Ok(SplitTargets {
            size_props,
            class_props,
            basis,
        })
    }

    /// 60/20/20 sizes and the corpus's own class distribution on `basis`.
    pub fn from_corpus(corpus: &[StudentBag], basis: Basis) -> Result<Self> {
        let weights = bag_weights(corpus, basis);
        let total: f64 = weights.iter().sum();
        if total == 0.0 {
            return Err(Error::Config(format!("corpus has no {basis:?} to split on")));
        }
        let pos: f64 = corpus
            .iter()
            .zip(&weights)
            .filter(|(b, _)| b.label().is_positive())
            .map(|(_, w)| w)
            .sum();
        let p = pos / total;
        Self::new(Self::DEFAULT_SIZES, [1.0 - p, p], basis)
    }
}

fn bag_weights(corpus: &[StudentBag], basis: Basis) -> Vec<f64> {
    corpus
        .iter()
        .map(|b| match basis {
            Basis::Bags => 1.0,
            Basis::Posts => b.len() as f64,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    /// Checked between rounds; `None` disables the wall-clock limit.
    pub wall_clock: Option<Duration>,
    /// Stop once every one of the 9 component deviations is at most this.
    pub tolerance: f64,
    pub max_iterations: Option<usize>,
    /// Candidates proposed per round.
    pub candidates: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            wall_clock: Some(Duration::from_secs(300)),
            tolerance: 0.01,
            max_iterations: None,
            candidates: 10,
        }
    }
}

impl SearchBudget {
    /// Deterministic budget: iteration cap only.
    pub fn iterations(max_iterations: usize) -> Self {
        SearchBudget {
            wall_clock: None,
            max_iterations: Some(max_iterations),
            ..Self::default()
        }
    }
}

/// A corpus reduced to what the objective needs.
#[derive(Debug, Clone)]
pub struct SplitProblem {
    weights: Vec<f64>,
    positive: Vec<bool>,
    total: f64,
    targets: SplitTargets,
}

impl SplitProblem {
    pub fn new(corpus: &[StudentBag], targets: SplitTargets) -> Result<Self> {
        let weights = bag_weights(corpus, targets.basis);
        let total = weights.iter().sum();
        if total == 0.0 {
            return Err(Error::Config("corpus has zero total weight".into()));
        }
        Ok(SplitProblem {
            weights,
            positive: corpus.iter().map(|b| b.label().is_positive()).collect(),
            total,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn targets(&self) -> &SplitTargets {
        &self.targets
    }

    fn check(&self, p: &Partition) -> Result<()> {
        if p.len() != self.len() {
            return Err(Error::PartitionNotTotal(format!(
                "{} assignments for {} bags",
                p.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// Per subset: |negative error|, |positive error|, |size-share error|.
    /// A subset with zero weight has class distribution (0, 0), so it
    /// contributes its full target mass.
    pub fn deviations(&self, p: &Partition) -> [f64; 9] {
        let mut w = [0.0; 3];
        let mut pos = [0.0; 3];
        for ((s, &wt), &is_pos) in p.assignment.iter().zip(&self.weights).zip(&self.positive) {
            w[s.index()] += wt;
            if is_pos {
                pos[s.index()] += wt;
            }
        }
        let t = &self.targets;
        let mut out = [0.0; 9];
        for s in 0..3 {
            let (neg_share, pos_share) = if w[s] > 0.0 {
                ((w[s] - pos[s]) / w[s], pos[s] / w[s])
            } else {
                (0.0, 0.0)
            };
            out[3 * s] = (neg_share - t.class_props[0]).abs();
            out[3 * s + 1] = (pos_share - t.class_props[1]).abs();
            out[3 * s + 2] = (w[s] / self.total - t.size_props[s]).abs();
        }
        out
    }

    pub fn objective(&self, p: &Partition) -> f64 {
        self.deviations(p).iter().sum()
    }

    pub fn within_tolerance(&self, p: &Partition, tolerance: f64) -> bool {
        self.deviations(p).iter().all(|&d| d <= tolerance)
    }

    /// Draws each bag's subset independently with the target size shares as
    /// probabilities, redrawing until no subset is empty (when the corpus has
    /// at least three bags).
    pub fn random_partition<R: Rng + ?Sized>(&self, rng: &mut R) -> Partition {
        let sizes = self.targets.size_props;
        loop {
            let assignment: Vec<Subset> = (0..self.len())
                .map(|_| {
                    let u: f64 = rng.random();
                    if u < sizes[0] {
                        Subset::Train
                    } else if u < sizes[0] + sizes[1] {
                        Subset::Val
                    } else {
                        Subset::Test
                    }
                })
                .collect();
            let p = Partition { assignment };
            if self.len() < 3 || p.counts().iter().all(|&c| c > 0) {
                return p;
            }
        }
    }

    fn swap_neighbor<R: Rng + ?Sized>(&self, p: &Partition, rng: &mut R) -> Option<Partition> {
        let counts = p.counts();
        let pairs: Vec<(usize, usize)> = [(0, 1), (0, 2), (1, 2)]
            .into_iter()
            .filter(|&(a, b)| counts[a] > 0 && counts[b] > 0)
            .collect();
        if self.len() < 2 || pairs.is_empty() {
            return None;
        }
        let (a, b) = pairs[rng.random_range(0..pairs.len())];
        let pick = |s: usize, rng: &mut R| {
            let k = rng.random_range(0..counts[s]);
            p.assignment
                .iter()
                .enumerate()
                .filter(|(_, x)| x.index() == s)
                .nth(k)
                .map(|(i, _)| i)
                .expect("subset count matches members")
        };
        let i = pick(a, rng);
        let j = pick(b, rng);
        let mut next = p.clone();
        next.assignment.swap(i, j);
        Some(next)
    }

    /// `ceil(k/2)` random partitions followed by `floor(k/2)` swap
    /// neighbors of `p`. Without a possible swap all `k` are random.
    pub fn neighbors<R: Rng + ?Sized>(&self, p: &Partition, k: usize, rng: &mut R) -> Vec<Partition> {
        let n_random = k.div_ceil(2);
        let mut out: Vec<Partition> = (0..n_random).map(|_| self.random_partition(rng)).collect();
        for _ in n_random..k {
            match self.swap_neighbor(p, rng) {
                Some(n) => out.push(n),
                None => out.push(self.random_partition(rng)),
            }
        }
        out
    }

    /// Hill climbing from `initial`.
    pub fn search_from<R: Rng + ?Sized>(
        &self,
        initial: Partition,
        budget: &SearchBudget,
        rng: &mut R,
    ) -> Result<SearchOutcome> {
        self.check(&initial)?;
        if budget.candidates < 2 {
            return Err(Error::Config("need at least 2 candidates per round".into()));
        }
        let start = Instant::now();
        let mut current = initial;
        let mut best = self.objective(&current);
        let mut trace = vec![best];
        let mut iterations = 0;
        let status = loop {
            if self.within_tolerance(&current, budget.tolerance) {
                break SearchStatus::Converged;
            }
            if budget.max_iterations.is_some_and(|m| iterations >= m)
                || budget.wall_clock.is_some_and(|w| start.elapsed() >= w)
            {
                break SearchStatus::BudgetStopped;
            }
            let candidates = self.neighbors(&current, budget.candidates, rng);
            let (idx, obj) = candidates
                .iter()
                .map(|c| self.objective(c))
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, o)| if o < acc.1 { (i, o) } else { acc });
            if obj < best {
                best = obj;
                current = candidates.into_iter().nth(idx).expect("index in range");
            }
            iterations += 1;
            trace.push(best);
        };
        Ok(SearchOutcome {
            partition: current,
            objective: best,
            iterations,
            status,
            trace,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchStatus {
    Converged,
    BudgetStopped,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub partition: Partition,
    pub objective: f64,
    pub iterations: usize,
    pub status: SearchStatus,
    /// Incumbent objective after each round, starting with the initial one.
    pub trace: Vec<f64>,
}

pub fn objective(partition: &Partition, targets: &SplitTargets, corpus: &[StudentBag]) -> Result<f64> {
    let problem = SplitProblem::new(corpus, *targets)?;
    problem.check(partition)?;
    Ok(problem.objective(partition))
}

pub fn neighbors<R: Rng + ?Sized>(
    corpus: &[StudentBag],
    targets: &SplitTargets,
    partition: &Partition,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Partition>> {
    if k < 2 {
        return Err(Error::Config("need k >= 2 candidates".into()));
    }
    let problem = SplitProblem::new(corpus, *targets)?;
    problem.check(partition)?;
    Ok(problem.neighbors(partition, k, rng))
}

/// Local search from a random non-empty partition.
pub fn local_search<R: Rng + ?Sized>(
    corpus: &[StudentBag],
    targets: &SplitTargets,
    budget: &SearchBudget,
    rng: &mut R,
) -> Result<SearchOutcome> {
    if corpus.len() < 3 {
        return Err(Error::Config("local search needs at least 3 bags".into()));
    }
    let problem = SplitProblem::new(corpus, *targets)?;
    let initial = problem.random_partition(rng);
    problem.search_from(initial, budget, rng)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub file: String,
    pub seed: u64,
    pub objective: f64,
    pub status: SearchStatus,
    pub iterations: usize,
    #[serde(skip)]
    pub partition: Option<Partition>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Suite {
    pub seed: u64,
    pub targets: SplitTargets,
    pub tolerance: f64,
    /// Number of entries identical to an earlier one.
    pub duplicates: usize,
    pub entries: Vec<SuiteEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
}

pub const SUITE_MANIFEST: &str = "suite.json";

impl Suite {
    pub fn partitions(&self) -> impl Iterator<Item = &Partition> {
        self.entries.iter().filter_map(|e| e.partition.as_ref())
    }

    /// Writes one `bag_id,subset` CSV per entry plus the `suite.json`
    /// manifest into `dir`.
    pub fn save(&self, dir: &Path, corpus: &[StudentBag], comment: Option<&str>) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for e in &self.entries {
            let p = e
                .partition
                .as_ref()
                .ok_or_else(|| Error::Config(format!("entry {} has no partition", e.file)))?;
            let path = dir.join(&e.file);
            let mut buf = Vec::new();
            p.write_csv(corpus, &mut buf, comment)?;
            std::fs::write(&path, buf).map_err(|err| Error::io(&path, err))?;
        }
        let path = dir.join(SUITE_MANIFEST);
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    /// Reads a suite directory and resolves each partition against `corpus`.
    pub fn load(dir: &Path, corpus: &[StudentBag]) -> Result<Self> {
        let path = dir.join(SUITE_MANIFEST);
        let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut suite: Suite = serde_json::from_slice(&text)?;
        for e in &mut suite.entries {
            let path = dir.join(&e.file);
            let file = std::fs::File::open(&path).map_err(|err| Error::io(&path, err))?;
            e.partition = Some(Partition::read_csv(corpus, file)?);
        }
        Ok(suite)
    }
}

/// Seeds for `n` independent searches derived from one master seed.
pub fn derive_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// Runs `n` independent searches in parallel and collects them in order.
pub fn generate_suite(
    corpus: &[StudentBag],
    n: usize,
    targets: &SplitTargets,
    budget: &SearchBudget,
    seed: u64,
) -> Result<Suite> {
    if n == 0 {
        return Err(Error::Config("suite size must be at least 1".into()));
    }
    let seeds = derive_seeds(seed, n);
    let outcomes = seeds
        .par_iter()
        .map(|&s| local_search(corpus, targets, budget, &mut ChaCha8Rng::seed_from_u64(s)))
        .collect::<Result<Vec<_>>>()?;
    let mut seen = HashSet::new();
    let mut duplicates = 0;
    let entries = outcomes
        .into_iter()
        .zip(seeds)
        .enumerate()
        .map(|(i, (o, s))| {
            if !seen.insert(o.partition.clone()) {
                duplicates += 1;
            }
            SuiteEntry {
                file: format!("split_{i:02}.csv"),
                seed: s,
                objective: o.objective,
                status: o.status,
                iterations: o.iterations,
                partition: Some(o.partition),
            }
        })
        .collect();
    Ok(Suite {
        seed,
        targets: *targets,
        tolerance: budget.tolerance,
        duplicates,
        entries,
        manifest_hash: None,
    })
}
