//! Seeded synthetic corpora and classification tasks.
//!
//! All text comes from first-order Markov chains over the content tokens.
//! The pretraining corpus and both tasks share one base chain (the
//! "language"), so what masked-token pretraining learns about the language
//! transfers to the downstream tasks.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Example, Target, CLS_TOKEN, FIRST_CONTENT_TOKEN};

/// Parameters of the token-transition family shared by every generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub vocab_size: usize,
    /// Full sequence length including the leading `[CLS]`.
    pub seq_len: usize,
    pub family_seed: u64,
    /// Number of latent token clusters; transitions depend only on clusters.
    pub clusters: usize,
    /// Number of preferred successor clusters per cluster, taken in order
    /// along a fixed random cycle through all clusters.
    pub successors: usize,
    /// Probability mass spread uniformly over all successor clusters.
    pub smoothing: f64,
    /// Fraction of pretraining sequences drawn from the reversed chain.
    pub corpus_reversed_share: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            seq_len: 16,
            family_seed: 17,
            clusters: 8,
            successors: 1,
            smoothing: 0.1,
            corpus_reversed_share: 0.0,
        }
    }
}

impl SynthConfig {
    fn content_tokens(&self) -> usize {
        self.vocab_size - FIRST_CONTENT_TOKEN as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= FIRST_CONTENT_TOKEN as usize + 1 {
            return Err(Error::InvalidConfig(
                "vocab_size too small for synthetic data".into(),
            ));
        }
        if self.seq_len < 3 {
            return Err(Error::InvalidConfig("seq_len must be at least 3".into()));
        }
        if self.clusters < 2 || self.clusters > self.content_tokens() {
            return Err(Error::InvalidConfig(
                "clusters must lie in 2..=content tokens".into(),
            ));
        }
        if self.successors == 0 || self.successors >= self.clusters {
            return Err(Error::InvalidConfig(
                "successors must lie in 1..clusters".into(),
            ));
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return Err(Error::InvalidConfig("smoothing must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.corpus_reversed_share) {
            return Err(Error::InvalidConfig(
                "corpus_reversed_share must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Stationary distribution of an irreducible row-stochastic matrix, by power
/// iteration from the uniform distribution.
fn stationary(t: &[Vec<f64>]) -> Vec<f64> {
    let k = t.len();
    let mut p = vec![1.0 / k as f64; k];
    for _ in 0..10_000 {
        let mut next = vec![0.0; k];
        for (pi, row) in p.iter().zip(t) {
            for (n, &q) in next.iter_mut().zip(row) {
                *n += pi * q;
            }
        }
        let moved: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if moved < 1e-15 {
            break;
        }
    }
    let total: f64 = p.iter().sum();
    p.iter().map(|v| v / total).collect()
}

/// A Markov chain over content tokens whose transitions factor through
/// latent clusters: the next cluster depends on the current cluster, and the
/// next token is drawn from its cluster's emission weights.
///
/// Token indices in this type are content-token offsets, not vocabulary ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Language {
    cluster_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    /// `P(token | cluster of token)`.
    emission: Vec<f64>,
    cluster_initial: Vec<f64>,
    cluster_transition: Vec<Vec<f64>>,
}

impl Language {
    /// The base chain of the family.
    pub fn base(cfg: &SynthConfig) -> Self {
        let c = cfg.content_tokens();
        let k = cfg.clusters;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.family_seed);
        let mut order: Vec<usize> = (0..c).collect();
        order.shuffle(&mut rng);
        let mut cluster_of = vec![0; c];
        let mut members = vec![Vec::new(); k];
        for (rank, &tok) in order.iter().enumerate() {
            cluster_of[tok] = rank % k;
            members[rank % k].push(tok);
        }
        for m in &mut members {
            m.sort_unstable();
        }
        let mut emission = vec![0.0; c];
        for m in &members {
            let w: Vec<f64> = m.iter().map(|_| rng.random_range(0.5..1.5)).collect();
            let total: f64 = w.iter().sum();
            for (&tok, wi) in m.iter().zip(&w) {
                emission[tok] = wi / total;
            }
        }
        // Preferred successors are the next clusters along a random cycle,
        // which gives the chain a direction that its reversal does not share.
        let mut cycle: Vec<usize> = (0..k).collect();
        cycle.shuffle(&mut rng);
        let mut cluster_transition = vec![vec![cfg.smoothing / k as f64; k]; k];
        for (at, &from) in cycle.iter().enumerate() {
            let weights: Vec<f64> = (0..cfg.successors)
                .map(|_| rng.random_range(0.5..1.5))
                .collect();
            let total: f64 = weights.iter().sum();
            for (step, w) in weights.iter().enumerate() {
                let to = cycle[(at + 1 + step) % k];
                cluster_transition[from][to] += (1.0 - cfg.smoothing) * w / total;
            }
        }
        let cluster_initial = stationary(&cluster_transition);
        Self {
            cluster_of,
            members,
            emission,
            cluster_initial,
            cluster_transition,
        }
    }

    /// The time reversal of this chain. Both chains start from the cluster
    /// stationary distribution, so they share every single-position marginal
    /// and differ only in the order of tokens.
    pub fn reversed(&self) -> Self {
        let pi = &self.cluster_initial;
        let k = pi.len();
        let cluster_transition = (0..k)
            .map(|a| {
                (0..k)
                    .map(|b| pi[b] * self.cluster_transition[b][a] / pi[a])
                    .collect()
            })
            .collect();
        Self {
            cluster_transition,
            ..self.clone()
        }
    }

    pub fn num_states(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.members.len()
    }

    /// Cluster of a content token given as a vocabulary id.
    pub fn cluster_of(&self, token: u32) -> usize {
        self.cluster_of[(token - FIRST_CONTENT_TOKEN) as usize]
    }

    /// `P(next = j | current = i)` over content-token offsets.
    pub fn transition(&self, i: usize, j: usize) -> f64 {
        self.cluster_transition[self.cluster_of[i]][self.cluster_of[j]] * self.emission[j]
    }

    pub fn cluster_transition(&self, a: usize, b: usize) -> f64 {
        self.cluster_transition[a][b]
    }

    pub fn initial(&self, i: usize) -> f64 {
        self.cluster_initial[self.cluster_of[i]] * self.emission[i]
    }

    fn draw(probs: impl IntoIterator<Item = f64>, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, p) in probs.into_iter().enumerate() {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    }

    /// Draws a token of `cluster`, as a vocabulary id.
    fn emit(&self, cluster: usize, rng: &mut impl Rng) -> u32 {
        let m = &self.members[cluster];
        let pick = Self::draw(m.iter().map(|&t| self.emission[t]), rng);
        m[pick] as u32 + FIRST_CONTENT_TOKEN
    }

    /// Samples `len` content tokens, returned as vocabulary ids.
    pub fn sample(&self, len: usize, rng: &mut impl Rng) -> Vec<u32> {
        let mut out = Vec::with_capacity(len);
        let mut cluster = Self::draw(self.cluster_initial.iter().copied(), rng);
        out.push(self.emit(cluster, rng));
        while out.len() < len {
            cluster = Self::draw(self.cluster_transition[cluster].iter().copied(), rng);
            out.push(self.emit(cluster, rng));
        }
        out
    }

    /// Log-probability of a content sequence given as vocabulary ids.
    pub fn log_likelihood(&self, tokens: &[u32]) -> f64 {
        let idx: Vec<usize> = tokens
            .iter()
            .map(|&t| (t - FIRST_CONTENT_TOKEN) as usize)
            .collect();
        let mut ll = self.initial(idx[0]).ln();
        for w in idx.windows(2) {
            ll += self.transition(w[0], w[1]).ln();
        }
        ll
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub rule: String,
    pub family_seed: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub sequences: Vec<Vec<u32>>,
    pub vocab_size: usize,
    pub generator: GeneratorSpec,
}

fn with_cls(content: Vec<u32>) -> Vec<u32> {
    let mut s = Vec::with_capacity(content.len() + 1);
    s.push(CLS_TOKEN);
    s.extend(content);
    s
}

/// Every chain of the family: the base chain and its time reversal.
pub fn family(cfg: &SynthConfig) -> Vec<Language> {
    let base = Language::base(cfg);
    let reversed = base.reversed();
    vec![base, reversed]
}

/// Pretraining corpus of `size` sequences. Each is read from the base chain,
/// or from its reversal with probability `corpus_reversed_share`.
pub fn gen_corpus(cfg: &SynthConfig, seed: u64, size: usize) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    if size == 0 {
        return Err(Error::InvalidConfig(
            "corpus size must be at least 1".into(),
        ));
    }
    let chains = family(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences = (0..size)
        .map(|_| {
            let lang = &chains[usize::from(rng.random::<f64>() < cfg.corpus_reversed_share)];
            with_cls(lang.sample(cfg.seq_len - 1, &mut rng))
        })
        .collect();
    Ok(SyntheticCorpus {
        sequences,
        vocab_size: cfg.vocab_size,
        generator: GeneratorSpec {
            rule: "markov".into(),
            family_seed: cfg.family_seed,
            seed,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Which of two transition regimes generated the sequence.
    Regime,
    /// Whether a short stretch of the sequence runs backwards through the
    /// base chain.
    Motif,
}

impl TaskKind {
    pub fn id(self) -> u64 {
        match self {
            TaskKind::Regime => 1,
            TaskKind::Motif => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Regime => "regime",
            TaskKind::Motif => "motif",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regime" => Ok(TaskKind::Regime),
            "motif" => Ok(TaskKind::Motif),
            other => Err(Error::UnknownTaskKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationTask {
    pub name: String,
    pub kind: TaskKind,
    pub num_classes: usize,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub generator: GeneratorSpec,
}

/// The two chains behind [`TaskKind::Regime`]: label 0 reads the base chain
/// forwards, label 1 reads it backwards.
pub fn regime_languages(cfg: &SynthConfig) -> (Language, Language) {
    let mut chains = family(cfg).into_iter();
    let base = chains.next().expect("family has at least two chains");
    (base, chains.next().expect("family has at least two chains"))
}

/// Number of tokens in the motif of [`TaskKind::Motif`].
pub const MOTIF_LEN: usize = 4;

impl Language {
    /// Whether `a -> b` is one of the preferred cluster transitions.
    pub fn is_preferred(&self, a: usize, b: usize) -> bool {
        let row = &self.cluster_transition[a];
        let floor = row.iter().copied().fold(f64::INFINITY, f64::min);
        row[b] > floor * (1.0 + 1e-9)
    }

    /// Whether `tokens` holds [`MOTIF_LEN`] consecutive tokens whose clusters
    /// step backwards along this chain's preferred transitions.
    pub fn contains_motif(&self, tokens: &[u32]) -> bool {
        tokens.windows(MOTIF_LEN).any(|w| {
            w.windows(2)
                .all(|p| self.is_preferred(self.cluster_of(p[1]), self.cluster_of(p[0])))
        })
    }

    /// Writes a backward run of [`MOTIF_LEN`] tokens into `s` at `at`.
    fn plant_motif(&self, s: &mut [u32], at: usize, rng: &mut impl Rng) {
        let k = self.num_clusters();
        let mut cluster = rng.random_range(0..k);
        for slot in &mut s[at..at + MOTIF_LEN] {
            *slot = self.emit(cluster, rng);
            let back: Vec<usize> = (0..k).filter(|&p| self.is_preferred(p, cluster)).collect();
            cluster = *back.choose(rng).expect("every cluster has a predecessor");
        }
    }
}

/// Draws one labeled example's content tokens.
fn draw_example(
    kind: TaskKind,
    label: usize,
    cfg: &SynthConfig,
    regimes: &(Language, Language),
    rng: &mut ChaCha8Rng,
) -> Vec<u32> {
    let len = cfg.seq_len - 1;
    let base = &regimes.0;
    match kind {
        TaskKind::Regime => {
            let lang = if label == 0 { base } else { &regimes.1 };
            lang.sample(len, rng)
        }
        TaskKind::Motif => loop {
            let mut s = base.sample(len, rng);
            if label == 1 {
                let at = rng.random_range(0..=len - MOTIF_LEN);
                base.plant_motif(&mut s, at, rng);
                return s;
            }
            if !base.contains_motif(&s) {
                return s;
            }
        },
    }
}

/// Generates a balanced binary task with disjoint train and dev splits.
pub fn gen_task(
    cfg: &SynthConfig,
    kind: TaskKind,
    seed: u64,
    sizes: (usize, usize),
) -> Result<ClassificationTask> {
    cfg.validate()?;
    if sizes.0 == 0 || sizes.1 == 0 {
        return Err(Error::InvalidConfig("task splits must be nonempty".into()));
    }
    let regimes = regime_languages(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(kind.id() << 32));
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    let mut split = |n: usize, rng: &mut ChaCha8Rng| {
        let mut out: Vec<Example> = (0..n)
            .map(|i| {
                let label = i % 2;
                loop {
                    let s = draw_example(kind, label, cfg, &regimes, rng);
                    if seen.insert(s.clone()) {
                        break Example::class(with_cls(s), label);
                    }
                }
            })
            .collect();
        out.shuffle(rng);
        out
    };
    let train = split(sizes.0, &mut rng);
    let dev = split(sizes.1, &mut rng);
    Ok(ClassificationTask {
        name: kind.name().to_string(),
        kind,
        num_classes: 2,
        train,
        dev,
        generator: GeneratorSpec {
            rule: kind.name().to_string(),
            family_seed: cfg.family_seed,
            seed,
        },
    })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Corpus {
        vocab_size: usize,
        generator: GeneratorSpec,
    },
    Sequence {
        tokens: Vec<u32>,
    },
    Task {
        name: String,
        kind: TaskKind,
        num_classes: usize,
        generator: GeneratorSpec,
    },
    Example {
        split: String,
        tokens: Vec<u32>,
        label: usize,
    },
}

fn write_lines(path: &Path, lines: impl Iterator<Item = Line>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for line in lines {
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<Line>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    std::io::BufReader::new(file)
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|l| {
            let l = l.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| Error::format("jsonl record", e.to_string()))
        })
        .collect()
}

impl SyntheticCorpus {
    /// One header line, then one `{"record":"sequence"}` line per sequence.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let head = Line::Corpus {
            vocab_size: self.vocab_size,
            generator: self.generator.clone(),
        };
        let body = self
            .sequences
            .iter()
            .map(|s| Line::Sequence { tokens: s.clone() });
        write_lines(path, std::iter::once(head).chain(body))
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let mut lines = read_lines(path)?.into_iter();
        let Some(Line::Corpus {
            vocab_size,
            generator,
        }) = lines.next()
        else {
            return Err(Error::format("corpus file", "missing corpus header line"));
        };
        let sequences = lines
            .map(|l| match l {
                Line::Sequence { tokens } if tokens.iter().all(|&t| (t as usize) < vocab_size) => {
                    Ok(tokens)
                }
                _ => Err(Error::format(
                    "corpus file",
                    "expected in-vocabulary sequence records",
                )),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            sequences,
            vocab_size,
            generator,
        })
    }
}

impl ClassificationTask {
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let head = Line::Task {
            name: self.name.clone(),
            kind: self.kind,
            num_classes: self.num_classes,
            generator: self.generator.clone(),
        };
        let rows = |split: &'static str, set: &'_ [Example]| {
            set.iter()
                .map(move |ex| match ex.target {
                    Target::Class(label) => Line::Example {
                        split: split.to_string(),
                        tokens: ex.tokens.clone(),
                        label,
                    },
                    Target::Masked(_) => unreachable!("tasks hold class targets"),
                })
                .collect::<Vec<_>>()
        };
        let body = rows("train", &self.train)
            .into_iter()
            .chain(rows("dev", &self.dev));
        write_lines(path, std::iter::once(head).chain(body))
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let mut lines = read_lines(path)?.into_iter();
        let Some(Line::Task {
            name,
            kind,
            num_classes,
            generator,
        }) = lines.next()
        else {
            return Err(Error::format("task file", "missing task header line"));
        };
        let (mut train, mut dev) = (Vec::new(), Vec::new());
        for l in lines {
            match l {
                Line::Example {
                    split,
                    tokens,
                    label,
                } if label < num_classes => {
                    let ex = Example::class(tokens, label);
                    match split.as_str() {
                        "train" => train.push(ex),
                        "dev" => dev.push(ex),
                        other => {
                            return Err(Error::format(
                                "task file",
                                format!("unknown split `{other}`"),
                            ))
                        }
                    }
                }
                _ => {
                    return Err(Error::format(
                        "task file",
                        "expected labeled example records",
                    ))
                }
            }
        }
        if train.is_empty() || dev.is_empty() {
            return Err(Error::format("task file", "both splits must be nonempty"));
        }
        Ok(Self {
            name,
            kind,
            num_classes,
            train,
            dev,
            generator,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label_of(ex: &Example) -> usize {
        match ex.target {
            Target::Class(y) => y,
            Target::Masked(_) => unreachable!(),
        }
    }

    #[test]
    fn corpus_is_deterministic_and_sized() {
        let cfg = SynthConfig::default();
        assert_eq!(
            gen_corpus(&cfg, 4, 50).unwrap(),
            gen_corpus(&cfg, 4, 50).unwrap()
        );
        let one = gen_corpus(&cfg, 4, 1).unwrap();
        assert_eq!(one.sequences.len(), 1);
        assert_eq!(one.sequences[0].len(), cfg.seq_len);
        assert_eq!(one.sequences[0][0], CLS_TOKEN);
        assert!(gen_corpus(&cfg, 4, 0).is_err());
    }

    #[test]
    fn rows_are_distributions() {
        let cfg = SynthConfig::default();
        for lang in &family(&cfg) {
            for i in 0..lang.num_states() {
                let s: f64 = (0..lang.num_states()).map(|j| lang.transition(i, j)).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empirical_bigrams_converge_to_generator() {
        let cfg = SynthConfig::default();
        let corpus = gen_corpus(&cfg, 99, 10_000).unwrap();
        let chains = family(&cfg);
        let c = chains[0].num_states();
        // Expected bigram mass q(i, j), summed over positions and weighted
        // by each chain's share of the corpus.
        let shares = [1.0 - cfg.corpus_reversed_share, cfg.corpus_reversed_share];
        let mut joint = vec![vec![0.0; c]; c];
        for (lang, share) in chains.iter().zip(shares) {
            let mut marginal: Vec<f64> = (0..c).map(|i| share * lang.initial(i)).collect();
            for _ in 0..cfg.seq_len - 2 {
                let mut next = vec![0.0; c];
                for i in 0..c {
                    for j in 0..c {
                        let m = marginal[i] * lang.transition(i, j);
                        joint[i][j] += m;
                        next[j] += m;
                    }
                }
                marginal = next;
            }
        }
        let mut counts = vec![vec![0usize; c]; c];
        for s in &corpus.sequences {
            for w in s[1..].windows(2) {
                counts[(w[0] - FIRST_CONTENT_TOKEN) as usize]
                    [(w[1] - FIRST_CONTENT_TOKEN) as usize] += 1;
            }
        }
        let total: usize = counts.iter().flatten().sum();
        // Σ_i p̂(i) · TV(p̂(·|i), q(·|i)): the empirical transition rows
        // against the generator's, weighted by how often each row was visited.
        let mut tv = 0.0;
        for (i, row) in counts.iter().enumerate() {
            let n: usize = row.iter().sum();
            let mass: f64 = joint[i].iter().sum();
            if n == 0 {
                continue;
            }
            let row_tv: f64 = row
                .iter()
                .zip(&joint[i])
                .map(|(&k, q)| (k as f64 / n as f64 - q / mass).abs())
                .sum::<f64>()
                / 2.0;
            tv += n as f64 / total as f64 * row_tv;
        }
        assert!(tv < 0.05, "tv = {tv}");
    }

    #[test]
    fn tasks_are_balanced_disjoint_and_deterministic() {
        let cfg = SynthConfig::default();
        for kind in [TaskKind::Regime, TaskKind::Motif] {
            for seed in 0..3 {
                let t = gen_task(&cfg, kind, seed, (41, 20)).unwrap();
                assert_eq!(t, gen_task(&cfg, kind, seed, (41, 20)).unwrap());
                for split in [&t.train, &t.dev] {
                    let ones = split.iter().filter(|e| label_of(e) == 1).count();
                    assert!(ones.abs_diff(split.len() - ones) <= 1);
                }
                let train: HashSet<_> = t.train.iter().map(|e| &e.tokens).collect();
                assert!(t.dev.iter().all(|e| !train.contains(&e.tokens)));
            }
        }
    }

    #[test]
    fn motif_labels_match_content() {
        let cfg = SynthConfig::default();
        let t = gen_task(&cfg, TaskKind::Motif, 5, (60, 10)).unwrap();
        let lang = Language::base(&cfg);
        for ex in t.train.iter().chain(&t.dev) {
            assert_eq!(lang.contains_motif(&ex.tokens[1..]), label_of(ex) == 1);
        }
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!(matches!(
            "parity".parse::<TaskKind>(),
            Err(Error::UnknownTaskKind(_))
        ));
        assert_eq!("motif".parse::<TaskKind>().unwrap(), TaskKind::Motif);
    }

    #[test]
    fn likelihood_ratio_oracle_separates_regimes() {
        let cfg = SynthConfig::default();
        let seed = 0;
        let task = gen_task(&cfg, TaskKind::Regime, seed, (64, 400)).unwrap();
        let (a, b) = regime_languages(&cfg);
        let wrong = task
            .dev
            .iter()
            .filter(|ex| {
                let s = &ex.tokens[1..];
                let guess = usize::from(b.log_likelihood(s) > a.log_likelihood(s));
                guess != label_of(ex)
            })
            .count();
        let err = wrong as f64 / task.dev.len() as f64;
        assert!(err < 0.15, "oracle dev error {err}");
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::default();
        let corpus = gen_corpus(&cfg, 1, 5).unwrap();
        let p = dir.path().join("corpus.jsonl");
        corpus.save_jsonl(&p).unwrap();
        assert_eq!(SyntheticCorpus::load_jsonl(&p).unwrap(), corpus);
        let task = gen_task(&cfg, TaskKind::Motif, 2, (6, 4)).unwrap();
        let p = dir.path().join("task.jsonl");
        task.save_jsonl(&p).unwrap();
        assert_eq!(ClassificationTask::load_jsonl(&p).unwrap(), task);
        std::fs::write(&p, "{\"record\":\"sequence\",\"tokens\":[0]}\n").unwrap();
        assert!(ClassificationTask::load_jsonl(&p).is_err());
    }
}
