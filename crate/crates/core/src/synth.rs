//! Synthetic corpora with planted topic structure.
//!
//! The generator runs the model's own sampling story with known parameters
//! so training quality is measurable against ground truth. Per-topic tag
//! distributions are a convex blend between disjoint block distributions
//! (separation 1) and one shared uniform distribution (separation 0); each
//! user leans on a dominant topic with weight 0.9; owners are uniform. All
//! randomness flows from one seeded stream, so a spec fully determines its
//! corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Image, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TopicModel};

/// Redraws allowed per annotation slot before giving up on distinctness.
pub const RETRY_CAP: u32 = 1000;

/// Inclusive count range: `"4"` means exactly four, `"2..6"` two through six.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountRange {
    lo: usize,
    hi: usize,
}

impl CountRange {
    pub fn exact(n: usize) -> CountRange {
        CountRange { lo: n, hi: n }
    }

    pub fn new(lo: usize, hi: usize) -> Result<CountRange> {
        if lo > hi {
            return Err(Error::InvalidConfig(format!(
                "count range {lo}..{hi} is inverted"
            )));
        }
        Ok(CountRange { lo, hi })
    }

    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }

    /// Degenerate ranges consume no randomness, so `"4"` and `"4..4"`
    /// generate identical corpora.
    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }
}

impl fmt::Display for CountRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == self.hi {
            write!(f, "{}", self.lo)
        } else {
            write!(f, "{}..{}", self.lo, self.hi)
        }
    }
}

impl FromStr for CountRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<CountRange> {
        let parse_bound = |part: &str| -> Result<usize> {
            part.trim().parse().map_err(|_| {
                Error::InvalidConfig(format!("bad count {part:?} in range {s:?}"))
            })
        };
        match s.split_once("..") {
            Some((lo, hi)) => CountRange::new(parse_bound(lo)?, parse_bound(hi)?),
            None => Ok(CountRange::exact(parse_bound(s)?)),
        }
    }
}

/// Recipe for a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub topics: usize,
    pub users: usize,
    pub images: usize,
    pub tags_per_image: CountRange,
    /// May be zero; a zero upper bound disables groups entirely.
    pub groups_per_image: CountRange,
    pub vocab_tags: usize,
    /// Ignored when `groups_per_image` tops out at zero.
    pub vocab_groups: usize,
    /// 0 = every topic emits the same uniform distribution; 1 = topics emit
    /// from disjoint tag blocks.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            topics: 3,
            users: 10,
            images: 1000,
            tags_per_image: CountRange { lo: 3, hi: 6 },
            groups_per_image: CountRange { lo: 0, hi: 0 },
            vocab_tags: 30,
            vocab_groups: 0,
            separation: 0.9,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.topics == 0 {
            return Err(Error::InvalidConfig("topics must be at least 1".into()));
        }
        if self.users == 0 {
            return Err(Error::InvalidConfig("users must be at least 1".into()));
        }
        if self.images == 0 {
            return Err(Error::InvalidConfig("images must be at least 1".into()));
        }
        if self.tags_per_image.lo() == 0 {
            return Err(Error::InvalidConfig(
                "tags_per_image must be at least 1".into(),
            ));
        }
        if self.vocab_tags < self.topics {
            return Err(Error::InvalidConfig(format!(
                "vocab_tags ({}) must cover every topic ({}); each topic needs a nonempty tag block",
                self.vocab_tags, self.topics
            )));
        }
        if self.tags_per_image.hi() > self.vocab_tags {
            return Err(Error::InvalidConfig(format!(
                "an image cannot carry {} distinct tags from a {}-tag vocabulary",
                self.tags_per_image.hi(),
                self.vocab_tags
            )));
        }
        if !(self.separation >= 0.0 && self.separation <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "separation must lie in [0, 1], got {}",
                self.separation
            )));
        }
        if self.groups_per_image.hi() > 0 {
            if self.vocab_groups < self.topics {
                return Err(Error::InvalidConfig(format!(
                    "vocab_groups ({}) must cover every topic ({}) when groups are generated",
                    self.vocab_groups, self.topics
                )));
            }
            if self.groups_per_image.hi() > self.vocab_groups {
                return Err(Error::InvalidConfig(format!(
                    "an image cannot carry {} distinct groups from a {}-group vocabulary",
                    self.groups_per_image.hi(),
                    self.vocab_groups
                )));
            }
        }
        Ok(())
    }
}

/// The topics sampled for one generated image, slot by slot in sampling
/// order (the corpus stores annotations sorted, so order differs there).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageAssignments {
    pub image_id: String,
    pub tag_topics: Vec<usize>,
    pub group_topics: Vec<usize>,
}

impl ImageAssignments {
    /// Most frequent planted topic across all slots; ties break toward the
    /// smaller topic index. None for annotation-free images.
    pub fn majority_topic(&self) -> Option<usize> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &z in self.tag_topics.iter().chain(&self.group_topics) {
            *counts.entry(z).or_insert(0) += 1;
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .map(|(topic, _)| topic)
    }
}

/// The generating parameters and the per-image topic draws behind a
/// synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTruth {
    /// The generating distributions, packaged as a regular model. The user
    /// prior is the generating one (uniform), not the empirical ownership.
    pub model: TopicModel,
    pub assignments: Vec<ImageAssignments>,
}

fn block_bounds(rows: usize, topics: usize, topic: usize) -> Range<usize> {
    (topic * rows / topics)..((topic + 1) * rows / topics)
}

/// Per-topic emission columns blending a disjoint block distribution with a
/// shared uniform one.
fn blended_emissions(rows: usize, topics: usize, separation: f64) -> Array2<f64> {
    let mut matrix = Array2::zeros((rows, topics));
    let uniform = (1.0 - separation) / rows as f64;
    for z in 0..topics {
        let block = block_bounds(rows, topics, z);
        let in_block = separation / (block.end - block.start) as f64;
        for r in 0..rows {
            matrix[[r, z]] = uniform + if block.contains(&r) { in_block } else { 0.0 };
        }
    }
    matrix
}

/// Every user leans 0.9 on topic `user_index mod topics`, spreading the rest
/// evenly. One topic collapses to certainty.
fn dominant_mixtures(topics: usize, users: usize) -> Array2<f64> {
    let mut matrix = Array2::zeros((topics, users));
    for u in 0..users {
        if topics == 1 {
            matrix[[0, u]] = 1.0;
            continue;
        }
        let dominant = u % topics;
        let rest = 0.1 / (topics - 1) as f64;
        for z in 0..topics {
            matrix[[z, u]] = if z == dominant { 0.9 } else { rest };
        }
    }
    matrix
}

/// Inverse-CDF draw over the weights; the final index absorbs any rounding
/// remainder.
fn sample_categorical(rng: &mut ChaCha8Rng, weights: ArrayView1<'_, f64>) -> usize {
    let draw: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (index, &weight) in weights.iter().enumerate() {
        cumulative += weight;
        if draw < cumulative {
            return index;
        }
    }
    weights.len() - 1
}

/// Draw a (topic, item) pair not yet on the image, redrawing both
/// coordinates so accepted samples keep the planted conditional structure.
fn sample_distinct(
    rng: &mut ChaCha8Rng,
    mixture: ArrayView1<'_, f64>,
    emissions: &Array2<f64>,
    taken: &BTreeSet<usize>,
) -> Result<(usize, usize)> {
    for _ in 0..RETRY_CAP {
        let z = sample_categorical(rng, mixture);
        let item = sample_categorical(rng, emissions.column(z));
        if !taken.contains(&item) {
            return Ok((z, item));
        }
    }
    Err(Error::RetryCapExceeded { cap: RETRY_CAP })
}

/// Generate a corpus by sampling the planted model image by image: a
/// uniform owner, then per slot a topic from the owner's mixture and an
/// annotation from that topic's emissions, deduplicated within the image.
pub fn generate(spec: &SynthSpec) -> Result<(Corpus, PlantedTruth)> {
    spec.validate()?;
    let k = spec.topics;
    let q = spec.vocab_tags;
    let n = spec.users;
    let with_groups = spec.groups_per_image.hi() > 0;
    let p = if with_groups { spec.vocab_groups } else { 0 };

    let tag_names: Vec<String> = (0..q).map(|i| format!("tag{i:04}")).collect();
    let group_names: Vec<String> = (0..p).map(|i| format!("group{i:03}")).collect();
    let user_names: Vec<String> = (0..n).map(|i| format!("user{i:03}")).collect();

    let tag_emissions = blended_emissions(q, k, spec.separation);
    let group_emissions = with_groups.then(|| blended_emissions(p, k, spec.separation));
    let user_mixtures = dominant_mixtures(k, n);
    let user_prior = Array1::from_elem(n, 1.0 / n as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut images = Vec::with_capacity(spec.images);
    let mut assignments = Vec::with_capacity(spec.images);
    for i in 0..spec.images {
        let image_id = format!("img{i:06}");
        let owner = rng.gen_range(0..n);
        let mixture = user_mixtures.column(owner);

        let tag_count = spec.tags_per_image.sample(&mut rng);
        let mut taken = BTreeSet::new();
        let mut tags = Vec::with_capacity(tag_count);
        let mut tag_topics = Vec::with_capacity(tag_count);
        for _ in 0..tag_count {
            let (z, t) = sample_distinct(&mut rng, mixture, &tag_emissions, &taken)?;
            taken.insert(t);
            tag_topics.push(z);
            tags.push(tag_names[t].clone());
        }

        let group_count = spec.groups_per_image.sample(&mut rng);
        let mut taken = BTreeSet::new();
        let mut groups = Vec::with_capacity(group_count);
        let mut group_topics = Vec::with_capacity(group_count);
        for _ in 0..group_count {
            let emissions = group_emissions.as_ref().expect("groups enabled");
            let (z, g) = sample_distinct(&mut rng, mixture, emissions, &taken)?;
            taken.insert(g);
            group_topics.push(z);
            groups.push(group_names[g].clone());
        }

        images.push(Image::new(&image_id, &user_names[owner], &tags, &groups)?);
        assignments.push(ImageAssignments {
            image_id,
            tag_topics,
            group_topics,
        });
    }

    let mut vocab = Vocabulary::default();
    for name in &tag_names {
        vocab.tags.insert(name);
    }
    for name in &group_names {
        vocab.groups.insert(name);
    }
    for name in &user_names {
        vocab.users.insert(name);
    }
    let config = ModelConfig {
        topics: k,
        use_groups: with_groups,
        seed: spec.seed,
        ..ModelConfig::default()
    };
    let model = TopicModel::from_parts(
        config,
        vocab,
        tag_emissions,
        group_emissions,
        user_mixtures,
        user_prior,
    )?;

    let corpus = Corpus::from_images(images)?;
    Ok((corpus, PlantedTruth { model, assignments }))
}

/// An alignment between planted and learned topics.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicMatch {
    /// `permutation[planted_topic]` is the matched learned topic.
    pub permutation: Vec<usize>,
    /// Total-variation distance of each planted topic to its match.
    pub distances: Vec<f64>,
}

impl TopicMatch {
    pub fn total(&self) -> f64 {
        self.distances.iter().sum()
    }
}

/// Total-variation distance between two tag emission columns, aligned by tag
/// name so differing vocabulary orders or coverage cannot misalign them.
/// Tags absent from one side carry probability zero there.
fn tv_by_name(planted: &TopicModel, pz: usize, learned: &TopicModel, lz: usize) -> f64 {
    let pe = planted.tag_emissions();
    let le = learned.tag_emissions();
    let pv = planted.vocab();
    let lv = learned.vocab();
    let mut diff = 0.0;
    for (t, name) in pv.tags.iter().enumerate() {
        let other = lv.tags.index_of(name).map_or(0.0, |lt| le[[lt, lz]]);
        diff += (pe[[t, pz]] - other).abs();
    }
    for (lt, name) in lv.tags.iter().enumerate() {
        if pv.tags.index_of(name).is_none() {
            diff += le[[lt, lz]];
        }
    }
    diff / 2.0
}

/// Exhaustive minimum-cost assignment via Heap's permutation enumeration.
fn best_permutation_exhaustive(cost: &[Vec<f64>]) -> Vec<usize> {
    let k = cost.len();
    let total = |perm: &[usize]| -> f64 { perm.iter().enumerate().map(|(a, &b)| cost[a][b]).sum() };
    let mut indices: Vec<usize> = (0..k).collect();
    let mut best = indices.clone();
    let mut best_cost = total(&indices);
    let mut counters = vec![0usize; k];
    let mut i = 0;
    while i < k {
        if counters[i] < i {
            if i % 2 == 0 {
                indices.swap(0, i);
            } else {
                indices.swap(counters[i], i);
            }
            let candidate = total(&indices);
            if candidate < best_cost {
                best_cost = candidate;
                best = indices.clone();
            }
            counters[i] += 1;
            i = 0;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
    best
}

/// Greedy assignment: repeatedly take the globally cheapest unused pair.
fn best_permutation_greedy(cost: &[Vec<f64>]) -> Vec<usize> {
    let k = cost.len();
    let mut permutation = vec![0usize; k];
    let mut planted_used = vec![false; k];
    let mut learned_used = vec![false; k];
    for _ in 0..k {
        let mut best = (f64::INFINITY, 0usize, 0usize);
        for a in 0..k {
            if planted_used[a] {
                continue;
            }
            for b in 0..k {
                if learned_used[b] {
                    continue;
                }
                if cost[a][b] < best.0 {
                    best = (cost[a][b], a, b);
                }
            }
        }
        permutation[best.1] = best.2;
        planted_used[best.1] = true;
        learned_used[best.2] = true;
    }
    permutation
}

/// Align learned topics with planted ones by minimizing the summed
/// total-variation distance between matched tag emission columns:
/// exhaustively for up to eight topics, greedily beyond that.
pub fn match_topics(planted: &TopicModel, learned: &TopicModel) -> Result<TopicMatch> {
    let k = planted.topic_count();
    if learned.topic_count() != k {
        return Err(Error::TopicCountMismatch {
            expected: k,
            found: learned.topic_count(),
        });
    }
    let mut cost = vec![vec![0.0f64; k]; k];
    for (a, row) in cost.iter_mut().enumerate() {
        for (b, cell) in row.iter_mut().enumerate() {
            *cell = tv_by_name(planted, a, learned, b);
        }
    }
    let permutation = if k <= 8 {
        best_permutation_exhaustive(&cost)
    } else {
        best_permutation_greedy(&cost)
    };
    let distances = (0..k).map(|z| cost[z][permutation[z]]).collect();
    Ok(TopicMatch {
        permutation,
        distances,
    })
}
