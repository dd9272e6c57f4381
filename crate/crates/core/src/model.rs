//! Latent-topic model over (owner, tags, groups) annotations, trained by EM.
//!
//! Generative story: an image's owner u is drawn from p(u); the owner mixes
//! topics through p(z|u); each topic emits tags through p(t|z) and,
//! optionally, group memberships through p(g|z). Annotations are 0/1
//! indicators, so an image contributes each of its tags and groups exactly
//! once. Training alternates two closed-form steps:
//!
//! - E-step: posterior responsibility of each topic for an observed pair,
//!   p(z|t,u) proportional to p(z|u) p(t|z), and likewise p(z|g,u).
//! - M-step: p(t|z) proportional to the posterior mass of images tagged t;
//!   p(g|z) likewise over group memberships; p(z|u) proportional to the
//!   summed tag and group posteriors of the user's own images.
//!
//! p(u) stays fixed at the empirical ownership fraction. The data
//! log-likelihood never decreases across iterations (the standard EM bound);
//! probabilities are floored at `prob_floor` inside logs and after updates so
//! empty topics cannot produce infinities.

use std::collections::{BTreeSet, HashMap};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_vocabulary, Corpus, Vocabulary};
use crate::error::{Error, Result};

/// Tolerance for every column-sums-to-one invariant.
pub const COLUMN_SUM_TOL: f64 = 1e-9;

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Number of latent topics.
    pub topics: usize,
    /// Whether group annotations participate in training.
    pub use_groups: bool,
    pub max_iters: usize,
    /// Stop when |ΔLL / LL| drops below this.
    pub rel_tol: f64,
    pub seed: u64,
    /// Floor applied to probabilities inside logs and after updates.
    pub prob_floor: f64,
    /// Worker threads for the E-step. Any value produces bitwise-identical
    /// results; this only controls resources.
    pub threads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            topics: 10,
            use_groups: true,
            max_iters: 500,
            rel_tol: 1e-6,
            seed: 0,
            prob_floor: 1e-12,
            threads: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topics == 0 {
            return Err(Error::InvalidConfig("topics must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "rel_tol must be a positive real, got {}",
                self.rel_tol
            )));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor < 1e-3) {
            return Err(Error::InvalidConfig(format!(
                "prob_floor must lie in (0, 1e-3), got {}",
                self.prob_floor
            )));
        }
        if self.threads == 0 {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// Trained (or planted) model parameters plus the vocabulary that gives its
/// rows and columns meaning.
///
/// Shapes: tag emissions are tags x topics, group emissions (when present)
/// groups x topics, user mixtures topics x users, and the user prior has one
/// entry per user. Every column is a probability distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    config: ModelConfig,
    vocab: Vocabulary,
    tag_emissions: Array2<f64>,
    group_emissions: Option<Array2<f64>>,
    user_mixtures: Array2<f64>,
    user_prior: Array1<f64>,
}

impl TopicModel {
    /// Assemble a model from raw parts, verifying every shape and
    /// distribution invariant. This is the only way to build a model outside
    /// of training, so an existing `TopicModel` is always structurally valid.
    pub fn from_parts(
        config: ModelConfig,
        vocab: Vocabulary,
        tag_emissions: Array2<f64>,
        group_emissions: Option<Array2<f64>>,
        user_mixtures: Array2<f64>,
        user_prior: Array1<f64>,
    ) -> Result<TopicModel> {
        config.validate()?;
        let model = TopicModel {
            config,
            vocab,
            tag_emissions,
            group_emissions,
            user_mixtures,
            user_prior,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn topic_count(&self) -> usize {
        self.config.topics
    }

    /// p(t|z) as tags x topics; column z is a distribution over tags.
    pub fn tag_emissions(&self) -> ArrayView2<'_, f64> {
        self.tag_emissions.view()
    }

    /// p(g|z) as groups x topics, absent when the model ignores groups or the
    /// corpus had none.
    pub fn group_emissions(&self) -> Option<ArrayView2<'_, f64>> {
        self.group_emissions.as_ref().map(Array2::view)
    }

    /// p(z|u) as topics x users; column u is the user's topic mixture.
    pub fn user_mixtures(&self) -> ArrayView2<'_, f64> {
        self.user_mixtures.view()
    }

    /// p(u): empirical fraction of corpus images owned by each user.
    pub fn user_prior(&self) -> ArrayView1<'_, f64> {
        self.user_prior.view()
    }

    /// Corpus-wide topic distribution p(z), the user prior pushed through the
    /// user mixtures.
    pub fn topic_prior(&self) -> Array1<f64> {
        self.user_mixtures.dot(&self.user_prior)
    }

    /// Check every structural invariant; `from_parts` and deserialization
    /// call this, so it only fails on hand-assembled or corrupted inputs.
    pub fn validate(&self) -> Result<()> {
        let k = self.config.topics;
        let q = self.vocab.tags.len();
        let n = self.vocab.users.len();
        if q == 0 || n == 0 {
            return Err(Error::Invariant(
                "model needs at least one tag and one user".into(),
            ));
        }
        if self.tag_emissions.dim() != (q, k) {
            return Err(Error::Invariant(format!(
                "tag emissions have shape {:?}, expected ({q}, {k})",
                self.tag_emissions.dim()
            )));
        }
        if let Some(groups) = &self.group_emissions {
            let p = self.vocab.groups.len();
            if p == 0 {
                return Err(Error::Invariant(
                    "group emissions present but the group vocabulary is empty".into(),
                ));
            }
            if groups.dim() != (p, k) {
                return Err(Error::Invariant(format!(
                    "group emissions have shape {:?}, expected ({p}, {k})",
                    groups.dim()
                )));
            }
        }
        if self.user_mixtures.dim() != (k, n) {
            return Err(Error::Invariant(format!(
                "user mixtures have shape {:?}, expected ({k}, {n})",
                self.user_mixtures.dim()
            )));
        }
        if self.user_prior.len() != n {
            return Err(Error::Invariant(format!(
                "user prior has length {}, expected {n}",
                self.user_prior.len()
            )));
        }

        let check_columns = |matrix: ArrayView2<'_, f64>, what: &str| -> Result<()> {
            for (col, column) in matrix.columns().into_iter().enumerate() {
                let mut total = 0.0;
                for &value in column {
                    if !(value >= 0.0 && value.is_finite()) {
                        return Err(Error::Invariant(format!(
                            "{what} column {col} holds invalid entry {value}"
                        )));
                    }
                    total += value;
                }
                if (total - 1.0).abs() > COLUMN_SUM_TOL {
                    return Err(Error::Invariant(format!(
                        "{what} column {col} sums to {total}, expected 1"
                    )));
                }
            }
            Ok(())
        };
        check_columns(self.tag_emissions.view(), "tag emissions")?;
        if let Some(groups) = &self.group_emissions {
            check_columns(groups.view(), "group emissions")?;
        }
        check_columns(self.user_mixtures.view(), "user mixtures")?;

        let mut total = 0.0;
        for &value in &self.user_prior {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::Invariant(format!("user prior holds invalid entry {value}")));
            }
            total += value;
        }
        if (total - 1.0).abs() > COLUMN_SUM_TOL {
            return Err(Error::Invariant(format!(
                "user prior sums to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Topic responsibilities for every (owner, tag) and (owner, group) pair in
/// a corpus. The posterior depends on the image only through its owner, so
/// storage is deduplicated per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EmPosteriors {
    topics: usize,
    tags: HashMap<(usize, usize), Vec<f64>>,
    groups: HashMap<(usize, usize), Vec<f64>>,
}

impl EmPosteriors {
    /// p(z|t,u) for a (user index, tag index) pair seen in the corpus.
    pub fn tag_posterior(&self, user: usize, tag: usize) -> Option<&[f64]> {
        self.tags.get(&(user, tag)).map(Vec::as_slice)
    }

    /// p(z|g,u) for a (user index, group index) pair seen in the corpus.
    pub fn group_posterior(&self, user: usize, group: usize) -> Option<&[f64]> {
        self.groups.get(&(user, group)).map(Vec::as_slice)
    }

    pub fn topic_count(&self) -> usize {
        self.topics
    }

    pub fn tag_pair_count(&self) -> usize {
        self.tags.len()
    }

    pub fn group_pair_count(&self) -> usize {
        self.groups.len()
    }

    /// Every stored distribution, for invariant checks.
    pub fn distributions(&self) -> impl Iterator<Item = &[f64]> {
        self.tags.values().chain(self.groups.values()).map(Vec::as_slice)
    }
}

/// Per-iteration training record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainStats {
    pub iterations: usize,
    /// Data log-likelihood after each iteration's update.
    pub log_likelihood: Vec<f64>,
    /// Whether the relative-change test fired before `max_iters`.
    pub converged: bool,
    pub seed: u64,
}

/// Corpus re-expressed in dense vocabulary indices for the training loops.
struct IndexedCorpus {
    images: Vec<IndexedImage>,
}

struct IndexedImage {
    owner: usize,
    tags: Vec<usize>,
    groups: Vec<usize>,
}

impl IndexedCorpus {
    /// Annotations missing from the vocabulary are skipped: the model cannot
    /// represent them, and both EM steps must see the same view.
    fn build(corpus: &Corpus, vocab: &Vocabulary, with_groups: bool) -> IndexedCorpus {
        let images = corpus
            .images()
            .iter()
            .filter_map(|image| {
                let owner = vocab.users.index_of(image.owner())?;
                let tags = image
                    .tags()
                    .filter_map(|t| vocab.tags.index_of(t))
                    .collect();
                let groups = if with_groups {
                    image
                        .groups()
                        .filter_map(|g| vocab.groups.index_of(g))
                        .collect()
                } else {
                    Vec::new()
                };
                Some(IndexedImage { owner, tags, groups })
            })
            .collect();
        IndexedCorpus { images }
    }
}

/// Normalize a column into a distribution. All-zero columns become uniform;
/// entries below `floor` are raised to it and the column renormalized.
pub(crate) fn normalize_column(mut column: ArrayViewMut1<'_, f64>, floor: f64) {
    let len = column.len();
    let total: f64 = column.sum();
    if !(total > 0.0) {
        column.fill(1.0 / len as f64);
        return;
    }
    column.mapv_inplace(|v| v / total);
    let mut floored = false;
    for value in column.iter_mut() {
        if *value < floor {
            *value = floor;
            floored = true;
        }
    }
    if floored {
        let total: f64 = column.sum();
        column.mapv_inplace(|v| v / total);
    }
}

/// Seeded random initialization. Emission and mixture columns get positive
/// uniform draws then column normalization; the user prior is the empirical
/// ownership fraction. With one topic every column is exactly [1.0].
pub fn init_params(corpus: &Corpus, vocab: &Vocabulary, config: &ModelConfig) -> Result<TopicModel> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidConfig("corpus has no images".into()));
    }
    if vocab.tags.is_empty() {
        return Err(Error::InvalidConfig("corpus has no tags".into()));
    }
    if vocab.users.is_empty() {
        return Err(Error::InvalidConfig("corpus has no users".into()));
    }

    let k = config.topics;
    let q = vocab.tags.len();
    let p = vocab.groups.len();
    let n = vocab.users.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Draw order is fixed: tag emissions, group emissions, user mixtures.
    // A group-free corpus draws zero group values, so toggling use_groups
    // cannot shift the stream there.
    let mut tag_emissions = Array2::zeros((q, k));
    for z in 0..k {
        let mut column = tag_emissions.column_mut(z);
        for value in column.iter_mut() {
            *value = rng.gen_range(0.01..1.0);
        }
        normalize_column(column, config.prob_floor);
    }

    let group_emissions = (config.use_groups && p > 0).then(|| {
        let mut emissions = Array2::zeros((p, k));
        for z in 0..k {
            let mut column = emissions.column_mut(z);
            for value in column.iter_mut() {
                *value = rng.gen_range(0.01..1.0);
            }
            normalize_column(column, config.prob_floor);
        }
        emissions
    });

    let mut user_mixtures = Array2::zeros((k, n));
    for u in 0..n {
        let mut column = user_mixtures.column_mut(u);
        for value in column.iter_mut() {
            *value = rng.gen_range(0.01..1.0);
        }
        normalize_column(column, config.prob_floor);
    }

    let mut counts = Array1::zeros(n);
    for image in corpus.images() {
        if let Some(u) = vocab.users.index_of(image.owner()) {
            counts[u] += 1.0;
        }
    }
    let total = corpus.len() as f64;
    let user_prior = counts / total;

    TopicModel::from_parts(
        config.clone(),
        vocab.clone(),
        tag_emissions,
        group_emissions,
        user_mixtures,
        user_prior,
    )
}

fn pair_posterior(mixture: ArrayView1<'_, f64>, emissions: ArrayView1<'_, f64>) -> Vec<f64> {
    let k = mixture.len();
    let mut dist: Vec<f64> = (0..k).map(|z| mixture[z] * emissions[z]).collect();
    let total: f64 = dist.iter().sum();
    if total > 0.0 {
        for value in &mut dist {
            *value /= total;
        }
    } else {
        // No topic gives the pair any mass; spread responsibility evenly.
        dist.fill(1.0 / k as f64);
    }
    dist
}

fn compute_posteriors(model: &TopicModel, indexed: &IndexedCorpus) -> EmPosteriors {
    let mut tag_pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut group_pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for image in &indexed.images {
        for &t in &image.tags {
            tag_pairs.insert((image.owner, t));
        }
        for &g in &image.groups {
            group_pairs.insert((image.owner, g));
        }
    }
    let tag_pairs: Vec<(usize, usize)> = tag_pairs.into_iter().collect();
    let group_pairs: Vec<(usize, usize)> = group_pairs.into_iter().collect();

    let tag_job = |&(u, t): &(usize, usize)| {
        pair_posterior(model.user_mixtures.column(u), model.tag_emissions.row(t))
    };
    let group_job = |&(u, g): &(usize, usize)| {
        let emissions = model
            .group_emissions
            .as_ref()
            .expect("group pairs exist only when group emissions do");
        pair_posterior(model.user_mixtures.column(u), emissions.row(g))
    };

    // Each pair's posterior is independent, so the parallel path writes
    // results at fixed indices and is bitwise-identical to the serial one.
    let (tag_dists, group_dists): (Vec<Vec<f64>>, Vec<Vec<f64>>) = if model.config.threads > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(model.config.threads)
            .build()
            .expect("thread pool construction");
        pool.install(|| {
            (
                tag_pairs.par_iter().map(tag_job).collect(),
                group_pairs.par_iter().map(group_job).collect(),
            )
        })
    } else {
        (
            tag_pairs.iter().map(tag_job).collect(),
            group_pairs.iter().map(group_job).collect(),
        )
    };

    EmPosteriors {
        topics: model.config.topics,
        tags: tag_pairs.into_iter().zip(tag_dists).collect(),
        groups: group_pairs.into_iter().zip(group_dists).collect(),
    }
}

/// E-step: compute topic responsibilities for every (owner, tag) and
/// (owner, group) pair in the corpus under the current parameters.
pub fn e_step(model: &TopicModel, corpus: &Corpus) -> EmPosteriors {
    let indexed = IndexedCorpus::build(corpus, &model.vocab, model.group_emissions.is_some());
    compute_posteriors(model, &indexed)
}

fn apply_m_step(model: &TopicModel, indexed: &IndexedCorpus, posteriors: &EmPosteriors) -> TopicModel {
    let k = model.config.topics;
    let q = model.vocab.tags.len();
    let n = model.vocab.users.len();
    let floor = model.config.prob_floor;

    let mut tag_acc = Array2::<f64>::zeros((q, k));
    let mut group_acc = model
        .group_emissions
        .as_ref()
        .map(|g| Array2::<f64>::zeros((g.nrows(), k)));
    let mut user_acc = Array2::<f64>::zeros((k, n));

    for image in &indexed.images {
        let u = image.owner;
        for &t in &image.tags {
            if let Some(post) = posteriors.tag_posterior(u, t) {
                for (z, &value) in post.iter().enumerate() {
                    tag_acc[[t, z]] += value;
                    user_acc[[z, u]] += value;
                }
            }
        }
        for &g in &image.groups {
            if let Some(post) = posteriors.group_posterior(u, g) {
                let acc = group_acc.as_mut().expect("group accumulator");
                for (z, &value) in post.iter().enumerate() {
                    acc[[g, z]] += value;
                    user_acc[[z, u]] += value;
                }
            }
        }
    }

    for z in 0..k {
        normalize_column(tag_acc.column_mut(z), floor);
    }
    if let Some(acc) = &mut group_acc {
        for z in 0..k {
            normalize_column(acc.column_mut(z), floor);
        }
    }
    for u in 0..n {
        normalize_column(user_acc.column_mut(u), floor);
    }

    TopicModel {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        tag_emissions: tag_acc,
        group_emissions: group_acc,
        user_mixtures: user_acc,
        user_prior: model.user_prior.clone(),
    }
}

/// M-step: re-estimate emissions and user mixtures from the posteriors. The
/// user prior is empirical and stays fixed.
pub fn m_step(model: &TopicModel, corpus: &Corpus, posteriors: &EmPosteriors) -> TopicModel {
    let indexed = IndexedCorpus::build(corpus, &model.vocab, model.group_emissions.is_some());
    apply_m_step(model, &indexed, posteriors)
}

fn ll_indexed(model: &TopicModel, indexed: &IndexedCorpus) -> f64 {
    let floor = model.config.prob_floor;
    let mut ll = 0.0;
    for image in &indexed.images {
        let mixture = model.user_mixtures.column(image.owner);
        ll += model.user_prior[image.owner].max(floor).ln();
        for &t in &image.tags {
            let mix: f64 = mixture.dot(&model.tag_emissions.row(t));
            ll += mix.max(floor).ln();
        }
        for &g in &image.groups {
            let emissions = model.group_emissions.as_ref().expect("group emissions");
            let mix: f64 = mixture.dot(&emissions.row(g));
            ll += mix.max(floor).ln();
        }
    }
    ll
}

/// Data log-likelihood of the corpus under the model: per image, the log
/// owner prior plus, per annotation, the log of its topic-mixed probability.
pub fn log_likelihood(model: &TopicModel, corpus: &Corpus) -> f64 {
    let indexed = IndexedCorpus::build(corpus, &model.vocab, model.group_emissions.is_some());
    ll_indexed(model, &indexed)
}

/// Train a model on a corpus: build the vocabulary, initialize from the
/// seed, then alternate E and M steps until the relative log-likelihood
/// change drops below `rel_tol` or `max_iters` is reached.
pub fn train(corpus: &Corpus, config: &ModelConfig) -> Result<(TopicModel, TrainStats)> {
    config.validate()?;
    let vocab = build_vocabulary(corpus);
    let mut model = init_params(corpus, &vocab, config)?;
    let indexed = IndexedCorpus::build(corpus, &vocab, model.group_emissions.is_some());

    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    while trace.len() < config.max_iters {
        let posteriors = compute_posteriors(&model, &indexed);
        model = apply_m_step(&model, &indexed, &posteriors);
        let ll = ll_indexed(&model, &indexed);
        let previous = trace.last().copied();
        trace.push(ll);
        if let Some(prev) = previous {
            let rel = (ll - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
            if rel < config.rel_tol {
                converged = true;
                break;
            }
        }
    }

    let stats = TrainStats {
        iterations: trace.len(),
        log_likelihood: trace,
        converged,
        seed: config.seed,
    };
    Ok((model, stats))
}

/// One row of the topic summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct TopTag {
    pub topic: usize,
    pub tag: String,
    pub probability: f64,
}

/// The `n` most probable tags of every topic, ordered by topic then
/// descending probability; equal probabilities break toward the lower
/// vocabulary index.
pub fn top_tags_per_topic(model: &TopicModel, n: usize) -> Vec<TopTag> {
    let emissions = model.tag_emissions();
    let q = emissions.nrows();
    let mut rows = Vec::new();
    for z in 0..model.topic_count() {
        let mut order: Vec<usize> = (0..q).collect();
        order.sort_by(|&a, &b| {
            emissions[[b, z]]
                .total_cmp(&emissions[[a, z]])
                .then_with(|| a.cmp(&b))
        });
        for &t in order.iter().take(n) {
            rows.push(TopTag {
                topic: z,
                tag: model.vocab.tags.value(t).to_string(),
                probability: emissions[[t, z]],
            });
        }
    }
    rows
}
