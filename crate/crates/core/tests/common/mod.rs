//! Brute-force reference implementations shared by the integration suites.
//!
//! Everything here recomputes model quantities from first principles with
//! plain nested vectors: no ndarray, no code shared with the library's
//! training path. Agreement between the two is evidence of correctness
//! rather than an identity.

#![allow(dead_code)]

use std::collections::BTreeSet;

use tagrank::corpus::{Corpus, Vocabulary};
use tagrank::model::TopicModel;

/// Model parameters as plain nested vectors.
///
/// Layouts: `tag_emissions[tag][topic]`, `group_emissions[group][topic]`
/// (empty when the model has none), `user_mixtures[topic][user]`,
/// `user_prior[user]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveParams {
    pub tag_emissions: Vec<Vec<f64>>,
    pub group_emissions: Vec<Vec<f64>>,
    pub user_mixtures: Vec<Vec<f64>>,
    pub user_prior: Vec<f64>,
}

impl NaiveParams {
    pub fn from_model(model: &TopicModel) -> NaiveParams {
        let k = model.topic_count();
        let te = model.tag_emissions();
        let tag_emissions = (0..te.nrows())
            .map(|t| (0..k).map(|z| te[[t, z]]).collect())
            .collect();
        let group_emissions = match model.group_emissions() {
            Some(ge) => (0..ge.nrows())
                .map(|g| (0..k).map(|z| ge[[g, z]]).collect())
                .collect(),
            None => Vec::new(),
        };
        let um = model.user_mixtures();
        let user_mixtures = (0..k)
            .map(|z| (0..um.ncols()).map(|u| um[[z, u]]).collect())
            .collect();
        let user_prior = model.user_prior().iter().copied().collect();
        NaiveParams {
            tag_emissions,
            group_emissions,
            user_mixtures,
            user_prior,
        }
    }

    fn topics(&self) -> usize {
        self.user_mixtures.len()
    }
}

/// One corpus image re-expressed in vocabulary indices.
#[derive(Debug, Clone)]
pub struct NaiveImage {
    pub owner: usize,
    pub tags: Vec<usize>,
    pub groups: Vec<usize>,
}

/// Index a corpus the way the reference implementation consumes it. When
/// `with_groups` is false, group annotations vanish from view.
pub fn naive_images(corpus: &Corpus, vocab: &Vocabulary, with_groups: bool) -> Vec<NaiveImage> {
    corpus
        .images()
        .iter()
        .map(|image| NaiveImage {
            owner: vocab.users.index_of(image.owner()).expect("owner indexed"),
            tags: image
                .tags()
                .map(|t| vocab.tags.index_of(t).expect("tag indexed"))
                .collect(),
            groups: if with_groups {
                image
                    .groups()
                    .map(|g| vocab.groups.index_of(g).expect("group indexed"))
                    .collect()
            } else {
                Vec::new()
            },
        })
        .collect()
}

/// Normalize each column of a `[row][col]` matrix into a distribution over
/// rows; an all-zero column becomes uniform. No flooring: oracle corpora
/// keep every probability far above any floor, so the production flooring
/// path must be a no-op there.
fn normalize_columns(matrix: &mut [Vec<f64>], columns: usize) {
    let rows = matrix.len();
    for c in 0..columns {
        let total: f64 = matrix.iter().map(|row| row[c]).sum();
        if total > 0.0 {
            for row in matrix.iter_mut() {
                row[c] /= total;
            }
        } else {
            for row in matrix.iter_mut() {
                row[c] = 1.0 / rows as f64;
            }
        }
    }
}

/// One full EM round, written as plain nested loops for use as an oracle: per
/// annotation, the topic posterior is the user's mixture times the emission,
/// normalized (uniform on zero mass); the new emissions and mixtures are the
/// column-normalized posterior sums. The user prior never moves.
pub fn naive_em_round(params: &NaiveParams, images: &[NaiveImage]) -> NaiveParams {
    let k = params.topics();
    let q = params.tag_emissions.len();
    let p = params.group_emissions.len();
    let n = params.user_prior.len();

    let posterior = |owner: usize, emission_row: &[f64]| -> Vec<f64> {
        let mut dist: Vec<f64> = (0..k)
            .map(|z| params.user_mixtures[z][owner] * emission_row[z])
            .collect();
        let total: f64 = dist.iter().sum();
        if total > 0.0 {
            for value in &mut dist {
                *value /= total;
            }
        } else {
            dist = vec![1.0 / k as f64; k];
        }
        dist
    };

    let mut tag_acc = vec![vec![0.0; k]; q];
    let mut group_acc = vec![vec![0.0; k]; p];
    let mut user_acc = vec![vec![0.0; n]; k];
    for image in images {
        for &t in &image.tags {
            let post = posterior(image.owner, &params.tag_emissions[t]);
            for z in 0..k {
                tag_acc[t][z] += post[z];
                user_acc[z][image.owner] += post[z];
            }
        }
        for &g in &image.groups {
            let post = posterior(image.owner, &params.group_emissions[g]);
            for z in 0..k {
                group_acc[g][z] += post[z];
                user_acc[z][image.owner] += post[z];
            }
        }
    }

    normalize_columns(&mut tag_acc, k);
    normalize_columns(&mut group_acc, k);
    normalize_columns(&mut user_acc, n);

    NaiveParams {
        tag_emissions: tag_acc,
        group_emissions: group_acc,
        user_mixtures: user_acc,
        user_prior: params.user_prior.clone(),
    }
}

/// Direct evaluation of the data log-likelihood.
pub fn naive_log_likelihood(params: &NaiveParams, images: &[NaiveImage], floor: f64) -> f64 {
    let k = params.topics();
    let mut ll = 0.0;
    for image in images {
        ll += params.user_prior[image.owner].max(floor).ln();
        for &t in &image.tags {
            let mix: f64 = (0..k)
                .map(|z| params.user_mixtures[z][image.owner] * params.tag_emissions[t][z])
                .sum();
            ll += mix.max(floor).ln();
        }
        for &g in &image.groups {
            let mix: f64 = (0..k)
                .map(|z| params.user_mixtures[z][image.owner] * params.group_emissions[g][z])
                .sum();
            ll += mix.max(floor).ln();
        }
    }
    ll
}

/// Largest absolute elementwise difference across all parameter blocks.
/// Panics on shape mismatch: a shape bug must not read as a small distance.
pub fn max_param_diff(a: &NaiveParams, b: &NaiveParams) -> f64 {
    fn block(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        assert_eq!(a.len(), b.len(), "row count differs");
        let mut worst = 0.0f64;
        for (ra, rb) in a.iter().zip(b) {
            assert_eq!(ra.len(), rb.len(), "column count differs");
            for (x, y) in ra.iter().zip(rb) {
                worst = worst.max((x - y).abs());
            }
        }
        worst
    }
    assert_eq!(a.user_prior.len(), b.user_prior.len(), "prior length differs");
    let prior = a
        .user_prior
        .iter()
        .zip(&b.user_prior)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    block(&a.tag_emissions, &b.tag_emissions)
        .max(block(&a.group_emissions, &b.group_emissions))
        .max(block(&a.user_mixtures, &b.user_mixtures))
        .max(prior)
}

/// Brute-force contact expansion straight from an edge list: level 1 is the
/// out-neighbors, level 2 adds the out-neighbors of those, and the source
/// user never appears. Self-loop edges are ignored, mirroring the graph
/// type's storage rule.
pub fn brute_contact_expansion(edges: &[(String, String)], user: &str, level: u8) -> BTreeSet<String> {
    let direct: BTreeSet<&str> = edges
        .iter()
        .filter(|(a, b)| a == user && a != b)
        .map(|(_, b)| b.as_str())
        .collect();
    let mut members: BTreeSet<String> = direct.iter().map(|s| s.to_string()).collect();
    if level == 2 {
        for d in &direct {
            for (a, b) in edges {
                if a == d && a != b {
                    members.insert(b.clone());
                }
            }
        }
    }
    members.remove(user);
    members
}
