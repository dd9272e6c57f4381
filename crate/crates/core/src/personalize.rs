//! Personalized ranking: turn a user's tag history into a topic profile,
//! score candidates by how much probability mass the model assigns them for
//! that profile, and rank a candidate set.
//!
//! The profile inverts the learned tag emissions through Bayes' rule: with
//! the corpus-wide topic distribution p(z) as prior, each history tag t
//! contributes p(z|t) proportional to p(t|z) p(z), weighted by its count. An
//! image's score then sums, over topics, the probability that this owner
//! produced exactly this annotation set times the profile's interest in the
//! topic. Per-topic products run in log space and the topic sum is
//! max-shifted, so images with many annotations do not underflow term by
//! term.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use crate::corpus::{Image, TagHistogram};
use crate::error::{Error, Result};
use crate::model::TopicModel;

/// Which tag history fed the profile: the user's full histogram or only the
/// tags co-occurring with a query tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileMode {
    AllTags,
    RelatedTags,
}

impl ProfileMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProfileMode::AllTags => "all",
            ProfileMode::RelatedTags => "related",
        }
    }
}

impl fmt::Display for ProfileMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProfileMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(ProfileMode::AllTags),
            "related" => Ok(ProfileMode::RelatedTags),
            other => Err(Error::InvalidConfig(format!(
                "profile mode must be \"all\" or \"related\", got {other:?}"
            ))),
        }
    }
}

/// A user's interest distribution over the model's topics.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTopicVector {
    /// Distribution over topics: entries are nonnegative and sum to one.
    pub weights: Vec<f64>,
    /// Histogram tags the model vocabulary does not contain, in histogram
    /// order. They contribute nothing to the weights.
    pub dropped_tags: Vec<String>,
}

/// Infer a topic profile from a tag histogram. `user` labels the error when
/// no histogram tag is known to the model (a cold user).
pub fn user_topic_vector(
    model: &TopicModel,
    histogram: &TagHistogram,
    user: &str,
) -> Result<UserTopicVector> {
    let k = model.topic_count();
    let topic_prior = model.topic_prior();
    let emissions = model.tag_emissions();

    let mut weights = vec![0.0; k];
    let mut dropped_tags = Vec::new();
    let mut matched = false;
    for (tag, count) in histogram.iter() {
        let Some(t) = model.vocab().tags.index_of(tag) else {
            dropped_tags.push(tag.to_string());
            continue;
        };
        matched = true;
        // p(z|t): emission times topic prior, normalized over topics.
        let mut posterior: Vec<f64> = (0..k).map(|z| emissions[[t, z]] * topic_prior[z]).collect();
        let total: f64 = posterior.iter().sum();
        if total > 0.0 {
            for value in &mut posterior {
                *value /= total;
            }
        } else {
            posterior.fill(1.0 / k as f64);
        }
        for (weight, value) in weights.iter_mut().zip(&posterior) {
            *weight += count * value;
        }
    }
    if !matched {
        return Err(Error::ColdUser {
            user: user.to_string(),
        });
    }
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        for weight in &mut weights {
            *weight /= total;
        }
    } else {
        weights.fill(1.0 / k as f64);
    }
    Ok(UserTopicVector {
        weights,
        dropped_tags,
    })
}

/// Score of one candidate image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageScore {
    /// Linear-space probability mass; nonnegative.
    pub value: f64,
    /// Annotations the model could not resolve and therefore skipped: tags
    /// outside the vocabulary and, when the model scores groups at all,
    /// groups outside the vocabulary. A model without group emissions omits
    /// group annotations entirely without counting them here.
    pub unknown_annotations: usize,
}

/// Probability mass the model assigns to `image` for a user with this topic
/// profile: per topic, owner prior times the owner's topic weight times the
/// product of annotation emissions times the profile weight, summed over
/// topics. Errors when the owner is unknown; that marginal is a trained
/// parameter with no principled fallback.
pub fn image_score(
    model: &TopicModel,
    image: &Image,
    profile: &UserTopicVector,
) -> Result<ImageScore> {
    let k = model.topic_count();
    if profile.weights.len() != k {
        return Err(Error::Invariant(format!(
            "profile has {} weights for a {k}-topic model",
            profile.weights.len()
        )));
    }
    let vocab = model.vocab();
    let owner = vocab
        .users
        .index_of(image.owner())
        .ok_or_else(|| Error::UnknownOwner {
            image: image.id().to_string(),
            owner: image.owner().to_string(),
        })?;

    let mut unknown = 0usize;
    let mut tag_rows = Vec::new();
    for tag in image.tags() {
        match vocab.tags.index_of(tag) {
            Some(t) => tag_rows.push(t),
            None => unknown += 1,
        }
    }
    let group_emissions = model.group_emissions();
    let mut group_rows = Vec::new();
    if group_emissions.is_some() {
        for group in image.groups() {
            match vocab.groups.index_of(group) {
                Some(g) => group_rows.push(g),
                None => unknown += 1,
            }
        }
    }

    let user_prior = model.user_prior()[owner];
    let mixtures = model.user_mixtures();
    let tag_emissions = model.tag_emissions();

    // One log-term per topic; a zero factor anywhere removes the topic from
    // the sum rather than poisoning it with -inf arithmetic.
    let mut logits: Vec<f64> = Vec::with_capacity(k);
    'topics: for z in 0..k {
        let head = [user_prior, mixtures[[z, owner]], profile.weights[z]];
        let mut logit = 0.0;
        for factor in head {
            if factor <= 0.0 {
                continue 'topics;
            }
            logit += factor.ln();
        }
        for &t in &tag_rows {
            let emission = tag_emissions[[t, z]];
            if emission <= 0.0 {
                continue 'topics;
            }
            logit += emission.ln();
        }
        if let Some(emissions) = &group_emissions {
            for &g in &group_rows {
                let emission = emissions[[g, z]];
                if emission <= 0.0 {
                    continue 'topics;
                }
                logit += emission.ln();
            }
        }
        logits.push(logit);
    }

    let value = if logits.is_empty() {
        0.0
    } else {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
        max.exp() * sum
    };
    Ok(ImageScore {
        value,
        unknown_annotations: unknown,
    })
}

/// One line of a ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub image_id: String,
    pub score: f64,
}

/// A scored, sorted, truncated candidate list.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    pub profile_mode: ProfileMode,
    /// The requested cut size (kept even when fewer candidates exist).
    pub threshold_n: usize,
    /// Scores non-increasing; ties ordered by image id ascending.
    pub entries: Vec<RankedEntry>,
    /// Candidates dropped because their owner is unknown, in input order.
    pub skipped_candidates: Vec<String>,
    /// Total unresolved annotations across the scored candidates.
    pub unknown_annotations: usize,
}

/// Score every candidate and keep the `top_n` best. Candidates whose owner
/// the model does not know are skipped and recorded, not fatal: a search
/// backend may hand us images from outside the training corpus.
pub fn rank_images(
    model: &TopicModel,
    candidates: &[Image],
    profile: &UserTopicVector,
    top_n: usize,
    mode: ProfileMode,
) -> Result<RankedResult> {
    if top_n == 0 {
        return Err(Error::InvalidConfig("top_n must be at least 1".into()));
    }
    let mut entries = Vec::with_capacity(candidates.len());
    let mut skipped_candidates = Vec::new();
    let mut unknown_annotations = 0usize;
    for image in candidates {
        match image_score(model, image, profile) {
            Ok(score) => {
                unknown_annotations += score.unknown_annotations;
                entries.push(RankedEntry {
                    image_id: image.id().to_string(),
                    score: score.value,
                });
            }
            Err(Error::UnknownOwner { .. }) => skipped_candidates.push(image.id().to_string()),
            Err(other) => return Err(other),
        }
    }
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.image_id.cmp(&b.image_id))
    });
    entries.truncate(top_n);
    Ok(RankedResult {
        profile_mode: mode,
        threshold_n: top_n,
        entries,
        skipped_candidates,
        unknown_annotations,
    })
}

/// Header of the ranking CSV serialization.
pub const RANKED_CSV_HEADER: &str = "rank,image_id,score";

impl RankedResult {
    /// CSV rows `rank,image_id,score` with 1-based ranks and shortest
    /// round-trip score formatting, so parsing recovers scores bitwise.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(RANKED_CSV_HEADER);
        out.push('\n');
        for (position, entry) in self.entries.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", position + 1, entry.image_id, entry.score));
        }
        out
    }
}

/// Parse a ranking CSV. Image ids may contain commas: the rank is everything
/// before the first comma and the score everything after the last.
pub fn read_ranked_csv(reader: impl BufRead, origin: &str) -> Result<Vec<RankedEntry>> {
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::io(origin, e))?,
        None => return Err(Error::malformed(origin, 1, "empty file; expected header")),
    };
    if header.trim_end() != RANKED_CSV_HEADER {
        return Err(Error::malformed(
            origin,
            1,
            format!("expected header {RANKED_CSV_HEADER:?}, got {header:?}"),
        ));
    }
    let mut entries = Vec::new();
    for (index, line) in lines {
        let line_no = index + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let (rank, rest) = line
            .split_once(',')
            .ok_or_else(|| Error::malformed(origin, line_no, "expected rank,image_id,score"))?;
        let (image_id, score) = rest
            .rsplit_once(',')
            .ok_or_else(|| Error::malformed(origin, line_no, "expected rank,image_id,score"))?;
        let rank: usize = rank
            .parse()
            .map_err(|_| Error::malformed(origin, line_no, format!("bad rank {rank:?}")))?;
        if rank != entries.len() + 1 {
            return Err(Error::malformed(
                origin,
                line_no,
                format!("rank {rank} out of sequence; expected {}", entries.len() + 1),
            ));
        }
        if image_id.is_empty() {
            return Err(Error::malformed(origin, line_no, "empty image id"));
        }
        let score: f64 = score
            .parse()
            .map_err(|_| Error::malformed(origin, line_no, format!("bad score {score:?}")))?;
        if !(score >= 0.0 && score.is_finite()) {
            return Err(Error::malformed(
                origin,
                line_no,
                format!("score must be a nonnegative real, got {score}"),
            ));
        }
        entries.push(RankedEntry {
            image_id: image_id.to_string(),
            score,
        });
    }
    Ok(entries)
}

/// Read a ranking CSV from disk.
pub fn load_ranked_csv(path: &Path) -> Result<Vec<RankedEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ranked_csv(BufReader::new(file), &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DenseIndex;
    use crate::corpus::Vocabulary;
    use crate::model::{ModelConfig, TopicModel};
    use ndarray::array;

    fn dense(values: &[&str]) -> DenseIndex {
        let mut index = DenseIndex::default();
        for value in values {
            index.insert(value);
        }
        index
    }

    /// Two topics, two tags, one user with an even mixture; topic 0 prefers
    /// tag "a" (0.9) and topic 1 prefers "b".
    fn hand_model() -> TopicModel {
        let vocab = Vocabulary {
            tags: dense(&["a", "b"]),
            groups: DenseIndex::default(),
            users: dense(&["u"]),
        };
        TopicModel::from_parts(
            ModelConfig {
                topics: 2,
                ..ModelConfig::default()
            },
            vocab,
            array![[0.9, 0.1], [0.1, 0.9]],
            None,
            array![[0.5], [0.5]],
            array![1.0],
        )
        .unwrap()
    }

    fn histogram(pairs: &[(&str, f64)]) -> TagHistogram {
        let mut h = TagHistogram::default();
        for (tag, count) in pairs {
            h.add(tag, *count);
        }
        h
    }

    #[test]
    fn profile_matches_hand_bayes_inversion() {
        // p(z) = [0.5, 0.5], so p(z|a) = [0.9, 0.1] and p(z|b) = [0.1, 0.9].
        // Counts a=2, b=1 give [1.9, 1.1] / 3.
        let model = hand_model();
        let profile = user_topic_vector(&model, &histogram(&[("a", 2.0), ("b", 1.0)]), "u").unwrap();
        assert!((profile.weights[0] - 1.9 / 3.0).abs() < 1e-12);
        assert!((profile.weights[1] - 1.1 / 3.0).abs() < 1e-12);
        assert!(profile.dropped_tags.is_empty());
    }

    #[test]
    fn profile_is_scale_invariant() {
        let model = hand_model();
        let base = user_topic_vector(&model, &histogram(&[("a", 2.0), ("b", 1.0)]), "u").unwrap();
        let scaled =
            user_topic_vector(&model, &histogram(&[("a", 7.4), ("b", 3.7)]), "u").unwrap();
        for (x, y) in base.weights.iter().zip(&scaled.weights) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn single_topic_profile_is_certain() {
        let vocab = Vocabulary {
            tags: dense(&["a"]),
            groups: DenseIndex::default(),
            users: dense(&["u"]),
        };
        let model = TopicModel::from_parts(
            ModelConfig {
                topics: 1,
                ..ModelConfig::default()
            },
            vocab,
            array![[1.0]],
            None,
            array![[1.0]],
            array![1.0],
        )
        .unwrap();
        let profile = user_topic_vector(&model, &histogram(&[("a", 5.0)]), "u").unwrap();
        assert_eq!(profile.weights, vec![1.0]);
    }

    #[test]
    fn unknown_tags_are_dropped_and_cold_users_rejected() {
        let model = hand_model();
        let profile =
            user_topic_vector(&model, &histogram(&[("a", 1.0), ("mystery", 4.0)]), "u").unwrap();
        assert_eq!(profile.dropped_tags, vec!["mystery".to_string()]);
        // Only unknown tags: cold.
        let err = user_topic_vector(&model, &histogram(&[("mystery", 4.0)]), "u").unwrap_err();
        assert!(matches!(err, Error::ColdUser { user } if user == "u"));
        // Empty histogram: cold.
        let err = user_topic_vector(&model, &TagHistogram::default(), "u").unwrap_err();
        assert!(matches!(err, Error::ColdUser { .. }));
    }

    #[test]
    fn annotation_free_image_scores_profile_dot_mixture() {
        let vocab = Vocabulary {
            tags: dense(&["a", "b"]),
            groups: DenseIndex::default(),
            users: dense(&["u"]),
        };
        let model = TopicModel::from_parts(
            ModelConfig {
                topics: 2,
                ..ModelConfig::default()
            },
            vocab,
            array![[0.9, 0.1], [0.1, 0.9]],
            None,
            array![[0.3], [0.7]],
            array![1.0],
        )
        .unwrap();
        let profile = UserTopicVector {
            weights: vec![0.9, 0.1],
            dropped_tags: Vec::new(),
        };
        let image = Image::new("i1", "u", Vec::<&str>::new(), Vec::<&str>::new()).unwrap();
        let score = image_score(&model, &image, &profile).unwrap();
        // Empty annotation products are 1: score = 0.3*0.9 + 0.7*0.1.
        assert!((score.value - 0.34).abs() < 1e-12);
        assert_eq!(score.unknown_annotations, 0);
    }

    #[test]
    fn score_matches_brute_force_expansion() {
        let model = hand_model();
        let profile = UserTopicVector {
            weights: vec![0.6, 0.4],
            dropped_tags: Vec::new(),
        };
        let image = Image::new("i1", "u", ["a", "b"], Vec::<&str>::new()).unwrap();
        let score = image_score(&model, &image, &profile).unwrap();
        // z=0: 1.0 * 0.5 * (0.9*0.1) * 0.6; z=1: 1.0 * 0.5 * (0.1*0.9) * 0.4.
        let expected = 0.5 * 0.09 * 0.6 + 0.5 * 0.09 * 0.4;
        assert!((score.value - expected).abs() < 1e-12, "{} vs {expected}", score.value);
    }

    #[test]
    fn unknown_annotations_are_skipped_and_counted() {
        let model = hand_model();
        let profile = UserTopicVector {
            weights: vec![0.5, 0.5],
            dropped_tags: Vec::new(),
        };
        let with_stranger = Image::new("i1", "u", ["a", "zzz"], Vec::<&str>::new()).unwrap();
        let without = Image::new("i1", "u", ["a"], Vec::<&str>::new()).unwrap();
        let a = image_score(&model, &with_stranger, &profile).unwrap();
        let b = image_score(&model, &without, &profile).unwrap();
        assert_eq!(a.value, b.value, "unknown tag must not change the score");
        assert_eq!(a.unknown_annotations, 1);
        assert_eq!(b.unknown_annotations, 0);
    }

    #[test]
    fn groups_are_omitted_when_model_lacks_them() {
        // The vocabulary knows the group, but the model carries no group
        // emissions; the annotation is omitted rather than unknown.
        let vocab = Vocabulary {
            tags: dense(&["a"]),
            groups: dense(&["g1"]),
            users: dense(&["u"]),
        };
        let model = TopicModel::from_parts(
            ModelConfig {
                topics: 1,
                ..ModelConfig::default()
            },
            vocab,
            array![[1.0]],
            None,
            array![[1.0]],
            array![1.0],
        )
        .unwrap();
        let profile = UserTopicVector {
            weights: vec![1.0],
            dropped_tags: Vec::new(),
        };
        let grouped = Image::new("i1", "u", ["a"], ["g1"]).unwrap();
        let bare = Image::new("i1", "u", ["a"], Vec::<&str>::new()).unwrap();
        let a = image_score(&model, &grouped, &profile).unwrap();
        let b = image_score(&model, &bare, &profile).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.unknown_annotations, 0);
    }

    #[test]
    fn unknown_owner_is_an_error() {
        let model = hand_model();
        let profile = UserTopicVector {
            weights: vec![0.5, 0.5],
            dropped_tags: Vec::new(),
        };
        let image = Image::new("i1", "stranger", ["a"], Vec::<&str>::new()).unwrap();
        let err = image_score(&model, &image, &profile).unwrap_err();
        assert!(matches!(err, Error::UnknownOwner { image, owner }
            if image == "i1" && owner == "stranger"));
    }

    #[test]
    fn ranking_sorts_breaks_ties_by_id_and_truncates() {
        let model = hand_model();
        let profile = UserTopicVector {
            weights: vec![0.6, 0.4],
            dropped_tags: Vec::new(),
        };
        // i2 and i4 carry identical annotations, hence identical scores.
        let candidates = vec![
            Image::new("i4", "u", ["b"], Vec::<&str>::new()).unwrap(),
            Image::new("i2", "u", ["b"], Vec::<&str>::new()).unwrap(),
            Image::new("i1", "u", ["a"], Vec::<&str>::new()).unwrap(),
            Image::new("i3", "stranger", ["a"], Vec::<&str>::new()).unwrap(),
        ];
        let full = rank_images(&model, &candidates, &profile, 10, ProfileMode::AllTags).unwrap();
        // Score of "a": 0.5*0.9*0.6 + 0.5*0.1*0.4 = 0.29; "b": 0.5*0.1*0.6 + 0.5*0.9*0.4 = 0.21.
        let ids: Vec<&str> = full.entries.iter().map(|e| e.image_id.as_str()).collect();
        assert_eq!(ids, ["i1", "i2", "i4"]);
        assert_eq!(full.skipped_candidates, vec!["i3".to_string()]);
        assert_eq!(full.threshold_n, 10);
        for pair in full.entries.windows(2) {
            assert!(pair[0].score >= pair[1].score);
        }
        // A smaller cut is a prefix of a larger one.
        let cut = rank_images(&model, &candidates, &profile, 2, ProfileMode::AllTags).unwrap();
        assert_eq!(cut.entries, full.entries[..2]);
        // The cut size must be positive.
        assert!(rank_images(&model, &candidates, &profile, 0, ProfileMode::AllTags).is_err());
    }

    #[test]
    fn ranked_csv_round_trips() {
        let result = RankedResult {
            profile_mode: ProfileMode::AllTags,
            threshold_n: 3,
            entries: vec![
                RankedEntry {
                    image_id: "img,with,commas".into(),
                    score: 0.125,
                },
                RankedEntry {
                    image_id: "img2".into(),
                    score: 1e-300,
                },
            ],
            skipped_candidates: Vec::new(),
            unknown_annotations: 0,
        };
        let csv = result.to_csv();
        assert!(csv.starts_with("rank,image_id,score\n"));
        let parsed = read_ranked_csv(csv.as_bytes(), "<memory>").unwrap();
        assert_eq!(parsed, result.entries);
    }

    #[test]
    fn ranked_csv_rejects_bad_input() {
        assert!(read_ranked_csv("".as_bytes(), "<memory>").is_err());
        assert!(read_ranked_csv("who,knows\n".as_bytes(), "<memory>").is_err());
        let out_of_sequence = "rank,image_id,score\n2,img,0.5\n";
        assert!(read_ranked_csv(out_of_sequence.as_bytes(), "<memory>").is_err());
        let bad_score = "rank,image_id,score\n1,img,minus\n";
        assert!(read_ranked_csv(bad_score.as_bytes(), "<memory>").is_err());
        let negative = "rank,image_id,score\n1,img,-0.5\n";
        assert!(read_ranked_csv(negative.as_bytes(), "<memory>").is_err());
    }

    #[test]
    fn profile_mode_parses_and_prints() {
        assert_eq!("all".parse::<ProfileMode>().unwrap(), ProfileMode::AllTags);
        assert_eq!(
            "related".parse::<ProfileMode>().unwrap(),
            ProfileMode::RelatedTags
        );
        assert!("square".parse::<ProfileMode>().is_err());
        assert_eq!(ProfileMode::AllTags.to_string(), "all");
        assert_eq!(ProfileMode::RelatedTags.to_string(), "related");
    }
}
