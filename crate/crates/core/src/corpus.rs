//! Corpus ingestion and indexing: images, vocabularies, tag histograms,
//! contact lists, and relevance labels.
//!
//! The corpus file is JSON Lines, one object per image:
//!
//! ```text
//! {"id": "img001", "owner": "alice", "tags": ["tiger", "zoo"], "groups": ["big cats"]}
//! ```
//!
//! `groups` may be omitted. Tags are lowercased and trimmed at ingestion and
//! deduplicated per image (annotation presence is a 0/1 indicator, so repeats
//! carry no signal); dropped duplicates are counted and reported. Image order
//! is preserved end to end; downstream code treats it as the search engine's
//! ordering of the result pool.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wire format of one corpus line.
#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    owner: String,
    tags: Vec<String>,
    #[serde(default)]
    groups: Vec<String>,
}

/// One annotated image: identity, owner, and its tag and group sets.
///
/// Tags and groups are sets (sorted, no duplicates, no empty strings); tags
/// are stored in normalized (lowercased, trimmed) form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    id: String,
    owner: String,
    tags: BTreeSet<String>,
    groups: BTreeSet<String>,
}

fn normalize_tag(raw: &str) -> String {
    raw.trim().to_lowercase()
}

fn normalize_group(raw: &str) -> String {
    raw.trim().to_string()
}

impl Image {
    /// Build a validated image. Annotations are normalized and deduplicated;
    /// compare input lengths with [`Image::tag_count`] / [`Image::group_count`]
    /// if the caller needs the dedup count.
    pub fn new<S: AsRef<str>, G: AsRef<str>>(
        id: impl Into<String>,
        owner: impl Into<String>,
        tags: impl IntoIterator<Item = S>,
        groups: impl IntoIterator<Item = G>,
    ) -> Result<Self> {
        let id = id.into();
        let owner = owner.into();
        if id.trim().is_empty() {
            return Err(Error::InvalidImage {
                id,
                message: "empty id".into(),
            });
        }
        if owner.trim().is_empty() {
            return Err(Error::InvalidImage {
                id,
                message: "empty owner".into(),
            });
        }
        let mut tag_set = BTreeSet::new();
        for raw in tags {
            let tag = normalize_tag(raw.as_ref());
            if tag.is_empty() {
                return Err(Error::InvalidImage {
                    id,
                    message: "empty tag after normalization".into(),
                });
            }
            tag_set.insert(tag);
        }
        let mut group_set = BTreeSet::new();
        for raw in groups {
            let group = normalize_group(raw.as_ref());
            if group.is_empty() {
                return Err(Error::InvalidImage {
                    id,
                    message: "empty group name".into(),
                });
            }
            group_set.insert(group);
        }
        Ok(Image {
            id,
            owner,
            tags: tag_set,
            groups: group_set,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().map(String::as_str)
    }

    pub fn groups(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().map(String::as_str)
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.contains(&normalize_tag(tag))
    }

    pub fn tag_count(&self) -> usize {
        self.tags.len()
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    fn to_raw(&self) -> RawRecord {
        RawRecord {
            id: self.id.clone(),
            owner: self.owner.clone(),
            tags: self.tags.iter().cloned().collect(),
            groups: self.groups.iter().cloned().collect(),
        }
    }
}

/// Ordered image collection with id and owner indexes.
///
/// Image order is the ingestion order; `images_of` yields a user's images in
/// that same order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    images: Vec<Image>,
    by_id: HashMap<String, usize>,
    by_owner: BTreeMap<String, Vec<usize>>,
}

impl Corpus {
    /// Index a list of images. Fails on duplicate ids, naming the offender.
    pub fn from_images(images: Vec<Image>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(images.len());
        let mut by_owner: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (pos, image) in images.iter().enumerate() {
            if by_id.insert(image.id.clone(), pos).is_some() {
                return Err(Error::DuplicateImageId {
                    id: image.id.clone(),
                });
            }
            by_owner.entry(image.owner.clone()).or_default().push(pos);
        }
        Ok(Corpus {
            images,
            by_id,
            by_owner,
        })
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Image> {
        self.by_id.get(id).map(|&pos| &self.images[pos])
    }

    /// Owners in sorted order.
    pub fn owners(&self) -> impl Iterator<Item = &str> {
        self.by_owner.keys().map(String::as_str)
    }

    pub fn owns_images(&self, user: &str) -> bool {
        self.by_owner.contains_key(user)
    }

    /// The user's images in corpus order; empty for unknown users.
    pub fn images_of(&self, user: &str) -> impl Iterator<Item = &Image> + '_ {
        self.by_owner
            .get(user)
            .into_iter()
            .flatten()
            .map(move |&pos| &self.images[pos])
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for image in &self.images {
            // RawRecord contains no map types, so serialization cannot fail.
            out.push_str(&serde_json::to_string(&image.to_raw()).expect("serializable record"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Dedup events observed while loading a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CorpusWarnings {
    /// Tags dropped because the same normalized tag repeated within an image.
    pub duplicate_tags: usize,
    /// Groups dropped for the same reason.
    pub duplicate_groups: usize,
}

impl CorpusWarnings {
    pub fn is_clean(&self) -> bool {
        self.duplicate_tags == 0 && self.duplicate_groups == 0
    }
}

/// A loaded corpus plus the warnings its ingestion produced.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusLoad {
    pub corpus: Corpus,
    pub warnings: CorpusWarnings,
}

/// Load a JSONL corpus file. Duplicate ids and malformed records fail with
/// the offending id or line number; within-image duplicate annotations are
/// dropped and counted in the returned warnings.
pub fn load_corpus(path: &Path) -> Result<CorpusLoad> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), path)
}

/// Same as [`load_corpus`] but over any reader; `origin` labels errors.
pub fn read_corpus(reader: impl BufRead, origin: &Path) -> Result<CorpusLoad> {
    let mut images = Vec::new();
    let mut warnings = CorpusWarnings::default();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(origin, lineno, e.to_string()))?;
        let raw_tags = raw.tags.len();
        let raw_groups = raw.groups.len();
        let image = Image::new(raw.id, raw.owner, raw.tags, raw.groups)
            .map_err(|e| Error::malformed(origin, lineno, e.to_string()))?;
        warnings.duplicate_tags += raw_tags - image.tag_count();
        warnings.duplicate_groups += raw_groups - image.group_count();
        images.push(image);
    }
    Ok(CorpusLoad {
        corpus: Corpus::from_images(images)?,
        warnings,
    })
}

/// Bidirectional map between strings and dense indices.
///
/// Indices are assigned in first-insertion order, so building from an ordered
/// corpus is reproducible without sorting the universe of values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DenseIndex {
    values: Vec<String>,
    index: HashMap<String, usize>,
}

impl DenseIndex {
    /// Intern a value, returning its dense index (existing or fresh).
    pub fn insert(&mut self, value: &str) -> usize {
        if let Some(&i) = self.index.get(value) {
            return i;
        }
        let i = self.values.len();
        self.values.push(value.to_string());
        self.index.insert(value.to_string(), i);
        i
    }

    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.index.get(value).copied()
    }

    /// The value at `index`. Panics if out of range.
    pub fn value(&self, index: usize) -> &str {
        &self.values[index]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values in index order.
    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.values.iter().map(String::as_str)
    }
}

/// Dense tag, group, and user indexes over a corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    pub tags: DenseIndex,
    pub groups: DenseIndex,
    pub users: DenseIndex,
}

/// Index every owner, tag, and group in corpus order (within an image, in the
/// image's sorted annotation order).
pub fn build_vocabulary(corpus: &Corpus) -> Vocabulary {
    let mut vocab = Vocabulary::default();
    for image in corpus.images() {
        vocab.users.insert(image.owner());
        for tag in image.tags() {
            vocab.tags.insert(tag);
        }
        for group in image.groups() {
            vocab.groups.insert(group);
        }
    }
    vocab
}

/// Tag usage counts; every stored weight is strictly positive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TagHistogram {
    counts: BTreeMap<String, f64>,
}

impl TagHistogram {
    /// Add weight to a tag's count. Weights must be strictly positive.
    pub fn add(&mut self, tag: &str, weight: f64) {
        assert!(
            weight > 0.0 && weight.is_finite(),
            "histogram weights must be positive and finite, got {weight}"
        );
        *self.counts.entry(tag.to_string()).or_insert(0.0) += weight;
    }

    pub fn get(&self, tag: &str) -> Option<f64> {
        self.counts.get(tag).copied()
    }

    /// Entries in sorted tag order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.counts.iter().map(|(t, &w)| (t.as_str(), w))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Count how often the user applied each tag across their own images (at most
/// once per image, since per-image tags are sets). Unknown users fail.
pub fn user_tag_histogram(corpus: &Corpus, user: &str) -> Result<TagHistogram> {
    if !corpus.owns_images(user) {
        return Err(Error::UnknownUser { user: user.into() });
    }
    let mut histogram = TagHistogram::default();
    for image in corpus.images_of(user) {
        for tag in image.tags() {
            histogram.add(tag, 1.0);
        }
    }
    Ok(histogram)
}

/// Tags co-occurring with `query_tag` on the user's own images, counted over
/// those images only. The query tag itself is included with its own count.
/// Empty when the user never used the query tag; unknown users fail.
pub fn related_tags(corpus: &Corpus, user: &str, query_tag: &str) -> Result<TagHistogram> {
    if !corpus.owns_images(user) {
        return Err(Error::UnknownUser { user: user.into() });
    }
    let query = normalize_tag(query_tag);
    let mut histogram = TagHistogram::default();
    for image in corpus.images_of(user) {
        if !image.has_tag(&query) {
            continue;
        }
        for tag in image.tags() {
            histogram.add(tag, 1.0);
        }
    }
    Ok(histogram)
}

/// Directed contact graph: an edge `a -> b` means `a` lists `b` as a contact.
/// Self-loops are never stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactGraph {
    edges: BTreeMap<String, BTreeSet<String>>,
}

impl ContactGraph {
    /// Add a directed edge. Self-loops are dropped; returns whether the edge
    /// was stored (false for self-loops and repeats).
    pub fn add_contact(&mut self, user: &str, contact: &str) -> bool {
        if user == contact {
            return false;
        }
        self.edges
            .entry(user.to_string())
            .or_default()
            .insert(contact.to_string())
    }

    /// Out-neighbors in sorted order; empty for unknown users.
    pub fn contacts_of(&self, user: &str) -> impl Iterator<Item = &str> + '_ {
        self.edges
            .get(user)
            .into_iter()
            .flatten()
            .map(String::as_str)
    }

    /// Users with at least one outgoing edge, in sorted order.
    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.edges.keys().map(String::as_str)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(BTreeSet::len).sum()
    }
}

/// A loaded contact graph plus how many self-loop rows were dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactsLoad {
    pub graph: ContactGraph,
    pub self_loops_dropped: usize,
}

/// Load a `user,contact` CSV (header required). Self-loops are dropped with a
/// count; malformed rows fail with their line number.
pub fn load_contacts(path: &Path) -> Result<ContactsLoad> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_contacts(BufReader::new(file), path)
}

/// Same as [`load_contacts`] but over any reader; `origin` labels errors.
pub fn read_contacts(reader: impl BufRead, origin: &Path) -> Result<ContactsLoad> {
    let mut graph = ContactGraph::default();
    let mut self_loops_dropped = 0;
    let mut saw_header = false;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line.trim() != "user,contact" {
                return Err(Error::malformed(
                    origin,
                    lineno,
                    format!("expected header \"user,contact\", got {:?}", line.trim()),
                ));
            }
            saw_header = true;
            continue;
        }
        let (user, contact) = split_two(&line)
            .ok_or_else(|| Error::malformed(origin, lineno, "expected two comma-separated fields"))?;
        if user.is_empty() || contact.is_empty() {
            return Err(Error::malformed(origin, lineno, "empty user or contact"));
        }
        if user == contact {
            self_loops_dropped += 1;
            continue;
        }
        graph.add_contact(user, contact);
    }
    if !saw_header {
        return Err(Error::malformed(origin, 1, "missing \"user,contact\" header"));
    }
    Ok(ContactsLoad {
        graph,
        self_loops_dropped,
    })
}

fn split_two(line: &str) -> Option<(&str, &str)> {
    let mut parts = line.split(',');
    let a = parts.next()?.trim();
    let b = parts.next()?.trim();
    if parts.next().is_some() {
        return None;
    }
    Some((a, b))
}

/// Relevance judgment for one image under a fixed query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Relevant,
    NotRelevant,
    /// Judges could not decide; excluded from both precision numerator and
    /// the labeled-only denominator.
    Undecided,
}

impl Label {
    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "relevant" => Some(Label::Relevant),
            "not_relevant" => Some(Label::NotRelevant),
            "undecided" => Some(Label::Undecided),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Relevant => "relevant",
            Label::NotRelevant => "not_relevant",
            Label::Undecided => "undecided",
        }
    }
}

/// Relevance labels keyed by image id. Ids absent from the map are unlabeled.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelevanceLabels {
    labels: BTreeMap<String, Label>,
}

impl RelevanceLabels {
    pub fn insert(&mut self, id: impl Into<String>, label: Label) -> Option<Label> {
        self.labels.insert(id.into(), label)
    }

    pub fn get(&self, id: &str) -> Option<Label> {
        self.labels.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of images labeled relevant across the whole label set.
    pub fn total_relevant(&self) -> usize {
        self.labels
            .values()
            .filter(|&&l| l == Label::Relevant)
            .count()
    }

    /// Entries in sorted id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, Label)> {
        self.labels.iter().map(|(id, &l)| (id.as_str(), l))
    }

    /// True when every labeled id appears in `ids`.
    pub fn covered_by<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> bool {
        let ids: BTreeSet<&str> = ids.into_iter().collect();
        self.labels.keys().all(|id| ids.contains(id.as_str()))
    }
}

/// Load an `image_id,label` CSV (header required). Labels must be `relevant`,
/// `not_relevant`, or `undecided`; duplicate ids fail.
pub fn load_labels(path: &Path) -> Result<RelevanceLabels> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_labels(BufReader::new(file), path)
}

/// Same as [`load_labels`] but over any reader; `origin` labels errors.
pub fn read_labels(reader: impl BufRead, origin: &Path) -> Result<RelevanceLabels> {
    let mut labels = RelevanceLabels::default();
    let mut saw_header = false;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line.trim() != "image_id,label" {
                return Err(Error::malformed(
                    origin,
                    lineno,
                    format!("expected header \"image_id,label\", got {:?}", line.trim()),
                ));
            }
            saw_header = true;
            continue;
        }
        let (id, label) = split_two(&line)
            .ok_or_else(|| Error::malformed(origin, lineno, "expected two comma-separated fields"))?;
        if id.is_empty() {
            return Err(Error::malformed(origin, lineno, "empty image id"));
        }
        let label = Label::parse(label).ok_or_else(|| {
            Error::malformed(
                origin,
                lineno,
                format!("unknown label {label:?} (expected relevant, not_relevant, or undecided)"),
            )
        })?;
        if labels.insert(id, label).is_some() {
            return Err(Error::malformed(
                origin,
                lineno,
                format!("duplicate label for image id {id:?}"),
            ));
        }
    }
    if !saw_header {
        return Err(Error::malformed(origin, 1, "missing \"image_id,label\" header"));
    }
    Ok(labels)
}

/// Wire format of a stored user profile.
#[derive(Debug, Serialize, Deserialize)]
struct RawProfile {
    user: String,
    tag_counts: BTreeMap<String, f64>,
}

/// A user's tag-usage profile, loaded from a profile file rather than derived
/// from a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub user: String,
    pub tags: TagHistogram,
}

/// Load a JSON profile `{"user": ..., "tag_counts": {tag: count}}`. Counts
/// must be positive and finite; tags are normalized like corpus tags.
pub fn load_profile(path: &Path) -> Result<UserProfile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let raw: RawProfile = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::malformed(path, 1, e.to_string()))?;
    if raw.user.trim().is_empty() {
        return Err(Error::malformed(path, 1, "empty user"));
    }
    let mut tags = TagHistogram::default();
    for (raw_tag, count) in raw.tag_counts {
        let tag = normalize_tag(&raw_tag);
        if tag.is_empty() {
            return Err(Error::malformed(path, 1, "empty tag after normalization"));
        }
        if !(count > 0.0 && count.is_finite()) {
            return Err(Error::malformed(
                path,
                1,
                format!("tag {tag:?} has non-positive count {count}"),
            ));
        }
        tags.add(&tag, count);
    }
    Ok(UserProfile {
        user: raw.user,
        tags,
    })
}
