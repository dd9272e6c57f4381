//! Contact-set expansion and result filtering.
//!
//! A contact set is the audience a user trusts: either their direct contacts
//! (level 1) or those plus each direct contact's own contacts (level 2, one
//! extra directed hop over out-edges). Filtering keeps the images owned by
//! set members, preserving the input order of the result list.

use std::collections::BTreeSet;

use crate::corpus::{ContactGraph, Image};

/// How far from the user the contact set extends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactLevel {
    /// Direct contacts only.
    Direct,
    /// Direct contacts plus their direct contacts.
    Extended,
}

impl ContactLevel {
    /// Numeric form used by command-line flags (1 or 2).
    pub fn from_number(n: u8) -> Option<ContactLevel> {
        match n {
            1 => Some(ContactLevel::Direct),
            2 => Some(ContactLevel::Extended),
            _ => None,
        }
    }

    pub fn as_number(&self) -> u8 {
        match self {
            ContactLevel::Direct => 1,
            ContactLevel::Extended => 2,
        }
    }
}

/// The set of users whose images pass the contact filter for one searcher.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContactSet {
    user: String,
    level: ContactLevel,
    members: BTreeSet<String>,
}

impl ContactSet {
    pub fn user(&self) -> &str {
        &self.user
    }

    pub fn level(&self) -> ContactLevel {
        self.level
    }

    pub fn contains(&self, user: &str) -> bool {
        self.members.contains(user)
    }

    /// Members in sorted order.
    pub fn members(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Add the user themselves to the set, so their own images pass the
    /// filter. Off by default: searching within your contacts' photos is the
    /// point, not re-finding your own.
    pub fn including_self(mut self) -> Self {
        self.members.insert(self.user.clone());
        self
    }
}

/// Expand a user's contact set at the given level.
///
/// Level 1 is the user's out-neighbors. Level 2 adds each level-1 contact's
/// out-neighbors (exactly one extra directed hop). The user themselves is
/// never a member; unknown users yield an empty set.
pub fn contact_set(graph: &ContactGraph, user: &str, level: ContactLevel) -> ContactSet {
    let mut members: BTreeSet<String> = graph.contacts_of(user).map(str::to_string).collect();
    if level == ContactLevel::Extended {
        let direct: Vec<String> = members.iter().cloned().collect();
        for contact in &direct {
            members.extend(graph.contacts_of(contact).map(str::to_string));
        }
    }
    members.remove(user);
    ContactSet {
        user: user.to_string(),
        level,
        members,
    }
}

/// Keep the images owned by contact-set members, in input order.
pub fn filter_by_contacts<'a>(results: &'a [Image], contacts: &ContactSet) -> Vec<&'a Image> {
    results
        .iter()
        .filter(|image| contacts.contains(image.owner()))
        .collect()
}
