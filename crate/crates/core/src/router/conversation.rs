use std::collections::HashSet;
use std::fmt;

use dashmap::DashMap;
use serde::{Deserialize, Serialize};

use crate::hash::ContentHash;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConversationId(String);

impl ConversationId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ConversationId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for ConversationId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl fmt::Display for ConversationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationState {
    /// Content hashes already injected; only ever grows.
    pub sent_hashes: HashSet<ContentHash>,
    pub previous_query: Option<String>,
}

#[derive(Debug, Default)]
pub struct ConversationStore {
    states: DashMap<ConversationId, ConversationState>,
}

impl ConversationStore {
    /// Records `hashes` as sent and reports, per hash, whether it was new.
    /// The whole claim happens under the conversation's entry lock.
    pub fn claim(&self, id: &ConversationId, hashes: &[ContentHash]) -> Vec<bool> {
        let mut state = self.states.entry(id.clone()).or_default();
        hashes
            .iter()
            .map(|h| state.sent_hashes.insert(h.clone()))
            .collect()
    }

    pub fn previous_query(&self, id: &ConversationId) -> Option<String> {
        self.states.get(id).and_then(|s| s.previous_query.clone())
    }

    pub fn set_previous_query(&self, id: &ConversationId, query: String) {
        self.states.entry(id.clone()).or_default().previous_query = Some(query);
    }

    pub fn state(&self, id: &ConversationId) -> Option<ConversationState> {
        self.states.get(id).map(|s| s.clone())
    }

    pub fn restore(&self, id: ConversationId, state: ConversationState) {
        self.states.insert(id, state);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}
