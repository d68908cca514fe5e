//! Versioned data replicas and the per-task local store.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{DataName, FormatTag, TaskId};

/// One replica of a named data item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataItem {
    pub name: DataName,
    pub format: FormatTag,
    pub version: u32,
    pub payload: Vec<u8>,
    pub holder: TaskId,
}

impl DataItem {
    pub fn new(name: DataName, format: FormatTag, version: u32, payload: Vec<u8>, holder: TaskId) -> Self {
        debug_assert!(version >= 1, "versions start at 1");
        DataItem { name, format, version, payload, holder }
    }

    /// Same replica content, held at `holder`.
    pub fn held_by(&self, holder: TaskId) -> DataItem {
        DataItem { holder, ..self.clone() }
    }
}

/// Replicas known to one task, at most one per `(name, holder)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LocalStorage {
    items: BTreeMap<DataName, BTreeMap<TaskId, DataItem>>,
}

impl LocalStorage {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces the replica for `(item.name, item.holder)`.
    pub fn put(&mut self, item: DataItem) -> Option<DataItem> {
        self.items.entry(item.name.clone()).or_default().insert(item.holder.clone(), item)
    }

    pub fn get(&self, name: &DataName, holder: &TaskId) -> Option<&DataItem> {
        self.items.get(name)?.get(holder)
    }

    pub fn contains(&self, name: &DataName) -> bool {
        self.items.get(name).is_some_and(|m| !m.is_empty())
    }

    pub fn replicas(&self, name: &DataName) -> impl Iterator<Item = &DataItem> {
        self.items.get(name).into_iter().flat_map(|m| m.values())
    }

    pub fn iter(&self) -> impl Iterator<Item = &DataItem> {
        self.items.values().flat_map(|m| m.values())
    }

    pub fn names(&self) -> impl Iterator<Item = &DataName> {
        self.items.keys()
    }

    pub fn len(&self) -> usize {
        self.items.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Picks the replica with the highest version; ties go to the
/// lexicographically smallest holder.
///
/// # Panics
/// If `copies` is empty.
pub fn select_latest<'a, I>(copies: I) -> &'a DataItem
where
    I: IntoIterator<Item = &'a DataItem>,
{
    copies
        .into_iter()
        .reduce(|best, c| {
            debug_assert_eq!(best.name, c.name, "replicas of one name only");
            if c.version > best.version || (c.version == best.version && c.holder < best.holder) {
                c
            } else {
                best
            }
        })
        .expect("select_latest requires at least one copy")
}

/// A consistency-thread message: overwrite `holder`'s replica with `item`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistencyUpdate {
    pub item: DataItem,
    pub holder: TaskId,
}

impl ConsistencyUpdate {
    /// Applies the update to the holder's own store.
    pub fn deliver(&self, holder_storage: &mut LocalStorage) {
        holder_storage.put(self.item.held_by(self.holder.clone()));
    }
}

/// One update per stale holder.
pub fn propagate_consistent_copy(item: &DataItem, stale_holders: &BTreeSet<TaskId>) -> Vec<ConsistencyUpdate> {
    stale_holders.iter().map(|h| ConsistencyUpdate { item: item.clone(), holder: h.clone() }).collect()
}

/// Per-name version counter: the next publication of a name gets one more
/// than the highest version seen for it anywhere.
#[derive(Debug, Clone, Default)]
pub struct VersionCounter {
    highest: BTreeMap<DataName, u32>,
}

impl VersionCounter {
    pub fn observe(&mut self, name: &DataName, version: u32) {
        let v = self.highest.entry(name.clone()).or_insert(0);
        *v = (*v).max(version);
    }

    pub fn next(&mut self, name: &DataName) -> u32 {
        let v = self.highest.entry(name.clone()).or_insert(0);
        *v += 1;
        *v
    }

    pub fn current(&self, name: &DataName) -> u32 {
        self.highest.get(name).copied().unwrap_or(0)
    }
}
