//! Meaning Representations over the fixed 8-slot restaurant domain.
//!
//! An MR is written as `key[value]` items separated by commas, e.g.
//! `name[Blue Spice], eatType[coffee shop], area[city centre]`. Parsing
//! canonicalizes slot order; values are kept byte-for-byte (no case folding).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MrError {
    #[error("empty meaning representation")]
    EmptyInput,
    #[error("unknown slot key `{0}`")]
    UnknownSlot(String),
    #[error("malformed item `{0}`")]
    MalformedItem(String),
    #[error("duplicate slot `{0}`")]
    DuplicateSlot(String),
    #[error("empty corpus")]
    EmptyCorpus,
}

/// One of the eight slot types, declared in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SlotType {
    Name,
    EatType,
    Food,
    PriceRange,
    CustomerRating,
    Area,
    FamilyFriendly,
    Near,
}

impl SlotType {
    pub const ALL: [SlotType; 8] = [
        SlotType::Name,
        SlotType::EatType,
        SlotType::Food,
        SlotType::PriceRange,
        SlotType::CustomerRating,
        SlotType::Area,
        SlotType::FamilyFriendly,
        SlotType::Near,
    ];

    /// The seven slots that carry adequacy features (everything but `name`).
    pub const FEATURE_SLOTS: [SlotType; 7] = [
        SlotType::EatType,
        SlotType::Food,
        SlotType::PriceRange,
        SlotType::CustomerRating,
        SlotType::Area,
        SlotType::FamilyFriendly,
        SlotType::Near,
    ];

    pub fn key(self) -> &'static str {
        match self {
            SlotType::Name => "name",
            SlotType::EatType => "eatType",
            SlotType::Food => "food",
            SlotType::PriceRange => "priceRange",
            SlotType::CustomerRating => "customer rating",
            SlotType::Area => "area",
            SlotType::FamilyFriendly => "familyFriendly",
            SlotType::Near => "near",
        }
    }

    /// Position in canonical order.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_key(key: &str) -> Option<SlotType> {
        SlotType::ALL.into_iter().find(|s| s.key() == key)
    }
}

impl fmt::Display for SlotType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for SlotType {
    type Err = MrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SlotType::from_key(s).ok_or_else(|| MrError::UnknownSlot(s.to_string()))
    }
}

/// Slot → value mapping. Iteration is always in canonical slot order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct MeaningRepresentation {
    slots: BTreeMap<SlotType, String>,
}

impl MeaningRepresentation {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds an MR from `(slot, value)` pairs. Values are trimmed and must be
    /// non-empty and bracket-free.
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self, MrError>
    where
        I: IntoIterator<Item = (SlotType, S)>,
        S: AsRef<str>,
    {
        let mut mr = Self::new();
        for (slot, value) in pairs {
            mr.insert_checked(slot, value.as_ref())?;
        }
        Ok(mr)
    }

    fn insert_checked(&mut self, slot: SlotType, value: &str) -> Result<(), MrError> {
        let value = value.trim();
        if value.is_empty() || value.contains(['[', ']']) {
            return Err(MrError::MalformedItem(format!("{}[{}]", slot.key(), value)));
        }
        if self.slots.contains_key(&slot) {
            return Err(MrError::DuplicateSlot(slot.key().to_string()));
        }
        self.slots.insert(slot, value.to_string());
        Ok(())
    }

    pub fn get(&self, slot: SlotType) -> Option<&str> {
        self.slots.get(&slot).map(String::as_str)
    }

    pub fn contains(&self, slot: SlotType) -> bool {
        self.slots.contains_key(&slot)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SlotType, &str)> {
        self.slots.iter().map(|(k, v)| (*k, v.as_str()))
    }

    pub fn slot_types(&self) -> impl Iterator<Item = SlotType> + '_ {
        self.slots.keys().copied()
    }

    /// Returns a copy with `slot` set to `value`, replacing any previous value.
    pub fn with_slot(&self, slot: SlotType, value: &str) -> Result<Self, MrError> {
        let mut out = self.clone();
        out.slots.remove(&slot);
        out.insert_checked(slot, value)?;
        Ok(out)
    }

    /// Returns a copy with `slot` removed.
    pub fn without_slot(&self, slot: SlotType) -> Self {
        let mut out = self.clone();
        out.slots.remove(&slot);
        out
    }
}

impl fmt::Display for MeaningRepresentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_mr(self))
    }
}

impl FromStr for MeaningRepresentation {
    type Err = MrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_mr(s)
    }
}

/// Parses `key[value], key[value], ...`.
///
/// Items end at `]`; the separator between items is a comma with optional
/// surrounding whitespace. Commas inside brackets belong to the value.
pub fn parse_mr(text: &str) -> Result<MeaningRepresentation, MrError> {
    let mut rest = text.trim();
    if rest.is_empty() {
        return Err(MrError::EmptyInput);
    }
    let mut mr = MeaningRepresentation::new();
    loop {
        let open = rest
            .find('[')
            .ok_or_else(|| MrError::MalformedItem(rest.to_string()))?;
        let close = rest
            .find(']')
            .ok_or_else(|| MrError::MalformedItem(rest.to_string()))?;
        if close < open {
            return Err(MrError::MalformedItem(rest.to_string()));
        }
        let item = &rest[..=close];
        let key = rest[..open].trim();
        let value = &rest[open + 1..close];
        if value.contains('[') {
            return Err(MrError::MalformedItem(item.to_string()));
        }
        let slot = SlotType::from_key(key).ok_or_else(|| MrError::UnknownSlot(key.to_string()))?;
        if mr.contains(slot) {
            return Err(MrError::DuplicateSlot(key.to_string()));
        }
        mr.insert_checked(slot, value)
            .map_err(|_| MrError::MalformedItem(item.to_string()))?;

        rest = rest[close + 1..].trim_start();
        if rest.is_empty() {
            break;
        }
        rest = rest
            .strip_prefix(',')
            .ok_or_else(|| MrError::MalformedItem(rest.to_string()))?
            .trim_start();
        if rest.is_empty() {
            return Err(MrError::MalformedItem(",".to_string()));
        }
    }
    Ok(mr)
}

/// Canonical `key[value]` serialization joined by `", "`.
pub fn serialize_mr(mr: &MeaningRepresentation) -> String {
    let mut out = String::new();
    for (i, (slot, value)) in mr.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(slot.key());
        out.push('[');
        out.push_str(value);
        out.push(']');
    }
    out
}

/// Empirical slot-value frequencies.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SlotCatalog {
    counts: BTreeMap<SlotType, BTreeMap<String, u64>>,
}

impl SlotCatalog {
    pub fn add(&mut self, slot: SlotType, value: &str) {
        *self
            .counts
            .entry(slot)
            .or_default()
            .entry(value.to_string())
            .or_insert(0) += 1;
    }

    pub fn count(&self, slot: SlotType, value: &str) -> u64 {
        self.counts
            .get(&slot)
            .and_then(|m| m.get(value))
            .copied()
            .unwrap_or(0)
    }

    /// Value counts for `slot`, sorted by value.
    pub fn values(&self, slot: SlotType) -> Option<&BTreeMap<String, u64>> {
        self.counts.get(&slot).filter(|m| !m.is_empty())
    }

    pub fn total(&self, slot: SlotType) -> u64 {
        self.counts.get(&slot).map_or(0, |m| m.values().sum())
    }

    pub fn probability(&self, slot: SlotType, value: &str) -> f64 {
        let total = self.total(slot);
        if total == 0 {
            return 0.0;
        }
        self.count(slot, value) as f64 / total as f64
    }

    /// `(value, probability)` in value order.
    pub fn distribution(&self, slot: SlotType) -> Vec<(&str, f64)> {
        let total = self.total(slot) as f64;
        self.values(slot)
            .map(|m| {
                m.iter()
                    .map(|(v, c)| (v.as_str(), *c as f64 / total))
                    .collect()
            })
            .unwrap_or_default()
    }
}

pub fn build_slot_catalog<'a, I>(mrs: I) -> Result<SlotCatalog, MrError>
where
    I: IntoIterator<Item = &'a MeaningRepresentation>,
{
    let mut catalog = SlotCatalog::default();
    let mut seen = 0usize;
    for mr in mrs {
        seen += 1;
        for (slot, value) in mr.iter() {
            catalog.add(slot, value);
        }
    }
    if seen == 0 {
        return Err(MrError::EmptyCorpus);
    }
    Ok(catalog)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SlotDiff {
    pub added: BTreeMap<SlotType, String>,
    pub removed: BTreeMap<SlotType, String>,
    /// slot → (old, new)
    pub changed: BTreeMap<SlotType, (String, String)>,
}

impl SlotDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.changed.is_empty()
    }
}

/// What it takes to go from `a` to `b`.
pub fn diff_slots(a: &MeaningRepresentation, b: &MeaningRepresentation) -> SlotDiff {
    let mut diff = SlotDiff::default();
    for slot in SlotType::ALL {
        match (a.get(slot), b.get(slot)) {
            (None, Some(v)) => {
                diff.added.insert(slot, v.to_string());
            }
            (Some(v), None) => {
                diff.removed.insert(slot, v.to_string());
            }
            (Some(x), Some(y)) if x != y => {
                diff.changed.insert(slot, (x.to_string(), y.to_string()));
            }
            _ => {}
        }
    }
    diff
}

/// The six sample MRs (arity 3 through 8) and their adequate realizations.
pub const SAMPLE_ROWS: [(&str, &str); 6] = [
    (
        "name[Blue Spice], eatType[coffee shop], area[city centre]",
        "Blue Spice is a coffee shop located in the city centre.",
    ),
    (
        "name[Blue Spice], eatType[coffee shop], customer rating[5 out of 5], near[Crowne Plaza Hotel]",
        "Blue Spice is a coffee shop near Crowne Plaza Hotel with a customer rating of 5 out of 5.",
    ),
    (
        "name[The Cricketers], eatType[coffee shop], customer rating[1 out of 5], familyFriendly[yes], near[Avalon]",
        "The Cricketers is a children friendly coffee shop near Avalon with a customer rating of 1 out of 5.",
    ),
    (
        "name[Blue Spice], eatType[pub], food[Chinese], area[city centre], familyFriendly[no], near[Rainbow Vegetarian Café]",
        "Blue Spice is a Chinese pub located in the city centre near Rainbow Vegetarian Café. It is not family friendly.",
    ),
    (
        "name[The Mill], eatType[pub], food[English], priceRange[high], area[riverside], familyFriendly[yes], near[Raja Indian Cuisine]",
        "The Mill is a children friendly English pub with a high price range near Raja Indian Cuisine in riverside.",
    ),
    (
        "name[The Cricketers], eatType[restaurant], food[Chinese], priceRange[£20-25], customer rating[high], area[city centre], familyFriendly[no], near[All Bar One]",
        "The Cricketers is a restaurant providing Chinese food in the £20-25 price range. It is located in the city centre near All Bar One. It has a high customer rating and is not kid friendly.",
    ),
];
