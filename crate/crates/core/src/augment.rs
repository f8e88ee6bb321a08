//! Synthetic adequacy data by editing MRs while keeping the reference fixed.
//!
//! Omission data adds each absent slot in turn (value drawn from the corpus
//! distribution of that slot); addition data removes each non-name slot in
//! turn. Originals are labeled 1, edited MRs 0.

use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::CorpusPair;
use crate::mr::{
    diff_slots, parse_mr, serialize_mr, MeaningRepresentation, MrError, SlotCatalog, SlotType,
};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("catalog has no values for slot `{0}`")]
    CatalogMissingSlot(SlotType),
    #[error("pair {0}: only the name slot is present")]
    TooFewSlots(usize),
    #[error("pair {0}: MR has no name slot")]
    MissingName(usize),
    #[error("triplet file line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Mr(#[from] MrError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub mr: MeaningRepresentation,
    pub rf: String,
    /// 1 = original pair, 0 = edited MR.
    pub label: u8,
    /// Index of the originating corpus pair.
    pub source: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    Omission,
    Addition,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentConfig {
    pub seed: u64,
    pub mode: AugmentMode,
    /// Slot types the omission protocol may add. `name` is never added.
    pub addable: Vec<SlotType>,
}

impl AugmentConfig {
    pub fn new(seed: u64, mode: AugmentMode) -> Self {
        Self {
            seed,
            mode,
            addable: SlotType::FEATURE_SLOTS.to_vec(),
        }
    }
}

fn pair_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Inverse-CDF draw over the catalog counts of `slot`.
pub fn sample_value<'a, R: Rng>(
    catalog: &'a SlotCatalog,
    slot: SlotType,
    rng: &mut R,
) -> Result<&'a str, AugmentError> {
    let values = catalog
        .values(slot)
        .ok_or(AugmentError::CatalogMissingSlot(slot))?;
    let total: u64 = values.values().sum();
    let mut ticket = rng.random_range(0..total);
    for (value, &count) in values {
        if ticket < count {
            return Ok(value);
        }
        ticket -= count;
    }
    unreachable!("ticket below total")
}

fn original(pair: &CorpusPair, index: usize) -> Triplet {
    Triplet {
        mr: pair.mr.clone(),
        rf: pair.rf.clone(),
        label: 1,
        source: index,
    }
}

/// Positive original followed by one negative per absent addable slot.
pub fn make_omission_dataset(
    pairs: &[CorpusPair],
    catalog: &SlotCatalog,
    cfg: &AugmentConfig,
) -> Result<Vec<Triplet>, AugmentError> {
    let mut out = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        if !pair.mr.contains(SlotType::Name) {
            return Err(AugmentError::MissingName(i));
        }
        let mut rng = pair_rng(cfg.seed, i);
        out.push(original(pair, i));
        for slot in SlotType::FEATURE_SLOTS {
            if pair.mr.contains(slot) || !cfg.addable.contains(&slot) {
                continue;
            }
            let value = sample_value(catalog, slot, &mut rng)?;
            out.push(Triplet {
                mr: pair.mr.with_slot(slot, value)?,
                rf: pair.rf.clone(),
                label: 0,
                source: i,
            });
        }
    }
    Ok(out)
}

/// Positive original followed by one negative per removable (non-name) slot.
pub fn make_addition_dataset(
    pairs: &[CorpusPair],
    _cfg: &AugmentConfig,
) -> Result<Vec<Triplet>, AugmentError> {
    let mut out = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        if !pair.mr.contains(SlotType::Name) {
            return Err(AugmentError::MissingName(i));
        }
        if pair.mr.len() < 2 {
            return Err(AugmentError::TooFewSlots(i));
        }
        out.push(original(pair, i));
        for slot in pair.mr.slot_types().filter(|&s| s != SlotType::Name) {
            out.push(Triplet {
                mr: pair.mr.without_slot(slot),
                rf: pair.rf.clone(),
                label: 0,
                source: i,
            });
        }
    }
    Ok(out)
}

pub fn make_dataset(
    pairs: &[CorpusPair],
    catalog: &SlotCatalog,
    cfg: &AugmentConfig,
) -> Result<Vec<Triplet>, AugmentError> {
    match cfg.mode {
        AugmentMode::Omission => make_omission_dataset(pairs, catalog, cfg),
        AugmentMode::Addition => make_addition_dataset(pairs, cfg),
    }
}

/// Replicates each pair's positive once per negative of that pair
/// (at least once). Groups keep their first-appearance order.
pub fn balance(triplets: &[Triplet]) -> Vec<Triplet> {
    let mut order: Vec<usize> = Vec::new();
    let mut groups: std::collections::HashMap<usize, (Option<&Triplet>, Vec<&Triplet>)> =
        std::collections::HashMap::new();
    for t in triplets {
        let entry = groups.entry(t.source).or_insert_with(|| {
            order.push(t.source);
            (None, Vec::new())
        });
        if t.label == 1 {
            entry.0.get_or_insert(t);
        } else {
            entry.1.push(t);
        }
    }
    let mut out = Vec::with_capacity(triplets.len() * 2);
    for source in order {
        let (pos, negs) = &groups[&source];
        if let Some(p) = pos {
            for _ in 0..negs.len().max(1) {
                out.push((*p).clone());
            }
        }
        out.extend(negs.iter().map(|t| (*t).clone()));
    }
    out
}

/// Omission negatives whose added value text already occurs in the
/// reference (case-insensitive).
pub fn value_collisions(pairs: &[CorpusPair], triplets: &[Triplet]) -> usize {
    triplets
        .iter()
        .filter(|t| t.label == 0)
        .filter(|t| {
            let Some(pair) = pairs.get(t.source) else {
                return false;
            };
            let rf = t.rf.to_lowercase();
            diff_slots(&pair.mr, &t.mr)
                .added
                .values()
                .any(|v| rf.contains(&v.to_lowercase()))
        })
        .count()
}

pub fn write_triplets_csv<W: io::Write>(
    writer: W,
    triplets: &[Triplet],
) -> Result<(), AugmentError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let wrap = |e: csv::Error| AugmentError::Io(io::Error::other(e));
    wtr.write_record(["mr", "ref", "label"]).map_err(wrap)?;
    for t in triplets {
        wtr.write_record([serialize_mr(&t.mr), t.rf.clone(), t.label.to_string()])
            .map_err(wrap)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads an `mr,ref,label` file. `source` is set to the row index.
pub fn read_triplets_csv<R: io::Read>(reader: R) -> Result<Vec<Triplet>, AugmentError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = (i + 2) as u64;
        let rec = rec.map_err(|e| AugmentError::Parse {
            line,
            message: e.to_string(),
        })?;
        let parse_err = |message: String| AugmentError::Parse { line, message };
        let mr = parse_mr(rec.get(0).unwrap_or_default()).map_err(|e| parse_err(e.to_string()))?;
        let label = match rec.get(2) {
            Some("0") => 0,
            Some("1") => 1,
            other => return Err(parse_err(format!("bad label {other:?}"))),
        };
        out.push(Triplet {
            mr,
            rf: rec.get(1).unwrap_or_default().to_string(),
            label,
            source: i,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mr::{build_slot_catalog, SAMPLE_ROWS};

    fn samples() -> Vec<CorpusPair> {
        SAMPLE_ROWS
            .iter()
            .map(|(m, r)| CorpusPair::new(m, r).unwrap())
            .collect()
    }

    fn catalog() -> SlotCatalog {
        build_slot_catalog(samples().iter().map(|p| &p.mr)).unwrap()
    }

    #[test]
    fn omission_of_three_slot_mr() {
        let pairs = &samples()[..1];
        let cfg = AugmentConfig::new(7, AugmentMode::Omission);
        let out = make_omission_dataset(pairs, &catalog(), &cfg).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(out[0].label, 1);
        let added: Vec<SlotType> = out[1..]
            .iter()
            .map(|t| {
                assert_eq!(t.label, 0);
                assert_eq!(t.rf, pairs[0].rf);
                let d = diff_slots(&pairs[0].mr, &t.mr);
                assert!(d.removed.is_empty() && d.changed.is_empty());
                assert_eq!(d.added.len(), 1);
                *d.added.keys().next().unwrap()
            })
            .collect();
        assert_eq!(
            added,
            [
                SlotType::Food,
                SlotType::PriceRange,
                SlotType::CustomerRating,
                SlotType::FamilyFriendly,
                SlotType::Near
            ]
        );
    }

    #[test]
    fn full_mr_has_no_omission_negatives() {
        let pairs = &samples()[5..];
        let out = make_omission_dataset(
            pairs,
            &catalog(),
            &AugmentConfig::new(1, AugmentMode::Omission),
        )
        .unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn missing_catalog_slot() {
        let pairs = &samples()[..1];
        let sparse = build_slot_catalog([&pairs[0].mr]).unwrap();
        let err = make_omission_dataset(
            pairs,
            &sparse,
            &AugmentConfig::new(1, AugmentMode::Omission),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            AugmentError::CatalogMissingSlot(SlotType::Food)
        ));
    }

    #[test]
    fn addition_counts() {
        let pairs = samples();
        let cfg = AugmentConfig::new(1, AugmentMode::Addition);
        let three = make_addition_dataset(&pairs[..1], &cfg).unwrap();
        assert_eq!(three.iter().filter(|t| t.label == 0).count(), 2);
        let eight = make_addition_dataset(&pairs[5..], &cfg).unwrap();
        assert_eq!(eight.iter().filter(|t| t.label == 0).count(), 7);
        for t in eight.iter().filter(|t| t.label == 0) {
            let d = diff_slots(&pairs[5].mr, &t.mr);
            assert_eq!(d.removed.len(), 1);
            assert!(!d.removed.contains_key(&SlotType::Name));
        }
        let lone = CorpusPair::new("name[X]", "X.").unwrap();
        assert!(matches!(
            make_addition_dataset(&[lone], &cfg),
            Err(AugmentError::TooFewSlots(0))
        ));
    }

    #[test]
    fn balance_replicates_positive() {
        let pairs = &samples()[..1];
        let out = make_omission_dataset(
            pairs,
            &catalog(),
            &AugmentConfig::new(3, AugmentMode::Omission),
        )
        .unwrap();
        let balanced = balance(&out);
        assert_eq!(balanced.len(), 10);
        assert_eq!(balanced.iter().filter(|t| t.label == 1).count(), 5);

        let lone = vec![out[0].clone()];
        assert_eq!(balance(&lone), lone);
    }

    #[test]
    fn deterministic_given_seed() {
        let pairs = samples();
        let cfg = AugmentConfig::new(42, AugmentMode::Omission);
        let a = make_omission_dataset(&pairs, &catalog(), &cfg).unwrap();
        let b = make_omission_dataset(&pairs, &catalog(), &cfg).unwrap();
        assert_eq!(a, b);
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_triplets_csv(&mut x, &a).unwrap();
        write_triplets_csv(&mut y, &b).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn triplet_csv_round_trip() {
        let pairs = samples();
        let out =
            make_addition_dataset(&pairs, &AugmentConfig::new(0, AugmentMode::Addition)).unwrap();
        let mut buf = Vec::new();
        write_triplets_csv(&mut buf, &out).unwrap();
        let back = read_triplets_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), out.len());
        for (a, b) in back.iter().zip(&out) {
            assert_eq!((&a.mr, &a.rf, a.label), (&b.mr, &b.rf, b.label));
        }
    }
}
