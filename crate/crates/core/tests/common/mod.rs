#![allow(dead_code)]

use char2char::dataset::CorpusPair;
use char2char::mr::{serialize_mr, MeaningRepresentation, SlotType};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NAMES: &[&str] = &[
    "The Eagle",
    "Blue Spice",
    "The Mill",
    "Aromi",
    "Zizzi",
    "Cotto",
    "The Phoenix",
    "Alimentum",
    "Giraffe",
    "Wildwood",
];
pub const EAT_TYPES: &[&str] = &["pub", "restaurant", "coffee shop"];
pub const FOODS: &[&str] = &[
    "Italian", "French", "Chinese", "Indian", "English", "Japanese",
];
pub const PRICES: &[&str] = &[
    "cheap",
    "moderate",
    "less than £20",
    "more than £30",
    "£20-25",
];
pub const RATINGS: &[&str] = &["low", "average", "1 out of 5", "3 out of 5", "5 out of 5"];
pub const AREAS: &[&str] = &["riverside", "city centre"];
pub const FAMILY: &[&str] = &["yes", "no"];
pub const NEARS: &[&str] = &[
    "Burger King",
    "Café Rouge",
    "The Sorrento",
    "Avalon",
    "Raja Indian Cuisine",
];

pub fn values(slot: SlotType) -> &'static [&'static str] {
    match slot {
        SlotType::Name => NAMES,
        SlotType::EatType => EAT_TYPES,
        SlotType::Food => FOODS,
        SlotType::PriceRange => PRICES,
        SlotType::CustomerRating => RATINGS,
        SlotType::Area => AREAS,
        SlotType::FamilyFriendly => FAMILY,
        SlotType::Near => NEARS,
    }
}

/// A random E2E-style MR with a name and between `min` and `max` slots in total.
pub fn random_mr(rng: &mut ChaCha8Rng, min: usize, max: usize) -> MeaningRepresentation {
    let n = rng.random_range(min..=max);
    let mut slots = SlotType::FEATURE_SLOTS.to_vec();
    slots.shuffle(rng);
    let mut pairs = vec![(SlotType::Name, *NAMES.choose(rng).unwrap())];
    for &s in slots.iter().take(n - 1) {
        pairs.push((s, *values(s).choose(rng).unwrap()));
    }
    MeaningRepresentation::from_pairs(pairs).unwrap()
}

/// Clause realizing one non-name slot.
pub fn clause(slot: SlotType, value: &str) -> String {
    match slot {
        SlotType::Name | SlotType::EatType => String::new(),
        SlotType::Food => format!(" serving {value} food"),
        SlotType::PriceRange => format!(" with {value} prices"),
        SlotType::CustomerRating => format!(" rated {value}"),
        SlotType::Area => format!(" in the {value}"),
        SlotType::FamilyFriendly if value == "yes" => " that is family friendly".into(),
        SlotType::FamilyFriendly => " that is not family friendly".into(),
        SlotType::Near => format!(" near {value}"),
    }
}

/// Deterministic utterance realizing every slot of `mr` except `skip`.
pub fn realize(mr: &MeaningRepresentation, skip: Option<SlotType>) -> String {
    let name = mr.get(SlotType::Name).unwrap_or("It");
    let head = match mr
        .get(SlotType::EatType)
        .filter(|_| skip != Some(SlotType::EatType))
    {
        Some(t) => format!("{name} is a {t}"),
        None => format!("{name} is a place"),
    };
    let mut out = head;
    for (slot, value) in mr.iter() {
        if Some(slot) != skip {
            out.push_str(&clause(slot, value));
        }
    }
    out.push('.');
    out
}

/// `n` pairs with distinct MRs, references from [`realize`].
pub fn grammar_corpus(seed: u64, n: usize, min: usize, max: usize) -> Vec<CorpusPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mr = random_mr(&mut rng, min, max);
        if seen.insert(serialize_mr(&mr)) {
            out.push(CorpusPair {
                mr_text: serialize_mr(&mr),
                rf: realize(&mr, None),
                mr,
            });
        }
    }
    out
}
