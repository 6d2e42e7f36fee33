//! Sectioned item bank and the three item-selection rules used by the
//! adaptive session: a random near-default first item, a correctness
//! conditioned second item, and nearest-difficulty items thereafter.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irt::{Ability, ItemParams};

pub type ItemId = u32;
pub type SectionId = u32;

/// Sections smaller than this load with a warning.
pub const RECOMMENDED_SECTION_SIZE: usize = 40;
/// Tolerance for recognizing an item that still carries the defaults.
pub const DEFAULT_MATCH_TOL: f64 = 1e-9;
/// Difficulty predicate for one band of the second-item rule.
type Band = fn(f64) -> bool;

pub const INITIAL_RANGE: (f64, f64) = (-0.25, 0.25);
pub const HARDER_RANGE: (f64, f64) = (0.5, 1.0);
pub const EASIER_RANGE: (f64, f64) = (-1.0, -0.5);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Item {
    pub item_id: ItemId,
    pub section_id: SectionId,
    pub params: ItemParams,
}

impl Item {
    pub fn new(item_id: ItemId, section_id: SectionId, params: ItemParams) -> Self {
        Self { item_id, section_id, params }
    }

    #[inline]
    pub fn b(&self) -> f64 {
        self.params.b()
    }
}

/// Immutable collection of items grouped by section. Items within a section
/// are kept in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemBank {
    sections: BTreeMap<SectionId, Vec<Item>>,
    index: BTreeMap<ItemId, (SectionId, usize)>,
}

#[derive(Serialize, Deserialize)]
struct BankFile {
    sections: Vec<SectionFile>,
}

#[derive(Serialize, Deserialize)]
struct SectionFile {
    section_id: SectionId,
    items: Vec<ItemFile>,
}

#[derive(Serialize, Deserialize)]
struct ItemFile {
    item_id: ItemId,
    a: f64,
    b: f64,
}

impl ItemBank {
    pub fn new(items: impl IntoIterator<Item = Item>) -> Result<Self> {
        let mut sections: BTreeMap<SectionId, Vec<Item>> = BTreeMap::new();
        let mut seen = HashSet::new();
        for item in items {
            if !seen.insert(item.item_id) {
                return Err(Error::DuplicateItem(item.item_id));
            }
            sections.entry(item.section_id).or_default().push(item);
        }
        let mut index = BTreeMap::new();
        for (&sid, items) in sections.iter_mut() {
            items.sort_by_key(|it| it.item_id);
            for (pos, it) in items.iter().enumerate() {
                index.insert(it.item_id, (sid, pos));
            }
        }
        Ok(Self { sections, index })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: BankFile = serde_json::from_str(text)?;
        let mut items = Vec::new();
        for section in file.sections {
            if section.items.is_empty() {
                return Err(Error::invalid(format!("section {} has no items", section.section_id)));
            }
            for it in section.items {
                let params = ItemParams::new(it.a, it.b)
                    .map_err(|e| Error::invalid(format!("item {}: {e}", it.item_id)))?;
                items.push(Item::new(it.item_id, section.section_id, params));
            }
        }
        Self::new(items)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let file = BankFile {
            sections: self
                .sections
                .iter()
                .map(|(&section_id, items)| SectionFile {
                    section_id,
                    items: items
                        .iter()
                        .map(|it| ItemFile {
                            item_id: it.item_id,
                            a: it.params.a(),
                            b: it.params.b(),
                        })
                        .collect(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("bank serializes");
        s.push('\n');
        s
    }

    /// Human-readable warnings about sections below the recommended size.
    pub fn warnings(&self) -> Vec<String> {
        self.sections
            .iter()
            .filter(|(_, items)| items.len() < RECOMMENDED_SECTION_SIZE)
            .map(|(sid, items)| {
                format!(
                    "section {sid} has {} items; at least {RECOMMENDED_SECTION_SIZE} are recommended",
                    items.len()
                )
            })
            .collect()
    }

    pub fn section(&self, section: SectionId) -> Result<&[Item]> {
        self.sections
            .get(&section)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownSection(section))
    }

    pub fn section_ids(&self) -> impl Iterator<Item = SectionId> + '_ {
        self.sections.keys().copied()
    }

    pub fn item(&self, item_id: ItemId) -> Option<&Item> {
        self.index
            .get(&item_id)
            .map(|&(sid, pos)| &self.sections[&sid][pos])
    }

    pub fn items(&self) -> impl Iterator<Item = &Item> {
        self.sections.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

fn is_default(item: &Item) -> bool {
    (item.params.a() - 1.0).abs() <= DEFAULT_MATCH_TOL && item.params.b().abs() <= DEFAULT_MATCH_TOL
}

fn in_range(b: f64, (lo, hi): (f64, f64)) -> bool {
    lo <= b && b <= hi
}

fn choose<'a, R: Rng + ?Sized>(candidates: &[&'a Item], rng: &mut R) -> Option<&'a Item> {
    candidates.choose(rng).copied()
}

fn unused<'a>(items: &'a [Item], used: &HashSet<ItemId>) -> Vec<&'a Item> {
    items.iter().filter(|it| !used.contains(&it.item_id)).collect()
}

/// First item: a uniformly random default-parameter item if the section has
/// any, otherwise a uniformly random item with `-0.25 <= b <= 0.25`.
pub fn pick_initial<'a, R: Rng + ?Sized>(bank: &'a ItemBank, section: SectionId, rng: &mut R) -> Result<&'a Item> {
    let items = bank.section(section)?;
    let defaults: Vec<&Item> = items.iter().filter(|it| is_default(it)).collect();
    if let Some(it) = choose(&defaults, rng) {
        return Ok(it);
    }
    let near: Vec<&Item> = items.iter().filter(|it| in_range(it.b(), INITIAL_RANGE)).collect();
    choose(&near, rng).ok_or_else(|| Error::SelectionExhausted {
        section,
        reason: "no default item and no item with -0.25 <= b <= 0.25".into(),
    })
}

/// Second item, conditioned on whether the first answer was correct.
///
/// Correct: random unused item with `0.5 <= b <= 1.0`, else random unused
/// item with `b >= 0`. Incorrect mirrors this with `-1.0 <= b <= -0.5` and
/// `b <= 0`. If both ranges are empty, falls back to the unused item nearest
/// `b = 0`, the boundary of the widened range.
pub fn pick_second<'a, R: Rng + ?Sized>(
    bank: &'a ItemBank,
    section: SectionId,
    first_correct: bool,
    used: &HashSet<ItemId>,
    rng: &mut R,
) -> Result<&'a Item> {
    let pool = unused(bank.section(section)?, used);
    if pool.is_empty() {
        return Err(Error::SelectionExhausted {
            section,
            reason: "every item in the section has been used".into(),
        });
    }
    let (primary, widened): (Band, Band) = if first_correct {
        (|b| in_range(b, HARDER_RANGE), |b| b >= 0.0)
    } else {
        (|b| in_range(b, EASIER_RANGE), |b| b <= 0.0)
    };
    for accept in [primary, widened] {
        let candidates: Vec<&Item> = pool.iter().copied().filter(|it| accept(it.b())).collect();
        if let Some(it) = choose(&candidates, rng) {
            return Ok(it);
        }
    }
    Ok(nearest_in(&pool, 0.0, rng).expect("pool is non-empty"))
}

/// Unused item whose difficulty is closest to `theta_hat`; exact ties are
/// broken uniformly at random.
pub fn pick_nearest<'a, R: Rng + ?Sized>(
    bank: &'a ItemBank,
    section: SectionId,
    theta_hat: Ability,
    used: &HashSet<ItemId>,
    rng: &mut R,
) -> Result<&'a Item> {
    let pool = unused(bank.section(section)?, used);
    nearest_in(&pool, theta_hat.value(), rng).ok_or_else(|| Error::SelectionExhausted {
        section,
        reason: "every item in the section has been used".into(),
    })
}

fn nearest_in<'a, R: Rng + ?Sized>(pool: &[&'a Item], target: f64, rng: &mut R) -> Option<&'a Item> {
    let best = pool
        .iter()
        .map(|it| (it.b() - target).abs())
        .fold(f64::INFINITY, f64::min);
    let ties: Vec<&Item> = pool
        .iter()
        .copied()
        .filter(|it| (it.b() - target).abs() == best)
        .collect();
    choose(&ties, rng)
}
