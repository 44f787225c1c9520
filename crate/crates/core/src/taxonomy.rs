//! Attribute vocabulary.
//!
//! A taxonomy is a list of categories plus an ordered list of attribute
//! groups. Every symbol (category, attribute class, and the reserved
//! end-of-sequence marker) gets a dense index:
//!
//! ```text
//! [ categories in file order | group 0 classes | group 1 classes | ... | <EOS> ]
//! ```
//!
//! Sequences decoded by the attribute model always start with the category
//! symbol and then list attributes in group order.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Reserved end-of-sequence symbol. Taxonomy files may not use it.
pub const EOS: &str = "<EOS>";

/// One attribute group as it appears in a taxonomy file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeGroup {
    pub name: String,
    pub classes: Vec<String>,
    /// Categories this group applies to; empty means every category.
    #[serde(default)]
    pub applicable_categories: Vec<String>,
}

impl AttributeGroup {
    pub fn applies_to(&self, category: &str) -> bool {
        self.applicable_categories.is_empty()
            || self.applicable_categories.iter().any(|c| c == category)
    }
}

/// The declarative taxonomy document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyDef {
    pub categories: Vec<String>,
    pub groups: Vec<AttributeGroup>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoCategories,
    EmptySymbol,
    ReservedSymbol(String),
    DuplicateSymbol(String),
    DuplicateGroup(String),
    EmptyGroup(String),
    UnknownApplicableCategory { group: String, category: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoCategories => write!(f, "category list is empty"),
            Violation::EmptySymbol => write!(f, "empty symbol name"),
            Violation::ReservedSymbol(s) => write!(f, "`{s}` is reserved"),
            Violation::DuplicateSymbol(s) => write!(f, "duplicate symbol `{s}`"),
            Violation::DuplicateGroup(g) => write!(f, "duplicate group name `{g}`"),
            Violation::EmptyGroup(g) => write!(f, "group `{g}` has no classes"),
            Violation::UnknownApplicableCategory { group, category } => write!(
                f,
                "group `{group}` references unknown category `{category}`"
            ),
        }
    }
}

impl TaxonomyDef {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Lists every structural problem. An empty report means the document
    /// can be turned into a [`Taxonomy`].
    pub fn validate(&self) -> Vec<Violation> {
        let mut report = Vec::new();
        if self.categories.is_empty() {
            report.push(Violation::NoCategories);
        }

        let mut seen = HashSet::new();
        let mut reported = HashSet::new();
        let symbols = self
            .categories
            .iter()
            .chain(self.groups.iter().flat_map(|g| g.classes.iter()));
        for s in symbols {
            if s.is_empty() {
                report.push(Violation::EmptySymbol);
            } else if s == EOS {
                if reported.insert(s.as_str()) {
                    report.push(Violation::ReservedSymbol(s.clone()));
                }
            } else if !seen.insert(s.as_str()) && reported.insert(s.as_str()) {
                report.push(Violation::DuplicateSymbol(s.clone()));
            }
        }

        let categories: HashSet<&str> = self.categories.iter().map(String::as_str).collect();
        let mut group_names = HashSet::new();
        for g in &self.groups {
            if !group_names.insert(g.name.as_str()) {
                report.push(Violation::DuplicateGroup(g.name.clone()));
            }
            if g.classes.is_empty() {
                report.push(Violation::EmptyGroup(g.name.clone()));
            }
            for c in &g.applicable_categories {
                if !categories.contains(c.as_str()) {
                    report.push(Violation::UnknownApplicableCategory {
                        group: g.name.clone(),
                        category: c.clone(),
                    });
                }
            }
        }
        report
    }
}

/// What a symbol index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolKind {
    Category,
    Attribute { group: usize },
    Eos,
}

/// Category position followed by the groups applicable to that category,
/// in taxonomy order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceTemplate {
    pub category: usize,
    pub groups: Vec<usize>,
}

/// A validated, indexed taxonomy. Immutable once built.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    def: TaxonomyDef,
    symbols: Vec<String>,
    kinds: Vec<SymbolKind>,
    lookup: HashMap<String, usize>,
    /// Per group, the symbol index of its first class.
    group_offsets: Vec<usize>,
    hash: [u8; 32],
}

impl PartialEq for Taxonomy {
    fn eq(&self, other: &Self) -> bool {
        self.hash == other.hash && self.def == other.def
    }
}

impl Taxonomy {
    pub fn new(def: TaxonomyDef) -> Result<Self> {
        let report = def.validate();
        if !report.is_empty() {
            return Err(Error::InvalidTaxonomy(report));
        }

        let mut symbols = Vec::new();
        let mut kinds = Vec::new();
        for c in &def.categories {
            symbols.push(c.clone());
            kinds.push(SymbolKind::Category);
        }
        let mut group_offsets = Vec::with_capacity(def.groups.len());
        for (gi, g) in def.groups.iter().enumerate() {
            group_offsets.push(symbols.len());
            for c in &g.classes {
                symbols.push(c.clone());
                kinds.push(SymbolKind::Attribute { group: gi });
            }
        }
        symbols.push(EOS.to_string());
        kinds.push(SymbolKind::Eos);

        let lookup = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let canonical = serde_json::to_vec(&def)?;
        let hash: [u8; 32] = Sha256::digest(&canonical).into();

        Ok(Taxonomy {
            def,
            symbols,
            kinds,
            lookup,
            group_offsets,
            hash,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(TaxonomyDef::from_json(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(TaxonomyDef::from_path(path)?)
    }

    /// The example taxonomy shipped with the crate.
    pub fn example() -> Self {
        Self::from_json(include_str!("../data/taxonomy.json"))
            .expect("bundled taxonomy is valid")
    }

    pub fn def(&self) -> &TaxonomyDef {
        &self.def
    }

    pub fn categories(&self) -> &[String] {
        &self.def.categories
    }

    pub fn groups(&self) -> &[AttributeGroup] {
        &self.def.groups
    }

    pub fn num_categories(&self) -> usize {
        self.def.categories.len()
    }

    /// Categories + attribute classes + EOS.
    pub fn vocab_size(&self) -> usize {
        self.symbols.len()
    }

    pub fn eos(&self) -> usize {
        self.symbols.len() - 1
    }

    /// SHA-256 of the canonical JSON encoding; binds checkpoints and
    /// snapshots to the vocabulary they were built with.
    pub fn content_hash(&self) -> [u8; 32] {
        self.hash
    }

    pub fn symbol_index(&self, symbol: &str) -> Result<usize> {
        self.lookup
            .get(symbol)
            .copied()
            .ok_or_else(|| Error::UnknownSymbol(symbol.to_string()))
    }

    pub fn symbol(&self, index: usize) -> Result<&str> {
        self.symbols
            .get(index)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownSymbol(format!("#{index}")))
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn kind(&self, index: usize) -> Option<SymbolKind> {
        self.kinds.get(index).copied()
    }

    pub fn is_category(&self, index: usize) -> bool {
        index < self.num_categories()
    }

    pub fn category_index(&self, category: &str) -> Result<usize> {
        match self.lookup.get(category) {
            Some(&i) if self.is_category(i) => Ok(i),
            _ => Err(Error::UnknownCategory(category.to_string())),
        }
    }

    /// Symbol indices of the classes in group `group`.
    pub fn group_symbols(&self, group: usize) -> std::ops::Range<usize> {
        let start = self.group_offsets[group];
        start..start + self.def.groups[group].classes.len()
    }

    pub fn sequence_template(&self, category: &str) -> Result<SequenceTemplate> {
        let cat = self.category_index(category)?;
        let groups = self
            .def
            .groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.applies_to(category))
            .map(|(i, _)| i)
            .collect();
        Ok(SequenceTemplate {
            category: cat,
            groups,
        })
    }

    /// True when `attribute` may describe an item of category `category`
    /// (both as symbol indices). The category symbol itself counts.
    pub fn is_applicable(&self, category: usize, attribute: usize) -> bool {
        match self.kind(attribute) {
            Some(SymbolKind::Category) => attribute == category,
            Some(SymbolKind::Attribute { group }) => {
                self.is_category(category)
                    && self.def.groups[group].applies_to(&self.def.categories[category])
            }
            _ => false,
        }
    }

    /// Orders a category and its attributes into the canonical training
    /// sequence: category, attributes by group order, then EOS.
    pub fn canonical_sequence<S: AsRef<str>>(
        &self,
        category: &str,
        attributes: &[S],
    ) -> Result<Vec<usize>> {
        let cat = self.category_index(category)?;
        let mut attrs = Vec::with_capacity(attributes.len());
        let mut used_groups = HashSet::new();
        for a in attributes {
            let a = a.as_ref();
            let idx = self.symbol_index(a)?;
            if idx == cat {
                continue;
            }
            let group = match self.kinds[idx] {
                SymbolKind::Attribute { group } => group,
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "`{a}` is not an attribute class"
                    )))
                }
            };
            if !self.is_applicable(cat, idx) {
                return Err(Error::InvalidInput(format!(
                    "attribute `{a}` does not apply to category `{category}`"
                )));
            }
            if !used_groups.insert(group) {
                return Err(Error::InvalidInput(format!(
                    "more than one class of group `{}`",
                    self.def.groups[group].name
                )));
            }
            attrs.push(idx);
        }
        // Class indices are laid out in group order, so sorting by index is
        // sorting by group position.
        attrs.sort_unstable();
        let mut seq = Vec::with_capacity(attrs.len() + 2);
        seq.push(cat);
        seq.extend(attrs);
        seq.push(self.eos());
        Ok(seq)
    }

    /// Which symbols may follow `prefix` under the taxonomy grammar: a
    /// category first, then at most one class per applicable group, or EOS.
    pub fn admissible_next(&self, prefix: &[usize]) -> Vec<bool> {
        let mut allowed = vec![false; self.vocab_size()];
        let Some(&first) = prefix.first() else {
            allowed[..self.num_categories()].fill(true);
            return allowed;
        };
        if !self.is_category(first) {
            // Malformed prefix: only termination is sensible.
            allowed[self.eos()] = true;
            return allowed;
        }
        let used: HashSet<usize> = prefix
            .iter()
            .filter_map(|&s| match self.kind(s) {
                Some(SymbolKind::Attribute { group }) => Some(group),
                _ => None,
            })
            .collect();
        let category = &self.def.categories[first];
        for (gi, g) in self.def.groups.iter().enumerate() {
            if g.applies_to(category) && !used.contains(&gi) {
                for s in self.group_symbols(gi) {
                    allowed[s] = true;
                }
            }
        }
        allowed[self.eos()] = true;
        allowed
    }
}
