use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Symbol table mapping strings to dense ids.
///
/// Tables built with [`Vocab::with_specials`] reserve the leading ids for
/// special symbols; the first two are conventionally `NONE` and `UNK`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

pub const NONE: &str = "<none>";
pub const UNK: &str = "<unk>";
pub const NONE_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_specials(specials: &[&str]) -> Self {
        let mut v = Self::new();
        for s in specials {
            v.add(s);
        }
        v
    }

    pub fn add(&mut self, symbol: &str) -> u32 {
        if let Some(&id) = self.index.get(symbol) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.symbols.push(symbol.to_string());
        self.index.insert(symbol.to_string(), id);
        id
    }

    pub fn get(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    /// Id of `symbol`, or [`UNK_ID`] when absent.
    pub fn lookup(&self, symbol: &str) -> u32 {
        self.get(symbol).unwrap_or(UNK_ID)
    }

    pub fn symbol(&self, id: u32) -> &str {
        &self.symbols[id as usize]
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.symbols == other.symbols
    }
}

impl From<Vec<String>> for Vocab {
    fn from(symbols: Vec<String>) -> Self {
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Vocab { symbols, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.symbols
    }
}
