//! Tokenized instructions: a verb, a concept token and a spatial token.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VERBS: &[&str] = &["<null>", "put", "stack", "open"];
pub const CONCEPTS: &[&str] = &["<null>", "<unk>", "green", "red", "blue", "yellow", "banana", "apple"];
pub const SPATIALS: &[&str] = &["<null>", "<unk>", "left", "right"];

pub const NULL: u16 = 0;
/// Reserved for probing; never emitted by any dataset generator.
pub const UNKNOWN: u16 = 1;

pub mod verb {
    pub const PUT: u16 = 1;
    pub const STACK: u16 = 2;
    pub const OPEN: u16 = 3;
}

pub mod concept {
    pub const GREEN: u16 = 2;
    pub const RED: u16 = 3;
    pub const BLUE: u16 = 4;
    pub const YELLOW: u16 = 5;
    pub const BANANA: u16 = 6;
    pub const APPLE: u16 = 7;
}

pub mod spatial {
    pub const LEFT: u16 = 2;
    pub const RIGHT: u16 = 3;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Prompt {
    pub verb: u16,
    pub concept: u16,
    pub spatial: u16,
}

impl Prompt {
    pub const fn new(verb: u16, concept: u16, spatial: u16) -> Self {
        Prompt { verb, concept, spatial }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |id: u16, table: &[&str], what: &str| {
            if (id as usize) < table.len() {
                Ok(())
            } else {
                Err(Error::Validation(format!("{what} token {id} outside vocabulary of {}", table.len())))
            }
        };
        check(self.verb, VERBS, "verb")?;
        check(self.concept, CONCEPTS, "concept")?;
        check(self.spatial, SPATIALS, "spatial")
    }

    pub fn with_concept(self, concept: u16) -> Self {
        Prompt { concept, ..self }
    }

    pub fn with_spatial(self, spatial: u16) -> Self {
        Prompt { spatial, ..self }
    }

    pub fn has_unknown(&self) -> bool {
        self.concept == UNKNOWN || self.spatial == UNKNOWN
    }

    /// Parses `verb/concept/spatial`, e.g. `put/green/-` or `put/-/left`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('/').collect();
        if parts.len() != 3 {
            return Err(Error::Validation(format!("prompt `{s}` is not verb/concept/spatial")));
        }
        let lookup = |tok: &str, table: &[&str], what: &str| -> Result<u16> {
            let tok = match tok {
                "-" | "" => "<null>",
                "?" => "<unk>",
                t => t,
            };
            table
                .iter()
                .position(|t| *t == tok)
                .map(|i| i as u16)
                .ok_or_else(|| Error::Validation(format!("unknown {what} `{tok}` in prompt `{s}`")))
        };
        Ok(Prompt {
            verb: lookup(parts[0], VERBS, "verb")?,
            concept: lookup(parts[1], CONCEPTS, "concept")?,
            spatial: lookup(parts[2], SPATIALS, "spatial")?,
        })
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |id: u16, table: &[&str]| match table.get(id as usize) {
            Some(&"<null>") => "-".to_string(),
            Some(&"<unk>") => "?".to_string(),
            Some(t) => t.to_string(),
            None => format!("#{id}"),
        };
        write!(
            f,
            "{}/{}/{}",
            name(self.verb, VERBS),
            name(self.concept, CONCEPTS),
            name(self.spatial, SPATIALS)
        )
    }
}
