//! Pairwise human judgments and their win/tie/lose tallies.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_io::{self, DataError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Win,
    Tie,
    Lose,
}

impl Verdict {
    pub fn flipped(self) -> Self {
        match self {
            Verdict::Win => Verdict::Lose,
            Verdict::Tie => Verdict::Tie,
            Verdict::Lose => Verdict::Win,
        }
    }
}

/// One annotator's verdict, from `system_a`'s point of view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanEvalRecord {
    pub question_id: String,
    pub system_a: String,
    pub system_b: String,
    pub verdict: Verdict,
    pub annotator: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinTieLose {
    pub win: usize,
    pub tie: usize,
    pub lose: usize,
}

impl WinTieLose {
    fn add(&mut self, v: Verdict) {
        match v {
            Verdict::Win => self.win += 1,
            Verdict::Tie => self.tie += 1,
            Verdict::Lose => self.lose += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.win + self.tie + self.lose
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairTally {
    pub system_a: String,
    pub system_b: String,
    #[serde(flatten)]
    pub counts: WinTieLose,
}

/// Counts for every ordered pair of systems that met, in both
/// orientations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HumanTally {
    pairs: BTreeMap<(String, String), WinTieLose>,
}

impl HumanTally {
    pub fn get(&self, system_a: &str, system_b: &str) -> Option<WinTieLose> {
        self.pairs
            .get(&(system_a.to_string(), system_b.to_string()))
            .copied()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// A's wins against B equal B's losses against A, and ties agree.
    pub fn is_consistent(&self) -> bool {
        self.pairs.iter().all(|((a, b), c)| {
            self.get(b, a)
                .is_some_and(|r| r.win == c.lose && r.lose == c.win && r.tie == c.tie)
        })
    }

    pub fn to_rows(&self) -> Vec<PairTally> {
        self.pairs
            .iter()
            .map(|((a, b), c)| PairTally {
                system_a: a.clone(),
                system_b: b.clone(),
                counts: *c,
            })
            .collect()
    }
}

pub fn tally_human_eval(records: &[HumanEvalRecord]) -> HumanTally {
    let mut tally = HumanTally::default();
    for r in records {
        tally
            .pairs
            .entry((r.system_a.clone(), r.system_b.clone()))
            .or_default()
            .add(r.verdict);
        tally
            .pairs
            .entry((r.system_b.clone(), r.system_a.clone()))
            .or_default()
            .add(r.verdict.flipped());
    }
    debug_assert!(tally.is_consistent());
    tally
}

pub fn load_human_eval(path: &Path) -> Result<Vec<HumanEvalRecord>, DataError> {
    Ok(data_io::read_jsonl(path)?
        .into_iter()
        .map(|(_, r)| r)
        .collect())
}
