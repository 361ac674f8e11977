//! Search space: candidate ops, cell topology, and the distribution over them.

pub mod cell;
pub mod dist;
pub mod ops;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use cell::{Cell, CellTopology, EdgeWeights};
pub use dist::{ArchDistribution, ArchSample, SampleMode};
pub use ops::OpKind;

use crate::error::{Error, Result};

/// How coupling cells share architecture logits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogitTying {
    /// Every flow step has its own distribution.
    #[default]
    PerStep,
    /// Steps within a block share one distribution.
    PerBlock,
    /// A single distribution for the whole model.
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    #[serde(default)]
    pub topology: CellTopology,
    #[serde(default = "default_ops")]
    pub ops: Vec<OpKind>,
    #[serde(default)]
    pub tying: LogitTying,
}

fn default_ops() -> Vec<OpKind> {
    OpKind::ALL.to_vec()
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            topology: CellTopology::default(),
            ops: default_ops(),
            tying: LogitTying::PerStep,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        if self.ops.is_empty() {
            return Err(Error::Parameter("search space has no candidate ops".into()));
        }
        let mut seen = self.ops.clone();
        seen.sort_by_key(|op| op.name());
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parameter("duplicate candidate op".into()));
        }
        Ok(())
    }

    pub fn num_slots(&self, blocks: usize, steps_per_block: usize) -> usize {
        match self.tying {
            LogitTying::PerStep => blocks * steps_per_block,
            LogitTying::PerBlock => blocks,
            LogitTying::Shared => 1,
        }
    }

    pub fn slot(&self, block: usize, step: usize, steps_per_block: usize) -> usize {
        match self.tying {
            LogitTying::PerStep => block * steps_per_block + step,
            LogitTying::PerBlock => block,
            LogitTying::Shared => 0,
        }
    }

    /// Distribution rows: one per `(slot, edge)`.
    pub fn num_rows(&self, blocks: usize, steps_per_block: usize) -> usize {
        self.num_slots(blocks, steps_per_block) * self.topology.num_edges()
    }

    /// Total number of discrete architectures.
    pub fn num_architectures(&self, rows: usize) -> Option<u128> {
        (self.ops.len() as u128).checked_pow(rows as u32)
    }

    fn header(&self, out: &mut String) {
        let names: Vec<&str> = self.ops.iter().map(|op| op.name()).collect();
        let _ = writeln!(out, "# ops: {}", names.join(" "));
    }

    fn check_rows(&self, rows: usize) -> Result<usize> {
        let e = self.topology.num_edges();
        if !rows.is_multiple_of(e) {
            return Err(Error::Shape(format!("{rows} rows do not divide into {e}-edge cells")));
        }
        Ok(rows / e)
    }

    /// One line per edge, `edge <i>-><j>: <p_0> <p_1> ...`, grouped by slot.
    pub fn export_distribution(&self, dist: &ArchDistribution) -> Result<String> {
        let slots = self.check_rows(dist.rows())?;
        let mut out = String::new();
        self.header(&mut out);
        let mut row = 0;
        for slot in 0..slots {
            let _ = writeln!(out, "# slot {slot}");
            for &(i, j) in self.topology.edges() {
                let probs: Vec<String> = dist.probs(row).iter().map(|p| format!("{p:.6}")).collect();
                let _ = writeln!(out, "edge {i}->{j}: {}", probs.join(" "));
                row += 1;
            }
        }
        Ok(out)
    }

    /// One line per edge, `edge <i>-><j>: <op>`, grouped by slot.
    pub fn export_sample(&self, sample: &ArchSample) -> Result<String> {
        let Some(choices) = sample.choices() else {
            return Err(Error::Usage("only discrete samples export as op names".into()));
        };
        let slots = self.check_rows(choices.len())?;
        let mut out = String::new();
        self.header(&mut out);
        let mut row = 0;
        for slot in 0..slots {
            let _ = writeln!(out, "# slot {slot}");
            for &(i, j) in self.topology.edges() {
                let _ = writeln!(out, "edge {i}->{j}: {}", self.ops[choices[row]]);
                row += 1;
            }
        }
        Ok(out)
    }

    /// Parses the output of [`export_sample`](Self::export_sample).
    pub fn parse_sample(&self, text: &str) -> Result<ArchSample> {
        let mut choices = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let rest = line
                .strip_prefix("edge ")
                .ok_or_else(|| Error::Data(format!("bad architecture line: {line}")))?;
            let (edge, op) = rest
                .split_once(':')
                .ok_or_else(|| Error::Data(format!("bad architecture line: {line}")))?;
            let expected = self.topology.edges()[choices.len() % self.topology.num_edges()];
            if edge.trim() != format!("{}->{}", expected.0, expected.1) {
                return Err(Error::Data(format!(
                    "expected edge {}->{}, found {}",
                    expected.0,
                    expected.1,
                    edge.trim()
                )));
            }
            let op = OpKind::from_name(op.trim())
                .ok_or_else(|| Error::Data(format!("unknown op {}", op.trim())))?;
            let idx = self
                .ops
                .iter()
                .position(|&o| o == op)
                .ok_or_else(|| Error::Data(format!("op {op} is not in the search space")))?;
            choices.push(idx);
        }
        self.check_rows(choices.len())?;
        ArchSample::discrete(choices, self.ops.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slots_follow_tying() {
        let mut space = SearchSpace::default();
        assert_eq!(space.num_rows(2, 4), 8 * 6);
        assert_eq!(space.slot(1, 2, 4), 6);
        space.tying = LogitTying::PerBlock;
        assert_eq!(space.num_rows(2, 4), 2 * 6);
        assert_eq!(space.slot(1, 2, 4), 1);
        space.tying = LogitTying::Shared;
        assert_eq!(space.num_rows(2, 4), 6);
    }

    #[test]
    fn sample_export_parses_back() {
        let space = SearchSpace::default();
        let dist = ArchDistribution::uniform(12, 9, 1.0).unwrap();
        let s = dist.sample_discrete(5);
        let text = space.export_sample(&s).unwrap();
        assert!(text.lines().any(|l| l.starts_with("edge 0->1: ")));
        let back = space.parse_sample(&text).unwrap();
        assert_eq!(back.choices(), s.choices());
    }

    #[test]
    fn distribution_export_lists_probabilities() {
        let space = SearchSpace {
            topology: CellTopology::single_edge(),
            ops: vec![OpKind::Zero, OpKind::Identity],
            tying: LogitTying::Shared,
        };
        let dist = ArchDistribution::from_probs(1, 2, &[0.25, 0.75], 1.0).unwrap();
        let text = space.export_distribution(&dist).unwrap();
        assert_eq!(text, "# ops: zero identity\n# slot 0\nedge 0->1: 0.250000 0.750000\n");
    }
}
