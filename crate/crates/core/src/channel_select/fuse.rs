use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// 1-based ranks, 1 for the largest score. Ties go to the lower index and
/// NaN scores rank last.
pub fn ranks_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let key = |i: usize| if scores[i].is_nan() { f64::NEG_INFINITY } else { scores[i] };
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    let mut ranks = vec![0; scores.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelScores {
    pub mi: Vec<f64>,
    pub gradient: Vec<f64>,
    pub se: Vec<f64>,
    pub mi_rank: Vec<usize>,
    pub gradient_rank: Vec<usize>,
    pub se_rank: Vec<usize>,
}

impl ChannelScores {
    pub fn new(mi: Vec<f64>, gradient: Vec<f64>, se: Vec<f64>) -> Result<Self> {
        let m = mi.len();
        if m == 0 {
            return Err(Error::EmptyInput("channel scores"));
        }
        if gradient.len() != m || se.len() != m {
            return Err(Error::Shape(format!(
                "score lengths differ: mi {m}, gradient {}, se {}",
                gradient.len(),
                se.len()
            )));
        }
        Ok(Self {
            mi_rank: ranks_descending(&mi),
            gradient_rank: ranks_descending(&gradient),
            se_rank: ranks_descending(&se),
            mi,
            gradient,
            se,
        })
    }

    pub fn channels(&self) -> usize {
        self.mi.len()
    }

    pub fn ranks(&self, c: usize) -> [usize; 3] {
        [self.mi_rank[c], self.gradient_rank[c], self.se_rank[c]]
    }

    pub fn median_rank(&self, c: usize) -> usize {
        let mut r = self.ranks(c);
        r.sort_unstable();
        r[1]
    }

    /// Methods placing channel `c` in the top half (rank ≤ M/2).
    pub fn top_half_votes(&self, c: usize) -> usize {
        let half = self.channels() as f64 / 2.0;
        self.ranks(c).iter().filter(|&&r| r as f64 <= half).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverrideAction {
    ForceIn,
    ForceOut,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverrideCriterion {
    Causality,
    Redundancy,
    Domain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Override {
    pub channel: usize,
    pub action: OverrideAction,
    /// Defaults to `domain` for `force_in` and `causality` for `force_out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<OverrideCriterion>,
    #[serde(default)]
    pub reason: String,
}

impl Override {
    pub fn criterion(&self) -> OverrideCriterion {
        self.criterion.unwrap_or(match self.action {
            OverrideAction::ForceIn => OverrideCriterion::Domain,
            OverrideAction::ForceOut => OverrideCriterion::Causality,
        })
    }
}

/// On-disk list of domain overrides (`[[override]]` tables).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideFile {
    #[serde(default, rename = "override")]
    pub overrides: Vec<Override>,
}

impl OverrideFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictCriterion {
    Consistency,
    CausalityOverride,
    RedundancyOverride,
    DomainOverride,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelVerdict {
    pub channel: usize,
    pub retained: bool,
    pub criterion: VerdictCriterion,
    pub median_rank: usize,
    pub top_half_votes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub scores: ChannelScores,
    pub retained: Vec<usize>,
    pub excluded: Vec<usize>,
    pub verdicts: Vec<ChannelVerdict>,
    /// Overrides that were applied, in file order.
    pub overrides: Vec<Override>,
}

/// Keeps channels with median rank ≤ M/2 that at least two methods place
/// in the top half, then applies the overrides.
pub fn fuse_select(scores: &ChannelScores, overrides: &[Override]) -> Result<SelectionReport> {
    let m = scores.channels();
    let mut by_channel: BTreeMap<usize, &Override> = BTreeMap::new();
    for o in overrides {
        if o.channel >= m {
            return Err(Error::InvalidArgument(format!("override for channel {} but only {m} channels", o.channel)));
        }
        let valid = matches!(
            (o.action, o.criterion()),
            (OverrideAction::ForceIn, OverrideCriterion::Domain)
                | (OverrideAction::ForceOut, OverrideCriterion::Causality | OverrideCriterion::Redundancy)
        );
        if !valid {
            return Err(Error::InvalidArgument(format!(
                "channel {}: {:?} cannot be justified by {:?}",
                o.channel,
                o.action,
                o.criterion()
            )));
        }
        match by_channel.get(&o.channel) {
            Some(prev) if prev.action != o.action => return Err(Error::ConflictingOverride(o.channel)),
            Some(_) => {}
            None => {
                by_channel.insert(o.channel, o);
            }
        }
    }
    let half = m as f64 / 2.0;
    let verdicts: Vec<ChannelVerdict> = (0..m)
        .map(|c| {
            let median_rank = scores.median_rank(c);
            let top_half_votes = scores.top_half_votes(c);
            let (retained, criterion, reason) = match by_channel.get(&c) {
                Some(o) => {
                    let crit = match o.criterion() {
                        OverrideCriterion::Causality => VerdictCriterion::CausalityOverride,
                        OverrideCriterion::Redundancy => VerdictCriterion::RedundancyOverride,
                        OverrideCriterion::Domain => VerdictCriterion::DomainOverride,
                    };
                    (o.action == OverrideAction::ForceIn, crit, Some(o.reason.clone()))
                }
                None => (median_rank as f64 <= half && top_half_votes >= 2, VerdictCriterion::Consistency, None),
            };
            ChannelVerdict { channel: c, retained, criterion, median_rank, top_half_votes, reason }
        })
        .collect();
    let retained = verdicts.iter().filter(|v| v.retained).map(|v| v.channel).collect();
    let excluded = verdicts.iter().filter(|v| !v.retained).map(|v| v.channel).collect();
    let applied = by_channel.values().map(|&o| o.clone()).collect();
    Ok(SelectionReport { scores: scores.clone(), retained, excluded, verdicts, overrides: applied })
}
