//! Injectable faults: truncated statements, stale replicas and format
//! corruption of routed data.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agent::{StatementFaults, StatementSite};
use crate::model::{DataName, FormatTag, ParseError, TaskId, ValidatedSpec};

/// Truncates `task` before statement `statement` on attempt `attempt`
/// (1-based, counted per resource). Faults apply to the task's original
/// resource unless `alternate` is set.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatementFault {
    pub task: TaskId,
    pub attempt: u32,
    pub statement: u32,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub alternate: bool,
}

/// Seeds `holder` with an out-of-date replica of `data` before the run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaleReplica {
    pub data: DataName,
    pub holder: TaskId,
    pub version: u32,
}

/// Every routed copy of `data` arrives tagged `corrupted`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatCorruption {
    pub data: DataName,
    #[serde(rename = "as")]
    pub corrupted: FormatTag,
    pub correctable: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultPlan {
    #[serde(default)]
    pub statement_faults: Vec<StatementFault>,
    #[serde(default)]
    pub stale_replicas: Vec<StaleReplica>,
    #[serde(default)]
    pub format_corruptions: Vec<FormatCorruption>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultSite<'a> {
    Statement { task: &'a TaskId, attempt: u32, on_alternate: bool, index: u32 },
    Replica { data: &'a DataName, holder: &'a TaskId },
    Transfer { data: &'a DataName },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultDecision {
    Clear,
    Truncate,
    SeedStale { version: u32 },
    Corrupt { format: FormatTag, correctable: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum PlanViolation {
    UnknownTask { task: TaskId },
    AttemptZero { task: TaskId },
    StatementOutOfRange { task: TaskId, statement: u32, t_e: u32 },
    UnknownData { data: DataName },
    HolderNotConsumer { data: DataName, holder: TaskId },
    VersionZero { data: DataName, holder: TaskId },
    DuplicateStale { data: DataName, holder: TaskId },
    CorruptionIsDeclaredFormat { data: DataName, format: FormatTag },
    DuplicateCorruption { data: DataName },
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use PlanViolation::*;
        match self {
            UnknownTask { task } => write!(f, "statement fault names unknown task {task}"),
            AttemptZero { task } => write!(f, "statement fault for {task}: attempts are numbered from 1"),
            StatementOutOfRange { task, statement, t_e } => {
                write!(f, "statement fault for {task}: index {statement} is not below t_e = {t_e}")
            }
            UnknownData { data } => write!(f, "{data} is not produced by any task"),
            HolderNotConsumer { data, holder } => {
                write!(f, "stale replica of {data}: {holder} does not consume it from its producer")
            }
            VersionZero { data, holder } => write!(f, "stale replica of {data} at {holder}: versions start at 1"),
            DuplicateStale { data, holder } => write!(f, "stale replica of {data} at {holder} listed twice"),
            CorruptionIsDeclaredFormat { data, format } => {
                write!(f, "corruption of {data} uses its declared format {format}")
            }
            DuplicateCorruption { data } => write!(f, "corruption of {data} listed twice"),
        }
    }
}

impl FaultPlan {
    pub fn parse(text: &str) -> Result<FaultPlan, ParseError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fault plans always serialize")
    }

    pub fn is_empty(&self) -> bool {
        self.statement_faults.is_empty() && self.stale_replicas.is_empty() && self.format_corruptions.is_empty()
    }

    /// Pure lookup: does the plan fire at `site`?
    pub fn apply_fault(&self, site: FaultSite<'_>) -> FaultDecision {
        match site {
            FaultSite::Statement { task, attempt, on_alternate, index } => {
                let fires = self.statement_faults.iter().any(|f| {
                    &f.task == task && f.attempt == attempt && f.statement == index && f.alternate == on_alternate
                });
                if fires {
                    FaultDecision::Truncate
                } else {
                    FaultDecision::Clear
                }
            }
            FaultSite::Replica { data, holder } => self
                .stale_replicas
                .iter()
                .find(|s| &s.data == data && &s.holder == holder)
                .map_or(FaultDecision::Clear, |s| FaultDecision::SeedStale { version: s.version }),
            FaultSite::Transfer { data } => {
                self.format_corruptions.iter().find(|c| &c.data == data).map_or(FaultDecision::Clear, |c| {
                    FaultDecision::Corrupt { format: c.corrupted, correctable: c.correctable }
                })
            }
        }
    }

    /// Checks the plan against a process. A stale replica must sit at a task
    /// that consumes the data from its producer, so validation there will
    /// find it.
    pub fn check(&self, spec: &ValidatedSpec) -> Result<(), Vec<PlanViolation>> {
        let mut out = Vec::new();
        for f in &self.statement_faults {
            match spec.task(&f.task) {
                None => out.push(PlanViolation::UnknownTask { task: f.task.clone() }),
                Some(t) => {
                    if f.attempt == 0 {
                        out.push(PlanViolation::AttemptZero { task: f.task.clone() });
                    }
                    if f.statement >= t.statement_count {
                        out.push(PlanViolation::StatementOutOfRange {
                            task: f.task.clone(),
                            statement: f.statement,
                            t_e: t.statement_count,
                        });
                    }
                }
            }
        }

        let decls = spec.data_decls();
        let declared = |name: &DataName| decls.iter().find(|d| &d.name == name);

        let mut seen = BTreeSet::new();
        for s in &self.stale_replicas {
            if !seen.insert((&s.data, &s.holder)) {
                out.push(PlanViolation::DuplicateStale { data: s.data.clone(), holder: s.holder.clone() });
            }
            if s.version == 0 {
                out.push(PlanViolation::VersionZero { data: s.data.clone(), holder: s.holder.clone() });
            }
            let Some(decl) = declared(&s.data) else {
                out.push(PlanViolation::UnknownData { data: s.data.clone() });
                continue;
            };
            let consumes = spec
                .task(&s.holder)
                .and_then(|t| t.input(&s.data))
                .is_some_and(|i| i.source.producer() == Some(&decl.producer));
            if !consumes {
                out.push(PlanViolation::HolderNotConsumer { data: s.data.clone(), holder: s.holder.clone() });
            }
        }

        let mut seen = BTreeSet::new();
        for c in &self.format_corruptions {
            if !seen.insert(&c.data) {
                out.push(PlanViolation::DuplicateCorruption { data: c.data.clone() });
            }
            match declared(&c.data) {
                None => out.push(PlanViolation::UnknownData { data: c.data.clone() }),
                Some(d) if d.format == c.corrupted => {
                    out.push(PlanViolation::CorruptionIsDeclaredFormat { data: c.data.clone(), format: c.corrupted })
                }
                Some(_) => {}
            }
        }

        if out.is_empty() {
            Ok(())
        } else {
            out.sort();
            out.dedup();
            Err(out)
        }
    }
}

impl StatementFaults for FaultPlan {
    fn truncates(&self, site: &StatementSite<'_>) -> bool {
        self.apply_fault(FaultSite::Statement {
            task: site.task,
            attempt: site.attempt,
            on_alternate: site.on_alternate,
            index: site.index,
        }) == FaultDecision::Truncate
    }
}
