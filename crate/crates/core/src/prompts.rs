//! Retrieval tasks, their discrete prompts, and the prompted multi-task
//! training mixture.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Granularity, Tokenizer};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    DR,
    PR,
    SR,
    ER,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::DR, Task::PR, Task::SR, Task::ER];

    pub fn spec(self) -> &'static TaskSpec {
        &REGISTRY[self as usize]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::DR => "DR",
            Task::PR => "PR",
            Task::SR => "SR",
            Task::ER => "ER",
        }
    }

    pub fn for_granularity(g: Granularity) -> Task {
        match g {
            Granularity::Document => Task::DR,
            Granularity::Passage => Task::PR,
            Granularity::Sentence => Task::SR,
            Granularity::Entity => Task::ER,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown task '{s}' (expected DR, PR, SR or ER)")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSpec {
    pub task: Task,
    pub granularity: Granularity,
    pub discrete_prompt: &'static str,
    pub anchor_text: &'static str,
}

/// Prompt-token length recorded for continuous and hybrid prompt formats.
/// Their trained embeddings are not part of this crate.
pub const CONTINUOUS_PROMPT_LENGTH: usize = 6;

pub static REGISTRY: [TaskSpec; 4] = [
    TaskSpec {
        task: Task::DR,
        granularity: Granularity::Document,
        discrete_prompt: "Find the relevant document:",
        anchor_text: "document",
    },
    TaskSpec {
        task: Task::PR,
        granularity: Granularity::Passage,
        discrete_prompt: "Find the relevant passage:",
        anchor_text: "passage",
    },
    TaskSpec {
        task: Task::SR,
        granularity: Granularity::Sentence,
        discrete_prompt: "Find the relevant sentence:",
        anchor_text: "sentence",
    },
    TaskSpec {
        task: Task::ER,
        granularity: Granularity::Entity,
        discrete_prompt: "Find the relevant entity:",
        anchor_text: "entity",
    },
];

/// Every prompt string, for seeding a tokenizer vocabulary.
pub fn prompt_texts() -> impl Iterator<Item = &'static str> {
    REGISTRY.iter().map(|s| s.discrete_prompt)
}

/// Number of leading prompt tokens in every rendered input of `task`.
pub fn prompt_len(task: Task, tokenizer: &Tokenizer) -> usize {
    tokenizer.encode(task.spec().discrete_prompt).len()
}

/// Prompt tokens followed by query tokens.
pub fn render_input(task: Task, query: &str, tokenizer: &Tokenizer) -> Result<Vec<u32>> {
    if query.trim().is_empty() {
        return Err(Error::Prompt("empty query".into()));
    }
    let mut out = tokenizer.encode(task.spec().discrete_prompt);
    out.extend(tokenizer.encode(query));
    Ok(out)
}

/// A query with its task and gold contexts, as read from a queries file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold: Vec<u32>,
}

pub fn read_queries<R: BufRead>(reader: R) -> Result<Vec<QueryRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// One teacher-forcing target: prompted query to a single identifier n-gram.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub task: Task,
    pub query_id: String,
    pub input_tokens: Vec<u32>,
    /// Leading tokens of `input_tokens` that are the task prompt.
    #[serde(default)]
    pub prompt_len: usize,
    pub target_tokens: Vec<u32>,
}

/// Expands every query into one record per identifier of its gold
/// contexts. Queries are grouped by task and tasks are interleaved
/// round-robin in `DR, PR, SR, ER` order, one query at a time.
pub fn compile_mixture(
    queries: &[QueryRecord],
    default_task: Task,
    identifiers: &BTreeMap<u32, Vec<Vec<u32>>>,
    tokenizer: &Tokenizer,
) -> Result<Vec<TrainingRecord>> {
    let mut per_task: BTreeMap<Task, VecDeque<&QueryRecord>> = BTreeMap::new();
    for q in queries {
        per_task.entry(q.task.unwrap_or(default_task)).or_default().push_back(q);
    }
    let mut out = Vec::new();
    loop {
        let mut emitted = false;
        for (&task, queue) in per_task.iter_mut() {
            let Some(q) = queue.pop_front() else { continue };
            emitted = true;
            if q.gold.is_empty() {
                return Err(Error::Prompt(format!("query {} has no gold context", q.query_id)));
            }
            let input = render_input(task, &q.text, tokenizer)?;
            let prompt = prompt_len(task, tokenizer);
            for &gold in &q.gold {
                let grams = identifiers.get(&gold).ok_or_else(|| {
                    Error::Prompt(format!("no identifier set for context {gold} (query {})", q.query_id))
                })?;
                for g in grams {
                    out.push(TrainingRecord {
                        task,
                        query_id: q.query_id.clone(),
                        input_tokens: input.clone(),
                        prompt_len: prompt,
                        target_tokens: g.clone(),
                    });
                }
            }
        }
        if !emitted {
            break;
        }
    }
    Ok(out)
}

pub fn write_mixture<W: Write>(mut out: W, records: &[TrainingRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_mixture<R: BufRead>(reader: R) -> Result<Vec<TrainingRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
