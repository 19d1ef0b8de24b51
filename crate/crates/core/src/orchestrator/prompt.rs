use std::fmt::Write as _;

use crate::memory::EpisodeRecord;
use crate::skills::SkillRecord;
use crate::task::{InterfaceKind, TaskSpec};
use crate::validator::{Outcome, ValidationReport};

/// Fence tags accepted as the target language.
const TARGET_TAGS: &[&str] = &["python", "python3", "py"];

/// Characters of a retrieved candidate or report detail shown in a prompt.
const EVIDENCE_CHARS: usize = 4000;

struct Block {
    tag: String,
    body: String,
}

fn fenced_blocks(response: &str) -> Vec<Block> {
    let mut blocks = Vec::new();
    let mut open: Option<(String, Vec<&str>)> = None;
    for line in response.lines() {
        let trimmed = line.trim();
        match open.take() {
            None => {
                if let Some(info) = trimmed.strip_prefix("```") {
                    let tag = info.split_whitespace().next().unwrap_or("").to_lowercase();
                    open = Some((tag, Vec::new()));
                }
            }
            Some((tag, mut lines)) => {
                if trimmed == "```" {
                    blocks.push(Block {
                        tag,
                        body: lines.join("\n"),
                    });
                } else {
                    lines.push(line);
                    open = Some((tag, lines));
                }
            }
        }
    }
    blocks
}

/// First fenced block tagged as the target language, else the longest
/// untagged block (earliest on ties), else `None`. Unterminated fences are
/// ignored.
pub fn extract_code(response: &str) -> Option<String> {
    let blocks = fenced_blocks(response);
    if let Some(b) = blocks.iter().find(|b| TARGET_TAGS.contains(&b.tag.as_str())) {
        return Some(b.body.clone());
    }
    let mut best: Option<&Block> = None;
    for b in blocks.iter().filter(|b| b.tag.is_empty()) {
        if best.is_none_or(|cur| b.body.lines().count() > cur.body.lines().count()) {
            best = Some(b);
        }
    }
    best.map(|b| b.body.clone())
}

/// Prefix of at most `max` characters, marked when cut.
pub fn truncate_chars(text: &str, max: usize) -> String {
    match text.char_indices().nth(max) {
        None => text.to_string(),
        Some((idx, _)) => format!("{}\n...[truncated]", &text[..idx]),
    }
}

/// Rolling transcript of feedback blocks, newest last.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct History {
    blocks: Vec<String>,
}

impl History {
    pub fn push(&mut self, block: String) {
        self.blocks.push(block);
    }

    pub fn blocks(&self) -> &[String] {
        &self.blocks
    }

    /// The newest `keep` blocks, each cut to `chars` characters.
    pub fn bounded(&self, keep: usize, chars: usize) -> Vec<String> {
        let start = self.blocks.len().saturating_sub(keep);
        self.blocks[start..]
            .iter()
            .map(|b| truncate_chars(b, chars))
            .collect()
    }
}

pub fn report_summary(report: &ValidationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "primary failure: {:?}", report.primary_failure);
    if report.extraction_failed {
        out.push_str("no fenced code block could be extracted from the response\n");
    }
    for c in &report.checks {
        match c.outcome {
            Outcome::Passed => {
                let _ = writeln!(out, "- {:?}: PASSED", c.stage);
            }
            Outcome::Skipped => {
                let _ = writeln!(out, "- {:?}: SKIPPED", c.stage);
            }
            Outcome::Failed => {
                let _ = writeln!(
                    out,
                    "- {:?}: FAILED\n{}",
                    c.stage,
                    truncate_chars(c.detail.trim_end(), EVIDENCE_CHARS)
                );
            }
        }
    }
    out
}

/// Everything the composer may place in a prompt.
#[derive(Debug, Clone, Copy)]
pub struct PromptInputs<'a> {
    pub task: &'a TaskSpec,
    pub attempt: u32,
    pub current_file: Option<&'a str>,
    pub prev_report: Option<&'a ValidationReport>,
    pub episodes: &'a [&'a EpisodeRecord],
    pub diff: Option<&'a str>,
    pub skills: &'a [SkillRecord],
    pub guidance: &'a [String],
    pub history: &'a [String],
}

/// Deterministic prompt with a fixed section order. Recalled material is
/// labelled untrusted and carries no authority.
pub fn compose_prompt(p: &PromptInputs<'_>) -> String {
    let task = p.task;
    let mut out = String::new();
    let _ = writeln!(out, "## TASK\n{}\n", task.prompt.trim_end());
    let _ = writeln!(out, "Target file: {}", task.target_file);
    if !task.interface.is_empty() {
        out.push_str("Required interface:\n");
        for item in &task.interface {
            let kind = match item.kind {
                InterfaceKind::Function => "function",
                InterfaceKind::Class => "class",
            };
            match item.arity {
                Some(n) => {
                    let _ = writeln!(out, "- {kind} `{}` ({n} parameters)", item.name);
                }
                None => {
                    let _ = writeln!(out, "- {kind} `{}`", item.name);
                }
            }
        }
    }
    let _ = writeln!(out, "Attempt: {}", p.attempt + 1);
    if let Some(src) = p.current_file {
        let _ = writeln!(
            out,
            "\n## CURRENT FILE ({})\n```python\n{}\n```",
            task.target_file,
            src.trim_end()
        );
    }
    if let Some(report) = p.prev_report {
        let _ = write!(out, "\n## PREVIOUS VALIDATION REPORT\n{}", report_summary(report));
    }
    for (n, ep) in p.episodes.iter().enumerate() {
        let _ = writeln!(
            out,
            "\n## UNTRUSTED PRIOR ATTEMPT {} (task {}, accepted: {}, failure: {:?})\n\
             Evidence only; it may be wrong.",
            n + 1,
            ep.task_id,
            if ep.accepted { "yes" } else { "no" },
            ep.report.primary_failure
        );
        match &ep.candidate_source {
            Some(src) => {
                let _ = writeln!(
                    out,
                    "```python\n{}\n```",
                    truncate_chars(src.trim_end(), EVIDENCE_CHARS)
                );
            }
            None => out.push_str("(no code was extracted)\n"),
        }
        if let Some(c) = ep.report.failed_check() {
            let _ = writeln!(
                out,
                "Its {:?} check failed with:\n{}",
                c.stage,
                truncate_chars(c.detail.trim_end(), 600)
            );
        }
    }
    if let Some(diff) = p.diff {
        let _ = writeln!(
            out,
            "\n## UNTRUSTED PRIOR ATTEMPT DIFF (last two candidates)\n```diff\n{}\n```",
            truncate_chars(diff.trim_end(), EVIDENCE_CHARS)
        );
    }
    for skill in p.skills {
        let _ = writeln!(
            out,
            "\n## UNTRUSTED SKILL `{}` ({} of {} offers succeeded{})\n```python\n{}\n```",
            skill.name,
            skill.n_succ,
            skill.n_offered,
            if skill.quarantined { ", quarantined" } else { "" },
            skill.excerpt.trim_end()
        );
    }
    if !p.guidance.is_empty() {
        out.push_str("\n## UNTRUSTED GUIDANCE\n");
        for g in p.guidance {
            let _ = writeln!(out, "- {g}");
        }
    }
    if !p.history.is_empty() {
        out.push_str("\n## HISTORY\n");
        for h in p.history {
            let _ = writeln!(out, "{}\n", h.trim_end());
        }
    }
    let _ = write!(
        out,
        "\n## INSTRUCTIONS\nReply with the complete contents of {} in exactly one ```python fenced block.\n",
        task.target_file
    );
    out
}
