//! Heading-aware splitting of module content into budget-sized chunks.
//!
//! A document that fits the token budget stays whole. Otherwise it is cut at
//! the shallowest ATX heading level present, and any section still over budget
//! is cut again at its own shallowest sub-heading level. Heading-free sections
//! that are still too large fall back to paragraph packing. Chunk bodies are
//! contiguous slices of the source, so concatenating them in order gives the
//! original text back.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::ContentHash;
use crate::registry::{KnowledgeModule, ModuleId};

pub const DEFAULT_CHUNK_BUDGET: usize = 4_000;
pub const MIN_CHUNK_BUDGET: usize = 64;
pub const BYTES_PER_TOKEN: usize = 4;

const BREADCRUMB_SEPARATOR: &str = " > ";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ChunkError {
    #[error("chunk budget {0} is below the minimum of {MIN_CHUNK_BUDGET} tokens")]
    BudgetTooSmall(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub module_id: ModuleId,
    /// Position of the chunk within its module.
    pub index: usize,
    /// `<module name> > <h1> > <h2> ...`
    pub breadcrumb: String,
    pub body: String,
    pub token_estimate: usize,
    /// Digest of `breadcrumb` followed by `body`.
    pub content_hash: ContentHash,
    /// Set on a single paragraph that exceeds the budget on its own.
    pub oversized: bool,
}

impl Chunk {
    fn new(
        module_id: &ModuleId,
        index: usize,
        breadcrumb: String,
        body: &str,
        oversized: bool,
    ) -> Self {
        let token_estimate = estimate_tokens_for_len(breadcrumb.len() + body.len());
        let content_hash = ContentHash::of_parts([breadcrumb.as_bytes(), body.as_bytes()]);
        Self {
            module_id: module_id.clone(),
            index,
            breadcrumb,
            body: body.to_owned(),
            token_estimate,
            content_hash,
            oversized,
        }
    }
}

/// Estimated token count: one token per four bytes, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    estimate_tokens_for_len(text.len())
}

pub fn estimate_tokens_for_len(byte_len: usize) -> usize {
    byte_len.div_ceil(BYTES_PER_TOKEN)
}

pub fn split_module(
    module: &KnowledgeModule,
    chunk_budget: usize,
) -> Result<Vec<Chunk>, ChunkError> {
    split_text(&module.id, &module.name, &module.content, chunk_budget)
}

pub fn split_text(
    module_id: &ModuleId,
    module_name: &str,
    text: &str,
    chunk_budget: usize,
) -> Result<Vec<Chunk>, ChunkError> {
    if chunk_budget < MIN_CHUNK_BUDGET {
        return Err(ChunkError::BudgetTooSmall(chunk_budget));
    }
    let mut splitter = Splitter {
        text,
        headings: parse_headings(text),
        module_name,
        budget: chunk_budget,
        pieces: Vec::new(),
    };
    splitter.section(0, text.len(), 0, &[]);

    Ok(splitter
        .pieces
        .into_iter()
        .enumerate()
        .map(|(index, piece)| {
            let breadcrumb = breadcrumb(module_name, &piece.trail);
            if piece.oversized {
                tracing::warn!(
                    module = %module_id,
                    breadcrumb = %breadcrumb,
                    bytes = piece.end - piece.start,
                    "paragraph exceeds chunk budget; emitting oversized chunk"
                );
            }
            Chunk::new(
                module_id,
                index,
                breadcrumb,
                &text[piece.start..piece.end],
                piece.oversized,
            )
        })
        .collect())
}

pub fn breadcrumb(module_name: &str, trail: &[String]) -> String {
    let mut out = module_name.to_owned();
    for title in trail {
        out.push_str(BREADCRUMB_SEPARATOR);
        out.push_str(title);
    }
    out
}

/// An ATX heading line located in the source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Heading {
    pub level: usize,
    pub title: String,
    /// Byte offset of the start of the heading line.
    pub start: usize,
    /// Byte offset just past the heading line, including its newline.
    pub line_end: usize,
}

/// Finds ATX headings outside fenced code blocks.
pub fn parse_headings(text: &str) -> Vec<Heading> {
    let mut headings = Vec::new();
    let mut fence: Option<(char, usize)> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let content = line.trim_end_matches(['\n', '\r']);

        if let Some((ch, len)) = fence_marker(content) {
            match fence {
                None => fence = Some((ch, len)),
                Some((open_ch, open_len)) if open_ch == ch && len >= open_len => fence = None,
                Some(_) => {}
            }
            continue;
        }
        if fence.is_some() {
            continue;
        }
        if let Some((level, title)) = atx_heading(content) {
            headings.push(Heading {
                level,
                title,
                start,
                line_end: offset,
            });
        }
    }
    headings
}

fn leading_indent(line: &str) -> Option<&str> {
    let spaces = line.len() - line.trim_start_matches(' ').len();
    (spaces <= 3).then(|| &line[spaces..])
}

fn fence_marker(line: &str) -> Option<(char, usize)> {
    let rest = leading_indent(line)?;
    let ch = rest.chars().next().filter(|c| *c == '`' || *c == '~')?;
    let len = rest.len() - rest.trim_start_matches(ch).len();
    (len >= 3).then_some((ch, len))
}

fn atx_heading(line: &str) -> Option<(usize, String)> {
    let rest = leading_indent(line)?;
    let level = rest.len() - rest.trim_start_matches('#').len();
    if !(1..=6).contains(&level) {
        return None;
    }
    let after = &rest[level..];
    if !(after.is_empty() || after.starts_with([' ', '\t'])) {
        return None;
    }
    let mut title = after.trim();
    // optional closing sequence: "## Title ##"
    let without_closing = title.trim_end_matches('#');
    if without_closing.is_empty() {
        title = "";
    } else if without_closing.len() != title.len() && without_closing.ends_with([' ', '\t']) {
        title = without_closing.trim_end();
    }
    Some((level, title.to_owned()))
}

struct Piece {
    start: usize,
    end: usize,
    trail: Vec<String>,
    oversized: bool,
}

struct Splitter<'a> {
    text: &'a str,
    headings: Vec<Heading>,
    module_name: &'a str,
    budget: usize,
    pieces: Vec<Piece>,
}

impl Splitter<'_> {
    fn fits(&self, trail: &[String], start: usize, end: usize) -> bool {
        let crumb_len = self.module_name.len()
            + trail
                .iter()
                .map(|t| t.len() + BREADCRUMB_SEPARATOR.len())
                .sum::<usize>();
        estimate_tokens_for_len(crumb_len + end - start) <= self.budget
    }

    fn push(&mut self, start: usize, end: usize, trail: &[String], oversized: bool) {
        self.pieces.push(Piece {
            start,
            end,
            trail: trail.to_vec(),
            oversized,
        });
    }

    /// Splits `[start, end)`. Headings before `content_from` are the section's
    /// own heading lines and are never used as cut points.
    fn section(&mut self, start: usize, end: usize, content_from: usize, trail: &[String]) {
        if self.fits(trail, start, end) {
            self.push(start, end, trail, false);
            return;
        }

        let inner: Vec<&Heading> = self
            .headings
            .iter()
            .filter(|h| h.start >= content_from && h.start < end)
            .collect();
        let Some(level) = inner.iter().map(|h| h.level).min() else {
            self.leaf(start, end, trail);
            return;
        };
        let cuts: Vec<(usize, usize, String)> = inner
            .iter()
            .filter(|h| h.level == level)
            .map(|h| (h.start, h.line_end, h.title.clone()))
            .collect();

        // Text before the first cut. When it holds nothing but the section's own
        // heading lines and whitespace, it is folded into the first subsection.
        let first_cut = cuts[0].0;
        let mut first_start = first_cut;
        if first_cut > start {
            let substantive = self.text[content_from.max(start)..first_cut]
                .chars()
                .any(|c| !c.is_whitespace());
            if substantive {
                self.section(start, first_cut, content_from, trail);
            } else {
                first_start = start;
            }
        }

        for (i, (cut_start, line_end, title)) in cuts.iter().enumerate() {
            let section_start = if i == 0 { first_start } else { *cut_start };
            let section_end = cuts.get(i + 1).map_or(end, |next| next.0);
            let mut child_trail = trail.to_vec();
            child_trail.push(title.clone());
            self.section(section_start, section_end, *line_end, &child_trail);
        }
    }

    /// Greedy packing of whole paragraphs for a heading-free section.
    fn leaf(&mut self, start: usize, end: usize, trail: &[String]) {
        let mut current: Option<usize> = None;
        let mut current_end = start;
        for (unit_start, unit_end) in paragraph_units(self.text, start, end) {
            if let Some(cur) = current {
                if self.fits(trail, cur, unit_end) {
                    current_end = unit_end;
                    continue;
                }
                self.push(cur, current_end, trail, false);
            }
            if self.fits(trail, unit_start, unit_end) {
                current = Some(unit_start);
                current_end = unit_end;
            } else {
                self.push(unit_start, unit_end, trail, true);
                current = None;
            }
        }
        if let Some(cur) = current {
            self.push(cur, current_end, trail, false);
        }
    }
}

/// Splits `[start, end)` into paragraphs, each ending after its trailing run of
/// blank lines. Heading lines stay with the paragraph that follows them.
fn paragraph_units(text: &str, start: usize, end: usize) -> Vec<(usize, usize)> {
    let mut units = Vec::new();
    let mut unit_start = start;
    let mut offset = start;
    let mut seen_content = false;
    let mut trailing_blank = false;
    for line in text[start..end].split_inclusive('\n') {
        let blank = line.trim().is_empty();
        if !blank && trailing_blank {
            units.push((unit_start, offset));
            unit_start = offset;
            trailing_blank = false;
        }
        if blank {
            trailing_blank = seen_content;
        } else {
            seen_content = true;
        }
        offset += line.len();
    }
    if unit_start < end {
        units.push((unit_start, end));
    }

    // A unit holding only heading lines belongs to the paragraph after it.
    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(units.len());
    let mut carry: Option<usize> = None;
    let last = units.len().saturating_sub(1);
    for (i, (s, e)) in units.into_iter().enumerate() {
        let s = carry.take().unwrap_or(s);
        let heading_only = text[s..e]
            .lines()
            .all(|l| l.trim().is_empty() || atx_heading(l).is_some());
        if heading_only && i < last {
            carry = Some(s);
        } else {
            merged.push((s, e));
        }
    }
    merged
}
