//! Minimal HTML to Markdown conversion: headings, paragraphs and list items.
//! Every other tag is dropped; the contents of script-like elements are dropped
//! with them.

const SKIP_CONTENT: &[&str] = &["script", "style", "noscript", "template", "head", "title"];
const BLOCKS: &[&str] = &[
    "p",
    "div",
    "ul",
    "ol",
    "li",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "section",
    "article",
    "header",
    "footer",
    "main",
    "nav",
    "aside",
    "blockquote",
    "pre",
    "table",
    "tr",
    "hr",
    "body",
    "html",
];

#[derive(Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    Paragraph,
    Heading(usize),
    ListItem,
}

struct Writer {
    out: String,
    buf: String,
    kind: BlockKind,
    last: Option<BlockKind>,
}

impl Writer {
    fn flush(&mut self) {
        let text = self.buf.trim();
        if !text.is_empty() {
            if let Some(last) = self.last {
                let tight = last == BlockKind::ListItem && self.kind == BlockKind::ListItem;
                self.out.push_str(if tight { "\n" } else { "\n\n" });
            }
            match self.kind {
                BlockKind::Heading(level) => {
                    self.out.push_str(&"#".repeat(level));
                    self.out.push(' ');
                }
                BlockKind::ListItem => self.out.push_str("- "),
                BlockKind::Paragraph => {}
            }
            self.out.push_str(text);
            self.last = Some(self.kind);
        }
        self.buf.clear();
    }
}

pub fn html_to_markdown(html: &str) -> String {
    let mut w = Writer {
        out: String::new(),
        buf: String::new(),
        kind: BlockKind::Paragraph,
        last: None,
    };
    let mut rest = html;
    while !rest.is_empty() {
        let Some(lt) = rest.find('<') else {
            w.buf.push_str(&decode_entities(rest));
            break;
        };
        w.buf.push_str(&decode_entities(&rest[..lt]));
        rest = &rest[lt..];

        if let Some(after) = rest.strip_prefix("<!--") {
            rest = after.find("-->").map_or("", |end| &after[end + 3..]);
            continue;
        }
        let Some(gt) = rest.find('>') else {
            // unterminated tag: treat the remainder as text
            w.buf.push_str(&decode_entities(rest));
            break;
        };
        let tag = parse_tag(&rest[1..gt]);
        rest = &rest[gt + 1..];

        let Some((name, closing)) = tag else {
            continue;
        };
        if !closing && SKIP_CONTENT.contains(&name.as_str()) {
            let close = format!("</{name}");
            rest = find_ci(rest, &close)
                .map(|i| rest[i..].find('>').map_or("", |gt| &rest[i + gt + 1..]))
                .unwrap_or("");
            continue;
        }
        if name == "br" {
            w.buf.push('\n');
            continue;
        }
        if BLOCKS.contains(&name.as_str()) {
            w.flush();
            w.kind = match (closing, name.as_str()) {
                (false, "li") => BlockKind::ListItem,
                (false, h) if is_heading(h) => {
                    BlockKind::Heading(h.as_bytes()[1] as usize - b'0' as usize)
                }
                _ => BlockKind::Paragraph,
            };
        }
    }
    w.flush();
    collapse_newlines(w.out.trim())
}

fn is_heading(name: &str) -> bool {
    name.len() == 2 && name.starts_with('h') && (b'1'..=b'6').contains(&name.as_bytes()[1])
}

/// Returns the lowercase tag name and whether it is a closing tag. Doctype and
/// processing instructions yield `None`.
fn parse_tag(inner: &str) -> Option<(String, bool)> {
    let inner = inner.trim();
    let (closing, inner) = match inner.strip_prefix('/') {
        Some(rest) => (true, rest.trim_start()),
        None => (false, inner),
    };
    if inner.starts_with(['!', '?']) {
        return None;
    }
    let name: String = inner
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase();
    (!name.is_empty()).then_some((name, closing))
}

fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    haystack
        .to_ascii_lowercase()
        .find(&needle.to_ascii_lowercase())
}

fn decode_entities(text: &str) -> String {
    if !text.contains('&') {
        return text.to_owned();
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let decoded = rest.find(';').filter(|&semi| semi <= 10).and_then(|semi| {
            let entity = &rest[1..semi];
            let ch = match entity {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some(' '),
                _ => entity
                    .strip_prefix("#x")
                    .or_else(|| entity.strip_prefix("#X"))
                    .and_then(|hex| u32::from_str_radix(hex, 16).ok())
                    .or_else(|| entity.strip_prefix('#').and_then(|dec| dec.parse().ok()))
                    .and_then(char::from_u32),
            };
            ch.map(|c| (c, semi))
        });
        match decoded {
            Some((c, semi)) => {
                out.push(c);
                rest = &rest[semi + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Replaces every run of three or more newlines with exactly two.
pub(crate) fn collapse_newlines(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut run = 0;
    for c in text.chars() {
        if c == '\n' {
            run += 1;
            if run <= 2 {
                out.push(c);
            }
        } else {
            run = 0;
            out.push(c);
        }
    }
    out
}
