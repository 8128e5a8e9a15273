use crate::error::{Error, Result};

use super::tree::CladeTree;

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    labels: Vec<Option<String>>,
    edges: Vec<(usize, usize, f64)>,
    naive_label: &'a str,
}

impl<'a> Parser<'a> {
    fn error(&self, message: impl Into<String>) -> Error {
        let consumed = &self.text[..self.pos.min(self.text.len())];
        let line = consumed.iter().filter(|&&c| c == b'\n').count() + 1;
        let column = consumed.iter().rev().take_while(|&&c| c != b'\n').count() + 1;
        Error::NewickSyntax {
            line,
            column,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) -> Result<()> {
        loop {
            match self.text.get(self.pos) {
                Some(c) if c.is_ascii_whitespace() => self.pos += 1,
                Some(b'[') => {
                    while self.text.get(self.pos).is_some_and(|&c| c != b']') {
                        self.pos += 1;
                    }
                    if self.pos >= self.text.len() {
                        return Err(self.error("unterminated comment"));
                    }
                    self.pos += 1;
                }
                _ => return Ok(()),
            }
        }
    }

    fn peek(&mut self) -> Result<Option<u8>> {
        self.skip_ws()?;
        Ok(self.text.get(self.pos).copied())
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        match self.peek()? {
            Some(x) if x == c => {
                self.pos += 1;
                Ok(())
            }
            Some(x) => Err(self.error(format!("expected {:?}, found {:?}", c as char, x as char))),
            None => Err(self.error(format!("expected {:?}, found end of input", c as char))),
        }
    }

    fn label(&mut self) -> Result<Option<String>> {
        match self.peek()? {
            Some(b'\'') => {
                self.pos += 1;
                let mut s = Vec::new();
                loop {
                    match self.text.get(self.pos) {
                        None => return Err(self.error("unterminated quoted label")),
                        Some(b'\'') if self.text.get(self.pos + 1) == Some(&b'\'') => {
                            s.push(b'\'');
                            self.pos += 2;
                        }
                        Some(b'\'') => {
                            self.pos += 1;
                            break;
                        }
                        Some(&c) => {
                            s.push(c);
                            self.pos += 1;
                        }
                    }
                }
                Ok(Some(String::from_utf8_lossy(&s).into_owned()))
            }
            _ => {
                let start = self.pos;
                while let Some(&c) = self.text.get(self.pos) {
                    if c.is_ascii_whitespace() || b"()[]':;,".contains(&c) {
                        break;
                    }
                    self.pos += 1;
                }
                if self.pos == start {
                    Ok(None)
                } else {
                    Ok(Some(String::from_utf8_lossy(&self.text[start..self.pos]).into_owned()))
                }
            }
        }
    }

    fn length(&mut self) -> Result<Option<f64>> {
        if self.peek()? != Some(b':') {
            return Ok(None);
        }
        self.pos += 1;
        self.skip_ws()?;
        let start = self.pos;
        while let Some(&c) = self.text.get(self.pos) {
            if c.is_ascii_digit() || b"+-.eE".contains(&c) {
                self.pos += 1;
            } else {
                break;
            }
        }
        let raw = std::str::from_utf8(&self.text[start..self.pos]).unwrap_or_default();
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(Some(v)),
            Ok(v) => {
                self.pos = start;
                Err(self.error(format!("branch length {v} must be finite and >= 0")))
            }
            Err(_) => {
                self.pos = start;
                Err(self.error(format!("invalid branch length {raw:?}")))
            }
        }
    }

    /// Parses one subtree and returns its node index.
    fn subtree(&mut self) -> Result<usize> {
        let id = self.labels.len();
        self.labels.push(None);
        if self.peek()? == Some(b'(') {
            self.pos += 1;
            loop {
                let child = self.subtree()?;
                let len = self
                    .length()?
                    .ok_or_else(|| self.error("missing branch length"))?;
                self.edges.push((id, child, len));
                match self.peek()? {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    Some(c) => return Err(self.error(format!("unexpected {:?}", c as char))),
                    None => return Err(self.error("unexpected end of input")),
                }
            }
            // Internal labels carry no meaning for the model.
            if let Some(label) = self.label()? {
                if label == self.naive_label {
                    return Err(Error::InvalidTree(format!(
                        "naive label {label:?} is on an internal node"
                    )));
                }
            }
        } else {
            let label = self.label()?.ok_or_else(|| self.error("expected a leaf label"))?;
            self.labels[id] = Some(label);
        }
        Ok(id)
    }
}

/// Parses one Newick tree. Every branch except the root's must carry a length,
/// and one leaf must be labelled `naive_label`.
pub fn parse_newick(text: &str, naive_label: &str) -> Result<CladeTree> {
    let mut p = Parser {
        text: text.as_bytes(),
        pos: 0,
        labels: Vec::new(),
        edges: Vec::new(),
        naive_label,
    };
    p.subtree()?;
    p.length()?;
    p.expect(b';')?;
    if let Some(c) = p.peek()? {
        return Err(p.error(format!("trailing input starting with {:?}", c as char)));
    }
    CladeTree::from_edges(p.labels, &p.edges, naive_label)
}

/// Parses a file with one tree per non-empty line.
pub fn parse_newick_lines(text: &str, naive_label: &str) -> Result<Vec<CladeTree>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_newick(l, naive_label).map_err(|e| match e {
                Error::NewickSyntax { column, message, .. } => Error::NewickSyntax {
                    line: i + 1,
                    column,
                    message,
                },
                other => other,
            })
        })
        .collect()
}
