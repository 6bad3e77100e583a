//! Ground-truth location file.
//!
//! One line per scene:
//!
//! ```text
//! <index>: (<row>, <col>) [(<row>, <col>) ...]
//! ```
//!
//! Coordinates are 0-based upper-left corners of the 40×100 car window.
//! Blank lines and lines starting with `#` are ignored; whitespace is free.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub type Anchor = (usize, usize);

struct Cursor<'a> {
    rest: &'a str,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        self.rest = self.rest.trim_start();
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        match self.rest.strip_prefix(c) {
            Some(r) => {
                self.rest = r;
                true
            }
            None => false,
        }
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_ws();
        let end = self.rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(self.rest.len());
        if end == 0 {
            return None;
        }
        let (digits, rest) = self.rest.split_at(end);
        self.rest = rest;
        digits.parse().ok()
    }
}

/// Parses a single non-blank line into `(scene index, anchors)`.
pub fn parse_truth_line(line: &str, line_no: usize) -> Result<(usize, Vec<Anchor>)> {
    let bad = |msg: &str| Error::Parse { line: line_no, msg: format!("{msg}: {line:?}") };
    let mut cur = Cursor { rest: line };
    let index = cur.number().ok_or_else(|| bad("expected scene index"))?;
    if !cur.eat(':') {
        return Err(bad("expected ':' after scene index"));
    }
    let mut anchors = Vec::new();
    loop {
        cur.skip_ws();
        if cur.rest.is_empty() {
            break;
        }
        if !cur.eat('(') {
            return Err(bad("expected '('"));
        }
        let row = cur.number().ok_or_else(|| bad("expected row"))?;
        if !cur.eat(',') {
            return Err(bad("expected ','"));
        }
        let col = cur.number().ok_or_else(|| bad("expected column"))?;
        if !cur.eat(')') {
            return Err(bad("expected ')'"));
        }
        anchors.push((row, col));
    }
    Ok((index, anchors))
}

/// Parses a whole truth file. Repeated indices are merged in file order.
pub fn parse_truth_file(text: &str) -> Result<BTreeMap<usize, Vec<Anchor>>> {
    let mut out: BTreeMap<usize, Vec<Anchor>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (idx, anchors) = parse_truth_line(t, i + 1)?;
        out.entry(idx).or_default().extend(anchors);
    }
    Ok(out)
}

pub fn format_truth_line(index: usize, anchors: &[Anchor]) -> String {
    let mut s = format!("{index}:");
    for (r, c) in anchors {
        s.push_str(&format!(" ({r},{c})"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_anchor() {
        assert_eq!(parse_truth_line("3: (25, 48)", 1).unwrap(), (3, vec![(25, 48)]));
    }

    #[test]
    fn several_anchors_free_spacing() {
        let (i, a) = parse_truth_line("  12 :(1,2)( 30 ,  40 )  ", 1).unwrap();
        assert_eq!(i, 12);
        assert_eq!(a, vec![(1, 2), (30, 40)]);
    }

    #[test]
    fn empty_anchor_list_allowed() {
        assert_eq!(parse_truth_line("7:", 1).unwrap(), (7, vec![]));
    }

    #[test]
    fn malformed_names_line() {
        let text = "0: (1,2)\n\n3: banana\n";
        match parse_truth_file(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(parse_truth_line("3: (1,2", 1).is_err());
        assert!(parse_truth_line("(1,2)", 1).is_err());
        assert!(parse_truth_line("3: (-1,2)", 1).is_err());
    }

    #[test]
    fn format_parses_back() {
        let line = format_truth_line(4, &[(5, 6), (7, 8)]);
        assert_eq!(parse_truth_line(&line, 1).unwrap(), (4, vec![(5, 6), (7, 8)]));
    }
}
