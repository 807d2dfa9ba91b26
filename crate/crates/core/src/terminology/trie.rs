//! Character trie with word-boundary aware forward maximum matching.
//!
//! Matching folds case one character at a time so that byte offsets in the
//! scanned text stay valid for the original string.

use serde::{Deserialize, Serialize};

/// Lowercases a single character, keeping it unchanged when its lowercase
/// form is not a single character.
pub fn fold_char(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

pub fn fold_str(s: &str) -> String {
    s.chars().map(fold_char).collect()
}

pub(crate) fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// True if a match may begin at byte offset `pos` without splitting a word.
pub fn is_start_boundary(text: &str, pos: usize) -> bool {
    let prev = text[..pos].chars().next_back();
    let next = text[pos..].chars().next();
    match (prev, next) {
        (Some(p), Some(n)) => !(is_word_char(p) && is_word_char(n)),
        _ => true,
    }
}

/// True if a match may end at byte offset `pos` without splitting a word.
pub fn is_end_boundary(text: &str, pos: usize) -> bool {
    is_start_boundary(text, pos)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrieMatch {
    pub start: usize,
    pub end: usize,
    pub id: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Node {
    /// Sorted by character.
    children: Vec<(char, u32)>,
    terminal: Option<u32>,
}

impl Node {
    fn child(&self, c: char) -> Option<u32> {
        self.children
            .binary_search_by_key(&c, |&(k, _)| k)
            .ok()
            .map(|i| self.children[i].1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceTrie {
    nodes: Vec<Node>,
    patterns: usize,
}

impl Default for SurfaceTrie {
    fn default() -> Self {
        Self::new()
    }
}

impl SurfaceTrie {
    pub fn new() -> Self {
        SurfaceTrie {
            nodes: vec![Node::default()],
            patterns: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.patterns
    }

    pub fn is_empty(&self) -> bool {
        self.patterns == 0
    }

    /// Inserts a surface under `id`. If the folded surface is already present
    /// the existing id is kept and returned as `Err`.
    pub fn insert(&mut self, surface: &str, id: u32) -> Result<(), u32> {
        let mut node = 0usize;
        for c in surface.chars().map(fold_char) {
            node = match self.nodes[node].child(c) {
                Some(next) => next as usize,
                None => {
                    let next = self.nodes.len();
                    self.nodes.push(Node::default());
                    let children = &mut self.nodes[node].children;
                    let at = children.partition_point(|&(k, _)| k < c);
                    children.insert(at, (c, next as u32));
                    next
                }
            };
        }
        match self.nodes[node].terminal {
            Some(existing) => Err(existing),
            None => {
                self.nodes[node].terminal = Some(id);
                self.patterns += 1;
                Ok(())
            }
        }
    }

    /// Exact lookup of a whole string.
    pub fn get(&self, surface: &str) -> Option<u32> {
        let mut node = 0usize;
        for c in surface.chars().map(fold_char) {
            node = self.nodes[node].child(c)? as usize;
        }
        self.nodes[node].terminal
    }

    /// Longest pattern starting at `start` whose end falls on a word boundary.
    /// Does not check the start boundary.
    pub fn longest_match_at(&self, text: &str, start: usize) -> Option<TrieMatch> {
        let mut node = 0usize;
        let mut best = None;
        for (off, c) in text[start..].char_indices() {
            match self.nodes[node].child(fold_char(c)) {
                Some(next) => node = next as usize,
                None => break,
            }
            if let Some(id) = self.nodes[node].terminal {
                let end = start + off + c.len_utf8();
                if is_end_boundary(text, end) {
                    best = Some(TrieMatch { start, end, id });
                }
            }
        }
        best
    }

    /// Forward maximum matching: left to right, take the longest match at each
    /// admissible start and resume right after it.
    pub fn scan(&self, text: &str) -> Vec<TrieMatch> {
        let mut out = Vec::new();
        if self.is_empty() {
            return out;
        }
        let mut pos = 0;
        let mut prev: Option<char> = None;
        while let Some(c) = text[pos..].chars().next() {
            let admissible = !c.is_whitespace()
                && !matches!(prev, Some(p) if is_word_char(p) && is_word_char(c));
            if admissible {
                if let Some(m) = self.longest_match_at(text, pos) {
                    out.push(m);
                    prev = text[..m.end].chars().next_back();
                    pos = m.end;
                    continue;
                }
            }
            prev = Some(c);
            pos += c.len_utf8();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trie(words: &[&str]) -> SurfaceTrie {
        let mut t = SurfaceTrie::new();
        for (i, w) in words.iter().enumerate() {
            let _ = t.insert(w, i as u32);
        }
        t
    }

    #[test]
    fn longest_wins() {
        let t = trie(&["heart", "heart failure"]);
        let m = t.scan("heart failure");
        assert_eq!(m, vec![TrieMatch { start: 0, end: 13, id: 1 }]);
    }

    #[test]
    fn no_mid_word_matches() {
        let t = trie(&["ra"]);
        assert!(t.scan("thoracic").is_empty());
        assert_eq!(t.scan("on RA.").len(), 1);
    }

    #[test]
    fn falls_back_when_long_match_ends_mid_word() {
        let t = trie(&["chest", "chest pai"]);
        let m = t.scan("chest pain");
        assert_eq!(m, vec![TrieMatch { start: 0, end: 5, id: 0 }]);
    }

    #[test]
    fn duplicate_insert_keeps_first() {
        let mut t = SurfaceTrie::new();
        assert!(t.insert("Fever", 0).is_ok());
        assert_eq!(t.insert("fever", 1), Err(0));
        assert_eq!(t.get("FEVER"), Some(0));
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn empty_trie_matches_nothing() {
        assert!(SurfaceTrie::new().scan("anything at all").is_empty());
    }

    #[test]
    fn offsets_survive_multibyte_text() {
        let t = trie(&["édème"]);
        let text = "noted ÉDÈME today";
        let m = t.scan(text);
        assert_eq!(m.len(), 1);
        assert_eq!(&text[m[0].start..m[0].end], "ÉDÈME");
    }
}
