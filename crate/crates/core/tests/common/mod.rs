//! Brute-force reference implementations shared by the integration tests.
//! These deliberately share no code with the library paths they check.
//! Each test target compiles this module separately, so parts of it can be
//! unused in any one target.
#![allow(dead_code)]

/// Set-operation reference for the quality rates, over plain string lists
/// (duplicates allowed; set semantics applied by scanning).
pub mod set_oracle {
    fn dedup(items: &[String]) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for item in items {
            if !seen.contains(&item.as_str()) {
                seen.push(item);
            }
        }
        seen
    }

    pub fn preservation_rate(orig: &[String], aug: &[String]) -> f64 {
        let orig = dedup(orig);
        if orig.is_empty() {
            return 1.0;
        }
        let aug = dedup(aug);
        let preserved = orig.iter().filter(|o| aug.contains(o)).count();
        preserved as f64 / orig.len() as f64
    }

    pub fn hallucination_rate(orig: &[String], aug: &[String]) -> f64 {
        let orig_set = dedup(orig);
        let aug_set = dedup(aug);
        let hallucinated = aug_set.iter().filter(|a| !orig_set.contains(a)).count();
        hallucinated as f64 / orig_set.len().max(1) as f64
    }
}

/// Naive leftmost-longest scan over all patterns, with the same matching
/// semantics the automaton implements: case-insensitive, whitespace runs
/// collapse to single spaces, token boundaries at both ends, case foldings
/// consumed whole.
pub mod scan_oracle {
    /// Normalizes a pattern the slow way: split/join handles collapsing and
    /// trimming, full-string lowercase handles folding.
    pub fn fold(s: &str) -> String {
        s.split_whitespace()
            .map(str::to_lowercase)
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn token_boundary(text: &str, pos: usize) -> bool {
        if pos == 0 || pos >= text.len() {
            return true;
        }
        let before = text[..pos].chars().next_back();
        let after = text[pos..].chars().next();
        match (before, after) {
            (Some(b), Some(a)) => !(b.is_alphanumeric() && a.is_alphanumeric()),
            _ => true,
        }
    }

    /// Where would `pattern` (already folded) end if matched at `start`?
    fn match_end(text: &str, start: usize, pattern: &str) -> Option<usize> {
        let mut pat = pattern.chars().peekable();
        let mut iter = text[start..].char_indices().peekable();
        while pat.peek().is_some() {
            let (off, ch) = iter.next()?;
            if ch.is_whitespace() {
                if start + off == start {
                    return None;
                }
                if pat.next() != Some(' ') {
                    return None;
                }
                while iter.peek().is_some_and(|(_, c)| c.is_whitespace()) {
                    iter.next();
                }
            } else {
                for folded in ch.to_lowercase() {
                    match pat.next() {
                        Some(p) if p == folded => {}
                        _ => return None,
                    }
                }
                if pat.peek().is_none() {
                    return Some(start + off + ch.len_utf8());
                }
            }
        }
        None
    }

    /// All matches, scanning starts left to right, longest pattern at each
    /// start, non-overlapping.
    pub fn extract(text: &str, patterns: &[String]) -> Vec<(usize, usize)> {
        let folded: Vec<String> = patterns
            .iter()
            .map(|p| fold(p))
            .filter(|p| !p.is_empty())
            .collect();
        let mut matches = Vec::new();
        let mut pos = 0usize;
        while pos < text.len() {
            let mut best: Option<usize> = None;
            for pattern in &folded {
                if let Some(end) = match_end(text, pos, pattern) {
                    if token_boundary(text, pos) && token_boundary(text, end) {
                        best = Some(best.map_or(end, |b| b.max(end)));
                    }
                }
            }
            match best {
                Some(end) => {
                    matches.push((pos, end));
                    pos = end;
                }
                None => {
                    pos += text[pos..].chars().next().map_or(1, char::len_utf8);
                }
            }
        }
        matches
    }
}
