use std::collections::HashSet;

use super::kb::Fact;

/// Finds KB entity surface forms (subjects and objects) in the question.
/// Matches are chosen longest first, then leftmost, and never overlap;
/// the result is in question order with repeated surfaces dropped.
pub fn extract_question_entities<S: AsRef<str>>(question: &[S], kb: &[Fact]) -> Vec<Vec<String>> {
    let q: Vec<&str> = question.iter().map(|s| s.as_ref()).collect();
    let mut surfaces: Vec<&[String]> = Vec::new();
    let mut seen: HashSet<&[String]> = HashSet::new();
    for f in kb {
        for e in [f.subject.as_slice(), f.object.as_slice()] {
            if !e.is_empty() && seen.insert(e) {
                surfaces.push(e);
            }
        }
    }

    let mut matches: Vec<(usize, usize)> = Vec::new();
    for e in &surfaces {
        let n = e.len();
        if n > q.len() {
            continue;
        }
        for start in 0..=q.len() - n {
            if q[start..start + n].iter().zip(e.iter()).all(|(a, b)| *a == b) {
                matches.push((start, n));
            }
        }
    }
    matches.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    matches.dedup();

    let mut taken = vec![false; q.len()];
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    for (start, n) in matches {
        if taken[start..start + n].iter().any(|&t| t) {
            continue;
        }
        taken[start..start + n].iter_mut().for_each(|t| *t = true);
        chosen.push((start, n));
    }
    chosen.sort();

    let mut out: Vec<Vec<String>> = Vec::new();
    for (start, n) in chosen {
        let phrase: Vec<String> = q[start..start + n].iter().map(|s| s.to_string()).collect();
        if !out.contains(&phrase) {
            out.push(phrase);
        }
    }
    out
}
