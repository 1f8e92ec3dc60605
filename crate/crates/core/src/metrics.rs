//! Self-contained ROUGE-1/2/L and extractive-fragment coverage.
//!
//! All functions here are pure and deterministic: candidates are ranked and
//! reports are reproduced exactly from the same inputs. Scores operate on
//! token sequences produced by [`tokenize_for_metrics`] (lowercase, split on
//! non-alphanumeric runs). An optional Porter-style stemmer ([`stem`]) can be
//! applied to ROUGE inputs for closer emulation of reference tooling; it is
//! off by default and never applies to coverage, which measures verbatim
//! copying from the article.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Lowercase and split on runs of non-alphanumeric characters.
pub fn tokenize_for_metrics(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Precision/recall/f1 triple for one ROUGE variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub const ZERO: RougeScore = RougeScore {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    /// f1 = 0 when precision + recall = 0, else their harmonic mean.
    fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }
}

/// Extractive-fragment coverage of a summary against its article.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageScore {
    pub coverage: f64,
}

/// Clipped n-gram overlap. If either side has fewer than `n` tokens every
/// field is 0.
pub fn rouge_n(candidate: &[String], reference: &[String], n: usize) -> RougeScore {
    assert!(n >= 1, "rouge_n requires n >= 1");
    if candidate.len() < n || reference.len() < n {
        return RougeScore::ZERO;
    }
    let mut ref_counts: HashMap<&[String], usize> = HashMap::new();
    for gram in reference.windows(n) {
        *ref_counts.entry(gram).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for gram in candidate.windows(n) {
        if let Some(count) = ref_counts.get_mut(gram) {
            if *count > 0 {
                *count -= 1;
                overlap += 1;
            }
        }
    }
    let cand_total = candidate.len() - n + 1;
    let ref_total = reference.len() - n + 1;
    RougeScore::from_pr(
        overlap as f64 / cand_total as f64,
        overlap as f64 / ref_total as f64,
    )
}

/// Longest-common-subsequence length via the standard two-row DP.
fn lcs_length(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// LCS-based ROUGE: precision = L/|candidate|, recall = L/|reference|.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore::ZERO;
    }
    let l = lcs_length(candidate, reference) as f64;
    RougeScore::from_pr(l / candidate.len() as f64, l / reference.len() as f64)
}

/// Greedy maximal shared fragments, longest-match-first per summary position:
/// at each summary position take the longest article match starting anywhere,
/// consume it, and move past it (unmatched tokens advance by one). Coverage is
/// the fraction of summary tokens inside such fragments; empty summary → 0.
pub fn extractive_coverage(summary: &[String], article: &[String]) -> CoverageScore {
    if summary.is_empty() {
        return CoverageScore { coverage: 0.0 };
    }
    let mut covered = 0usize;
    let mut i = 0usize;
    while i < summary.len() {
        let mut best = 0usize;
        for j in 0..article.len() {
            if article[j] == summary[i] {
                let mut k = 1;
                while i + k < summary.len()
                    && j + k < article.len()
                    && summary[i + k] == article[j + k]
                {
                    k += 1;
                }
                best = best.max(k);
            }
        }
        if best > 0 {
            covered += best;
            i += best;
        } else {
            i += 1;
        }
    }
    CoverageScore {
        coverage: covered as f64 / summary.len() as f64,
    }
}

/// Which ROUGE variant ranks candidates during selection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankingMetric {
    #[serde(rename = "rouge_1_f1")]
    Rouge1F1,
    #[serde(rename = "rouge_2_f1")]
    Rouge2F1,
    /// Default: f1 of ROUGE-L.
    #[default]
    #[serde(rename = "rouge_l_f1")]
    RougeLF1,
}

impl RankingMetric {
    pub fn score(&self, candidate: &[String], reference: &[String]) -> f64 {
        match self {
            RankingMetric::Rouge1F1 => rouge_n(candidate, reference, 1).f1,
            RankingMetric::Rouge2F1 => rouge_n(candidate, reference, 2).f1,
            RankingMetric::RougeLF1 => rouge_l(candidate, reference).f1,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RankingMetric::Rouge1F1 => "rouge_1_f1",
            RankingMetric::Rouge2F1 => "rouge_2_f1",
            RankingMetric::RougeLF1 => "rouge_l_f1",
        }
    }
}

/// Map tokens through the Porter stemmer. Callers that enable stemming apply
/// this to ROUGE inputs only.
pub fn stem_tokens(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| stem::stem(t)).collect()
}

pub mod stem {
    //! Classic Porter stemmer over ASCII-alphabetic tokens.
    //!
    //! Tokens containing anything but ASCII letters (digits, non-ASCII) are
    //! returned unchanged, as are tokens shorter than three characters.

    pub fn stem(word: &str) -> String {
        if word.len() <= 2 || !word.bytes().all(|b| b.is_ascii_lowercase()) {
            return word.to_string();
        }
        let mut w = Stemmer {
            b: word.as_bytes().to_vec(),
        };
        w.step1a();
        w.step1b();
        w.step1c();
        w.step2();
        w.step3();
        w.step4();
        w.step5a();
        w.step5b();
        String::from_utf8(w.b).expect("stemmer operates on ASCII")
    }

    struct Stemmer {
        b: Vec<u8>,
    }

    impl Stemmer {
        fn is_consonant(&self, i: usize) -> bool {
            match self.b[i] {
                b'a' | b'e' | b'i' | b'o' | b'u' => false,
                b'y' => i == 0 || !self.is_consonant(i - 1),
                _ => true,
            }
        }

        /// Number of VC sequences in the first `len` bytes.
        fn measure(&self, len: usize) -> usize {
            let mut m = 0;
            let mut i = 0;
            while i < len && self.is_consonant(i) {
                i += 1;
            }
            loop {
                while i < len && !self.is_consonant(i) {
                    i += 1;
                }
                if i >= len {
                    return m;
                }
                m += 1;
                while i < len && self.is_consonant(i) {
                    i += 1;
                }
            }
        }

        fn has_vowel(&self, len: usize) -> bool {
            (0..len).any(|i| !self.is_consonant(i))
        }

        fn ends_double_consonant(&self) -> bool {
            let n = self.b.len();
            n >= 2 && self.b[n - 1] == self.b[n - 2] && self.is_consonant(n - 1)
        }

        /// cvc at position `i` (the last byte index considered), where the
        /// final consonant is not w, x, or y.
        fn cvc(&self, i: usize) -> bool {
            if i < 2
                || !self.is_consonant(i)
                || self.is_consonant(i - 1)
                || !self.is_consonant(i - 2)
            {
                return false;
            }
            !matches!(self.b[i], b'w' | b'x' | b'y')
        }

        fn ends_with(&self, suffix: &str) -> bool {
            self.b.ends_with(suffix.as_bytes())
        }

        fn stem_len(&self, suffix: &str) -> usize {
            self.b.len() - suffix.len()
        }

        fn replace(&mut self, suffix: &str, replacement: &str) {
            let keep = self.stem_len(suffix);
            self.b.truncate(keep);
            self.b.extend_from_slice(replacement.as_bytes());
        }

        /// Apply the first matching (suffix, replacement) whose stem measure
        /// exceeds `min_measure`. Returns true when a suffix matched (even if
        /// the measure condition failed, per the original algorithm).
        fn rule(&mut self, rules: &[(&str, &str)], min_measure: usize) -> bool {
            for (suffix, replacement) in rules {
                if self.ends_with(suffix) {
                    if self.measure(self.stem_len(suffix)) > min_measure {
                        self.replace(suffix, replacement);
                    }
                    return true;
                }
            }
            false
        }

        fn step1a(&mut self) {
            if self.ends_with("sses") {
                self.replace("sses", "ss");
            } else if self.ends_with("ies") {
                self.replace("ies", "i");
            } else if !self.ends_with("ss") && self.ends_with("s") {
                self.replace("s", "");
            }
        }

        fn step1b(&mut self) {
            if self.ends_with("eed") {
                if self.measure(self.stem_len("eed")) > 0 {
                    self.replace("eed", "ee");
                }
                return;
            }
            let stripped = if self.ends_with("ed") && self.has_vowel(self.stem_len("ed")) {
                self.replace("ed", "");
                true
            } else if self.ends_with("ing") && self.has_vowel(self.stem_len("ing")) {
                self.replace("ing", "");
                true
            } else {
                false
            };
            if !stripped {
                return;
            }
            if self.ends_with("at") || self.ends_with("bl") || self.ends_with("iz") {
                self.b.push(b'e');
            } else if self.ends_double_consonant()
                && !matches!(self.b[self.b.len() - 1], b'l' | b's' | b'z')
            {
                self.b.pop();
            } else if self.measure(self.b.len()) == 1 && self.cvc(self.b.len() - 1) {
                self.b.push(b'e');
            }
        }

        fn step1c(&mut self) {
            if self.ends_with("y") && self.has_vowel(self.stem_len("y")) {
                let n = self.b.len();
                self.b[n - 1] = b'i';
            }
        }

        fn step2(&mut self) {
            self.rule(
                &[
                    ("ational", "ate"),
                    ("tional", "tion"),
                    ("enci", "ence"),
                    ("anci", "ance"),
                    ("izer", "ize"),
                    ("abli", "able"),
                    ("alli", "al"),
                    ("entli", "ent"),
                    ("eli", "e"),
                    ("ousli", "ous"),
                    ("ization", "ize"),
                    ("ation", "ate"),
                    ("ator", "ate"),
                    ("alism", "al"),
                    ("iveness", "ive"),
                    ("fulness", "ful"),
                    ("ousness", "ous"),
                    ("aliti", "al"),
                    ("iviti", "ive"),
                    ("biliti", "ble"),
                ],
                0,
            );
        }

        fn step3(&mut self) {
            self.rule(
                &[
                    ("icate", "ic"),
                    ("ative", ""),
                    ("alize", "al"),
                    ("iciti", "ic"),
                    ("ical", "ic"),
                    ("ful", ""),
                    ("ness", ""),
                ],
                0,
            );
        }

        fn step4(&mut self) {
            // "ion" only drops after s or t; handle it apart from the table.
            for (suffix, _) in [("ement", ""), ("ment", ""), ("ent", "")] {
                if self.ends_with(suffix) {
                    if self.measure(self.stem_len(suffix)) > 1 {
                        self.replace(suffix, "");
                    }
                    return;
                }
            }
            if self.ends_with("ion") {
                let keep = self.stem_len("ion");
                if keep >= 1 && matches!(self.b[keep - 1], b's' | b't') && self.measure(keep) > 1 {
                    self.replace("ion", "");
                }
                return;
            }
            self.rule(
                &[
                    ("ance", ""),
                    ("ence", ""),
                    ("able", ""),
                    ("ible", ""),
                    ("ant", ""),
                    ("ism", ""),
                    ("ate", ""),
                    ("iti", ""),
                    ("ous", ""),
                    ("ive", ""),
                    ("ize", ""),
                    ("al", ""),
                    ("er", ""),
                    ("ic", ""),
                    ("ou", ""),
                ],
                1,
            );
        }

        fn step5a(&mut self) {
            if !self.ends_with("e") {
                return;
            }
            let keep = self.b.len() - 1;
            let m = self.measure(keep);
            if m > 1 || (m == 1 && !(keep >= 1 && self.cvc(keep - 1))) {
                self.b.pop();
            }
        }

        fn step5b(&mut self) {
            if self.b.last() == Some(&b'l')
                && self.ends_double_consonant()
                && self.measure(self.b.len()) > 1
            {
                self.b.pop();
            }
        }
    }

}
