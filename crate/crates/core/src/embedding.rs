//! Word-vector table, message averaging and distance-ratio similarity.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("vector file is empty")]
    Empty,
    #[error("line {line}: expected {expected} values, found {found}")]
    Dimension {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: invalid number {token:?}")]
    Number { line: usize, token: String },
    #[error("dimension mismatch: {0} vs {1}")]
    Mismatch(usize, usize),
}

/// Lowercases, splits on whitespace and trims punctuation from both ends of
/// each token. Tokens that are pure punctuation vanish.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Immutable token → vector map. Keys are stored lowercased.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl VectorTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    /// Builds a table from `(token, vector)` pairs; the first occurrence of a
    /// token wins.
    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut table = Self::new(dim);
        for (token, v) in entries {
            if v.len() != dim {
                return Err(EmbeddingError::Mismatch(dim, v.len()));
            }
            table
                .vectors
                .entry(token.as_ref().to_lowercase())
                .or_insert(v);
        }
        Ok(table)
    }

    /// Parses the GloVe text format: one token per line followed by its
    /// whitespace-separated components. The first line fixes the dimension.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, EmbeddingError> {
        let mut table: Option<Self> = None;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|_| EmbeddingError::Number {
                        line: lineno,
                        token: p.to_string(),
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            let t = table.get_or_insert_with(|| Self::new(values.len()));
            if values.len() != t.dim || values.is_empty() {
                return Err(EmbeddingError::Dimension {
                    line: lineno,
                    expected: t.dim,
                    found: values.len(),
                });
            }
            t.vectors.entry(token.to_lowercase()).or_insert(values);
        }
        table.ok_or(EmbeddingError::Empty)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        Self::parse(BufReader::new(File::open(path)?))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(&token.to_lowercase()).map(Vec::as_slice)
    }

    /// Mean vector of the in-vocabulary tokens of `text`.
    pub fn embed(&self, text: &str) -> MessageVector {
        let mut sum = vec![0.0; self.dim];
        let mut count = 0usize;
        for tok in tokenize(text) {
            if let Some(v) = self.vectors.get(&tok) {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
                count += 1;
            }
        }
        if count > 0 {
            let n = count as f64;
            sum.iter_mut().for_each(|s| *s /= n);
        }
        MessageVector {
            values: sum,
            token_count: count,
        }
    }
}

/// Averaged word vector of a message. Empty when no token was in vocabulary,
/// in which case every component is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageVector {
    pub values: Vec<f64>,
    pub token_count: usize,
}

impl MessageVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            token_count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_count == 0
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Euclidean distance between two vectors.
pub fn distance(u: &MessageVector, v: &MessageVector) -> Result<f64, EmbeddingError> {
    l2(&u.values, &v.values)
}

pub(crate) fn l2(u: &[f64], v: &[f64]) -> Result<f64, EmbeddingError> {
    if u.len() != v.len() {
        return Err(EmbeddingError::Mismatch(u.len(), v.len()));
    }
    Ok(u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// `d_overall / (d_bot + d_overall)`, with `d_bot` forced to zero for bots
/// that have no reference messages yet. Returns 0.5 when both distances
/// vanish.
pub fn similarity_ratio(
    msg: &MessageVector,
    bot_centroid: &MessageVector,
    overall_centroid: &MessageVector,
    zero_dist_mode: bool,
) -> Result<f64, EmbeddingError> {
    let d_overall = distance(msg, overall_centroid)?;
    let d_bot = if zero_dist_mode {
        0.0
    } else {
        distance(msg, bot_centroid)?
    };
    let denom = d_bot + d_overall;
    if denom == 0.0 {
        return Ok(0.5);
    }
    Ok((d_overall / denom).clamp(0.0, 1.0))
}

/// Running mean of message vectors; empty vectors are not added.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub mean: Vec<f64>,
    pub count: usize,
}

impl Centroid {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            count: 0,
        }
    }

    /// Adds `v` to the mean. Returns false (and does nothing) for empty vectors.
    pub fn add(&mut self, v: &MessageVector) -> bool {
        if v.is_empty() {
            return false;
        }
        self.count += 1;
        let n = self.count as f64;
        for (m, x) in self.mean.iter_mut().zip(&v.values) {
            *m += (x - *m) / n;
        }
        true
    }

    pub fn as_vector(&self) -> MessageVector {
        MessageVector {
            values: self.mean.clone(),
            token_count: self.count,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> VectorTable {
        VectorTable::from_entries(
            2,
            [
                ("rain", vec![1.0, 0.0]),
                ("sun", vec![0.0, 1.0]),
                ("hello", vec![2.0, 2.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("Where?"), ["where"]);
        assert_eq!(tokenize("  Hello, WORLD!!  ... "), ["hello", "world"]);
        assert_eq!(tokenize("don't"), ["don't"]);
        assert!(tokenize("?!").is_empty());
    }

    #[test]
    fn parse_three_lines() {
        let t = VectorTable::parse("a 1 2 3 4\nb 0 0 0 1\nc 1 1 1 1\n".as_bytes()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.dim(), 4);
    }

    #[test]
    fn parse_short_line_errors_with_line_number() {
        let err = VectorTable::parse("a 1 2 3 4\nb 0 0 1\n".as_bytes()).unwrap_err();
        assert!(matches!(
            err,
            EmbeddingError::Dimension {
                line: 2,
                expected: 4,
                found: 3
            }
        ));
    }

    #[test]
    fn parse_empty_errors() {
        assert!(matches!(
            VectorTable::parse("".as_bytes()),
            Err(EmbeddingError::Empty)
        ));
    }

    #[test]
    fn duplicate_tokens_keep_first() {
        let t = VectorTable::parse("a 1 2\nA 3 4\n".as_bytes()).unwrap();
        assert_eq!(t.get("a").unwrap(), &[1.0, 2.0]);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn embed_single_and_mean() {
        let t = toy();
        assert_eq!(t.embed("rain").values, vec![1.0, 0.0]);
        let v = t.embed("Rain, sun!");
        assert_eq!(v.values, vec![0.5, 0.5]);
        assert_eq!(v.token_count, 2);
    }

    #[test]
    fn embed_all_oov_is_empty() {
        let v = toy().embed("zebra xylophone");
        assert!(v.is_empty());
        assert!(v.values.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn distance_examples() {
        let e1 = MessageVector {
            values: vec![1.0, 0.0],
            token_count: 1,
        };
        let e2 = MessageVector {
            values: vec![0.0, 1.0],
            token_count: 1,
        };
        assert_eq!(distance(&e1, &e1).unwrap(), 0.0);
        assert!((distance(&e1, &e2).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(distance(&e1, &MessageVector::zeros(3)).is_err());
    }

    #[test]
    fn ratio_examples() {
        let v = |x: f64, y: f64| MessageVector {
            values: vec![x, y],
            token_count: 1,
        };
        // Equidistant.
        assert_eq!(
            similarity_ratio(&v(0.0, 0.0), &v(1.0, 0.0), &v(-1.0, 0.0), false).unwrap(),
            0.5
        );
        // Bot distance zero.
        assert_eq!(
            similarity_ratio(&v(1.0, 0.0), &v(1.0, 0.0), &v(-1.0, 0.0), false).unwrap(),
            1.0
        );
        assert_eq!(
            similarity_ratio(&v(3.0, 4.0), &v(9.0, 9.0), &v(0.0, 0.0), true).unwrap(),
            1.0
        );
        // Everything coincides.
        assert_eq!(
            similarity_ratio(&v(1.0, 1.0), &v(1.0, 1.0), &v(1.0, 1.0), false).unwrap(),
            0.5
        );
    }

    #[test]
    fn centroid_skips_empty() {
        let mut c = Centroid::new(2);
        assert!(!c.add(&MessageVector::zeros(2)));
        assert!(c.add(&MessageVector {
            values: vec![2.0, 4.0],
            token_count: 1
        }));
        assert!(c.add(&MessageVector {
            values: vec![0.0, 0.0],
            token_count: 3
        }));
        assert_eq!(c.mean, vec![1.0, 2.0]);
        assert_eq!(c.count, 2);
    }
}
