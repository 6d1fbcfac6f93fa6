//! Static token vectors from corpus statistics.
//!
//! Training builds a symmetric-window co-occurrence matrix over the usable
//! vocabulary, converts it to positive PMI, and keeps the `dim` dominant
//! eigenpairs (largest |eigenvalue|, i.e. the top singular triplets of the
//! symmetric matrix) found by seeded subspace iteration with a Rayleigh-Ritz
//! step. Rows of `Q * sqrt(|Lambda|)` are L2-normalized.

use std::collections::HashMap;
use std::io::BufRead;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::Embedder;
use crate::corpus::Corpus;
use crate::text::{TokenId, Vocabulary};
use crate::{Error, Result};

const OVERSAMPLE: usize = 8;
const SUBSPACE_ITERS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    TrainedOnCorpus,
    LoadedFromFile,
}

/// Unit-norm vector per vocabulary id. Special ids share the `[UNK]` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: Vec<f64>,
    provenance: Provenance,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn vector(&self, id: TokenId) -> &[f64] {
        let row = if id.is_special() || id.index() >= self.len() {
            TokenId::UNK.index()
        } else {
            id.index()
        };
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.dim < 2
            || !self.vectors.len().is_multiple_of(self.dim)
            || self.len() <= TokenId::UNK.index()
        {
            return Err(Error::invalid("embeddings", "inconsistent table shape"));
        }
        Ok(())
    }

    /// Fills special rows and token rows without a vector with the
    /// normalized mean of the provided rows.
    fn finish(dim: usize, rows: Vec<Option<Vec<f64>>>, provenance: Provenance) -> Self {
        let mut mean = vec![0.0; dim];
        for v in rows.iter().flatten() {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        let unk = normalized(&mean).unwrap_or_else(|| {
            let mut e = vec![0.0; dim];
            e[0] = 1.0;
            e
        });
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.into_iter().enumerate() {
            match row {
                Some(v) if i >= TokenId::FIRST_USABLE as usize => vectors.extend(v),
                _ => vectors.extend_from_slice(&unk),
            }
        }
        EmbeddingTable {
            dim,
            vectors,
            provenance,
        }
    }
}

impl Embedder for EmbeddingTable {
    fn embed(&self, tokens: &[TokenId]) -> Result<Vec<Vec<f64>>> {
        Ok(tokens.iter().map(|&t| self.vector(t).to_vec()).collect())
    }
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| x / norm).collect())
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    /// One of the inputs had zero norm; `value` is 0.0.
    pub degenerate: bool,
}

/// `u.v / (|u| |v|)`; zero vectors give a flagged 0.0.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<Cosine> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let nu = dot(u, u);
    let nv = dot(v, v);
    if nu == 0.0 || nv == 0.0 {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    let value = (dot(u, v) / (nu * nv).sqrt()).clamp(-1.0, 1.0);
    Ok(Cosine {
        value,
        degenerate: false,
    })
}

/// Dense positive-PMI matrix over usable tokens (row `i` is token id `i + 3`).
/// Exposed for tests and diagnostics.
pub fn ppmi_matrix(corpus: &Corpus, window: usize) -> DMatrix<f64> {
    let (n, entries) = ppmi_entries(corpus, window);
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in entries.iter().enumerate() {
        for &(j, w) in row {
            m[(i, j)] = w;
        }
    }
    m
}

/// Sparse PPMI rows: `(column, weight)` sorted by column.
fn ppmi_entries(corpus: &Corpus, window: usize) -> (usize, Vec<Vec<(usize, f64)>>) {
    let n = corpus.vocab().usable_len();
    let first = TokenId::FIRST_USABLE as usize;
    let mut counts: HashMap<(usize, usize), f64> = HashMap::new();
    for doc in corpus.documents() {
        let toks = &doc.tokens;
        for (p, &a) in toks.iter().enumerate() {
            if a.is_special() {
                continue;
            }
            for &b in toks.iter().skip(p + 1).take(window) {
                if b.is_special() {
                    continue;
                }
                let (i, j) = (a.index() - first, b.index() - first);
                *counts.entry((i, j)).or_default() += 1.0;
                *counts.entry((j, i)).or_default() += 1.0;
            }
        }
    }
    let mut row_sum = vec![0.0; n];
    for (&(i, _), &c) in &counts {
        row_sum[i] += c;
    }
    let total: f64 = row_sum.iter().sum();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (&(i, j), &c) in &counts {
        let pmi = (c * total / (row_sum[i] * row_sum[j])).ln();
        if pmi > 0.0 {
            rows[i].push((j, pmi));
        }
    }
    for r in &mut rows {
        r.sort_by_key(|&(j, _)| j);
    }
    (n, rows)
}

fn sparse_mul(rows: &[Vec<(usize, f64)>], x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(x.nrows(), x.ncols());
    for (i, row) in rows.iter().enumerate() {
        for &(j, w) in row {
            for c in 0..x.ncols() {
                y[(i, c)] += w * x[(j, c)];
            }
        }
    }
    y
}

/// Trains PPMI/SVD vectors. Deterministic for fixed inputs and seed.
pub fn train_embeddings(
    corpus: &Corpus,
    dim: usize,
    window: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if dim < 2 {
        return Err(Error::invalid("dim", "must be >= 2"));
    }
    if window < 1 {
        return Err(Error::invalid("window", "must be >= 1"));
    }
    let (n, rows) = ppmi_entries(corpus, window);
    if dim > n {
        return Err(Error::RankTooSmall { dim, rank: n });
    }
    let k = (dim + OVERSAMPLE).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0));
    basis = basis.qr().q();
    // A full-rank start already spans every eigenvector.
    let iters = if k == n { 0 } else { SUBSPACE_ITERS };
    for _ in 0..iters {
        basis = sparse_mul(&rows, &basis).qr().q();
    }
    let projected = basis.transpose() * sparse_mul(&rows, &basis);
    let projected = (&projected + projected.transpose()) * 0.5;
    let eig = SymmetricEigen::new(projected);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .total_cmp(&eig.eigenvalues[a].abs())
            .then(a.cmp(&b))
    });

    let first = TokenId::FIRST_USABLE as usize;
    let mut out: Vec<Option<Vec<f64>>> = vec![None; first + n];
    let mut coords = DMatrix::zeros(k, dim);
    for (c, &e) in order.iter().take(dim).enumerate() {
        let scale = eig.eigenvalues[e].abs().sqrt();
        for r in 0..k {
            coords[(r, c)] = eig.eigenvectors[(r, e)] * scale;
        }
    }
    let emb = &basis * coords;
    for i in 0..n {
        let row: Vec<f64> = emb.row(i).iter().copied().collect();
        out[first + i] = normalized(&row);
    }
    Ok(EmbeddingTable::finish(
        dim,
        out,
        Provenance::TrainedOnCorpus,
    ))
}

/// Reads `surface v1 ... vd` lines. Surfaces outside `vocab` are ignored;
/// vocabulary tokens absent from the file fall back to the `[UNK]` vector.
pub fn load_embeddings<R: BufRead>(source: R, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let mut dim = None;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    let mut unk_row = None;
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(surface) = parts.next() else {
            continue;
        };
        let values = parts
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::MalformedRecord {
                line: line_no,
                message: e.to_string(),
            })?;
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected {
            return Err(Error::DimensionAtLine {
                line: line_no,
                expected,
                found: values.len(),
            });
        }
        if expected < 2 {
            return Err(Error::invalid(
                "dim",
                "word vectors need at least 2 components",
            ));
        }
        let v = normalized(&values).ok_or_else(|| Error::MalformedRecord {
            line: line_no,
            message: "zero or non-finite vector".into(),
        })?;
        if surface == crate::text::UNK_SURFACE {
            unk_row = Some(v);
        } else if let Some(id) = vocab.id(surface) {
            rows[id.index()] = Some(v);
        }
    }
    let dim = dim.ok_or(Error::EmptyCorpus)?;
    let mut table = EmbeddingTable::finish(dim, rows.clone(), Provenance::LoadedFromFile);
    if let Some(unk) = unk_row {
        // Explicit [UNK] line wins over the mean.
        for (i, row) in rows.iter().enumerate() {
            if row.is_none() || i < TokenId::FIRST_USABLE as usize {
                table.vectors[i * dim..(i + 1) * dim].copy_from_slice(&unk);
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::build_vocabulary;

    fn vocab(words: &[&str]) -> Vocabulary {
        build_vocabulary(&[words.to_vec()], 1).unwrap()
    }

    #[test]
    fn cosine_closed_forms() {
        let x = [0.6, 0.8];
        assert_eq!(cosine(&x, &x).unwrap().value, 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap().value, 0.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((cosine(&[h, h], &[1.0, 0.0]).unwrap().value - h).abs() < 1e-15);
        let z = cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(z.degenerate && z.value == 0.0);
        assert!(cosine(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn load_orthogonal_pair() {
        let v = vocab(&["apple", "pie", "tree"]);
        let t = load_embeddings("apple 1 0\npie 0 2\n".as_bytes(), &v).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.vector(v.id("apple").unwrap()), [1.0, 0.0]);
        assert_eq!(t.vector(v.id("pie").unwrap()), [0.0, 1.0]);
        // Missing vocabulary token uses the [UNK] row.
        assert_eq!(t.vector(v.id("tree").unwrap()), t.vector(TokenId::UNK));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(t.vector(TokenId::UNK).iter().all(|x| (x - h).abs() < 1e-15));
        assert_eq!(t.provenance(), Provenance::LoadedFromFile);
    }

    #[test]
    fn load_dimension_error_names_line() {
        let v = vocab(&["apple", "pie"]);
        let e = load_embeddings("apple 1 0\npie 0 1 1\n".as_bytes(), &v).unwrap_err();
        assert!(matches!(
            e,
            Error::DimensionAtLine {
                line: 2,
                expected: 2,
                found: 3
            }
        ));
    }

    #[test]
    fn load_ignores_unknown_surfaces_and_honours_unk_line() {
        let v = vocab(&["apple", "pie"]);
        let t = load_embeddings("zebra 1 1\n[UNK] 0 3\napple 1 0\n".as_bytes(), &v).unwrap();
        assert_eq!(t.vector(v.id("pie").unwrap()), [0.0, 1.0]);
        assert_eq!(t.vector(TokenId::MASK), [0.0, 1.0]);
    }
}
