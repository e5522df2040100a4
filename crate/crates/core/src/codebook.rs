//! Codebook geometry and the token/embedding sequence types.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::sq_dist;
use crate::rng;

/// `V` code vectors of dimension `C`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CodebookRepr", into = "CodebookRepr")]
pub struct Codebook {
    vocab: usize,
    dim: usize,
    entries: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CodebookRepr {
    #[serde(rename = "V")]
    vocab: usize,
    #[serde(rename = "C")]
    dim: usize,
    entries: Vec<Vec<f64>>,
}

impl TryFrom<CodebookRepr> for Codebook {
    type Error = Error;

    fn try_from(r: CodebookRepr) -> Result<Self> {
        if r.entries.len() != r.vocab {
            return Err(Error::InvalidCodebook(format!(
                "V={} but {} entries",
                r.vocab,
                r.entries.len()
            )));
        }
        Codebook::new(r.dim, r.entries)
    }
}

impl From<Codebook> for CodebookRepr {
    fn from(cb: Codebook) -> Self {
        CodebookRepr {
            vocab: cb.vocab,
            dim: cb.dim,
            entries: cb.entries.chunks(cb.dim).map(|c| c.to_vec()).collect(),
        }
    }
}

impl Codebook {
    /// Builds a codebook, rejecting non-finite or repeated entries.
    pub fn new(dim: usize, entries: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidCodebook("dimension must be positive".into()));
        }
        if entries.is_empty() {
            return Err(Error::InvalidCodebook("no entries".into()));
        }
        let vocab = entries.len();
        let mut flat = Vec::with_capacity(vocab * dim);
        for (j, e) in entries.iter().enumerate() {
            if e.len() != dim {
                return Err(Error::Dimension { expected: dim, got: e.len() });
            }
            if e.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidCodebook(format!("entry {j} is not finite")));
            }
            flat.extend_from_slice(e);
        }
        let cb = Codebook { vocab, dim, entries: flat };
        for a in 0..vocab {
            for b in (a + 1)..vocab {
                if cb.entry(a) == cb.entry(b) {
                    return Err(Error::InvalidCodebook(format!("entries {a} and {b} coincide")));
                }
            }
        }
        Ok(cb)
    }

    /// Random codes in `[-1, 1]^C`, kept only if every pair is at least a
    /// minimum distance apart. The distance target starts at `2.4 / ceil(V^(1/C))`
    /// and shrinks by 10% after every 2000 rejected draws.
    pub fn scattered(vocab: usize, dim: usize, seed: u64) -> Result<Self> {
        if vocab == 0 || dim == 0 {
            return Err(Error::param("codebook needs V >= 1 and C >= 1"));
        }
        let per_axis = libm::ceil(libm::pow(vocab as f64, 1.0 / dim as f64)).max(1.0);
        let mut min_dist = 2.4 / per_axis;
        let mut rng = rng::stream(seed, &[0xC0DE]);
        let mut attempts = 0usize;
        loop {
            let pts: Vec<Vec<f64>> = (0..vocab)
                .map(|_| (0..dim).map(|_| rng::uniform(&mut rng, -1.0, 1.0)).collect())
                .collect();
            let ok = (0..vocab).all(|a| {
                ((a + 1)..vocab).all(|b| sq_dist(&pts[a], &pts[b]) >= min_dist * min_dist)
            });
            if ok {
                return Codebook::new(dim, pts);
            }
            attempts += 1;
            if attempts % 2000 == 0 {
                min_dist *= 0.9;
            }
        }
    }

    /// Two codes at `(-1, 0, ..)` and `(1, 0, ..)`.
    pub fn pair(dim: usize) -> Result<Self> {
        let mut a = vec![0.0; dim];
        let mut b = vec![0.0; dim];
        if let (Some(x), Some(y)) = (a.first_mut(), b.first_mut()) {
            *x = -1.0;
            *y = 1.0;
        }
        Codebook::new(dim, vec![a, b])
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn entry(&self, j: usize) -> &[f64] {
        &self.entries[j * self.dim..(j + 1) * self.dim]
    }

    pub fn entries(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks(self.dim)
    }
}

/// Next-token distribution over the codebook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidProb("empty".into()));
        }
        if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidProb("entries must be finite and nonnegative".into()));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidProb(format!("entries sum to {total}")));
        }
        Ok(ProbVector(p))
    }

    /// Rescales nonnegative weights to sum to one.
    pub fn normalized(mut w: Vec<f64>) -> Result<Self> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Degenerate);
        }
        for v in &mut w {
            *v /= total;
        }
        ProbVector::new(w)
    }

    pub fn uniform(vocab: usize) -> Self {
        ProbVector(vec![1.0 / vocab as f64; vocab])
    }

    pub fn one_hot(vocab: usize, j: usize) -> Self {
        let mut p = vec![0.0; vocab];
        p[j] = 1.0;
        ProbVector(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Total variation distance to another distribution on the same vocabulary.
    pub fn tv(&self, other: &[f64]) -> f64 {
        0.5 * self.0.iter().zip(other).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ProbVector::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

impl Deref for ProbVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Token ids of one sequence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<usize>);

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for TokenSeq {
    fn from(v: Vec<usize>) -> Self {
        TokenSeq(v)
    }
}

/// Continuous sequence: `n` vectors of dimension `C`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedSeq {
    dim: usize,
    data: Vec<f64>,
}

impl EmbedSeq {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Dimension { expected: dim, got: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding sequence".into()));
        }
        Ok(EmbedSeq { dim, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::Dimension { expected: dim, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        EmbedSeq::new(dim, data)
    }

    pub(crate) fn from_raw(dim: usize, data: Vec<f64>) -> Self {
        debug_assert!(data.len() % dim == 0);
        EmbedSeq { dim, data }
    }

    /// Standard Gaussian noise sequence.
    pub fn gaussian<R: rand::Rng + ?Sized>(rng: &mut R, len: usize, dim: usize) -> Self {
        let mut data = vec![0.0; len * dim];
        rng::fill_normal(rng, &mut data);
        EmbedSeq { dim, data }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn position(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Looks up the code vector of every token.
pub fn embed(seq: &TokenSeq, cb: &Codebook) -> Result<EmbedSeq> {
    let mut data = Vec::with_capacity(seq.len() * cb.dim());
    for &id in seq.ids() {
        if id >= cb.vocab() {
            return Err(Error::InvalidToken { id, vocab: cb.vocab() });
        }
        data.extend_from_slice(cb.entry(id));
    }
    Ok(EmbedSeq { dim: cb.dim(), data })
}

/// Index of the nearest code, ties broken toward the lower index.
pub fn quantize_point(x: &[f64], cb: &Codebook) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in cb.entries().enumerate() {
        let d = sq_dist(x, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

pub fn quantize(x: &EmbedSeq, cb: &Codebook) -> TokenSeq {
    TokenSeq((0..x.len()).map(|i| quantize_point(x.position(i), cb)).collect())
}

/// Rectified-flow corruption `(1 - t) x0 + t eps`.
pub fn corrupt(x0: &[f64], t: f64, eps: &[f64]) -> Vec<f64> {
    x0.iter().zip(eps).map(|(a, e)| (1.0 - t) * a + t * e).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(entries: &[f64]) -> Codebook {
        Codebook::new(1, entries.iter().map(|&v| vec![v]).collect()).unwrap()
    }

    #[test]
    fn embed_examples() {
        let cb = line(&[0.0]);
        assert_eq!(embed(&TokenSeq(vec![0]), &cb).unwrap().as_slice(), &[0.0]);
        let cb = line(&[-1.0, 1.0]);
        assert_eq!(embed(&TokenSeq(vec![1, 0]), &cb).unwrap().as_slice(), &[1.0, -1.0]);
        assert_eq!(
            embed(&TokenSeq(vec![2]), &cb),
            Err(Error::InvalidToken { id: 2, vocab: 2 })
        );
    }

    #[test]
    fn quantize_examples() {
        let cb = line(&[0.0, 1.0]);
        let q = |v: f64| quantize(&EmbedSeq::new(1, vec![v]).unwrap(), &cb);
        assert_eq!(q(0.9), TokenSeq(vec![1]));
        assert_eq!(q(0.5), TokenSeq(vec![0]));
    }

    #[test]
    fn corrupt_examples() {
        assert_eq!(corrupt(&[1.0], 0.0, &[5.0]), vec![1.0]);
        assert_eq!(corrupt(&[1.0], 1.0, &[5.0]), vec![5.0]);
        assert_eq!(corrupt(&[2.0], 0.5, &[0.0]), vec![1.0]);
    }

    #[test]
    fn codebook_rejects_duplicates_and_nan() {
        assert!(Codebook::new(1, vec![vec![1.0], vec![1.0]]).is_err());
        assert!(Codebook::new(1, vec![vec![f64::NAN]]).is_err());
        assert!(Codebook::new(2, vec![vec![1.0]]).is_err());
    }

    #[test]
    fn scattered_codebook_is_reproducible() {
        let a = Codebook::scattered(4, 2, 7).unwrap();
        let b = Codebook::scattered(4, 2, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, Codebook::scattered(4, 2, 8).unwrap());
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![0.5, 0.5]).is_ok());
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.5 + 5e-10]).is_ok());
    }

    proptest! {
        #[test]
        fn quantize_inverts_embed(seed in 0u64..500, vocab in 1usize..9, dim in 1usize..4, len in 1usize..6) {
            let cb = Codebook::scattered(vocab, dim, seed).unwrap();
            let mut r = rng::seeded(seed);
            let seq = TokenSeq((0..len).map(|_| rand::Rng::random_range(&mut r, 0..vocab)).collect());
            prop_assert_eq!(quantize(&embed(&seq, &cb).unwrap(), &cb), seq);
        }

        #[test]
        fn corrupt_is_affine(x in -5.0f64..5.0, y in -5.0f64..5.0, e in -5.0f64..5.0, t in 0.0f64..1.0) {
            let d = corrupt(&[x], t, &[e])[0] - corrupt(&[y], t, &[e])[0];
            prop_assert!((d - (1.0 - t) * (x - y)).abs() < 1e-12);
        }
    }
}
