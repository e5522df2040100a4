//! Exact tabular autoregressive teacher.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::codebook::{ProbVector, TokenSeq};
use crate::error::{Error, Result};
use crate::rng;

/// Default cap on `V^n` for brute-force enumeration.
pub const ENUMERATION_CAP: u128 = 1_000_000;

/// Dense next-token tables: position `i` (0-based) stores `V^i` conditionals,
/// indexed by the prefix read as a base-`V` number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TeacherRepr", into = "TeacherRepr")]
pub struct TabularTeacher {
    n: usize,
    vocab: usize,
    tables: Vec<Vec<ProbVector>>,
}

#[derive(Serialize, Deserialize)]
struct TeacherRepr {
    n: usize,
    #[serde(rename = "V")]
    vocab: usize,
    tables: Vec<Vec<ProbVector>>,
}

impl TryFrom<TeacherRepr> for TabularTeacher {
    type Error = Error;
    fn try_from(r: TeacherRepr) -> Result<Self> {
        TabularTeacher::from_tables(r.n, r.vocab, r.tables)
    }
}

impl From<TabularTeacher> for TeacherRepr {
    fn from(t: TabularTeacher) -> Self {
        TeacherRepr { n: t.n, vocab: t.vocab, tables: t.tables }
    }
}

fn checked_pow(base: usize, exp: usize) -> Option<u128> {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base as u128)?;
    }
    Some(acc)
}

impl TabularTeacher {
    pub fn from_tables(n: usize, vocab: usize, tables: Vec<Vec<ProbVector>>) -> Result<Self> {
        if n == 0 || vocab == 0 {
            return Err(Error::param("teacher needs n >= 1 and V >= 1"));
        }
        if tables.len() != n {
            return Err(Error::Length { expected: n, got: tables.len() });
        }
        for (i, table) in tables.iter().enumerate() {
            let want = checked_pow(vocab, i).ok_or_else(|| Error::param("table too large"))?;
            if table.len() as u128 != want {
                return Err(Error::param(alloc::format!(
                    "position {i} needs {want} conditionals, found {}",
                    table.len()
                )));
            }
            if let Some(p) = table.iter().find(|p| p.len() != vocab) {
                return Err(Error::Dimension { expected: vocab, got: p.len() });
            }
        }
        Ok(TabularTeacher { n, vocab, tables })
    }

    /// Every conditional drawn from a symmetric Dirichlet via normalized
    /// Gamma draws, reproducible from `seed`.
    pub fn dirichlet(n: usize, vocab: usize, concentration: f64, seed: u64) -> Result<Self> {
        if !(concentration > 0.0) || !concentration.is_finite() {
            return Err(Error::param("Dirichlet concentration must be positive"));
        }
        if n == 0 || vocab == 0 {
            return Err(Error::param("teacher needs n >= 1 and V >= 1"));
        }
        let gamma = Gamma::new(concentration, 1.0).map_err(|_| Error::param("bad concentration"))?;
        let mut rng = rng::stream(seed, &[0xD1A1]);
        let mut tables = Vec::with_capacity(n);
        for i in 0..n {
            let count = checked_pow(vocab, i)
                .filter(|&c| c <= ENUMERATION_CAP * vocab as u128)
                .ok_or_else(|| Error::param("teacher table too large"))? as usize;
            let mut table = Vec::with_capacity(count);
            for _ in 0..count {
                loop {
                    let w: Vec<f64> = (0..vocab).map(|_| gamma.sample(&mut rng)).collect();
                    if let Ok(p) = ProbVector::normalized(w) {
                        table.push(p);
                        break;
                    }
                }
            }
            tables.push(table);
        }
        TabularTeacher::from_tables(n, vocab, tables)
    }

    /// Two equiprobable sequences `[0, 0]` and `[1, 1]`.
    pub fn pair() -> Self {
        let tables = vec![
            vec![ProbVector::uniform(2)],
            vec![ProbVector::one_hot(2, 0), ProbVector::one_hot(2, 1)],
        ];
        TabularTeacher { n: 2, vocab: 2, tables }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn tables(&self) -> &[Vec<ProbVector>] {
        &self.tables
    }

    fn prefix_index(&self, prefix: &[usize]) -> Result<usize> {
        let mut idx = 0usize;
        for &id in prefix {
            if id >= self.vocab {
                return Err(Error::InvalidToken { id, vocab: self.vocab });
            }
            idx = idx * self.vocab + id;
        }
        Ok(idx)
    }

    /// `p(q_i | q_<i)` for the given prefix (its length selects the position).
    pub fn cond_prob(&self, prefix: &[usize]) -> Result<&ProbVector> {
        if prefix.len() >= self.n {
            return Err(Error::Position { len: prefix.len(), n: self.n });
        }
        let idx = self.prefix_index(prefix)?;
        Ok(&self.tables[prefix.len()][idx])
    }

    /// Product of the conditionals along `z`.
    pub fn seq_prob(&self, z: &TokenSeq) -> Result<f64> {
        if z.len() != self.n {
            return Err(Error::Length { expected: self.n, got: z.len() });
        }
        let ids = z.ids();
        let mut prob = 1.0;
        for i in 0..self.n {
            let p = self.cond_prob(&ids[..i])?;
            let id = ids[i];
            if id >= self.vocab {
                return Err(Error::InvalidToken { id, vocab: self.vocab });
            }
            prob *= p[id];
        }
        Ok(prob)
    }

    pub fn ancestral_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenSeq {
        let mut ids = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let idx = ids.iter().fold(0usize, |acc, &id| acc * self.vocab + id);
            let j = rng::categorical(rng, &self.tables[i][idx]);
            ids.push(j);
        }
        TokenSeq(ids)
    }

    pub fn sequence_count(&self) -> Option<u128> {
        checked_pow(self.vocab, self.n)
    }

    /// Exact distribution over all `V^n` sequences, including zero-mass ones.
    pub fn enumerate_distribution(&self) -> Result<SeqDist> {
        self.enumerate_with_cap(ENUMERATION_CAP)
    }

    pub fn enumerate_with_cap(&self, cap: u128) -> Result<SeqDist> {
        check_enumerable(self.vocab, self.n, cap)?;
        let mut out = BTreeMap::new();
        // depth-first walk carrying the running product
        let mut stack: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
        while let Some((prefix, prob)) = stack.pop() {
            if prefix.len() == self.n {
                out.insert(TokenSeq(prefix), prob);
                continue;
            }
            let p = self.cond_prob(&prefix)?;
            for j in (0..self.vocab).rev() {
                let mut next = prefix.clone();
                next.push(j);
                stack.push((next, prob * p[j]));
            }
        }
        Ok(SeqDist(out))
    }

    /// Marginal distribution of each position.
    pub fn marginals(&self) -> Result<Vec<ProbVector>> {
        let dist = self.enumerate_distribution()?;
        let mut m = vec![vec![0.0; self.vocab]; self.n];
        for (z, &p) in dist.iter() {
            for (i, &id) in z.ids().iter().enumerate() {
                m[i][id] += p;
            }
        }
        m.into_iter().map(ProbVector::normalized).collect()
    }
}

/// Checks that `V^n` sequences fit under `cap`; returns the count.
pub fn check_enumerable(vocab: usize, n: usize, cap: u128) -> Result<u128> {
    let size = checked_pow(vocab, n).unwrap_or(u128::MAX);
    if size > cap {
        return Err(Error::TooLarge { size, cap });
    }
    Ok(size)
}

/// Finite distribution over token sequences.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeqDist(pub BTreeMap<TokenSeq, f64>);

impl SeqDist {
    pub fn get(&self, z: &TokenSeq) -> f64 {
        self.0.get(z).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TokenSeq, &f64)> {
        self.0.iter()
    }

    pub fn total(&self) -> f64 {
        self.0.values().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Product of independent per-position distributions.
    pub fn product(marginals: &[ProbVector]) -> SeqDist {
        let mut out = BTreeMap::new();
        let mut stack: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
        while let Some((prefix, prob)) = stack.pop() {
            let i = prefix.len();
            if i == marginals.len() {
                out.insert(TokenSeq(prefix), prob);
                continue;
            }
            for (j, &pj) in marginals[i].iter().enumerate() {
                let mut next = prefix.clone();
                next.push(j);
                stack.push((next, prob * pj));
            }
        }
        SeqDist(out)
    }
}
