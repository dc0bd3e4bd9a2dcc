//! Truncated signatures over the alphabet `{1, .., d}`.
//!
//! Coefficients are stored flat, level by level (levels 1..=N, the level-0
//! coefficient is the implicit constant 1), lexicographic within a level.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::timeseries::EmbeddedPath;

/// Largest supported truncation depth.
pub const MAX_DEPTH: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum SigError {
    #[error("depth {0} outside 1..={MAX_DEPTH}")]
    BadDepth(usize),
    #[error("alphabet size must be positive")]
    EmptyAlphabet,
    #[error("letter {letter} outside alphabet 1..={d}")]
    LetterOutOfRange { letter: usize, d: usize },
    #[error("word of length {len} exceeds depth {depth}")]
    WordTooLong { len: usize, depth: usize },
    #[error("empty word")]
    EmptyWord,
    #[error("index {index} outside signature of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("shape mismatch: (d={d1}, N={n1}) vs (d={d2}, N={n2})")]
    ShapeMismatch {
        d1: usize,
        n1: usize,
        d2: usize,
        n2: usize,
    },
    #[error("increment has {got} coordinates, expected {expected}")]
    IncrementDim { expected: usize, got: usize },
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("evaluation times must be ascending")]
    UnorderedTimes,
    #[error("cannot parse word `{0}`")]
    ParseWord(String),
}

fn check_shape(d: usize, depth: usize) -> Result<(), SigError> {
    if d == 0 {
        return Err(SigError::EmptyAlphabet);
    }
    if depth == 0 || depth > MAX_DEPTH {
        return Err(SigError::BadDepth(depth));
    }
    Ok(())
}

/// Number of words of length 1..=depth over `d` letters.
pub fn sig_dim(d: usize, depth: usize) -> usize {
    (1..=depth).map(|k| d.pow(k as u32)).sum()
}

/// Offset of the first level-`k` coefficient in the flat layout.
pub fn level_offset(d: usize, k: usize) -> usize {
    (1..k).map(|j| d.pow(j as u32)).sum()
}

/// A nonempty word with 1-based letters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word(Vec<usize>);

impl Word {
    pub fn new(letters: Vec<usize>) -> Result<Self, SigError> {
        if letters.is_empty() {
            return Err(SigError::EmptyWord);
        }
        Ok(Self(letters))
    }

    pub fn letters(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The word `(letter, .., letter)` of length `k`.
    pub fn repeated(letter: usize, k: usize) -> Result<Self, SigError> {
        Self::new(vec![letter; k])
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        write!(f, "{}", parts.join("."))
    }
}

impl FromStr for Word {
    type Err = SigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let letters = s
            .split('.')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| SigError::ParseWord(s.to_string()))?;
        Word::new(letters)
    }
}

/// Zero-based flat index of `w` in the depth-`depth` layout.
pub fn word_index(w: &Word, d: usize, depth: usize) -> Result<usize, SigError> {
    check_shape(d, depth)?;
    if w.len() > depth {
        return Err(SigError::WordTooLong {
            len: w.len(),
            depth,
        });
    }
    let mut rank = 0usize;
    for &letter in w.letters() {
        if letter == 0 || letter > d {
            return Err(SigError::LetterOutOfRange { letter, d });
        }
        rank = rank * d + (letter - 1);
    }
    Ok(level_offset(d, w.len()) + rank)
}

/// Inverse of [`word_index`].
pub fn index_to_word(index: usize, d: usize, depth: usize) -> Result<Word, SigError> {
    check_shape(d, depth)?;
    let size = sig_dim(d, depth);
    if index >= size {
        return Err(SigError::IndexOutOfRange { index, size });
    }
    let mut k = 1;
    while level_offset(d, k + 1) <= index {
        k += 1;
    }
    let mut rank = index - level_offset(d, k);
    let mut letters = vec![0; k];
    for slot in letters.iter_mut().rev() {
        *slot = rank % d + 1;
        rank /= d;
    }
    Word::new(letters)
}

/// All words of the layout in index order.
pub fn all_words(d: usize, depth: usize) -> Result<Vec<Word>, SigError> {
    (0..sig_dim(d, depth))
        .map(|i| index_to_word(i, d, depth))
        .collect()
}

/// Indices of the words made only of the last letter (the time channel).
pub fn time_word_indices(d: usize, depth: usize) -> Vec<usize> {
    (1..=depth)
        .map(|k| level_offset(d, k) + d.pow(k as u32) - 1)
        .collect()
}

/// Truncated signature with an implicit level-0 coefficient of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SigVector {
    d: usize,
    depth: usize,
    coeffs: Vec<f64>,
}

impl SigVector {
    /// Signature of a constant path (all coefficients 0).
    pub fn identity(d: usize, depth: usize) -> Result<Self, SigError> {
        check_shape(d, depth)?;
        Ok(Self {
            d,
            depth,
            coeffs: vec![0.0; sig_dim(d, depth)],
        })
    }

    pub fn from_coeffs(d: usize, depth: usize, coeffs: Vec<f64>) -> Result<Self, SigError> {
        check_shape(d, depth)?;
        let size = sig_dim(d, depth);
        if coeffs.len() != size {
            return Err(SigError::IndexOutOfRange {
                index: coeffs.len(),
                size,
            });
        }
        Ok(Self { d, depth, coeffs })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Level-`k` block (1-based level).
    pub fn level(&self, k: usize) -> &[f64] {
        let start = level_offset(self.d, k);
        &self.coeffs[start..start + self.d.pow(k as u32)]
    }

    pub fn get(&self, w: &Word) -> Result<f64, SigError> {
        Ok(self.coeffs[word_index(w, self.d, self.depth)?])
    }

    pub fn dot(&self, alpha: &[f64]) -> f64 {
        self.coeffs.iter().zip(alpha).map(|(a, b)| a * b).sum()
    }

    /// Right-multiplies in place by the signature of a linear segment.
    pub fn extend(&mut self, increment: &[f64]) -> Result<(), SigError> {
        if increment.len() != self.d {
            return Err(SigError::IncrementDim {
                expected: self.d,
                got: increment.len(),
            });
        }
        let nonzero: Vec<usize> = (0..self.d).filter(|&j| increment[j] != 0.0).collect();
        match nonzero.as_slice() {
            [] => {}
            [j] => self.extend_axis(*j, increment[*j]),
            _ => {
                let seg = segment_signature(increment, self.depth)?;
                self.mul_assign_right(&seg);
            }
        }
        Ok(())
    }

    /// Right-multiplies by the exponential of `h * e_letter` (0-based letter).
    pub fn extend_axis(&mut self, letter: usize, h: f64) {
        let d = self.d;
        let mut fact = vec![1.0; self.depth + 1];
        for m in 1..=self.depth {
            fact[m] = fact[m - 1] * h / m as f64;
        }
        for k in (1..=self.depth).rev() {
            let off_k = level_offset(d, k);
            // j = 0 term: e_letter^{⊗k} h^k / k!
            let mut idx = 0;
            for _ in 0..k {
                idx = idx * d + letter;
            }
            self.coeffs[off_k + idx] += fact[k];
            for j in 1..k {
                let m = k - j;
                let off_j = level_offset(d, j);
                let mut suffix = 0;
                for _ in 0..m {
                    suffix = suffix * d + letter;
                }
                let stride = d.pow(m as u32);
                for u in 0..d.pow(j as u32) {
                    let a = self.coeffs[off_j + u];
                    if a != 0.0 {
                        self.coeffs[off_k + u * stride + suffix] += a * fact[m];
                    }
                }
            }
        }
    }

    fn mul_assign_right(&mut self, b: &SigVector) {
        let d = self.d;
        for k in (1..=self.depth).rev() {
            let off_k = level_offset(d, k);
            let width_k = d.pow(k as u32);
            let mut out: Vec<f64> = (0..width_k)
                .map(|i| self.coeffs[off_k + i] + b.coeffs[off_k + i])
                .collect();
            for j in 1..k {
                let m = k - j;
                let off_j = level_offset(d, j);
                let off_m = level_offset(d, m);
                let stride = d.pow(m as u32);
                for u in 0..d.pow(j as u32) {
                    let a = self.coeffs[off_j + u];
                    if a == 0.0 {
                        continue;
                    }
                    let row = &mut out[u * stride..(u + 1) * stride];
                    for (o, bv) in row.iter_mut().zip(&b.coeffs[off_m..off_m + stride]) {
                        *o += a * bv;
                    }
                }
            }
            self.coeffs[off_k..off_k + width_k].copy_from_slice(&out);
        }
    }
}

/// Signature of a straight line with the given increment: level k is
/// `increment^{⊗k} / k!`.
pub fn segment_signature(increment: &[f64], depth: usize) -> Result<SigVector, SigError> {
    let d = increment.len();
    let mut sig = SigVector::identity(d, depth)?;
    sig.coeffs[..d].copy_from_slice(increment);
    for k in 2..=depth {
        let prev = level_offset(d, k - 1);
        let cur = level_offset(d, k);
        let width_prev = d.pow(k as u32 - 1);
        for u in 0..width_prev {
            let a = sig.coeffs[prev + u] / k as f64;
            for (v, x) in increment.iter().enumerate() {
                sig.coeffs[cur + u * d + v] = a * x;
            }
        }
    }
    Ok(sig)
}

/// Chen product: level k of the result is `sum_j a_j ⊗ b_{k-j}`.
pub fn chen_concat(a: &SigVector, b: &SigVector) -> Result<SigVector, SigError> {
    if a.d != b.d || a.depth != b.depth {
        return Err(SigError::ShapeMismatch {
            d1: a.d,
            n1: a.depth,
            d2: b.d,
            n2: b.depth,
        });
    }
    let mut out = a.clone();
    out.mul_assign_right(b);
    Ok(out)
}

/// Walks an embedded path segment by segment, maintaining the running signature.
struct SegmentWalker<'a> {
    path: &'a EmbeddedPath,
    next: usize,
    sig: SigVector,
}

impl<'a> SegmentWalker<'a> {
    fn new(path: &'a EmbeddedPath, depth: usize) -> Result<Self, SigError> {
        Ok(Self {
            path,
            next: 0,
            sig: SigVector::identity(path.dim(), depth)?,
        })
    }

    /// Signature on `[0, t]`; `t` must not decrease between calls.
    fn at(&mut self, t: f64) -> Result<SigVector, SigError> {
        let segs = self.path.segments();
        while self.next < segs.len() && segs[self.next].t_end <= t {
            self.sig.extend(&segs[self.next].increment)?;
            self.next += 1;
        }
        let mut out = self.sig.clone();
        if let Some(seg) = segs.get(self.next) {
            if seg.t_start < t {
                let frac = (t - seg.t_start) / (seg.t_end - seg.t_start);
                let partial: Vec<f64> = seg.increment.iter().map(|x| x * frac).collect();
                out.extend(&partial)?;
            }
        }
        Ok(out)
    }
}

/// Signature of the embedded path restricted to `[0, t]`.
pub fn path_signature(p: &EmbeddedPath, t: f64, depth: usize) -> Result<SigVector, SigError> {
    if !(0.0..=p.horizon()).contains(&t) {
        return Err(SigError::TimeOutOfRange {
            t,
            horizon: p.horizon(),
        });
    }
    SegmentWalker::new(p, depth)?.at(t)
}

/// Signatures at ascending evaluation times, sharing one pass over the segments.
pub fn stream_signatures(
    p: &EmbeddedPath,
    eval_times: &[f64],
    depth: usize,
) -> Result<Vec<SigVector>, SigError> {
    if eval_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(SigError::UnorderedTimes);
    }
    let mut walker = SegmentWalker::new(p, depth)?;
    eval_times
        .iter()
        .map(|&t| {
            if !(0.0..=p.horizon()).contains(&t) {
                return Err(SigError::TimeOutOfRange {
                    t,
                    horizon: p.horizon(),
                });
            }
            walker.at(t)
        })
        .collect()
}

/// Signatures just after each observation (features jumped), in observation order.
pub fn observation_signatures(p: &EmbeddedPath, depth: usize) -> Result<Vec<SigVector>, SigError> {
    let mut sig = SigVector::identity(p.dim(), depth)?;
    let mut out = vec![sig.clone()];
    for seg in p.segments() {
        sig.extend(&seg.increment)?;
        if seg.is_jump() {
            out.push(sig.clone());
        }
    }
    Ok(out)
}
