//! Ensemble of per-feature vector quantizers.
//!
//! Level `v` quantizes every feature with `v` bits, i.e. a codebook of `2^v`
//! codewords of dimension `K`. Level 0 is the null action: nothing is sent.

mod features;
pub mod io;
pub mod lloyd;

pub use features::{FeatureMap, FeatureVector, PixelProjection};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::par;
use crate::seed::{Rng, SeedTree, Stream};

/// Quantization level in bits per feature; `0` is the null level.
pub type Level = u8;
pub const NULL_LEVEL: Level = 0;
/// Largest level the file format and message type support.
pub const MAX_LEVEL: Level = 16;

/// Floor on the mean squared error inside the PSNR.
pub const PSNR_MSE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub level: Level,
    pub features: usize,
    pub dim: usize,
    /// `features x 2^level x dim`, row-major.
    pub codewords: Vec<f64>,
}

impl Codebook {
    pub fn size(&self) -> usize {
        1usize << self.level
    }

    /// Codewords of one feature, `2^level x dim` row-major.
    pub fn feature(&self, f: usize) -> &[f64] {
        let stride = self.size() * self.dim;
        &self.codewords[f * stride..(f + 1) * stride]
    }

    pub fn codeword(&self, f: usize, index: usize) -> &[f64] {
        &self.feature(f)[index * self.dim..(index + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.level == 0 || self.level > MAX_LEVEL {
            return Err(Error::UnknownLevel(self.level));
        }
        if self.codewords.len() != self.features * self.size() * self.dim {
            return Err(Error::Dimension {
                what: "codebook",
                expected: self.features * self.size() * self.dim,
                got: self.codewords.len(),
            });
        }
        if self.codewords.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("codebook", "non-finite codeword"));
        }
        Ok(())
    }
}

/// Trains the level-`level` codebook with Lloyd's algorithm, independently
/// per feature.
pub fn train_codebook(
    dataset: &[FeatureVector],
    level: Level,
    dim: usize,
    rng: &mut Rng,
) -> Result<Codebook> {
    if level == 0 || level > MAX_LEVEL {
        return Err(Error::UnknownLevel(level));
    }
    let n = 1usize << level;
    if dataset.len() < n {
        return Err(Error::DatasetTooSmall {
            needed: n,
            got: dataset.len(),
        });
    }
    let width = dataset[0].len();
    if dim == 0 || width % dim != 0 {
        return Err(Error::invalid("codec.dim", format!("{dim} does not divide {width}")));
    }
    let features = width / dim;
    let mut codewords = Vec::with_capacity(features * n * dim);
    for f in 0..features {
        let mut pts = Vec::with_capacity(dataset.len() * dim);
        for fv in dataset {
            if fv.len() != width {
                return Err(Error::Dimension {
                    what: "feature vector",
                    expected: width,
                    got: fv.len(),
                });
            }
            pts.extend_from_slice(&fv.0[f * dim..(f + 1) * dim]);
        }
        codewords.extend(lloyd::fit(&pts, dim, n, rng));
    }
    Ok(Codebook {
        level,
        features,
        dim,
        codewords,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookEnsemble {
    books: Vec<Codebook>,
}

impl CodebookEnsemble {
    pub fn new(books: Vec<Codebook>) -> Result<Self> {
        let first = books.first().ok_or(Error::Empty("codebook ensemble"))?;
        for (i, b) in books.iter().enumerate() {
            b.validate()?;
            if b.features != first.features || b.dim != first.dim {
                return Err(Error::invalid("codebook ensemble", "books disagree on F or K"));
            }
            if i > 0 && b.level <= books[i - 1].level {
                return Err(Error::invalid("codebook ensemble", "levels must be strictly increasing"));
            }
        }
        Ok(Self { books })
    }

    /// Trains levels `1..=max_level` on the same dataset. Each level draws from
    /// its own substream, so the levels may be fitted concurrently.
    pub fn train(dataset: &[FeatureVector], max_level: Level, dim: usize, seeds: &SeedTree) -> Result<Self> {
        let books = par::map(max_level as usize, |i| {
            let mut rng = seeds.rng(Stream::Codec, i as u64 + 1);
            train_codebook(dataset, i as Level + 1, dim, &mut rng)
        });
        Self::new(books.into_iter().collect::<Result<_>>()?)
    }

    pub fn books(&self) -> &[Codebook] {
        &self.books
    }

    pub fn max_level(&self) -> Level {
        self.books.last().map(|b| b.level).unwrap_or(0)
    }

    pub fn features(&self) -> usize {
        self.books[0].features
    }

    pub fn dim(&self) -> usize {
        self.books[0].dim
    }

    /// Length of the decoded feature vector, `F * K`.
    pub fn feature_len(&self) -> usize {
        self.features() * self.dim()
    }

    pub fn book(&self, level: Level) -> Result<&Codebook> {
        self.books
            .iter()
            .find(|b| b.level == level)
            .ok_or(Error::UnknownLevel(level))
    }

    /// Encodes with the level-`level` book; level 0 yields the null message.
    pub fn encode(&self, features: &FeatureVector, level: Level) -> Result<Message> {
        if level == NULL_LEVEL {
            return Ok(Message::null());
        }
        encode(features, self.book(level)?)
    }
}

/// A transmitted message: the level and one codeword index per feature.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Message {
    pub level: Level,
    pub indices: Vec<u32>,
}

impl Message {
    pub fn null() -> Self {
        Self {
            level: NULL_LEVEL,
            indices: Vec::new(),
        }
    }

    pub fn is_null(&self) -> bool {
        self.level == NULL_LEVEL
    }
}

/// Payload length in bytes: `F * level / 8`, zero for the null message.
pub fn message_length_bytes(msg: &Message) -> f64 {
    if msg.is_null() {
        0.0
    } else {
        (msg.indices.len() * msg.level as usize) as f64 / 8.0
    }
}

/// Nearest codeword per feature, lowest index on ties.
pub fn encode(features: &FeatureVector, book: &Codebook) -> Result<Message> {
    let expected = book.features * book.dim;
    if features.len() != expected {
        return Err(Error::Dimension {
            what: "feature vector",
            expected,
            got: features.len(),
        });
    }
    let indices = (0..book.features)
        .map(|f| {
            let p = &features.0[f * book.dim..(f + 1) * book.dim];
            let idx = if book.dim == 1 {
                lloyd::nearest_sorted(book.feature(f), p[0])
            } else {
                lloyd::nearest(book.feature(f), book.dim, p)
            };
            idx as u32
        })
        .collect();
    Ok(Message {
        level: book.level,
        indices,
    })
}

pub fn decode(msg: &Message, ensemble: &CodebookEnsemble) -> Result<FeatureVector> {
    if msg.is_null() {
        return Err(Error::NullMessage);
    }
    let book = ensemble.book(msg.level)?;
    if msg.indices.len() != book.features {
        return Err(Error::Dimension {
            what: "message indices",
            expected: book.features,
            got: msg.indices.len(),
        });
    }
    let mut out = Vec::with_capacity(book.features * book.dim);
    for (f, &i) in msg.indices.iter().enumerate() {
        if i as usize >= book.size() {
            return Err(Error::IndexOutOfRange {
                feature: f,
                index: i as usize,
                size: book.size(),
            });
        }
        out.extend_from_slice(book.codeword(f, i as usize));
    }
    Ok(FeatureVector(out))
}

/// `2^H(p)` of the empirical codeword frequencies, entropy in bits.
pub fn perplexity(usage_counts: &[u64]) -> Result<f64> {
    let total: u64 = usage_counts.iter().sum();
    if total == 0 {
        return Err(Error::Empty("codeword usage counts"));
    }
    let total = total as f64;
    let h: f64 = usage_counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    Ok(h.exp2())
}

pub fn distortion_mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            what: "mse operands",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Empty("mse operands"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10 log10(peak^2 / max(mse, floor))`.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    10.0 * (peak * peak / mse.max(PSNR_MSE_FLOOR)).log10()
}

/// PSNR between an observation and its reconstruction, given as the
/// concatenated `previous ++ current` values. The peak is the dynamic range
/// of the observation representation.
pub fn distortion_psnr(o: &Observation, o_hat: &[f64]) -> Result<f64> {
    let values = o.values();
    let mse = distortion_mse(&values, o_hat)?;
    Ok(psnr_from_mse(mse, o.dynamic_range()))
}

/// Mean squared quantization error of each feature at one level.
pub fn quantization_mse(dataset: &[FeatureVector], book: &Codebook) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; book.features];
    for fv in dataset {
        let m = encode(fv, book)?;
        for (f, &i) in m.indices.iter().enumerate() {
            let c = book.codeword(f, i as usize);
            let p = &fv.0[f * book.dim..(f + 1) * book.dim];
            acc[f] += c.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    let n = dataset.len().max(1) as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Per-feature codeword usage counts at one level.
pub fn usage_counts(dataset: &[FeatureVector], book: &Codebook) -> Result<Vec<Vec<u64>>> {
    let mut counts = vec![vec![0u64; book.size()]; book.features];
    for fv in dataset {
        let m = encode(fv, book)?;
        for (f, &i) in m.indices.iter().enumerate() {
            counts[f][i as usize] += 1;
        }
    }
    Ok(counts)
}
