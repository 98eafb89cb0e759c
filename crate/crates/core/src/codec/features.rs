//! Deterministic feature maps from observations to `F * K` real features.
//!
//! Vector observations map to the four current normalized coordinates
//! followed by the four differences `current - previous`. Pixel observations
//! are average-pooled and projected onto their leading principal components,
//! which are fitted once on a dataset of observations.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::env::{Frame, Observation, ObsMode, Snapshot};
use crate::error::{Error, Result};

/// Features of one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Linear projection of pooled frame pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelProjection {
    pub pool: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    /// Mean of the pooled inputs, length `P`.
    pub mean: Vec<f64>,
    /// `outputs x P`, row-major.
    pub components: Vec<f64>,
    pub outputs: usize,
}

impl PixelProjection {
    pub fn pooled_len(&self) -> usize {
        2 * (self.frame_height / self.pool) * (self.frame_width / self.pool)
    }

    /// Fits the projection to the leading principal components of the pooled
    /// dataset. Component signs are fixed so that the largest-magnitude entry
    /// is positive.
    pub fn fit(
        observations: &[Observation],
        pool: usize,
        outputs: usize,
    ) -> Result<PixelProjection> {
        let (h, w) = match observations.first().map(|o| &o.current) {
            Some(Snapshot::Pixel(f)) => (f.height, f.width),
            Some(Snapshot::Vector(_)) => {
                return Err(Error::invalid("env.obs_mode", "pixel projection needs pixel observations"))
            }
            None => return Err(Error::Empty("pixel projection dataset")),
        };
        if pool == 0 || h % pool != 0 || w % pool != 0 {
            return Err(Error::invalid("codec.pool", format!("must divide the frame size {h}x{w}")));
        }
        let p = 2 * (h / pool) * (w / pool);
        if outputs > p {
            return Err(Error::invalid("codec.features", format!("at most {p} pixel features")));
        }
        let rows: Vec<Vec<f64>> = observations.iter().map(|o| pool_pair(o, pool)).collect::<Result<_>>()?;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut cov = DMatrix::<f64>::zeros(p, p);
        for r in &rows {
            let centred: Vec<f64> = r.iter().zip(&mean).map(|(v, m)| v - m).collect();
            for i in 0..p {
                if centred[i] == 0.0 {
                    continue;
                }
                for j in 0..p {
                    cov[(i, j)] += centred[i] * centred[j] / n;
                }
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut components = Vec::with_capacity(outputs * p);
        for &k in order.iter().take(outputs) {
            let col = eig.eigenvectors.column(k);
            let pivot = (0..p).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs())).unwrap_or(0);
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            components.extend(col.iter().map(|v| v * sign));
        }
        Ok(PixelProjection {
            pool,
            frame_height: h,
            frame_width: w,
            mean,
            components,
            outputs,
        })
    }

    pub fn project(&self, obs: &Observation) -> Result<Vec<f64>> {
        let pooled = pool_pair(obs, self.pool)?;
        if pooled.len() != self.mean.len() {
            return Err(Error::Dimension {
                what: "pooled observation",
                expected: self.mean.len(),
                got: pooled.len(),
            });
        }
        let centred: Vec<f64> = pooled.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        Ok(self
            .components
            .chunks_exact(self.mean.len())
            .map(|row| row.iter().zip(&centred).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Back-projects features to a pair of grey-level frames, upsampling each
    /// pooled cell to its block of pixels.
    pub fn reconstruct(&self, features: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = self.mean.len();
        let mut pooled = self.mean.clone();
        for (f, row) in features.iter().zip(self.components.chunks_exact(p)) {
            for (v, c) in pooled.iter_mut().zip(row) {
                *v += f * c;
            }
        }
        let (ph, pw) = (self.frame_height / self.pool, self.frame_width / self.pool);
        let upsample = |cells: &[f64]| {
            let mut out = vec![0.0; self.frame_height * self.frame_width];
            for r in 0..self.frame_height {
                for c in 0..self.frame_width {
                    out[r * self.frame_width + c] = cells[(r / self.pool) * pw + c / self.pool];
                }
            }
            out
        };
        let half = ph * pw;
        (upsample(&pooled[..half]), upsample(&pooled[half..]))
    }
}

fn pool_frame(f: &Frame, pool: usize) -> Vec<f64> {
    let (ph, pw) = (f.height / pool, f.width / pool);
    let mut out = vec![0.0; ph * pw];
    for r in 0..ph * pool {
        for c in 0..pw * pool {
            out[(r / pool) * pw + c / pool] += f.get(r, c) as f64;
        }
    }
    let area = (pool * pool) as f64;
    out.iter_mut().for_each(|v| *v /= area);
    out
}

fn pool_pair(obs: &Observation, pool: usize) -> Result<Vec<f64>> {
    match (&obs.previous, &obs.current) {
        (Snapshot::Pixel(a), Snapshot::Pixel(b)) => {
            let mut v = pool_frame(a, pool);
            v.extend(pool_frame(b, pool));
            Ok(v)
        }
        _ => Err(Error::invalid("observation", "expected a pair of pixel frames")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    Vector,
    Pixel(PixelProjection),
}

impl FeatureMap {
    pub fn mode(&self) -> ObsMode {
        match self {
            FeatureMap::Vector => ObsMode::Vector,
            FeatureMap::Pixel(_) => ObsMode::Pixel,
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            FeatureMap::Vector => 8,
            FeatureMap::Pixel(p) => p.outputs,
        }
    }

    pub fn extract(&self, obs: &Observation) -> Result<FeatureVector> {
        match self {
            FeatureMap::Vector => match (&obs.previous, &obs.current) {
                (Snapshot::Vector(prev), Snapshot::Vector(curr)) => {
                    let mut v = curr.to_vec();
                    v.extend(curr.iter().zip(prev).map(|(c, p)| c - p));
                    Ok(FeatureVector(v))
                }
                _ => Err(Error::invalid("observation", "expected a pair of vector snapshots")),
            },
            FeatureMap::Pixel(p) => p.project(obs).map(FeatureVector),
        }
    }

    /// Best reconstruction of the observation values (`previous ++ current`)
    /// from features alone.
    pub fn reconstruct(&self, features: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::Vector => {
                let curr = &features[..4];
                let mut out: Vec<f64> = curr.iter().zip(&features[4..8]).map(|(c, d)| c - d).collect();
                out.extend_from_slice(curr);
                out
            }
            FeatureMap::Pixel(p) => {
                let (mut prev, curr) = p.reconstruct(features);
                prev.extend(curr);
                prev
            }
        }
    }
}
