use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rollout::TraceRow;

/// Cells with fewer samples than this are reported absent.
pub const DEFAULT_MIN_COUNT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateVar {
    X,
    XDot,
    Psi,
    PsiDot,
}

impl StateVar {
    pub fn of(self, r: &TraceRow) -> f64 {
        match self {
            StateVar::X => r.x,
            StateVar::XDot => r.x_dot,
            StateVar::Psi => r.psi,
            StateVar::PsiDot => r.psi_dot,
        }
    }
}

impl fmt::Display for StateVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StateVar::X => "x",
            StateVar::XDot => "x_dot",
            StateVar::Psi => "psi",
            StateVar::PsiDot => "psi_dot",
        })
    }
}

impl FromStr for StateVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(StateVar::X),
            "x_dot" => Ok(StateVar::XDot),
            "psi" => Ok(StateVar::Psi),
            "psi_dot" => Ok(StateVar::PsiDot),
            _ => Err(Error::invalid("projection", format!("unknown state variable `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub var: StateVar,
    pub min: f64,
    pub max: f64,
    pub bins: usize,
}

impl Axis {
    pub fn new(var: StateVar, min: f64, max: f64, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::invalid("bins", "must be at least 1"));
        }
        if !(min < max) {
            return Err(Error::invalid("axis", format!("need min < max, got [{min}, {max}]")));
        }
        Ok(Self { var, min, max, bins })
    }

    pub fn psi() -> Self {
        Self::new(StateVar::Psi, -0.2, 0.2, 20).unwrap()
    }

    pub fn x_dot() -> Self {
        Self::new(StateVar::XDot, -1.97, 1.97, 20).unwrap()
    }

    pub fn psi_dot() -> Self {
        Self::new(StateVar::PsiDot, -1.67, 1.67, 20).unwrap()
    }

    /// Bin of `v`, with the upper edge closed; `None` outside the range.
    pub fn bin(&self, v: f64) -> Option<usize> {
        if !(self.min..=self.max).contains(&v) {
            return None;
        }
        let b = ((v - self.min) / (self.max - self.min) * self.bins as f64).floor() as usize;
        Some(b.min(self.bins - 1))
    }
}

/// A 2-D histogram-style map over a state projection. `values[i * y.bins + j]`
/// belongs to x bin `i` and y bin `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    pub x: Axis,
    pub y: Axis,
    /// `None` where fewer than `min_count` samples fell.
    pub values: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl GridMap {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.y.bins + j]
    }

    pub fn count(&self, i: usize, j: usize) -> usize {
        self.counts[i * self.y.bins + j]
    }
}

fn accumulate_grid<F>(rows: &[TraceRow], x: Axis, y: Axis, min_count: usize, cell_value: F) -> GridMap
where
    F: Fn(&[&TraceRow]) -> f64,
{
    let mut cells: Vec<Vec<&TraceRow>> = vec![Vec::new(); x.bins * y.bins];
    for r in rows {
        if let (Some(i), Some(j)) = (x.bin(x.var.of(r)), y.bin(y.var.of(r))) {
            cells[i * y.bins + j].push(r);
        }
    }
    GridMap {
        x,
        y,
        values: cells
            .iter()
            .map(|c| (c.len() >= min_count.max(1)).then(|| cell_value(c)))
            .collect(),
        counts: cells.iter().map(Vec::len).collect(),
    }
}

/// Binary entropy in bits.
fn binary_entropy(p: f64) -> f64 {
    [p, 1.0 - p]
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|q| -q * q.log2())
        .sum()
}

/// Per cell, the entropy of the empirical robot action frequency.
pub fn entropy_map(rows: &[TraceRow], x: Axis, y: Axis, min_count: usize) -> GridMap {
    accumulate_grid(rows, x, y, min_count, |c| {
        let right = c.iter().filter(|r| r.action == 1).count();
        binary_entropy(right as f64 / c.len() as f64)
    })
}

/// Per cell, the mean message length in bytes.
pub fn bitrate_map(rows: &[TraceRow], x: Axis, y: Axis, min_count: usize) -> GridMap {
    accumulate_grid(rows, x, y, min_count, |c| {
        c.iter().map(|r| r.ell).sum::<f64>() / c.len() as f64
    })
}

fn entropy_bin(h: f64, bins: usize) -> usize {
    ((h.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1)
}

/// Distribution of the chosen level for each (AoI, robot-entropy bin) column.
#[derive(Debug, Clone, PartialEq)]
pub struct AoiDistribution {
    pub aoi_values: usize,
    pub entropy_bins: usize,
    pub max_level: usize,
    /// `columns[aoi * entropy_bins + bin]`, each summing to 1, or `None` when
    /// the column is empty.
    pub columns: Vec<Option<Vec<f64>>>,
}

impl AoiDistribution {
    pub fn column(&self, aoi: usize, bin: usize) -> Option<&[f64]> {
        self.columns[aoi * self.entropy_bins + bin].as_deref()
    }
}

/// Empirical level distributions conditioned on AoI `0..aoi_values` and the
/// robot action entropy (bits, split into `entropy_bins` equal bins on [0, 1]).
/// Steps with a larger AoI are ignored.
pub fn aoi_action_distribution(
    rows: &[TraceRow],
    entropy_bins: usize,
    aoi_values: usize,
    max_level: usize,
) -> Result<AoiDistribution> {
    if entropy_bins == 0 || aoi_values == 0 {
        return Err(Error::invalid("entropy_bins", "bins and AoI values must be at least 1"));
    }
    let mut counts = vec![vec![0u64; max_level + 1]; aoi_values * entropy_bins];
    for r in rows {
        if r.aoi >= aoi_values {
            continue;
        }
        let level = r.level as usize;
        if level > max_level {
            return Err(Error::UnknownLevel(r.level));
        }
        counts[r.aoi * entropy_bins + entropy_bin(r.entropy, entropy_bins)][level] += 1;
    }
    let columns = counts
        .into_iter()
        .map(|c| {
            let total: u64 = c.iter().sum();
            (total > 0).then(|| c.iter().map(|&n| n as f64 / total as f64).collect())
        })
        .collect();
    Ok(AoiDistribution {
        aoi_values,
        entropy_bins,
        max_level,
        columns,
    })
}

/// Probability of transmitting (level > 0) per robot-entropy bin among steps
/// with AoI of at least `min_aoi`; `None` for bins with fewer than
/// `min_count` such steps.
pub fn transmit_probability_by_entropy(
    rows: &[TraceRow],
    entropy_bins: usize,
    min_aoi: usize,
    min_count: usize,
) -> Vec<Option<f64>> {
    let bins = entropy_bins.max(1);
    let mut sent = vec![0usize; bins];
    let mut total = vec![0usize; bins];
    for r in rows.iter().filter(|r| r.aoi >= min_aoi) {
        let b = entropy_bin(r.entropy, bins);
        total[b] += 1;
        sent[b] += usize::from(r.level > 0);
    }
    sent.iter()
        .zip(&total)
        .map(|(&s, &n)| (n >= min_count.max(1)).then(|| s as f64 / n as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn row(psi: f64, x_dot: f64, action: usize, level: u8, aoi: usize, entropy: f64) -> TraceRow {
        TraceRow {
            episode: 0,
            t: 0,
            x: 0.0,
            x_dot,
            psi,
            psi_dot: 0.0,
            level,
            ell: level as f64,
            action,
            reward: 0.0,
            aoi,
            entropy,
            value: 0.0,
            voi: f64::NAN,
        }
    }

    fn one_cell() -> (Axis, Axis) {
        (
            Axis::new(StateVar::Psi, -1.0, 1.0, 1).unwrap(),
            Axis::new(StateVar::XDot, -1.0, 1.0, 1).unwrap(),
        )
    }

    #[test]
    fn entropy_cells() {
        let (x, y) = one_cell();
        let always: Vec<TraceRow> = (0..30).map(|_| row(0.0, 0.0, 1, 6, 0, 0.0)).collect();
        assert_eq!(entropy_map(&always, x, y, 20).get(0, 0), Some(0.0));
        let half: Vec<TraceRow> = (0..40).map(|i| row(0.0, 0.0, i % 2, 6, 0, 0.0)).collect();
        assert_abs_diff_eq!(entropy_map(&half, x, y, 20).get(0, 0).unwrap(), 1.0, epsilon = 1e-12);
        let quarter: Vec<TraceRow> = (0..40).map(|i| row(0.0, 0.0, usize::from(i % 4 == 0), 6, 0, 0.0)).collect();
        let h = entropy_map(&quarter, x, y, 20).get(0, 0).unwrap();
        assert_abs_diff_eq!(h, -(0.25f64 * 0.25f64.log2() + 0.75 * 0.75f64.log2()), epsilon = 1e-12);
        assert_abs_diff_eq!(h, 0.8113, epsilon = 1e-4);
    }

    #[test]
    fn sparse_cells_are_absent_not_zero() {
        let (x, y) = one_cell();
        let few: Vec<TraceRow> = (0..5).map(|_| row(0.0, 0.0, 1, 6, 0, 0.0)).collect();
        let m = bitrate_map(&few, x, y, 20);
        assert_eq!(m.get(0, 0), None);
        assert_eq!(m.count(0, 0), 5);
    }

    #[test]
    fn bitrate_stubs() {
        let (x, y) = (Axis::psi(), Axis::x_dot());
        let rows: Vec<TraceRow> = (0..4000)
            .map(|i| row(((i * 7) % 400) as f64 / 1000.0 - 0.2, 0.0, 0, 6, 0, 0.0))
            .collect();
        let m = bitrate_map(&rows, x, y, 20);
        assert!(m.values.iter().flatten().all(|&v| v == 6.0));
        assert!(m.values.iter().flatten().count() > 0);
        let silent: Vec<TraceRow> = rows.iter().map(|r| TraceRow { level: 0, ell: 0.0, ..*r }).collect();
        assert!(bitrate_map(&silent, x, y, 20).values.iter().flatten().all(|&v| v == 0.0));
        let mixed: Vec<TraceRow> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| if i % 2 == 0 { *r } else { TraceRow { level: 0, ell: 0.0, ..*r } })
            .collect();
        for v in bitrate_map(&mixed, x, y, 20).values.iter().flatten() {
            assert!((v - 3.0).abs() < 0.5, "{v}");
        }
    }

    #[test]
    fn aoi_stub_at_full_level() {
        let rows: Vec<TraceRow> = (0..50).map(|i| row(0.0, 0.0, 0, 6, 0, (i % 10) as f64 / 10.0)).collect();
        let d = aoi_action_distribution(&rows, 5, 5, 6).unwrap();
        for b in 0..5 {
            let c = d.column(0, b).unwrap();
            assert_eq!(c[6], 1.0);
            for aoi in 1..5 {
                assert!(d.column(aoi, b).is_none());
            }
        }
    }

    #[test]
    fn transmit_probability_per_bin() {
        let mut rows = Vec::new();
        for i in 0..100 {
            rows.push(row(0.0, 0.0, 0, if i % 4 == 0 { 3 } else { 0 }, 2, 0.05));
            rows.push(row(0.0, 0.0, 0, 3, 3, 0.95));
            rows.push(row(0.0, 0.0, 0, 0, 0, 0.95));
        }
        let p = transmit_probability_by_entropy(&rows, 2, 2, 20);
        assert_eq!(p, vec![Some(0.25), Some(1.0)]);
    }

    proptest! {
        #[test]
        fn counts_cover_in_range_steps(pts in prop::collection::vec((-0.3f64..0.3, -2.5f64..2.5, 0usize..2), 0..300)) {
            let rows: Vec<TraceRow> = pts.iter().map(|&(p, v, a)| row(p, v, a, 6, 0, 0.0)).collect();
            let (x, y) = (Axis::psi(), Axis::x_dot());
            let m = entropy_map(&rows, x, y, 20);
            let inside = rows.iter().filter(|r| x.bin(r.psi).is_some() && y.bin(r.x_dot).is_some()).count();
            prop_assert_eq!(m.counts.iter().sum::<usize>(), inside);
        }

        #[test]
        fn aoi_columns_normalize(pts in prop::collection::vec((0usize..7, 0u8..7, 0.0f64..1.0), 1..300)) {
            let rows: Vec<TraceRow> = pts.iter().map(|&(aoi, l, h)| row(0.0, 0.0, 0, l, aoi, h)).collect();
            let d = aoi_action_distribution(&rows, 4, 5, 6).unwrap();
            for c in d.columns.iter().flatten() {
                prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
