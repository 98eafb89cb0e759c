//! Evaluation suites, Pareto analysis and the statistics reported for them.

mod export;
mod grid;

pub use export::{
    read_pareto_csv, write_aoi_csv, write_heatmap_csv, write_lenhist_csv, write_pareto_csv, LevelHistRow,
    ParetoRow,
};
pub use grid::{
    aoi_action_distribution, bitrate_map, entropy_map, transmit_probability_by_entropy, AoiDistribution, Axis,
    GridMap, StateVar, DEFAULT_MIN_COUNT,
};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::par;
use crate::rollout::{run_indexed, trace_rows, RunOptions, Selector, System, TraceRow};
use crate::seed::{Rng, SeedTree};

/// Summary of one scheme over an evaluation suite.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricPoint {
    pub scheme: String,
    /// Mean bytes per step.
    pub mean_ell: f64,
    pub mean_length: f64,
    pub mean_psnr: f64,
    /// NaN when no regressor was attached.
    pub mean_state_mse: f64,
    pub rmsd_psi: f64,
    pub rmsd_x: f64,
    /// Frequency of each level 0..=V over all steps.
    pub level_freq: Vec<f64>,
}

/// A metric point plus the per-episode data it was built from.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub point: MetricPoint,
    pub lengths: Vec<usize>,
    /// Step rows of the first episodes, up to the requested budget.
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, Default)]
struct EpisodeSummary {
    len: usize,
    ell: f64,
    psnr: f64,
    state_mse: f64,
    rmsd_psi: f64,
    rmsd_x: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Runs `n_episodes` greedy-robot episodes of `selector` with episode `i`
/// drawing from `seeds` at index `i`. Per-step quantities are averaged within
/// an episode, then across episodes. Step rows are kept for whole episodes
/// until `row_budget` steps have been collected.
pub fn evaluate_suite(
    sys: &System,
    scheme: &str,
    selector: Selector,
    opts: &RunOptions,
    n_episodes: usize,
    seeds: &SeedTree,
    row_budget: usize,
) -> Result<SuiteResult> {
    if n_episodes == 0 {
        return Err(Error::Empty("evaluation episodes"));
    }
    let opts = RunOptions {
        robot_greedy: true,
        ..*opts
    };
    let max = sys.ensemble.max_level() as usize;
    let per_episode = par::map(n_episodes, |i| -> Result<_> {
        let (trace, _) = run_indexed(sys, selector, &opts, seeds, i as u64)?;
        let steps = &trace.steps;
        let mut counts = vec![0u64; max + 1];
        for s in steps {
            counts[s.level as usize] += 1;
        }
        let psi: Vec<f64> = steps.iter().map(|s| s.state.psi).collect();
        let x: Vec<f64> = steps.iter().map(|s| s.state.x).collect();
        let summary = EpisodeSummary {
            len: steps.len(),
            ell: mean(steps.iter().map(|s| s.ell)),
            psnr: mean(steps.iter().map(|s| s.psnr)),
            state_mse: mean(steps.iter().map(|s| s.state_mse)),
            rmsd_psi: rmsd(&psi, 0.0)?,
            rmsd_x: rmsd(&x, 0.0)?,
        };
        Ok((summary, counts, trace))
    });

    let mut summaries = Vec::with_capacity(n_episodes);
    let mut counts = vec![0u64; max + 1];
    let mut traces = Vec::new();
    let mut kept = 0usize;
    for r in per_episode {
        let (s, c, trace) = r?;
        summaries.push(s);
        counts.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
        if kept < row_budget {
            kept += trace.len();
            traces.push(trace);
        }
    }
    let total: u64 = counts.iter().sum();
    let point = MetricPoint {
        scheme: scheme.to_string(),
        mean_ell: mean(summaries.iter().map(|s| s.ell)),
        mean_length: mean(summaries.iter().map(|s| s.len as f64)),
        mean_psnr: mean(summaries.iter().map(|s| s.psnr)),
        mean_state_mse: mean(summaries.iter().map(|s| s.state_mse)),
        rmsd_psi: mean(summaries.iter().map(|s| s.rmsd_psi)),
        rmsd_x: mean(summaries.iter().map(|s| s.rmsd_x)),
        level_freq: counts.iter().map(|&c| c as f64 / total as f64).collect(),
    };
    Ok(SuiteResult {
        point,
        lengths: summaries.iter().map(|s| s.len).collect(),
        rows: trace_rows(&traces),
    })
}

/// Pareto dominance with every coordinate oriented larger-is-better: `eta` is
/// no worse everywhere and strictly better somewhere.
pub fn pareto_dominates(eta: &[f64], eta_prime: &[f64]) -> Result<bool> {
    if eta.len() != eta_prime.len() {
        return Err(Error::Dimension {
            what: "pareto tuple",
            expected: eta.len(),
            got: eta_prime.len(),
        });
    }
    let no_worse = eta.iter().zip(eta_prime).all(|(a, b)| a >= b);
    let better = eta.iter().zip(eta_prime).any(|(a, b)| a > b);
    Ok(no_worse && better)
}

/// Indices of the non-dominated points, in input order.
///
/// Sorting by the first coordinate means a point can only be dominated by
/// points at or before it, which keeps the scan cheap for the 2-D case.
pub fn pareto_front(points: &[Vec<f64>]) -> Result<Vec<usize>> {
    let Some(first) = points.first() else {
        return Ok(Vec::new());
    };
    let dim = first.len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::Dimension {
            what: "pareto tuple",
            expected: dim,
            got: p.len(),
        });
    }
    if points.iter().flatten().any(|v| v.is_nan()) {
        return Err(Error::invalid("points", "NaN coordinate"));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[b][0].total_cmp(&points[a][0]));
    let mut front: Vec<usize> = Vec::new();
    // group equal first coordinates so ties are checked against each other
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && points[order[j]][0] == points[order[i]][0] {
            j += 1;
        }
        let group = &order[i..j];
        let mut survivors = Vec::new();
        for &g in group {
            let beaten = front
                .iter()
                .chain(group.iter())
                .any(|&o| o != g && pareto_dominates(&points[o], &points[g]).unwrap_or(false));
            if !beaten {
                survivors.push(g);
            }
        }
        front.extend(survivors);
        i = j;
    }
    front.sort_unstable();
    Ok(front)
}

/// Root mean squared deviation from `target`.
pub fn rmsd(series: &[f64], target: f64) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::Empty("rmsd series"));
    }
    let ss: f64 = series.iter().map(|x| (x - target) * (x - target)).sum();
    Ok((ss / series.len() as f64).sqrt())
}

/// Percentile bootstrap confidence interval of the mean.
pub fn bootstrap_mean_ci(samples: &[f64], resamples: usize, confidence: f64, rng: &mut Rng) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty("bootstrap samples"));
    }
    if !(0.0..1.0).contains(&confidence) || resamples == 0 {
        return Err(Error::invalid("confidence", "needs 0 <= c < 1 and at least one resample"));
    }
    let n = samples.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| samples[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - confidence) / 2.0;
    let at = |q: f64| means[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    Ok((at(alpha), at(1.0 - alpha)))
}

/// Average ranks, ties sharing the mean of their positions (1-based).
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of average ranks). NaN when
/// either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            what: "spearman",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Empty("spearman needs two pairs"));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    Ok(cov / (va * vb).sqrt())
}
