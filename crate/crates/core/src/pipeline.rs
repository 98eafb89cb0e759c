//! The experiment pipeline over an artifact directory: dataset collection,
//! codec fitting, agent training, evaluation and trace analysis. Every stage
//! reads its prerequisites from disk and derives its randomness from the root
//! seed, so reruns with the same inputs write identical files.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;

use crate::agents::{
    train_observer_a2c, train_regressor, train_robot_a2c, ObjectiveLevel, ObserverPolicy, RobotPolicy,
    SemanticRegressor, TrainLog,
};
use crate::codec::{
    io::{load_dataset, load_ensemble, load_projection, save_dataset, save_ensemble, save_projection},
    CodebookEnsemble, FeatureMap, FeatureVector, Level, PixelProjection,
};
use crate::config::RunConfig;
use crate::env::{observe, render, Action, CartPole, ObsMode, Observation, Snapshot, SystemState};
use crate::error::{Error, Result};
use crate::eval::{
    aoi_action_distribution, bitrate_map, bootstrap_mean_ci, entropy_map, evaluate_suite, write_aoi_csv,
    write_heatmap_csv, write_lenhist_csv, write_pareto_csv, Axis, LevelHistRow, ParetoRow, SuiteResult,
};
use crate::rollout::{read_trace_csv, write_trace_csv, RunOptions, Selector, System, TraceRow};
use crate::seed::{tag, SeedTree, Stream};

/// File layout of one run directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }

    pub fn dataset(&self) -> PathBuf {
        self.dir.join("dataset.bin")
    }

    pub fn codec(&self) -> PathBuf {
        self.dir.join("codec.bin")
    }

    pub fn projection(&self) -> PathBuf {
        self.dir.join("projection.bin")
    }

    pub fn robot(&self, bits: Level) -> PathBuf {
        self.dir.join(format!("robot_v{bits}.ckpt"))
    }

    pub fn regressor(&self) -> PathBuf {
        self.dir.join("regressor.ckpt")
    }

    pub fn observer(&self, level: ObjectiveLevel, beta: f64) -> PathBuf {
        self.dir.join(format!("observer_{level}_{beta}.ckpt"))
    }

    pub fn log(&self, stem: &str) -> PathBuf {
        self.dir.join(format!("{stem}_log.csv"))
    }

    pub fn traces(&self) -> PathBuf {
        self.dir.join("traces")
    }

    pub fn pareto(&self) -> PathBuf {
        self.dir.join("pareto.csv")
    }

    pub fn lenhist(&self) -> PathBuf {
        self.dir.join("lenhist.csv")
    }

    fn ensure(&self) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        Ok(())
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

/// Random-policy transitions. Each record is the previous and current true
/// state followed by the sensed vector observation (`previous ++ current`,
/// empty in pixel mode where frames are re-rendered from the states).
pub fn collect_dataset(cfg: &RunConfig) -> Result<Vec<Vec<f64>>> {
    let env = &cfg.env;
    let mut rng = SeedTree::new(cfg.run.seed).child(tag("dataset")).rng(Stream::Dataset, 0);
    let mut records = Vec::with_capacity(cfg.codec.dataset_size);
    'outer: loop {
        let mut cart = CartPole::new(env.clone(), &mut rng);
        let mut prev = cart.state();
        loop {
            if records.len() == cfg.codec.dataset_size {
                break 'outer;
            }
            let s = cart.state();
            let mut rec = prev.to_array().to_vec();
            rec.extend(s.to_array());
            if env.obs_mode == ObsMode::Vector {
                rec.extend(observe(&prev, &s, env, &mut rng).values());
            }
            records.push(rec);
            prev = s;
            let a = if rng.gen::<bool>() { Action::Right } else { Action::Left };
            if cart.step(a)?.done {
                break;
            }
        }
    }
    Ok(records)
}

fn record_observation(rec: &[f64], cfg: &RunConfig) -> Result<Observation> {
    let state = |i: usize| SystemState::from_array([rec[i], rec[i + 1], rec[i + 2], rec[i + 3]]);
    match cfg.env.obs_mode {
        ObsMode::Vector => {
            if rec.len() != 16 {
                return Err(Error::Dimension {
                    what: "vector dataset record",
                    expected: 16,
                    got: rec.len(),
                });
            }
            Ok(Observation {
                previous: Snapshot::Vector([rec[8], rec[9], rec[10], rec[11]]),
                current: Snapshot::Vector([rec[12], rec[13], rec[14], rec[15]]),
            })
        }
        ObsMode::Pixel => {
            if rec.len() < 8 {
                return Err(Error::Dimension {
                    what: "pixel dataset record",
                    expected: 8,
                    got: rec.len(),
                });
            }
            Ok(Observation {
                previous: Snapshot::Pixel(render(&state(0), &cfg.env)),
                current: Snapshot::Pixel(render(&state(4), &cfg.env)),
            })
        }
    }
}

/// Feature vectors of dataset records under `features`.
pub fn dataset_features(cfg: &RunConfig, records: &[Vec<f64>], features: &FeatureMap) -> Result<Vec<FeatureVector>> {
    records
        .iter()
        .map(|r| features.extract(&record_observation(r, cfg)?))
        .collect()
}

/// Fits the feature map (pixel mode only) and the quantizer ensemble.
pub fn fit_codec(cfg: &RunConfig, records: &[Vec<f64>]) -> Result<(FeatureMap, CodebookEnsemble)> {
    let seeds = SeedTree::new(cfg.run.seed).child(tag("codec"));
    let features = match cfg.env.obs_mode {
        ObsMode::Vector => FeatureMap::Vector,
        ObsMode::Pixel => {
            let step = (records.len() / cfg.codec.pixel_fit_samples).max(1);
            let obs: Vec<Observation> = records
                .iter()
                .step_by(step)
                .map(|r| record_observation(r, cfg))
                .collect::<Result<_>>()?;
            FeatureMap::Pixel(PixelProjection::fit(&obs, cfg.codec.pixel_pool, cfg.codec.pixel_components)?)
        }
    };
    let data = dataset_features(cfg, records, &features)?;
    let ens = CodebookEnsemble::train(&data, cfg.codec.max_level, cfg.codec.dim, &seeds)?;
    Ok((features, ens))
}

/// Loaded feature map and codec.
pub struct Codec {
    pub features: FeatureMap,
    pub ensemble: CodebookEnsemble,
}

pub fn load_codec(art: &Artifacts, cfg: &RunConfig) -> Result<Codec> {
    let ensemble = load_ensemble(&art.codec())?;
    let features = match cfg.env.obs_mode {
        ObsMode::Vector => FeatureMap::Vector,
        ObsMode::Pixel => FeatureMap::Pixel(load_projection(&art.projection())?),
    };
    if ensemble.max_level() != cfg.codec.max_level {
        return Err(Error::invalid(
            "codec.max_level",
            format!(
                "{} holds {} levels, config asks for {}",
                art.codec().display(),
                ensemble.max_level(),
                cfg.codec.max_level
            ),
        ));
    }
    Ok(Codec { features, ensemble })
}

pub fn run_collect_dataset(art: &Artifacts, cfg: &RunConfig) -> Result<()> {
    art.ensure()?;
    save_dataset(&collect_dataset(cfg)?, &art.dataset())
}

pub fn run_train_codec(art: &Artifacts, cfg: &RunConfig) -> Result<Codec> {
    let records = load_dataset(&art.dataset())?;
    let (features, ensemble) = fit_codec(cfg, &records)?;
    save_ensemble(&ensemble, &art.codec())?;
    if let FeatureMap::Pixel(p) = &features {
        save_projection(p, &art.projection())?;
    }
    Ok(Codec { features, ensemble })
}

pub fn run_train_robot(art: &Artifacts, cfg: &RunConfig, bits: Level) -> Result<RobotPolicy> {
    let codec = load_codec(art, cfg)?;
    let seeds = SeedTree::new(cfg.run.seed);
    let mut log = TrainLog::default();
    let robot = train_robot_a2c(&cfg.env, &codec.features, &codec.ensemble, bits, &cfg.train, &seeds, &mut log)?;
    robot.save(&art.robot(bits))?;
    log.write_csv(&art.log(&format!("robot_v{bits}")))?;
    Ok(robot)
}

fn load_robot(art: &Artifacts, cfg: &RunConfig) -> Result<RobotPolicy> {
    let path = art.robot(cfg.codec.max_level);
    require(&path)?;
    RobotPolicy::load(&path)
}

pub fn run_train_regressor(art: &Artifacts, cfg: &RunConfig) -> Result<SemanticRegressor> {
    let codec = load_codec(art, cfg)?;
    let robot = load_robot(art, cfg)?;
    let seeds = SeedTree::new(cfg.run.seed);
    let mut log = TrainLog::default();
    let reg = train_regressor(&cfg.env, &codec.features, &codec.ensemble, &robot, &cfg.train, &seeds, &mut log)?;
    reg.save(&art.regressor())?;
    log.write_csv(&art.log("regressor"))?;
    Ok(reg)
}

/// Trains the observer for `cfg.train.level` at `cfg.train.beta`.
pub fn run_train_observer(art: &Artifacts, cfg: &RunConfig) -> Result<ObserverPolicy> {
    let codec = load_codec(art, cfg)?;
    let robot = load_robot(art, cfg)?;
    let regressor = if cfg.train.level == ObjectiveLevel::B {
        require(&art.regressor())?;
        Some(SemanticRegressor::load(&art.regressor())?)
    } else {
        None
    };
    let seeds = SeedTree::new(cfg.run.seed);
    let mut log = TrainLog::default();
    let obs = train_observer_a2c(
        &cfg.env,
        &codec.features,
        &codec.ensemble,
        &robot,
        regressor.as_ref(),
        &cfg.train,
        &seeds,
        &mut log,
    )?;
    obs.save(&art.observer(cfg.train.level, cfg.train.beta))?;
    log.write_csv(&art.log(&format!("observer_{}_{}", cfg.train.level, cfg.train.beta)))?;
    Ok(obs)
}

/// Trains an observer for every level and every beta of the evaluation grid.
pub fn run_train_observer_grid(art: &Artifacts, cfg: &RunConfig) -> Result<()> {
    for level in ObjectiveLevel::ALL {
        for &beta in cfg.eval.betas(level) {
            let mut c = cfg.clone();
            c.train.level = level;
            c.train.beta = beta;
            run_train_observer(art, &c)?;
        }
    }
    Ok(())
}

/// One evaluated scheme.
#[derive(Debug, Clone)]
pub struct SchemeResult {
    pub scheme: String,
    pub beta: f64,
    pub level: String,
    pub suite: SuiteResult,
    pub ci: (f64, f64),
}

impl SchemeResult {
    pub fn pareto_row(&self) -> ParetoRow {
        let p = &self.suite.point;
        ParetoRow {
            scheme: self.scheme.clone(),
            beta: self.beta,
            level: self.level.clone(),
            ell: p.mean_ell,
            ep_len: p.mean_length,
            psnr: p.mean_psnr,
            state_mse: p.mean_state_mse,
            rmsd_psi: p.rmsd_psi,
            rmsd_x: p.rmsd_x,
            ep_len_lo: self.ci.0,
            ep_len_hi: self.ci.1,
        }
    }

    /// File stem for this scheme's trace and analysis outputs.
    pub fn stem(&self) -> String {
        if self.beta.is_nan() {
            format!("{}_{}", self.scheme, self.level)
        } else {
            format!("{}_{}_{}", self.scheme, self.level, self.beta)
        }
    }
}

/// Evaluates every scheme whose checkpoints exist: static levels with the
/// full-rate robot (`static-noretrain`), static levels with robots retrained
/// at that level (`static`), and the trained observers of the beta grid
/// (`dynamic`). The full-rate robot is required.
pub fn evaluate_schemes(art: &Artifacts, cfg: &RunConfig) -> Result<Vec<SchemeResult>> {
    let codec = load_codec(art, cfg)?;
    let robot = load_robot(art, cfg)?;
    let regressor = if art.regressor().exists() {
        Some(SemanticRegressor::load(&art.regressor())?)
    } else {
        None
    };
    let seeds = SeedTree::new(cfg.run.seed);
    let eval_seeds = seeds.child(tag("eval"));
    let boot = seeds.child(tag("bootstrap"));
    let max = cfg.codec.max_level;
    let n = cfg.eval.episodes;

    let mut out = Vec::new();
    let finish = |scheme: &str, beta: f64, level: String, suite: SuiteResult, idx: usize| -> Result<SchemeResult> {
        let lengths: Vec<f64> = suite.lengths.iter().map(|&l| l as f64).collect();
        let mut rng = boot.rng(Stream::Bootstrap, idx as u64);
        let ci = bootstrap_mean_ci(&lengths, cfg.eval.bootstrap_resamples, 0.95, &mut rng)?;
        log::info!(
            "{scheme} level {level} beta {beta}: ell {:.3} length {:.1}",
            suite.point.mean_ell,
            suite.point.mean_length
        );
        Ok(SchemeResult {
            scheme: scheme.to_string(),
            beta,
            level,
            suite,
            ci,
        })
    };

    let sys = System {
        env: &cfg.env,
        features: &codec.features,
        ensemble: &codec.ensemble,
        robot: &robot,
        regressor: regressor.as_ref(),
    };
    let plain = RunOptions::default();
    for v in 1..=max {
        let budget = if v == max { cfg.eval.trace_steps } else { 0 };
        let suite = evaluate_suite(&sys, "static-noretrain", Selector::Fixed(v), &plain, n, &eval_seeds, budget)?;
        out.push(finish("static-noretrain", f64::NAN, v.to_string(), suite, out.len())?);
    }
    for v in 1..=max {
        let path = art.robot(v);
        if v == max || !path.exists() {
            continue;
        }
        let retrained = RobotPolicy::load(&path)?;
        let sys = System {
            robot: &retrained,
            ..sys
        };
        let suite = evaluate_suite(&sys, "static", Selector::Fixed(v), &plain, n, &eval_seeds, 0)?;
        out.push(finish("static", f64::NAN, v.to_string(), suite, out.len())?);
    }
    for level in ObjectiveLevel::ALL {
        for &beta in cfg.eval.betas(level) {
            let path = art.observer(level, beta);
            if !path.exists() {
                log::warn!("skipping dynamic level {level} beta {beta}: {} not found", path.display());
                continue;
            }
            let observer = ObserverPolicy::load(&path)?;
            let opts = RunOptions {
                objective: (level != ObjectiveLevel::B || regressor.is_some()).then_some(level),
                beta,
                ..plain
            };
            let selector = Selector::Observer {
                policy: &observer,
                greedy: !cfg.eval.observer_stochastic,
            };
            let suite = evaluate_suite(&sys, "dynamic", selector, &opts, n, &eval_seeds, cfg.eval.trace_steps)?;
            out.push(finish("dynamic", beta, level.to_string(), suite, out.len())?);
        }
    }
    Ok(out)
}

/// Runs [`evaluate_schemes`] and writes `pareto.csv`, `lenhist.csv` and one
/// trace CSV per scheme that kept steps.
pub fn run_evaluate(art: &Artifacts, cfg: &RunConfig) -> Result<Vec<SchemeResult>> {
    let results = evaluate_schemes(art, cfg)?;
    let ensemble = load_ensemble(&art.codec())?;
    let ell_of_level = level_lengths(&ensemble);
    write_pareto_csv(&art.pareto(), &results.iter().map(SchemeResult::pareto_row).collect::<Vec<_>>())?;
    let hist: Vec<LevelHistRow> = results
        .iter()
        .flat_map(|r| {
            r.suite.point.level_freq.iter().enumerate().map(|(l, &freq)| LevelHistRow {
                scheme: r.scheme.clone(),
                beta: r.beta,
                level: r.level.clone(),
                ell: ell_of_level[l],
                freq,
            })
        })
        .collect();
    write_lenhist_csv(&art.lenhist(), &hist)?;
    fs::create_dir_all(art.traces())?;
    for r in results.iter().filter(|r| !r.suite.rows.is_empty()) {
        write_trace_csv(&art.traces().join(format!("{}.csv", r.stem())), &r.suite.rows)?;
    }
    Ok(results)
}

/// Message length in bytes of each level `0..=V`.
pub fn level_lengths(ens: &CodebookEnsemble) -> Vec<f64> {
    (0..=ens.max_level())
        .map(|v| (ens.features() * v as usize) as f64 / 8.0)
        .collect()
}

/// The trace CSVs under the run directory, in name order.
pub fn trace_files(art: &Artifacts) -> Result<Vec<PathBuf>> {
    let dir = art.traces();
    let mut files: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect(),
        Err(_) => Vec::new(),
    };
    files.sort();
    Ok(files)
}

/// Writes heatmaps (entropy and bitrate over `psi` x `x_dot` and `psi` x
/// `psi_dot`) and the AoI-conditioned level distribution for every saved
/// trace. Fails when there are no traces.
pub fn run_analyze(art: &Artifacts, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let files = trace_files(art)?;
    if files.is_empty() {
        return Err(Error::MissingArtifact(art.traces().join("*.csv")));
    }
    let ensemble = load_ensemble(&art.codec())?;
    let ell_of_level = level_lengths(&ensemble);
    let bins = cfg.eval.grid_bins;
    let psi = Axis { bins, ..Axis::psi() };
    let x_dot = Axis { bins, ..Axis::x_dot() };
    let psi_dot = Axis { bins, ..Axis::psi_dot() };
    let mut written = Vec::new();
    for file in files {
        let rows: Vec<TraceRow> = read_trace_csv(&file)?;
        if rows.is_empty() {
            return Err(Error::Empty("trace file has no steps"));
        }
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("trace").to_string();
        for (name, y) in [("psi_xdot", x_dot), ("psi_psidot", psi_dot)] {
            let e = entropy_map(&rows, psi, y, cfg.eval.min_count);
            let b = bitrate_map(&rows, psi, y, cfg.eval.min_count);
            for (kind, map) in [("entropy", e), ("bitrate", b)] {
                let path = art.dir.join(format!("heatmap_{kind}_{name}_{stem}.csv"));
                write_heatmap_csv(&path, &map)?;
                written.push(path);
            }
        }
        let dist = aoi_action_distribution(
            &rows,
            cfg.eval.entropy_bins,
            cfg.eval.aoi_values,
            ensemble.max_level() as usize,
        )?;
        let path = art.dir.join(format!("aoi_dist_{stem}.csv"));
        write_aoi_csv(&path, &dist, &ell_of_level)?;
        written.push(path);
    }
    Ok(written)
}
