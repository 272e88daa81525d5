//! The batch commands, callable without going through argument parsing.
//!
//! Output layout under `out`:
//!
//! ```text
//! {source,target,val}/velodyne/NNNNNN.bin   gen-scenes
//! {source,target,val}/labels/NNNNNN.label
//! checkpoints/{pretrain,adapt}.ckpt
//! telemetry/                                pretrain, adapt
//! filter/  augment/  mix/  eval/  report/
//! config/<command>.toml                     verbatim config, when given
//! config/<command>.resolved.toml
//! meta.txt                                  the only file with timestamps
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

use crate::cloud::{LabelSet, PointCloud};
use crate::config::{RunConfig, Split};
use crate::dplf::{Retention, ThresholdState};
use crate::error::{Error, Result};
use crate::io::{load_labels_for, load_scan, save_labels, save_provenance, save_scan, write_atomic, ClassMap};
use crate::mixing::MixedScan;
use crate::pgdap::{run_pipeline, BinSample, TrackedScan};
use crate::report::{
    confidences_csv, iterations_csv, parse_confidences, parse_thresholds, threshold_lines_csv, thresholds_csv,
    ConfidenceReport,
};
use crate::rng::iteration_slot;
use crate::scene::{generate_scene, CLASS_NAMES};
use crate::trainer::{
    adapt, compute_features, load_checkpoint, mix_slot, predict_labels, pretrain, pseudo_label_batch,
    save_checkpoint, AdaptState, ConfusionMatrix, IouReport, ModelParams, PretrainResult, Telemetry,
};

/// Scene index offsets per split, so the three splits never share a layout.
const TARGET_INDEX_BASE: u64 = 1 << 20;
const VAL_INDEX_BASE: u64 = 2 << 20;

/// A resolved configuration plus the text it was read from, if any.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub config_text: Option<String>,
}

impl Run {
    pub fn new(config: RunConfig) -> Self {
        Self {
            config,
            config_text: None,
        }
    }

    fn out(&self) -> &Path {
        &self.config.out
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.config.out.join(rel)
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join(".dpgla.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked {
                path: out.to_path_buf(),
            }),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Locks the output directory, echoes the config and times the command.
fn session<T>(run: &Run, command: &str, body: impl FnOnce() -> Result<T>) -> Result<T> {
    run.config.validate()?;
    let _lock = OutputLock::acquire(run.out())?;
    if let Some(text) = &run.config_text {
        write_atomic(&run.path(&format!("config/{command}.toml")), text.as_bytes())?;
    }
    write_atomic(
        &run.path(&format!("config/{command}.resolved.toml")),
        run.config.to_toml().as_bytes(),
    )?;
    let started = unix_now();
    let out = body()?;
    let meta = run.path("meta.txt");
    let mut text = fs::read_to_string(&meta).unwrap_or_default();
    let _ = writeln!(text, "{command} started={started} finished={}", unix_now());
    write_atomic(&meta, text.as_bytes())?;
    Ok(out)
}

pub fn scan_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("velodyne").join(format!("{i:06}.bin"))
}

pub fn label_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("labels").join(format!("{i:06}.label"))
}

pub fn provenance_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("provenance").join(format!("{i:06}.prov"))
}

/// Scan files of a split directory in name order.
pub fn list_scans(dir: &Path) -> Result<Vec<PathBuf>> {
    let vdir = dir.join("velodyne");
    let entries = match fs::read_dir(&vdir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::Data(format!("missing input directory {}", vdir.display())))
        }
        Err(e) => return Err(Error::io(&vdir, e)),
    };
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no scans under {}", vdir.display())));
    }
    Ok(files)
}

fn labels_for(scan: &Path, labels_dir: &Path, map: &ClassMap, len: usize) -> Result<LabelSet> {
    let stem = scan.file_stem().unwrap_or_default().to_string_lossy();
    load_labels_for(labels_dir.join(format!("{stem}.label")), map, len)
}

pub fn load_unlabelled(dir: &Path) -> Result<Vec<PointCloud>> {
    list_scans(dir)?.par_iter().map(load_scan).collect()
}

/// Scans of `dir` with labels read from `labels_dir` (usually
/// `dir/labels`).
pub fn load_labelled(dir: &Path, labels_dir: &Path, map: &ClassMap) -> Result<Vec<(PointCloud, LabelSet)>> {
    list_scans(dir)?
        .par_iter()
        .map(|p| {
            let cloud = load_scan(p)?;
            let labels = labels_for(p, labels_dir, map, cloud.len())?;
            Ok((cloud, labels))
        })
        .collect()
}

fn load_split_labelled(cfg: &RunConfig, split: Split, map: &ClassMap) -> Result<Vec<(PointCloud, LabelSet)>> {
    let dir = cfg.split_dir(split);
    load_labelled(&dir, &dir.join("labels"), map)
}

/// Scene counts written per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenSummary {
    pub source: usize,
    pub target: usize,
    pub val: usize,
}

pub fn cmd_gen_scenes(run: &Run) -> Result<GenSummary> {
    session(run, "gen-scenes", || {
        let cfg = &run.config;
        let s = &cfg.scenes;
        let map = ClassMap::identity(CLASS_NAMES.len());
        let jobs = [
            (Split::Source, &s.source, s.source_count, 0),
            (Split::Target, &s.target, s.target_count, TARGET_INDEX_BASE),
            (Split::Val, &s.target, s.val_count, VAL_INDEX_BASE),
        ];
        for (split, spec, count, base) in jobs {
            let dir = run.out().join(split.name());
            (0..count).into_par_iter().try_for_each(|i| {
                let (cloud, labels) = generate_scene(spec, cfg.seed, base + i as u64)?;
                save_scan(scan_path(&dir, i), &cloud)?;
                save_labels(label_path(&dir, i), &labels, &map)
            })?;
        }
        Ok(GenSummary {
            source: s.source_count,
            target: s.target_count,
            val: s.val_count,
        })
    })
}

fn pretrain_checkpoint(run: &Run) -> PathBuf {
    run.path("checkpoints/pretrain.ckpt")
}

fn adapt_checkpoint(run: &Run) -> PathBuf {
    run.path("checkpoints/adapt.ckpt")
}

/// Trains on the labelled source split. The checkpoint holds the result as
/// both student and teacher, with fresh filter statistics.
pub fn cmd_pretrain(run: &Run) -> Result<(AdaptState, PretrainResult)> {
    session(run, "pretrain", || {
        let cfg = &run.config;
        let map = cfg.class_map()?;
        let source = load_split_labelled(cfg, Split::Source, &map)?;
        let result = pretrain(&source, &cfg.normalization, &cfg.train, cfg.seed)?;
        let state = AdaptState {
            iteration: 0,
            student: result.params.clone(),
            teacher: result.params.clone(),
            thresholds: ThresholdState::new(map.num_classes, cfg.filter.schedule),
        };
        save_checkpoint(pretrain_checkpoint(run), &state)?;
        let mut csv = String::from("epoch,loss\n");
        for (e, l) in result.losses.iter().enumerate() {
            let _ = writeln!(csv, "{e},{l}");
        }
        write_atomic(&run.path("telemetry/pretrain_loss.csv"), csv.as_bytes())?;
        Ok((state, result))
    })
}

#[derive(Debug, Clone, Default)]
pub struct AdaptOptions {
    /// Starting checkpoint; `checkpoints/pretrain.ckpt` when unset.
    pub checkpoint: Option<PathBuf>,
    /// Writes the first iteration's mixed scans here, laid out like `mix`.
    pub dump_mixed: Option<PathBuf>,
}

fn save_mixed(dir: &Path, i: usize, pair: &[MixedScan; 2], map: &ClassMap) -> Result<()> {
    for m in pair {
        let d = dir.join(m.direction.tag());
        save_scan(scan_path(&d, i), &m.cloud)?;
        save_labels(label_path(&d, i), &m.labels, map)?;
        save_provenance(provenance_path(&d, i), &m.from_target)?;
    }
    Ok(())
}

pub fn cmd_adapt(run: &Run, opts: &AdaptOptions) -> Result<(AdaptState, Telemetry)> {
    session(run, "adapt", || {
        let cfg = &run.config;
        let map = cfg.class_map()?;
        let start = load_checkpoint(opts.checkpoint.clone().unwrap_or_else(|| pretrain_checkpoint(run)))?;
        if start.thresholds.num_classes() != map.num_classes {
            return Err(Error::Data("checkpoint class count differs from the class map".into()));
        }
        let source = load_split_labelled(cfg, Split::Source, &map)?;
        let target = load_unlabelled(&cfg.split_dir(Split::Target))?;
        let first = start.iteration;
        let mut dump = |t: u64, mixed: &[[MixedScan; 2]]| -> Result<()> {
            match &opts.dump_mixed {
                Some(dir) if t == first => mixed
                    .iter()
                    .enumerate()
                    .try_for_each(|(i, pair)| save_mixed(dir, i, pair, &map)),
                _ => Ok(()),
            }
        };
        let (state, telemetry) = adapt(start, &source, &target, &cfg.adapt_settings(), Some(&mut dump))?;
        save_checkpoint(adapt_checkpoint(run), &state)?;
        let k = map.num_classes;
        write_atomic(
            &run.path("telemetry/iterations.csv"),
            iterations_csv(&telemetry.iterations, k).as_bytes(),
        )?;
        write_atomic(
            &run.path("telemetry/confidences.csv"),
            confidences_csv(&telemetry.samples).as_bytes(),
        )?;
        write_atomic(
            &run.path("telemetry/thresholds.csv"),
            thresholds_csv(&state.thresholds).as_bytes(),
        )?;
        Ok((state, telemetry))
    })
}

/// Filters the target split in consecutive batches of `batch_size` with the
/// checkpoint's teacher, advancing its filter state once per batch. Writes
/// the surviving pseudo-labels and per-class counts.
pub fn cmd_filter(run: &Run, checkpoint: Option<&Path>) -> Result<Retention> {
    session(run, "filter", || {
        let cfg = &run.config;
        let map = cfg.class_map()?;
        let mut state = load_checkpoint(checkpoint.map_or_else(|| pretrain_checkpoint(run), Path::to_path_buf))?;
        let target = load_unlabelled(&cfg.split_dir(Split::Target))?;
        let feats = target
            .par_iter()
            .map(|c| compute_features(c, &cfg.normalization, &cfg.train.features))
            .collect::<Result<Vec<_>>>()?;
        let d = target
            .iter()
            .map(|c| cfg.normalization.distance(c))
            .collect::<Result<Vec<_>>>()?;
        let dir = run.path("filter");
        let mut total = Retention::new(map.num_classes);
        let mode = cfg.filter.mode();
        for start in (0..target.len()).step_by(cfg.train.batch_size) {
            let end = (start + cfg.train.batch_size).min(target.len());
            let batch: Vec<_> = feats[start..end].iter().collect();
            let (_, filtered) =
                pseudo_label_batch(&state.teacher, &batch, &d[start..end], &mut state.thresholds, mode)?;
            for (i, labels) in (start..end).zip(&filtered.labels) {
                save_labels(label_path(&dir, i), labels, &map)?;
            }
            for c in 0..map.num_classes {
                total.total[c] += filtered.retention.total[c];
                total.retained[c] += filtered.retention.retained[c];
                total.bottom_rejected[c] += filtered.retention.bottom_rejected[c];
            }
        }
        let mut csv = String::from("class,total,retained,rejected,bottom_rejected\n");
        for c in 0..map.num_classes {
            let _ = writeln!(
                csv,
                "{c},{},{},{},{}",
                total.total[c],
                total.retained[c],
                total.total[c] - total.retained[c],
                total.bottom_rejected[c]
            );
        }
        write_atomic(&dir.join("retention.csv"), csv.as_bytes())?;
        write_atomic(&dir.join("thresholds.csv"), thresholds_csv(&state.thresholds).as_bytes())?;
        Ok(total)
    })
}

/// Slot of target scan `i` when the target split is walked in batches:
/// `(i / B, i mod B)`, paired with source scan `i mod n_s`.
fn pair_slot(i: usize, batch: usize) -> (u64, u64) {
    ((i / batch) as u64, (i % batch) as u64)
}

/// Runs the augmentation stages on every (source, target) pair and writes
/// the augmented scans and the per-bin sampling audit.
pub fn cmd_augment(run: &Run) -> Result<Vec<(usize, BinSample)>> {
    session(run, "augment", || {
        let cfg = &run.config;
        let map = cfg.class_map()?;
        let source = load_split_labelled(cfg, Split::Source, &map)?;
        let target = load_unlabelled(&cfg.split_dir(Split::Target))?;
        let dir = run.path("augment");
        let results = (0..target.len())
            .into_par_iter()
            .map(|i| {
                let (t, p) = pair_slot(i, cfg.train.batch_size);
                let (sc, sl) = &source[i % source.len()];
                let tc = &target[i];
                let aug = run_pipeline(
                    TrackedScan::new(sc.clone(), sl.clone())?,
                    TrackedScan::new(tc.clone(), LabelSet::unknown(tc.len(), map.num_classes))?,
                    &cfg.augment,
                    &cfg.mix,
                    &cfg.normalization,
                    cfg.seed,
                    iteration_slot(t, p),
                )?;
                save_scan(scan_path(&dir.join("source"), i), &aug.source.cloud)?;
                save_labels(label_path(&dir.join("source"), i), &aug.source.labels, &map)?;
                save_scan(scan_path(&dir.join("target"), i), &aug.target.cloud)?;
                Ok(aug.bins)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut csv = String::from("pair,bin,xi,target_count,source_before,target_before,source_after,target_after\n");
        let mut all = Vec::new();
        for (i, bins) in results.into_iter().enumerate() {
            for b in bins {
                let _ = writeln!(
                    csv,
                    "{i},{},{},{},{},{},{},{}",
                    b.bin, b.xi, b.target_count, b.source_before, b.target_before, b.source_after, b.target_after
                );
                all.push((i, b));
            }
        }
        write_atomic(&dir.join("bins.csv"), csv.as_bytes())?;
        Ok(all)
    })
}

/// Mixes target scan `i`, labelled from `labels_dir` (default `filter/labels`),
/// with source scan `i mod n_s` under the random streams of slot
/// `(i / B, i mod B)`. Batch 0 therefore reproduces the first adaptation
/// iteration.
pub fn cmd_mix(run: &Run, labels_dir: Option<&Path>) -> Result<usize> {
    session(run, "mix", || {
        let cfg = &run.config;
        let map = cfg.class_map()?;
        let source = load_split_labelled(cfg, Split::Source, &map)?;
        let labels_dir = labels_dir.map_or_else(|| run.path("filter/labels"), Path::to_path_buf);
        let target = load_labelled(&cfg.split_dir(Split::Target), &labels_dir, &map)?;
        let settings = cfg.adapt_settings();
        let dir = run.path("mix");
        (0..target.len()).into_par_iter().try_for_each(|i| {
            let (t, p) = pair_slot(i, cfg.train.batch_size);
            let (sc, sl) = &source[i % source.len()];
            let (tc, tl) = &target[i];
            let pair = mix_slot((sc, sl), (tc, tl), &settings, t, p)?;
            save_mixed(&dir, i, &pair, &map)
        })?;
        Ok(target.len())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Student,
    Teacher,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub split: Split,
    /// Checkpoint to evaluate; `checkpoints/adapt.ckpt` when unset.
    pub checkpoint: Option<PathBuf>,
    pub model: ModelChoice,
    /// Score label files from this directory instead of running a model.
    pub predictions: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            split: Split::Val,
            checkpoint: None,
            model: ModelChoice::Student,
            predictions: None,
        }
    }
}

pub fn class_name(c: usize, num_classes: usize) -> String {
    if num_classes == CLASS_NAMES.len() {
        CLASS_NAMES[c].to_string()
    } else {
        format!("class{c}")
    }
}

/// Per-class IoU as a fixed-width table, one row, absent classes as `-`.
pub fn format_iou_table(label: &str, report: &IouReport) -> String {
    let k = report.per_class.len();
    let mut head = format!("{:<12}", "model");
    let mut row = format!("{label:<12}");
    for c in 0..k {
        let name = class_name(c, k);
        let w = name.len().max(6);
        let _ = write!(head, " {name:>w$}");
        match report.per_class[c] {
            Some(v) => {
                let _ = write!(row, " {v:>w$.1}");
            }
            None => {
                let _ = write!(row, " {:>w$}", "-");
            }
        }
    }
    let _ = write!(head, " {:>6}", "mIoU");
    let _ = write!(row, " {:>6.1}", report.miou);
    format!("{head}\n{row}\n")
}

pub fn cmd_eval(run: &Run, opts: &EvalOptions) -> Result<IouReport> {
    session(run, "eval", || {
        let cfg = &run.config;
        let map = cfg.class_map()?;
        let truth = load_split_labelled(cfg, opts.split, &map)?;
        let preds: Vec<LabelSet> = match &opts.predictions {
            Some(dir) => {
                let scans = list_scans(&cfg.split_dir(opts.split))?;
                scans
                    .iter()
                    .zip(&truth)
                    .map(|(p, (c, _))| labels_for(p, &dir.join("labels"), &map, c.len()))
                    .collect::<Result<_>>()?
            }
            None => {
                let ckpt = load_checkpoint(opts.checkpoint.clone().unwrap_or_else(|| adapt_checkpoint(run)))?;
                let params: &ModelParams = match opts.model {
                    ModelChoice::Student => &ckpt.student,
                    ModelChoice::Teacher => &ckpt.teacher,
                };
                truth
                    .par_iter()
                    .map(|(c, _)| predict_labels(params, &compute_features(c, &cfg.normalization, &cfg.train.features)?))
                    .collect::<Result<_>>()?
            }
        };
        let mut cm = ConfusionMatrix::new(map.num_classes);
        for (p, (_, t)) in preds.iter().zip(&truth) {
            cm.add(p, t)?;
        }
        let report = cm.report();
        let mut csv = String::from("class,name,iou\n");
        for (c, v) in report.per_class.iter().enumerate() {
            let v = v.map_or(String::new(), |v| v.to_string());
            let _ = writeln!(csv, "{c},{},{v}", class_name(c, map.num_classes));
        }
        let _ = writeln!(csv, "miou,,{}", report.miou);
        write_atomic(&run.path("eval/iou.csv"), csv.as_bytes())?;
        Ok(report)
    })
}

/// Builds confidence histograms, retained fractions and threshold lines
/// from an adaptation's telemetry (default `telemetry/`).
pub fn cmd_report(run: &Run, telemetry: Option<&Path>) -> Result<ConfidenceReport> {
    session(run, "report", || {
        let dir = telemetry.map_or_else(|| run.path("telemetry"), Path::to_path_buf);
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let samples = parse_confidences(&read("confidences.csv")?)?;
        let state = parse_thresholds(&read("thresholds.csv")?)?;
        let report = ConfidenceReport::build(&samples, &state)?;
        let out = run.path("report");
        write_atomic(&out.join("histogram.csv"), report.histogram_csv().as_bytes())?;
        write_atomic(&out.join("retained.csv"), report.retained_csv().as_bytes())?;
        write_atomic(&out.join("thresholds.csv"), threshold_lines_csv(&state).as_bytes())?;
        Ok(report)
    })
}
