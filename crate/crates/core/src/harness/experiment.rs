//! Pipelines: dataset generation, training, reconstruction, evaluation, the
//! D sweep, the refinement-weight ablation and oracle tracing.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{derive_seed, ExperimentConfig};
use super::output::{
    create_run_dir, write_csv, write_json, write_line_chart, write_volume_grid, Series, PHASE_COLORS,
};
use super::toy::two_gaussian_mixture;
use crate::data::{generate_pairs, tensor_to_volumes, volumes_to_tensor, Archive, PairedVolume, HU_SCALE};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{train, Checkpoint, DenoiserModel, TrainingPair};
use crate::oracle::{sample_prior, trace_field_line, ChargeSet};
use crate::sampler::{sample, sample_unrefined, SamplerSchedule};
use crate::volume::{JointVolume, Phase, Role};

/// Metadata keys shared by every archive the harness writes.
pub const META_FINGERPRINT: &str = "fingerprint";
pub const META_DATA_FINGERPRINT: &str = "data_fingerprint";

pub struct Datasets {
    pub train: Vec<PairedVolume>,
    pub test: Vec<PairedVolume>,
}

pub fn generate_datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    let train = generate_pairs(&cfg.data.dataset(cfg.data.train_count, derive_seed(cfg.seed, "data/train")))?;
    let test = generate_pairs(&cfg.data.dataset(cfg.data.test_count, derive_seed(cfg.seed, "data/test")))?;
    Ok(Datasets { train, test })
}

fn provenance(cfg: &ExperimentConfig, kind: &str) -> Result<serde_json::Value> {
    Ok(json!({
        "kind": kind,
        META_FINGERPRINT: cfg.fingerprint()?,
        META_DATA_FINGERPRINT: cfg.data_fingerprint()?,
        "hu_scale": HU_SCALE,
        "intensity_domain": [-1.0, 1.0],
    }))
}

pub fn dataset_archive(cfg: &ExperimentConfig, pairs: &[PairedVolume], split: &str) -> Result<Archive> {
    let mut meta = provenance(cfg, "dataset")?;
    meta["split"] = json!(split);
    meta["data"] = serde_json::to_value(&cfg.data).map_err(|e| Error::Harness(e.to_string()))?;
    let mut a = Archive::with_metadata(meta);
    let routine: Vec<JointVolume> = pairs.iter().map(|p| p.routine.clone()).collect();
    let lowdose: Vec<JointVolume> = pairs.iter().map(|p| p.lowdose.clone()).collect();
    a.insert("routine", volumes_to_tensor(&routine)?)?;
    a.insert("lowdose", volumes_to_tensor(&lowdose)?)?;
    Ok(a)
}

pub fn pairs_from_archive(a: &Archive) -> Result<Vec<PairedVolume>> {
    let routine = tensor_to_volumes(a.require("routine")?, Role::Routine)?;
    let lowdose = tensor_to_volumes(a.require("lowdose")?, Role::Lowdose)?;
    if routine.len() != lowdose.len() {
        return Err(Error::Data("routine and lowdose counts differ".into()));
    }
    Ok(routine
        .into_iter()
        .zip(lowdose)
        .map(|(routine, lowdose)| PairedVolume { routine, lowdose })
        .collect())
}

pub fn reconstruction_archive(cfg: &ExperimentConfig, recons: &[JointVolume], w: f64) -> Result<Archive> {
    let mut meta = provenance(cfg, "reconstruction")?;
    meta["w"] = json!(w);
    meta["sampler"] = serde_json::to_value(&cfg.sampler).map_err(|e| Error::Harness(e.to_string()))?;
    let mut a = Archive::with_metadata(meta);
    a.insert("reconstruction", volumes_to_tensor(recons)?)?;
    Ok(a)
}

/// Writes the resolved configuration, headed by its fingerprint.
fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let path = dir.join("config.toml");
    let mut w = super::output::create_new(&path)?;
    write!(w, "# fingerprint {}\n{}", cfg.fingerprint()?, cfg.to_toml()?)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))
}

/// Reads a string metadata field.
pub fn archive_meta_str<'a>(a: &'a Archive, key: &str) -> Option<&'a str> {
    a.metadata.get(key).and_then(|v| v.as_str())
}

pub fn checkpoint_archive(cfg: &ExperimentConfig, ckpt: &Checkpoint) -> Result<Archive> {
    let mut a = ckpt.to_archive()?;
    a.metadata[META_FINGERPRINT] = json!(cfg.fingerprint()?);
    a.metadata[META_DATA_FINGERPRINT] = json!(cfg.data_fingerprint()?);
    Ok(a)
}

/// Trains a fresh model on the paired set. `on_checkpoint` sees every
/// intermediate and the final checkpoint.
pub fn train_model(
    cfg: &ExperimentConfig,
    pairs: &[PairedVolume],
    mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<Checkpoint> {
    let model = DenoiserModel::<f32>::new(
        cfg.model.architecture.clone(),
        cfg.layout(),
        cfg.model.sigma_data,
        derive_seed(cfg.seed, "model/init"),
    )?;
    let data: Vec<TrainingPair> = pairs.iter().map(TrainingPair::from).collect();
    let tc = cfg.train_config();
    let out = train(model, &data, &tc, |t| {
        let ckpt = Checkpoint::new(t.model.clone(), t.optimizer.clone(), t.loss_history.clone(), tc.clone())?;
        on_checkpoint(&ckpt)
    })?;
    Checkpoint::new(out.model, out.optimizer, out.loss_history, tc)
}

/// Samples one reconstruction per condition. Each volume has its own
/// seeded stream so results do not depend on batch order.
pub fn reconstruct(
    cfg: &ExperimentConfig,
    model: &DenoiserModel<f32>,
    conditions: &[JointVolume],
    schedule: &SamplerSchedule,
    refine: bool,
) -> Result<Vec<JointVolume>> {
    conditions
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("sampler/{i}")));
            if refine {
                sample(model, c, schedule, &mut rng)
            } else {
                sample_unrefined(model, c, schedule, &mut rng)
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossRow {
    pub fingerprint: String,
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricRow {
    pub fingerprint: String,
    pub volume: usize,
    pub phase: String,
    pub mae_hu: f64,
    pub ssim: f64,
    pub psnr_db: f64,
}

pub fn loss_rows(fingerprint: &str, history: &[f64]) -> Vec<LossRow> {
    history
        .iter()
        .enumerate()
        .map(|(i, &loss)| LossRow {
            fingerprint: fingerprint.to_string(),
            iteration: i + 1,
            loss,
        })
        .collect()
}

pub fn metric_rows(report: &EvalReport) -> Vec<MetricRow> {
    report
        .scores
        .iter()
        .map(|s| MetricRow {
            fingerprint: report.fingerprint.clone(),
            volume: s.volume,
            phase: s.phase.label().to_string(),
            mae_hu: s.mae_hu,
            ssim: s.ssim,
            psnr_db: s.psnr_db,
        })
        .collect()
}

/// Writes `<stem>.csv` and `<stem>.json` for a report.
pub fn write_report(dir: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    write_csv(&dir.join(format!("{stem}.csv")), &metric_rows(report))?;
    write_json(&dir.join(format!("{stem}.json")), &summary_json(report))
}

fn summary_json(report: &EvalReport) -> serde_json::Value {
    json!({
        "fingerprint": report.fingerprint,
        "volumes": report.volumes,
        "phases": report.phases,
        "mean_mae_hu": report.mean_mae_hu,
        "mean_ssim_percent": report.mean_ssim_percent,
        "mean_psnr_db": report.mean_psnr_db,
        "frechet": report.frechet,
        "intensity_note": "MAE in pseudo-HU: normalized [-1, 1] mapped to [-1024, 1024]",
    })
}

fn references(pairs: &[PairedVolume]) -> Vec<JointVolume> {
    pairs.iter().map(|p| p.routine.clone()).collect()
}

fn conditions(pairs: &[PairedVolume]) -> Vec<JointVolume> {
    pairs.iter().map(|p| p.lowdose.clone()).collect()
}

/// Preview grid: low-dose, reconstruction and reference phases for up to
/// four test volumes.
fn write_preview(dir: &Path, name: &str, fp: &str, pairs: &[PairedVolume], recons: &[JointVolume]) -> Result<()> {
    let rows: Vec<Vec<&JointVolume>> = pairs
        .iter()
        .zip(recons)
        .take(4)
        .map(|(p, r)| vec![&p.lowdose, r, &p.routine])
        .collect();
    write_volume_grid(
        &dir.join(name),
        &rows,
        fp,
        "rows: test volumes; columns: low-dose I II III, reconstruction I II III, routine I II III",
    )
}

pub struct PipelineOutcome {
    pub run_dir: PathBuf,
    pub checkpoint: Checkpoint,
    pub report: EvalReport,
    pub baseline: EvalReport,
}

/// Data generation, training, sampling at the configured `w` and
/// evaluation, with every artifact written under one run directory.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<PipelineOutcome> {
    let fp = cfg.fingerprint()?;
    let dir = create_run_dir(out, "run", &fp)?;
    run_pipeline_in(cfg, &dir)
}

fn run_pipeline_in(cfg: &ExperimentConfig, dir: &Path) -> Result<PipelineOutcome> {
    let fp = cfg.fingerprint()?;
    write_config(dir, cfg)?;
    let data = generate_datasets(cfg)?;
    crate::data::write_archive(dir.join("train.pfjm"), &dataset_archive(cfg, &data.train, "train")?)?;
    crate::data::write_archive(dir.join("test.pfjm"), &dataset_archive(cfg, &data.test, "test")?)?;

    let checkpoint = train_model(cfg, &data.train, |c| {
        if c.iteration < cfg.training.iterations {
            let path = dir.join(format!("checkpoint-{:06}.pfjm", c.iteration));
            crate::data::write_archive(path, &checkpoint_archive(cfg, c)?)?;
        }
        Ok(())
    })?;
    crate::data::write_archive(dir.join("checkpoint.pfjm"), &checkpoint_archive(cfg, &checkpoint)?)?;
    write_csv(&dir.join("loss.csv"), &loss_rows(&cfg.fingerprint()?, &checkpoint.loss_history))?;

    let schedule = cfg.sampler.schedule()?;
    let conds = conditions(&data.test);
    let recons = reconstruct(cfg, &checkpoint.model, &conds, &schedule, true)?;
    crate::data::write_archive(
        dir.join("reconstruction.pfjm"),
        &reconstruction_archive(cfg, &recons, schedule.w)?,
    )?;
    write_preview(dir, "preview.png", &fp, &data.test, &recons)?;

    let refs = references(&data.test);
    let report = evaluate(&refs, &recons, &cfg.eval, &fp)?;
    let baseline = evaluate(&refs, &conds, &cfg.eval, &fp)?;
    write_report(dir, "metrics", &report)?;
    write_report(dir, "lowdose_metrics", &baseline)?;
    Ok(PipelineOutcome {
        run_dir: dir.to_path_buf(),
        checkpoint,
        report,
        baseline,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub fingerprint: String,
    pub d: usize,
    pub phase: String,
    pub mae_hu: f64,
    pub ssim_percent: f64,
    pub psnr_db: f64,
}

pub struct SweepOutcome {
    pub run_dir: PathBuf,
    pub rows: Vec<SweepRow>,
    pub chart: PathBuf,
}

/// Trains and evaluates one model per `D`, then writes a comparison CSV and
/// a per-phase MAE-versus-D chart.
pub fn sweep_d(cfg: &ExperimentConfig, d_values: &[usize], out: &Path) -> Result<SweepOutcome> {
    if d_values.is_empty() || d_values.contains(&0) {
        return Err(Error::Harness("D sweep needs positive D values".into()));
    }
    let fp = cfg.fingerprint()?;
    let dir = create_run_dir(out, "sweep-d", &fp)?;
    let mut rows = Vec::new();
    for &d in d_values {
        let mut arm = cfg.clone();
        arm.model.d = d;
        arm.oracle.d = d;
        let arm_dir = dir.join(format!("d-{d}"));
        std::fs::create_dir(&arm_dir).map_err(|e| Error::io(&arm_dir, e))?;
        let outcome = run_pipeline_in(&arm, &arm_dir)?;
        log::info!("D = {d}: mean MAE {:.3} HU", outcome.report.mean_mae_hu);
        for p in &outcome.report.phases {
            rows.push(SweepRow {
                fingerprint: fp.clone(),
                d,
                phase: p.phase.label().to_string(),
                mae_hu: p.mae_hu,
                ssim_percent: p.ssim_percent,
                psnr_db: p.psnr_db,
            });
        }
    }
    write_csv(&dir.join("sweep_d.csv"), &rows)?;
    let series: Vec<Series> = Phase::ALL
        .iter()
        .map(|&p| Series {
            label: format!("phase {} MAE (HU)", p.label()),
            color: PHASE_COLORS[p.index()],
            points: rows
                .iter()
                .filter(|r| r.phase == p.label())
                .map(|r| (r.d as f64, r.mae_hu))
                .collect(),
        })
        .collect();
    let chart = dir.join("mae_vs_d.png");
    write_line_chart(&chart, &series, true, &fp, "MAE versus augmented dimension D")?;
    Ok(SweepOutcome { run_dir: dir, rows, chart })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub fingerprint: String,
    pub test_fingerprint: String,
    pub w: f64,
    pub phase: String,
    pub mae_hu: f64,
    pub ssim_percent: f64,
    pub psnr_db: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationSummary {
    pub fingerprint: String,
    pub test_fingerprint: String,
    pub arms: Vec<(f64, f64)>,
    pub unrefined_mae_hu: f64,
    /// Whether the `w = 0` arm reproduces the unrefined sampler bit for bit.
    pub zero_weight_matches_unrefined: bool,
    pub best_w: Option<f64>,
    pub best_mae_hu: Option<f64>,
    /// Best `w > 0` reaches a mean MAE no larger than `w = 0`.
    pub ordering_holds: Option<bool>,
    pub lowdose_mae_hu: f64,
}

pub struct AblationOutcome {
    pub run_dir: PathBuf,
    pub rows: Vec<AblationRow>,
    pub summary: AblationSummary,
    pub loss_history: Vec<f64>,
}

/// Trains once, then samples the same test set at every `w` (plus the
/// unrefined sampler) and reports paired metrics.
pub fn ablate_conditioning(cfg: &ExperimentConfig, w_values: &[f64], out: &Path) -> Result<AblationOutcome> {
    if w_values.is_empty() || w_values.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::Harness("ablation needs refinement weights in [0, 1]".into()));
    }
    let fp = cfg.fingerprint()?;
    let test_fp = cfg.data_fingerprint()?;
    let dir = create_run_dir(out, "sweep-w", &fp)?;
    write_config(&dir, cfg)?;
    let data = generate_datasets(cfg)?;
    crate::data::write_archive(dir.join("test.pfjm"), &dataset_archive(cfg, &data.test, "test")?)?;
    let checkpoint = train_model(cfg, &data.train, |_| Ok(()))?;
    crate::data::write_archive(dir.join("checkpoint.pfjm"), &checkpoint_archive(cfg, &checkpoint)?)?;
    write_csv(&dir.join("loss.csv"), &loss_rows(&cfg.fingerprint()?, &checkpoint.loss_history))?;

    let refs = references(&data.test);
    let conds = conditions(&data.test);
    let base = cfg.sampler.schedule()?;
    let unrefined = reconstruct(cfg, &checkpoint.model, &conds, &base, false)?;
    let unrefined_report = evaluate(&refs, &unrefined, &cfg.eval, &fp)?;
    let lowdose_report = evaluate(&refs, &conds, &cfg.eval, &fp)?;
    write_report(&dir, "lowdose_metrics", &lowdose_report)?;

    let mut rows = Vec::new();
    let mut arms = Vec::new();
    let mut zero_matches = true;
    for &w in w_values {
        let schedule = base.clone().with_w(w)?;
        let recons = reconstruct(cfg, &checkpoint.model, &conds, &schedule, true)?;
        if w == 0.0 {
            zero_matches &= recons
                .iter()
                .zip(&unrefined)
                .all(|(a, b)| a.as_slice().iter().zip(b.as_slice()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        let report = evaluate(&refs, &recons, &cfg.eval, &fp)?;
        crate::data::write_archive(
            dir.join(format!("reconstruction-w{w}.pfjm")),
            &reconstruction_archive(cfg, &recons, w)?,
        )?;
        write_preview(&dir, &format!("preview-w{w}.png"), &fp, &data.test, &recons)?;
        for p in &report.phases {
            rows.push(AblationRow {
                fingerprint: fp.clone(),
                test_fingerprint: test_fp.clone(),
                w,
                phase: p.phase.label().to_string(),
                mae_hu: p.mae_hu,
                ssim_percent: p.ssim_percent,
                psnr_db: p.psnr_db,
            });
        }
        arms.push((w, report.mean_mae_hu));
    }
    write_csv(&dir.join("sweep_w.csv"), &rows)?;

    let zero = arms.iter().find(|(w, _)| *w == 0.0).map(|a| a.1);
    let best = arms
        .iter()
        .filter(|(w, _)| *w > 0.0)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .copied();
    let summary = AblationSummary {
        fingerprint: fp.clone(),
        test_fingerprint: test_fp,
        unrefined_mae_hu: unrefined_report.mean_mae_hu,
        zero_weight_matches_unrefined: zero.is_none() || zero_matches,
        best_w: best.map(|b| b.0),
        best_mae_hu: best.map(|b| b.1),
        ordering_holds: zero.zip(best).map(|(z, b)| b.1 <= z),
        lowdose_mae_hu: lowdose_report.mean_mae_hu,
        arms,
    };
    write_json(&dir.join("ablation.json"), &summary)?;
    Ok(AblationOutcome {
        run_dir: dir,
        rows,
        summary,
        loss_history: checkpoint.loss_history,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceSummary {
    pub fingerprint: String,
    pub d: usize,
    pub r_max: f64,
    pub steps: usize,
    pub files: Vec<String>,
}

/// Traces `oracle.trajectories` field lines from prior samples through the
/// exact field of the toy mixture, one CSV per trajectory with columns
/// `step, r, x_0 … x_{N−1}`.
pub fn oracle_trace(cfg: &ExperimentConfig, out: &Path) -> Result<(PathBuf, TraceSummary)> {
    let fp = cfg.fingerprint()?;
    let dir = create_run_dir(out, "oracle", &fp)?;
    let o = &cfg.oracle;
    let charges = ChargeSet::uniform(two_gaussian_mixture(&o.mixture)?)?;
    let r_max = cfg.oracle_r_max();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "oracle/prior"));
    let mut files = Vec::new();
    for k in 0..o.trajectories {
        let x0 = sample_prior(&mut rng, r_max, charges.dim(), o.d);
        let trace = trace_field_line(&charges, &x0, r_max, 0.0, o.steps, o.d)?;
        let name = format!("trace-{fp}-{k:03}.csv");
        let mut w = csv::Writer::from_writer(super::output::create_new(&dir.join(&name))?);
        let mut header = vec!["step".to_string(), "r".to_string()];
        header.extend((0..charges.dim()).map(|i| format!("x_{i}")));
        let csv_err = |e: csv::Error| Error::Harness(format!("{name}: {e}"));
        w.write_record(&header).map_err(csv_err)?;
        for p in &trace {
            let mut rec = vec![p.step.to_string(), p.r.to_string()];
            rec.extend(p.x.iter().map(f64::to_string));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&dir, e))?;
        files.push(name);
    }
    let summary = TraceSummary {
        fingerprint: fp,
        d: o.d,
        r_max,
        steps: o.steps,
        files,
    };
    write_json(&dir.join("trace.json"), &summary)?;
    Ok((dir, summary))
}

/// Writes train and test archives for the configured phantom study.
pub fn data_gen(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let dir = create_run_dir(out, "data", &cfg.fingerprint()?)?;
    write_config(&dir, cfg)?;
    let data = generate_datasets(cfg)?;
    crate::data::write_archive(dir.join("train.pfjm"), &dataset_archive(cfg, &data.train, "train")?)?;
    crate::data::write_archive(dir.join("test.pfjm"), &dataset_archive(cfg, &data.test, "test")?)?;
    Ok(dir)
}

/// Trains on a dataset archive, or on freshly generated phantoms when no
/// archive is given.
pub fn train_run(cfg: &ExperimentConfig, data: Option<&Path>, out: &Path) -> Result<(PathBuf, Checkpoint)> {
    let pairs = match data {
        Some(p) => pairs_from_archive(&crate::data::read_archive(p)?)?,
        None => generate_datasets(cfg)?.train,
    };
    let dir = create_run_dir(out, "train", &cfg.fingerprint()?)?;
    write_config(&dir, cfg)?;
    let checkpoint = train_model(cfg, &pairs, |c| {
        if c.iteration < cfg.training.iterations {
            let path = dir.join(format!("checkpoint-{:06}.pfjm", c.iteration));
            crate::data::write_archive(path, &checkpoint_archive(cfg, c)?)?;
        }
        Ok(())
    })?;
    crate::data::write_archive(dir.join("checkpoint.pfjm"), &checkpoint_archive(cfg, &checkpoint)?)?;
    write_csv(&dir.join("loss.csv"), &loss_rows(&cfg.fingerprint()?, &checkpoint.loss_history))?;
    Ok((dir, checkpoint))
}

/// Reconstructs every condition in a dataset archive (its `lowdose` tensor)
/// with the checkpointed model.
pub fn sample_run(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    condition: &Path,
    out: &Path,
    png: bool,
) -> Result<PathBuf> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let cond_archive = crate::data::read_archive(condition)?;
    let conds = tensor_to_volumes(cond_archive.require("lowdose")?, Role::Lowdose)?;
    let schedule = cfg.sampler.schedule()?;
    let recons = reconstruct(cfg, &ckpt.model, &conds, &schedule, true)?;
    let fp = cfg.fingerprint()?;
    let dir = create_run_dir(out, "sample", &fp)?;
    let mut archive = reconstruction_archive(cfg, &recons, schedule.w)?;
    // Pair with the data actually sampled, not the one this config would generate.
    if let Some(dfp) = archive_meta_str(&cond_archive, META_DATA_FINGERPRINT) {
        archive.metadata[META_DATA_FINGERPRINT] = json!(dfp);
    }
    crate::data::write_archive(dir.join("reconstruction.pfjm"), &archive)?;
    if png {
        let pairs = pairs_from_archive(&cond_archive)?;
        write_preview(&dir, "preview.png", &fp, &pairs, &recons)?;
    }
    Ok(dir)
}

/// Scores reconstruction archives against the `routine` tensor of a
/// reference archive. Inputs must share one config fingerprint and the
/// reference's data fingerprint unless `force` is set.
pub fn eval_run(
    cfg: &ExperimentConfig,
    reference: &Path,
    reconstructions: &[PathBuf],
    force: bool,
    out: &Path,
) -> Result<(PathBuf, Vec<EvalReport>)> {
    if reconstructions.is_empty() {
        return Err(Error::Harness("eval needs at least one reconstruction archive".into()));
    }
    let ref_archive = crate::data::read_archive(reference)?;
    let refs = tensor_to_volumes(ref_archive.require("routine")?, Role::Routine)?;
    let ref_data = archive_meta_str(&ref_archive, META_DATA_FINGERPRINT).map(str::to_string);
    let archives = reconstructions
        .iter()
        .map(|p| crate::data::read_archive(p).map_err(Error::from))
        .collect::<Result<Vec<_>>>()?;
    let fps: Vec<Option<&str>> = archives.iter().map(|a| archive_meta_str(a, META_FINGERPRINT)).collect();
    let mixed_config = fps.iter().any(|f| f.is_none() || *f != fps[0]);
    let mixed_data = archives
        .iter()
        .any(|a| ref_data.is_none() || archive_meta_str(a, META_DATA_FINGERPRINT) != ref_data.as_deref());
    if (mixed_config || mixed_data) && !force {
        return Err(Error::Harness(format!(
            "refusing mixed-fingerprint inputs (config fingerprints {fps:?}, reference data fingerprint {ref_data:?}); pass --force to override"
        )));
    }
    let fp = fps[0].map(str::to_string).unwrap_or(cfg.fingerprint()?);
    let dir = create_run_dir(out, "eval", &fp)?;
    let mut reports = Vec::new();
    for (k, a) in archives.iter().enumerate() {
        let recons = tensor_to_volumes(a.require("reconstruction")?, Role::Reconstruction)?;
        let afp = archive_meta_str(a, META_FINGERPRINT).unwrap_or(&fp);
        let report = evaluate(&refs, &recons, &cfg.eval, afp)?;
        write_report(&dir, &format!("metrics-{k}"), &report)?;
        reports.push(report);
    }
    Ok((dir, reports))
}
