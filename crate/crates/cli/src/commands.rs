//! Stage implementations. Each stage reads its prerequisites from the run
//! directory, writes its outputs there and finishes by writing a manifest or
//! summary file, so a stage that dies midway leaves nothing a later stage
//! would accept.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fieldshift::eval::{assemble_report, MethodRun, Report};
use fieldshift::mri::{
    load_kspace, make_mask, make_sense, save_kspace, simulate_acquisition, AcquisitionMeta,
    Encoding, KSpaceData, SamplingMask, SenseMaps, ACQUISITION_SCHEMA,
};
use fieldshift::nn::Tensor;
use fieldshift::numerics::{load_real, save_real, write_pgm, RealArray2D, SeededRng};
use fieldshift::ot::{
    gen_pairs, kantorovich_dual_gap, train_teacher, verify_theorem, Critic, PairsManifest,
    TeacherModel,
};
use fieldshift::phantom::{
    build_dataset, degrade, load_images, DatasetManifest, DegradationParams,
};
use fieldshift::sampler::{
    langevin_recon, prior_sample, score_mri_baseline, zero_filled, ReconResult, SamplerConfig,
};
use fieldshift::score::{train_student, write_loss_csv, JointSample, StudentModel};

use crate::config::RunConfig;
use crate::CliError;

pub const METHODS: [&str; 3] = ["meta", "score-mri-baseline", "zero-filled"];

fn write_atomic(path: &Path, body: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, body)?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Exclusive claim on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    /// Creates `out/.lock` holding our PID. A lock left by a process that no
    /// longer exists is taken over.
    pub fn acquire(out: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(out)?;
        let path = out.join(".lock");
        for _ in 0..2 {
            match fs::OpenOptions::new()
                .write(true)
                .create_new(true)
                .open(&path)
            {
                Ok(mut f) => {
                    use std::io::Write;
                    write!(f, "{}", std::process::id())?;
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path)
                        .ok()
                        .and_then(|s| s.trim().parse::<u32>().ok());
                    if holder.is_some_and(process_gone) {
                        fs::remove_file(&path)?;
                        continue;
                    }
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(CliError::Runtime(format!(
            "{} exists: another stage is running in this directory",
            path.display()
        )))
    }
}

#[cfg(target_os = "linux")]
fn process_gone(pid: u32) -> bool {
    !Path::new(&format!("/proc/{pid}")).exists()
}

#[cfg(not(target_os = "linux"))]
fn process_gone(_pid: u32) -> bool {
    false
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// An open run directory with its resolved configuration.
#[derive(Debug)]
pub struct Run {
    pub out: PathBuf,
    pub config: RunConfig,
    pub resume: bool,
    _lock: RunLock,
}

impl Run {
    /// Resolves the configuration, checks it against any existing snapshot,
    /// then locks the directory and writes the snapshot. Nothing is written
    /// when the configuration is rejected.
    pub fn open(
        out: &Path,
        config: Option<&Path>,
        seed: Option<u64>,
        resume: bool,
    ) -> Result<Self, CliError> {
        let snapshot_path = out.join("config.json");
        let snapshot = match fs::read_to_string(&snapshot_path) {
            Ok(text) => Some(RunConfig::from_json(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        let mut cfg = match (config, &snapshot) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                RunConfig::from_json(&text)?
            }
            (None, Some(s)) => s.clone(),
            (None, None) => RunConfig::default(),
        };
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        let cfg = cfg.resolve()?;
        if let Some(s) = &snapshot {
            if *s != cfg {
                return Err(CliError::Config(format!(
                    "{} was created with a different configuration or seed",
                    out.display()
                )));
            }
        }
        let lock = RunLock::acquire(out)?;
        if snapshot.is_none() {
            write_atomic(&snapshot_path, &serde_json::to_string_pretty(&cfg)?)?;
        }
        Ok(Self {
            out: out.to_path_buf(),
            config: cfg,
            resume,
            _lock: lock,
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn require(&self, rel: &str, stage: &str) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::Missing(format!(
                "{} not found; run `{stage}` first",
                p.display()
            )))
        }
    }
}

/// Images of the run's dataset, read back from disk.
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train_x15: Vec<RealArray2D>,
    pub train_x05: Vec<RealArray2D>,
    pub test_x15: Vec<RealArray2D>,
    pub test_x05: Vec<RealArray2D>,
}

pub fn load_dataset(run: &Run) -> Result<Dataset, CliError> {
    let path = run.require("data/manifest.json", "gen-data")?;
    let manifest = DatasetManifest::load(&path)?;
    let dir = run.path("data");
    Ok(Dataset {
        train_x15: load_images(&dir, &manifest.train_x15)?,
        train_x05: load_images(&dir, &manifest.train_x05)?,
        test_x15: load_images(&dir, &manifest.test_x15)?,
        test_x05: load_images(&dir, &manifest.test_x05)?,
        manifest,
    })
}

pub fn gen_data(run: &Run) -> Result<String, CliError> {
    let d = &run.config.data;
    let m = build_dataset(
        &d.phantom,
        &d.degradation,
        d.n_train,
        d.n_test,
        d.seed,
        run.path("data"),
    )?;
    Ok(format!(
        "wrote {} train pairs and {} test pairs to {}",
        m.train_x15.len(),
        m.test_x15.len(),
        run.path("data").display()
    ))
}

/// Held-out quality of a teacher against the known degradation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherMetrics {
    pub n_test: usize,
    /// Mean `NMSE(T(x), f*(x))` over held-out 1.5T images.
    pub nmse_teacher: f64,
    /// Mean `NMSE(x, f*(x))`, the identity map's error.
    pub nmse_identity: f64,
    pub nmse_ratio: f64,
    /// Dual objective of a fresh critic between `T(x)` and held-out 0.5T images.
    pub dual_gap_teacher: f64,
    pub dual_gap_identity: f64,
    pub critic_steps: usize,
}

fn to_tensor(x: &RealArray2D) -> Tensor {
    Tensor::from_vec(1, x.rows(), x.cols(), x.data().to_vec())
}

/// Scores `teacher` on held-out images. `f*` is applied without its noise
/// term. Both dual gaps use critics with the same initialization.
pub fn teacher_metrics(
    teacher: &TeacherModel,
    test_x15: &[RealArray2D],
    test_x05: &[RealArray2D],
    degradation: &DegradationParams,
    critic_steps: usize,
    seed: u64,
) -> Result<TeacherMetrics, CliError> {
    let clean = DegradationParams {
        noise_std: 0.0,
        ..degradation.clone()
    };
    let mut unused = SeededRng::new(0);
    let n = test_x15.len();
    let (mut e_t, mut e_id) = (0.0, 0.0);
    for x in test_x15 {
        let target = degrade(x, &clean, &mut unused);
        e_t += fieldshift::eval::nmse(&target, &teacher.apply(x)?)?;
        e_id += fieldshift::eval::nmse(&target, x)?;
    }
    let (e_t, e_id) = (e_t / n as f64, e_id / n as f64);

    let alpha: Vec<Tensor> = test_x15.iter().map(to_tensor).collect();
    let beta: Vec<Tensor> = test_x05.iter().map(to_tensor).collect();
    let cfg = &teacher.config.critic;
    let spec = cfg.image_spec(1, teacher.size)?;
    let fresh = || Critic::new(spec.clone(), cfg, &mut SeededRng::new(seed));
    let map = |x: &Tensor| {
        let img = RealArray2D::from_vec(x.height, x.width, x.data.clone())?;
        Ok(to_tensor(&teacher.apply(&img)?))
    };
    let gap_t = kantorovich_dual_gap(&map, &alpha, &beta, &mut fresh()?, critic_steps)?;
    let gap_id = kantorovich_dual_gap(
        &|x: &Tensor| Ok(x.clone()),
        &alpha,
        &beta,
        &mut fresh()?,
        critic_steps,
    )?;
    Ok(TeacherMetrics {
        n_test: n,
        nmse_teacher: e_t,
        nmse_identity: e_id,
        nmse_ratio: e_t / e_id,
        dual_gap_teacher: gap_t,
        dual_gap_identity: gap_id,
        critic_steps,
    })
}

pub fn train_teacher_stage(run: &Run) -> Result<String, CliError> {
    let data = load_dataset(run)?;
    let cfg = &run.config.teacher;
    let state = run.path("teacher/state");
    let (model, log) = train_teacher(
        &data.train_x15,
        &data.train_x05,
        cfg,
        Some(&state),
        run.resume,
        &mut |t| {
            if let Some(last) = t.log.last() {
                eprintln!(
                    "teacher epoch {}/{}: critic {:.5} map loss {:.5} cost {:.5}",
                    t.epoch, cfg.epochs, last.critic_objective, last.map_loss, last.transport_cost
                );
            }
        },
    )?;
    let digest = model.save(run.path("teacher/model"))?;
    let mut csv = String::from("epoch,step,critic_objective,map_loss,transport_cost\n");
    for r in &log {
        csv.push_str(&format!(
            "{},{},{:e},{:e},{:e}\n",
            r.epoch, r.step, r.critic_objective, r.map_loss, r.transport_cost
        ));
    }
    write_atomic(&run.path("teacher/log.csv"), &csv)?;
    let seed = SeededRng::new(cfg.seed).fork(0xe7a1).next_u64();
    let metrics = teacher_metrics(
        &model,
        &data.test_x15,
        &data.test_x05,
        &data.manifest.degradation,
        run.config.teacher_eval.critic_steps,
        seed,
    )?;
    write_atomic(
        &run.path("teacher/metrics.json"),
        &serde_json::to_string_pretty(&metrics)?,
    )?;
    Ok(format!(
        "teacher {digest}: held-out NMSE {:.5} (identity {:.5}, ratio {:.3}); dual gap {:.5} (identity {:.5})",
        metrics.nmse_teacher, metrics.nmse_identity, metrics.nmse_ratio, metrics.dual_gap_teacher, metrics.dual_gap_identity
    ))
}

pub fn gen_pairs_stage(run: &Run) -> Result<String, CliError> {
    let model_dir = run.require("teacher/model/manifest.json", "train-teacher")?;
    let data = load_dataset(run)?;
    let (teacher, digest) = TeacherModel::load(model_dir.parent().unwrap_or(&model_dir))?;
    let m = gen_pairs(&teacher, &digest, &data.train_x15, &run.out)?;
    Ok(format!(
        "wrote {} pseudo-pairs from teacher {digest}",
        m.x15.len()
    ))
}

fn student_dir(baseline: bool) -> &'static str {
    if baseline {
        "baseline"
    } else {
        "student"
    }
}

pub fn train_student_stage(run: &Run, baseline: bool) -> Result<String, CliError> {
    let (cfg, data) = if baseline {
        let d = load_dataset(run)?;
        (
            run.config.baseline.clone(),
            d.train_x15.iter().map(to_tensor).collect::<Vec<_>>(),
        )
    } else {
        let path = run.require("pairs.json", "gen-pairs")?;
        let pairs = PairsManifest::load(&path)?.load_pairs(&run.out)?;
        let data = pairs
            .into_iter()
            .map(|(x05, x15)| Ok(JointSample::new(x05, x15)?.to_tensor()))
            .collect::<Result<Vec<_>, CliError>>()?;
        (run.config.student.clone(), data)
    };
    let dir = run.path(student_dir(baseline));
    let trainer = train_student(
        &data,
        &cfg,
        Some(&dir.join("state")),
        run.resume,
        &mut |t| {
            let recent = &t.log[t.log.len().saturating_sub(data.len().max(1))..];
            let mean = recent.iter().map(|r| r.loss).sum::<f64>() / recent.len().max(1) as f64;
            eprintln!(
                "{} epoch {}/{}: loss {mean:.5}",
                student_dir(baseline),
                t.epoch,
                cfg.epochs
            );
        },
    )?;
    write_loss_csv(dir.join("loss.csv"), &trainer.log)?;
    let digest = trainer.snapshot().save(dir.join("model"))?;
    Ok(format!(
        "{} model {digest} after {} steps",
        student_dir(baseline),
        trainer.step
    ))
}

/// Directory label for an acceleration factor: `r1`, `r3`, `r2.5`.
pub fn accel_label(r: f64) -> String {
    if r.fract() == 0.0 {
        format!("r{}", r as u64)
    } else {
        format!("r{r}")
    }
}

fn mask_for(run: &Run, size: usize, r: f64) -> Result<SamplingMask, CliError> {
    if r == 1.0 {
        Ok(SamplingMask::full(size, size))
    } else {
        Ok(make_mask(
            size,
            size,
            r,
            run.config.mri.acs,
            run.config.mri.mask_seed,
        )?)
    }
}

fn acquisition_meta(run: &Run, r: f64) -> AcquisitionMeta {
    AcquisitionMeta {
        schema_version: ACQUISITION_SCHEMA,
        gamma: run.config.mri.gamma,
        acceleration: r,
        acs: run.config.mri.acs,
        mask_seed: run.config.mri.mask_seed,
        sense_seed: run.config.mri.sense_seed,
        noise_seed: run.config.mri.noise_seed,
    }
}

/// Loads the acquisition of test image `index` at acceleration `r`,
/// simulating and saving it on first use.
fn test_acquisition(
    run: &Run,
    x05: &RealArray2D,
    r: f64,
    index: usize,
) -> Result<(KSpaceData, SenseMaps), CliError> {
    let dir = run.path(&format!("acquisitions/{}/{index:04}", accel_label(r)));
    if dir.join("acquisition.json").exists() {
        let (y, sense, _) = load_kspace(&dir)?;
        return Ok((y, sense));
    }
    let size = x05.rows();
    let sense = make_sense(
        size,
        x05.cols(),
        run.config.mri.coils,
        run.config.mri.sense_seed,
    )?;
    let mask = mask_for(run, size, r)?;
    let mut rng = SeededRng::new(run.config.mri.noise_seed)
        .fork(r.to_bits())
        .fork(index as u64);
    let y = simulate_acquisition(x05, &sense, &mask, run.config.mri.gamma, &mut rng)?;
    save_kspace(&dir, &y, &sense, &acquisition_meta(run, r))?;
    Ok((y, sense))
}

enum Prior {
    Meta(StudentModel),
    Baseline(StudentModel),
    None,
}

fn load_prior(run: &Run, method: &str) -> Result<Prior, CliError> {
    let load = |dir: &str, stage: &str| -> Result<StudentModel, CliError> {
        let manifest = run.require(&format!("{dir}/model/manifest.json"), stage)?;
        Ok(StudentModel::load(manifest.parent().unwrap_or(&manifest))?.0)
    };
    match method {
        "meta" => Ok(Prior::Meta(load("student", "train-student")?)),
        "score-mri-baseline" => Ok(Prior::Baseline(load(
            "baseline",
            "train-student --baseline",
        )?)),
        "zero-filled" => Ok(Prior::None),
        other => Err(CliError::Config(format!(
            "unknown method {other:?}; expected one of {}",
            METHODS.join(", ")
        ))),
    }
}

fn reconstruct_one(
    run: &Run,
    prior: &Prior,
    y: &KSpaceData,
    enc: &Encoding,
    seed: u64,
) -> Result<ReconResult, CliError> {
    let cfg = SamplerConfig {
        seed,
        ..run.config.recon.sampler.clone()
    };
    let (rows, cols) = enc.shape();
    let check = |m: &StudentModel| {
        if m.size != [rows, cols] {
            return Err(CliError::Config(format!(
                "geometry mismatch: model trained on {:?}, acquisition is {rows}x{cols}",
                m.size
            )));
        }
        Ok(())
    };
    Ok(match prior {
        Prior::Meta(m) => {
            check(m)?;
            langevin_recon(y, enc, m, &m.schedule, &cfg)?
        }
        Prior::Baseline(m) => {
            check(m)?;
            score_mri_baseline(y, enc, m, &m.schedule, &cfg, run.config.recon.gamma_f)?
        }
        Prior::None => ReconResult {
            x05: None,
            x15: zero_filled(y, enc)?,
            diagnostics: Vec::new(),
            config: cfg,
        },
    })
}

/// What `reconstruct` runs on.
pub enum ReconInput {
    /// The run's test set, acquired at each acceleration.
    TestSet(Vec<f64>),
    /// A saved acquisition directory.
    Acquisition(PathBuf),
    /// A 0.5T image (`.npy`), acquired at the given acceleration.
    Image(PathBuf, f64),
}

pub fn reconstruct(run: &Run, method: &str, input: ReconInput) -> Result<String, CliError> {
    let prior = load_prior(run, method)?;
    let sampler_seed = run.config.recon.sampler.seed;
    match input {
        ReconInput::TestSet(accels) => {
            let data = load_dataset(run)?;
            let n = run
                .config
                .recon
                .n_images
                .unwrap_or(data.test_x05.len())
                .min(data.test_x05.len());
            let mut done = 0;
            for &r in &accels {
                for (i, x05) in data.test_x05.iter().take(n).enumerate() {
                    let out = run.path(&format!("recon/{method}/{}/{i:04}", accel_label(r)));
                    if run.resume && out.join("recon.json").exists() {
                        continue;
                    }
                    let (y, sense) = test_acquisition(run, x05, r, i)?;
                    let enc = Encoding::new(sense, y.mask.clone())?;
                    let seed = SeededRng::new(sampler_seed)
                        .fork(r.to_bits())
                        .fork(i as u64)
                        .next_u64();
                    reconstruct_one(run, &prior, &y, &enc, seed)?.save(&out)?;
                    done += 1;
                    eprintln!("{method} {} image {}/{n}", accel_label(r), i + 1);
                }
            }
            Ok(format!(
                "{method}: {done} reconstructions written under {}",
                run.path("recon").display()
            ))
        }
        ReconInput::Acquisition(dir) => {
            if !dir.join("acquisition.json").exists() {
                return Err(CliError::Missing(format!(
                    "{} has no acquisition.json",
                    dir.display()
                )));
            }
            let (y, sense, _) = load_kspace(&dir)?;
            let enc = Encoding::new(sense, y.mask.clone())?;
            let name = dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let out = run.path(&format!("recon/{method}/input/{name}"));
            reconstruct_one(run, &prior, &y, &enc, sampler_seed)?.save(&out)?;
            Ok(format!("wrote {}", out.display()))
        }
        ReconInput::Image(path, r) => {
            if !path.exists() {
                return Err(CliError::Missing(format!("{} not found", path.display())));
            }
            let x05 = load_real(&path)?;
            let (rows, cols) = x05.shape();
            let sense = make_sense(rows, cols, run.config.mri.coils, run.config.mri.sense_seed)?;
            let mask = if r == 1.0 {
                SamplingMask::full(rows, cols)
            } else {
                make_mask(rows, cols, r, run.config.mri.acs, run.config.mri.mask_seed)?
            };
            let mut rng = SeededRng::new(run.config.mri.noise_seed).fork(r.to_bits());
            let y = simulate_acquisition(&x05, &sense, &mask, run.config.mri.gamma, &mut rng)?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let name = format!("{stem}_{}", accel_label(r));
            save_kspace(
                run.path(&format!("acquisitions/input/{name}")),
                &y,
                &sense,
                &acquisition_meta(run, r),
            )?;
            let enc = Encoding::new(sense, mask)?;
            let out = run.path(&format!("recon/{method}/input/{name}"));
            reconstruct_one(run, &prior, &y, &enc, sampler_seed)?.save(&out)?;
            Ok(format!("wrote {}", out.display()))
        }
    }
}

pub fn sample_prior_stage(run: &Run, count: usize) -> Result<String, CliError> {
    let manifest = run.require("student/model/manifest.json", "train-student")?;
    let (model, _) = StudentModel::load(manifest.parent().unwrap_or(&manifest))?;
    let shape = (model.size[0], model.size[1]);
    for i in 0..count {
        let cfg = SamplerConfig {
            seed: SeededRng::new(run.config.recon.sampler.seed)
                .fork(0x5a)
                .fork(i as u64)
                .next_u64(),
            ..run.config.recon.sampler.clone()
        };
        let (x, _) = prior_sample(&model, shape, &model.schedule, &cfg)?;
        let joint = JointSample::from_tensor(&x)?;
        let dir = run.path(&format!("samples/{i:04}"));
        fs::create_dir_all(&dir)?;
        for (name, img) in [("x05", &joint.x05), ("x15", &joint.x15)] {
            save_real(dir.join(format!("{name}.npy")), img)?;
            write_pgm(dir.join(format!("{name}.pgm")), img, 0.0, 1.0)?;
        }
    }
    Ok(format!(
        "wrote {count} prior samples to {}",
        run.path("samples").display()
    ))
}

pub fn verify_theorem_stage(run: &Run) -> Result<String, CliError> {
    let report = verify_theorem(&run.config.verify)?;
    let summary = report.summary();
    write_atomic(&run.path("theorem/report.txt"), &summary)?;
    write_atomic(
        &run.path("theorem/report.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    if report.all_passed() {
        Ok(summary)
    } else {
        Err(CliError::Verification(summary))
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut out: Vec<(String, PathBuf)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
        .filter(|(_, p)| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// Collects every completed test-set reconstruction under `recon/`.
pub fn collect_runs(run: &Run, test_x15: &[RealArray2D]) -> Result<Vec<MethodRun>, CliError> {
    let mut runs = Vec::new();
    for method in METHODS {
        let root = run.path(&format!("recon/{method}"));
        if !root.is_dir() {
            continue;
        }
        for (dataset, dir) in sorted_entries(&root)? {
            if !dataset.starts_with('r') || dataset == "input" {
                continue;
            }
            let mut references = Vec::new();
            let mut reconstructions = Vec::new();
            for (name, img_dir) in sorted_entries(&dir)? {
                let Ok(i) = name.parse::<usize>() else {
                    continue;
                };
                if !img_dir.join("recon.json").exists() {
                    continue;
                }
                let reference = test_x15.get(i).ok_or_else(|| {
                    CliError::Config(format!("{} has no matching test image", img_dir.display()))
                })?;
                references.push(reference.clone());
                reconstructions.push(load_real(img_dir.join("x15.npy"))?);
            }
            if !references.is_empty() {
                runs.push(MethodRun {
                    method: method.to_string(),
                    dataset: dataset.clone(),
                    references,
                    reconstructions,
                });
            }
        }
    }
    Ok(runs)
}

pub fn eval_stage(run: &Run) -> Result<String, CliError> {
    let data = load_dataset(run)?;
    let runs = collect_runs(run, &data.test_x15)?;
    if runs.is_empty() {
        return Err(CliError::Missing(format!(
            "no reconstructions under {}; run `reconstruct` first",
            run.path("recon").display()
        )));
    }
    let report = assemble_report(&runs)?;
    report.save(run.path("report"))?;
    Ok(report.to_csv())
}

/// Whether `a` beats `b` on both metrics, and the PSNR margin in dB.
fn margin(report: &Report, dataset: &str, a: &str, b: &str) -> Option<(bool, f64)> {
    let (ra, rb) = (report.row(a, dataset)?, report.row(b, dataset)?);
    let gap = ra.psnr_mean - rb.psnr_mean;
    Some((ra.nmse_mean < rb.nmse_mean && gap > 0.0, gap))
}

pub fn report_stage(run: &Run) -> Result<String, CliError> {
    let path = run.require("report/report.json", "eval")?;
    let report: Report = serde_json::from_str(&fs::read_to_string(path)?)?;
    let mut md = String::from("# Run report\n\n");
    md.push_str(&format!("Seed {}.\n\n", run.config.seed));
    md.push_str(
        "## Reconstruction\n\n| method | dataset | n | NMSE | PSNR (dB) |\n|---|---|---|---|---|\n",
    );
    for r in &report.rows {
        let mark = |best: bool| if best { " *" } else { "" };
        md.push_str(&format!(
            "| {} | {} | {} | {:.4} ± {:.4}{} | {:.2} ± {:.2}{} |\n",
            r.method,
            r.dataset,
            r.n,
            r.nmse_mean,
            r.nmse_std,
            mark(r.best_nmse),
            r.psnr_mean,
            r.psnr_std,
            mark(r.best_psnr)
        ));
    }
    let mut datasets: Vec<&str> = report.rows.iter().map(|r| r.dataset.as_str()).collect();
    datasets.dedup();
    md.push('\n');
    for ds in datasets {
        if let (Some((ok1, g1)), Some((ok2, g2))) = (
            margin(&report, ds, "meta", "score-mri-baseline"),
            margin(&report, ds, "score-mri-baseline", "zero-filled"),
        ) {
            md.push_str(&format!(
                "{ds}: meta vs baseline {g1:+.2} dB ({}), baseline vs zero-filled {g2:+.2} dB ({})\n",
                if ok1 { "better" } else { "not better" },
                if ok2 { "better" } else { "not better" }
            ));
        }
    }
    if let Ok(text) = fs::read_to_string(run.path("teacher/metrics.json")) {
        let m: TeacherMetrics = serde_json::from_str(&text)?;
        md.push_str(&format!(
            "\n## Teacher\n\nHeld-out NMSE {:.5} vs identity {:.5} (ratio {:.3}). Dual gap {:.5} vs identity {:.5}.\n",
            m.nmse_teacher, m.nmse_identity, m.nmse_ratio, m.dual_gap_teacher, m.dual_gap_identity
        ));
    }
    if let Ok(text) = fs::read_to_string(run.path("theorem/report.txt")) {
        md.push_str(&format!("\n## Transport checks\n\n{}", text));
    }
    write_atomic(&run.path("report/report.md"), &md)?;
    Ok(md)
}
