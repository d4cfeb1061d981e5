use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use mvseg_core::hlc::{crop, localize, restore, CropRecord};
use mvseg_core::nifti_io::{self, DT_UINT8};
use mvseg_core::phantom::{generate_dataset, write_dataset, JitterSpec, PhantomParams};
use mvseg_core::xdim_transform::{project_segmentation, ProjectionSpec};
use mvseg_core::{Image, LabelMap, Volume};
use mvseg_pipeline::evaluate::infer_all;
use mvseg_pipeline::rundir::StageRecord;
use mvseg_pipeline::{
    evaluate, run_ablation, run_training, train_ablation, ArtifactCache, Case, PipelineConfig, RunDir, RunManifest,
    StageArtifacts,
};
use serde::Serialize;
use serde_json::json;

use crate::args::{
    CaseSelection, Cli, Command, CropArgs, EvaluateArgs, InferArgs, PhantomGenArgs, ProjectArgs, RestoreArgs,
    TrainArgs,
};
use crate::data::load_cases;
use crate::error::{io_err, CliError, Result};

pub fn run(cli: Cli) -> Result<()> {
    let g = Globals {
        jobs: cli.jobs,
        seed: cli.seed,
        config: cli.config,
    };
    match cli.command {
        Command::PhantomGen(a) => phantom_gen(&g, a),
        Command::Project(a) => project(a),
        Command::Crop(a) => crop_cmd(a),
        Command::Restore(a) => restore_cmd(a),
        Command::Train(a) => train(&g, a),
        Command::Infer(a) => infer(&g, a),
        Command::Evaluate(a) => evaluate_cmd(&g, a),
    }
}

struct Globals {
    jobs: Option<usize>,
    seed: Option<u64>,
    config: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn print_resolved(settings: &impl Serialize) -> Result<()> {
    eprintln!("resolved config:\n{}", serde_json::to_string_pretty(settings)?);
    Ok(())
}

/// The pipeline config from `--config` (or `fallback`), with `--jobs`
/// applied. Any problem with the file is a usage error.
fn resolve_config(g: &Globals, fallback: PipelineConfig) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| usage(format!("config {}: {e}", p.display())))?,
        None => fallback,
    };
    if let Some(j) = g.jobs {
        cfg.jobs = j;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn phantom_gen(g: &Globals, a: PhantomGenArgs) -> Result<()> {
    let params = match &a.params {
        Some(p) => read_json::<PhantomParams>(p)?,
        None => PhantomParams::default(),
    };
    let jitter = if a.no_jitter { JitterSpec::none() } else { JitterSpec::default() };
    let seed = g.seed.unwrap_or(0);
    print_resolved(&json!({ "n": a.n, "seed": seed, "out": a.out, "jitter": jitter, "params": params }))?;
    let cases = generate_dataset(a.n as usize, &params, &jitter, seed)?;
    write_dataset(&cases, &jitter, seed, &a.out)?;
    info!("wrote {} cases to {}", cases.len(), a.out.display());
    println!("{}", a.out.join(mvseg_core::phantom::MANIFEST).display());
    Ok(())
}

fn project(a: ProjectArgs) -> Result<()> {
    print_resolved(&json!({ "seg": a.seg, "src": a.src, "dst": a.dst, "out": a.out }))?;
    let seg = nifti_io::read_labels(&a.seg)?;
    let src = nifti_io::read_header(&a.src)?;
    let src_dims = src.spatial_dims().map_err(mvseg_core::Error::from)?;
    if seg.dims() != src_dims {
        return Err(usage(format!(
            "segmentation {} has dims {:?} but source image {} has dims {:?}",
            a.seg.display(),
            seg.dims(),
            a.src.display(),
            src_dims
        )));
    }
    let seg = seg.with_geometry(src.geometry()?);
    let dst = nifti_io::read_header(&a.dst)?;
    let dst_geometry = dst.geometry()?;
    let out = project_segmentation(&ProjectionSpec {
        source: &seg,
        target_geometry: &dst_geometry,
        target_dims: dst.spatial_dims().map_err(mvseg_core::Error::from)?,
    })?;
    nifti_io::write(&out, &a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

/// A NIfTI file held as labels when stored as u8, else as intensities.
enum AnyImage {
    Labels(LabelMap),
    Intensity(Volume),
}

impl AnyImage {
    fn read(path: &Path) -> Result<Self> {
        Ok(if nifti_io::read_header(path)?.datatype == DT_UINT8 {
            AnyImage::Labels(nifti_io::read_labels(path)?)
        } else {
            AnyImage::Intensity(nifti_io::read_volume(path)?)
        })
    }

    fn dims(&self) -> [usize; 3] {
        match self {
            AnyImage::Labels(v) => v.dims(),
            AnyImage::Intensity(v) => v.dims(),
        }
    }
}

fn default_record_path(out: &Path) -> PathBuf {
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name.trim_end_matches(".gz").trim_end_matches(".nii");
    out.with_file_name(format!("{stem}.crop.json"))
}

fn crop_cmd(a: CropArgs) -> Result<()> {
    let record_path = a.record.clone().unwrap_or_else(|| default_record_path(&a.out));
    print_resolved(&json!({
        "image": a.image, "prior": a.prior, "margin": a.margin, "out": a.out, "record": record_path
    }))?;
    let image = AnyImage::read(&a.image)?;
    let priors = a.prior.iter().map(nifti_io::read_labels).collect::<Result<Vec<_>, _>>()?;
    for (p, path) in priors.iter().zip(&a.prior) {
        if p.dims() != image.dims() {
            return Err(usage(format!(
                "prior {} has dims {:?} but image has dims {:?}",
                path.display(),
                p.dims(),
                image.dims()
            )));
        }
    }
    let refs: Vec<&LabelMap> = priors.iter().collect();
    let (bbox, fell_back) = localize(&refs, a.margin)?;
    if fell_back {
        warn!("crop covers the whole image");
    }
    let rec = match image {
        AnyImage::Labels(v) => write_cropped(&v, bbox, &a.out)?,
        AnyImage::Intensity(v) => write_cropped(&v, bbox, &a.out)?,
    };
    fs::write(&record_path, rec.to_json()?).map_err(io_err(&record_path))?;
    println!("{}", a.out.display());
    println!("{}", record_path.display());
    Ok(())
}

fn write_cropped<T: nifti_io::NiftiVoxel>(v: &Image<T>, bbox: mvseg_core::hlc::BBox, out: &Path) -> Result<CropRecord> {
    let (c, rec) = crop(v, bbox)?;
    nifti_io::write(&c, out)?;
    Ok(rec)
}

fn restore_cmd(a: RestoreArgs) -> Result<()> {
    print_resolved(&json!({ "image": a.image, "record": a.record, "out": a.out }))?;
    let text = fs::read_to_string(&a.record).map_err(io_err(&a.record))?;
    let rec = CropRecord::from_json(&text)?;
    match AnyImage::read(&a.image)? {
        AnyImage::Labels(v) => nifti_io::write(&restore(&v, &rec)?, &a.out)?,
        AnyImage::Intensity(v) => nifti_io::write(&restore(&v, &rec)?, &a.out)?,
    }
    println!("{}", a.out.display());
    Ok(())
}

fn train(g: &Globals, a: TrainArgs) -> Result<()> {
    let mut cfg = resolve_config(g, PipelineConfig::default())?;
    for (k, s) in [&mut cfg.trigger, &mut cfg.la, &mut cfg.sa].into_iter().enumerate() {
        let t = &mut s.train;
        if let Some(v) = a.epochs {
            t.epochs = v;
        }
        if let Some(v) = a.iters_per_epoch {
            t.iters_per_epoch = v;
        }
        if let Some(v) = a.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = a.lr {
            t.lr0 = v;
        }
        if let Some(seed) = g.seed {
            t.seed = seed.wrapping_add(k as u64);
        }
    }
    if a.no_augment {
        cfg = cfg.without_augmentation();
    }
    cfg.teacher_forcing |= a.teacher_forcing;
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let cases = load_cases(&a.data)?;
    let n_train = a.train_cases.unwrap_or(cases.len() - cases.len() / 5);
    if n_train == 0 || n_train > cases.len() {
        return Err(usage(format!("--train-cases must be in 1..={}", cases.len())));
    }
    let train_set = &cases[..n_train];
    let train_ids: Vec<String> = train_set.iter().map(|c| c.id.clone()).collect();
    print_resolved(&json!({
        "data": a.data, "out": a.out, "ablation": a.ablation, "train_cases": train_ids, "pipeline": cfg
    }))?;

    let run = RunDir::create(&a.out)?;
    let cache = ArtifactCache::on_disk(&run.cache_dir())?;
    let stages: Vec<StageRecord> = if a.ablation {
        let models = train_ablation(train_set, &cfg, &cache)?;
        save_all(&run, models.artifacts())?
    } else {
        let trained = run_training(train_set, &cfg, &cache)?;
        save_all(&run, trained.artifacts().to_vec())?
    };
    let dataset = fs::canonicalize(&a.data).map_err(io_err(&a.data))?;
    run.write_manifest(&RunManifest {
        config: cfg,
        dataset: Some(dataset.display().to_string()),
        train_cases: train_ids,
        stages,
    })?;
    println!("{}", run.root().display());
    Ok(())
}

fn save_all(run: &RunDir, artifacts: Vec<&StageArtifacts>) -> Result<Vec<StageRecord>> {
    artifacts
        .into_iter()
        .map(|a| {
            let rec = run.save_stage(a)?;
            info!("saved {} ({})", rec.weights, &rec.sha256[..12]);
            Ok(rec)
        })
        .collect()
}

/// Opens a run, resolves its config and selects the cases to process.
fn open_run(g: &Globals, run: &Path, sel: &CaseSelection) -> Result<(RunDir, RunManifest, PipelineConfig, Vec<Case>)> {
    let dir = RunDir::open(run)?;
    let manifest = dir.read_manifest()?;
    let cfg = resolve_config(g, manifest.config.clone())?;
    let data = match (&sel.data, &manifest.dataset) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => return Err(usage("run records no dataset; pass --data")),
    };
    let all = load_cases(&data)?;
    let cases: Vec<Case> = if sel.all {
        all
    } else if !sel.cases.is_empty() {
        let mut picked = Vec::new();
        for id in &sel.cases {
            let c = all.iter().find(|c| &c.id == id).ok_or_else(|| usage(format!("no case {id:?} in {}", data.display())))?;
            picked.push(c.clone());
        }
        picked
    } else {
        all.into_iter().filter(|c| !manifest.train_cases.contains(&c.id)).collect()
    };
    if cases.is_empty() {
        return Err(usage("no held-out cases; pass --all or --cases"));
    }
    let ids: Vec<&str> = cases.iter().map(|c| c.id.as_str()).collect();
    print_resolved(&json!({ "run": run, "data": data, "cases": ids, "pipeline": cfg }))?;
    Ok((dir, manifest, cfg, cases))
}

fn infer(g: &Globals, a: InferArgs) -> Result<()> {
    let (run, manifest, cfg, cases) = open_run(g, &a.run, &a.select)?;
    let stages = run.load_pipeline(&manifest, &cfg)?;
    let outputs = infer_all(&cases, |_| Ok(stages.clone()), &cfg)?;
    for (c, o) in cases.iter().zip(&outputs) {
        if o.state.la_fell_back || o.state.sa_fell_back {
            warn!("{}: empty prior, HLC used the whole image", c.id);
        }
        let (la, sa) = run.write_predictions(&c.id, o)?;
        println!("{}\t{}\t{}", c.id, la.display(), sa.display());
    }
    Ok(())
}

fn evaluate_cmd(g: &Globals, a: EvaluateArgs) -> Result<()> {
    let (run, manifest, cfg, cases) = open_run(g, &a.run, &a.select)?;
    let (json, table, path) = if a.ablation {
        let nets = run.load_ablation(&manifest, &cfg)?;
        let report = run_ablation(&cases, &nets, &cfg)?;
        (report.to_json()?, report.to_table(), run.ablation_path())
    } else {
        let stages = run.load_pipeline(&manifest, &cfg)?;
        let ev = evaluate(&cases, |_| Ok(stages.clone()), &cfg)?;
        (ev.to_json()?, ev.to_table(), run.metrics_path())
    };
    run.write_text(&path, &json)?;
    eprintln!("{table}");
    println!("{json}");
    Ok(())
}
