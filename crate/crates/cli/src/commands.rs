use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use mirepnet::data::{synth_dataset, DatasetManifest, SynthConfig};
use mirepnet::nn::{load_checkpoint, save_checkpoint};
use mirepnet::pipeline::{
    harmonize_dataset, harmonize_downstream, load_harmonized, save_harmonized, unified_classes, HarmonizedDataset,
};
use mirepnet::spatial::TemplateSpec;
use mirepnet::train::{
    ablation_suite, evaluate, finetune_downstream, mask_sweep, prepare_downstream, pretrain as pretrain_model,
    Ablation, Corpus, PretrainReport, RunReport, SPLIT_REPORT,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{self, ConfigError, ResolvedConfig, TrainArgs};
use crate::output::{write_json, write_text, Timing};
use crate::{AblateArgs, EvalArgs, FinetuneArgs, PreprocessArgs, PretrainArgs, SweepArgs, SynthArgs};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(ConfigError(anyhow!(msg.into())))
}

pub fn synth(args: SynthArgs) -> anyhow::Result<()> {
    if !(args.fs > 0.0 && args.fs.is_finite()) || !(args.duration > 0.0 && args.duration.is_finite()) {
        return Err(usage("--fs and --duration must be positive"));
    }
    let mut cfg = SynthConfig {
        name: args.name,
        n_subjects: args.subjects as usize,
        trials_per_class: args.trials_per_class as usize,
        fs: args.fs,
        duration: args.duration,
        seed: args.seed,
        subject_prefix: args.prefix,
        ..SynthConfig::default()
    };
    if let Some(c) = args.channels {
        cfg.channels = c;
    }
    let manifest = synth_dataset(&cfg, &args.out)?;
    println!(
        "wrote {} subjects, {} trials to {}",
        manifest.subjects.len(),
        manifest.n_trials(),
        args.out.display()
    );
    Ok(())
}

pub fn preprocess(args: PreprocessArgs) -> anyhow::Result<()> {
    let (mut cfg, _template) = config::harmonize_from(args.config.as_deref())?;
    if args.no_screening {
        cfg.screening.enabled = false;
    }
    if let Some(t) = args.threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(usage(format!("--threshold {t} not in [0, 1]")));
        }
        cfg.screening.threshold = t;
    }
    if let Some(f) = args.folds {
        if f < 2 {
            return Err(usage("--folds must be >= 2"));
        }
        cfg.screening.folds = f;
    }
    cfg.jobs = args.jobs;
    let manifest = DatasetManifest::load(&args.input)
        .with_context(|| format!("loading dataset {}", args.input.display()))?;
    let classes = match args.classes {
        Some(c) => c,
        None => unified_classes([&manifest.label_vocab])?,
    };
    let template = TemplateSpec::default();
    let ds = if args.downstream {
        harmonize_downstream(&manifest, &cfg, &template, &classes)?
    } else {
        harmonize_dataset(&manifest, &cfg, &template, &classes)?
    };
    save_harmonized(&ds, &args.out)?;
    if let Some(s) = &ds.screening {
        for id in &s.excluded {
            println!("excluded {id} ({:.3})", s.accuracy[id]);
        }
    }
    println!("retained {}", ds.retained().join(","));
    Ok(())
}

fn load_all(dirs: &[std::path::PathBuf], what: &str) -> anyhow::Result<Vec<HarmonizedDataset>> {
    if dirs.is_empty() {
        return Err(usage(format!("no {what} datasets given")));
    }
    dirs.iter()
        .map(|d| load_harmonized(d).with_context(|| format!("loading {what} dataset {}", d.display())))
        .collect()
}

fn load_downstream(cfg: &ResolvedConfig) -> anyhow::Result<Vec<HarmonizedDataset>> {
    let ds = load_all(&cfg.downstream_data, "downstream")?;
    if let Some(d) = ds.iter().find(|d| d.subjects.iter().any(|s| !s.references.is_empty())) {
        bail!(
            "downstream dataset {} is already aligned; preprocess it with --downstream",
            d.name
        );
    }
    Ok(ds)
}

#[derive(Serialize)]
struct Echo<'a, T: Serialize> {
    config: &'a ResolvedConfig,
    report: &'a T,
}

#[derive(Serialize)]
struct PretrainOutput {
    curves: Vec<PretrainReport>,
    checkpoints: BTreeMap<String, String>,
}

fn resolve(args: &TrainArgs) -> anyhow::Result<ResolvedConfig> {
    Ok(config::resolve(args)?)
}

pub fn pretrain(args: PretrainArgs) -> anyhow::Result<()> {
    let cfg = resolve(&args.train)?;
    let mut timing = Timing::start("pretrain");
    let data = load_all(&cfg.pretrain_data, "pretraining")?;
    timing.mark("load");
    let mut out = PretrainOutput {
        curves: Vec::new(),
        checkpoints: BTreeMap::new(),
    };
    let mut losses = String::from("variant,alpha,seed,epoch,rec,cls,total\n");
    for &seed in &cfg.train.seeds {
        let (model, curve) = pretrain_model(&data, &cfg.train, seed)?;
        let name = format!("pretrained_{}_s{seed}.mirm", cfg.train.ablation);
        let path = args.out.join(&name);
        std::fs::create_dir_all(&args.out)?;
        save_checkpoint(&model, &path)?;
        out.checkpoints.insert(name, hex(&Sha256::digest(std::fs::read(&path)?)));
        for e in &curve.epochs {
            let rec = e.rec.map(|r| r.to_string()).unwrap_or_default();
            writeln!(losses, "{},{},{seed},{},{rec},{},{}", curve.ablation, curve.alpha, e.epoch, e.cls, e.total)?;
        }
        out.curves.push(curve);
        timing.mark(format!("seed {seed}"));
    }
    write_json(&args.out.join("pretrain_report.json"), &Echo { config: &cfg, report: &out })?;
    write_text(&args.out.join("pretrain_losses.csv"), &losses)?;
    timing.write(&args.out)?;
    for (name, hash) in &out.checkpoints {
        println!("{name} {hash}");
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Mean and sample std over seeds of the subject-averaged accuracy at the
/// report epoch, one row per (variant, alpha).
fn table(report: &RunReport) -> String {
    let mut groups: BTreeMap<(Ablation, u64), BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    let mut order: Vec<(Ablation, u64)> = Vec::new();
    for r in report.rows.iter().filter(|r| r.split == SPLIT_REPORT) {
        let key = (r.variant, r.alpha.to_bits());
        if !order.contains(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().entry(r.seed).or_default().push(r.accuracy);
    }
    let mut out = String::from("variant,label,alpha,seeds,mean,std\n");
    for key in order {
        let per_seed: Vec<f64> = groups[&key].values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().sum::<f64>() / n;
        let std = if per_seed.len() > 1 {
            (per_seed.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{mean:.4},{std:.4}",
            key.0,
            key.0.table_label(),
            f64::from_bits(key.1),
            per_seed.len()
        );
    }
    out
}

fn write_run(dir: &Path, cfg: &ResolvedConfig, report: &RunReport, table_name: Option<&str>) -> anyhow::Result<()> {
    write_json(&dir.join("report.json"), &Echo { config: cfg, report })?;
    write_text(&dir.join("report.csv"), &report.to_csv()?)?;
    let t = table(report);
    if let Some(name) = table_name {
        write_text(&dir.join(name), &t)?;
    }
    print!("{t}");
    Ok(())
}

pub fn finetune(args: FinetuneArgs) -> anyhow::Result<()> {
    let cfg = resolve(&args.train)?;
    let mut timing = Timing::start("finetune");
    let model = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let downstream = load_downstream(&cfg)?;
    timing.mark("load");
    let report = finetune_downstream(&model, &downstream, &cfg.train, Some(&args.out))?;
    timing.mark("finetune");
    write_run(&args.out, &cfg, &report, None)?;
    timing.write(&args.out)?;
    Ok(())
}

pub fn eval(args: EvalArgs) -> anyhow::Result<()> {
    if !(args.finetune_fraction > 0.0 && args.finetune_fraction < 1.0) {
        return Err(usage(format!("--finetune-fraction {} not in (0, 1)", args.finetune_fraction)));
    }
    let model = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let ds = load_harmonized(&args.downstream)
        .with_context(|| format!("loading downstream dataset {}", args.downstream.display()))?;
    if model.classes() != ds.classes.as_slice() {
        bail!(
            "checkpoint classes {:?} differ from dataset classes {:?}",
            model.classes(),
            ds.classes
        );
    }
    let subjects: Vec<_> = match &args.subject {
        Some(id) => {
            let s = ds
                .subjects
                .iter()
                .find(|s| &s.subject_id == id)
                .ok_or_else(|| anyhow!("no subject {id:?} in {}", ds.name))?;
            vec![s]
        }
        None => ds.subjects.iter().collect(),
    };
    println!("dataset,subject,n_test,accuracy");
    for s in subjects {
        let split = prepare_downstream(s, args.finetune_fraction)?;
        let acc = evaluate(&model, &split.test)?;
        println!("{},{},{},{acc}", ds.name, s.subject_id, split.test.len());
    }
    Ok(())
}

fn corpus(cfg: &ResolvedConfig) -> anyhow::Result<Corpus> {
    Ok(Corpus {
        pretrain: load_all(&cfg.pretrain_data, "pretraining")?,
        downstream: load_downstream(cfg)?,
    })
}

pub fn sweep(args: SweepArgs) -> anyhow::Result<()> {
    let cfg = resolve(&args.train)?;
    if let Some(a) = args.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(usage(format!("mask ratio {a} not in (0, 1)")));
    }
    let mut timing = Timing::start("sweep");
    let corpus = corpus(&cfg)?;
    timing.mark("load");
    let report = mask_sweep(&corpus, &cfg.train, &args.alphas, Some(&args.out.join("checkpoints")))?;
    timing.mark("grid");
    write_run(&args.out, &cfg, &report, Some("sweep.csv"))?;
    timing.write(&args.out)?;
    Ok(())
}

pub fn ablate(args: AblateArgs) -> anyhow::Result<()> {
    let cfg = resolve(&args.train)?;
    let mut timing = Timing::start("ablate");
    let corpus = corpus(&cfg)?;
    timing.mark("load");
    let report = ablation_suite(&corpus, &cfg.train, Some(&args.out.join("checkpoints")))?;
    timing.mark("grid");
    write_run(&args.out, &cfg, &report, Some("ablation.csv"))?;
    timing.write(&args.out)?;
    Ok(())
}
