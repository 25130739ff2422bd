use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use kaml_core::datagen::{
    coverage_stats, generate as generate_data, kuairand_adapt, read_dataset, read_raw_log, synthesize_raw_log,
    write_dataset, write_raw_log, write_tasks, AdTaskProfile, CoverageReport, Dataset,
};
use kaml_core::masking::{MaskMatrix, MaskStrategy};
use kaml_core::metrics::write_comparison_csv;
use kaml_core::model::write_snapshot;
use kaml_core::trainer::{run_ablation, train as train_model, Variant};
use kaml_core::{Error, Result};
use log::info;

use crate::config::ExperimentConfig;
use crate::Common;

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn finish(mut w: BufWriter<File>) -> Result<()> {
    w.flush()?;
    Ok(())
}

fn read_split(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

/// Files named in the config, or a freshly generated dataset.
fn datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match (&cfg.train_path, &cfg.test_path) {
        (Some(tr), Some(te)) => Ok((read_split(tr)?, read_split(te)?)),
        _ => {
            info!("generating data with seed {}", cfg.data_seed);
            let g = generate_data(&cfg.generator, cfg.data_seed)?;
            Ok((g.train, g.test))
        }
    }
}

fn write_split(dir: &Path, train: &Dataset, test: &Dataset, tasks: &[AdTaskProfile]) -> Result<()> {
    let mut w = create(dir, "train.tsv")?;
    write_dataset(&mut w, train, true)?;
    finish(w)?;
    let mut w = create(dir, "test.tsv")?;
    write_dataset(&mut w, test, true)?;
    finish(w)?;
    let mut w = create(dir, "tasks.tsv")?;
    write_tasks(&mut w, tasks, train.n_actions)?;
    finish(w)
}

/// Share of training samples each task may learn from, under each strategy.
pub fn write_coverage<W: Write>(out: W, n_actions: usize, rows: &[(&str, CoverageReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["strategy".to_string()];
    header.extend((1..=n_actions).map(|j| format!("action_{j}")));
    header.extend(["other".to_string(), "untrained".to_string()]);
    w.write_record(&header)?;
    for (name, r) in rows {
        let mut rec = vec![name.to_string()];
        rec.extend(r.per_task.iter().map(|p| format!("{p:.6}")));
        rec.push(format!("{:.6}", r.other_target));
        rec.push(format!("{:.6}", r.untrained));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn generate(common: &Common) -> Result<()> {
    let mut cfg = load(common)?;
    if let Some(s) = common.seed {
        cfg.data_seed = s;
    }
    let g = generate_data(&cfg.generator, cfg.data_seed)?;
    write_split(&cfg.out, &g.train, &g.test, &g.tasks)?;
    let adm = match &cfg.train.mask {
        MaskStrategy::Base => MaskStrategy::default_adm(g.train.n_actions),
        adm => adm.clone(),
    };
    let rows = [
        ("base", coverage_stats(&g.train, &MaskMatrix::build(&g.train, &MaskStrategy::Base)?)),
        ("adm", coverage_stats(&g.train, &MaskMatrix::build(&g.train, &adm)?)),
    ];
    let w = create(&cfg.out, "coverage.csv")?;
    write_coverage(w, g.train.n_actions, &rows)?;
    info!(
        "wrote {} train and {} test samples to {}",
        g.train.len(),
        g.test.len(),
        cfg.out.display()
    );
    Ok(())
}

pub fn train(common: &Common, variant: Option<&str>, mask: Option<&str>) -> Result<()> {
    let cfg = load(common)?;
    let variant: Variant = match variant {
        Some(v) => v.parse()?,
        None => cfg.train.variant,
    };
    let mut tc = cfg.train.for_variant(variant);
    match mask {
        Some("base") => tc.mask = MaskStrategy::Base,
        Some("adm") => tc.mask = cfg.train.for_variant(Variant::MmoeAdm).mask,
        Some(other) => return Err(Error::Config(format!("unknown mask `{other}`"))),
        None => {}
    }
    let seed = common.seed.unwrap_or(tc.seeds[0]);
    let (train_set, test) = datasets(&cfg)?;
    let run = train_model(&train_set, Some(&test), &tc, seed)?;

    let out = &cfg.out;
    let mut w = create(out, "model.snapshot")?;
    write_snapshot(&mut w, &run.model)?;
    finish(w)?;
    let mut w = create(out, "history.tsv")?;
    run.history.write_tsv(&mut w)?;
    finish(w)?;
    let report = run
        .history
        .final_report()
        .ok_or_else(|| Error::State("training produced no test report".into()))?;
    fs::write(out.join("report.json"), report.to_json()?)?;
    let w = create(out, "report.csv")?;
    write_comparison_csv(w, &[(variant.name().to_string(), report.clone())])?;
    info!(
        "{} seed {seed}: overall AUC {}",
        variant.name(),
        report.overall.auc.map_or("NA".into(), |a| format!("{a:.4}"))
    );
    Ok(())
}

pub fn ablate(common: &Common, variants: Option<&str>) -> Result<()> {
    let mut cfg = load(common)?;
    if let Some(list) = variants {
        cfg.variants = list.split(',').map(|v| v.trim().parse()).collect::<Result<_>>()?;
    }
    if let Some(s) = common.seed {
        cfg.train.seeds = vec![s];
    }
    let (train_set, test) = datasets(&cfg)?;
    let table = run_ablation(&train_set, &test, &cfg.variants, &cfg.train)?;
    let w = create(&cfg.out, "ablation.csv")?;
    table.write_csv(w)?;
    fs::write(cfg.out.join("ablation.json"), table.to_json()?)?;
    for row in &table.rows {
        info!(
            "{:<14} overall AUC {}",
            row.variant,
            row.overall_auc.mean.map_or("NA".into(), |a| format!("{a:.4}"))
        );
    }
    Ok(())
}

pub fn adapt_public(common: &Common, raw: Option<PathBuf>, protocol: Option<&str>) -> Result<()> {
    let cfg = load(common)?;
    let p = &cfg.public;
    let raw_path = raw
        .or_else(|| p.raw.clone())
        .ok_or_else(|| Error::Config("no raw log given (use --raw or public.raw)".into()))?;
    if !raw_path.is_file() {
        return Err(Error::Config(format!("raw log {} does not exist", raw_path.display())));
    }
    let protocol = match protocol {
        Some(s) => s.parse()?,
        None => p.protocol,
    };
    let log = read_raw_log(BufReader::new(File::open(&raw_path)?), p.delimiter)?;
    let data = kuairand_adapt(&log, &p.schema, protocol, &p.adapt, common.seed.unwrap_or(p.seed))?;
    write_split(&cfg.out, &data.train, &data.test, &data.tasks)?;
    info!(
        "{}: {} train and {} test samples",
        protocol.name(),
        data.train.len(),
        data.test.len()
    );
    Ok(())
}

pub fn synth_raw(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let log = synthesize_raw_log(&cfg.public.synth, common.seed.unwrap_or(cfg.public.seed))?;
    let mut w = create(&cfg.out, "raw.csv")?;
    write_raw_log(&mut w, &log, cfg.public.delimiter)?;
    finish(w)
}
