use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use molfuse::config::RunConfig;
use molfuse::dataset::{
    build_records, check_embeddings, content_hash, prepare, read_dataset, write_dataset, write_descriptions,
    DatasetEntry, Prepared, TextInput,
};
use molfuse::params::write_checkpoint;
use molfuse::pubchem::{
    build_multimodal_manifest, DiskCache, Exclusion, ExclusionReason, MultimodalManifest, PubChemClient,
    RetryPolicy, UreqTransport,
};
use molfuse::qm9::{load_exclusions, read_dir, write_xyz, DirScan, Molecule, TargetId};
use molfuse::synth::{offline_client, synth_corpus, SynthConfig};
use molfuse::text::{load_embeddings, TextSource};
use molfuse::training::{
    aggregate, parse_csv, render_table, run_ablation, verify, write_csv, AblationConfig, AblationReport, CsvRow,
    GateRow,
};

use crate::failure::{Classify, Failure};
use crate::plots;
use crate::run_manifest::RunManifest;
use crate::GlobalArgs;

/// Config file (or profile defaults) with command-line overrides applied.
pub fn resolve_config(g: &GlobalArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path, g.profile).user("invalid configuration")?,
        None => RunConfig::for_profile(g.profile.unwrap_or_default()),
    };
    if let Some(dir) = &g.cache_dir {
        cfg.data.cache_dir = dir.clone();
    }
    if let Some(rate) = g.rate {
        cfg.rate = rate;
    }
    if let Some(seed) = g.seed {
        cfg.train.seed = seed;
        let n = cfg.ablation.seeds.len() as u64;
        cfg.ablation.seeds = (seed..seed + n).collect();
    }
    if let Some(path) = &g.embeddings {
        cfg.embeddings = Some(path.clone());
        cfg.train.embedding_source = TextSource::File;
    }
    cfg.validate().user("invalid configuration")?;
    Ok(cfg)
}

fn create_out(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).env(format!("cannot create output directory {}", out.display()))
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), Failure> {
    let file = File::create(path).env(format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    write(&mut w)
        .and_then(|()| w.flush())
        .env(format!("cannot write {}", path.display()))
}

fn scan(cfg: &RunConfig, dir: &Path) -> Result<DirScan, Failure> {
    let exclusions = match &cfg.data.exclusions {
        Some(p) => Some(load_exclusions(
            &fs::read_to_string(p).user(format!("cannot read exclusion list {}", p.display()))?,
        )),
        None => None,
    };
    let scan = read_dir(dir, exclusions.as_ref()).user(format!("cannot read XYZ directory {}", dir.display()))?;
    log::info!(
        "{}: {} parsed, {} unparsable, {} on the exclusion list",
        dir.display(),
        scan.molecules.len(),
        scan.failures.len(),
        scan.excluded.len()
    );
    Ok(scan)
}

/// Overrides the PUG REST base URL, for mirrors and tests.
pub const BASE_URL_ENV: &str = "MOLFUSE_PUBCHEM_URL";

fn live_client(cfg: &RunConfig) -> Result<PubChemClient, Failure> {
    let cache = DiskCache::open(&cfg.data.cache_dir)
        .env(format!("cannot open cache directory {}", cfg.data.cache_dir.display()))?;
    let mut builder = PubChemClient::builder(Box::new(UreqTransport::from_env()), cache)
        .rate(cfg.rate)
        .retry(RetryPolicy {
            max_attempts: cfg.max_attempts,
            ..RetryPolicy::default()
        });
    if let Ok(url) = std::env::var(BASE_URL_ENV) {
        builder = builder.base_url(url);
    }
    Ok(builder.build())
}

/// Runs the lookup for every parsed molecule; unparsable files join the
/// exclusion list.
fn collect(cfg: &RunConfig, scan: &DirScan, client: &PubChemClient) -> MultimodalManifest {
    let mut manifest = build_multimodal_manifest(&scan.molecules, client);
    for (id, e) in &scan.failures {
        manifest.excluded.push(Exclusion {
            id: id.clone(),
            reason: ExclusionReason::ParseError,
            detail: e.to_string(),
        });
    }
    println!("{} included, {} excluded", manifest.included.len(), manifest.excluded.len());
    for (reason, n) in manifest.histogram() {
        println!("  {reason}: {n}");
    }
    println!("network calls: {}", client.network_calls());
    log::info!("cache {} holds {} entries", cfg.data.cache_dir.display(), client.cache().len());
    manifest
}

fn transient_failure(cfg: &RunConfig, manifest: &MultimodalManifest) -> Failure {
    let n = manifest
        .excluded
        .iter()
        .filter(|e| e.reason == ExclusionReason::NetworkExhausted)
        .count();
    Failure::env(format!(
        "{n} PubChem lookups failed after retries (network or rate limit). Completed lookups are cached in {}; \
         rerun the same command later to resume, optionally with a lower --rate",
        cfg.data.cache_dir.display()
    ))
}

fn write_exclusions(path: &Path, manifest: &MultimodalManifest) -> Result<(), Failure> {
    write_file(path, |w| {
        for e in &manifest.excluded {
            writeln!(w, "{}", serde_json::to_string(e).map_err(std::io::Error::other)?)?;
        }
        Ok(())
    })
}

pub fn fetch(g: &GlobalArgs, xyz_dir: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = resolve_config(g)?;
    let dir = xyz_dir.unwrap_or_else(|| cfg.data.xyz_dir.clone());
    let scan = scan(&cfg, &dir)?;
    let client = live_client(&cfg)?;
    let manifest = collect(&cfg, &scan, &client);
    create_out(&g.out)?;
    write_exclusions(&g.out.join("exclusions.jsonl"), &manifest)?;
    if manifest.has_transient() {
        return Err(transient_failure(&cfg, &manifest));
    }
    Ok(())
}

pub fn build_dataset(g: &GlobalArgs, xyz_dir: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = resolve_config(g)?;
    let mut run = RunManifest::start("build-dataset", &cfg);
    let dir = xyz_dir.unwrap_or_else(|| cfg.data.xyz_dir.clone());
    let scan = scan(&cfg, &dir)?;
    let client = live_client(&cfg)?;
    let manifest = collect(&cfg, &scan, &client);
    create_out(&g.out)?;
    let exclusions = g.out.join("exclusions.jsonl");
    write_exclusions(&exclusions, &manifest)?;
    if manifest.has_transient() {
        return Err(transient_failure(&cfg, &manifest));
    }

    let records = build_records(&scan.molecules, &manifest);
    let mut bytes = Vec::new();
    write_dataset(&records, &mut bytes).user("cannot serialize dataset")?;
    if let Some(parent) = cfg.data.dataset.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_out(parent)?;
    }
    fs::write(&cfg.data.dataset, &bytes).env(format!("cannot write {}", cfg.data.dataset.display()))?;
    let entries = read_dataset(std::str::from_utf8(&bytes).user("dataset is not UTF-8")?)
        .user("dataset failed to read back")?;
    let descriptions = g.out.join("descriptions.jsonl");
    write_file(&descriptions, |w| write_descriptions(&entries, w))?;
    println!("dataset: {} molecules -> {}", records.len(), cfg.data.dataset.display());

    run.dataset_sha256 = Some(content_hash(&bytes));
    run.cache_snapshot = Some(client.cache().snapshot_id());
    run.finish(&g.out, &[cfg.data.dataset.clone(), descriptions, exclusions])?;
    Ok(())
}

struct Loaded {
    prepared: Prepared,
    dataset_sha256: String,
    embedding_sha256: Option<String>,
}

fn load_entries(cfg: &RunConfig) -> Result<(Vec<DatasetEntry>, String), Failure> {
    let path = &cfg.data.dataset;
    let bytes = fs::read(path).user(format!(
        "cannot read dataset {} (run build-dataset first)",
        path.display()
    ))?;
    let text = std::str::from_utf8(&bytes).user(format!("{} is not UTF-8", path.display()))?;
    let mut entries = read_dataset(text).user(format!("invalid dataset {}", path.display()))?;
    if let Some(n) = cfg.data.max_molecules {
        entries.truncate(n);
    }
    Ok((entries, content_hash(&bytes)))
}

fn load(cfg: &RunConfig) -> Result<Loaded, Failure> {
    let (entries, dataset_sha256) = load_entries(cfg)?;
    let (prepared, embedding_sha256) = match cfg.train.embedding_source {
        TextSource::Featurizer => (
            prepare(&entries, &cfg.model.rbf, TextInput::Featurizer).user("cannot prepare samples")?,
            None,
        ),
        TextSource::File => {
            let path = cfg
                .embeddings
                .as_ref()
                .ok_or_else(|| Failure::user("embedding_source is \"file\" but no embedding file is configured"))?;
            let bytes = fs::read(path).user(format!("cannot read embedding file {}", path.display()))?;
            let set = load_embeddings(path).user(format!("invalid embedding file {}", path.display()))?;
            let check = check_embeddings(&entries, &set);
            if !check.ok() {
                return Err(Failure::user(format!(
                    "embedding file {} does not cover the dataset: {} missing, {} with a stale description \
                     (run embed-check for details)",
                    path.display(),
                    check.missing.len(),
                    check.mismatched.len()
                )));
            }
            (
                prepare(&entries, &cfg.model.rbf, TextInput::File(&set)).user("cannot prepare samples")?,
                Some(content_hash(&bytes)),
            )
        }
    };
    log::info!(
        "{} samples, text source {:?}",
        prepared.samples.len(),
        prepared.source
    );
    Ok(Loaded {
        prepared,
        dataset_sha256,
        embedding_sha256,
    })
}

fn start_run(command: &str, cfg: &RunConfig, loaded: &Loaded) -> RunManifest {
    let mut run = RunManifest::start(command, cfg);
    run.dataset_sha256 = Some(loaded.dataset_sha256.clone());
    run.embedding_file_sha256 = loaded.embedding_sha256.clone();
    run.numeric_scaling = loaded.prepared.scaling.clone();
    if let Ok(cache) = DiskCache::open(&cfg.data.cache_dir) {
        if !cache.is_empty() {
            run.cache_snapshot = Some(cache.snapshot_id());
        }
    }
    run
}

pub fn train(g: &GlobalArgs) -> Result<(), Failure> {
    let cfg = resolve_config(g)?;
    let loaded = load(&cfg)?;
    let run = start_run("train", &cfg, &loaded);
    let samples = &loaded.prepared.samples;
    let outcome = molfuse::training::train(&cfg.train, &cfg.model, samples).user("training failed")?;

    create_out(&g.out)?;
    let ckpt_dir = g.out.join("checkpoints");
    create_out(&ckpt_dir)?;
    let mut artifacts = Vec::new();
    let t = &cfg.train;
    let rows: Vec<CsvRow> = outcome
        .folds
        .iter()
        .map(|f| CsvRow {
            target: t.target,
            modality: t.modality,
            seed: t.seed,
            fold: f.fold,
            mae: f.mae,
        })
        .collect();
    for f in &outcome.folds {
        println!("fold {}: held-out MAE {} ({} training molecules)", f.fold, f.mae, f.n_train);
        let path = ckpt_dir.join(format!(
            "{}-{}-seed{}-fold{}.ckpt",
            t.target.name(),
            t.modality,
            t.seed,
            f.fold
        ));
        write_file(&path, |w| write_checkpoint(w, &cfg.model, &f.params).map_err(std::io::Error::other))?;
        artifacts.push(path);
    }
    println!("mean MAE {} {}", outcome.mean_mae, t.target.unit());

    let csv = g.out.join("train.csv");
    write_file(&csv, |w| write_csv(&rows, w))?;
    let predictions = g.out.join("predictions.csv");
    write_file(&predictions, |w| {
        writeln!(w, "fold,id,target,predicted,mean_gate")?;
        for f in &outcome.folds {
            for p in &f.predictions {
                let gate = p.mean_gate.map(|x| x.to_string()).unwrap_or_default();
                writeln!(w, "{},{},{},{},{gate}", f.fold, p.id, p.target, p.predicted)?;
            }
        }
        Ok(())
    })?;
    let losses = g.out.join("loss.csv");
    write_file(&losses, |w| {
        writeln!(w, "fold,epoch,loss")?;
        for f in &outcome.folds {
            for (e, l) in f.loss_curve.iter().enumerate() {
                writeln!(w, "{},{},{l}", f.fold, e + 1)?;
            }
        }
        Ok(())
    })?;
    artifacts.extend([csv, predictions, losses]);
    let manifest = run.finish(&g.out, &artifacts)?;
    println!("fold hash {}", outcome.fold_hash);
    println!("manifest {}", manifest.display());
    Ok(())
}

fn write_gates(path: &Path, gates: &[GateRow]) -> Result<(), Failure> {
    write_file(path, |w| {
        writeln!(w, "target,seed,fold,id,mean_gate")?;
        for r in gates {
            writeln!(w, "{},{},{},{},{}", r.target.name(), r.seed, r.fold, r.id, r.mean_gate)?;
        }
        Ok(())
    })
}

fn read_gates(path: &Path) -> Result<Vec<f64>, Failure> {
    let text = fs::read_to_string(path).user(format!("cannot read {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("target,seed,fold,id,mean_gate") {
        return Err(Failure::user(format!("{}: unexpected gate CSV header", path.display())));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.rsplit(',')
                .next()
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Failure::user(format!("{} line {}: bad mean_gate", path.display(), i + 2)))
        })
        .collect()
}

/// Table, JSON and plots for a report.
fn emit_report(out: &Path, report: &AblationReport, gates: Option<&[f64]>) -> Result<Vec<PathBuf>, Failure> {
    verify(report).user("report failed verification")?;
    let table = render_table(report);
    print!("{table}");
    let md = out.join("report.md");
    fs::write(&md, &table).env(format!("cannot write {}", md.display()))?;
    let json = out.join("report.json");
    let text = serde_json::to_string_pretty(report).user("cannot serialize report")?;
    fs::write(&json, text + "\n").env(format!("cannot write {}", json.display()))?;
    let mut artifacts = vec![md, json];
    let bars = out.join("mae.svg");
    match plots::mae_bars(&bars, report) {
        Ok(()) => artifacts.push(bars),
        Err(e) => log::warn!("MAE plot skipped: {e}"),
    }
    if let Some(g) = gates.filter(|g| !g.is_empty()) {
        let hist = out.join("gates.svg");
        match plots::gate_histogram(&hist, g) {
            Ok(()) => artifacts.push(hist),
            Err(e) => log::warn!("gate plot skipped: {e}"),
        }
    }
    Ok(artifacts)
}

pub fn ablate(g: &GlobalArgs) -> Result<(), Failure> {
    let cfg = resolve_config(g)?;
    let loaded = load(&cfg)?;
    let run = start_run("ablate", &cfg, &loaded);
    let ablation = AblationConfig {
        targets: cfg.ablation.targets.clone(),
        seeds: cfg.ablation.seeds.clone(),
        base: cfg.train.clone(),
    };
    let out = run_ablation(&ablation, &cfg.model, &loaded.prepared.samples).user("ablation failed")?;

    create_out(&g.out)?;
    let csv = g.out.join("ablation.csv");
    write_file(&csv, |w| write_csv(&out.rows, w))?;
    let gates = g.out.join("gates.csv");
    write_gates(&gates, &out.gates)?;
    let gate_values: Vec<f64> = out.gates.iter().map(|r| r.mean_gate).collect();
    let mut artifacts = vec![csv, gates];
    artifacts.extend(emit_report(&g.out, &out.report, Some(&gate_values))?);
    for r in &out.report.rows {
        log::info!(
            "{}: fold hash {}",
            r.target.name(),
            r.fold_hash.as_deref().unwrap_or("-")
        );
    }
    let manifest = run.finish(&g.out, &artifacts)?;
    println!("manifest {}", manifest.display());
    Ok(())
}

pub fn report(g: &GlobalArgs, csvs: &[PathBuf], gates: Option<&Path>) -> Result<(), Failure> {
    let mut rows = Vec::new();
    for path in csvs {
        let text = fs::read_to_string(path).user(format!("cannot read {}", path.display()))?;
        rows.extend(parse_csv(&text).user(format!("schema mismatch in {}", path.display()))?);
    }
    let report = aggregate(&rows, &BTreeMap::new()).user("cannot aggregate rows")?;
    let gate_values = gates.map(read_gates).transpose()?;
    create_out(&g.out)?;
    emit_report(&g.out, &report, gate_values.as_deref())?;
    Ok(())
}

pub fn embed_check(g: &GlobalArgs) -> Result<(), Failure> {
    let cfg = resolve_config(g)?;
    let path = cfg
        .embeddings
        .clone()
        .ok_or_else(|| Failure::user("no embedding file given (use --embeddings PATH)"))?;
    let set = load_embeddings(&path).user(format!("invalid embedding file {}", path.display()))?;
    let (entries, _) = load_entries(&cfg)?;
    let check = check_embeddings(&entries, &set);
    println!(
        "{}",
        serde_json::to_string_pretty(&check).user("cannot serialize check result")?
    );
    if set.duplicates > 0 {
        log::warn!("{} duplicate cid records; the last one wins", set.duplicates);
    }
    if !check.ok() {
        return Err(Failure::user(format!(
            "{}: {} cids missing, {} with a description mismatch",
            path.display(),
            check.missing.len(),
            check.mismatched.len()
        )));
    }
    println!("ok: {} cids checked", check.checked);
    Ok(())
}

pub fn synth(g: &GlobalArgs, n: usize, leak: Option<TargetId>, max_heavy: usize) -> Result<(), Failure> {
    let cfg = resolve_config(g)?;
    if n == 0 || max_heavy == 0 {
        return Err(Failure::user("--n and --max-heavy must be at least 1"));
    }
    let synth = SynthConfig {
        n_molecules: n,
        seed: cfg.train.seed,
        max_heavy,
        leak,
        ..SynthConfig::default()
    };
    let molecules: Vec<Molecule> = synth_corpus(&synth);
    let dir = &cfg.data.xyz_dir;
    create_out(dir)?;
    for m in &molecules {
        let path = dir.join(format!("{}.xyz", m.id));
        fs::write(&path, write_xyz(m)).env(format!("cannot write {}", path.display()))?;
    }
    let cache = DiskCache::open(&cfg.data.cache_dir)
        .env(format!("cannot open cache directory {}", cfg.data.cache_dir.display()))?;
    let client = offline_client(&molecules, &synth, cache);
    let manifest = build_multimodal_manifest(&molecules, &client);
    println!(
        "wrote {} molecules to {}; cache {} warmed ({} with descriptors)",
        molecules.len(),
        dir.display(),
        cfg.data.cache_dir.display(),
        manifest.included.len()
    );
    Ok(())
}
