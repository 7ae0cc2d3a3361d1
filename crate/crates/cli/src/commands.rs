use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use gcvae::data::{generate_synthetic, load_csv, normalize_with_ranges, read_table, split, SyntheticSpec};
use gcvae::eval::{cluster_profiles, clustering_accuracy, nmi, ContingencyTable};
use gcvae::training::{
    infer as run_infer, init_gmm_from_latent, model_io, pretrain, train as run_train, Checkpoint,
    EpochView, Mode, Observer, Phase, TrainConfig,
};
use gcvae::Error;
use serde::Serialize;

use crate::error::CliError;
use crate::manifest::{
    Artifacts, DataFingerprint, RunManifest, RunStatus, SplitRecord, Timings, CHECKPOINT, METRICS,
    SNAPSHOTS,
};
use crate::{EvalArgs, GenerateArgs, InferArgs, TrainArgs};

const SPLIT_FRACTIONS: (f64, f64, f64) = (0.7, 0.2, 0.1);
const DEFAULT_LABEL: &str = "label";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes") + "\n"
}

pub fn generate(a: &GenerateArgs) -> Result<(), CliError> {
    let spec = SyntheticSpec {
        k_true: a.k_true,
        n: a.n,
        d_latent_true: a.d_latent_true,
        d_x: a.d_x,
        d_y: a.d_y,
        cluster_separation: a.cluster_separation,
        distractor_dims: a.distractor_dims,
        distractor_scale: a.distractor_scale,
        y_noise_sd: a.y_noise_sd,
        seed: a.seed,
    };
    let synthetic = generate_synthetic(&spec).map_err(|e| match e {
        Error::InvalidArgument(m) => CliError::Usage(m),
        other => other.into(),
    })?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    synthetic.dataset.write_csv(&a.out)?;
    #[derive(Serialize)]
    struct Sidecar<'a> {
        spec: &'a SyntheticSpec,
        guide_columns: &'a [String],
        guide_signatures: Vec<Vec<f64>>,
    }
    let sidecar = Sidecar {
        spec: &spec,
        guide_columns: &synthetic.dataset.guide_names,
        guide_signatures: synthetic.guide_signatures.to_rows(),
    };
    let mut side = a.out.clone().into_os_string();
    side.push(".spec.json");
    write_file(Path::new(&side), &to_json(&sidecar))?;
    println!(
        "wrote {} rows to {} (guide columns: {})",
        spec.n,
        a.out.display(),
        synthetic.dataset.guide_names.join(",")
    );
    Ok(())
}

fn config_error(path: &Path, message: impl ToString) -> CliError {
    CliError::Config {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// TOML config, or JSON (a bare config or a run manifest's `config`).
fn load_config(path: &Path) -> Result<TrainConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| config_error(path, e))?;
        let value = value.get("config").cloned().unwrap_or(value);
        serde_json::from_value(value).map_err(|e| config_error(path, e))
    } else {
        toml::from_str(&text).map_err(|e| config_error(path, e))
    }
}

fn resolve_config(a: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut c = match &a.config {
        Some(p) => load_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(m) = &a.mode {
        c.mode = m.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    }
    if let Some(v) = a.k {
        c.k = v;
    }
    if let Some(v) = a.latent_dim {
        c.latent_dim = v;
    }
    if let Some(v) = a.epochs_pretrain {
        c.epochs_pretrain = v;
    }
    if let Some(v) = a.epochs_train {
        c.epochs_train = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = a.beta_train {
        c.beta_train = v;
    }
    c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(c)
}

fn resolve_label(data: &Path, explicit: &Option<String>) -> Result<(Vec<String>, Option<String>), CliError> {
    let columns = read_table(data)?.columns;
    let label = match explicit {
        Some(l) => Some(l.clone()),
        None => columns.iter().any(|c| c == DEFAULT_LABEL).then(|| DEFAULT_LABEL.to_string()),
    };
    Ok((columns, label))
}

/// Streams metrics lines and optional latent snapshots into the run directory.
struct RunObserver {
    metrics: BufWriter<File>,
    metrics_path: PathBuf,
    snapshots: Option<PathBuf>,
    val_rows: Vec<usize>,
    warnings: Vec<String>,
}

impl RunObserver {
    fn write_snapshot(&self, dir: &Path, view: &EpochView<'_>) -> gcvae::Result<()> {
        let phase = match view.metrics.phase {
            Phase::Pretrain => "pretrain",
            Phase::Train => "train",
        };
        let path = dir.join(format!("{phase}_{:03}.csv", view.metrics.epoch));
        let mut out = String::from("row,cluster");
        for j in 0..view.val_latent.cols() {
            out.push_str(&format!(",z{j}"));
        }
        out.push('\n');
        for (i, z) in view.val_latent.row_iter().enumerate() {
            out.push_str(&format!("{},{}", self.val_rows[i], view.val_assignments[i]));
            for v in z {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        std::fs::write(&path, out).map_err(|source| Error::Io { path, source })
    }
}

impl Observer for RunObserver {
    fn on_epoch(&mut self, view: &EpochView<'_>) -> gcvae::Result<()> {
        let line = serde_json::to_string(view.metrics).expect("metrics serialize");
        let io = |source| Error::Io {
            path: self.metrics_path.clone(),
            source,
        };
        writeln!(self.metrics, "{line}").map_err(io)?;
        self.metrics.flush().map_err(io)?;
        if let Some(dir) = &self.snapshots {
            self.write_snapshot(dir, view)?;
        }
        let m = view.metrics;
        let phase = match m.phase {
            Phase::Pretrain => "pretrain",
            Phase::Train => "train",
        };
        let scores = match (m.acc, m.nmi) {
            (Some(a), Some(n)) => format!("  val ACC {a:.4}  NMI {n:.4}"),
            _ => String::new(),
        };
        eprintln!(
            "{phase} epoch {:>3}  val ELBO/row {:.5}  recon {:.5}{scores}",
            m.epoch, m.val.total, m.val.recon
        );
        Ok(())
    }

    fn on_warning(&mut self, message: &str) {
        eprintln!("warning: {message}");
        self.warnings.push(message.to_string());
    }
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let config = resolve_config(a)?;
    let (columns, label) = resolve_label(&a.data, &a.label_col)?;
    let dataset = load_csv(&a.data, &a.guide_cols, label.as_deref())?;
    let (train_set, val_set, _test, indices) = split(&dataset, SPLIT_FRACTIONS, config.seed)?;

    create_dir(&a.out)?;
    let snapshots = a.snapshots.then(|| a.out.join(SNAPSHOTS));
    if let Some(dir) = &snapshots {
        create_dir(dir)?;
    }
    let val_rows = indices.val.clone();
    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        status: RunStatus::Running,
        config: config.clone(),
        data: DataFingerprint::of(&a.data, dataset.len(), columns, a.guide_cols.clone(), label)?,
        split: SplitRecord {
            fractions: SPLIT_FRACTIONS,
            indices,
        },
        artifacts: Artifacts {
            metrics: METRICS.into(),
            checkpoint: CHECKPOINT.into(),
            snapshots: snapshots.as_ref().map(|_| SNAPSHOTS.to_string()),
        },
        timings: Timings::default(),
        warnings: Vec::new(),
        final_val_acc: None,
        final_val_nmi: None,
    };
    manifest.write(&a.out)?;

    let metrics_path = a.out.join(METRICS);
    let file = File::create(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
    let mut observer = RunObserver {
        metrics: BufWriter::new(file),
        metrics_path,
        snapshots,
        val_rows,
        warnings: Vec::new(),
    };

    let mut timings = Timings::default();
    let outcome = (|| -> gcvae::Result<_> {
        let t = Instant::now();
        let pre = pretrain(&config, &train_set, &val_set, &mut observer)?;
        timings.pretrain_s = Some(t.elapsed().as_secs_f64());
        let t = Instant::now();
        let (input, _) = model_io(&train_set, config.mode)?;
        let gmm = init_gmm_from_latent(&pre.encoder, &input, config.k, config.seed, config.var_floor)?;
        timings.init_gmm_s = Some(t.elapsed().as_secs_f64());
        let t = Instant::now();
        let out = run_train(&config, &train_set, &val_set, pre.encoder, pre.decoder, gmm, &mut observer)?;
        timings.train_s = Some(t.elapsed().as_secs_f64());
        Ok(out)
    })();
    manifest.timings = timings;
    manifest.warnings = observer.warnings.clone();
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.write(&a.out)?;
            return Err(e.into());
        }
    };
    outcome.checkpoint.save(&a.out.join(CHECKPOINT))?;
    if let Some(last) = outcome.metrics.last() {
        manifest.final_val_acc = last.acc;
        manifest.final_val_nmi = last.nmi;
    }
    manifest.status = RunStatus::Complete;
    manifest.write(&a.out)?;
    println!("run written to {}", a.out.display());
    if let (Some(acc), Some(n)) = (manifest.final_val_acc, manifest.final_val_nmi) {
        println!("final validation ACC {acc:.4}, NMI {n:.4}");
    }
    Ok(())
}

pub fn infer(a: &InferArgs) -> Result<(), CliError> {
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let table = read_table(&a.data)?;
    let schema = &checkpoint.schema;
    let mut needed = schema.feature_names.clone();
    let mut ranges = schema.x_ranges.clone();
    if checkpoint.config.mode == Mode::UnguidedJoint {
        needed.extend(schema.guide_names.iter().cloned());
        ranges.extend(schema.y_ranges.iter().copied());
    }
    if needed.iter().any(|c| !table.columns.contains(c)) {
        return Err(Error::FeatureMismatch {
            expected: needed,
            found: table.columns.clone(),
        }
        .into());
    }
    let input = normalize_with_ranges(&table.select(&needed)?, &ranges)?;
    let result = run_infer(&checkpoint, &input)?;

    create_dir(&a.out)?;
    let mut assignments = String::from("row,cluster");
    for c in 0..result.posterior.k() {
        assignments.push_str(&format!(",q{c}"));
    }
    assignments.push('\n');
    for (i, q) in result.posterior.q.row_iter().enumerate() {
        assignments.push_str(&format!("{i},{}", result.assignments[i]));
        for v in q {
            assignments.push_str(&format!(",{v}"));
        }
        assignments.push('\n');
    }
    let mut latent = String::from("row");
    for j in 0..result.latent.cols() {
        latent.push_str(&format!(",z{j}"));
    }
    latent.push('\n');
    for (i, z) in result.latent.row_iter().enumerate() {
        latent.push_str(&i.to_string());
        for v in z {
            latent.push_str(&format!(",{v}"));
        }
        latent.push('\n');
    }
    write_file(&a.out.join("assignments.csv"), &assignments)?;
    write_file(&a.out.join("latent.csv"), &latent)?;
    println!("assigned {} rows; outputs in {}", input.rows(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalEntry {
    name: String,
    path: PathBuf,
    n: usize,
    clusters: usize,
    acc: Option<f64>,
    nmi: Option<f64>,
    /// Padded square counts, predicted cluster by true class.
    contingency: Option<Vec<Vec<u64>>>,
    profiles_csv: String,
    profiles_txt: String,
}

#[derive(Serialize)]
struct EvalReport {
    data: PathBuf,
    label_column: Option<String>,
    nmi_normalization: &'static str,
    runs: Vec<EvalEntry>,
}

fn read_assignments(path: &Path) -> Result<(Vec<usize>, usize), CliError> {
    let table = read_table(path)?;
    let col = table.column_index("cluster")?;
    let assignments = table
        .values
        .column(col)
        .iter()
        .enumerate()
        .map(|(r, &v)| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::NonNumericCell {
                    row: r + 1,
                    col,
                    column: "cluster".into(),
                    value: v.to_string(),
                })
            }
        })
        .collect::<gcvae::Result<Vec<_>>>()?;
    let q_columns = table
        .columns
        .iter()
        .filter(|c| c.strip_prefix('q').is_some_and(|d| !d.is_empty() && d.chars().all(|ch| ch.is_ascii_digit())))
        .count();
    Ok((assignments, q_columns))
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let (_, label) = resolve_label(&a.data, &a.label_col)?;
    let dataset = load_csv(&a.data, &a.guide_cols, label.as_deref())?;
    create_dir(&a.out)?;
    let mut runs = Vec::new();
    for spec in &a.assignments {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let stem = p.file_stem().map_or("assignments".into(), |s| s.to_string_lossy().into_owned());
                (stem, p)
            }
        };
        let (assignments, q_columns) = read_assignments(&path)?;
        if assignments.len() != dataset.len() {
            return Err(Error::DimensionMismatch {
                context: "assignment rows vs data rows",
                expected: dataset.len(),
                found: assignments.len(),
            }
            .into());
        }
        let (acc, nmi_score, contingency) = match &dataset.labels {
            Some(l) => {
                let table = ContingencyTable::new(&assignments, l)?;
                let rows = table
                    .counts
                    .row_iter()
                    .map(|r| r.iter().map(|&c| c as u64).collect())
                    .collect();
                (
                    Some(clustering_accuracy(&assignments, l)?),
                    Some(nmi(&assignments, l)?),
                    Some(rows),
                )
            }
            None => (None, None, None),
        };
        let profile = cluster_profiles(&dataset, &assignments, q_columns)?;
        let csv_name = format!("profiles_{name}.csv");
        let txt_name = format!("profiles_{name}.txt");
        write_file(&a.out.join(&csv_name), &profile.to_csv())?;
        write_file(&a.out.join(&txt_name), &profile.to_text())?;
        match (acc, nmi_score) {
            (Some(acc), Some(n)) => println!("{name}: ACC {acc:.4}  NMI {n:.4}  (n = {})", assignments.len()),
            _ => println!("{name}: {} rows profiled (no labels)", assignments.len()),
        }
        print!("{}", profile.to_text());
        runs.push(EvalEntry {
            name,
            path,
            n: assignments.len(),
            clusters: profile.clusters.len(),
            acc,
            nmi: nmi_score,
            contingency,
            profiles_csv: csv_name,
            profiles_txt: txt_name,
        });
    }
    let report = EvalReport {
        data: a.data.clone(),
        label_column: label,
        nmi_normalization: "arithmetic_mean",
        runs,
    };
    write_file(&a.out.join("eval.json"), &to_json(&report))
}
