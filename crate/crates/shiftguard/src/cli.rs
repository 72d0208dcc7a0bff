//! Command-line pipeline: `shiftguard <command> --config <path>
//! [--in <path>...] [--out <path>]`.
//!
//! Every command is a pure function from its input files, the config,
//! and the seed to its output files; re-running overwrites the same
//! bytes. The config used is logged next to the outputs verbatim
//! (`run_config.json` inside directory outputs, `<out>.config.json`
//! beside file outputs), so any artifact can be traced back to the
//! exact invocation that produced it.

use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::benchmark::{
    apply_class_holdout, construct_shift_kmeans, contamination_study, evaluate_scores, remove_unseen,
    synth_graph, MetricReport, ShiftMethod, ShiftSpec, SynthConfig,
};
use crate::error::{Error, Result};
use crate::gadmodel::{detect, encode, load_model, pretrain, save_model, GadModel, PretrainConfig};
use crate::graph::{load_bundle, save_bundle, sym_normalize, Graph};
use crate::tensorcore::Tensor;
use crate::tune::{adapt, align, load_aligner, load_estimator, save_aligner, save_estimator, save_trace, AdaptConfig};

/// One config file per invocation: a global seed plus the section for
/// the command being run. Unknown top-level keys are rejected so typos
/// fail loudly instead of silently using defaults.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Drives the operations that have no section of their own
    /// (currently the clustering inside `shift`). Sections carry their
    /// own seeds.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<ShiftSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapt: Option<AdaptConfig>,
}

fn section<'a, T>(slot: &'a Option<T>, name: &str) -> Result<&'a T> {
    slot.as_ref()
        .ok_or_else(|| Error::InvalidConfig(format!("config is missing the \"{}\" section", name)))
}

#[derive(Parser)]
#[command(name = "shiftguard", version, about = "Graph anomaly detection under normality shift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled graph bundle.
    Synth(CommonArgs),
    /// Flag unseen normals in a bundle and move them to the test split.
    Shift(CommonArgs),
    /// Train the detector on the bundle minus its unseen nodes.
    Pretrain(CommonArgs),
    /// Adapt a frozen model to a shifted bundle.
    Adapt(CommonArgs),
    /// Score the test split and write a metric report.
    Eval(CommonArgs),
    /// Measure aggregation contamination between two bundles.
    Study(CommonArgs),
    /// Project node representations to 2D coordinates.
    Project(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration JSON.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Input paths, in command-specific order.
    #[arg(long = "in", value_name = "PATH")]
    inputs: Vec<PathBuf>,
    /// Output file or directory.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

/// Parses process arguments, runs the command, and reports any failure
/// as a single `error: ...` line on stderr. Returns the exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{}", e);
            return 0;
        }
        Err(e) => {
            let line = e.to_string();
            let line = line.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", line.strip_prefix("error: ").map(|l| format!("error: {}", l)).unwrap_or_else(|| format!("error: {}", line)));
            return 1;
        }
    };
    let (name, args) = match &cli.command {
        Command::Synth(a) => ("synth", a),
        Command::Shift(a) => ("shift", a),
        Command::Pretrain(a) => ("pretrain", a),
        Command::Adapt(a) => ("adapt", a),
        Command::Eval(a) => ("eval", a),
        Command::Study(a) => ("study", a),
        Command::Project(a) => ("project", a),
    };
    match dispatch(name, &args.config, &args.inputs, &args.out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            1
        }
    }
}

/// Runs one command against already-separated paths, then logs the
/// config verbatim next to the output.
pub fn dispatch(command: &str, config_path: &Path, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let raw = fs::read(config_path).map_err(|e| Error::io(config_path, e))?;
    let cfg: RunConfig =
        serde_json::from_slice(&raw).map_err(|e| Error::parse(config_path, e.to_string()))?;

    let dir_output = matches!(command, "synth" | "shift" | "adapt");
    match (command, inputs) {
        ("synth", []) => cmd_synth(&cfg, out)?,
        ("shift", [bundle]) => cmd_shift(&cfg, bundle, out)?,
        ("pretrain", [bundle]) => cmd_pretrain(&cfg, bundle, out)?,
        ("adapt", [bundle, model]) => cmd_adapt(&cfg, bundle, model, out)?,
        ("eval", [bundle, model, rest @ ..]) if rest.len() <= 2 => {
            cmd_eval(&cfg, bundle, model, rest.first().map(|p| p.as_path()), rest.get(1).map(|p| p.as_path()), out)?
        }
        ("study", [before, after, model]) => cmd_study(&cfg, before, after, model, out)?,
        ("project", [bundle, model, rest @ ..]) if rest.len() <= 1 => {
            cmd_project(&cfg, bundle, model, rest.first().map(|p| p.as_path()), out)?
        }
        _ => {
            return Err(Error::arg(
                "cli",
                format!("wrong --in count for {}: {}", command, usage(command)),
            ))
        }
    }

    let provenance = if dir_output {
        out.join("run_config.json")
    } else {
        out.with_extension("config.json")
    };
    fs::write(&provenance, &raw).map_err(|e| Error::io(&provenance, e))
}

fn usage(command: &str) -> &'static str {
    match command {
        "synth" => "takes no --in, --out is the bundle directory",
        "shift" => "--in <bundle>, --out is the shifted bundle directory",
        "pretrain" => "--in <bundle>, --out is the model checkpoint file",
        "adapt" => "--in <bundle> --in <model>, --out is the checkpoint directory",
        "eval" => "--in <bundle> --in <model> [--in <aligner> [--in <estimator>]], --out is the report file",
        "study" => "--in <bundle-before> --in <bundle-after> --in <model>, --out is the report file",
        "project" => "--in <bundle> --in <model> [--in <aligner>], --out is the csv file",
        _ => "unknown command",
    }
}

pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let synth_cfg = section(&cfg.synth, "synth")?;
    let g = synth_graph(synth_cfg)?;
    save_bundle(&g, out_dir)
}

/// Reads the bundle, applies the configured shift, and writes the
/// result as a new bundle. Class holdout reads node classes from
/// `classes.csv` (header `class`) inside the input bundle directory.
pub fn cmd_shift(cfg: &RunConfig, bundle_in: &Path, out_dir: &Path) -> Result<()> {
    let spec = section(&cfg.shift, "shift")?;
    let g = load_bundle(bundle_in)?;
    let shifted = match spec.method {
        ShiftMethod::KmeansHoldout => construct_shift_kmeans(&g, spec, cfg.seed)?,
        ShiftMethod::ClassHoldout => {
            let classes = read_classes(&bundle_in.join("classes.csv"), g.n())?;
            apply_class_holdout(&g, &classes, spec)?
        }
    };
    save_bundle(&shifted, out_dir)
}

/// Trains on the bundle with unseen nodes and their edges removed:
/// the deployment-time shift must be invisible at training time, which
/// includes message passing.
pub fn cmd_pretrain(cfg: &RunConfig, bundle: &Path, out_model: &Path) -> Result<()> {
    let pre = section(&cfg.pretrain, "pretrain")?;
    let g = load_bundle(bundle)?;
    let train_graph = remove_unseen(&g)?;
    let model = pretrain(&train_graph, pre)?;
    save_model(&model, out_model)
}

pub fn cmd_adapt(cfg: &RunConfig, bundle: &Path, model: &Path, out_dir: &Path) -> Result<()> {
    let adapt_cfg = section(&cfg.adapt, "adapt")?;
    let g = load_bundle(bundle)?;
    let m = load_model(model)?;
    let (aligner, estimator, trace) = adapt(&g, &m, adapt_cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    save_aligner(&aligner, &out_dir.join("aligner.json"))?;
    save_estimator(&estimator, &out_dir.join("estimator.json"))?;
    save_trace(&trace, &out_dir.join("trace.json"))
}

/// Scores the test split and writes a [`MetricReport`]. With an
/// aligner checkpoint the features are aligned first, so the report
/// reflects the adapted detector; without one it reflects the frozen
/// model as deployed. An estimator checkpoint is accepted and
/// validated against the model, but detection itself always reads the
/// main branch.
pub fn cmd_eval(
    cfg: &RunConfig,
    bundle: &Path,
    model: &Path,
    aligner: Option<&Path>,
    estimator: Option<&Path>,
    out_report: &Path,
) -> Result<()> {
    let _ = cfg;
    let g = load_bundle(bundle)?;
    let m = load_model(model)?;
    if let Some(path) = estimator {
        let e = load_estimator(path)?;
        if e.repr_dim() != m.repr_dim() {
            return Err(Error::shape(
                "cmd_eval",
                format!("estimator is {}-dimensional, model emits {}", e.repr_dim(), m.repr_dim()),
            ));
        }
    }
    let scores = scored_features(&g, &m, aligner)?;
    let report = evaluate_scores(&g, &scores)?;
    write_json(out_report, &report)
}

/// Contamination bins for the before/after pair, attached to the
/// post-shift graph's raw-score metrics.
pub fn cmd_study(cfg: &RunConfig, before: &Path, after: &Path, model: &Path, out_report: &Path) -> Result<()> {
    let _ = cfg;
    let g_before = load_bundle(before)?;
    let g_after = load_bundle(after)?;
    let m = load_model(model)?;
    let bins = contamination_study(&g_before, &g_after, &m)?;
    let scores = model_scores(&g_after, g_after.features(), &m)?;
    let mut report: MetricReport = evaluate_scores(&g_after, &scores)?;
    report.contamination_bins = bins;
    write_json(out_report, &report)
}

/// Writes per-node 2D PCA coordinates of the (optionally aligned)
/// representations as CSV with header `node_id,x,y,label,unseen`.
pub fn cmd_project(
    cfg: &RunConfig,
    bundle: &Path,
    model: &Path,
    aligner: Option<&Path>,
    out_csv: &Path,
) -> Result<()> {
    let g = load_bundle(bundle)?;
    let m = load_model(model)?;
    let labels = g.require_labels()?.to_vec();
    if m.repr_dim() < 2 {
        return Err(Error::arg(
            "cmd_project",
            format!("2D projection needs repr_dim >= 2, model has {}", m.repr_dim()),
        ));
    }
    let x = aligned_features(&g, &m, aligner)?;
    let h = encode(&sym_normalize(&g), &x, &m)?;
    let (xs, ys) = principal_plane(&h, cfg.seed);

    let mut writer = csv::Writer::from_path(out_csv).map_err(|e| csv_error(out_csv, e))?;
    writer
        .write_record(["node_id", "x", "y", "label", "unseen"])
        .map_err(|e| csv_error(out_csv, e))?;
    for i in 0..g.n() {
        writer
            .write_record([
                i.to_string(),
                xs[i].to_string(),
                ys[i].to_string(),
                labels[i].to_string(),
                u8::from(g.unseen_flags()[i]).to_string(),
            ])
            .map_err(|e| csv_error(out_csv, e))?;
    }
    writer.flush().map_err(|e| Error::io(out_csv, e))
}

fn aligned_features(g: &Graph, m: &GadModel, aligner: Option<&Path>) -> Result<Tensor> {
    match aligner {
        None => Ok(g.features().detach()),
        Some(path) => {
            let a = load_aligner(path)?;
            if a.feat_dim() != m.feat_dim() {
                return Err(Error::shape(
                    "cmd_eval",
                    format!("aligner is {}-dimensional, model expects {}", a.feat_dim(), m.feat_dim()),
                ));
            }
            align(g.features(), &a)
        }
    }
}

fn scored_features(g: &Graph, m: &GadModel, aligner: Option<&Path>) -> Result<Tensor> {
    let x = aligned_features(g, m, aligner)?;
    model_scores(g, &x, m)
}

fn model_scores(g: &Graph, x: &Tensor, m: &GadModel) -> Result<Tensor> {
    let h = encode(&sym_normalize(g), x, m)?;
    detect(&h, m)
}

/// Top-2 principal components of the representation rows: covariance
/// eigenvectors by power iteration with deflation, signs fixed so the
/// largest-magnitude entry of each axis is positive.
fn principal_plane(h: &Tensor, seed: u64) -> (Vec<f64>, Vec<f64>) {
    use rand::Rng;
    use rand::SeedableRng;

    let n = h.rows();
    let r = h.cols();
    let mut means = vec![0.0; r];
    for i in 0..n {
        for (m, v) in means.iter_mut().zip(h.row_slice(i)) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut centered = Vec::with_capacity(n * r);
    for i in 0..n {
        let row = h.row_slice(i);
        for j in 0..r {
            centered.push(row[j] - means[j]);
        }
    }

    let mut cov = vec![0.0; r * r];
    for i in 0..n {
        for a in 0..r {
            for b in 0..r {
                cov[a * r + b] += centered[i * r + a] * centered[i * r + b];
            }
        }
    }
    for v in &mut cov {
        *v /= n as f64;
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut axes = Vec::new();
    for _ in 0..2 {
        let mut v: Vec<f64> = (0..r).map(|_| rng.random::<f64>() - 0.5).collect();
        normalize(&mut v);
        for _ in 0..200 {
            let mut w = vec![0.0; r];
            for a in 0..r {
                for b in 0..r {
                    w[a] += cov[a * r + b] * v[b];
                }
            }
            if normalize(&mut w) == 0.0 {
                break;
            }
            v = w;
        }
        // Rayleigh quotient, exact enough after the iteration count.
        let mut cv = vec![0.0; r];
        for a in 0..r {
            for b in 0..r {
                cv[a] += cov[a * r + b] * v[b];
            }
        }
        let lambda: f64 = v.iter().zip(&cv).map(|(a, b)| a * b).sum();
        for a in 0..r {
            for b in 0..r {
                cov[a * r + b] -= lambda * v[a] * v[b];
            }
        }
        let pivot = (0..r).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
        if v[pivot] < 0.0 {
            for entry in &mut v {
                *entry = -*entry;
            }
        }
        axes.push(v);
    }

    let project = |axis: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| (0..r).map(|j| centered[i * r + j] * axis[j]).sum())
            .collect()
    };
    (project(&axes[0]), project(&axes[1]))
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

fn read_classes(path: &Path, n: usize) -> Result<Vec<usize>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut classes = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let field = record
            .get(0)
            .ok_or_else(|| Error::parse(path, "empty class row"))?;
        let class: usize = field
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, format!("bad class value {:?}", field)))?;
        classes.push(class);
    }
    if classes.len() != n {
        return Err(Error::parse(
            path,
            format!("{} class rows for {} nodes", classes.len(), n),
        ));
    }
    Ok(classes)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{:?}", other)),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> RunConfig {
        RunConfig {
            seed: 0,
            synth: Some(SynthConfig {
                cluster_sizes: vec![30, 30],
                unseen_size: 25,
                anomaly_size: 12,
                feat_dim: 6,
                intra_p: 0.08,
                inter_p: 0.03,
                ..SynthConfig::default()
            }),
            shift: Some(ShiftSpec::default()),
            pretrain: Some(PretrainConfig { epochs: 40, hidden_dim: 8, repr_dim: 4, ..PretrainConfig::default() }),
            adapt: Some(AdaptConfig { outer_rounds: 2, ..AdaptConfig::default() }),
        }
    }

    #[test]
    fn seed_is_mandatory_in_the_config() {
        assert!(serde_json::from_str::<RunConfig>("{}").is_err());
        assert!(serde_json::from_str::<RunConfig>("{\"seed\": 3}").is_ok());
        assert!(serde_json::from_str::<RunConfig>("{\"seed\": 3, \"bogus\": 1}").is_err());
    }

    #[test]
    fn missing_section_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { synth: None, ..base_config() };
        let err = cmd_synth(&cfg, dir.path()).unwrap_err();
        assert!(err.to_string().contains("synth"), "{}", err);
    }

    #[test]
    fn pipeline_runs_end_to_end_through_the_command_layer() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = base_config();
        let raw_dir = dir.path().join("raw");
        let shifted_dir = dir.path().join("shifted");
        let model = dir.path().join("model.json");
        let adapted = dir.path().join("adapted");
        let report = dir.path().join("report.json");

        cmd_synth(&cfg, &raw_dir).unwrap();
        cmd_shift(&cfg, &raw_dir, &shifted_dir).unwrap();
        cmd_pretrain(&cfg, &shifted_dir, &model).unwrap();
        cmd_adapt(&cfg, &shifted_dir, &model, &adapted).unwrap();
        cmd_eval(
            &cfg,
            &shifted_dir,
            &model,
            Some(&adapted.join("aligner.json")),
            Some(&adapted.join("estimator.json")),
            &report,
        )
        .unwrap();

        let parsed: MetricReport =
            serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
        assert!((0.0..=1.0).contains(&parsed.auroc));
        assert!(adapted.join("trace.json").exists());

        let study_report = dir.path().join("study.json");
        let before_dir = dir.path().join("before");
        save_bundle(&remove_unseen(&load_bundle(&shifted_dir).unwrap()).unwrap(), &before_dir)
            .unwrap();
        cmd_study(&cfg, &before_dir, &shifted_dir, &model, &study_report).unwrap();
        let parsed: MetricReport =
            serde_json::from_str(&fs::read_to_string(&study_report).unwrap()).unwrap();
        assert_eq!(parsed.contamination_bins.len(), 5);

        let proj = dir.path().join("proj.csv");
        cmd_project(&cfg, &shifted_dir, &model, None, &proj).unwrap();
        let text = fs::read_to_string(&proj).unwrap();
        assert!(text.starts_with("node_id,x,y,label,unseen\n"));
        assert_eq!(text.lines().count(), 1 + load_bundle(&shifted_dir).unwrap().n());
    }

    #[test]
    fn eval_without_labels_reports_labels_required() {
        use crate::graph::Masks;
        use crate::tensorcore::SparseMatrix;

        let dir = tempfile::tempdir().unwrap();
        let bundle = dir.path().join("bundle");
        let g = Graph::new(
            SparseMatrix::empty(4),
            Tensor::filled(4, 3, 0.5),
            None,
            Masks::empty(4),
            vec![false; 4],
        )
        .unwrap();
        save_bundle(&g, &bundle).unwrap();

        let model = dir.path().join("model.json");
        save_model(
            &GadModel::new(
                Tensor::identity(3),
                Tensor::identity(3),
                Tensor::filled(3, 1, 1.0),
                Tensor::zeros(1, 1),
            )
            .unwrap(),
            &model,
        )
        .unwrap();

        let err = cmd_eval(&base_config(), &bundle, &model, None, None, &dir.path().join("r.json"))
            .unwrap_err();
        assert_eq!(err.to_string(), "labels required");
    }

    #[test]
    fn zero_round_adaptation_reproduces_unadapted_scores() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base_config();
        cfg.adapt = Some(AdaptConfig { outer_rounds: 0, ..AdaptConfig::default() });

        let raw_dir = dir.path().join("raw");
        let shifted_dir = dir.path().join("shifted");
        let model = dir.path().join("model.json");
        let adapted = dir.path().join("adapted");
        cmd_synth(&cfg, &raw_dir).unwrap();
        cmd_shift(&cfg, &raw_dir, &shifted_dir).unwrap();
        cmd_pretrain(&cfg, &shifted_dir, &model).unwrap();
        cmd_adapt(&cfg, &shifted_dir, &model, &adapted).unwrap();

        let with = dir.path().join("with.json");
        let without = dir.path().join("without.json");
        cmd_eval(&cfg, &shifted_dir, &model, Some(&adapted.join("aligner.json")), None, &with)
            .unwrap();
        cmd_eval(&cfg, &shifted_dir, &model, None, None, &without).unwrap();
        assert_eq!(fs::read(&with).unwrap(), fs::read(&without).unwrap());
    }

    #[test]
    fn class_holdout_shift_reads_classes_csv() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            shift: Some(ShiftSpec {
                method: ShiftMethod::ClassHoldout,
                anomaly_class_threshold: 0.15,
                ..ShiftSpec::default()
            }),
            ..base_config()
        };
        let raw_dir = dir.path().join("raw");
        cmd_synth(&cfg, &raw_dir).unwrap();
        let g = load_bundle(&raw_dir).unwrap();

        // Classes: the synthetic anomalies become the rare class 2.
        let mut classes = String::from("class\n");
        for i in 0..g.n() {
            let c = match g.labels().unwrap()[i] {
                1 => 2usize,
                _ => usize::from(i % 3 == 0),
            };
            classes.push_str(&format!("{}\n", c));
        }
        fs::write(raw_dir.join("classes.csv"), classes).unwrap();

        let shifted_dir = dir.path().join("shifted");
        cmd_shift(&cfg, &raw_dir, &shifted_dir).unwrap();
        let shifted = load_bundle(&shifted_dir).unwrap();
        assert!(shifted.unseen_flags().iter().any(|&f| f));
        for i in 0..shifted.n() {
            assert_eq!(shifted.labels().unwrap()[i], g.labels().unwrap()[i]);
            if shifted.unseen_flags()[i] {
                assert!(shifted.masks().test[i]);
            }
        }
    }

    #[test]
    fn dispatch_rejects_wrong_input_counts_and_logs_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("config.json");
        let cfg_text = serde_json::to_string_pretty(&base_config()).unwrap();
        fs::write(&cfg_path, &cfg_text).unwrap();

        let out = dir.path().join("bundle");
        let err = dispatch("synth", &cfg_path, &[PathBuf::from("extra")], &out).unwrap_err();
        assert!(err.to_string().contains("--in"), "{}", err);

        dispatch("synth", &cfg_path, &[], &out).unwrap();
        assert_eq!(fs::read(out.join("run_config.json")).unwrap(), cfg_text.as_bytes());

        let model = dir.path().join("model.json");
        dispatch("pretrain", &cfg_path, &[out.clone()], &model).unwrap();
        assert_eq!(
            fs::read(dir.path().join("model.config.json")).unwrap(),
            cfg_text.as_bytes()
        );
    }

    #[test]
    fn projection_is_deterministic_and_sign_fixed() {
        let mut data = Vec::new();
        for i in 0..40 {
            let t = i as f64 / 10.0;
            data.extend_from_slice(&[3.0 * t, -t, 0.25 * (i % 5) as f64]);
        }
        let h = Tensor::from_vec(40, 3, data).unwrap();
        let (x1, y1) = principal_plane(&h, 9);
        let (x2, y2) = principal_plane(&h, 9);
        assert_eq!(x1, x2);
        assert_eq!(y1, y2);

        // The dominant direction is (3, -1, *)/sqrt(10); the sign rule
        // makes the largest-magnitude component positive, so the first
        // coordinate grows with t.
        assert!(x1[39] > x1[0]);

        // Centered projections sum to ~0.
        let sum: f64 = x1.iter().sum();
        assert!(sum.abs() < 1e-9, "{}", sum);
    }
}
