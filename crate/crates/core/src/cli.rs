//! Command-line front end. Every subcommand reads its inputs from flags,
//! computes all outputs in memory and only then writes them, each file
//! atomically, followed by a `manifest.json`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::composition::{self, CompositionKind, CompositionModel, ModelHeader, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluation::{self, Grouping, PhraseSource};
use crate::fusion::{self, RidgeMap};
use crate::ingest::{self, format_float, LabeledMatrix, PhraseLexicon};
use crate::mapping::{self, BrainMap, BrainMapHeader};
use crate::rsa::{self, CorrelationMethod, Subset};
use crate::space::{EmbeddingSpace, Modality};

#[derive(Debug, Parser)]
#[command(
    name = "brainsem",
    version,
    about = "Interpret embeddings through brain-based semantic features"
)]
pub struct Cli {
    /// Seed for every random choice (splits, initialization).
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(untagged)]
pub enum Command {
    /// Correlate an embedding space with each brain property.
    Rsa(RsaArgs),
    /// Predict perceptual vectors by ridge regression and fuse them.
    FuseRidge(FuseRidgeArgs),
    /// Fit an affine map from embeddings to brain attributes.
    MapFit(MapFitArgs),
    /// Map embeddings into brain attribute space.
    MapApply(MapApplyArgs),
    /// Train a phrase composition model.
    ComposeTrain(ComposeTrainArgs),
    /// Rank-quartile evaluation of a composition model.
    ComposeEval(ComposeEvalArgs),
    /// Property differences between nouns and their phrases.
    AnalyzePropdiff(PropdiffArgs),
    /// Per-attribute brain profiles of words and phrases.
    Profile(ProfileArgs),
    /// Nearest neighbours by cosine similarity.
    Neighbors(NeighborsArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Rsa(_) => "rsa",
            Command::FuseRidge(_) => "fuse-ridge",
            Command::MapFit(_) => "map-fit",
            Command::MapApply(_) => "map-apply",
            Command::ComposeTrain(_) => "compose-train",
            Command::ComposeEval(_) => "compose-eval",
            Command::AnalyzePropdiff(_) => "analyze-propdiff",
            Command::Profile(_) => "profile",
            Command::Neighbors(_) => "neighbors",
        }
    }

    fn out_dir(&self) -> &Path {
        match self {
            Command::Rsa(a) => &a.out,
            Command::FuseRidge(a) => &a.out,
            Command::MapFit(a) => &a.out,
            Command::MapApply(a) => &a.out,
            Command::ComposeTrain(a) => &a.out,
            Command::ComposeEval(a) => &a.out,
            Command::AnalyzePropdiff(a) => &a.out,
            Command::Profile(a) => &a.out,
            Command::Neighbors(a) => &a.out,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct RsaArgs {
    /// Embeddings in word2vec text format.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Modality label of the embeddings.
    #[arg(long, default_value_t = Modality::Linguistic)]
    pub modality: Modality,
    /// Brain ratings CSV.
    #[arg(long)]
    pub brain: PathBuf,
    /// Property/attribute schema CSV.
    #[arg(long)]
    pub schema: PathBuf,
    /// Word subset: all, concrete or abstract.
    #[arg(long, default_value_t = Subset::All)]
    pub subset: Subset,
    /// Correlation: pearson or spearman.
    #[arg(long, default_value_t = CorrelationMethod::Pearson)]
    pub method: CorrelationMethod,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FuseRidgeArgs {
    /// Linguistic embeddings (word2vec text).
    #[arg(long)]
    pub linguistic: PathBuf,
    /// Perceptual embeddings (word2vec text) covering part of the vocabulary.
    #[arg(long)]
    pub perceptual: PathBuf,
    /// Modality of the perceptual embeddings: visual or auditory.
    #[arg(long, default_value_t = Modality::Visual)]
    pub modality: Modality,
    /// Ridge penalty.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Keep only this many principal components of the predictions.
    #[arg(long)]
    pub reduce_to: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MapFitArgs {
    /// Embeddings (word2vec text).
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Brain ratings CSV.
    #[arg(long)]
    pub brain: PathBuf,
    /// Property/attribute schema CSV.
    #[arg(long)]
    pub schema: PathBuf,
    /// Fixed ridge penalty; without it the default grid is searched.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Share of aligned words used for fitting.
    #[arg(long, default_value_t = mapping::DEFAULT_TRAIN_FRAC)]
    pub train_frac: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MapApplyArgs {
    /// Brain map header written by map-fit.
    #[arg(long)]
    pub map: PathBuf,
    /// Embeddings to map (word2vec text).
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Clip predictions to the 0-6 rating range.
    #[arg(long)]
    pub clamp: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ComposeTrainArgs {
    /// Composition model: addition, multiplication, w-addition, matrix or dan.
    #[arg(long)]
    pub model: CompositionKind,
    /// Word embeddings (word2vec text).
    #[arg(long)]
    pub words: PathBuf,
    /// Gold phrase embeddings (word2vec text, tokens `adj_noun`).
    #[arg(long)]
    pub phrases: PathBuf,
    /// Phrase lexicon TSV.
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Penalty on the squared parameter norm.
    #[arg(long, default_value_t = TrainConfig::default().lambda1)]
    pub lambda1: f64,
    /// Initial gradient-descent step size.
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub learning_rate: f64,
    /// Maximum number of epochs.
    #[arg(long, default_value_t = TrainConfig::default().max_epochs)]
    pub max_epochs: usize,
    /// Epochs without development improvement before stopping.
    #[arg(long, default_value_t = TrainConfig::default().patience)]
    pub patience: usize,
    /// Fit gold phrase vectors as given instead of unit-normalized.
    #[arg(long)]
    pub raw_gold: bool,
    /// Drop lexicon entries lacking a word or gold vector instead of failing.
    #[arg(long)]
    pub drop_missing: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ComposeEvalArgs {
    /// Model header written by compose-train.
    #[arg(long)]
    pub model_file: PathBuf,
    /// Word embeddings (word2vec text).
    #[arg(long)]
    pub words: PathBuf,
    /// Gold phrase embeddings; every vector competes in the ranking.
    #[arg(long)]
    pub phrases: PathBuf,
    /// Phrase lexicon TSV.
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Modality label reported with the quartiles.
    #[arg(long, default_value_t = Modality::Linguistic)]
    pub modality: Modality,
    /// Evaluate every lexicon phrase instead of the recorded test split.
    #[arg(long)]
    pub all_phrases: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PropdiffArgs {
    /// Brain map header written by map-fit.
    #[arg(long)]
    pub map: PathBuf,
    /// Word embeddings (word2vec text).
    #[arg(long)]
    pub words: PathBuf,
    /// Tagged phrase lexicon TSV.
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Gold phrase embeddings; mutually exclusive with --model-file.
    #[arg(long, conflicts_with = "model_file", required_unless_present = "model_file")]
    pub phrases: Option<PathBuf>,
    /// Composition model header; phrases are composed from words.
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    /// Grouping: adjective, noun, cross or all.
    #[arg(long, default_value_t = Grouping::Adjective)]
    pub grouping: Grouping,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ProfileArgs {
    /// Brain map header written by map-fit.
    #[arg(long)]
    pub map: PathBuf,
    /// Embeddings holding words and gold phrases (word2vec text).
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Comma-separated tokens profiled from their own vectors.
    #[arg(long, value_delimiter = ',')]
    pub tokens: Vec<String>,
    /// Comma-separated phrases profiled from composed vectors.
    #[arg(long, value_delimiter = ',', requires = "model_file")]
    pub composed: Vec<String>,
    /// Composition model header used for --composed.
    #[arg(long, requires = "lexicon")]
    pub model_file: Option<PathBuf>,
    /// Phrase lexicon TSV used for --composed.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Clip values to the 0-6 rating range.
    #[arg(long)]
    pub clamp: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct NeighborsArgs {
    /// Embeddings (word2vec text).
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Comma-separated query tokens.
    #[arg(long, value_delimiter = ',', required = true)]
    pub query: Vec<String>,
    /// Neighbours per query.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Run metadata written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub flags: serde_json::Value,
    pub seed: u64,
    /// SHA-256 of every file read, keyed by path.
    pub input_digests: BTreeMap<String, String>,
    pub version: String,
    pub started_at: String,
    pub duration_ms: u128,
    pub outputs: Vec<String>,
}

/// Inputs read and outputs produced by one command.
#[derive(Default)]
struct Run {
    inputs: BTreeMap<String, String>,
    outputs: Vec<(String, Vec<u8>)>,
}

impl Run {
    fn read(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs
            .insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    fn embeddings(&mut self, path: &Path, modality: Modality) -> Result<EmbeddingSpace> {
        self.read(path)?;
        ingest::load_embeddings_as(path, modality)
    }

    fn lexicon(&mut self, path: &Path) -> Result<PhraseLexicon> {
        self.read(path)?;
        ingest::load_phrases(path)
    }

    fn brain(&mut self, data: &Path, schema: &Path) -> Result<crate::space::BrainSemanticSpace> {
        self.read(data)?;
        self.read(schema)?;
        ingest::load_brain_space(data, schema)
    }

    fn brain_map(&mut self, header_path: &Path) -> Result<BrainMap> {
        self.read(header_path)?;
        let header: BrainMapHeader = ingest::load_json(header_path)?;
        let weights_path = sibling(header_path, "_weights.csv");
        self.read(&weights_path)?;
        BrainMap::from_parts(header, ingest::load_weights(&weights_path)?)
    }

    fn composition_model(&mut self, header_path: &Path) -> Result<(CompositionModel, ModelHeader)> {
        self.read(header_path)?;
        let header: ModelHeader = ingest::load_json(header_path)?;
        let dir = header_path.parent().unwrap_or(Path::new(""));
        let mut params = Vec::with_capacity(header.param_files.len());
        for name in &header.param_files {
            let path = dir.join(name);
            self.read(&path)?;
            params.push(ingest::load_weights(&path)?);
        }
        Ok((CompositionModel::new(header.kind, header.dim, params)?, header))
    }

    fn emit(&mut self, name: &str, bytes: Vec<u8>) {
        self.outputs.push((name.to_string(), bytes));
    }
}

/// `dir/stem.json` -> `dir/stem{suffix}`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Parses `argv` and runs the command. Returns the process exit code:
/// 0 on success, 1 on a domain error, 2 on a usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.threads {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(Error::Data(format!("cannot start {n} threads: {e}"))),
        },
        Some(_) => {
            eprintln!("error: --threads must be positive");
            return 2;
        }
        None => execute(&cli),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Runs the parsed command and writes its outputs and manifest.
pub fn execute(cli: &Cli) -> Result<()> {
    let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    let clock = Instant::now();
    let mut run = Run::default();
    match &cli.command {
        Command::Rsa(a) => rsa_cmd(a, &mut run)?,
        Command::FuseRidge(a) => fuse_ridge_cmd(a, &mut run)?,
        Command::MapFit(a) => map_fit_cmd(a, cli.seed, &mut run)?,
        Command::MapApply(a) => map_apply_cmd(a, &mut run)?,
        Command::ComposeTrain(a) => compose_train_cmd(a, cli.seed, &mut run)?,
        Command::ComposeEval(a) => compose_eval_cmd(a, &mut run)?,
        Command::AnalyzePropdiff(a) => propdiff_cmd(a, &mut run)?,
        Command::Profile(a) => profile_cmd(a, &mut run)?,
        Command::Neighbors(a) => neighbors_cmd(a, &mut run)?,
    }
    let out = cli.command.out_dir();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (name, bytes) in &run.outputs {
        ingest::write_atomic(&out.join(name), bytes)?;
    }
    let manifest = Manifest {
        command: cli.command.name().to_string(),
        flags: serde_json::to_value(&cli.command).expect("flags serialize"),
        seed: cli.seed,
        input_digests: run.inputs,
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        duration_ms: clock.elapsed().as_millis(),
        outputs: run.outputs.iter().map(|(n, _)| n.clone()).collect(),
    };
    ingest::write_atomic(&out.join("manifest.json"), &ingest::to_json_bytes(&manifest))
}

fn rsa_cmd(a: &RsaArgs, run: &mut Run) -> Result<()> {
    let emb = run.embeddings(&a.embeddings, a.modality)?;
    let brain = run.brain(&a.brain, &a.schema)?;
    let profile = rsa::rsa_profile(&emb, &brain, a.subset, a.method)?;
    run.emit("rsa_profile.csv", profile.to_csv());
    Ok(())
}

fn fuse_ridge_cmd(a: &FuseRidgeArgs, run: &mut Run) -> Result<()> {
    let ling = run.embeddings(&a.linguistic, Modality::Linguistic)?;
    let perc = run.embeddings(&a.perceptual, a.modality)?;
    let (fused, map) = fusion::build_ridge_multimodal(&ling, &perc, a.lambda, a.reduce_to)?;
    run.emit("fused.txt", ingest::embeddings_to_string(&fused).into_bytes());
    run.emit("ridge_header.json", ingest::to_json_bytes(&map.header()));
    run.emit("ridge_weights.csv", ingest::weights_to_csv(&map.weights));
    if let Some(r) = &map.reduction {
        run.emit("ridge_basis.csv", ingest::weights_to_csv(&r.basis));
    }
    Ok(())
}

/// Reloads a ridge map saved by `fuse-ridge` from its output directory.
pub fn load_ridge_map(dir: &Path) -> Result<RidgeMap> {
    let header: fusion::RidgeHeader = ingest::load_json(&dir.join("ridge_header.json"))?;
    let weights = ingest::load_weights(&dir.join("ridge_weights.csv"))?;
    let basis = match header.reduce_to {
        Some(_) => Some(ingest::load_weights(&dir.join("ridge_basis.csv"))?),
        None => None,
    };
    RidgeMap::from_parts(header, weights, basis)
}

fn map_fit_cmd(a: &MapFitArgs, seed: u64, run: &mut Run) -> Result<()> {
    let emb = run.embeddings(&a.embeddings, Modality::Linguistic)?;
    let brain = run.brain(&a.brain, &a.schema)?;
    let (map, grid) = match a.lambda {
        Some(lambda) => {
            let map = mapping::fit_brain_map(&emb, &brain, a.train_frac, lambda, seed)?;
            let point = mapping::GridPoint {
                lambda,
                dev_mse: Some(map.dev_mse),
            };
            (map, vec![point])
        }
        None => mapping::tune_brain_map(&emb, &brain, a.train_frac, &mapping::LAMBDA_GRID, seed)?,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lambda", "dev_mse", "selected"])
        .expect("in-memory write");
    for p in &grid {
        let mse = p.dev_mse.map(format_float).unwrap_or_default();
        let selected = if p.lambda == map.lambda { "1" } else { "0" };
        w.write_record([format_float(p.lambda), mse, selected.to_string()])
            .expect("in-memory write");
    }
    run.emit("brain_map.json", ingest::to_json_bytes(&map.header()));
    run.emit("brain_map_weights.csv", ingest::weights_to_csv(&map.weights));
    run.emit("lambda_grid.csv", w.into_inner().expect("in-memory write"));
    Ok(())
}

fn map_apply_cmd(a: &MapApplyArgs, run: &mut Run) -> Result<()> {
    let map = run.brain_map(&a.map)?;
    let emb = run.embeddings(&a.embeddings, Modality::Linguistic)?;
    let row_labels: Vec<String> = emb.tokens().map(str::to_string).collect();
    let mut values = nalgebra::DMatrix::zeros(row_labels.len(), map.attribute_dim());
    for (i, t) in row_labels.iter().enumerate() {
        let mut mapped = mapping::map_to_brain(&map, emb.vector(t)?).map_err(|e| Error::Data(format!("`{t}`: {e}")))?;
        if a.clamp {
            mapped = mapping::clamp_ratings(&mapped);
        }
        values.set_row(i, &nalgebra::RowDVector::from_vec(mapped));
    }
    let matrix = LabeledMatrix {
        row_labels,
        col_labels: map.schema.attribute_names().map(str::to_string).collect(),
        values,
    };
    run.emit("brain_predictions.csv", ingest::labeled_matrix_to_csv(&matrix));
    Ok(())
}

fn compose_train_cmd(a: &ComposeTrainArgs, seed: u64, run: &mut Run) -> Result<()> {
    let words = run.embeddings(&a.words, Modality::Linguistic)?;
    let gold = run.embeddings(&a.phrases, words.modality())?;
    let mut lexicon = run.lexicon(&a.lexicon)?;
    if a.drop_missing {
        let usable: Vec<String> = lexicon
            .entries()
            .iter()
            .filter(|e| words.contains(&e.adjective) && words.contains(&e.noun) && gold.contains(&e.phrase))
            .map(|e| e.phrase.clone())
            .collect();
        lexicon = lexicon.subset(&usable);
    }
    let cfg = TrainConfig {
        lambda1: a.lambda1,
        learning_rate: a.learning_rate,
        max_epochs: a.max_epochs,
        patience: a.patience,
        seed,
        normalize_gold: !a.raw_gold,
        ..TrainConfig::default()
    };
    let (model, report) = composition::train(a.model, &words, &gold, &lexicon, &cfg)?;
    let param_files: Vec<String> = a.model.param_names().iter().map(|n| format!("{n}.csv")).collect();
    for (name, w) in param_files.iter().zip(model.params()) {
        run.emit(name, ingest::weights_to_csv(w));
    }
    let header = ModelHeader {
        kind: model.kind(),
        dim: model.dim(),
        config: cfg,
        best_epoch: report.best_epoch,
        epochs_run: report.epochs.len(),
        final_train_mse: report.train_mse,
        final_dev_mse: report.dev_mse,
        final_test_mse: report.test_mse,
        param_files,
        split: report.split.clone(),
    };
    run.emit("model.json", ingest::to_json_bytes(&header));
    run.emit("train_report.csv", report.to_csv());
    Ok(())
}

/// Layout of `quartiles.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileSummary {
    pub model: CompositionKind,
    pub modality: Modality,
    pub q1: usize,
    pub q2: usize,
    pub q3: usize,
    pub n_test: usize,
    pub zero_vector_count: usize,
}

fn compose_eval_cmd(a: &ComposeEvalArgs, run: &mut Run) -> Result<()> {
    let (model, header) = run.composition_model(&a.model_file)?;
    let words = run.embeddings(&a.words, a.modality)?;
    let gold = run.embeddings(&a.phrases, a.modality)?;
    let lexicon = run.lexicon(&a.lexicon)?;
    let test: Vec<String> = if a.all_phrases {
        lexicon.entries().iter().map(|e| e.phrase.clone()).collect()
    } else {
        header.split.test.clone()
    };
    if test.is_empty() {
        return Err(Error::Data("no phrases to evaluate".into()));
    }
    let (ranks, q) = evaluation::evaluate_ranks(&model, &words, &gold, &lexicon, &test)?;
    let summary = QuartileSummary {
        model: model.kind(),
        modality: a.modality,
        q1: q.q1,
        q2: q.q2,
        q3: q.q3,
        n_test: q.n_test,
        zero_vector_count: q.zero_vector_count,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["phrase", "rank"]).expect("in-memory write");
    for (p, r) in test.iter().zip(&ranks) {
        w.write_record([p.clone(), r.map(|r| r.to_string()).unwrap_or_default()])
            .expect("in-memory write");
    }
    run.emit("quartiles.json", ingest::to_json_bytes(&summary));
    run.emit("ranks.csv", w.into_inner().expect("in-memory write"));
    Ok(())
}

fn propdiff_cmd(a: &PropdiffArgs, run: &mut Run) -> Result<()> {
    let map = run.brain_map(&a.map)?;
    let words = run.embeddings(&a.words, Modality::Linguistic)?;
    let lexicon = run.lexicon(&a.lexicon)?;
    let report = match (&a.phrases, &a.model_file) {
        (Some(p), _) => {
            let gold = run.embeddings(p, words.modality())?;
            evaluation::category_property_diff(&map, &words, PhraseSource::Gold(&gold), &lexicon, a.grouping)?
        }
        (None, Some(m)) => {
            let (model, _) = run.composition_model(m)?;
            evaluation::category_property_diff(&map, &words, PhraseSource::Composed(&model), &lexicon, a.grouping)?
        }
        (None, None) => return Err(Error::Data("either --phrases or --model-file is required".into())),
    };
    run.emit("propdiff.csv", report.to_csv());
    run.emit("propdiff_summary.json", ingest::to_json_bytes(&report));
    Ok(())
}

fn profile_cmd(a: &ProfileArgs, run: &mut Run) -> Result<()> {
    let map = run.brain_map(&a.map)?;
    let emb = run.embeddings(&a.embeddings, Modality::Linguistic)?;
    let mut vectors = Vec::new();
    for t in &a.tokens {
        let token = crate::space::normalize_token(t).map_err(Error::Data)?;
        vectors.push((token.clone(), emb.vector(&token)?.to_vec()));
    }
    if !a.composed.is_empty() {
        let (model, _) = run.composition_model(a.model_file.as_deref().expect("clap requires --model-file"))?;
        let lexicon = run.lexicon(a.lexicon.as_deref().expect("clap requires --lexicon"))?;
        let phrases: Vec<String> = a
            .composed
            .iter()
            .map(|p| crate::space::normalize_token(p).map_err(Error::Data))
            .collect::<Result<_>>()?;
        let sub = lexicon.subset(&phrases);
        if let Some(missing) = phrases.iter().find(|p| sub.entry(p).is_none()) {
            return Err(Error::Alignment(format!("phrase `{missing}` not in lexicon")));
        }
        let composed = composition::predict_phrases(&model, &emb, &sub)?;
        for p in &phrases {
            vectors.push((format!("{p}:{}", model.kind()), composed.vector(p)?.to_vec()));
        }
    }
    if vectors.is_empty() {
        return Err(Error::Data("nothing to profile; pass --tokens or --composed".into()));
    }
    let rows = evaluation::attribute_profile(&map, &vectors, a.clamp)?;
    run.emit("profile.csv", evaluation::profile_to_csv(&rows));
    Ok(())
}

fn neighbors_cmd(a: &NeighborsArgs, run: &mut Run) -> Result<()> {
    let emb = run.embeddings(&a.embeddings, Modality::Linguistic)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["query", "rank", "neighbor", "similarity"])
        .expect("in-memory write");
    for q in &a.query {
        let q = crate::space::normalize_token(q).map_err(Error::Data)?;
        for (i, (t, s)) in evaluation::nearest_neighbors(&emb, &q, a.k)?.into_iter().enumerate() {
            w.write_record([q.clone(), (i + 1).to_string(), t, format_float(s)])
                .expect("in-memory write");
        }
    }
    run.emit("neighbors.csv", w.into_inner().expect("in-memory write"));
    Ok(())
}
