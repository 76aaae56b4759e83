//! The `asc-lens` command line.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::archive::{read_archive, slice_role, ActivationArchive, TokenRole};
use crate::attention::attention_sweep;
use crate::dataset::{generate_dataset, validate_dataset, SentenceSet, SlotVocabulary};
use crate::error::{Error, Result};
use crate::fixtures::{synth_archive, FixtureSpec};
use crate::gdv::gdv_sweep;
use crate::probe::{probe_sweep, write_accuracy_csv, write_confusion_csv, ProbeConfig};
use crate::projection::{classical_mds, pairwise_distances, tsne, Embedding2D, TsneParams};
use crate::report::{
    render_directory, ATTENTION_HEAD_MEAN_CSV, ATTENTION_STATS_CSV, GDV_CSV, PROBE_ACCURACY_CSV, PROBE_CONFUSION_CSV,
};

pub const DEFAULT_ROLES: [TokenRole; 5] = [
    TokenRole::Cls,
    TokenRole::Det,
    TokenRole::Subj,
    TokenRole::Verb,
    TokenRole::Obj,
];

pub const DEFAULT_ATTENTION_ROLES: [TokenRole; 6] = [
    TokenRole::Cls,
    TokenRole::Det,
    TokenRole::Subj,
    TokenRole::Verb,
    TokenRole::Obj,
    TokenRole::Sep,
];

pub const KL_HISTORY_CSV: &str = "kl_history.csv";
pub const RUN_JSON: &str = "run.json";

/// `all` or a comma-separated list of layer indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LayerSelection {
    All,
    List(Vec<usize>),
}

impl LayerSelection {
    /// Resolves against `0..=max`.
    pub fn resolve(&self, max: usize) -> Result<Vec<usize>> {
        match self {
            LayerSelection::All => Ok((0..=max).collect()),
            LayerSelection::List(v) => {
                if let Some(&l) = v.iter().find(|&&l| l > max) {
                    return Err(Error::LayerOutOfRange { layer: l, min: 0, max });
                }
                Ok(v.clone())
            }
        }
    }
}

impl FromStr for LayerSelection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(LayerSelection::All);
        }
        let v = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad layer index `{p}`")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if v.is_empty() {
            return Err("empty layer list".into());
        }
        Ok(LayerSelection::List(v))
    }
}

impl fmt::Display for LayerSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSelection::All => f.write_str("all"),
            LayerSelection::List(v) => {
                let parts: Vec<String> = v.iter().map(|l| l.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

impl TryFrom<String> for LayerSelection {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<LayerSelection> for String {
    fn from(l: LayerSelection) -> String {
        l.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mds,
    Tsne,
}

#[derive(Debug, Parser)]
#[command(
    name = "asc-lens",
    version,
    about = "Argument structure construction analysis of encoder activations"
)]
struct Cli {
    /// Cap on worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate or validate sentence sets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Write a synthetic archive from a fixture spec.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generalized discrimination value per layer and role.
    Gdv {
        #[command(flatten)]
        common: Common,
    },
    /// 2-D projections per layer for one role.
    Project {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        role: TokenRole,
        #[arg(long, default_value = "all")]
        layers: LayerSelection,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        perplexity: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Linear probes per layer and role.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Attention-mass F and FDR per layer, head and role.
    Attention {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long, value_delimiter = ',')]
        roles: Option<Vec<TokenRole>>,
        #[arg(long)]
        include_self: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render SVG figures from analysis CSVs.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline from a config file; flags override config values.
    All(AllArgs),
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    Generate {
        /// Slot vocabulary JSON; the built-in vocabulary when absent.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    Validate {
        #[arg(long = "in")]
        input: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    archive: PathBuf,
    #[arg(long, value_delimiter = ',')]
    roles: Option<Vec<TokenRole>>,
    #[arg(long, default_value = "all")]
    layers: LayerSelection,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AllArgs {
    /// TOML file, or JSON (a previous run.json is accepted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Archive directory.
    #[arg(long)]
    archive: Option<PathBuf>,
    /// Output directory for every CSV, SVG and run.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Roles for GDV, projections and probes [default: CLS,DET,SUBJ,VERB,OBJ].
    #[arg(long, value_delimiter = ',')]
    roles: Option<Vec<TokenRole>>,
    /// Roles for the attention statistics [default: CLS,DET,SUBJ,VERB,OBJ,SEP].
    #[arg(long, value_delimiter = ',')]
    attention_roles: Option<Vec<TokenRole>>,
    /// `all` or comma-separated hidden layers for GDV and probes.
    #[arg(long)]
    layers: Option<LayerSelection>,
    /// `all` or comma-separated hidden layers to project.
    #[arg(long)]
    projection_layers: Option<LayerSelection>,
    /// Projection methods [default: mds,tsne].
    #[arg(long, value_enum, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Seed for fold assignment, SGD order and t-SNE initialization [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Cross-validation folds [default: 5].
    #[arg(long)]
    folds: Option<usize>,
    /// t-SNE perplexity [default: 30].
    #[arg(long)]
    perplexity: Option<f64>,
    /// t-SNE iterations [default: 1000].
    #[arg(long)]
    tsne_iters: Option<usize>,
    /// Count a token's attention to itself in its received mass.
    #[arg(long)]
    include_self: bool,
}

/// Pipeline settings as read from a TOML or JSON file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub archive: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub roles: Option<Vec<TokenRole>>,
    pub attention_roles: Option<Vec<TokenRole>>,
    pub layers: Option<LayerSelection>,
    pub projection_layers: Option<LayerSelection>,
    pub methods: Option<Vec<Method>>,
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    pub perplexity: Option<f64>,
    pub tsne_iters: Option<usize>,
    pub include_self: Option<bool>,
}

/// Fully resolved pipeline settings, as recorded in `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedRun {
    pub archive: PathBuf,
    pub out: PathBuf,
    pub roles: Vec<TokenRole>,
    pub attention_roles: Vec<TokenRole>,
    pub layers: LayerSelection,
    pub projection_layers: LayerSelection,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub folds: usize,
    pub perplexity: f64,
    pub tsne_iters: usize,
    pub include_self: bool,
}

#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    started_unix: u64,
    model_id: &'a str,
    seeds: Seeds,
    config: &'a ResolvedRun,
}

#[derive(Debug, Serialize)]
struct Seeds {
    probe: u64,
    tsne: u64,
}

impl RunConfig {
    /// Reads TOML, or JSON when the extension is `.json`. A `run.json` written by
    /// a previous run is accepted; its `config` object is used.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg: RunConfig = if is_json {
            let mut v: serde_json::Value = serde_json::from_str(&text).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
            if let Some(inner) = v.get_mut("config") {
                v = inner.take();
            }
            serde_json::from_value(v).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.archive, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn resolve(self) -> Result<ResolvedRun> {
        let defaults = TsneParams::default();
        Ok(ResolvedRun {
            archive: self.archive.ok_or_else(|| Error::Config("no archive given".into()))?,
            out: self
                .out
                .ok_or_else(|| Error::Config("no output directory given".into()))?,
            roles: self.roles.unwrap_or_else(|| DEFAULT_ROLES.to_vec()),
            attention_roles: self.attention_roles.unwrap_or_else(|| DEFAULT_ATTENTION_ROLES.to_vec()),
            layers: self.layers.unwrap_or(LayerSelection::All),
            projection_layers: self.projection_layers.unwrap_or(LayerSelection::All),
            methods: self.methods.unwrap_or_else(|| vec![Method::Mds, Method::Tsne]),
            seed: self.seed.unwrap_or(0),
            folds: self.folds.unwrap_or(ProbeConfig::default().folds),
            perplexity: self.perplexity.unwrap_or(defaults.perplexity),
            tsne_iters: self.tsne_iters.unwrap_or(defaults.iters),
            include_self: self.include_self.unwrap_or(false),
        })
    }
}

/// Parses `args` (program name first) and executes. Returns the process exit
/// code: 0 success, 1 validation or runtime failure, 2 usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let pool = match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Dataset(DatasetCommand::Generate {
            vocab,
            per_class,
            seed,
            out,
        }) => {
            let vocab = match vocab {
                Some(p) => SlotVocabulary::from_json_file(&p)?,
                None => SlotVocabulary::default(),
            };
            generate_dataset(&vocab, per_class, seed)?.write(&out)?;
            Ok(0)
        }
        Command::Dataset(DatasetCommand::Validate { input, json }) => {
            let report = validate_dataset(&SentenceSet::read(&input)?);
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                for c in &report.constructions {
                    println!(
                        "{}: {} sentences, {} schema violations, {} duplicate texts",
                        c.label,
                        c.count,
                        c.schema_violations.len(),
                        c.duplicate_texts.len()
                    );
                }
                println!(
                    "balanced={} schema_conformant={} unique_texts={}",
                    report.balanced, report.schema_conformant, report.unique_texts
                );
                println!("{}", if report.pass { "PASS" } else { "FAIL" });
            }
            Ok(if report.pass { 0 } else { 1 })
        }
        Command::Synth { config, out } => {
            synth_archive(&FixtureSpec::from_json_file(&config)?)?.write(&out)?;
            Ok(0)
        }
        Command::Gdv { common } => {
            let archive = read_archive(&common.archive)?;
            let roles = common.roles.unwrap_or_else(|| DEFAULT_ROLES.to_vec());
            let layers = common.layers.resolve(archive.n_layers())?;
            create_dir(&common.out)?;
            run_gdv(&archive, &roles, &layers, &common.out)?;
            Ok(0)
        }
        Command::Project {
            method,
            archive,
            role,
            layers,
            out,
            perplexity,
            seed,
            iters,
        } => {
            let archive = read_archive(&archive)?;
            let layers = layers.resolve(archive.n_layers())?;
            let mut params = TsneParams::with_seed(seed);
            if let Some(p) = perplexity {
                params.perplexity = p;
            }
            if let Some(i) = iters {
                params.iters = i;
            }
            create_dir(&out)?;
            let mut kl = Vec::new();
            run_projection(&archive, method, &[role], &layers, &params, &out, &mut kl)?;
            if method == Method::Tsne {
                write_file(&out.join(KL_HISTORY_CSV), |w| write_kl(w, &kl))?;
            }
            Ok(0)
        }
        Command::Probe { common, folds, seed } => {
            let archive = read_archive(&common.archive)?;
            let roles = common.roles.unwrap_or_else(|| DEFAULT_ROLES.to_vec());
            let layers = common.layers.resolve(archive.n_layers())?;
            let config = ProbeConfig {
                folds,
                ..ProbeConfig::with_seed(seed)
            };
            create_dir(&common.out)?;
            run_probe(&archive, &roles, &layers, &config, &common.out)?;
            Ok(0)
        }
        Command::Attention {
            archive,
            roles,
            include_self,
            out,
        } => {
            let archive = read_archive(&archive)?;
            let roles = roles.unwrap_or_else(|| DEFAULT_ATTENTION_ROLES.to_vec());
            create_dir(&out)?;
            run_attention(&archive, &roles, include_self, &out)?;
            Ok(0)
        }
        Command::Report { input, out } => {
            render_directory(&input, &out)?;
            Ok(0)
        }
        Command::All(args) => run_all(args),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    body(&mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn run_gdv(archive: &ActivationArchive, roles: &[TokenRole], layers: &[usize], out: &Path) -> Result<()> {
    gdv_sweep(archive, roles, layers)?.save(&out.join(GDV_CSV))
}

fn run_probe(
    archive: &ActivationArchive,
    roles: &[TokenRole],
    layers: &[usize],
    config: &ProbeConfig,
    out: &Path,
) -> Result<()> {
    let results = probe_sweep(archive, roles, layers, config)?;
    let acc = out.join(PROBE_ACCURACY_CSV);
    write_file(&acc, |w| {
        write_accuracy_csv(&results, w).map_err(|e| Error::io(&acc, e))
    })?;
    let conf = out.join(PROBE_CONFUSION_CSV);
    write_file(&conf, |w| {
        write_confusion_csv(&results, w).map_err(|e| Error::io(&conf, e))
    })
}

fn run_attention(archive: &ActivationArchive, roles: &[TokenRole], include_self: bool, out: &Path) -> Result<()> {
    let stats = attention_sweep(archive, roles, include_self)?;
    let p = out.join(ATTENTION_STATS_CSV);
    write_file(&p, |w| stats.write_stats_csv(w).map_err(|e| Error::io(&p, e)))?;
    let p = out.join(ATTENTION_HEAD_MEAN_CSV);
    write_file(&p, |w| stats.write_head_mean_csv(w).map_err(|e| Error::io(&p, e)))
}

type KlRows = Vec<(TokenRole, usize, Vec<(usize, f64)>)>;

/// Writes `{method}_{ROLE}_L{layer}.csv` per cell; t-SNE KL checkpoints are
/// appended to `kl`.
fn run_projection(
    archive: &ActivationArchive,
    method: Method,
    roles: &[TokenRole],
    layers: &[usize],
    params: &TsneParams,
    out: &Path,
    kl: &mut KlRows,
) -> Result<()> {
    for &role in roles {
        for &layer in layers {
            let slice = slice_role(archive, role, layer)?;
            let embedding: Embedding2D = match method {
                Method::Mds => classical_mds(&pairwise_distances(slice.features.view()), 2)?,
                Method::Tsne => {
                    let r = tsne(slice.features.view(), params)?;
                    kl.push((role, layer, r.kl_history.clone()));
                    r.embedding
                }
            };
            let name = format!("{}_{role}_L{layer}.csv", embedding.method.name());
            write_file(&out.join(name), |w| {
                embedding.write_csv(w, &slice.sentence_ids, &slice.labels)
            })?;
        }
    }
    Ok(())
}

fn write_kl(w: &mut Vec<u8>, rows: &KlRows) -> Result<()> {
    let io = |e| Error::io(KL_HISTORY_CSV, e);
    writeln!(w, "role,layer,iteration,kl").map_err(io)?;
    for (role, layer, hist) in rows {
        for (it, v) in hist {
            writeln!(w, "{role},{layer},{it},{v:.6}").map_err(io)?;
        }
    }
    Ok(())
}

fn run_all(args: AllArgs) -> Result<i32> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! override_opt {
        ($($f:ident),*) => { $( if args.$f.is_some() { cfg.$f = args.$f.clone(); } )* };
    }
    override_opt!(
        archive,
        out,
        roles,
        attention_roles,
        layers,
        projection_layers,
        methods,
        seed,
        folds,
        perplexity,
        tsne_iters
    );
    if args.include_self {
        cfg.include_self = Some(true);
    }
    let mut run = cfg.resolve()?;
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);

    let archive = read_archive(&run.archive)?;
    create_dir(&run.out)?;
    // absolute paths keep run.json replayable from any working directory
    for p in [&mut run.archive, &mut run.out] {
        *p = fs::canonicalize(&*p).map_err(|e| Error::io(&*p, e))?;
    }
    let out = &run.out;
    let layers = run.layers.resolve(archive.n_layers())?;
    let projection_layers = run.projection_layers.resolve(archive.n_layers())?;

    run_gdv(&archive, &run.roles, &layers, out)?;

    let params = TsneParams {
        perplexity: run.perplexity,
        iters: run.tsne_iters,
        ..TsneParams::with_seed(run.seed)
    };
    let mut kl = Vec::new();
    for &method in &run.methods {
        run_projection(&archive, method, &run.roles, &projection_layers, &params, out, &mut kl)?;
    }
    if run.methods.contains(&Method::Tsne) {
        write_file(&out.join(KL_HISTORY_CSV), |w| write_kl(w, &kl))?;
    }

    let probe = ProbeConfig {
        folds: run.folds,
        ..ProbeConfig::with_seed(run.seed)
    };
    run_probe(&archive, &run.roles, &layers, &probe, out)?;
    run_attention(&archive, &run.attention_roles, run.include_self, out)?;
    render_directory(out, out)?;

    let record = RunRecord {
        tool: "asc-lens",
        version: env!("CARGO_PKG_VERSION"),
        started_unix,
        model_id: &archive.manifest().model_id,
        seeds: Seeds {
            probe: run.seed,
            tsne: run.seed,
        },
        config: &run,
    };
    let json = serde_json::to_string_pretty(&record).expect("run record serializes");
    let p = out.join(RUN_JSON);
    fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
    Ok(0)
}
