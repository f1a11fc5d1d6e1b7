use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use clap::{Args, ValueEnum};
use tracing::{info, warn};

use capsynth::active::{
    prepare_splits, ActiveError, BoardLabeler, Campaign, CampaignConfig, Labeler, LabelerMode, OracleLabeler,
};
use capsynth::adapter::{
    Adapter, AdapterError, Gateway, HttpAdapter, HttpAdapterOptions, LabelBoard, StubAdapter, StubConfig,
};
use capsynth::dataset::{decode_png, read_manifest, DatasetError, DatasetManifest, Split};
use capsynth::metrics::{group_protocol_report, to_gray, MetricError, Pairing};
use capsynth::render::{generate_dataset, GenerateError};
use capsynth::scheme::{named_scheme, SchemeConfig, SchemeError};
use capsynth::study::{run_mechanism_study, StudyCounts, StudyError};
use capsynth_service::{adapter_router, labeling_router, serve_until_ctrl_c, spawn_server, LabelingState, Router};

/// Exit codes: 2 bad input or config, 3 adapter failure, 4 I/O or data error.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Remote(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Remote(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Remote(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<SchemeError> for CliError {
    fn from(e: SchemeError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<AdapterError> for CliError {
    fn from(e: AdapterError) -> Self {
        CliError::Remote(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<GenerateError> for CliError {
    fn from(e: GenerateError) -> Self {
        match e {
            GenerateError::Render { .. } => CliError::Config(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<StudyError> for CliError {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::Scheme(e) => e.into(),
            StudyError::Generate(e) => e.into(),
            StudyError::Adapter(e) => e.into(),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<ActiveError> for CliError {
    fn from(e: ActiveError) -> Self {
        match e {
            ActiveError::Adapter(e) => e.into(),
            ActiveError::Dataset(m) => CliError::Io(m),
            ActiveError::LabelTimeout { .. } => CliError::Remote(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))?;
    info!(path = %path.display(), "wrote");
    Ok(())
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// A built-in scheme name or a path to a scheme config.
fn load_scheme(spec: &str) -> Result<SchemeConfig, CliError> {
    let path = Path::new(spec);
    if path.is_file() {
        Ok(SchemeConfig::load(path)?)
    } else {
        Ok(named_scheme(spec)?)
    }
}

fn load_stub_config(path: Option<&Path>) -> Result<StubConfig, CliError> {
    let Some(path) = path else {
        return Ok(StubConfig::default());
    };
    let doc = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&doc);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Args)]
pub struct GenArgs {
    /// Built-in scheme (`1`..`12`, `weibo`) or scheme config path.
    #[arg(long)]
    scheme: String,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output root; the dataset goes to `<out>/<id>`.
    #[arg(long)]
    out: PathBuf,
    /// Dataset id; defaults to `<scheme>-s<seed>-n<count>`.
    #[arg(long)]
    id: Option<String>,
}

pub fn gen(a: GenArgs) -> Result<(), CliError> {
    let cfg = load_scheme(&a.scheme)?;
    let id = a
        .id
        .unwrap_or_else(|| format!("{}-s{}-n{}", cfg.scheme_id, a.seed, a.count));
    info!(
        version = env!("CARGO_PKG_VERSION"),
        scheme = %cfg.scheme_id,
        config_digest = %cfg.digest(),
        seed = a.seed,
        count = a.count,
        "generating"
    );
    create_dir(&a.out)?;
    let m = generate_dataset(&cfg, a.count, a.seed, &a.out, &id)?;
    println!("{}", m.manifest_path().display());
    Ok(())
}

pub fn preset(name: &str) -> Result<(), CliError> {
    println!("{}", named_scheme(name)?.to_json());
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum PairingArg {
    AllPairs,
    Matched,
}

#[derive(Args)]
pub struct MetricsArgs {
    /// Real samples: a dataset directory or a directory of PNG files.
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    imitation: PathBuf,
    /// Synthetic samples; sample `i` must translate imitation sample `i`.
    #[arg(long)]
    synthetic: PathBuf,
    #[arg(long, default_value_t = 10)]
    groups: usize,
    #[arg(long, value_enum, default_value = "all-pairs")]
    pairing: PairingArg,
    /// Directory for metrics_report.json and metrics_report.md.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// PNG bytes in manifest order, or sorted by file name for a bare directory.
fn load_population(dir: &Path) -> Result<Vec<Vec<u8>>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Io(format!("{}: not a directory", dir.display())));
    }
    if dir.join(capsynth::dataset::MANIFEST_FILE).exists() {
        let m = read_manifest(dir)?;
        return m.entries.iter().map(|e| m.read_png(e).map_err(Into::into)).collect();
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    files.iter().map(|p| std::fs::read(p).map_err(|e| io_err(p, e))).collect()
}

pub fn metrics(a: MetricsArgs) -> Result<(), CliError> {
    let gray = |dir: &Path| -> Result<Vec<_>, CliError> {
        load_population(dir)?
            .iter()
            .enumerate()
            .map(|(i, png)| {
                decode_png(png)
                    .map(|img| to_gray(&img))
                    .map_err(|e| CliError::Io(format!("{} sample {i}: {e}", dir.display())))
            })
            .collect()
    };
    let (real, imitation, synthetic) = (gray(&a.real)?, gray(&a.imitation)?, gray(&a.synthetic)?);
    let pairing = match a.pairing {
        PairingArg::AllPairs => Pairing::AllPairs,
        PairingArg::Matched => Pairing::Matched,
    };
    let report = group_protocol_report(&real, &imitation, &synthetic, a.groups, pairing)?;
    match a.out {
        Some(out) => {
            create_dir(&out)?;
            write_file(&out.join("metrics_report.json"), &report.to_json())?;
            write_file(&out.join("metrics_report.md"), &report.to_table())?;
        }
        None => print!("{}", report.to_table()),
    }
    Ok(())
}

/// The remote adapter at `url`, or a fresh stub.
fn connect(url: Option<&str>, stub: StubConfig) -> Result<(Gateway, Option<Arc<StubAdapter>>), CliError> {
    match url {
        Some(url) => {
            let adapter: Arc<dyn Adapter> = Arc::new(HttpAdapter::new(url, HttpAdapterOptions::default()));
            Ok((Gateway::connect(adapter)?, None))
        }
        None => {
            warn!("no adapter endpoint given; using the built-in stub");
            let stub = Arc::new(StubAdapter::new(stub));
            Ok((Gateway::connect(stub.clone())?, Some(stub)))
        }
    }
}

#[derive(Args)]
pub struct StudyArgs {
    /// Preset numbers to run.
    #[arg(long, value_delimiter = ',', default_values_t = 1..=12u32)]
    presets: Vec<u32>,
    #[arg(long, default_value_t = StudyCounts::default().train)]
    train: usize,
    #[arg(long, default_value_t = StudyCounts::default().val)]
    val: usize,
    #[arg(long, default_value_t = StudyCounts::default().test)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Adapter endpoint; without it the built-in stub is used.
    #[arg(long)]
    adapter: Option<String>,
    /// Stub configuration JSON (only without --adapter).
    #[arg(long)]
    stub_config: Option<PathBuf>,
    /// Output directory; generated data goes to `<out>/data`.
    #[arg(long)]
    out: PathBuf,
}

pub fn study(a: StudyArgs) -> Result<(), CliError> {
    let (gateway, _) = connect(a.adapter.as_deref(), load_stub_config(a.stub_config.as_deref())?)?;
    let data = a.out.join("data");
    create_dir(&data)?;
    let counts = StudyCounts {
        train: a.train,
        val: a.val,
        test: a.test,
    };
    let report = run_mechanism_study(&a.presets, counts, a.seed, &gateway, &data)?;
    write_file(&a.out.join("study_report.json"), &report.to_json())?;
    write_file(&a.out.join("study_report.md"), &report.to_table())?;
    print!("{}", report.to_table());
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelerArg {
    Oracle,
    Human,
}

#[derive(Args)]
pub struct CampaignArgs {
    /// Campaign config JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    adapter: Option<String>,
    #[arg(long, value_enum)]
    labeler: Option<LabelerArg>,
    /// Stub configuration JSON (only without an adapter).
    #[arg(long)]
    stub_config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Labeling service address in human mode.
    #[arg(long, default_value = "127.0.0.1:8710")]
    bind: SocketAddr,
    #[arg(long)]
    label_timeout: Option<u64>,
}

pub fn campaign(a: CampaignArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => {
            let doc = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            CampaignConfig::from_json(&doc).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => CampaignConfig::default(),
    };
    if let Some(d) = &a.dataset {
        cfg.dataset = Some(d.to_string_lossy().into_owned());
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(u) = &a.adapter {
        cfg.adapter = Some(u.clone());
    }
    if let Some(l) = a.labeler {
        cfg.labeler = match l {
            LabelerArg::Oracle => LabelerMode::Oracle,
            LabelerArg::Human => LabelerMode::Human,
        };
    }
    if let Some(t) = a.label_timeout {
        cfg.label_timeout_secs = t;
    }
    cfg.validate()?;
    let dataset = cfg
        .dataset
        .clone()
        .ok_or_else(|| CliError::Config("no dataset given (--dataset or config `dataset`)".into()))?;
    let raw = read_manifest(Path::new(&dataset))?;
    let manifest = if split_matches(&raw, &cfg) { raw } else { prepare_splits(&raw, &cfg)? };

    let (gateway, stub) = connect(cfg.adapter.as_deref(), load_stub_config(a.stub_config.as_deref())?)?;
    if let Some(stub) = &stub {
        stub.register_manifest(&manifest);
    }
    info!(
        version = env!("CARGO_PKG_VERSION"),
        campaign = %cfg.campaign_id,
        seed = cfg.seed,
        schedule = ?cfg.schedule(),
        "starting campaign"
    );
    create_dir(&a.out)?;
    let work = a.out.join("rounds");
    create_dir(&work)?;

    let oracle;
    let board_labeler;
    let _server;
    let labeler: &dyn Labeler = match cfg.labeler {
        LabelerMode::Oracle => {
            oracle = OracleLabeler::new(&manifest);
            &oracle
        }
        LabelerMode::Human => {
            let rules = manifest
                .header
                .label_rules
                .clone()
                .ok_or_else(|| CliError::Config("human labeling needs label rules in the dataset header".into()))?;
            let board = Arc::new(Mutex::new(LabelBoard::new(rules)));
            let mut state = LabelingState::new(board.clone());
            state.snapshot = Some(a.out.join("label_board.json"));
            let server = spawn_server(labeling_router(state), a.bind).map_err(|e| CliError::Io(e.to_string()))?;
            info!(url = %server.url(), "labeling service up");
            _server = server;
            board_labeler = BoardLabeler::new(board, Duration::from_secs(cfg.label_timeout_secs));
            &board_labeler
        }
    };

    let campaign = Campaign::new(cfg, &manifest, &gateway, labeler, &work)?;
    let (state, report) = campaign.run()?;
    let state_json = serde_json::to_string_pretty(&state).expect("state serializes");
    write_file(&a.out.join("campaign_report.json"), &report.to_json())?;
    write_file(&a.out.join("campaign_report.md"), &report.to_table())?;
    write_file(&a.out.join("campaign_state.json"), &state_json)?;
    print!("{}", report.to_table());
    Ok(())
}

fn split_matches(m: &DatasetManifest, cfg: &CampaignConfig) -> bool {
    let counts = m.split_counts();
    let n = |s| counts.get(&s).copied().unwrap_or(0);
    n(Split::Val) == cfg.validation_size && n(Split::Train) == cfg.budget.initial && n(Split::Test) == 0
}

#[derive(Args)]
pub struct ServeLabelerArgs {
    /// Scheme whose label rules apply.
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    scheme: Option<String>,
    /// Dataset whose header carries the label rules.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Queue the dataset's unlabeled pool samples under this round.
    #[arg(long, requires = "dataset")]
    queue_round: Option<u32>,
    /// Board snapshot, loaded if present and rewritten on every change.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8710")]
    bind: SocketAddr,
}

pub fn serve_labeler(a: ServeLabelerArgs) -> Result<(), CliError> {
    let manifest = a.dataset.as_deref().map(read_manifest).transpose()?;
    let rules = match (&a.scheme, &manifest) {
        (Some(s), _) => load_scheme(s)?.label_rules(),
        (None, Some(m)) => m
            .header
            .label_rules
            .clone()
            .ok_or_else(|| CliError::Config("dataset header has no label rules".into()))?,
        (None, None) => return Err(CliError::Config("--scheme or --dataset is required".into())),
    };
    let mut board = match &a.snapshot {
        Some(p) if p.exists() => LabelBoard::load(p).map_err(|e| CliError::Io(e.to_string()))?,
        _ => LabelBoard::new(rules),
    };
    if let (Some(round), Some(m)) = (a.queue_round, &manifest) {
        let pairs = m
            .with_split(Split::Pool)
            .filter(|e| e.label.is_none())
            .map(|e| Ok((e.sample_id.clone(), m.absolute_entry(e)?.image)))
            .collect::<Result<Vec<_>, DatasetError>>()?;
        board.queue(round, &pairs);
        info!(round, queued = pairs.len(), "queued pool samples");
    }
    let mut state = LabelingState::new(Arc::new(Mutex::new(board)));
    state.snapshot = a.snapshot;
    serve(labeling_router(state), a.bind)
}

#[derive(Args)]
pub struct ServeStubArgs {
    #[arg(long, default_value = "127.0.0.1:8700")]
    bind: SocketAddr,
    #[arg(long)]
    stub_config: Option<PathBuf>,
    /// Datasets whose labels the stub should know.
    #[arg(long)]
    register: Vec<PathBuf>,
}

pub fn serve_stub(a: ServeStubArgs) -> Result<(), CliError> {
    let stub = Arc::new(StubAdapter::new(load_stub_config(a.stub_config.as_deref())?));
    for d in &a.register {
        let m = read_manifest(d)?;
        stub.register_manifest(&m);
        info!(dataset = %m.header.dataset_id, samples = m.len(), "registered");
    }
    serve(adapter_router(stub), a.bind)
}

fn serve(router: Router, addr: SocketAddr) -> Result<(), CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?
        .block_on(serve_until_ctrl_c(router, addr))
        .map_err(|e| CliError::Io(format!("{addr}: {e}")))
}
