use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use facestyle::backbones::{cache_dir, Registry};
use facestyle::config::{ConfigOverrides, PixelParam, Preset, StyleTransferConfig};
use facestyle::image::{Image, InitStrategy};
use facestyle::losses::WeightScheme;
use facestyle::objective::ModelSet;
use facestyle::report::{run_method, RunReport};
use facestyle::Error;
use serde::Serialize;

const EXIT_INVALID: u8 = 2;
const EXIT_WEIGHTS: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "facestyle", version, about = "Identity-preserving neural style transfer")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stylize one content image; writes the result and a JSON sidecar.
    Stylize(StylizeArgs),
    /// Run several methods with a shared seed and write a side-by-side grid.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct StylizeArgs {
    #[command(flatten)]
    common: Common,
    /// Result image (.png or .jpg); the sidecar uses the same stem with .json.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Grid image; per-method images and the JSON table are written beside it.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Comma-separated subset of gatys, crowson, ps.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Preset>>,
    /// Run the methods concurrently.
    #[arg(long)]
    parallel: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
enum BackboneChoice {
    /// Small seeded networks; no downloads, useful for testing the plumbing.
    Stub,
    /// Networks listed in the weight registry.
    Pretrained,
}

#[derive(Args, Debug, Default)]
struct Common {
    #[arg(long)]
    content: Option<PathBuf>,
    #[arg(long)]
    style: Option<PathBuf>,
    /// TOML file whose keys mirror the long flag names.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Weight registry (JSON); defaults to registry.json in the cache directory.
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long, value_enum)]
    backbones: Option<BackboneChoice>,
    #[arg(long)]
    preset: Option<Preset>,
    /// Content weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Style weight.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tv_weight: Option<f64>,
    #[arg(long)]
    face_weight: Option<f64>,
    #[arg(long)]
    mesh_weight: Option<f64>,
    #[arg(long)]
    init_res: Option<usize>,
    #[arg(long)]
    final_res: Option<usize>,
    #[arg(long)]
    scale_factor: Option<f64>,
    /// Optimizer steps per stage.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    init: Option<InitStrategy>,
    #[arg(long)]
    pixel_param: Option<PixelParam>,
    #[arg(long)]
    min_face_confidence: Option<f64>,
    #[arg(long)]
    recognizer_crop: Option<usize>,
    /// Replace the content background with a flat color before stylizing.
    #[arg(long)]
    remove_background: bool,
    /// `r,g,b` in [0,1] or `#rrggbb`.
    #[arg(long)]
    bg_color: Option<String>,
    #[arg(long)]
    matte_threshold: Option<f64>,
    #[arg(long)]
    style_weight_norm: Option<WeightScheme>,
    /// Write every stage's result here.
    #[arg(long)]
    snapshot_dir: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            preset: self.preset,
            alpha: self.alpha,
            beta: self.beta,
            tv_weight: self.tv_weight,
            face_weight: self.face_weight,
            mesh_weight: self.mesh_weight,
            init_res: self.init_res,
            final_res: self.final_res,
            scale_factor: self.scale_factor,
            steps: self.steps,
            learning_rate: self.learning_rate,
            lr_decay: self.lr_decay,
            seed: self.seed,
            init: self.init,
            pixel_param: self.pixel_param,
            min_face_confidence: self.min_face_confidence,
            recognizer_crop: self.recognizer_crop,
            remove_background: self.remove_background.then_some(true),
            bg_color: self.bg_color.clone(),
            matte_threshold: self.matte_threshold,
            style_weight_norm: self.style_weight_norm,
            registry: self.registry.clone(),
            snapshot_dir: self.snapshot_dir.clone(),
        }
    }
}

/// Keys of the config file that are not algorithm settings.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct FileRunKeys {
    content: Option<PathBuf>,
    style: Option<PathBuf>,
    output: Option<PathBuf>,
    backbones: Option<BackboneChoice>,
    methods: Option<Vec<Preset>>,
    parallel: Option<bool>,
}

#[derive(Debug, Default)]
struct FileConfig {
    run: FileRunKeys,
    overrides: ConfigOverrides,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INVALID,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::MissingWeights { .. } | Error::ChecksumMismatch { .. } | Error::UnsupportedKind(_) | Error::Model(_) => EXIT_WEIGHTS,
            Error::InvalidArgument(_) | Error::UnsupportedFormat(_) | Error::ImageTooSmall(_) => EXIT_INVALID,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn resolve_relative(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn load_file_config(path: &Path) -> CliResult<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::invalid(format!("cannot read config file {}: {e}", path.display())))?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| Failure::invalid(format!("config file {} is not valid TOML: {e}", path.display())))?;
    let mut run_table = toml::Table::new();
    for key in ["content", "style", "output", "backbones", "methods", "parallel"] {
        if let Some(v) = table.remove(key) {
            run_table.insert(key.into(), v);
        }
    }
    let bad = |e: toml::de::Error| Failure::invalid(format!("config file {}: {}", path.display(), e.message()));
    let mut run: FileRunKeys = run_table.try_into().map_err(bad)?;
    let mut overrides: ConfigOverrides = table.try_into().map_err(bad)?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve_relative(base, &mut run.content);
    resolve_relative(base, &mut run.style);
    resolve_relative(base, &mut run.output);
    resolve_relative(base, &mut overrides.registry);
    resolve_relative(base, &mut overrides.snapshot_dir);
    Ok(FileConfig { run, overrides })
}

fn load_input(flag: &Option<PathBuf>, file: &Option<PathBuf>, what: &str) -> CliResult<(PathBuf, Image)> {
    let path = flag
        .clone()
        .or_else(|| file.clone())
        .ok_or_else(|| Failure::invalid(format!("missing --{what} image")))?;
    if !path.is_file() {
        return Err(Failure::invalid(format!("{what} image {} does not exist", path.display())));
    }
    let img = Image::load(&path).map_err(|e| Failure::invalid(format!("cannot read {what} image {}: {e}", path.display())))?;
    Ok((path, img))
}

fn output_path(flag: &Option<PathBuf>, file: &Option<PathBuf>) -> CliResult<PathBuf> {
    let path = flag
        .clone()
        .or_else(|| file.clone())
        .ok_or_else(|| Failure::invalid("missing --output path"))?;
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    if !matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
        return Err(Failure::invalid(format!("output {} must end in .png or .jpg", path.display())));
    }
    Ok(path)
}

fn load_models(choice: BackboneChoice, cfg: &StyleTransferConfig) -> CliResult<ModelSet> {
    let models = match choice {
        BackboneChoice::Stub => ModelSet::stub(0),
        BackboneChoice::Pretrained => {
            let path = cfg.registry.clone().unwrap_or_else(|| cache_dir().join("registry.json"));
            if !path.is_file() {
                return Err(Failure {
                    code: EXIT_WEIGHTS,
                    message: format!(
                        "weight registry {} not found (pass --registry, or --backbones stub to run without pretrained weights)",
                        path.display()
                    ),
                });
            }
            let registry = Registry::load(&path).map_err(|e| Failure {
                code: EXIT_WEIGHTS,
                message: format!("cannot load weight registry {}: {e}", path.display()),
            })?;
            ModelSet::pretrained(&registry)?
        }
    };
    Ok(models.with_recognizer_crop(cfg.recognizer_crop))
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::from(Error::Io { path: dir.into(), source: e }))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::from(Error::Io { path: path.into(), source: e }))
}

fn save_image(img: &Image, path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::from(Error::Io { path: dir.into(), source: e }))?;
    }
    Ok(img.save(path)?)
}

fn stylize(args: StylizeArgs) -> CliResult<()> {
    let file = match &args.common.config {
        Some(p) => load_file_config(p)?,
        None => FileConfig::default(),
    };
    let (_, content) = load_input(&args.common.content, &file.run.content, "content")?;
    let (_, style) = load_input(&args.common.style, &file.run.style, "style")?;
    let output = output_path(&args.output, &file.run.output)?;
    let cfg = StyleTransferConfig::resolve(&[&file.overrides, &args.common.overrides()]).map_err(|e| Failure::invalid(e.to_string()))?;
    let choice = args.common.backbones.or(file.run.backbones).unwrap_or(BackboneChoice::Pretrained);
    let models = load_models(choice, &cfg)?;

    let (result, report) = run_method(&content, &style, &cfg, &models)?;
    save_image(&result, &output)?;
    write_file(&sidecar(&output), &report.to_json()?)?;
    log::info!("wrote {}", output.display());
    Ok(())
}

/// Loss-weight settings apply to the face-preserving method only, so the
/// other columns keep their published configurations.
fn method_overrides(o: &ConfigOverrides, method: Preset) -> ConfigOverrides {
    let mut o = ConfigOverrides {
        preset: Some(method),
        ..o.clone()
    };
    if method != Preset::Ps {
        o.alpha = None;
        o.beta = None;
        o.tv_weight = None;
        o.face_weight = None;
        o.mesh_weight = None;
        o.style_weight_norm = None;
    }
    if let Some(dir) = &o.snapshot_dir {
        o.snapshot_dir = Some(dir.join(method.as_str()));
    }
    o
}

#[derive(Serialize)]
struct CompareTable<'a> {
    methods: Vec<&'static str>,
    /// Mean recognizer-embedding cosine between content and result faces.
    identity_similarity: BTreeMap<&'static str, Option<f64>>,
    reports: BTreeMap<&'static str, &'a RunReport>,
}

fn grid(images: &[Image], gap: usize) -> Image {
    let height = images.iter().map(Image::height).max().unwrap_or(1);
    let width = images.iter().map(Image::width).sum::<usize>() + gap * images.len().saturating_sub(1);
    let mut offsets = Vec::with_capacity(images.len());
    let mut x = 0;
    for img in images {
        offsets.push(x);
        x += img.width() + gap;
    }
    Image::from_fn(height, width, |y, x| {
        for (img, &ox) in images.iter().zip(&offsets) {
            if x >= ox && x < ox + img.width() {
                return if y < img.height() { img.pixel(y, x - ox) } else { [1.0; 3] };
            }
        }
        [1.0; 3]
    })
}

fn compare(args: CompareArgs) -> CliResult<()> {
    let file = match &args.common.config {
        Some(p) => load_file_config(p)?,
        None => FileConfig::default(),
    };
    let (_, content) = load_input(&args.common.content, &file.run.content, "content")?;
    let (_, style) = load_input(&args.common.style, &file.run.style, "style")?;
    let output = output_path(&args.output, &file.run.output)?;
    let methods = args
        .methods
        .clone()
        .or(file.run.methods.clone())
        .unwrap_or_else(|| Preset::COMPARED.to_vec());
    if methods.is_empty() || methods.contains(&Preset::Custom) {
        return Err(Failure::invalid("--methods takes a non-empty subset of gatys, crowson, ps"));
    }
    let parallel = args.parallel || file.run.parallel.unwrap_or(false);
    let flags = args.common.overrides();
    let configs = methods
        .iter()
        .map(|&m| {
            StyleTransferConfig::resolve(&[&method_overrides(&file.overrides, m), &method_overrides(&flags, m)])
                .map_err(|e| Failure::invalid(e.to_string()))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let choice = args.common.backbones.or(file.run.backbones).unwrap_or(BackboneChoice::Pretrained);
    let models = load_models(choice, &configs[0])?;

    let outcomes: Vec<facestyle::Result<(Image, RunReport)>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = configs.iter().map(|cfg| s.spawn(|| run_method(&content, &style, cfg, &models))).collect();
            handles.into_iter().map(|h| h.join().expect("method thread panicked")).collect()
        })
    } else {
        configs.iter().map(|cfg| run_method(&content, &style, cfg, &models)).collect()
    };
    let mut images = Vec::with_capacity(methods.len());
    let mut reports = Vec::with_capacity(methods.len());
    for outcome in outcomes {
        let (img, report) = outcome?;
        images.push(img);
        reports.push(report);
    }

    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("compare").to_string();
    let ext = output.extension().and_then(|e| e.to_str()).unwrap_or("png").to_string();
    for ((m, img), report) in methods.iter().zip(&images).zip(&reports) {
        let path = output.with_file_name(format!("{stem}_{m}.{ext}"));
        save_image(img, &path)?;
        write_file(&sidecar(&path), &report.to_json()?)?;
    }
    save_image(&grid(&images, 4), &output)?;
    let table = CompareTable {
        methods: methods.iter().map(|m| m.as_str()).collect(),
        identity_similarity: methods.iter().zip(&reports).map(|(m, r)| (m.as_str(), r.identity_similarity)).collect(),
        reports: methods.iter().zip(&reports).map(|(m, r)| (m.as_str(), r)).collect(),
    };
    let json = serde_json::to_string_pretty(&table).map_err(|e| Failure::from(Error::from(e)))?;
    write_file(&sidecar(&output), &json)?;
    for (m, r) in methods.iter().zip(&reports) {
        match r.identity_similarity {
            Some(s) => println!("{m}: identity similarity {s:.4}, total loss {:.6}", r.final_loss.total),
            None => println!("{m}: no faces found, total loss {:.6}", r.final_loss.total),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let outcome = match cli.command {
        Command::Stylize(a) => stylize(a),
        Command::Compare(a) => compare(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
