//! `nvsplat`: render, group, stylize, finetune and evaluate Gaussian scenes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nvsplat_core::config::Config;
use nvsplat_core::fixture::Fixture;
use nvsplat_core::grouping::{group_views, ViewGroup};
use nvsplat_core::io::{atomic_write, load_colmap, load_descriptor, load_ply, load_png, save_colmap, save_ply, save_png};
use nvsplat_core::losses::FeatureExtractor;
use nvsplat_core::metrics::{evaluate, Descriptor, ImportedDescriptors, MetricReport};
use nvsplat_core::pipeline::{
    dataset_update, finetune, render_views, run_ablation, AblationVariant, FinetuneOutcome, StylizationRun,
};
use nvsplat_core::{Camera, Error, ImageRGB};

#[derive(Parser, Debug)]
#[command(name = "nvsplat", version, about = "Multi-view consistent stylization of Gaussian splatting scenes")]
struct Cli {
    /// TOML config; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the effective config and exit.
    #[arg(long)]
    dump_config: bool,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug)]
struct SceneInputs {
    /// Gaussian scene (3DGS PLY).
    #[arg(long)]
    scene: PathBuf,
    /// COLMAP text model directory (cameras.txt, images.txt).
    #[arg(long)]
    cameras: PathBuf,
}

#[derive(Args, Debug)]
struct StyleInputs {
    #[command(flatten)]
    scene: SceneInputs,
    /// Style reference image.
    #[arg(long)]
    style: PathBuf,
    /// Group size N.
    #[arg(long)]
    n_views: Option<usize>,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[command(flatten)]
    inputs: StyleInputs,
    /// Pre-computed stylized targets named like the COLMAP images; when
    /// absent the dataset update runs first.
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Also write renders of the finetuned scene.
    #[arg(long)]
    save_renders: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the bundled synthetic fixture (scene, cameras, style, config).
    Fixture {
        #[arg(long)]
        out: PathBuf,
    },
    /// Render every camera to PNG.
    Render {
        #[command(flatten)]
        inputs: SceneInputs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition the cameras into neighboring-view groups.
    GroupViews {
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        n_views: Option<usize>,
        /// Also write the partition as key/value lines.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset update: render, group and stylize every view.
    Stylize {
        #[command(flatten)]
        inputs: StyleInputs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finetune the scene on stylized targets.
    Finetune(FinetuneArgs),
    /// Fit a freshly initialized scene to stylized targets.
    TrainScratch(FinetuneArgs),
    /// Run an ablation variant end to end and evaluate it.
    Ablate {
        #[command(flatten)]
        inputs: StyleInputs,
        /// full, no-nnfm, no-nv, from-scratch or n-sweep.
        #[arg(long, default_value = "full")]
        variant: String,
        /// Group sizes for n-sweep.
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8])]
        sweep: Vec<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// CFSD, CSD and CLIP-DC between two frame directories.
    Metrics {
        /// Original frames, in path order.
        #[arg(long)]
        original: PathBuf,
        /// Stylized frames, same names and order.
        #[arg(long)]
        stylized: PathBuf,
        #[arg(long)]
        style: PathBuf,
        /// Feature file replacing the style image descriptor.
        #[arg(long)]
        style_descriptor: Option<PathBuf>,
        /// Directory of feature files, one per original frame.
        #[arg(long)]
        original_descriptors: Option<PathBuf>,
        /// Directory of feature files, one per stylized frame.
        #[arg(long)]
        stylized_descriptors: Option<PathBuf>,
        #[arg(long, default_value = "metrics")]
        label: String,
        /// Key/value report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    fn line(&self) -> String {
        let (kind, msg) = match self {
            CliError::Usage(m) => ("UsageError", m.clone()),
            CliError::Core(e) => (e.kind(), e.to_string()),
        };
        let msg = msg.replace('\\', "\\\\").replace('"', "\\\"").replace(['\n', '\r'], " ");
        format!("error: kind={kind} msg=\"{}\"", msg.trim())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::Usage(first).line());
            eprintln!("{}", e.render().to_string().lines().skip(1).collect::<Vec<_>>().join("\n").trim());
            return ExitCode::from(2);
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                CliError::Core(_) => 1,
            })
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let mut cfg = load_config(&cli)?;
    if cli.dump_config {
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage("no subcommand given; see --help".into()));
    };
    match command {
        Command::Fixture { out } => write_fixture(&out, cli.seed),
        Command::Render { inputs, out } => {
            let (scene, cameras, names) = load_scene(&inputs)?;
            let images = render_views(&scene, &cameras, &cfg.rasterizer)?;
            write_images(&out, &names, &images)?;
            println!("rendered {} views to {}", images.len(), out.display());
            Ok(())
        }
        Command::GroupViews { cameras, n_views, out } => {
            let (cams, names) = load_colmap(&cameras)?;
            let n = n_views.unwrap_or(cfg.grouping.views_per_group);
            let groups = group_views(&cams, n)?;
            print!("{}", group_table(&groups, &names));
            if let Some(path) = out {
                write_text(&path, &group_key_values(&groups, &names))?;
            }
            Ok(())
        }
        Command::Stylize { inputs, out } => {
            apply_n_views(&mut cfg, inputs.n_views)?;
            let (run, names) = prepare_run(&inputs, cfg)?;
            let run = stylize(run)?;
            write_images(&out, &names, &run.targets)?;
            write_text(&out.join("groups.txt"), &group_key_values(&run.groups, &names))?;
            print!("{}", group_table(&run.groups, &names));
            println!("stylized {} views in {} groups", run.targets.len(), run.groups.len());
            Ok(())
        }
        Command::Finetune(args) => finetune_command(args, cfg, false),
        Command::TrainScratch(args) => finetune_command(args, cfg, true),
        Command::Ablate { inputs, variant, sweep, iterations, out } => {
            apply_n_views(&mut cfg, inputs.n_views)?;
            if let Some(it) = iterations {
                cfg.finetune.iterations = it;
            }
            let variant = AblationVariant::parse(&variant, &sweep).map_err(|e| CliError::Usage(e.to_string()))?;
            let (run, names) = prepare_run(&inputs, cfg)?;
            let outcomes = run_ablation(&run, &variant)?;
            let mut table = MetricReport::table_header();
            table.push('\n');
            for o in &outcomes {
                let dir = out.join(&o.label);
                std::fs::create_dir_all(&dir)?;
                save_ply(&o.finetune.scene, &dir.join("scene.ply"))?;
                write_text(&dir.join("metrics.txt"), &o.report.to_key_values())?;
                write_text(&dir.join("finetune.txt"), &finetune_report(&o.finetune))?;
                write_text(&dir.join("groups.txt"), &group_key_values(&o.run.groups, &names))?;
                let _ = writeln!(table, "{}", o.report.table_row());
            }
            write_text(&out.join("ablation.txt"), &table)?;
            print!("{table}");
            Ok(())
        }
        Command::Metrics { original, stylized, style, style_descriptor, original_descriptors, stylized_descriptors, label, out } => {
            let (orig_names, originals) = load_frames(&original)?;
            let (styl_names, stylized_imgs) = load_frames(&stylized)?;
            if orig_names != styl_names {
                return Err(Error::LengthMismatch(orig_names.len(), styl_names.len()).into());
            }
            let style_img = load_png(&style)?;
            let imported = ImportedDescriptors {
                style: style_descriptor.as_deref().map(load_descriptor).transpose()?,
                original: original_descriptors.as_deref().map(load_descriptor_dir).transpose()?,
                stylized: stylized_descriptors.as_deref().map(load_descriptor_dir).transpose()?,
            };
            let ext = FeatureExtractor::new(&cfg.extractor);
            let report = evaluate(&label, &originals, &stylized_imgs, &style_img, &ext, &imported)?;
            println!("{}", MetricReport::table_header());
            println!("{}", report.table_row());
            if let Some(path) = out {
                write_text(&path, &report.to_key_values())?;
            }
            Ok(())
        }
    }
}

fn apply_n_views(cfg: &mut Config, n: Option<usize>) -> CliResult<()> {
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::InvalidGroupSize.into());
        }
        cfg.grouping.views_per_group = n;
    }
    Ok(())
}

fn load_scene(inputs: &SceneInputs) -> CliResult<(nvsplat_core::GaussianScene, Vec<Camera>, Vec<String>)> {
    let scene = load_ply(&inputs.scene)?;
    let (cameras, names) = load_colmap(&inputs.cameras)?;
    Ok((scene, cameras, names))
}

fn prepare_run(inputs: &StyleInputs, cfg: Config) -> CliResult<(StylizationRun, Vec<String>)> {
    let (scene, cameras, names) = load_scene(&inputs.scene)?;
    let style = load_png(&inputs.style)?;
    Ok((StylizationRun::new(scene, cameras, style, cfg)?, names))
}

fn stylize(mut run: StylizationRun) -> CliResult<StylizationRun> {
    dataset_update(&mut run)?;
    Ok(run)
}

fn finetune_command(args: FinetuneArgs, mut cfg: Config, from_scratch: bool) -> CliResult<()> {
    apply_n_views(&mut cfg, args.inputs.n_views)?;
    if let Some(it) = args.iterations {
        cfg.finetune.iterations = it;
    }
    cfg.ablation.from_scratch |= from_scratch;
    let (mut run, names) = prepare_run(&args.inputs, cfg)?;
    match &args.targets {
        Some(dir) => {
            run.targets = names.iter().map(|n| load_png(&dir.join(png_name(n)))).collect::<nvsplat_core::Result<_>>()?;
        }
        None => {
            run = stylize(run)?;
            write_images(&args.out.join("targets"), &names, &run.targets)?;
        }
    }
    let outcome = finetune(&run)?;
    std::fs::create_dir_all(&args.out)?;
    save_ply(&outcome.scene, &args.out.join("scene.ply"))?;
    write_text(&args.out.join("finetune.txt"), &finetune_report(&outcome))?;
    if args.save_renders {
        let renders = render_views(&outcome.scene, &run.cameras, &run.config.rasterizer)?;
        write_images(&args.out.join("renders"), &names, &renders)?;
    }
    let r = &outcome.report;
    println!(
        "finetuned {} iterations: dataset loss {:.6} -> {:.6} ({:.1}% reduction)",
        r.iteration_losses.len(),
        r.initial_dataset_loss,
        r.final_dataset_loss,
        100.0 * r.relative_reduction()
    );
    Ok(())
}

fn finetune_report(outcome: &FinetuneOutcome) -> String {
    let r = &outcome.report;
    let mut s = String::new();
    let _ = writeln!(s, "iterations = {}", r.iteration_losses.len());
    let _ = writeln!(s, "gaussians = {}", outcome.scene.len());
    let _ = writeln!(s, "initial_dataset_loss = {:?}", r.initial_dataset_loss);
    let _ = writeln!(s, "final_dataset_loss = {:?}", r.final_dataset_loss);
    let _ = writeln!(s, "relative_reduction = {:?}", r.relative_reduction());
    let _ = writeln!(s, "zero_feature_vectors = {}", r.zero_feature_vectors);
    let losses: Vec<String> = r.iteration_losses.iter().map(|v| format!("{v:?}")).collect();
    let _ = writeln!(s, "iteration_losses = [{}]", losses.join(", "));
    s
}

fn group_table(groups: &[ViewGroup], names: &[String]) -> String {
    let mut s = format!("{:<6} {:>5}  views\n", "group", "size");
    for (i, g) in groups.iter().enumerate() {
        let members: Vec<&str> = g.view_indices.iter().map(|&v| names[v].as_str()).collect();
        let _ = writeln!(s, "{:<6} {:>5}  {}", i, g.view_indices.len(), members.join(" "));
    }
    let _ = writeln!(s, "{} views in {} groups", names.len(), groups.len());
    s
}

fn group_key_values(groups: &[ViewGroup], names: &[String]) -> String {
    let mut s = format!("views = {}\ngroups = {}\n", names.len(), groups.len());
    for (i, g) in groups.iter().enumerate() {
        let idx: Vec<String> = g.view_indices.iter().map(|v| v.to_string()).collect();
        let members: Vec<String> = g.view_indices.iter().map(|&v| format!("{:?}", names[v])).collect();
        let _ = writeln!(s, "group_{i} = [{}]", idx.join(", "));
        let _ = writeln!(s, "group_{i}_names = [{}]", members.join(", "));
    }
    s
}

/// Image names with their extension forced to `.png`.
fn png_name(name: &str) -> PathBuf {
    Path::new(name).with_extension("png")
}

fn write_images(dir: &Path, names: &[String], images: &[ImageRGB]) -> CliResult<()> {
    for (name, img) in names.iter().zip(images) {
        let path = dir.join(png_name(name));
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        save_png(img, &path)?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    atomic_write(path, |w| w.write_all(text.as_bytes()))?;
    Ok(())
}

/// Regular files in `dir` with the given extension, sorted by name.
fn sorted_files(dir: &Path, ext: Option<&str>) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file() && ext.is_none_or(|x| p.extension().is_some_and(|e| e.eq_ignore_ascii_case(x))));
    files.sort();
    Ok(files)
}

fn load_frames(dir: &Path) -> CliResult<(Vec<String>, Vec<ImageRGB>)> {
    let files = sorted_files(dir, Some("png"))?;
    let names = files.iter().map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned()).collect();
    let images = files.iter().map(|p| load_png(p)).collect::<nvsplat_core::Result<_>>()?;
    Ok((names, images))
}

fn load_descriptor_dir(dir: &Path) -> CliResult<Vec<Descriptor>> {
    Ok(sorted_files(dir, None)?.iter().map(|p| load_descriptor(p)).collect::<nvsplat_core::Result<_>>()?)
}

fn write_fixture(out: &Path, seed: Option<u64>) -> CliResult<()> {
    let mut f = Fixture::synthetic();
    if let Some(s) = seed {
        f.config.seed = s;
    }
    std::fs::create_dir_all(out)?;
    let names: Vec<String> = (0..f.cameras.len()).map(|i| format!("view_{i:03}.png")).collect();
    save_ply(&f.scene, &out.join("scene.ply"))?;
    save_colmap(&out.join("sparse"), &f.cameras, &names)?;
    save_png(&f.style, &out.join("style.png"))?;
    write_text(&out.join("config.toml"), &f.config.to_toml_string())?;
    println!(
        "fixture: {} gaussians, {} cameras at {}x{} in {}",
        f.scene.len(),
        f.cameras.len(),
        f.cameras[0].width,
        f.cameras[0].height,
        out.display()
    );
    Ok(())
}
