//! `sqocc` command-line front end.
//!
//! Every command validates its inputs before writing anything, writes outputs
//! through a temp file in the destination directory, and exits nonzero on
//! failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use sqocc_core::gaussianize::{DEFAULT_LEVEL, DEFAULT_XY_COVERAGE};
use sqocc_core::io::{self, write_atomic};
use sqocc_core::synth::{self, SceneGenConfig};
use sqocc_core::tessellate::{deform_vertices, write_off};
use sqocc_core::voxelize::{DEFAULT_NEIGHBORHOOD, DEFAULT_RESOLUTION, DEFAULT_TAU};
use sqocc_core::{
    approximation_error, compare_renders, gaussianize_scene, icosphere, raymarch_render, splat_render, voxelize,
    voxelize_bruteforce, Camera, GaussianCloud, GaussianizeConfig, MetricReport, OpacitySign, RaySet, RenderOptions,
    Scene, VoxelGridSpec, VoxelizeConfig,
};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "SQOCC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "sqocc", version, about = "Superquadric semantic occupancy tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic scene.
    GenScene(GenSceneArgs),
    /// Convert a scene into a multi-layer Gaussian cloud.
    Gaussianize(GaussianizeArgs),
    /// Voxelize a scene into an SQOC semantic grid.
    Voxelize(VoxelizeArgs),
    /// Render depth / semantic / alpha images of a scene or Gaussian cloud.
    Render(RenderArgs),
    /// Compare two SQOC grids.
    Metrics(MetricsArgs),
    /// Time the pipeline stages on a scene.
    Bench(BenchArgs),
    /// Density slice of one primitive and its Gaussian mixture.
    Slice(SliceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SignArg {
    Aligned,
    Growing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenderMode {
    Splat,
    Raymarch,
}

/// `--neighborhood`: a voxel count, or `full` for no truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighborhood(pub Option<usize>);

impl FromStr for Neighborhood {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "full" {
            return Ok(Self(None));
        }
        s.parse::<usize>().map(|n| Self(Some(n))).map_err(|_| format!("expected a voxel count or `full`, got `{s}`"))
    }
}

fn parse_csv<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',').map(|t| t.trim().parse::<T>().map_err(|_| format!("bad value `{t}` in `{s}`"))).collect()
}

fn parse_triple<T: FromStr + Copy>(s: &str) -> std::result::Result<[T; 3], String> {
    let v = parse_csv::<T>(s)?;
    <[T; 3]>::try_from(v).map_err(|_| format!("expected three comma-separated values, got `{s}`"))
}

fn parse_f64_triple(s: &str) -> std::result::Result<[f64; 3], String> {
    parse_triple(s)
}

fn parse_usize_triple(s: &str) -> std::result::Result<[usize; 3], String> {
    parse_triple(s)
}

/// Comma-separated list of numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct F64List(pub Vec<f64>);

impl FromStr for F64List {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_csv(s).map(Self)
    }
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Grid minimum corner, metres.
    #[arg(long, value_name = "X,Y,Z", value_parser = parse_f64_triple, default_value = "-40,-40,-1", allow_hyphen_values = true)]
    pub grid_origin: [f64; 3],
    /// Voxel counts along x, y, z.
    #[arg(long, value_name = "NX,NY,NZ", value_parser = parse_usize_triple, default_value = "200,200,16")]
    pub grid_dims: [usize; 3],
    /// Voxel edge length, metres.
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    pub resolution: f64,
}

impl GridArgs {
    pub fn spec(&self) -> Result<VoxelGridSpec> {
        Ok(VoxelGridSpec::new(self.grid_origin.into(), self.grid_dims, self.resolution)?)
    }
}

#[derive(Debug, Clone, Args)]
pub struct GaussianizeOpts {
    /// Icosphere subdivision level.
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    pub level: u32,
    /// Scale factors of the nested layers.
    #[arg(long, value_name = "CSV", default_value = "0.5,0.6,0.75,0.9,1.05,1.2,1.6,2.0,2.5")]
    pub k_values: F64List,
    /// Sign of the inside-outside term in layer opacity.
    #[arg(long, value_enum, default_value_t = SignArg::Aligned)]
    pub opacity_sign: SignArg,
    /// Tangent-plane scale as a fraction of sqrt(face area).
    #[arg(long, default_value_t = DEFAULT_XY_COVERAGE)]
    pub xy_coverage: f64,
    /// Drop Gaussians with opacity below this.
    #[arg(long, default_value_t = 0.0)]
    pub min_opacity: f64,
}

impl GaussianizeOpts {
    pub fn config(&self) -> GaussianizeConfig {
        GaussianizeConfig {
            k_values: self.k_values.0.clone(),
            level: self.level,
            xy_coverage: self.xy_coverage,
            opacity_sign: match self.opacity_sign {
                SignArg::Aligned => OpacitySign::Aligned,
                SignArg::Growing => OpacitySign::Growing,
            },
            min_opacity_cull: self.min_opacity,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct VoxelizeOpts {
    /// Occupancy threshold.
    #[arg(long, default_value_t = DEFAULT_TAU, allow_negative_numbers = true)]
    pub tau: f64,
    /// Window half-width in voxels before extent expansion, or `full`.
    #[arg(long, default_value_t = Neighborhood(Some(DEFAULT_NEIGHBORHOOD)))]
    pub neighborhood: Neighborhood,
}

impl std::fmt::Display for Neighborhood {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.0 {
            Some(n) => write!(f, "{n}"),
            None => f.write_str("full"),
        }
    }
}

impl VoxelizeOpts {
    pub fn config(&self) -> VoxelizeConfig {
        VoxelizeConfig { tau: self.tau, neighborhood_radius: self.neighborhood.0, ..VoxelizeConfig::default() }
    }
}

#[derive(Debug, Args)]
pub struct GenSceneArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of primitives.
    #[arg(long, default_value_t = 1600)]
    pub count: usize,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GaussianizeArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: GaussianizeOpts,
    /// Also dump the deformed layer meshes of the first primitive as OFF files
    /// `<stem>.k<i>.off`.
    #[arg(long, value_name = "STEM")]
    pub mesh_off: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct VoxelizeArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub opts: VoxelizeOpts,
    /// Also store the occupancy field in the grid file.
    #[arg(long)]
    pub with_occupancy: bool,
    /// Also run the brute-force gather and report the difference.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Scene or Gaussian cloud file; the kind is detected from its first record.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long, value_enum, default_value_t = RenderMode::Splat)]
    pub mode: RenderMode,
    /// Ray-march step, metres.
    #[arg(long, default_value_t = 0.025)]
    pub step: f64,
    /// Output prefix: writes `<out>.depth.pfm`, `<out>.sem.ppm`, `<out>.alpha.pgm`.
    #[arg(long)]
    pub out: PathBuf,
    /// Palette file, one `r g b` line per class.
    #[arg(long)]
    pub palette: Option<PathBuf>,
    /// With a scene input, also render with the other method and print the agreement.
    #[arg(long)]
    pub compare: bool,
    #[command(flatten)]
    pub opts: GaussianizeOpts,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// RayIoU depth thresholds, metres.
    #[arg(long, value_name = "CSV", default_value = "1,2,4")]
    pub thresholds: F64List,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub vox: VoxelizeOpts,
    #[command(flatten)]
    pub gauss: GaussianizeOpts,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    /// Camera for the render stage; defaults to a view from above the grid centre.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Also time the brute-force voxelizer and report the speedup.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SliceArgs {
    /// Scene whose first primitive is sliced; the built-in reference shape if omitted.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Output prefix: writes `<out>.truth.pgm` and `<out>.mixture.pgm`.
    #[arg(long)]
    pub out: PathBuf,
    /// Pixels per side.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Half-width of the slice window, metres.
    #[arg(long, default_value_t = 3.0)]
    pub half_extent: f64,
    #[command(flatten)]
    pub opts: GaussianizeOpts,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

/// Parses `SQOCC_THREADS`; `None` when unset.
pub fn thread_limit() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("{THREADS_ENV}={v} is not a thread count"))?;
            if n == 0 {
                bail!("{THREADS_ENV} must be at least 1");
            }
            Ok(Some(n))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("{THREADS_ENV}: {e}"),
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    if let Some(n) = thread_limit()? {
        // Fails only if a pool already exists, e.g. when called twice in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::GenScene(a) => gen_scene(a, out),
        Command::Gaussianize(a) => cmd_gaussianize(a, out),
        Command::Voxelize(a) => cmd_voxelize(a, out),
        Command::Render(a) => cmd_render(a, out),
        Command::Metrics(a) => cmd_metrics(a, out),
        Command::Bench(a) => cmd_bench(a, out),
        Command::Slice(a) => cmd_slice(a, out),
    }
}

fn emit(out: &mut dyn Write, format: Format, text: &str, value: &Value) -> Result<()> {
    match format {
        Format::Text => write!(out, "{text}")?,
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(value)?)?,
    }
    Ok(())
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn gen_scene(a: GenSceneArgs, out: &mut dyn Write) -> Result<()> {
    let spec = a.grid.spec()?;
    let scene = synth::gen_scene(a.seed, a.count, &spec, &synth::occ3d_classes(), &SceneGenConfig::default())?;
    write_atomic(&a.out, |w| io::write_scene(w, &scene))?;
    writeln!(out, "wrote {} primitives to {}", scene.len(), a.out.display())?;
    Ok(())
}

fn cmd_gaussianize(a: GaussianizeArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.opts.config();
    cfg.validate()?;
    let scene = io::read_scene(&a.scene)?;
    let t = Instant::now();
    let (cloud, report) = gaussianize_scene(&scene, &cfg)?;
    let elapsed = secs(t);
    write_atomic(&a.out, |w| io::write_cloud(w, &cloud))?;
    if let (Some(stem), Some(sq)) = (&a.mesh_off, scene.primitives.first()) {
        let mesh = icosphere(cfg.level)?;
        for (i, layer) in sq.scaled_family(&cfg.k_values)?.iter().enumerate() {
            let verts = deform_vertices(&mesh, &layer.scale, layer.eps1, layer.eps2);
            let path = PathBuf::from(format!("{}.k{i}.off", stem.display()));
            write_atomic(&path, |w| Ok(write_off(w, &verts, &mesh.faces)?))?;
        }
    }
    let text = format!(
        "{} gaussians from {} primitives ({} per primitive), {} degenerate faces skipped, {} culled, {:.3} s\n",
        cloud.len(),
        scene.len(),
        cfg.gaussians_per_primitive(),
        report.degenerate_skipped(),
        report.culled(),
        elapsed
    );
    let value = json!({
        "gaussians": cloud.len(),
        "primitives": scene.len(),
        "per_primitive": cfg.gaussians_per_primitive(),
        "degenerate_skipped": report.degenerate_skipped(),
        "culled": report.culled(),
        "seconds": elapsed,
    });
    emit(out, a.format, &text, &value)
}

fn cmd_voxelize(a: VoxelizeArgs, out: &mut dyn Write) -> Result<()> {
    let spec = a.grid.spec()?;
    let cfg = a.opts.config();
    cfg.validate()?;
    let scene = io::read_scene(&a.scene)?;
    if scene.classes.len() >= 255 {
        bail!("grid files hold at most 254 classes, scene has {}", scene.classes.len());
    }
    let t = Instant::now();
    let (grid, dense) = voxelize(&scene, &spec, &cfg)?;
    let elapsed = secs(t);

    let mut value = json!({
        "voxels": spec.voxel_count(),
        "occupied": grid.occupied_count(),
        "tau": cfg.tau,
        "neighborhood": a.opts.neighborhood.0.map_or(json!("full"), |n| json!(n)),
        "seconds": elapsed,
    });
    let mut text = format!(
        "{} of {} voxels occupied (tau={}, neighborhood={}), {:.3} s\n",
        grid.occupied_count(),
        spec.voxel_count(),
        cfg.tau,
        a.opts.neighborhood,
        elapsed
    );
    if a.oracle {
        let t = Instant::now();
        let (bgrid, bdense) = voxelize_bruteforce(&scene, &spec, &cfg)?;
        let oracle_secs = secs(t);
        let max_dvo = dense.v_o.iter().zip(&bdense.v_o).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let mismatched = grid.labels.iter().zip(&bgrid.labels).filter(|(x, y)| x != y).count();
        text += &format!(
            "oracle: max |dv_o| = {max_dvo:e}, {mismatched} label mismatches, {oracle_secs:.3} s ({:.1}x)\n",
            oracle_secs / elapsed.max(1e-9)
        );
        value["oracle"] = json!({
            "max_abs_dvo": max_dvo,
            "label_mismatches": mismatched,
            "seconds": oracle_secs,
        });
    }
    let occupancy = a.with_occupancy.then_some(dense.v_o.as_slice());
    write_atomic(&a.out, |w| io::write_sqoc(w, &grid, occupancy))?;
    emit(out, a.format, &text, &value)
}

/// Scene or Gaussian cloud, told apart by the first non-empty line.
enum Input {
    Scene(Scene),
    Cloud(GaussianCloud),
}

fn read_input(path: &Path) -> Result<Input> {
    let mut reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut first = String::new();
    loop {
        first.clear();
        if reader.read_line(&mut first)? == 0 {
            bail!("{}: empty file", path.display());
        }
        if !first.trim().is_empty() {
            break;
        }
    }
    let head: Value = serde_json::from_str(&first).with_context(|| format!("{}:1: not JSON", path.display()))?;
    let rest = std::io::Cursor::new(first.clone().into_bytes()).chain(reader);
    if head.get("version").is_some() {
        Ok(Input::Scene(io::read_scene_from(rest, path)?))
    } else if head.get("mean").is_some() {
        Ok(Input::Cloud(io::read_cloud(rest, path)?))
    } else {
        bail!("{}: neither a scene header nor a Gaussian record", path.display())
    }
}

fn cmd_render(a: RenderArgs, out: &mut dyn Write) -> Result<()> {
    let cam = io::read_camera(&a.camera)?;
    let cfg = a.opts.config();
    cfg.validate()?;
    if a.mode == RenderMode::Raymarch && !(a.step > 0.0 && a.step.is_finite()) {
        bail!("--step must be positive, got {}", a.step);
    }
    let palette_override = match &a.palette {
        Some(p) => {
            Some(io::parse_palette(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?)
        }
        None => None,
    };
    let input = read_input(&a.scene)?;
    let opts = RenderOptions::default();

    let t = Instant::now();
    let (image, scene) = match (&input, a.mode) {
        (Input::Cloud(cloud), RenderMode::Splat) => (splat_render(cloud, &cam, &opts)?, None),
        (Input::Cloud(_), RenderMode::Raymarch) => bail!("ray marching needs a scene, not a Gaussian cloud"),
        (Input::Scene(scene), RenderMode::Splat) => {
            let (cloud, _) = gaussianize_scene(scene, &cfg)?;
            (splat_render(&cloud, &cam, &opts)?, Some(scene))
        }
        (Input::Scene(scene), RenderMode::Raymarch) => (raymarch_render(scene, &cam, a.step, &opts)?, Some(scene)),
    };
    let elapsed = secs(t);
    let classes = match &input {
        Input::Scene(s) => s.classes.len(),
        Input::Cloud(c) => c.classes.len(),
    };
    let palette = palette_override.unwrap_or_else(|| io::default_palette(classes));
    if palette.len() < classes {
        bail!("palette has {} entries for {} classes", palette.len(), classes);
    }

    let prefix = a.out.display().to_string();
    let (w, h) = (image.width, image.height);
    write_atomic(Path::new(&format!("{prefix}.depth.pfm")), |o| io::write_pfm(o, w, h, &image.depth))?;
    write_atomic(Path::new(&format!("{prefix}.sem.ppm")), |o| io::write_ppm(o, w, h, &image.semantic, &palette))?;
    write_atomic(Path::new(&format!("{prefix}.alpha.pgm")), |o| io::write_pgm(o, w, h, &image.alpha))?;

    let covered = image.alpha.iter().filter(|&&x| x >= 0.5).count();
    let mut text = format!("rendered {w}x{h}, {covered} pixels with alpha >= 0.5, {elapsed:.3} s\n");
    let mut value = json!({ "width": w, "height": h, "covered": covered, "seconds": elapsed });
    if a.compare {
        let Some(scene) = scene else {
            bail!("--compare needs a scene input");
        };
        let other = match a.mode {
            RenderMode::Splat => raymarch_render(scene, &cam, a.step, &opts)?,
            RenderMode::Raymarch => splat_render(&gaussianize_scene(scene, &cfg)?.0, &cam, &opts)?,
        };
        let (splat, march) = match a.mode {
            RenderMode::Splat => (&image, &other),
            RenderMode::Raymarch => (&other, &image),
        };
        let cmp = compare_renders(splat, march, opts.alpha_threshold)?;
        let (both, agreement, median) = (cmp.both_covered, cmp.semantic_agreement, cmp.median_depth_error);
        text += &format!(
            "splat vs raymarch: {both} pixels covered by both, semantic agreement {agreement:.4}, median relative depth error {median:.4}\n"
        );
        value["compare"] = json!({ "pixels": both, "semantic_agreement": agreement, "median_rel_depth_error": median });
    }
    emit(out, a.format, &text, &value)
}

fn read_grid(path: &Path) -> Result<sqocc_core::io::SqocGrid> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    io::read_sqoc(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn cmd_metrics(a: MetricsArgs, out: &mut dyn Write) -> Result<()> {
    if a.thresholds.0.is_empty() || a.thresholds.0.iter().any(|t| !(*t >= 0.0)) {
        bail!("--thresholds must be non-negative");
    }
    let pred = read_grid(&a.pred)?.grid;
    let gt = read_grid(&a.gt)?.grid;
    let rays = RaySet::default_fan(&gt.spec);
    let report = MetricReport::compute(&pred, &gt, &rays, &a.thresholds.0)?;
    let body = match a.format {
        Format::Text => report.to_text(),
        Format::Json => serde_json::to_string_pretty(&report.to_json())? + "\n",
    };
    if let Some(path) = &a.out {
        write_atomic(path, |w| Ok(w.write_all(body.as_bytes())?))?;
    }
    out.write_all(body.as_bytes())?;
    Ok(())
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn timing(mut samples: Vec<f64>) -> Value {
    samples.sort_by(f64::total_cmp);
    json!({
        "min": samples[0],
        "p50": percentile(&samples, 50.0),
        "p90": percentile(&samples, 90.0),
        "max": samples[samples.len() - 1],
        "samples": samples,
    })
}

/// Looks across the grid from above one edge towards its centre.
pub fn overview_camera(spec: &VoxelGridSpec) -> Result<Camera> {
    let lo = spec.origin;
    let hi = spec.extent_max();
    let centre = (lo + hi) / 2.0;
    let span = (hi - lo).x.max((hi - lo).y);
    let eye = sqocc_core::Vec3::new(centre.x, lo.y - 0.1 * span, hi.z + 0.25 * span);
    Ok(Camera::look_at(eye, centre, sqocc_core::Vec3::z(), 400.0, 400.0, 640, 360, 0.1, 4.0 * span)?)
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write) -> Result<()> {
    if a.repetitions == 0 {
        bail!("--repetitions must be at least 1");
    }
    let spec = a.grid.spec()?;
    let vcfg = a.vox.config();
    vcfg.validate()?;
    let gcfg = a.gauss.config();
    gcfg.validate()?;
    let scene = io::read_scene(&a.scene)?;
    let cam = match &a.camera {
        Some(p) => io::read_camera(p)?,
        None => overview_camera(&spec)?,
    };

    let mut gauss = Vec::new();
    let mut vox = Vec::new();
    let mut render = Vec::new();
    let mut cloud = None;
    for _ in 0..a.repetitions {
        let t = Instant::now();
        let (c, _) = gaussianize_scene(&scene, &gcfg)?;
        gauss.push(secs(t));
        let t = Instant::now();
        voxelize(&scene, &spec, &vcfg)?;
        vox.push(secs(t));
        let t = Instant::now();
        splat_render(&c, &cam, &RenderOptions::default())?;
        render.push(secs(t));
        cloud = Some(c);
    }
    let mut value = json!({
        "primitives": scene.len(),
        "gaussians": cloud.map_or(0, |c| c.len()),
        "grid": spec.dims,
        "threads": rayon::current_num_threads(),
        "repetitions": a.repetitions,
        "gaussianize_s": timing(gauss),
        "voxelize_s": timing(vox.clone()),
        "splat_render_s": timing(render),
    });
    if a.oracle {
        let t = Instant::now();
        voxelize_bruteforce(&scene, &spec, &vcfg)?;
        let brute = secs(t);
        let fast = vox.iter().cloned().fold(f64::INFINITY, f64::min);
        value["voxelize_bruteforce_s"] = json!(brute);
        value["speedup"] = json!(brute / fast);
    }
    let body = match a.format {
        Format::Json => serde_json::to_string_pretty(&value)? + "\n",
        Format::Text => {
            let mut s = String::new();
            for (k, v) in value.as_object().expect("object") {
                match v.get("p50") {
                    Some(p50) => s += &format!("{k}: p50={p50} min={} max={}\n", v["min"], v["max"]),
                    None => s += &format!("{k}: {v}\n"),
                }
            }
            s
        }
    };
    if let Some(path) = &a.out {
        write_atomic(path, |w| Ok(w.write_all(body.as_bytes())?))?;
    }
    out.write_all(body.as_bytes())?;
    Ok(())
}

fn cmd_slice(a: SliceArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.opts.config();
    cfg.validate()?;
    if a.size == 0 || !(a.half_extent > 0.0) {
        bail!("--size and --half-extent must be positive");
    }
    let sq = match &a.scene {
        Some(p) => io::read_scene(p)?
            .primitives
            .into_iter()
            .next()
            .with_context(|| format!("{} has no primitives", p.display()))?,
        None => synth::reference_shape(),
    };
    let grid = synth::xz_slice(a.size, a.half_extent)?;
    let (cloud, _) = sqocc_core::gaussianize(&sq, &cfg)?;
    let report = approximation_error(&sq, &cloud, &grid);

    // Rows top to bottom = z descending; both images share one intensity scale.
    let n = a.size;
    let peak = report.truth.iter().chain(&report.mixture).cloned().fold(0.0, f64::max).max(1e-300);
    let image = |field: &[f64]| -> Vec<f32> {
        (0..n * n)
            .map(|i| {
                let (row, col) = (i / n, i % n);
                (field[grid.linear(col, 0, n - 1 - row)] / peak) as f32
            })
            .collect()
    };
    let prefix = a.out.display().to_string();
    write_atomic(Path::new(&format!("{prefix}.truth.pgm")), |w| io::write_pgm(w, n, n, &image(&report.truth)))?;
    write_atomic(Path::new(&format!("{prefix}.mixture.pgm")), |w| io::write_pgm(w, n, n, &image(&report.mixture)))?;

    let text = format!(
        "{} gaussians; mean abs error {:.6} over {} supported pixels, {:.6} overall, max {:.6}\n",
        cloud.len(),
        report.supported_mean_abs_error,
        report.supported_voxels,
        report.mean_abs_error,
        report.max_abs_error
    );
    let value = json!({
        "gaussians": cloud.len(),
        "supported_mean_abs_error": report.supported_mean_abs_error,
        "supported_pixels": report.supported_voxels,
        "mean_abs_error": report.mean_abs_error,
        "max_abs_error": report.max_abs_error,
    });
    emit(out, a.format, &text, &value)
}
