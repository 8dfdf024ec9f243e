//! Command-line front end. `dispatch` parses arguments, runs one subcommand,
//! and maps failures to exit codes: 1 for usage errors, 2 for data errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::barycenter::{compute_barycenter, BarycenterConfig, BarycenterInit};
use crate::deform::{warp_image, warp_points, DeformSampler, WarpSpec};
use crate::heatmap::{render_heatmap, HeatmapParams};
use crate::io::{write_atomic, write_atomic_with, write_json};
use crate::landmarks::LandmarkSet;
use crate::raster::Image;
use crate::regularizers::{barycenter_reg, geometric_reg, AffineCentering, RegCoeffs};
use crate::sandbox::{
    generate_synthetic, iod_error, normalized_w1, run_ablation, write_curve_csv, write_trajectory_csv, AblationConfig, SyntheticFaceConfig, SyntheticSample,
};
use crate::transport::{self, CostPower, SinkhornParams, Solver};

#[derive(Parser, Debug)]
#[command(name = "landmark-bary", version, about = "Optimal-transport barycenters and regularizers for 2D landmarks")]
struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, env = "LANDMARK_BARY_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimal transport between two landmark sets.
    Transport(TransportArgs),
    /// Free-support barycenter of a directory of landmark sets.
    Barycenter(BarycenterArgs),
    /// Render a skeleton heatmap.
    Heatmap(HeatmapArgs),
    /// Sample a warp and apply it to an image and/or landmarks.
    Deform(DeformArgs),
    /// Evaluate both regularizers on a prediction.
    RegEval(RegEvalArgs),
    /// Run a synthetic ablation and write its trajectory.
    Ablate(AblateArgs),
    /// IOD and normalized W1 of predictions against ground truth.
    Metrics(MetricsArgs),
    /// Write a synthetic landmark dataset.
    Generate(GenerateArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Method {
    Exact,
    Sinkhorn,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Centering {
    Raw,
    Com,
}

impl From<Centering> for AffineCentering {
    fn from(c: Centering) -> Self {
        match c {
            Centering::Raw => AffineCentering::Raw,
            Centering::Com => AffineCentering::Com,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Init {
    FirstSample,
    MeanOfSamples,
}

#[derive(Args, Debug, Serialize)]
struct SolverArgs {
    #[arg(long, value_enum, default_value_t = Method::Exact)]
    method: Method,
    /// Entropic regularization (sinkhorn only).
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    /// Iteration cap (sinkhorn only).
    #[arg(long, default_value_t = 2000)]
    sinkhorn_iters: usize,
    /// Marginal tolerance (sinkhorn only).
    #[arg(long, default_value_t = 1e-6)]
    sinkhorn_tol: f64,
}

impl SolverArgs {
    fn solver(&self) -> anyhow::Result<Solver> {
        Ok(match self.method {
            Method::Exact => Solver::Exact,
            Method::Sinkhorn => {
                let params = SinkhornParams {
                    epsilon: self.eps,
                    max_iters: self.sinkhorn_iters,
                    tolerance: self.sinkhorn_tol,
                };
                params.validate()?;
                Solver::Sinkhorn(params)
            }
        })
    }
}

#[derive(Args, Debug, Serialize)]
struct HeatmapFlags {
    /// Square resolution in pixels.
    #[arg(long, default_value_t = 64)]
    res: usize,
    /// Gaussian width in normalized units.
    #[arg(long, default_value_t = 0.02)]
    sigma: f64,
    /// Neighbours per point in the skeleton graph.
    #[arg(long, default_value_t = 2)]
    k: usize,
}

impl HeatmapFlags {
    fn params(&self) -> anyhow::Result<HeatmapParams> {
        let p = HeatmapParams {
            resolution: (self.res, self.res),
            sigma: self.sigma,
            k: self.k,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args, Debug, Serialize)]
struct TransportArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Use the unsquared Euclidean cost.
    #[arg(long)]
    linear_cost: bool,
    /// Pixel side for .pts inputs; JSON inputs are already normalized.
    #[arg(long, default_value_t = 1.0)]
    side: f64,
    /// Write the result here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct BarycenterArgs {
    /// Directory of .json or .pts landmark files.
    #[arg(long)]
    landmarks_dir: PathBuf,
    /// Barycenter JSON; printed to standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    side: f64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = Init::FirstSample)]
    init: Init,
    #[command(flatten)]
    solver: SolverArgs,
    /// Subset sizes for the sample-size curve, comma separated.
    #[arg(long, value_delimiter = ',')]
    subset_curve: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Curve CSV; defaults to `<out>.curve.csv`, or standard output.
    #[arg(long)]
    curve_out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct HeatmapArgs {
    #[arg(long)]
    landmarks: PathBuf,
    #[command(flatten)]
    heatmap: HeatmapFlags,
    /// 16-bit grayscale PNG.
    #[arg(long)]
    out: PathBuf,
    /// Also write the normalized float grid as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    side: f64,
}

#[derive(Args, Debug, Serialize)]
struct SamplerFlags {
    /// Rotation range in degrees.
    #[arg(long, default_value_t = 15.0)]
    rotation_deg: f64,
    #[arg(long, default_value_t = 0.9)]
    scale_min: f64,
    #[arg(long, default_value_t = 1.1)]
    scale_max: f64,
    #[arg(long, default_value_t = 0.05)]
    translation: f64,
    #[arg(long, default_value_t = 4)]
    elastic_grid: usize,
    #[arg(long, default_value_t = 0.0)]
    elastic_alpha_min: f64,
    #[arg(long, default_value_t = 0.03)]
    elastic_alpha_max: f64,
}

impl SamplerFlags {
    fn sampler(&self, seed: u64) -> DeformSampler {
        DeformSampler {
            rotation_range: self.rotation_deg.to_radians(),
            scale_range: (self.scale_min, self.scale_max),
            translation_range: self.translation,
            elastic_grid_size: self.elastic_grid,
            elastic_alpha_range: (self.elastic_alpha_min, self.elastic_alpha_max),
            seed,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct DeformArgs {
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    landmarks: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Outputs go to `<prefix>.warp.json`, `<prefix>.png`, `<prefix>.landmarks.json`.
    #[arg(long)]
    out_prefix: PathBuf,
    #[command(flatten)]
    sampler: SamplerFlags,
    #[arg(long, default_value_t = 1.0)]
    side: f64,
}

#[derive(Args, Debug, Serialize)]
struct RegEvalArgs {
    /// Prediction to score.
    #[arg(long)]
    landmarks: PathBuf,
    #[arg(long)]
    barycenter: PathBuf,
    /// Also score geometric consistency under a warp sampled from this seed.
    #[arg(long)]
    warp_seed: Option<u64>,
    /// Prediction on the warped input; defaults to the warped prediction itself.
    #[arg(long)]
    warped_landmarks: Option<PathBuf>,
    /// Image whose size sets the heatmap grid and which is warped alongside.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Centering::Com)]
    affine_centering: Centering,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    heatmap: HeatmapFlags,
    #[command(flatten)]
    sampler: SamplerFlags,
    #[arg(long, default_value_t = 1.0)]
    c1: f64,
    #[arg(long, default_value_t = 2.0)]
    c2: f64,
    #[arg(long, default_value_t = 4.0)]
    c3: f64,
    #[arg(long, default_value_t = 0.001)]
    geometric_l1: f64,
    #[arg(long, default_value_t = 1.0)]
    side: f64,
    /// Report JSON; printed to standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct AblateArgs {
    /// Dataset directory holding `landmarks/` and `warps/`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    barycenter: PathBuf,
    /// Experiment JSON; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the experiment config.
    #[arg(long)]
    seed: Option<u64>,
    /// Trajectory CSV.
    #[arg(long)]
    out: PathBuf,
    /// Write final per-sample predictions here.
    #[arg(long)]
    pred_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct MetricsArgs {
    /// Prediction file or directory.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth file or directory with matching file names.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = 36)]
    left_eye: usize,
    #[arg(long, default_value_t = 45)]
    right_eye: usize,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 1.0)]
    side: f64,
    /// CSV; printed to standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct GenerateArgs {
    /// Generator JSON; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; receives `landmarks/` and `warps/`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    subcommand: &'a str,
    config: &'a C,
    seed: Option<u64>,
    tool_version: &'static str,
    input_digests: BTreeMap<String, String>,
}

/// Input files read during a run, with their SHA-256 digests.
#[derive(Default)]
struct Inputs(BTreeMap<String, String>);

impl Inputs {
    fn read(&mut self, path: &Path) -> anyhow::Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.0.insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(bytes)
    }

    fn text(&mut self, path: &Path) -> anyhow::Result<String> {
        String::from_utf8(self.read(path)?).with_context(|| format!("{} is not UTF-8", path.display()))
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self, path: &Path) -> anyhow::Result<T> {
        serde_json::from_str(&self.text(path)?).with_context(|| format!("parsing {}", path.display()))
    }

    fn landmarks(&mut self, path: &Path, side: f64) -> anyhow::Result<LandmarkSet> {
        let text = self.text(path)?;
        let parsed = if path.extension().is_some_and(|e| e == "pts") {
            LandmarkSet::parse_pts(&text, side)
        } else {
            serde_json::from_str(&text).map_err(Into::into)
        };
        parsed.with_context(|| format!("parsing {}", path.display()))
    }

    fn image(&mut self, path: &Path) -> anyhow::Result<Image> {
        self.read(path)?;
        Image::load(path).with_context(|| format!("loading {}", path.display()))
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest<C: Serialize>(
    out: &Path,
    subcommand: &str,
    config: &C,
    seed: Option<u64>,
    inputs: Inputs,
) -> anyhow::Result<()> {
    let manifest = RunManifest {
        subcommand,
        config,
        seed,
        tool_version: env!("CARGO_PKG_VERSION"),
        input_digests: inputs.0,
    };
    write_json(&manifest_path(out), &manifest)?;
    Ok(())
}

/// Writes `bytes` to `out` (with a manifest) or to standard output.
fn emit<C: Serialize>(
    out: Option<&Path>,
    bytes: &[u8],
    subcommand: &str,
    config: &C,
    seed: Option<u64>,
    inputs: Inputs,
) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            write_atomic(path, bytes)?;
            write_manifest(path, subcommand, config, seed, inputs)
        }
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn json_bytes<T: Serialize + ?Sized>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Landmark files in `dir`, sorted by name; manifests are skipped.
fn landmark_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        p.is_file() && (name.ends_with(".json") || name.ends_with(".pts")) && !name.ends_with(".manifest.json")
    });
    files.sort();
    if files.is_empty() {
        bail!("no landmark files found in {}", dir.display());
    }
    Ok(files)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn run_transport(a: &TransportArgs) -> anyhow::Result<()> {
    let mut inputs = Inputs::default();
    let source = inputs.landmarks(&a.source, a.side)?;
    let target = inputs.landmarks(&a.target, a.side)?;
    let power = if a.linear_cost { CostPower::Linear } else { CostPower::Squared };
    let sol = transport::solve(&source, &target, &a.solver.solver()?, power)?;
    #[derive(Serialize)]
    struct Out<'a> {
        cost: f64,
        converged: bool,
        plan: &'a transport::TransportPlan,
    }
    let bytes = json_bytes(&Out {
        cost: sol.cost,
        converged: sol.converged,
        plan: &sol.plan,
    })?;
    emit(a.out.as_deref(), &bytes, "transport", a, None, inputs)
}

fn run_barycenter(a: &BarycenterArgs) -> anyhow::Result<()> {
    let files = landmark_files(&a.landmarks_dir)?;
    let mut inputs = Inputs::default();
    let samples: Vec<LandmarkSet> = files
        .iter()
        .map(|f| inputs.landmarks(f, a.side))
        .collect::<anyhow::Result<_>>()?;
    let config = BarycenterConfig {
        max_outer_iters: a.max_iters,
        convergence_tol: a.tol,
        init: match a.init {
            Init::FirstSample => BarycenterInit::FirstSample,
            Init::MeanOfSamples => BarycenterInit::MeanOfSamples,
        },
        solver: a.solver.solver()?,
    };
    let bary = compute_barycenter(&samples, &config)?;
    if !bary.converged {
        log::warn!("barycenter stopped after {} iterations without converging", bary.iterations);
    }
    log::info!("barycenter of {} sets, {} iterations", samples.len(), bary.iterations);

    let curve = if a.subset_curve.is_empty() {
        None
    } else {
        let rows = crate::barycenter::barycenter_sample_curve(&samples, &a.subset_curve, a.repeats, a.seed, &config)?;
        let mut buf = Vec::new();
        write_curve_csv(&rows, &mut buf)?;
        Some(buf)
    };
    // Digests are shared by both outputs.
    let digests = inputs.0.clone();
    emit(a.out.as_deref(), &json_bytes(&bary.support)?, "barycenter", a, Some(a.seed), inputs)?;
    if let Some(buf) = curve {
        let target = a.curve_out.clone().or_else(|| {
            a.out.as_ref().map(|o| {
                let mut s = o.as_os_str().to_owned();
                s.push(".curve.csv");
                PathBuf::from(s)
            })
        });
        emit(target.as_deref(), &buf, "barycenter", a, Some(a.seed), Inputs(digests))?;
    }
    Ok(())
}

fn run_heatmap(a: &HeatmapArgs) -> anyhow::Result<()> {
    let mut inputs = Inputs::default();
    let s = inputs.landmarks(&a.landmarks, a.side)?;
    let hm = render_heatmap(&s, &a.heatmap.params()?, true)?;
    hm.save_png16(&a.out)?;
    if let Some(json) = &a.json {
        write_json(json, &hm)?;
    }
    write_manifest(&a.out, "heatmap", a, None, inputs)
}

fn run_deform(a: &DeformArgs) -> anyhow::Result<()> {
    if a.image.is_none() && a.landmarks.is_none() {
        bail!("deform needs --image, --landmarks, or both");
    }
    let mut inputs = Inputs::default();
    let g = a.sampler.sampler(a.seed).sample_seeded(a.seed);
    let with_suffix = |suffix: &str| {
        let mut s = a.out_prefix.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    if let Some(path) = &a.image {
        let img = inputs.image(path)?;
        warp_image(&g, &img)?.save(&with_suffix(".png"))?;
    }
    if let Some(path) = &a.landmarks {
        let s = inputs.landmarks(path, a.side)?;
        let moved = warp_points(&g, &s);
        if !moved.is_valid() {
            log::warn!("warped landmarks leave the unit square");
        }
        write_json(&with_suffix(".landmarks.json"), &moved)?;
    }
    let warp_path = with_suffix(".warp.json");
    write_json(&warp_path, &g)?;
    write_manifest(&warp_path, "deform", a, Some(a.seed), inputs)
}

fn run_reg_eval(a: &RegEvalArgs) -> anyhow::Result<()> {
    let mut inputs = Inputs::default();
    let x = inputs.landmarks(&a.landmarks, a.side)?;
    let bary = inputs.landmarks(&a.barycenter, a.side)?;
    let coeffs = RegCoeffs {
        barycenter: [a.c1, a.c2, a.c3],
        geometric_l1: a.geometric_l1,
    };
    let flat = barycenter_reg(&x, &bary, &coeffs, &a.solver.solver()?, a.affine_centering.into())?;

    let mut heatmap = a.heatmap.params()?;
    let image = a.image.as_deref().map(|p| inputs.image(p)).transpose()?;
    if let Some(img) = &image {
        heatmap.resolution = (img.height(), img.width());
    }
    let mut geometric = None;
    let mut warp = None;
    if let Some(seed) = a.warp_seed {
        let g = a.sampler.sampler(seed).sample_seeded(seed);
        let on_warped = match &a.warped_landmarks {
            Some(p) => inputs.landmarks(p, a.side)?,
            None => warp_points(&g, &x),
        };
        geometric = Some(geometric_reg(&on_warped, &x, &g, &heatmap, &coeffs)?);
        if let (Some(img), Some(out)) = (&image, &a.out) {
            let mut s = out.as_os_str().to_owned();
            s.push(".warped.png");
            warp_image(&g, img)?.save(Path::new(&s))?;
        }
        warp = Some(g);
    } else if a.warped_landmarks.is_some() {
        bail!("--warped-landmarks requires --warp-seed");
    }

    #[derive(Serialize)]
    struct Report<'a> {
        barycenter: &'a crate::regularizers::BarycenterRegReport,
        geometric: Option<crate::regularizers::GeometricRegReport>,
        warp: Option<&'a WarpSpec>,
    }
    let bytes = json_bytes(&Report {
        barycenter: &flat,
        geometric,
        warp: warp.as_ref(),
    })?;
    emit(a.out.as_deref(), &bytes, "reg-eval", a, a.warp_seed, inputs)
}

/// Pairs `landmarks/NAME` with `warps/NAME` under a dataset directory.
fn load_dataset(dir: &Path, inputs: &mut Inputs) -> anyhow::Result<(Vec<String>, Vec<SyntheticSample>)> {
    let files = landmark_files(&dir.join("landmarks"))?;
    let mut names = Vec::with_capacity(files.len());
    let mut data = Vec::with_capacity(files.len());
    for f in files {
        let name = file_name(&f);
        let warp_path = dir.join("warps").join(&name);
        let warp: WarpSpec = inputs
            .json(&warp_path)
            .with_context(|| format!("no warp for {name}"))?;
        data.push(SyntheticSample {
            truth: inputs.landmarks(&f, 1.0)?,
            warp,
        });
        names.push(name);
    }
    Ok((names, data))
}

#[derive(Serialize)]
struct ResolvedAblation<'a> {
    args: &'a AblateArgs,
    experiment: &'a AblationConfig,
}

fn run_ablate(a: &AblateArgs) -> anyhow::Result<()> {
    let mut inputs = Inputs::default();
    let mut config: AblationConfig = match &a.config {
        Some(p) => inputs.json(p)?,
        None => AblationConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let bary = inputs.landmarks(&a.barycenter, 1.0)?;
    let (names, data) = load_dataset(&a.data, &mut inputs)?;
    let result = run_ablation(&data, &bary, &config)?;
    write_atomic_with(&a.out, |w| write_trajectory_csv(&result.trajectory, w))?;
    if let Some(dir) = &a.pred_dir {
        fs::create_dir_all(dir)?;
        for (name, pred) in names.iter().zip(&result.predictions) {
            write_json(&dir.join(name), pred)?;
        }
    }
    let resolved = ResolvedAblation {
        args: a,
        experiment: &config,
    };
    write_manifest(&a.out, "ablate", &resolved, Some(config.seed), inputs)
}

fn run_metrics(a: &MetricsArgs) -> anyhow::Result<()> {
    let mut inputs = Inputs::default();
    let pairs: Vec<(String, PathBuf, PathBuf)> = if a.pred.is_dir() {
        landmark_files(&a.pred)?
            .into_iter()
            .map(|p| {
                let name = file_name(&p);
                let truth = if a.truth.is_dir() { a.truth.join(&name) } else { a.truth.clone() };
                (name, p, truth)
            })
            .collect()
    } else {
        vec![(file_name(&a.pred), a.pred.clone(), a.truth.clone())]
    };
    let solver = a.solver.solver()?;
    let mut csv = String::from("name,iod,nw1\n");
    let (mut sum_iod, mut sum_w1) = (0.0, 0.0);
    for (name, pred, truth) in &pairs {
        let p = inputs.landmarks(pred, a.side)?;
        let t = inputs.landmarks(truth, a.side)?;
        let iod = iod_error(&p, &t, a.left_eye, a.right_eye).with_context(|| name.clone())?;
        let nw1 = normalized_w1(&p, &t, a.left_eye, a.right_eye, &solver).with_context(|| name.clone())?;
        sum_iod += iod;
        sum_w1 += nw1;
        csv.push_str(&format!("{name},{iod:?},{nw1:?}\n"));
    }
    let n = pairs.len() as f64;
    csv.push_str(&format!("mean,{:?},{:?}\n", sum_iod / n, sum_w1 / n));
    emit(a.out.as_deref(), csv.as_bytes(), "metrics", a, None, inputs)
}

fn run_generate(a: &GenerateArgs) -> anyhow::Result<()> {
    let mut inputs = Inputs::default();
    let mut config: SyntheticFaceConfig = match &a.config {
        Some(p) => inputs.json(p)?,
        None => SyntheticFaceConfig::default(),
    };
    if let Some(n) = a.n {
        config.n_samples = n;
    }
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let data = generate_synthetic(&config)?;
    let width = data.len().to_string().len().max(3);
    for sub in ["landmarks", "warps"] {
        fs::create_dir_all(a.out.join(sub))?;
    }
    for (i, s) in data.iter().enumerate() {
        let name = format!("face_{i:0width$}.json");
        write_json(&a.out.join("landmarks").join(&name), &s.truth)?;
        write_json(&a.out.join("warps").join(&name), &s.warp)?;
    }
    write_json(&a.out.join("template.json"), &config.template)?;
    write_manifest(&a.out.join("dataset"), "generate", &config, Some(config.seed), inputs)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| anyhow!("configuring {} threads: {e}", cli.threads))?;
    }
    match &cli.command {
        Command::Transport(a) => run_transport(a),
        Command::Barycenter(a) => run_barycenter(a),
        Command::Heatmap(a) => run_heatmap(a),
        Command::Deform(a) => run_deform(a),
        Command::RegEval(a) => run_reg_eval(a),
        Command::Ablate(a) => run_ablate(a),
        Command::Metrics(a) => run_metrics(a),
        Command::Generate(a) => run_generate(a),
    }
}

/// Runs the tool on `argv` (program name first) and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}
