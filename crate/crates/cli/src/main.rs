use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use beliefnav::belief::DetectionRange;
use beliefnav::export::{save_ply, save_semantic_snapshot};
use beliefnav::planner::{anneal_plan, brute_force_plan, AnnealConfig, PlanningInstance};
use beliefnav::providers::remote::{RemoteConfig, RemoteProvider};
use beliefnav::providers::{ConceptWorldModel, LandmarkTable, ProviderSet, SyntheticDetectorConfig};
use beliefnav::runner::{run_batch, run_episode_with_maps, BatchSummary, EpisodeConfig, EpisodeJob, PlannerMode};
use beliefnav::simenv::{generate_scene, GeneratorConfig, Scene, SceneSpec, SimConfig};
use beliefnav::posterior;

#[derive(Parser, Debug)]
#[command(name = "beliefnav", version, about = "Object-goal navigation over a voxel belief map")]
struct Cli {
    /// JSON file overriding any default (see `Settings`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a batch of episodes and write results.json.
    Run {
        #[command(flatten)]
        batch: BatchArgs,
        #[arg(long, value_enum)]
        planner: Option<PlannerArg>,
        /// Ignore the visibility map.
        #[arg(long)]
        no_visibility: bool,
    },
    /// Compare annealing against brute force on random instances.
    PlanBench {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 10)]
        frontiers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one episode and write map snapshots.
    Dump {
        /// Scene file; a generated scene is used when absent.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value = "dump")]
        out: PathBuf,
    },
    /// Run the same episodes under each ablation.
    Ablate {
        #[command(flatten)]
        batch: BatchArgs,
    },
}

#[derive(Args, Debug)]
struct BatchArgs {
    /// Directory of scene JSON files; generated scenes are used when absent.
    #[arg(long)]
    scene_dir: Option<PathBuf>,
    /// Seed list such as `0-9,12`.
    #[arg(long, default_value = "0-9")]
    seeds: String,
    /// Remote provider endpoint; synthetic providers when absent.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum PlannerArg {
    Anneal,
    Greedy,
    Random,
}

impl From<PlannerArg> for PlannerMode {
    fn from(p: PlannerArg) -> Self {
        match p {
            PlannerArg::Anneal => PlannerMode::Anneal,
            PlannerArg::Greedy => PlannerMode::Greedy,
            PlannerArg::Random => PlannerMode::RandomFrontier,
        }
    }
}

/// Everything the config file may override.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct Settings {
    episode: EpisodeConfig,
    sim: SimConfig,
    generator: GeneratorConfig,
    detector: SyntheticDetectorConfig,
    detection_range: DetectionRange,
    remote: RemoteConfig,
    /// Landmark table file replacing the bundled one.
    landmark_table: Option<PathBuf>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(p) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    }

    fn providers(&self, endpoint: Option<&str>) -> Result<ProviderSet> {
        if let Some(ep) = endpoint {
            let cfg = RemoteConfig { endpoint: ep.to_owned(), ..self.remote.clone() };
            return Ok(ProviderSet::remote(Arc::new(RemoteProvider::new(cfg)?)));
        }
        let table = match &self.landmark_table {
            Some(p) => LandmarkTable::load(p)?,
            None => LandmarkTable::builtin(),
        };
        Ok(ProviderSet::synthetic(
            Arc::new(ConceptWorldModel::builtin()),
            table,
            self.detection_range,
            self.detector,
        ))
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
                if a > b {
                    bail!("empty seed range {part}");
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse()?),
        }
    }
    if out.is_empty() {
        bail!("no seeds given");
    }
    Ok(out)
}

fn load_scene_dir(dir: &Path, sim: SimConfig) -> Result<Vec<Arc<Scene>>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no scene files in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| Ok(Arc::new(Scene::load(p, sim).with_context(|| format!("loading {}", p.display()))?)))
        .collect()
}

/// Scene-dir batches pair every scene with every seed; generated batches
/// use one scene per seed.
fn build_jobs(settings: &Settings, args: &BatchArgs, base: &EpisodeConfig) -> Result<Vec<EpisodeJob>> {
    let seeds = parse_seeds(&args.seeds)?;
    let mut jobs = Vec::new();
    match &args.scene_dir {
        Some(dir) => {
            for scene in load_scene_dir(dir, settings.sim)? {
                for &seed in &seeds {
                    jobs.push(EpisodeJob { scene: scene.clone(), cfg: EpisodeConfig { seed, ..base.clone() } });
                }
            }
        }
        None => {
            for &seed in &seeds {
                let spec = generate_scene(seed, &settings.generator, &settings.sim)?;
                let scene = Arc::new(Scene::new(spec, settings.sim)?);
                jobs.push(EpisodeJob { scene, cfg: EpisodeConfig { seed, ..base.clone() } });
            }
        }
    }
    Ok(jobs)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn report(name: &str, s: &BatchSummary) {
    println!(
        "{name}: episodes {} success {:.3} spl {:.3} errors {}",
        s.episodes, s.success_rate, s.mean_spl, s.errors
    );
}

#[derive(Serialize)]
struct PlanBenchReport {
    instances: usize,
    frontiers: usize,
    over_10_percent: usize,
    worst_ratio: f64,
    median_ms: f64,
}

fn plan_bench(instances: usize, frontiers: usize, seed: u64) -> Result<PlanBenchReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times = Vec::with_capacity(instances);
    let (mut over, mut worst) = (0, 1.0f64);
    for i in 0..instances {
        let inst = PlanningInstance::random_euclidean(frontiers, 20.0, &mut rng);
        let cfg = AnnealConfig { rng_seed: seed.wrapping_add(i as u64), ..AnnealConfig::default() };
        let t = Instant::now();
        let sa = anneal_plan(&inst, &cfg, None)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
        let bf = brute_force_plan(&inst)?;
        let ratio = if bf.cost > 0.0 { sa.cost / bf.cost } else { 1.0 };
        worst = worst.max(ratio);
        if ratio > 1.1 {
            over += 1;
        }
    }
    times.sort_by(f64::total_cmp);
    let median_ms = if times.is_empty() { 0.0 } else { times[times.len() / 2] };
    Ok(PlanBenchReport { instances, frontiers, over_10_percent: over, worst_ratio: worst, median_ms })
}

fn dump(settings: &Settings, scene: Option<&Path>, seed: u64, endpoint: Option<&str>, out: &Path) -> Result<bool> {
    let spec = match scene {
        Some(p) => SceneSpec::load(p)?,
        None => generate_scene(seed, &settings.generator, &settings.sim)?,
    };
    let scene = Scene::new(spec, settings.sim)?;
    let providers = settings.providers(endpoint)?;
    let cfg = EpisodeConfig { seed, ..settings.episode.clone() };
    std::fs::create_dir_all(out)?;
    let mut trace = std::io::BufWriter::new(std::fs::File::create(out.join("trace.jsonl"))?);
    let (result, maps) = run_episode_with_maps(&scene, &cfg, &providers, Some(&mut trace));
    write_json(&out.join("result.json"), &result)?;
    let ok = result.error.is_none();
    let Some(maps) = maps else {
        bail!("episode failed before building maps: {}", result.error.unwrap_or_default());
    };
    save_semantic_snapshot(&maps.semantic, &maps.grid, out, "semantic")?;
    save_ply(&maps.belief.grid, &maps.grid, &out.join("belief.ply"))?;
    save_ply(&maps.visibility.grid, &maps.grid, &out.join("visibility.ply"))?;
    save_ply(&posterior(&maps.belief, &maps.visibility), &maps.grid, &out.join("posterior.ply"))?;
    println!("{}: {:?} in {} steps, spl {:.3}", result.scene, result.termination, result.steps, result.spl);
    Ok(ok)
}

fn ablations(base: &EpisodeConfig) -> Vec<(&'static str, EpisodeConfig)> {
    let with = |f: &dyn Fn(&mut EpisodeConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    vec![
        ("full", base.clone()),
        ("greedy", with(&|c| c.planner = PlannerMode::Greedy)),
        ("no_visibility", with(&|c| c.use_visibility = false)),
        ("random_frontier", with(&|c| c.planner = PlannerMode::RandomFrontier)),
        ("no_room_landmarks", with(&|c| c.landmark_levels[0] = false)),
        ("no_region_landmarks", with(&|c| c.landmark_levels[1] = false)),
        ("no_object_landmarks", with(&|c| c.landmark_levels[2] = false)),
    ]
}

fn run(cli: Cli) -> Result<bool> {
    let settings = Settings::load(cli.config.as_deref())?;
    settings.episode.validate()?;
    match cli.cmd {
        Command::Run { batch, planner, no_visibility } => {
            let mut base = settings.episode.clone();
            if let Some(p) = planner {
                base.planner = p.into();
            }
            if no_visibility {
                base.use_visibility = false;
            }
            let providers = settings.providers(batch.endpoint.as_deref())?;
            let jobs = build_jobs(&settings, &batch, &base)?;
            info!("running {} episodes", jobs.len());
            let summary = run_batch(&jobs, &providers)?;
            write_json(&batch.out.join("results.json"), &summary)?;
            report("run", &summary);
            Ok(summary.errors == 0)
        }
        Command::PlanBench { instances, frontiers, seed, out } => {
            let r = plan_bench(instances, frontiers, seed)?;
            println!(
                "{} instances of {} frontiers: {} over 10%, worst ratio {:.4}, median {:.2} ms",
                r.instances, r.frontiers, r.over_10_percent, r.worst_ratio, r.median_ms
            );
            if let Some(p) = out {
                write_json(&p, &r)?;
            }
            Ok(true)
        }
        Command::Dump { scene, seed, endpoint, out } => {
            dump(&settings, scene.as_deref(), seed, endpoint.as_deref(), &out)
        }
        Command::Ablate { batch } => {
            let providers = settings.providers(batch.endpoint.as_deref())?;
            let mut table = serde_json::Map::new();
            let mut ok = true;
            for (name, cfg) in ablations(&settings.episode) {
                let jobs = build_jobs(&settings, &batch, &cfg)?;
                let summary = run_batch(&jobs, &providers)?;
                report(name, &summary);
                ok &= summary.errors == 0;
                write_json(&batch.out.join(format!("{name}.json")), &summary)?;
                table.insert(
                    name.into(),
                    serde_json::json!({
                        "episodes": summary.episodes,
                        "success_rate": summary.success_rate,
                        "mean_spl": summary.mean_spl,
                        "errors": summary.errors,
                    }),
                );
            }
            write_json(&batch.out.join("ablation.json"), &table)?;
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
