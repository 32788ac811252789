use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ssv_core::bench::{self, SweepGrid};
use ssv_core::config::RunConfig;
use ssv_core::synth::{self, SceneSpec, SyntheticScene};
use ssv_core::Error;

#[derive(Parser)]
#[command(name = "ssv", version, about = "Saliency-guided supervoxels for RGB-D point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment one RGB-D frame and write all artifacts
    Segment {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        color: Option<PathBuf>,
        #[arg(long)]
        depth: Option<PathBuf>,
        #[arg(long)]
        intrinsics: Option<PathBuf>,
    },
    /// Render synthetic scenes with ground truth
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        /// Number of scenes; the bundled suite uses 20
        #[arg(long, default_value_t = synth::SUITE_SIZE)]
        count: usize,
        /// Objects per scene; varies across the suite when unset
        #[arg(long)]
        objects: Option<usize>,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
        #[arg(long, default_value_t = 320)]
        width: usize,
        #[arg(long, default_value_t = 240)]
        height: usize,
    },
    /// Run VCCS and SSV parameter grids over a dataset
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        dataset: PathBuf,
        /// VCCS seed resolutions
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.125, 0.15, 0.175, 0.2])]
        vccs_rseed: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [6])]
        ssv_k: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.15, 0.2])]
        ssv_rmin: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.3])]
        ssv_rmax: Vec<f64>,
    },
    /// Score stored label maps against a dataset's ground truth
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory holding `<scene>/labels.pgm` or `<scene>.pgm`
        #[arg(long)]
        segmentations: PathBuf,
        /// CSV destination; printed to stdout when unset
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// key=value file applied before the flags below
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    rvoxel: Option<f64>,
    #[arg(long)]
    rseed: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    rmin: Option<f64>,
    #[arg(long)]
    rmax: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    octaves: Option<usize>,
    #[arg(long)]
    center_sigma: Option<f64>,
    #[arg(long)]
    surround_ratio: Option<f64>,
    #[arg(long)]
    rng_seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let overrides: [(&str, Option<String>); 15] = [
            ("mode", self.mode.clone()),
            ("rvoxel", self.rvoxel.map(|v| v.to_string())),
            ("rseed", self.rseed.map(|v| v.to_string())),
            ("k", self.k.map(|v| v.to_string())),
            ("rmin", self.rmin.map(|v| v.to_string())),
            ("rmax", self.rmax.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("mu", self.mu.map(|v| v.to_string())),
            ("epsilon", self.epsilon.map(|v| v.to_string())),
            ("m", self.m.map(|v| v.to_string())),
            ("max_iters", self.max_iters.map(|v| v.to_string())),
            ("octaves", self.octaves.map(|v| v.to_string())),
            ("center_sigma", self.center_sigma.map(|v| v.to_string())),
            ("surround_ratio", self.surround_ratio.map(|v| v.to_string())),
            ("rng_seed", self.rng_seed.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        if let Some(w) = self.workers {
            cfg.workers = Some(w);
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = Some(dir.clone());
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Segment {
            run,
            color,
            depth,
            intrinsics,
        } => {
            let mut cfg = run.resolve()?;
            cfg.color = color.or(cfg.color);
            cfg.depth = depth.or(cfg.depth);
            cfg.intrinsics = intrinsics.or(cfg.intrinsics);
            cfg.validate()?;
            cfg.require_inputs()?;
            let n = bench::segment_to_dir(&cfg)?;
            println!("N={n}");
        }
        Command::Synth {
            out_dir,
            count,
            objects,
            rng_seed,
            width,
            height,
        } => {
            let specs: Vec<SceneSpec> = (0..count)
                .map(|i| {
                    let base = synth::suite_spec(i);
                    SceneSpec {
                        width,
                        height,
                        num_objects: objects.unwrap_or(base.num_objects),
                        ..base
                    }
                })
                .collect();
            for (i, spec) in specs.iter().enumerate() {
                let scene = SyntheticScene::generate(spec, rng_seed + i as u64)?;
                let dir = out_dir.join(format!("scene_{i:03}"));
                scene.write(&dir)?;
                println!("{}", dir.display());
            }
        }
        Command::Sweep {
            run,
            dataset,
            vccs_rseed,
            ssv_k,
            ssv_rmin,
            ssv_rmax,
        } => {
            let base = run.resolve()?;
            let out = base
                .out_dir
                .clone()
                .ok_or_else(|| Error::InvalidParameter("sweep needs --out-dir".into()))?;
            let grid = SweepGrid::build(&base, &vccs_rseed, &ssv_k, &ssv_rmin, &ssv_rmax);
            grid.validate()?;
            if !dataset.is_dir() {
                return Err(Error::MissingInput(dataset));
            }
            let files = synth::discover_dataset(&dataset)?;
            let scenes = bench::load_dataset(&files, base.workers)?;
            let result = bench::run_sweep(&grid, &scenes, base.workers)?;
            for path in result.write(&out)? {
                println!("{}", path.display());
            }
            for p in result.matched_pairs() {
                let (a, b) = (&result.results[p.vccs], &result.results[p.ssv]);
                println!(
                    "pair {} ~ {}: N {:.1}/{:.1} REC {:.4}/{:.4} UE {:.4}/{:.4}",
                    a.config.label(),
                    b.config.label(),
                    a.report.num_superpixels.mean,
                    b.report.num_superpixels.mean,
                    a.report.rec.mean,
                    b.report.rec.mean,
                    a.report.ue.mean,
                    b.report.ue.mean
                );
            }
        }
        Command::Evaluate {
            dataset,
            segmentations,
            out,
        } => {
            for dir in [&dataset, &segmentations] {
                if !dir.is_dir() {
                    return Err(Error::MissingInput(dir.clone()));
                }
            }
            let files = synth::discover_dataset(&dataset)?;
            let scenes = bench::load_dataset(&files, None)?;
            let report = bench::evaluate_segmentations(&scenes, &segmentations)?;
            match out {
                Some(path) => report.write_csv(path)?,
                None => print!("{}", report.to_csv()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
