use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use slicesim::geometry::save_mesh;
use slicesim_cli::config::{self, MeshSource};
use slicesim_cli::experiments::{build_mesh, build_scene, ground_truth};

#[derive(Parser)]
#[command(name = "slicesim", version, about = "Differentiable knife-cutting simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its artifacts.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a generated mesh as `.node` / `.ele` files.
    GenMesh {
        shape: Shape,
        /// Shape parameters as JSON, e.g. '{"radius":0.02,"length":0.1,"rings":2,"layers":6}'.
        params: String,
        /// Output path without extension.
        #[arg(long, default_value = "mesh")]
        out: PathBuf,
    },
    /// Roll out a config's scene and write the force profile as a reference CSV.
    Gt {
        config: PathBuf,
        #[arg(long, default_value = "reference.csv")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Cylinder,
    Sphere,
    Prism,
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { config: path, out, seed } => {
            let mut cfg = config::load(&path)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let base = config_dir(&path);
            let out_dir = out
                .or_else(|| cfg.output_dir.as_ref().map(|d| config::resolve(&base, d)))
                .unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.kind()));
            let report = slicesim_cli::run_config(&cfg, &base, &out_dir)?;
            println!("{}", serde_json::to_string_pretty(&report.summary)?);
            log::info!("wrote {} files to {}", report.files.len(), report.out_dir.display());
        }
        Command::GenMesh { shape, params, out } => {
            let wrap = match shape {
                Shape::Cylinder => "cylinder",
                Shape::Sphere => "sphere",
                Shape::Prism => "prism",
            };
            let src: MeshSource = serde_json::from_str(&format!("{{\"{wrap}\":{params}}}"))
                .with_context(|| format!("invalid {wrap} parameters"))?;
            let mesh = build_mesh(&src, 1.0, Path::new("."))?;
            let node = out.with_extension("node");
            let ele = out.with_extension("ele");
            save_mesh(&mesh, &node, &ele)?;
            log::info!(
                "wrote {} vertices and {} tetrahedra to {} / {}",
                mesh.vertices.len(),
                mesh.tets.len(),
                node.display(),
                ele.display()
            );
        }
        Command::Gt { config: path, out } => {
            let cfg = config::load(&path)?;
            let scene = build_scene(&cfg.scene, &config_dir(&path))?;
            let profile = ground_truth(&scene, &config::ParamOverrides::default())?;
            std::fs::write(&out, profile.to_csv()).with_context(|| format!("writing {}", out.display()))?;
            log::info!("wrote {} samples to {}", profile.len(), out.display());
        }
    }
    Ok(())
}
