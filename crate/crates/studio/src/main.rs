use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use styleweave::blend::PixelBox;
use styleweave::imageio::{
    encode_image_png, encode_mask_png, load_dataset, load_image_resized, load_mask,
};
use styleweave::inversion::InversionConfig;
use styleweave::transfer::{FinetuneConfig, FreezeSpec};
use styleweave_studio::assets::{AssetKind, AssetUri};
use styleweave_studio::pipeline::{
    self, BlendRequest, FinetuneRequest, InvertRequest, JobOutput, PanoramaRequest, SampleRequest,
    TransferApiRequest,
};
use styleweave_studio::{api, run_inline, JobRequest, Project, Result, Studio, StudioError};

#[derive(Debug, Parser)]
#[command(
    name = "styleweave",
    version,
    about = "Feature-space editing studio for a style-based generator"
)]
struct Cli {
    /// Project directory, created on first use.
    #[arg(
        long,
        env = "STUDIO_PROJECT_DIR",
        default_value = "styleweave-project",
        global = true
    )]
    project: PathBuf,
    /// Checkpoint adopted by a new project. An existing project must already
    /// be pinned to it.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

/// A style given by id, or sampled from a seed.
struct StyleArg {
    id: Option<String>,
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample styles and write their renders.
    Sample {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 1.0)]
        truncation: f64,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Blend two styles, or one style across two generators.
    Blend {
        #[arg(long, value_name = "ID", conflicts_with = "seed_a")]
        style_a: Option<String>,
        #[arg(long, value_name = "N")]
        seed_a: Option<u64>,
        #[arg(long, value_name = "ID", conflicts_with = "seed_b")]
        style_b: Option<String>,
        #[arg(long, value_name = "N")]
        seed_b: Option<u64>,
        /// Uniform alpha in [0, 1].
        #[arg(long, conflicts_with = "mask")]
        alpha: Option<f64>,
        /// Grayscale PNG alpha mask.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
        /// two_image, cross_generator or constant.
        #[arg(long, default_value = "two_image")]
        mode: String,
        /// Checkpoint for branch B in cross_generator mode.
        #[arg(long)]
        generator_b: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        truncation: f64,
        #[arg(long, default_value = "blend.png")]
        out: PathBuf,
    },
    /// Knit a panorama from seeded latents or stored styles.
    Panorama {
        #[arg(long, conflicts_with = "style_ids")]
        n: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        style_ids: Option<Vec<String>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = styleweave::panorama::DEFAULT_OVERLAP_FRAC)]
        overlap: f64,
        /// horizontal or vertical.
        #[arg(long, default_value = "horizontal")]
        axis: String,
        #[arg(long, default_value = "panorama.png")]
        out: PathBuf,
        /// Also write the plan JSON here.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Recover style coefficients for an image.
    Invert {
        #[arg(long)]
        image: PathBuf,
        /// Full inversion config as JSON; the flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long)]
        prior_weight: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "inverted.png")]
        out: PathBuf,
        /// Loss trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Move a boxed region's attributes from a reference onto a source.
    Transfer {
        #[arg(long, value_name = "ID", conflicts_with = "seed_src")]
        src: Option<String>,
        #[arg(long, value_name = "N")]
        seed_src: Option<u64>,
        #[arg(long = "ref", value_name = "ID", conflicts_with = "seed_ref")]
        reference: Option<String>,
        #[arg(long, value_name = "N")]
        seed_ref: Option<u64>,
        /// x0,y0,x1,y1 in output pixels.
        #[arg(long = "box", value_delimiter = ',', required = true)]
        bbox: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        feather: usize,
        #[arg(long)]
        layer_cut: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        alpha_exponent: f64,
        #[arg(long)]
        pose_k_dims: Option<usize>,
        #[arg(long, default_value = "transfer.png")]
        out: PathBuf,
    },
    /// Finetune a copy of the generator on a directory of PNGs.
    Finetune {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        batch_size: usize,
        /// Trainable synthesis layers (default: all).
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
        #[arg(long)]
        unfreeze_affine: bool,
        #[arg(long)]
        unfreeze_mapping: bool,
        #[arg(long, default_value = "finetuned.ckpt")]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// 0 picks a free port.
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 2)]
        workers: usize,
    },
}

fn enum_arg<T: DeserializeOwned>(name: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| StudioError::bad(format!("unknown {name} `{value}`")))
}

fn style_id(project: &Project, arg: StyleArg, truncation: f64, what: &str) -> Result<String> {
    match (arg.id, arg.seed) {
        (Some(id), _) => Ok(id),
        (None, Some(seed)) => {
            let req = SampleRequest {
                seed,
                truncation,
                count: 1,
                checkpoint_hash: None,
            };
            Ok(pipeline::sample(project, &req)?.style_ids.remove(0))
        }
        (None, None) => Err(StudioError::bad(format!(
            "give a style id or a seed for {what}"
        ))),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| StudioError::Io {
        path: path.into(),
        source: e,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| StudioError::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    std::fs::write(path, bytes).map_err(|e| StudioError::Io {
        path: path.into(),
        source: e,
    })
}

fn copy_asset(project: &Project, uri: &str, out: &Path) -> Result<()> {
    write_file(out, &project.assets().get(&AssetUri::parse(uri)?)?)?;
    println!("{uri} -> {}", out.display());
    Ok(())
}

fn run_job(project: &Project, req: JobRequest, out: &Path) -> Result<JobOutput> {
    let (job, output) = run_inline(project, &req)?;
    println!("job {}", job.id);
    copy_asset(project, &output.result_uri, out)?;
    Ok(output)
}

fn run(cli: Cli) -> Result<()> {
    let project = Project::open_or_init(&cli.project, cli.checkpoint.as_deref())?;
    let r = project.generator().output_resolution();
    match cli.command {
        Command::Sample {
            seed,
            count,
            truncation,
            out,
        } => {
            let req = SampleRequest {
                seed,
                truncation,
                count,
                checkpoint_hash: None,
            };
            let resp = pipeline::sample(&project, &req)?;
            for (i, (id, uri)) in resp.style_ids.iter().zip(&resp.image_uris).enumerate() {
                copy_asset(
                    &project,
                    uri,
                    &out.join(format!("sample_{seed}_{i:03}.png")),
                )?;
                println!("style {id}");
            }
        }
        Command::Blend {
            style_a,
            seed_a,
            style_b,
            seed_b,
            alpha,
            mask,
            layers,
            mode,
            generator_b,
            truncation,
            out,
        } => {
            let mode = enum_arg("blend mode", &mode)?;
            let a = style_id(
                &project,
                StyleArg {
                    id: style_a,
                    seed: seed_a,
                },
                truncation,
                "style A",
            )?;
            let b = match (style_b, seed_b) {
                (None, None) => None,
                (id, seed) => Some(style_id(
                    &project,
                    StyleArg { id, seed },
                    truncation,
                    "style B",
                )?),
            };
            let mask_uri = match mask {
                Some(p) => {
                    let m = load_mask(&p)?;
                    Some(
                        project
                            .assets()
                            .put(AssetKind::Masks, &encode_mask_png(&m)?)?
                            .to_string(),
                    )
                }
                None => None,
            };
            let generator_b = match generator_b {
                Some(p) => Some(
                    project
                        .assets()
                        .put(AssetKind::Checkpoints, &read_file(&p)?)?
                        .to_string(),
                ),
                None => None,
            };
            let req = BlendRequest {
                style_a: a,
                style_b: b,
                mask_uri,
                constant_alpha: alpha,
                layer_set: layers.map(|l| l.into_iter().collect()),
                mode,
                generator_b,
                checkpoint_hash: None,
            };
            run_job(&project, JobRequest::Blend(req), &out)?;
        }
        Command::Panorama {
            n,
            style_ids,
            seed,
            sigma,
            overlap,
            axis,
            out,
            plan,
        } => {
            let req = PanoramaRequest {
                n: if style_ids.is_none() {
                    Some(n.unwrap_or(3))
                } else {
                    n
                },
                style_ids,
                smoothing_sigma: sigma,
                seed,
                truncation: 1.0,
                overlap_frac: overlap,
                ramp_exponent: 1.0,
                axis: enum_arg("axis", &axis)?,
                checkpoint_hash: None,
            };
            let output = run_job(&project, JobRequest::Panorama(req), &out)?;
            if let Some(p) = plan {
                copy_asset(&project, &output.artifacts["plan"], &p)?;
            }
        }
        Command::Invert {
            image,
            config,
            steps,
            step_size,
            prior_weight,
            seed,
            out,
            trace,
        } => {
            let mut cfg: InversionConfig = match config {
                Some(p) => serde_json::from_slice(&read_file(&p)?)?,
                None => InversionConfig::default(),
            };
            cfg.steps = steps.unwrap_or(cfg.steps);
            cfg.step_size = step_size.unwrap_or(cfg.step_size);
            cfg.prior_weight = prior_weight.unwrap_or(cfg.prior_weight);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let target = load_image_resized(&image, r)?;
            let image_uri = project
                .assets()
                .put(AssetKind::Images, &encode_image_png(&target)?)?;
            let req = InvertRequest {
                image_uri: image_uri.to_string(),
                config: cfg,
                checkpoint_hash: None,
            };
            let output = run_job(&project, JobRequest::Invert(req), &out)?;
            if let Some(p) = trace {
                copy_asset(&project, &output.artifacts["trace"], &p)?;
            }
        }
        Command::Transfer {
            src,
            seed_src,
            reference,
            seed_ref,
            bbox,
            feather,
            layer_cut,
            alpha_exponent,
            pose_k_dims,
            out,
        } => {
            let [x0, y0, x1, y1] = bbox[..] else {
                return Err(StudioError::bad("--box takes x0,y0,x1,y1"));
            };
            let req = TransferApiRequest {
                src: style_id(
                    &project,
                    StyleArg {
                        id: src,
                        seed: seed_src,
                    },
                    1.0,
                    "the source",
                )?,
                reference: style_id(
                    &project,
                    StyleArg {
                        id: reference,
                        seed: seed_ref,
                    },
                    1.0,
                    "the reference",
                )?,
                bbox: PixelBox::new(x0, y0, x1, y1),
                feather,
                layer_cut,
                alpha_exponent,
                pose_k_dims,
                checkpoint_hash: None,
            };
            run_job(&project, JobRequest::Transfer(req), &out)?;
        }
        Command::Finetune {
            dataset,
            steps,
            seed,
            batch_size,
            layers,
            unfreeze_affine,
            unfreeze_mapping,
            out,
            trace,
        } => {
            let mut uris = Vec::new();
            for img in load_dataset(&dataset, r)? {
                uris.push(
                    project
                        .assets()
                        .put(AssetKind::Images, &encode_image_png(&img)?)?
                        .to_string(),
                );
            }
            let req = FinetuneRequest {
                dataset: uris,
                freeze: FreezeSpec {
                    freeze_mapping: !unfreeze_mapping,
                    freeze_affine: !unfreeze_affine,
                    trainable_layer_set: layers.map(|l| l.into_iter().collect()),
                },
                config: FinetuneConfig {
                    steps,
                    seed,
                    batch_size,
                    ..FinetuneConfig::default()
                },
                checkpoint_hash: None,
            };
            let output = run_job(&project, JobRequest::Finetune(req), &out)?;
            if let Some(p) = trace {
                copy_asset(&project, &output.artifacts["trace"], &p)?;
            }
        }
        Command::Serve {
            host,
            port,
            workers,
        } => serve(project, &host, port, workers)?,
    }
    Ok(())
}

fn serve(project: Project, host: &str, port: u16, workers: usize) -> Result<()> {
    let io = |e: std::io::Error| StudioError::Internal(e.to_string());
    let rt = tokio::runtime::Runtime::new().map_err(io)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(io)?;
        let addr = listener.local_addr().map_err(io)?;
        println!("listening on http://{addr}");
        std::io::stdout().flush().ok();
        let app = api::router(Arc::new(Studio::new(project, workers)));
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                tokio::signal::ctrl_c().await.ok();
            })
            .await
            .map_err(io)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
