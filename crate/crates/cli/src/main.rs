mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use niot_core::graph_oracle::optimal_branch_point;
use niot_core::imageio::{apply_mask, enhance_conductivity, save_float_field, save_grayscale, BitDepth, Normalization};
use niot_core::porous::{pm_exponents, PmParams};
use niot_core::synth::YNetwork;
use niot_core::{CellField, Grid2D};
use rayon::prelude::*;
use serde_json::json;

use config::{load_field, Document, RunSpec};
use run::{execute, Failure};

#[derive(Parser)]
#[command(name = "niot", version, about = "Network inpainting via branched optimal transport")]
struct Cli {
    /// Log progress (repeat for per-iteration output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Maximum concurrent sweep jobs (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one reconstruction from a config file.
    Run { config: PathBuf },
    /// Run the Cartesian product of `key=v1,v2,...` overrides.
    Sweep { config: PathBuf, overrides: Vec<String> },
    /// Zero an image inside a binary mask.
    Corrupt {
        image: PathBuf,
        mask: PathBuf,
        out: PathBuf,
    },
    /// Conductivity from a thickness map and a skeleton, smoothed by the
    /// porous-media flow.
    Enhance {
        thickness: PathBuf,
        skeleton: PathBuf,
        kappa: f64,
        p: f64,
        out: PathBuf,
    },
    /// Optimal branching point for one source `O` and sinks `P`, `Q`.
    Oracle {
        /// `x,y`
        o: String,
        p: String,
        q: String,
        /// Mass fraction of `P` (the rest goes to `Q`).
        w_p: f64,
        alpha: f64,
    },
    /// Write the synthetic Y-network assets and a matching config.
    Synth {
        dir: PathBuf,
        #[arg(long, default_value_t = 52)]
        size: usize,
        #[arg(long, default_value_t = 0.1)]
        total_mass: f64,
    },
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
        Command::Run { config } => cmd_run(&config),
        Command::Sweep { config, overrides } => cmd_sweep(&config, &overrides, cli.workers),
        Command::Corrupt { image, mask, out } => cmd_corrupt(&image, &mask, &out).map_err(Failure::Config),
        Command::Enhance {
            thickness,
            skeleton,
            kappa,
            p,
            out,
        } => cmd_enhance(&thickness, &skeleton, kappa, p, &out),
        Command::Oracle { o, p, q, w_p, alpha } => cmd_oracle(&o, &p, &q, w_p, alpha).map_err(Failure::Config),
        Command::Synth { dir, size, total_mass } => cmd_synth(&dir, size, total_mass).map_err(Failure::Config),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}

fn load_spec(doc: &Document, config: &Path) -> Result<RunSpec> {
    let base = config.parent().unwrap_or(Path::new("."));
    RunSpec::from_document(doc, base)
}

fn cmd_run(config: &Path) -> Result<(), Failure> {
    let doc = Document::load(config).map_err(Failure::Config)?;
    let spec = load_spec(&doc, config).map_err(Failure::Config)?;
    let s = execute(&spec)?;
    println!(
        "{}: {:?} after {} steps, J = {:.6e}, connected = {}",
        s.output.display(),
        s.stopping_reason,
        s.iterations,
        s.objective,
        s.connected
    );
    Ok(())
}

/// Parses `key=v1,v2,...` grids into their Cartesian product.
fn expand_grid(overrides: &[String]) -> Result<Vec<Vec<(String, String)>>> {
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for o in overrides {
        let (key, values) = o
            .split_once('=')
            .ok_or_else(|| anyhow!("override '{o}' must look like key=v1,v2"))?;
        config::resolve_key(key.trim())?;
        let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            bail!("override '{o}' lists no values");
        }
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((key.trim().to_string(), v.to_string()));
                    c
                })
            })
            .collect();
    }
    Ok(combos)
}

fn job_name(index: usize, combo: &[(String, String)]) -> String {
    let mut name = format!("run_{index:03}");
    for (k, v) in combo {
        let key = k.rsplit('.').next().unwrap_or(k);
        name.push('_');
        name.push_str(key);
        name.push('=');
        name.extend(v.chars().map(|c| {
            if c.is_ascii_alphanumeric() || ".-+".contains(c) {
                c
            } else {
                '_'
            }
        }));
    }
    name
}

fn cmd_sweep(config: &Path, overrides: &[String], workers: Option<usize>) -> Result<(), Failure> {
    let base_doc = Document::load(config).map_err(Failure::Config)?;
    let combos = expand_grid(overrides).map_err(Failure::Config)?;
    let base_spec = load_spec(&base_doc, config).map_err(Failure::Config)?;
    let root = base_spec.output.clone();
    // Validate every combination before any job starts.
    let mut jobs = Vec::with_capacity(combos.len());
    for (k, combo) in combos.iter().enumerate() {
        let mut doc = base_doc.clone();
        for (key, v) in combo {
            doc.set(key, v).map_err(Failure::Config)?;
        }
        let mut spec = load_spec(&doc, config)
            .with_context(|| format!("combination {combo:?}"))
            .map_err(Failure::Config)?;
        spec.output = if overrides.is_empty() {
            root.clone()
        } else {
            root.join(job_name(k, combo))
        };
        jobs.push((combo.clone(), spec));
    }
    base_spec.check_inputs().map_err(Failure::Config)?;
    let threads = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Failure::Config(anyhow!(e)))?;
    let results: Vec<_> = pool.install(|| jobs.par_iter().map(|(_, spec)| execute(spec)).collect());
    let mut entries = Vec::new();
    let mut failed = 0;
    for ((combo, spec), result) in jobs.iter().zip(results) {
        let overrides: serde_json::Map<String, serde_json::Value> =
            combo.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        let entry = match result {
            Ok(s) => json!({
                "output": spec.output,
                "overrides": overrides,
                "status": "ok",
                "stopping_reason": s.stopping_reason,
                "iterations": s.iterations,
                "objective": s.objective,
                "discrepancy": s.discrepancy,
                "update_norm": s.update_norm,
                "connected": s.connected,
            }),
            Err(f) => {
                failed += 1;
                json!({
                    "output": spec.output,
                    "overrides": overrides,
                    "status": "failed",
                    "exit_code": f.exit_code(),
                    "error": format!("{:#}", f.error()),
                })
            }
        };
        entries.push(entry);
    }
    std::fs::create_dir_all(&root)
        .and_then(|_| {
            std::fs::write(
                root.join("index.json"),
                serde_json::to_string_pretty(&json!({ "runs": entries })).expect("serializable") + "\n",
            )
        })
        .map_err(|e| Failure::Config(e.into()))?;
    println!(
        "{} runs, {failed} failed; index at {}",
        jobs.len(),
        root.join("index.json").display()
    );
    if failed > 0 {
        return Err(Failure::Solver(anyhow!("{failed} of {} sweep jobs failed", jobs.len())));
    }
    Ok(())
}

fn save_field(field: &CellField, out: &Path) -> Result<()> {
    let is_float = out
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("niotf"));
    if is_float {
        save_float_field(field, out)?;
    } else {
        save_grayscale(field, out, Normalization::Unit, BitDepth::Eight)?;
    }
    Ok(())
}

fn cmd_corrupt(image: &Path, mask: &Path, out: &Path) -> Result<()> {
    let img = load_field(image)?;
    let m = load_field(mask)?;
    let corrupted = apply_mask(&img, &m).context("applying mask")?;
    save_field(&corrupted, out)
}

fn cmd_enhance(thickness: &Path, skeleton: &Path, kappa: f64, p: f64, out: &Path) -> Result<(), Failure> {
    let t = load_field(thickness).map_err(Failure::Config)?;
    let s = load_field(skeleton).map_err(Failure::Config)?;
    let e = pm_exponents(p, kappa, 2).map_err(|e| Failure::Config(e.into()))?;
    let pm = PmParams {
        m: e.m,
        t_star: e.t_star,
        ..PmParams::default()
    };
    let enhanced = enhance_conductivity(&t, &s, kappa, p, &pm).map_err(|e| match e {
        niot_core::NiotError::NewtonNoConvergence { .. } | niot_core::NiotError::NoConvergence { .. } => {
            Failure::Solver(e.into())
        }
        other => Failure::Config(other.into()),
    })?;
    if enhanced.thick_blocks > 0 {
        eprintln!(
            "warning: skeleton is wider than one cell in {} places",
            enhanced.thick_blocks
        );
    }
    let is_float = out
        .extension()
        .and_then(|x| x.to_str())
        .is_some_and(|x| x.eq_ignore_ascii_case("niotf"));
    let r = if is_float {
        save_float_field(&enhanced.conductivity, out).map(|_| ())
    } else {
        save_grayscale(&enhanced.conductivity, out, Normalization::MaxScaled, BitDepth::Sixteen).map(|_| ())
    };
    r.map_err(|e| Failure::Config(e.into()))?;
    println!(
        "m = {}, t* = {:.6e}, mass = {:.6e}",
        e.m,
        e.t_star,
        enhanced.conductivity.integral()
    );
    Ok(())
}

fn parse_point(s: &str) -> Result<(f64, f64)> {
    let (x, y) = s
        .split_once(',')
        .ok_or_else(|| anyhow!("point '{s}' must look like x,y"))?;
    Ok((
        x.trim().parse().with_context(|| format!("bad coordinate in '{s}'"))?,
        y.trim().parse().with_context(|| format!("bad coordinate in '{s}'"))?,
    ))
}

fn cmd_oracle(o: &str, p: &str, q: &str, w_p: f64, alpha: f64) -> Result<()> {
    let r = optimal_branch_point(parse_point(o)?, parse_point(p)?, parse_point(q)?, w_p, 1.0 - w_p, alpha)?;
    println!(
        "B=({:.4},{:.4}) E={:.6} angle={:.3}deg",
        r.b.0,
        r.b.1,
        r.energy,
        r.angle.to_degrees()
    );
    Ok(())
}

fn cmd_synth(dir: &Path, size: usize, total_mass: f64) -> Result<()> {
    let grid = Grid2D::unit_square(size)?;
    let y = YNetwork::default();
    let truth = y.image(&grid, 0.5)?;
    let mask = y.mask(&grid, 0.5)?;
    let observed = apply_mask(&truth, &mask)?;
    std::fs::create_dir_all(dir)?;
    save_grayscale(&truth, &dir.join("truth.png"), Normalization::Unit, BitDepth::Eight)?;
    save_grayscale(&mask, &dir.join("mask.png"), Normalization::Unit, BitDepth::Eight)?;
    save_grayscale(
        &observed,
        &dir.join("observed.png"),
        Normalization::Unit,
        BitDepth::Eight,
    )?;
    let cell = |pt| {
        let (i, j) = YNetwork::cell_of(&grid, pt);
        format!("{i},{j}")
    };
    let cfg = format!(
        "[model]\ngamma = 0.5\nlambda = 0\nmap = identity\nalpha = 10\n\n[fitting]\nweight = mask\n\n\
         [optimization]\nmu0 = 1\nk_max = 20000\n\n[io]\nobserved = observed.png\nmask = mask.png\noutput = out\n\n\
         [forcing]\ntotal_mass = {total_mass}\nsource = {}\nsink = {},{}\nsink = {},{}\n",
        cell(y.source),
        cell(y.sink_p),
        y.mass_p,
        cell(y.sink_q),
        y.mass_q,
    );
    std::fs::write(dir.join("y.cfg"), cfg)?;
    println!("wrote Y-network assets to {}", dir.display());
    Ok(())
}
