use clap::{Args, Parser, Subcommand};
use localhex::commands::{cmd_eval, cmd_render, cmd_synth, cmd_train};
use localhex::config::{Precision, RunConfig};
use localhex::{Error, Result};
use std::path::PathBuf;
use std::process::ExitCode;

/// Joint camera pose and local radiance field optimization.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(Common),
    /// Optimize poses and local fields on a dataset.
    Train(Common),
    /// Render frames from a trained run.
    Render {
        #[command(flatten)]
        common: Common,
        /// Frames to render, e.g. `0,7,15` or `10..20`; defaults to the config.
        #[arg(long)]
        frames: Option<String>,
    },
    /// Score rendered frames and the trajectory against the dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory with `rgb/` and `depth/`; defaults to `<output>/render`.
        #[arg(long)]
        renders: Option<PathBuf>,
        /// Estimated trajectory; defaults to `<output>/trajectory.txt`.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// 32 or 64.
    #[arg(long)]
    precision: Option<u32>,
    /// Worker threads; rayon's default when absent.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = self.precision {
            cfg.precision = Precision::try_from(p).map_err(Error::Config)?;
        }
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(cfg)
    }
}

fn parse_frames(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("bad frame list `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        return Ok((a..b).collect());
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(c) => {
            let dir = cmd_synth(&c.resolve()?)?;
            println!("dataset written to {}", dir.display());
        }
        Command::Train(c) => {
            let cfg = c.resolve()?;
            let s = cmd_train(&cfg)?;
            println!(
                "{} fields, {} iterations, outputs in {}",
                s.fields,
                s.iterations.total(),
                cfg.output.display()
            );
        }
        Command::Render { common, frames } => {
            let cfg = common.resolve()?;
            let frames = frames.as_deref().map(parse_frames).transpose()?;
            let s = cmd_render(&cfg, frames.as_deref())?;
            println!("rendered {} frames ({} blended)", s.frames.len(), s.blended_frames);
        }
        Command::Eval {
            common,
            renders,
            trajectory,
        } => {
            let cfg = common.resolve()?;
            let r = cmd_eval(&cfg, renders.as_deref(), trajectory.as_deref())?;
            print!("{}", r.summary());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_lists() {
        assert_eq!(parse_frames("3..6").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse_frames("0, 7,15").unwrap(), vec![0, 7, 15]);
        assert!(parse_frames("a").is_err());
    }
}
