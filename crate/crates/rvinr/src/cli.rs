use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{PipelineError, EXIT_OK, EXIT_USAGE};
use crate::manifest::{Manifest, NoiseKind};
use crate::pipeline::{self, RunDir};

#[derive(Debug, Parser)]
#[command(name = "rvinr", version, about = "Rotating-view diffusion MRI super-resolution with a coordinate network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the manifest, phantom, directions and ground-truth DWIs.
    Phantom(ProtocolArgs),
    /// Simulate thick-slice rotated views.
    Acquire(OutArg),
    /// Fit the network to the training views.
    Train(OutArg),
    /// Render DWIs from the trained network and the baseline.
    Infer {
        #[command(flatten)]
        out: OutArg,
        /// Render only this direction index.
        #[arg(long)]
        direction: Option<usize>,
    },
    /// Fit tensors to the rendered DWIs.
    Dti(OutArg),
    /// Score reconstructions and maps; write tables, renders and summary.
    Evaluate(OutArg),
    /// Run every stage.
    Reproduce(ProtocolArgs),
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Phantom edge length in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Number of diffusion directions.
    #[arg(long)]
    pub dirs: Option<usize>,
    /// Directions used for training; the rest are held out.
    #[arg(long)]
    pub train_dirs: Option<usize>,
    /// Slice thickness factor.
    #[arg(long)]
    pub ts: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long, value_enum)]
    pub noise_model: Option<NoiseKind>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed_data: Option<u64>,
    #[arg(long)]
    pub seed_train: Option<u64>,
    /// Condition the network on the b=0 image.
    #[arg(long, action = clap::ArgAction::Set)]
    pub use_prior: Option<bool>,
}

impl ProtocolArgs {
    pub fn manifest(&self) -> Manifest {
        let d = Manifest::default();
        Manifest {
            size: self.size.unwrap_or(d.size),
            directions: self.dirs.unwrap_or(d.directions),
            train_directions: self.train_dirs.unwrap_or(d.train_directions),
            thickness_factor: self.ts.unwrap_or(d.thickness_factor),
            noise_sigma: self.noise_sigma.unwrap_or(d.noise_sigma),
            noise_model: self.noise_model.unwrap_or(d.noise_model),
            iterations: self.iters.unwrap_or(d.iterations),
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            seed_data: self.seed_data.unwrap_or(d.seed_data),
            seed_train: self.seed_train.unwrap_or(d.seed_train),
            use_prior: self.use_prior.unwrap_or(d.use_prior),
            ..d
        }
    }
}

/// Runs a parsed command; the returned text goes to stdout.
pub fn execute(cmd: &Command) -> Result<String, PipelineError> {
    Ok(match cmd {
        Command::Phantom(p) => {
            let run = RunDir::new(&p.out);
            pipeline::stage_phantom(&run, &p.manifest())?;
            format!("wrote phantom to {}", run.root.display())
        }
        Command::Acquire(o) => {
            pipeline::stage_acquire(&RunDir::new(&o.out))?;
            "acquired views".to_string()
        }
        Command::Train(o) => {
            let loss = pipeline::stage_train(&RunDir::new(&o.out))?;
            format!("final loss {loss:.6e}")
        }
        Command::Infer { out, direction } => {
            pipeline::stage_infer(&RunDir::new(&out.out), *direction)?;
            "rendered".to_string()
        }
        Command::Dti(o) => {
            pipeline::stage_dti(&RunDir::new(&o.out))?;
            "fitted tensors".to_string()
        }
        Command::Evaluate(o) => {
            let run = RunDir::new(&o.out);
            let eval = pipeline::stage_evaluate(&run)?;
            pipeline::summary_text(&pipeline::load_manifest(&run)?, &eval)
        }
        Command::Reproduce(p) => {
            let run = RunDir::new(&p.out);
            let manifest = p.manifest();
            let eval = pipeline::reproduce(&run, &manifest)?;
            pipeline::summary_text(&manifest, &eval)
        }
    })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let flags = match &cli.command {
        Command::Phantom(p) | Command::Reproduce(p) => Some(p.manifest()),
        _ => None,
    };
    if let Some(Err(e)) = flags.map(|m| m.validate()) {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    match execute(&cli.command) {
        Ok(text) => {
            println!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
