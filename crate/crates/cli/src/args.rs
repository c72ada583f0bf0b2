use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use diffeo::registration::RegistrationConfig;
use diffeo::synth::PhantomKind;
use diffeo::SolverConfig;

#[derive(Debug, Parser)]
#[command(
    name = "diffeo",
    version,
    about = "Diffeomorphic field algebra, registration and atlas tools"
)]
pub struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Write a JSON manifest of inputs, configuration and key metrics.
    #[arg(long, global = true, value_name = "PATH")]
    pub json_summary: Option<PathBuf>,

    /// Worker threads (default: all cores). Outputs do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a phantom and ground-truth subjects.
    Synth(SynthArgs),
    /// Jointly register two images in both directions.
    Register(RegisterArgs),
    /// Root-chain, negation and latent-negation checks for a field.
    Validate(ValidateArgs),
    /// Logarithm of a displacement field.
    Log(LogArgs),
    /// Exponential of a log field.
    Exp(ExpArgs),
    /// Square root of a displacement field.
    Sqrt(UnaryArgs),
    /// Inverse of a displacement field.
    Invert(UnaryArgs),
    /// Composition `outer ∘ inner`.
    Compose(ComposeArgs),
    /// Chain of successive square roots.
    Roots(RootsArgs),
    /// Jacobian determinant map and folding statistics.
    Jacobian(JacobianArgs),
    /// PCA basis over log fields.
    FitBasis(FitBasisArgs),
    /// Latent code of a log field.
    Encode(EncodeArgs),
    /// Log field, or a root of its deformation, from a latent code.
    Decode(DecodeArgs),
    /// Deformations along principal modes.
    Modes(ModesArgs),
    /// Primary and secondary loss terms for a registered pair.
    Losses(LossesArgs),
    /// Iterative atlas estimation.
    Atlas(AtlasArgs),
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = SolverConfig::default().tolerance)]
    pub tolerance: f64,
    #[arg(long, default_value_t = SolverConfig::default().max_iterations)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = SolverConfig::default().damping)]
    pub damping: f64,
}

impl SolverArgs {
    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            damping: self.damping,
        }
    }
}

#[derive(Debug, Args)]
pub struct RegistrationArgs {
    #[arg(long, default_value_t = RegistrationConfig::default().lambda_sim)]
    pub lambda_sim: f64,
    #[arg(long, default_value_t = RegistrationConfig::default().lambda_reg)]
    pub lambda_reg: f64,
    #[arg(long, default_value_t = RegistrationConfig::default().pyramid_levels)]
    pub levels: usize,
    #[arg(long, default_value_t = RegistrationConfig::default().iterations_per_level)]
    pub iterations: usize,
    #[arg(long, default_value_t = RegistrationConfig::default().step_size)]
    pub step: f64,
    #[arg(long, default_value_t = RegistrationConfig::default().update_smoothing_sigma)]
    pub sigma_update: f64,
    #[arg(long, default_value_t = RegistrationConfig::default().field_smoothing_sigma)]
    pub sigma_field: f64,
}

impl RegistrationArgs {
    pub fn config(&self) -> RegistrationConfig {
        RegistrationConfig {
            lambda_sim: self.lambda_sim,
            lambda_reg: self.lambda_reg,
            pyramid_levels: self.levels,
            iterations_per_level: self.iterations,
            step_size: self.step,
            update_smoothing_sigma: self.sigma_update,
            field_smoothing_sigma: self.sigma_field,
            ..RegistrationConfig::default()
        }
    }
}

fn parse_kind(s: &str) -> Result<PhantomKind, String> {
    s.parse().map_err(|e: diffeo::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// ring_with_bump, four_label_phantom or gaussian_blobs.
    #[arg(long, value_parser = parse_kind)]
    pub kind: PhantomKind,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Number of warped subjects to generate.
    #[arg(long, default_value_t = 1)]
    pub subjects: usize,
    /// Max-norm of each subject's log field, px.
    #[arg(long, default_value_t = 3.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 6.0)]
    pub smoothing: f64,
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub reg: RegistrationArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Field to check (MFLD).
    #[arg(long)]
    pub field: PathBuf,
    /// Ground-truth field for endpoint errors.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Basis for the latent check; a basis fitted to the field's own log is used otherwise.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct LogArgs {
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct ExpArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
}

#[derive(Debug, Args)]
pub struct UnaryArgs {
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    #[arg(long)]
    pub outer: PathBuf,
    #[arg(long)]
    pub inner: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RootsArgs {
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct JacobianArgs {
    #[arg(long)]
    pub field: PathBuf,
    /// Determinant map (1-channel MFLD).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One-row CSV with folding statistics.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitBasisArgs {
    /// Log fields (MFLD).
    #[arg(long, num_args = 1.., required = true)]
    pub logs: Vec<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// Fit the samples as given instead of pairing each with its negation.
    #[arg(long)]
    pub no_symmetrize: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Explained variance per mode.
    #[arg(long)]
    pub variance_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long)]
    pub log: PathBuf,
    /// Code as a CSV with columns `mode,z`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub basis: PathBuf,
    /// Code CSV as written by `encode`.
    #[arg(long)]
    pub code: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the `m`-th root deformation (power of two) instead of the log field.
    #[arg(long)]
    pub root: Option<u64>,
    /// Negate the code first.
    #[arg(long)]
    pub negate: bool,
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
}

#[derive(Debug, Args)]
pub struct ModesArgs {
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of leading modes to render.
    #[arg(long, default_value_t = 2)]
    pub modes: usize,
    /// Standard-deviation multiples to render.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "-2,-1,0,1,2"
    )]
    pub coeffs: Vec<f64>,
    /// Image warped by each mode deformation.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
}

#[derive(Debug, Args)]
pub struct LossesArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub phi_ab: PathBuf,
    #[arg(long)]
    pub phi_ba: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Basis for the latent term; a basis fitted to the pair's logs is used otherwise.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Label images of A and B for a Dice report (warped B labels vs A labels).
    #[arg(long, requires = "labels_b")]
    pub labels_a: Option<PathBuf>,
    #[arg(long, requires = "labels_a")]
    pub labels_b: Option<PathBuf>,
    #[arg(long, requires = "labels_a")]
    pub dice_out: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha_rec: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha_inv: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha_linv: f64,
    #[command(flatten)]
    pub reg: RegistrationArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct AtlasArgs {
    /// Directory of PGM images, read in file-name order.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Index of the starting image; drawn from `--seed` when omitted.
    #[arg(long)]
    pub init: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 20)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 8)]
    pub basis_dim: usize,
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
    /// Reuse the first iteration's basis instead of refitting.
    #[arg(long)]
    pub freeze_basis: bool,
    #[command(flatten)]
    pub reg: RegistrationArgs,
}
