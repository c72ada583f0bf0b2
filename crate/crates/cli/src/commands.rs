use std::path::{Path, PathBuf};

use diffeo::atlas::{estimate_atlas, pixelwise_mean_atlas, random_init_index, AtlasConfig};
use diffeo::io;
use diffeo::latent::{
    decode, decode_root, encode, explained_variance, fit_basis, pca_mode_field, LatentCode, LogEuclideanBasis,
};
use diffeo::lie::log_from_chain;
use diffeo::metrics::{dice_report, inv_loss, latent_inv_loss, rec_loss, secondary_loss, LedaWeights};
use diffeo::registration::{endpoint_errors, icon_loss, median, register_pair, sim_loss};
use diffeo::synth::{make_phantom, make_subject, random_log_field, PhantomSpec, RandomFieldSpec};
use diffeo::{
    compose, exp_field, field_rms_diff, invert, jacobian_determinant, log_field, neg_jacobian_fraction, root_chain,
    sqrt_field, warp_image, warp_labels, DisplacementField, Error, Grid, LogField, ScalarImage,
};

use crate::args::*;
use crate::cells;
use crate::error::{CliError, WithPath};
use crate::output::{create_dir, Csv, Summary};

type Run = Result<Summary, CliError>;

fn read_field(path: &Path) -> Result<DisplacementField, CliError> {
    io::read_field(path).at(path)
}

fn read_log(path: &Path) -> Result<LogField, CliError> {
    io::read_log_field(path).at(path)
}

fn read_image(path: &Path) -> Result<ScalarImage, CliError> {
    io::read_pgm_image(path).at(path)
}

fn read_basis(path: &Path) -> Result<LogEuclideanBasis, CliError> {
    io::read_basis(path).at(path)
}

fn write_field(s: &mut Summary, path: &Path, field: &DisplacementField) -> Result<(), CliError> {
    io::write_field(path, field).at(path)?;
    s.output(path);
    Ok(())
}

fn write_image(s: &mut Summary, path: &Path, image: &ScalarImage) -> Result<(), CliError> {
    io::write_pgm_image(path, image).at(path)?;
    s.output(path);
    Ok(())
}

fn write_csv(s: &mut Summary, path: &Path, csv: &Csv) -> Result<(), CliError> {
    csv.write(path)?;
    s.output(path);
    Ok(())
}

fn solver_config(s: &mut Summary, args: &SolverArgs) -> diffeo::SolverConfig {
    let cfg = args.config();
    s.config("tolerance", cfg.tolerance)
        .config("max_iterations", cfg.max_iterations)
        .config("damping", cfg.damping);
    cfg
}

fn registration_config(s: &mut Summary, args: &RegistrationArgs) -> diffeo::registration::RegistrationConfig {
    let cfg = args.config();
    s.config("lambda_sim", cfg.lambda_sim)
        .config("lambda_reg", cfg.lambda_reg)
        .config("pyramid_levels", cfg.pyramid_levels)
        .config("iterations_per_level", cfg.iterations_per_level)
        .config("step_size", cfg.step_size)
        .config("update_smoothing_sigma", cfg.update_smoothing_sigma)
        .config("field_smoothing_sigma", cfg.field_smoothing_sigma);
    cfg
}

/// Seed of subject `i`, decorrelated from the base seed with a SplitMix64 step.
fn subject_seed(seed: u64, i: usize) -> u64 {
    let mut z = seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn synth(args: &SynthArgs, seed: u64) -> Run {
    let mut s = Summary::new("synth");
    s.config("kind", args.kind.to_string())
        .config("height", args.height)
        .config("width", args.width)
        .config("subjects", args.subjects)
        .config("amplitude", args.amplitude)
        .config("smoothing", args.smoothing)
        .config("depth", args.depth)
        .config("seed", seed);
    let solver = solver_config(&mut s, &args.solver);
    let grid = Grid::new(args.height, args.width)?;
    let phantom = make_phantom(&PhantomSpec::with_kind(args.kind, grid, seed))?;
    create_dir(&args.out_dir)?;
    let dir = &args.out_dir;
    write_image(&mut s, &dir.join("phantom.pgm"), &phantom.0)?;
    let labels_path = dir.join("phantom_labels.pgm");
    io::write_pgm_labels(&labels_path, &phantom.1).at(&labels_path)?;
    s.output(&labels_path);

    let mut table = Csv::new([
        "subject",
        "seed",
        "max_log_norm",
        "max_displacement",
        "neg_jacobian_percent",
        "inverse_residual",
    ]);
    for i in 0..args.subjects {
        let field_seed = subject_seed(seed, i);
        let spec = RandomFieldSpec {
            grid,
            seed: field_seed,
            smoothing_sigma: args.smoothing,
            amplitude: args.amplitude,
            exp_depth: args.depth,
        };
        let v = random_log_field(&spec)?;
        let subject = make_subject(&phantom, &v, args.depth)?;
        let inverse = invert(&subject.field, &solver)?;
        let stem = format!("subject_{i:02}");
        write_image(&mut s, &dir.join(format!("{stem}.pgm")), &subject.image)?;
        let lp = dir.join(format!("{stem}_labels.pgm"));
        io::write_pgm_labels(&lp, &subject.labels).at(&lp)?;
        s.output(&lp);
        write_field(&mut s, &dir.join(format!("{stem}_field.mfld")), &subject.field)?;
        write_field(&mut s, &dir.join(format!("{stem}_inverse.mfld")), &inverse.field)?;
        let log_path = dir.join(format!("{stem}_log.mfld"));
        io::write_log_field(&log_path, &v).at(&log_path)?;
        s.output(&log_path);
        table.row(cells![
            i,
            field_seed,
            v.max_norm(),
            subject.field.max_norm(),
            neg_jacobian_fraction(&subject.field),
            inverse.residual
        ]);
    }
    write_csv(&mut s, &dir.join("subjects.csv"), &table)?;
    s.metric("subjects", args.subjects);
    Ok(s)
}

pub fn register(args: &RegisterArgs) -> Run {
    let mut s = Summary::new("register");
    s.input("a", &args.a).input("b", &args.b);
    let cfg = registration_config(&mut s, &args.reg);
    let a = read_image(&args.a)?;
    let b = read_image(&args.b)?;
    let res = register_pair(&a, &b, &cfg)?;
    create_dir(&args.out_dir)?;
    let dir = &args.out_dir;
    write_field(&mut s, &dir.join("phi_ab.mfld"), &res.phi_ab)?;
    write_field(&mut s, &dir.join("phi_ba.mfld"), &res.phi_ba)?;
    write_image(&mut s, &dir.join("warped_b.pgm"), &warp_image(&b, &res.phi_ab)?)?;
    write_image(&mut s, &dir.join("warped_a.pgm"), &warp_image(&a, &res.phi_ba)?)?;
    let mut losses = Csv::new(["level", "iteration", "sim", "reg", "total"]);
    for r in &res.loss_history {
        losses.row(cells![r.level, r.iteration, r.sim, r.reg, r.total]);
    }
    write_csv(&mut s, &dir.join("losses.csv"), &losses)?;
    let last = res.loss_history.last().expect("at least one record");
    s.metric("final_loss", last.total)
        .metric("final_sim", last.sim)
        .metric("final_icon", last.reg)
        .metric("final_inverse_consistency", res.final_inverse_consistency)
        .metric("neg_jacobian_percent_ab", neg_jacobian_fraction(&res.phi_ab))
        .metric("neg_jacobian_percent_ba", neg_jacobian_fraction(&res.phi_ba));
    Ok(s)
}

/// Symmetrized basis over `logs`, dimension lowered to the achieved rank; `None` if all logs vanish.
fn self_basis(logs: &[LogField], d: usize) -> Result<Option<LogEuclideanBasis>, CliError> {
    match fit_basis(logs, d, true) {
        Ok(b) => Ok(Some(b)),
        Err(Error::Rank { achieved: 0, .. }) => Ok(None),
        Err(Error::Rank { achieved, .. }) => Ok(Some(fit_basis(logs, achieved, true)?)),
        Err(e) => Err(e.into()),
    }
}

pub fn validate(args: &ValidateArgs) -> Run {
    let mut s = Summary::new("validate");
    s.input("field", &args.field).config("depth", args.depth);
    if let Some(t) = &args.truth {
        s.input("truth", t);
    }
    if let Some(b) = &args.basis {
        s.input("basis", b);
    }
    let solver = solver_config(&mut s, &args.solver);
    let phi = read_field(&args.field)?;
    let chain = root_chain(&phi, args.depth, &solver)?;
    let residuals = chain.reconstruction_residuals(&phi)?;
    let log = log_from_chain(&chain);
    let inverse = invert(&phi, &solver)?.field;
    let field_negation = field_rms_diff(&exp_field(&log.negated(), args.depth)?, &inverse)?;

    let basis = match &args.basis {
        Some(p) => Some(read_basis(p)?),
        None => self_basis(std::slice::from_ref(&log), 1)?,
    };
    let (latent_negation, code_sum, z_norm) = match &basis {
        Some(basis) => {
            let z = encode(basis, &log)?;
            let z_inv = encode(basis, &log_field(&inverse, args.depth, &solver)?)?;
            let decoded = decode_root(basis, &z.negated(), 1, args.depth)?;
            let sum: f64 = z
                .values()
                .iter()
                .zip(z_inv.values())
                .map(|(a, b)| (a + b) * (a + b))
                .sum();
            (field_rms_diff(&decoded, &inverse)?, sum.sqrt(), z.norm())
        }
        None => (
            field_rms_diff(&DisplacementField::identity(phi.grid()), &inverse)?,
            0.0,
            0.0,
        ),
    };

    let mut header: Vec<String> = (1..=residuals.len()).map(|n| format!("root_residual_{n}")).collect();
    header.extend(
        [
            "field_negation_rms",
            "latent_negation_rms",
            "latent_code_sum_norm",
            "latent_code_norm",
        ]
        .map(String::from),
    );
    let mut row: Vec<crate::output::Cell> = residuals.iter().map(|&r| r.into()).collect();
    row.extend(cells![field_negation, latent_negation, code_sum, z_norm]);
    for (n, r) in residuals.iter().enumerate() {
        s.metric(&format!("root_residual_{}", n + 1), r);
    }
    s.metric("field_negation_rms", field_negation)
        .metric("latent_negation_rms", latent_negation)
        .metric("latent_code_sum_norm", code_sum);

    if let Some(truth_path) = &args.truth {
        let truth = read_field(truth_path)?;
        let epe = endpoint_errors(&phi, &truth)?;
        let mean = epe.iter().sum::<f64>() / epe.len() as f64;
        let max = epe.iter().cloned().fold(0.0, f64::max);
        let med = median(&epe);
        header.extend(["median_epe", "mean_epe", "max_epe"].map(String::from));
        row.extend(cells![med, mean, max]);
        s.metric("median_epe", med)
            .metric("mean_epe", mean)
            .metric("max_epe", max);
    }
    let mut csv = Csv::new(header);
    csv.row(row);
    write_csv(&mut s, &args.out, &csv)?;
    Ok(s)
}

pub fn log(args: &LogArgs) -> Run {
    let mut s = Summary::new("log");
    s.input("field", &args.field).config("depth", args.depth);
    let solver = solver_config(&mut s, &args.solver);
    let phi = read_field(&args.field)?;
    let chain = root_chain(&phi, args.depth, &solver)?;
    let v = log_from_chain(&chain);
    io::write_log_field(&args.out, &v).at(&args.out)?;
    s.output(&args.out);
    let roundtrip = field_rms_diff(&exp_field(&v, args.depth)?, &phi)?;
    s.metric("max_log_norm", v.max_norm())
        .metric("exp_log_residual", roundtrip);
    Ok(s)
}

pub fn exp(args: &ExpArgs) -> Run {
    let mut s = Summary::new("exp");
    s.input("log", &args.log).config("depth", args.depth);
    let v = read_log(&args.log)?;
    let phi = exp_field(&v, args.depth)?;
    write_field(&mut s, &args.out, &phi)?;
    s.metric("max_displacement", phi.max_norm())
        .metric("neg_jacobian_percent", neg_jacobian_fraction(&phi));
    Ok(s)
}

pub fn sqrt(args: &UnaryArgs) -> Run {
    let mut s = Summary::new("sqrt");
    s.input("field", &args.field);
    let solver = solver_config(&mut s, &args.solver);
    let solved = sqrt_field(&read_field(&args.field)?, &solver)?;
    write_field(&mut s, &args.out, &solved.field)?;
    s.metric("residual", solved.residual)
        .metric("iterations", solved.iterations)
        .metric("folded_input", solved.folded_input);
    Ok(s)
}

pub fn invert_cmd(args: &UnaryArgs) -> Run {
    let mut s = Summary::new("invert");
    s.input("field", &args.field);
    let solver = solver_config(&mut s, &args.solver);
    let solved = invert(&read_field(&args.field)?, &solver)?;
    write_field(&mut s, &args.out, &solved.field)?;
    s.metric("residual", solved.residual)
        .metric("iterations", solved.iterations)
        .metric("folded_input", solved.folded_input);
    Ok(s)
}

pub fn compose_cmd(args: &ComposeArgs) -> Run {
    let mut s = Summary::new("compose");
    s.input("outer", &args.outer).input("inner", &args.inner);
    let out = compose(&read_field(&args.outer)?, &read_field(&args.inner)?)?;
    write_field(&mut s, &args.out, &out)?;
    s.metric("max_displacement", out.max_norm());
    Ok(s)
}

pub fn roots(args: &RootsArgs) -> Run {
    let mut s = Summary::new("roots");
    s.input("field", &args.field).config("depth", args.depth);
    let solver = solver_config(&mut s, &args.solver);
    let phi = read_field(&args.field)?;
    let chain = root_chain(&phi, args.depth, &solver)?;
    let rebuilt = chain.reconstruction_residuals(&phi)?;
    create_dir(&args.out_dir)?;
    let mut csv = Csv::new(["level", "root_order", "sqrt_residual", "reconstruction_residual"]);
    for (n, root) in chain.roots.iter().enumerate() {
        write_field(&mut s, &args.out_dir.join(format!("root_{:02}.mfld", n + 1)), root)?;
        csv.row(cells![n + 1, 1u64 << (n + 1), chain.residuals[n], rebuilt[n]]);
    }
    write_csv(&mut s, &args.out_dir.join("residuals.csv"), &csv)?;
    s.metric(
        "max_reconstruction_residual",
        rebuilt.iter().cloned().fold(0.0, f64::max),
    );
    Ok(s)
}

pub fn jacobian(args: &JacobianArgs) -> Run {
    let mut s = Summary::new("jacobian");
    s.input("field", &args.field);
    let phi = read_field(&args.field)?;
    let det = jacobian_determinant(&phi);
    let neg = neg_jacobian_fraction(&phi);
    let min = det.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let max = det.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if let Some(out) = &args.out {
        io::write_scalar_field(out, &det).at(out)?;
        s.output(out);
    }
    if let Some(path) = &args.csv {
        let mut csv = Csv::new(["neg_jacobian_percent", "min_det", "max_det"]);
        csv.row(cells![neg, min, max]);
        write_csv(&mut s, path, &csv)?;
    }
    s.metric("neg_jacobian_percent", neg)
        .metric("min_det", min)
        .metric("max_det", max);
    Ok(s)
}

fn variance_table(basis: &LogEuclideanBasis) -> Csv {
    let mut csv = Csv::new(["mode", "singular_value", "explained_variance"]);
    for (k, (sv, ev)) in basis
        .singular_values()
        .iter()
        .zip(explained_variance(basis))
        .enumerate()
    {
        csv.row(cells![k + 1, *sv, ev]);
    }
    csv
}

pub fn fit_basis_cmd(args: &FitBasisArgs) -> Run {
    let mut s = Summary::new("fit-basis");
    s.input("logs", &args.logs)
        .config("dim", args.dim)
        .config("symmetrize", !args.no_symmetrize);
    let logs = args.logs.iter().map(|p| read_log(p)).collect::<Result<Vec<_>, _>>()?;
    let basis = fit_basis(&logs, args.dim, !args.no_symmetrize)?;
    io::write_basis(&args.out, &basis).at(&args.out)?;
    s.output(&args.out);
    if let Some(path) = &args.variance_csv {
        write_csv(&mut s, path, &variance_table(&basis))?;
    }
    s.metric("explained_variance", explained_variance(&basis))
        .metric("orthonormality_error", basis.orthonormality_error());
    Ok(s)
}

fn write_code(path: &Path, z: &LatentCode) -> Result<(), CliError> {
    let mut csv = Csv::new(["mode", "z"]);
    for (k, v) in z.values().iter().enumerate() {
        csv.row(cells![k + 1, *v]);
    }
    csv.write(path)
}

fn read_code(path: &Path) -> Result<LatentCode, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |line: usize, message: &str| CliError::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "mode,z" => {}
        _ => return Err(bad(1, "expected header \"mode,z\"")),
    }
    let mut z = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let (mode, value) = line.split_once(',').ok_or_else(|| bad(i + 1, "expected two columns"))?;
        let mode: usize = mode.trim().parse().map_err(|_| bad(i + 1, "bad mode index"))?;
        if mode != z.len() + 1 {
            return Err(bad(i + 1, "modes must be listed as 1, 2, 3, ..."));
        }
        z.push(value.trim().parse::<f64>().map_err(|_| bad(i + 1, "bad value"))?);
    }
    LatentCode::new(z).at(path)
}

pub fn encode_cmd(args: &EncodeArgs) -> Run {
    let mut s = Summary::new("encode");
    s.input("basis", &args.basis).input("log", &args.log);
    let basis = read_basis(&args.basis)?;
    let z = encode(&basis, &read_log(&args.log)?)?;
    write_code(&args.out, &z)?;
    s.output(&args.out).metric("code_norm", z.norm());
    Ok(s)
}

pub fn decode_cmd(args: &DecodeArgs) -> Run {
    let mut s = Summary::new("decode");
    s.input("basis", &args.basis)
        .input("code", &args.code)
        .config("negate", args.negate)
        .config("depth", args.depth);
    let basis = read_basis(&args.basis)?;
    let mut z = read_code(&args.code)?;
    if args.negate {
        z = z.negated();
    }
    match args.root {
        Some(m) => {
            s.config("root", m);
            let phi = decode_root(&basis, &z, m, args.depth)?;
            write_field(&mut s, &args.out, &phi)?;
            s.metric("neg_jacobian_percent", neg_jacobian_fraction(&phi));
        }
        None => {
            let v = decode(&basis, &z)?;
            io::write_log_field(&args.out, &v).at(&args.out)?;
            s.output(&args.out).metric("max_log_norm", v.max_norm());
        }
    }
    Ok(s)
}

pub fn modes(args: &ModesArgs) -> Run {
    let mut s = Summary::new("modes");
    s.input("basis", &args.basis)
        .config("modes", args.modes)
        .config("coeffs", &args.coeffs)
        .config("depth", args.depth);
    let basis = read_basis(&args.basis)?;
    if args.modes == 0 || args.modes > basis.dim() {
        return Err(CliError::Usage(format!(
            "--modes must be in 1..={} for this basis",
            basis.dim()
        )));
    }
    let image = match &args.image {
        Some(p) => {
            s.input("image", p);
            Some(read_image(p)?)
        }
        None => None,
    };
    create_dir(&args.out_dir)?;
    let mut csv = Csv::new(["mode", "coeff", "file", "max_displacement", "neg_jacobian_percent"]);
    for k in 1..=args.modes {
        for (j, &c) in args.coeffs.iter().enumerate() {
            let phi = pca_mode_field(&basis, k, c, args.depth)?;
            let stem = format!("mode_{k}_c{j}");
            write_field(&mut s, &args.out_dir.join(format!("{stem}.mfld")), &phi)?;
            if let Some(img) = &image {
                write_image(
                    &mut s,
                    &args.out_dir.join(format!("{stem}.pgm")),
                    &warp_image(img, &phi)?,
                )?;
            }
            csv.row(cells![
                k,
                c,
                format!("{stem}.mfld"),
                phi.max_norm(),
                neg_jacobian_fraction(&phi)
            ]);
        }
    }
    write_csv(&mut s, &args.out_dir.join("modes.csv"), &csv)?;
    write_csv(
        &mut s,
        &args.out_dir.join("explained_variance.csv"),
        &variance_table(&basis),
    )?;
    s.metric("explained_variance", explained_variance(&basis));
    Ok(s)
}

pub fn losses(args: &LossesArgs) -> Run {
    let mut s = Summary::new("losses");
    s.input("a", &args.a)
        .input("b", &args.b)
        .input("phi_ab", &args.phi_ab)
        .input("phi_ba", &args.phi_ba)
        .config("depth", args.depth);
    let reg = registration_config(&mut s, &args.reg);
    let solver = solver_config(&mut s, &args.solver);
    let weights = LedaWeights {
        alpha_rec: args.alpha_rec,
        alpha_inv: args.alpha_inv,
        alpha_linv: args.alpha_linv,
    };
    s.config("alpha_rec", weights.alpha_rec)
        .config("alpha_inv", weights.alpha_inv)
        .config("alpha_linv", weights.alpha_linv);

    let a = read_image(&args.a)?;
    let b = read_image(&args.b)?;
    let phi_ab = read_field(&args.phi_ab)?;
    let phi_ba = read_field(&args.phi_ba)?;
    let sim = sim_loss(&a, &b, &phi_ab, &phi_ba)?;
    let icon = icon_loss(&phi_ab, &phi_ba)?;
    let primary = reg.lambda_sim * sim + reg.lambda_reg * icon;

    let chain_ab = root_chain(&phi_ab, args.depth, &solver)?;
    let chain_ba = root_chain(&phi_ba, args.depth, &solver)?;
    let rec = rec_loss(&chain_ab, &phi_ab, &chain_ba, &phi_ba)?;
    let inv = inv_loss(&chain_ab, &chain_ba)?;
    let (log_ab, log_ba) = (log_from_chain(&chain_ab), log_from_chain(&chain_ba));
    let basis = match &args.basis {
        Some(p) => Some(read_basis(p)?),
        None => self_basis(&[log_ab.clone(), log_ba.clone()], 2)?,
    };
    let (z_ab, z_ba) = match &basis {
        Some(b) => (encode(b, &log_ab)?, encode(b, &log_ba)?),
        None => (LatentCode::zeros(1), LatentCode::zeros(1)),
    };
    let linv = latent_inv_loss(&z_ab, &z_ba)?;
    let secondary = secondary_loss(&weights, rec, inv, linv)?;

    let mut csv = Csv::new(["sim", "icon", "primary", "rec", "inv", "linv", "secondary"]);
    csv.row(cells![sim, icon, primary, rec, inv, linv, secondary]);
    write_csv(&mut s, &args.out, &csv)?;
    s.metric("sim", sim)
        .metric("icon", icon)
        .metric("primary", primary)
        .metric("rec", rec)
        .metric("inv", inv)
        .metric("linv", linv)
        .metric("secondary", secondary);

    if let (Some(la), Some(lb)) = (&args.labels_a, &args.labels_b) {
        let labels_a = io::read_pgm_labels(la).at(la)?;
        let labels_b = io::read_pgm_labels(lb).at(lb)?;
        let report = dice_report(&warp_labels(&labels_b, &phi_ab)?, &labels_a)?;
        s.metric("dice_mean", report.mean);
        if let Some(out) = &args.dice_out {
            let mut csv = Csv::new(["label", "dice"]);
            for (l, d) in &report.per_label {
                csv.row(cells![*l, *d]);
            }
            csv.row(cells!["mean", report.mean]);
            write_csv(&mut s, out, &csv)?;
        }
    }
    Ok(s)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let io_err = |source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn atlas(args: &AtlasArgs, seed: u64) -> Run {
    let mut s = Summary::new("atlas");
    s.input("images", &args.images);
    let reg_config = registration_config(&mut s, &args.reg);
    let cfg = AtlasConfig {
        epsilon: args.epsilon,
        max_outer_iterations: args.max_iterations,
        reg_config,
        basis_dim: args.basis_dim,
        root_depth: args.depth,
        refit_basis_each_iter: !args.freeze_basis,
        ..AtlasConfig::default()
    };
    s.config("epsilon", cfg.epsilon)
        .config("max_outer_iterations", cfg.max_outer_iterations)
        .config("basis_dim", cfg.basis_dim)
        .config("root_depth", cfg.root_depth)
        .config("refit_basis_each_iter", cfg.refit_basis_each_iter);

    let paths = list_images(&args.images)?;
    if paths.len() < 2 {
        return Err(CliError::Usage(format!(
            "{} holds {} PGM image(s); the atlas needs at least two",
            args.images.display(),
            paths.len()
        )));
    }
    let images = paths.iter().map(|p| read_image(p)).collect::<Result<Vec<_>, _>>()?;
    let init = match args.init {
        Some(i) if i >= images.len() => {
            return Err(CliError::Usage(format!("--init {i} but only {} images", images.len())))
        }
        Some(i) => i,
        None => random_init_index(images.len(), seed)?,
    };
    s.config("init_index", init).config("seed", seed);

    let (atlas, history) = estimate_atlas(&images, init, &cfg)?;
    let mean = pixelwise_mean_atlas(&images)?;
    create_dir(&args.out_dir)?;
    let dir = &args.out_dir;
    write_image(&mut s, &dir.join("atlas.pgm"), &atlas)?;
    write_image(&mut s, &dir.join("pixel_mean.pgm"), &mean)?;
    let mut csv = Csv::new(["iteration", "delta", "mean_latent_norm", "converged"]);
    for state in &history {
        write_image(
            &mut s,
            &dir.join(format!("atlas_iter_{:02}.pgm", state.iteration)),
            &state.atlas,
        )?;
        csv.row(cells![
            state.iteration,
            state.last_delta().unwrap_or(0.0),
            state.mean_latent.norm(),
            state.converged
        ]);
    }
    write_csv(&mut s, &dir.join("delta.csv"), &csv)?;
    let last = history.last().expect("at least one step");
    s.metric("iterations", history.len())
        .metric("converged", last.converged)
        .metric("final_delta", last.last_delta())
        .metric("atlas_sharpness", atlas.gradient_magnitude_sum())
        .metric("pixel_mean_sharpness", mean.gradient_magnitude_sum());
    Ok(s)
}
