//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;

use coap::metrics::{evaluate, EvalSummary};
use coap::model::{CountDataset, FitConfig};
use coap::simulate::{generate_scenario, OffsetSpec, ScenarioSpec};

use crate::io::{read_matrix, read_vector, write_matrix, write_series, write_vector};
use crate::manifest::RunManifest;
use crate::{CliError, EvalArgs, FitArgs, FitCommonArgs, SelectArgs, SimulateArgs};

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let offset = if args.offset.eq_ignore_ascii_case("rowsum") {
        OffsetSpec::RowSum
    } else {
        let value: f64 = args.offset.parse().map_err(|_| {
            CliError::usage(format!(
                "--offset must be a positive number or 'rowsum', got '{}'",
                args.offset
            ))
        })?;
        OffsetSpec::Constant(value)
    };
    let spec = ScenarioSpec {
        n: args.n,
        p: args.p,
        d: args.d,
        q0: args.q0,
        r0: args.r0,
        rho_z: args.rho_z,
        rho_b: args.rho_b,
        sigma2: args.sigma2,
        a_value: offset,
        seed: args.seed,
    };
    let ds = generate_scenario(&spec)?;

    ensure_out_dir(&args.out)?;
    let mut manifest = RunManifest::new("simulate");
    manifest.config("n", args.n);
    manifest.config("p", args.p);
    manifest.config("d", args.d);
    manifest.config("q0", args.q0);
    manifest.config("r0", args.r0);
    manifest.config("rho_z", args.rho_z);
    manifest.config("rho_b", args.rho_b);
    manifest.config("sigma2", args.sigma2);
    manifest.config("offset", &args.offset);
    manifest.config("seed", args.seed);

    for (name, write) in [
        ("X.csv", &(|p: &Path| write_matrix(p, &ds.data.x)) as &dyn Fn(&Path) -> _),
        ("Z.csv", &|p: &Path| write_matrix(p, &ds.data.z)),
        ("a.csv", &|p: &Path| write_vector(p, &ds.data.a)),
        ("beta0.csv", &|p: &Path| write_matrix(p, &ds.beta0)),
        ("H0.csv", &|p: &Path| write_matrix(p, &ds.h0)),
        ("B0.csv", &|p: &Path| write_matrix(p, &ds.b0)),
    ] {
        let path = args.out.join(name);
        write(&path)?;
        manifest.output(&path);
    }
    manifest.write(&args.out.join("manifest.txt"), start.elapsed().as_secs_f64())
}

fn load_dataset(common: &FitCommonArgs) -> Result<CountDataset, CliError> {
    let x = read_matrix(&common.x)?;
    let z = read_matrix(&common.z)?;
    let a = match &common.a {
        Some(path) => read_vector(path)?,
        None => DVector::from_element(x.nrows(), 1.0),
    };
    Ok(CountDataset { x, z, a })
}

fn record_common(
    manifest: &mut RunManifest,
    common: &FitCommonArgs,
) -> Result<(), CliError> {
    manifest.config("max_iter", common.max_iter);
    manifest.config("eps_elbo", common.eps_elbo);
    manifest.input(&common.x)?;
    manifest.input(&common.z)?;
    if let Some(a) = &common.a {
        manifest.input(a)?;
    }
    Ok(())
}

fn fit_config(common: &FitCommonArgs, q: usize, r: usize) -> FitConfig {
    let mut cfg = FitConfig::new(q, r);
    cfg.max_iter = common.max_iter;
    cfg.eps_elbo = common.eps_elbo;
    cfg
}

pub fn fit(args: &FitArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let data = load_dataset(&args.common)?;
    let mut cfg = fit_config(&args.common, args.q, args.r);
    cfg.joint_beta_update = args.joint_beta;
    let result = coap::fit(&data, &cfg)?;

    ensure_out_dir(&args.common.out)?;
    let mut manifest = RunManifest::new("fit");
    manifest.config("q", args.q);
    manifest.config("r", args.r);
    manifest.config("joint_beta", args.joint_beta);
    record_common(&mut manifest, &args.common)?;
    manifest.config("iterations_run", result.iterations);
    manifest.config("converged", result.converged);

    let out = &args.common.out;
    let files: [(&str, &dyn Fn(&Path) -> Result<(), CliError>); 5] = [
        ("beta_hat.csv", &|p| write_matrix(p, &result.params.beta)),
        ("B_hat.csv", &|p| write_matrix(p, &result.params.b)),
        ("H_hat.csv", &|p| write_matrix(p, &result.params.h)),
        ("varsigma_hat.csv", &|p| write_vector(p, &result.params.varsigma)),
        ("elbo_trace.csv", &|p| write_series(p, &result.elbo_trace)),
    ];
    for (name, write) in files {
        let path = out.join(name);
        write(&path)?;
        manifest.output(&path);
    }
    manifest.write(&out.join("manifest.txt"), start.elapsed().as_secs_f64())
}

pub fn select(args: &SelectArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let data = load_dataset(&args.common)?;
    let cfg = fit_config(&args.common, args.q_max, args.r_max);
    let report = coap::rank::svr_select(&data, args.q_max, args.r_max, &cfg)?;

    ensure_out_dir(&args.common.out)?;
    let mut manifest = RunManifest::new("select");
    manifest.config("q_max", args.q_max);
    manifest.config("r_max", args.r_max);
    record_common(&mut manifest, &args.common)?;

    let mut text = String::new();
    text.push_str(&format!("q_hat = {}\n", report.q_hat));
    text.push_str(&format!("r_hat = {}\n", report.r_hat));
    text.push_str(&format!("q_max = {}\n", report.q_max));
    text.push_str(&format!("r_max = {}\n", report.r_max));
    let join = |v: &[f64]| {
        v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(",")
    };
    text.push_str(&format!("ratios_b = {}\n", join(&report.ratios_b)));
    text.push_str(&format!("ratios_beta = {}\n", join(&report.ratios_beta)));
    let report_path = args.common.out.join("svr_report.txt");
    std::fs::write(&report_path, text).map_err(|e| CliError::io(&report_path, e))?;
    manifest.output(&report_path);
    manifest.write(&args.common.out.join("manifest.txt"), start.elapsed().as_secs_f64())
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let start = Instant::now();
    if args.fit_dirs.len() != args.truth_dirs.len() {
        return Err(CliError::usage(format!(
            "{} --fit-dir values but {} --truth-dir values; they pair by position",
            args.fit_dirs.len(),
            args.truth_dirs.len()
        )));
    }

    let mut manifest = RunManifest::new("eval");
    manifest.config("replicates", args.fit_dirs.len());

    let mut summaries: Vec<EvalSummary> = Vec::new();
    let mut inputs: Vec<PathBuf> = Vec::new();
    for (fit_dir, truth_dir) in args.fit_dirs.iter().zip(&args.truth_dirs) {
        let beta_hat = read_matrix(&fit_dir.join("beta_hat.csv"))?;
        let h_hat = read_matrix(&fit_dir.join("H_hat.csv"))?;
        let b_hat = read_matrix(&fit_dir.join("B_hat.csv"))?;
        let beta0 = read_matrix(&truth_dir.join("beta0.csv"))?;
        let h0 = read_matrix(&truth_dir.join("H0.csv"))?;
        let b0 = read_matrix(&truth_dir.join("B0.csv"))?;
        for name in ["beta_hat.csv", "H_hat.csv", "B_hat.csv"] {
            inputs.push(fit_dir.join(name));
        }
        for name in ["beta0.csv", "H0.csv", "B0.csv"] {
            inputs.push(truth_dir.join(name));
        }
        summaries.push(evaluate(&beta_hat, &h_hat, &b_hat, &beta0, &h0, &b0)?);
    }
    for path in &inputs {
        manifest.input(path)?;
    }

    let mut table = String::from("replicate,tr_h,tr_b,ea_beta,ea_beta_col1\n");
    for (i, s) in summaries.iter().enumerate() {
        table.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            i + 1,
            s.tr_h,
            s.tr_b,
            s.ea_beta,
            s.ea_beta_col1
        ));
    }
    let cols = [
        |s: &EvalSummary| s.tr_h,
        |s: &EvalSummary| s.tr_b,
        |s: &EvalSummary| s.ea_beta,
        |s: &EvalSummary| s.ea_beta_col1,
    ];
    let n = summaries.len() as f64;
    let means: Vec<f64> = cols
        .iter()
        .map(|f| summaries.iter().map(|s| f(s)).sum::<f64>() / n)
        .collect();
    // sample standard deviation; reported as 0 for a single replicate
    let sds: Vec<f64> = cols
        .iter()
        .zip(&means)
        .map(|(f, m)| {
            if summaries.len() < 2 {
                0.0
            } else {
                let ss: f64 = summaries.iter().map(|s| (f(s) - m).powi(2)).sum();
                (ss / (n - 1.0)).sqrt()
            }
        })
        .collect();
    let fmt_row = |label: &str, vals: &[f64]| {
        format!(
            "{label},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            vals[0], vals[1], vals[2], vals[3]
        )
    };
    table.push_str(&fmt_row("mean", &means));
    table.push_str(&fmt_row("sd", &sds));

    ensure_out_dir(&args.out)?;
    let table_path = args.out.join("eval.csv");
    std::fs::write(&table_path, table).map_err(|e| CliError::io(&table_path, e))?;
    manifest.output(&table_path);
    manifest.write(&args.out.join("manifest.txt"), start.elapsed().as_secs_f64())
}
