use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use coagdrift_core::evolution::{
    default_xmax, init_from_profile, self_similar_error, Convolution, EvolutionOptions, Simulator,
};
use coagdrift_core::model::{admissible_threshold, derive_constants, exponential_profile, tail_exponent};
use coagdrift_core::profile::{certify, Certificate, Tolerances};
use coagdrift_core::tau::InnerSolveOptions;
use coagdrift_core::{outer_solve, Error as CoreError, Grid, GridFunction, ModelParams, OuterOptions, ProfileSolution};

use crate::io::{self, GridSpec, Metadata, SolverTolerances};
use crate::{exit, CliError, SimulateArgs, SolveArgs, SolverArgs};

const FIT_DECADES: f64 = 2.0;

pub fn threshold(v: f64, m0: Option<f64>) -> Result<u8, CliError> {
    let m0_bar = admissible_threshold(v)?;
    println!("v = {v}");
    println!("a_0 = {}", tail_exponent(v));
    println!("m0_bar = {m0_bar:.12}");
    if let Some(m0) = m0 {
        if !(m0 > 0.0 && m0.is_finite()) {
            return Err(CliError::Usage(format!("m0 = {m0} must be positive")));
        }
        println!("m0 = {m0}");
        match ModelParams::new(v, m0).and_then(|p| derive_constants(&p)) {
            Ok(c) => {
                println!("alpha = {:.12}", c.alpha);
                println!("sigma_star = {:.12}", c.sigma_star);
                println!("tau_star = {:.12}", c.tau_star);
            }
            Err(_) => println!("inadmissible: m0 exceeds m0_bar"),
        }
    }
    Ok(exit::OK)
}

fn solver_options(args: &SolverArgs, exploratory: bool) -> OuterOptions {
    OuterOptions {
        zmax: args.zmax,
        nodes: args.nodes,
        inner: InnerSolveOptions { tol: args.tol_inner, max_iter: args.max_inner, exploratory },
        tol: args.tol_outer,
        max_iter: args.max_iter,
        damping: args.damping,
        certification: Tolerances { residual: args.cert_tol, ..Tolerances::default() },
        exploratory,
        fit_decades: FIT_DECADES,
    }
}

fn metadata(sol: &ProfileSolution, args: &SolverArgs, opts: &OuterOptions, m0_bar: f64) -> Metadata {
    let p = &sol.params;
    let tau_star = if opts.exploratory { None } else { derive_constants(p).ok().map(|c| c.tau_star) };
    Metadata {
        kind: "solve".into(),
        v: p.v(),
        m0: p.m0(),
        tau_inf: p.tail_exponent(),
        alpha: p.alpha(),
        m0_bar,
        tau_star,
        grid: GridSpec { zmax: args.zmax, nodes: args.nodes, spacing: "log1p".into() },
        tolerances: SolverTolerances {
            inner: args.tol_inner,
            outer: args.tol_outer,
            certification: opts.certification,
            fit_decades: opts.fit_decades,
        },
        certified: sol.report.certified,
        exploratory: opts.exploratory,
        report: Some(sol.report.clone()),
    }
}

fn print_checks(cert: &Certificate) {
    for c in &cert.checks {
        let tag = if c.pass { "PASS" } else { "FAIL" };
        println!(
            "{tag} {:<14} value {:.6e} target {:.6e} tol {:.1e} ({})",
            c.name, c.value, c.target, c.tolerance, c.note
        );
    }
}

fn print_report(sol: &ProfileSolution) {
    if let Ok(serde_json::Value::Object(map)) = serde_json::to_value(&sol.report) {
        for (k, v) in map {
            println!("{k} = {v}");
        }
    }
    print_checks(&sol.certificate);
}

struct Written {
    code: u8,
    csv: PathBuf,
    solution: ProfileSolution,
}

fn solve_one(
    args: &SolverArgs,
    m0: f64,
    out: Option<&Path>,
    meta: Option<&Path>,
    out_dir: Option<&Path>,
) -> Result<Written, CliError> {
    let v = args.v;
    let m0_bar = admissible_threshold(v)?;
    let within = m0 <= m0_bar && m0 < 0.5 * v;
    let params = if args.force { ModelParams::relaxed(v, m0)? } else { ModelParams::new(v, m0)? };
    let exploratory = args.force && !within;
    let opts = solver_options(args, exploratory);
    let csv =
        out.map(Path::to_path_buf).unwrap_or_else(|| io::out_dir(out_dir).join(format!("profile_v{v}_m0{m0}.csv")));
    let meta_path = meta.map(Path::to_path_buf).unwrap_or_else(|| io::default_meta_path(&csv));

    let (sol, code) = match outer_solve(&params, &opts) {
        Ok(sol) => {
            let code = if sol.report.certified { exit::OK } else { exit::UNCERTIFIED };
            (sol, code)
        }
        Err(CoreError::OuterNonConvergence { iterations, residual, best }) => {
            eprintln!("outer iteration did not converge after {iterations} steps (best update {residual:e}); writing best iterate");
            let code = if args.force { exit::UNCERTIFIED } else { exit::NUMERICAL };
            (*best, code)
        }
        Err(e) => return Err(e.into()),
    };
    let meta_doc = metadata(&sol, args, &opts, m0_bar);
    io::write_profile(&csv, &meta_path, &meta_doc, &sol.profile, sol.tau.values())?;
    if args.gnuplot {
        io::write_gnuplot(&csv.with_extension("gp"), &csv)?;
    }
    Ok(Written { code, csv, solution: sol })
}

pub fn solve(args: &SolveArgs) -> Result<u8, CliError> {
    let w = solve_one(&args.common, args.m0, args.out.as_deref(), args.meta.as_deref(), args.out_dir.as_deref())?;
    print_report(&w.solution);
    println!("wrote {}", w.csv.display());
    Ok(w.code)
}

pub fn sweep(args: &SolverArgs, m0s: &[f64], out_dir: Option<&Path>) -> Result<u8, CliError> {
    let results: Vec<(f64, Result<Written, CliError>)> =
        m0s.par_iter().map(|&m0| (m0, solve_one(args, m0, None, None, out_dir))).collect();
    let mut worst = exit::OK;
    println!("m0,exit,certified,F0,M1,tail_exponent_fit,file");
    for (m0, r) in results {
        match r {
            Ok(w) => {
                worst = worst.max(w.code);
                let rep = &w.solution.report;
                println!(
                    "{m0},{},{},{},{},{},{}",
                    w.code,
                    rep.certified,
                    io::fmt(rep.f0),
                    io::fmt(rep.first_moment),
                    io::fmt(rep.tail_exponent_fit),
                    w.csv.display()
                );
            }
            Err(e) => {
                worst = worst.max(e.code());
                println!("{m0},{},false,,,,", e.code());
                eprintln!("m0 = {m0}: {e}");
            }
        }
    }
    Ok(worst)
}

pub fn verify(profile: &Path, meta: Option<&Path>) -> Result<u8, CliError> {
    let meta_path = meta.map(Path::to_path_buf).unwrap_or_else(|| io::default_meta_path(profile));
    let rec = io::read_profile(profile, &meta_path)?;
    let params = rec.meta.params()?;
    let tol = rec.meta.tolerances.certification;
    let cert = certify(&rec.profile, &params, &tol, rec.meta.tolerances.fit_decades)?;
    print_checks(&cert);
    if let Some(t) = rec.tau.last() {
        println!("tau(zmax) = {t} (limit {})", rec.meta.tau_inf);
    }
    println!(
        "tail_exponent_fit = {} (prefactor {}, power law {})",
        cert.fit.exponent, cert.fit.prefactor, cert.fit.power_law
    );
    Ok(if cert.passed() { exit::OK } else { exit::UNCERTIFIED })
}

pub fn exponential(v: f64, zmax: f64, nodes: usize, out: Option<&Path>, gnuplot: bool) -> Result<u8, CliError> {
    let params = ModelParams::exponential(v)?;
    let grid = Arc::new(Grid::build(zmax, nodes, v)?);
    let values = grid.nodes().iter().map(|&z| exponential_profile(v, z)).collect::<Result<Vec<f64>, _>>()?;
    let f = GridFunction::new(grid.clone(), values, params.tail_exponent())?;
    let tau: Vec<f64> = grid.nodes().iter().map(|z| v * z).collect();
    let tol = Tolerances::default();
    let cert = certify(&f, &params, &tol, FIT_DECADES)?;
    print_checks(&cert);
    let csv = out.map(Path::to_path_buf).unwrap_or_else(|| io::out_dir(None).join(format!("exponential_v{v}.csv")));
    let meta = Metadata {
        kind: "exponential".into(),
        v,
        m0: params.m0(),
        tau_inf: params.tail_exponent(),
        alpha: params.alpha(),
        m0_bar: admissible_threshold(v)?,
        tau_star: None,
        grid: GridSpec { zmax, nodes, spacing: "log1p".into() },
        tolerances: SolverTolerances { inner: 0.0, outer: 0.0, certification: tol, fit_decades: FIT_DECADES },
        certified: cert.passed(),
        exploratory: false,
        report: None,
    };
    io::write_profile(&csv, &io::default_meta_path(&csv), &meta, &f, &tau)?;
    if gnuplot {
        io::write_gnuplot(&csv.with_extension("gp"), &csv)?;
    }
    println!("wrote {}", csv.display());
    Ok(exit::OK)
}

fn output_times(args: &SimulateArgs) -> Vec<f64> {
    let n = args.diagnostics.max(1);
    let mut times: Vec<f64> = (0..=n).map(|k| args.t0 + (args.t1 - args.t0) * k as f64 / n as f64).collect();
    times.extend(args.snapshots.iter().copied().filter(|&t| t > args.t0 && t <= args.t1));
    times.push(args.t1);
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

pub fn simulate(args: &SimulateArgs) -> Result<u8, CliError> {
    if !(args.t0 > 0.0 && args.t1 > args.t0) {
        return Err(CliError::Usage(format!("need t1 > t0 > 0, got t0 = {}, t1 = {}", args.t0, args.t1)));
    }
    let meta_path = args.meta.clone().unwrap_or_else(|| io::default_meta_path(&args.profile));
    let rec = io::read_profile(&args.profile, &meta_path)?;
    let f = &rec.profile;
    let xmax = match args.xmax {
        Some(x) => x,
        None => default_xmax(f, args.t1)?,
    };
    let state = init_from_profile(f, args.t0, args.cells, xmax, args.strict)?;
    let opts = EvolutionOptions {
        cfl: args.cfl,
        convolution: if args.fft { Convolution::Fft } else { Convolution::Direct },
        ..EvolutionOptions::default()
    };
    let mut sim = Simulator::new(state, opts)?;
    let dir = io::out_dir(args.out_dir.as_deref());
    let mut snaps: Vec<f64> = args.snapshots.clone();
    snaps.push(args.t1);
    let mut rows: Vec<[f64; 5]> = Vec::new();
    let diag_path = dir.join("diagnostics.csv");

    for t in output_times(args) {
        if let Err(e) = sim.advance_to(t, None) {
            io::write_snapshot(&dir.join("snapshot_last_good.csv"), sim.state())?;
            io::write_diagnostics(&diag_path, &rows)?;
            eprintln!("simulation stopped at t = {}; last good state kept", sim.state().t());
            return Err(e.into());
        }
        let s = sim.state();
        let window = args.z_cmp.min(s.xmax() / t);
        let err = self_similar_error(s, f, window)?;
        rows.push([t, s.m0(), s.m1(), s.u(), err]);
        if snaps.iter().any(|&x| (x - t).abs() <= 1e-12 * t) {
            io::write_snapshot(&dir.join(format!("snapshot_t{t}.csv")), s)?;
        }
    }
    io::write_diagnostics(&diag_path, &rows)?;
    let last = rows.last().expect("at least one output time");
    println!("cells = {}, xmax = {xmax}, steps = {}", args.cells, sim.steps());
    println!(
        "t = {}, m0 = {:e}, m1 = {:e}, u t = {:e}, self_similar_error = {:e}",
        last[0],
        last[1],
        last[2],
        last[3] * last[0],
        last[4]
    );
    println!("wrote {}", diag_path.display());
    Ok(exit::OK)
}
