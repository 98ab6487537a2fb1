use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use dpg_bem::experiments::{eoc, eoc_h, gnuplot_script, run_experiment_with, Column, ExperimentConfig, QuadProfile};

/// Convergence studies for the DPG boundary element method on the cube and
/// the square screen.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// Key=value configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// 1: cube, manufactured; 2: cube, f = x; 3: screen, manufactured; 4: screen, f = 1.
    #[arg(long)]
    experiment: Option<u8>,
    /// Number of levels including the initial mesh.
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    degree_increment: Option<usize>,
    /// Relative CG tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["fast", "accurate"])]
    quad_profile: Option<String>,
    /// Write the finest mesh as OBJ.
    #[arg(long)]
    dump_mesh: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated nodal values of the manufactured phi on the initial mesh.
    #[arg(long)]
    phi_nodal: Option<String>,
    /// Also write a gnuplot script next to the CSV.
    #[arg(long)]
    gnuplot: bool,
}

fn config(cli: &Cli) -> dpg_bem::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = cli.experiment {
        cfg.experiment = v;
    }
    if let Some(v) = cli.levels {
        cfg.levels = v;
    }
    if let Some(v) = cli.degree_increment {
        cfg.degree_increment = v;
    }
    if let Some(v) = cli.tol {
        cfg.tol = v;
    }
    if let Some(v) = &cli.out {
        cfg.out = Some(v.clone());
    }
    if let Some(v) = &cli.quad_profile {
        cfg.quad_profile = v.parse::<QuadProfile>()?;
    }
    if let Some(v) = &cli.dump_mesh {
        cfg.dump_mesh = Some(v.clone());
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = &cli.phi_nodal {
        cfg.set("phi-nodal", v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4e}")).unwrap_or_else(|| "-".into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(w) = cfg.level_cap_warning() {
        eprintln!("{w}");
    }
    if let Some(nodal) = cfg.effective_phi_nodal() {
        let mesh = cfg.initial_mesh();
        println!("manufactured phi nodal values:");
        for (p, v) in mesh.vertices().iter().zip(&nodal) {
            println!("  ({:+}, {:+}, {:+}) -> {v}", p.x, p.y, p.z);
        }
    }
    println!("level  triangles  energy_err_sq  l2_sigma    l2_phi      l2_sigma_hat  cg_iters");
    let result = run_experiment_with(&cfg, |r| {
        println!(
            "{:>5}  {:>9}  {:>13.4e}  {:<10}  {:<10}  {:<12}  {:>8}{}",
            r.level,
            r.num_triangles,
            r.energy_err_sq,
            fmt_opt(r.l2_sigma),
            fmt_opt(r.l2_phi),
            fmt_opt(r.l2_sigma_hat),
            r.cg_iters,
            if r.cg_converged { "" } else { "  (CG not converged)" }
        );
    });
    let record = match result {
        Ok(record) => record,
        Err(partial) => {
            eprintln!("error: {partial}");
            return ExitCode::FAILURE;
        }
    };
    let slopes = |v: Vec<Option<f64>>| v.iter().map(|s| fmt_opt(*s)).collect::<Vec<_>>().join(" ");
    println!("EOC energy_err_sq vs #T: {}", slopes(eoc(&record, Column::EnergyErrSq)));
    if cfg.is_manufactured() {
        println!("EOC l2_phi vs h:         {}", slopes(eoc_h(&record, Column::L2Phi)));
        println!("EOC l2_sigma vs h:       {}", slopes(eoc_h(&record, Column::L2Sigma)));
    }
    if let (true, Some(out)) = (cli.gnuplot, &cfg.out) {
        let script = out.with_extension("gp");
        let title = format!("experiment {}", cfg.experiment);
        if let Err(e) = std::fs::write(&script, gnuplot_script(out, &title)) {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    ExitCode::SUCCESS
}
