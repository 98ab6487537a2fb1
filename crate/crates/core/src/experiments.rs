//! Convergence studies on the cube and the square screen: configuration,
//! the refinement loop, empirical orders and CSV/gnuplot output.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::assembly::{
    assemble_b, assemble_gram, assemble_load_analytic, assemble_load_manufactured, DofLayout, LoadQuadrature,
    SystemMatrices,
};
use crate::error::{DpgError, Result};
use crate::error_analysis::{l2_error_phi, l2_error_sigma, l2_error_sigma_hat, ErrorQuadrature, ExactSolution};
use crate::mesh::{build_cube_surface, build_square_screen, refine_uniform, SurfaceMesh};
use crate::potentials::QuadratureConfig;
use crate::solver::{default_max_iter, solve_normal_equations};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadProfile {
    Fast,
    Accurate,
}

impl QuadProfile {
    pub fn config(self) -> QuadratureConfig {
        match self {
            QuadProfile::Fast => QuadratureConfig::fast(),
            QuadProfile::Accurate => QuadratureConfig::accurate(),
        }
    }
}

impl FromStr for QuadProfile {
    type Err = DpgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(QuadProfile::Fast),
            "accurate" => Ok(QuadProfile::Accurate),
            _ => Err(DpgError::Config(format!("unknown quadrature profile '{s}' (fast|accurate)"))),
        }
    }
}

impl fmt::Display for QuadProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuadProfile::Fast => "fast",
            QuadProfile::Accurate => "accurate",
        })
    }
}

/// One convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// 1: cube, manufactured `phi`; 2: cube, `f = x`; 3: screen, manufactured
    /// hat function; 4: screen, `f = 1`.
    pub experiment: u8,
    /// Number of levels, starting from the initial mesh.
    pub levels: usize,
    pub degree_increment: usize,
    pub quad_profile: QuadProfile,
    pub tol: f64,
    pub out: Option<PathBuf>,
    pub dump_mesh: Option<PathBuf>,
    pub seed: u64,
    /// Nodal values of the manufactured `phi` on the initial mesh; `None`
    /// selects the experiment default.
    pub phi_nodal: Option<Vec<f64>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: 3,
            levels: 5,
            degree_increment: 2,
            quad_profile: QuadProfile::Accurate,
            tol: 1e-10,
            out: None,
            dump_mesh: None,
            seed: 0,
            phi_nodal: None,
        }
    }
}

const KEYS: [&str; 9] = [
    "experiment",
    "levels",
    "degree-increment",
    "quad-profile",
    "tol",
    "out",
    "dump-mesh",
    "seed",
    "phi-nodal",
];

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.experiment) {
            return Err(DpgError::Config(format!("experiment must be 1..=4, got {}", self.experiment)));
        }
        if self.levels == 0 {
            return Err(DpgError::Config("at least one level is required".into()));
        }
        if !(1..=3).contains(&self.degree_increment) {
            return Err(DpgError::Config(format!(
                "degree increment must be 1..=3, got {}",
                self.degree_increment
            )));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(DpgError::Config(format!("tol must lie in (0, 1), got {}", self.tol)));
        }
        if self.phi_nodal.is_some() && !self.is_manufactured() {
            return Err(DpgError::Config("phi-nodal applies to experiments 1 and 3 only".into()));
        }
        Ok(())
    }

    pub fn is_closed(&self) -> bool {
        self.experiment <= 2
    }

    pub fn is_manufactured(&self) -> bool {
        self.experiment == 1 || self.experiment == 3
    }

    /// Highest level index run by default; more is allowed but slow, the
    /// nonlocal assembly costs `O(#T^2)` time and memory.
    pub fn level_cap(&self) -> usize {
        if self.is_closed() {
            3
        } else {
            5
        }
    }

    pub fn level_cap_warning(&self) -> Option<String> {
        let last = self.levels - 1;
        let cap = self.level_cap();
        (last > cap).then(|| {
            let n = self.initial_mesh().num_triangles() << (2 * last);
            format!(
                "warning: level {last} ({n} triangles) exceeds the desk-scale cap {cap}; \
                 nonlocal assembly time and memory grow with the square of the triangle count"
            )
        })
    }

    pub fn initial_mesh(&self) -> SurfaceMesh {
        if self.is_closed() {
            build_cube_surface()
        } else {
            build_square_screen()
        }
    }

    /// Nodal values of the manufactured `phi` actually used.
    pub fn effective_phi_nodal(&self) -> Option<Vec<f64>> {
        if !self.is_manufactured() {
            return None;
        }
        if let Some(v) = &self.phi_nodal {
            return Some(v.clone());
        }
        let mesh = self.initial_mesh();
        Some(if self.experiment == 1 {
            mesh.vertices().iter().map(|p| p.x * p.y * p.z).collect()
        } else {
            // hat function of the centre node
            mesh.vertices().iter().map(|p| if p.norm() == 0.0 { 1.0 } else { 0.0 }).collect()
        })
    }

    /// `key=value` lines, one per key, in a fixed order; absent optional
    /// values are written empty.
    pub fn to_config_string(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let nodal = self
            .phi_nodal
            .as_ref()
            .map(|v| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(","))
            .unwrap_or_default();
        let values = [
            self.experiment.to_string(),
            self.levels.to_string(),
            self.degree_increment.to_string(),
            self.quad_profile.to_string(),
            format!("{:?}", self.tol),
            path(&self.out),
            path(&self.dump_mesh),
            self.seed.to_string(),
            nodal,
        ];
        KEYS.iter().zip(values).map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Parse `key=value` lines on top of the defaults. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| DpgError::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| DpgError::Config(format!("invalid value '{value}' for {key}")))
        }
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "experiment" => self.experiment = parse(key, value)?,
            "levels" => self.levels = parse(key, value)?,
            "degree-increment" => self.degree_increment = parse(key, value)?,
            "quad-profile" => self.quad_profile = value.parse()?,
            "tol" => self.tol = parse(key, value)?,
            "out" => self.out = path(value),
            "dump-mesh" => self.dump_mesh = path(value),
            "seed" => self.seed = parse(key, value)?,
            "phi-nodal" => {
                self.phi_nodal = if value.is_empty() {
                    None
                } else {
                    Some(value.split(',').map(|v| parse(key, v.trim())).collect::<Result<_>>()?)
                }
            }
            _ => return Err(DpgError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_config_str(&std::fs::read_to_string(path)?)
    }
}

/// Results of one refinement level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelRecord {
    pub level: usize,
    pub num_triangles: usize,
    pub h_min: f64,
    pub energy_err_sq: f64,
    pub l2_sigma: Option<f64>,
    pub l2_phi: Option<f64>,
    pub l2_sigma_hat: Option<f64>,
    pub cg_iters: usize,
    pub cg_converged: bool,
    pub wall_ms: f64,
    /// Per-element energy error indicators.
    pub indicators: Vec<f64>,
    /// Elements with an edge on the boundary of an open surface.
    pub boundary_elements: Vec<bool>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceRecord {
    pub rows: Vec<LevelRecord>,
}

/// Quantities with one value per level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    EnergyErrSq,
    L2Sigma,
    L2Phi,
    L2SigmaHat,
}

impl ConvergenceRecord {
    pub fn values(&self, column: Column) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| match column {
                Column::EnergyErrSq => Some(r.energy_err_sq),
                Column::L2Sigma => r.l2_sigma,
                Column::L2Phi => r.l2_phi,
                Column::L2SigmaHat => r.l2_sigma_hat,
            })
            .collect()
    }
}

fn slopes(errors: &[Option<f64>], sizes: &[f64]) -> Vec<Option<f64>> {
    errors
        .windows(2)
        .zip(sizes.windows(2))
        .map(|(e, s)| match (e[0], e[1]) {
            (Some(a), Some(b)) if a > 0.0 && b > 0.0 && s[0] != s[1] => Some((a / b).ln() / (s[0] / s[1]).ln()),
            _ => None,
        })
        .collect()
}

/// `log(e_k / e_{k+1}) / log(N_{k+1} / N_k)` for consecutive levels.
pub fn eoc(record: &ConvergenceRecord, column: Column) -> Vec<Option<f64>> {
    let inv_n: Vec<f64> = record.rows.iter().map(|r| 1.0 / r.num_triangles as f64).collect();
    slopes(&record.values(column), &inv_n)
}

/// `log(e_k / e_{k+1}) / log(h_k / h_{k+1})` with the minimal mesh width.
pub fn eoc_h(record: &ConvergenceRecord, column: Column) -> Vec<Option<f64>> {
    let h: Vec<f64> = record.rows.iter().map(|r| r.h_min).collect();
    slopes(&record.values(column), &h)
}

pub const CSV_HEADER: &str = "level,num_triangles,h_min,energy_err_sq,l2_sigma,l2_phi,l2_sigma_hat,cg_iters,wall_ms";

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn csv_string(record: &ConvergenceRecord) -> String {
    let opt = |x: Option<f64>| x.map(fmt_float).unwrap_or_default();
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in &record.rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.level,
            r.num_triangles,
            fmt_float(r.h_min),
            fmt_float(r.energy_err_sq),
            opt(r.l2_sigma),
            opt(r.l2_phi),
            opt(r.l2_sigma_hat),
            r.cg_iters,
            fmt_float(r.wall_ms)
        )
        .expect("writing to a string");
    }
    s
}

pub fn emit_csv(record: &ConvergenceRecord, path: &Path) -> Result<()> {
    std::fs::write(path, csv_string(record))?;
    Ok(())
}

/// Gnuplot script plotting the error columns of `csv` against the number of
/// triangles on log-log axes, with a `#T^-1` reference line.
pub fn gnuplot_script(csv: &Path, title: &str) -> String {
    let csv = csv.display();
    format!(
        "set datafile separator ','\n\
         set logscale xy\n\
         set key bottom left\n\
         set xlabel '#triangles'\n\
         set ylabel 'error'\n\
         set title '{title}'\n\
         plot '{csv}' using 2:4 skip 1 with linespoints title 'energy error squared', \\\n\
         \x20    '' using 2:5 skip 1 with linespoints title 'L2 sigma', \\\n\
         \x20    '' using 2:6 skip 1 with linespoints title 'L2 phi', \\\n\
         \x20    '' using 2:7 skip 1 with linespoints title 'L2 sigma hat', \\\n\
         \x20    x**-1 with lines dashtype 2 title '#T^-1'\n"
    )
}

/// A run that stopped at a failing level; `record` holds the finished ones.
#[derive(Debug)]
pub struct PartialRun {
    pub record: ConvergenceRecord,
    pub error: DpgError,
}

impl fmt::Display for PartialRun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "level {} failed: {}", self.record.rows.len(), self.error)
    }
}

impl std::error::Error for PartialRun {}

/// The discrete system of one level together with its mesh.
pub struct LevelProblem {
    pub mesh: SurfaceMesh,
    pub layout: DofLayout,
    pub system: SystemMatrices,
}

/// Right-hand side data of an experiment.
pub enum Load {
    Manufactured(ExactSolution),
    Analytic(fn(&crate::mesh::Point) -> f64),
}

impl Load {
    pub fn for_config(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(match cfg.experiment {
            1 | 3 => Load::Manufactured(ExactSolution::new(
                &cfg.initial_mesh(),
                cfg.effective_phi_nodal().expect("manufactured experiment"),
            )?),
            2 => Load::Analytic(|p| p.x),
            _ => Load::Analytic(|_| 1.0),
        })
    }

    pub fn exact(&self) -> Option<&ExactSolution> {
        match self {
            Load::Manufactured(e) => Some(e),
            Load::Analytic(_) => None,
        }
    }
}

/// Assemble the system of `mesh`.
pub fn build_level(mesh: SurfaceMesh, cfg: &ExperimentConfig, load: &Load) -> Result<LevelProblem> {
    let layout = DofLayout::new(&mesh, cfg.degree_increment)?;
    let quad = cfg.quad_profile.config();
    let b = assemble_b(&mesh, &layout, &quad)?;
    let gram = assemble_gram(&mesh, &layout)?;
    let load = match load {
        Load::Manufactured(exact) => assemble_load_manufactured(&mesh, &layout, exact, &LoadQuadrature::default())?,
        Load::Analytic(f) => assemble_load_analytic(&mesh, &layout, f)?,
    };
    Ok(LevelProblem {
        mesh,
        layout,
        system: SystemMatrices { b, gram, load },
    })
}

fn run_level(level: usize, mesh: &SurfaceMesh, cfg: &ExperimentConfig, load: &Load) -> Result<LevelRecord> {
    let start = Instant::now();
    let problem = build_level(mesh.clone(), cfg, load)?;
    let sys = &problem.system;
    let (u, report) = solve_normal_equations(sys, cfg.tol, default_max_iter(sys))?;
    let (l2_sigma, l2_phi, l2_sigma_hat) = match load.exact() {
        Some(exact) => {
            let q = ErrorQuadrature::default();
            (
                Some(l2_error_sigma(mesh, &problem.layout, &u, exact, &q)?),
                Some(l2_error_phi(mesh, &problem.layout, &u, exact)?),
                Some(l2_error_sigma_hat(mesh, &problem.layout, &u, exact, &q)?),
            )
        }
        None => (None, None, None),
    };
    let boundary_elements = (0..mesh.num_triangles())
        .map(|t| mesh.triangle_edges(t).iter().any(|&e| mesh.edges()[e].is_boundary()))
        .collect();
    Ok(LevelRecord {
        level,
        num_triangles: mesh.num_triangles(),
        h_min: mesh.h_min(),
        energy_err_sq: report.energy_error_sq,
        l2_sigma,
        l2_phi,
        l2_sigma_hat,
        cg_iters: report.iterations,
        cg_converged: report.converged,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        indicators: report.indicators,
        boundary_elements,
    })
}

/// Run all levels, calling `on_level` after each; writes the CSV (also for a
/// partial run) when `cfg.out` is set.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    mut on_level: impl FnMut(&LevelRecord),
) -> std::result::Result<ConvergenceRecord, PartialRun> {
    let mut record = ConvergenceRecord::default();
    let result = (|| -> Result<()> {
        cfg.validate()?;
        let load = Load::for_config(cfg)?;
        let mut mesh = cfg.initial_mesh();
        for level in 0..cfg.levels {
            if level > 0 {
                mesh = refine_uniform(&mesh);
            }
            let row = run_level(level, &mesh, cfg, &load)?;
            on_level(&row);
            record.rows.push(row);
        }
        if let Some(path) = &cfg.dump_mesh {
            mesh.write_obj(path)?;
        }
        Ok(())
    })();
    let written = match &cfg.out {
        Some(path) => emit_csv(&record, path),
        None => Ok(()),
    };
    match result.and(written) {
        Ok(()) => Ok(record),
        Err(error) => Err(PartialRun { record, error }),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> std::result::Result<ConvergenceRecord, PartialRun> {
    run_experiment_with(cfg, |_| {})
}
