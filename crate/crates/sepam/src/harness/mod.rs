//! Scenario configs, dispatch, reports and figure tables.

pub mod acceptance;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{exact_lambda_profile, exact_moment, OperatorSpec};
use crate::fields::{
    k_diag_closed_form, k_kernels, psi_bounds_check, Domain, PsiGeometry, PsiSpec,
};
use crate::irw::{compare_se_irw, WeightFunction};
use crate::lattice::{green_return_sum, green_srw, srw_kernel, Torus};
use crate::montecarlo::{asymptotic_probe, estimate_moment, lambda_curve};
use crate::variational::top_eigenvalue;
use crate::{exclusion::sample_initial, one_kappa};

pub const SCENARIOS: [&str; 7] = [
    "comparison_suite",
    "exact_vs_mc",
    "kappa_sweep",
    "intermittency_kappa0",
    "recurrent_trend",
    "asymptotic_probe",
    "field_checks",
];

/// Model parameters; which ones are required depends on the scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub d: Option<usize>,
    pub l: Option<usize>,
    pub rho: Option<f64>,
    pub rhos: Option<Vec<f64>>,
    pub kappa: Option<f64>,
    pub kappas: Option<Vec<f64>>,
    pub p: Option<usize>,
    pub p_list: Option<Vec<usize>>,
    pub gamma: Option<f64>,
    /// Horizon T of ψ.
    pub horizon: Option<f64>,
    pub t: Option<f64>,
    pub t_grid: Option<Vec<f64>>,
    /// Fixed particle number of the exact operator.
    pub sector: Option<usize>,
    /// Time shift S of the probe kernel.
    pub shift: Option<f64>,
    /// Number of random configurations in field checks.
    pub samples: Option<usize>,
}

/// Pass/fail thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub sigma: f64,
    pub rel_tol: f64,
    pub margin_tol: f64,
    pub monotone_tol: f64,
    pub convex_tol: f64,
    pub gap_tol: f64,
    pub identity_tol: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            sigma: 3.0,
            rel_tol: 0.02,
            margin_tol: 1e-10,
            monotone_tol: 1e-9,
            convex_tol: 1e-9,
            gap_tol: 1e-6,
            identity_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Monte Carlo trials.
    #[serde(default)]
    pub trials: usize,
    pub output: PathBuf,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub thresholds: Thresholds,
}

fn default_seed() -> u64 {
    1
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Per-scenario schema: required fields and value ranges.
    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let req: &[&str] = match self.scenario.as_str() {
            "comparison_suite" => &["d", "l", "rhos", "t"],
            "exact_vs_mc" => &["d", "l", "rho", "kappa", "p", "t"],
            "kappa_sweep" => &["d", "l", "rho", "kappas", "p_list"],
            "intermittency_kappa0" => &["d", "l", "rho", "p_list", "t_grid"],
            "recurrent_trend" => &["d", "l", "rho", "kappa", "t_grid"],
            "asymptotic_probe" => &["d", "kappa", "t"],
            "field_checks" => &["d", "rho", "kappa", "horizon", "samples"],
            other => return Err(Error::Schema(format!("unknown scenario '{other}'"))),
        };
        let present = |name: &str| match name {
            "d" => p.d.is_some(),
            "l" => p.l.is_some(),
            "rho" => p.rho.is_some(),
            "rhos" => p.rhos.is_some(),
            "kappa" => p.kappa.is_some(),
            "kappas" => p.kappas.is_some(),
            "p" => p.p.is_some(),
            "p_list" => p.p_list.is_some(),
            "t" => p.t.is_some(),
            "t_grid" => p.t_grid.is_some(),
            "horizon" => p.horizon.is_some(),
            "samples" => p.samples.is_some(),
            _ => false,
        };
        for name in req {
            if !present(name) {
                return schema(format!("{}: missing params.{name}", self.scenario));
            }
        }
        let needs_mc = matches!(
            self.scenario.as_str(),
            "exact_vs_mc" | "recurrent_trend" | "asymptotic_probe"
        );
        if needs_mc && self.trials < 2 {
            return schema("trials must be ≥ 2");
        }
        if let Some(g) = &p.t_grid {
            if g.is_empty() {
                return schema("t_grid is empty");
            }
            if g[0] <= 0.0 || g.windows(2).any(|w| w[1] <= w[0]) {
                return schema("t_grid must be positive and strictly increasing");
            }
        }
        for list in [&p.rhos, &p.kappas] {
            if matches!(list, Some(v) if v.is_empty()) && self.scenario != "kappa_sweep" {
                return schema("empty parameter list");
            }
        }
        if let Some(v) = &p.kappas {
            if v.windows(2).any(|w| w[1] <= w[0]) || v.iter().any(|k| *k < 0.0) {
                return schema("kappas must be non-negative and strictly increasing");
            }
        }
        if matches!(&p.p_list, Some(v) if v.is_empty() || v.contains(&0)) {
            return schema("p_list must be non-empty with p ≥ 1");
        }
        let rhos = p.rho.iter().chain(p.rhos.iter().flatten());
        for r in rhos {
            if !(*r > 0.0 && *r < 1.0) {
                return schema("ρ must lie in (0,1)");
            }
        }
        if matches!(p.d, Some(0)) {
            return schema("d must be ≥ 1");
        }
        if self.output.as_os_str().is_empty() {
            return schema("output path is empty");
        }
        Ok(())
    }
}

fn schema<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Schema(msg.into()))
}

/// One table of a report; NaN marks a missing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: vec![],
        }
    }
}

/// A pass/fail flag with the value and threshold it was decided on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }

    fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value >= threshold,
        }
    }

    fn above(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value > threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub crate_version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
    pub wall_seconds: f64,
}

impl Environment {
    fn capture(wall_seconds: f64) -> Self {
        Self {
            crate_version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            threads: rayon::current_num_threads(),
            wall_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub config: ScenarioConfig,
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub pass: bool,
    pub environment: Environment,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Writes `report.json` into the config's output directory.
    pub fn write(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.config.output)?;
        let path = self.config.output.join("report.json");
        fs::write(&path, self.to_json())?;
        Ok(path)
    }
}

struct Draft {
    tables: Vec<Table>,
    checks: Vec<Check>,
    notes: Vec<String>,
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<Report> {
    config.validate()?;
    let start = Instant::now();
    let draft = match config.scenario.as_str() {
        "comparison_suite" => comparison_suite(config)?,
        "exact_vs_mc" => exact_vs_mc(config)?,
        "kappa_sweep" => kappa_sweep(config)?,
        "intermittency_kappa0" => intermittency_kappa0(config)?,
        "recurrent_trend" => recurrent_trend(config)?,
        "asymptotic_probe" => probe(config)?,
        "field_checks" => field_checks(config)?,
        other => return schema(format!("unknown scenario '{other}'")),
    };
    Ok(Report {
        scenario: config.scenario.clone(),
        config: config.clone(),
        pass: draft.checks.iter().all(|c| c.pass),
        tables: draft.tables,
        checks: draft.checks,
        notes: draft.notes,
        environment: Environment::capture(start.elapsed().as_secs_f64()),
    })
}

fn need<T: Clone>(v: &Option<T>) -> T {
    v.clone().expect("checked by validate")
}

fn torus_of(p: &Params) -> Result<Torus> {
    Torus::new(need(&p.d), need(&p.l))
}

fn base_spec(p: &Params, kappa: f64, power: usize) -> Result<OperatorSpec> {
    let mut s = OperatorSpec::new(torus_of(p)?, kappa, power, need(&p.rho))?
        .with_gamma(p.gamma.unwrap_or(1.0));
    if let Some(k) = p.sector {
        s = s.with_sector(k)?;
    }
    Ok(s)
}

/// SE against IRW for K = ±1 on the origin and K = ±1_Q/|Q| on Q = {−1,0,1}^d, times [0, t].
fn comparison_suite(cfg: &ScenarioConfig) -> Result<Draft> {
    let p = &cfg.params;
    let torus = torus_of(p)?;
    let d = torus.d;
    let kernel = srw_kernel(d, 1.0)?;
    let t = need(&p.t);
    let origin = torus.index(&vec![0; d]);
    let q: Vec<usize> = (0..3usize.pow(d as u32))
        .map(|i| {
            let z: Vec<i64> = (0..d)
                .map(|k| (i / 3usize.pow(k as u32) % 3) as i64 - 1)
                .collect();
            torus.index(&torus.wrap_displacement(&z))
        })
        .collect();
    let mut table = Table::new(
        "comparison",
        &[
            "rho",
            "set_size",
            "amplitude",
            "se",
            "se_stderr",
            "irw",
            "margin",
            "min_fixed_margin",
        ],
    );
    let mut checks = vec![];
    let mc = if torus.sites() > 14 {
        Some((cfg.trials.max(2), cfg.seed))
    } else {
        None
    };
    for rho in need(&p.rhos) {
        for sign in [1.0, -1.0] {
            for set in [vec![origin], q.clone()] {
                let amp = sign / set.len() as f64;
                let k = WeightFunction::indicator(torus, &set, 0.0, t, amp)?;
                let rep =
                    compare_se_irw(&torus, &kernel, rho, &k, t, cfg.thresholds.margin_tol, mc)?;
                let fixed = rep.min_fixed_margin.unwrap_or(f64::NAN);
                table.rows.push(vec![
                    rho,
                    set.len() as f64,
                    amp,
                    rep.se_value,
                    rep.se_stderr,
                    rep.irw_value,
                    rep.margin,
                    fixed,
                ]);
                let floor = if rep.se_stderr > 0.0 {
                    -4.0 * rep.se_stderr
                } else {
                    -cfg.thresholds.margin_tol
                };
                checks.push(Check::at_least(
                    format!("margin rho={rho} |Q|={} a={amp:+}", set.len()),
                    rep.margin,
                    floor,
                ));
            }
        }
    }
    Ok(Draft {
        tables: vec![table],
        checks,
        notes: vec![],
    })
}

fn exact_vs_mc(cfg: &ScenarioConfig) -> Result<Draft> {
    let p = &cfg.params;
    let spec = base_spec(p, need(&p.kappa), need(&p.p))?;
    let t = need(&p.t);
    let ex = exact_moment(&spec, t)?;
    let mc = estimate_moment(&spec, t, cfg.trials, cfg.seed)?;
    let mut table = Table::new("moment", &["t", "exact", "mc", "mc_stderr"]);
    table.rows.push(vec![t, ex, mc.mean, mc.stderr]);
    let gap = (mc.mean - ex).abs();
    Ok(Draft {
        tables: vec![table],
        checks: vec![
            Check::at_most("z-score", gap / mc.stderr, cfg.thresholds.sigma),
            Check::at_most("relative gap", gap / ex, cfg.thresholds.rel_tol),
        ],
        notes: vec![],
    })
}

fn kappa_sweep(cfg: &ScenarioConfig) -> Result<Draft> {
    let p = &cfg.params;
    let gamma = p.gamma.unwrap_or(1.0);
    let rho = need(&p.rho);
    let th = &cfg.thresholds;
    let mut table = Table::new("lambda_p", &["kappa", "p", "lambda", "ci", "residual"]);
    let mut checks = vec![];
    for power in need(&p.p_list) {
        let mut lam = vec![];
        for kappa in need(&p.kappas) {
            let top = top_eigenvalue(&base_spec(p, kappa, power)?, 1e-12)?;
            table
                .rows
                .push(vec![kappa, power as f64, top.lambda, 0.0, top.residual]);
            lam.push(top.lambda);
        }
        let rise = lam
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        let d2 = lam
            .windows(3)
            .map(|w| w[0] - 2.0 * w[1] + w[2])
            .fold(f64::INFINITY, f64::min);
        if lam.len() >= 2 {
            checks.push(Check::at_most(
                format!("p={power} largest increase"),
                rise,
                th.monotone_tol,
            ));
        }
        if lam.len() >= 3 {
            checks.push(Check::at_least(
                format!("p={power} smallest second difference"),
                d2,
                -th.convex_tol,
            ));
        }
        if let (Some(lo), Some(hi)) = (
            lam.iter().copied().reduce(f64::min),
            lam.iter().copied().reduce(f64::max),
        ) {
            checks.push(Check::at_least(
                format!("p={power} min λ vs ργ"),
                lo,
                rho * gamma - th.monotone_tol,
            ));
            checks.push(Check::at_most(
                format!("p={power} max λ vs γ"),
                hi,
                gamma + th.monotone_tol,
            ));
        }
    }
    Ok(Draft {
        tables: vec![table],
        checks,
        notes: vec!["exact spectra: ci column is 0".into()],
    })
}

fn intermittency_kappa0(cfg: &ScenarioConfig) -> Result<Draft> {
    let p = &cfg.params;
    let grid = need(&p.t_grid);
    let mut powers = need(&p.p_list);
    powers.sort_unstable();
    let mut table = Table::new("lambda_p_t", &["p", "t", "lambda"]);
    let mut rows: Vec<Vec<f64>> = vec![];
    for &power in &powers {
        let prof = exact_lambda_profile(&base_spec(p, 0.0, power)?, &grid)?;
        let vals: Vec<f64> = prof.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect();
        for (t, v) in grid.iter().zip(&vals) {
            table.rows.push(vec![power as f64, *t, *v]);
        }
        rows.push(vals);
    }
    let mut checks = vec![];
    let last = grid.len() - 1;
    for (k, w) in rows.windows(2).enumerate() {
        let (a, b) = (powers[k], powers[k + 1]);
        checks.push(Check::above(
            format!("gap p={b} vs p={a} at t={}", grid[last]),
            w[1][last] - w[0][last],
            cfg.thresholds.gap_tol,
        ));
        let holder = w[0]
            .iter()
            .zip(&w[1])
            .map(|(x, y)| y - x)
            .fold(f64::INFINITY, f64::min);
        checks.push(Check::at_least(
            format!("Hölder p={b} vs p={a} over grid"),
            holder,
            -1e-12,
        ));
    }
    Ok(Draft {
        tables: vec![table],
        checks,
        notes: vec![],
    })
}

fn recurrent_trend(cfg: &ScenarioConfig) -> Result<Draft> {
    let p = &cfg.params;
    let grid = need(&p.t_grid);
    let spec = base_spec(p, need(&p.kappa), p.p.unwrap_or(1))?;
    let run = lambda_curve(&spec, &grid, cfg.trials, cfg.seed, false)?;
    let ex = exact_lambda_profile(&spec, &grid)?;
    let mut table = Table::new(
        "lambda_t",
        &[
            "t",
            "lambda_mc",
            "stderr",
            "lambda_exact",
            "max_weight_fraction",
        ],
    );
    for k in 0..grid.len() {
        table.rows.push(vec![
            grid[k],
            run.lambda[k],
            run.lambda_stderr[k],
            ex[k].unwrap_or(f64::NAN),
            run.max_weight_fraction[k],
        ]);
    }
    let sigma = cfg.thresholds.sigma;
    let mut checks = vec![];
    let worst_drop = (1..grid.len())
        .map(|k| {
            let s = (run.lambda_stderr[k].powi(2) + run.lambda_stderr[k - 1].powi(2)).sqrt();
            (run.lambda[k - 1] - run.lambda[k]) / s.max(1e-300)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    if grid.len() > 1 {
        checks.push(Check::at_most(
            "largest MC decrease in σ",
            worst_drop,
            sigma,
        ));
    }
    let exact_rise = ex
        .windows(2)
        .filter_map(|w| Some(w[0]? - w[1]?))
        .fold(f64::NEG_INFINITY, f64::max);
    if grid.len() > 1 {
        checks.push(Check::at_most(
            "largest exact decrease",
            exact_rise,
            cfg.thresholds.monotone_tol,
        ));
    }
    let worst_z = (0..grid.len())
        .filter_map(|k| Some((run.lambda[k] - ex[k]?).abs() / run.lambda_stderr[k].max(1e-300)))
        .fold(0.0, f64::max);
    checks.push(Check::at_most("MC vs exact in σ", worst_z, sigma));
    checks.push(Check::at_least(
        "ργ ≤ Λ ≤ γ within 3σ",
        run.bounds_ok as u8 as f64,
        1.0,
    ));
    Ok(Draft {
        tables: vec![table],
        checks,
        notes: vec![format!(
            "plateau {:.6} ± {:.6}",
            run.plateau, run.plateau_stderr
        )],
    })
}

fn probe(cfg: &ScenarioConfig) -> Result<Draft> {
    let p = &cfg.params;
    let r = asymptotic_probe(
        need(&p.d),
        need(&p.kappa),
        p.shift.unwrap_or(0.0),
        need(&p.t),
        cfg.trials,
        cfg.seed,
    )?;
    let mut table = Table::new(
        "probe",
        &[
            "d",
            "kappa",
            "t",
            "mean",
            "stderr",
            "target",
            "relative_gap",
        ],
    );
    table.rows.push(vec![
        r.d as f64,
        r.kappa,
        r.t,
        r.estimate.mean,
        r.estimate.stderr,
        r.target,
        r.relative_gap,
    ]);
    Ok(Draft {
        tables: vec![table],
        checks: vec![Check::at_most(
            "relative gap",
            r.relative_gap.abs(),
            cfg.thresholds.rel_tol,
        )],
        notes: vec![format!(
            "truncation bound {:.3e}, {} classes",
            r.truncation_bound, r.classes
        )],
    })
}

fn field_checks(cfg: &ScenarioConfig) -> Result<Draft> {
    let p = &cfg.params;
    let (d, rho, kappa, big_t) = (need(&p.d), need(&p.rho), need(&p.kappa), need(&p.horizon));
    let th = &cfg.thresholds;
    let radius = PsiSpec::default_radius(d, big_t, kappa);
    let torus = Torus::new(d, 2 * radius + 2)?;
    let spec = PsiSpec::new(d, kappa, big_t, rho, PsiGeometry::Lattice { radius })?;
    let etas = (0..need(&p.samples) as u64)
        .map(|i| sample_initial(torus, rho, cfg.seed.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    let origin = vec![0i64; d];
    let mut e1 = origin.clone();
    e1[0] = 1;
    let mut far = origin.clone();
    far[0] = radius as i64 / 2;
    let psi = psi_bounds_check(
        &spec,
        &etas,
        &[(origin.clone(), e1), (origin.clone(), far.clone())],
        &[origin.clone(), far],
        th.identity_tol,
    )?;
    let mut table = Table::new("bounds", &["quantity", "value", "bound"]);
    table.rows.push(vec![
        1.0,
        psi.max_site_difference,
        psi.bound_site_difference,
    ]);
    table.rows.push(vec![
        2.0,
        psi.max_swap_difference,
        psi.bound_swap_difference,
    ]);
    table
        .rows
        .push(vec![3.0, psi.max_swap_energy, psi.bound_swap_energy]);
    let mut checks = vec![
        Check::at_most(
            "ψ site difference",
            psi.max_site_difference,
            psi.bound_site_difference + th.identity_tol,
        ),
        Check::at_most(
            "ψ swap difference",
            psi.max_swap_difference,
            psi.bound_swap_difference + th.identity_tol,
        ),
        Check::at_most(
            "ψ swap energy",
            psi.max_swap_energy,
            psi.bound_swap_energy + th.identity_tol,
        ),
        Check::at_least("ψ lower range", psi.min_psi, -rho * big_t - th.identity_tol),
        Check::at_most(
            "ψ upper range",
            psi.max_psi,
            (1.0 - rho) * big_t + th.identity_tol,
        ),
    ];
    let kk = k_kernels(d, kappa, big_t, radius);
    let (off, tail) = kk.k_off_norm1(radius.min(8));
    let bound = 8.0 * d as f64 * big_t * big_t;
    table.rows.push(vec![4.0, off + tail, bound]);
    checks.push(Check::at_most("‖K_off‖₁", off + tail, bound));
    let closed = k_diag_closed_form(d, kappa, big_t);
    let diag = kk.k_diag_norm1();
    table.rows.push(vec![5.0, diag, closed]);
    checks.push(Check::at_most(
        "‖K_diag‖₁ vs closed form (relative)",
        (diag - closed).abs() / closed,
        1e-6,
    ));
    if d >= 3 {
        let g = green_srw(d)?;
        let (sum, _) = green_return_sum(d, 100_000)?;
        table.rows.push(vec![6.0, g, sum]);
        checks.push(Check::at_most(
            "G_d two methods (relative)",
            (g - sum).abs() / g,
            1e-5,
        ));
        let box_domain = Domain::Box {
            lo: vec![-4; d],
            hi: vec![4; d],
        };
        let res = acceptance::mass_residual(box_domain, &[origin], 1.0, kappa, 2.0)?;
        table.rows.push(vec![7.0, res, th.identity_tol]);
        checks.push(Check::at_most("Cauchy mass residual", res, th.identity_tol));
    }
    Ok(Draft {
        tables: vec![table],
        checks,
        notes: vec![
            "quantity codes: 1 site diff, 2 swap diff, 3 swap energy, 4 K_off, 5 K_diag, 6 Green, 7 mass residual".into(),
            format!("window radius {radius}, 1[κ] = {:.6}", one_kappa(d, kappa)),
        ],
    })
}

/// Dashed asymptote ρ + ρ(1−ρ)G_d/(2dκ); NaN when G_d is infinite or κ = 0.
pub fn asymptote(d: usize, rho: f64, kappa: f64) -> f64 {
    match green_srw(d) {
        Ok(g) if kappa > 0.0 => rho + rho * (1.0 - rho) * g / (2.0 * d as f64 * kappa),
        _ => f64::NAN,
    }
}

pub const FIGURE_HEADER: &str = "kappa\tlambda\tci\tasymptote";

/// One TSV per p-curve of a κ-sweep report: (κ, λ_p, CI, asymptote).
pub fn emit_figures_data(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let p = &report.config.params;
    let d = p.d.unwrap_or(1);
    let rho = p.rho.unwrap_or(f64::NAN);
    let mut powers = p.p_list.clone().unwrap_or_default();
    if powers.is_empty() {
        powers.push(p.p.unwrap_or(1));
    }
    let rows: &[Vec<f64>] = report
        .table("lambda_p")
        .map(|t| t.rows.as_slice())
        .unwrap_or(&[]);
    let mut out = vec![];
    for power in powers {
        let mut text = String::from(FIGURE_HEADER);
        text.push('\n');
        for r in rows.iter().filter(|r| r[1] == power as f64) {
            text.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r[0],
                r[2],
                r[3],
                asymptote(d, rho, r[0])
            ));
        }
        let path = dir.join(format!("{}_p{power}.tsv", report.scenario));
        fs::write(&path, text)?;
        out.push(path);
    }
    Ok(out)
}

/// Parses a figure TSV back into rows.
pub fn parse_figure(text: &str) -> Result<Vec<[f64; 4]>> {
    let mut lines = text.lines();
    if lines.next() != Some(FIGURE_HEADER) {
        return Err(Error::Parse("missing figure header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let v: Vec<f64> = l
                .split('\t')
                .map(|x| x.parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<_>>()?;
            v.try_into()
                .map_err(|_| Error::Parse("expected 4 columns".into()))
        })
        .collect()
}
