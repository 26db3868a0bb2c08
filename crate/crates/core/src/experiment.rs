//! Configuration-driven experiments.
//!
//! A config lists kernel specs and tests. Specs of the same family form a
//! size ladder (in the order given) for the trend tests. Running a config
//! yields a [`Report`] whose JSON form is a pure function of the config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{bottleneck_optimum, cheeger_check, condition_report, default_strategy, ConditionReport, EXHAUSTIVE_CAP};
use crate::coalescent::{coalescent_ensemble, kingman_sampler, KingmanSize, Start};
use crate::error::{Error, Result};
use crate::kernel::{Kernel, PairLaw};
use crate::meeting::{bound_configurations, identity_check, meeting_moments, meeting_tail, muv_consistency, decorrelation_check};
use crate::rng::{derive_seed, fnv1a, stream};
use crate::stats::{ks_one_sample, ks_two_sample, trend_check, Direction};
use crate::voter::{ensemble, EnsembleConfig, EnsembleSummary, EventMode, Moments};
use crate::wf::MixtureExpLaw;
use crate::zoo::ZooSpec;

pub const IDENTITY_TOL: f64 = 1e-8;
pub const MUV_TOL: f64 = 1e-6;
pub const BOUND_TOL: f64 = 1e-9;
/// Standard errors allowed between an ensemble mean and its exact value.
pub const MEAN_SE_FACTOR: f64 = 3.0;
/// Largest-size over smallest-size mean-field residual must not exceed this.
pub const TREND_SHRINK: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Identities,
    MeetingExp,
    DensityMoment,
    MeanFieldTrend,
    Kingman,
    FullCoalescence,
    Conditions,
    Decorrelation,
    Cheeger,
}

impl TestKind {
    /// Name of the result a verdict of this kind checks.
    pub fn tag(self) -> &'static str {
        match self {
            TestKind::Identities => "meeting-moment-identities",
            TestKind::MeetingExp => "exponential-meeting-limit",
            TestKind::DensityMoment => "density-second-moment-duality",
            TestKind::MeanFieldTrend => "mean-field-condition",
            TestKind::Kingman => "kingman-partial-coalescence",
            TestKind::FullCoalescence => "full-coalescence-limit",
            TestKind::Conditions => "mixing-and-gap-conditions",
            TestKind::Decorrelation => "pair-density-decorrelation-bound",
            TestKind::Cheeger => "cheeger-inequality",
        }
    }

    fn name(self) -> String {
        serde_json::to_value(self).unwrap().as_str().unwrap().to_string()
    }
}

/// Time scale of the simulations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaPolicy {
    #[default]
    Tmeet,
    Explicit(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestParams {
    pub u: f64,
    pub horizon: f64,
    pub grid: Vec<f64>,
    pub kingman_k: usize,
    pub decorrelation_times: Vec<(f64, f64)>,
    pub muv_step: f64,
    pub muv_horizon: f64,
    /// KS tolerance; when absent each test uses its own default.
    pub ks_tolerance: Option<f64>,
    /// Pairs simulated when `t_meet` has no exact route.
    pub tmeet_replicas: usize,
    pub event_mode: EventMode,
}

impl Default for TestParams {
    fn default() -> Self {
        TestParams {
            u: 0.5,
            horizon: 2.0,
            grid: vec![0.25, 0.5, 1.0, 2.0],
            kingman_k: 4,
            decorrelation_times: vec![(0.5, 1.5), (1.0, 3.0)],
            muv_step: 0.01,
            muv_horizon: 5.0,
            ks_tolerance: None,
            tmeet_replicas: 2000,
            event_mode: EventMode::Discordant,
        }
    }
}

fn default_parallelism() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub specs: Vec<ZooSpec>,
    pub tests: Vec<TestKind>,
    #[serde(default)]
    pub gamma: GammaPolicy,
    pub replicas: usize,
    pub master_seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub params: TestParams,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.specs.is_empty() {
            return Err(Error::Config("no kernel specs".into()));
        }
        if self.tests.is_empty() {
            return Err(Error::Config("no tests requested".into()));
        }
        if self.replicas == 0 {
            return Err(Error::Config("replicas must be positive".into()));
        }
        if let GammaPolicy::Explicit(g) = self.gamma {
            if !(g > 0.0) {
                return Err(Error::Config(format!("explicit gamma {g} must be positive")));
            }
        }
        let p = &self.params;
        if !(0.0..=1.0).contains(&p.u) || !(p.horizon > 0.0) {
            return Err(Error::Config("need u in [0, 1] and horizon > 0".into()));
        }
        if p.grid.iter().any(|&s| s < 0.0 || s > p.horizon) {
            return Err(Error::Config("grid points must lie in [0, horizon]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TmeetSource {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub label: String,
    pub n: usize,
    pub pi_diag: f64,
    pub nu_total: f64,
    pub reversible: bool,
    pub t_meet: f64,
    pub t_meet_se: f64,
    pub t_meet_source: TmeetSource,
    pub gamma: f64,
    pub gap: Option<f64>,
    pub t_mix: Option<f64>,
    pub phi_star: Option<f64>,
    pub ratio_mix: Option<f64>,
    pub gap_times_tmeet: Option<f64>,
    pub logterm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub test: TestKind,
    pub tag: String,
    /// Instance label, or ladder name for trend tests.
    pub subject: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    pub seed: Option<u64>,
    pub input_hash: String,
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub config_hash: String,
    pub instances: Vec<InstanceRow>,
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `0` when every verdict passes, `1` otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }

    /// Writes `report.json` and `tables/{instances,verdicts}.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("tables"))?;
        fs::write(dir.join("report.json"), self.to_json())?;
        let csv_err = |e: csv::Error| Error::Io(e.to_string());
        let mut w = csv::Writer::from_path(dir.join("tables/instances.csv")).map_err(csv_err)?;
        for row in &self.instances {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("tables/verdicts.csv")).map_err(csv_err)?;
        w.write_record(["test", "tag", "subject", "statistic", "threshold", "pass", "seed", "input_hash"])
            .map_err(csv_err)?;
        for v in &self.verdicts {
            w.write_record([
                v.test.name(),
                v.tag.clone(),
                v.subject.clone(),
                v.statistic.to_string(),
                v.threshold.to_string(),
                v.pass.to_string(),
                v.seed.map(|s| s.to_string()).unwrap_or_default(),
                v.input_hash.clone(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Exit status for a finished (or failed) experiment: 0 pass, 1 statistical
/// failure, 2 configuration or runtime error.
pub fn exit_code(result: &Result<Report>) -> i32 {
    match result {
        Ok(report) => report.exit_code(),
        Err(_) => 2,
    }
}

pub fn hash_hex(text: &str) -> String {
    format!("{:016x}", fnv1a(text))
}

/// Mean meeting time of two chains started from `pi x pi`, by simulation.
pub fn t_meet_monte_carlo(kernel: &Kernel, replicas: usize, seed: u64, parallelism: usize) -> Result<Moments> {
    let runs = coalescent_ensemble(kernel, Start::Partial { k: 2 }, 1, replicas, seed, parallelism)?;
    Ok(Moments::of(runs.iter().map(|r| r.get(1).unwrap())))
}

struct Instance {
    spec: ZooSpec,
    label: String,
    kernel: Kernel,
    row: InstanceRow,
    condition: Option<ConditionReport>,
}

fn family(spec: &ZooSpec) -> String {
    match *spec {
        ZooSpec::Moran { .. } => "moran".into(),
        ZooSpec::TorusNn { d, .. } => format!("torus_nn(d={d})"),
        ZooSpec::TorusRange { m, d, .. } => format!("torus_range(m={m},d={d})"),
        ZooSpec::Hypercube { .. } => "hypercube".into(),
        ZooSpec::RandomRegularPerm { k, .. } => format!("random_regular_perm(k={k})"),
    }
}

fn build_instance(spec: &ZooSpec, config: &ExperimentConfig) -> Result<Instance> {
    let label = spec.label();
    let kernel = spec.build()?;
    let (t_meet, t_meet_se, source) = match meeting_moments(&kernel) {
        Ok(sol) => (sol.t_meet, 0.0, TmeetSource::Exact),
        Err(Error::TooLarge(_)) => {
            let seed = derive_seed(config.master_seed, &format!("tmeet/{label}"));
            let m = t_meet_monte_carlo(&kernel, config.params.tmeet_replicas, seed, config.parallelism)?;
            (m.mean, m.se(), TmeetSource::MonteCarlo)
        }
        Err(e) => return Err(e),
    };
    let gamma = match config.gamma {
        GammaPolicy::Tmeet => t_meet,
        GammaPolicy::Explicit(g) => g,
    };
    let condition = condition_report(&kernel, t_meet).ok();
    let phi_star = match default_strategy(&kernel) {
        crate::analysis::BottleneckStrategy::Exhaustive if kernel.n() > EXHAUSTIVE_CAP => None,
        s => bottleneck_optimum(&kernel, s).ok().map(|b| b.phi_star),
    };
    let row = InstanceRow {
        label: label.clone(),
        n: kernel.n(),
        pi_diag: kernel.pi_diag(),
        nu_total: kernel.nu_total(),
        reversible: kernel.is_reversible(),
        t_meet,
        t_meet_se,
        t_meet_source: source,
        gamma,
        gap: condition.as_ref().and_then(|c| c.gap),
        t_mix: condition.as_ref().map(|c| c.t_mix),
        phi_star,
        ratio_mix: condition.as_ref().map(|c| c.ratio_mix),
        gap_times_tmeet: condition.as_ref().and_then(|c| c.gap_times_tmeet),
        logterm: condition.as_ref().and_then(|c| c.logterm),
    };
    Ok(Instance {
        spec: spec.clone(),
        label,
        kernel,
        row,
        condition,
    })
}

struct Runner<'c> {
    config: &'c ExperimentConfig,
    verdicts: Vec<Verdict>,
    ensembles: BTreeMap<String, EnsembleSummary>,
}

impl<'c> Runner<'c> {
    fn seed(&self, test: TestKind, subject: &str) -> u64 {
        derive_seed(self.config.master_seed, &format!("{}/{subject}", test.name()))
    }

    fn input_hash(&self, test: TestKind, subjects: &[&ZooSpec]) -> String {
        let inputs = json!({
            "test": test,
            "specs": subjects,
            "gamma": self.config.gamma,
            "replicas": self.config.replicas,
            "master_seed": self.config.master_seed,
            "params": self.config.params,
        });
        hash_hex(&inputs.to_string())
    }

    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, test: TestKind, subject: &str, specs: &[&ZooSpec], statistic: f64, threshold: f64, pass: bool, seed: Option<u64>, details: serde_json::Value) {
        let input_hash = self.input_hash(test, specs);
        self.verdicts.push(Verdict {
            test,
            tag: test.tag().to_string(),
            subject: subject.to_string(),
            statistic,
            threshold,
            pass,
            seed,
            input_hash,
            details,
        });
    }

    fn ks_tol(&self, default: f64) -> f64 {
        self.config.params.ks_tolerance.unwrap_or(default)
    }

    fn voter_summary(&mut self, inst: &Instance) -> Result<EnsembleSummary> {
        if let Some(s) = self.ensembles.get(&inst.label) {
            return Ok(s.clone());
        }
        let p = &self.config.params;
        let mut grid = p.grid.clone();
        if !grid.contains(&p.horizon) {
            grid.push(p.horizon);
        }
        let cfg = EnsembleConfig {
            u: p.u,
            gamma: inst.row.gamma,
            horizon: p.horizon,
            grid,
            replicas: self.config.replicas,
            master_seed: derive_seed(self.config.master_seed, &format!("voter/{}", inst.label)),
            mode: p.event_mode,
        };
        let (summary, _) = ensemble(&inst.kernel, &cfg, self.config.parallelism)?;
        self.ensembles.insert(inst.label.clone(), summary.clone());
        Ok(summary)
    }

    fn identities(&mut self, inst: &Instance) -> Result<()> {
        let sol = meeting_moments(&inst.kernel)?;
        let id = identity_check(&inst.kernel, &sol);
        let muv = muv_consistency(&inst.kernel, self.config.params.muv_step, self.config.params.muv_horizon)?;
        let stat = id.mvv_residual.max(id.muu_residual);
        let pass = stat <= IDENTITY_TOL && muv.max_residual <= MUV_TOL && id.lower_bound_ok;
        let details = json!({
            "mvv_residual": id.mvv_residual,
            "muu_residual": id.muu_residual,
            "muv_max_residual": muv.max_residual,
            "lower_bound": id.lower_bound,
            "t_meet": sol.t_meet,
            "lower_bound_ok": id.lower_bound_ok,
        });
        self.push(TestKind::Identities, &inst.label, &[&inst.spec], stat, IDENTITY_TOL, pass, None, details);
        Ok(())
    }

    fn meeting_exp(&mut self, inst: &Instance) -> Result<()> {
        let seed = self.seed(TestKind::MeetingExp, &inst.label);
        let runs = coalescent_ensemble(&inst.kernel, Start::Partial { k: 2 }, 1, self.config.replicas, seed, self.config.parallelism)?;
        let sample: Vec<f64> = runs.iter().map(|r| r.get(1).unwrap() / inst.row.gamma).collect();
        let law = MixtureExpLaw::new(inst.kernel.pi_diag())?;
        let ks = ks_one_sample(&sample, |t| law.cdf(t))?;
        let tol = self.ks_tol(0.05);
        let details = json!({ "ks": ks, "delta": law.delta() });
        self.push(TestKind::MeetingExp, &inst.label, &[&inst.spec], ks.statistic, tol, ks.statistic <= tol, Some(seed), details);
        Ok(())
    }

    fn density_moment(&mut self, inst: &Instance) -> Result<()> {
        let summary = self.voter_summary(inst)?;
        let p = &self.config.params;
        let u = p.u;
        let times: Vec<f64> = summary.grid.iter().map(|s| s * inst.row.gamma).collect();
        let tail = match meeting_tail(&inst.kernel, PairLaw::Product, &times) {
            Ok(t) => Some(t),
            Err(Error::TooLarge(_)) => None,
            Err(e) => return Err(e),
        };
        let mut worst: f64 = 0.0;
        let mut points = Vec::new();
        for (g, &s) in summary.grid.iter().enumerate() {
            let p1 = summary.p1[g];
            let z_mart = (p1.mean - u).abs() / p1.se().max(f64::MIN_POSITIVE);
            let mut point = json!({ "s": s, "p1_mean": p1.mean, "p1_se": p1.se(), "z_martingale": z_mart });
            let mut z = if p1.se() == 0.0 && p1.mean == u { 0.0 } else { z_mart };
            if let Some(tail) = &tail {
                let exact = u * (1.0 - u) * tail[g];
                let m = summary.p1p0[g];
                let z_pair = z_score(m, exact);
                let comp_exact = u * (1.0 - u) * (1.0 - inst.kernel.pi_diag() - tail[g]);
                let q = summary.quad_var[g];
                let z_comp = z_score(q, comp_exact);
                point["p1p0_mean"] = json!(m.mean);
                point["p1p0_se"] = json!(m.se());
                point["p1p0_exact"] = json!(exact);
                point["z_p1p0"] = json!(z_pair);
                point["compensator_mean"] = json!(q.mean);
                point["compensator_exact"] = json!(comp_exact);
                point["z_compensator"] = json!(z_comp);
                z = z.max(z_pair).max(z_comp);
            }
            worst = worst.max(z);
            points.push(point);
        }
        let details = json!({ "points": points, "exact_tail": tail.is_some() });
        let seed = derive_seed(self.config.master_seed, &format!("voter/{}", inst.label));
        self.push(TestKind::DensityMoment, &inst.label, &[&inst.spec], worst, MEAN_SE_FACTOR, worst <= MEAN_SE_FACTOR, Some(seed), details);
        Ok(())
    }

    fn kingman(&mut self, inst: &Instance) -> Result<()> {
        let k = self.config.params.kingman_k;
        let seed = self.seed(TestKind::Kingman, &inst.label);
        let runs = coalescent_ensemble(&inst.kernel, Start::Partial { k }, 1, self.config.replicas, seed, self.config.parallelism)?;
        let gamma = inst.row.gamma;
        let full: Vec<f64> = runs.iter().map(|r| r.get(1).unwrap() / gamma).collect();
        let first: Vec<f64> = runs.iter().map(|r| r.get(k - 1).unwrap() / gamma).collect();
        let mut rng = stream(seed, "kingman_reference", 0);
        let ref_full = (0..self.config.replicas)
            .map(|_| kingman_sampler(KingmanSize::Finite(k), 1, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let ref_first = (0..self.config.replicas)
            .map(|_| kingman_sampler(KingmanSize::Finite(k), k - 1, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let ks_full = ks_two_sample(&full, &ref_full)?;
        let ks_first = ks_two_sample(&first, &ref_first)?;
        let tol = self.ks_tol(0.06);
        let stat = ks_full.statistic.max(ks_first.statistic);
        let details = json!({ "k": k, "ks_to_one": ks_full, "ks_first_merge": ks_first });
        self.push(TestKind::Kingman, &inst.label, &[&inst.spec], stat, tol, stat <= tol, Some(seed), details);
        Ok(())
    }

    fn full_coalescence(&mut self, inst: &Instance) -> Result<()> {
        let seed = self.seed(TestKind::FullCoalescence, &inst.label);
        let runs = coalescent_ensemble(&inst.kernel, Start::Full, 1, self.config.replicas, seed, self.config.parallelism)?;
        let sample: Vec<f64> = runs.iter().map(|r| r.get(1).unwrap() / inst.row.gamma).collect();
        let mut rng = stream(seed, "kingman_reference", 0);
        let reference = (0..self.config.replicas)
            .map(|_| kingman_sampler(KingmanSize::Infinite, 1, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let ks = ks_two_sample(&sample, &reference)?;
        let tol = self.ks_tol(0.06);
        let details = json!({ "ks": ks });
        self.push(TestKind::FullCoalescence, &inst.label, &[&inst.spec], ks.statistic, tol, ks.statistic <= tol, Some(seed), details);
        Ok(())
    }

    fn decorrelation(&mut self, inst: &Instance) -> Result<()> {
        let seed = self.seed(TestKind::Decorrelation, &inst.label);
        let configs = bound_configurations(inst.kernel.n(), seed);
        let mut worst = f64::INFINITY;
        let mut checks = Vec::new();
        for &(s, t) in &self.config.params.decorrelation_times {
            let c = decorrelation_check(&inst.kernel, s, t, &configs)?;
            worst = worst.min(c.min_margin_tv).min(c.min_margin_gap.unwrap_or(f64::INFINITY));
            checks.push(json!({
                "s": s, "t": t,
                "min_margin_tv": c.min_margin_tv,
                "min_margin_gap": c.min_margin_gap,
                "configurations": c.configurations,
            }));
        }
        let details = json!({ "checks": checks });
        self.push(TestKind::Decorrelation, &inst.label, &[&inst.spec], worst, -BOUND_TOL, worst >= -BOUND_TOL, Some(seed), details);
        Ok(())
    }

    fn cheeger(&mut self, inst: &Instance) -> Result<()> {
        let c = cheeger_check(&inst.kernel)?;
        let details = serde_json::to_value(&c).unwrap();
        self.push(TestKind::Cheeger, &inst.label, &[&inst.spec], c.gap - c.lower_bound, -BOUND_TOL, c.bound_ok, None, details);
        Ok(())
    }

    fn mean_field_trend(&mut self, name: &str, ladder: &[&Instance]) -> Result<()> {
        let mut values = Vec::new();
        let mut se = Vec::new();
        for inst in ladder {
            let s = self.voter_summary(inst)?;
            values.push(s.abs_residual.mean);
            se.push(s.abs_residual.se());
        }
        let trend = trend_check(&values, &se, Direction::Decreasing)?;
        let shrink = values[values.len() - 1] / values[0];
        let pass = trend.pass && shrink <= TREND_SHRINK;
        let specs: Vec<&ZooSpec> = ladder.iter().map(|i| &i.spec).collect();
        let labels: Vec<&str> = ladder.iter().map(|i| i.label.as_str()).collect();
        let details = json!({ "labels": labels, "trend": trend, "shrink": shrink });
        self.push(TestKind::MeanFieldTrend, name, &specs, shrink, TREND_SHRINK, pass, None, details);
        Ok(())
    }

    fn conditions(&mut self, name: &str, ladder: &[&Instance]) -> Result<()> {
        let reports: Vec<&ConditionReport> = ladder
            .iter()
            .map(|i| i.condition.as_ref().ok_or_else(|| Error::TooLarge("no condition report".into()).at(&i.label)))
            .collect::<Result<_>>()?;
        let ratio_se: Vec<f64> = ladder.iter().map(|i| i.row.ratio_mix.unwrap_or(0.0) * i.row.t_meet_se / i.row.t_meet).collect();
        let ratios: Vec<f64> = reports.iter().map(|r| r.ratio_mix).collect();
        let mix = trend_check(&ratios, &ratio_se, Direction::Decreasing)?;
        let gaps: Option<Vec<f64>> = reports.iter().map(|r| r.gap_times_tmeet).collect();
        let gap_trend = match gaps {
            Some(g) => {
                let se: Vec<f64> = ladder.iter().zip(&g).map(|(i, v)| v * i.row.t_meet_se / i.row.t_meet).collect();
                Some(trend_check(&g, &se, Direction::Increasing)?)
            }
            None => None,
        };
        let pass = mix.pass && gap_trend.as_ref().is_none_or(|t| t.pass);
        let specs: Vec<&ZooSpec> = ladder.iter().map(|i| &i.spec).collect();
        let labels: Vec<&str> = ladder.iter().map(|i| i.label.as_str()).collect();
        let last = ratios[ratios.len() - 1];
        let details = json!({ "labels": labels, "ratio_mix": mix, "gap_times_tmeet": gap_trend });
        self.push(TestKind::Conditions, name, &specs, last, ratios[0], pass, None, details);
        Ok(())
    }
}

fn z_score(m: Moments, exact: f64) -> f64 {
    let diff = (m.mean - exact).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / m.se().max(f64::MIN_POSITIVE)
    }
}

/// Runs every requested test; module errors are tagged with the instance
/// (or ladder) they came from.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let instances: Vec<Instance> = config
        .specs
        .iter()
        .map(|s| build_instance(s, config).map_err(|e| e.at(&s.label())))
        .collect::<Result<_>>()?;
    let mut ladders: Vec<(String, Vec<&Instance>)> = Vec::new();
    for inst in &instances {
        let f = family(&inst.spec);
        match ladders.iter_mut().find(|(name, _)| *name == f) {
            Some((_, l)) => l.push(inst),
            None => ladders.push((f, vec![inst])),
        }
    }
    let mut tests = config.tests.clone();
    tests.sort();
    tests.dedup();
    let mut runner = Runner {
        config,
        verdicts: Vec::new(),
        ensembles: BTreeMap::new(),
    };
    for &test in &tests {
        match test {
            TestKind::MeanFieldTrend | TestKind::Conditions => {
                for (name, ladder) in &ladders {
                    let r = if test == TestKind::MeanFieldTrend {
                        runner.mean_field_trend(name, ladder)
                    } else {
                        runner.conditions(name, ladder)
                    };
                    r.map_err(|e| e.at(name))?;
                }
            }
            _ => {
                for inst in &instances {
                    let r = match test {
                        TestKind::Identities => runner.identities(inst),
                        TestKind::MeetingExp => runner.meeting_exp(inst),
                        TestKind::DensityMoment => runner.density_moment(inst),
                        TestKind::Kingman => runner.kingman(inst),
                        TestKind::FullCoalescence => runner.full_coalescence(inst),
                        TestKind::Decorrelation => runner.decorrelation(inst),
                        TestKind::Cheeger => runner.cheeger(inst),
                        TestKind::MeanFieldTrend | TestKind::Conditions => unreachable!(),
                    };
                    r.map_err(|e| e.at(&inst.label))?;
                }
            }
        }
    }
    let config_json = serde_json::to_string(config).expect("config serializes");
    let verdicts = runner.verdicts;
    let report = Report {
        version: format!("voter-core {}", env!("CARGO_PKG_VERSION")),
        config_hash: hash_hex(&config_json),
        instances: instances.into_iter().map(|i| i.row).collect(),
        pass: verdicts.iter().all(|v| v.pass),
        verdicts,
    };
    if let Some(dir) = &config.output_dir {
        report.write(dir)?;
    }
    Ok(report)
}

/// Configurations behind the `verify` battery. `scale` multiplies replica
/// counts (1.0 is the full battery).
pub fn verification_battery(master_seed: u64, scale: f64) -> Vec<ExperimentConfig> {
    let reps = |n: usize| ((n as f64 * scale).round() as usize).max(30);
    let base = |specs: Vec<ZooSpec>, tests: Vec<TestKind>, replicas: usize| ExperimentConfig {
        specs,
        tests,
        gamma: GammaPolicy::Tmeet,
        replicas,
        master_seed,
        parallelism: 1,
        output_dir: None,
        params: TestParams::default(),
    };
    let moran = |ns: &[usize]| ns.iter().map(|&n| ZooSpec::Moran { n }).collect::<Vec<_>>();
    let tori = |ns: &[usize]| ns.iter().map(|&n| ZooSpec::TorusNn { n, d: 2 }).collect::<Vec<_>>();
    let cubes = |ds: &[usize]| ds.iter().map(|&dim| ZooSpec::Hypercube { dim }).collect::<Vec<_>>();
    let mut small = moran(&[3, 8, 30]);
    small.extend([
        ZooSpec::TorusNn { n: 3, d: 2 },
        ZooSpec::TorusNn { n: 5, d: 1 },
        ZooSpec::TorusRange { n: 10, m: 2, d: 1 },
        ZooSpec::Hypercube { dim: 4 },
        ZooSpec::TorusNn { n: 30, d: 2 },
    ]);
    let mut decorrelation = vec![ZooSpec::TorusNn { n: 3, d: 2 }];
    decorrelation.extend(moran(&[8]));
    let mut conditions = moran(&[30, 100, 300]);
    conditions.extend(cubes(&[6, 8, 10]));
    let mut trend = moran(&[30, 100, 300]);
    trend.extend(tori(&[10, 20, 40]));
    let mut density = moran(&[200]);
    density.extend(tori(&[20]));
    vec![
        base(small.clone(), vec![TestKind::Identities], 1),
        base(small[..7].to_vec(), vec![TestKind::Cheeger], 1),
        base(decorrelation, vec![TestKind::Decorrelation], 1),
        base(conditions, vec![TestKind::Conditions], 1),
        base(tori(&[25]), vec![TestKind::MeetingExp], reps(5000)),
        base(density, vec![TestKind::DensityMoment], reps(2000)),
        base(trend, vec![TestKind::MeanFieldTrend], reps(500)),
        base(tori(&[20]), vec![TestKind::Kingman], reps(3000)),
        base(moran(&[100]), vec![TestKind::FullCoalescence], reps(2000)),
    ]
}

/// Concatenates the reports of several configurations.
pub fn merge_reports(reports: Vec<Report>) -> Report {
    let mut instances = Vec::new();
    let mut verdicts = Vec::new();
    let mut hashes = String::new();
    for r in reports {
        hashes.push_str(&r.config_hash);
        for row in r.instances {
            if !instances.iter().any(|i: &InstanceRow| i.label == row.label && i.gamma == row.gamma) {
                instances.push(row);
            }
        }
        verdicts.extend(r.verdicts);
    }
    Report {
        version: format!("voter-core {}", env!("CARGO_PKG_VERSION")),
        config_hash: hash_hex(&hashes),
        instances,
        pass: verdicts.iter().all(|v| v.pass),
        verdicts,
    }
}
