use std::path::{Path, PathBuf};

use anyhow::anyhow;
use dritc_core::data::{
    load_ipd, AggregateTarget, AggregateTargetFile, BalanceSpec, DataConfig, Dataset, Estimand,
};
use dritc_core::estimators::{Battery, EstimateResult, Method, MethodId, MethodResult};
use dritc_core::inference::{
    bootstrap_battery, delta_se_logodds, se_decomposition, BootstrapConfig, CiKind, IntervalResult,
};
use dritc_core::pseudo::{make_ad_dataset, simulate_profiles, CopulaSpec};
use dritc_core::simlab::{cached_truth, run_study, true_estimand, Dgm, StudyConfig, TruthRecord};
use dritc_core::weighting::{balance_report, entropy_balance, feasibility_check, BalanceReport};
use dritc_core::{Execution, Link};
use serde::Serialize;
use serde_json::json;

use crate::manifest::{write_json, write_text, RunManifest};
use crate::{
    BootstrapArgs, EstimateArgs, Failure, FeasibilityArgs, InputArgs, SimulateArgs, TruthArgs,
};

type Outcome = std::result::Result<(), Failure>;

const MIN_TRUTH_DRAWS: usize = 1_000_000;

const AD_CAVEATS: [&str; 2] = [
    "aggregate control moments are treated as fixed; intervals are conditional on them",
    "the standard error assumes independent trial and control mean outcomes",
];

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn stage(name: &'static str) -> impl Fn(dritc_core::Error) -> Failure {
    move |e| Failure::Stage(name, e.into())
}

fn output_failed(e: anyhow::Error) -> Failure {
    Failure::Stage("write-output", e)
}

/// Data, balance specification and optional aggregate target of one run.
struct Loaded {
    config: DataConfig,
    data: Dataset,
    target: Option<AggregateTarget>,
    manifest_inputs: Vec<(&'static str, PathBuf)>,
}

impl Loaded {
    fn balance(&self) -> BalanceSpec {
        self.config.balance()
    }

    fn labels(&self, spec: &BalanceSpec) -> Vec<String> {
        spec.labels(&self.config.covariates)
    }
}

fn load(data: &Path, config: &Path, ad_target: Option<&Path>) -> std::result::Result<Loaded, Failure> {
    let cfg = DataConfig::load(config).map_err(usage)?;
    let mut inputs = vec![("data", data.to_path_buf()), ("config", config.to_path_buf())];
    let target_file = match ad_target {
        Some(path) => {
            inputs.push(("ad_target", path.to_path_buf()));
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(anyhow!("cannot read {}: {e}", path.display())))?;
            let t: AggregateTargetFile = serde_json::from_str(&text).map_err(|e| {
                usage(anyhow!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column()))
            })?;
            Some(t)
        }
        None => cfg.ad_target.clone(),
    };
    let ad_mode = target_file.is_some();
    let sat = load_ipd(data, &cfg.column_map(), ad_mode).map_err(usage)?;
    let balance = cfg.balance();
    balance.check_width(sat.p()).map_err(usage)?;
    cfg.outcome().check_width(sat.p()).map_err(usage)?;
    let (data, target) = match target_file {
        None => (sat, None),
        Some(file) => {
            if sat.n0() > 0 {
                return Err(usage(anyhow!(
                    "aggregate-data mode expects trial rows only, found {} control rows",
                    sat.n0()
                )));
            }
            let target = file.resolve(&balance).map_err(usage)?;
            let profiles = simulate_profiles(&CopulaSpec::from_target(&target))
                .map_err(stage("pseudo-population"))?;
            let data = make_ad_dataset(&sat, &profiles, &target).map_err(usage)?;
            (data, Some(target))
        }
    };
    Ok(Loaded {
        config: cfg,
        data,
        target,
        manifest_inputs: inputs,
    })
}

/// Expands `--methods` and `--link` into method ids, in battery order when
/// no list is given.
fn resolve_methods(list: Option<&[String]>, link: Option<Link>) -> std::result::Result<Vec<MethodId>, Failure> {
    let links: Vec<Link> = match link {
        Some(l) => vec![l],
        None => vec![Link::Logit, Link::Cauchit],
    };
    let Some(list) = list else {
        return Ok(MethodId::battery()
            .into_iter()
            .filter(|id| id.link.is_none_or(|l| links.contains(&l)))
            .collect());
    };
    let mut ids = Vec::new();
    for raw in list.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        match raw.parse::<Method>() {
            Ok(m) if m.uses_outcome_model() => ids.extend(links.iter().map(|&l| MethodId::new(m, l))),
            Ok(m) => ids.push(MethodId::new(m, Link::Logit)),
            Err(_) => ids.push(raw.parse::<MethodId>().map_err(usage)?),
        }
    }
    if ids.is_empty() {
        return Err(usage(anyhow!("--methods is empty")));
    }
    ids.dedup();
    Ok(ids)
}

fn manifest_for(
    command: &'static str,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: &[(&'static str, PathBuf)],
) -> std::result::Result<RunManifest, Failure> {
    let mut m = RunManifest::new(command, seed, config);
    for (role, path) in inputs {
        m.add_input(role, path).map_err(usage)?;
    }
    Ok(m)
}

fn input_config(a: &InputArgs, loaded: &Loaded, methods: &[MethodId]) -> serde_json::Value {
    let balance = loaded.balance();
    let outcome = loaded.config.outcome();
    json!({
        "data": a.data,
        "config": a.config,
        "ad_target": a.ad_target,
        "methods": methods.iter().map(ToString::to_string).collect::<Vec<_>>(),
        "estimand": Estimand::from(a.estimand),
        "level": a.level,
        "balance_terms": loaded.labels(&balance),
        "outcome_terms": loaded.labels(&outcome),
    })
}

#[derive(Debug, Serialize)]
struct Sample {
    mode: &'static str,
    n1: usize,
    n0: usize,
    /// Pseudo-control profiles simulated in aggregate-data mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
}

fn sample(loaded: &Loaded) -> Sample {
    match &loaded.target {
        Some(t) => Sample {
            mode: "aggregate",
            n1: loaded.data.n1(),
            n0: t.control_n,
            m: Some(t.m),
        },
        None => Sample {
            mode: "ipd",
            n1: loaded.data.n1(),
            n0: loaded.data.n0(),
            m: None,
        },
    }
}

#[derive(Debug, Serialize)]
struct MethodRecord {
    id: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<EstimateResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    interval: Option<IntervalResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    interval_method: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl MethodRecord {
    fn failed(id: MethodId, e: &dritc_core::Error) -> Self {
        Self {
            id: id.to_string(),
            status: "error",
            estimate: None,
            interval: None,
            interval_method: None,
            error: Some(e.to_string()),
        }
    }
}

#[derive(Debug, Serialize)]
struct MethodsReport {
    estimand: Estimand,
    sample: Sample,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    caveats: Vec<&'static str>,
    methods: Vec<MethodRecord>,
}

/// Delta-method interval for the unadjusted contrast.
fn naive_interval(est: &EstimateResult, loaded: &Loaded, level: f64) -> dritc_core::Result<IntervalResult> {
    let (n1, n0) = (loaded.data.n1(), loaded.data.n0());
    let se1 = delta_se_logodds(est.mu_treated, n1)?;
    let se0 = match &loaded.target {
        Some(t) => t.se_g_mu0,
        None => delta_se_logodds(est.mu_control, n0)?,
    };
    Ok(IntervalResult::wald(est.point, se_decomposition(se1, se0), level))
}

fn methods_csv(records: &[MethodRecord]) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    let mut out = String::from("method,status,point,mu_treated,mu_control,ess,se,lower,upper,error\n");
    for r in records {
        let e = r.estimate.as_ref();
        let i = r.interval.as_ref();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.id,
            r.status,
            f(e.map(|e| e.point)),
            f(e.map(|e| e.mu_treated)),
            f(e.map(|e| e.mu_control)),
            f(e.and_then(|e| e.ess)),
            f(i.map(|i| i.se)),
            f(i.map(|i| i.lower)),
            f(i.map(|i| i.upper)),
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        ));
    }
    out
}

fn check_level(level: f64) -> Outcome {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(usage(anyhow!("--level must lie in (0, 1), got {level}")))
    }
}

fn battery_for(a: &InputArgs, loaded: &Loaded, methods: Vec<MethodId>) -> Battery {
    Battery::new(methods, a.estimand.into(), loaded.balance()).with_outcome_terms(loaded.config.outcome())
}

fn write_report(
    out: &crate::OutputArgs,
    manifest: &RunManifest,
    report: &MethodsReport,
) -> Outcome {
    write_json(out.out.as_ref(), manifest, report).map_err(output_failed)?;
    if let Some(csv) = &out.csv {
        write_text(Some(csv), &methods_csv(&report.methods)).map_err(output_failed)?;
    }
    Ok(())
}

/// Exit code 2 when every requested method failed.
fn all_failed(stage_name: &'static str, report: &MethodsReport) -> Outcome {
    if report.methods.iter().all(|m| m.status != "ok") {
        let first = report.methods.iter().find_map(|m| m.error.clone()).unwrap_or_default();
        return Err(Failure::Stage(stage_name, anyhow!("every method failed; first error: {first}")));
    }
    Ok(())
}

pub fn estimate(a: &EstimateArgs) -> Outcome {
    let input = &a.input;
    check_level(input.level)?;
    let methods = resolve_methods(input.methods.as_deref(), input.link.map(Into::into))?;
    let loaded = load(&input.data, &input.config, input.ad_target.as_deref())?;
    let manifest = manifest_for("estimate", None, input_config(input, &loaded, &methods), &loaded.manifest_inputs)?;
    let battery = battery_for(input, &loaded, methods);
    let results: Vec<MethodResult> = battery.run(&loaded.data, loaded.target.as_ref());
    let records = results
        .into_iter()
        .map(|r| match r.result {
            Ok(est) => {
                let interval = (r.id.method == Method::Naive)
                    .then(|| naive_interval(&est, &loaded, input.level).ok())
                    .flatten();
                MethodRecord {
                    id: r.id.to_string(),
                    status: "ok",
                    interval_method: interval.as_ref().map(|_| "delta"),
                    interval,
                    estimate: Some(est),
                    error: None,
                }
            }
            Err(e) => MethodRecord::failed(r.id, &e),
        })
        .collect();
    let report = MethodsReport {
        estimand: input.estimand.into(),
        sample: sample(&loaded),
        caveats: if loaded.target.is_some() { AD_CAVEATS.to_vec() } else { Vec::new() },
        methods: records,
    };
    write_report(&a.output, &manifest, &report)?;
    all_failed("estimate", &report)
}

pub fn bootstrap(a: &BootstrapArgs) -> Outcome {
    let input = &a.input;
    check_level(input.level)?;
    let config = BootstrapConfig {
        b: a.b,
        seed: a.seed,
        strata: a.strata.into(),
        ci: a.ci.into(),
        level: input.level,
    };
    config.validate().map_err(usage)?;
    let methods = resolve_methods(input.methods.as_deref(), input.link.map(Into::into))?;
    let loaded = load(&input.data, &input.config, input.ad_target.as_deref())?;
    if loaded.target.is_some() && config.ci == CiKind::Percentile {
        return Err(usage(anyhow!(
            "percentile intervals are not available in aggregate-data mode; use --ci wald"
        )));
    }
    let mut resolved = input_config(input, &loaded, &methods);
    resolved["bootstrap"] = serde_json::to_value(&config).expect("serializable");
    let manifest = manifest_for("bootstrap", Some(a.seed), resolved, &loaded.manifest_inputs)?;
    let battery = battery_for(input, &loaded, methods);
    let intervals = bootstrap_battery(
        &loaded.data,
        &battery,
        loaded.target.as_ref(),
        &config,
        Execution::Parallel,
    )
    .map_err(stage("bootstrap"))?;
    let records = intervals
        .into_iter()
        .map(|m| match (m.estimate, m.interval) {
            (Ok(est), Ok(ci)) => MethodRecord {
                id: m.id.to_string(),
                status: "ok",
                estimate: Some(est),
                interval: Some(ci),
                interval_method: Some(match config.ci {
                    CiKind::Wald => "bootstrap_wald",
                    CiKind::Percentile => "bootstrap_percentile",
                }),
                error: None,
            },
            (Ok(est), Err(e)) => MethodRecord {
                estimate: Some(est),
                ..MethodRecord::failed(m.id, &e)
            },
            (Err(e), _) => MethodRecord::failed(m.id, &e),
        })
        .collect();
    let report = MethodsReport {
        estimand: input.estimand.into(),
        sample: sample(&loaded),
        caveats: if loaded.target.is_some() { AD_CAVEATS.to_vec() } else { Vec::new() },
        methods: records,
    };
    write_report(&a.output, &manifest, &report)?;
    all_failed("bootstrap", &report)
}

pub fn simulate(a: &SimulateArgs) -> Outcome {
    if a.reps == 0 {
        return Err(usage(anyhow!("--reps must be at least 1")));
    }
    if a.b == 1 {
        return Err(usage(anyhow!("--B must be 0 (no intervals) or at least 2")));
    }
    let methods = resolve_methods(a.methods.as_deref(), None)?;
    let mut config = StudyConfig::new(a.scenario.into(), a.n, a.reps, a.b, a.seed);
    config.null_effect = a.null_effect;
    config.methods = methods;
    let dgm = config.dgm();
    let truth_source = match (a.truth, &a.truth_cache) {
        (Some(_), _) => "supplied",
        (None, _) if a.draws < MIN_TRUTH_DRAWS => {
            return Err(usage(anyhow!("--draws must be at least {MIN_TRUTH_DRAWS}")))
        }
        (None, _) => "monte_carlo",
    };
    let resolved = json!({
        "study": config,
        "draws": a.draws,
        "truth_source": truth_source,
    });
    let manifest = manifest_for("simulate", Some(a.seed), resolved, &[])?;
    let truth = match (a.truth, &a.truth_cache) {
        (Some(t), _) => t,
        (None, Some(dir)) => cached_truth(dir, &dgm, a.draws, a.seed, Execution::Parallel).map_err(stage("truth"))?,
        (None, None) => true_estimand(&dgm, a.draws, a.seed, Execution::Parallel).map_err(stage("truth"))?,
    };
    let report = run_study(&config, truth, Execution::Parallel).map_err(stage("simulate"))?;
    write_json(a.output.out.as_ref(), &manifest, &report).map_err(output_failed)?;
    if let Some(csv) = &a.output.csv {
        write_text(Some(csv), &report.to_csv()).map_err(output_failed)?;
    }
    Ok(())
}

pub fn truth(a: &TruthArgs) -> Outcome {
    if a.draws < MIN_TRUTH_DRAWS {
        return Err(usage(anyhow!("--draws must be at least {MIN_TRUTH_DRAWS}")));
    }
    let dgm = Dgm {
        scenario: a.scenario.into(),
        null_effect: a.null_effect,
    };
    let resolved = json!({ "scenario": dgm.scenario, "null_effect": dgm.null_effect, "draws": a.draws });
    let manifest = manifest_for("truth", Some(a.seed), resolved, &[])?;
    let value = true_estimand(&dgm, a.draws, a.seed, Execution::Parallel).map_err(stage("truth"))?;
    let record = TruthRecord {
        scenario: dgm.scenario,
        null_effect: dgm.null_effect,
        draws: a.draws,
        seed: a.seed,
        truth: value,
    };
    write_json(a.out.as_ref(), &manifest, &record).map_err(output_failed)
}

#[derive(Debug, Serialize)]
struct FeasibilityReport {
    sample: Sample,
    feasible: bool,
    /// Phase-1 objective on standardized columns; zero when feasible.
    infeasibility: f64,
    /// Entropy-balancing diagnostics, when a solution exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    ess: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    balance: Option<BalanceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn check_feasibility(a: &FeasibilityArgs) -> Outcome {
    let loaded = load(&a.data, &a.config, a.ad_target.as_deref())?;
    let spec = loaded.balance();
    let labels = loaded.labels(&spec);
    let resolved = json!({
        "data": a.data,
        "config": a.config,
        "ad_target": a.ad_target,
        "balance_terms": labels,
    });
    let manifest = manifest_for("check-feasibility", None, resolved, &loaded.manifest_inputs)?;
    let data = &loaded.data;
    if data.n0() == 0 {
        return Err(usage(anyhow!("no control rows and no aggregate target")));
    }
    let target = match &loaded.target {
        Some(t) => t.moments.clone(),
        None => spec.matrix(data, data.group(0)).column_means(),
    };
    let c = spec.matrix(data, data.group(1));
    let f = feasibility_check(&c, &target).map_err(stage("feasibility"))?;
    let mut report = FeasibilityReport {
        sample: sample(&loaded),
        feasible: f.feasible,
        infeasibility: f.infeasibility,
        ess: None,
        max_gap: None,
        balance: None,
        error: None,
    };
    match entropy_balance(&c, &target) {
        Ok(w) => {
            let b = balance_report(&w.weights, &c, &target, &labels).map_err(stage("feasibility"))?;
            report.ess = Some(w.ess);
            report.max_gap = Some(b.max_gap);
            report.balance = Some(b);
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    write_json(a.out.as_ref(), &manifest, &report).map_err(output_failed)
}
