use std::fs;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use markov_curv::curvature::{curvature_report, CurvatureOptions, KappaValue};
use markov_curv::flow::{
    beckner_check, decay_report, de_bruijn_residual, density_samples, heat_flow, mlsi_check, p_flow_identities,
    random_density, second_derivative_residual, uniform_grid, DecayReport, FdResidual, InequalityReport, MASS_TOL,
};
use markov_curv::tensor::{tensor_curvature_check, TensorReport};
use markov_curv::{Error, MarkovChain};

use crate::exit;
use crate::input::{self, load, load_str};
use crate::output::{curvature_csv, emit_json, to_json, with_ext, write_atomic};

/// JSON document printed for every failed run.
#[derive(Debug, Serialize)]
pub struct Diagnostic {
    pub status: &'static str,
    /// Error variant name, e.g. `NotReversible`, or `Usage`.
    pub kind: String,
    pub message: String,
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub diagnostic: Diagnostic,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: exit::USAGE, diagnostic: Diagnostic { status: "error", kind: "Usage".into(), message: message.into() } }
    }

    /// Chain construction failed on an invariant of the input.
    pub fn structural(e: Error) -> Self {
        Self::with_code(exit::STRUCTURAL, e)
    }

    /// Errors raised by an analysis after the chain was accepted.
    pub fn runtime(e: Error) -> Self {
        let code = match e {
            Error::PrerequisiteFailed(_) => exit::RESIDUAL,
            Error::InvalidSpec(_)
            | Error::NonPositiveRate { .. }
            | Error::NotIrreducible(_)
            | Error::NotReversible { .. }
            | Error::MeasureUnderflow(_) => exit::STRUCTURAL,
            _ => exit::USAGE,
        };
        Self::with_code(code, e)
    }

    fn with_code(code: u8, e: Error) -> Self {
        let debug = format!("{e:?}");
        let kind: String = debug.chars().take_while(|c| c.is_ascii_alphanumeric()).collect();
        Failure { code, diagnostic: Diagnostic { status: "error", kind, message: e.to_string() } }
    }
}

type Outcome = Result<u8, Failure>;

#[derive(Serialize)]
struct StateRow {
    vertex: String,
    pi: f64,
    degree: usize,
    m1: f64,
    m2: f64,
}

#[derive(Serialize)]
struct Validation {
    status: &'static str,
    chain_hash: String,
    states: usize,
    directed_edges: usize,
    irreducible: bool,
    reversible: bool,
    detailed_balance_residual: f64,
    table: Vec<StateRow>,
}

pub fn validate(input: &[String], out: Option<&str>) -> Outcome {
    let chain = match load(input) {
        Ok(c) => c,
        Err(f) => {
            if let Some(p) = out {
                write_atomic(&with_ext(p, "json"), &to_json(&f.diagnostic))?;
            }
            return Err(f);
        }
    };
    let table = (0..chain.n())
        .map(|x| StateRow {
            vertex: chain.label(x).to_string(),
            pi: chain.pi()[x],
            degree: chain.degree(x),
            m1: chain.m1(x),
            m2: chain.m2(x),
        })
        .collect();
    let v = Validation {
        status: "ok",
        chain_hash: chain.chain_hash(),
        states: chain.n(),
        directed_edges: chain.edge_count(),
        irreducible: true,
        reversible: true,
        detailed_balance_residual: chain.detailed_balance_residual(),
        table,
    };
    emit_json(&v, out)?;
    Ok(exit::OK)
}

pub fn curvature(input: &[String], opts: &CurvatureOptions, out: Option<&str>) -> Outcome {
    let chain = load(input)?;
    let report = curvature_report(&chain, None, opts).map_err(Failure::runtime)?;
    if let Some(p) = out {
        write_atomic(&with_ext(p, "csv"), &curvature_csv(&report))?;
    }
    emit_json(&report, out)?;
    Ok(if report.global.converged { exit::OK } else { exit::NONCONVERGENCE })
}

/// Estimated global Upsilon constant.
fn estimate_kappa(chain: &MarkovChain, opts: &CurvatureOptions) -> Result<KappaValue, Failure> {
    Ok(curvature_report(chain, None, opts).map_err(Failure::runtime)?.global.kappa_upsilon)
}

pub struct FlowArgs {
    pub rho0: Option<String>,
    pub t_end: f64,
    pub grid: Option<f64>,
    pub p: Option<f64>,
    pub kappa: Option<f64>,
    pub densities: bool,
    pub opts: CurvatureOptions,
}

fn initial_density(chain: &MarkovChain, spec: &str) -> Result<Vec<f64>, Failure> {
    if spec == "stationary" {
        return Ok(vec![1.0; chain.n()]);
    }
    if let Some(seed) = spec.strip_prefix("random:") {
        let seed: u64 = seed.parse().map_err(|_| Failure::usage(format!("bad seed in --rho0 {spec:?}")))?;
        return Ok(random_density(chain, &mut ChaCha8Rng::seed_from_u64(seed)));
    }
    let text = fs::read_to_string(spec).map_err(|e| Failure::usage(format!("cannot read --rho0 {spec}: {e}")))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("--rho0 {spec} is not a JSON array of numbers: {e}")))
}

#[derive(Serialize)]
struct FlowSummary {
    chain_hash: String,
    rho0: String,
    t_end: f64,
    step: f64,
    points: usize,
    p: Option<f64>,
    max_mass_error: f64,
    mass_within_tolerance: bool,
    entropy_monotone: bool,
    de_bruijn: FdResidual,
    second_derivative: FdResidual,
    p_de_bruijn: Option<FdResidual>,
    p_second_derivative: Option<FdResidual>,
    /// `supplied`, `estimated`, or `unbounded_below` (no decay check).
    kappa_source: &'static str,
    decay: Option<DecayReport>,
    all_pass: bool,
}

pub fn flow(input: &[String], a: &FlowArgs, out: Option<&str>) -> Outcome {
    let chain = load(input)?;
    let rho0_spec = a.rho0.clone().unwrap_or_else(|| format!("random:{}", a.opts.seed));
    let rho0 = initial_density(&chain, &rho0_spec)?;
    let step = a.grid.unwrap_or_else(|| 0.01f64.min(0.1 / chain.max_m1()));
    let times = uniform_grid(a.t_end, step).map_err(Failure::runtime)?;
    let trace = heat_flow(&chain, &rho0, &times, a.p).map_err(Failure::runtime)?;
    let de_bruijn = de_bruijn_residual(&trace).map_err(Failure::runtime)?;
    let second = second_derivative_residual(&trace).map_err(Failure::runtime)?;
    let (p_de_bruijn, p_second) = match a.p {
        Some(_) => {
            let (d, s) = p_flow_identities(&trace).map_err(Failure::runtime)?;
            (Some(d), Some(s))
        }
        None => (None, None),
    };
    let (kappa, kappa_source) = match a.kappa {
        Some(k) => (Some(k), "supplied"),
        None => match estimate_kappa(&chain, &a.opts)? {
            KappaValue::Finite(k) => (Some(k), "estimated"),
            KappaValue::MinusInfinity => (None, "unbounded_below"),
        },
    };
    let decay = kappa.map(|k| decay_report(&trace, k));
    let mass_ok = trace.max_mass_error <= MASS_TOL;
    let monotone = trace.entropy_monotone(1e-12);
    let all_pass = mass_ok
        && monotone
        && de_bruijn.within_bound
        && second.within_bound
        && p_de_bruijn.is_none_or(|r| r.within_bound)
        && p_second.is_none_or(|r| r.within_bound)
        && decay.as_ref().is_none_or(|d| d.holds);
    let summary = FlowSummary {
        chain_hash: chain.chain_hash(),
        rho0: rho0_spec,
        t_end: a.t_end,
        step,
        points: times.len(),
        p: a.p,
        max_mass_error: trace.max_mass_error,
        mass_within_tolerance: mass_ok,
        entropy_monotone: monotone,
        de_bruijn,
        second_derivative: second,
        p_de_bruijn,
        p_second_derivative: p_second,
        kappa_source,
        decay,
        all_pass,
    };
    if let Some(prefix) = out {
        write_atomic(&with_ext(prefix, "csv"), &trace.to_csv())?;
        if a.densities {
            write_atomic(&with_ext(prefix, "densities.json"), &to_json(&trace.densities))?;
        }
    }
    emit_json(&summary, out)?;
    Ok(if all_pass { exit::OK } else { exit::RESIDUAL })
}

#[derive(Serialize)]
struct InequalityOutput {
    chain_hash: String,
    inequality: &'static str,
    p: Option<f64>,
    alpha_source: &'static str,
    seed: u64,
    report: InequalityReport,
}

pub fn mlsi(input: &[String], kappa: Option<f64>, samples: usize, opts: &CurvatureOptions, out: Option<&str>) -> Outcome {
    let chain = load(input)?;
    let (alpha, alpha_source) = match kappa {
        Some(k) => (k, "supplied"),
        None => match estimate_kappa(&chain, opts)? {
            KappaValue::Finite(k) if k > 0.0 => (k, "estimated"),
            k => {
                return Err(Failure::usage(format!(
                    "estimated curvature {:?} is not positive; pass --kappa",
                    k.finite().unwrap_or(f64::NEG_INFINITY)
                )))
            }
        },
    };
    let rhos = density_samples(&chain, samples, &mut ChaCha8Rng::seed_from_u64(opts.seed));
    let report = mlsi_check(&chain, alpha, &rhos).map_err(Failure::runtime)?;
    let holds = report.holds;
    let o = InequalityOutput { chain_hash: chain.chain_hash(), inequality: "mlsi", p: None, alpha_source, seed: opts.seed, report };
    emit_json(&o, out)?;
    Ok(if holds { exit::OK } else { exit::RESIDUAL })
}

pub fn beckner(input: &[String], p: f64, alpha: f64, samples: usize, seed: u64, out: Option<&str>) -> Outcome {
    let chain = load(input)?;
    let rhos = density_samples(&chain, samples, &mut ChaCha8Rng::seed_from_u64(seed));
    let report = beckner_check(&chain, p, alpha, &rhos).map_err(Failure::runtime)?;
    let holds = report.holds;
    let o =
        InequalityOutput { chain_hash: chain.chain_hash(), inequality: "beckner", p: Some(p), alpha_source: "supplied", seed, report };
    emit_json(&o, out)?;
    Ok(if holds { exit::OK } else { exit::RESIDUAL })
}

#[derive(Serialize)]
struct TensorOutput {
    chain_hash_1: String,
    chain_hash_2: String,
    kappa_1: f64,
    kappa_2: f64,
    report: TensorReport,
}

fn factor_kappa(chain: &MarkovChain, given: Option<f64>, opts: &CurvatureOptions, which: &str) -> Result<f64, Failure> {
    match given {
        Some(k) => Ok(k),
        None => estimate_kappa(chain, opts)?
            .finite()
            .ok_or_else(|| Failure::usage(format!("{which} factor has no curvature lower bound"))),
    }
}

pub fn tensor(
    input: &[String],
    with: &str,
    kappa1: Option<f64>,
    kappa2: Option<f64>,
    fields: usize,
    opts: &CurvatureOptions,
    out: Option<&str>,
) -> Outcome {
    let c1 = load(input)?;
    let c2 = load_str(with)?;
    let k1 = factor_kappa(&c1, kappa1, opts, "first")?;
    let k2 = factor_kappa(&c2, kappa2, opts, "second")?;
    let report = tensor_curvature_check(&c1, k1, &c2, k2, None, fields, opts).map_err(Failure::runtime)?;
    let converged = report.outcomes.iter().all(|o| o.diagnostics.converged);
    let ok = report.all_hold && report.superadditivity_holds;
    let o = TensorOutput { chain_hash_1: c1.chain_hash(), chain_hash_2: c2.chain_hash(), kappa_1: k1, kappa_2: k2, report };
    emit_json(&o, out)?;
    Ok(if !ok {
        exit::RESIDUAL
    } else if !converged {
        exit::NONCONVERGENCE
    } else {
        exit::OK
    })
}

pub fn family(name: &str, params: &[String], out: Option<&str>) -> Outcome {
    let chain = input::build(name, params)?;
    let text = chain.to_spec().to_json() + "\n";
    if let Some(p) = out {
        write_atomic(&with_ext(p, "json"), &text)?;
    }
    print!("{text}");
    Ok(exit::OK)
}
