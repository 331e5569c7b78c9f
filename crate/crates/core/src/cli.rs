//! The `osc` experiment runner. Every subcommand produces named artifacts
//! (CSV for tables, JSON for structured results); with `--out DIR` they are
//! written next to a manifest holding the parameters and SHA-256 checksums.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::construction_blocks::{
    assemble_martingale, build_schedule, building_block, holder_check, special_registry, witness_coverage,
};
use crate::divdiff::{divided_difference, sigma_stats, theta_martingale_gap, theta_profile, QuadConfig};
use crate::dyadic::{max_depth, DyadicInterval, DyadicRational};
use crate::entropy_dim::{
    besicovitch_count, covering_content, dim_estimate, entropy_phi, lemma32_bound, maximal_members, verify_mass_lower_bound,
    MassReport,
};
use crate::error::{DepthCap, DomainError, Error, Result};
use crate::holder_functions::{
    holder_seminorm_estimate, random_dyadic, wavelet_oscillator, wavelet_schedule, witness_scales, Affine,
    HolderFunction, PairSampler, Weierstrass,
};
use crate::martingale::{
    beta_star_norm, binary_digit_martingale, check_cancellation, dump_csv, from_function, star_norm, FnMartingale,
    Martingale, RandomSigns,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_DEPTH: i32 = 4;
pub const EXIT_VERIFY: i32 = 5;

#[derive(Parser, Debug)]
#[command(name = "osc", version, about = "Dyadic martingale and Hölder oscillation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Directory for artifacts and the manifest; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Entropy function Phi(eta), or Phi(gamma (1 - 2^-beta)).
    Phi(PhiArgs),
    /// Product bound prod (1 + eta x_k)/2 >= 2^(-N Phi(eta)).
    Lemma32(Lemma32Args),
    /// Mass-distribution lower bound on level sets.
    MassMeasure(MassArgs),
    /// Exact level-set counts of the binary digit martingale.
    Besicovitch(BesicovitchArgs),
    /// log2(count)/N from given counts.
    DimEstimate(DimArgs),
    /// Truncated Weierstrass series.
    Weierstrass(WeierstrassArgs),
    /// Dyadic martingale S_n(I) = 2^n (f(b) - f(a)) of a function.
    MartingaleExtract(ExtractArgs),
    /// One building block and its checks.
    Block(BlockArgs),
    /// Placement schedule of the block martingale.
    Schedule(ScheduleArgs),
    /// Finite-stage certificates for the block counterexample.
    Counterexample(CounterexampleArgs),
    /// Superlacunary wavelet schedule and witness scales.
    Wavelet(WaveletArgs),
    /// Accumulated divided difference Theta_eps.
    Theta(ThetaArgs),
    /// Haar measures of threshold events over scales.
    SigmaStats(SigmaArgs),
    /// Gap between Theta_eps and its martingale.
    Gap(GapArgs),
    /// Quick run of the invariant suite.
    VerifyAll(VerifyArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Phi(_) => "phi",
            Command::Lemma32(_) => "lemma32",
            Command::MassMeasure(_) => "mass-measure",
            Command::Besicovitch(_) => "besicovitch",
            Command::DimEstimate(_) => "dim-estimate",
            Command::Weierstrass(_) => "weierstrass",
            Command::MartingaleExtract(_) => "martingale-extract",
            Command::Block(_) => "block",
            Command::Schedule(_) => "schedule",
            Command::Counterexample(_) => "counterexample",
            Command::Wavelet(_) => "wavelet",
            Command::Theta(_) => "theta",
            Command::SigmaStats(_) => "sigma-stats",
            Command::Gap(_) => "gap",
            Command::VerifyAll(_) => "verify-all",
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Command::Lemma32(a) => a.seed,
            Command::MassMeasure(a) => a.seed,
            Command::Counterexample(a) => Some(a.seed),
            Command::Wavelet(a) => a.seed,
            Command::SigmaStats(a) => Some(a.seed),
            Command::Gap(a) => Some(a.seed),
            Command::VerifyAll(a) => Some(a.seed),
            _ => None,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct PhiArgs {
    #[arg(long, required_unless_present = "gamma", allow_hyphen_values = true)]
    pub eta: Option<f64>,
    /// Growth-set level; the bound for growth martingales uses `gamma (1 - 2^-beta)`.
    #[arg(long, conflicts_with = "eta", requires = "beta", allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct Lemma32Args {
    #[arg(long)]
    pub eta: f64,
    /// One instance, comma separated; random instances otherwise.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub xs: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Largest N for random instances.
    #[arg(long, default_value_t = 50)]
    pub max_n: usize,
    #[arg(long, required_unless_present = "xs")]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MartingaleKind {
    Binary,
    Block,
    Random,
}

#[derive(Args, Debug, Serialize)]
pub struct MassArgs {
    #[arg(long)]
    pub eta: f64,
    #[arg(long, default_value_t = 16)]
    pub depth: u32,
    #[arg(long, value_enum, default_value_t = MartingaleKind::Binary)]
    pub martingale: MartingaleKind,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, required_if_eq("martingale", "random"))]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
pub struct BesicovitchArgs {
    #[arg(long)]
    pub eta: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [20u64, 100, 500, 2000])]
    pub levels: Vec<u64>,
}

#[derive(Args, Debug, Serialize)]
pub struct DimArgs {
    /// Pairs `N:count`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub counts: Vec<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct WeierstrassArgs {
    #[arg(long, default_value_t = 2.0)]
    pub b: f64,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x: Option<Vec<f64>>,
    /// Evaluate on `grid + 1` equally spaced points of `[0, 2 pi]`.
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Steps for divided differences at each `x`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub h: Option<Vec<f64>>,
    /// Sampled pairs for a Hölder seminorm estimate (needs --seed).
    #[arg(long, default_value_t = 0)]
    pub pairs: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionKind {
    Weierstrass,
    Identity,
    Zero,
}

#[derive(Args, Debug, Serialize)]
pub struct FunctionArgs {
    #[arg(long, value_enum, default_value_t = FunctionKind::Weierstrass)]
    pub function: FunctionKind,
    #[arg(long, default_value_t = 2.0)]
    pub b: f64,
    #[arg(long)]
    pub alpha: f64,
    /// Truncation tolerance of the Weierstrass series.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
}

enum Function {
    W(Weierstrass),
    A(Affine),
}

impl FunctionArgs {
    fn build(&self) -> Result<Function> {
        crate::error::check_exponent("alpha", self.alpha)?;
        Ok(match self.function {
            FunctionKind::Weierstrass => Function::W(Weierstrass::new(self.b, self.alpha, self.tol)?),
            FunctionKind::Identity => Function::A(Affine::new(0.0, 1.0, self.alpha)),
            FunctionKind::Zero => Function::A(Affine::new(0.0, 0.0, self.alpha)),
        })
    }
}

#[derive(Args, Debug, Serialize)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub function: FunctionArgs,
    #[arg(long, default_value_t = 8)]
    pub depth: u32,
}

#[derive(Args, Debug, Serialize)]
pub struct BlockArgs {
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 0)]
    pub level: u32,
    #[arg(long, default_value_t = 0)]
    pub index: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 2)]
    pub stages: usize,
    /// Depth cap for placements.
    #[arg(long, default_value_t = 4000)]
    pub depth: u32,
}

#[derive(Args, Debug, Serialize)]
pub struct CounterexampleArgs {
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, default_value_t = 2)]
    pub stages: usize,
    #[arg(long, default_value_t = 4000)]
    pub depth: u32,
    #[arg(long, default_value_t = 1000)]
    pub points: usize,
    #[arg(long, default_value_t = 100_000)]
    pub pairs: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct WaveletArgs {
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0 / 200.0)]
    pub eps: f64,
    #[arg(long, default_value_t = 4)]
    pub stages: usize,
    /// Witness scales at this many random points (needs --seed).
    #[arg(long, default_value_t = 0)]
    pub points: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
pub struct ThetaArgs {
    #[command(flatten)]
    pub function: FunctionArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [1e-3])]
    pub eps: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [0.0])]
    pub x: Vec<f64>,
    #[arg(long, default_value_t = 32)]
    pub panels: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct SigmaArgs {
    #[command(flatten)]
    pub function: FunctionArgs,
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [1.0])]
    pub x: Vec<f64>,
    /// Threshold `delta`; the lower event uses `-c`.
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub c: f64,
    #[arg(long, default_value_t = 4096)]
    pub samples: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct GapArgs {
    #[command(flatten)]
    pub function: FunctionArgs,
    #[arg(long, default_value_t = 14)]
    pub depth: u32,
    #[arg(long, default_value_t = 64)]
    pub points: usize,
    /// First level of the trend test.
    #[arg(long, default_value_t = 6)]
    pub from: u32,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 12)]
    pub depth: u32,
    #[arg(long)]
    pub seed: u64,
}

/// One named output.
pub struct Artifact {
    pub name: String,
    pub content: String,
}

fn artifact(name: impl Into<String>, content: String) -> Artifact {
    Artifact { name: name.into(), content }
}

fn json_artifact(name: &str, v: &impl Serialize) -> Result<Artifact> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::Verification(format!("serialization: {e}")))?;
    Ok(artifact(name, s + "\n"))
}

/// Result of a subcommand: artifacts plus an optional failed check, which
/// still lets the artifacts be written before exiting with status 5.
struct Outcome {
    artifacts: Vec<Artifact>,
    failure: Option<String>,
}

impl Outcome {
    fn ok(artifacts: Vec<Artifact>) -> Self {
        Self { artifacts, failure: None }
    }

    fn check(artifacts: Vec<Artifact>, ok: bool, what: impl Into<String>) -> Self {
        Self { artifacts, failure: (!ok).then(|| what.into()) }
    }
}

/// Twelve significant digits.
fn significant(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (11 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}

fn table(format: Format, name: &str, header: &[&str], rows: &[Vec<String>], comments: &[String]) -> Artifact {
    match format {
        Format::Csv => {
            let mut s = String::new();
            for c in comments {
                let _ = writeln!(s, "# {c}");
            }
            let _ = writeln!(s, "{}", header.join(","));
            for r in rows {
                let _ = writeln!(s, "{}", r.join(","));
            }
            artifact(format!("{name}.csv"), s)
        }
        Format::Json => {
            let recs: Vec<Value> = rows
                .iter()
                .map(|r| {
                    let m: serde_json::Map<String, Value> = header
                        .iter()
                        .zip(r)
                        .map(|(h, v)| {
                            let val = v.parse::<f64>().ok().filter(|f| f.is_finite()).map(Value::from).unwrap_or(Value::from(v.clone()));
                            (h.to_string(), val)
                        })
                        .collect();
                    Value::Object(m)
                })
                .collect();
            let doc = json!({ "comments": comments, "rows": recs });
            artifact(format!("{name}.json"), serde_json::to_string_pretty(&doc).unwrap_or_default() + "\n")
        }
    }
}

fn phi(a: &PhiArgs, format: Format) -> Result<Outcome> {
    let eta = match (a.eta, a.gamma, a.beta) {
        (Some(e), _, _) => e,
        (None, Some(g), Some(b)) => {
            crate::error::check_exponent("beta", b)?;
            g * (1.0 - (-b).exp2())
        }
        _ => return Err(DomainError::new("phi needs --eta, or --gamma with --beta").into()),
    };
    let v = entropy_phi(eta)?;
    Ok(Outcome::ok(vec![match format {
        Format::Csv => artifact("phi.txt", significant(v) + "\n"),
        Format::Json => json_artifact("phi.json", &json!({ "eta": eta, "phi": v }))?,
    }]))
}

fn lemma32(a: &Lemma32Args, format: Format) -> Result<Outcome> {
    let header = ["trial", "n", "sum", "hypothesis", "product_log2", "bound_log2", "margin_log2", "holds"];
    let row = |t: usize, xs: &[f64]| -> Result<(Vec<String>, bool)> {
        let r = lemma32_bound(xs, a.eta)?;
        let sum: f64 = xs.iter().sum();
        let holds = r.holds.map(|h| h.to_string()).unwrap_or_else(|| "n/a".into());
        let row = vec![
            t.to_string(),
            r.n.to_string(),
            sum.to_string(),
            r.hypothesis.to_string(),
            r.product_log2.to_string(),
            r.bound_log2.to_string(),
            r.margin_log2().to_string(),
            holds,
        ];
        Ok((row, r.holds != Some(false)))
    };
    let mut rows = Vec::new();
    let mut all = true;
    if let Some(xs) = &a.xs {
        let (r, ok) = row(0, xs)?;
        rows.push(r);
        all &= ok;
    } else {
        if a.max_n == 0 {
            return Err(DomainError::new("--max-n must be positive").into());
        }
        crate::error::check_exponent("eta", a.eta)?;
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed.expect("clap requires a seed"));
        for t in 0..a.trials {
            let xs = feasible_instance(&mut rng, a.eta, a.max_n);
            let (r, ok) = row(t, &xs)?;
            rows.push(r);
            all &= ok;
        }
    }
    let comments = a.seed.map(|s| vec![format!("seed={s}")]).unwrap_or_default();
    Ok(Outcome::check(vec![table(format, "lemma32", &header, &rows, &comments)], all, "product bound violated"))
}

/// Random `x in [-1,1]^N` with `sum x >= eta N`: uniform entries pulled
/// toward 1 just enough to meet the constraint.
pub fn feasible_instance(rng: &mut impl Rng, eta: f64, max_n: usize) -> Vec<f64> {
    let n = rng.gen_range(1..=max_n);
    let mut xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if mean < eta {
        let t = ((eta - mean) / (1.0 - mean) * (1.0 + 1e-12) + 1e-15).min(1.0);
        for x in &mut xs {
            *x = (*x + t * (1.0 - *x)).min(1.0);
        }
    }
    xs
}

fn mass(a: &MassArgs) -> Result<Outcome> {
    if a.depth > max_depth().min(24) {
        return Err(DepthCap { requested: a.depth, cap: max_depth().min(24) }.into());
    }
    fn one<M: Martingale>(m: M, eta: f64, depth: u32) -> Result<(MassReport, f64, usize)> {
        let members: Vec<DyadicInterval> = (1..=depth)
            .flat_map(DyadicInterval::level_iter)
            .filter(|i| m.value(i) >= eta * i.level() as f64)
            .collect();
        let phi = entropy_phi(eta)?;
        let content = covering_content(&members, phi, 1.0);
        let maximal = maximal_members(&members, 1.0).len();
        Ok((verify_mass_lower_bound(m, eta, depth)?, content, maximal))
    }
    let (report, content, maximal) = match a.martingale {
        MartingaleKind::Binary => one(binary_digit_martingale(), a.eta, a.depth)?,
        MartingaleKind::Random => one(RandomSigns { seed: a.seed.expect("clap requires a seed") }, a.eta, a.depth)?,
        MartingaleKind::Block => one(normalized_block(a.beta, a.depth)?, a.eta, a.depth)?,
    };
    // disjoint members each carry mass >= |I|^Phi, so their content is at most 1
    let ok = report.failures == 0 && report.total_mass_is_one && report.violation.is_none() && content <= 1.0 + 1e-9;
    let doc = json!({ "report": report, "covering_content": content, "maximal_members": maximal });
    Ok(Outcome::check(vec![json_artifact("mass_measure.json", &doc)?], ok, "mass lower bound failed"))
}

/// The block martingale divided by its largest increment to `depth`, so
/// its increments are bounded by 1.
pub fn normalized_block(beta: f64, depth: u32) -> Result<FnMartingale<impl Fn(&DyadicInterval) -> f64 + Sync>> {
    let s = build_schedule(beta, 1, 4000)?;
    let m = assemble_martingale(&s);
    let c = star_norm(&m, depth).max(1.0);
    Ok(FnMartingale::new(move |i: &DyadicInterval| m.value(i) / c))
}

fn besicovitch(a: &BesicovitchArgs, format: Format) -> Result<Outcome> {
    let phi = entropy_phi(a.eta)?;
    let mut rows = Vec::new();
    for &n in &a.levels {
        let c = besicovitch_count(n, a.eta)?;
        let e = dim_estimate(&[(n, c.clone())])[0];
        rows.push(vec![n.to_string(), c.to_string(), e.to_string(), phi.to_string(), (phi - e).to_string()]);
    }
    Ok(Outcome::ok(vec![table(format, "besicovitch", &["N", "count", "estimate", "phi", "gap"], &rows, &[])]))
}

fn dim(a: &DimArgs, format: Format) -> Result<Outcome> {
    let mut counts = Vec::new();
    for p in &a.counts {
        let (n, c) = p.split_once(':').ok_or_else(|| DomainError::new(format!("expected N:count, got {p}")))?;
        let n: u64 = n.trim().parse().map_err(|_| DomainError::new(format!("bad N in {p}")))?;
        let c: BigUint = c.trim().parse().map_err(|_| DomainError::new(format!("bad count in {p}")))?;
        if n == 0 {
            return Err(DomainError::new("N must be positive").into());
        }
        counts.push((n, c));
    }
    let est = dim_estimate(&counts);
    let rows: Vec<Vec<String>> = counts.iter().zip(est).map(|((n, c), e)| vec![n.to_string(), c.to_string(), e.to_string()]).collect();
    Ok(Outcome::ok(vec![table(format, "dim_estimate", &["N", "count", "estimate"], &rows, &[])]))
}

fn weierstrass_cmd(a: &WeierstrassArgs, format: Format) -> Result<Outcome> {
    let w = Weierstrass::new(a.b, a.alpha, a.tol)?;
    let xs: Vec<f64> = match &a.x {
        Some(v) => v.clone(),
        None => (0..=a.grid).map(|i| 2.0 * std::f64::consts::PI * i as f64 / a.grid.max(1) as f64).collect(),
    };
    let rows: Vec<Vec<String>> = xs
        .iter()
        .map(|x| vec![x.to_string(), w.value(*x).to_string(), (w.tail_bound() + w.rounding_bound(*x)).to_string()])
        .collect();
    let comments = vec![format!("terms={}", w.terms + 1)];
    let mut out = vec![table(format, "weierstrass", &["x", "value", "tol"], &rows, &comments)];
    if let Some(hs) = &a.h {
        let mut rows = Vec::new();
        for x in &xs {
            let xd = DyadicRational::from_f64(*x).ok_or_else(|| DomainError::new("x must be finite"))?;
            for h in hs {
                let hd = DyadicRational::from_f64(*h).ok_or_else(|| DomainError::new("h must be finite"))?;
                let q = divided_difference(&w, a.alpha, &xd, &hd)?;
                rows.push(vec![x.to_string(), h.to_string(), q.to_string()]);
            }
        }
        out.push(table(format, "quotients", &["x", "h", "quotient"], &rows, &[]));
    }
    if a.pairs > 0 {
        let seed = a.seed.ok_or_else(|| DomainError::new("--pairs needs --seed"))?;
        let est = holder_seminorm_estimate(&w, &PairSampler::new(a.pairs, 1e-6, 1.0, seed));
        out.push(json_artifact("seminorm.json", &est)?);
    }
    Ok(Outcome::ok(out))
}

fn extract(a: &ExtractArgs) -> Result<Outcome> {
    let cap = max_depth().min(20);
    if a.depth > cap {
        return Err(DepthCap { requested: a.depth, cap }.into());
    }
    fn extract_one<F: HolderFunction>(f: F, depth: u32, alpha: f64) -> Result<(Vec<u8>, Value)> {
        let s = from_function(f, depth);
        let mut buf = Vec::new();
        dump_csv(&s, depth, &mut buf)?;
        let c = check_cancellation(&s, depth);
        let summary = json!({
            "depth": depth,
            "cancellation": { "max_violation": c.max_violation, "exact": c.exact, "checked": c.checked },
            "star_norm": star_norm(&s, depth),
            "growth_norm": beta_star_norm(&s, 1.0 - alpha, depth),
        });
        Ok((buf, summary))
    }
    let (buf, summary) = match a.function.build()? {
        Function::W(w) => extract_one(w, a.depth, a.function.alpha)?,
        Function::A(f) => extract_one(f, a.depth, a.function.alpha)?,
    };
    Ok(Outcome::ok(vec![
        artifact("martingale.csv", String::from_utf8_lossy(&buf).into_owned()),
        json_artifact("martingale_summary.json", &summary)?,
    ]))
}

fn block(a: &BlockArgs) -> Result<Outcome> {
    let cap = max_depth();
    if a.level > cap {
        return Err(DepthCap { requested: a.level, cap }.into());
    }
    if a.level < 64 && a.index >= 1u64 << a.level {
        return Err(DomainError::new(format!("index {} outside level {}", a.index, a.level)).into());
    }
    let b = building_block(a.delta, DyadicInterval::new(a.level, a.index), a.beta)?;
    let zero = num_traits::Zero::is_zero(&b.integral_coefficient());
    let doc = json!({
        "delta": b.delta,
        "beta": b.beta,
        "level": a.level,
        "index": a.index,
        "m": b.m,
        "amplitude": b.amplitude(),
        "checks": b.checks,
        "integral_is_zero": zero,
    });
    Ok(Outcome::check(vec![json_artifact("block.json", &doc)?], b.checks.ok && zero, "block checks failed"))
}

fn schedule(a: &ScheduleArgs) -> Result<Outcome> {
    let s = build_schedule(a.beta, a.stages, a.depth)?;
    let check = s.verify();
    let doc = json!({ "schedule": s, "check": check, "final_level": s.final_level() });
    Ok(Outcome::check(vec![json_artifact("schedule.json", &doc)?], check.ok(), "schedule re-verification failed"))
}

fn counterexample(a: &CounterexampleArgs, format: Format) -> Result<Outcome> {
    let s = build_schedule(a.beta, a.stages, a.depth)?;
    let check = s.verify();
    let growth = assemble_martingale(&s).growth_report();
    let mut registries = Vec::new();
    let mut rows = Vec::new();
    for st in s.stages.iter().filter(|st| st.complete) {
        let r = special_registry(&s, st.j)?;
        for e in &r.enumerated {
            rows.push(vec![
                st.j.to_string(),
                e.level.to_string(),
                e.index.to_string(),
                if e.left { "left" } else { "special" }.to_string(),
                e.normalized.to_string(),
            ]);
        }
        registries.push(json!({
            "stage": r.stage,
            "m": r.m,
            "n_j": r.n_j,
            "missed_special": crate::construction_blocks::to_f64(&r.missed_special),
            "missed_left": crate::construction_blocks::to_f64(&r.missed_left),
            "left_bound": r.left_bound,
            "min_normalized": r.min_normalized.iter().cloned().fold(f64::INFINITY, f64::min),
            "ok": r.ok,
        }));
    }
    let holder = holder_check(&s, a.pairs, a.seed)?;
    let stages: Vec<usize> = (0..s.completed_stages().min(2)).collect();
    let cov = witness_coverage(&s, a.points, a.seed ^ 0x5eed, &stages, 0.05 - 1e-3)?;
    let reg_ok = registries.iter().all(|r| r["ok"] == json!(true));
    let ok = check.ok() && growth.ok && reg_ok && holder.ok && cov.any_fraction >= 0.99;
    let summary = json!({
        "beta": a.beta,
        "final_level": s.final_level(),
        "completed_stages": s.completed_stages(),
        "truncated": s.truncated,
        "schedule_check": check,
        "growth": growth,
        "registries": registries,
        "holder": holder,
        "witness": {
            "points": cov.points,
            "stages": cov.stages,
            "threshold": cov.threshold,
            "left_fraction": cov.left_fraction,
            "any_fraction": cov.any_fraction,
        },
    });
    let registry = table(format, "registry", &["stage", "level", "index", "kind", "normalized"], &rows, &[]);
    Ok(Outcome::check(
        vec![json_artifact("counterexample.json", &summary)?, registry],
        ok,
        "counterexample certificate failed",
    ))
}

fn wavelet(a: &WaveletArgs, format: Format) -> Result<Outcome> {
    let sched = wavelet_schedule(a.alpha, a.eps, a.stages)?;
    let phi = crate::holder_functions::BaseWavelet::standard();
    let moments: Vec<f64> = (0..=2).map(|q| phi.moment_by_quadrature(q)).collect();
    let clauses = sched.stages.iter().all(|st| st.clause_one <= a.eps && st.clause_two <= a.eps);
    let mut out = vec![json_artifact(
        "wavelet.json",
        &json!({ "schedule": sched, "moments": moments, "clauses_hold": clauses }),
    )?];
    let mut ok = clauses && moments.iter().all(|m| m.abs() < 1e-10);
    if a.points > 0 {
        let seed = a.seed.ok_or_else(|| DomainError::new("--points needs --seed"))?;
        let f = wavelet_oscillator(sched);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for p in 0..a.points {
            let x = random_dyadic(&mut rng, 64 + 4 * f.level(f.stages()));
            for m in 1..f.stages() {
                let w = witness_scales(&f, &x, m)?;
                ok &= w.slope_h_prime <= 1.0 + 1e-3 && w.slope_h >= 0.4 * w.scale;
                rows.push(vec![
                    p.to_string(),
                    x.to_f64().to_string(),
                    m.to_string(),
                    format!("{:?}", w.case),
                    w.h.to_f64().to_string(),
                    w.h_prime.to_f64().to_string(),
                    w.slope_h.to_string(),
                    w.holder_h.to_string(),
                    w.slope_h_prime.to_string(),
                    w.scale.to_string(),
                ]);
            }
        }
        let header = ["point", "x", "stage", "case", "h", "h_prime", "slope_h", "holder_h", "slope_h_prime", "scale"];
        out.push(table(format, "witness", &header, &rows, &[format!("seed={seed}")]));
    }
    Ok(Outcome::check(out, ok, "wavelet checks failed"))
}

fn theta_cmd(a: &ThetaArgs, format: Format) -> Result<Outcome> {
    let quad = QuadConfig { panels_per_octave: a.panels, ..QuadConfig::default() };
    let f = a.function.build()?;
    let mut rows = Vec::new();
    for &x in &a.x {
        let xd = DyadicRational::from_f64(x).ok_or_else(|| DomainError::new("x must be finite"))?;
        let vals = match &f {
            Function::W(w) => theta_profile(w, a.function.alpha, &xd, &a.eps, &quad)?,
            Function::A(g) => theta_profile(g, a.function.alpha, &xd, &a.eps, &quad)?,
        };
        for (e, v) in a.eps.iter().zip(vals) {
            rows.push(vec![x.to_string(), e.to_string(), v.value.to_string(), v.error.to_string(), v.converged.to_string()]);
        }
    }
    Ok(Outcome::ok(vec![table(format, "theta", &["x", "eps", "theta", "err", "converged"], &rows, &[])]))
}

fn sigma_cmd(a: &SigmaArgs, format: Format) -> Result<Outcome> {
    let f = a.function.build()?;
    let mut rows = Vec::new();
    for (i, &x) in a.x.iter().enumerate() {
        let xd = DyadicRational::from_f64(x).ok_or_else(|| DomainError::new("x must be finite"))?;
        // an independent stream per point
        let seed = a.seed.wrapping_add(i as u64);
        let th = [(a.delta, a.c)];
        let st = match &f {
            Function::W(w) => sigma_stats(w, a.function.alpha, &xd, a.eps, &th, a.samples, seed)?,
            Function::A(g) => sigma_stats(g, a.function.alpha, &xd, a.eps, &th, a.samples, seed)?,
        };
        for e in &st.events {
            for (label, m, se) in [
                (format!("above:{}", e.delta), e.above, e.stderr_above),
                (format!("middle:[{};{}]", -e.c, e.delta), e.middle, e.stderr_middle),
                (format!("below:{}", -e.c), e.below, e.stderr_below),
            ] {
                rows.push(vec![x.to_string(), a.eps.to_string(), label, m.to_string(), se.to_string()]);
            }
        }
    }
    let comments = vec![format!("seed={} samples={} total={}", a.seed, a.samples, (1.0 / a.eps).ln())];
    Ok(Outcome::ok(vec![table(format, "sigma_stats", &["x", "eps", "threshold", "sigma_measure", "stderr"], &rows, &comments)]))
}

fn gap_cmd(a: &GapArgs, format: Format) -> Result<Outcome> {
    let f = a.function.build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let xs: Vec<DyadicRational> = (0..a.points).map(|_| random_dyadic(&mut rng, 60)).collect();
    let quad = QuadConfig { max_panels_per_octave: 128, ..QuadConfig::default() };
    let g = match &f {
        Function::W(w) => theta_martingale_gap(w, a.function.alpha, a.depth, &xs, &quad)?,
        Function::A(l) => theta_martingale_gap(l, a.function.alpha, a.depth, &xs, &quad)?,
    };
    let rows: Vec<Vec<String>> =
        g.levels.iter().zip(&g.mean).map(|((n, s), (_, m))| vec![n.to_string(), s.to_string(), m.to_string()]).collect();
    let from = a.from.min(a.depth.saturating_sub(2)).max(1);
    let summary = json!({
        "sup": g.sup,
        "quad_error": g.quad_error,
        "trend_sup": g.trend(from, a.depth),
        "trend_mean": g.mean_trend(from, a.depth),
    });
    Ok(Outcome::ok(vec![
        table(format, "gap", &["n", "sup_gap", "mean_gap"], &rows, &[format!("seed={}", a.seed)]),
        json_artifact("gap_summary.json", &summary)?,
    ]))
}

fn verify_all(a: &VerifyArgs, format: Format) -> Result<Outcome> {
    let results = crate::cli::suite(a.depth, a.seed)?;
    let ok = results.iter().all(|r| r.1);
    let rows: Vec<Vec<String>> =
        results.iter().map(|(n, p, d)| vec![n.clone(), if *p { "pass" } else { "fail" }.into(), d.replace(',', ";")]).collect();
    Ok(Outcome::check(vec![table(format, "verify_all", &["check", "status", "detail"], &rows, &[format!("seed={}", a.seed)])], ok, "invariant suite failed"))
}

/// `(name, passed, detail)` for a fast pass over the main invariants.
pub fn suite(depth: u32, seed: u64) -> Result<Vec<(String, bool, String)>> {
    use crate::martingale::{check_cancellation, discount_transform, sharpness_martingale, summation_by_parts_check, RandomGrowth};
    let mut out = Vec::new();
    let mut push = |name: &str, ok: bool, detail: String| out.push((name.to_string(), ok, detail));
    let d = depth.clamp(4, 16);

    let p = entropy_phi(0.5)?;
    push("phi", (p - (2.0 - 0.75 * 3f64.log2())).abs() < 1e-12 && entropy_phi(0.0)? == 1.0, format!("phi(1/2)={p}"));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..1000 {
        let xs = feasible_instance(&mut rng, 0.5, 50);
        if lemma32_bound(&xs, 0.5)?.holds == Some(false) {
            bad += 1;
        }
    }
    push("lemma32", bad == 0, format!("{bad} violations in 1000"));

    let r = verify_mass_lower_bound(binary_digit_martingale(), 0.5, d)?;
    push("mass-measure", r.failures == 0 && r.total_mass_is_one, format!("members={} margin={}", r.members, r.worst_margin));

    let n = d.min(16) as u64;
    let brute = (0u64..1 << n).filter(|i| 2.0 * i.count_ones() as f64 - n as f64 >= 0.5 * n as f64).count();
    push("besicovitch", besicovitch_count(n, 0.5)? == BigUint::from(brute), format!("N={n} count={brute}"));

    let s = build_schedule(0.5, 2, 4000)?;
    let m = assemble_martingale(&s);
    let canc = check_cancellation(&m, d.min(12));
    let g = m.growth_report();
    let reg = special_registry(&s, 0)?;
    push("block-martingale", s.verify().ok() && canc.max_violation == 0.0 && g.ok && reg.ok, format!("final level {}", s.final_level()));

    let phi_w = crate::holder_functions::BaseWavelet::standard();
    let mom = (0..=2).map(|q| phi_w.moment_by_quadrature(q).abs()).fold(0.0, f64::max);
    let ws = wavelet_schedule(0.5, 1.0 / 200.0, 4)?;
    let cl = ws.stages.iter().all(|st| st.clause_one <= ws.epsilon && st.clause_two <= ws.epsilon);
    push("wavelet", mom < 1e-10 && cl, format!("k={:?} moment={mom:e}", ws.k));

    let t = RandomGrowth { seed, beta: 0.5, scale: 1.0 };
    let sbp = summation_by_parts_check(&t, 0.5, d.min(12));
    let sharp = sharpness_martingale(0.5)?;
    let back = discount_transform(sharp);
    let round = DyadicInterval::level_iter(d.min(10)).all(|i| back.exact(&i) == binary_digit_martingale().exact(&i));
    push("round-trips", sbp <= 1e-10 && round, format!("summation-by-parts residual {sbp:e}"));

    let id = Affine::new(0.0, 1.0, 0.5);
    let th = theta_profile(&id, 0.5, &DyadicRational::zero(), &[1e-3], &QuadConfig::default())?[0];
    let want = (1.0 - 1e-3f64.sqrt()) / 0.5;
    push("theta", (th.value - want).abs() < 1e-8, format!("theta={} want={want}", th.value));
    Ok(out)
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    let f = cli.format;
    match &cli.command {
        Command::Phi(a) => phi(a, f),
        Command::Lemma32(a) => lemma32(a, f),
        Command::MassMeasure(a) => mass(a),
        Command::Besicovitch(a) => besicovitch(a, f),
        Command::DimEstimate(a) => dim(a, f),
        Command::Weierstrass(a) => weierstrass_cmd(a, f),
        Command::MartingaleExtract(a) => extract(a),
        Command::Block(a) => block(a),
        Command::Schedule(a) => schedule(a),
        Command::Counterexample(a) => counterexample(a, f),
        Command::Wavelet(a) => wavelet(a, f),
        Command::Theta(a) => theta_cmd(a, f),
        Command::SigmaStats(a) => sigma_cmd(a, f),
        Command::Gap(a) => gap_cmd(a, f),
        Command::VerifyAll(a) => verify_all(a, f),
    }
}

fn sha256_hex(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

/// The manifest written next to the artifacts. It holds no timestamps, so
/// equal parameters give equal manifests.
pub fn manifest(cli: &Cli, artifacts: &[Artifact]) -> Value {
    let outputs: Vec<Value> = artifacts.iter().map(|a| json!({ "file": a.name, "sha256": sha256_hex(&a.content) })).collect();
    json!({
        "subcommand": cli.command.name(),
        "parameters": cli.command,
        "format": cli.format,
        "seed": cli.command.seed(),
        "depth_cap": max_depth(),
        "version": env!("CARGO_PKG_VERSION"),
        "outputs": outputs,
    })
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Domain(_) => EXIT_DOMAIN,
        Error::Depth(_) => EXIT_DEPTH,
        Error::Verification(_) => EXIT_VERIFY,
        Error::Io(_) => EXIT_IO,
    }
}

fn emit(cli: &Cli, outcome: &Outcome) -> std::io::Result<()> {
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            for a in &outcome.artifacts {
                std::fs::write(dir.join(&a.name), &a.content)?;
            }
            let m = serde_json::to_string_pretty(&manifest(cli, &outcome.artifacts)).unwrap_or_default();
            std::fs::write(dir.join("manifest.json"), m + "\n")
        }
        None => {
            let many = outcome.artifacts.len() > 1;
            for a in &outcome.artifacts {
                if many {
                    println!("== {}", a.name);
                }
                print!("{}", a.content);
            }
            Ok(())
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(outcome) => {
            if let Err(e) = emit(&cli, &outcome) {
                eprintln!("error: {e}");
                return EXIT_IO;
            }
            match outcome.failure {
                Some(what) => {
                    eprintln!("verification failed: {what}");
                    EXIT_VERIFY
                }
                None => EXIT_OK,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
