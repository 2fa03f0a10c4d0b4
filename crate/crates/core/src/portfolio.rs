//! Portfolio ingestion, premium prediction with the credibility cap, hold-out
//! validation and synthetic portfolios.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crm::{final_state, premium_weights, simulate, CrmParams, PeriodRates};
use crate::error::{Error, Result};
use crate::fit::Benchmark;
use crate::history::{Observation, Period, PolicyHistory};

pub const INTERCEPT: &str = "intercept";
/// Cap on the combined credibility multiplier.
pub const MULTIPLIER_CAP: f64 = 2.5;

const ID: &str = "policy_id";
const YEAR: &str = "year";
const COUNT: &str = "claim_count";
const TOTAL: &str = "total_loss";

/// Maps input columns to the design and names the hold-out year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub covariates: Vec<String>,
    #[serde(default = "yes")]
    pub intercept: bool,
    #[serde(default)]
    pub holdout_year: Option<i32>,
}

fn yes() -> bool {
    true
}

impl SchemaConfig {
    pub fn design_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.covariates.len() + 1);
        if self.intercept {
            names.push(INTERCEPT.to_string());
        }
        names.extend(self.covariates.iter().cloned());
        names
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::fs::File::open(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub design_names: Vec<String>,
    pub policies: Vec<PolicyHistory>,
}

impl Portfolio {
    /// Policies restricted to periods before `year`.
    pub fn before(&self, year: Option<i32>) -> Portfolio {
        let Some(y) = year else { return self.clone() };
        Portfolio {
            design_names: self.design_names.clone(),
            policies: self
                .policies
                .iter()
                .map(|h| PolicyHistory { policy_id: h.policy_id.clone(), periods: h.until(y).to_vec() })
                .filter(|h| !h.periods.is_empty())
                .collect(),
        }
    }

    pub fn periods(&self) -> impl Iterator<Item = &Period> {
        self.policies.iter().flat_map(|h| &h.periods)
    }

    pub fn last_year(&self) -> Option<i32> {
        self.periods().map(|p| p.year).max()
    }
}

pub fn ingest(path: &Path, schema: &SchemaConfig) -> Result<Portfolio> {
    ingest_reader(std::fs::File::open(path)?, schema)
}

/// Read a long-format CSV (one row per policy and year). All row-level
/// problems are collected and reported together with their line numbers.
pub fn ingest_reader<R: Read>(reader: R, schema: &SchemaConfig) -> Result<Portfolio> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut missing = Vec::new();
    let mut need = |name: &str| {
        col(name).unwrap_or_else(|| {
            missing.push(format!("missing column {name:?}"));
            0
        })
    };
    let (i_id, i_year, i_count, i_total) = (need(ID), need(YEAR), need(COUNT), need(TOTAL));
    let i_cov: Vec<usize> = schema.covariates.iter().map(|c| need(c)).collect();
    if !missing.is_empty() {
        return Err(Error::Data(missing));
    }

    let mut errors = Vec::new();
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, Vec<(Period, u64)>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let mut bad = |msg: String| errors.push(format!("line {line}: {msg}"));
        let id = field(i_id).to_string();
        if id.is_empty() {
            bad("empty policy_id".into());
            continue;
        }
        let Ok(year) = field(i_year).parse::<i32>() else {
            bad(format!("malformed year {:?}", field(i_year)));
            continue;
        };
        let Ok(count) = field(i_count).parse::<u64>() else {
            bad(format!("malformed claim_count {:?}", field(i_count)));
            continue;
        };
        let total = match field(i_total).parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ => {
                bad(format!("malformed total_loss {:?}", field(i_total)));
                continue;
            }
        };
        let mut x = Vec::with_capacity(i_cov.len() + 1);
        if schema.intercept {
            x.push(1.0);
        }
        let mut ok = true;
        for (name, &i) in schema.covariates.iter().zip(&i_cov) {
            match field(i).parse::<f64>() {
                Ok(v) if v.is_finite() => x.push(v),
                _ if field(i).is_empty() => {
                    bad(format!("missing covariate {name}"));
                    ok = false;
                }
                _ => {
                    bad(format!("malformed covariate {name} {:?}", field(i)));
                    ok = false;
                }
            }
        }
        if !ok {
            continue;
        }
        let obs = Observation { count, total };
        if let Err(e) = obs.validate() {
            bad(e.to_string());
            continue;
        }
        if !by_id.contains_key(&id) {
            order.push(id.clone());
        }
        by_id.entry(id).or_default().push((Period { year, covariates: x, obs }, line));
    }

    let mut policies = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = by_id.remove(&id).expect("id recorded on first sight");
        if rows.windows(2).any(|w| w[0].0.year > w[1].0.year) {
            log::warn!("policy {id}: years not in increasing order; sorting");
            rows.sort_by_key(|r| r.0.year);
        }
        for w in rows.windows(2) {
            if w[0].0.year == w[1].0.year {
                errors.push(format!(
                    "line {}: duplicate year {} for policy {id} (first seen on line {})",
                    w[1].1, w[1].0.year, w[0].1
                ));
            }
        }
        policies.push(PolicyHistory { policy_id: id, periods: rows.into_iter().map(|r| r.0).collect() });
    }
    if !errors.is_empty() {
        return Err(Error::Data(errors));
    }
    Ok(Portfolio { design_names: schema.design_names(), policies })
}

/// Write a portfolio in the ingestion format; the intercept column is implied.
pub fn write_portfolio_csv<W: Write>(portfolio: &Portfolio, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let skip = usize::from(portfolio.design_names.first().is_some_and(|n| n == INTERCEPT));
    let mut header = vec![ID.to_string(), YEAR.to_string()];
    header.extend(portfolio.design_names[skip..].iter().cloned());
    header.extend([COUNT.to_string(), TOTAL.to_string()]);
    out.write_record(&header)?;
    for h in &portfolio.policies {
        for p in &h.periods {
            let mut rec = vec![h.policy_id.clone(), p.year.to_string()];
            rec.extend(p.covariates[skip..].iter().map(|v| v.to_string()));
            rec.push(p.obs.count.to_string());
            rec.push(p.obs.total.to_string());
            out.write_record(&rec)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `lambda1 * lambda2*`: expected loss without random effects or dependence.
pub fn naive_premium(rates: &PeriodRates) -> f64 {
    rates.lambda1 * rates.lambda2_star
}

/// `lambda1 * lambda2* * exp(lambda1 (e^eta - 1) + eta)`: expected compound
/// loss of a Poisson count with count-dependent gamma severities.
pub fn dglm_premium(rates: &PeriodRates, eta: f64) -> f64 {
    rates.lambda1 * rates.lambda2_star * (rates.lambda1 * (eta.exp() - 1.0) + eta).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PremiumRow {
    pub policy_id: String,
    pub year: i32,
    /// Expected claim count.
    pub freq_mean: f64,
    /// Expected aggregate loss before capping.
    pub sev_mean: f64,
    pub multiplier_uncapped: f64,
    pub multiplier: f64,
    pub premium: f64,
}

/// Covariates for `year`: that year's row if present, else the latest row before it.
fn target_covariates(h: &PolicyHistory, year: i32) -> Option<&[f64]> {
    h.period(year)
        .or_else(|| h.until(year).last())
        .map(|p| p.covariates.as_slice())
}

pub fn predict_policy(h: &PolicyHistory, params: &CrmParams, benchmark: Benchmark, year: i32) -> Result<PremiumRow> {
    let x = target_covariates(h, year)
        .ok_or_else(|| Error::data(format!("policy {} has no covariates for year {year}", h.policy_id)))?;
    let rates = params.rates(x)?;
    let row = |freq_mean, sev_mean, uncapped: f64, premium| PremiumRow {
        policy_id: h.policy_id.clone(),
        year,
        freq_mean,
        sev_mean,
        multiplier_uncapped: uncapped,
        multiplier: uncapped.min(MULTIPLIER_CAP),
        premium,
    };
    Ok(match benchmark {
        Benchmark::Naive => {
            let p = naive_premium(&rates);
            row(rates.lambda1, p, 1.0, p)
        }
        Benchmark::Dglm => {
            let p = dglm_premium(&rates, params.eta);
            row(rates.lambda1, p, 1.0, p)
        }
        Benchmark::Static | Benchmark::Proposed => {
            let history = params.rated(h.until(year))?;
            let prem = final_state(params, &history)?.premium(params, &rates).inspect_err(|e| {
                log::error!("policy {}: {e}", h.policy_id);
            })?;
            let m = prem.multiplier();
            let scale = if m > MULTIPLIER_CAP { MULTIPLIER_CAP / m } else { 1.0 };
            row(prem.freq_mean, prem.sev_mean, m, prem.sev_mean * scale)
        }
    })
}

/// Premiums for `year` given every earlier period, one row per policy.
pub fn predict_portfolio(portfolio: &Portfolio, params: &CrmParams, benchmark: Benchmark, year: i32) -> Result<Vec<PremiumRow>> {
    params.validate()?;
    portfolio
        .policies
        .par_iter()
        .filter(|h| target_covariates(h, year).is_some())
        .map(|h| predict_policy(h, params, benchmark, year))
        .collect()
}

pub fn write_premiums_csv<W: Write>(rows: &[PremiumRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_premiums_csv<R: Read>(r: R) -> Result<Vec<PremiumRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub rmse: f64,
    pub mae: f64,
    pub predicted_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub year: i32,
    pub n: usize,
    pub actual_mean: f64,
    pub models: Vec<ModelMetrics>,
}

/// Out-of-sample errors of one or more premium sets against the losses of `year`.
/// Policies are matched by id; sums run in id order.
pub fn validate(portfolio: &Portfolio, premiums: &[(String, Vec<PremiumRow>)], year: i32) -> Result<ValidationReport> {
    let mut actual: Vec<(&str, f64)> = portfolio
        .policies
        .iter()
        .filter_map(|h| h.period(year).map(|p| (h.policy_id.as_str(), p.obs.total)))
        .collect();
    actual.sort_by(|a, b| a.0.cmp(b.0));
    if actual.is_empty() {
        return Err(Error::data(format!("no observations in hold-out year {year}")));
    }
    let mut models = Vec::with_capacity(premiums.len());
    for (name, rows) in premiums {
        let pred: HashMap<&str, f64> = rows
            .iter()
            .filter(|r| r.year == year)
            .map(|r| (r.policy_id.as_str(), r.premium))
            .collect();
        let (mut se, mut ae, mut sp) = (0.0, 0.0, 0.0);
        for (id, a) in &actual {
            let p = *pred
                .get(id)
                .ok_or_else(|| Error::data(format!("model {name}: no premium for policy {id} in {year}")))?;
            se += (a - p).powi(2);
            ae += (a - p).abs();
            sp += p;
        }
        let n = actual.len() as f64;
        models.push(ModelMetrics { model: name.clone(), rmse: (se / n).sqrt(), mae: ae / n, predicted_mean: sp / n });
    }
    Ok(ValidationReport {
        year,
        n: actual.len(),
        actual_mean: actual.iter().map(|a| a.1).sum::<f64>() / actual.len() as f64,
        models,
    })
}

/// One credibility weight in long format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub policy_id: String,
    pub target_year: i32,
    /// `freq` or `sev`.
    pub component: String,
    /// Year the weight applies to; empty for the prior term.
    pub year: Option<i32>,
    pub weight: f64,
}

pub fn weights_table(portfolio: &Portfolio, params: &CrmParams, year: i32) -> Result<Vec<WeightRow>> {
    params.validate()?;
    let per: Vec<Vec<WeightRow>> = portfolio
        .policies
        .par_iter()
        .map(|h| {
            let hist = h.until(year);
            let w = premium_weights(params, &params.rated(hist)?)?;
            let mut rows = Vec::with_capacity(2 * (hist.len() + 1));
            for (name, cw) in [("freq", &w.freq), ("sev", &w.sev)] {
                let row = |y, weight| WeightRow {
                    policy_id: h.policy_id.clone(),
                    target_year: year,
                    component: name.to_string(),
                    year: y,
                    weight,
                };
                rows.push(row(None, cw.intercept));
                rows.extend(hist.iter().zip(&cw.data).map(|(p, &v)| row(Some(p.year), v)));
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

pub fn write_weights_csv<W: Write>(rows: &[WeightRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub policies: usize,
    pub first_year: i32,
    pub years: usize,
    /// Standard deviation of the non-intercept covariates.
    pub covariate_sd: f64,
}

/// Synthetic portfolio drawn from the model. Each policy has its own ChaCha
/// stream, so the output does not depend on the thread count.
pub fn simulate_portfolio(params: &CrmParams, spec: &SimulationSpec, seed: u64) -> Result<Portfolio> {
    params.validate()?;
    if params.covariate_names.len() != params.zeta1.len() {
        return Err(Error::domain("simulation needs covariate names for every coefficient"));
    }
    let normal = Normal::new(0.0, spec.covariate_sd).map_err(|e| Error::domain(e.to_string()))?;
    let policies = (0..spec.policies)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let x: Vec<f64> = params
                .covariate_names
                .iter()
                .map(|n| if n == INTERCEPT { 1.0 } else { normal.sample(&mut rng) })
                .collect();
            let path = simulate(params, &vec![x.clone(); spec.years], &mut rng)?;
            Ok(PolicyHistory {
                policy_id: format!("P{:06}", i + 1),
                periods: path
                    .iter()
                    .enumerate()
                    .map(|(t, s)| Period { year: spec.first_year + t as i32, covariates: x.clone(), obs: s.obs })
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Portfolio { design_names: params.covariate_names.clone(), policies })
}

/// Schema matching a simulated portfolio, holding out its last year.
pub fn simulation_schema(params: &CrmParams, spec: &SimulationSpec) -> SchemaConfig {
    let intercept = params.covariate_names.first().is_some_and(|n| n == INTERCEPT);
    SchemaConfig {
        covariates: params.covariate_names[usize::from(intercept)..].to_vec(),
        intercept,
        holdout_year: Some(spec.first_year + spec.years as i32 - 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crm::tests::table_params;
    use crate::crm::Variant;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn schema() -> SchemaConfig {
        SchemaConfig { covariates: vec!["x".into()], intercept: true, holdout_year: None }
    }

    #[test]
    fn two_rows_make_one_policy() {
        let csv = "policy_id,year,x,claim_count,total_loss\nA,2010,0.5,0,0\nA,2011,0.5,2,300.5\n";
        let p = ingest_reader(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(p.policies.len(), 1);
        assert_eq!(p.policies[0].periods.len(), 2);
        assert_eq!(p.policies[0].periods[1].covariates, vec![1.0, 0.5]);
        assert_eq!(p.design_names, vec!["intercept", "x"]);
    }

    #[test]
    fn two_part_violation_names_the_line() {
        let csv = "policy_id,year,x,claim_count,total_loss\nA,2010,0.5,0,0\nA,2011,0.5,0,100\n";
        match ingest_reader(csv.as_bytes(), &schema()) {
            Err(Error::Data(e)) => assert!(e[0].starts_with("line 3:"), "{e:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unsorted_years_are_sorted_and_duplicates_rejected() {
        let csv = "policy_id,year,x,claim_count,total_loss\nA,2011,0,0,0\nA,2010,0,1,5\n";
        let p = ingest_reader(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(p.policies[0].periods[0].year, 2010);
        let dup = "policy_id,year,x,claim_count,total_loss\nA,2011,0,0,0\nA,2011,0,1,5\n";
        assert!(matches!(ingest_reader(dup.as_bytes(), &schema()), Err(Error::Data(_))));
    }

    #[test]
    fn missing_covariate_is_fatal() {
        let csv = "policy_id,year,x,claim_count,total_loss\nA,2011,,0,0\n";
        assert!(matches!(ingest_reader(csv.as_bytes(), &schema()), Err(Error::Data(_))));
        let no_col = "policy_id,year,claim_count,total_loss\nA,2011,0,0\n";
        assert!(matches!(ingest_reader(no_col.as_bytes(), &schema()), Err(Error::Data(_))));
    }

    fn single(periods: Vec<Period>) -> Portfolio {
        Portfolio {
            design_names: vec!["intercept".into()],
            policies: vec![PolicyHistory { policy_id: "A".into(), periods }],
        }
    }

    #[test]
    fn fresh_policy_pays_the_prior_mean() {
        let params = table_params(0.8, Variant::Plain);
        let pf = single(vec![Period { year: 5, covariates: vec![1.0], obs: Observation::no_claim() }]);
        let rows = predict_portfolio(&pf, &params, Benchmark::Proposed, 5).unwrap();
        assert_relative_eq!(rows[0].multiplier, 1.0);
        assert_relative_eq!(rows[0].premium, 0.2 * 15000.0, max_relative = 1e-12);
    }

    #[test]
    fn multiplier_is_capped() {
        let mut params = table_params(0.5, Variant::Plain);
        params.alpha0_1 = 0.5;
        params.beta0_1 = 0.5;
        let claims = (1..=3)
            .map(|y| Period { year: y, covariates: vec![1.0], obs: Observation::new(3, 200_000.0).unwrap() })
            .collect();
        let rows = predict_portfolio(&single(claims), &params, Benchmark::Proposed, 4).unwrap();
        let r = &rows[0];
        assert!(r.multiplier_uncapped > MULTIPLIER_CAP);
        assert_eq!(r.multiplier, MULTIPLIER_CAP);
        assert!(r.premium < r.sev_mean);
        assert_relative_eq!(r.premium, r.sev_mean * MULTIPLIER_CAP / r.multiplier_uncapped, max_relative = 1e-15);
    }

    #[test]
    fn dglm_equals_naive_without_dependence() {
        let r = PeriodRates::new(0.37, 1234.5).unwrap();
        assert_eq!(dglm_premium(&r, 0.0), naive_premium(&r));
        assert!(dglm_premium(&r, -0.4) < naive_premium(&r));
    }

    #[test]
    fn validation_metrics() {
        let pf = single(vec![Period { year: 3, covariates: vec![1.0], obs: Observation::new(1, 100.0).unwrap() }]);
        let row = |p: f64| PremiumRow {
            policy_id: "A".into(),
            year: 3,
            freq_mean: 0.0,
            sev_mean: p,
            multiplier_uncapped: 1.0,
            multiplier: 1.0,
            premium: p,
        };
        let rep = validate(&pf, &[("zero".into(), vec![row(0.0)]), ("exact".into(), vec![row(100.0)])], 3).unwrap();
        assert_eq!((rep.models[0].rmse, rep.models[0].mae), (100.0, 100.0));
        assert_eq!((rep.models[1].rmse, rep.models[1].mae), (0.0, 0.0));
        assert!(validate(&pf, &[], 9).is_err());
    }

    #[test]
    fn simulated_portfolio_round_trips_through_csv() {
        let mut params = table_params(0.8, Variant::Plain);
        params.covariate_names = vec!["intercept".into(), "x".into()];
        params.zeta1 = vec![-1.0, 0.3];
        params.zeta2 = vec![7.0, 0.2];
        let spec = SimulationSpec { policies: 20, first_year: 2001, years: 4, covariate_sd: 0.5 };
        let pf = simulate_portfolio(&params, &spec, 9).unwrap();
        let mut buf = Vec::new();
        write_portfolio_csv(&pf, &mut buf).unwrap();
        let back = ingest_reader(buf.as_slice(), &simulation_schema(&params, &spec)).unwrap();
        assert_eq!(back, pf);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn premiums_ignore_row_order(
            order in Just((0..60usize).collect::<Vec<_>>()).prop_shuffle()
        ) {
            let mut params = table_params(0.8, Variant::Plain);
            params.covariate_names = vec!["intercept".into(), "x".into()];
            params.zeta1 = vec![-1.0, 0.3];
            params.zeta2 = vec![7.0, 0.2];
            let spec = SimulationSpec { policies: 15, first_year: 1, years: 4, covariate_sd: 0.5 };
            let pf = simulate_portfolio(&params, &spec, 5).unwrap();
            let mut buf = Vec::new();
            write_portfolio_csv(&pf, &mut buf).unwrap();
            let text = String::from_utf8(buf).unwrap();
            let mut lines = text.lines();
            let header = lines.next().unwrap();
            let rows: Vec<&str> = lines.collect();
            let shuffled: String = std::iter::once(header)
                .chain(order.iter().map(|&i| rows[i]))
                .map(|l| format!("{l}\n"))
                .collect();
            let schema = simulation_schema(&params, &spec);
            let back = ingest_reader(shuffled.as_bytes(), &schema).unwrap();
            let by_id = |mut v: Vec<PremiumRow>| {
                v.sort_by(|a, b| a.policy_id.cmp(&b.policy_id));
                v
            };
            let expected = by_id(predict_portfolio(&pf, &params, Benchmark::Proposed, 5).unwrap());
            let got = by_id(predict_portfolio(&back, &params, Benchmark::Proposed, 5).unwrap());
            prop_assert_eq!(expected, got);
        }
    }
}
