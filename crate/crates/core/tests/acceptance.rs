//! Acceptance criteria. Each test prints one PASS/FAIL line to stderr and
//! fails if its criterion fails. Tolerances are pinned below.

use std::io::Write as _;
use std::process::Command;
use std::time::{Duration, Instant};

use dyncrm::crm::{self, final_state, laplace_count_term, premium_weights, CrmParams, PeriodRates, Variant};
use dyncrm::dist::ln_pmf_poisson;
use dyncrm::fit::{fit_dependence, Benchmark, BenchmarkSpec, OptimizerConfig};
use dyncrm::glm::{fit_glms, IrlsConfig, COUNT_COLUMN};
use dyncrm::history::Observation;
use dyncrm::oracle::{
    gb2_pdf_quadrature, laplace_count_mc, nb_pmf_quadrature, particle_filter, quadrature_filter, transition_check,
    QuadConfig, TransitionSpec,
};
use dyncrm::portfolio::{dglm_premium, naive_premium, simulate_portfolio, SimulationSpec};
use dyncrm::ssm_freq::{self, GammaState, HfParams};
use dyncrm::ssm_sev::{self, InvGammaState, QSchedule, SevParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Year-5 credibility factors of the worked example (lambda1 = 0.2, one claim in year k, q = 0.8).
const WORKED_FREQ: [f64; 4] = [0.9216, 1.0496, 1.2096, 1.4096];
const WORKED_SEV: [f64; 4] = [1.0309, 1.0347, 1.0385, 1.0421];
const WORKED_STATIC_FREQ: f64 = 1.1111;
const WORKED_TOL: f64 = 5e-5;
const WORKED_SEV_TOL: f64 = 5e-4;
const QUAD_REL_TOL: f64 = 1e-3;
const PARTICLE_Z: f64 = 3.0;
const SEV_VARIANCE_MIN_SHAPE: f64 = 4.5;
const MIXTURE_TOL: f64 = 1e-8;
const IDENTITY_TOL: f64 = 1e-12;
const TRANSITION_Z: f64 = 4.0;
const LAPLACE_Z: f64 = 3.0;
const WEIGHTS_TOL: f64 = 1e-12;
const RECOVERY_Q_TOL: f64 = 0.1;
const RECOVERY_ETA_SE: f64 = 2.0;

fn report(n: u32, title: &str, passed: bool, detail: &str, start: Instant, limit: Duration) {
    let elapsed = start.elapsed();
    let ok = passed && elapsed <= limit;
    let line = format!(
        "criterion {n:>2} {}: {title}: {detail} [{elapsed:.2?}, limit {limit:?}]\n",
        if ok { "PASS" } else { "FAIL" }
    );
    // written directly so the line shows even when the harness captures output
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "{line}");
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

fn worked_example(q: f64) -> CrmParams {
    CrmParams {
        q1: q,
        q2: q,
        alpha0_1: 1.0,
        beta0_1: 1.0,
        alpha0_2: 3.0,
        beta0_2: 2.0,
        covariate_names: vec!["intercept".into()],
        zeta1: vec![0.2f64.ln()],
        zeta2: vec![15000f64.ln()],
        eta: 0.0,
        psi2: 1.5,
        variant: Variant::Plain,
    }
}

/// Credibility factors at year 5 after one claim of `amount` in year `k`.
fn year5_factors(q: f64, k: usize, amount: f64) -> (f64, f64) {
    let p = worked_example(q);
    let rates = PeriodRates::new(0.2, 15000.0).unwrap();
    let rated: Vec<_> = (1..=4)
        .map(|t| (rates, if t == k { Observation::new(1, amount).unwrap() } else { Observation::no_claim() }))
        .collect();
    final_state(&p, &rated).unwrap().credibility()
}

#[test]
fn criterion_01_worked_example_frequency_factors() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for k in 1..=4 {
        let (dynamic, _) = year5_factors(0.8, k, 15000.0);
        let (stat, _) = year5_factors(1.0, k, 15000.0);
        worst = worst.max((dynamic - WORKED_FREQ[k - 1]).abs()).max((stat - WORKED_STATIC_FREQ).abs());
    }
    report(
        1,
        "year-5 frequency credibility factors",
        worst <= WORKED_TOL,
        &format!("max abs deviation {worst:.2e} (tol {WORKED_TOL:e})"),
        start,
        Duration::from_secs(1),
    );
}

#[test]
fn criterion_02_worked_example_severity_ordering() {
    let start = Instant::now();
    // A claim above its a priori expectation (15000) raises the factor more the
    // more recent it is; below it the ordering mirrors, and at it the factors are all 1.
    let mut ordered = true;
    for amount in [15_001.0, 16_860.0, 30_000.0, 250_000.0, 500.0, 10_000.0, 14_999.0, 15_000.0] {
        let dynamic: Vec<f64> = (1..=4).map(|k| year5_factors(0.8, k, amount).1).collect();
        let stat: Vec<f64> = (1..=4).map(|k| year5_factors(1.0, k, amount).1).collect();
        ordered &= match amount.partial_cmp(&15_000.0).unwrap() {
            std::cmp::Ordering::Greater => dynamic.windows(2).all(|w| w[0] < w[1]),
            std::cmp::Ordering::Less => dynamic.windows(2).all(|w| w[0] > w[1]),
            std::cmp::Ordering::Equal => dynamic.iter().all(|d| rel(*d, 1.0) <= 1e-14),
        };
        ordered &= stat.iter().all(|s| rel(*s, stat[0]) <= 1e-14);
    }
    // The claim amount behind the reference severity factors is not stated.
    // Back-solve it from the static factor, which depends on nothing else,
    // and see whether the dynamic column follows.
    let alpha_post = 3.0 + 1.0 / 1.5;
    let amount = (WORKED_SEV[0] * (alpha_post - 1.0) - 2.0) * 15000.0 * 1.5;
    let dynamic: Vec<f64> = (1..=4).map(|k| year5_factors(0.8, k, amount).1).collect();
    let dev = dynamic.iter().zip(WORKED_SEV).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let reproduced = dev <= WORKED_SEV_TOL;
    report(
        2,
        "severity factors rise with claim recency, static factor constant",
        ordered,
        &format!(
            "ordering (increasing above the expected claim, mirrored below) {}; back-solved claim {amount:.1} gives dynamic factors {:.4?}, max deviation {dev:.2e} \
             from the reference factors: exact reproduction {}",
            if ordered { "holds" } else { "violated" },
            dynamic,
            if reproduced { "achieved" } else { "not achieved (open question)" }
        ),
        start,
        Duration::from_secs(1),
    );
}

fn random_toy(rng: &mut ChaCha8Rng) -> (CrmParams, Vec<(PeriodRates, Observation)>) {
    let a1 = rng.random_range(1.0..3.0);
    let a2 = rng.random_range(5.0..9.0);
    let params = CrmParams {
        q1: rng.random_range(0.6..0.95),
        q2: rng.random_range(0.6..0.95),
        alpha0_1: a1,
        beta0_1: a1 * rng.random_range(0.7..1.4),
        alpha0_2: a2,
        beta0_2: (a2 - 1.0) * rng.random_range(0.7..1.4),
        covariate_names: vec![],
        zeta1: vec![],
        zeta2: vec![],
        eta: rng.random_range(-0.5..0.0),
        psi2: rng.random_range(0.8..1.5),
        variant: Variant::Plain,
    };
    let periods = rng.random_range(1..=4);
    let rates: Vec<PeriodRates> = (0..periods)
        .map(|_| PeriodRates::new(rng.random_range(0.2..1.0), rng.random_range(0.5..3.0)).unwrap())
        .collect();
    let path = crm::simulate_rated(&params, &rates, rng).unwrap();
    (params, rates.into_iter().zip(path.iter().map(|s| s.obs)).collect())
}

#[test]
fn criterion_03_filter_matches_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_rel: f64 = 0.0;
    let mut worst_z: f64 = 0.0;
    let mut comparisons = 0;
    for _ in 0..20 {
        let (params, rated) = random_toy(&mut rng);
        let states = crm::filter(&params, &rated).unwrap();
        let quad = quadrature_filter(&params, &rated, &QuadConfig::default()).unwrap();
        for (t, s) in states.iter().enumerate() {
            let (qf, qs) = (&quad.freq[t + 1], &quad.sev[t + 1]);
            for (closed, oracle) in [
                (s.freq.mean(), qf.mean),
                (s.freq.variance(), qf.variance.unwrap_or(f64::NAN)),
                (s.sev.mean(), qs.mean),
                (s.sev.variance().unwrap_or(f64::NAN), qs.variance.unwrap_or(f64::NAN)),
            ] {
                worst_rel = worst_rel.max(if rel(closed, oracle).is_nan() { f64::INFINITY } else { rel(closed, oracle) });
            }
        }
        // Particle comparison on the filtered state at the end of the history.
        // The severity variance is compared only when the posterior fourth moment
        // is comfortably finite; otherwise its Monte-Carlo error is not estimable.
        let pf = particle_filter(&params, &rated, 100_000, &mut rng).unwrap();
        let (s, e) = (states.last().unwrap(), pf.last().unwrap());
        let mut targets = vec![
            (s.freq.mean(), e.freq.mean, e.freq.mean_se),
            (s.freq.variance(), e.freq.variance, e.freq.variance_se),
            (s.sev.mean(), e.sev.mean, e.sev.mean_se),
        ];
        if s.sev.alpha > SEV_VARIANCE_MIN_SHAPE {
            targets.push((s.sev.variance().unwrap(), e.sev.variance, e.sev.variance_se));
        }
        for (closed, est, se) in targets {
            worst_z = worst_z.max((est - closed).abs() / se);
            comparisons += 1;
        }
    }
    report(
        3,
        "closed-form filter vs quadrature and particle oracles",
        worst_rel <= QUAD_REL_TOL && worst_z <= PARTICLE_Z,
        &format!(
            "quadrature max rel err {worst_rel:.2e} (tol {QUAD_REL_TOL:e}); particle max |z| {worst_z:.2} over \
             {comparisons} comparisons (tol {PARTICLE_Z})"
        ),
        start,
        Duration::from_secs(120),
    );
}

#[test]
fn criterion_04_predictive_laws_match_mixtures() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let g = GammaState::new(rng.random_range(0.5..5.0), rng.random_range(0.5..5.0)).unwrap();
        let (q, lambda) = (rng.random_range(0.5..1.0), rng.random_range(0.1..2.0));
        let nb = g.forecast_obs(q, lambda).unwrap();
        for y in 0..50u64 {
            let closed = nb.density(y as f64).unwrap();
            worst = worst.max(rel(closed, nb_pmf_quadrature(&g, q, lambda, y).unwrap()));
        }
        let ig = InvGammaState::new(rng.random_range(2.5..8.0), rng.random_range(0.5..5.0)).unwrap();
        let sch = QSchedule::standard(rng.random_range(0.5..1.0)).unwrap();
        let (lambda, psi, count) = (rng.random_range(0.5..3.0), rng.random_range(0.5..2.0), rng.random_range(1..=4u64));
        let gb2 = ig.forecast_sum(&sch, lambda, psi, count).unwrap();
        let centre = gb2.mean().unwrap();
        for i in 0..50 {
            // 1e-3 to 20 times the mean; the oracle stops converging far out in the tail
            let y = centre * 10f64.powf(-3.0 + (3.0 + 20f64.log10()) * i as f64 / 49.0);
            let closed = gb2.density(y).unwrap();
            worst = worst.max(rel(closed, gb2_pdf_quadrature(&ig, &sch, lambda, psi, count, y).unwrap()));
        }
    }
    report(
        4,
        "NB pmf and GB2 pdf vs mixture quadrature",
        worst <= MIXTURE_TOL,
        &format!("max rel err {worst:.2e} over 10 states x 50 points x 2 laws (tol {MIXTURE_TOL:e})"),
        start,
        Duration::from_secs(30),
    );
}

#[test]
fn criterion_05_martingale_and_variance_inflation() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let q = rng.random_range(0.05..1.0);
        let g = GammaState::new(rng.random_range(0.2..20.0), rng.random_range(0.1..10.0)).unwrap();
        let m = g.predict_state(q).unwrap().moments();
        worst = worst.max(rel(m.mean.unwrap(), g.mean())).max(rel(m.variance.unwrap(), g.variance() / q));

        let ig = InvGammaState::new(rng.random_range(2.01..30.0), rng.random_range(0.1..10.0)).unwrap();
        let std = ig.predict_state(&QSchedule::standard(q).unwrap()).unwrap().moments();
        worst = worst
            .max(rel(std.mean.unwrap(), ig.mean()))
            .max(rel(std.variance.unwrap(), ig.variance().unwrap() / q));
        let ewma = ig.predict_state(&QSchedule::alternative_ewma(q).unwrap()).unwrap().moments();
        worst = worst.max(rel(ewma.mean.unwrap(), ig.mean()));
        if q * (ig.alpha - 1.0) > 1.0 {
            let ratio = (ig.alpha - 2.0) / (q * (ig.alpha - 1.0) - 1.0);
            worst = worst.max(rel(ewma.variance.unwrap(), ig.variance().unwrap() * ratio));
        }
    }
    // Monte-Carlo: variance targets need a finite fourth moment, hence IG(10, 9).
    let cases = [
        TransitionSpec::Gamma { state: GammaState::new(2.0, 2.0).unwrap(), q: 0.5 },
        TransitionSpec::InverseGamma { state: InvGammaState::new(10.0, 9.0).unwrap(), schedule: QSchedule::standard(0.8).unwrap() },
        TransitionSpec::InverseGamma {
            state: InvGammaState::new(10.0, 9.0).unwrap(),
            schedule: QSchedule::alternative_ewma(0.8).unwrap(),
        },
    ];
    let mut worst_z: f64 = 0.0;
    for spec in &cases {
        let s = transition_check(spec, 1_000_000, &mut rng).unwrap();
        let law = match spec {
            TransitionSpec::Gamma { state, q } => state.predict_state(*q).unwrap(),
            TransitionSpec::InverseGamma { state, schedule } => state.predict_state(schedule).unwrap(),
        };
        let m = law.moments();
        worst_z = worst_z
            .max((s.mean - m.mean.unwrap()).abs() / s.mean_se)
            .max((s.variance - m.variance.unwrap()).abs() / s.variance_se);
    }
    report(
        5,
        "mean preservation and variance inflation",
        worst <= IDENTITY_TOL && worst_z <= TRANSITION_Z,
        &format!(
            "identities max rel err {worst:.2e} over 1000 states (tol {IDENTITY_TOL:e}); Monte-Carlo max |z| \
             {worst_z:.2} with 1e6 draws (tol {TRANSITION_Z})"
        ),
        start,
        Duration::from_secs(60),
    );
}

#[test]
fn criterion_06_laplace_term() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let g = GammaState::new(rng.random_range(0.2..10.0), rng.random_range(0.2..10.0)).unwrap();
        let (q, lambda) = (rng.random_range(0.1..1.0), rng.random_range(0.05..3.0));
        worst = worst.max(rel(laplace_count_term(&g, q, lambda, 0.0).unwrap(), lambda * g.mean()));
    }
    let g = GammaState::new(1.0, 1.0).unwrap();
    let eta = -0.4538;
    let closed = laplace_count_term(&g, 0.8, 0.2, eta).unwrap();
    let mc = laplace_count_mc(&g, 0.8, 0.2, eta, 10_000_000, &mut rng).unwrap();
    let z = (mc.mean - closed).abs() / mc.mean_se;
    report(
        6,
        "count Laplace term",
        worst <= IDENTITY_TOL && z <= LAPLACE_Z,
        &format!(
            "eta=0 reduction max rel err {worst:.2e} (tol {IDENTITY_TOL:e}); eta={eta}: closed {closed:.6}, \
             Monte-Carlo {:.6} +- {:.1e}, |z| {z:.2} (tol {LAPLACE_Z})",
            mc.mean, mc.mean_se
        ),
        start,
        Duration::from_secs(60),
    );
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

#[test]
fn criterion_07_weight_representations() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut ordered = true;
    for case in 0..100 {
        let variant = [Variant::Plain, Variant::EwmaSeverity, Variant::ThreePart, Variant::EwmaThreePart][case % 4];
        let a2 = rng.random_range(2.5..8.0);
        let params = CrmParams {
            q1: rng.random_range(0.3..0.99),
            q2: rng.random_range(0.3..0.99),
            alpha0_1: rng.random_range(0.5..4.0),
            beta0_1: rng.random_range(0.5..4.0),
            alpha0_2: a2,
            beta0_2: rng.random_range(0.5..4.0),
            covariate_names: vec![],
            zeta1: vec![],
            zeta2: vec![],
            eta: rng.random_range(-0.6..0.0),
            psi2: rng.random_range(0.5..2.0),
            variant,
        };
        let periods = rng.random_range(1..=8);
        for equal in [false, true] {
            let fixed = PeriodRates::new(rng.random_range(0.2..1.5), rng.random_range(0.5..3.0)).unwrap();
            let rates: Vec<PeriodRates> = (0..=periods)
                .map(|_| if equal { fixed } else { PeriodRates::new(rng.random_range(0.2..1.5), rng.random_range(0.5..3.0)).unwrap() })
                .collect();
            let path = crm::simulate_rated(&params, &rates[..periods], &mut rng).unwrap();
            let rated: Vec<_> = rates[..periods].iter().copied().zip(path.iter().map(|s| s.obs)).collect();
            let next = rates[periods];

            // premium weights vs the threaded state
            let w = premium_weights(&params, &rated).unwrap();
            let prem = final_state(&params, &rated).unwrap().premium(&params, &next).unwrap();
            let (f, s) = w.reconstruct(&params, &rated, &next, prem.laplace);
            worst = worst.max(rel(f, prem.freq_mean)).max(rel(s, prem.sev_mean));

            // single-series frequency weights
            let l1: Vec<f64> = rates.iter().map(|r| r.lambda1).collect();
            let counts: Vec<u64> = rated.iter().map(|(_, o)| o.count).collect();
            let hf = HfParams::new(params.q1, params.alpha0_1, params.beta0_1, l1.clone()).unwrap();
            let fw = ssm_freq::forecast_weights(&hf, periods + 1).unwrap();
            let last = hf.filter(&counts).unwrap().last().copied().unwrap_or(hf.initial_state());
            let cf: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            worst = worst.max(rel(fw.forecast(l1[periods], &cf, &l1), l1[periods] * last.mean()));

            // single-series severity weights (one observation per period)
            let l2: Vec<f64> = rates.iter().map(|r| r.lambda2_star).collect();
            let ys: Vec<f64> = (0..periods).map(|_| rng.random_range(0.1..5.0)).collect();
            let sp = SevParams::new(params.schedule(), params.alpha0_2, params.beta0_2, params.psi2, l2.clone()).unwrap();
            let sw = ssm_sev::forecast_weights(&sp, &ys, periods + 1).unwrap();
            let last = sp.filter(&ys).unwrap().last().copied().unwrap_or(sp.initial_state());
            worst = worst.max(rel(sw.forecast(l2[periods], &ys, &l2), l2[periods] * last.mean()));

            if equal {
                ordered &= strictly_increasing(&fw.data) && strictly_increasing(&sw.data);
                ordered &= strictly_increasing(&w.freq.data);
                if !variant.freezes_without_claims() {
                    ordered &= strictly_increasing(&w.sev.data);
                }
            }
        }
    }
    report(
        7,
        "weight representations and recency ordering",
        worst <= WEIGHTS_TOL && ordered,
        &format!(
            "max rel err {worst:.2e} over 100 histories (tol {WEIGHTS_TOL:e}); equal-rate ordering {}",
            if ordered { "holds in every case" } else { "violated" }
        ),
        start,
        Duration::from_secs(60),
    );
}

#[test]
fn criterion_08_ewma_variant() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let q = rng.random_range(0.3..0.99);
        let (a0, b0, psi) = (rng.random_range(1.5..6.0), rng.random_range(0.5..4.0), rng.random_range(0.5..2.0));
        let tau = rng.random_range(1..=10usize);
        let lambda: Vec<f64> = (0..tau).map(|_| rng.random_range(0.5..3.0)).collect();
        let ys: Vec<f64> = (0..tau - 1).map(|_| rng.random_range(0.1..5.0)).collect();
        let sp = SevParams::new(QSchedule::alternative_ewma(q).unwrap(), a0, b0, psi, lambda.clone()).unwrap();
        let last = sp.filter(&ys).unwrap().last().copied().unwrap_or(sp.initial_state());
        let recursion = lambda[tau - 1] * last.mean();
        let n = (tau - 1) as i32;
        let num = q.powi(n) * b0
            + ys.iter().enumerate().map(|(t, y)| q.powi(n - 1 - t as i32) * y / (lambda[t] * psi)).sum::<f64>();
        let den = q.powi(n) * (a0 - 1.0) + (1.0 - q.powi(n)) / (1.0 - q) / psi;
        worst = worst.max(rel(recursion, lambda[tau - 1] * num / den));
    }
    // variance monitoring: flagged exactly when q_t alpha <= 2
    let mut flags_ok = true;
    let mut flagged = 0;
    let mut states: Vec<(f64, f64)> = vec![(0.5, 3.0), (0.25, 5.0), (0.8, 2.25)];
    states.extend((0..2000).map(|_| (rng.random_range(0.05..0.99), rng.random_range(1.01..6.0))));
    for (q, alpha) in states {
        let sch = QSchedule::alternative_ewma(q).unwrap();
        let ig = InvGammaState::new(alpha, 1.0).unwrap();
        let shape = ig.predictive_shape(&sch).unwrap();
        let params = CrmParams {
            q2: q,
            alpha0_2: alpha,
            beta0_2: 1.0,
            variant: Variant::EwmaSeverity,
            ..worked_example(0.8)
        };
        let fc = params.initial_state().predict(&params, &PeriodRates::new(0.2, 1.0).unwrap()).unwrap();
        let law = ig.forecast_obs(&sch, 1.0, 1.5).unwrap();
        let absent = shape <= 2.0;
        flagged += usize::from(absent);
        flags_ok &= fc.severity.variance_exists() == !absent
            && law.variance().is_none() == absent
            && fc.severity.variance_given(1).unwrap().is_none() == absent
            && sch.ewma_conditions(alpha, 1.5).initial == (shape > 2.0);
    }
    report(
        8,
        "EWMA closed form and variance monitoring",
        worst <= IDENTITY_TOL && flags_ok,
        &format!(
            "closed form vs recursion max rel err {worst:.2e} (tol {IDENTITY_TOL:e}); monitoring {} ({flagged} of \
             2003 states flagged, boundary q(alpha-1)=1 included)",
            if flags_ok { "exact" } else { "mismatched" }
        ),
        start,
        Duration::from_secs(10),
    );
}

#[test]
fn criterion_09_three_part_variant() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut frozen_ok = true;
    let mut agree_ok = true;
    for case in 0..200 {
        let (three, plain) = if case % 2 == 0 {
            (Variant::ThreePart, Variant::Plain)
        } else {
            (Variant::EwmaThreePart, Variant::EwmaSeverity)
        };
        let p3 = CrmParams { variant: three, q1: rng.random_range(0.3..0.99), q2: rng.random_range(0.3..0.99), eta: -0.3, ..worked_example(0.8) };
        let pp = CrmParams { variant: plain, ..p3.clone() };
        let rates = PeriodRates::new(rng.random_range(0.1..2.0), 15000.0).unwrap();
        let periods = rng.random_range(1..=10);
        let obs: Vec<Observation> = (0..periods)
            .map(|_| {
                let n = if rng.random_bool(0.5) { 0 } else { rng.random_range(1..4) };
                if n == 0 { Observation::no_claim() } else { Observation::new(n, rng.random_range(100.0..40000.0)).unwrap() }
            })
            .collect();
        let mut state = p3.initial_state();
        for o in &obs {
            let next = state.update(&p3, &rates, o).unwrap();
            if o.count == 0 {
                frozen_ok &= next.sev.alpha.to_bits() == state.sev.alpha.to_bits()
                    && next.sev.beta.to_bits() == state.sev.beta.to_bits();
            }
            state = next;
        }
        let claims: Vec<_> = obs.iter().filter(|o| o.count > 0).map(|o| (rates, *o)).collect();
        let (s3, sp) = (final_state(&p3, &claims).unwrap(), final_state(&pp, &claims).unwrap());
        agree_ok &= s3 == sp
            && crm::loglik_rated(&p3, &claims).unwrap().to_bits() == crm::loglik_rated(&pp, &claims).unwrap().to_bits()
            && s3.premium(&p3, &rates).unwrap() == sp.premium(&pp, &rates).unwrap();
    }
    report(
        9,
        "three-part variant",
        frozen_ok && agree_ok,
        &format!(
            "severity state bit-identical across zero-claim periods: {frozen_ok}; equals the two-part model on \
             claim-only histories: {agree_ok} (200 histories)"
        ),
        start,
        Duration::from_secs(10),
    );
}

/// Generating model of the recovery study. The criterion fixes the q's, the
/// prior shapes and eta; the regression part and psi are chosen here.
pub fn recovery_truth() -> CrmParams {
    CrmParams {
        q1: 0.8,
        q2: 0.8,
        alpha0_1: 1.0,
        beta0_1: 1.0,
        alpha0_2: 3.0,
        beta0_2: 2.0,
        covariate_names: vec!["intercept".into(), "x".into()],
        zeta1: vec![0.5, 0.5],
        zeta2: vec![7.0, 0.3],
        eta: -0.45,
        psi2: 0.5,
        variant: Variant::Plain,
    }
}

pub const RECOVERY_SEED: u64 = 2024;

#[test]
fn criterion_10_parameter_recovery() {
    let start = Instant::now();
    let truth = recovery_truth();
    let spec = SimulationSpec { policies: 500, first_year: 1, years: 5, covariate_sd: 0.5 };
    let pf = simulate_portfolio(&truth, &spec, RECOVERY_SEED).unwrap();
    let glm = fit_glms(&pf.design_names, &pf.policies, &IrlsConfig::default()).unwrap();
    let sev = &glm.severity_dependent;
    let (eta, se, robust) = (
        glm.eta(),
        sev.std_error(COUNT_COLUMN).unwrap(),
        sev.robust_std_error(COUNT_COLUMN).unwrap(),
    );
    let cfg = OptimizerConfig { estimate_psi: true, ..Default::default() };
    let fit = fit_dependence(
        &pf.policies,
        &glm,
        &pf.design_names,
        &BenchmarkSpec::new(Benchmark::Proposed, Variant::Plain),
        &cfg,
    )
    .unwrap();
    let (q1, q2) = (fit.params.q1, fit.params.q2);
    let q_ok = (q1 - 0.8).abs() <= RECOVERY_Q_TOL && (q2 - 0.8).abs() <= RECOVERY_Q_TOL;
    let eta_ok = (eta - truth.eta).abs() <= RECOVERY_ETA_SE * robust;
    report(
        10,
        "parameter recovery on a synthetic portfolio",
        q_ok && eta_ok && fit.converged,
        &format!(
            "q1 {q1:.4}, q2 {q2:.4} (tol +-{RECOVERY_Q_TOL}); eta {eta:.4} vs -0.45: {:.2} policy-clustered SE \
             ({robust:.4}), {:.2} model-based SE ({se:.4}) (tol {RECOVERY_ETA_SE}); psi {:.3}",
            (eta - truth.eta).abs() / robust,
            (eta - truth.eta).abs() / se,
            fit.params.psi2
        ),
        start,
        Duration::from_secs(600),
    );
}

#[test]
fn criterion_11_benchmark_premiums() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst_zero, mut worst_sum): (f64, f64) = (0.0, 0.0);
    let mut exact = true;
    for _ in 0..1000 {
        let r = PeriodRates::new(rng.random_range(0.01..3.0), rng.random_range(1.0..1e5)).unwrap();
        let eta = rng.random_range(-1.0..0.5);
        exact &= naive_premium(&r) == r.lambda1 * r.lambda2_star;
        exact &= dglm_premium(&r, eta) == r.lambda1 * r.lambda2_star * (r.lambda1 * (eta.exp() - 1.0) + eta).exp();
        worst_zero = worst_zero.max(rel(dglm_premium(&r, 0.0), naive_premium(&r)));
        // E[N lambda2* e^(eta N)] for N ~ Poisson(lambda1), summed directly
        let direct: f64 = (1..200u64)
            .map(|n| ln_pmf_poisson(n, r.lambda1).unwrap().exp() * n as f64 * r.lambda2_star * (eta * n as f64).exp())
            .sum();
        worst_sum = worst_sum.max(rel(dglm_premium(&r, eta), direct));
    }
    report(
        11,
        "naive and DGLM premium formulas",
        exact && worst_zero <= 1e-15 && worst_sum <= 1e-12,
        &format!(
            "formulas exact: {exact}; DGLM vs naive at eta=0 rel err {worst_zero:.1e} (tol 1e-15); DGLM vs direct \
             compound sum rel err {worst_sum:.1e} (tol 1e-12)"
        ),
        start,
        Duration::from_secs(10),
    );
}

#[test]
fn criterion_12_cli_determinism() {
    let start = Instant::now();
    let bin = env!("CARGO_BIN_EXE_dyncrm");
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("truth.json");
    let truth = CrmParams { zeta1: vec![0.0, 0.5], ..recovery_truth() };
    std::fs::write(&params, serde_json::to_string_pretty(&truth).unwrap()).unwrap();
    let run = |tag: &str, threads: &str| -> Vec<Vec<u8>> {
        let d = dir.path().join(tag);
        std::fs::create_dir_all(&d).unwrap();
        let p = |f: &str| d.join(f).to_str().unwrap().to_string();
        let steps: Vec<Vec<String>> = vec![
            vec!["simulate".into(), "--params".into(), params.to_str().unwrap().into(), "--seed".into(), "77".into(),
                 "--policies".into(), "120".into(), "--years".into(), "4".into(), "--out".into(), p("data.csv"),
                 "--schema-out".into(), p("schema.json")],
            vec!["fit-glm".into(), "--data".into(), p("data.csv"), "--schema".into(), p("schema.json"), "--out".into(), p("glm.json")],
            vec!["fit-dep".into(), "--data".into(), p("data.csv"), "--schema".into(), p("schema.json"),
                 "--benchmark".into(), "all".into(), "--out-dir".into(), p("fits")],
            vec!["predict".into(), "--data".into(), p("data.csv"), "--schema".into(), p("schema.json"),
                 "--model".into(), p("fits/proposed.json"), "--out".into(), p("premiums.csv")],
            vec!["weights".into(), "--data".into(), p("data.csv"), "--schema".into(), p("schema.json"),
                 "--model".into(), p("fits/proposed.json"), "--out".into(), p("weights.csv")],
            vec!["validate".into(), "--data".into(), p("data.csv"), "--schema".into(), p("schema.json"),
                 "--premiums".into(), format!("proposed={}", p("premiums.csv")), "--out".into(), p("report.json")],
        ];
        for args in steps {
            let out = Command::new(bin).args(["--threads", threads]).args(&args).output().unwrap();
            assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        }
        ["data.csv", "schema.json", "glm.json", "fits/naive.json", "fits/dglm.json", "fits/static.json",
         "fits/proposed.json", "premiums.csv", "weights.csv", "report.json"]
            .iter()
            .map(|f| std::fs::read(d.join(f)).unwrap())
            .collect()
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "4");
    let identical = a == b && a == c;
    report(
        12,
        "end-to-end CLI runs are byte-identical",
        identical,
        &format!(
            "{} artifacts from simulate, fit-glm, fit-dep (all benchmarks), predict, weights, validate; repeated run \
             and 4-thread run {}",
            a.len(),
            if identical { "identical" } else { "differ" }
        ),
        start,
        Duration::from_secs(300),
    );
}
