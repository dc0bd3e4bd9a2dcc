//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//! Errors from the library abort the run; a criterion whose numbers miss the
//! target is reported as FAIL without failing the binary.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sigsurv::cli::diagnostics_suite;
use sigsurv::diagnostics::{
    discretization_check, empirical_divergences, factorial_decay_check, field_constants, latent_bound,
    likelihood_decomposition_check, linearize_vector_field, model_curves, path_lipschitz,
    truncation_bias_bound,
};
use sigsurv::fit::{
    cross_validate, fit_coxsig, fit_ncde, split_indices, AdamConfig, CvGrid, ElasticNetConfig, Method,
};
use sigsurv::intensity::{
    ncde_nll, neg_log_likelihood, nll_gradient_coxsig, CoxSigParams, IntensityParams, NcdeParams, Predictor,
    QuadratureConfig,
};
use sigsurv::latentcde::{solve_controlled, NeuralField, PolynomialScalarField, VectorField};
use sigsurv::metrics::{
    auc_td, brier, c_index, default_points, evaluate_model, weighted_brier, CensoringKm, EvalOptions, EvalPoint,
    Outcomes, WbsThreshold,
};
use sigsurv::signature::{
    all_words, chen_concat, path_signature, segment_signature, sig_dim, word_index, SigVector, Word,
};
use sigsurv::simulate::{
    fbm_paths, ou_hitting_dataset, thinning_dataset, tumor_growth_dataset, FbmSampler, OuConfig, ThinningConfig,
    TumorConfig,
};
use sigsurv::timeseries::{embed_linear, Dataset, SampledPath, SurvivalRecord};

const OU_KEEP_EVERY: usize = 10;
const OU_DELTA_T: f64 = 0.25;
const TUMOR_KEEP_EVERY: usize = 10;
const TUMOR_DELTA_T: f64 = 0.5;
const RUNS: u64 = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// `ACCEPTANCE_ONLY=1,7,9` restricts the run to the listed criteria.
fn selected(id: usize) -> bool {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').any(|s| s.trim().parse() == Ok(id)),
        Err(_) => true,
    }
}

fn report(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> Option<bool> {
    if !selected(id) {
        return None;
    }
    let start = Instant::now();
    let o = f();
    println!(
        "{} {:>2} {:<32} {} [{:.1} s]",
        if o.pass { "PASS" } else { "FAIL" },
        id,
        name,
        o.detail,
        start.elapsed().as_secs_f64()
    );
    Some(o.pass)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn random_path(rng: &mut ChaCha8Rng, d_raw: usize, n: usize) -> SampledPath {
    let mut times = vec![0.0];
    for _ in 1..n {
        let last = *times.last().unwrap();
        times.push(last + rng.random_range(0.05..0.5));
    }
    let values = (0..n * d_raw).map(|_| rng.random_range(-1.0..1.0)).collect();
    SampledPath::new(times, values, d_raw).unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for &t in &[0.5, 1.0, 2.0] {
        let path = random_path(&mut rng, 2, 6);
        let times: Vec<f64> = path.times().iter().map(|s| s * t / path.last_time()).collect();
        let path = SampledPath::new(times, path.values().to_vec(), 2).unwrap();
        let sig = path_signature(&embed_linear(&path, t).unwrap(), t, 5).unwrap();
        let mut fact = 1.0;
        for k in 1..=5 {
            fact *= k as f64;
            let s = sig.get(&Word::repeated(3, k).unwrap()).unwrap();
            worst = worst.max((s - t.powi(k as i32) / fact).abs());
        }
    }
    outcome(worst < 1e-12, format!("max |S(t^k) - t^k/k!| = {worst:.1e}"))
}

/// Signature of a piecewise-linear path by direct summation over ordered segment assignments.
fn brute_signature_coeff(incs: &[Vec<f64>], word: &[usize]) -> f64 {
    fn rec(incs: &[Vec<f64>], word: &[usize], from: usize) -> f64 {
        if word.is_empty() {
            return 1.0;
        }
        let mut total = 0.0;
        for s in from..incs.len() {
            // Letters placed on segment s form a leading block of the remaining word.
            let mut prod = 1.0;
            for m in 1..=word.len() {
                prod *= incs[s][word[m - 1] - 1] / m as f64;
                total += prod * rec(incs, &word[m..], s + 1);
            }
        }
        total
    }
    rec(incs, word, 0)
}

fn shuffles(u: &[usize], v: &[usize]) -> Vec<Vec<usize>> {
    if u.is_empty() {
        return vec![v.to_vec()];
    }
    if v.is_empty() {
        return vec![u.to_vec()];
    }
    let mut out = Vec::new();
    for mut w in shuffles(&u[..u.len() - 1], v) {
        w.push(u[u.len() - 1]);
        out.push(w);
    }
    for mut w in shuffles(u, &v[..v.len() - 1]) {
        w.push(v[v.len() - 1]);
        out.push(w);
    }
    out
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut chen_err, mut brute_err, mut shuffle_err) = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..100 {
        let d = 2 + case % 2;
        let depth = 2 + case % 3;
        let segs = rng.random_range(2..6);
        let incs: Vec<Vec<f64>> = (0..segs)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut sig = SigVector::identity(d, depth).unwrap();
        for inc in &incs {
            sig = chen_concat(&sig, &segment_signature(inc, depth).unwrap()).unwrap();
        }
        let mut streamed = SigVector::identity(d, depth).unwrap();
        for inc in &incs {
            streamed.extend(inc).unwrap();
        }
        for w in all_words(d, depth).unwrap() {
            let idx = word_index(&w, d, depth).unwrap();
            let brute = brute_signature_coeff(&incs, w.letters());
            brute_err = brute_err.max((sig.coeffs()[idx] - brute).abs());
            chen_err = chen_err.max((sig.coeffs()[idx] - streamed.coeffs()[idx]).abs());
        }
        let words = all_words(d, depth).unwrap();
        for u in &words {
            for v in &words {
                if u.len() + v.len() > depth {
                    continue;
                }
                let lhs = sig.get(u).unwrap() * sig.get(v).unwrap();
                let rhs: f64 = shuffles(u.letters(), v.letters())
                    .into_iter()
                    .map(|w| sig.get(&Word::new(w).unwrap()).unwrap())
                    .sum();
                shuffle_err = shuffle_err.max((lhs - rhs).abs());
            }
        }
    }
    let worst = chen_err.max(brute_err).max(shuffle_err);
    outcome(
        worst < 1e-10,
        format!("chen {chen_err:.1e}, direct sum {brute_err:.1e}, shuffle {shuffle_err:.1e}"),
    )
}

fn criterion_3() -> Outcome {
    let paths = fbm_paths(0.6, 21, 1.0, 2, 100, 3).unwrap();
    let mut violations = 0;
    let mut worst_ratio = 0.0f64;
    for p in &paths {
        for l in factorial_decay_check(&embed_linear(p, 1.0).unwrap(), 5).unwrap() {
            if l.norm > l.bound {
                violations += 1;
            }
            worst_ratio = worst_ratio.max(l.norm / l.bound);
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations on 100 paths, max norm/bound {worst_ratio:.3}"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let drivers = fbm_paths(0.6, 41, 1.0, 2, 50, 4).unwrap();
    let mut const_err = 0.0f64;
    for p in drivers.iter().take(10) {
        let emb = embed_linear(p, 1.0).unwrap();
        let field = PolynomialScalarField {
            coeffs: (0..3).map(|_| vec![rng.random_range(-1.0..1.0)]).collect(),
        };
        let z = solve_controlled(&[0.0], &VectorField::PolynomialScalar(field.clone()), &emb, 5).unwrap();
        let alpha = linearize_vector_field(&field, 3).unwrap();
        let s = path_signature(&emb, 1.0, 3).unwrap();
        const_err = const_err.max((s.dot(&alpha) - z.last()[0]).abs());
    }
    let field = PolynomialScalarField {
        coeffs: vec![vec![0.3, 0.2], vec![0.1, -0.15], vec![-0.2, 0.1]],
    };
    let vf = VectorField::PolynomialScalar(field.clone());
    let alphas: Vec<Vec<f64>> = (1..=5).map(|n| linearize_vector_field(&field, n).unwrap()).collect();
    let mut errors = [0.0f64; 5];
    let mut bound_violations = 0;
    for p in &drivers {
        let emb = embed_linear(p, 1.0).unwrap();
        let z = solve_controlled(&[0.0], &vf, &emb, 4000).unwrap().last()[0];
        let lx = path_lipschitz(&emb);
        let (g0, lg) = field_constants(&field, 1.0);
        let m = latent_bound(g0, lg, lx, 1.0);
        for n in 1..=5 {
            let err = (path_signature(&emb, 1.0, n).unwrap().dot(&alphas[n - 1]) - z).abs();
            errors[n - 1] += err / drivers.len() as f64;
            if err > truncation_bias_bound(&field, n, lx, 1.0, m).unwrap() {
                bound_violations += 1;
            }
        }
    }
    // The reference solve carries an O(1e-6) Euler error, which is the floor for N = 5.
    let monotone = errors.windows(2).all(|w| w[1] <= w[0] + 1e-5);
    outcome(
        const_err < 1e-12 && monotone && bound_violations == 0,
        format!(
            "constant field {const_err:.1e}; mean error N=1..5 {:?}; {bound_violations} bound violations",
            errors.iter().map(|e| format!("{e:.1e}")).collect::<Vec<_>>()
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 8 * 32 + 1;
    let freqs: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| (rng.random_range(0.5..3.0), rng.random_range(0.0..6.0), rng.random_range(-1.0..1.0)))
        .collect();
    let times: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
    let values: Vec<f64> = times
        .iter()
        .flat_map(|&t| {
            let a: f64 = freqs[..2].iter().map(|(f, ph, c)| c * (f * t + ph).sin()).sum();
            let b: f64 = freqs[2..].iter().map(|(f, ph, c)| c * (f * t + ph).cos()).sum();
            [a, b]
        })
        .collect();
    let dense = SampledPath::new(times, values, 2).unwrap();
    let alpha: Vec<f64> = (0..sig_dim(3, 3)).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rep = discretization_check(&dense, &alpha, 3, 6).unwrap();
    let coarse: Vec<_> = rep.rows.iter().skip(1).collect();
    let within = coarse.iter().all(|r| r.error <= r.bound);
    let slope_ok = (0.8..=1.2).contains(&rep.slope);
    outcome(
        slope_ok && within,
        format!(
            "slope {:.3}; error/bound per level {:?}",
            rep.slope,
            coarse
                .iter()
                .map(|r| format!("{:.1e}", r.error / r.bound))
                .collect::<Vec<_>>()
        ),
    )
}

fn small_dataset(rng: &mut ChaCha8Rng, n: usize, d_raw: usize, n_obs: usize, statics: usize) -> Dataset {
    let records: Vec<SurvivalRecord> = (0..n)
        .map(|i| {
            let path = random_path(rng, d_raw, n_obs);
            let end = path.last_time() + rng.random_range(0.05..0.5);
            let w = (0..statics).map(|_| rng.random_range(-1.0..1.0)).collect();
            SurvivalRecord::new(i.to_string(), path, w, end, rng.random_bool(0.7)).unwrap()
        })
        .collect();
    let horizon = records.iter().map(|r| r.event_time).fold(0.0, f64::max);
    let features = (0..d_raw).map(|j| format!("x{j}")).collect();
    let static_names = (0..statics).map(|j| format!("w{j}")).collect();
    Dataset::new(records, horizon, features, static_names).unwrap()
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let quad = QuadratureConfig::default();
    let eps = 1e-6;
    let mut cox_worst = 0.0f64;
    for depth in [2, 3] {
        let data = small_dataset(&mut rng, 6, 2, 5, 2);
        let mut p = CoxSigParams::zeros(3, depth, 2, false);
        p.alpha.iter_mut().for_each(|a| *a = rng.random_range(-0.3..0.3));
        p.beta.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
        let (ga, gb) = nll_gradient_coxsig(&p, &data, &quad).unwrap();
        let nll = |q: &CoxSigParams| neg_log_likelihood(&IntensityParams::CoxSig(q.clone()), &data, &quad).unwrap();
        for i in 0..p.alpha.len() + p.beta.len() {
            let mut up = p.clone();
            let mut down = p.clone();
            let (u, dn, g) = if i < p.alpha.len() {
                (&mut up.alpha[i], &mut down.alpha[i], ga[i])
            } else {
                let j = i - p.alpha.len();
                (&mut up.beta[j], &mut down.beta[j], gb[j])
            };
            *u += eps;
            *dn -= eps;
            let fd = (nll(&up) - nll(&down)) / (2.0 * eps);
            cox_worst = cox_worst.max(rel_err(fd, g, 1e-4));
        }
    }
    let data = small_dataset(&mut rng, 4, 2, 6, 1);
    let refs: Vec<&SurvivalRecord> = data.records.iter().collect();
    let p = NcdeParams {
        field: NeuralField::init(3, 3, &[8, 8], &mut rng),
        alpha: vec![0.4, -0.3, 0.2],
        beta: vec![0.1],
        standardizer: None,
    };
    let g = ncde_nll(&p, &refs, true).unwrap().1.unwrap();
    let theta = p.field.flat();
    let gf = g.field.flat();
    let mut ncde_worst = 0.0f64;
    for i in 0..theta.len() {
        let mut q = p.clone();
        let mut t = theta.clone();
        t[i] += eps;
        q.field.set_flat(&t).unwrap();
        let up = ncde_nll(&q, &refs, false).unwrap().0;
        t[i] -= 2.0 * eps;
        q.field.set_flat(&t).unwrap();
        let fd = (up - ncde_nll(&q, &refs, false).unwrap().0) / (2.0 * eps);
        ncde_worst = ncde_worst.max(rel_err(fd, gf[i], 1e-4));
    }
    outcome(
        cox_worst < 1e-5 && ncde_worst < 1e-4,
        format!("CoxSig rel err {cox_worst:.1e}; NCDE rel err {ncde_worst:.1e} over {} weights", theta.len()),
    )
}

fn criterion_7() -> Outcome {
    let path = SampledPath::new(vec![0.0], vec![0.0], 1).unwrap();
    let r = SurvivalRecord::new("a", path, vec![], 1.0, true).unwrap();
    let data = Dataset::new(vec![r], 1.0, vec!["x".into()], vec![]).unwrap();
    let truth = |_: usize, _: &SurvivalRecord, _: f64| 0.0;
    let model = |_: usize, _: &SurvivalRecord, _: f64| 1.0;
    let t = empirical_divergences(&truth, &model, &data, 5).unwrap();
    let e = std::f64::consts::E;
    let closed = (t.kl - (e - 2.0)).abs().max((t.tv - (e - 1.0)).abs()).max((t.d2 - 1.0).abs());
    let checks = diagnostics_suite(7, 200, 20).unwrap();
    let sandwich = checks.iter().find(|c| c.name == "pinsker_sandwich").unwrap();
    outcome(
        closed < 1e-9 && sandwich.pass,
        format!("closed-form error {closed:.1e}; sandwich on 20 perturbations: {}", sandwich.pass),
    )
}

fn perturbed(truth: &CoxSigParams, rng: &mut ChaCha8Rng, scale: f64) -> CoxSigParams {
    let mut m = truth.clone();
    for a in m.alpha.iter_mut().chain(m.beta.iter_mut()) {
        *a += rng.random_range(-scale..scale);
    }
    m
}

fn criterion_8() -> Outcome {
    let base = ThinningConfig { n: 50, ..ThinningConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = perturbed(&base.truth, &mut rng, 0.3);
    let datasets: Vec<Dataset> = (0..200)
        .map(|s| thinning_dataset(&ThinningConfig { seed: 1000 + 7 * s, ..base.clone() }).unwrap())
        .collect();
    let rep = likelihood_decomposition_check(
        &IntensityParams::CoxSig(base.truth.clone()),
        &IntensityParams::CoxSig(model),
        &datasets,
        4,
    )
    .unwrap();
    outcome(
        rep.pass,
        format!("mean residual {:.2e}, MC standard error {:.2e}", rep.mean, rep.std_error),
    )
}

fn brute_km(times: &[f64], events: &[bool], t: f64) -> f64 {
    let mut cens: Vec<f64> = (0..times.len()).filter(|&i| !events[i]).map(|i| times[i]).collect();
    cens.sort_by(f64::total_cmp);
    cens.dedup();
    cens.iter()
        .filter(|&&s| s <= t)
        .map(|&s| {
            let dropped = (0..times.len()).filter(|&i| !events[i] && times[i] == s).count() as f64;
            let at_risk = times.iter().filter(|&&u| u >= s).count() as f64;
            1.0 - dropped / at_risk
        })
        .product()
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mismatches = 0;
    let mut instances = 0;
    // Hand instance: censor-KM drops only at 2, by half.
    let g = CensoringKm::fit(&Outcomes { times: &[1.0, 2.0, 3.0], events: &[true, false, true] });
    if g.eval(1.5) != 1.0 || g.eval(2.0) != 0.5 || g.eval(5.0) != 0.5 {
        mismatches += 1;
    }
    for _ in 0..500 {
        let n = rng.random_range(1..=6);
        let times: Vec<f64> = (0..n).map(|_| rng.random_range(1..=6) as f64 * 0.5).collect();
        let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let risks: Vec<f64> = (0..n).map(|_| rng.random_range(0..=8) as f64 * 0.125).collect();
        let o = Outcomes { times: &times, events: &events };
        let g = CensoringKm::fit(&o);
        for &t in &[0.5, 1.0, 1.5, 2.25] {
            instances += 1;
            let ep = EvalPoint { t, dt: 1.0 };
            let end = t + 1.0;
            for s in [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0] {
                if g.eval(s) != brute_km(&times, &events, s) {
                    mismatches += 1;
                }
            }
            let (mut num, mut den) = (0usize, 0usize);
            for j in 0..n {
                for i in 0..n {
                    if events[j] && times[j] >= t && times[j] <= end && times[i] > times[j] {
                        den += 1;
                        num += usize::from(risks[i] > risks[j]);
                    }
                }
            }
            let c = (den > 0).then(|| num as f64 / den as f64);
            if c_index(&risks, &o, ep).unwrap() != c {
                mismatches += 1;
            }
            let bs: f64 = (0..n)
                .map(|i| {
                    let ev = if times[i] <= end && events[i] { risks[i].powi(2) } else { 0.0 };
                    let sv = if times[i] > end { (1.0 - risks[i]).powi(2) } else { 0.0 };
                    ev + sv
                })
                .sum::<f64>()
                / n as f64;
            if (brier(&risks, &o, ep).unwrap() - bs).abs() > 1e-15 {
                mismatches += 1;
            }
            let wbs: f64 = (0..n)
                .map(|i| {
                    let ev = if times[i] <= t && events[i] { risks[i].powi(2) / brute_km(&times, &events, times[i]) } else { 0.0 };
                    let sv = if times[i] >= t { (1.0 - risks[i]).powi(2) / brute_km(&times, &events, t) } else { 0.0 };
                    ev + sv
                })
                .sum::<f64>()
                / n as f64;
            let (got, excluded) = weighted_brier(&risks, &o, ep, &g, WbsThreshold::AtT).unwrap();
            if excluded == 0 && (got - wbs).abs() > 1e-12 * wbs.max(1.0) {
                mismatches += 1;
            }
            let w = |j: usize| if events[j] { 1.0 / brute_km(&times, &events, times[j]) } else { 0.0 };
            let (mut num, mut survivors, mut wsum) = (0.0, 0usize, 0.0);
            for j in 0..n {
                if times[j] >= t && times[j] <= end {
                    wsum += w(j);
                }
            }
            for i in 0..n {
                if times[i] > end {
                    survivors += 1;
                    for j in 0..n {
                        if times[j] >= t && times[j] <= end && risks[i] > risks[j] {
                            num += w(j);
                        }
                    }
                }
            }
            let auc = (survivors > 0 && wsum > 0.0).then(|| num / (survivors as f64 * wsum));
            match (auc_td(&risks, &o, ep, &g).unwrap(), auc) {
                (None, None) => {}
                (Some(a), Some(b)) if (a - b).abs() <= 1e-15 => {}
                _ => mismatches += 1,
            }
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} mismatches over {instances} instances with n <= 6"),
    )
}

fn criterion_10() -> Outcome {
    let ou: Vec<f64> = (0..5)
        .map(|s| {
            ou_hitting_dataset(&OuConfig { seed: s, keep_every: OU_KEEP_EVERY, ..OuConfig::default() })
                .unwrap()
                .dataset
                .censoring_rate()
        })
        .collect();
    let tumor: Vec<f64> = (0..5)
        .map(|s| {
            tumor_growth_dataset(&TumorConfig { seed: s, keep_every: TUMOR_KEEP_EVERY, ..TumorConfig::default() })
                .unwrap()
                .censoring_rate()
        })
        .collect();
    let hurst = 0.6;
    let sampler = FbmSampler::new(hurst, 11, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let samples = 20_000;
    let mut sq = vec![0.0; 11];
    for _ in 0..samples {
        for (acc, v) in sq.iter_mut().zip(sampler.sample(&mut rng)) {
            *acc += v * v;
        }
    }
    let fbm_err = sampler
        .times()
        .iter()
        .zip(&sq)
        .skip(1)
        .map(|(t, s)| (s / samples as f64 / t.powf(2.0 * hurst) - 1.0).abs())
        .fold(0.0, f64::max);
    let (ou_m, tu_m) = (mean(&ou), mean(&tumor));
    let ou_ok = (ou_m - 0.032).abs() <= 0.02;
    let tu_ok = (tu_m - 0.084).abs() <= 0.03;
    outcome(
        ou_ok && tu_ok && fbm_err < 0.05,
        format!(
            "OU censoring {:.1}% ({}), tumor {:.1}% ({}), fBm variance rel err {:.3}",
            100.0 * ou_m,
            if ou_ok { "in band" } else { "outside 3.2 +/- 2" },
            100.0 * tu_m,
            if tu_ok { "in band" } else { "outside 8.4 +/- 3" },
            fbm_err
        ),
    )
}

struct RunMetrics {
    c_index: f64,
    brier: f64,
    mixed: f64,
}

fn cv_run(train: &Dataset, test: &Dataset, method: Method, dt: f64, seed: u64) -> RunMetrics {
    let quad = QuadratureConfig::default();
    let pen = ElasticNetConfig { growth: 2.0, ..ElasticNetConfig::default() };
    let points = default_points(train, dt, 10).unwrap();
    let cv = cross_validate(train, method, &CvGrid::default(), &pen, &quad, &points, seed).unwrap();
    let pred = Predictor::new(IntensityParams::CoxSig(cv.fit.params), quad).unwrap();
    let rep = evaluate_model(&pred, test, &points, EvalOptions::default()).unwrap();
    RunMetrics {
        c_index: rep.averages.c_index.unwrap_or(f64::NAN),
        brier: rep.averages.brier.unwrap(),
        mixed: rep.averages.mixed.unwrap_or(f64::NAN),
    }
}

fn ou_split(seed: u64) -> (Dataset, Dataset) {
    let data = ou_hitting_dataset(&OuConfig { seed, keep_every: OU_KEEP_EVERY, ..OuConfig::default() })
        .unwrap()
        .dataset;
    let (tr, te) = split_indices(data.len(), 0.8, seed);
    (data.subset(&tr), data.subset(&te))
}

fn main() {
    println!("acceptance run");
    let mut passed = 0;
    let mut total = 0;
    let mut tally = |ok: Option<bool>| {
        if let Some(ok) = ok {
            total += 1;
            passed += usize::from(ok);
        }
    };
    tally(report(1, "signature exactness", criterion_1));
    tally(report(2, "chen identity and shuffle", criterion_2));
    tally(report(3, "factorial decay", criterion_3));
    tally(report(4, "linearization", criterion_4));
    tally(report(5, "discretization bound", criterion_5));
    tally(report(6, "gradient checks", criterion_6));
    tally(report(7, "divergences", criterion_7));
    tally(report(8, "likelihood decomposition", criterion_8));
    tally(report(9, "metric oracles", criterion_9));
    tally(report(10, "simulators", criterion_10));

    let start = Instant::now();
    let mut cox = Vec::new();
    let mut baseline = Vec::new();
    let ou_runs = if selected(11) || selected(13) { RUNS } else { 0 };
    for seed in 0..ou_runs {
        let (train, test) = ou_split(seed);
        cox.push(cv_run(&train, &test, Method::CoxSig, OU_DELTA_T, seed));
        baseline.push(cv_run(&train, &test, Method::CoxBaseline, OU_DELTA_T, seed));
    }
    let ou_time = start.elapsed().as_secs_f64();
    tally(report(11, "OU experiment", || {
        let c = mean(&cox.iter().map(|r| r.c_index).collect::<Vec<_>>());
        let ibs = mean(&cox.iter().map(|r| r.brier).collect::<Vec<_>>());
        outcome(
            c >= 0.80 && ibs <= 0.12,
            format!("C-index {c:.3}, IBS {ibs:.3} over {RUNS} runs ({ou_time:.0} s including baseline fits)"),
        )
    }));
    tally(report(12, "tumor experiment direction", || {
        let mut plain = Vec::new();
        let mut plus = Vec::new();
        for seed in 0..RUNS {
            let data = tumor_growth_dataset(&TumorConfig {
                seed,
                keep_every: TUMOR_KEEP_EVERY,
                ..TumorConfig::default()
            })
            .unwrap();
            let (tr, te) = split_indices(data.len(), 0.8, seed);
            let (train, test) = (data.subset(&tr), data.subset(&te));
            plain.push(cv_run(&train, &test, Method::CoxSig, TUMOR_DELTA_T, seed).c_index);
            plus.push(cv_run(&train, &test, Method::CoxSigPlus, TUMOR_DELTA_T, seed).c_index);
        }
        let (a, b) = (mean(&plain), mean(&plus));
        outcome(b > a && b >= 0.70, format!("CoxSig+ {b:.3} vs CoxSig {a:.3}"))
    }));
    tally(report(13, "baseline ordering", || {
        let a = mean(&cox.iter().map(|r| r.mixed).collect::<Vec<_>>());
        let b = mean(&baseline.iter().map(|r| r.mixed).collect::<Vec<_>>());
        outcome(a >= b, format!("mixed metric CoxSig {a:.3} vs baseline {b:.3}"))
    }));
    tally(report(14, "NCDE smoke", || {
        let (train, test) = ou_split(0);
        let fit = fit_ncde(&train, &AdamConfig::default(), 0).unwrap();
        let loss = &fit.epoch_loss;
        let finite = loss.iter().all(|l| l.is_finite());
        let pred = Predictor::new(IntensityParams::Ncde(fit.params), QuadratureConfig::default()).unwrap();
        let points = default_points(&train, OU_DELTA_T, 10).unwrap();
        let rep = evaluate_model(&pred, &test, &points, EvalOptions::default()).unwrap();
        outcome(
            loss.len() == 50 && finite && loss[49] < loss[0],
            format!(
                "{} epochs, loss {:.4} -> {:.4}, test C-index {:.3}",
                loss.len(),
                loss[0],
                loss[loss.len() - 1],
                rep.averages.c_index.unwrap_or(f64::NAN)
            ),
        )
    }));
    tally(report(15, "well-specified recovery", || {
        let quad = QuadratureConfig::default();
        let pen = ElasticNetConfig { growth: 2.0, ..ElasticNetConfig::default() }.with_etas(0.0, 0.0);
        let mut tv_by_n = Vec::new();
        let mut nll_gap = Vec::new();
        for n in [100, 200, 400] {
            let mut tvs = Vec::new();
            for seed in 0..5u64 {
                let cfg = ThinningConfig { n, seed: 15 + 100 * seed, ..ThinningConfig::default() };
                let data = thinning_dataset(&cfg).unwrap();
                let fit = fit_coxsig(&data, 2, false, &pen, &quad).unwrap();
                let truth = IntensityParams::CoxSig(cfg.truth.clone());
                let model = IntensityParams::CoxSig(fit.params);
                let t = model_curves(&truth, &data).unwrap();
                let m = model_curves(&model, &data).unwrap();
                tvs.push(empirical_divergences(&t, &m, &data, 4).unwrap().tv);
                if n == 400 {
                    nll_gap.push(
                        neg_log_likelihood(&model, &data, &quad).unwrap()
                            - neg_log_likelihood(&truth, &data, &quad).unwrap(),
                    );
                }
            }
            tv_by_n.push(mean(&tvs));
        }
        let monotone = tv_by_n.windows(2).all(|w| w[1] <= w[0]);
        let gap = mean(&nll_gap);
        outcome(
            monotone && gap <= 0.05,
            format!(
                "TV by n {:?}; NLL(fit) - NLL(truth) at n=400 {gap:.4}",
                tv_by_n.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
            ),
        )
    }));
    println!("acceptance: {passed}/{total} criteria pass");
}
