//! On-demand property batteries for the loss module and the impairment
//! sampler, plus the experiment-level acceptance checks on a report.

use augrec_core::eval::EvalReport;
use augrec_core::experiment::{ROW_ABLATION, ROW_BASELINE, ROW_FULL, ROW_IMPAIRED_TARGET};
use augrec_core::loss::{self, TruthPosteriorMap};
use augrec_core::toy::sample_impaired_frame;
use augrec_core::HyperParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Gamma};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Softmax over a random affine map of each frame; the reference-label
/// posterior and its vector-Jacobian product are written out by hand.
#[derive(Debug, Clone)]
pub struct AffineSoftmaxCritic {
    pub classes: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub labels: Vec<usize>,
}

impl AffineSoftmaxCritic {
    pub fn random(rng: &mut impl Rng, classes: usize, bins: usize, frames: usize) -> Self {
        Self {
            classes,
            weight: (0..classes * bins).map(|_| rng.random_range(-1.0..1.0)).collect(),
            bias: (0..classes).map(|_| rng.random_range(-0.5..0.5)).collect(),
            labels: (0..frames).map(|_| rng.random_range(0..classes)).collect(),
        }
    }

    fn probs(&self, frame: &[f64]) -> Vec<f64> {
        let bins = frame.len();
        let z: Vec<f64> = (0..self.classes)
            .map(|k| self.bias[k] + (0..bins).map(|b| self.weight[k * bins + b] * frame[b]).sum::<f64>())
            .collect();
        let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }
}

impl TruthPosteriorMap for AffineSoftmaxCritic {
    fn truth_posteriors(&self, y: &[f64], bins: usize) -> augrec_core::Result<Vec<f64>> {
        Ok(y.chunks(bins)
            .zip(&self.labels)
            .map(|(f, &l)| self.probs(f)[l])
            .collect())
    }

    fn pullback(&self, y: &[f64], bins: usize, d_p: &[f64]) -> augrec_core::Result<Vec<f64>> {
        let mut out = vec![0.0; y.len()];
        for (t, f) in y.chunks(bins).enumerate() {
            let p = self.probs(f);
            let l = self.labels[t];
            for k in 0..self.classes {
                let dz = d_p[t] * p[l] * (f64::from(u8::from(k == l)) - p[k]);
                for b in 0..bins {
                    out[t * bins + b] += dz * self.weight[k * bins + b];
                }
            }
        }
        Ok(out)
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn central_difference(f: &dyn Fn(&[f64]) -> f64, y: &[f64], h: f64) -> Vec<f64> {
    let mut y = y.to_vec();
    (0..y.len())
        .map(|i| {
            let keep = y[i];
            y[i] = keep + h;
            let up = f(&y);
            y[i] = keep - h;
            let down = f(&y);
            y[i] = keep;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// −∇ log p of the impairment density equals (∇L_rec + β∇L_reg)/β when
/// σ² = β/2, checked elementwise at random configurations.
pub fn check_mle_equivalence(configs: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..configs {
        let bins = rng.random_range(2..=24);
        let frames = rng.random_range(1..=6);
        let beta: f64 = 10f64.powf(rng.random_range(-3.0..1.0));
        let lambda: f64 = rng.random_range(0.5..40.0);
        let sigma2 = beta / 2.0;
        let y_star: Vec<f64> = (0..frames * bins).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = y_star.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
        let p_star: Vec<f64> = (0..frames).map(|_| rng.random::<f64>()).collect();
        let w = loss::severity_weights(&p_star, lambda).expect("valid");
        let g_rec = loss::reconstruction_grad(&y_star, &y, bins, None).expect("valid");
        let g_reg = loss::regularization_grad(&y_star, &y, bins, &w, 1e-8, None).expect("valid");
        for t in 0..frames {
            let a = &y_star[t * bins..(t + 1) * bins];
            let b = &y[t * bins..(t + 1) * bins];
            let alpha = (-lambda * p_star[t]).exp();
            let r2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
            for i in 0..bins {
                // d/dy [α ln r − r²/(2σ²)] = α (y − y*)/r² − (y − y*)/σ²
                let d = b[i] - a[i];
                let neg_grad_log_p = d / sigma2 - alpha * d / r2;
                let j = t * bins + i;
                let lhs = (g_rec[j] + beta * g_reg[j]) / beta;
                let err = (lhs - neg_grad_log_p).abs() / neg_grad_log_p.abs().max(1.0);
                worst = worst.max(err);
            }
        }
    }
    Check::new(
        "mle-equivalence",
        worst <= 1e-9,
        format!("{configs} configs, max elementwise error {worst:.3e} (tol 1e-9)"),
    )
}

/// Analytic gradients of every loss term against central differences.
pub fn check_gradients(points: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-4;
    let mut worst = [0.0f64; 4];
    for _ in 0..points {
        let bins = rng.random_range(2..=8);
        let frames = rng.random_range(1..=5);
        let classes = rng.random_range(2..=5);
        let y_star: Vec<f64> = (0..frames * bins).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = y_star.iter().map(|v| v + rng.random_range(-0.8..0.8)).collect();
        let p_star: Vec<f64> = (0..frames).map(|_| rng.random::<f64>()).collect();
        let critic = AffineSoftmaxCritic::random(&mut rng, classes, bins, frames);
        let hp = HyperParams {
            beta: rng.random_range(0.01..1.0),
            gamma: rng.random_range(0.01..1.0),
            lambda_: rng.random_range(1.0..30.0),
            ..HyperParams::default()
        };
        let w = loss::severity_weights(&p_star, hp.lambda_).expect("valid");

        let f_rec = |v: &[f64]| loss::reconstruction_loss(&y_star, v, bins).expect("valid");
        let g = loss::reconstruction_grad(&y_star, &y, bins, None).expect("valid");
        worst[0] = worst[0].max(rel_err(&g, &central_difference(&f_rec, &y, h)));

        let f_reg = |v: &[f64]| loss::regularization_loss(&y_star, v, bins, &w, hp.eps_floor).expect("valid");
        let g = loss::regularization_grad(&y_star, &y, bins, &w, hp.eps_floor, None).expect("valid");
        worst[1] = worst[1].max(rel_err(&g, &central_difference(&f_reg, &y, h)));

        let f_con = |v: &[f64]| {
            let p = critic.truth_posteriors(v, bins).expect("valid");
            loss::consistency_loss(&p, hp.eps_floor).expect("valid")
        };
        let p = critic.truth_posteriors(&y, bins).expect("valid");
        let dp = loss::consistency_grad_wrt_posteriors(&p, hp.eps_floor, None).expect("valid");
        let g = critic.pullback(&y, bins, &dp).expect("valid");
        worst[2] = worst[2].max(rel_err(&g, &central_difference(&f_con, &y, h)));

        let f_tot = |v: &[f64]| {
            let p = critic.truth_posteriors(v, bins).expect("valid");
            loss::total_loss(&y_star, v, bins, &p_star, &p, &hp).expect("valid").l_total
        };
        let (_, g) = loss::loss_gradient(&y_star, &y, bins, &p_star, &critic, &hp, None).expect("valid");
        worst[3] = worst[3].max(rel_err(&g, &central_difference(&f_tot, &y, h)));
    }
    ["l-rec", "l-reg", "l-consis", "l-total"]
        .iter()
        .zip(worst)
        .map(|(name, w)| {
            Check::new(
                &format!("gradient-{name}"),
                w <= 1e-4,
                format!("{points} points, max relative error {w:.3e} (tol 1e-4, step 1e-4)"),
            )
        })
        .collect()
}

/// Asymptotic Kolmogorov critical value at significance 0.01.
pub fn ks_critical_001(n: usize) -> f64 {
    (-(0.01f64 / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Moment and Kolmogorov–Smirnov checks of r² for each α.
pub fn check_sampler(alphas: &[f64], bins: usize, samples: usize, sigma2: f64, seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    for &alpha in alphas {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ alpha.to_bits());
        let clean: Vec<f64> = (0..bins).map(|b| 0.1 * b as f64).collect();
        let mut r2: Vec<f64> = (0..samples)
            .map(|_| {
                let f = sample_impaired_frame(&clean, alpha, sigma2, &mut rng).expect("valid");
                f.iter().zip(&clean).map(|(a, b)| (a - b) * (a - b)).sum()
            })
            .collect();
        let expect = (alpha + bins as f64) * sigma2;
        let mean = r2.iter().sum::<f64>() / samples as f64;
        let rel = (mean - expect).abs() / expect;
        out.push(Check::new(
            &format!("sampler-moment-alpha{alpha}"),
            rel <= 0.02,
            format!("E[r²] {mean:.6} vs {expect:.6}, relative gap {rel:.4} (tol 0.02)"),
        ));
        let law = Gamma::new((alpha + bins as f64) / 2.0, 1.0 / (2.0 * sigma2)).expect("valid gamma");
        r2.sort_by(f64::total_cmp);
        let n = samples as f64;
        let d = r2
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = law.cdf(x);
                (c - i as f64 / n).abs().max((( i + 1) as f64 / n - c).abs())
            })
            .fold(0.0, f64::max);
        let crit = ks_critical_001(samples);
        out.push(Check::new(
            &format!("sampler-ks-alpha{alpha}"),
            d < crit,
            format!("KS distance {d:.5} vs critical {crit:.5} at 0.01"),
        ));
    }
    out
}

/// Criteria 1–3 at their stated sizes.
pub fn loss_battery(seed: u64) -> Vec<Check> {
    let mut out = vec![check_mle_equivalence(100, seed)];
    out.extend(check_gradients(100, seed.wrapping_add(1)));
    out.extend(check_sampler(&[0.0, 1.0, 5.0, 25.0], 20, 100_000, 0.025, seed.wrapping_add(2)));
    out
}

fn row<'a>(report: &'a EvalReport, name: &str) -> Result<&'a augrec_core::eval::EvalRow, String> {
    report.row(name).ok_or_else(|| format!("report has no row {name}"))
}

/// Impaired-set FER orderings and the clean-FER guard.
pub fn articulation_repair(report: &EvalReport) -> Check {
    let inner = || -> Result<(bool, String), String> {
        let rec = row(report, ROW_IMPAIRED_TARGET)?;
        let base = row(report, ROW_BASELINE)?;
        let abl = row(report, ROW_ABLATION)?;
        let full = row(report, ROW_FULL)?;
        let (r, b, a, f) = (rec.fer_impaired, base.fer_impaired, abl.fer_impaired, full.fer_impaired);
        let conds = [
            ("recordings>=0.50", r >= 0.5),
            ("|baseline-recordings|<=0.15", (b - r).abs() <= 0.15),
            ("full<=0.5*baseline", f <= 0.5 * b),
            (
                "ablation between or within 0.02 of full",
                (a >= f.min(b) && a <= f.max(b)) || (a - f).abs() <= 0.02,
            ),
            ("|clean full-baseline|<=0.03", (full.fer_clean - base.fer_clean).abs() <= 0.03),
        ];
        let failed: Vec<&str> = conds.iter().filter(|c| !c.1).map(|c| c.0).collect();
        let detail = format!(
            "impaired FER rec {r:.4} base {b:.4} abl {a:.4} full {f:.4}; clean FER base {:.4} full {:.4}{}",
            base.fer_clean,
            full.fer_clean,
            if failed.is_empty() { String::new() } else { format!("; violated: {}", failed.join(", ")) }
        );
        Ok((failed.is_empty(), detail))
    };
    match inner() {
        Ok((ok, detail)) => Check::new("articulation-repair", ok, detail),
        Err(e) => Check::new("articulation-repair", false, e),
    }
}

/// Full-system similarity near the baseline's and closest to the target.
pub fn speaker_preservation(report: &EvalReport) -> Check {
    let inner = || -> Result<(bool, String), String> {
        let base = row(report, ROW_BASELINE)?;
        let full = row(report, ROW_FULL)?;
        let target = report.target_speaker;
        let other = full
            .similarity_by_speaker
            .iter()
            .enumerate()
            .filter(|(s, _)| *s != target)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let ok = (full.similarity - base.similarity).abs() <= 0.05 && full.similarity > other;
        Ok((
            ok,
            format!(
                "similarity full {:.4} baseline {:.4} best non-target {other:.4}",
                full.similarity, base.similarity
            ),
        ))
    };
    match inner() {
        Ok((ok, detail)) => Check::new("speaker-preservation", ok, detail),
        Err(e) => Check::new("speaker-preservation", false, e),
    }
}
