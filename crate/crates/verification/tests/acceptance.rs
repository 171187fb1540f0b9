//! End-to-end acceptance run: twelve criteria, one PASS/FAIL line each.
//! Exits non-zero if any criterion fails.

use std::time::Instant;

use eir_eq::experiments::{
    check_sweep_narratives, reproduce_table, NarrativeCheck, RowComparison, TableComparison, TableOverrides,
    FER_FALLBACKS, TWO_GEN_FER, TWO_GEN_K,
};
use eir_eq::market::presets::{single_generator, two_generator};
use eir_eq::market::{MarketDesign, MarketInstance};
use eir_eq::model::{assemble_emo, assemble_risk_neutral, MarketModel, RiskForm};
use eir_eq::oracle::{check_equilibrium, money_balance, GAP_TOL, MONEY_TOL};
use eir_eq::properties::{random_instance, run_suite, Suite, SuiteSummary, PRICE_SPREAD_TOL};
use eir_eq::solver::{multistart, solve_model, SolveOptions};

const SEEDS: u64 = 100;

/// Converged points gathered from every criterion for the final certification pass.
#[derive(Default)]
struct Ledger {
    checked: usize,
    failures: Vec<String>,
}

impl Ledger {
    fn certify(&mut self, label: &str, model: &MarketModel, z: &[f64]) {
        self.checked += 1;
        let gap = check_equilibrium(model, z).map(|r| (r.max_gap, r.certified));
        let money = money_balance(model, z).map(|m| m.iter().fold(0.0_f64, |a, x| a.max(x.abs())));
        match (gap, money) {
            (Ok((g, cert)), Ok(m)) if cert && g <= GAP_TOL && m <= MONEY_TOL => {}
            (g, m) => self.failures.push(format!("{label}: gap {g:?}, money {m:?}")),
        }
    }

    fn table_rows(&mut self, t: &TableComparison) {
        for r in &t.rows {
            if r.row.converged() {
                self.checked += 1;
                if !r.row.certified {
                    self.failures
                        .push(format!("table {} {}: gap {:e}, money {:e}", t.id, r.label, r.max_gap, r.row.money_residual));
                }
            }
        }
    }

    fn narrative_rows(&mut self, n: &NarrativeCheck) {
        for r in n.alpha_sweep.rows.iter().chain(&n.strike_sweep.rows) {
            if r.converged() {
                self.checked += 1;
                if !r.certified {
                    self.failures.push(format!(
                        "sweep FER {} {} at {}: gap {:e}, money {:e}",
                        n.fer, r.design, r.value, r.max_gap, r.money_residual
                    ));
                }
            }
        }
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: u32, name: &str, started: Instant, o: &Outcome) {
    println!(
        "criterion {n:>2} {:<4} {name} ({:.1}s)\n             {}",
        if o.pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64(),
        o.detail.replace('\n', "\n             ")
    );
}

fn table_detail(t: &TableComparison) -> String {
    let mut lines = Vec::new();
    for r in &t.rows {
        lines.push(row_detail(r));
    }
    lines.join("\n")
}

fn row_detail(r: &RowComparison) -> String {
    let cells: Vec<String> = r
        .cells
        .iter()
        .filter(|c| c.enforced)
        .map(|c| format!("{}={:.4}{}", c.column, c.computed, if c.within { "" } else { "(!)" }))
        .collect();
    format!(
        "{} {}: {} certified={}",
        if r.pass { "ok  " } else { "MISS" },
        r.label,
        cells.join(" "),
        r.certified
    )
}

fn suite_detail(s: &SuiteSummary) -> String {
    let mut d = format!(
        "{}: passed {}, failed {}, inconclusive {}",
        s.suite.property(),
        s.passed,
        s.failed,
        s.inconclusive
    );
    for r in s.results.iter().filter(|r| !r.passed()).take(3) {
        d.push_str(&format!("\n  {r}"));
    }
    d
}

fn table(id: u32, opts: &SolveOptions, ledger: &mut Ledger) -> TableComparison {
    let t = reproduce_table(id, &TableOverrides::default(), opts).expect("known table");
    ledger.table_rows(&t);
    t
}

fn criterion_3(opts: &SolveOptions, ledger: &mut Ledger) -> Outcome {
    let t = table(4, opts, ledger);
    let enforced_ok = t.rows[1..].iter().all(|r| r.pass);
    let r = &t.rows[0];
    let v = &r.row;
    let z = |c: &str| r.cells.iter().find(|x| x.column == c).unwrap().computed;
    let risk_neutral_ok = v.da_premium.abs() <= 1e-7
        && v.total_e.abs() <= 1e-6
        && v.total_v_da.abs() <= 1e-6
        && v.total_g_da + v.total_e >= 90.0 - 1e-6
        && r.error <= 1e-8
        && r.certified
        && r.max_gap <= GAP_TOL;
    Outcome {
        pass: enforced_ok && risk_neutral_ok,
        detail: format!(
            "{}\nalpha=1: rho={:.2e} e={:.2e} V={:.2e} g_da+e={:.4} error={:.1e} gap={:.1e}; profits ({:.2}, {:.2}), published (263, -263) not enforced",
            table_detail(&t),
            v.da_premium,
            v.total_e,
            v.total_v_da,
            v.total_g_da + v.total_e,
            r.error,
            r.max_gap,
            z("z1"),
            z("z2")
        ),
    }
}

fn suite(s: Suite, opts: &SolveOptions) -> SuiteSummary {
    run_suite(s, 0..SEEDS, opts)
}

/// Certifies the points the property suites solve: each random EMIR
/// instance in risk-neutral form and its energy-only counterpart.
fn certify_random_instances(opts: &SolveOptions, ledger: &mut Ledger) {
    for seed in 0..SEEDS {
        let inst = random_instance(seed);
        let emo = inst.with_design(MarketDesign::Emo);
        for (label, model) in [
            ("emir", assemble_risk_neutral(&inst)),
            ("emo", assemble_emo(&emo)),
        ] {
            let model = model.expect("valid random instance");
            let rep = solve_model(&model, opts).expect("solver runs");
            if rep.converged() {
                ledger.certify(&format!("seed {seed} {label}"), &model, &rep.point);
            }
        }
    }
}

fn prices(model: &MarketModel, z: &[f64]) -> Vec<f64> {
    let v = model.view(z);
    let mut p = vec![v.lam_da(), v.rho(), v.lam_lf()];
    p.extend(v.lam_rt_all());
    p
}

fn criterion_7(opts: &SolveOptions, ledger: &mut Ledger) -> Outcome {
    let cases: Vec<(&str, MarketInstance)> = {
        let mut c = Vec::new();
        for alpha in [1.0, 0.6] {
            for d in [
                MarketDesign::Emo,
                MarketDesign::Emir { k: 12.0, fer: 90.0 },
                MarketDesign::EmoLf { fer: 90.0 },
            ] {
                c.push(("single", single_generator(d).with_generator_alpha(alpha)));
            }
            for d in [
                MarketDesign::Emo,
                MarketDesign::Emir {
                    k: TWO_GEN_K,
                    fer: TWO_GEN_FER,
                },
                MarketDesign::EmoLf { fer: TWO_GEN_FER },
            ] {
                c.push(("two", two_generator(d).with_generator_alpha(alpha)));
            }
        }
        c
    };
    let mut pass = true;
    let mut lines = Vec::new();
    for (name, inst) in cases {
        let form = if inst.is_risk_neutral() { RiskForm::Neutral } else { RiskForm::Cvar };
        let model = MarketModel::assemble(&inst, form).expect("valid preset");
        let runs = multistart(&model, opts, 20);
        let conv: Vec<&Vec<f64>> = runs.iter().filter(|r| r.converged()).map(|r| &r.point).collect();
        for (k, z) in conv.iter().enumerate() {
            ledger.certify(&format!("{name} {} restart {k}", inst.design), &model, z);
        }
        let all: Vec<Vec<f64>> = conv.iter().map(|z| prices(&model, z)).collect();
        let spread = if all.is_empty() {
            f64::INFINITY
        } else {
            (0..all[0].len())
                .map(|j| {
                    let lo = all.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
                    let hi = all.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
                    hi - lo
                })
                .fold(0.0, f64::max)
        };
        let ok = conv.len() >= 2 && spread <= PRICE_SPREAD_TOL;
        pass &= ok;
        lines.push(format!(
            "{} {name}-generator {} alpha={}: {}/20 converged, max price spread {spread:.3e}",
            if ok { "ok  " } else { "MISS" },
            inst.design,
            inst.generators[0].alpha,
            conv.len()
        ));
    }
    Outcome {
        pass,
        detail: lines.join("\n"),
    }
}

fn criterion_10(opts: &SolveOptions, ledger: &mut Ledger) -> Outcome {
    let at_default = check_sweep_narratives(TWO_GEN_FER, opts, None).expect("sweep runs");
    ledger.narrative_rows(&at_default);
    let describe = |n: &NarrativeCheck| {
        format!(
            "FER {}: (a) energy-only no fuel {} (b) fuel by alpha {} (c) fuel by strike {} (d) awards monotone {}",
            n.fer, n.emo_no_fuel, n.emir_fuel_by_alpha, n.emir_fuel_by_strike, n.awards_monotone
        )
    };
    let mut lines = vec![describe(&at_default)];
    let fer_relative_ok = |n: &NarrativeCheck| n.emir_fuel_by_alpha && n.emir_fuel_by_strike;
    let mut fer_ok = fer_relative_ok(&at_default);
    let mut best = (at_default.score(), at_default.fer);
    if !fer_ok {
        for fer in FER_FALLBACKS {
            let n = check_sweep_narratives(fer, opts, None).expect("sweep runs");
            ledger.narrative_rows(&n);
            lines.push(describe(&n));
            if n.score() > best.0 {
                best = (n.score(), fer);
            }
            fer_ok |= fer_relative_ok(&n);
        }
        lines.push(format!("best-matching FER {} ({} of 4 narratives)", best.1, best.0));
    }
    let v: Vec<String> = at_default
        .alpha_sweep
        .rows
        .iter()
        .map(|r| format!("{}@{}={:.2}", r.design, r.value, r.total_v_da))
        .collect();
    lines.push(format!("V_da at FER 90: {}", v.join(" ")));
    Outcome {
        pass: at_default.emo_no_fuel && at_default.awards_monotone && fer_ok,
        detail: lines.join("\n"),
    }
}

fn criterion_11(opts: &SolveOptions, ledger: &mut Ledger) -> Outcome {
    let t10 = table(10, opts, ledger);
    let t9 = table(9, opts, ledger);
    let peak = 150.0;
    let mut above = true;
    let mut lines = vec![table_detail(&t10)];
    for r in &t9.rows {
        if r.label.ends_with("alpha_demand=1") {
            continue;
        }
        let ok = r.row.converged() && r.row.d_da > peak;
        above &= ok;
        lines.push(format!("{} {}: d_da={:.4} > {peak}", if ok { "ok  " } else { "MISS" }, r.label, r.row.d_da));
    }
    Outcome {
        pass: t10.pass && above,
        detail: lines.join("\n"),
    }
}

fn main() {
    let opts = SolveOptions::default();
    let mut ledger = Ledger::default();
    let mut results = Vec::new();
    let mut record = |n: u32, name: &str, started: Instant, o: Outcome| {
        report(n, name, started, &o);
        results.push((n, o.pass));
    };

    let t = Instant::now();
    let t5 = table(5, &opts, &mut ledger);
    record(1, "energy-only single generator table", t, Outcome { pass: t5.pass, detail: table_detail(&t5) });

    let t = Instant::now();
    let t11 = table(11, &opts, &mut ledger);
    record(2, "load-forecast single generator table", t, Outcome { pass: t11.pass, detail: table_detail(&t11) });

    let t = Instant::now();
    let o = criterion_3(&opts, &mut ledger);
    record(3, "reserve single generator table, risk sweep", t, o);

    let t = Instant::now();
    let t6 = table(6, &opts, &mut ledger);
    record(4, "reserve single generator table, strike sweep", t, Outcome { pass: t6.pass, detail: table_detail(&t6) });

    let t = Instant::now();
    let s = suite(Suite::ReservePriceZero, &opts);
    record(5, "zero reserve price, risk neutral", t, Outcome { pass: s.all_passed() && s.passed == SEEDS as usize, detail: suite_detail(&s) });

    let t = Instant::now();
    let s = suite(Suite::ReserveToEnergyOnly, &opts);
    record(6, "reserve equilibria map to energy-only", t, Outcome { pass: s.all_passed() && s.passed == SEEDS as usize, detail: suite_detail(&s) });

    let t = Instant::now();
    let o = criterion_7(&opts, &mut ledger);
    record(7, "unique prices across 20 restarts", t, o);

    let t = Instant::now();
    let l1 = suite(Suite::CheapSpotFuel, &opts);
    let l2 = suite(Suite::LowMarginFuel, &opts);
    let mp = suite(Suite::MarginalPricing, &opts);
    let pass = [&l1, &l2, &mp].iter().all(|s| s.all_passed());
    let detail = [&l1, &l2, &mp].iter().map(|s| suite_detail(s)).collect::<Vec<_>>().join("\n");
    record(8, "advance-fuel lemmas and marginal pricing", t, Outcome { pass, detail });

    let t = Instant::now();
    let s = suite(Suite::WelfareEquivalence, &opts);
    record(9, "expected-cost LP equivalence", t, Outcome { pass: s.all_passed(), detail: suite_detail(&s) });

    let t = Instant::now();
    let o = criterion_10(&opts, &mut ledger);
    record(10, "two-generator sweep narratives", t, o);

    let t = Instant::now();
    let o = criterion_11(&opts, &mut ledger);
    record(11, "risk-averse demand day-ahead purchases", t, o);

    let t = Instant::now();
    certify_random_instances(&opts, &mut ledger);
    let mut detail = format!("{} converged solutions checked, {} failed", ledger.checked, ledger.failures.len());
    for f in ledger.failures.iter().take(10) {
        detail.push_str(&format!("\n  {f}"));
    }
    record(12, "every converged solution certified", t, Outcome { pass: ledger.failures.is_empty(), detail });

    let passed = results.iter().filter(|(_, p)| *p).count();
    println!("\nacceptance: {passed} of {} criteria pass", results.len());
    for (n, p) in &results {
        println!("criterion {n:>2}: {}", if *p { "PASS" } else { "FAIL" });
    }
    if passed != results.len() {
        std::process::exit(1);
    }
}
