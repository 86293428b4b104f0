// Pilot runs for checking table reproduction before the full suite.
use sfa_core::lasso::PenaltyRule;
use sfa_core::model::Stage2;
use sfa_core::montecarlo::{run_design, McDesign, McEstimator, McKind};
use sfa_core::selectors::SelectorKind;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("t1");
    let reps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);

    match which {
        "t1" => {
            // Table 1/2 cells: OLS skewness and wrong-skew counts.
            for (n, c) in [(400usize, 0.0), (400, 0.9), (1600, 0.5), (100, 0.9)] {
                let t = Instant::now();
                let d = McDesign {
                    kind: McKind::IrrelevantZ { n, c },
                    reps,
                    base_seed: 1000,
                    estimators: vec![McEstimator::Ols],
                    keep_records: false,
                };
                let s = run_design(&d).unwrap();
                let (_, st) = &s.cells[0];
                println!(
                    "OLS n={n} c={c}: skew {:.4} (se {:.4}), wrong {}/{} [{:.1?}]",
                    st.mean_skewness,
                    st.skewness_se,
                    st.wrong_skew_count,
                    st.completed,
                    t.elapsed()
                );
            }
        }
        "t3" => {
            // Table 3/4 cells: LASSO(cv1se) skewness.
            for (n, c) in [(400usize, 0.9), (400, 0.5), (100, 0.9)] {
                let t = Instant::now();
                let d = McDesign {
                    kind: McKind::IrrelevantZ { n, c },
                    reps,
                    base_seed: 2000,
                    estimators: vec![McEstimator::Lasso(PenaltyRule::Cv1se)],
                    keep_records: false,
                };
                let s = run_design(&d).unwrap();
                let (_, st) = &s.cells[0];
                println!(
                    "LASSO n={n} c={c}: skew {:.4} (se {:.4}), wrong {}/{}, mean |S| {:.2} [{:.1?}]",
                    st.mean_skewness,
                    st.skewness_se,
                    st.wrong_skew_count,
                    st.completed,
                    st.mean_num_selected.unwrap_or(f64::NAN),
                    t.elapsed()
                );
            }
        }
        "belloni" => {
            let t = Instant::now();
            let d = McDesign {
                kind: McKind::BelloniD1 { n: 100 },
                reps,
                base_seed: 3000,
                estimators: vec![
                    McEstimator::Chain {
                        selector: SelectorKind::Psl,
                        stage2: Stage2::Cols,
                        rule: PenaltyRule::PlugIn,
                    },
                    McEstimator::Chain {
                        selector: SelectorKind::Pdl,
                        stage2: Stage2::Cols,
                        rule: PenaltyRule::PlugIn,
                    },
                ],
                keep_records: true,
            };
            let s = run_design(&d).unwrap();
            for (key, st) in &s.cells {
                println!(
                    "{}: wrong {}/{} (fail {}), mean |S| {:.2}",
                    key.estimator,
                    st.wrong_skew_count,
                    st.completed,
                    st.failures,
                    st.mean_num_selected.unwrap_or(f64::NAN)
                );
            }
            // Standardized beta distributions.
            use sfa_core::montecarlo::{standardized_dist, McParameter};
            let truth = d.kind.truth();
            for est in ["PSL-COLS", "PDL-COLS"] {
                let sd = standardized_dist(&s.records, est, McParameter::Beta(0), (truth.0, &truth.1))
                    .unwrap();
                println!("{est}: std beta mean {:.3} sd {:.3}", sd.mean, sd.sd);
            }
            println!("[{:.1?}]", t.elapsed());
        }
        "belloni-mle" => {
            let t = Instant::now();
            let d = McDesign {
                kind: McKind::BelloniD1 { n: 100 },
                reps,
                base_seed: 3000,
                estimators: vec![
                    McEstimator::Chain {
                        selector: SelectorKind::Psl,
                        stage2: Stage2::Mle,
                        rule: PenaltyRule::PlugIn,
                    },
                    McEstimator::Chain {
                        selector: SelectorKind::Pdl,
                        stage2: Stage2::Mle,
                        rule: PenaltyRule::PlugIn,
                    },
                ],
                keep_records: true,
            };
            let s = run_design(&d).unwrap();
            for (key, st) in &s.cells {
                println!(
                    "{}: wrong {}/{} (fail {}), mean |S| {:.2}, full-eff {} mean-eff {:.3}",
                    key.estimator,
                    st.wrong_skew_count,
                    st.completed,
                    st.failures,
                    st.mean_num_selected.unwrap_or(f64::NAN),
                    st.full_efficiency_count,
                    st.mean_eff.unwrap_or(f64::NAN)
                );
            }
            use sfa_core::montecarlo::{standardized_dist, McParameter};
            let truth = d.kind.truth();
            for est in ["PSL-MLE", "PDL-MLE"] {
                let sd = standardized_dist(&s.records, est, McParameter::Beta(0), (truth.0, &truth.1))
                    .unwrap();
                println!("{est}: std beta mean {:.3} sd {:.3}", sd.mean, sd.sd);
            }
            println!("[{:.1?}]", t.elapsed());
        }
        other => eprintln!("unknown pilot {other}"),
    }
}
