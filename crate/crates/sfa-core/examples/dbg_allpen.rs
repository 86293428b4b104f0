// Hypothesis test: Tables 3-4 with the fully penalized LASSO variant.
use sfa_core::cols::residual_moments;
use sfa_core::lasso::{lasso_residuals, solve_plan, PenaltyPlan, PenaltyRule};
use sfa_core::montecarlo::gen_irrelevant_z;
use rayon::prelude::*;
use std::time::Instant;

fn main() {
    let reps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    for (n, c) in [(400usize, 0.9), (400, 0.5), (100, 0.9), (100, 0.5)] {
        let t = Instant::now();
        let out: Vec<(f64, bool, usize)> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let data = gen_irrelevant_z(n, c, 5000 + rep as u64).unwrap();
                let w = data.x.hcat(&data.z).unwrap();
                // All columns penalized except the intercept.
                let mut mask = vec![true; w.n_cols()];
                mask[0] = false;
                let mut plan = PenaltyPlan::new(mask, PenaltyRule::Cv1se);
                plan.seed = 5000 + rep as u64;
                let fit = solve_plan(&data.y, &w, &plan).unwrap();
                let res = lasso_residuals(&data.y, &w, &fit);
                let (_, mu3, skew) = residual_moments(&res);
                (skew, mu3 > 0.0, fit.support.len())
            })
            .collect();
        let mean_skew: f64 = out.iter().map(|o| o.0).sum::<f64>() / reps as f64;
        let wrong = out.iter().filter(|o| o.1).count();
        let mean_s: f64 = out.iter().map(|o| o.2 as f64).sum::<f64>() / reps as f64;
        println!(
            "ALL-PEN n={n} c={c}: skew {:.4}, wrong {}/{}, mean |S| {:.1} [{:.1?}]",
            mean_skew, wrong, reps, mean_s, t.elapsed()
        );
    }
}
