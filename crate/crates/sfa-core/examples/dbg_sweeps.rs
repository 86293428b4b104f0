// Timing probe for the hard cross-validation cell.
use sfa_core::lasso::{lasso_path, PenaltyPlan, PenaltyRule};
use sfa_core::montecarlo::gen_irrelevant_z;
use std::time::Instant;

fn main() {
    let data = gen_irrelevant_z(400, 0.9, 12345).unwrap();
    let w = data.x.hcat(&data.z).unwrap();
    let plan = PenaltyPlan::penalize_suffix(w.n_cols(), data.d(), PenaltyRule::Cv1se);
    let t = Instant::now();
    let path = lasso_path(&data.y, &w, &plan).unwrap();
    println!("full-data path ({} levels): {:.2?}", path.len(), t.elapsed());
    println!("support at end: {}", path.last().unwrap().support.len());
    let rows: Vec<usize> = (0..360).collect();
    let wf = w.take_rows(&rows);
    let yf: Vec<f64> = rows.iter().map(|&i| data.y[i]).collect();
    let mut fplan = plan.clone();
    fplan.grid = Some(path.iter().map(|f| f.penalty_level * 0.9).collect());
    let t = Instant::now();
    let fpath = lasso_path(&yf, &wf, &fplan).unwrap();
    println!("fold path ({} levels): {:.2?}", fpath.len(), t.elapsed());
    println!("fold support at end: {}", fpath.last().unwrap().support.len());
    // one full cv_select
    use sfa_core::lasso::cv_select;
    let t = Instant::now();
    let sel = cv_select(&data.y, &w, &plan).unwrap();
    println!("cv_select: {:.2?}, level_1se {:.4}, level_min {:.4}", t.elapsed(), sel.level_1se, sel.level_min);
}
