//! James-Stein, MAP and SURE on a Gaussian hierarchy: a single draw, then
//! Monte-Carlo risks against their closed forms.
//!
//! cargo run --release --example shrinkage_risk

use shrinkcl::ndmath::Rng;
use shrinkcl::shrinkage::{js_estimate, js_positive_part, map_estimate, risk_bench, sure, GaussianHierarchy, RiskBenchConfig};

fn main() -> shrinkcl::Result<()> {
    let mut rng = Rng::new(7);
    let p = 10;
    let theta: Vec<f64> = (0..p).map(|_| 2.0 * rng.normal()).collect();
    let x: Vec<f64> = theta.iter().map(|t| t + rng.normal()).collect();
    let h = GaussianHierarchy::new(vec![0.0; p], 4.0, 1.0)?;
    let err = |est: &[f64]| -> f64 { est.iter().zip(&theta).map(|(a, b)| (a - b).powi(2)).sum() };
    println!("single draw, P = {p}, sigma = 1, tau = 2");
    println!("  MLE      squared error {:.3}", err(&x));
    println!("  JS       squared error {:.3}", err(&js_estimate(&x, 1.0)?));
    println!("  JS+      squared error {:.3}", err(&js_positive_part(&x, 1.0)?));
    println!("  MAP      squared error {:.3}", err(&map_estimate(&x, &h)?));
    println!("  SURE of the MAP estimate {:.3}", sure(&x, &h)?);

    for cfg in [RiskBenchConfig::fixed(10, 1.0, 1.0, 20_000), RiskBenchConfig::hierarchical(20, 1.0, 2.0, 20_000)] {
        let r = risk_bench(&cfg, &mut Rng::new(11))?;
        println!("\nP = {}, tau = {:?}, |theta| = {:?}", cfg.p, cfg.tau, cfg.theta_norm);
        for (name, e) in &r.estimators {
            let closed = e.closed_form.map_or("-".to_string(), |v| format!("{v:.3}"));
            println!("  {name:<22} {:>9.3} +- {:.3}   closed form {closed}", e.empirical_mse, e.ci95);
        }
        println!(
            "  JS risk reduction: measured {:.4}, predicted {:.4}",
            r.js_reduction.measured, r.js_reduction.predicted
        );
    }
    Ok(())
}
