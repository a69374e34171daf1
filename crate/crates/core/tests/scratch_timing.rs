// temporary timing probe; removed before finalizing
use std::time::Instant;

use splinemix::estimate::{fit, wald_inference, FitConfig, OutcomeSelection};
use splinemix::sim::{build_condition, generate_dataset, Allocation, AssignmentMode, Scenario};

#[test]
fn time_one_replication() {
    let condition =
        build_condition(Scenario::One, 1.0, Allocation::Balanced, 1.0, -0.3).unwrap();
    let dataset = generate_dataset(&condition, 1, AssignmentMode::Multinomial, 500).unwrap();
    let config = FitConfig::default().with_seed(11);

    let t0 = Instant::now();
    let result = fit(&dataset.individuals, 2, OutcomeSelection::Joint, &config).unwrap();
    let fit_time = t0.elapsed();
    println!(
        "fit: {:?}, status {:?}, iterations {}, gradient norm {:.2e}, ll {:.3}",
        fit_time, result.status, result.optimizer_iterations, result.gradient_norm,
        result.log_likelihood
    );

    let t1 = Instant::now();
    let result = wald_inference(result, &dataset.individuals).unwrap();
    println!("wald: {:?}, se_available {}", t1.elapsed(), result.se_available);

    let knots: Vec<f64> = result
        .model
        .classes
        .iter()
        .flat_map(|c| [c.y.knot, c.z.knot])
        .collect();
    println!("knots: {knots:?} (truth 3.5/4.5, 4.5/5.5)");
    let acc_proxy: Vec<f64> = result.mixing_proportions.clone();
    println!("mixing: {acc_proxy:?}");
    for p in &result.parameters {
        if p.name.contains("knot") || p.name.contains("mean.intercept") {
            println!(
                "{}: {:.4} (se {:?})",
                p.name,
                p.estimate,
                p.se.map(|s| format!("{s:.4}"))
            );
        }
    }
    panic!("timing probe");
}
