// temporary micro-benchmark; removed before finalizing
use std::time::Instant;

use splinemix::estimate::{debug_starting_objective, FitConfig, OutcomeSelection};
use splinemix::mixture::{class_log_density, total_log_likelihood};
use splinemix::sim::{build_condition, generate_dataset, Allocation, AssignmentMode, Scenario};

#[test]
fn bench_objective() {
    let condition =
        build_condition(Scenario::One, 1.0, Allocation::Balanced, 1.0, -0.3).unwrap();
    let dataset = generate_dataset(&condition, 1, AssignmentMode::Multinomial, 500).unwrap();
    let config = FitConfig::default().with_seed(11);
    // K=2 starting model objective
    let (_, _v) = debug_starting_objective(
        &dataset.individuals,
        2,
        OutcomeSelection::Joint,
        &config,
    )
    .unwrap();

    // total loglik through the public path (sequential)
    let t0 = Instant::now();
    let mut acc = 0.0;
    const REPS: usize = 20;
    for _ in 0..REPS {
        acc += total_log_likelihood(&dataset.truth, &dataset.individuals).unwrap();
    }
    let per_eval = t0.elapsed() / REPS as u32;
    println!("total_log_likelihood: {per_eval:?} per eval (acc {acc:.1})");

    // single density
    let ind = &dataset.individuals[0];
    let t1 = Instant::now();
    let mut acc2 = 0.0;
    for _ in 0..20_000 {
        acc2 += class_log_density(ind, &dataset.truth.classes[0]).unwrap();
    }
    println!(
        "class_log_density: {:?} per call (acc {acc2:.1})",
        t1.elapsed() / 20_000
    );
    panic!("bench done");
}
