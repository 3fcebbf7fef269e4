use yieldopt::{run_strategy, waveguide_benchmark, OptimizerConfig, Strategy};

#[test]
fn scratch_compare_numbers() {
    let problem = waveguide_benchmark().unwrap();
    let config = OptimizerConfig::default();
    for strategy in [Strategy::MixedAdaptiveHybrid] {
        let start = std::time::Instant::now();
        let rec = run_strategy(&problem, &config, strategy).unwrap();
        println!(
            "{:?}: time {:?} status {:?} final_yield {:.4} yield_evals {} qoi {} full {}",
            strategy,
            start.elapsed(),
            rec.status,
            rec.final_yield,
            rec.yield_evals,
            rec.qoi_evals,
            rec.full_model_evals,
        );
        for row in &rec.rows {
            println!(
                "  row {}: n {} yield {:.4} grad {:.3e} cum_yield {} cum_qoi {} cum_full {}",
                row.iteration,
                row.n_samples,
                row.yield_value,
                row.grad_norm,
                row.cum_yield_evals,
                row.cum_qoi_evals,
                row.cum_full_model_evals,
            );
        }
    }
}
