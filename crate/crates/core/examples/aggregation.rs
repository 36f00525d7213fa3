//! Server-side aggregation: FedAvg, FedMedian against an outlier client,
//! a FedAdam server step and one SAM step on a quadratic.

use fedsurg::aggregation::{
    fed_avg, fed_median, fed_opt_apply, sam_step, ClientUpdate, ParameterVector, SamConfig, ServerOptConfig,
    ServerOptState,
};

fn update(id: &str, params: &[f64], n: usize) -> ClientUpdate {
    ClientUpdate::new(id, ParameterVector::new(params.to_vec()).unwrap(), n, 0.0).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let honest = vec![
        update("1", &[1.0, 2.0], 40),
        update("2", &[1.5, 1.0], 33),
        update("3", &[0.5, 3.0], 80),
    ];
    println!("fed_avg    {:?}", fed_avg(&honest)?.as_slice());

    let mut attacked = honest.clone();
    attacked.push(update("bad", &[1e9, -1e9], 10));
    println!("fed_avg    with outlier {:?}", fed_avg(&attacked)?.as_slice());
    println!("fed_median with outlier {:?}", fed_median(&attacked)?.as_slice());

    let global = ParameterVector::new(vec![0.0, 0.0])?;
    let aggregated = fed_avg(&honest)?;
    let mut state = ServerOptState::new(2, ServerOptConfig::default())?;
    let mut w = global;
    for round in 1..=3 {
        let (next, s) = fed_opt_apply(&state, &w, &aggregated)?;
        println!("fedadam round {round}: {:?}", next.as_slice());
        w = next;
        state = s;
    }

    // f(w) = w0^2 + 10 w1^2
    let grad = |w: &[f64]| vec![2.0 * w[0], 20.0 * w[1]];
    let start = ParameterVector::new(vec![1.0, 1.0])?;
    let cfg = SamConfig::new(0.05, false, 0.01)?;
    println!("sam step   {:?}", sam_step(grad, &start, &cfg)?.as_slice());
    Ok(())
}
