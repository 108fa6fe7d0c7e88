//! Cross-module integration: safe-parameter rescue of a frustrated model,
//! small supervised fits, and report serialization.

use circbp::convergence::{edge_matrix, find_safe_uniform, spectral_radius};
use circbp::exact;
use circbp::learning::{self, FitOptions};
use circbp::model::{CbpParams, IsingModel, TrainingSet, UndirectedGraph};
use circbp::propagation::{run_bp, run_cbp, RunOptions};

fn mean_mse(model: &IsingModel, params: &CbpParams, inputs: &[Vec<f64>], opts: &RunOptions) -> f64 {
    let mut total = 0.0;
    for ex in inputs {
        let m = model.with_m_ext(ex).unwrap();
        let report = run_cbp(&m, params, opts);
        let truth = exact::marginals(&m).unwrap();
        total += learning::loss_mse(&report.beliefs, &truth.p_plus).unwrap();
    }
    total / inputs.len() as f64
}

#[test]
fn safe_parameters_rescue_a_frustrated_model() {
    // Strong spin glass on a complete graph: BP oscillates, the certified
    // uniform parameters converge and give finite, sane beliefs.
    let graph = UndirectedGraph::complete(8).unwrap();
    let base = IsingModel::spin_glass(graph, 5);
    let strong: Vec<f64> = base.couplings().iter().map(|j| 2.0 * j).collect();
    let model = IsingModel::from_parts(base.graph().clone(), strong, vec![0.4; 8]).unwrap();

    let bp = run_bp(&model, &RunOptions::default());
    assert!(!bp.converged, "expected frustration on this instance");

    let beta = vec![1.0; model.graph().edge_count()];
    let gamma = vec![1.0; model.node_count()];
    let (v, rho) = find_safe_uniform(&model, &beta, &gamma).unwrap();
    assert!(rho < 1.0);
    let params = CbpParams::uniform(model.graph(), v);
    let report = run_cbp(
        &model,
        &params,
        &RunOptions {
            max_iters: 2000,
            tol: 1e-10,
            ..Default::default()
        },
    );
    assert!(report.converged);
    assert!(report.beliefs.probabilities().iter().all(|p| p.is_finite()));

    // The certificate is tight to the run: rho at the returned v must match
    // the matrix built from the same parameters.
    let a = edge_matrix(&model, &params).unwrap();
    assert!((spectral_radius(&a, 1e-10) - rho).abs() < 1e-8);
}

#[test]
fn small_supervised_fit_beats_bp_on_a_cyclic_model() {
    let graph = UndirectedGraph::erdos_renyi(6, 0.8, 11).unwrap();
    assert!(graph.has_cycle());
    let model = IsingModel::spin_glass(graph, 12);

    let targets_for = |set: &TrainingSet| -> TrainingSet {
        let targets: Vec<Vec<f64>> = set
            .examples
            .iter()
            .map(|ex| {
                exact::marginals(&model.with_m_ext(ex).unwrap())
                    .unwrap()
                    .p_plus
            })
            .collect();
        TrainingSet::new(set.examples.clone(), Some(targets), 6).unwrap()
    };
    let train = targets_for(&TrainingSet::sample_inputs(6, 40, 13));
    let val = targets_for(&TrainingSet::sample_inputs(6, 15, 14));
    let test = TrainingSet::sample_inputs(6, 15, 15);

    let opts = FitOptions {
        sweeps: 60,
        max_epochs: 120,
        patience: 20,
        ..Default::default()
    };
    let fit = learning::fit_supervised(&model, &train, &val, &opts).unwrap();
    assert!(fit.log.final_val_loss <= fit.log.init_val_loss);

    let run_opts = RunOptions {
        max_iters: 200,
        ..Default::default()
    };
    let fitted_mse = mean_mse(&model, &fit.params, &test.examples, &run_opts);
    let bp_mse = mean_mse(
        &model,
        &CbpParams::bp(model.graph()),
        &test.examples,
        &run_opts,
    );
    assert!(
        fitted_mse < bp_mse,
        "fitted {fitted_mse:.3e} should beat bp {bp_mse:.3e}"
    );
}

#[test]
fn run_report_json_shape() {
    let graph = UndirectedGraph::new(3, &[(0, 1), (1, 2)]).unwrap();
    let model = IsingModel::new(
        graph,
        &[((0, 1), 0.5), ((1, 2), -0.25)],
        vec![0.3, 0.0, -0.1],
    )
    .unwrap();
    let report = run_bp(&model, &RunOptions::default());
    let json = report.to_json();
    assert_eq!(json["converged"], true);
    assert_eq!(json["beliefs_p_plus"].as_array().unwrap().len(), 3);
    assert_eq!(json["messages"].as_array().unwrap().len(), 4);
    assert!(json["final_residual"].as_f64().unwrap() <= 1e-8);
    // Probabilities round-trip against the belief view.
    for (a, b) in json["beliefs_p_plus"]
        .as_array()
        .unwrap()
        .iter()
        .zip(report.beliefs.probabilities())
    {
        assert_eq!(a.as_f64().unwrap(), b);
    }
}
