//! Scores a hand-written generation response with each objective.
//!
//!     cargo run --example objectives

use vlm_slowdown::objectives::{
    eos_objective, len_objective, total_objective, var_objective, GenerationResponse,
    ObjectiveParams, PositionInfo,
};

fn main() {
    // Ten tokens. EOS becomes likely near the end and the model is confident
    // at every step.
    let mut eos = vec![0.0; 10];
    eos[8] = 0.5;
    eos[9] = 0.5;
    let response = GenerationResponse {
        length: 10,
        positions: eos
            .into_iter()
            .map(|eos_prob| PositionInfo {
                eos_prob,
                topk_probs: vec![0.4, 0.1],
            })
            .collect(),
        ..GenerationResponse::empty()
    };
    response.validate().expect("well-formed response");

    let params = ObjectiveParams {
        k: 2,
        ..ObjectiveParams::default()
    };
    println!("L_len   = {}", len_objective(&response));
    println!("L_eos   = {:.6}", eos_objective(&response, params.omega));
    println!("L_var   = {:.6}", var_objective(&response, params.k).unwrap());
    println!(
        "L_total = {:.7}  (alpha = {}, beta = {}, omega = {})",
        total_objective(&response, &params).unwrap(),
        params.alpha,
        params.beta,
        params.omega
    );
}
