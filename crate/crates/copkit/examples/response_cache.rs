//! Provider plumbing: persistent response caching (a warm rerun makes zero
//! upstream calls) and token budgeting (requests past the ceiling are
//! rejected before dispatch).
//!
//! ```text
//! cargo run --example response_cache
//! ```

use std::sync::Arc;

use copkit::gateway::{
    with_cache, BudgetedProvider, ModelRequest, Provider, Rule, ScriptedProvider,
};

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let upstream = Arc::new(
        ScriptedProvider::new("model")
            .with_rule(Rule::new("step_2: torque the bolts").when_contains("next step")),
    );
    let cached = with_cache(upstream.clone(), dir.path()).expect("cache dir");

    let requests: Vec<ModelRequest> = (0..5)
        .map(|i| ModelRequest::text(format!("what is the next step for bay {i}?")))
        .collect();

    for request in &requests {
        cached.complete(request).expect("cold call");
    }
    println!(
        "cold run: {} upstream calls, {} misses",
        upstream.calls(),
        cached.misses()
    );

    for request in &requests {
        let response = cached.complete(request).expect("warm call");
        assert!(response.cached);
    }
    println!(
        "warm run: {} upstream calls total (unchanged), {} hits",
        upstream.calls(),
        cached.hits()
    );

    // Budgeting: a ceiling of 20 tokens allows roughly one request here.
    let budgeted = BudgetedProvider::new(upstream.clone(), 20);
    let mut accepted = 0;
    for request in &requests {
        match budgeted.complete(request) {
            Ok(_) => accepted += 1,
            Err(err) => {
                println!("budget stop after {accepted} request(s): {err}");
                break;
            }
        }
    }
}
