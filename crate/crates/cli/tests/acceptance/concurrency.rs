use std::time::Duration;

use induct::gateway::{BatchOptions, CompletionRequest, Gateway, LlmEndpoint, Role, ScriptedTransport};
use induct::seed::derive_seed;

use crate::ensure;

const MAX_IN_FLIGHT: usize = 128;

pub fn check() -> Result<String, String> {
    let endpoint = LlmEndpoint::new("http://mock", "echo", Role::Follower);
    let mut peak = 0;
    for trial in 0..20u64 {
        let transport = ScriptedTransport::replying(|_, prompt| format!("echo {prompt}"))
            .with_latency(move |req| {
                let jitter = derive_seed(trial, &["latency", req.prompt()]) % 4000;
                Duration::from_micros(jitter)
            })
            .into_arc();
        let gateway = Gateway::new(transport.clone()).with_batch_options(BatchOptions {
            max_in_flight: MAX_IN_FLIGHT,
            fail_fast: false,
        });
        let requests: Vec<CompletionRequest> = (0..1000)
            .map(|i| CompletionRequest::new(endpoint.clone(), format!("t{trial} q{i}")))
            .collect();
        let results = gateway.complete_batch(&requests);
        ensure!(
            results.len() == requests.len(),
            "trial {trial}: {} results",
            results.len()
        );
        for (i, result) in results.iter().enumerate() {
            let text = &result
                .as_ref()
                .map_err(|e| format!("trial {trial} item {i}: {e}"))?
                .text;
            ensure!(
                *text == format!("echo t{trial} q{i}"),
                "trial {trial}: slot {i} holds {text:?}"
            );
        }
        let high = transport.high_water();
        ensure!(high <= MAX_IN_FLIGHT, "trial {trial}: {high} requests in flight");
        peak = peak.max(high);
    }
    Ok(format!("20 trials x 1000 requests, peak in flight {peak}"))
}
