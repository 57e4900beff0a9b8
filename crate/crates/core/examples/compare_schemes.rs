//! Runs the three allocation schemes on one network drop and prints their
//! minimum SE and sensing outcome.

use cfisac::harness::{run_realization, RunParams};
use cfisac::model::NetworkConfig;
use cfisac::optimize::Scheme;

fn main() {
    let cfg = NetworkConfig { m: 12, n: 8, k: 3, l: 1, ..NetworkConfig::default() };
    let params = RunParams { rap_sensing_aps: Some(4), ..RunParams::for_config(&cfg) };
    for scheme in [Scheme::Jap, Scheme::Gap, Scheme::Rap] {
        match run_realization(&cfg, scheme, 11, &params) {
            Ok(r) => println!(
                "{:8} min_se {:.3} sensing {} sensing_aps {} iterations {}",
                scheme.name(),
                r.min_se,
                r.sensing_success,
                r.sensing_aps,
                r.iterations
            ),
            Err(e) => eprintln!("{}: {e}", scheme.name()),
        }
    }
}
