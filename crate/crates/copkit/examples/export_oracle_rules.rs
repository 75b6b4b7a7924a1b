//! Exports scripted-provider rules that answer every pipeline prompt
//! correctly for an instances file, so `copkit run` can execute offline:
//!
//! ```text
//! cargo run --example export_oracle_rules -- forge/instances.jsonl rules.json
//! ```
//!
//! Point a config at the file:
//!
//! ```toml
//! [providers.oracle]
//! kind = "scripted"
//! rules_file = "rules.json"
//! ```

use copkit::cop::oracle_rules;
use copkit::forge::Instance;
use copkit::util::read_jsonl;

fn main() {
    let mut args = std::env::args().skip(1);
    let instances_path = args.next().unwrap_or_else(|| {
        eprintln!("usage: export_oracle_rules <instances.jsonl> <rules.json>");
        std::process::exit(2);
    });
    let rules_path = args.next().unwrap_or_else(|| "rules.json".to_string());

    let instances: Vec<Instance> = read_jsonl(&instances_path).expect("readable instances file");
    let rules = oracle_rules(&instances);
    std::fs::write(&rules_path, serde_json::to_string_pretty(&rules).unwrap())
        .expect("writable rules file");
    println!(
        "wrote {} rules for {} instances to {rules_path}",
        rules.len(),
        instances.len()
    );
}
