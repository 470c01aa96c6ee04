//! Drive the experiment runner from a TOML string, as the `gkp` binary does.

use gkp_core::harness::{self, ExperimentConfig};

const CONFIG: &str = r#"
experiment = "homodyne-misid"
seed = 1
threads = 2

[output]
dir = "out/example-homodyne"

[params]
delta = [0.2, 0.3]
eta = [0.75, 0.9]
"#;

fn main() -> gkp_core::Result<()> {
    let cfg = ExperimentConfig::from_toml(CONFIG)?;
    println!("config hash {}", cfg.hash());
    let outcome = harness::run(&cfg)?;
    if let Some(e) = outcome.error {
        return Err(e);
    }
    for o in &outcome.manifest.outputs {
        println!("{}  {} rows  {}", &o.sha256[..16], o.rows.unwrap_or(0), o.path);
    }
    print!("{}", std::fs::read_to_string(cfg.output.dir.join("homodyne.csv"))?);
    Ok(())
}
