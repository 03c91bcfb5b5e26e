//! Generates corridor episodes with the default spec and prints the summary.

use cumrisk::env::{generate_episodes, CorridorWorldSpec, EnvSpec};

fn main() -> cumrisk::Result<()> {
    let count = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let (_, summary) = generate_episodes(&EnvSpec::Corridor(CorridorWorldSpec::default()), count, 1)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
