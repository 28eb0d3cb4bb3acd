//! Reading a dataset from disk and printing the ingestion report.

use costnpv::io::{ingest, DatasetPaths};

fn main() -> costnpv::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/hand");
    let ds = ingest(&DatasetPaths::in_dir(dir.as_ref()), None)?;
    println!("states: {:?}", ds.state_space.labels());
    println!("horizon: {}", ds.horizon);
    for (h, p) in ds.histories.iter().zip(&ds.processes) {
        println!(
            "{}: {} events, censored at {:?}, accrued {}",
            h.subject_id,
            h.events().len(),
            h.censor_time(),
            p.accumulated(ds.horizon)
        );
    }
    println!("{}", serde_json::to_string_pretty(&ds.report).expect("report serializes"));
    Ok(())
}
