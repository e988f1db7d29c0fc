//! Runs the reduced-scale simulation study and prints the per-cell summary.

use shapecov::simulation::{desk_base_kinship, run_study, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2024);
    let cfg = SimConfig::desk(desk_base_kinship(seed)?, seed);
    let start = std::time::Instant::now();
    let res = run_study(&cfg)?;
    for t in &res.thresholds {
        println!("p={} threshold({}%)={:.4}", t.p, t.percentile, t.value);
    }
    for c in &res.summary {
        println!(
            "d={} p={} n={} converged={} median_err_g={:.4} median_err_e={:.4} below={:?}",
            c.d,
            c.p,
            c.n_subjects,
            c.converged,
            c.err_g.as_ref().map_or(f64::NAN, |q| q.median),
            c.err_e.as_ref().map_or(f64::NAN, |q| q.median),
            c.frac_g_below_threshold
        );
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
