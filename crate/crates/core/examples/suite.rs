//! Evaluates the default corrupted suite and prints per-seed accuracies and diagnostics.
//!
//! `cargo run --release --example suite -- [seeds]`

use bayesmm::harness::suite::evaluate_default_suite;

fn main() -> bayesmm::Result<()> {
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let seeds: Vec<u64> = (0..n).collect();
    let summary = evaluate_default_suite(&seeds)?;
    println!("seed  zeroshot  cache   bayesmm  text-only  geo-only  kl@500   kl@end   mmd@500  mmd@end");
    for r in &summary.seeds {
        println!(
            "{:>4}  {:.4}    {:.4}  {:.4}   {:.4}     {:.4}    {:>7.3}  {:>7.3}  {:.4}   {:.4}",
            r.seed, r.zeroshot, r.cache, r.bayesmm, r.textual_only, r.geometric_only, r.kl_early, r.kl_final, r.mmd_early, r.mmd_final
        );
    }
    println!(
        "mean  {:.4}    {:.4}  {:.4}   {:.4}     {:.4}",
        summary.mean_zeroshot, summary.mean_cache, summary.mean_bayesmm, summary.mean_textual_only, summary.mean_geometric_only
    );
    println!("kl decreased on {}/{} seeds, mmd not increased on {}/{}", summary.kl_decreased, n, summary.mmd_not_increased, n);
    Ok(())
}
