use anyhow::{bail, Result};
use clap::Args;
use elvc_core::neural::{finite_difference_check, GRADCHECK_TOL};

/// Verify every analytic gradient against central finite differences.
#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Number of random model configurations to check.
    #[arg(long, default_value_t = 20)]
    pub configs: usize,
}

pub fn run(args: &GradcheckArgs, seed: u64) -> Result<()> {
    let reports = finite_difference_check(seed, args.configs);
    println!(
        "{:<14} {:>8} {:>8} {:>14} {:>8}",
        "layer", "configs", "params", "max rel err", "status"
    );
    let mut all_ok = true;
    for r in &reports {
        let ok = r.passed();
        all_ok &= ok;
        println!(
            "{:<14} {:>8} {:>8} {:>14.3e} {:>8}",
            r.layer,
            r.configs,
            r.params_checked,
            r.max_rel_err,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if !all_ok {
        bail!("gradient check failed (tolerance {GRADCHECK_TOL})");
    }
    Ok(())
}
