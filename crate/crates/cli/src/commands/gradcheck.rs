use std::time::Instant;

use drgaze::train::{gradient_check, GradCheckOptions, GradCheckReport};
use drgaze::Fault;

use crate::args::{GradcheckArgs, InjectedFault};
use crate::error::{CliError, CliResult};

/// Runs the check on the tiny network in 64-bit precision and prints the report.
pub fn gradcheck(args: &GradcheckArgs) -> CliResult<GradCheckReport> {
    if !(args.tolerance > 0.0) {
        return Err(CliError::usage(anyhow::anyhow!("tolerance must be positive")));
    }
    let options = GradCheckOptions {
        seed: args.seed,
        tolerance: args.tolerance,
        biases_only: args.biases_only,
        fault: args.inject_fault.map(|f| match f {
            InjectedFault::ConvBias => Fault::ConvBiasGrad,
        }),
        ..GradCheckOptions::default()
    };
    let start = Instant::now();
    let report = gradient_check(&options)?;
    println!("{report}");
    eprintln!("gradient check took {:.2?}", start.elapsed());
    Ok(report)
}
