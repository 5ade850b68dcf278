use drgaze::data::{synthesize_dataset, SynthConfig};

use crate::args::SynthArgs;
use crate::error::CliResult;

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let cfg = SynthConfig::new(args.drivers, args.samples, args.seed).with_image(args.height, args.width);
    let report = synthesize_dataset(&args.out, &cfg)?;
    println!(
        "wrote {} samples to {}",
        report.records.len(),
        report.manifest.display()
    );
    if report.least_squares_l1.is_finite() {
        println!("least-squares feature fit: mean L1 {:.4} px", report.least_squares_l1);
    }
    Ok(())
}
