//! Practical range of each kernel family: the distance at which the
//! correlation drops to 5%.

use seqgp::kernels::{Kernel, KernelFamily};

fn main() -> seqgp::error::Result<()> {
    let lambda0 = 651.6;
    println!("{:<12} {:>10} {:>14}", "family", "lambda0", "range (5%)");
    for family in [KernelFamily::Exponential, KernelFamily::Matern32, KernelFamily::Matern52] {
        let k = Kernel::new(family, 284.65, lambda0)?;
        println!("{:<12} {:>10.1} {:>14.2}", family.name(), lambda0, k.practical_range());
    }

    let k = Kernel::new(KernelFamily::Matern32, 1.0, 1.0)?;
    println!("\nMatern 3/2 correlation, lambda0 = 1");
    for d in [0.0, 0.25, 0.5, 1.0, 2.0, 3.0] {
        println!("  d = {d:<5} k = {:.6}", k.eval(d));
    }
    Ok(())
}
