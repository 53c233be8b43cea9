//! Shared inputs for the benchmarks in `benches/`.

use destripe_core::{degrade, generate_stripe_field, make_phantom, StripeModel, Volume};

/// Striped phantom of the given shape, seeded like the acceptance run.
pub fn striped_phantom(shape: (usize, usize, usize)) -> Volume {
    let clean = make_phantom(shape, 42).expect("phantom");
    let s = generate_stripe_field(shape, &StripeModel::default(), 42).expect("stripe field");
    degrade(&clean, &s).expect("same shape")
}
