//! Fixtures shared by the benchmarks.

use idid::rng::stream;
use idid::{generate_case_data, Case, Dataset, DgpCase};

/// Case-2 simulated data of size `n`.
pub fn simulated(n: usize, seed: u64) -> Dataset {
    let dgp = DgpCase::new(Case::Case2, n).expect("n >= 8");
    generate_case_data(&dgp, &mut stream(seed, 0))
}
