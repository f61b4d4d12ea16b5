#![allow(dead_code)]

use petrec_core::{generate_phantom, simulate_low_dose, Modality, PhantomSpec, Volume3D};
use petrec_models::data::{Normalizer, PairedSet};

/// Normalized (L-PET, F-PET) pair of a small phantom.
pub fn phantom_pair(dims: [usize; 3], seed: u64) -> (Volume3D, Volume3D) {
    let spec = PhantomSpec {
        dims,
        n_regions: 4,
        ..PhantomSpec::default()
    };
    let p = generate_phantom(&spec, seed).unwrap();
    let l = simulate_low_dose(&p.volume, 0.05, 100.0, seed + 1).unwrap();
    let n = Normalizer::fit([&p.volume]).unwrap();
    (n.normalize(&l).unwrap(), n.normalize(&p.volume).unwrap())
}

/// Four-slice training set from one phantom.
pub fn four_slices(hw: usize, seed: u64, input_modality: Modality) -> PairedSet {
    let (x, y) = phantom_pair([4, hw, hw], seed);
    let x = x.with_data(x.data().to_vec(), input_modality).unwrap();
    PairedSet::new(vec![x], vec![y]).unwrap()
}
