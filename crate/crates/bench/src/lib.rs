//! Shared inputs for the criterion benchmarks.

use gramdex::{BarcodeIndex, LayerCombo, PackedBits};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniformly random barcode of `bit_len` bits.
pub fn random_bits(rng: &mut impl Rng, bit_len: usize) -> PackedBits {
    let mut words: Vec<u64> = (0..PackedBits::words_for(bit_len)).map(|_| rng.gen()).collect();
    if !bit_len.is_multiple_of(64) {
        *words.last_mut().unwrap() &= (1u64 << (bit_len % 64)) - 1;
    }
    PackedBits::from_words(words, bit_len).expect("masked")
}

/// Index of `records` random barcodes for `combo`, labelled round-robin
/// over eight classes.
pub fn random_index(combo: &LayerCombo, records: usize, seed: u64) -> BarcodeIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut index = BarcodeIndex::for_combo(combo.clone());
    for i in 0..records {
        let bits = random_bits(&mut rng, combo.bit_len());
        index
            .insert(format!("r{i}"), format!("c{}", i % 8), &bits)
            .expect("unique ids");
    }
    index
}
