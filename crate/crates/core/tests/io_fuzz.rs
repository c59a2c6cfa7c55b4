//! Decoders return errors, never panic, on arbitrary and mutated input.

mod common;

use common::*;
use proptest::prelude::*;
use ssbnn::io::idx::{decode_idx, encode_idx, IdxArray, IdxData};
use ssbnn::io::{Checkpoint, RunConfig};
use ssbnn::network::{BayesianMlp, Likelihood};
use ssbnn::prior::{Parameterization, PriorKind};

fn valid_idx() -> Vec<u8> {
    encode_idx(&IdxArray::new(vec![2, 3], IdxData::U8((0..6).collect())).unwrap())
}

fn valid_checkpoint() -> Vec<u8> {
    let cfg = config(PriorKind::SsGhs, Parameterization::NonCentered, vec![2, 3, 2], Likelihood::Categorical, vec![0.5, 1.0]);
    Checkpoint::new(BayesianMlp::new(cfg, 1).unwrap()).to_bytes().unwrap()
}

fn mutate(mut bytes: Vec<u8>, edits: &[(usize, u8)], cut: usize) -> Vec<u8> {
    for &(i, b) in edits {
        let n = bytes.len();
        bytes[i % n] = b;
    }
    bytes.truncate(bytes.len() - cut % bytes.len());
    bytes
}

proptest! {
    #[test]
    fn idx_random_bytes(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_idx(&bytes);
    }

    #[test]
    fn idx_mutated(edits in prop::collection::vec((any::<usize>(), any::<u8>()), 1..4), cut in any::<usize>()) {
        let bytes = mutate(valid_idx(), &edits, cut);
        if let Ok(arr) = decode_idx(&bytes) {
            prop_assert_eq!(arr.dims.iter().map(|&d| d as usize).product::<usize>(), arr.data.len());
        }
    }

    #[test]
    fn checkpoint_random_bytes(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = Checkpoint::from_bytes(&bytes);
    }

    #[test]
    fn checkpoint_mutated(edits in prop::collection::vec((any::<usize>(), any::<u8>()), 1..4), cut in any::<usize>()) {
        let _ = Checkpoint::from_bytes(&mutate(valid_checkpoint(), &edits, cut));
    }

    #[test]
    fn config_random_text(text in "[a-z_=\\[\\]\"0-9.,\n -]{0,80}") {
        let _ = RunConfig::from_toml_str(&text);
    }
}
