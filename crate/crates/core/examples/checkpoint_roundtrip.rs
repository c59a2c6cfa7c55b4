//! Saves a model and a dataset, reloads both and checks they are unchanged.

use ssbnn::io::dataset::{gen_synthetic, read_idx_pair, write_idx_pair, Split, Teacher};
use ssbnn::io::{load_checkpoint, save_checkpoint, Checkpoint, RunConfig};

fn main() {
    let dir = std::env::temp_dir().join("ssbnn-checkpoint-example");
    std::fs::create_dir_all(&dir).unwrap();

    let cfg = RunConfig::from_toml_str("prior = \"ss-ghs\"\nwidths = [2, 16, 1]\nlikelihood = \"gaussian-regression\"\nlambda = [0.3, 1.0]\n").unwrap();
    let model = ssbnn::network::BayesianMlp::new(cfg.network_config(None).unwrap(), 5).unwrap();
    let path = dir.join("checkpoint.json");
    save_checkpoint(&path, &Checkpoint::new(model.clone())).unwrap();
    let back = load_checkpoint(&path).unwrap().model;
    let same = model.params().iter().zip(back.params()).all(|((_, a), (_, b))| a.data() == b.data());
    println!("checkpoint {} ({} bytes), parameters identical: {same}", path.display(), std::fs::metadata(&path).unwrap().len());

    let (train_set, _) = gen_synthetic(&Teacher::Product { dim: 2, amplitude: 1.0 }, 100, 0, 0.5, 9).unwrap();
    let (x, y) = write_idx_pair(&dir, "train", true, &train_set).unwrap();
    let reread = read_idx_pair(&x, &y, Split::Train, 1.0).unwrap();
    println!("dataset {} + {}, identical: {}", x.display(), y.display(), reread == train_set);
}
