//! Diagnostic: per-chunk structure trajectory on a small SEA stream.
use atl::stream::{covariate_split, load_csv, scale_chunks};
use atl::trainer::{AtlState, TrainerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let path = &args[1];
    let chunks_limit: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(10);
    let mut chunks = load_csv(std::path::Path::new(path), "label", 1000).unwrap();
    scale_chunks(&mut chunks);
    let config = TrainerConfig::default();
    let mut state = AtlState::new(chunks[0].features.ncols(), 2, 1000, &config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for chunk in chunks.iter().take(chunks_limit) {
        let (source, target, target_labels) = covariate_split(chunk, 0.5, &mut rng).unwrap();
        let t0 = std::time::Instant::now();
        if chunk.chunk_index == 0 {
            state.train_chunk(&source, &target, &config).unwrap();
            eprintln!(
                "chunk {:>3} warmup  R={:<5} Ms={:<4} Mt={:<4} {:.2}s",
                chunk.chunk_index,
                state.hidden_nodes(),
                state.source_components(),
                state.target_components(),
                t0.elapsed().as_secs_f64()
            );
            continue;
        }
        let outcome = state.process_chunk(&source, &target, &config).unwrap();
        let acc = outcome
            .target_predictions
            .iter()
            .zip(&target_labels)
            .filter(|(p, l)| p == l)
            .count() as f64
            / target_labels.len() as f64;
        eprintln!(
            "chunk {:>3} acc={:.3} R={:<5} Ms={:<4} Mt={:<4} {:.2}s",
            chunk.chunk_index,
            acc,
            state.hidden_nodes(),
            state.source_components(),
            state.target_components(),
            t0.elapsed().as_secs_f64()
        );
    }
}
