//! Generates the planted-cluster corpus and shows how strongly sessions
//! stay inside their user's cluster.

use uspgnn::corpus::{generate_synthetic, SyntheticConfig};

fn main() -> uspgnn::Result<()> {
    let config = SyntheticConfig::default();
    let synth = generate_synthetic(&config)?;
    let corpus = &synth.corpus;
    println!(
        "{} users, {} items, {} clusters, {} train / {} test sessions, mean length {:.2}",
        corpus.n_users(),
        corpus.n_items(),
        config.n_clusters,
        corpus.train_sessions.len(),
        corpus.test_sessions.len(),
        corpus.mean_session_length()
    );

    let (mut inside, mut total) = (0usize, 0usize);
    for s in &corpus.train_sessions {
        let home = synth.user_cluster[s.user_index];
        inside += s.items.iter().filter(|&&i| synth.item_cluster[i] == home).count();
        total += s.items.len();
    }
    println!("share of clicks in the user's own cluster: {:.3}", inside as f64 / total as f64);

    for s in corpus.train_sessions.iter().take(3) {
        let clusters: Vec<usize> = s.items.iter().map(|&i| synth.item_cluster[i]).collect();
        println!("user {} (cluster {}): items {:?} clusters {:?}", s.user_index, synth.user_cluster[s.user_index], s.items, clusters);
    }
    Ok(())
}
