//! Popularity and first-order Markov baselines on the synthetic corpus.

use uspgnn::corpus::{generate_synthetic, SyntheticConfig};
use uspgnn::eval::{markov_baseline, popularity_baseline, KS};

fn main() -> uspgnn::Result<()> {
    let corpus = generate_synthetic(&SyntheticConfig::default())?.corpus;
    let pop = popularity_baseline(&corpus)?.metrics();
    let markov = markov_baseline(&corpus)?.metrics();
    println!("{} test instances", pop.n_instances);
    println!("{:<6} {:>12} {:>12} {:>12} {:>12}", "k", "pop HR", "pop MRR", "markov HR", "markov MRR");
    for k in KS {
        println!(
            "{k:<6} {:>12.2} {:>12.2} {:>12.2} {:>12.2}",
            pop.hr.get(k).unwrap_or_default(),
            pop.mrr.get(k).unwrap_or_default(),
            markov.hr.get(k).unwrap_or_default(),
            markov.mrr.get(k).unwrap_or_default()
        );
    }
    Ok(())
}
