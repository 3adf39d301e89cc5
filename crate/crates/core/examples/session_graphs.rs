//! Builds a local session graph and the global heterogeneous graph for a
//! handful of sessions, and prints both.

use uspgnn::corpus::Session;
use uspgnn::graphs::{build_global_graph, build_local_graph, neighbor_stats, EdgeType};

fn main() -> uspgnn::Result<()> {
    let items = [3, 1, 4, 1, 5];
    let g = build_local_graph(&items)?;
    println!("session {items:?}");
    println!("unique nodes {:?}, alias {:?}, last node {}", g.unique_items, g.alias, g.last_unique_pos);
    let n = g.n_nodes();
    println!("{:<8} {:<24} incoming", "node", "outgoing");
    for r in 0..n {
        let out: Vec<String> = (0..n).map(|c| format!("{:.2}", g.out_weight(r, c))).collect();
        let inc: Vec<String> = (0..n).map(|c| format!("{:.2}", g.in_weight(r, c))).collect();
        println!("{:<8} {:<24} {}", g.unique_items[r], out.join(" "), inc.join(" "));
    }

    let sessions = vec![
        Session { user_index: 0, items: vec![0, 1, 2], start_time: 0 },
        Session { user_index: 0, items: vec![2, 3], start_time: 10 },
        Session { user_index: 1, items: vec![1, 2, 1], start_time: 20 },
    ];
    let global = build_global_graph(&sessions, 5, 2)?;
    println!();
    for t in EdgeType::ALL {
        let adj = global.edges_of(t);
        let edges: Vec<String> = adj.edges().map(|(s, d)| format!("{s}->{d}")).collect();
        println!("{:<4} {}", t.as_str(), edges.join(" "));
    }
    for (t, s) in neighbor_stats(&global) {
        println!("{:<4} in-degree histogram {:?}", t.as_str(), s.in_degree_histogram);
    }
    println!("item 4 never appears, so it keeps its own embedding in every layer");
    Ok(())
}
