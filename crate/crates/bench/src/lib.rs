//! Synthetic workloads shared by the benchmarks.

use claimcheck_core::pipeline::{DatasetSource, DocumentSource};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

const REGIONS: [&str; 4] = ["north", "south", "east", "west"];
const PRODUCTS: [&str; 6] = ["apples", "pears", "plums", "figs", "dates", "limes"];
const CHANNELS: [&str; 3] = ["online", "store", "phone"];

/// A single `sales` table of `rows` random rows.
pub fn sales_dataset(rows: usize, seed: u64) -> DatasetSource {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut csv = String::from("region,product,channel,promo,units,price\n");
    for _ in 0..rows {
        let region = REGIONS.choose(&mut rng).unwrap();
        let product = PRODUCTS.choose(&mut rng).unwrap();
        let channel = CHANNELS.choose(&mut rng).unwrap();
        let promo = if rng.gen_bool(0.5) { "yes" } else { "no" };
        let units = rng.gen_range(1..=50);
        let price = rng.gen_range(1..=400) as f64 * 0.25;
        csv.push_str(&format!("{region},{product},{channel},{promo},{units},{price}\n"));
    }
    DatasetSource {
        tables: vec![("sales".into(), csv.into_bytes())],
        ..Default::default()
    }
}

/// A document with `claims` count claims over region and channel.
pub fn sales_document(claims: usize) -> DocumentSource {
    let mut text = String::from("# Fruit sales report\n\n");
    for i in 0..claims {
        let region = REGIONS[i % REGIONS.len()];
        let channel = CHANNELS[i % CHANNELS.len()];
        text.push_str(&format!(
            "In the {region} region there were {} sales through the {channel} channel. ",
            40 + i
        ));
    }
    text.push('\n');
    DocumentSource { text, parses: None }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn workloads_are_deterministic() {
        assert_eq!(sales_dataset(50, 1).tables, sales_dataset(50, 1).tables);
        assert_eq!(sales_document(3).text.matches("sales through").count(), 3);
    }
}
