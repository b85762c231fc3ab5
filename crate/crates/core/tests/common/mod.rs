#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LABELS: [&str; 4] = ["bioche", "com_tech", "cse", "phy"];

fn letters(mut i: usize) -> String {
    let mut s = String::new();
    loop {
        s.push((b'a' + (i % 26) as u8) as char);
        i /= 26;
        if i == 0 {
            return s;
        }
    }
}

/// `n` labelled documents over four classes. Each class draws keywords from
/// its own 12-word list and filler from a 40-word pool shared by all
/// classes; every document contains at least one keyword.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let class = i % LABELS.len();
            let len = rng.random_range(6..16);
            let keyword_at = rng.random_range(0..len);
            let words: Vec<String> = (0..len)
                .map(|t| {
                    if t == keyword_at || rng.random_bool(0.25) {
                        format!(
                            "{}{}",
                            &LABELS[class][..3],
                            letters(rng.random_range(0..12))
                        )
                    } else {
                        format!("fill{}", letters(rng.random_range(0..40)))
                    }
                })
                .collect();
            (words.join(" "), LABELS[class].to_string())
        })
        .collect()
}

pub fn write_tsv(path: &Path, rows: &[(String, String)]) -> PathBuf {
    let mut s = String::new();
    for (text, label) in rows {
        let _ = writeln!(s, "{text}\t{label}");
    }
    std::fs::write(path, s).expect("write tsv");
    path.to_path_buf()
}
