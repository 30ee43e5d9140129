//! Corpus-level parser checks: every shipped deck round-trips through the
//! canonical serializer, and random mutations of the corpus produce
//! diagnostics instead of panics.

use retort::deck::{parse_deck, serialize_deck};
use retort::sweep::SplitMix64;
use std::fs;
use std::path::PathBuf;

fn decks_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("decks")
}

fn corpus() -> Vec<(String, String)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(decks_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) == Some("deck") {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            out.push((name, fs::read_to_string(&path).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn corpus_is_complete() {
    let names: Vec<String> = corpus().into_iter().map(|(n, _)| n).collect();
    for expected in [
        "case1_synthetic.deck",
        "case2_clogging.deck",
        "case3_denit.deck",
    ] {
        assert!(names.iter().any(|n| n == expected), "missing {expected}");
    }
    assert!(names.len() >= 13, "expected at least 13 decks, found {}", names.len());
}

#[test]
fn golden_decks_round_trip() {
    for (name, text) in corpus() {
        let deck = parse_deck(&text)
            .unwrap_or_else(|d| panic!("{name} does not parse: {:?}", d));
        let canon = serialize_deck(&deck);
        let deck2 = parse_deck(&canon)
            .unwrap_or_else(|d| panic!("{name} canonical form does not parse: {:?}", d));
        let canon2 = serialize_deck(&deck2);
        assert_eq!(canon, canon2, "{name} is not a serializer fixed point");
    }
}

/// 10,000 random single/multi-character mutations across the corpus: the
/// parser must return a deck or diagnostics, never panic, and failed parses
/// must carry at least one diagnostic.
#[test]
fn mutation_fuzz_never_crashes() {
    let corpus = corpus();
    let mut rng = SplitMix64::new(0x5eed_f00d);
    for trial in 0..10_000 {
        let (_, base) = &corpus[(rng.next_u64() as usize) % corpus.len()];
        let mut bytes = base.clone().into_bytes();
        let edits = 1 + (rng.next_u64() % 4) as usize;
        for _ in 0..edits {
            if bytes.is_empty() {
                break;
            }
            let pos = (rng.next_u64() as usize) % bytes.len();
            match rng.next_u64() % 4 {
                0 => {
                    // overwrite with a random printable or control byte
                    let b = b" \t\nabcxyz019.=-#[]~%"[(rng.next_u64() as usize) % 20];
                    bytes[pos] = b;
                }
                1 => {
                    bytes.remove(pos);
                }
                2 => {
                    let b = b" \t\nabcxyz019.=-#[]~%"[(rng.next_u64() as usize) % 20];
                    bytes.insert(pos, b);
                }
                _ => {
                    // duplicate a random slice (tests repeated sections/keys)
                    let end = (pos + 1 + (rng.next_u64() as usize) % 40).min(bytes.len());
                    let slice: Vec<u8> = bytes[pos..end].to_vec();
                    let at = (rng.next_u64() as usize) % (bytes.len() + 1);
                    for (k, b) in slice.into_iter().enumerate() {
                        bytes.insert(at + k, b);
                    }
                }
            }
        }
        let text = String::from_utf8_lossy(&bytes).into_owned();
        match parse_deck(&text) {
            Ok(deck) => {
                // whatever parsed must serialize without panicking too
                let _ = serialize_deck(&deck);
            }
            Err(diags) => {
                assert!(
                    !diags.is_empty(),
                    "trial {trial}: parse failed with no diagnostics"
                );
            }
        }
    }
}
