mod common;

use std::collections::{HashMap, HashSet};

use pthought::corpus::{corpus_pairs, read_groups, Vocab, EOS};

#[test]
fn synthetic_counts_match_set_oracle() {
    let corpus = common::synthetic(50, 10, 5);
    let groups = read_groups(corpus.jsonl.as_bytes(), "synthetic").unwrap();
    assert_eq!(groups.len(), 50);
    assert_eq!(groups, corpus.all());

    let mut words = HashSet::new();
    let mut expected_pairs = 0;
    for line in corpus.jsonl.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        let captions: HashSet<String> = record["captions"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c.as_str().unwrap().to_string())
            .collect();
        for c in &captions {
            words.extend(c.split(' ').map(str::to_string));
        }
        expected_pairs += captions.len() * (captions.len() - 1);
    }
    let vocab = Vocab::build(&groups);
    assert_eq!(vocab.len(), words.len() + 4);

    let pairs = corpus_pairs(&groups, &vocab, 30).unwrap();
    assert_eq!(pairs.len(), expected_pairs);
    let distinct: HashSet<_> = pairs
        .iter()
        .map(|p| (p.source.clone(), p.target.clone()))
        .collect();
    assert_eq!(distinct.len(), pairs.len());
    assert!(pairs.iter().all(|p| p.source != p.target));
    assert!(pairs
        .iter()
        .all(|p| p.source.last() == Some(&EOS) && p.target.last() == Some(&EOS)));

    let mut per_source: HashMap<&[usize], usize> = HashMap::new();
    for p in &pairs {
        *per_source.entry(&p.source).or_default() += 1;
    }
    assert!(per_source.values().all(|&n| n == 4));
}

#[test]
fn heldout_scenes_reuse_training_words() {
    let corpus = common::synthetic(50, 10, 9);
    let train_vocab = Vocab::build(&corpus.train);
    let heldout_words: HashSet<&String> = corpus
        .heldout
        .iter()
        .flat_map(|g| g.sentences().iter().flatten())
        .collect();
    let unseen: Vec<_> = heldout_words
        .iter()
        .filter(|w| train_vocab.id(w).is_none())
        .collect();
    // synonyms are drawn per caption, so a few may only appear in held-out groups
    assert!(unseen.len() * 10 < heldout_words.len(), "{unseen:?}");
}

#[test]
fn truncation_keeps_eos() {
    let corpus = common::synthetic(4, 1, 1);
    let groups = corpus.all();
    let vocab = Vocab::build(&groups);
    let pairs = corpus_pairs(&groups, &vocab, 3).unwrap();
    assert!(pairs
        .iter()
        .all(|p| p.source.len() == 3 && p.target.len() == 3));
    assert!(pairs
        .iter()
        .all(|p| p.source[2] == EOS && p.target[2] == EOS));
}
