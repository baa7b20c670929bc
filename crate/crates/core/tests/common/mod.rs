//! Synthetic caption corpus shared by the integration tests.
//!
//! Each group describes one (subject, action, place) scene. Its five captions
//! use five different templates and pick a random synonym for every slot, so
//! paraphrases share meaning far more than they share words.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pthought::corpus::{CorpusRecord, ParaphraseGroup};

pub const SUBJECTS: [[&str; 3]; 8] = [
    ["man", "guy", "gentleman"],
    ["woman", "lady", "female"],
    ["dog", "puppy", "pooch"],
    ["cat", "kitten", "kitty"],
    ["child", "kid", "youngster"],
    ["horse", "pony", "stallion"],
    ["bird", "parrot", "pigeon"],
    ["player", "athlete", "sportsman"],
];

pub const ACTIONS: [[&str; 3]; 8] = [
    ["running", "jogging", "sprinting"],
    ["sleeping", "napping", "resting"],
    ["eating", "feeding", "snacking"],
    ["jumping", "leaping", "hopping"],
    ["sitting", "seated", "perched"],
    ["playing", "frolicking", "romping"],
    ["standing", "waiting", "lingering"],
    ["walking", "strolling", "wandering"],
];

pub const PLACES: [[&str; 3]; 8] = [
    ["park", "garden", "meadow"],
    ["kitchen", "diner", "cafeteria"],
    ["street", "road", "avenue"],
    ["beach", "shore", "coast"],
    ["field", "pasture", "lawn"],
    ["room", "bedroom", "hall"],
    ["yard", "backyard", "courtyard"],
    ["forest", "woods", "jungle"],
];

pub const TEMPLATES: [&str; 5] = [
    "a {s} is {a} in the {p}",
    "there is a {s} {a} in the {p}",
    "in the {p} a {s} is {a}",
    "a {s} {a} inside the {p}",
    "the {p} has a {s} {a} in it",
];

pub struct Corpus {
    pub train: Vec<ParaphraseGroup>,
    pub heldout: Vec<ParaphraseGroup>,
    /// Every group as corpus JSON Lines, training groups first.
    pub jsonl: String,
}

impl Corpus {
    pub fn all(&self) -> Vec<ParaphraseGroup> {
        self.train.iter().chain(&self.heldout).cloned().collect()
    }
}

fn caption(rng: &mut ChaCha8Rng, template: &str, scene: (usize, usize, usize)) -> String {
    template
        .replace("{s}", SUBJECTS[scene.0][rng.gen_range(0..3)])
        .replace("{a}", ACTIONS[scene.1][rng.gen_range(0..3)])
        .replace("{p}", PLACES[scene.2][rng.gen_range(0..3)])
}

/// `groups` distinct scenes, the last `heldout` of them held out. Held-out
/// scenes only recombine slot values that also occur in training.
pub fn synthetic(groups: usize, heldout: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenes: Vec<(usize, usize, usize)> = (0..8)
        .flat_map(|s| (0..8).flat_map(move |a| (0..8).map(move |p| (s, a, p))))
        .collect();
    scenes.shuffle(&mut rng);
    let train_scenes = &scenes[..groups - heldout];
    let seen = |f: fn(&(usize, usize, usize)) -> usize| {
        train_scenes.iter().map(f).collect::<BTreeSet<_>>()
    };
    let (ss, aa, pp) = (seen(|x| x.0), seen(|x| x.1), seen(|x| x.2));
    let heldout_scenes: Vec<_> = scenes[groups - heldout..]
        .iter()
        .filter(|x| ss.contains(&x.0) && aa.contains(&x.1) && pp.contains(&x.2))
        .take(heldout)
        .copied()
        .collect();
    assert_eq!(heldout_scenes.len(), heldout);

    let mut jsonl = String::new();
    let mut build = |scenes: &[(usize, usize, usize)], prefix: &str, rng: &mut ChaCha8Rng| {
        scenes
            .iter()
            .enumerate()
            .map(|(i, &scene)| {
                let id = format!("{prefix}{i:02}");
                let captions: Vec<String> =
                    TEMPLATES.iter().map(|t| caption(rng, t, scene)).collect();
                let record = CorpusRecord {
                    id: id.clone(),
                    captions: captions.clone(),
                };
                jsonl.push_str(&serde_json::to_string(&record).unwrap());
                jsonl.push('\n');
                ParaphraseGroup::from_captions(&id, &captions).unwrap()
            })
            .collect::<Vec<_>>()
    };
    let train = build(train_scenes, "train", &mut rng);
    let heldout = build(&heldout_scenes, "held", &mut rng);
    Corpus {
        train,
        heldout,
        jsonl,
    }
}
