use crate::rng::RngStream;

const CLASS_WORDS: [[&str; 5]; 10] = [
    ["zero", "nil", "naught", "none", "void"],
    ["one", "single", "lone", "solo", "unit"],
    ["two", "pair", "double", "twin", "duo"],
    ["three", "triple", "trio", "third", "thrice"],
    ["four", "quad", "quartet", "fourth", "square"],
    ["five", "quint", "pentad", "fifth", "hand"],
    ["six", "hexad", "sextet", "sixth", "half-dozen"],
    ["seven", "heptad", "septet", "seventh", "week"],
    ["eight", "octet", "octad", "eighth", "byte"],
    ["nine", "ennead", "nonet", "ninth", "innings"],
];

/// `{L}` is a label slot, `{D}` a distractor slot.
const TEMPLATES: [&str; 6] = [
    "the {L} is drawn here in {D} {D} ink on the page",
    "this figure shows a {D} {L} next to a {D} {L}",
    "we see the number {L} written quite {D} on a {D} board today",
    "a {D} mark that looks like {L} or maybe {L}",
    "here is digit {L} in {D} chalk very clearly",
    "on the {D} {D} screen someone wrote the {L} with a {D} {D} pen",
];

/// Templates per class; each class draws from its own family of three.
const FAMILY: usize = 3;

const DISTRACTORS: [&str; 50] = [
    "red", "blue", "green", "bright", "dark", "small", "large", "old", "new", "round", "sharp", "soft", "thin", "bold",
    "wide", "narrow", "slate", "screen", "board", "wall", "card", "page", "ink", "chalk", "pen", "line", "curve", "dot",
    "mark", "sign", "quick", "slow", "calm", "loud", "quiet", "warm", "cold", "early", "late", "north", "south", "east",
    "west", "river", "stone", "cloud", "tree", "glass", "metal", "wood",
];

pub const MIN_WORDS: usize = 8;
pub const MAX_WORDS: usize = 16;

/// Every word the sentence generator can emit, in a fixed order.
pub fn lexicon() -> Vec<&'static str> {
    let mut words: Vec<&'static str> = CLASS_WORDS.iter().flatten().copied().collect();
    let fixed = TEMPLATES.iter().flat_map(|t| t.split(' ')).filter(|w| !w.starts_with('{'));
    for w in fixed.chain(DISTRACTORS) {
        if !words.contains(&w) {
            words.push(w);
        }
    }
    words
}

/// A sentence from one of class `label`'s templates. Each label slot holds a
/// synonym of the own class with probability `label_prob`, otherwise of
/// another class.
pub fn sentence(label: usize, label_prob: f64, rng: &mut RngStream) -> Vec<String> {
    let template = TEMPLATES[(label + rng.below(FAMILY)) % TEMPLATES.len()];
    template
        .split(' ')
        .map(|w| {
            let word = match w {
                "{L}" => {
                    let class = if rng.bernoulli(label_prob) {
                        label
                    } else {
                        (label + 1 + rng.below(CLASS_WORDS.len() - 1)) % CLASS_WORDS.len()
                    };
                    CLASS_WORDS[class][rng.below(5)]
                }
                "{D}" => DISTRACTORS[rng.below(DISTRACTORS.len())],
                w => w,
            };
            word.to_string()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_respect_length_bounds() {
        for t in TEMPLATES {
            let n = t.split(' ').count();
            assert!((MIN_WORDS..=MAX_WORDS).contains(&n), "{t}");
        }
    }

    #[test]
    fn lexicon_has_no_duplicates() {
        let lex = lexicon();
        let set: std::collections::BTreeSet<_> = lex.iter().collect();
        assert_eq!(set.len(), lex.len());
        assert!((100..=140).contains(&lex.len()), "{}", lex.len());
    }

    #[test]
    fn sentences_stay_inside_lexicon() {
        let lex = lexicon();
        let mut rng = RngStream::new(3);
        for y in 0..10 {
            for _ in 0..50 {
                let s = sentence(y, 0.7, &mut rng);
                assert!(s.iter().all(|w| lex.contains(&w.as_str())));
            }
        }
    }
}
