//! Template-grammar story generator and the on-disk corpus format.
//!
//! A story is two to four short sentences about a protagonist. The first
//! sentence introduces an object, the second acts on the same object, and
//! later sentences move the protagonist around or describe it. The shared
//! object across sentences is what makes infilling and rewriting tasks
//! meaningful on such a small vocabulary.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary, PERIOD};

/// Number of stories in the default corpus (about 50k tokens).
pub const DEFAULT_STORIES: usize = 2100;

pub const GENERATOR_NAME: &str = "template-grammar";

const PEOPLE: &[&str] = &[
    "boy", "girl", "man", "woman", "teacher", "farmer", "cook", "doctor", "child", "friend",
    "baby", "king", "queen", "student", "driver", "nurse", "pilot", "sailor", "singer", "baker",
];
const ANIMALS: &[&str] = &[
    "cat", "dog", "bird", "horse", "cow", "spider", "rabbit", "mouse", "duck", "fox", "sheep",
    "frog", "bear", "lion", "goat", "pig", "owl", "tiger",
];
const FOODS: &[&str] = &[
    "apple", "bread", "cake", "soup", "cheese", "egg", "rice", "carrot", "pie", "milk", "fish",
    "cookie", "banana", "orange", "pizza", "tea", "pear", "honey", "corn",
];
const THINGS: &[&str] = &[
    "ball", "book", "hat", "cup", "box", "key", "kite", "toy", "bag", "letter", "shoe", "coat",
    "chair", "lamp", "clock", "map", "pen", "drum", "basket", "boat",
];
const PLACES: &[&str] = &[
    "park", "kitchen", "garden", "farm", "school", "river", "forest", "house", "shop", "beach",
    "lake", "city", "room", "yard", "hill", "zoo",
];
const WASHABLES: &[&str] = &["hands", "dishes", "face", "clothes", "feet"];
const CLEANERS: &[&str] = &["soap", "water"];
const ADJECTIVES: &[&str] = &[
    "big", "small", "red", "old", "new", "happy", "hungry", "little", "green", "warm", "cold",
    "sweet", "tired", "brown", "young", "blue", "wet", "clean", "dirty", "sleepy", "soft", "tall", "funny", "quiet", "busy",
];
const FUNCTION_WORDS: &[&str] = &["the", "then", "to", "in", "with", "very", "his", "her"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Person,
    Animal,
    Food,
    Thing,
    Place,
    Washable,
    Cleaner,
    Adjective,
}

impl Class {
    pub fn words(self) -> &'static [&'static str] {
        match self {
            Class::Person => PEOPLE,
            Class::Animal => ANIMALS,
            Class::Food => FOODS,
            Class::Thing => THINGS,
            Class::Place => PLACES,
            Class::Washable => WASHABLES,
            Class::Cleaner => CLEANERS,
            Class::Adjective => ADJECTIVES,
        }
    }

    /// The lexical class of a content word.
    pub fn of(word: &str) -> Option<Class> {
        use Class::*;
        [Person, Animal, Food, Thing, Place, Washable, Cleaner, Adjective]
            .into_iter()
            .find(|c| c.words().contains(&word))
    }

    fn animate(self) -> bool {
        matches!(self, Class::Person | Class::Animal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Frame {
    /// `V the [adj] OBJ [in the PLACE]`
    Object(&'static [Class]),
    /// `V the|his|her WASHABLE [with CLEANER]`
    Wash,
    /// `V to the PLACE`
    Motion,
    /// `V [in the PLACE]`
    Intransitive,
    /// `is [very] ADJ`
    Copula,
}

struct Verb {
    word: &'static str,
    frame: Frame,
    animals: bool,
}

const FOOD: &[Class] = &[Class::Food];
const THING: &[Class] = &[Class::Thing];
const ANIMATE: &[Class] = &[Class::Person, Class::Animal];

macro_rules! verbs {
    ($($w:literal => $f:expr, $a:literal;)*) => {
        &[$(Verb { word: $w, frame: $f, animals: $a }),*]
    };
}

const VERBS: &[Verb] = verbs! {
    "eats" => Frame::Object(FOOD), true;
    "cooks" => Frame::Object(FOOD), false;
    "buys" => Frame::Object(FOOD), false;
    "cuts" => Frame::Object(FOOD), false;
    "bakes" => Frame::Object(FOOD), false;
    "wants" => Frame::Object(FOOD), true;
    "smells" => Frame::Object(FOOD), true;
    "shares" => Frame::Object(FOOD), false;
    "finds" => Frame::Object(THING), true;
    "takes" => Frame::Object(THING), false;
    "throws" => Frame::Object(THING), false;
    "holds" => Frame::Object(THING), false;
    "drops" => Frame::Object(THING), false;
    "carries" => Frame::Object(THING), false;
    "opens" => Frame::Object(THING), false;
    "loses" => Frame::Object(THING), false;
    "paints" => Frame::Object(THING), false;
    "fixes" => Frame::Object(THING), false;
    "sees" => Frame::Object(ANIMATE), true;
    "likes" => Frame::Object(ANIMATE), true;
    "helps" => Frame::Object(ANIMATE), false;
    "feeds" => Frame::Object(ANIMATE), false;
    "calls" => Frame::Object(ANIMATE), false;
    "follows" => Frame::Object(ANIMATE), true;
    "chases" => Frame::Object(ANIMATE), true;
    "hugs" => Frame::Object(ANIMATE), false;
    "watches" => Frame::Object(ANIMATE), true;
    "meets" => Frame::Object(ANIMATE), false;
    "washes" => Frame::Wash, false;
    "dries" => Frame::Wash, false;
    "goes" => Frame::Motion, true;
    "walks" => Frame::Motion, true;
    "runs" => Frame::Motion, true;
    "comes" => Frame::Motion, true;
    "swims" => Frame::Motion, true;
    "drives" => Frame::Motion, false;
    "sleeps" => Frame::Intransitive, true;
    "sings" => Frame::Intransitive, true;
    "smiles" => Frame::Intransitive, false;
    "cries" => Frame::Intransitive, true;
    "laughs" => Frame::Intransitive, false;
    "jumps" => Frame::Intransitive, true;
    "waits" => Frame::Intransitive, true;
    "is" => Frame::Copula, true;
};

fn verb(word: &str) -> Option<&'static Verb> {
    VERBS.iter().find(|v| v.word == word)
}

/// The closed word list of the grammar, in vocabulary order.
pub fn lexicon() -> Vec<&'static str> {
    let mut words: Vec<&'static str> = FUNCTION_WORDS.to_vec();
    for class in [
        PEOPLE, ANIMALS, FOODS, THINGS, PLACES, WASHABLES, CLEANERS, ADJECTIVES,
    ] {
        words.extend_from_slice(class);
    }
    words.extend(VERBS.iter().map(|v| v.word));
    words
}

/// Vocabulary covering every word the grammar can produce.
pub fn grammar_vocabulary() -> Vocabulary {
    Vocabulary::new(lexicon())
}

/// One sentence's content words, used to build lexical and counterfactual
/// tasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub words: Vec<&'static str>,
    pub subject: &'static str,
    pub verb: &'static str,
    pub object: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Story {
    pub sentences: Vec<Sentence>,
}

impl Story {
    pub fn words(&self) -> Vec<&'static str> {
        self.sentences.iter().flat_map(|s| s.words.iter().copied()).collect()
    }
}

fn pick<R: Rng>(rng: &mut R, words: &[&'static str]) -> &'static str {
    words[rng.random_range(0..words.len())]
}

/// Deterministic story generator.
pub struct StoryGenerator {
    rng: ChaCha8Rng,
}

impl StoryGenerator {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn noun_phrase(&mut self, out: &mut Vec<&'static str>, noun: &'static str) {
        out.push("the");
        if self.rng.random_bool(0.25) {
            out.push(pick(&mut self.rng, ADJECTIVES));
        }
        out.push(noun);
    }

    fn subject(&mut self, animal: bool) -> &'static str {
        pick(&mut self.rng, if animal { ANIMALS } else { PEOPLE })
    }

    fn verb_for<F: Fn(&Verb) -> bool>(&mut self, animal_subject: bool, pred: F) -> &'static Verb {
        let options: Vec<&'static Verb> = VERBS
            .iter()
            .filter(|v| (!animal_subject || v.animals) && pred(v))
            .collect();
        options[self.rng.random_range(0..options.len())]
    }

    /// Realizes a sentence for `subject verb [object]`. `object` is drawn when
    /// the frame needs one and none is given.
    fn realize(
        &mut self,
        then: bool,
        subject: &'static str,
        verb: &'static Verb,
        object: Option<&'static str>,
    ) -> Sentence {
        let mut w = Vec::with_capacity(12);
        if then {
            w.push("then");
        }
        self.noun_phrase(&mut w, subject);
        w.push(verb.word);
        let mut obj = None;
        match verb.frame {
            Frame::Object(classes) => {
                let o = object.unwrap_or_else(|| {
                    let class = classes[self.rng.random_range(0..classes.len())];
                    loop {
                        let o = pick(&mut self.rng, class.words());
                        if o != subject {
                            break o;
                        }
                    }
                });
                self.noun_phrase(&mut w, o);
                obj = Some(o);
                if classes != ANIMATE && self.rng.random_bool(0.3) {
                    w.extend(["in", "the", pick(&mut self.rng, PLACES)]);
                }
            }
            Frame::Wash => {
                let o = object.unwrap_or_else(|| pick(&mut self.rng, WASHABLES));
                w.push(pick(&mut self.rng, &["the", "his", "her"]));
                w.push(o);
                obj = Some(o);
                if self.rng.random_bool(0.5) {
                    w.extend(["with", pick(&mut self.rng, CLEANERS)]);
                }
            }
            Frame::Motion => {
                w.extend(["to", "the", pick(&mut self.rng, PLACES)]);
            }
            Frame::Intransitive => {
                if self.rng.random_bool(0.4) {
                    w.extend(["in", "the", pick(&mut self.rng, PLACES)]);
                }
            }
            Frame::Copula => {
                if self.rng.random_bool(0.3) {
                    w.push("very");
                }
                w.push(pick(&mut self.rng, ADJECTIVES));
            }
        }
        w.push(PERIOD);
        Sentence {
            words: w,
            subject,
            verb: verb.word,
            object: obj,
        }
    }

    /// A sentence whose verb takes an object.
    pub fn transitive_sentence(&mut self) -> Sentence {
        let animal = self.rng.random_bool(0.3);
        let subject = self.subject(animal);
        let v = self.verb_for(animal, |v| matches!(v.frame, Frame::Object(_) | Frame::Wash));
        self.realize(false, subject, v, None)
    }

    /// A sentence with the given subject, verb and object replaced by `object`.
    pub fn with_object(&mut self, s: &Sentence, object: &'static str, then: bool) -> Sentence {
        let v = verb(s.verb).expect("sentence verbs come from the lexicon");
        self.realize(then, s.subject, v, Some(object))
    }

    pub fn story(&mut self) -> Story {
        let n = self.rng.random_range(2..=4usize);
        let first = self.transitive_sentence();
        let subject = first.subject;
        let animal = Class::of(subject) == Some(Class::Animal);
        let object = first.object.expect("transitive sentence has an object");
        let obj_class = Class::of(object).expect("object from lexicon");

        let mut sentences = vec![first];
        // Second sentence acts on the same object again.
        let v = self.verb_for(animal, |v| match v.frame {
            Frame::Object(cs) => cs.contains(&obj_class),
            Frame::Wash => obj_class == Class::Washable,
            _ => false,
        });
        let second = self.realize(true, subject, v, Some(object));
        sentences.push(second);

        for _ in 2..n {
            // The object may take over as subject when it is animate.
            let (subj, subj_animal) = if obj_class.animate() && self.rng.random_bool(0.5) {
                (object, obj_class == Class::Animal)
            } else {
                (subject, animal)
            };
            let v = self.verb_for(subj_animal, |v| {
                matches!(v.frame, Frame::Motion | Frame::Intransitive | Frame::Copula)
            });
            sentences.push(self.realize(true, subj, v, None));
        }
        Story { sentences }
    }
}

/// Acceptance test for a single sentence under the grammar (with or without
/// a leading `then`). When `prefix` is set, returns whether the tokens can be
/// extended into a grammatical sentence.
pub fn accepts_sentence(words: &[&str], prefix: bool) -> bool {
    let mut w = words;
    if w.first() == Some(&"then") {
        w = &w[1..];
    }
    // the [adj] SUBJ VERB ...
    let Some(rest) = eat_np(w, &[Class::Person, Class::Animal], prefix) else {
        return false;
    };
    let (subj_animal, rest) = match rest {
        NpOutcome::Exhausted => return true,
        NpOutcome::Rest(noun, rest) => (Class::of(noun) == Some(Class::Animal), rest),
    };
    let Some((&vw, rest)) = rest.split_first() else {
        return prefix;
    };
    let Some(v) = verb(vw) else { return false };
    if subj_animal && !v.animals {
        return false;
    }
    let tail: Vec<Vec<Tail>> = match v.frame {
        Frame::Object(classes) => {
            let mut alts = vec![vec![Tail::Np(classes)]];
            if classes != ANIMATE {
                alts.push(vec![Tail::Np(classes), Tail::Word("in"), Tail::Word("the"), Tail::Class(Class::Place)]);
            }
            alts
        }
        Frame::Wash => vec![
            vec![Tail::Det, Tail::Class(Class::Washable)],
            vec![Tail::Det, Tail::Class(Class::Washable), Tail::Word("with"), Tail::Class(Class::Cleaner)],
        ],
        Frame::Motion => vec![vec![Tail::Word("to"), Tail::Word("the"), Tail::Class(Class::Place)]],
        Frame::Intransitive => vec![
            vec![],
            vec![Tail::Word("in"), Tail::Word("the"), Tail::Class(Class::Place)],
        ],
        Frame::Copula => vec![
            vec![Tail::Class(Class::Adjective)],
            vec![Tail::Word("very"), Tail::Class(Class::Adjective)],
        ],
    };
    tail.iter().any(|alt| match_tail(rest, alt, prefix))
}

#[derive(Debug, Clone, Copy)]
enum Tail {
    Word(&'static str),
    Class(Class),
    /// `the [adj] NOUN`
    Np(&'static [Class]),
    /// `the | his | her`
    Det,
}

enum NpOutcome<'a> {
    Exhausted,
    Rest(&'a str, &'a [&'a str]),
}

fn eat_np<'a>(w: &'a [&'a str], classes: &[Class], prefix: bool) -> Option<NpOutcome<'a>> {
    let (&det, rest) = match w.split_first() {
        Some(x) => x,
        None => return prefix.then_some(NpOutcome::Exhausted),
    };
    if det != "the" {
        return None;
    }
    let mut rest = rest;
    let Some(&next) = rest.first() else {
        return prefix.then_some(NpOutcome::Exhausted);
    };
    if ADJECTIVES.contains(&next) {
        rest = &rest[1..];
    }
    let Some((&noun, rest)) = rest.split_first() else {
        return prefix.then_some(NpOutcome::Exhausted);
    };
    let class = Class::of(noun)?;
    classes.contains(&class).then_some(NpOutcome::Rest(noun, rest))
}

fn match_tail(w: &[&str], pattern: &[Tail], prefix: bool) -> bool {
    let Some((&first, rest_pat)) = pattern.split_first() else {
        return match w {
            [] => prefix,
            [p] => *p == PERIOD,
            _ => false,
        };
    };
    if w.is_empty() {
        return prefix;
    }
    match first {
        Tail::Word(t) => w[0] == t && match_tail(&w[1..], rest_pat, prefix),
        Tail::Class(c) => c.words().contains(&w[0]) && match_tail(&w[1..], rest_pat, prefix),
        Tail::Det => ["the", "his", "her"].contains(&w[0]) && match_tail(&w[1..], rest_pat, prefix),
        Tail::Np(classes) => match eat_np(w, classes, prefix) {
            Some(NpOutcome::Exhausted) => true,
            Some(NpOutcome::Rest(_, rest)) => match_tail(rest, rest_pat, prefix),
            None => false,
        },
    }
}

/// Token sequences, each terminated by the end-of-sequence id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub sequences: Vec<Vec<TokenId>>,
    /// Generator name and seed, e.g. `template-grammar seed=7 stories=2100`.
    pub provenance: String,
}

impl Corpus {
    /// Generates `stories` stories with the template grammar.
    pub fn generate(seed: u64, stories: usize, vocab: &Vocabulary) -> Result<Self> {
        let mut gen = StoryGenerator::new(seed);
        let mut sequences = Vec::with_capacity(stories);
        for _ in 0..stories {
            let mut ids = vocab.encode_words(&gen.story().words())?;
            ids.push(vocab.eos());
            sequences.push(ids);
        }
        Ok(Self {
            sequences,
            provenance: format!("{GENERATOR_NAME} seed={seed} stories={stories}"),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    /// Token count including end-of-sequence markers.
    pub fn token_count(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    /// Text form: a `# provenance:` header line, then one sequence per line
    /// without the trailing end-of-sequence token.
    pub fn to_text(&self, vocab: &Vocabulary) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# provenance: {}", self.provenance);
        for seq in &self.sequences {
            let body = match seq.split_last() {
                Some((&last, body)) if last == vocab.eos() => body,
                _ => seq.as_slice(),
            };
            let _ = writeln!(s, "{}", vocab.decode(body));
        }
        s
    }

    pub fn parse(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let mut provenance = String::from("unknown");
        let mut sequences = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(p) = rest.trim().strip_prefix("provenance:") {
                    provenance = p.trim().to_string();
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut ids = vocab
                .encode(line)
                .map_err(|e| Error::Data(format!("corpus line {}: {e}", lineno + 1)))?;
            ids.push(vocab.eos());
            sequences.push(ids);
        }
        Ok(Self {
            sequences,
            provenance,
        })
    }

    pub fn save(&self, path: &Path, vocab: &Vocabulary) -> Result<()> {
        std::fs::write(path, self.to_text(vocab)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, vocab)
    }

    /// Splits off the last `fraction` of sequences (at least one) as held-out
    /// data. A single-sequence corpus is used for both halves.
    pub fn split(&self, fraction: f64) -> (Corpus, Corpus) {
        let n = self.sequences.len();
        if n < 2 {
            return (self.clone(), self.clone());
        }
        let held = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
        let (train, test) = self.sequences.split_at(n - held);
        (
            Corpus {
                sequences: train.to_vec(),
                provenance: self.provenance.clone(),
            },
            Corpus {
                sequences: test.to_vec(),
                provenance: self.provenance.clone(),
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_is_about_two_hundred_words() {
        let v = grammar_vocabulary();
        assert!((180..=220).contains(&v.len()), "{}", v.len());
        // lexicon has no duplicates
        assert_eq!(v.len(), lexicon().len() + 4);
    }

    #[test]
    fn generated_sentences_are_grammatical() {
        let mut g = StoryGenerator::new(3);
        for _ in 0..500 {
            for s in g.story().sentences {
                assert!(accepts_sentence(&s.words, false), "{:?}", s.words);
            }
        }
    }

    #[test]
    fn recognizer_rejects_and_accepts_prefixes() {
        fn s(t: &str) -> Vec<&str> {
            t.split_whitespace().collect()
        }
        assert!(accepts_sentence(&s("the boy eats the apple ."), false));
        assert!(accepts_sentence(&s("the boy washes his hands with soap ."), false));
        assert!(!accepts_sentence(&s("the boy eats the ball ."), false));
        assert!(!accepts_sentence(&s("the cat cooks the apple ."), false));
        assert!(!accepts_sentence(&s("the boy eats the apple"), false));
        assert!(accepts_sentence(&s("the boy eats the"), true));
        assert!(accepts_sentence(&s("then the"), true));
        assert!(!accepts_sentence(&s("boy"), true));
    }

    #[test]
    fn same_seed_same_corpus() {
        let v = grammar_vocabulary();
        let a = Corpus::generate(7, 50, &v).unwrap();
        let b = Corpus::generate(7, 50, &v).unwrap();
        assert_eq!(a.to_text(&v), b.to_text(&v));
        let c = Corpus::generate(8, 50, &v).unwrap();
        assert_ne!(a.sequences, c.sequences);
    }

    #[test]
    fn text_round_trip() {
        let v = grammar_vocabulary();
        let c = Corpus::generate(1, 20, &v).unwrap();
        let back = Corpus::parse(&c.to_text(&v), &v).unwrap();
        assert_eq!(back, c);
        assert!(back.sequences.iter().all(|s| s.last() == Some(&v.eos())));
    }

    #[test]
    fn default_size_is_about_fifty_thousand_tokens() {
        let v = grammar_vocabulary();
        let c = Corpus::generate(7, DEFAULT_STORIES, &v).unwrap();
        let n = c.token_count();
        assert!((45_000..=55_000).contains(&n), "{n}");
    }
}
