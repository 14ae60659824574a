//! Synthetic two-style corpus: `i <verb> <activity> <time> .`
//!
//! Plain sentences pair a verb with an activity of the same polarity;
//! ironic ones pair a verb with an activity of the opposite polarity. The
//! intended sentiment is the activity's polarity in both styles, so a
//! transfer only has to swap the verb.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CleanSentence, StyledCorpus};
use crate::Style;

pub const POSITIVE_VERBS: [&str; 5] = ["love", "adore", "enjoy", "cherish", "appreciate"];
pub const NEGATIVE_VERBS: [&str; 5] = ["hate", "despise", "loathe", "dread", "detest"];

pub const POSITIVE_ACTIVITIES: [&str; 12] = [
    "sunny beaches with friends",
    "fresh pizza with cheese",
    "long naps in bed",
    "warm hugs from family",
    "quiet walks in the park",
    "hot chocolate by the fire",
    "good books and tea",
    "playing with sweet puppies",
    "free concerts in town",
    "family dinners together",
    "dancing to loud music",
    "baking cakes for friends",
];

pub const NEGATIVE_ACTIVITIES: [&str; 12] = [
    "being stuck in traffic",
    "waiting in long queues",
    "getting sick during vacation",
    "losing my keys again",
    "doing taxes by hand",
    "cleaning dirty dishes",
    "a flat tire in the rain",
    "missing the last bus",
    "working late shifts",
    "cold showers in winter",
    "spilling hot coffee",
    "noisy neighbors upstairs",
];

pub const TIMES: [&str; 8] = [
    "every morning",
    "on mondays",
    "at night",
    "this weekend",
    "all week",
    "today",
    "lately",
    "each summer",
];

/// One generated sentence with its ground truth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToySentence {
    pub sentence: CleanSentence,
    pub style: Style,
    /// Intended sentiment: true when the activity is positive.
    pub positive: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyCorpus {
    pub non_irony: Vec<ToySentence>,
    pub irony: Vec<ToySentence>,
}

impl ToyCorpus {
    pub fn styled(&self, style: Style) -> StyledCorpus {
        let src = match style {
            Style::NonIrony => &self.non_irony,
            Style::Irony => &self.irony,
        };
        StyledCorpus {
            style,
            sentences: src.iter().map(|t| t.sentence.clone()).collect(),
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &ToySentence> {
        self.non_irony.iter().chain(&self.irony)
    }
}

pub fn sentence(verb: &str, activity: &str, time: &str) -> CleanSentence {
    CleanSentence::from_text(&format!("i {verb} {activity} {time} ."))
}

fn draw<R: Rng + ?Sized>(style: Style, rng: &mut R) -> ToySentence {
    let positive = rng.random_bool(0.5);
    let activity = if positive {
        POSITIVE_ACTIVITIES.choose(rng)
    } else {
        NEGATIVE_ACTIVITIES.choose(rng)
    }
    .expect("non-empty pool");
    let verb_positive = match style {
        Style::NonIrony => positive,
        Style::Irony => !positive,
    };
    let verb = if verb_positive {
        POSITIVE_VERBS.choose(rng)
    } else {
        NEGATIVE_VERBS.choose(rng)
    }
    .expect("non-empty pool");
    let time = TIMES.choose(rng).expect("non-empty pool");
    ToySentence {
        sentence: sentence(verb, activity, time),
        style,
        positive,
    }
}

/// `size` sentences per style, drawn independently (the styles are not parallel).
pub fn generate(size: usize, seed: u64) -> ToyCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let non_irony = (0..size).map(|_| draw(Style::NonIrony, &mut rng)).collect();
    let irony = (0..size).map(|_| draw(Style::Irony, &mut rng)).collect();
    ToyCorpus { non_irony, irony }
}

/// Reads the ground truth back off a sentence: `(style, positive)`, or
/// `None` if it does not follow the template.
pub fn oracle(s: &CleanSentence) -> Option<(Style, bool)> {
    let text = s.text();
    let rest = text.strip_prefix("i ")?;
    let (verb, rest) = rest.split_once(' ')?;
    let verb_positive = if POSITIVE_VERBS.contains(&verb) {
        true
    } else if NEGATIVE_VERBS.contains(&verb) {
        false
    } else {
        return None;
    };
    let positive = if POSITIVE_ACTIVITIES.iter().any(|a| rest.starts_with(&format!("{a} "))) {
        true
    } else if NEGATIVE_ACTIVITIES.iter().any(|a| rest.starts_with(&format!("{a} "))) {
        false
    } else {
        return None;
    };
    let style = if verb_positive == positive {
        Style::NonIrony
    } else {
        Style::Irony
    };
    Some((style, positive))
}
