use std::fmt;

/// The four emotion classes, in canonical order.
///
/// The canonical order (happy, sad, anger, fear) fixes integer encodings,
/// confusion-matrix axes, class priors, and every per-class iteration in the
/// crate. `id()` is the integer encoding used by the boosting model and by
/// the mean-squared-error stage selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmotionLabel {
    Happy,
    Sad,
    Anger,
    Fear,
}

impl EmotionLabel {
    pub const COUNT: usize = 4;

    pub const ALL: [EmotionLabel; 4] = [
        EmotionLabel::Happy,
        EmotionLabel::Sad,
        EmotionLabel::Anger,
        EmotionLabel::Fear,
    ];

    pub fn id(self) -> usize {
        match self {
            EmotionLabel::Happy => 0,
            EmotionLabel::Sad => 1,
            EmotionLabel::Anger => 2,
            EmotionLabel::Fear => 3,
        }
    }

    pub fn from_id(id: usize) -> Option<EmotionLabel> {
        EmotionLabel::ALL.get(id).copied()
    }

    pub fn token(self) -> &'static str {
        match self {
            EmotionLabel::Happy => "happy",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Fear => "fear",
        }
    }

    /// Parses an emotion token, ignoring surrounding whitespace and case.
    pub fn parse_token(text: &str) -> Option<EmotionLabel> {
        let t = text.trim();
        EmotionLabel::ALL
            .into_iter()
            .find(|l| l.token().eq_ignore_ascii_case(t))
    }

    /// All distinct labels whose token appears as a substring of `text`
    /// (case-insensitive), in canonical order. Used to read a label out of
    /// a file name like `session_fear.csv`.
    pub fn find_tokens(text: &str) -> Vec<EmotionLabel> {
        let lower = text.to_ascii_lowercase();
        EmotionLabel::ALL
            .into_iter()
            .filter(|l| lower.contains(l.token()))
            .collect()
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}
