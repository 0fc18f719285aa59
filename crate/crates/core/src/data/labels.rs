use std::fmt;

use crate::error::{Error, Result};

/// Canonical emotion classes. Contempt exists only in eight-class mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmotionLabel {
    Fear = 0,
    Sadness = 1,
    Happy = 2,
    Anger = 3,
    Disgust = 4,
    Surprise = 5,
    Neutral = 6,
    Contempt = 7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClassMode {
    Seven,
    Eight,
}

impl ClassMode {
    pub fn num_classes(self) -> usize {
        match self {
            ClassMode::Seven => 7,
            ClassMode::Eight => 8,
        }
    }

    pub fn from_count(n: usize) -> Result<Self> {
        match n {
            7 => Ok(ClassMode::Seven),
            8 => Ok(ClassMode::Eight),
            _ => Err(Error::Config(format!("class mode must be 7 or 8, got {n}"))),
        }
    }

    pub fn labels(self) -> &'static [EmotionLabel] {
        &EmotionLabel::ALL[..self.num_classes()]
    }
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 8] = [
        EmotionLabel::Fear,
        EmotionLabel::Sadness,
        EmotionLabel::Happy,
        EmotionLabel::Anger,
        EmotionLabel::Disgust,
        EmotionLabel::Surprise,
        EmotionLabel::Neutral,
        EmotionLabel::Contempt,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize, mode: ClassMode) -> Result<Self> {
        if id >= mode.num_classes() {
            return Err(Error::Label(format!(
                "class id {id} outside [0, {}) in {}-class mode",
                mode.num_classes(),
                mode.num_classes()
            )));
        }
        Ok(Self::ALL[id])
    }

    /// Lowercase canonical name, also used as the image-directory name.
    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Fear => "fear",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Happy => "happy",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Contempt => "contempt",
        }
    }

    /// Case-insensitive lookup of a canonical name.
    pub fn from_name(name: &str, mode: ClassMode) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        let label = Self::ALL
            .iter()
            .copied()
            .find(|l| l.name() == lower)
            .ok_or_else(|| Error::Label(format!("unknown class name {name:?}")))?;
        Self::from_id(label.id(), mode)
            .map_err(|_| Error::Label(format!("class {name:?} is not available in {}-class mode", mode.num_classes())))
    }

    /// Maps a FER-2013 source code (0 Angry, 1 Disgust, 2 Fear, 3 Happy,
    /// 4 Sad, 5 Surprise, 6 Neutral) to the canonical label.
    pub fn from_fer_code(code: usize) -> Result<Self> {
        Ok(match code {
            0 => EmotionLabel::Anger,
            1 => EmotionLabel::Disgust,
            2 => EmotionLabel::Fear,
            3 => EmotionLabel::Happy,
            4 => EmotionLabel::Sadness,
            5 => EmotionLabel::Surprise,
            6 => EmotionLabel::Neutral,
            _ => return Err(Error::Label(format!("unknown FER emotion code {code}"))),
        })
    }

    /// Inverse of [`from_fer_code`](Self::from_fer_code); `None` for contempt.
    pub fn fer_code(self) -> Option<usize> {
        match self {
            EmotionLabel::Anger => Some(0),
            EmotionLabel::Disgust => Some(1),
            EmotionLabel::Fear => Some(2),
            EmotionLabel::Happy => Some(3),
            EmotionLabel::Sadness => Some(4),
            EmotionLabel::Surprise => Some(5),
            EmotionLabel::Neutral => Some(6),
            EmotionLabel::Contempt => None,
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
