use std::fmt;
use std::str::FromStr;

use super::MetricError;
use crate::dataio::PITCH_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Major,
    Minor,
}

/// A musical key; the tonic is a pitch class with C = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Key {
    pub tonic: u8,
    pub mode: Mode,
}

impl Key {
    pub fn new(tonic: u8, mode: Mode) -> Self {
        Self { tonic: tonic % 12, mode }
    }

    /// Parses `"<tonic> <mode>"`, e.g. `"Db major"` or `"f# minor"`.
    /// Enharmonic spellings collapse onto the same pitch class.
    pub fn parse(s: &str) -> Result<Self, MetricError> {
        let err = || MetricError::UnparseableKey(s.to_string());
        let mut parts = s.split_whitespace();
        let (Some(tonic), Some(mode), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err());
        };
        let mut chars = tonic.chars();
        let letter = chars.next().ok_or_else(err)?;
        let mut pc: i32 = match letter.to_ascii_uppercase() {
            'C' => 0,
            'D' => 2,
            'E' => 4,
            'F' => 5,
            'G' => 7,
            'A' => 9,
            'B' => 11,
            _ => return Err(err()),
        };
        for c in chars {
            match c {
                '#' | '♯' => pc += 1,
                'b' | '♭' => pc -= 1,
                _ => return Err(err()),
            }
        }
        let mode = match mode.to_ascii_lowercase().as_str() {
            "major" | "maj" => Mode::Major,
            "minor" | "min" => Mode::Minor,
            _ => return Err(err()),
        };
        Ok(Self::new(pc.rem_euclid(12) as u8, mode))
    }
}

impl FromStr for Key {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Key::parse(s)
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            Mode::Major => "major",
            Mode::Minor => "minor",
        };
        write!(f, "{} {}", PITCH_CLASSES[self.tonic as usize], mode)
    }
}

/// Weighted key score of an estimate against a reference:
///
/// | relation                                          | score |
/// |---------------------------------------------------|-------|
/// | same key                                          | 1.0   |
/// | estimate a perfect fifth above, same mode         | 0.5   |
/// | relative major/minor                              | 0.3   |
/// | parallel major/minor (same tonic)                 | 0.2   |
/// | anything else                                     | 0.0   |
///
/// The fifth relation is directional, so the score is not symmetric.
pub fn key_weighted_score(reference: Key, estimate: Key) -> f64 {
    let up = (estimate.tonic + 12 - reference.tonic) % 12;
    match (reference.mode, estimate.mode) {
        (r, e) if r == e && up == 0 => 1.0,
        (r, e) if r == e && up == 7 => 0.5,
        // Relative minor sits a minor third below its major.
        (Mode::Major, Mode::Minor) if up == 9 => 0.3,
        (Mode::Minor, Mode::Major) if up == 3 => 0.3,
        (r, e) if r != e && up == 0 => 0.2,
        _ => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(r: &str, e: &str) -> f64 {
        key_weighted_score(Key::parse(r).unwrap(), Key::parse(e).unwrap())
    }

    #[test]
    fn definition_examples() {
        assert_eq!(score("C major", "C major"), 1.0);
        assert_eq!(score("C major", "G major"), 0.5);
        assert_eq!(score("C major", "A minor"), 0.3);
        assert_eq!(score("C major", "C minor"), 0.2);
        assert_eq!(score("C major", "F# major"), 0.0);
    }

    #[test]
    fn fifth_is_directional() {
        assert_eq!(score("C major", "G major"), 0.5);
        assert_eq!(score("G major", "C major"), 0.0);
    }

    #[test]
    fn enharmonics_normalize() {
        assert_eq!(Key::parse("Db major").unwrap(), Key::parse("C# major").unwrap());
        assert_eq!(Key::parse("Cb minor").unwrap().to_string(), "B minor");
        assert_eq!(Key::parse("e# MAJOR").unwrap().to_string(), "F major");
    }

    #[test]
    fn rejects_garbage() {
        for s in ["", "C", "H major", "C dorian", "C major extra", "Cx major"] {
            assert!(Key::parse(s).is_err(), "{s}");
        }
    }
}
