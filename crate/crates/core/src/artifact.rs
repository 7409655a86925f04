use std::fmt;

use serde::{Deserialize, Serialize};

pub const N_ARTIFACTS: usize = 7;

/// The seven annotated artifact types, in their canonical order.
///
/// The order is used everywhere: CSV columns, bitmask bits, report columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Artifact {
    DarkCorner,
    Hair,
    GelBorder,
    GelBubble,
    Ruler,
    Ink,
    Patches,
}

impl Artifact {
    pub const ALL: [Artifact; N_ARTIFACTS] = [
        Artifact::DarkCorner,
        Artifact::Hair,
        Artifact::GelBorder,
        Artifact::GelBubble,
        Artifact::Ruler,
        Artifact::Ink,
        Artifact::Patches,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn column(self) -> &'static str {
        match self {
            Artifact::DarkCorner => "dark_corner",
            Artifact::Hair => "hair",
            Artifact::GelBorder => "gel_border",
            Artifact::GelBubble => "gel_bubble",
            Artifact::Ruler => "ruler",
            Artifact::Ink => "ink",
            Artifact::Patches => "patches",
        }
    }

    /// Human-readable name used in table headers.
    pub fn title(self) -> &'static str {
        match self {
            Artifact::DarkCorner => "dark corner",
            Artifact::Hair => "hair",
            Artifact::GelBorder => "gel border",
            Artifact::GelBubble => "gel bubble",
            Artifact::Ruler => "ruler",
            Artifact::Ink => "ink",
            Artifact::Patches => "patches",
        }
    }

    pub fn from_column(name: &str) -> Option<Artifact> {
        Artifact::ALL.into_iter().find(|a| a.column() == name)
    }
}

impl fmt::Display for Artifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

/// Presence flags for the seven artifacts. Bit `i` of the mask is artifact `i`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArtifactVector([bool; N_ARTIFACTS]);

impl ArtifactVector {
    pub fn new(flags: [bool; N_ARTIFACTS]) -> Self {
        Self(flags)
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_bitmask(mask: u8) -> Self {
        assert!(mask < 128, "artifact bitmask {mask} exceeds 7 bits");
        let mut flags = [false; N_ARTIFACTS];
        for (i, f) in flags.iter_mut().enumerate() {
            *f = mask & (1 << i) != 0;
        }
        Self(flags)
    }

    pub fn bitmask(&self) -> u8 {
        self.0
            .iter()
            .enumerate()
            .fold(0u8, |m, (i, &f)| if f { m | (1 << i) } else { m })
    }

    pub fn has(&self, artifact: Artifact) -> bool {
        self.0[artifact.index()]
    }

    pub fn set(&mut self, artifact: Artifact, present: bool) {
        self.0[artifact.index()] = present;
    }

    pub fn flags(&self) -> &[bool; N_ARTIFACTS] {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&f| f).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitmask_roundtrip_covers_all_combinations() {
        for m in 0u8..128 {
            assert_eq!(ArtifactVector::from_bitmask(m).bitmask(), m);
        }
    }

    #[test]
    fn bit_order_follows_column_order() {
        let mut v = ArtifactVector::none();
        v.set(Artifact::DarkCorner, true);
        assert_eq!(v.bitmask(), 1);
        v.set(Artifact::Patches, true);
        assert_eq!(v.bitmask(), 1 | 64);
        assert_eq!(Artifact::from_column("gel_bubble"), Some(Artifact::GelBubble));
    }
}
