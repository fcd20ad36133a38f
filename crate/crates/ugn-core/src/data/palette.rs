//! Class palettes: the mapping between class indices, names, and mask colors.
//!
//! A palette assigns every class a contiguous index starting at zero, a
//! human-readable name, and a distinct RGB color used when masks are stored
//! as images. One entry is always the designated *unknown* class: pixels of
//! that class carry no label and are excluded from losses and metrics. To
//! keep the active classes contiguous from zero (so mask values double as
//! training labels), the unknown entry must sit in the last slot.

use std::path::Path;

use crate::error::{Error, Result};

/// Name of the designated no-label class. Matching is case-insensitive.
pub const UNKNOWN_NAME: &str = "unknown";

/// One class in a [`Palette`]: a name plus the RGB color that encodes the
/// class in mask images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaletteEntry {
    /// Human-readable class name. Must be non-empty and comma-free so the
    /// palette can round-trip through its text format.
    pub name: String,
    /// Mask color, interleaved R, G, B.
    pub rgb: [u8; 3],
}

impl PaletteEntry {
    /// Convenience constructor.
    pub fn new(name: impl Into<String>, rgb: [u8; 3]) -> PaletteEntry {
        PaletteEntry {
            name: name.into(),
            rgb,
        }
    }
}

/// An ordered set of classes with distinct colors; the last entry is always
/// the unknown class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    entries: Vec<PaletteEntry>,
}

impl Palette {
    /// Builds a palette from class entries in index order.
    ///
    /// Requirements: at least one active class plus the unknown entry, the
    /// unknown entry (named `unknown`, case-insensitive) exactly once and in
    /// the last slot, pairwise-distinct colors, and unique comma-free names.
    /// At most 256 entries so indices fit in mask bytes.
    pub fn new(entries: Vec<PaletteEntry>) -> Result<Palette> {
        const OP: &str = "Palette::new";
        if entries.len() < 2 {
            return Err(Error::contract(
                OP,
                format!(
                    "need at least one active class plus the unknown entry, got {} entries",
                    entries.len()
                ),
            ));
        }
        if entries.len() > 256 {
            return Err(Error::contract(
                OP,
                format!("at most 256 classes are supported, got {}", entries.len()),
            ));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.name.trim().is_empty() {
                return Err(Error::contract(OP, format!("class {i} has an empty name")));
            }
            if e.name.contains(',') {
                return Err(Error::contract(
                    OP,
                    format!("class {i} name `{}` contains a comma", e.name),
                ));
            }
        }
        let unknowns: Vec<usize> = entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.name.eq_ignore_ascii_case(UNKNOWN_NAME))
            .map(|(i, _)| i)
            .collect();
        match unknowns.as_slice() {
            [last] if *last == entries.len() - 1 => {}
            [] => {
                return Err(Error::contract(
                    OP,
                    "no `unknown` entry; every palette must designate one",
                ))
            }
            [idx] => {
                return Err(Error::contract(
                    OP,
                    format!(
                        "`unknown` must be the last entry so active classes stay \
                         contiguous from 0, but it sits at index {idx} of {}",
                        entries.len()
                    ),
                ))
            }
            many => {
                return Err(Error::contract(
                    OP,
                    format!("{} entries are named `unknown`, expected exactly one", many.len()),
                ))
            }
        }
        for i in 0..entries.len() {
            for j in (i + 1)..entries.len() {
                if entries[i].rgb == entries[j].rgb {
                    let [r, g, b] = entries[i].rgb;
                    return Err(Error::contract(
                        OP,
                        format!(
                            "classes {i} (`{}`) and {j} (`{}`) share color ({r},{g},{b})",
                            entries[i].name, entries[j].name
                        ),
                    ));
                }
                if entries[i].name.eq_ignore_ascii_case(&entries[j].name) {
                    return Err(Error::contract(
                        OP,
                        format!("classes {i} and {j} share the name `{}`", entries[i].name),
                    ));
                }
            }
        }
        Ok(Palette { entries })
    }

    /// The built-in land-cover palette (six active classes plus unknown).
    pub fn land_cover() -> Palette {
        Palette::new(vec![
            PaletteEntry::new("urban", [0, 255, 255]),
            PaletteEntry::new("agriculture", [255, 255, 0]),
            PaletteEntry::new("rangeland", [255, 0, 255]),
            PaletteEntry::new("forest", [0, 255, 0]),
            PaletteEntry::new("water", [0, 0, 255]),
            PaletteEntry::new("barren", [255, 255, 255]),
            PaletteEntry::new(UNKNOWN_NAME, [0, 0, 0]),
        ])
        .expect("built-in palette is valid")
    }

    /// The first `k` active classes of the built-in land-cover palette plus
    /// the unknown entry. `k` must be between 2 and 6.
    pub fn land_cover_subset(k: usize) -> Result<Palette> {
        let full = Palette::land_cover();
        if k < 2 || k > full.active_classes() {
            return Err(Error::contract(
                "Palette::land_cover_subset",
                format!(
                    "k must be between 2 and {}, got {k}",
                    full.active_classes()
                ),
            ));
        }
        let mut entries: Vec<PaletteEntry> = full.entries[..k].to_vec();
        entries.push(full.entries.last().expect("unknown entry").clone());
        Palette::new(entries)
    }

    /// Total number of entries, unknown included.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// True when the palette has no entries. Never true for a constructed
    /// palette; present to satisfy the usual `len`/`is_empty` pairing.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of labeled classes, i.e. everything except unknown.
    pub fn active_classes(&self) -> usize {
        self.entries.len() - 1
    }

    /// Index of the unknown class (always the last slot).
    pub fn unknown_index(&self) -> usize {
        self.entries.len() - 1
    }

    /// All entries in index order.
    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    /// Color of class `index`, or `None` when out of range.
    pub fn color(&self, index: usize) -> Option<[u8; 3]> {
        self.entries.get(index).map(|e| e.rgb)
    }

    /// Name of class `index`, or `None` when out of range.
    pub fn name(&self, index: usize) -> Option<&str> {
        self.entries.get(index).map(|e| e.name.as_str())
    }

    /// Class index for an exact color match, or `None` when the color is not
    /// in the palette.
    pub fn class_of_color(&self, rgb: [u8; 3]) -> Option<usize> {
        self.entries.iter().position(|e| e.rgb == rgb)
    }

    /// Parses the `index,name,R,G,B` text format. Blank lines and lines
    /// starting with `#` are ignored; indices must cover `0..n` exactly.
    pub fn parse(text: &str) -> Result<Palette> {
        let mut rows: Vec<(usize, PaletteEntry)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(Error::data(format!(
                    "palette line {}: expected `index,name,R,G,B`, got {} fields",
                    lineno + 1,
                    fields.len()
                )));
            }
            let index: usize = fields[0].parse().map_err(|_| {
                Error::data(format!(
                    "palette line {}: bad class index `{}`",
                    lineno + 1,
                    fields[0]
                ))
            })?;
            let mut rgb = [0u8; 3];
            for (slot, field) in rgb.iter_mut().zip(&fields[2..5]) {
                *slot = field.parse().map_err(|_| {
                    Error::data(format!(
                        "palette line {}: bad color component `{field}` (expected 0-255)",
                        lineno + 1
                    ))
                })?;
            }
            rows.push((index, PaletteEntry::new(fields[1], rgb)));
        }
        let mut entries: Vec<Option<PaletteEntry>> = vec![None; rows.len()];
        let count = entries.len();
        for (index, entry) in rows {
            let slot = entries.get_mut(index).ok_or_else(|| {
                Error::data(format!(
                    "palette indices must be contiguous from 0, but index {index} \
                     appears among {count} entries"
                ))
            })?;
            if slot.is_some() {
                return Err(Error::data(format!("palette index {index} appears twice")));
            }
            *slot = Some(entry);
        }
        let entries: Vec<PaletteEntry> = entries.into_iter().flatten().collect();
        Palette::new(entries)
    }

    /// Renders the palette in its `index,name,R,G,B` text format.
    pub fn to_file_string(&self) -> String {
        let mut out = String::from("# class palette: index,name,R,G,B\n");
        for (i, e) in self.entries.iter().enumerate() {
            let [r, g, b] = e.rgb;
            out.push_str(&format!("{i},{},{r},{g},{b}\n", e.name));
        }
        out
    }

    /// Reads a palette file.
    pub fn read_file(path: &Path) -> Result<Palette> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Palette::parse(&text)
    }

    /// Writes the palette in its text format.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn built_in_palette_has_six_active_classes() {
        let p = Palette::land_cover();
        assert_eq!(p.len(), 7);
        assert_eq!(p.active_classes(), 6);
        assert_eq!(p.unknown_index(), 6);
        assert_eq!(p.name(6), Some("unknown"));
        assert_eq!(p.color(6), Some([0, 0, 0]));
        assert_eq!(p.class_of_color([0, 0, 255]), Some(4));
        assert_eq!(p.class_of_color([1, 2, 3]), None);
    }

    #[test]
    fn subset_keeps_prefix_and_unknown() {
        let p = Palette::land_cover_subset(3).unwrap();
        assert_eq!(p.active_classes(), 3);
        assert_eq!(p.name(0), Some("urban"));
        assert_eq!(p.name(2), Some("rangeland"));
        assert_eq!(p.name(3), Some("unknown"));
        assert!(Palette::land_cover_subset(1).is_err());
        assert!(Palette::land_cover_subset(7).is_err());
        assert_eq!(Palette::land_cover_subset(6).unwrap(), Palette::land_cover());
    }

    #[test]
    fn text_format_round_trips() {
        let p = Palette::land_cover_subset(4).unwrap();
        let text = p.to_file_string();
        let back = Palette::parse(&text).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn parse_tolerates_comments_blank_lines_and_order() {
        let text = "# header\n\n1,water,0,0,255\n  # indented comment\n2,unknown,0,0,0\n0,urban,0,255,255\n";
        let p = Palette::parse(text).unwrap();
        assert_eq!(p.name(0), Some("urban"));
        assert_eq!(p.name(1), Some("water"));
        assert_eq!(p.unknown_index(), 2);
    }

    #[test]
    fn parse_rejects_gaps_duplicates_and_bad_fields() {
        let gap = "0,a,1,1,1\n2,unknown,0,0,0\n";
        assert!(matches!(Palette::parse(gap), Err(Error::Data(_))));

        let dup = "0,a,1,1,1\n0,b,2,2,2\n1,unknown,0,0,0\n";
        let err = Palette::parse(dup).unwrap_err();
        assert!(err.to_string().contains("twice"), "{err}");

        let bad_color = "0,a,1,1,300\n1,unknown,0,0,0\n";
        let err = Palette::parse(bad_color).unwrap_err();
        assert!(err.to_string().contains("color component"), "{err}");

        let fields = "0,a,1,1\n1,unknown,0,0,0\n";
        assert!(Palette::parse(fields).is_err());
    }

    #[test]
    fn constructor_enforces_unknown_placement_and_distinct_colors() {
        let no_unknown = Palette::new(vec![
            PaletteEntry::new("a", [1, 1, 1]),
            PaletteEntry::new("b", [2, 2, 2]),
        ]);
        assert!(no_unknown.unwrap_err().to_string().contains("unknown"));

        let misplaced = Palette::new(vec![
            PaletteEntry::new("unknown", [0, 0, 0]),
            PaletteEntry::new("a", [1, 1, 1]),
        ]);
        assert!(misplaced.unwrap_err().to_string().contains("last entry"));

        let shared = Palette::new(vec![
            PaletteEntry::new("a", [5, 5, 5]),
            PaletteEntry::new("b", [5, 5, 5]),
            PaletteEntry::new("unknown", [0, 0, 0]),
        ]);
        assert!(shared.unwrap_err().to_string().contains("share color"));

        let comma = Palette::new(vec![
            PaletteEntry::new("a,b", [1, 1, 1]),
            PaletteEntry::new("unknown", [0, 0, 0]),
        ]);
        assert!(comma.unwrap_err().to_string().contains("comma"));
    }
}
