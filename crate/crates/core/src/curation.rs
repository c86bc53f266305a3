//! Caption curation: OCR-info insertion at six granularity levels,
//! filler-prefix removal, three grounding-info formats, and an exact parser
//! that inverts the emitters.
//!
//! Emitted formats are byte-exact contracts:
//!
//! ```text
//! segment ( <bbox>x1, y1, x2, y2</bbox> )
//! label ( starts at (x1, y1) and extends up to (x2, y2) )
//! label ( top-left corner of the image )
//! ```
//!
//! Single space after each comma, single spaces inside the parentheses.
//! Working coordinates are normalized floats; integers appear only at the
//! schema and emission boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::imaging::ImageDims;

/// Default filler prefixes stripped from OCR segments.
pub const DEFAULT_STOP_PHRASES: [&str; 2] = ["the text", "the word"];

/// Granularity of one OCR detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcrUnit {
    Word,
    Line,
    Full,
}

/// One of the six OCR caption levels: {Word, Line, Full} x {plain, bbox}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcrLevel {
    pub unit: OcrUnit,
    pub with_bbox: bool,
}

impl OcrLevel {
    /// Levels 0..=5: unit index * 2 + bbox flag.
    pub fn from_index(level: u8) -> Result<Self> {
        if level > 5 {
            return Err(ForgeError::OutOfRange(format!(
                "OCR level must be 0..=5, got {level}"
            )));
        }
        let unit = match level / 2 {
            0 => OcrUnit::Word,
            1 => OcrUnit::Line,
            _ => OcrUnit::Full,
        };
        Ok(Self {
            unit,
            with_bbox: level % 2 == 1,
        })
    }

    pub fn index(&self) -> u8 {
        let u = match self.unit {
            OcrUnit::Word => 0,
            OcrUnit::Line => 1,
            OcrUnit::Full => 2,
        };
        u * 2 + u8::from(self.with_bbox)
    }

    pub fn all() -> [OcrLevel; 6] {
        [0, 1, 2, 3, 4, 5].map(|i| OcrLevel::from_index(i).unwrap())
    }
}

/// Integer pixel box, `[x1, y1, x2, y2]` in the JSONL schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[i64; 4]", into = "[i64; 4]")]
pub struct PixBox {
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

impl From<[i64; 4]> for PixBox {
    fn from(v: [i64; 4]) -> Self {
        Self {
            x1: v[0],
            y1: v[1],
            x2: v[2],
            y2: v[3],
        }
    }
}

impl From<PixBox> for [i64; 4] {
    fn from(b: PixBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl PixBox {
    pub fn validate(&self, dims: ImageDims) -> Result<()> {
        if self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(ForgeError::OutOfRange(format!(
                "degenerate box {self:?}"
            )));
        }
        if self.x1 < 0
            || self.y1 < 0
            || self.x2 > dims.width as i64
            || self.y2 > dims.height as i64
        {
            return Err(ForgeError::OutOfRange(format!(
                "box {self:?} outside {}x{} image",
                dims.width, dims.height
            )));
        }
        Ok(())
    }
}

/// Normalized working box, every coordinate in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
struct NormBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl NormBox {
    fn from_pixels(b: PixBox, dims: ImageDims) -> Self {
        Self {
            x1: b.x1 as f64 / dims.width as f64,
            y1: b.y1 as f64 / dims.height as f64,
            x2: b.x2 as f64 / dims.width as f64,
            y2: b.y2 as f64 / dims.height as f64,
        }
    }

    /// Back to integers. Rounding absorbs the one-ulp normalization error,
    /// so pixel inputs survive the float round trip bit-for-bit.
    fn to_pixels(self, dims: ImageDims) -> PixBox {
        PixBox {
            x1: (self.x1 * dims.width as f64).round() as i64,
            y1: (self.y1 * dims.height as f64).round() as i64,
            x2: (self.x2 * dims.width as f64).round() as i64,
            y2: (self.y2 * dims.height as f64).round() as i64,
        }
    }

    fn center(self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }
}

/// One OCR detection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcrItem {
    pub text: String,
    pub bbox: PixBox,
    pub level: OcrUnit,
}

/// OCR annotations for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcrRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub items: Vec<OcrItem>,
}

impl OcrRecord {
    pub fn dims(&self) -> Result<ImageDims> {
        ImageDims::new(self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims()?;
        for item in &self.items {
            item.bbox.validate(dims)?;
        }
        Ok(())
    }
}

/// One grounded object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundObject {
    pub label: String,
    pub bbox: PixBox,
}

/// Grounding annotations plus the caption they decorate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub caption: String,
    pub objects: Vec<GroundObject>,
}

impl GroundRecord {
    pub fn dims(&self) -> Result<ImageDims> {
        ImageDims::new(self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims()?;
        for obj in &self.objects {
            if obj.label.is_empty() {
                return Err(ForgeError::EmptyInput("grounding label is empty".into()));
            }
            obj.bbox.validate(dims)?;
        }
        Ok(())
    }
}

/// The three grounding-info renderings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundFormat {
    BboxTag,
    StartsExtends,
    RegionName,
}

impl GroundFormat {
    pub fn all() -> [GroundFormat; 3] {
        [
            GroundFormat::BboxTag,
            GroundFormat::StartsExtends,
            GroundFormat::RegionName,
        ]
    }
}

/// The nine 3x3 region names, row-major from the top-left.
pub const REGION_NAMES: [&str; 9] = [
    "top-left corner of the image",
    "top of the image",
    "top-right corner of the image",
    "left of the image",
    "center of the image",
    "right of the image",
    "bottom-left corner of the image",
    "bottom of the image",
    "bottom-right corner of the image",
];

/// Maps a normalized center into the 3x3 grid. Total on [0, 1]: the upper
/// edge folds into the last cell.
fn region_index(cx: f64, cy: f64) -> usize {
    let col = ((cx * 3.0).floor() as isize).clamp(0, 2) as usize;
    let row = ((cy * 3.0).floor() as isize).clamp(0, 2) as usize;
    row * 3 + col
}

/// Region name for a pixel box inside an image.
pub fn region_name(bbox: PixBox, dims: ImageDims) -> &'static str {
    let (cx, cy) = NormBox::from_pixels(bbox, dims).center();
    REGION_NAMES[region_index(cx, cy)]
}

/// Strips stop-phrase prefixes (ASCII case-insensitive) until none applies,
/// trimming the whitespace the phrase leaves behind. Idempotent by
/// construction; interior occurrences are never touched.
pub fn strip_stop_phrases(text: &str, stop_phrases: &[&str]) -> String {
    let mut s = text.trim_start();
    'outer: loop {
        for phrase in stop_phrases {
            if phrase.is_empty() {
                continue;
            }
            if s.len() >= phrase.len() && s[..phrase.len()].eq_ignore_ascii_case(phrase) {
                s = s[phrase.len()..].trim_start();
                continue 'outer;
            }
        }
        break;
    }
    s.to_string()
}

fn bbox_tag(b: PixBox) -> String {
    format!("<bbox>{}, {}, {}, {}</bbox>", b.x1, b.y1, b.x2, b.y2)
}

fn starts_extends(b: PixBox) -> String {
    format!(
        "starts at ({}, {}) and extends up to ({}, {})",
        b.x1, b.y1, b.x2, b.y2
    )
}

/// Builds the OCR caption for one record at one level: the record's items of
/// the level's unit, stop-phrase-stripped, in reading order (top-to-bottom,
/// then left-to-right), joined by single spaces; bbox levels annotate every
/// segment. Records with no matching items give an empty caption.
pub fn ocr_caption(rec: &OcrRecord, level: OcrLevel, stop_phrases: &[&str]) -> String {
    let dims = match rec.dims() {
        Ok(d) => d,
        Err(_) => return String::new(),
    };
    let mut items: Vec<(NormBox, &OcrItem)> = rec
        .items
        .iter()
        .filter(|i| i.level == level.unit)
        .map(|i| (NormBox::from_pixels(i.bbox, dims), i))
        .collect();
    items.sort_by(|a, b| {
        (a.0.y1, a.0.x1)
            .partial_cmp(&(b.0.y1, b.0.x1))
            .expect("normalized coords are finite")
    });
    let mut segments = Vec::new();
    for (nb, item) in items {
        let text = strip_stop_phrases(&item.text, stop_phrases);
        if text.is_empty() {
            continue;
        }
        if level.with_bbox {
            segments.push(format!("{text} ( {} )", bbox_tag(nb.to_pixels(dims))));
        } else {
            segments.push(text);
        }
    }
    segments.join(" ")
}

/// A grounded caption plus the labels that could not be located.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedCaption {
    pub caption: String,
    pub skipped: Vec<String>,
}

/// Finds the first whole-word occurrence of `label` in `caption` that does
/// not overlap a claimed range. Word boundaries are non-alphanumeric.
fn find_whole_word(caption: &str, label: &str, claimed: &[(usize, usize)]) -> Option<usize> {
    if label.is_empty() {
        return None;
    }
    let mut from = 0;
    while let Some(rel) = caption[from..].find(label) {
        let at = from + rel;
        let end = at + label.len();
        let left_ok = at == 0
            || !caption[..at]
                .chars()
                .next_back()
                .is_some_and(char::is_alphanumeric);
        let right_ok = end == caption.len()
            || !caption[end..].chars().next().is_some_and(char::is_alphanumeric);
        let overlaps = claimed.iter().any(|&(a, b)| at < b && a < end);
        if left_ok && right_ok && !overlaps {
            return Some(at);
        }
        from = at + label.len().max(1);
    }
    None
}

/// Rewrites each object's first whole-word mention in the base caption to
/// `label ( info )`. Matching runs against the original caption; splices are
/// applied right-to-left so positions stay valid. Unlocatable labels are
/// skipped and reported.
pub fn ground_caption(rec: &GroundRecord, fmt: GroundFormat) -> GroundedCaption {
    let dims = match rec.dims() {
        Ok(d) => d,
        Err(_) => {
            return GroundedCaption {
                caption: rec.caption.clone(),
                skipped: rec.objects.iter().map(|o| o.label.clone()).collect(),
            }
        }
    };
    let mut claimed: Vec<(usize, usize)> = Vec::new();
    let mut splices: Vec<(usize, usize, String)> = Vec::new();
    let mut skipped = Vec::new();
    for obj in &rec.objects {
        match find_whole_word(&rec.caption, &obj.label, &claimed) {
            Some(at) => {
                let end = at + obj.label.len();
                claimed.push((at, end));
                let info = match fmt {
                    GroundFormat::BboxTag => bbox_tag(
                        NormBox::from_pixels(obj.bbox, dims).to_pixels(dims),
                    ),
                    GroundFormat::StartsExtends => starts_extends(
                        NormBox::from_pixels(obj.bbox, dims).to_pixels(dims),
                    ),
                    GroundFormat::RegionName => region_name(obj.bbox, dims).to_string(),
                };
                splices.push((at, end, format!("{} ( {info} )", obj.label)));
            }
            None => skipped.push(obj.label.clone()),
        }
    }
    splices.sort_by_key(|s| s.0);
    let mut caption = rec.caption.clone();
    for (at, end, replacement) in splices.into_iter().rev() {
        caption.replace_range(at..end, &replacement);
    }
    GroundedCaption { caption, skipped }
}

/// Parsed grounding/OCR info attached to one segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedInfo {
    Bbox(PixBox),
    StartsExtends(PixBox),
    Region(&'static str),
}

/// One recovered annotation: the free text run before the marker, and its
/// info payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSegment {
    pub text: String,
    pub info: ParsedInfo,
}

struct Scanner<'a> {
    s: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn expect(&mut self, lit: &str) -> Result<()> {
        if self.s[self.pos..].starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(ForgeError::Parse {
                offset: self.pos,
                message: format!("expected {lit:?}"),
            })
        }
    }

    fn integer(&mut self) -> Result<i64> {
        let rest = &self.s[self.pos..];
        let negative = rest.starts_with('-');
        let digits_at = usize::from(negative);
        let len = rest[digits_at..]
            .find(|c: char| !c.is_ascii_digit())
            .unwrap_or(rest.len() - digits_at);
        if len == 0 {
            return Err(ForgeError::Parse {
                offset: self.pos,
                message: "expected integer".into(),
            });
        }
        let end = digits_at + len;
        let value = rest[..end].parse().map_err(|e| ForgeError::Parse {
            offset: self.pos,
            message: format!("bad integer: {e}"),
        })?;
        self.pos += end;
        Ok(value)
    }

    fn quad(&mut self, open: &str, close: &str) -> Result<PixBox> {
        self.expect(open)?;
        let x1 = self.integer()?;
        self.expect(", ")?;
        let y1 = self.integer()?;
        self.expect(", ")?;
        let x2 = self.integer()?;
        self.expect(", ")?;
        let y2 = self.integer()?;
        self.expect(close)?;
        Ok(PixBox { x1, y1, x2, y2 })
    }
}

/// Parses a caption produced by [`ocr_caption`] or [`ground_caption`],
/// recovering every annotated segment in order. Captions with no annotations
/// parse to an empty list. A malformed or stray tag is an error carrying the
/// byte offset where parsing failed.
pub fn parse_augmented(caption: &str) -> Result<Vec<ParsedSegment>> {
    let mut out = Vec::new();
    let mut seg_start = 0;
    let mut pos = 0;
    while pos < caption.len() {
        let rest = &caption[pos..];
        let next_marker = rest.find(" ( ");
        let next_stray = rest.find("<bbox>");
        match (next_marker, next_stray) {
            (None, None) => break,
            (Some(m), Some(s)) if s < m => {
                return Err(ForgeError::Parse {
                    offset: pos + s,
                    message: "bbox tag outside an annotation".into(),
                });
            }
            (None, Some(s)) => {
                return Err(ForgeError::Parse {
                    offset: pos + s,
                    message: "bbox tag outside an annotation".into(),
                });
            }
            (Some(m), _) => {
                let marker_at = pos + m;
                let body_at = marker_at + 3;
                let body = &caption[body_at..];
                let info = if body.starts_with("<bbox>") {
                    let mut sc = Scanner {
                        s: caption,
                        pos: body_at,
                    };
                    let b = sc.quad("<bbox>", "</bbox>")?;
                    sc.expect(" )")?;
                    pos = sc.pos;
                    Some(ParsedInfo::Bbox(b))
                } else if body.starts_with("starts at (") {
                    let mut sc = Scanner {
                        s: caption,
                        pos: body_at,
                    };
                    sc.expect("starts at (")?;
                    let x1 = sc.integer()?;
                    sc.expect(", ")?;
                    let y1 = sc.integer()?;
                    sc.expect(") and extends up to (")?;
                    let x2 = sc.integer()?;
                    sc.expect(", ")?;
                    let y2 = sc.integer()?;
                    sc.expect(") )")?;
                    pos = sc.pos;
                    Some(ParsedInfo::StartsExtends(PixBox { x1, y1, x2, y2 }))
                } else if let Some(name) = REGION_NAMES
                    .iter()
                    .find(|n| body.starts_with(&format!("{n} )")))
                {
                    pos = body_at + name.len() + 2;
                    Some(ParsedInfo::Region(name))
                } else {
                    // An ordinary parenthetical, not an annotation.
                    pos = body_at;
                    None
                };
                if let Some(info) = info {
                    let mut text = &caption[seg_start..marker_at];
                    // Drop the single joiner space left by the previous
                    // annotation.
                    if seg_start > 0 {
                        text = text.strip_prefix(' ').unwrap_or(text);
                    }
                    out.push(ParsedSegment {
                        text: text.to_string(),
                        info,
                    });
                    seg_start = pos;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn dims(w: u32, h: u32) -> ImageDims {
        ImageDims::new(w, h).unwrap()
    }

    fn ocr_rec(items: Vec<OcrItem>) -> OcrRecord {
        OcrRecord {
            image_id: "img".into(),
            width: 640,
            height: 480,
            items,
        }
    }

    fn item(text: &str, bbox: [i64; 4], level: OcrUnit) -> OcrItem {
        OcrItem {
            text: text.into(),
            bbox: bbox.into(),
            level,
        }
    }

    #[test]
    fn empty_items_give_empty_caption() {
        let rec = ocr_rec(vec![]);
        for level in OcrLevel::all() {
            assert_eq!(ocr_caption(&rec, level, &DEFAULT_STOP_PHRASES), "");
        }
    }

    #[test]
    fn bbox_segment_is_byte_exact() {
        let rec = ocr_rec(vec![item("STOP", [10, 20, 50, 60], OcrUnit::Word)]);
        let cap = ocr_caption(
            &rec,
            OcrLevel {
                unit: OcrUnit::Word,
                with_bbox: true,
            },
            &DEFAULT_STOP_PHRASES,
        );
        assert_eq!(cap, "STOP ( <bbox>10, 20, 50, 60</bbox> )");
    }

    #[test]
    fn stop_phrase_prefix_is_stripped() {
        let rec = ocr_rec(vec![item("the text SALE", [5, 5, 90, 30], OcrUnit::Word)]);
        let cap = ocr_caption(
            &rec,
            OcrLevel {
                unit: OcrUnit::Word,
                with_bbox: false,
            },
            &DEFAULT_STOP_PHRASES,
        );
        assert!(cap.starts_with("SALE"), "got {cap:?}");
        assert_eq!(cap, "SALE");
    }

    #[test]
    fn stripping_is_idempotent_and_prefix_only() {
        let stops = ["the text", "the word"];
        let once = strip_stop_phrases("The Text the word  HELLO the text", &stops);
        assert_eq!(once, "HELLO the text");
        assert_eq!(strip_stop_phrases(&once, &stops), once);
        // Interior occurrence untouched even after repeated application.
        assert_eq!(
            strip_stop_phrases("SALE the text SALE", &stops),
            "SALE the text SALE"
        );
    }

    #[test]
    fn segments_emitted_in_reading_order() {
        let rec = ocr_rec(vec![
            item("second", [10, 100, 40, 120], OcrUnit::Word),
            item("third", [200, 100, 240, 120], OcrUnit::Word),
            item("first", [300, 10, 340, 30], OcrUnit::Word),
        ]);
        let cap = ocr_caption(
            &rec,
            OcrLevel {
                unit: OcrUnit::Word,
                with_bbox: false,
            },
            &[],
        );
        assert_eq!(cap, "first second third");
    }

    #[test]
    fn level_selects_unit_and_fully_stripped_segments_drop() {
        let rec = ocr_rec(vec![
            item("word-level", [0, 0, 10, 10], OcrUnit::Word),
            item("line-level", [0, 20, 10, 30], OcrUnit::Line),
            item("the text", [0, 40, 10, 50], OcrUnit::Line),
        ]);
        let cap = ocr_caption(&rec, OcrLevel::from_index(2).unwrap(), &DEFAULT_STOP_PHRASES);
        assert_eq!(cap, "line-level");
    }

    #[test]
    fn no_bbox_levels_never_contain_tags() {
        let rec = ocr_rec(vec![
            item("alpha", [0, 0, 10, 10], OcrUnit::Word),
            item("beta", [0, 20, 10, 30], OcrUnit::Line),
            item("gamma", [0, 40, 10, 50], OcrUnit::Full),
        ]);
        for level in OcrLevel::all() {
            let cap = ocr_caption(&rec, level, &[]);
            assert_eq!(cap.contains("<bbox>"), level.with_bbox && !cap.is_empty());
        }
    }

    #[test]
    fn level_index_round_trips() {
        for i in 0..=5u8 {
            assert_eq!(OcrLevel::from_index(i).unwrap().index(), i);
        }
        assert!(OcrLevel::from_index(6).is_err());
    }

    fn ground_rec(caption: &str, objects: Vec<GroundObject>) -> GroundRecord {
        GroundRecord {
            image_id: "img".into(),
            width: 300,
            height: 300,
            caption: caption.into(),
            objects,
        }
    }

    fn obj(label: &str, bbox: [i64; 4]) -> GroundObject {
        GroundObject {
            label: label.into(),
            bbox: bbox.into(),
        }
    }

    #[test]
    fn region_name_example_top_left() {
        let rec = ground_rec("a dog runs", vec![obj("dog", [0, 0, 10, 10])]);
        let out = ground_caption(&rec, GroundFormat::RegionName);
        assert_eq!(out.caption, "a dog ( top-left corner of the image ) runs");
        assert!(out.skipped.is_empty());
    }

    #[test]
    fn starts_extends_is_byte_exact() {
        let rec = ground_rec("a cat sits", vec![obj("cat", [12, 30, 200, 180])]);
        let out = ground_caption(&rec, GroundFormat::StartsExtends);
        assert_eq!(
            out.caption,
            "a cat ( starts at (12, 30) and extends up to (200, 180) ) sits"
        );
    }

    #[test]
    fn bbox_tag_format_on_grounding() {
        let rec = ground_rec("red car parked", vec![obj("car", [50, 60, 120, 140])]);
        let out = ground_caption(&rec, GroundFormat::BboxTag);
        assert_eq!(
            out.caption,
            "red car ( <bbox>50, 60, 120, 140</bbox> ) parked"
        );
    }

    #[test]
    fn zero_objects_leave_caption_unchanged() {
        let rec = ground_rec("nothing to see", vec![]);
        let out = ground_caption(&rec, GroundFormat::BboxTag);
        assert_eq!(out.caption, "nothing to see");
        assert!(out.skipped.is_empty());
    }

    #[test]
    fn absent_label_is_skipped_and_reported() {
        let rec = ground_rec(
            "a dog runs",
            vec![obj("dog", [0, 0, 10, 10]), obj("unicorn", [5, 5, 20, 20])],
        );
        let out = ground_caption(&rec, GroundFormat::RegionName);
        assert_eq!(out.skipped, vec!["unicorn".to_string()]);
        assert!(out.caption.contains("dog ( "));
    }

    #[test]
    fn whole_word_matching_skips_substrings() {
        // "cat" must not match inside "catalog".
        let rec = ground_rec("the catalog lists a cat", vec![obj("cat", [0, 0, 10, 10])]);
        let out = ground_caption(&rec, GroundFormat::RegionName);
        assert_eq!(
            out.caption,
            "the catalog lists a cat ( top-left corner of the image )"
        );
    }

    #[test]
    fn multiple_objects_splice_without_corruption() {
        let rec = ground_rec(
            "a dog chases a cat around",
            vec![obj("cat", [200, 200, 290, 290]), obj("dog", [0, 0, 50, 50])],
        );
        let out = ground_caption(&rec, GroundFormat::RegionName);
        assert_eq!(
            out.caption,
            "a dog ( top-left corner of the image ) chases a cat ( bottom-right corner of the image ) around"
        );
    }

    #[test]
    fn region_mapping_is_total_over_the_grid() {
        let d = dims(300, 300);
        let mut seen = std::collections::HashSet::new();
        for gy in 0..3 {
            for gx in 0..3 {
                let b = PixBox {
                    x1: gx * 100 + 10,
                    y1: gy * 100 + 10,
                    x2: gx * 100 + 30,
                    y2: gy * 100 + 30,
                };
                seen.insert(region_name(b, d));
            }
        }
        assert_eq!(seen.len(), 9);
        // Full-image box lands exactly in the center cell.
        assert_eq!(
            region_name(
                PixBox {
                    x1: 0,
                    y1: 0,
                    x2: 300,
                    y2: 300
                },
                d
            ),
            "center of the image"
        );
    }

    #[test]
    fn parse_recovers_ocr_bbox_exactly() {
        let segs = parse_augmented("STOP ( <bbox>10, 20, 50, 60</bbox> )").unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].text, "STOP");
        assert_eq!(
            segs[0].info,
            ParsedInfo::Bbox(PixBox {
                x1: 10,
                y1: 20,
                x2: 50,
                y2: 60
            })
        );
    }

    #[test]
    fn plain_caption_parses_to_empty_list() {
        assert!(parse_augmented("just a plain caption").unwrap().is_empty());
        // Ordinary parenthetical is not an annotation.
        assert!(parse_augmented("text ( not a tag )").unwrap().is_empty());
    }

    #[test]
    fn truncated_bbox_is_an_offset_error() {
        let caption = "X ( <bbox>10, 20";
        let err = parse_augmented(caption).unwrap_err();
        match err {
            ForgeError::Parse { offset, .. } => assert_eq!(offset, caption.len()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stray_bbox_tag_is_an_error() {
        let err = parse_augmented("raw <bbox>1, 2, 3, 4</bbox> tag").unwrap_err();
        match err {
            ForgeError::Parse { offset, .. } => assert_eq!(offset, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    const WORDS: [&str; 12] = [
        "sale", "stop", "exit", "menu", "open", "hours", "coffee", "news", "park", "total",
        "fresh", "daily",
    ];

    fn random_text(rng: &mut ChaCha12Rng, allow_stop_prefix: bool) -> String {
        let mut parts = Vec::new();
        if allow_stop_prefix && rng.gen_bool(0.3) {
            parts.push(DEFAULT_STOP_PHRASES[rng.gen_range(0..2)].to_string());
        }
        for _ in 0..rng.gen_range(1..4) {
            parts.push(WORDS[rng.gen_range(0..WORDS.len())].to_string());
        }
        parts.join(" ")
    }

    fn random_box(rng: &mut ChaCha12Rng, d: ImageDims) -> PixBox {
        let x1 = rng.gen_range(0..d.width as i64 - 1);
        let y1 = rng.gen_range(0..d.height as i64 - 1);
        let x2 = rng.gen_range(x1 + 1..=d.width as i64);
        let y2 = rng.gen_range(y1 + 1..=d.height as i64);
        PixBox { x1, y1, x2, y2 }
    }

    #[test]
    fn ocr_round_trip_on_random_records() {
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        let d = dims(800, 600);
        for _ in 0..300 {
            let unit = [OcrUnit::Word, OcrUnit::Line, OcrUnit::Full][rng.gen_range(0..3)];
            let items: Vec<OcrItem> = (0..rng.gen_range(1..6))
                .map(|_| OcrItem {
                    text: random_text(&mut rng, true),
                    bbox: random_box(&mut rng, d),
                    level: unit,
                })
                .collect();
            let rec = OcrRecord {
                image_id: "r".into(),
                width: d.width,
                height: d.height,
                items: items.clone(),
            };
            rec.validate().unwrap();
            let level = OcrLevel {
                unit,
                with_bbox: true,
            };
            let cap = ocr_caption(&rec, level, &DEFAULT_STOP_PHRASES);
            let parsed = parse_augmented(&cap).unwrap();
            // Expected: stripped, nonempty, reading order.
            let mut expect: Vec<(NormBox, String, PixBox)> = items
                .iter()
                .filter_map(|i| {
                    let t = strip_stop_phrases(&i.text, &DEFAULT_STOP_PHRASES);
                    (!t.is_empty()).then(|| (NormBox::from_pixels(i.bbox, d), t, i.bbox))
                })
                .collect();
            expect.sort_by(|a, b| {
                (a.0.y1, a.0.x1)
                    .partial_cmp(&(b.0.y1, b.0.x1))
                    .unwrap()
            });
            assert_eq!(parsed.len(), expect.len());
            for (p, (_, text, bbox)) in parsed.iter().zip(&expect) {
                assert_eq!(&p.text, text);
                assert_eq!(p.info, ParsedInfo::Bbox(*bbox), "bbox must round-trip");
            }
        }
    }

    #[test]
    fn grounding_round_trip_on_random_records() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let d = dims(640, 480);
        let labels = ["dog", "cat", "tree", "sign", "bus", "bench"];
        for trial in 0..300 {
            let count = rng.gen_range(1..4);
            let mut pick: Vec<&str> = labels.to_vec();
            for k in 0..count {
                let j = rng.gen_range(k..pick.len());
                pick.swap(k, j);
            }
            let chosen = &pick[..count];
            let caption = format!("photo of a {}", chosen.join(" next to a "));
            let objects: Vec<GroundObject> = chosen
                .iter()
                .map(|l| GroundObject {
                    label: l.to_string(),
                    bbox: random_box(&mut rng, d),
                })
                .collect();
            let rec = GroundRecord {
                image_id: "g".into(),
                width: d.width,
                height: d.height,
                caption,
                objects: objects.clone(),
            };
            rec.validate().unwrap();
            let fmt = GroundFormat::all()[trial % 3];
            let out = ground_caption(&rec, fmt);
            assert!(out.skipped.is_empty());
            let parsed = parse_augmented(&out.caption).unwrap();
            assert_eq!(parsed.len(), objects.len());
            // Parsed annotations appear in caption order == object order
            // here (labels appear left to right).
            for (p, o) in parsed.iter().zip(&objects) {
                assert!(
                    p.text.ends_with(&o.label),
                    "segment {:?} should end with label {:?}",
                    p.text,
                    o.label
                );
                match (fmt, &p.info) {
                    (GroundFormat::BboxTag, ParsedInfo::Bbox(b)) => assert_eq!(*b, o.bbox),
                    (GroundFormat::StartsExtends, ParsedInfo::StartsExtends(b)) => {
                        assert_eq!(*b, o.bbox)
                    }
                    (GroundFormat::RegionName, ParsedInfo::Region(r)) => {
                        assert_eq!(*r, region_name(o.bbox, d))
                    }
                    other => panic!("wrong info kind {other:?}"),
                }
            }
        }
    }

    #[test]
    fn record_schemas_round_trip_json() {
        let rec = OcrRecord {
            image_id: "x".into(),
            width: 100,
            height: 50,
            items: vec![item("hey", [1, 2, 3, 4], OcrUnit::Line)],
        };
        let js = serde_json::to_string(&rec).unwrap();
        assert!(js.contains("\"bbox\":[1,2,3,4]"));
        assert!(js.contains("\"level\":\"line\""));
        let back: OcrRecord = serde_json::from_str(&js).unwrap();
        assert_eq!(rec, back);

        let g = GroundRecord {
            image_id: "y".into(),
            width: 10,
            height: 10,
            caption: "a b".into(),
            objects: vec![obj("a", [0, 0, 5, 5])],
        };
        let js = serde_json::to_string(&g).unwrap();
        let back: GroundRecord = serde_json::from_str(&js).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn validation_rejects_bad_boxes() {
        let d = dims(100, 100);
        assert!(PixBox {
            x1: 5,
            y1: 5,
            x2: 5,
            y2: 10
        }
        .validate(d)
        .is_err());
        assert!(PixBox {
            x1: 0,
            y1: 0,
            x2: 101,
            y2: 10
        }
        .validate(d)
        .is_err());
        assert!(PixBox {
            x1: -1,
            y1: 0,
            x2: 10,
            y2: 10
        }
        .validate(d)
        .is_err());
    }
}
