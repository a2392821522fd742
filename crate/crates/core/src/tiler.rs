//! Region-aware processing of ultra-high-resolution images: a fixed tile
//! grid, detection-based tile filtering, one reasoning run per kept tile and
//! aggregation of the tagged summaries into an integration prompt.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::thread;

use image::DynamicImage;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::agent::{run, Outcome, RunConfig};
use crate::codec::{tokenize, OutputKind, ToolCall};
use crate::gateway::{render, Gateway, PromptBundle, Role, Templates, Turn};
use crate::transport::ToolHost;

pub const DEFAULT_TILE_SIZE: u32 = 512;
pub const NO_REGIONS_FALLBACK: &str = "no salient regions detected";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TilerError {
    #[error("BadDims: image {width}x{height} with tile size {tile_size}")]
    BadDims {
        width: u32,
        height: u32,
        tile_size: u32,
    },
    #[error("duplicate region tag {0}")]
    DuplicateTag(String),
    #[error("image error: {0}")]
    Image(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub row: u32,
    pub col: u32,
    /// Pixel box `(x1, y1, x2, y2)`, end-exclusive.
    pub bbox: [u32; 4],
}

impl Tile {
    pub fn tag(&self) -> String {
        region_tag(self.row, self.col)
    }

    pub fn width(&self) -> u32 {
        self.bbox[2] - self.bbox[0]
    }

    pub fn height(&self) -> u32 {
        self.bbox[3] - self.bbox[1]
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }
}

pub fn region_tag(row: u32, col: u32) -> String {
    format!("Region [{row},{col}]")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    pub rows: u32,
    pub cols: u32,
    /// Row-major.
    pub tiles: Vec<Tile>,
}

impl TileGrid {
    pub fn get(&self, row: u32, col: u32) -> Option<&Tile> {
        if row >= self.rows || col >= self.cols {
            return None;
        }
        self.tiles.get((row * self.cols + col) as usize)
    }
}

/// Splits `(width, height)` into square tiles; edge tiles may be smaller.
pub fn tile((width, height): (u32, u32), tile_size: u32) -> Result<TileGrid, TilerError> {
    if width == 0 || height == 0 || tile_size == 0 {
        return Err(TilerError::BadDims {
            width,
            height,
            tile_size,
        });
    }
    let rows = height.div_ceil(tile_size);
    let cols = width.div_ceil(tile_size);
    let mut tiles = Vec::with_capacity((rows * cols) as usize);
    for row in 0..rows {
        for col in 0..cols {
            let x1 = col * tile_size;
            let y1 = row * tile_size;
            tiles.push(Tile {
                row,
                col,
                bbox: [
                    x1,
                    y1,
                    (x1 + tile_size).min(width),
                    (y1 + tile_size).min(height),
                ],
            });
        }
    }
    Ok(TileGrid {
        width,
        height,
        tile_size,
        rows,
        cols,
        tiles,
    })
}

/// Width and height of an image file, read from its header.
pub fn image_dims(path: &Path) -> Result<(u32, u32), TilerError> {
    image::image_dimensions(path)
        .map_err(|err| TilerError::Image(format!("{}: {err}", path.display())))
}

/// One detector box, `label confidence x1 y1 x2 y2` on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub confidence: f64,
    pub bbox: [u32; 4],
}

impl Detection {
    /// Parses a box line. The last five whitespace fields are the confidence
    /// and the box; everything before them is the label.
    pub fn parse(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 6 {
            return Err("expected 'label confidence x1 y1 x2 y2'".into());
        }
        let split = fields.len() - 5;
        let confidence: f64 = fields[split]
            .parse()
            .map_err(|_| format!("bad confidence '{}'", fields[split]))?;
        let mut bbox = [0u32; 4];
        for (slot, field) in bbox.iter_mut().zip(&fields[split + 1..]) {
            let value: f64 = field
                .parse()
                .map_err(|_| format!("bad coordinate '{field}'"))?;
            if value < 0.0 {
                return Err(format!("negative coordinate '{field}'"));
            }
            *slot = value.round() as u32;
        }
        Ok(Self {
            label: fields[..split].join(" "),
            confidence,
            bbox,
        })
    }

    pub fn to_line(&self) -> String {
        let [x1, y1, x2, y2] = self.bbox;
        format!("{} {} {x1} {y1} {x2} {y2}", self.label, self.confidence)
    }

    /// True when the box and the tile share a region of positive area.
    pub fn overlaps(&self, tile: &Tile) -> bool {
        let [ax1, ay1, ax2, ay2] = self.bbox;
        let [bx1, by1, bx2, by2] = tile.bbox;
        ax1.max(bx1) < ax2.min(bx2) && ay1.max(by1) < ay2.min(by2)
    }

    pub fn matches_prompt(&self, prompt_words: &BTreeSet<String>) -> bool {
        !tokenize(&self.label).is_disjoint(prompt_words)
    }
}

/// Finds objects inside one tile.
pub trait TileDetector: Sync {
    fn detect(&self, tile: &Tile, prompt: &str) -> Result<Vec<Detection>, String>;
}

/// Detector over known full-image annotations.
#[derive(Debug, Clone, Default)]
pub struct SidecarDetector {
    pub detections: Vec<Detection>,
}

impl SidecarDetector {
    pub fn new(detections: Vec<Detection>) -> Self {
        Self { detections }
    }

    /// Reads one box line per non-empty line.
    pub fn load(path: &Path) -> Result<Self, TilerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|err| TilerError::Image(format!("{}: {err}", path.display())))?;
        let detections = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                Detection::parse(l).map_err(|err| {
                    TilerError::Image(format!("{}:{}: {err}", path.display(), i + 1))
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { detections })
    }
}

impl TileDetector for SidecarDetector {
    fn detect(&self, tile: &Tile, prompt: &str) -> Result<Vec<Detection>, String> {
        let words = tokenize(prompt);
        Ok(self
            .detections
            .iter()
            .filter(|d| d.overlaps(tile) && d.matches_prompt(&words))
            .cloned()
            .collect())
    }
}

/// Detector that crops each tile and calls a detection tool on the crop.
/// Returned boxes are shifted back to full-image coordinates.
pub struct ToolDetector<'a> {
    pub host: &'a dyn ToolHost,
    pub server: String,
    pub image_path: String,
    pub crop_tool: String,
    pub detect_tool: String,
}

impl<'a> ToolDetector<'a> {
    pub fn new(
        host: &'a dyn ToolHost,
        server: impl Into<String>,
        image_path: impl Into<String>,
    ) -> Self {
        Self {
            host,
            server: server.into(),
            image_path: image_path.into(),
            crop_tool: "image_crop".into(),
            detect_tool: "image_detection".into(),
        }
    }

    fn call(&self, tool: &str, arguments: Value) -> Result<crate::transport::ToolResult, String> {
        let arguments: Map<String, Value> = arguments.as_object().cloned().unwrap_or_default();
        let result = self
            .host
            .call(&ToolCall::new(self.server.clone(), tool, arguments))
            .map_err(|err| err.to_string())?;
        if result.is_error {
            return Err(result.text());
        }
        Ok(result)
    }
}

impl TileDetector for ToolDetector<'_> {
    fn detect(&self, tile: &Tile, prompt: &str) -> Result<Vec<Detection>, String> {
        let [x1, y1, x2, y2] = tile.bbox;
        let crop = self.call(
            &self.crop_tool,
            json!({"image_path": self.image_path, "x1": x1, "y1": y1, "x2": x2, "y2": y2}),
        )?;
        let crop_path = crop
            .image_paths()
            .into_iter()
            .next()
            .ok_or("crop returned no image")?;
        let detected = self.call(
            &self.detect_tool,
            json!({"image_path": crop_path, "txt_prompt": prompt}),
        )?;
        let boxes = detected
            .raw
            .get("boxes")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();
        boxes
            .iter()
            .filter_map(Value::as_str)
            .map(|line| {
                Detection::parse(line).map(|mut d| {
                    d.bbox = [
                        d.bbox[0] + x1,
                        d.bbox[1] + y1,
                        d.bbox[2] + x1,
                        d.bbox[3] + y1,
                    ];
                    d
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredTile {
    pub tile: Tile,
    pub detections: Vec<Detection>,
}

/// Tiles with at least one detection, in grid order. Detector failures
/// discard the tile and are logged.
pub fn filter_tiles(
    grid: &TileGrid,
    detector: &dyn TileDetector,
    instruction: &str,
) -> Vec<FilteredTile> {
    grid.tiles
        .iter()
        .filter_map(|tile| match detector.detect(tile, instruction) {
            Ok(detections) if !detections.is_empty() => Some(FilteredTile {
                tile: *tile,
                detections,
            }),
            Ok(_) => None,
            Err(err) => {
                log::warn!("{} discarded: detector failed: {err}", tile.tag());
                None
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub tag: String,
    pub row: u32,
    pub col: u32,
    pub detections: Vec<Detection>,
    pub summary: String,
    pub kept: bool,
    /// Set when the tile's run did not complete.
    pub flagged: bool,
}

/// Writes the tile's pixels to `<dir>/<stem>_r<row>_c<col>.png`.
pub fn crop_tile(
    image: &DynamicImage,
    source: &Path,
    tile: &Tile,
    dir: &Path,
) -> Result<PathBuf, TilerError> {
    let stem = source
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    let path = dir.join(format!("{stem}_r{}_c{}.png", tile.row, tile.col));
    image
        .crop_imm(tile.bbox[0], tile.bbox[1], tile.width(), tile.height())
        .save(&path)
        .map_err(|err| TilerError::Image(err.to_string()))?;
    Ok(path)
}

/// Runs one reasoning cycle on a kept tile's crop.
///
/// The summary is the O and A sections of a SOAP report, the answer of an
/// `<end>` turn, or a flagged note when the run did not complete.
pub fn summarize_region(
    kept: &FilteredTile,
    tile_image: &str,
    instruction: &str,
    host: &dyn ToolHost,
    gateway: &Gateway<'_>,
    config: &RunConfig,
) -> RegionSummary {
    let tag = kept.tile.tag();
    let (summary, flagged) = match run(tile_image, instruction, host, gateway, config) {
        Ok(report) => match (&report.outcome, &report.final_output) {
            (Outcome::Completed, Some(output)) => {
                let text = match (&output.kind, &output.sections) {
                    (OutputKind::Soap, Some(s)) => format!("{} {}", s.objective, s.assessment),
                    _ => output.answer.clone(),
                };
                (text, false)
            }
            (outcome, _) => (
                format!(
                    "[flagged: {}] run ended after {} rounds without a final answer",
                    outcome.as_str(),
                    report.rounds
                ),
                true,
            ),
        },
        Err(err) => (format!("[flagged: error] {err}"), true),
    };
    RegionSummary {
        tag,
        row: kept.tile.row,
        col: kept.tile.col,
        detections: kept.detections.clone(),
        summary,
        kept: true,
        flagged,
    }
}

/// Applies `f` to every kept tile with at most `parallelism` tiles in flight.
/// Results keep the input order.
pub fn summarize_all<F>(kept: &[FilteredTile], parallelism: usize, f: F) -> Vec<RegionSummary>
where
    F: Fn(&FilteredTile) -> RegionSummary + Sync,
{
    let mut out = Vec::with_capacity(kept.len());
    for chunk in kept.chunks(parallelism.max(1)) {
        let results: Vec<RegionSummary> = thread::scope(|scope| {
            let workers: Vec<_> = chunk.iter().map(|t| scope.spawn(|| f(t))).collect();
            workers
                .into_iter()
                .map(|w| w.join().expect("tile worker panicked"))
                .collect()
        });
        out.extend(results);
    }
    out
}

/// The tagged summaries in row-major order, one per line.
pub fn regional_narrative(summaries: &[RegionSummary]) -> Result<String, TilerError> {
    let mut kept: Vec<&RegionSummary> = summaries.iter().filter(|s| s.kept).collect();
    kept.sort_by_key(|s| (s.row, s.col));
    let mut seen = BTreeSet::new();
    for summary in &kept {
        if !seen.insert((summary.row, summary.col)) {
            return Err(TilerError::DuplicateTag(summary.tag.clone()));
        }
    }
    Ok(kept
        .iter()
        .map(|s| format!("{}: {}", s.tag, s.summary.trim()))
        .collect::<Vec<_>>()
        .join("\n"))
}

/// Builds the integration prompt for the final think call. With no kept
/// regions the narrative is a fallback sentence plus the global caption.
pub fn aggregate(
    summaries: &[RegionSummary],
    templates: &Templates,
    user_query: &str,
    global_caption: &str,
) -> Result<PromptBundle, TilerError> {
    let mut narrative = regional_narrative(summaries)?;
    if narrative.is_empty() {
        narrative = format!(
            "Fallback: {NO_REGIONS_FALLBACK} in any tile. Global description: {global_caption}"
        );
    }
    let integration = render(
        &templates.integration,
        &[
            ("regional_narrative", &narrative),
            ("user_query", user_query),
        ],
    );
    let mut bundle = PromptBundle::new(integration, 0);
    bundle.push(Turn::new(Role::User, user_query));
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_for_walkthrough_image() {
        let grid = tile((1240, 980), 512).unwrap();
        assert_eq!((grid.rows, grid.cols, grid.tiles.len()), (2, 3, 6));
        assert_eq!(grid.get(0, 2).unwrap().bbox, [1024, 0, 1240, 512]);
        assert_eq!(grid.get(1, 2).unwrap().bbox, [1024, 512, 1240, 980]);
    }

    #[test]
    fn small_and_exact_images() {
        let small = tile((100, 100), 512).unwrap();
        assert_eq!(
            small.tiles,
            [Tile {
                row: 0,
                col: 0,
                bbox: [0, 0, 100, 100]
            }]
        );
        let exact = tile((512, 512), 512).unwrap();
        assert_eq!(exact.tiles.len(), 1);
        assert_eq!(exact.tiles[0].bbox, [0, 0, 512, 512]);
        assert!(matches!(tile((0, 5), 512), Err(TilerError::BadDims { .. })));
        assert!(tile((5, 5), 0).is_err());
    }

    #[test]
    fn detection_line_round_trip() {
        let d = Detection::parse("warship tail number 0.214 172 192 205 231").unwrap();
        assert_eq!(d.label, "warship tail number");
        assert_eq!(d.bbox, [172, 192, 205, 231]);
        assert_eq!(d.to_line(), "warship tail number 0.214 172 192 205 231");
        assert!(Detection::parse("ship 0.3 1 2 3").is_err());
    }

    #[test]
    fn filter_keeps_annotated_tiles_only() {
        let grid = tile((1240, 980), 512).unwrap();
        let detector = SidecarDetector::new(vec![
            Detection::parse("ship 0.5 10 10 50 50").unwrap(),
            Detection::parse("ship 0.4 1100 600 1200 700").unwrap(),
            Detection::parse("building 0.4 600 100 700 200").unwrap(),
        ]);
        let kept = filter_tiles(&grid, &detector, "ship");
        let tags: Vec<String> = kept.iter().map(|k| k.tile.tag()).collect();
        assert_eq!(tags, ["Region [0,0]", "Region [1,2]"]);
        assert!(filter_tiles(&grid, &detector, "tank").is_empty());
    }

    fn summary(row: u32, col: u32, text: &str) -> RegionSummary {
        RegionSummary {
            tag: region_tag(row, col),
            row,
            col,
            detections: Vec::new(),
            summary: text.into(),
            kept: true,
            flagged: false,
        }
    }

    #[test]
    fn aggregate_orders_tags_row_major() {
        let bundle = aggregate(
            &[summary(1, 2, "b"), summary(0, 0, "a")],
            &Templates::default(),
            "What is here?",
            "",
        )
        .unwrap();
        let text = bundle.system_text();
        let first = text.find("Region [0,0]: a").unwrap();
        let second = text.find("Region [1,2]: b").unwrap();
        assert!(first < second);
    }

    #[test]
    fn aggregate_fallback_and_duplicates() {
        let bundle = aggregate(&[], &Templates::default(), "q", "a harbour").unwrap();
        assert!(bundle.system_text().contains(NO_REGIONS_FALLBACK));
        assert!(bundle.system_text().contains("a harbour"));
        assert_eq!(
            aggregate(
                &[summary(0, 1, "x"), summary(0, 1, "y")],
                &Templates::default(),
                "q",
                ""
            ),
            Err(TilerError::DuplicateTag("Region [0,1]".into()))
        );
    }

    #[test]
    fn region_tag_format() {
        assert_eq!(region_tag(2, 3), "Region [2,3]");
    }
}
