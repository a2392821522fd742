//! Desk-scale tool services: the remote-sensing tool roster as deterministic
//! stubs. Image tools do real pixel work where the contract fixes the output
//! (crop, binarization, upscaling, drawn boxes); restoration tools copy their
//! input. Detection reads a sidecar annotation file instead of running a
//! model, and text tools look up a keyword corpus.
//!
//! Output files are named `<stem>_<tool>_<hash8>.png`, where the hash covers
//! the encoded output, so identical requests produce identical payloads.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GenericImageView, ImageFormat, Rgb, RgbImage};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::codec::{tokenize, ToolCategory};
use crate::gateway::hex;
use crate::tiler::Detection;
use crate::transport::wire::WireTool;
use crate::transport::{error_payload, ToolService};

pub const VISION_SERVER: &str = "mcp_vision_server";
pub const TEXT_SERVER: &str = "mcp_text_server";

const DEFAULT_CORPUS: &str = include_str!("../fixtures/corpus.json");

const RESTORATION_TOOLS: [(&str, &str); 4] = [
    (
        "image_cloud_removal",
        "Remove cloud cover from a remote-sensing image.",
    ),
    ("image_rain_removal", "Remove rain streaks from an image."),
    ("image_denoise", "Reduce sensor noise in an image."),
    ("image_deblur", "Remove motion blur from an image."),
];

/// Vision tools: detection, crop, binarization, super-resolution and the
/// restoration stubs.
///
/// Results are written next to the input image and reported in the same
/// form as the input path: `crops/a.png` yields `crops/a_image_crop_<hash8>.png`.
#[derive(Debug, Clone, Default)]
pub struct VisionDesk {
    /// Directory relative paths resolve against; the working directory
    /// when unset.
    pub root: Option<PathBuf>,
}

impl VisionDesk {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_root(root: impl Into<PathBuf>) -> Self {
        Self {
            root: Some(root.into()),
        }
    }

    fn resolve(&self, path: &str) -> PathBuf {
        match &self.root {
            Some(root) => root.join(path),
            None => PathBuf::from(path),
        }
    }

    fn load(&self, path: &str) -> Result<DynamicImage, String> {
        let resolved = self.resolve(path);
        if !resolved.is_file() {
            return Err(no_such_file(path));
        }
        image::open(&resolved).map_err(|err| format!("Error: cannot decode image '{path}': {err}"))
    }
}

fn region_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "image_path": {"type": "string", "description": "Path of the source image."},
            "x1": {"type": "integer"},
            "y1": {"type": "integer"},
            "x2": {"type": "integer"},
            "y2": {"type": "integer"}
        },
        "required": ["image_path", "x1", "y1", "x2", "y2"]
    })
}

fn image_only_schema() -> Value {
    json!({
        "type": "object",
        "properties": {"image_path": {"type": "string", "description": "Path of the source image."}},
        "required": ["image_path"]
    })
}

fn vision_tool(name: &str, description: &str, schema: Value) -> WireTool {
    WireTool {
        name: name.into(),
        description: description.into(),
        input_schema: schema,
        category: ToolCategory::Vision,
    }
}

impl ToolService for VisionDesk {
    fn tools(&self) -> Vec<WireTool> {
        let mut tools = vec![
            vision_tool(
                "image_detection",
                "Open-vocabulary object detection. Detect and locate objects named in txt_prompt (categories separated by ' . ') and return labelled boxes as 'label confidence x1 y1 x2 y2'.",
                json!({
                    "type": "object",
                    "properties": {
                        "image_path": {"type": "string", "description": "Path of the source image."},
                        "txt_prompt": {"type": "string", "description": "Object categories to detect."}
                    },
                    "required": ["image_path", "txt_prompt"]
                }),
            ),
            vision_tool(
                "image_crop",
                "Crop one rectangular region (x1, y1, x2, y2) out of an image to zoom in on it.",
                region_schema(),
            ),
            vision_tool(
                "image_binary",
                "Crop a region and apply binarization (Otsu threshold) to make markings and numbers readable.",
                region_schema(),
            ),
            vision_tool(
                "image_super_resolution",
                "Enhance image resolution 4x to sharpen small details.",
                image_only_schema(),
            ),
        ];
        for (name, description) in RESTORATION_TOOLS {
            tools.push(vision_tool(name, description, image_only_schema()));
        }
        tools
    }

    fn call(&self, tool_name: &str, arguments: &Map<String, Value>) -> Value {
        let outcome = match tool_name {
            "image_detection" => self.detection(arguments),
            "image_crop" => self.crop(arguments, false),
            "image_binary" => self.crop(arguments, true),
            "image_super_resolution" => self.super_resolution(arguments),
            name if RESTORATION_TOOLS.iter().any(|(n, _)| *n == name) => {
                self.identity(name, arguments)
            }
            other => Err(format!("unknown tool: {other}")),
        };
        outcome.unwrap_or_else(error_payload)
    }
}

type ToolOutcome = Result<Value, String>;

fn no_such_file(path: &str) -> String {
    format!("Error: [Errno 2] No such file or directory: '{path}'")
}

fn string_arg<'a>(arguments: &'a Map<String, Value>, key: &str) -> Result<&'a str, String> {
    arguments
        .get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("Error: missing or non-string argument '{key}'"))
}

fn int_arg(arguments: &Map<String, Value>, key: &str) -> Result<i64, String> {
    let value = arguments
        .get(key)
        .ok_or_else(|| format!("Error: missing argument '{key}'"))?;
    value
        .as_i64()
        .or_else(|| {
            value
                .as_f64()
                .filter(|f| f.fract() == 0.0)
                .map(|f| f as i64)
        })
        .ok_or_else(|| format!("Error: argument '{key}' must be an integer, got {value}"))
}

impl VisionDesk {
    fn save(&self, source: &str, tool: &str, image: &DynamicImage) -> Result<String, String> {
        let mut encoded = Vec::new();
        image
            .write_to(&mut Cursor::new(&mut encoded), ImageFormat::Png)
            .map_err(|err| format!("Error: cannot encode result: {err}"))?;
        let digest = hex(&Sha256::digest(&encoded));
        let source = Path::new(source);
        let stem = source
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image");
        let reported = source
            .parent()
            .unwrap_or(Path::new(""))
            .join(format!("{stem}_{tool}_{}.png", &digest[..8]));
        let reported = reported.to_string_lossy().into_owned();
        std::fs::write(self.resolve(&reported), &encoded)
            .map_err(|err| format!("Error: cannot write result: {err}"))?;
        Ok(reported)
    }

    fn crop(&self, arguments: &Map<String, Value>, binarize: bool) -> ToolOutcome {
        let path = string_arg(arguments, "image_path")?;
        let [x1, y1, x2, y2] = ["x1", "y1", "x2", "y2"]
            .map(|k| int_arg(arguments, k))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?
            .try_into()
            .expect("four coordinates");
        let source = self.load(path)?;
        let (width, height) = source.dimensions();
        let valid =
            0 <= x1 && x1 < x2 && x2 <= width as i64 && 0 <= y1 && y1 < y2 && y2 <= height as i64;
        if !valid {
            return Err(format!(
                "Error: invalid region ({x1}, {y1}, {x2}, {y2}) for a {width}x{height} image"
            ));
        }
        let (w, h) = ((x2 - x1) as u32, (y2 - y1) as u32);
        let cropped = source.crop_imm(x1 as u32, y1 as u32, w, h);
        let (tool, result, note) = if binarize {
            let binary = otsu_binarize(&cropped);
            (
                "image_binary",
                DynamicImage::ImageLuma8(binary),
                format!("binarized region ({x1}, {y1}, {x2}, {y2}), size {w}x{h}"),
            )
        } else {
            (
                "image_crop",
                cropped,
                format!("cropped region ({x1}, {y1}, {x2}, {y2}), size {w}x{h}"),
            )
        };
        let out = self.save(path, tool, &result)?;
        Ok(json!({
            "is_error": false,
            "content": [{"type": "image", "path": out}, {"type": "text", "text": note}]
        }))
    }

    fn super_resolution(&self, arguments: &Map<String, Value>) -> ToolOutcome {
        let path = string_arg(arguments, "image_path")?;
        let source = self.load(path)?;
        let (w, h) = source.dimensions();
        let scaled = source.resize_exact(w * 4, h * 4, image::imageops::FilterType::Nearest);
        let out = self.save(path, "image_super_resolution", &scaled)?;
        Ok(json!({
            "is_error": false,
            "content": [
                {"type": "image", "path": out},
                {"type": "text", "text": format!("upscaled {w}x{h} to {}x{} (nearest neighbour)", w * 4, h * 4)}
            ]
        }))
    }

    fn identity(&self, tool: &str, arguments: &Map<String, Value>) -> ToolOutcome {
        let path = string_arg(arguments, "image_path")?;
        let source = self.load(path)?;
        let out = self.save(path, tool, &source)?;
        Ok(json!({
            "is_error": false,
            "content": [
                {"type": "image", "path": out},
                {"type": "text", "text": format!("{tool} stub: identity transform, no restoration applied")}
            ]
        }))
    }

    fn detection(&self, arguments: &Map<String, Value>) -> ToolOutcome {
        let path = string_arg(arguments, "image_path")?;
        let prompt = string_arg(arguments, "txt_prompt")?;
        let source = self.load(path)?;
        let sidecar = sidecar_path(&self.resolve(path))
            .ok_or_else(|| no_such_file(&fallback_sidecar(Path::new(path)).to_string_lossy()))?;
        let text = std::fs::read_to_string(&sidecar)
            .map_err(|_| no_such_file(&sidecar.to_string_lossy()))?;
        let detections = parse_sidecar(&text)?;
        let wanted = tokenize(prompt);
        let kept: Vec<&Detection> = detections
            .iter()
            .filter(|d| !tokenize(&d.label).is_disjoint(&wanted))
            .collect();

        let mut canvas = source.to_rgb8();
        for detection in &kept {
            draw_box(&mut canvas, detection.bbox);
        }
        let out = self.save(path, "image_detection", &DynamicImage::ImageRgb8(canvas))?;
        Ok(json!({
            "is_error": false,
            "annotated_image_path": out,
            "boxes": kept.iter().map(|d| d.to_line()).collect::<Vec<_>>(),
        }))
    }
}

/// `<stem>.boxes.txt`, else `<stem>_boxes.txt`, next to the image.
pub fn sidecar_path(image: &Path) -> Option<PathBuf> {
    let stem = image.file_stem()?.to_str()?;
    let dir = image.parent().unwrap_or(Path::new(""));
    [format!("{stem}.boxes.txt"), format!("{stem}_boxes.txt")]
        .into_iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
}

fn fallback_sidecar(image: &Path) -> PathBuf {
    let stem = image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    image
        .parent()
        .unwrap_or(Path::new(""))
        .join(format!("{stem}_boxes.txt"))
}

pub fn parse_sidecar(text: &str) -> Result<Vec<Detection>, String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|line| {
            Detection::parse(line)
                .map_err(|err| format!("Error: bad annotation line '{line}': {err}"))
        })
        .collect()
}

fn draw_box(canvas: &mut RgbImage, [x1, y1, x2, y2]: [u32; 4]) {
    let (w, h) = canvas.dimensions();
    if w == 0 || h == 0 {
        return;
    }
    let red = Rgb([255, 0, 0]);
    let (x1, x2) = (x1.min(w - 1), x2.saturating_sub(1).min(w - 1));
    let (y1, y2) = (y1.min(h - 1), y2.saturating_sub(1).min(h - 1));
    for x in x1..=x2.max(x1) {
        canvas.put_pixel(x, y1, red);
        canvas.put_pixel(x, y2.max(y1), red);
    }
    for y in y1..=y2.max(y1) {
        canvas.put_pixel(x1, y, red);
        canvas.put_pixel(x2.max(x1), y, red);
    }
}

/// Grayscale, then a global Otsu threshold: output pixels are 0 or 255.
pub fn otsu_binarize(image: &DynamicImage) -> image::GrayImage {
    let gray = image.to_luma8();
    let mut histogram = [0u64; 256];
    for pixel in gray.pixels() {
        histogram[pixel.0[0] as usize] += 1;
    }
    let threshold = otsu_threshold(&histogram);
    let mut out = gray;
    for pixel in out.pixels_mut() {
        pixel.0[0] = if pixel.0[0] > threshold { 255 } else { 0 };
    }
    out
}

fn otsu_threshold(histogram: &[u64; 256]) -> u8 {
    let total: u64 = histogram.iter().sum();
    if total == 0 {
        return 0;
    }
    let weighted_total: f64 = histogram
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let (mut background, mut weighted_background) = (0u64, 0f64);
    let (mut best, mut best_variance) = (0u8, -1f64);
    for (level, &count) in histogram.iter().enumerate() {
        background += count;
        if background == 0 {
            continue;
        }
        let foreground = total - background;
        if foreground == 0 {
            break;
        }
        weighted_background += level as f64 * count as f64;
        let mean_b = weighted_background / background as f64;
        let mean_f = (weighted_total - weighted_background) / foreground as f64;
        let variance = background as f64 * foreground as f64 * (mean_b - mean_f).powi(2);
        if variance > best_variance {
            best_variance = variance;
            best = level as u8;
        }
    }
    best
}

/// Text tools over a keyword-to-passage corpus.
#[derive(Debug, Clone)]
pub struct TextDesk {
    corpus: BTreeMap<String, String>,
}

impl Default for TextDesk {
    fn default() -> Self {
        Self::from_json(DEFAULT_CORPUS).expect("bundled corpus is valid")
    }
}

impl TextDesk {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self {
            corpus: serde_json::from_str(text)?,
        })
    }

    /// Passages whose key shares a word with the query, in key order.
    pub fn lookup(&self, keywords: &str) -> Vec<(&str, &str)> {
        let wanted = tokenize(keywords);
        self.corpus
            .iter()
            .filter(|(key, _)| !tokenize(key).is_disjoint(&wanted))
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect()
    }
}

impl ToolService for TextDesk {
    fn tools(&self) -> Vec<WireTool> {
        let schema = json!({
            "type": "object",
            "properties": {"keywords": {"type": "string", "description": "Search keywords."}},
            "required": ["keywords"]
        });
        vec![
            WireTool {
                name: "rag_query".into(),
                description: "Retrieve background knowledge passages from the intelligence database by keywords.".into(),
                input_schema: schema.clone(),
                category: ToolCategory::Text,
            },
            WireTool {
                name: "web_search".into(),
                description: "Search the web for news and background by keywords.".into(),
                input_schema: schema,
                category: ToolCategory::Text,
            },
        ]
    }

    fn call(&self, tool_name: &str, arguments: &Map<String, Value>) -> Value {
        if tool_name != "rag_query" && tool_name != "web_search" {
            return error_payload(format!("unknown tool: {tool_name}"));
        }
        let keywords = match string_arg(arguments, "keywords") {
            Ok(k) => k,
            Err(err) => return error_payload(err),
        };
        let hits = self.lookup(keywords);
        let text = if hits.is_empty() {
            format!("no results for '{keywords}'")
        } else {
            hits.iter()
                .map(|(key, passage)| format!("[{key}] {passage}"))
                .collect::<Vec<_>>()
                .join("\n")
        };
        json!({"is_error": false, "content": [{"type": "text", "text": text}]})
    }
}

#[cfg(test)]
mod tests {
    use image::{GrayImage, Luma};

    use super::*;

    fn args(value: Value) -> Map<String, Value> {
        value.as_object().unwrap().clone()
    }

    fn write_image(dir: &Path, name: &str, w: u32, h: u32) -> String {
        let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 128]));
        let path = dir.join(name);
        img.save(&path).unwrap();
        path.to_string_lossy().into_owned()
    }

    #[test]
    fn crop_has_exact_dims() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_image(dir.path(), "test.png", 1240, 980);
        let desk = VisionDesk::new();
        let out = desk.call(
            "image_crop",
            &args(json!({"image_path": path, "x1": 149, "y1": 172, "x2": 477, "y2": 796})),
        );
        assert_eq!(out["is_error"], false);
        let result = image::open(out["content"][0]["path"].as_str().unwrap()).unwrap();
        assert_eq!(result.dimensions(), (328, 624));
        assert!(out["content"][1]["text"]
            .as_str()
            .unwrap()
            .contains("328x624"));
    }

    #[test]
    fn crop_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_image(dir.path(), "a.png", 10, 10);
        let desk = VisionDesk::new();
        let degenerate = desk.call(
            "image_crop",
            &args(json!({"image_path": path, "x1": 3, "y1": 0, "x2": 3, "y2": 5})),
        );
        assert_eq!(degenerate["is_error"], true);
        assert!(degenerate["content"][0]["text"]
            .as_str()
            .unwrap()
            .contains("invalid region"));
        let missing = desk.call(
            "image_crop",
            &args(json!({"image_path": "missing.png", "x1": 0, "y1": 0, "x2": 1, "y2": 1})),
        );
        assert!(missing["content"][0]["text"]
            .as_str()
            .unwrap()
            .contains("No such file"));
    }

    #[test]
    fn binary_output_has_two_values_at_most() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_image(dir.path(), "a.png", 64, 64);
        let out = VisionDesk::new().call(
            "image_binary",
            &args(json!({"image_path": path, "x1": 0, "y1": 0, "x2": 64, "y2": 64})),
        );
        let result = image::open(out["content"][0]["path"].as_str().unwrap())
            .unwrap()
            .to_luma8();
        assert!(result.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
    }

    #[test]
    fn uniform_gray_binarizes_to_one_value() {
        let img = DynamicImage::ImageLuma8(GrayImage::from_pixel(8, 8, Luma([128])));
        let out = otsu_binarize(&img);
        let first = out.get_pixel(0, 0).0[0];
        assert!(out.pixels().all(|p| p.0[0] == first));
    }

    #[test]
    fn super_resolution_is_four_times() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_image(dir.path(), "a.png", 100, 80);
        let out =
            VisionDesk::new().call("image_super_resolution", &args(json!({"image_path": path})));
        let result = image::open(out["content"][0]["path"].as_str().unwrap()).unwrap();
        assert_eq!(result.dimensions(), (400, 320));
    }

    #[test]
    fn detection_filters_sidecar_by_prompt() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_image(dir.path(), "test.png", 600, 900);
        std::fs::write(
            dir.path().join("test.boxes.txt"),
            "cargo ship 0.332 149 172 477 796\ncrosswire 0.298 3 567 149 827\nwarship tail number 0.214 172 192 205 231\n",
        )
        .unwrap();
        let desk = VisionDesk::new();
        let out = desk.call(
            "image_detection",
            &args(json!({"image_path": path, "txt_prompt": "warship tail number"})),
        );
        assert_eq!(
            out["boxes"],
            json!(["warship tail number 0.214 172 192 205 231"])
        );
        let none = desk.call(
            "image_detection",
            &args(json!({"image_path": path, "txt_prompt": "tennis court"})),
        );
        assert_eq!(none["boxes"], json!([]));
        assert_eq!(none["is_error"], false);
    }

    #[test]
    fn detection_without_sidecar_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_image(dir.path(), "lonely.png", 8, 8);
        let out = VisionDesk::new().call(
            "image_detection",
            &args(json!({"image_path": path, "txt_prompt": "ship"})),
        );
        let text = out["content"][0]["text"].as_str().unwrap();
        assert!(text.contains("No such file or directory") && text.contains("lonely_boxes.txt"));
    }

    #[test]
    fn identical_requests_give_identical_payloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_image(dir.path(), "a.png", 20, 20);
        let desk = VisionDesk::new();
        let a = desk.call("image_denoise", &args(json!({"image_path": path})));
        let b = desk.call("image_denoise", &args(json!({"image_path": path})));
        assert_eq!(a, b);
        assert!(a["content"][1]["text"].as_str().unwrap().contains("stub"));
    }

    #[test]
    fn roster_has_ten_tools_split_by_category() {
        let vision = VisionDesk::new().tools();
        let text = TextDesk::default().tools();
        assert_eq!(vision.len() + text.len(), 10);
        assert!(vision.iter().all(|t| t.category == ToolCategory::Vision));
        assert!(text.iter().all(|t| t.category == ToolCategory::Text));
    }

    #[test]
    fn rag_query_finds_midway() {
        let out = TextDesk::default().call("rag_query", &args(json!({"keywords": "Midway"})));
        assert!(out["content"][0]["text"].as_str().unwrap().contains("41"));
        let none = TextDesk::default().call("web_search", &args(json!({"keywords": "zzz"})));
        assert_eq!(none["is_error"], false);
    }
}
