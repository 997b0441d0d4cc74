//! Newline-delimited JSON formats for detections and ground truth, weight
//! files, curve CSVs and synthetic dataset directories.
//!
//! Floats are written in the shortest decimal form that parses back to the
//! same `f64`, so a write/read round trip is exact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::detections::{ClassScores, Detection, GroundTruth, GroundTruthSet};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::metrics::EvalReport;
use crate::scalar::Scalar;
use crate::score_fusion::LinearFusionWeights;
use crate::synth::{ScenarioSpec, SyntheticDataset};

pub const GROUND_TRUTH_FILE: &str = "gt.jsonl";
pub const SPEC_FILE: &str = "spec.json";

pub fn detection_file_name(modality: &str) -> String {
    format!("det_{modality}.jsonl")
}

fn parse_error(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReadOptions {
    /// Replaces the modality tag of every record.
    pub modality: Option<String>,
    /// Id given to the first detection; later ones count up from it.
    pub first_det_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFile<T> {
    /// Foreground class count, from the meta header or inferred from records.
    pub num_classes: Option<usize>,
    pub detections: Vec<Detection<T>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    image_id: String,
    #[serde(default)]
    modality: Option<String>,
    bbox: [f64; 4],
    #[serde(default)]
    logits: Option<Vec<f64>>,
    #[serde(default)]
    posteriors: Option<Vec<f64>>,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    class_id: Option<usize>,
    #[serde(default)]
    box_variance: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionMeta {
    num_classes: usize,
    #[serde(default)]
    #[allow(dead_code)]
    class_names: Option<Vec<String>>,
}

/// Splits a JSON object line into either a meta header or a record.
fn parse_line(path: &str, line: usize, text: &str) -> Result<Value> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| parse_error(path, line, e.to_string()))?;
    if !value.is_object() {
        return Err(parse_error(path, line, "expected a JSON object"));
    }
    Ok(value)
}

fn meta_of(value: &Value) -> Option<&Value> {
    value
        .as_object()
        .filter(|o| o.len() == 1)
        .and_then(|o| o.get("meta"))
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Parses a detection file held in memory. `path` only labels errors.
pub fn parse_detections<T: Scalar>(
    text: &str,
    path: &str,
    options: &ReadOptions,
) -> Result<DetectionFile<T>> {
    let mut declared = None;
    let mut records = Vec::new();
    for (n, l) in lines(text) {
        let value = parse_line(path, n, l)?;
        if let Some(meta) = meta_of(&value) {
            if declared.is_some() || !records.is_empty() {
                return Err(parse_error(path, n, "meta header must be the first record"));
            }
            let meta: DetectionMeta = serde_json::from_value(meta.clone())
                .map_err(|e| parse_error(path, n, e.to_string()))?;
            if meta.num_classes == 0 {
                return Err(parse_error(path, n, "num_classes must be at least 1"));
            }
            declared = Some(meta.num_classes);
            continue;
        }
        let record: DetectionRecord =
            serde_json::from_value(value).map_err(|e| parse_error(path, n, e.to_string()))?;
        let kinds = [
            record.logits.is_some(),
            record.posteriors.is_some(),
            record.score.is_some(),
        ];
        if kinds.iter().filter(|k| **k).count() != 1 {
            return Err(parse_error(
                path,
                n,
                "exactly one of logits, posteriors or score is required",
            ));
        }
        if record.score.is_some() != record.class_id.is_some() {
            return Err(parse_error(path, n, "score and class_id go together"));
        }
        records.push((n, record));
    }

    let inferred = records
        .iter()
        .map(|(_, r)| match (&r.logits, &r.posteriors, r.class_id) {
            (Some(v), _, _) | (_, Some(v), _) => v.len().saturating_sub(1),
            (_, _, Some(c)) => c,
            _ => 0,
        })
        .max();
    let num_classes = declared.or(inferred);

    let mut detections = Vec::with_capacity(records.len());
    for (i, (n, r)) in records.into_iter().enumerate() {
        let k = num_classes.expect("records imply a class count");
        let bad = |e: Error| parse_error(path, n, e.to_string());
        let vector_len = |v: &Vec<f64>| {
            if v.len() != k + 1 {
                Err(parse_error(
                    path,
                    n,
                    format!("expected {} scores, found {}", k + 1, v.len()),
                ))
            } else {
                Ok(v.iter().map(|x| T::lit(*x)).collect::<Vec<T>>())
            }
        };
        let scores = if let Some(v) = &r.logits {
            ClassScores::from_logits(vector_len(v)?).map_err(bad)?
        } else if let Some(v) = &r.posteriors {
            ClassScores::from_posteriors(&vector_len(v)?).map_err(bad)?
        } else {
            let class_id = r.class_id.expect("checked above");
            ClassScores::from_score(T::lit(r.score.expect("checked above")), class_id, k)
                .map_err(bad)?
        };
        let bbox = BBox::from_array(r.bbox.map(T::lit)).map_err(bad)?;
        let modality = options.modality.clone().or(r.modality).ok_or_else(|| {
            parse_error(path, n, "record has no modality and no override was given")
        })?;
        let mut d = Detection::new(
            r.image_id,
            modality,
            bbox,
            scores,
            options.first_det_id + i as u64,
        );
        if let Some(v) = r.box_variance {
            d = d.with_variance(T::lit(v)).map_err(bad)?;
        }
        detections.push(d);
    }
    Ok(DetectionFile {
        num_classes,
        detections,
    })
}

pub fn read_detections<T: Scalar>(path: &Path, options: &ReadOptions) -> Result<DetectionFile<T>> {
    let text = fs::read_to_string(path)?;
    parse_detections(&text, &path.display().to_string(), options)
}

/// Reads several detection files with globally increasing ids and checks they
/// agree on the class count. A modality override, if given, applies to all.
pub fn read_detection_files<T: Scalar>(
    paths: &[PathBuf],
    modality: Option<&str>,
) -> Result<(Option<usize>, Vec<Detection<T>>)> {
    let mut num_classes: Option<usize> = None;
    let mut all = Vec::new();
    for path in paths {
        let options = ReadOptions {
            modality: modality.map(str::to_string),
            first_det_id: all.len() as u64,
        };
        let file = read_detections::<T>(path, &options)?;
        match (num_classes, file.num_classes) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::config(format!(
                    "{} has {b} classes but earlier inputs have {a}",
                    path.display()
                )))
            }
            (None, b) => num_classes = b,
            _ => {}
        }
        all.extend(file.detections);
    }
    Ok((num_classes, all))
}

fn numbers<T: Scalar>(v: &[T]) -> Value {
    Value::Array(v.iter().map(|x| json!(x.as_f64())).collect())
}

fn detection_value<T: Scalar>(d: &Detection<T>) -> Value {
    let mut m = Map::new();
    m.insert("image_id".into(), json!(d.image_id));
    m.insert("modality".into(), json!(d.modality));
    m.insert("bbox".into(), numbers(&d.bbox.to_array()));
    m.insert("logits".into(), numbers(d.scores.logits()));
    if let Some(v) = d.box_variance {
        m.insert("box_variance".into(), json!(v.as_f64()));
    }
    Value::Object(m)
}

/// Writes a meta header and one logits record per detection.
pub fn write_detections<T: Scalar, W: Write>(
    out: &mut W,
    detections: &[Detection<T>],
    num_classes: usize,
) -> Result<()> {
    writeln!(out, "{}", json!({"meta": {"num_classes": num_classes}}))?;
    for d in detections {
        writeln!(out, "{}", detection_value(d))?;
    }
    Ok(())
}

pub fn detections_to_string<T: Scalar>(detections: &[Detection<T>], num_classes: usize) -> String {
    let mut buf = Vec::new();
    write_detections(&mut buf, detections, num_classes).expect("writing to memory");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthMeta {
    num_classes: usize,
    #[serde(default)]
    class_names: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthRecord {
    image_id: String,
    #[serde(default)]
    bbox: Option<[f64; 4]>,
    #[serde(default)]
    class_id: Option<usize>,
    #[serde(default)]
    ignore: bool,
    #[serde(default)]
    tag: Option<String>,
}

/// Parses a ground-truth file. The first record must be the meta header;
/// records without a bbox only declare an image (and its tag).
pub fn parse_ground_truth<T: Scalar>(text: &str, path: &str) -> Result<GroundTruthSet<T>> {
    let mut set: Option<GroundTruthSet<T>> = None;
    for (n, l) in lines(text) {
        let value = parse_line(path, n, l)?;
        if let Some(meta) = meta_of(&value) {
            if set.is_some() {
                return Err(parse_error(path, n, "duplicate meta header"));
            }
            let meta: GroundTruthMeta = serde_json::from_value(meta.clone())
                .map_err(|e| parse_error(path, n, e.to_string()))?;
            if meta.num_classes == 0 {
                return Err(parse_error(path, n, "num_classes must be at least 1"));
            }
            let names = meta.class_names.unwrap_or_else(|| {
                (1..=meta.num_classes)
                    .map(|k| format!("class_{k}"))
                    .collect()
            });
            if names.len() != meta.num_classes {
                return Err(parse_error(
                    path,
                    n,
                    "class_names length differs from num_classes",
                ));
            }
            set = Some(GroundTruthSet::new(meta.num_classes, names));
            continue;
        }
        let set = set
            .as_mut()
            .ok_or_else(|| parse_error(path, n, "ground truth must start with a meta header"))?;
        let r: GroundTruthRecord =
            serde_json::from_value(value).map_err(|e| parse_error(path, n, e.to_string()))?;
        match r.bbox {
            Some(b) => {
                let class_id = r
                    .class_id
                    .ok_or_else(|| parse_error(path, n, "object needs a class_id"))?;
                if class_id == 0 || class_id > set.num_classes {
                    return Err(parse_error(
                        path,
                        n,
                        format!("class_id {class_id} outside 1..={}", set.num_classes),
                    ));
                }
                let bbox = BBox::from_array(b.map(T::lit))
                    .map_err(|e| parse_error(path, n, e.to_string()))?;
                set.push(GroundTruth {
                    image_id: r.image_id.clone(),
                    bbox,
                    class_id,
                    ignore: r.ignore,
                });
            }
            None if r.class_id.is_some() => {
                return Err(parse_error(path, n, "class_id given without a bbox"));
            }
            None => {}
        }
        set.tag_image(r.image_id, r.tag);
    }
    set.ok_or_else(|| parse_error(path, 0, "missing meta header"))
}

pub fn read_ground_truth<T: Scalar>(path: &Path) -> Result<GroundTruthSet<T>> {
    let text = fs::read_to_string(path)?;
    parse_ground_truth(&text, &path.display().to_string())
}

/// Writes the meta header, one declaration per image carrying its tag, then
/// every object.
pub fn write_ground_truth<T: Scalar, W: Write>(out: &mut W, gt: &GroundTruthSet<T>) -> Result<()> {
    writeln!(
        out,
        "{}",
        json!({"meta": {"num_classes": gt.num_classes, "class_names": gt.class_names}})
    )?;
    for (image, tag) in &gt.images {
        let mut m = Map::new();
        m.insert("image_id".into(), json!(image));
        if let Some(t) = tag {
            m.insert("tag".into(), json!(t));
        }
        writeln!(out, "{}", Value::Object(m))?;
    }
    for g in &gt.objects {
        let mut m = Map::new();
        m.insert("image_id".into(), json!(g.image_id));
        m.insert("bbox".into(), numbers(&g.bbox.to_array()));
        m.insert("class_id".into(), json!(g.class_id));
        if g.ignore {
            m.insert("ignore".into(), json!(true));
        }
        writeln!(out, "{}", Value::Object(m))?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    modalities: Vec<String>,
    weights: Vec<Vec<f64>>,
}

pub fn parse_weights<T: Scalar>(text: &str, path: &str) -> Result<LinearFusionWeights<T>> {
    let file: WeightsFile =
        serde_json::from_str(text).map_err(|e| parse_error(path, e.line(), e.to_string()))?;
    LinearFusionWeights::new(
        file.modalities,
        file.weights
            .into_iter()
            .map(|row| row.into_iter().map(T::lit).collect())
            .collect(),
    )
}

pub fn read_weights<T: Scalar>(path: &Path) -> Result<LinearFusionWeights<T>> {
    let text = fs::read_to_string(path)?;
    parse_weights(&text, &path.display().to_string())
}

pub fn weights_to_string<T: Scalar>(weights: &LinearFusionWeights<T>) -> String {
    let file = WeightsFile {
        modalities: weights.modalities().to_vec(),
        weights: weights
            .rows()
            .iter()
            .map(|r| r.iter().map(|x| x.as_f64()).collect())
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("plain data serializes");
    s.push('\n');
    s
}

/// Pretty JSON of an evaluation report, newline terminated.
pub fn report_to_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("plain data serializes");
    s.push('\n');
    s
}

/// `subset,class,recall,precision` rows.
pub fn pr_curves_csv(report: &EvalReport) -> String {
    let mut s = String::from("subset,class,recall,precision\n");
    for (subset, r) in &report.subsets {
        let Some(r) = r else { continue };
        for (class, curve) in &r.pr_curves {
            for [recall, precision] in curve {
                s.push_str(&format!("{subset},{class},{recall},{precision}\n"));
            }
        }
    }
    s
}

/// `subset,fppi,miss_rate` rows.
pub fn miss_rate_csv(report: &EvalReport) -> String {
    let mut s = String::from("subset,fppi,miss_rate\n");
    for (subset, r) in &report.subsets {
        let Some(r) = r else { continue };
        for [fppi, mr] in &r.miss_rate_curve {
            s.push_str(&format!("{subset},{fppi},{mr}\n"));
        }
    }
    s
}

/// Writes `spec.json`, `gt.jsonl` and one `det_<modality>.jsonl` per
/// modality into `dir`, creating it if needed. Returns the detection files
/// in modality order.
pub fn write_dataset(
    dir: &Path,
    spec: &ScenarioSpec,
    dataset: &SyntheticDataset,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut spec_text = serde_json::to_string_pretty(spec).expect("plain data serializes");
    spec_text.push('\n');
    fs::write(dir.join(SPEC_FILE), spec_text)?;

    let mut buf = Vec::new();
    write_ground_truth(&mut buf, &dataset.ground_truth)?;
    fs::write(dir.join(GROUND_TRUTH_FILE), buf)?;

    let mut files = Vec::new();
    for (name, dets) in &dataset.detections {
        let path = dir.join(detection_file_name(name));
        fs::write(&path, detections_to_string(dets, dataset.num_classes()))?;
        files.push(path);
    }
    Ok(files)
}

pub fn parse_spec(text: &str, path: &str) -> Result<ScenarioSpec> {
    serde_json::from_str(text).map_err(|e| parse_error(path, e.line(), e.to_string()))
}

pub fn read_spec(path: &Path) -> Result<ScenarioSpec> {
    let text = fs::read_to_string(path)?;
    parse_spec(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate;

    fn parse(text: &str) -> Result<DetectionFile<f64>> {
        parse_detections(text, "mem", &ReadOptions::default())
    }

    fn line_of(err: Error) -> usize {
        match err {
            Error::Parse { line, .. } => line,
            other => panic!("expected a parse error, got {other}"),
        }
    }

    #[test]
    fn three_score_encodings() {
        let text = r#"{"meta":{"num_classes":1}}
{"image_id":"a","modality":"rgb","bbox":[0,0,10,10],"logits":[0,1.5]}
{"image_id":"a","modality":"rgb","bbox":[0,0,10,10],"posteriors":[0.2,0.8]}
{"image_id":"a","modality":"rgb","bbox":[0,0,10,10],"score":0.8,"class_id":1,"box_variance":2}
"#;
        let f = parse(text).unwrap();
        assert_eq!(f.num_classes, Some(1));
        assert_eq!(f.detections.len(), 3);
        assert_eq!(f.detections[0].scores.logits(), &[0.0, 1.5]);
        assert!((f.detections[1].score() - 0.8).abs() < 1e-12);
        assert!((f.detections[2].score() - 0.8).abs() < 1e-12);
        assert_eq!(f.detections[2].box_variance, Some(2.0));
        let ids: Vec<u64> = f.detections.iter().map(|d| d.det_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let both = "{\"meta\":{\"num_classes\":1}}\n\n{\"image_id\":\"a\",\"modality\":\"m\",\"bbox\":[0,0,1,1],\"logits\":[0,1],\"score\":0.5,\"class_id\":1}\n";
        assert_eq!(line_of(parse(both).unwrap_err()), 3);
        let bad_json =
            "{\"image_id\":\"a\",\"modality\":\"m\",\"bbox\":[0,0,1,1],\"logits\":[0,1]}\n{oops\n";
        assert_eq!(line_of(parse(bad_json).unwrap_err()), 2);
        let bad_box =
            "{\"image_id\":\"a\",\"modality\":\"m\",\"bbox\":[0,0,0,1],\"logits\":[0,1]}\n";
        assert_eq!(line_of(parse(bad_box).unwrap_err()), 1);
        let width = "{\"meta\":{\"num_classes\":2}}\n{\"image_id\":\"a\",\"modality\":\"m\",\"bbox\":[0,0,1,1],\"logits\":[0,1]}\n";
        assert_eq!(line_of(parse(width).unwrap_err()), 2);
        let no_mod = "{\"image_id\":\"a\",\"bbox\":[0,0,1,1],\"logits\":[0,1]}\n";
        assert_eq!(line_of(parse(no_mod).unwrap_err()), 1);
        let extra = "{\"image_id\":\"a\",\"modality\":\"m\",\"bbox\":[0,0,1,1],\"logits\":[0,1],\"colour\":1}\n";
        assert_eq!(line_of(parse(extra).unwrap_err()), 1);
    }

    #[test]
    fn modality_override_and_offset() {
        let text = "{\"image_id\":\"a\",\"modality\":\"rgb\",\"bbox\":[0,0,1,1],\"logits\":[0,1]}\n{\"image_id\":\"b\",\"bbox\":[0,0,1,1],\"logits\":[0,1]}\n";
        let opts = ReadOptions {
            modality: Some("gaff".into()),
            first_det_id: 10,
        };
        let f: DetectionFile<f64> = parse_detections(text, "mem", &opts).unwrap();
        assert!(f.detections.iter().all(|d| d.modality == "gaff"));
        assert_eq!(f.detections[1].det_id, 11);
    }

    #[test]
    fn class_count_inferred_without_meta() {
        let text = "{\"image_id\":\"a\",\"modality\":\"m\",\"bbox\":[0,0,1,1],\"score\":0.9,\"class_id\":3}\n";
        let f = parse(text).unwrap();
        assert_eq!(f.num_classes, Some(3));
        assert_eq!(f.detections[0].scores.num_classes(), 3);
        assert_eq!(parse("").unwrap().num_classes, None);
    }

    #[test]
    fn detection_round_trip_is_exact() {
        let ds = generate(&ScenarioSpec::preset("flir-like", 2, 3, 20).unwrap()).unwrap();
        let dets = ds.all_detections();
        let text = detections_to_string(&dets, ds.num_classes());
        let back = parse(&text).unwrap();
        assert_eq!(back.num_classes, Some(ds.num_classes()));
        assert_eq!(back.detections.len(), dets.len());
        for (a, b) in dets.iter().zip(&back.detections) {
            assert_eq!(a.bbox.to_array(), b.bbox.to_array());
            assert_eq!(a.scores.logits(), b.scores.logits());
            assert_eq!(a.box_variance, b.box_variance);
            assert_eq!(
                (&a.image_id, &a.modality, a.det_id),
                (&b.image_id, &b.modality, b.det_id)
            );
        }
        assert_eq!(
            detections_to_string(&back.detections, ds.num_classes()),
            text
        );
    }

    #[test]
    fn f32_round_trip_is_exact() {
        let text = "{\"image_id\":\"a\",\"modality\":\"m\",\"bbox\":[0.1,0.2,3.3,4.4],\"logits\":[0.3,-1.7]}\n";
        let f: DetectionFile<f32> = parse_detections(text, "mem", &ReadOptions::default()).unwrap();
        let again: DetectionFile<f32> = parse_detections(
            &detections_to_string(&f.detections, 1),
            "mem",
            &ReadOptions::default(),
        )
        .unwrap();
        assert_eq!(f.detections[0].bbox, again.detections[0].bbox);
        assert_eq!(
            f.detections[0].scores.logits(),
            again.detections[0].scores.logits()
        );
    }

    #[test]
    fn ground_truth_round_trip() {
        let ds = generate(&ScenarioSpec::preset("kaist-like", 2, 4, 25).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_ground_truth(&mut buf, &ds.ground_truth).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let back: GroundTruthSet<f64> = parse_ground_truth(&text, "mem").unwrap();
        assert_eq!(back, ds.ground_truth);
    }

    #[test]
    fn ground_truth_errors() {
        assert_eq!(
            line_of(parse_ground_truth::<f64>("{\"image_id\":\"a\"}\n", "g").unwrap_err()),
            1
        );
        let bad_class = "{\"meta\":{\"num_classes\":1,\"class_names\":[\"person\"]}}\n{\"image_id\":\"a\",\"bbox\":[0,0,1,1],\"class_id\":2}\n";
        assert_eq!(
            line_of(parse_ground_truth::<f64>(bad_class, "g").unwrap_err()),
            2
        );
        let names = "{\"meta\":{\"num_classes\":2,\"class_names\":[\"person\"]}}\n";
        assert_eq!(
            line_of(parse_ground_truth::<f64>(names, "g").unwrap_err()),
            1
        );
        assert!(parse_ground_truth::<f64>("", "g").is_err());
    }

    #[test]
    fn ground_truth_declarations_and_tags() {
        let text = "{\"meta\":{\"num_classes\":1}}\n{\"image_id\":\"x\",\"tag\":\"night\"}\n{\"image_id\":\"y\",\"bbox\":[0,0,2,2],\"class_id\":1,\"ignore\":true,\"tag\":\"day\"}\n";
        let g: GroundTruthSet<f64> = parse_ground_truth(text, "g").unwrap();
        assert_eq!(g.class_names, vec!["class_1"]);
        assert_eq!(g.images["x"].as_deref(), Some("night"));
        assert_eq!(g.images["y"].as_deref(), Some("day"));
        assert!(g.objects[0].ignore);
    }

    #[test]
    fn weights_round_trip() {
        let w = LinearFusionWeights::new(
            vec!["rgb".into(), "thermal".into()],
            vec![vec![1.0, 0.5], vec![0.25, 2.0]],
        )
        .unwrap();
        let text = weights_to_string(&w);
        let back: LinearFusionWeights<f64> = parse_weights(&text, "w").unwrap();
        assert_eq!(back, w);
        assert!(parse_weights::<f64>("{\"modalities\":[\"a\"]}", "w")
            .unwrap_err()
            .is_parse());
    }

    #[test]
    fn dataset_directory() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ScenarioSpec::preset("kaist-like", 3, 1, 10).unwrap();
        let ds = generate(&spec).unwrap();
        let files = write_dataset(dir.path(), &spec, &ds).unwrap();
        assert_eq!(files.len(), 3);
        assert_eq!(read_spec(&dir.path().join(SPEC_FILE)).unwrap(), spec);
        let (k, dets) = read_detection_files::<f64>(&files, None).unwrap();
        assert_eq!(k, Some(1));
        assert_eq!(dets, ds.all_detections());
        let gt: GroundTruthSet<f64> =
            read_ground_truth(&dir.path().join(GROUND_TRUTH_FILE)).unwrap();
        assert_eq!(gt, ds.ground_truth);
    }
}
