//! Writes evaluation artifacts: a text table, a flat metrics file and
//! raster plots of histograms and confusion matrices.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use thiserror::Error;

use crate::corpus::QuestionType;
use crate::eval::{
    component_accuracies, confusion, position_histograms, round2, ConfusionMatrix, DirectionComponent, EvalError,
    MetricReport, PositionHistogram, PositionHistograms, Scored,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("image error on {path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Everything computed for one model on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub model: String,
    pub split: String,
    pub metrics: MetricReport,
    /// Direction confusions keyed by component and subset name.
    pub confusions: BTreeMap<(String, String), ConfusionMatrix>,
    pub histograms: PositionHistograms,
}

const SUBSETS: [(&str, Option<QuestionType>); 3] = [
    ("overall", None),
    ("in_para", Some(QuestionType::InPara)),
    ("out_of_para", Some(QuestionType::OutOfPara)),
];

impl Report {
    pub fn build(model: &str, split: &str, items: &[Scored]) -> Result<Report, EvalError> {
        let metrics = component_accuracies(items)?;
        let mut confusions = BTreeMap::new();
        for comp in [DirectionComponent::DI, DirectionComponent::DE] {
            for (name, subset) in SUBSETS {
                confusions.insert((comp.as_str().to_string(), name.to_string()), confusion(items, comp, subset));
            }
        }
        Ok(Report {
            model: model.to_string(),
            split: split.to_string(),
            metrics,
            confusions,
            histograms: position_histograms(items),
        })
    }

    /// Flat metric name to value map at full precision.
    pub fn metric_map(&self) -> BTreeMap<String, f64> {
        let m = &self.metrics;
        let c = &m.components;
        let mut out = BTreeMap::new();
        out.insert("n".to_string(), m.n as f64);
        out.insert("acc_i".to_string(), c.acc_i);
        out.insert("acc_j".to_string(), c.acc_j);
        out.insert("acc_di".to_string(), c.acc_di);
        out.insert("acc_de".to_string(), c.acc_de);
        out.insert("acc_expl".to_string(), c.acc_expl());
        out.insert("acc_qa".to_string(), c.acc_qa());
        let t = &m.by_type;
        for (name, s) in [
            ("in_para", t.in_para),
            ("out_of_para", t.out_of_para),
            ("no_effect", t.no_effect),
            ("overall", t.overall),
        ] {
            out.insert(format!("qa.{name}"), s.accuracy());
            out.insert(format!("n.{name}"), s.n as f64);
        }
        out
    }

    /// Human-readable summary with 2-decimal values.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let c = &self.metrics.components;
        let _ = writeln!(s, "model {}  split {}  n {}", self.model, self.split, self.metrics.n);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<8}{:>8}{:>8}{:>8}{:>8}{:>9}", "", "acc_i", "acc_j", "acc_di", "acc_de", "acc_expl");
        let _ = writeln!(
            s,
            "{:<8}{:>8.2}{:>8.2}{:>8.2}{:>8.2}{:>9.2}",
            "",
            round2(c.acc_i),
            round2(c.acc_j),
            round2(c.acc_di),
            round2(c.acc_de),
            round2(c.acc_expl())
        );
        let _ = writeln!(s);
        let t = &self.metrics.by_type;
        let _ = writeln!(s, "{:<14}{:>8}{:>8}", "question type", "n", "qa");
        for (name, sub) in [
            ("in-para", t.in_para),
            ("out-of-para", t.out_of_para),
            ("no-effect", t.no_effect),
            ("overall", t.overall),
        ] {
            let _ = writeln!(s, "{:<14}{:>8}{:>8.2}", name, sub.n, round2(sub.accuracy()));
        }
        for ((comp, subset), m) in &self.confusions {
            let _ = writeln!(s);
            let _ = writeln!(s, "confusion {comp} ({subset}), rows gold, columns predicted");
            let _ = writeln!(s, "{:<6}{:>7}{:>7}{:>7}", "", "NONE", "MORE", "LESS");
            for (g, label) in ConfusionMatrix::LABELS.iter().enumerate() {
                let row = m.counts[g];
                let _ = writeln!(s, "{:<6}{:>7}{:>7}{:>7}", label.as_str(), row[0], row[1], row[2]);
            }
        }
        for (name, h) in [("i", &self.histograms.i), ("j", &self.histograms.j)] {
            let _ = writeln!(s);
            let _ = writeln!(s, "position {name}: step, gold, predicted");
            for b in h.buckets() {
                let _ = writeln!(
                    s,
                    "{:>4}{:>8}{:>8}",
                    b,
                    h.gold.get(&b).copied().unwrap_or(0),
                    h.pred.get(&b).copied().unwrap_or(0)
                );
            }
        }
        s
    }

    /// Writes `report.txt`, `metrics.tsv` and the plots; returns the paths.
    pub fn write(&self, out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
        fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        let mut written = Vec::new();
        let txt = out_dir.join("report.txt");
        fs::write(&txt, self.render_text()).map_err(io_err(&txt))?;
        written.push(txt);
        let tsv = out_dir.join("metrics.tsv");
        fs::write(&tsv, render_metrics(&self.metric_map())).map_err(io_err(&tsv))?;
        written.push(tsv);
        for (name, h) in [("i", &self.histograms.i), ("j", &self.histograms.j)] {
            let p = out_dir.join(format!("positions_{name}.png"));
            save(&histogram_image(h), &p)?;
            written.push(p);
        }
        for ((comp, subset), m) in &self.confusions {
            let p = out_dir.join(format!("confusion_{comp}_{subset}.png"));
            save(&confusion_image(m), &p)?;
            written.push(p);
        }
        Ok(written)
    }
}

/// Tab-separated `name value` lines, sorted by name, shortest round-trip floats.
pub fn render_metrics(metrics: &BTreeMap<String, f64>) -> String {
    let mut s = String::new();
    for (k, v) in metrics {
        let _ = writeln!(s, "{k}\t{v}");
    }
    s
}

pub fn load_metrics(path: &Path) -> Result<BTreeMap<String, f64>, ReportError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = BTreeMap::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |msg: &str| ReportError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg: msg.to_string(),
        };
        let (k, v) = line.split_once('\t').ok_or_else(|| parse("expected name<TAB>value"))?;
        let v: f64 = v.trim().parse().map_err(|_| parse("value is not a number"))?;
        out.insert(k.to_string(), v);
    }
    Ok(out)
}

fn save(img: &RgbImage, path: &Path) -> Result<(), ReportError> {
    img.save(path).map_err(|source| ReportError::Image {
        path: path.to_path_buf(),
        source,
    })
}

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const GOLD: Rgb<u8> = Rgb([222, 143, 5]);
const PRED: Rgb<u8> = Rgb([1, 115, 178]);
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);

fn fill(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, c: Rgb<u8>) {
    for y in y0..y1.min(img.height()) {
        for x in x0..x1.min(img.width()) {
            img.put_pixel(x, y, c);
        }
    }
}

/// Paired bars per bucket: gold on the left, predicted on the right.
pub fn histogram_image(h: &PositionHistogram) -> RgbImage {
    let buckets = h.buckets();
    let (bar, gap, pad, height) = (14u32, 10u32, 20u32, 200u32);
    let width = pad * 2 + buckets.len().max(1) as u32 * (2 * bar + gap);
    let mut img = RgbImage::from_pixel(width, height + 2 * pad, WHITE);
    let top = buckets
        .iter()
        .map(|b| h.gold.get(b).copied().unwrap_or(0).max(h.pred.get(b).copied().unwrap_or(0)))
        .max()
        .unwrap_or(0)
        .max(1);
    let base = pad + height;
    for (n, b) in buckets.iter().enumerate() {
        let x = pad + n as u32 * (2 * bar + gap);
        for (off, count, color) in [
            (0, h.gold.get(b).copied().unwrap_or(0), GOLD),
            (bar, h.pred.get(b).copied().unwrap_or(0), PRED),
        ] {
            let len = (count as u64 * height as u64 / top as u64) as u32;
            fill(&mut img, x + off, base - len, x + off + bar, base, color);
        }
    }
    fill(&mut img, pad / 2, base, width - pad / 2, base + 1, AXIS);
    img
}

/// 3×3 heat map, darker for larger counts; rows gold, columns predicted.
pub fn confusion_image(m: &ConfusionMatrix) -> RgbImage {
    let cell = 60u32;
    let mut img = RgbImage::from_pixel(3 * cell + 2, 3 * cell + 2, AXIS);
    let top = m.counts.iter().flatten().copied().max().unwrap_or(0).max(1);
    for (g, row) in m.counts.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            let shade = 255 - (c as u64 * 230 / top as u64) as u8;
            let color = Rgb([shade, shade, 255]);
            let (x, y) = (1 + p as u32 * cell, 1 + g as u32 * cell);
            fill(&mut img, x + 1, y + 1, x + cell - 1, y + cell - 1, color);
        }
    }
    img
}
