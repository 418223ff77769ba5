//! Dataset-level operations over a manifest, as driven by the command line.
//!
//! Every function checks its inputs (manifest headers, model shape, option
//! ranges) before writing anything, and every file is written atomically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::{distance_matrix, fit_location_means, DistanceMatrix, LocationMeans};
use crate::error::{Error, Result};
use crate::eval::{auroc_scores, miou, sweep, EvalImage, IoUReport, MetricCurve, PatchConfig, ThresholdMode};
use crate::gda::{FitAccumulator, FitOptions, GdaModel, TreeReducer};
use crate::io::{self, DatasetManifest, Needs, TensorFile};
use crate::maps::{LabelMap, MapSidecar, Source, UncertaintyMap};
use crate::measures::{self, SoftmaxStack};
use crate::parallel;
use crate::render::{self, GrayImage, Normalization};

/// Images loaded and reduced per step; bounds memory without affecting results.
pub const IMAGE_BATCH: usize = 16;

/// Fits a model over every labelled pixel of the manifest. Per-image
/// statistics are merged in a fixed binary tree, so the result does not
/// depend on the number of workers.
pub fn fit_manifest(manifest: &DatasetManifest, opts: &FitOptions, settings: Value) -> Result<GdaModel> {
    opts.validate()?;
    manifest.prevalidate(Needs {
        features: true,
        labels: true,
        probs: false,
    })?;
    let k = manifest.num_classes;
    let mut tree = TreeReducer::new();
    for batch in manifest.entries.chunks(IMAGE_BATCH) {
        let leaves = parallel::map_slice(batch, |e| {
            let f = manifest.load_features(e)?;
            let l = manifest.load_labels(e)?;
            FitAccumulator::from_image(k, &f, &l)
        });
        for leaf in leaves {
            tree.push(leaf?)?;
        }
    }
    let acc = tree
        .finish()?
        .unwrap_or_else(|| FitAccumulator::new(k, manifest.feature_dim, manifest.ignore_id));
    let mut model = acc.finalize(opts)?;
    model.metadata_mut().settings = settings;
    Ok(model)
}

/// Record written beside a directory of per-image maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub source: Source,
    pub image_ids: Vec<String>,
    pub settings: Value,
}

pub fn map_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.npy"))
}

pub fn sidecar_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.json"))
}

/// Writes `<id>.npy` (float64 H×W) and its `<id>.json` sidecar.
pub fn write_map(dir: &Path, id: &str, map: &UncertaintyMap) -> Result<()> {
    let t = TensorFile::f64(vec![map.height(), map.width()], map.values().to_vec())?;
    io::write_tensor(&map_path(dir, id), &t)?;
    io::atomic_write(&sidecar_path(dir, id), &io::to_json_bytes(&MapSidecar::from(map)))
}

/// Reads a map and its sidecar. Without a sidecar, `fallback` names the source.
pub fn read_map(dir: &Path, id: &str, fallback: Option<Source>) -> Result<UncertaintyMap> {
    let path = map_path(dir, id);
    let t = io::read_tensor(&path)?;
    let [h, w] = *t.shape() else {
        return Err(Error::validation(format!("{}: map must be HxW, got {:?}", path.display(), t.shape())));
    };
    let side = sidecar_path(dir, id);
    let source = if side.exists() {
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let car: MapSidecar =
            serde_json::from_str(&text).map_err(|e| Error::parse(format!("{}: {e}", side.display())))?;
        if (car.height, car.width) != (h, w) {
            return Err(Error::validation(format!(
                "{}: sidecar says {}x{}, tensor is {h}x{w}",
                side.display(),
                car.height,
                car.width
            )));
        }
        if car.polarity != car.source.polarity() {
            return Err(Error::validation(format!(
                "{}: polarity does not match source `{}`",
                side.display(),
                car.source.as_str()
            )));
        }
        car.source
    } else {
        fallback.ok_or_else(|| {
            Error::Config(format!("{} has no sidecar and no source was given", path.display()))
        })?
    };
    UncertaintyMap::new(h, w, t.to_f64()?, source)
}

fn write_run(out_dir: &Path, record: &RunRecord) -> Result<()> {
    io::atomic_write(&out_dir.join("run.json"), &io::to_json_bytes(record))
}

/// Per-image feature log-density maps (confidence-like).
pub fn density_maps(manifest: &DatasetManifest, model: &GdaModel, out_dir: &Path, settings: Value) -> Result<RunRecord> {
    if model.dim() != manifest.feature_dim {
        return Err(Error::validation(format!(
            "model has D={}, manifest has D={}",
            model.dim(),
            manifest.feature_dim
        )));
    }
    manifest.prevalidate(Needs {
        features: true,
        ..Needs::default()
    })?;
    io::create_dir(out_dir)?;
    for batch in manifest.entries.chunks(IMAGE_BATCH) {
        let maps = parallel::map_slice(batch, |e| model.log_density(&manifest.load_features(e)?));
        for (e, map) in batch.iter().zip(maps) {
            write_map(out_dir, &e.image_id, &map?)?;
        }
    }
    let record = RunRecord {
        command: "density".into(),
        source: Source::LogDensity,
        image_ids: manifest.entries.iter().map(|e| e.image_id.clone()).collect(),
        settings,
    };
    write_run(out_dir, &record)?;
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    #[default]
    Entropy,
    Pe,
    Mi,
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(Self::Entropy),
            "pe" => Ok(Self::Pe),
            "mi" => Ok(Self::Mi),
            other => Err(Error::Config(format!("unknown measure `{other}` (entropy, pe, mi)"))),
        }
    }
}

impl Measure {
    pub fn source(self) -> Source {
        match self {
            Measure::Entropy => Source::Entropy,
            Measure::Pe => Source::Pe,
            Measure::Mi => Source::Mi,
        }
    }

    pub fn apply(self, stack: &SoftmaxStack) -> Result<UncertaintyMap> {
        match self {
            Measure::Entropy => measures::entropy(stack),
            Measure::Pe => measures::predictive_entropy(stack),
            Measure::Mi => measures::mutual_information(stack),
        }
    }
}

/// Per-image softmax uncertainty maps.
pub fn entropy_maps(manifest: &DatasetManifest, measure: Measure, out_dir: &Path, settings: Value) -> Result<RunRecord> {
    manifest.prevalidate(Needs {
        probs: true,
        ..Needs::default()
    })?;
    io::create_dir(out_dir)?;
    for batch in manifest.entries.chunks(IMAGE_BATCH) {
        let maps = parallel::map_slice(batch, |e| measure.apply(&manifest.load_softmax(e)?));
        for (e, map) in batch.iter().zip(maps) {
            write_map(out_dir, &e.image_id, &map?)?;
        }
    }
    let record = RunRecord {
        command: "entropy".into(),
        source: measure.source(),
        image_ids: manifest.entries.iter().map(|e| e.image_id.clone()).collect(),
        settings,
    };
    write_run(out_dir, &record)?;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub patch: PatchConfig,
    pub mode: ThresholdMode,
    pub points: usize,
    /// Source assumed for maps without a sidecar.
    pub default_source: Option<Source>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            patch: PatchConfig::default(),
            mode: ThresholdMode::Quantile,
            points: 20,
            default_source: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    /// Source of the maps as read, before any negation.
    pub source: Source,
    pub negated: bool,
    pub miou: IoUReport,
    /// Present when every entry has an OoD mask with at least one OoD and one in-distribution pixel.
    pub ood_auroc: Option<f64>,
    pub settings: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub curve: MetricCurve,
    pub summary: EvalSummary,
}

/// Patch metrics over a threshold sweep, mIoU of the softmax predictions and,
/// when masks are present, OoD AUROC. Confidence-like maps are negated first.
pub fn evaluate(manifest: &DatasetManifest, unc_dir: &Path, cfg: &EvalSettings, settings: Value) -> Result<Evaluation> {
    cfg.patch.validate()?;
    if cfg.points < 2 {
        return Err(Error::Config("a threshold sweep needs at least 2 points".into()));
    }
    manifest.prevalidate(Needs {
        labels: true,
        probs: true,
        ..Needs::default()
    })?;
    let loaded = parallel::map_slice(&manifest.entries, |e| -> Result<_> {
        let stack = manifest.load_softmax(e)?;
        let gt = manifest.load_labels(e)?;
        let pred = LabelMap::new(stack.height(), stack.width(), stack.predicted_labels(), manifest.ignore_id)?;
        let unc = read_map(unc_dir, &e.image_id, cfg.default_source)?;
        if (unc.height(), unc.width()) != (gt.height(), gt.width()) {
            return Err(Error::validation(format!(
                "entry `{}`: map is {}x{}, labels are {}x{}",
                e.image_id,
                unc.height(),
                unc.width(),
                gt.height(),
                gt.width()
            )));
        }
        let mask = manifest.load_ood_mask(e)?;
        if let Some((h, w, _)) = &mask {
            if (*h, *w) != (gt.height(), gt.width()) {
                return Err(Error::validation(format!("entry `{}`: OoD mask shape differs from labels", e.image_id)));
            }
        }
        Ok((pred, gt, unc, mask))
    });
    let mut images = Vec::with_capacity(loaded.len());
    let mut masks = Vec::with_capacity(loaded.len());
    let mut source = None;
    for item in loaded {
        let (pred, gt, unc, mask) = item?;
        match source {
            None => source = Some(unc.source()),
            Some(s) if s != unc.source() => {
                return Err(Error::validation(format!(
                    "maps mix sources `{}` and `{}`",
                    s.as_str(),
                    unc.source().as_str()
                )))
            }
            Some(_) => {}
        }
        masks.push(mask.map(|(_, _, m)| m));
        images.push(EvalImage {
            pred,
            gt,
            unc: unc.into_uncertainty(),
        });
    }
    let source = source.ok_or_else(|| Error::Config("manifest has no entries to evaluate".into()))?;

    let curve = sweep(&images, &cfg.patch, cfg.mode, cfg.points)?;
    let preds: Vec<LabelMap> = images.iter().map(|i| i.pred.clone()).collect();
    let gts: Vec<LabelMap> = images.iter().map(|i| i.gt.clone()).collect();
    let iou = miou(&preds, &gts, manifest.num_classes)?;

    let ood_auroc = if masks.iter().all(Option::is_some) {
        let mut inside = Vec::new();
        let mut outside = Vec::new();
        for (img, mask) in images.iter().zip(&masks) {
            let mask = mask.as_ref().expect("checked");
            for (p, &v) in img.unc.values().iter().enumerate() {
                if mask[p] {
                    outside.push(v);
                } else if !img.gt.is_ignored(p) {
                    inside.push(v);
                }
            }
        }
        if inside.is_empty() || outside.is_empty() {
            None
        } else {
            Some(auroc_scores(&inside, &outside)?)
        }
    } else {
        None
    };

    Ok(Evaluation {
        curve,
        summary: EvalSummary {
            source,
            negated: source.polarity() == crate::Polarity::ConfidenceLike,
            miou: iou,
            ood_auroc,
            settings,
        },
    })
}

/// Writes `curve.csv`, `curve.json` and `summary.json`.
pub fn write_evaluation(out_dir: &Path, ev: &Evaluation) -> Result<()> {
    io::create_dir(out_dir)?;
    io::atomic_write(&out_dir.join("curve.csv"), ev.curve.to_csv().as_bytes())?;
    io::atomic_write(&out_dir.join("curve.json"), &io::to_json_bytes(&ev.curve))?;
    io::atomic_write(&out_dir.join("summary.json"), &io::to_json_bytes(&ev.summary))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairDistances {
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub matrix: DistanceMatrix,
    /// Rows whose minimum lies on the diagonal, out of rows with a defined diagonal.
    pub diagonal_minimum_rows: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceReport {
    pub locations: Vec<LocationMeans>,
    pub pairs: Vec<PairDistances>,
    pub settings: Value,
}

/// Location means at `coords` and distance matrices for every pair of them.
pub fn distances(manifest: &DatasetManifest, coords: &[(usize, usize)], settings: Value) -> Result<DistanceReport> {
    if coords.len() < 2 {
        return Err(Error::Config("need at least two coordinates".into()));
    }
    manifest.prevalidate(Needs {
        features: true,
        labels: true,
        probs: false,
    })?;
    let locations = fit_location_means(manifest, coords)?;
    let mut pairs = Vec::new();
    for a in 0..locations.len() {
        for b in a + 1..locations.len() {
            let matrix = distance_matrix(&locations[a], &locations[b])?;
            pairs.push(PairDistances {
                a: locations[a].coord,
                b: locations[b].coord,
                diagonal_minimum_rows: matrix.diagonal_minimum_rows(),
                matrix,
            });
        }
    }
    Ok(DistanceReport {
        locations,
        pairs,
        settings,
    })
}

pub fn pair_stem(p: &PairDistances) -> String {
    format!("dist_{}_{}__{}_{}", p.a.0, p.a.1, p.b.0, p.b.1)
}

/// Writes `distances.json` plus a CSV and a PNG heatmap per coordinate pair.
pub fn write_distances(out_dir: &Path, report: &DistanceReport, cell: usize) -> Result<()> {
    io::create_dir(out_dir)?;
    let images: Vec<GrayImage> = report
        .pairs
        .iter()
        .map(|p| render::render_matrix(&p.matrix, cell, render::DEFAULT_IGNORE_GRAY))
        .collect::<Result<_>>()?;
    for (p, img) in report.pairs.iter().zip(&images) {
        let stem = pair_stem(p);
        io::atomic_write(&out_dir.join(format!("{stem}.csv")), p.matrix.to_csv().as_bytes())?;
        img.save(&out_dir.join(format!("{stem}.png")))?;
    }
    io::atomic_write(&out_dir.join("distances.json"), &io::to_json_bytes(report))
}

/// Parses a distance matrix CSV as written by [`DistanceMatrix::to_csv`].
pub fn parse_matrix_csv(text: &str) -> Result<DistanceMatrix> {
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let k = rows.len();
    let mut values = Vec::with_capacity(k * k);
    for (r, line) in rows.iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != k {
            return Err(Error::parse(format!("matrix row {r} has {} fields, expected {k}", fields.len())));
        }
        for f in fields {
            let f = f.trim();
            values.push(if f.is_empty() {
                None
            } else {
                Some(f.parse::<f64>().map_err(|e| Error::parse(format!("matrix row {r}: `{f}`: {e}")))?)
            });
        }
    }
    if k == 0 {
        return Err(Error::parse("empty matrix"));
    }
    Ok(DistanceMatrix { num_classes: k, values })
}

/// What `render_path` should draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub normalization: Normalization,
    /// Normalise a directory of maps with one shared range.
    pub global: bool,
    /// Pixels per matrix entry.
    pub cell: usize,
    /// Source assumed for maps without a sidecar.
    pub default_source: Option<Source>,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            normalization: Normalization::MinMax,
            global: false,
            cell: 16,
            default_source: None,
        }
    }
}

/// Renders a map (`.npy`), a distance matrix (`.csv`) or a directory of maps.
/// Files go to `out`; a directory goes to `out/<id>.png`. Returns the files written.
pub fn render_path(input: &Path, out: &Path, cfg: &RenderSettings) -> Result<Vec<PathBuf>> {
    cfg.normalization.validate()?;
    if input.is_dir() {
        let mut ids = BTreeMap::new();
        let listing = std::fs::read_dir(input).map_err(|e| Error::io(input, e))?;
        for entry in listing {
            let path = entry.map_err(|e| Error::io(input, e))?.path();
            if path.extension().is_some_and(|e| e == "npy") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.insert(stem.to_string(), ());
                }
            }
        }
        let ids: Vec<String> = ids.into_keys().collect();
        let maps = ids
            .iter()
            .map(|id| read_map(input, id, cfg.default_source))
            .collect::<Result<Vec<_>>>()?;
        let images = if cfg.global {
            render::render_maps_global(&maps, cfg.normalization)?
        } else {
            parallel::map_slice(&maps, |m| render::render_map(m, cfg.normalization))
                .into_iter()
                .collect::<Result<Vec<_>>>()?
        };
        io::create_dir(out)?;
        let mut written = Vec::with_capacity(ids.len());
        for (id, img) in ids.iter().zip(&images) {
            let path = out.join(format!("{id}.png"));
            img.save(&path)?;
            written.push(path);
        }
        return Ok(written);
    }
    let ext = input.extension().and_then(|e| e.to_str()).unwrap_or("");
    let img = match ext {
        "npy" => {
            let dir = input.parent().unwrap_or(Path::new("."));
            let id = input
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Config(format!("bad map path {}", input.display())))?;
            render::render_map(&read_map(dir, id, cfg.default_source)?, cfg.normalization)?
        }
        "csv" => {
            let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
            render::render_matrix(&parse_matrix_csv(&text)?, cfg.cell, render::DEFAULT_IGNORE_GRAY)?
        }
        _ => {
            return Err(Error::Config(format!(
                "cannot render {}: expected a .npy map, a .csv matrix or a directory",
                input.display()
            )))
        }
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        io::create_dir(parent)?;
    }
    img.save(out)?;
    Ok(vec![out.to_path_buf()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, SynthSpec};

    fn dataset(dir: &Path) -> DatasetManifest {
        let mut spec = SynthSpec::isotropic(3, 2, 6.0, 1.0, 5);
        spec.num_images = 3;
        spec.height = 8;
        spec.width = 8;
        spec.ood_fraction = 0.25;
        synth::generate(&spec, dir).unwrap()
    }

    #[test]
    fn density_then_evaluate() {
        let tmp = tempfile::tempdir().unwrap();
        let m = dataset(tmp.path());
        let model = fit_manifest(&m, &FitOptions::default(), Value::Null).unwrap();
        let maps = tmp.path().join("dens");
        density_maps(&m, &model, &maps, Value::Null).unwrap();
        let back = read_map(&maps, "img00000", None).unwrap();
        assert_eq!(back.source(), Source::LogDensity);
        let ev = evaluate(&m, &maps, &EvalSettings::default(), Value::Null).unwrap();
        assert!(ev.summary.negated);
        assert!(ev.summary.ood_auroc.unwrap() > 0.9);
        assert_eq!(ev.curve.points.len(), 20);
        write_evaluation(&tmp.path().join("eval"), &ev).unwrap();
        assert!(tmp.path().join("eval/summary.json").exists());
    }

    #[test]
    fn entropy_maps_need_single_member() {
        let tmp = tempfile::tempdir().unwrap();
        let m = dataset(tmp.path());
        let out = tmp.path().join("ent");
        let rec = entropy_maps(&m, Measure::Entropy, &out, Value::Null).unwrap();
        assert_eq!(rec.image_ids.len(), 3);
        let map = read_map(&out, "img00002", None).unwrap();
        assert_eq!(map.source(), Source::Entropy);
        assert!(map.values().iter().all(|&v| v >= 0.0 && v <= 3f64.ln() + 1e-12));
    }

    #[test]
    fn missing_sidecar_needs_default_source() {
        let tmp = tempfile::tempdir().unwrap();
        let map = UncertaintyMap::new(1, 2, vec![0.5, 1.0], Source::Entropy).unwrap();
        write_map(tmp.path(), "a", &map).unwrap();
        std::fs::remove_file(sidecar_path(tmp.path(), "a")).unwrap();
        assert!(matches!(read_map(tmp.path(), "a", None), Err(Error::Config(_))));
        assert_eq!(read_map(tmp.path(), "a", Some(Source::Entropy)).unwrap(), map);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = DistanceMatrix {
            num_classes: 2,
            values: vec![Some(0.0), None, Some(1.5), Some(0.1)],
        };
        assert_eq!(parse_matrix_csv(&m.to_csv()).unwrap(), m);
        assert!(parse_matrix_csv("1,2\n3\n").is_err());
    }

    #[test]
    fn distances_on_shared_gaussians() {
        let tmp = tempfile::tempdir().unwrap();
        let mut spec = SynthSpec::isotropic(3, 2, 8.0, 0.5, 9);
        spec.num_images = 60;
        spec.height = 6;
        spec.width = 6;
        let m = synth::generate(&spec, tmp.path()).unwrap();
        let report = distances(&m, &[(0, 0), (5, 5)], Value::Null).unwrap();
        let (hits, defined) = report.pairs[0].diagonal_minimum_rows;
        assert_eq!(defined, 3);
        assert_eq!(hits, 3);
        write_distances(&tmp.path().join("d"), &report, 4).unwrap();
        let files = render_path(
            &tmp.path().join("d/dist_0_0__5_5.csv"),
            &tmp.path().join("r/m.pgm"),
            &RenderSettings::default(),
        )
        .unwrap();
        assert!(files[0].exists());
    }
}
