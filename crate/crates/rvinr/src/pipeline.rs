//! Pipeline stages. Every stage reads its inputs from and writes its outputs
//! to the run directory, so a chain of stage invocations and [`reproduce`]
//! produce the same bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rvinr_core::geometry::{check_unit, Image2D, ViewAngle};
use rvinr_core::inr::{CoordGrid, GridEvaluator, InrModel};
use rvinr_core::metrics::{evaluate_split, evaluation_mask, MetricReport, Summary, EVALUATION_MARGIN};
use rvinr_core::phantom::{acquire, build_phantom, fibonacci_directions, synthesize_hr, DirectionSet, HrSliceSet, LrAcquisition, Split};
use rvinr_core::quant::{eigensystem, fit_maps, map_nmse, scalar_maps_from_eigen, vector_map_nmse, DtiDesign};
use rvinr_core::tensor::{SymTensor3, Vec3};
use rvinr_core::trainer::{baseline_reconstruct, train_slice};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::io::{export_pgm, read_array, read_image, read_stack, write_array, write_image, write_stack};
use crate::manifest::{Manifest, MANIFEST_FILE};

/// File locations inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest(&self) -> PathBuf {
        self.path(MANIFEST_FILE)
    }

    pub fn sr_direction(&self, index: usize) -> PathBuf {
        self.path(&format!("sr/direction_{index:03}.json"))
    }
}

pub const S0: &str = "phantom/s0.json";
pub const TENSORS: &str = "phantom/tensors.json";
pub const OBJECT_MASK: &str = "phantom/mask.json";
pub const DIRECTIONS: &str = "phantom/directions.json";
pub const HR_DWIS: &str = "phantom/dwis.json";
pub const VIEWS: &str = "acquisition/views.json";
pub const ANGLES: &str = "acquisition/angles.json";
pub const PARAMS: &str = "model/params.json";
pub const LOSS_CURVE: &str = "model/loss_curve.csv";
pub const SR_DWIS: &str = "sr/dwis.json";
pub const BASELINE_DWIS: &str = "baseline/dwis.json";
pub const TABLE_I: &str = "tables/table1.csv";
pub const PER_DIRECTION: &str = "tables/per_direction.csv";
pub const TABLE_II: &str = "tables/table2.csv";
pub const SUMMARY: &str = "summary.txt";
/// Wall-clock data; the only output that differs between identical runs.
pub const TIMING: &str = "timing.json";

pub const DTI_SETS: [&str; 3] = ["gt", "res40", "res50"];
pub const DTI_SCALARS: [&str; 4] = ["md", "fa", "ad", "rd"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SplitTag {
    Train,
    HeldOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DirectionFile {
    b_value: f64,
    directions: Vec<Vec3>,
    split: Vec<SplitTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AngleEntry {
    theta: f64,
    source_direction: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Timing {
    train_seconds: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::invalid(path, e.to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

pub fn write_directions(path: &Path, dirs: &DirectionSet) -> Result<()> {
    let file = DirectionFile {
        b_value: dirs.b_value(),
        directions: dirs.directions().to_vec(),
        split: dirs
            .split()
            .iter()
            .map(|s| match s {
                Split::Train => SplitTag::Train,
                Split::HeldOut => SplitTag::HeldOut,
            })
            .collect(),
    };
    write_json(path, &file)
}

pub fn read_directions(path: &Path) -> Result<DirectionSet> {
    let file: DirectionFile = read_json(path)?;
    let split = file
        .split
        .iter()
        .map(|s| match s {
            SplitTag::Train => Split::Train,
            SplitTag::HeldOut => Split::HeldOut,
        })
        .collect();
    DirectionSet::new(file.directions, file.b_value, split).map_err(|e| PipelineError::invalid(path, e.to_string()))
}

/// Loads and validates the run manifest.
pub fn load_manifest(run: &RunDir) -> Result<Manifest> {
    Manifest::read(&run.manifest())
}

fn load_hr(run: &RunDir) -> Result<HrSliceSet> {
    let directions = read_directions(&run.path(DIRECTIONS))?;
    let b0 = read_image(&run.path(S0))?;
    let dwis = read_stack(&run.path(HR_DWIS))?;
    if dwis.len() != directions.len() || dwis.iter().any(|d| !d.same_shape(&b0)) {
        return Err(PipelineError::invalid(&run.path(HR_DWIS), "does not match the direction set and S0 map"));
    }
    Ok(HrSliceSet { b0, dwis, directions })
}

fn load_acquisition(run: &RunDir, manifest: &Manifest, hr: &HrSliceSet) -> Result<LrAcquisition> {
    let angles: Vec<AngleEntry> = read_json(&run.path(ANGLES))?;
    let images = read_stack(&run.path(VIEWS))?;
    if angles.len() != images.len() || images.len() != hr.directions.len() {
        return Err(PipelineError::invalid(&run.path(VIEWS), "view count does not match the direction set"));
    }
    let views = angles.into_iter().map(|a| ViewAngle::new(a.theta, a.source_direction)).zip(images).collect();
    Ok(LrAcquisition {
        views,
        config: manifest.acquisition(),
        directions: hr.directions.clone(),
        hr_width: hr.b0.width,
        hr_height: hr.b0.height,
    })
}

fn load_model(run: &RunDir, manifest: &Manifest, b0: &Image2D) -> Result<InrModel> {
    let path = run.path(PARAMS);
    let params = read_array(&path)?;
    InrModel::from_params(manifest.train_config().model_config(), b0.clone(), params.data)
        .map_err(|e| PipelineError::invalid(&path, e.to_string()))
}

/// Writes the manifest, the phantom, the direction set and the ground-truth
/// high-resolution DWIs.
pub fn stage_phantom(run: &RunDir, manifest: &Manifest) -> Result<()> {
    manifest.write(&run.manifest())?;
    let n = manifest.size;
    let phantom = build_phantom(n, n, manifest.seed_data).map_err(PipelineError::core("phantom"))?;
    let dirs = fibonacci_directions(manifest.directions, manifest.train_directions, manifest.b_value, manifest.seed_data)
        .map_err(PipelineError::core("phantom"))?;
    let hr = synthesize_hr(&phantom, &dirs);
    write_image(&run.path(S0), "s0", "a.u.", &hr.b0)?;
    let tensors: Vec<f64> = phantom.tensors.iter().flat_map(|t| t.to_array()).collect();
    write_array(&run.path(TENSORS), "tensors", &[n, n, 6], "mm^2/s", &tensors)?;
    let mask: Vec<f64> = phantom.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    write_array(&run.path(OBJECT_MASK), "mask", &[n, n], "1", &mask)?;
    write_directions(&run.path(DIRECTIONS), &dirs)?;
    write_stack(&run.path(HR_DWIS), "dwis", "a.u.", &hr.dwis).map(|_| ())
}

/// Simulates one thick-slice view per direction.
pub fn stage_acquire(run: &RunDir) -> Result<()> {
    let manifest = load_manifest(run)?;
    let hr = load_hr(run)?;
    let acq = acquire(&hr, &manifest.acquisition()).map_err(PipelineError::core("acquire"))?;
    let angles: Vec<AngleEntry> =
        acq.views.iter().map(|(v, _)| AngleEntry { theta: v.theta, source_direction: v.source_direction }).collect();
    write_json(&run.path(ANGLES), &angles)?;
    let images: Vec<Image2D> = acq.views.into_iter().map(|(_, img)| img).collect();
    write_stack(&run.path(VIEWS), "views", "a.u.", &images).map(|_| ())
}

/// Fits the network to the training views; returns the final loss.
pub fn stage_train(run: &RunDir) -> Result<f64> {
    let manifest = load_manifest(run)?;
    let hr = load_hr(run)?;
    let acq = load_acquisition(run, &manifest, &hr)?;
    let (model, report) = train_slice(&acq, &hr.b0, &manifest.train_config()).map_err(PipelineError::core("train"))?;
    let values = &model.params().values;
    write_array(&run.path(PARAMS), "params", &[values.len()], "1", values)?;
    let mut curve = String::from("iteration,loss\n");
    for (it, loss) in &report.loss_curve {
        writeln!(curve, "{it},{loss:e}").unwrap();
    }
    write_text(&run.path(LOSS_CURVE), &curve)?;
    write_json(&run.path(TIMING), &Timing { train_seconds: report.wall_time })?;
    Ok(report.final_loss)
}

/// Renders every direction of the set from the stored model.
pub fn render_all(model: &InrModel, dirs: &DirectionSet, size: usize) -> rvinr_core::Result<Vec<Image2D>> {
    let grid = CoordGrid::new(size, size);
    let eval = GridEvaluator::new(model, &grid)?;
    let params = &model.params().values;
    let spatial = eval.spatial_forward(params, false)?;
    dirs.directions()
        .iter()
        .map(|g| {
            check_unit(g)?;
            let pixels = eval.render(params, &spatial, g)?;
            Image2D::new(size, size, pixels)
        })
        .collect()
}

/// Queries the stored model at every direction (or only `direction`) and
/// writes the single-view baseline next to it.
pub fn stage_infer(run: &RunDir, direction: Option<usize>) -> Result<()> {
    let manifest = load_manifest(run)?;
    let hr = load_hr(run)?;
    let model = load_model(run, &manifest, &hr.b0)?;
    if let Some(i) = direction {
        if i >= hr.directions.len() {
            return Err(PipelineError::Core { stage: "infer", source: rvinr_core::Error::MissingDirection(i) });
        }
        let one = DirectionSet::new(vec![hr.directions.direction(i)], hr.directions.b_value(), vec![Split::HeldOut])
            .map_err(PipelineError::core("infer"))?;
        let img = render_all(&model, &one, manifest.size).map_err(PipelineError::core("infer"))?.remove(0);
        return write_image(&run.sr_direction(i), "sr", "a.u.", &img).map(|_| ());
    }
    let sr = render_all(&model, &hr.directions, manifest.size).map_err(PipelineError::core("infer"))?;
    write_stack(&run.path(SR_DWIS), "sr", "a.u.", &sr)?;
    let acq = load_acquisition(run, &manifest, &hr)?;
    let base = baseline_reconstruct(&acq, manifest.size).map_err(PipelineError::core("infer"))?;
    write_stack(&run.path(BASELINE_DWIS), "baseline", "a.u.", &base)?;
    Ok(())
}

fn dti_path(set: &str, map: &str) -> String {
    format!("dti/{set}/{map}.json")
}

/// Object support as stored by the phantom stage.
fn load_object(run: &RunDir) -> Result<Vec<bool>> {
    Ok(read_array(&run.path(OBJECT_MASK))?.data.iter().map(|&v| v > 0.5).collect())
}

/// Ground-truth maps from the stored tensors and fitted maps from the
/// training directions (RES-40) and all directions (RES-50) of the SR stack.
pub fn stage_dti(run: &RunDir) -> Result<()> {
    let manifest = load_manifest(run)?;
    let hr = load_hr(run)?;
    let n = manifest.size;
    let object = load_object(run)?;
    let tensor_data = read_array(&run.path(TENSORS))?.data;
    if tensor_data.len() != 6 * n * n {
        return Err(PipelineError::invalid(&run.path(TENSORS), "tensor count does not match the image size"));
    }
    let sr = read_stack(&run.path(SR_DWIS))?;
    if sr.len() != hr.directions.len() {
        return Err(PipelineError::invalid(&run.path(SR_DWIS), "does not cover the direction set"));
    }

    let mut gt = MapStack::zeros(n * n);
    for p in (0..n * n).filter(|&p| object[p]) {
        let chunk: [f64; 6] = tensor_data[6 * p..6 * p + 6].try_into().unwrap();
        let m = scalar_maps_from_eigen(&eigensystem(&SymTensor3::from_array(&chunk)));
        gt.scalars[0][p] = m.md;
        gt.scalars[1][p] = m.fa;
        gt.scalars[2][p] = m.ad;
        gt.scalars[3][p] = m.rd;
        gt.ev1[p] = m.ev1;
        gt.ev1_fa[p] = m.ev1_fa;
    }
    gt.write(run, "gt", n)?;

    let all: Vec<usize> = (0..hr.directions.len()).collect();
    for (name, indices) in [("res40", hr.directions.train_indices()), ("res50", all)] {
        let g: Vec<Vec3> = indices.iter().map(|&i| hr.directions.direction(i)).collect();
        let design = DtiDesign::new(&g, hr.directions.b_value()).map_err(PipelineError::core("dti"))?;
        let imgs: Vec<&Image2D> = indices.iter().map(|&i| &sr[i]).collect();
        let maps = fit_maps(&imgs, &hr.b0, &design, &object).map_err(PipelineError::core("dti"))?;
        let stack = MapStack { scalars: [maps.md, maps.fa, maps.ad, maps.rd], ev1: maps.ev1, ev1_fa: maps.ev1_fa };
        stack.write(run, name, n)?;
    }
    Ok(())
}

struct MapStack {
    /// In [`DTI_SCALARS`] order.
    scalars: [Vec<f64>; 4],
    ev1: Vec<Vec3>,
    ev1_fa: Vec<Vec3>,
}

impl MapStack {
    fn zeros(n: usize) -> Self {
        Self { scalars: std::array::from_fn(|_| vec![0.0; n]), ev1: vec![[0.0; 3]; n], ev1_fa: vec![[0.0; 3]; n] }
    }

    fn write(&self, run: &RunDir, set: &str, n: usize) -> Result<()> {
        for (name, values) in DTI_SCALARS.iter().zip(&self.scalars) {
            let units = if *name == "fa" { "1" } else { "mm^2/s" };
            write_array(&run.path(&dti_path(set, name)), name, &[n, n], units, values)?;
        }
        for (name, v) in [("ev1", &self.ev1), ("ev1_fa", &self.ev1_fa)] {
            let flat: Vec<f64> = v.iter().flatten().copied().collect();
            write_array(&run.path(&dti_path(set, name)), name, &[n, n, 3], "1", &flat)?;
        }
        Ok(())
    }

    fn read(run: &RunDir, set: &str) -> Result<Self> {
        let mut scalars: [Vec<f64>; 4] = Default::default();
        for (name, slot) in DTI_SCALARS.iter().zip(&mut scalars) {
            *slot = read_array(&run.path(&dti_path(set, name)))?.data;
        }
        let vectors = |name: &str| -> Result<Vec<Vec3>> {
            let data = read_array(&run.path(&dti_path(set, name)))?.data;
            Ok(data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
        };
        Ok(Self { scalars, ev1: vectors("ev1")?, ev1_fa: vectors("ev1_fa")? })
    }
}

/// One row of `table1.csv`: a method scored on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodScore {
    pub method: String,
    pub report: MetricReport,
}

/// NMSE of one fitted map set against the ground truth, in
/// `md, fa, ad, rd, ev1_fa` order.
#[derive(Debug, Clone, PartialEq)]
pub struct MapErrors {
    pub set: String,
    pub md: f64,
    pub fa: f64,
    pub ad: f64,
    pub rd: f64,
    pub ev1_fa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub manifest_hash: String,
    pub final_loss: f64,
    pub trained: Vec<MethodScore>,
    pub unseen: Vec<MethodScore>,
    pub maps: Vec<MapErrors>,
}

impl Evaluation {
    fn scores(&self, split: Split) -> &[MethodScore] {
        match split {
            Split::Train => &self.trained,
            Split::HeldOut => &self.unseen,
        }
    }

    /// Score of `method` ("LR" or the SR label) on `split`.
    pub fn score(&self, split: Split, method: &str) -> Option<&MetricReport> {
        self.scores(split).iter().find(|s| s.method == method).map(|s| &s.report)
    }

    /// The network row, whichever label the prior setting gave it.
    pub fn sr(&self, split: Split) -> &MetricReport {
        &self.scores(split)[1].report
    }

    pub fn baseline(&self, split: Split) -> &MetricReport {
        &self.scores(split)[0].report
    }

    pub fn map_errors(&self, set: &str) -> Option<&MapErrors> {
        self.maps.iter().find(|m| m.set == set)
    }
}

pub fn sr_label(use_prior: bool) -> &'static str {
    if use_prior {
        "SR"
    } else {
        "SR w/o b=0"
    }
}

fn split_label(split: Split) -> &'static str {
    match split {
        Split::Train => "trained",
        Split::HeldOut => "unseen",
    }
}

fn to_map(images: Vec<Image2D>) -> BTreeMap<usize, Image2D> {
    images.into_iter().enumerate().collect()
}

fn final_loss(run: &RunDir) -> Result<f64> {
    let path = run.path(LOSS_CURVE);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| PipelineError::invalid(&path, e.to_string()))?;
    let mut last = None;
    for record in reader.records() {
        let record = record.map_err(|e| PipelineError::invalid(&path, e.to_string()))?;
        last = record.get(1).and_then(|v| v.parse::<f64>().ok());
    }
    last.ok_or_else(|| PipelineError::invalid(&path, "empty loss curve"))
}

/// Scores the SR and baseline stacks, the DTI maps, and writes tables,
/// renders and the summary.
pub fn stage_evaluate(run: &RunDir) -> Result<Evaluation> {
    let manifest = load_manifest(run)?;
    let hr = load_hr(run)?;
    let sr = to_map(read_stack(&run.path(SR_DWIS))?);
    let base = to_map(read_stack(&run.path(BASELINE_DWIS))?);
    let label = sr_label(manifest.use_prior);

    let mut eval = Evaluation {
        manifest_hash: manifest.hash(),
        final_loss: final_loss(run)?,
        trained: Vec::new(),
        unseen: Vec::new(),
        maps: Vec::new(),
    };
    for split in [Split::Train, Split::HeldOut] {
        let mut rows = Vec::new();
        for (method, stack) in [("LR", &base), (label, &sr)] {
            let report = evaluate_split(stack, &hr, split).map_err(PipelineError::core("evaluate"))?;
            rows.push(MethodScore { method: method.to_string(), report });
        }
        match split {
            Split::Train => eval.trained = rows,
            Split::HeldOut => eval.unseen = rows,
        }
    }

    let object = load_object(run)?;
    let n = manifest.size;
    let mask = evaluation_mask(&object, n, n, EVALUATION_MARGIN);
    let gt = MapStack::read(run, "gt")?;
    let mut fitted = Vec::new();
    for set in ["res40", "res50"] {
        let maps = MapStack::read(run, set)?;
        let nm = |i: usize| map_nmse(&maps.scalars[i], &gt.scalars[i], &mask).map_err(PipelineError::core("evaluate"));
        eval.maps.push(MapErrors {
            set: set.to_uppercase().replace("RES", "RES-"),
            md: nm(0)?,
            fa: nm(1)?,
            ad: nm(2)?,
            rd: nm(3)?,
            ev1_fa: vector_map_nmse(&maps.ev1_fa, &gt.ev1_fa, &mask).map_err(PipelineError::core("evaluate"))?,
        });
        fitted.push(maps);
    }

    write_text(&run.path(TABLE_I), &table1_csv(&eval))?;
    write_text(&run.path(PER_DIRECTION), &per_direction_csv(&eval))?;
    write_text(&run.path(TABLE_II), &table2_csv(&eval.maps))?;
    write_renders(run, &hr, &sr, &gt, &fitted)?;
    write_text(&run.path(SUMMARY), &summary_text(&manifest, &eval))?;
    Ok(eval)
}

fn push_summary(row: &mut Vec<String>, s: Summary, fmt: fn(f64) -> String) {
    row.push(fmt(s.mean));
    row.push(fmt(s.std));
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn sci(v: f64) -> String {
    format!("{v:.6e}")
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// Mean and sample standard deviation per split and method. LPIPS is not
/// computed and reported as absent.
pub fn table1_csv(eval: &Evaluation) -> String {
    let header = [
        "split",
        "method",
        "psnr_mean",
        "psnr_std",
        "ssim_mean",
        "ssim_std",
        "nmse_mean",
        "nmse_std",
        "nmse_ratio_mean",
        "nmse_ratio_std",
        "lpips",
    ];
    let mut rows = Vec::new();
    for split in [Split::Train, Split::HeldOut] {
        for score in eval.scores(split) {
            let r = &score.report;
            let mut row = vec![split_label(split).to_string(), score.method.clone()];
            push_summary(&mut row, r.psnr_summary(), fixed);
            push_summary(&mut row, r.ssim_summary(), fixed);
            push_summary(&mut row, r.nmse_summary(), sci);
            push_summary(&mut row, r.nmse_ratio_summary(), sci);
            row.push("absent".to_string());
            rows.push(row);
        }
    }
    csv_string(&header, rows)
}

pub fn per_direction_csv(eval: &Evaluation) -> String {
    let header = ["direction", "split", "method", "psnr", "ssim", "nmse", "nmse_ratio"];
    let mut rows = Vec::new();
    for split in [Split::Train, Split::HeldOut] {
        for score in eval.scores(split) {
            let r = &score.report;
            for (k, &d) in r.directions.iter().enumerate() {
                rows.push(vec![
                    d.to_string(),
                    split_label(split).to_string(),
                    score.method.clone(),
                    fixed(r.psnr[k]),
                    fixed(r.ssim[k]),
                    sci(r.nmse[k]),
                    sci(r.nmse_ratio[k]),
                ]);
            }
        }
    }
    csv_string(&header, rows)
}

pub fn table2_csv(maps: &[MapErrors]) -> String {
    let header = ["set", "md_nmse", "fa_nmse", "ad_nmse", "rd_nmse", "ev1_fa_nmse"];
    let rows = maps
        .iter()
        .map(|m| vec![m.set.clone(), sci(m.md), sci(m.fa), sci(m.ad), sci(m.rd), sci(m.ev1_fa)])
        .collect();
    csv_string(&header, rows)
}

fn abs_diff(a: &Image2D, b: &Image2D) -> Image2D {
    Image2D { pixels: a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y).abs()).collect(), ..a.clone() }
}

/// Ground truth, reconstruction and error renders for the first trained and
/// the first unseen direction, plus DTI maps and their errors.
fn write_renders(
    run: &RunDir,
    hr: &HrSliceSet,
    sr: &BTreeMap<usize, Image2D>,
    gt: &MapStack,
    fitted: &[MapStack],
) -> Result<()> {
    let peak = hr.dwis.iter().flat_map(|d| d.pixels.iter()).copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let picks = [hr.directions.train_indices().first().copied(), hr.directions.held_out_indices().first().copied()];
    for i in picks.into_iter().flatten() {
        let (g, s) = (&hr.dwis[i], &sr[&i]);
        export_pgm(g, &run.path(&format!("renders/dwi_{i:03}_gt.pgm")), (0.0, peak))?;
        export_pgm(s, &run.path(&format!("renders/dwi_{i:03}_sr.pgm")), (0.0, peak))?;
        export_pgm(&abs_diff(s, g), &run.path(&format!("renders/dwi_{i:03}_error.pgm")), (0.0, 0.1 * peak))?;
    }
    let (w, h) = (hr.b0.width, hr.b0.height);
    let image = |v: &[f64]| Image2D { width: w, height: h, pixel_size: 1.0, pixels: v.to_vec() };
    let windows = [("md", 0.0, 3e-3, 1e-3), ("fa", 0.0, 1.0, 0.5)];
    for (name, lo, hi, err_hi) in windows {
        let k = DTI_SCALARS.iter().position(|s| *s == name).unwrap();
        let truth = image(&gt.scalars[k]);
        export_pgm(&truth, &run.path(&format!("renders/{name}_gt.pgm")), (lo, hi))?;
        for (set, maps) in ["res40", "res50"].iter().zip(fitted) {
            let est = image(&maps.scalars[k]);
            export_pgm(&est, &run.path(&format!("renders/{name}_{set}.pgm")), (lo, hi))?;
            export_pgm(&abs_diff(&est, &truth), &run.path(&format!("renders/{name}_{set}_error.pgm")), (0.0, err_hi))?;
        }
    }
    Ok(())
}

pub fn summary_text(manifest: &Manifest, eval: &Evaluation) -> String {
    let mut s = String::new();
    let ms = |x: Summary, prec: usize| format!("{:.p$}({:.p$})", x.mean, x.std, p = prec);
    let me = |x: Summary| format!("{:.3e}({:.3e})", x.mean, x.std);
    writeln!(s, "rotating-view INR super-resolution run").unwrap();
    writeln!(s, "version {}  manifest {}", manifest.version, eval.manifest_hash).unwrap();
    writeln!(
        s,
        "phantom {0}x{0}, {1} directions ({2} trained), b = {3}, t_s = {4}, noise {5:?} sigma {6}",
        manifest.size,
        manifest.directions,
        manifest.train_directions,
        manifest.b_value,
        manifest.thickness_factor,
        manifest.noise_model,
        manifest.noise_sigma
    )
    .unwrap();
    writeln!(
        s,
        "training: {} iterations, {} directions/step, lr {}, prior {}, final loss {:.6e}",
        manifest.iterations,
        manifest.directions_per_step,
        manifest.learning_rate,
        if manifest.use_prior { "on" } else { "off" },
        eval.final_loss
    )
    .unwrap();
    writeln!(s).unwrap();
    writeln!(s, "DWI metrics, Mean(Std)").unwrap();
    writeln!(s, "{:<8} {:<11} {:>18} {:>16} {:>24} {:>24}", "split", "method", "PSNR", "SSIM", "NMSE", "NMSE DWI/S0").unwrap();
    for split in [Split::Train, Split::HeldOut] {
        for score in eval.scores(split) {
            let r = &score.report;
            writeln!(
                s,
                "{:<8} {:<11} {:>18} {:>16} {:>24} {:>24}",
                split_label(split),
                score.method,
                ms(r.psnr_summary(), 2),
                ms(r.ssim_summary(), 4),
                me(r.nmse_summary()),
                me(r.nmse_ratio_summary())
            )
            .unwrap();
        }
    }
    writeln!(s).unwrap();
    writeln!(s, "DTI map NMSE against ground truth").unwrap();
    writeln!(s, "{:<7} {:>11} {:>11} {:>11} {:>11} {:>11}", "set", "MD", "FA", "AD", "RD", "EV1*FA").unwrap();
    for m in &eval.maps {
        writeln!(s, "{:<7} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e}", m.set, m.md, m.fa, m.ad, m.rd, m.ev1_fa)
            .unwrap();
    }
    let gain = |split| eval.sr(split).psnr_summary().mean - eval.baseline(split).psnr_summary().mean;
    writeln!(s).unwrap();
    writeln!(s, "PSNR gain over baseline: trained {:+.2} dB, unseen {:+.2} dB", gain(Split::Train), gain(Split::HeldOut))
        .unwrap();
    s
}

/// Runs every stage in order.
pub fn reproduce(run: &RunDir, manifest: &Manifest) -> Result<Evaluation> {
    stage_phantom(run, manifest)?;
    stage_acquire(run)?;
    stage_train(run)?;
    stage_infer(run, None)?;
    stage_dti(run)?;
    stage_evaluate(run)
}
