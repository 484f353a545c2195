//! Python bindings. Masks cross the boundary as flat row-major label lists
//! and frames as flat row-major RGB lists in `[0, 1]`.

use std::path::PathBuf;

use pixseg_core::embed::HeadParams;
use pixseg_core::error::Error as CoreError;
use pixseg_core::io::{format_click_log, parse_click_log, read_model, read_sequence, write_model, write_sequence};
use pixseg_core::loss::TrainingSequence;
use pixseg_core::metrics::{evaluate_sequence, EvalOptions};
use pixseg_core::retrieval::{segment_video_semisupervised, SemiSupervisedConfig, DEFAULT_POOL_CAP};
use pixseg_core::session::{run_robot, start_session, InteractiveSession, SessionConfig};
use pixseg_core::synth::{generate_sequence, preset, SceneSpec};
use pixseg_core::train::{train as train_head, LossPoint, TrainConfig};
use pixseg_core::video::{Annotation, Frame, LabelMask, VideoTensor};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: CoreError) -> PyErr {
    match e {
        CoreError::Io(e) => PyIOError::new_err(e.to_string()),
        CoreError::Diverged { .. } | CoreError::InconsistentNeighbors(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn flat_masks(masks: &[LabelMask]) -> Vec<Vec<u32>> {
    masks.iter().map(|m| m.labels().to_vec()).collect()
}

fn masks_from_flat(masks: Vec<Vec<u32>>, height: usize, width: usize) -> PyResult<Vec<LabelMask>> {
    masks
        .into_iter()
        .map(|m| LabelMask::new(height, width, m).map_err(to_py))
        .collect()
}

/// A video with optional ground-truth masks.
#[pyclass(module = "pixseg", from_py_object)]
#[derive(Clone)]
pub struct Video {
    video: VideoTensor,
    masks: Option<Vec<LabelMask>>,
    objects: u32,
}

#[pymethods]
impl Video {
    /// Builds a video from flat RGB frames, each `height * width * 3` long.
    #[new]
    #[pyo3(signature = (frames, height, width, masks=None, objects=1))]
    fn new(
        frames: Vec<Vec<f64>>,
        height: usize,
        width: usize,
        masks: Option<Vec<Vec<u32>>>,
        objects: u32,
    ) -> PyResult<Self> {
        let frames = frames
            .into_iter()
            .map(|data| {
                if data.len() != height * width * 3 {
                    return Err(PyValueError::new_err(format!(
                        "frame has {} values, expected {}",
                        data.len(),
                        height * width * 3
                    )));
                }
                Ok(Frame::new(height, width, data))
            })
            .collect::<PyResult<Vec<_>>>()?;
        let video = VideoTensor::new(frames).map_err(to_py)?;
        let masks = masks.map(|m| masks_from_flat(m, height, width)).transpose()?;
        if let Some(m) = &masks {
            if m.len() != video.frame_count() {
                return Err(PyValueError::new_err("need one mask per frame"));
            }
        }
        Ok(Self { video, masks, objects })
    }

    /// Renders a named synthetic preset (`easy`, `drift`, `clutter`).
    #[staticmethod]
    #[pyo3(signature = (name, seed=0))]
    fn preset(name: &str, seed: u64) -> PyResult<Self> {
        let spec = preset(name, seed).ok_or_else(|| PyValueError::new_err(format!("unknown preset {name:?}")))?;
        Self::from_spec(&spec)
    }

    /// Renders a scene described in JSON.
    #[staticmethod]
    fn from_scene_json(json: &str) -> PyResult<Self> {
        let spec: SceneSpec = serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Self::from_spec(&spec)
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let seq = read_sequence(&dir).map_err(to_py)?;
        Ok(Self {
            video: seq.video,
            masks: seq.masks,
            objects: seq.meta.objects,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        write_sequence(&dir, &self.video, self.masks.as_deref(), self.objects).map_err(to_py)
    }

    #[getter]
    fn frame_count(&self) -> usize {
        self.video.frame_count()
    }

    #[getter]
    fn height(&self) -> usize {
        self.video.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.video.width()
    }

    #[getter]
    fn objects(&self) -> u32 {
        self.objects
    }

    #[getter]
    fn has_masks(&self) -> bool {
        self.masks.is_some()
    }

    fn frame(&self, index: usize) -> PyResult<Vec<f64>> {
        self.check_frame(index)?;
        Ok(self.video.frame(index).data().to_vec())
    }

    fn mask(&self, index: usize) -> PyResult<Vec<u32>> {
        self.check_frame(index)?;
        Ok(self.gt()?[index].labels().to_vec())
    }

    fn masks(&self) -> PyResult<Vec<Vec<u32>>> {
        Ok(flat_masks(self.gt()?))
    }

    fn __len__(&self) -> usize {
        self.video.frame_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "Video(frames={}, height={}, width={}, objects={})",
            self.video.frame_count(),
            self.video.height(),
            self.video.width(),
            self.objects
        )
    }
}

impl Video {
    fn from_spec(spec: &SceneSpec) -> PyResult<Self> {
        let (video, masks) = generate_sequence(spec).map_err(to_py)?;
        Ok(Self {
            video,
            masks: Some(masks),
            objects: spec.num_objects(),
        })
    }

    fn gt(&self) -> PyResult<&[LabelMask]> {
        self.masks
            .as_deref()
            .ok_or_else(|| PyValueError::new_err("video has no ground-truth masks"))
    }

    fn check_frame(&self, index: usize) -> PyResult<()> {
        if index >= self.video.frame_count() {
            return Err(PyValueError::new_err(format!(
                "frame {index} out of range for {} frames",
                self.video.frame_count()
            )));
        }
        Ok(())
    }
}

/// An embedding head with the training config its embeddings depend on.
#[pyclass(module = "pixseg", from_py_object)]
#[derive(Clone)]
pub struct Model {
    params: HeadParams,
    config: TrainConfig,
    curve: Vec<LossPoint>,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (params, config) = read_model(&path).map_err(to_py)?;
        Ok(Self {
            params,
            config,
            curve: Vec::new(),
        })
    }

    /// Writes the head and its `.cfg` sidecar, readable by the `pixseg` CLI.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_model(&path, &self.params, &self.config).map_err(to_py)
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.params.output_dim()
    }

    #[getter]
    fn stride(&self) -> usize {
        self.config.embed.stride
    }

    /// Training config as `key = value` lines.
    #[getter]
    fn config(&self) -> String {
        self.config.to_kv_string()
    }

    /// `(iteration, total_loss, skipped_anchors)` per iteration; empty for a
    /// loaded model.
    #[getter]
    fn loss_curve(&self) -> Vec<(usize, f64, usize)> {
        self.curve.iter().map(|p| (p.iteration, p.total, p.skipped)).collect()
    }

    fn __repr__(&self) -> String {
        format!("Model(embedding_dim={}, stride={})", self.params.output_dim(), self.config.embed.stride)
    }
}

/// Trains a head on annotated videos. `config` uses the CLI's `key = value`
/// format; missing keys keep their defaults.
#[pyfunction]
#[pyo3(signature = (videos, config=""))]
fn train(py: Python<'_>, videos: Vec<Video>, config: &str) -> PyResult<Model> {
    let config = TrainConfig::from_kv_str(config).map_err(to_py)?;
    let sequences = videos
        .iter()
        .map(|v| TrainingSequence::new(&v.video, v.gt()?, &config.embed).map_err(to_py))
        .collect::<PyResult<Vec<_>>>()?;
    let outcome = py.detach(|| train_head(&sequences, &config)).map_err(to_py)?;
    Ok(Model {
        params: outcome.params,
        config,
        curve: outcome.curve,
    })
}

/// Propagates the first ground-truth mask (or `first_mask`) through the
/// video. Returns one flat mask per frame.
#[pyfunction]
#[pyo3(signature = (video, model, k=5, adapt=true, seed=0, first_mask=None))]
fn segment(
    py: Python<'_>,
    video: &Video,
    model: &Model,
    k: usize,
    adapt: bool,
    seed: u64,
    first_mask: Option<Vec<u32>>,
) -> PyResult<Vec<Vec<u32>>> {
    let first = match first_mask {
        Some(m) => LabelMask::new(video.video.height(), video.video.width(), m).map_err(to_py)?,
        None => video.gt()?[0].clone(),
    };
    let config = SemiSupervisedConfig {
        embed: model.config.embed,
        k,
        adapt,
        seed,
        pool_cap: DEFAULT_POOL_CAP,
    };
    let masks = py
        .detach(|| segment_video_semisupervised(&video.video, &first, &model.params, &config))
        .map_err(to_py)?;
    Ok(flat_masks(&masks))
}

/// Scores flat masks against the video's ground truth.
#[pyfunction]
#[pyo3(signature = (predictions, video, exclude_first=false, tolerance=None))]
fn evaluate<'py>(
    py: Python<'py>,
    predictions: Vec<Vec<u32>>,
    video: &Video,
    exclude_first: bool,
    tolerance: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let preds = masks_from_flat(predictions, video.video.height(), video.video.width())?;
    let options = EvalOptions {
        exclude_first,
        tolerance,
    };
    let score = evaluate_sequence(&preds, video.gt()?, video.objects.max(1), options).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("mean_j", score.mean_j)?;
    d.set_item("mean_f", score.mean_f)?;
    d.set_item("mean_jf", score.mean_jf)?;
    d.set_item("frames", score.frames)?;
    d.set_item("per_frame_j", score.per_frame_j)?;
    d.set_item("per_frame_f", score.per_frame_f)?;
    Ok(d)
}

/// An interactive session: embeddings are computed once, then every click
/// relabels incrementally.
#[pyclass(module = "pixseg")]
pub struct Session {
    inner: InteractiveSession,
    gt: Option<Vec<LabelMask>>,
}

#[pymethods]
impl Session {
    #[new]
    #[pyo3(signature = (video, model, k=1, adapt=false, seed=0))]
    fn new(py: Python<'_>, video: &Video, model: &Model, k: usize, adapt: bool, seed: u64) -> PyResult<Self> {
        let config = SessionConfig {
            embed: model.config.embed,
            k,
            num_objects: video.objects.max(1),
            adapt,
            seed,
            ..SessionConfig::default()
        };
        let inner = py
            .detach(|| start_session(&video.video, &model.params, config))
            .map_err(to_py)?;
        Ok(Self {
            inner,
            gt: video.masks.clone(),
        })
    }

    /// Adds one labeled pixel. Returns the click outcome as a dict.
    fn add_click<'py>(
        &mut self,
        py: Python<'py>,
        frame: usize,
        row: usize,
        col: usize,
        label: u32,
    ) -> PyResult<Bound<'py, PyDict>> {
        let outcome = self.inner.add_click(Annotation::click(frame, row, col, label)).map_err(to_py)?;
        outcome_dict(py, &outcome, self.inner.has_sufficient_references())
    }

    /// Adds a stroke through `points` (`(row, col)` vertices).
    fn add_scribble<'py>(
        &mut self,
        py: Python<'py>,
        frame: usize,
        points: Vec<(usize, usize)>,
        label: u32,
    ) -> PyResult<Bound<'py, PyDict>> {
        let outcome = self.inner.add_scribble(frame, &points, label).map_err(to_py)?;
        outcome_dict(py, &outcome, self.inner.has_sufficient_references())
    }

    /// Flat masks per frame. Raises until background and an object have
    /// both been clicked.
    fn masks(&self) -> PyResult<Vec<Vec<u32>>> {
        Ok(flat_masks(self.inner.masks().map_err(to_py)?))
    }

    #[getter]
    fn masks_ready(&self) -> bool {
        self.inner.has_sufficient_references()
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.stats();
        let d = PyDict::new(py);
        d.set_item("forward_passes", s.forward_passes)?;
        d.set_item("clicks", s.clicks)?;
        d.set_item("pool_size", s.pool_size)?;
        d.set_item("distance_evaluations", s.distance_evaluations)?;
        d.set_item("last_click_evaluations", s.last_click_evaluations)?;
        Ok(d)
    }

    fn reset(&mut self) {
        self.inner.reset();
    }

    /// The click log as `frame row col label kind` lines.
    fn click_log(&self) -> String {
        format_click_log(self.inner.click_log())
    }

    fn replay(&mut self, log: &str) -> PyResult<()> {
        let log = parse_click_log(log).map_err(to_py)?;
        self.inner.replay(&log).map_err(to_py)
    }

    /// Runs the simulated clicker per seed and returns its curves.
    #[pyo3(signature = (budget, seeds=vec![0]))]
    fn run_robot<'py>(&mut self, py: Python<'py>, budget: usize, seeds: Vec<u64>) -> PyResult<Bound<'py, PyDict>> {
        let gt = self
            .gt
            .as_deref()
            .ok_or_else(|| PyValueError::new_err("video has no ground-truth masks"))?;
        let run = run_robot(&mut self.inner, gt, budget, &seeds).map_err(to_py)?;
        let curve = |c: &[pixseg_core::session::ClickCurvePoint]| -> Vec<(f64, f64)> {
            c.iter().map(|p| (p.clicks_per_frame, p.mean_j)).collect()
        };
        let d = PyDict::new(py);
        d.set_item("seeds", run.seeds.clone())?;
        d.set_item("per_seed", run.per_seed.iter().map(|c| curve(c)).collect::<Vec<_>>())?;
        d.set_item("mean", curve(&run.mean))?;
        d.set_item("wrong_after_initial", run.wrong_after_initial)?;
        d.set_item("wrong_final", run.wrong_final)?;
        Ok(d)
    }
}

fn outcome_dict<'py>(
    py: Python<'py>,
    outcome: &pixseg_core::session::ClickOutcome,
    ready: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("changed_cells", outcome.changed_cells)?;
    d.set_item("changed_frames", outcome.changed_frames.clone())?;
    d.set_item("distance_evaluations", outcome.distance_evaluations)?;
    d.set_item("masks_ready", ready)?;
    Ok(d)
}

#[pymodule]
pub fn pixseg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Video>()?;
    m.add_class::<Model>()?;
    m.add_class::<Session>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("PRESETS", pixseg_core::synth::PRESETS.to_vec())?;
    Ok(())
}
