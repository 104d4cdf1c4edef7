//! Synthetic hand-object scenes and their JSON file format.
//!
//! Patch features are Gaussian background noise plus a kind-specific
//! signal added to every patch whose center falls inside a ground-truth
//! box, so box regression is learnable without a real image encoder.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{BBox, BoxError};

pub const STANDARD_GRID_SIDE: usize = 16;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("patch grid needs {expected} values, got {got}")]
    GridSize { expected: usize, got: usize },
    #[error("patch grid contains non-finite values")]
    NonFinite,
    #[error("invalid base64 patch data: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("patch byte length {0} is not a multiple of 8")]
    ByteLength(usize),
    #[error("invalid box: {0}")]
    Box(#[from] BoxError),
    #[error("scene JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read scene {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// `side × side` patch features of dimension `dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    side: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PatchGrid {
    pub fn new(side: usize, dim: usize, data: Vec<f64>) -> Result<Self, SceneError> {
        let expected = side * side * dim;
        if data.len() != expected || expected == 0 {
            return Err(SceneError::GridSize {
                expected,
                got: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(SceneError::NonFinite);
        }
        Ok(Self { side, dim, data })
    }

    /// Every patch set to the same vector.
    pub fn uniform(side: usize, patch: &[f64]) -> Result<Self, SceneError> {
        let data = patch.repeat(side * side);
        Self::new(side, patch.len(), data)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_patches(&self) -> usize {
        self.side * self.side
    }

    pub fn patch(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Normalized center of a patch.
    pub fn patch_center(&self, index: usize) -> (f64, f64) {
        let (row, col) = (index / self.side, index % self.side);
        let s = self.side as f64;
        ((col as f64 + 0.5) / s, (row as f64 + 0.5) / s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxKind {
    Hand,
    Object,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub kind: BoxKind,
}

impl GtBox {
    pub fn bbox(&self) -> Result<BBox, BoxError> {
        BBox::new(self.cx, self.cy, self.w, self.h)
    }
}

/// One Stage-1 training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub grid: PatchGrid,
    pub hands: Vec<BBox>,
    pub objects: Vec<BBox>,
    pub caption: Vec<u32>,
}

/// Knobs for [`Scene::synthetic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub side: usize,
    pub patch_dim: usize,
    pub hands: usize,
    pub objects: usize,
    pub caption_len: usize,
    pub vocab_size: usize,
    pub background_std: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            side: STANDARD_GRID_SIDE,
            patch_dim: 32,
            hands: 2,
            objects: 2,
            caption_len: 6,
            vocab_size: 64,
            background_std: 0.3,
        }
    }
}

fn signal(seed: u64, kind: BoxKind, dim: usize) -> Vec<f64> {
    let salt = match kind {
        BoxKind::Hand => 0x4841_4e44,
        BoxKind::Object => 0x4f42_4a45,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn random_box(rng: &mut ChaCha8Rng, min: f64, max: f64) -> BBox {
    let w = rng.gen_range(min..max);
    let h = rng.gen_range(min..max);
    let cx = rng.gen_range(w / 2.0..1.0 - w / 2.0);
    let cy = rng.gen_range(h / 2.0..1.0 - h / 2.0);
    BBox::new(cx, cy, w, h).expect("sampled within the unit square")
}

/// Background noise plus kind signals inside each box.
pub fn render_patches(
    seed: u64,
    side: usize,
    dim: usize,
    background_std: f64,
    boxes: &[(BBox, BoxKind)],
) -> Result<PatchGrid, SceneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..side * side * dim)
        .map(|_| background_std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut grid = PatchGrid::new(side, dim, data)?;
    let hand = signal(seed, BoxKind::Hand, dim);
    let object = signal(seed, BoxKind::Object, dim);
    for p in 0..grid.num_patches() {
        let (x, y) = grid.patch_center(p);
        for (b, kind) in boxes {
            let [x1, y1, x2, y2] = b.corners();
            if x >= x1 && x <= x2 && y >= y1 && y <= y2 {
                let s = if *kind == BoxKind::Hand { &hand } else { &object };
                for (v, add) in grid.data[p * dim..(p + 1) * dim].iter_mut().zip(s) {
                    *v += add;
                }
            }
        }
    }
    Ok(grid)
}

impl Scene {
    pub fn synthetic(seed: u64, spec: SceneSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hands: Vec<BBox> = (0..spec.hands).map(|_| random_box(&mut rng, 0.15, 0.3)).collect();
        let objects: Vec<BBox> = (0..spec.objects).map(|_| random_box(&mut rng, 0.1, 0.25)).collect();
        let caption = (0..spec.caption_len)
            .map(|_| rng.gen_range(1..spec.vocab_size as u32))
            .collect();
        let tagged: Vec<(BBox, BoxKind)> = hands
            .iter()
            .map(|b| (*b, BoxKind::Hand))
            .chain(objects.iter().map(|b| (*b, BoxKind::Object)))
            .collect();
        let grid = render_patches(seed, spec.side, spec.patch_dim, spec.background_std, &tagged)
            .expect("synthetic grid is well-formed");
        Self {
            grid,
            hands,
            objects,
            caption,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, SceneError> {
        let file: SceneFile = serde_json::from_str(s)?;
        file.into_scene()
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, SceneError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_file(&self) -> SceneFile {
        let bytes: Vec<u8> = self.grid.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let gt_boxes = self
            .hands
            .iter()
            .map(|b| (b, BoxKind::Hand))
            .chain(self.objects.iter().map(|b| (b, BoxKind::Object)))
            .map(|(b, kind)| GtBox {
                cx: b.cx,
                cy: b.cy,
                w: b.w,
                h: b.h,
                kind,
            })
            .collect();
        SceneFile {
            patches: PatchSource::Base64(BASE64.encode(bytes)),
            gt_boxes,
            grid_side: Some(self.grid.side),
            patch_dim: Some(self.grid.dim),
            caption: Some(self.caption.clone()),
        }
    }
}

/// Patch payload: raw little-endian `f64` values in base64, or a seed for
/// the synthetic renderer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PatchSource {
    Seed(u64),
    Base64(String),
}

/// On-disk scene document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub patches: PatchSource,
    pub gt_boxes: Vec<GtBox>,
    /// Defaults to 16.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_side: Option<usize>,
    /// Required for seeded patches (default 32); inferred for base64.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<Vec<u32>>,
}

impl SceneFile {
    pub fn into_scene(self) -> Result<Scene, SceneError> {
        let side = self.grid_side.unwrap_or(STANDARD_GRID_SIDE);
        let mut hands = Vec::new();
        let mut objects = Vec::new();
        let mut tagged = Vec::new();
        for g in &self.gt_boxes {
            let b = g.bbox()?;
            tagged.push((b, g.kind));
            match g.kind {
                BoxKind::Hand => hands.push(b),
                BoxKind::Object => objects.push(b),
            }
        }
        let grid = match self.patches {
            PatchSource::Seed(seed) => {
                let dim = self.patch_dim.unwrap_or(SceneSpec::default().patch_dim);
                render_patches(seed, side, dim, SceneSpec::default().background_std, &tagged)?
            }
            PatchSource::Base64(text) => {
                let bytes = BASE64.decode(text.trim())?;
                if bytes.len() % 8 != 0 {
                    return Err(SceneError::ByteLength(bytes.len()));
                }
                let values: Vec<f64> = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect();
                let dim = self.patch_dim.unwrap_or(values.len() / (side * side).max(1));
                PatchGrid::new(side, dim, values)?
            }
        };
        Ok(Scene {
            grid,
            hands,
            objects,
            caption: self.caption.unwrap_or_else(|| vec![1, 2, 3]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape_is_checked() {
        assert!(PatchGrid::new(16, 4, vec![0.0; 1024]).is_ok());
        assert!(matches!(
            PatchGrid::new(16, 4, vec![0.0; 1000]),
            Err(SceneError::GridSize { .. })
        ));
        assert!(matches!(
            PatchGrid::new(1, 1, vec![f64::NAN]),
            Err(SceneError::NonFinite)
        ));
    }

    #[test]
    fn synthetic_scene_is_deterministic() {
        let a = Scene::synthetic(3, SceneSpec::default());
        let b = Scene::synthetic(3, SceneSpec::default());
        assert_eq!(a, b);
        assert_eq!(a.grid.num_patches(), 256);
        assert_eq!(a.hands.len(), 2);
    }

    #[test]
    fn base64_file_round_trip() {
        let scene = Scene::synthetic(9, SceneSpec {
            side: 4,
            patch_dim: 3,
            ..SceneSpec::default()
        });
        let text = serde_json::to_string(&scene.to_file()).unwrap();
        assert_eq!(Scene::from_json_str(&text).unwrap(), scene);
    }

    #[test]
    fn seeded_file() {
        let text = r#"{"patches": 5, "gt_boxes": [{"cx":0.5,"cy":0.5,"w":0.2,"h":0.2,"kind":"hand"}], "grid_side": 4, "patch_dim": 6}"#;
        let scene = Scene::from_json_str(text).unwrap();
        assert_eq!(scene.grid.dim(), 6);
        assert_eq!(scene.hands.len(), 1);
        assert!(scene.objects.is_empty());
    }

    #[test]
    fn corrupted_files_are_rejected() {
        assert!(Scene::from_json_str("{not json").is_err());
        assert!(Scene::from_json_str(r#"{"patches": "@@@", "gt_boxes": []}"#).is_err());
        let bad_box = r#"{"patches": 1, "gt_boxes": [{"cx":0.5,"cy":0.5,"w":0.0,"h":0.2,"kind":"object"}]}"#;
        assert!(matches!(Scene::from_json_str(bad_box), Err(SceneError::Box(_))));
    }
}
