use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::store::{self, Record, FRAME_MAGIC, PATCH_MAGIC};
use super::{
    compute_envelope, extract_patches, generate_phantom, synthesize_rf, EnvelopePatch, Label,
    SimConfig,
};
use crate::error::{QusError, Result};
use crate::rng;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
pub const DATASET_VERSION: &str = "qus-dataset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub sim: SimConfig,
    /// FDS phantoms shared between the training and validation splits.
    pub n_fds_phantoms: usize,
    pub n_lds_phantoms: usize,
    /// Extra phantoms per class used only for the test split.
    pub n_test_phantoms_per_class: usize,
    pub fds_density: f64,
    pub lds_density: f64,
    /// Relative density jitter applied per test phantom.
    pub test_density_jitter: f64,
    /// Fraction of the train/val phantoms reserved for validation.
    pub val_phantom_fraction: f64,
    pub train_patches: usize,
    pub val_patches: usize,
    pub test_patches: usize,
    pub patch_rows: usize,
    pub patch_cols: usize,
    /// Full test frames written per class for parametric maps.
    pub frames_per_class: usize,
    /// Leading part of every source id; keeps ids of different datasets apart.
    pub source_prefix: String,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            n_fds_phantoms: 100,
            n_lds_phantoms: 100,
            n_test_phantoms_per_class: 10,
            fds_density: 16.0,
            lds_density: 2.0,
            test_density_jitter: 0.1,
            val_phantom_fraction: 1.0 / 6.0,
            train_patches: 5000,
            val_patches: 1000,
            test_patches: 500,
            patch_rows: 256,
            patch_cols: 32,
            frames_per_class: 1,
            source_prefix: "sim".to_string(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.n_fds_phantoms == 0 || self.n_lds_phantoms == 0 {
            return Err(QusError::invalid("both classes need at least one phantom"));
        }
        if self.n_fds_phantoms < 2 || self.n_lds_phantoms < 2 {
            return Err(QusError::invalid(
                "each class needs at least two phantoms to keep train and validation disjoint",
            ));
        }
        if self.source_prefix.is_empty() || self.source_prefix.contains(['/', '\\']) {
            return Err(QusError::invalid("source_prefix must be non-empty and contain no path separators"));
        }
        if self.n_test_phantoms_per_class == 0 {
            return Err(QusError::invalid("n_test_phantoms_per_class must be at least 1"));
        }
        if self.train_patches < 2 || self.val_patches < 2 || self.test_patches < 2 {
            return Err(QusError::invalid("every split needs at least two patches"));
        }
        if Label::from_density(self.fds_density) != Label::Fds
            || Label::from_density(self.lds_density * (1.0 + self.test_density_jitter)) != Label::Lds
            || Label::from_density(self.fds_density * (1.0 - self.test_density_jitter)) != Label::Fds
        {
            return Err(QusError::invalid("class densities straddle the FDS threshold"));
        }
        if !(0.0..1.0).contains(&self.val_phantom_fraction) {
            return Err(QusError::invalid("val_phantom_fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Physical patch extent (axial, lateral) in mm.
    pub fn patch_size_mm(&self) -> (f64, f64) {
        (
            self.patch_rows as f64 * self.sim.axial_pitch_mm(),
            self.patch_cols as f64 * self.sim.lateral_spacing_mm,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub id: String,
    pub label: Label,
    pub density_per_rescell: f64,
    pub scatterers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub fds: usize,
    pub lds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub file: String,
    pub count: usize,
    pub class_counts: ClassCounts,
    pub sources: Vec<SourceInfo>,
    /// Index into `sources` for every stored patch.
    pub patch_source: Vec<usize>,
    pub patch_depth_mm: Vec<f64>,
}

impl SplitInfo {
    pub fn source_ids(&self) -> impl Iterator<Item = &str> {
        self.sources.iter().map(|s| s.id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub file: String,
    pub source_id: String,
    pub label: Label,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config: DatasetConfig,
    pub patch_shape: [usize; 2],
    pub patch_size_mm: [f64; 2],
    pub rescell_area_mm2: f64,
    pub splits: BTreeMap<String, SplitInfo>,
    pub frames: Vec<FrameEntry>,
}

impl Manifest {
    pub fn split(&self, name: &str) -> Result<&SplitInfo> {
        self.splits
            .get(name)
            .ok_or_else(|| QusError::invalid(format!("dataset has no split named {name:?}")))
    }
}

struct PhantomJob {
    split: &'static str,
    label: Label,
    index: usize,
    patches: usize,
    jitter: f64,
    write_frame: bool,
}

/// Splits `total` into `parts` near-equal shares, larger shares first.
fn shares(total: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|k| total / parts + usize::from(k < total % parts))
        .collect()
}

fn plan(cfg: &DatasetConfig) -> Vec<PhantomJob> {
    let mut jobs = Vec::new();
    for (label, n) in [(Label::Fds, cfg.n_fds_phantoms), (Label::Lds, cfg.n_lds_phantoms)] {
        let n_val = ((n as f64 * cfg.val_phantom_fraction).round() as usize).clamp(1, n - 1);
        let n_train = n - n_val;
        for (split, phantoms, total) in [
            ("train", n_train, cfg.train_patches),
            ("val", n_val, cfg.val_patches),
        ] {
            let class_total = class_share(total, label);
            for (index, patches) in shares(class_total, phantoms).into_iter().enumerate() {
                jobs.push(PhantomJob { split, label, index, patches, jitter: 0.0, write_frame: false });
            }
        }
        let class_total = class_share(cfg.test_patches, label);
        for (index, patches) in shares(class_total, cfg.n_test_phantoms_per_class)
            .into_iter()
            .enumerate()
        {
            jobs.push(PhantomJob {
                split: "test",
                label,
                index,
                patches,
                jitter: cfg.test_density_jitter,
                write_frame: index < cfg.frames_per_class,
            });
        }
    }
    jobs
}

fn class_share(total: usize, label: Label) -> usize {
    match label {
        Label::Fds => total.div_ceil(2),
        _ => total / 2,
    }
}

fn source_id(prefix: &str, job: &PhantomJob) -> String {
    let class = match job.label {
        Label::Fds => "fds",
        _ => "lds",
    };
    format!("{prefix}-{}-{class}-{:03}", job.split, job.index)
}

/// Simulates every phantom, crops patches and writes the dataset under `out_dir`:
/// `manifest.json`, one patch store per split and the requested test frames.
pub fn build_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let frames_dir = out_dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| QusError::io(&frames_dir, e))?;

    let sim = &cfg.sim;
    let rescell = sim.focal_rescell_area_mm2();
    let seed = sim.rng_seed;
    let pitch = sim.axial_pitch_mm();

    let mut records: BTreeMap<&str, Vec<Record>> = BTreeMap::new();
    let mut infos: BTreeMap<&str, SplitInfo> = SPLITS
        .iter()
        .map(|&s| {
            (
                s,
                SplitInfo {
                    file: format!("{s}.qusp"),
                    count: 0,
                    class_counts: ClassCounts { fds: 0, lds: 0 },
                    sources: Vec::new(),
                    patch_source: Vec::new(),
                    patch_depth_mm: Vec::new(),
                },
            )
        })
        .collect();
    let mut frames = Vec::new();

    for (stream, job) in plan(cfg).into_iter().enumerate() {
        if job.patches == 0 && !job.write_frame {
            continue;
        }
        let mut rng = rng::stream(seed, stream as u64);
        let density = match job.label {
            Label::Fds => cfg.fds_density,
            _ => cfg.lds_density,
        };
        let phantom = generate_phantom(sim, density, rescell, job.jitter, &mut rng)?;
        let env = compute_envelope(&synthesize_rf(&phantom, sim)?)?;
        let id = source_id(&cfg.source_prefix, &job);

        if job.write_frame {
            let file = format!("frames/{id}.qusf");
            let record = Record { values: env.clone(), label: phantom.class_label };
            store::write(&out_dir.join(&file), FRAME_MAGIC, &[record])?;
            frames.push(FrameEntry {
                file,
                source_id: id.clone(),
                label: phantom.class_label,
                rows: env.nrows(),
                cols: env.ncols(),
            });
        }
        if job.patches == 0 {
            continue;
        }
        let patches = extract_patches(
            &env,
            phantom.class_label,
            job.patches,
            (cfg.patch_rows, cfg.patch_cols),
            pitch,
            &id,
            &mut rng,
        )?;
        let info = infos.get_mut(job.split).expect("known split");
        let source_index = info.sources.len();
        info.sources.push(SourceInfo {
            id,
            label: phantom.class_label,
            density_per_rescell: phantom.density_per_rescell,
            scatterers: phantom.len(),
        });
        for p in patches {
            info.count += 1;
            match p.label {
                Label::Fds => info.class_counts.fds += 1,
                _ => info.class_counts.lds += 1,
            }
            info.patch_source.push(source_index);
            info.patch_depth_mm.push(p.depth_mm);
            records
                .entry(job.split)
                .or_default()
                .push(Record { values: p.values, label: p.label });
        }
    }

    for (split, info) in &infos {
        let recs = records.get(split).map(Vec::as_slice).unwrap_or(&[]);
        store::write(&out_dir.join(&info.file), PATCH_MAGIC, recs)?;
    }

    let (ax_mm, lat_mm) = cfg.patch_size_mm();
    let manifest = Manifest {
        version: DATASET_VERSION.to_string(),
        seed,
        config: cfg.clone(),
        patch_shape: [cfg.patch_rows, cfg.patch_cols],
        patch_size_mm: [ax_mm, lat_mm],
        rescell_area_mm2: rescell,
        splits: infos.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        frames,
    };
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| QusError::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| QusError::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| QusError::format(&path, e.to_string()))?;
    if manifest.version != DATASET_VERSION {
        return Err(QusError::format(&path, format!("unsupported version {}", manifest.version)));
    }
    Ok(manifest)
}

/// Loads one split with source ids and depths restored from the manifest.
pub fn load_split(dir: &Path, manifest: &Manifest, split: &str) -> Result<Vec<EnvelopePatch>> {
    let info = manifest.split(split)?;
    let path = dir.join(&info.file);
    let records = store::read(&path, PATCH_MAGIC)?;
    if records.len() != info.count
        || info.patch_source.len() != info.count
        || info.patch_depth_mm.len() != info.count
    {
        return Err(QusError::format(&path, "patch count disagrees with manifest"));
    }
    records
        .into_iter()
        .zip(info.patch_source.iter().zip(&info.patch_depth_mm))
        .map(|(rec, (&src, &depth))| {
            let source = info
                .sources
                .get(src)
                .ok_or_else(|| QusError::format(&path, format!("bad source index {src}")))?;
            EnvelopePatch::new(rec.values, rec.label, depth, source.id.clone())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    pub(crate) fn tiny_config(seed: u64) -> DatasetConfig {
        DatasetConfig {
            sim: SimConfig {
                phantom_width_mm: 6.0,
                phantom_depth_mm: 5.0,
                rng_seed: seed,
                ..SimConfig::default()
            },
            n_fds_phantoms: 3,
            n_lds_phantoms: 3,
            n_test_phantoms_per_class: 2,
            train_patches: 12,
            val_patches: 4,
            test_patches: 4,
            patch_rows: 64,
            patch_cols: 16,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn default_split_sizes() {
        let cfg = DatasetConfig::default();
        let jobs = plan(&cfg);
        for (split, want) in [("train", 5000), ("val", 1000), ("test", 500)] {
            let got: usize = jobs.iter().filter(|j| j.split == split).map(|j| j.patches).sum();
            assert_eq!(got, want, "{split}");
        }
        assert_eq!(jobs.iter().filter(|j| j.split != "test").count(), 200);
        assert_eq!(jobs.iter().filter(|j| j.split == "test").count(), 20);
    }

    #[test]
    fn builds_disjoint_reproducible_dataset() {
        let cfg = tiny_config(7);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = build_dataset(&cfg, a.path()).unwrap();
        build_dataset(&cfg, b.path()).unwrap();
        for f in ["manifest.json", "train.qusp", "val.qusp", "test.qusp"] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let mut seen = HashSet::new();
        for split in SPLITS {
            let info = m.split(split).unwrap();
            for id in info.source_ids() {
                assert!(seen.insert(id.to_string()), "{id} appears in two splits");
            }
            let patches = load_split(a.path(), &m, split).unwrap();
            assert_eq!(patches.len(), info.count);
            assert_eq!(info.class_counts.fds + info.class_counts.lds, info.count);
            assert!(info.class_counts.fds > 0 && info.class_counts.lds > 0);
        }
        assert_eq!(m.split("train").unwrap().count, 12);
        assert_eq!(m.frames.len(), 2);
        let frame = store::read(&a.path().join(&m.frames[0].file), FRAME_MAGIC).unwrap();
        assert_eq!(frame[0].values.dim(), (m.frames[0].rows, m.frames[0].cols));
    }

    #[test]
    fn requires_both_classes() {
        let cfg = DatasetConfig { n_fds_phantoms: 0, ..tiny_config(1) };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(build_dataset(&cfg, dir.path()), Err(QusError::InvalidArgument(_))));
    }

    #[test]
    fn unwritable_output_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let err = build_dataset(&tiny_config(1), &blocker.join("sub")).unwrap_err();
        assert!(matches!(err, QusError::Io { .. }));
    }
}
