//! `DTSIMG1` sample files and the benchmark directory layout.
//!
//! ```text
//! <root>/manifest.txt
//! <root>/source/train/*.dimg
//! <root>/target/train/*.dimg   labels zeroed
//! <root>/target/eval/*.dimg
//! ```

use std::path::{Path, PathBuf};

use super::scene::{generate_with_layout, Domain, DomainSpec, Layout, SceneSample};
use crate::binio::{put_f32s, put_u32, read_file, write_file, Reader};
use crate::domain_mix::LabelMap;
use crate::error::{DtsError, Result};
use crate::kv::KvDoc;
use crate::numeric::Tensor;
use crate::rng::derive_seed;

pub const IMAGE_MAGIC: &[u8; 7] = b"DTSIMG1";
pub const SAMPLE_EXT: &str = "dimg";

/// One decoded sample file.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleFile {
    pub image: Tensor,
    pub label: LabelMap,
    pub num_classes: usize,
}

pub fn encode_sample(image: &Tensor, label: &LabelMap, num_classes: usize) -> Result<Vec<u8>> {
    let (c, h, w) = image.chw()?;
    if c != 3 || label.height() != h || label.width() != w {
        return Err(DtsError::dim(format!(
            "image {:?} does not match {}x{} label",
            image.shape(),
            label.height(),
            label.width()
        )));
    }
    let mut out = IMAGE_MAGIC.to_vec();
    put_u32(&mut out, h as u32);
    put_u32(&mut out, w as u32);
    put_u32(&mut out, num_classes as u32);
    put_f32s(&mut out, image.data());
    out.extend_from_slice(label.data());
    Ok(out)
}

pub fn decode_sample(path: &Path, bytes: &[u8]) -> Result<SampleFile> {
    let mut r = Reader::new(path, bytes);
    r.magic(IMAGE_MAGIC)?;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let c = r.u32("class count")? as usize;
    if h == 0 || w == 0 {
        return Err(r.error("zero image size"));
    }
    let data = r.f32s(3 * h * w, "image data")?;
    let labels = r.bytes(h * w, "label data")?.to_vec();
    if !r.at_end() {
        return Err(r.error("trailing bytes after label data"));
    }
    Ok(SampleFile {
        image: Tensor::new(&[3, h, w], data)?,
        label: LabelMap::new(h, w, labels)?,
        num_classes: c,
    })
}

fn sample_name(index: usize, seed: u64) -> String {
    format!("{index:06}_{seed}.{SAMPLE_EXT}")
}

fn seed_from_name(path: &Path) -> u64 {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.split_once('_'))
        .and_then(|(_, seed)| seed.parse().ok())
        .unwrap_or(0)
}

fn sample_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| DtsError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| DtsError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == SAMPLE_EXT) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| DtsError::io(dir, e))
}

/// Writes one file per sample; `zero_labels` blanks the label bytes.
pub fn write_dataset(
    samples: &[SceneSample],
    dir: &Path,
    num_classes: usize,
    zero_labels: bool,
) -> Result<()> {
    create_dir(dir)?;
    for (i, s) in samples.iter().enumerate() {
        let label = if zero_labels {
            LabelMap::filled(s.label.height(), s.label.width(), 0)
        } else {
            s.label.clone()
        };
        let bytes = encode_sample(&s.image, &label, num_classes)?;
        write_file(&dir.join(sample_name(i, s.seed)), &bytes)?;
    }
    Ok(())
}

/// Reads every `.dimg` file in `dir` in name order. An empty directory
/// yields an empty list.
pub fn read_dataset(dir: &Path, domain: Domain) -> Result<Vec<SceneSample>> {
    sample_paths(dir)?
        .into_iter()
        .map(|path| {
            let f = decode_sample(&path, &read_file(&path)?)?;
            Ok(SceneSample {
                image: f.image,
                label: f.label,
                seed: seed_from_name(&path),
                domain,
            })
        })
        .collect()
}

/// Unlabeled target images. Holds pixels only, so nothing downstream can
/// reach target ground truth through it.
#[derive(Clone, Debug, Default)]
pub struct TargetImages(Vec<Tensor>);

impl TargetImages {
    pub fn from_samples(samples: Vec<SceneSample>) -> Self {
        Self(samples.into_iter().map(|s| s.image).collect())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let images = sample_paths(dir)?
            .into_iter()
            .map(|path| decode_sample(&path, &read_file(&path)?).map(|f| f.image))
            .collect::<Result<_>>()?;
        Ok(Self(images))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.0[i]
    }
}

/// Parameters of a generated two-domain benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSpec {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub n_eval: usize,
    pub seed: u64,
    pub layout: Layout,
    pub source: DomainSpec,
    pub target: DomainSpec,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            num_classes: 5,
            n_source: 800,
            n_target: 800,
            n_eval: 200,
            seed: 0,
            layout: Layout::Shapes,
            source: DomainSpec::source(),
            target: DomainSpec::target(),
        }
    }
}

const SOURCE_SEEDS: u64 = 100;
const TARGET_SEEDS: u64 = 101;
const EVAL_SEEDS: u64 = 102;

impl BenchmarkSpec {
    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("data.height", self.height);
        doc.set("data.width", self.width);
        doc.set("data.num_classes", self.num_classes);
        doc.set("data.n_source", self.n_source);
        doc.set("data.n_target", self.n_target);
        doc.set("data.n_eval", self.n_eval);
        doc.set("data.seed", self.seed);
        doc.set(
            "data.layout",
            match self.layout {
                Layout::Shapes => "shapes",
                Layout::Balanced => "balanced",
            },
        );
        self.source.write_kv(&mut doc, "source");
        self.target.write_kv(&mut doc, "target");
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let mut known: Vec<String> = [
            "height",
            "width",
            "num_classes",
            "n_source",
            "n_target",
            "n_eval",
            "seed",
            "layout",
        ]
        .iter()
        .map(|k| format!("data.{k}"))
        .collect();
        for section in ["source", "target"] {
            known.extend(DomainSpec::KV_KEYS.iter().map(|k| format!("{section}.{k}")));
        }
        doc.reject_unknown(&known.iter().map(String::as_str).collect::<Vec<_>>())?;
        let d = Self::default();
        let spec = Self {
            height: doc.get("data.height")?.unwrap_or(d.height),
            width: doc.get("data.width")?.unwrap_or(d.width),
            num_classes: doc.get("data.num_classes")?.unwrap_or(d.num_classes),
            n_source: doc.get("data.n_source")?.unwrap_or(d.n_source),
            n_target: doc.get("data.n_target")?.unwrap_or(d.n_target),
            n_eval: doc.get("data.n_eval")?.unwrap_or(d.n_eval),
            seed: doc.get("data.seed")?.unwrap_or(d.seed),
            layout: match doc.get_str("data.layout").unwrap_or("shapes") {
                "shapes" => Layout::Shapes,
                "balanced" => Layout::Balanced,
                other => {
                    return Err(DtsError::Config(format!(
                        "data.layout: unknown layout `{other}`"
                    )))
                }
            },
            source: d.source.read_kv(doc, "source")?,
            target: d.target.read_kv(doc, "target")?,
        };
        Ok(spec)
    }

    pub fn source_seed(&self, i: usize) -> u64 {
        derive_seed(self.seed, &[SOURCE_SEEDS, i as u64])
    }

    pub fn target_seed(&self, i: usize) -> u64 {
        derive_seed(self.seed, &[TARGET_SEEDS, i as u64])
    }

    pub fn eval_seed(&self, i: usize) -> u64 {
        derive_seed(self.seed, &[EVAL_SEEDS, i as u64])
    }
}

/// A loaded or generated benchmark.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub spec: BenchmarkSpec,
    pub source_train: Vec<SceneSample>,
    pub target_train: TargetImages,
    pub target_eval: Vec<SceneSample>,
}

/// Number of generator threads: `DTS_THREADS` if set, else available cores.
pub fn worker_threads() -> usize {
    std::env::var("DTS_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn generate_many(
    seeds: Vec<u64>,
    spec: &BenchmarkSpec,
    style: &DomainSpec,
    domain: Domain,
    threads: usize,
) -> Result<Vec<SceneSample>> {
    let gen = |s: u64| {
        generate_with_layout(
            s,
            style,
            spec.height,
            spec.width,
            spec.num_classes,
            spec.layout,
            domain,
        )
    };
    if threads <= 1 || seeds.len() < 2 {
        return seeds.into_iter().map(gen).collect();
    }
    let chunk = seeds.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || part.iter().map(|&s| gen(s)).collect::<Result<Vec<_>>>())
            })
            .collect();
        let mut out = Vec::with_capacity(seeds.len());
        for h in handles {
            out.extend(h.join().expect("generator thread panicked")?);
        }
        Ok(out)
    })
}

pub fn generate_benchmark(spec: &BenchmarkSpec, threads: usize) -> Result<Benchmark> {
    let source_seeds = (0..spec.n_source).map(|i| spec.source_seed(i)).collect();
    let target_seeds = (0..spec.n_target).map(|i| spec.target_seed(i)).collect();
    let eval_seeds = (0..spec.n_eval).map(|i| spec.eval_seed(i)).collect();
    Ok(Benchmark {
        source_train: generate_many(source_seeds, spec, &spec.source, Domain::Source, threads)?,
        target_train: TargetImages::from_samples(generate_many(
            target_seeds,
            spec,
            &spec.target,
            Domain::Target,
            threads,
        )?),
        target_eval: generate_many(eval_seeds, spec, &spec.target, Domain::Target, threads)?,
        spec: spec.clone(),
    })
}

pub const MANIFEST: &str = "manifest.txt";

/// Generates and writes a benchmark; target training labels are zeroed.
pub fn write_benchmark(spec: &BenchmarkSpec, root: &Path, threads: usize) -> Result<()> {
    let b = generate_benchmark(spec, threads)?;
    create_dir(root)?;
    write_file(&root.join(MANIFEST), spec.to_kv().render().as_bytes())?;
    let c = spec.num_classes;
    write_dataset(&b.source_train, &root.join("source/train"), c, false)?;
    let target_seeds: Vec<SceneSample> = (0..spec.n_target)
        .map(|i| SceneSample {
            image: b.target_train.get(i).clone(),
            label: LabelMap::filled(spec.height, spec.width, 0),
            seed: spec.target_seed(i),
            domain: Domain::Target,
        })
        .collect();
    write_dataset(&target_seeds, &root.join("target/train"), c, true)?;
    write_dataset(&b.target_eval, &root.join("target/eval"), c, false)?;
    Ok(())
}

pub fn load_benchmark(root: &Path) -> Result<Benchmark> {
    let manifest = root.join(MANIFEST);
    let text = String::from_utf8(read_file(&manifest)?).map_err(|_| DtsError::Format {
        path: manifest.clone(),
        offset: 0,
        msg: "manifest is not UTF-8".into(),
    })?;
    let spec = BenchmarkSpec::from_kv(&KvDoc::parse(&text)?)?;
    Ok(Benchmark {
        source_train: read_dataset(&root.join("source/train"), Domain::Source)?,
        target_train: TargetImages::read(&root.join("target/train"))?,
        target_eval: read_dataset(&root.join("target/eval"), Domain::Target)?,
        spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_scene;

    #[test]
    fn write_then_read_ten_samples() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<SceneSample> = (0..10)
            .map(|s| generate_scene(s, &DomainSpec::target(), 32, 40, 5).unwrap())
            .collect();
        write_dataset(&samples, dir.path(), 5, false).unwrap();
        let back = read_dataset(dir.path(), Domain::Source).unwrap();
        assert_eq!(back, samples);
    }

    #[test]
    fn empty_directory_reads_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_dataset(dir.path(), Domain::Source).unwrap().is_empty());
    }

    #[test]
    fn wrong_magic_names_expected_magic() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("000000_0.dimg"), b"NOTADIMGxxxxxxxxxxxx").unwrap();
        let err = read_dataset(dir.path(), Domain::Source)
            .unwrap_err()
            .to_string();
        assert!(err.contains("DTSIMG1"), "{err}");
        assert!(err.contains("000000_0.dimg"), "{err}");
    }

    #[test]
    fn truncation_reports_offset() {
        let s = generate_scene(1, &DomainSpec::source(), 32, 32, 5).unwrap();
        let bytes = encode_sample(&s.image, &s.label, 5).unwrap();
        let err = decode_sample(Path::new("cut.dimg"), &bytes[..100]).unwrap_err();
        match err {
            DtsError::Format {
                offset, ref path, ..
            } => {
                assert_eq!(offset, 19);
                assert_eq!(path, Path::new("cut.dimg"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn benchmark_round_trip_hides_target_labels() {
        let dir = tempfile::tempdir().unwrap();
        let spec = BenchmarkSpec {
            height: 32,
            width: 32,
            n_source: 3,
            n_target: 2,
            n_eval: 2,
            ..BenchmarkSpec::default()
        };
        write_benchmark(&spec, dir.path(), 2).unwrap();
        let b = load_benchmark(dir.path()).unwrap();
        assert_eq!(b.spec, spec);
        let mem = generate_benchmark(&spec, 1).unwrap();
        assert_eq!(b.source_train, mem.source_train);
        assert_eq!(b.target_eval, mem.target_eval);
        assert_eq!(b.target_train.get(1), mem.target_train.get(1));
        let raw = read_dataset(&dir.path().join("target/train"), Domain::Target).unwrap();
        assert!(raw.iter().all(|s| s.label.data().iter().all(|&v| v == 0)));
    }
}
