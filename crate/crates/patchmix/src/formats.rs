//! On-disk formats: CIFAR binary batches, dataset and model checkpoints,
//! individual/population text files and the CSV tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use patchmix_core::evolution::{format_pairs, GenerationRecord};
use patchmix_core::guided::GuidedSample;
use patchmix_core::model::Parameters;
use patchmix_core::train::EpochMetrics;
use patchmix_core::{ClassPairIndex, Dataset, ImageTensor, Individual, PatchMask, ReferenceModel, Split};

use crate::error::{Error, Result};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_CLASSES: usize = 10;

pub const DATASET_MAGIC: &[u8; 4] = b"PMXD";
pub const MODEL_MAGIC: &[u8; 4] = b"PMXM";
pub const FORMAT_VERSION: u32 = 1;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses CIFAR-10 binary records: one label byte followed by 1024 red,
/// 1024 green and 1024 blue bytes of a 32×32 image.
pub fn parse_cifar(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::format(format!(
            "CIFAR file length {} is not a multiple of the {CIFAR_RECORD}-byte record size",
            bytes.len()
        )));
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    for (r, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = usize::from(record[0]);
        if label >= CIFAR_CLASSES {
            return Err(Error::format(format!("record {r} has label byte {label}, expected 0-9")));
        }
        let px = &record[1..];
        let mut data = Vec::with_capacity(3 * plane);
        for p in 0..plane {
            for ch in 0..3 {
                data.push(f32::from(px[ch * plane + p]) / 255.0);
            }
        }
        images.push(ImageTensor::new(CIFAR_SIDE, CIFAR_SIDE, 3, data)?);
        labels.push(label);
    }
    Ok(Dataset::new(images, labels, CIFAR_CLASSES, Split::Train)?)
}

pub fn load_cifar_binary(path: &Path) -> Result<Dataset> {
    parse_cifar(&read_bytes(path)?).map_err(|e| annotate(e, path))
}

fn annotate(e: Error, path: &Path) -> Error {
    match e {
        Error::Core(patchmix_core::Error::Format(m)) => Error::format(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::config(format!("{v} does not fit a u32 header field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Little-endian cursor over a byte buffer.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Reader { bytes, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(format!("{} truncated at byte {}", self.what, self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(format!("{} does not start with {:?}", self.what, std::str::from_utf8(magic).unwrap())));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::format(format!("unsupported {} version {version}", self.what)));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(format!("{} has {} trailing bytes", self.what, self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

/// Dataset checkpoint: `PMXD`, version, W, H, C_in, class count, sample
/// count (u32 LE each), one label byte per sample, then f32 LE pixels.
pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    if ds.class_count() > 256 {
        return Err(Error::config("dataset checkpoints store labels as bytes; at most 256 classes"));
    }
    let (w, h, c) = ds.dims().unwrap_or((0, 0, 0));
    let mut out = Vec::with_capacity(28 + ds.len() * (1 + 4 * w * h * c));
    out.extend_from_slice(DATASET_MAGIC);
    for v in [FORMAT_VERSION as usize, w, h, c, ds.class_count(), ds.len()] {
        push_u32(&mut out, v)?;
    }
    out.extend(ds.labels().iter().map(|&l| l as u8));
    for image in ds.images() {
        for &p in image.data() {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes, "dataset checkpoint");
    r.magic(DATASET_MAGIC)?;
    let (w, h, c, classes, count) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let labels: Vec<usize> = r.take(count)?.iter().map(|&b| usize::from(b)).collect();
    let per = w * h * c;
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let data = r.take(4 * per)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        images.push(ImageTensor::new(w, h, c, data)?);
    }
    r.finish()?;
    Ok(Dataset::new(images, labels, classes, Split::Train)?)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_bytes(path, &encode_dataset(ds)?)
}

pub fn load_dataset_checkpoint(path: &Path) -> Result<Dataset> {
    decode_dataset(&read_bytes(path)?).map_err(|e| annotate(e, path))
}

/// Loads either a dataset checkpoint (by magic) or a CIFAR binary batch.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = read_bytes(path)?;
    let ds = if bytes.starts_with(DATASET_MAGIC) { decode_dataset(&bytes) } else { parse_cifar(&bytes) };
    ds.map_err(|e| annotate(e, path))
}

/// Model checkpoint: `PMXM`, version, P, C, D, patch pixel count (u32 LE),
/// then every parameter block as f64 LE in declaration order.
pub fn encode_model(model: &ReferenceModel) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(24 + 8 * model.params().len());
    out.extend_from_slice(MODEL_MAGIC);
    for v in [FORMAT_VERSION as usize, model.grid(), model.classes(), model.hidden(), model.patch_pixels()] {
        push_u32(&mut out, v)?;
    }
    for block in model.params().blocks() {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<ReferenceModel> {
    let mut r = Reader::new(bytes, "model checkpoint");
    r.magic(MODEL_MAGIC)?;
    let (grid, classes, hidden, pp) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let mut params = Parameters::zeros(pp, hidden, classes);
    for block in params.blocks_mut() {
        let raw = r.take(8 * block.len())?;
        for (v, b) in block.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().unwrap());
        }
    }
    r.finish()?;
    Ok(ReferenceModel::from_parameters(grid, classes, hidden, pp, params)?)
}

pub fn save_model(model: &ReferenceModel, path: &Path) -> Result<()> {
    write_bytes(path, &encode_model(model)?)
}

pub fn load_model(path: &Path) -> Result<ReferenceModel> {
    decode_model(&read_bytes(path)?).map_err(|e| annotate(e, path))
}

/// Individual text: `C=<n> P=<n> N=<n>`, the head as a 0/1 string, then
/// `(i,j)` and the mask rows of each active slot.
pub fn individual_to_text(ind: &Individual, classes: usize, grid: usize, max_active: usize) -> String {
    let pairs = ClassPairIndex::new(classes);
    let mut out = format!("C={classes} P={grid} N={max_active}\n");
    out.extend(ind.head().iter().map(|&b| if b { '1' } else { '0' }));
    out.push('\n');
    for slot in ind.active_slots() {
        let (i, j) = pairs.pair(slot);
        let _ = writeln!(out, "({i},{j})");
        out.push_str(&ind.mask(slot).rows_text());
        out.push('\n');
    }
    out
}

/// Header of an individual file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenomeHeader {
    pub classes: usize,
    pub grid: usize,
    pub max_active: usize,
}

fn parse_header(line: &str) -> Result<GenomeHeader> {
    let bad = || Error::format(format!("expected \"C=<n> P=<n> N=<n>\", got {line:?}"));
    let mut fields = line.split_whitespace();
    let mut value = |key: &str| -> Result<usize> {
        fields.next().and_then(|f| f.strip_prefix(key)).and_then(|v| v.parse().ok()).ok_or_else(bad)
    };
    let header = GenomeHeader { classes: value("C=")?, grid: value("P=")?, max_active: value("N=")? };
    if fields.next().is_some() || header.classes == 0 || header.grid == 0 {
        return Err(bad());
    }
    Ok(header)
}

fn next_line<'a>(lines: &mut impl Iterator<Item = &'a str>, what: &str) -> Result<&'a str> {
    lines.next().map(|l| l.trim_end_matches('\r')).ok_or_else(|| Error::format(format!("unexpected end of file, expected {what}")))
}

/// Reads one individual from `lines`; inactive slots get all-zero masks.
pub fn parse_individual<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<(Individual, GenomeHeader)> {
    let header = parse_header(next_line(lines, "individual header")?)?;
    let pairs = ClassPairIndex::new(header.classes);
    let head_line = next_line(lines, "head bits")?;
    if head_line.len() != pairs.len() {
        return Err(Error::format(format!("head {head_line:?} should have {} bits", pairs.len())));
    }
    let head = head_line
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::format(format!("invalid head character {other:?}"))),
        })
        .collect::<Result<Vec<bool>>>()?;
    if head.iter().filter(|&&b| b).count() > header.max_active {
        return Err(Error::format(format!("head activates more than N = {} pairs", header.max_active)));
    }
    let mut masks = vec![PatchMask::zeros(header.grid); pairs.len()];
    for slot in (0..pairs.len()).filter(|&k| head[k]) {
        let (i, j) = pairs.pair(slot);
        let pair_line = next_line(lines, "pair line")?;
        if pair_line != format!("({i},{j})") {
            return Err(Error::format(format!("expected pair ({i},{j}), got {pair_line:?}")));
        }
        let rows = (0..header.grid).map(|_| next_line(lines, "mask row")).collect::<Result<Vec<_>>>()?;
        masks[slot] = PatchMask::parse_rows(header.grid, rows)?;
    }
    Ok((Individual::new(head, masks)?, header))
}

pub fn individual_from_text(text: &str) -> Result<(Individual, GenomeHeader)> {
    let mut lines = text.lines();
    let out = parse_individual(&mut lines)?;
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::format("trailing content after individual"));
    }
    Ok(out)
}

pub fn population_to_text(population: &[Individual], classes: usize, grid: usize, max_active: usize) -> String {
    let mut out = format!("count={}\n", population.len());
    for ind in population {
        out.push_str(&individual_to_text(ind, classes, grid, max_active));
    }
    out
}

pub fn population_from_text(text: &str) -> Result<Vec<Individual>> {
    let mut lines = text.lines();
    let first = next_line(&mut lines, "population header")?;
    let count: usize = first
        .strip_prefix("count=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::format(format!("expected \"count=<n>\", got {first:?}")))?;
    let population = (0..count).map(|_| parse_individual(&mut lines).map(|(ind, _)| ind)).collect::<Result<Vec<_>>>()?;
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::format("trailing content after population"));
    }
    Ok(population)
}

pub const HISTORY_HEADER: &str = "generation,best,mean,active_pair_list";

pub fn history_csv(history: &[GenerationRecord]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},\"{}\"", r.generation, r.best, r.mean, format_pairs(&r.best_active_pairs));
    }
    out
}

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,val_top1,val_patch_acc";

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in metrics {
        let _ = writeln!(out, "{},{},{},{},{}", m.epoch, m.lr, m.train_loss, m.val_top1, m.val_patch_acc);
    }
    out
}

pub const MANIFEST_HEADER: &str = "index,slot,class_i,class_j,source_i,source_j,lambda";

pub fn manifest_csv(guided: &[GuidedSample]) -> String {
    let mut out = format!("{MANIFEST_HEADER}\n");
    for (n, g) in guided.iter().enumerate() {
        let _ = writeln!(
            out,
            "{n},{},{},{},{},{},{}",
            g.slot, g.pair.0, g.pair.1, g.sources.0, g.sources.1, g.sample.lambda
        );
    }
    out
}

/// One manifest row: `(slot, source_i, source_j)`.
pub fn parse_manifest(text: &str) -> Result<Vec<(usize, usize, usize)>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(MANIFEST_HEADER) {
        return Err(Error::format(format!("guided manifest must start with {MANIFEST_HEADER:?}")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.trim_end().split(',').collect();
            let num = |k: usize| -> Result<usize> {
                f.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| Error::format(format!("bad manifest row {line:?}")))
            };
            if f.len() != 7 {
                return Err(Error::format(format!("bad manifest row {line:?}")));
            }
            Ok((num(1)?, num(4)?, num(5)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use patchmix_core::data::synth_shapes;
    use patchmix_core::evolution::{random_individual, GenomeSpec};
    use patchmix_core::{SearchConfig, SeededRng};
    use proptest::prelude::*;

    fn cifar_record(label: u8, fill: impl Fn(usize, usize) -> u8) -> Vec<u8> {
        let mut rec = vec![label];
        for ch in 0..3 {
            for p in 0..1024 {
                rec.push(fill(ch, p));
            }
        }
        rec
    }

    #[test]
    fn cifar_examples() {
        let mut bytes = Vec::new();
        for k in 0..10u8 {
            bytes.extend(cifar_record(k, |ch, p| ((p + ch * 7 + k as usize) % 256) as u8));
        }
        let ds = parse_cifar(&bytes).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.dims(), Some((32, 32, 3)));
        assert_eq!(ds.class_count(), 10);
        assert_eq!(ds.label(3), 3);
        // channel-planar source to interleaved (row, col, channel)
        let img = ds.image(2);
        assert_eq!(img.get(1, 5, 1), ((37 + 7 + 2) % 256) as f32 / 255.0);
        assert_eq!(img.get(0, 0, 0), 2.0 / 255.0);

        let bad = cifar_record(255, |_, _| 0);
        assert!(matches!(parse_cifar(&bad), Err(Error::Core(patchmix_core::Error::Format(_)))));
        assert!(matches!(parse_cifar(&bytes[..100]), Err(Error::Core(patchmix_core::Error::Format(_)))));
        assert_eq!(parse_cifar(&[]).unwrap().len(), 0);
    }

    #[test]
    fn dataset_checkpoint_round_trip() {
        let ds = synth_shapes(4, 16, 3, 2).unwrap();
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(&bytes[..4], b"PMXD");
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back.images(), ds.images());
        assert_eq!(back.labels(), ds.labels());
        assert_eq!(back.class_count(), 4);
        assert!(decode_dataset(&bytes[..bytes.len() - 1]).is_err());

        let empty = Dataset::new(Vec::new(), Vec::new(), 3, Split::Train).unwrap();
        assert_eq!(decode_dataset(&encode_dataset(&empty).unwrap()).unwrap().len(), 0);
    }

    #[test]
    fn model_checkpoint_round_trip() {
        let mut rng = SeededRng::new(1, &[]);
        let model = ReferenceModel::new(4, 3, 8, 48, &mut rng).unwrap();
        let bytes = encode_model(&model).unwrap();
        assert_eq!(bytes.len(), 24 + 8 * model.params().len());
        assert_eq!(decode_model(&bytes).unwrap(), model);
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_model(&wrong).is_err());
        assert!(decode_model(&bytes[..bytes.len() - 8]).is_err());
    }

    #[test]
    fn individual_text_layout() {
        let pairs = ClassPairIndex::new(2);
        let mut head = vec![false; pairs.len()];
        head[pairs.index(0, 1)] = true;
        let mut masks = vec![PatchMask::ones(2); 3];
        masks[1] = PatchMask::from_rows(&[&[1, 0], &[0, 1]]).unwrap();
        let ind = Individual::new(head, masks).unwrap();
        let text = individual_to_text(&ind, 2, 2, 2);
        assert_eq!(text, "C=2 P=2 N=2\n010\n(0,1)\n10\n01\n");
        let (back, header) = individual_from_text(&text).unwrap();
        assert_eq!(header, GenomeHeader { classes: 2, grid: 2, max_active: 2 });
        assert_eq!(back.head(), ind.head());
        assert_eq!(back.mask(1), ind.mask(1));
        assert_eq!(back.mask(0), &PatchMask::zeros(2));

        assert!(individual_from_text("C=2 P=2 N=2\n010\n(0,0)\n10\n01\n").is_err());
        assert!(individual_from_text("C=2 P=2 N=2\n010\n(0,1)\n1x\n01\n").is_err());
        assert!(individual_from_text("C=2 P=2 N=0\n010\n(0,1)\n10\n01\n").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let text = format!("{MANIFEST_HEADER}\n0,1,0,1,4,9,0.5\n1,0,0,0,2,3,0.25\n");
        assert_eq!(parse_manifest(&text).unwrap(), vec![(1, 4, 9), (0, 2, 3)]);
        assert!(parse_manifest("index\n").is_err());
    }

    proptest! {
        #[test]
        fn population_round_trip(seed in any::<u64>(), classes in 1usize..5, grid in 1usize..5, n in 0usize..6) {
            let cfg = SearchConfig::default();
            let spec = GenomeSpec::new(&cfg, classes, grid).unwrap();
            let mut rng = SeededRng::new(seed, &[]);
            let pop: Vec<Individual> = (0..n).map(|_| random_individual(&spec, &mut rng)).collect();
            let text = population_to_text(&pop, classes, grid, spec.max_active);
            let back = population_from_text(&text).unwrap();
            prop_assert_eq!(back.len(), pop.len());
            for (a, b) in pop.iter().zip(&back) {
                prop_assert_eq!(a.head(), b.head());
                for k in a.active_slots() {
                    prop_assert_eq!(a.mask(k), b.mask(k));
                }
            }
        }
    }
}
