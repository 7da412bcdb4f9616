//! Static feature extraction from raw PE bytes: byte histogram,
//! byte-entropy histogram, header numerics, hashed imports and hashed
//! section profile. A documented, reduced analogue of the usual static
//! PE feature scheme; precomputed vectors of any dimension can be
//! ingested through the corpus container instead.

pub mod pe;

use crate::hashing::{fingerprint, fnv1a64};
pub use pe::{parse_pe, PeSummary, SectionSummary};

/// Block-size configuration. The two histogram blocks are fixed at 256
/// bins each (16x16 for the entropy block); the remaining blocks are
/// adjustable.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StaticConfig {
    pub entropy_window: usize,
    pub entropy_stride: usize,
    pub header_dims: usize,
    pub import_bins: usize,
    pub section_bins: usize,
}

impl Default for StaticConfig {
    fn default() -> Self {
        StaticConfig {
            entropy_window: 2048,
            entropy_stride: 1024,
            header_dims: 64,
            import_bins: 128,
            section_bins: 64,
        }
    }
}

pub const SCHEMA_VERSION: &str = "static-v1";

impl StaticConfig {
    pub fn total_dims(&self) -> usize {
        256 + 256 + self.header_dims + self.import_bins + self.section_bins
    }

    /// Fingerprint of the featurizer configuration, embedded in feature
    /// containers and checkpoints.
    pub fn config_hash(&self) -> String {
        let canon = format!(
            "{SCHEMA_VERSION} window={} stride={} header={} imports={} sections={}",
            self.entropy_window, self.entropy_stride, self.header_dims, self.import_bins,
            self.section_bins
        );
        fingerprint(canon.as_bytes())
    }
}

/// Fixed-length static feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticFeatureVector {
    pub values: Vec<f64>,
    pub schema_version: String,
}

/// Normalized 256-bin byte value histogram; all-zero for empty input.
pub fn byte_histogram(bytes: &[u8]) -> Vec<f64> {
    let mut bins = vec![0.0; 256];
    if bytes.is_empty() {
        return bins;
    }
    for &b in bytes {
        bins[b as usize] += 1.0;
    }
    let total = bytes.len() as f64;
    for v in &mut bins {
        *v /= total;
    }
    bins
}

/// Joint (entropy-quantile x byte-quantile) 16x16 histogram over sliding
/// windows, flattened row-major by entropy bin and normalized. Input
/// shorter than one window is treated as a single window.
pub fn byte_entropy_histogram(bytes: &[u8], window: usize, stride: usize) -> Vec<f64> {
    let mut bins = vec![0.0; 256];
    if bytes.is_empty() || window == 0 || stride == 0 {
        return bins;
    }
    let mut add_window = |data: &[u8]| {
        let mut coarse = [0u64; 16];
        for &b in data {
            coarse[(b >> 4) as usize] += 1;
        }
        let n = data.len() as f64;
        let mut h = 0.0;
        for &c in &coarse {
            if c > 0 {
                let p = c as f64 / n;
                h -= p * p.log2();
            }
        }
        // Entropy over 16 buckets spans [0, 4] bits; rescale to [0, 8]
        // then quantize to 16 rows.
        let row = (((h * 2.0) * 2.0) as usize).min(15);
        for (col, &c) in coarse.iter().enumerate() {
            bins[row * 16 + col] += c as f64;
        }
    };
    if bytes.len() < window {
        add_window(bytes);
    } else {
        let mut at = 0;
        while at + window <= bytes.len() {
            add_window(&bytes[at..at + window]);
            at += stride;
        }
    }
    let total: f64 = bins.iter().sum();
    if total > 0.0 {
        for v in &mut bins {
            *v /= total;
        }
    }
    bins
}

fn year_bucket(timestamp: u32) -> f64 {
    const SECONDS_PER_YEAR: f64 = 31_557_600.0; // 365.25 days
    let years = (timestamp as f64 / SECONDS_PER_YEAR).floor();
    years.clamp(0.0, 60.0) / 60.0
}

fn scaled_log(v: u64) -> f64 {
    ((v as f64) + 1.0).ln() / 32.0
}

/// Header numeric block. Layout (indices into the block):
///  0 parse flag, 1 i386 flag, 2 machine, 3 timestamp year bucket,
///  4 declared sections, 5 entry RVA, 6 code size, 7 init data size,
///  8 uninit data size, 9 image size, 10 header size, 11 checksum,
///  12 image base, 13 section align, 14 file align, 15 os version,
///  16 subsystem version, 17 subsystem, 18 dll characteristic bits,
///  19 characteristic bits, 20 stack reserve, 21 heap reserve,
///  22 directory count, 23 file size, 24 overlay size, 25 import dlls,
///  26 imports, 27 parsed sections, 28 executable section fraction,
///  29 writable section fraction, 30 mean section entropy,
///  31 max section entropy; the rest reserved as zeros.
fn header_block(summary: &PeSummary, file_len: usize, dims: usize) -> Vec<f64> {
    let mut block = vec![0.0; dims];
    if !summary.parse_ok {
        return block;
    }
    let dll_count = {
        let mut dlls: Vec<&str> = summary
            .imports
            .iter()
            .filter_map(|i| i.split(':').next())
            .collect();
        dlls.sort_unstable();
        dlls.dedup();
        dlls.len()
    };
    let n_sections = summary.sections.len();
    let exec_frac = if n_sections == 0 {
        0.0
    } else {
        summary
            .sections
            .iter()
            .filter(|s| s.characteristics & 0x2000_0000 != 0)
            .count() as f64
            / n_sections as f64
    };
    let write_frac = if n_sections == 0 {
        0.0
    } else {
        summary
            .sections
            .iter()
            .filter(|s| s.characteristics & 0x8000_0000 != 0)
            .count() as f64
            / n_sections as f64
    };
    let mean_entropy = if n_sections == 0 {
        0.0
    } else {
        summary.sections.iter().map(|s| s.entropy).sum::<f64>() / n_sections as f64
    };
    let max_entropy = summary
        .sections
        .iter()
        .map(|s| s.entropy)
        .fold(0.0, f64::max);

    let values = [
        1.0,
        f64::from(summary.machine == 0x014c),
        summary.machine as f64 / 65535.0,
        year_bucket(summary.timestamp),
        (summary.declared_section_count as f64).min(32.0) / 32.0,
        scaled_log(summary.entry_point_rva as u64),
        scaled_log(summary.size_of_code as u64),
        scaled_log(summary.size_of_initialized_data as u64),
        scaled_log(summary.size_of_uninitialized_data as u64),
        scaled_log(summary.size_of_image as u64),
        scaled_log(summary.size_of_headers as u64),
        scaled_log(summary.checksum as u64),
        scaled_log(summary.image_base as u64),
        scaled_log(summary.section_alignment as u64),
        scaled_log(summary.file_alignment as u64),
        (summary.major_os_version as f64 / 20.0).min(1.0),
        (summary.major_subsystem_version as f64 / 20.0).min(1.0),
        (summary.subsystem as f64 / 32.0).min(1.0),
        summary.dll_characteristics.count_ones() as f64 / 16.0,
        summary.characteristics.count_ones() as f64 / 16.0,
        scaled_log(summary.size_of_stack_reserve as u64),
        scaled_log(summary.size_of_heap_reserve as u64),
        (summary.number_of_rva_and_sizes as f64 / 16.0).min(1.0),
        scaled_log(file_len as u64),
        scaled_log(summary.overlay_size),
        ((dll_count as f64) + 1.0).ln() / 8.0,
        ((summary.imports.len() as f64) + 1.0).ln() / 8.0,
        (n_sections as f64).min(32.0) / 32.0,
        exec_frac,
        write_frac,
        mean_entropy / 8.0,
        max_entropy / 8.0,
    ];
    for (i, v) in values.iter().enumerate().take(dims) {
        block[i] = *v;
    }
    block
}

/// Signed feature hashing: bin from the low bits, sign from the top bit.
fn hash_into(bins: &mut [f64], key: &str, value: f64) {
    if bins.is_empty() {
        return;
    }
    let h = fnv1a64(key.as_bytes());
    let idx = (h % bins.len() as u64) as usize;
    let sign = if h & (1 << 63) != 0 { -1.0 } else { 1.0 };
    bins[idx] += sign * value;
}

fn import_block(summary: &PeSummary, bins: usize) -> Vec<f64> {
    let mut block = vec![0.0; bins];
    for name in &summary.imports {
        hash_into(&mut block, name, 1.0);
    }
    block
}

fn section_block(summary: &PeSummary, bins: usize) -> Vec<f64> {
    let mut block = vec![0.0; bins];
    for s in &summary.sections {
        hash_into(&mut block, &format!("{}:prs", s.name), 1.0);
        hash_into(&mut block, &format!("{}:sz", s.name), scaled_log(s.raw_size as u64));
        hash_into(&mut block, &format!("{}:ent", s.name), s.entropy / 8.0);
        hash_into(
            &mut block,
            &format!("{}:chr", s.name),
            s.characteristics.count_ones() as f64 / 32.0,
        );
    }
    block
}

/// Total featurization: any byte string yields a finite vector of
/// `config.total_dims()` values. Non-PE input populates only the two
/// byte-level histogram blocks.
pub fn featurize_static(bytes: &[u8], config: &StaticConfig) -> StaticFeatureVector {
    let summary = parse_pe(bytes);
    let mut values = Vec::with_capacity(config.total_dims());
    values.extend(byte_histogram(bytes));
    values.extend(byte_entropy_histogram(
        bytes,
        config.entropy_window,
        config.entropy_stride,
    ));
    values.extend(header_block(&summary, bytes.len(), config.header_dims));
    values.extend(import_block(&summary, config.import_bins));
    values.extend(section_block(&summary, config.section_bins));
    debug_assert_eq!(values.len(), config.total_dims());
    StaticFeatureVector {
        values,
        schema_version: SCHEMA_VERSION.to_string(),
    }
}
