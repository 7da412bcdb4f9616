//! Minimal PE32 header/import/section parser feeding the static feature
//! groups. Malformedness is data here, not failure: every read is bounds
//! checked and any structural problem degrades to `parse_ok = false` or a
//! shorter summary, never an error or panic.

/// Per-section facts used by the section feature group.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionSummary {
    pub name: String,
    pub virtual_size: u32,
    pub virtual_address: u32,
    pub raw_size: u32,
    pub raw_offset: u32,
    pub characteristics: u32,
    /// Shannon entropy (bits/byte) of the raw section data present in file.
    pub entropy: f64,
}

/// Parsed header summary. When `parse_ok` is false every field is zeroed
/// and featurization falls back to byte-level blocks only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PeSummary {
    pub parse_ok: bool,
    pub machine: u16,
    pub timestamp: u32,
    pub declared_section_count: u16,
    pub entry_point_rva: u32,
    pub size_of_code: u32,
    pub size_of_initialized_data: u32,
    pub size_of_uninitialized_data: u32,
    pub size_of_image: u32,
    pub size_of_headers: u32,
    pub checksum: u32,
    pub image_base: u32,
    pub section_alignment: u32,
    pub file_alignment: u32,
    pub major_os_version: u16,
    pub major_subsystem_version: u16,
    pub subsystem: u16,
    pub dll_characteristics: u16,
    pub characteristics: u16,
    pub size_of_stack_reserve: u32,
    pub size_of_heap_reserve: u32,
    pub number_of_rva_and_sizes: u32,
    /// Lowercase `dll:function` import names in table order.
    pub imports: Vec<String>,
    pub sections: Vec<SectionSummary>,
    /// Bytes past the last section's raw data.
    pub overlay_size: u64,
}

fn u16_at(b: &[u8], at: usize) -> Option<u16> {
    Some(u16::from_le_bytes(b.get(at..at + 2)?.try_into().ok()?))
}

fn u32_at(b: &[u8], at: usize) -> Option<u32> {
    Some(u32::from_le_bytes(b.get(at..at + 4)?.try_into().ok()?))
}

/// Shannon entropy in bits per byte; 0 for empty input.
pub fn shannon_entropy(data: &[u8]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut counts = [0u64; 256];
    for &b in data {
        counts[b as usize] += 1;
    }
    let n = data.len() as f64;
    let mut h = 0.0;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.log2();
        }
    }
    h
}

const MAX_SECTIONS: usize = 96;
const MAX_IMPORT_DESCRIPTORS: usize = 256;
const MAX_THUNKS_PER_DLL: usize = 4096;
const MAX_NAME_LEN: usize = 256;

pub fn parse_pe(bytes: &[u8]) -> PeSummary {
    match try_parse(bytes) {
        Some(summary) => summary,
        None => PeSummary::default(),
    }
}

fn try_parse(bytes: &[u8]) -> Option<PeSummary> {
    if bytes.len() < 0x40 || &bytes[..2] != b"MZ" {
        return None;
    }
    let pe_off = u32_at(bytes, 0x3c)? as usize;
    if bytes.get(pe_off..pe_off + 4)? != b"PE\0\0" {
        return None;
    }
    let coff = pe_off + 4;
    let machine = u16_at(bytes, coff)?;
    let declared_section_count = u16_at(bytes, coff + 2)?;
    let timestamp = u32_at(bytes, coff + 8)?;
    let size_of_optional_header = u16_at(bytes, coff + 16)? as usize;
    let characteristics = u16_at(bytes, coff + 18)?;

    // PE32 standard + windows fields occupy 96 bytes; anything shorter is
    // a truncated optional header.
    let opt = coff + 20;
    if size_of_optional_header < 96 || bytes.len() < opt + 96 {
        return None;
    }
    if u16_at(bytes, opt)? != 0x10b {
        return None; // PE32 (x86) images only
    }

    let mut summary = PeSummary {
        parse_ok: true,
        machine,
        timestamp,
        declared_section_count,
        characteristics,
        size_of_code: u32_at(bytes, opt + 4)?,
        size_of_initialized_data: u32_at(bytes, opt + 8)?,
        size_of_uninitialized_data: u32_at(bytes, opt + 12)?,
        entry_point_rva: u32_at(bytes, opt + 16)?,
        image_base: u32_at(bytes, opt + 28)?,
        section_alignment: u32_at(bytes, opt + 32)?,
        file_alignment: u32_at(bytes, opt + 36)?,
        major_os_version: u16_at(bytes, opt + 40)?,
        major_subsystem_version: u16_at(bytes, opt + 48)?,
        size_of_image: u32_at(bytes, opt + 56)?,
        size_of_headers: u32_at(bytes, opt + 60)?,
        checksum: u32_at(bytes, opt + 64)?,
        subsystem: u16_at(bytes, opt + 68)?,
        dll_characteristics: u16_at(bytes, opt + 70)?,
        size_of_stack_reserve: u32_at(bytes, opt + 72)?,
        size_of_heap_reserve: u32_at(bytes, opt + 80)?,
        number_of_rva_and_sizes: u32_at(bytes, opt + 92)?,
        ..PeSummary::default()
    };

    // Data directories; only the import directory (index 1) is consumed.
    let dir_count = (summary.number_of_rva_and_sizes as usize).min(16);
    let mut import_dir_rva = 0u32;
    if dir_count > 1 && size_of_optional_header >= 96 + 2 * 8 {
        if let Some(rva) = u32_at(bytes, opt + 96 + 8) {
            import_dir_rva = rva;
        }
    }

    // Section table; keep whatever prefix fits in the file.
    let table = opt + size_of_optional_header;
    let count = (declared_section_count as usize).min(MAX_SECTIONS);
    for i in 0..count {
        let at = table + i * 40;
        let Some(name_bytes) = bytes.get(at..at + 8) else {
            break;
        };
        let name: String = name_bytes
            .iter()
            .take_while(|&&b| b != 0)
            .map(|&b| if b.is_ascii_graphic() { b as char } else { '?' })
            .collect();
        let (Some(virtual_size), Some(virtual_address), Some(raw_size), Some(raw_offset)) = (
            u32_at(bytes, at + 8),
            u32_at(bytes, at + 12),
            u32_at(bytes, at + 16),
            u32_at(bytes, at + 20),
        ) else {
            break;
        };
        let Some(chars) = u32_at(bytes, at + 36) else {
            break;
        };
        let lo = (raw_offset as usize).min(bytes.len());
        let hi = (raw_offset as usize)
            .saturating_add(raw_size as usize)
            .min(bytes.len());
        let entropy = shannon_entropy(&bytes[lo..hi]);
        summary.sections.push(SectionSummary {
            name,
            virtual_size,
            virtual_address,
            raw_size,
            raw_offset,
            characteristics: chars,
            entropy,
        });
    }

    let data_end = summary
        .sections
        .iter()
        .map(|s| s.raw_offset as u64 + s.raw_size as u64)
        .max()
        .unwrap_or(summary.size_of_headers as u64);
    summary.overlay_size = (bytes.len() as u64).saturating_sub(data_end);

    if import_dir_rva != 0 {
        parse_imports(bytes, &mut summary, import_dir_rva);
    }
    Some(summary)
}

fn rva_to_offset(summary: &PeSummary, rva: u32) -> Option<usize> {
    if rva < summary.size_of_headers {
        return Some(rva as usize);
    }
    for s in &summary.sections {
        let span = s.virtual_size.max(s.raw_size);
        if rva >= s.virtual_address && rva < s.virtual_address.saturating_add(span) {
            return Some(s.raw_offset as usize + (rva - s.virtual_address) as usize);
        }
    }
    None
}

fn read_cstr(bytes: &[u8], at: usize) -> Option<String> {
    let slice = bytes.get(at..)?;
    let end = slice
        .iter()
        .take(MAX_NAME_LEN)
        .position(|&b| b == 0)?;
    let s: String = slice[..end]
        .iter()
        .map(|&b| (b as char).to_ascii_lowercase())
        .collect();
    Some(s)
}

fn parse_imports(bytes: &[u8], summary: &mut PeSummary, dir_rva: u32) {
    let Some(mut desc_off) = rva_to_offset(summary, dir_rva) else {
        return;
    };
    for _ in 0..MAX_IMPORT_DESCRIPTORS {
        let (Some(oft), Some(name_rva), Some(ft)) = (
            u32_at(bytes, desc_off),
            u32_at(bytes, desc_off + 12),
            u32_at(bytes, desc_off + 16),
        ) else {
            return;
        };
        if oft == 0 && name_rva == 0 && ft == 0 {
            return; // terminator
        }
        let dll = rva_to_offset(summary, name_rva)
            .and_then(|off| read_cstr(bytes, off))
            .unwrap_or_default();
        let thunk_rva = if oft != 0 { oft } else { ft };
        if !dll.is_empty() {
            if let Some(mut thunk_off) = rva_to_offset(summary, thunk_rva) {
                for _ in 0..MAX_THUNKS_PER_DLL {
                    let Some(entry) = u32_at(bytes, thunk_off) else {
                        break;
                    };
                    if entry == 0 {
                        break;
                    }
                    let func = if entry & 0x8000_0000 != 0 {
                        format!("ord{}", entry & 0xffff)
                    } else {
                        // Skip the 2-byte hint before the name.
                        rva_to_offset(summary, entry)
                            .and_then(|off| read_cstr(bytes, off + 2))
                            .unwrap_or_default()
                    };
                    if !func.is_empty() {
                        summary.imports.push(format!("{dll}:{func}"));
                    }
                    thunk_off += 4;
                }
            }
        }
        desc_off += 20;
    }
}

/// Hand-built minimal valid x86 PE used by tests and the fuzz harness.
/// Two sections, one import (kernel32.dll:CreateFileA).
#[doc(hidden)]
pub fn minimal_pe_fixture() -> Vec<u8> {
    let mut b = vec![0u8; 0x600];
    let put16 = |b: &mut [u8], at: usize, v: u16| b[at..at + 2].copy_from_slice(&v.to_le_bytes());
    let put32 = |b: &mut [u8], at: usize, v: u32| b[at..at + 4].copy_from_slice(&v.to_le_bytes());

    b[0] = b'M';
    b[1] = b'Z';
    put32(&mut b, 0x3c, 0x40); // e_lfanew

    b[0x40..0x44].copy_from_slice(b"PE\0\0");
    let coff = 0x44;
    put16(&mut b, coff, 0x014c); // machine: i386
    put16(&mut b, coff + 2, 2); // sections
    put32(&mut b, coff + 8, 0x5f5e_1000); // timestamp (2020-07)
    put16(&mut b, coff + 16, 0xe0); // optional header size
    put16(&mut b, coff + 18, 0x0102); // characteristics

    let opt = coff + 20;
    put16(&mut b, opt, 0x10b); // PE32 magic
    put32(&mut b, opt + 4, 0x200); // size of code
    put32(&mut b, opt + 8, 0x200); // size of initialized data
    put32(&mut b, opt + 16, 0x1000); // entry point
    put32(&mut b, opt + 20, 0x1000); // base of code
    put32(&mut b, opt + 24, 0x2000); // base of data
    put32(&mut b, opt + 28, 0x0040_0000); // image base
    put32(&mut b, opt + 32, 0x1000); // section alignment
    put32(&mut b, opt + 36, 0x200); // file alignment
    put16(&mut b, opt + 40, 6); // major os version
    put16(&mut b, opt + 48, 6); // major subsystem version
    put32(&mut b, opt + 56, 0x3000); // size of image
    put32(&mut b, opt + 60, 0x200); // size of headers
    put16(&mut b, opt + 68, 3); // subsystem: console
    put16(&mut b, opt + 70, 0x8140); // dll characteristics
    put32(&mut b, opt + 72, 0x0010_0000); // stack reserve
    put32(&mut b, opt + 80, 0x0010_0000); // heap reserve
    put32(&mut b, opt + 92, 16); // number of rva and sizes
    put32(&mut b, opt + 96 + 8, 0x2000); // import directory rva
    put32(&mut b, opt + 96 + 12, 0x28); // import directory size

    let table = opt + 0xe0;
    // .text
    b[table..table + 5].copy_from_slice(b".text");
    put32(&mut b, table + 8, 0x100); // virtual size
    put32(&mut b, table + 12, 0x1000); // virtual address
    put32(&mut b, table + 16, 0x200); // raw size
    put32(&mut b, table + 20, 0x200); // raw offset
    put32(&mut b, table + 36, 0x6000_0020); // code | execute | read
    // .idata
    let t2 = table + 40;
    b[t2..t2 + 6].copy_from_slice(b".idata");
    put32(&mut b, t2 + 8, 0x100);
    put32(&mut b, t2 + 12, 0x2000);
    put32(&mut b, t2 + 16, 0x200);
    put32(&mut b, t2 + 20, 0x400);
    put32(&mut b, t2 + 36, 0xc000_0040); // initialized data | read | write

    // .text content
    for (i, v) in b[0x200..0x400].iter_mut().enumerate() {
        *v = (i % 251) as u8;
    }

    // Import descriptor at rva 0x2000 (file 0x400).
    put32(&mut b, 0x400, 0x2028); // original first thunk
    put32(&mut b, 0x40c, 0x2040); // dll name rva
    put32(&mut b, 0x410, 0x2030); // first thunk
    // Thunk arrays.
    put32(&mut b, 0x428, 0x2050);
    put32(&mut b, 0x430, 0x2050);
    // Dll name and hint/name entry.
    b[0x440..0x440 + 13].copy_from_slice(b"kernel32.dll\0");
    b[0x450..0x452].copy_from_slice(&0u16.to_le_bytes());
    b[0x452..0x452 + 12].copy_from_slice(b"CreateFileA\0");
    b
}
