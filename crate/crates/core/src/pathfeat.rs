//! Filepath normalization and byte-level tokenization.
//!
//! Raw Windows paths are lowercased, slash-canonicalized, environment
//! variables are expanded to their canonical locations, and volatile
//! components (drive letters, UNC prefixes, usernames) are replaced with
//! universal placeholders. Normalized text is then encoded against a
//! frequency-ranked byte vocabulary.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::hashing::fingerprint;
use crate::tokens::{TokenSequence, RESERVED_IDS, UNK_ID};

/// A filepath after placeholder substitution: lowercase, backslash
/// separated, free of drive letters, usernames and known environment
/// variables.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NormalizedPath(pub String);

impl NormalizedPath {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Environment-variable expansion map. Keys are stored without the
/// surrounding percent signs; replacements are already-normalized paths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvMap {
    entries: BTreeMap<String, String>,
}

impl EnvMap {
    pub fn empty() -> Self {
        EnvMap {
            entries: BTreeMap::new(),
        }
    }

    /// Built-in map covering standard Windows path variables. Loadable
    /// maps may extend or override it.
    pub fn default_map() -> Self {
        let mut m = EnvMap::empty();
        for (k, v) in [
            ("systemdrive", "[drive]"),
            ("homedrive", "[drive]"),
            ("windir", r"[drive]\windows"),
            ("systemroot", r"[drive]\windows"),
            ("comspec", r"[drive]\windows\system32\cmd.exe"),
            ("driverdata", r"[drive]\windows\system32\drivers\driverdata"),
            ("programfiles", r"[drive]\program files"),
            ("programfiles(x86)", r"[drive]\program files (x86)"),
            ("programw6432", r"[drive]\program files"),
            ("commonprogramfiles", r"[drive]\program files\common files"),
            ("commonprogramfiles(x86)", r"[drive]\program files (x86)\common files"),
            ("programdata", r"[drive]\programdata"),
            ("allusersprofile", r"[drive]\programdata"),
            ("public", r"[drive]\users\public"),
            ("userprofile", r"[drive]\users\[user]"),
            ("homepath", r"\users\[user]"),
            ("appdata", r"[drive]\users\[user]\appdata\roaming"),
            ("localappdata", r"[drive]\users\[user]\appdata\local"),
            ("temp", r"[drive]\users\[user]\appdata\local\temp"),
            ("tmp", r"[drive]\users\[user]\appdata\local\temp"),
            ("onedrive", r"[drive]\users\[user]\onedrive"),
        ] {
            m.entries.insert(k.to_string(), v.to_string());
        }
        m
    }

    pub fn insert(&mut self, variable: &str, replacement: &str) {
        self.entries
            .insert(variable.to_lowercase(), replacement.to_lowercase());
    }

    pub fn get(&self, variable: &str) -> Option<&str> {
        self.entries.get(variable).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parse the `variable=replacement` config format (`#` comments,
    /// blank lines ignored).
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = EnvMap::empty();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (var, rep) = line.split_once('=').ok_or_else(|| Error::Format(format!(
                "env map line {}: expected variable=replacement",
                no + 1
            )))?;
            let var = var.trim();
            if var.is_empty() {
                return Err(Error::Format(format!("env map line {}: empty variable", no + 1)));
            }
            m.insert(var, rep.trim());
        }
        Ok(m)
    }

    pub fn to_config_string(&self) -> String {
        let mut out = String::from("# environment variable map: variable=replacement\n");
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

/// Normalize a raw Windows filepath. Unrecognized structures pass through
/// unchanged; the function is total and idempotent.
pub fn normalize_path(raw: &str, env_map: &EnvMap) -> NormalizedPath {
    let mut s = raw.to_lowercase().replace('/', "\\");
    s = expand_env_vars(&s, env_map);
    if let Some(rest) = s.strip_prefix("\\\\") {
        s = format!("[net]\\{rest}");
    } else {
        s = replace_drive_prefix(&s);
    }
    s = anonymize_user_segments(&s);
    NormalizedPath(s)
}

fn expand_env_vars(s: &str, env_map: &EnvMap) -> String {
    let mut out = String::with_capacity(s.len());
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            if let Some(j) = s[i + 1..].find('%').map(|p| i + 1 + p) {
                let name = &s[i + 1..j];
                if let Some(rep) = env_map.get(name) {
                    out.push_str(rep);
                    i = j + 1;
                    continue;
                }
            }
        }
        let ch = s[i..].chars().next().expect("in-bounds char");
        out.push(ch);
        i += ch.len_utf8();
    }
    out
}

fn replace_drive_prefix(s: &str) -> String {
    let b = s.as_bytes();
    if b.len() >= 2 && b[0].is_ascii_lowercase() && b[1] == b':' {
        format!("[drive]{}", &s[2..])
    } else {
        s.to_string()
    }
}

/// Profile directories that are not usernames.
const NON_USER_SEGMENTS: [&str; 5] = ["[user]", "public", "default", "default user", "all users"];

fn anonymize_user_segments(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    loop {
        // Match `users\` at the string start or right after a backslash.
        let found = rest.match_indices("users\\").find(|(i, _)| {
            *i == 0 || rest.as_bytes()[i - 1] == b'\\'
        });
        let Some((at, _)) = found else {
            out.push_str(rest);
            return out;
        };
        let seg_start = at + "users\\".len();
        out.push_str(&rest[..seg_start]);
        let tail = &rest[seg_start..];
        match tail.find('\\') {
            // Only `\users\<name>\` with a trailing separator carries a
            // username; a terminal segment may be a file.
            Some(end) => {
                let segment = &tail[..end];
                if NON_USER_SEGMENTS.contains(&segment) {
                    out.push_str(segment);
                } else {
                    out.push_str("[user]");
                }
                rest = &tail[end..];
            }
            None => {
                out.push_str(tail);
                return out;
            }
        }
    }
}

/// Frequency-ranked byte vocabulary with reserved padding and rare ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteVocab {
    /// byte value -> token id (UNK_ID when not retained).
    table: [u32; 256],
    /// Retained bytes in token-id order.
    entries: Vec<u8>,
}

impl ByteVocab {
    /// Rank bytes by frequency over the normalized corpus; the `size` most
    /// frequent receive ids 2.., ties broken by ascending byte value.
    pub fn build(corpus: &[NormalizedPath], size: usize) -> Result<ByteVocab> {
        if corpus.is_empty() {
            return Err(Error::Input("byte vocabulary needs a non-empty corpus".into()));
        }
        if size == 0 {
            return Err(Error::Input("byte vocabulary size must be >= 1".into()));
        }
        let mut counts = [0u64; 256];
        for p in corpus {
            for &b in p.0.as_bytes() {
                counts[b as usize] += 1;
            }
        }
        let mut seen: Vec<(u8, u64)> = (0..=255u8)
            .filter(|&b| counts[b as usize] > 0)
            .map(|b| (b, counts[b as usize]))
            .collect();
        seen.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        seen.truncate(size);
        let mut table = [UNK_ID; 256];
        let mut entries = Vec::with_capacity(seen.len());
        for (rank, (byte, _)) in seen.iter().enumerate() {
            table[*byte as usize] = RESERVED_IDS + rank as u32;
            entries.push(*byte);
        }
        Ok(ByteVocab { table, entries })
    }

    /// Total id count including the two reserved ids.
    pub fn size(&self) -> usize {
        self.entries.len() + RESERVED_IDS as usize
    }

    pub fn id_of(&self, byte: u8) -> u32 {
        self.table[byte as usize]
    }

    pub fn serialize(&self) -> String {
        let mut out = format!(
            "bytevocab v1 size={} pad=0 unk=1\n",
            self.entries.len()
        );
        for (rank, byte) in self.entries.iter().enumerate() {
            let _ = writeln!(out, "{byte:02x}\t{}", RESERVED_IDS + rank as u32);
        }
        out
    }

    pub fn parse(text: &str) -> Result<ByteVocab> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if !header.starts_with("bytevocab v1 ") {
            return Err(Error::Format(format!("bad byte-vocab header: {header:?}")));
        }
        let mut table = [UNK_ID; 256];
        let mut entries = Vec::new();
        for (no, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (hex, id) = line.split_once('\t').ok_or_else(|| {
                Error::Format(format!("byte-vocab line {}: expected byte_hex\\tid", no + 2))
            })?;
            let byte = u8::from_str_radix(hex, 16)
                .map_err(|_| Error::Format(format!("byte-vocab line {}: bad hex", no + 2)))?;
            let id: u32 = id
                .parse()
                .map_err(|_| Error::Format(format!("byte-vocab line {}: bad id", no + 2)))?;
            if id != RESERVED_IDS + entries.len() as u32 {
                return Err(Error::Format(format!(
                    "byte-vocab line {}: ids must be contiguous from {RESERVED_IDS}",
                    no + 2
                )));
            }
            table[byte as usize] = id;
            entries.push(byte);
        }
        Ok(ByteVocab { table, entries })
    }
}

/// Encode a normalized path as a fixed-length byte-token sequence.
pub fn encode_path(p: &NormalizedPath, vocab: &ByteVocab, n: usize) -> Result<TokenSequence> {
    if n == 0 {
        return Err(Error::Input("sequence length must be >= 1".into()));
    }
    let ids: Vec<u32> = p.0.as_bytes().iter().map(|&b| vocab.id_of(b)).collect();
    Ok(TokenSequence::fit(ids, n))
}

/// Fingerprint of the complete filepath featurizer configuration; stored in
/// checkpoints and feature containers so incompatible pairings are refused.
pub fn config_hash(vocab: &ByteVocab, env_map: &EnvMap, n: usize) -> String {
    let mut canon = format!("path-featurizer v1 n={n}\n");
    canon.push_str(&vocab.serialize());
    canon.push_str(&env_map.to_config_string());
    fingerprint(canon.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(raw: &str) -> String {
        normalize_path(raw, &EnvMap::default_map()).0
    }

    #[test]
    fn drive_and_user_placeholders() {
        assert_eq!(
            norm(r"C:\users\bob\Desktop\04-CA\8853.vbs"),
            r"[drive]\users\[user]\desktop\04-ca\8853.vbs"
        );
    }

    #[test]
    fn unc_prefix_keeps_host() {
        assert_eq!(
            norm(r"\\company\priv\timesheets\april2021.xlsm"),
            r"[net]\company\priv\timesheets\april2021.xlsm"
        );
    }

    #[test]
    fn already_normalized_is_fixed_point() {
        assert_eq!(norm(r"[drive]\x.exe"), r"[drive]\x.exe");
    }

    #[test]
    fn normalization_is_idempotent() {
        let env = EnvMap::default_map();
        let samples = [
            r"C:\Users\Alice\AppData\Local\Temp\a.exe",
            r"%TEMP%\dropper.scr",
            r"\\srv01\share\tools\x.bat",
            r"D:/mixed/slashes/file.dll",
            r"relative\users\carol\doc.pdf",
            r"%UNKNOWNVAR%\x.exe",
        ];
        for raw in samples {
            let once = normalize_path(raw, &env);
            let twice = normalize_path(once.as_str(), &env);
            assert_eq!(once, twice, "not idempotent for {raw}");
        }
    }

    #[test]
    fn env_vars_expand_to_canonical_paths() {
        assert_eq!(
            norm(r"%windir%\system32\svchost.exe"),
            r"[drive]\windows\system32\svchost.exe"
        );
        assert_eq!(
            norm(r"%TEMP%\stage2.exe"),
            r"[drive]\users\[user]\appdata\local\temp\stage2.exe"
        );
        // Unknown variables pass through unchanged.
        assert_eq!(norm(r"%nosuch%\a.exe"), r"%nosuch%\a.exe");
    }

    #[test]
    fn public_profile_is_not_a_username() {
        assert_eq!(
            norm(r"C:\users\Public\shared.exe"),
            r"[drive]\users\public\shared.exe"
        );
    }

    #[test]
    fn synthetic_usernames_never_survive() {
        let env = EnvMap::default_map();
        for user in ["zqxuser7", "m4ri4", "johndoe42", "admin-station"] {
            let raw = format!(r"C:\users\{user}\downloads\payload.exe");
            let n = normalize_path(&raw, &env);
            assert!(!n.0.contains(user), "{user} survived in {}", n.0);
            assert!(n.0.contains(r"\users\[user]\"));
        }
    }

    #[test]
    fn vocab_frequency_oracle() {
        // "aab": a appears twice, b once.
        let corpus = vec![NormalizedPath("aab".into())];
        let v = ByteVocab::build(&corpus, 2).unwrap();
        assert_eq!(v.id_of(b'a'), 2);
        assert_eq!(v.id_of(b'b'), 3);

        // "ab" + "ba": tie broken by ascending byte value.
        let corpus = vec![NormalizedPath("ab".into()), NormalizedPath("ba".into())];
        let v = ByteVocab::build(&corpus, 1).unwrap();
        assert_eq!(v.id_of(b'a'), 2);
        assert_eq!(v.id_of(b'b'), UNK_ID);
    }

    #[test]
    fn large_vocab_keeps_every_corpus_byte() {
        let corpus = vec![NormalizedPath(r"[drive]\users\[user]\x.exe".into())];
        let v = ByteVocab::build(&corpus, 256).unwrap();
        for &b in corpus[0].0.as_bytes() {
            assert_ne!(v.id_of(b), UNK_ID);
        }
    }

    #[test]
    fn empty_corpus_is_an_input_error() {
        assert!(matches!(
            ByteVocab::build(&[], 10),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn encode_pads_unknowns_and_truncates() {
        let corpus = vec![NormalizedPath("aaab".into())];
        let v = ByteVocab::build(&corpus, 2).unwrap();
        let seq = encode_path(&NormalizedPath("ab".into()), &v, 4).unwrap();
        assert_eq!(seq.ids, vec![2, 3, 0, 0]);
        assert_eq!(seq.true_length, 2);

        let seq = encode_path(&NormalizedPath("abc".into()), &v, 4).unwrap();
        assert_eq!(seq.ids, vec![2, 3, 1, 0]);

        let seq = encode_path(&NormalizedPath("abab".into()), &v, 2).unwrap();
        assert_eq!(seq.ids, vec![2, 3]);
        assert_eq!(seq.true_length, 4);
    }

    #[test]
    fn encode_length_is_always_n() {
        let corpus = vec![NormalizedPath("abcdef".into())];
        let v = ByteVocab::build(&corpus, 6).unwrap();
        for text in ["", "a", "abcdefabcdef"] {
            let seq = encode_path(&NormalizedPath(text.into()), &v, 5).unwrap();
            assert_eq!(seq.ids.len(), 5);
        }
    }

    #[test]
    fn vocab_serialization_round_trips() {
        let corpus = vec![NormalizedPath(r"[drive]\users\[user]\temp\aa.exe".into())];
        let v = ByteVocab::build(&corpus, 10).unwrap();
        let text = v.serialize();
        let parsed = ByteVocab::parse(&text).unwrap();
        assert_eq!(v, parsed);
    }

    #[test]
    fn env_map_config_round_trips() {
        let m = EnvMap::default_map();
        let parsed = EnvMap::parse(&m.to_config_string()).unwrap();
        assert_eq!(m, parsed);
    }

    #[test]
    fn config_hash_changes_with_any_component() {
        let corpus = vec![NormalizedPath("abc".into())];
        let v = ByteVocab::build(&corpus, 3).unwrap();
        let env = EnvMap::default_map();
        let base = config_hash(&v, &env, 100);
        assert_ne!(base, config_hash(&v, &env, 101));
        let mut env2 = env.clone();
        env2.insert("custom", r"[drive]\custom");
        assert_ne!(base, config_hash(&v, &env2, 100));
    }
}
