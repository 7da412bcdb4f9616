//! Emulation-report parsing and API-call-sequence tokenization.
//!
//! Reports are consumed as JSON documents, one per sample. The accepted
//! schema is a minimal subset of kernel-emulator output: a top-level
//! object with an `entry_points` array, each entry point carrying an
//! ordered `apis` array whose elements have an `api_name` field. Unknown
//! fields are ignored everywhere.
//!
//! ```json
//! {
//!   "sample_id": "s000001",            // optional
//!   "family": "trojan",                // optional
//!   "entry_points": [
//!     { "apis": [ { "api_name": "kernel32.CreateFileW" } ],
//!       "error": { "type": "invalid_read" } }   // optional
//!   ]
//! }
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::hashing::fingerprint;
use crate::tokens::{TokenSequence, RESERVED_IDS, UNK_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportStatus {
    Success,
    Error,
}

/// One parsed emulation report. A report is successful exactly when it
/// produced at least one API call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmulationReport {
    pub sample_id: String,
    pub status: ReportStatus,
    pub error_kind: Option<String>,
    /// Called API names in emission order, lowercase, module prefix removed.
    pub api_calls: Vec<String>,
    pub family: Option<String>,
}

/// Lowercase an API name and strip any `module.` prefix.
pub fn normalize_api_name(raw: &str) -> String {
    let lower = raw.to_lowercase();
    match lower.rsplit_once('.') {
        Some((_, name)) if !name.is_empty() => name.to_string(),
        _ => lower,
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    // serde_json reports 1-based line and column.
    let mut offset = 0;
    for (i, l) in text.lines().enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    text.len()
}

/// Parse a report document. Syntactic problems produce a parse error with
/// a byte offset; structural problems (missing required fields) produce a
/// schema error naming the field.
pub fn parse_report(document: &[u8]) -> Result<EmulationReport> {
    let text = std::str::from_utf8(document).map_err(|e| Error::Parse {
        offset: e.valid_up_to(),
        message: "invalid UTF-8".into(),
    })?;
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let root = value
        .as_object()
        .ok_or_else(|| Error::Schema("top level must be an object".into()))?;

    let sample_id = root
        .get("sample_id")
        .and_then(Value::as_str)
        .unwrap_or("")
        .to_string();
    let family = root
        .get("family")
        .and_then(Value::as_str)
        .map(str::to_string);

    let entry_points = root
        .get("entry_points")
        .ok_or_else(|| Error::Schema("missing entry_points".into()))?
        .as_array()
        .ok_or_else(|| Error::Schema("entry_points must be an array".into()))?;

    let mut api_calls = Vec::new();
    let mut error_kind = None;
    for (i, ep) in entry_points.iter().enumerate() {
        let ep = ep
            .as_object()
            .ok_or_else(|| Error::Schema(format!("entry_points[{i}] must be an object")))?;
        let apis = ep
            .get("apis")
            .ok_or_else(|| Error::Schema(format!("entry_points[{i}] missing apis")))?
            .as_array()
            .ok_or_else(|| Error::Schema(format!("entry_points[{i}].apis must be an array")))?;
        for (j, api) in apis.iter().enumerate() {
            let name = api
                .as_object()
                .and_then(|o| o.get("api_name"))
                .and_then(Value::as_str)
                .ok_or_else(|| {
                    Error::Schema(format!("entry_points[{i}].apis[{j}] missing api_name"))
                })?;
            api_calls.push(normalize_api_name(name));
        }
        if error_kind.is_none() {
            error_kind = ep.get("error").and_then(|e| match e {
                Value::String(s) => Some(s.clone()),
                Value::Object(o) => o.get("type").and_then(Value::as_str).map(str::to_string),
                _ => None,
            });
        }
    }

    let status = if api_calls.is_empty() {
        ReportStatus::Error
    } else {
        ReportStatus::Success
    };
    Ok(EmulationReport {
        sample_id,
        status,
        error_kind,
        api_calls,
        family,
    })
}

/// Serialize a report in the accepted schema subset.
pub fn serialize_report(report: &EmulationReport) -> String {
    let apis: Vec<Value> = report
        .api_calls
        .iter()
        .map(|name| serde_json::json!({ "api_name": name }))
        .collect();
    let mut entry = serde_json::Map::new();
    entry.insert("apis".into(), Value::Array(apis));
    if let Some(kind) = &report.error_kind {
        entry.insert("error".into(), serde_json::json!({ "type": kind }));
    }
    let mut root = serde_json::Map::new();
    root.insert("sample_id".into(), Value::String(report.sample_id.clone()));
    if let Some(f) = &report.family {
        root.insert("family".into(), Value::String(f.clone()));
    }
    root.insert("entry_points".into(), Value::Array(vec![Value::Object(entry)]));
    serde_json::to_string_pretty(&Value::Object(root)).expect("report serialization")
}

/// Frequency-ranked API-name vocabulary with reserved padding/rare ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiVocab {
    ids: HashMap<String, u32>,
    /// Names in token-id order.
    entries: Vec<String>,
}

impl ApiVocab {
    /// Top `v` API names by total occurrence count over the corpus, ties
    /// broken lexicographically.
    pub fn build(reports: &[EmulationReport], v: usize) -> Result<ApiVocab> {
        if v == 0 {
            return Err(Error::Input("api vocabulary size must be >= 1".into()));
        }
        if !reports.iter().any(|r| r.status == ReportStatus::Success) {
            return Err(Error::Input(
                "api vocabulary needs at least one successful report".into(),
            ));
        }
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for r in reports {
            for name in &r.api_calls {
                *counts.entry(name.as_str()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(v);
        let mut ids = HashMap::with_capacity(ranked.len());
        let mut entries = Vec::with_capacity(ranked.len());
        for (rank, (name, _)) in ranked.iter().enumerate() {
            ids.insert(name.to_string(), RESERVED_IDS + rank as u32);
            entries.push(name.to_string());
        }
        Ok(ApiVocab { ids, entries })
    }

    pub fn size(&self) -> usize {
        self.entries.len() + RESERVED_IDS as usize
    }

    pub fn id_of(&self, name: &str) -> u32 {
        self.ids.get(name).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.ids.contains_key(name)
    }

    pub fn serialize(&self) -> String {
        let mut out = format!("apivocab v1 size={} pad=0 unk=1\n", self.entries.len());
        for (rank, name) in self.entries.iter().enumerate() {
            let _ = writeln!(out, "{name}\t{}", RESERVED_IDS + rank as u32);
        }
        out
    }

    pub fn parse(text: &str) -> Result<ApiVocab> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if !header.starts_with("apivocab v1 ") {
            return Err(Error::Format(format!("bad api-vocab header: {header:?}")));
        }
        let mut ids = HashMap::new();
        let mut entries = Vec::new();
        for (no, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (name, id) = line.split_once('\t').ok_or_else(|| {
                Error::Format(format!("api-vocab line {}: expected name\\tid", no + 2))
            })?;
            let id: u32 = id
                .parse()
                .map_err(|_| Error::Format(format!("api-vocab line {}: bad id", no + 2)))?;
            if id != RESERVED_IDS + entries.len() as u32 {
                return Err(Error::Format(format!(
                    "api-vocab line {}: ids must be contiguous from {RESERVED_IDS}",
                    no + 2
                )));
            }
            ids.insert(name.to_string(), id);
            entries.push(name.to_string());
        }
        Ok(ApiVocab { ids, entries })
    }
}

/// Percentage of call occurrences representable by the vocabulary.
pub fn vocab_coverage(vocab: &ApiVocab, reports: &[EmulationReport]) -> f64 {
    let mut total = 0u64;
    let mut covered = 0u64;
    for r in reports {
        for name in &r.api_calls {
            total += 1;
            if vocab.contains(name) {
                covered += 1;
            }
        }
    }
    if total == 0 {
        return 0.0;
    }
    covered as f64 / total as f64 * 100.0
}

/// Label-encode a successful report's call sequence to fixed length `n`.
pub fn encode_apiseq(
    report: &EmulationReport,
    vocab: &ApiVocab,
    n: usize,
) -> Result<TokenSequence> {
    if report.status != ReportStatus::Success {
        return Err(Error::Input(format!(
            "report {} has error status; filter before encoding",
            report.sample_id
        )));
    }
    if n == 0 {
        return Err(Error::Input("sequence length must be >= 1".into()));
    }
    let ids: Vec<u32> = report.api_calls.iter().map(|c| vocab.id_of(c)).collect();
    Ok(TokenSequence::fit(ids, n))
}

/// Success/error tallies for one family bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyStats {
    pub family: String,
    pub success: u64,
    pub error: u64,
}

impl FamilyStats {
    pub fn error_ratio(&self) -> f64 {
        let total = self.success + self.error;
        if total == 0 {
            0.0
        } else {
            self.error as f64 / total as f64
        }
    }
}

/// Corpus-level emulation statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EmulationStats {
    /// Non-empty family buckets, sorted by family name.
    pub per_family: Vec<FamilyStats>,
    pub total: FamilyStats,
    /// Distinct normalized API names across the corpus.
    pub distinct_apis: usize,
}

pub fn emulation_stats(reports: &[EmulationReport]) -> EmulationStats {
    let mut buckets: BTreeMap<String, FamilyStats> = BTreeMap::new();
    let mut distinct: HashSet<&str> = HashSet::new();
    let mut total = FamilyStats {
        family: "total".into(),
        success: 0,
        error: 0,
    };
    for r in reports {
        let family = r.family.clone().unwrap_or_else(|| "unknown".into());
        let entry = buckets.entry(family.clone()).or_insert(FamilyStats {
            family,
            success: 0,
            error: 0,
        });
        match r.status {
            ReportStatus::Success => {
                entry.success += 1;
                total.success += 1;
            }
            ReportStatus::Error => {
                entry.error += 1;
                total.error += 1;
            }
        }
        for name in &r.api_calls {
            distinct.insert(name);
        }
    }
    EmulationStats {
        per_family: buckets.into_values().collect(),
        total,
        distinct_apis: distinct.len(),
    }
}

impl EmulationStats {
    /// CSV with columns family,success,error,error_ratio plus a total row.
    /// The distinct-call count rides along as a comment header.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# distinct_api_calls={}\n", self.distinct_apis);
        out.push_str("family,success,error,error_ratio\n");
        for f in &self.per_family {
            let _ = writeln!(
                out,
                "{},{},{},{:.6}",
                f.family,
                f.success,
                f.error,
                f.error_ratio()
            );
        }
        let _ = writeln!(
            out,
            "total,{},{},{:.6}",
            self.total.success,
            self.total.error,
            self.total.error_ratio()
        );
        out
    }
}

/// Fingerprint of the API featurizer configuration.
pub fn config_hash(vocab: &ApiVocab, n: usize) -> String {
    let mut canon = format!("api-featurizer v1 n={n}\n");
    canon.push_str(&vocab.serialize());
    fingerprint(canon.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(id: &str, calls: &[&str], family: Option<&str>) -> EmulationReport {
        EmulationReport {
            sample_id: id.into(),
            status: if calls.is_empty() {
                ReportStatus::Error
            } else {
                ReportStatus::Success
            },
            error_kind: None,
            api_calls: calls.iter().map(|c| c.to_string()).collect(),
            family: family.map(str::to_string),
        }
    }

    #[test]
    fn parse_preserves_order_and_strips_prefixes() {
        let doc = br#"{
            "sample_id": "s1",
            "entry_points": [
                { "apis": [
                    { "api_name": "kernel32.CreateFileW", "args": [] },
                    { "api_name": "ReadFile" }
                ] }
            ]
        }"#;
        let r = parse_report(doc).unwrap();
        assert_eq!(r.api_calls, vec!["createfilew", "readfile"]);
        assert_eq!(r.status, ReportStatus::Success);
        assert_eq!(r.sample_id, "s1");
    }

    #[test]
    fn zero_calls_is_an_error_status_record() {
        let doc = br#"{ "entry_points": [ { "apis": [], "error": { "type": "invalid_read" } } ] }"#;
        let r = parse_report(doc).unwrap();
        assert_eq!(r.status, ReportStatus::Error);
        assert_eq!(r.error_kind.as_deref(), Some("invalid_read"));
    }

    #[test]
    fn duplicates_are_retained() {
        let doc = br#"{ "entry_points": [ { "apis": [
            { "api_name": "Sleep" }, { "api_name": "Sleep" }, { "api_name": "Sleep" }
        ] } ] }"#;
        let r = parse_report(doc).unwrap();
        assert_eq!(r.api_calls, vec!["sleep", "sleep", "sleep"]);
    }

    #[test]
    fn multiple_entry_points_concatenate_in_order() {
        let doc = br#"{ "entry_points": [
            { "apis": [ { "api_name": "a.X" } ] },
            { "apis": [ { "api_name": "b.Y" } ] }
        ] }"#;
        let r = parse_report(doc).unwrap();
        assert_eq!(r.api_calls, vec!["x", "y"]);
    }

    #[test]
    fn malformed_json_reports_byte_offset() {
        let doc = b"{ \"entry_points\": [ }";
        match parse_report(doc) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 0 && offset <= doc.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_fields_are_schema_errors() {
        match parse_report(br#"{ "sample_id": "x" }"#) {
            Err(Error::Schema(m)) => assert!(m.contains("entry_points")),
            other => panic!("{other:?}"),
        }
        match parse_report(br#"{ "entry_points": [ {} ] }"#) {
            Err(Error::Schema(m)) => assert!(m.contains("apis")),
            other => panic!("{other:?}"),
        }
        match parse_report(br#"{ "entry_points": [ { "apis": [ { "name": "x" } ] } ] }"#) {
            Err(Error::Schema(m)) => assert!(m.contains("api_name")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_serialize_identity_on_schema_subset() {
        let reports = vec![
            report("s1", &["createfilew", "readfile", "sleep"], Some("trojan")),
            report("s2", &[], Some("rat")),
            report("s3", &["ntallocatevirtualmemory"], None),
        ];
        for mut r in reports {
            if r.status == ReportStatus::Error {
                r.error_kind = Some("unsupported_api".into());
            }
            let text = serialize_report(&r);
            let parsed = parse_report(text.as_bytes()).unwrap();
            assert_eq!(parsed, r);
        }
    }

    #[test]
    fn vocab_counting_oracle() {
        // {[a,a,b],[b,c]}: a:2, b:2, c:1. Tie a/b broken lexicographically.
        let corpus = vec![
            report("s1", &["a", "a", "b"], None),
            report("s2", &["b", "c"], None),
        ];
        let v = ApiVocab::build(&corpus, 2).unwrap();
        assert_eq!(v.id_of("a"), 2);
        assert_eq!(v.id_of("b"), 3);
        assert_eq!(v.id_of("c"), UNK_ID);

        let v1 = ApiVocab::build(&[report("s", &["a", "b"], None)], 1).unwrap();
        assert_eq!(v1.id_of("a"), 2);
        assert_eq!(v1.id_of("b"), UNK_ID);
    }

    #[test]
    fn coverage_oracle_and_monotonicity() {
        let corpus = vec![report("s1", &["a", "a", "b", "c"], None)];
        let full = ApiVocab::build(&corpus, 3).unwrap();
        assert_eq!(vocab_coverage(&full, &corpus), 100.0);
        let only_a = ApiVocab::build(&corpus, 1).unwrap();
        assert_eq!(vocab_coverage(&only_a, &corpus), 50.0);

        let big = vec![
            report("s1", &["a", "a", "b", "c", "d", "d", "d"], None),
            report("s2", &["e", "a", "b", "f"], None),
        ];
        let mut prev = 0.0;
        for v in 1..=6 {
            let vocab = ApiVocab::build(&big, v).unwrap();
            let cov = vocab_coverage(&vocab, &big);
            assert!(cov >= prev, "coverage decreased at v={v}");
            prev = cov;
        }
        assert_eq!(prev, 100.0);
    }

    #[test]
    fn encode_fixed_length_and_prefix_truncation() {
        let corpus = vec![report("s1", &["a", "b"], None)];
        let v = ApiVocab::build(&corpus, 2).unwrap();
        let seq = encode_apiseq(&report("x", &["a", "b"], None), &v, 3).unwrap();
        assert_eq!(seq.ids, vec![2, 3, 0]);

        let long: Vec<String> = (0..200).map(|i| format!("call{i}")).collect();
        let long_refs: Vec<&str> = long.iter().map(String::as_str).collect();
        let r = report("y", &long_refs, None);
        let seq = encode_apiseq(&r, &v, 150).unwrap();
        assert_eq!(seq.ids.len(), 150);
        assert_eq!(seq.true_length, 200);
        // Prefix-preserving: equals the encoding of the first n calls.
        let r_head = report("y", &long_refs[..150], None);
        let head = encode_apiseq(&r_head, &v, 150).unwrap();
        assert_eq!(seq.ids, head.ids);

        let unk = encode_apiseq(&report("z", &["nosuch"], None), &v, 2).unwrap();
        assert_eq!(unk.ids, vec![1, 0]);
    }

    #[test]
    fn encoding_error_report_is_rejected() {
        let corpus = vec![report("s1", &["a"], None)];
        let v = ApiVocab::build(&corpus, 1).unwrap();
        assert!(matches!(
            encode_apiseq(&report("e", &[], None), &v, 4),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn stats_error_ratio_and_distinct_count() {
        let reports = vec![
            report("1", &["a", "b"], Some("trojan")),
            report("2", &["b", "c"], Some("trojan")),
            report("3", &[], Some("rat")),
            report("4", &[], Some("rat")),
            report("5", &["a"], Some("rat")),
            report("6", &["a"], Some("rat")),
        ];
        let stats = emulation_stats(&reports);
        // Distinct-API set union: {a, b, c}.
        assert_eq!(stats.distinct_apis, 3);
        let rat = stats.per_family.iter().find(|f| f.family == "rat").unwrap();
        assert_eq!((rat.success, rat.error), (2, 2));
        assert_eq!(rat.error_ratio(), 0.5);
        // Families never seen are simply absent.
        assert!(stats.per_family.iter().all(|f| f.family != "clean"));
        let csv = stats.to_csv();
        assert!(csv.contains("family,success,error,error_ratio"));
        assert!(csv.contains("total,4,2,"));
    }

    #[test]
    fn api_vocab_serialization_round_trips() {
        let corpus = vec![report("s1", &["createfilew", "readfile", "sleep"], None)];
        let v = ApiVocab::build(&corpus, 3).unwrap();
        let parsed = ApiVocab::parse(&v.serialize()).unwrap();
        assert_eq!(v, parsed);
        assert_eq!(v.size(), 5);
    }

    #[test]
    fn encoding_never_exceeds_vocab_size_and_pads_only_suffix() {
        let corpus = vec![report("s1", &["a", "b", "c", "d"], None)];
        let v = ApiVocab::build(&corpus, 2).unwrap();
        let r = report("x", &["d", "a", "c", "b"], None);
        let seq = encode_apiseq(&r, &v, 8).unwrap();
        assert!(seq.ids.iter().all(|&id| (id as usize) < v.size()));
        let first_pad = seq.ids.iter().position(|&id| id == 0).unwrap();
        assert!(seq.ids[first_pad..].iter().all(|&id| id == 0));
    }
}
