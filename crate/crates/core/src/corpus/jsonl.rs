//! Annotation JSONL: one report per line with character-offset spans.
//!
//! Exports made one characteristic at a time name the characteristic in
//! `meta.characteristic`; merged files name it on every span. Lines sharing a
//! document id are merged into a single document. Lines without an id are
//! keyed by a hash of their text.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AnnotatedDocument, SpanAnnotation};
use crate::error::{Error, Result};
use crate::ontology::{Ontology, SeverityLabel};
use crate::textproc::fnv1a_str;

#[derive(Serialize, Deserialize)]
struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    doc_id: Option<String>,
    text: String,
    #[serde(default)]
    spans: Vec<RecordSpan>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    meta: Value,
}

#[derive(Serialize, Deserialize)]
struct RecordSpan {
    start: usize,
    end: usize,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    characteristic: Option<String>,
}

struct Pending {
    doc_id: String,
    text: String,
    spans: Vec<SpanAnnotation>,
    meta: Value,
}

pub fn ingest<R: BufRead>(reader: R, ontology: &Ontology) -> Result<Vec<AnnotatedDocument>> {
    ingest_sources([("<input>".to_string(), reader)], ontology)
}

/// Reads several JSONL sources and merges documents across them.
pub fn ingest_sources<R, I>(sources: I, ontology: &Ontology) -> Result<Vec<AnnotatedDocument>>
where
    R: BufRead,
    I: IntoIterator<Item = (String, R)>,
{
    let mut order: Vec<Pending> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for (name, reader) in sources {
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ctx = format!("{name}: line {}", lineno + 1);
            let record: Record = serde_json::from_str(&line).map_err(|e| Error::parse(&ctx, e))?;
            let file_characteristic = record
                .meta
                .get("characteristic")
                .and_then(Value::as_str)
                .map(str::to_string);

            let mut spans = Vec::with_capacity(record.spans.len());
            for s in record.spans {
                let characteristic = s
                    .characteristic
                    .or_else(|| file_characteristic.clone())
                    .ok_or_else(|| {
                        Error::parse(
                            &ctx,
                            "span has no characteristic and meta.characteristic is unset",
                        )
                    })?;
                let label: SeverityLabel =
                    s.label.parse().map_err(|e: Error| Error::parse(&ctx, e))?;
                spans.push(SpanAnnotation {
                    start: s.start,
                    end: s.end,
                    characteristic,
                    label,
                });
            }

            let doc_id = record
                .doc_id
                .unwrap_or_else(|| format!("doc-{:016x}", fnv1a_str(&record.text)));
            match index.get(&doc_id) {
                Some(&i) => {
                    let pending = &mut order[i];
                    if pending.text != record.text {
                        return Err(Error::parse(
                            ctx,
                            format!("document `{doc_id}` appears with differing text"),
                        ));
                    }
                    pending.spans.extend(spans);
                }
                None => {
                    index.insert(doc_id.clone(), order.len());
                    order.push(Pending {
                        doc_id,
                        text: record.text,
                        spans,
                        meta: record.meta,
                    });
                }
            }
        }
    }

    order
        .into_iter()
        .map(|p| {
            let mut doc = AnnotatedDocument::new(p.doc_id, p.text, p.spans, ontology)?;
            doc.meta = p.meta;
            Ok(doc)
        })
        .collect()
}

fn to_record(doc: &AnnotatedDocument) -> Record {
    Record {
        doc_id: Some(doc.doc_id.clone()),
        text: doc.text.clone(),
        spans: doc
            .spans
            .iter()
            .map(|s| RecordSpan {
                start: s.start,
                end: s.end,
                label: s.label.to_string(),
                characteristic: Some(s.characteristic.clone()),
            })
            .collect(),
        meta: doc.meta.clone(),
    }
}

pub fn write_jsonl<W: Write>(mut out: W, docs: &[AnnotatedDocument]) -> Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut out, &to_record(doc)).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(docs: &[AnnotatedDocument]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, docs).expect("writing to memory");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_characteristic_line() {
        let o = Ontology::bundled();
        let line = r#"{"text":"geen MI","spans":[{"start":0,"end":7,"label":"Normal"}],"meta":{"characteristic":"mitral_regurgitation"}}"#;
        let docs = ingest(line.as_bytes(), &o).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(
            docs[0].doc_label("mitral_regurgitation"),
            SeverityLabel::Normal
        );
        assert!(docs[0].doc_id.starts_with("doc-"));
    }

    #[test]
    fn out_of_bounds_span() {
        let o = Ontology::bundled();
        let line = r#"{"text":"geen MI","spans":[{"start":0,"end":8,"label":"Normal","characteristic":"mitral_regurgitation"}]}"#;
        assert!(matches!(
            ingest(line.as_bytes(), &o),
            Err(Error::SpanOutOfBounds { .. })
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let o = Ontology::bundled();
        let input = "{\"text\":\"a\"}\n\n{not json\n";
        let err = ingest(input.as_bytes(), &o).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn merges_files_by_doc_id() {
        let o = Ontology::bundled();
        let a = r#"{"doc_id":"r1","text":"geen MI, lichte AI","spans":[{"start":0,"end":7,"label":"Normal"}],"meta":{"characteristic":"mitral_regurgitation"}}"#;
        let b = r#"{"doc_id":"r1","text":"geen MI, lichte AI","spans":[{"start":9,"end":18,"label":"Mild"}],"meta":{"characteristic":"aortic_regurgitation"}}"#;
        let docs = ingest_sources(
            [
                ("a".to_string(), a.as_bytes()),
                ("b".to_string(), b.as_bytes()),
            ],
            &o,
        )
        .unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].spans.len(), 2);
        assert_eq!(
            docs[0].doc_label("mitral_regurgitation"),
            SeverityLabel::Normal
        );
        assert_eq!(
            docs[0].doc_label("aortic_regurgitation"),
            SeverityLabel::Mild
        );

        let c = r#"{"doc_id":"r1","text":"other text","spans":[]}"#;
        assert!(ingest_sources(
            [
                ("a".to_string(), a.as_bytes()),
                ("c".to_string(), c.as_bytes())
            ],
            &o
        )
        .is_err());
    }

    #[test]
    fn round_trip() {
        let o = Ontology::bundled();
        let synth = super::super::generate_synthetic(
            &o,
            &super::super::Templates::bundled(),
            40,
            5,
            &super::super::Profile::table2(),
        )
        .unwrap();
        let text = to_jsonl(&synth.docs);
        let back = ingest(text.as_bytes(), &o).unwrap();
        assert_eq!(back, synth.docs);
        assert_eq!(to_jsonl(&back), text);
    }
}
