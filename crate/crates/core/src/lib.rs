pub mod absa;
pub mod bench;
pub mod dagstore;
pub mod ledger;
pub mod maabe;
pub mod paillier;
pub mod pairing;
pub mod policy;
pub mod workflow;

/// Serializes `rows` as CSV with a header line. `header` is used verbatim when
/// there are no rows.
pub(crate) fn write_csv<T: serde::Serialize>(header: &str, rows: &[T]) -> String {
    if rows.is_empty() {
        return format!("{header}\n");
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory CSV write");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV output is UTF-8")
}
