use std::fs;
use std::path::Path;

use mpi_core::hl7::{emit_er7, emit_xml, escape, parse_er7, parse_er7_bytes, parse_xml, unescape, Delimiters};
use proptest::prelude::*;

fn seeds() -> Vec<Vec<u8>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/corpus");
    let mut out: Vec<Vec<u8>> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "er7"))
        .map(|p| fs::read(p).unwrap())
        .collect();
    out.sort();
    out
}

/// Whatever parses must survive emit and re-parse unchanged.
fn check_er7(bytes: &[u8]) -> Result<(), TestCaseError> {
    if let Ok(m) = parse_er7_bytes(bytes) {
        let text = emit_er7(&m);
        let again = parse_er7(&text).map_err(|e| TestCaseError::fail(format!("re-parse failed: {e}")))?;
        prop_assert_eq!(emit_er7(&again), text);
    }
    Ok(())
}

fn check_xml(bytes: &[u8]) -> Result<(), TestCaseError> {
    if let Ok(m) = parse_xml(bytes) {
        let again = parse_xml(emit_xml(&m).as_bytes()).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(again, m);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4_000))]

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
        check_er7(&bytes)?;
        check_xml(&bytes)?;
    }

    #[test]
    fn header_prefixed_bytes_never_panic(tail in proptest::collection::vec(any::<u8>(), 0..256)) {
        let mut bytes = b"MSH|^~\\&|A|B|C|D|20240101||ADT^A04|X|P|2.5\r".to_vec();
        bytes.extend(tail);
        check_er7(&bytes)?;
    }

    #[test]
    fn mutated_corpus_never_panics(pick in 0usize..50, edits in proptest::collection::vec((any::<usize>(), any::<u8>()), 1..8)) {
        let seeds = seeds();
        let mut bytes = seeds[pick % seeds.len()].clone();
        for (pos, b) in edits {
            let i = pos % (bytes.len() + 1);
            if i == bytes.len() { bytes.push(b) } else { bytes[i] = b }
        }
        check_er7(&bytes)?;
        let xml = emit_xml(&parse_er7_bytes(&seeds[pick % seeds.len()]).unwrap()).into_bytes();
        let mut xml_bytes = xml.clone();
        let i = bytes.len() % xml.len();
        xml_bytes[i] = bytes[0];
        check_xml(&xml_bytes)?;
    }

    #[test]
    fn escape_is_total_over_delimiters(leaf in "[a-z|^~\\\\&\r\n ]{0,24}") {
        let d = Delimiters::new('|', "^~\\&").unwrap();
        prop_assert_eq!(unescape(&escape(&leaf, &d), &d).unwrap(), leaf);
    }
}
