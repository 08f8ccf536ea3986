//! ER7 (pipe-delimited) encoding.

use super::message::{check_leaf, valid_segment_id, Component, Delimiters, Field, Message, Repetition, Segment};
use super::Hl7Error;

pub const SEGMENT_TERMINATOR: char = '\r';

/// Parses ER7 bytes. Input must be UTF-8.
pub fn parse_er7_bytes(bytes: &[u8]) -> Result<Message, Hl7Error> {
    let text = std::str::from_utf8(bytes).map_err(|_| Hl7Error::InvalidUtf8)?;
    parse_er7(text)
}

/// Parses ER7 text. Segments end with CR; LF and CRLF are tolerated.
pub fn parse_er7(text: &str) -> Result<Message, Hl7Error> {
    if text.is_empty() {
        return Err(Hl7Error::Empty);
    }
    let mut lines = text
        .split(['\r', '\n'])
        .filter(|l| !l.is_empty());
    let header = lines.next().ok_or(Hl7Error::Empty)?;
    let (delimiters, msh) = parse_msh(header)?;
    let mut segments = vec![msh];
    for line in lines {
        segments.push(parse_segment(line, &delimiters)?);
    }
    let mut message = Message { delimiters, segments };
    message.canonicalize();
    Ok(message)
}

fn parse_msh(line: &str) -> Result<(Delimiters, Segment), Hl7Error> {
    let mut chars = line.chars();
    let id: String = chars.by_ref().take(3).collect();
    if id != "MSH" {
        return Err(Hl7Error::NoMshHeader);
    }
    let field_sep = chars.next().ok_or_else(|| Hl7Error::BadEncodingChars(line.into()))?;
    let rest = chars.as_str();
    let (encoding, remainder) = match rest.find(field_sep) {
        Some(i) => (&rest[..i], Some(&rest[i + field_sep.len_utf8()..])),
        None => (rest, None),
    };
    let delimiters = Delimiters::new(field_sep, encoding)?;
    let mut fields = vec![
        Field::text(field_sep.to_string()),
        Field::text(encoding.to_string()),
    ];
    if let Some(remainder) = remainder {
        for raw in remainder.split(field_sep) {
            fields.push(parse_field(raw, &delimiters)?);
        }
    }
    Ok((delimiters, Segment { id, fields }))
}

fn parse_segment(line: &str, d: &Delimiters) -> Result<Segment, Hl7Error> {
    let (id, rest) = match line.find(d.field) {
        Some(i) => (&line[..i], Some(&line[i + d.field.len_utf8()..])),
        None => (line, None),
    };
    if !valid_segment_id(id) || id == "MSH" {
        return Err(Hl7Error::BadSegmentId(id.chars().take(16).collect()));
    }
    let mut fields = Vec::new();
    if let Some(rest) = rest {
        for raw in rest.split(d.field) {
            fields.push(parse_field(raw, d)?);
        }
    }
    Ok(Segment {
        id: id.to_string(),
        fields,
    })
}

fn parse_field(raw: &str, d: &Delimiters) -> Result<Field, Hl7Error> {
    let reps = raw
        .split(d.repetition)
        .map(|rep| {
            rep.split(d.component)
                .map(|comp| {
                    comp.split(d.subcomponent)
                        .map(|leaf| unescape(leaf, d))
                        .collect::<Result<Vec<_>, _>>()
                        .map(Component)
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Repetition)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Field(reps))
}

/// Decodes escape sequences in one leaf.
pub fn unescape(leaf: &str, d: &Delimiters) -> Result<String, Hl7Error> {
    if !leaf.contains(d.escape) {
        check_leaf(leaf)?;
        return Ok(leaf.to_string());
    }
    let mut out = String::with_capacity(leaf.len());
    let mut rest = leaf;
    while let Some(start) = rest.find(d.escape) {
        out.push_str(&rest[..start]);
        let after = &rest[start + d.escape.len_utf8()..];
        let end = after.find(d.escape).ok_or(Hl7Error::UnterminatedEscape)?;
        let body = &after[..end];
        match body {
            "F" => out.push(d.field),
            "S" => out.push(d.component),
            "T" => out.push(d.subcomponent),
            "R" => out.push(d.repetition),
            "E" => out.push(d.escape),
            _ if body.starts_with('X') => out.push_str(&decode_hex(&body[1..])?),
            _ => return Err(Hl7Error::UnknownEscape(body.chars().take(16).collect())),
        }
        rest = &after[end + d.escape.len_utf8()..];
    }
    out.push_str(rest);
    check_leaf(&out)?;
    Ok(out)
}

fn decode_hex(hex: &str) -> Result<String, Hl7Error> {
    let bad = || Hl7Error::UnknownEscape(format!("X{}", hex.chars().take(16).collect::<String>()));
    if hex.is_empty() || hex.len() % 2 != 0 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(bad());
    }
    let bytes: Vec<u8> = (0..hex.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).expect("checked hex"))
        .collect();
    String::from_utf8(bytes).map_err(|_| bad())
}

/// Escapes delimiter characters and line breaks in one leaf.
pub fn escape(leaf: &str, d: &Delimiters) -> String {
    let mut out = String::with_capacity(leaf.len());
    for c in leaf.chars() {
        let code = if c == d.field {
            Some("F")
        } else if c == d.component {
            Some("S")
        } else if c == d.subcomponent {
            Some("T")
        } else if c == d.repetition {
            Some("R")
        } else if c == d.escape {
            Some("E")
        } else if c == '\r' {
            Some("X0D")
        } else if c == '\n' {
            Some("X0A")
        } else {
            None
        };
        match code {
            Some(code) => {
                out.push(d.escape);
                out.push_str(code);
                out.push(d.escape);
            }
            None => out.push(c),
        }
    }
    out
}

fn emit_field(out: &mut String, field: &Field, d: &Delimiters) {
    for (ri, rep) in field.0.iter().enumerate() {
        if ri > 0 {
            out.push(d.repetition);
        }
        for (ci, comp) in rep.0.iter().enumerate() {
            if ci > 0 {
                out.push(d.component);
            }
            for (si, leaf) in comp.0.iter().enumerate() {
                if si > 0 {
                    out.push(d.subcomponent);
                }
                out.push_str(&escape(leaf, d));
            }
        }
    }
}

/// Canonical ER7: every segment followed by CR, trailing empty fields and
/// components dropped.
pub fn emit_er7(message: &Message) -> String {
    let mut m = message.clone();
    m.canonicalize();
    let d = &m.delimiters;
    let mut out = String::new();
    for seg in &m.segments {
        out.push_str(&seg.id);
        if seg.id == "MSH" {
            out.push(d.field);
            out.push_str(&d.encoding_chars());
            for field in &seg.fields[2..] {
                out.push(d.field);
                emit_field(&mut out, field, d);
            }
        } else {
            for field in &seg.fields {
                out.push(d.field);
                emit_field(&mut out, field, d);
            }
        }
        out.push(SEGMENT_TERMINATOR);
    }
    out
}
