//! XML encoding of the same segment tree.
//!
//! Elements are named by segment code and then by dotted position: a field is
//! `PID.3`, its components `PID.3.1`, their subcomponents `PID.3.1.1`. A
//! repeated field appears as consecutive elements with the same name. Empty
//! positions are omitted and recovered from the positional names.

use quick_xml::events::Event;
use quick_xml::Reader;

use super::message::{check_leaf, valid_segment_id, Component, Delimiters, Field, Message, Repetition, Segment};
use super::Hl7Error;

pub const ROOT_ELEMENT: &str = "HL7Message";

fn escape_text(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            c if c.is_control() => out.push_str(&format!("&#x{:X};", c as u32)),
            c => out.push(c),
        }
    }
}

fn leaf_element(out: &mut String, indent: usize, name: &str, text: &str) {
    out.push_str(&"  ".repeat(indent));
    if text.is_empty() {
        out.push_str(&format!("<{name}/>\n"));
    } else {
        out.push_str(&format!("<{name}>"));
        escape_text(text, out);
        out.push_str(&format!("</{name}>\n"));
    }
}

fn open(out: &mut String, indent: usize, name: &str) {
    out.push_str(&"  ".repeat(indent));
    out.push_str(&format!("<{name}>\n"));
}

fn close(out: &mut String, indent: usize, name: &str) {
    out.push_str(&"  ".repeat(indent));
    out.push_str(&format!("</{name}>\n"));
}

fn emit_component(out: &mut String, indent: usize, name: &str, comp: &Component) {
    if comp.0.len() == 1 {
        leaf_element(out, indent, name, &comp.0[0]);
        return;
    }
    open(out, indent, name);
    for (si, sub) in comp.0.iter().enumerate() {
        if !sub.is_empty() {
            leaf_element(out, indent + 1, &format!("{name}.{}", si + 1), sub);
        }
    }
    close(out, indent, name);
}

fn emit_repetition(out: &mut String, indent: usize, name: &str, rep: &Repetition) {
    if rep.0.len() == 1 && rep.0[0].0.len() == 1 {
        leaf_element(out, indent, name, &rep.0[0].0[0]);
        return;
    }
    open(out, indent, name);
    for (ci, comp) in rep.0.iter().enumerate() {
        if !comp.is_empty() {
            emit_component(out, indent + 1, &format!("{name}.{}", ci + 1), comp);
        }
    }
    close(out, indent, name);
}

pub fn emit_xml(message: &Message) -> String {
    let mut m = message.clone();
    m.canonicalize();
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    open(&mut out, 0, ROOT_ELEMENT);
    for seg in &m.segments {
        open(&mut out, 1, &seg.id);
        for (fi, field) in seg.fields.iter().enumerate() {
            let name = format!("{}.{}", seg.id, fi + 1);
            if seg.id == "MSH" && fi < 2 {
                leaf_element(&mut out, 2, &name, field.value());
                continue;
            }
            if field.is_empty() {
                continue;
            }
            for rep in field.repetitions() {
                emit_repetition(&mut out, 2, &name, rep);
            }
        }
        close(&mut out, 1, &seg.id);
    }
    close(&mut out, 0, ROOT_ELEMENT);
    out
}

/// Minimal element tree produced from the event stream.
#[derive(Debug, Default)]
struct Node {
    name: String,
    text: String,
    children: Vec<Node>,
}

fn malformed(msg: impl Into<String>) -> Hl7Error {
    Hl7Error::MalformedXml(msg.into())
}

fn read_tree(bytes: &[u8]) -> Result<Node, Hl7Error> {
    let text = std::str::from_utf8(bytes).map_err(|_| malformed("document is not UTF-8"))?;
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(false);
    let mut stack: Vec<Node> = Vec::new();
    let mut root: Option<Node> = None;
    loop {
        let event = reader.read_event().map_err(|e| malformed(e.to_string()))?;
        match event {
            Event::Start(start) => {
                if root.is_some() {
                    return Err(malformed("content after the root element"));
                }
                let name = std::str::from_utf8(start.name().as_ref())
                    .map_err(|_| malformed("element name is not UTF-8"))?
                    .to_string();
                stack.push(Node {
                    name,
                    ..Node::default()
                });
            }
            Event::Empty(start) => {
                if root.is_some() {
                    return Err(malformed("content after the root element"));
                }
                let name = std::str::from_utf8(start.name().as_ref())
                    .map_err(|_| malformed("element name is not UTF-8"))?
                    .to_string();
                let node = Node {
                    name,
                    ..Node::default()
                };
                match stack.last_mut() {
                    Some(parent) => parent.children.push(node),
                    None => root = Some(node),
                }
            }
            Event::End(_) => {
                let node = stack.pop().ok_or_else(|| malformed("unbalanced end tag"))?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(node),
                    None => root = Some(node),
                }
            }
            Event::Text(t) => {
                let s = t.unescape().map_err(|e| malformed(e.to_string()))?;
                check_leaf(&s)?;
                match stack.last_mut() {
                    Some(node) => node.text.push_str(&s),
                    None if s.trim().is_empty() => {}
                    None => return Err(malformed("text outside the root element")),
                }
            }
            Event::CData(c) => {
                let s = std::str::from_utf8(&c).map_err(|_| malformed("CDATA is not UTF-8"))?;
                check_leaf(s)?;
                match stack.last_mut() {
                    Some(node) => node.text.push_str(s),
                    None => return Err(malformed("CDATA outside the root element")),
                }
            }
            Event::Eof => break,
            Event::Decl(_) | Event::Comment(_) | Event::PI(_) | Event::DocType(_) => {}
        }
    }
    if !stack.is_empty() {
        return Err(malformed("document ends inside an element"));
    }
    root.ok_or_else(|| malformed("no root element"))
}

/// Splits `PID.3.1` into its numeric positions under `prefix` (`PID`).
fn positions(name: &str, prefix: &str, depth: usize) -> Option<Vec<usize>> {
    let rest = name.strip_prefix(prefix)?.strip_prefix('.')?;
    let parts: Vec<usize> = rest
        .split('.')
        .map(|p| {
            if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) || p.starts_with('0') {
                None
            } else {
                p.parse().ok()
            }
        })
        .collect::<Option<_>>()?;
    (parts.len() == depth).then_some(parts)
}

fn element_only(node: &Node) -> Result<(), Hl7Error> {
    if !node.children.is_empty() && !node.text.trim().is_empty() {
        return Err(malformed(format!("{} mixes text and child elements", node.name)));
    }
    Ok(())
}

fn indexed_children<T>(
    node: &Node,
    build: impl Fn(&Node) -> Result<(usize, T), Hl7Error>,
    empty: impl Fn() -> T,
) -> Result<Vec<T>, Hl7Error> {
    let mut out: Vec<T> = Vec::new();
    for child in &node.children {
        let (pos, value) = build(child)?;
        if pos <= out.len() {
            return Err(Hl7Error::UnknownSegmentElement(format!(
                "{} out of order",
                child.name
            )));
        }
        while out.len() + 1 < pos {
            out.push(empty());
        }
        out.push(value);
    }
    Ok(out)
}

fn read_component(node: &Node) -> Result<Component, Hl7Error> {
    element_only(node)?;
    if node.children.is_empty() {
        return Ok(Component(vec![node.text.clone()]));
    }
    let subs = indexed_children(
        node,
        |child| {
            let pos = positions(&child.name, &node.name, 1)
                .ok_or_else(|| Hl7Error::UnknownSegmentElement(child.name.clone()))?[0];
            if !child.children.is_empty() {
                return Err(malformed(format!("{} nests below subcomponent level", child.name)));
            }
            Ok((pos, child.text.clone()))
        },
        String::new,
    )?;
    Ok(Component(subs))
}

fn read_repetition(node: &Node) -> Result<Repetition, Hl7Error> {
    element_only(node)?;
    if node.children.is_empty() {
        return Ok(Repetition(vec![Component(vec![node.text.clone()])]));
    }
    let comps = indexed_children(
        node,
        |child| {
            let pos = positions(&child.name, &node.name, 1)
                .ok_or_else(|| Hl7Error::UnknownSegmentElement(child.name.clone()))?[0];
            Ok((pos, read_component(child)?))
        },
        || Component::text(""),
    )?;
    Ok(Repetition(comps))
}

fn read_segment(node: &Node) -> Result<(Segment, Option<(String, String)>), Hl7Error> {
    if !valid_segment_id(&node.name) {
        return Err(Hl7Error::UnknownSegmentElement(node.name.clone()));
    }
    element_only(node)?;
    let is_msh = node.name == "MSH";
    let mut fields: Vec<Field> = Vec::new();
    let mut separators = (None, None);
    let mut last_pos = 0;
    for child in &node.children {
        let pos = positions(&child.name, &node.name, 1)
            .ok_or_else(|| Hl7Error::UnknownSegmentElement(child.name.clone()))?[0];
        if pos < last_pos || (pos == last_pos && is_msh && pos <= 2) {
            return Err(Hl7Error::UnknownSegmentElement(format!("{} out of order", child.name)));
        }
        if is_msh && pos <= 2 {
            if !child.children.is_empty() {
                return Err(malformed(format!("{} must be text", child.name)));
            }
            if pos == 1 {
                separators.0 = Some(child.text.clone());
            } else {
                separators.1 = Some(child.text.clone());
            }
            while fields.len() < pos {
                fields.push(Field::empty());
            }
            fields[pos - 1] = Field::text(child.text.clone());
            last_pos = pos;
            continue;
        }
        let rep = read_repetition(child)?;
        if pos == last_pos {
            fields[pos - 1].0.push(rep);
        } else {
            while fields.len() + 1 < pos {
                fields.push(Field::empty());
            }
            fields.push(Field(vec![rep]));
        }
        last_pos = pos;
    }
    let seps = if is_msh {
        match separators {
            (Some(f), Some(e)) => Some((f, e)),
            _ => return Err(Hl7Error::BadEncodingChars("MSH.1/MSH.2 missing".into())),
        }
    } else {
        None
    };
    Ok((
        Segment {
            id: node.name.clone(),
            fields,
        },
        seps,
    ))
}

pub fn parse_xml(bytes: &[u8]) -> Result<Message, Hl7Error> {
    let root = read_tree(bytes)?;
    if root.name != ROOT_ELEMENT {
        return Err(Hl7Error::UnknownSegmentElement(root.name));
    }
    element_only(&root)?;
    let mut segments = Vec::new();
    let mut delimiters = None;
    for (i, child) in root.children.iter().enumerate() {
        let (segment, seps) = read_segment(child)?;
        match (i, seps) {
            (0, Some((field, encoding))) => {
                let mut chars = field.chars();
                let fs = match (chars.next(), chars.next()) {
                    (Some(c), None) => c,
                    _ => return Err(Hl7Error::BadEncodingChars(field)),
                };
                delimiters = Some(Delimiters::new(fs, &encoding)?);
            }
            (0, None) => return Err(Hl7Error::NoMshHeader),
            (_, Some(_)) => return Err(Hl7Error::BadSegmentId("MSH".into())),
            (_, None) => {}
        }
        segments.push(segment);
    }
    let delimiters = delimiters.ok_or(Hl7Error::NoMshHeader)?;
    let mut message = Message { delimiters, segments };
    message.canonicalize();
    Ok(message)
}
