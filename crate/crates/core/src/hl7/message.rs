use std::fmt;

use super::Hl7Error;

/// The five delimiter characters declared by MSH-1 and MSH-2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delimiters {
    pub field: char,
    pub component: char,
    pub repetition: char,
    pub escape: char,
    pub subcomponent: char,
}

impl Default for Delimiters {
    fn default() -> Self {
        Delimiters {
            field: '|',
            component: '^',
            repetition: '~',
            escape: '\\',
            subcomponent: '&',
        }
    }
}

impl Delimiters {
    pub fn new(field: char, encoding: &str) -> Result<Delimiters, Hl7Error> {
        let chars: Vec<char> = encoding.chars().collect();
        if chars.len() != 4 {
            return Err(Hl7Error::BadEncodingChars(format!("{field}{encoding}")));
        }
        let d = Delimiters {
            field,
            component: chars[0],
            repetition: chars[1],
            escape: chars[2],
            subcomponent: chars[3],
        };
        let all = d.all();
        let distinct = all.iter().enumerate().all(|(i, c)| !all[..i].contains(c));
        let printable = all
            .iter()
            .all(|c| !c.is_alphanumeric() && !c.is_whitespace() && !c.is_control());
        if !distinct || !printable {
            return Err(Hl7Error::BadEncodingChars(format!("{field}{encoding}")));
        }
        Ok(d)
    }

    pub fn all(&self) -> [char; 5] {
        [self.field, self.component, self.repetition, self.escape, self.subcomponent]
    }

    /// MSH-2 text: component, repetition, escape, subcomponent.
    pub fn encoding_chars(&self) -> String {
        [self.component, self.repetition, self.escape, self.subcomponent]
            .iter()
            .collect()
    }

    pub fn is_delimiter(&self, c: char) -> bool {
        self.all().contains(&c)
    }
}

/// A component is a list of subcomponent leaves; never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component(pub Vec<String>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Repetition(pub Vec<Component>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Field(pub Vec<Repetition>);

impl Component {
    pub fn text(s: impl Into<String>) -> Component {
        Component(vec![s.into()])
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(String::is_empty)
    }

    pub fn value(&self) -> &str {
        self.0.first().map(String::as_str).unwrap_or("")
    }

    fn canonicalize(&mut self) {
        while self.0.len() > 1 && self.0.last().is_some_and(String::is_empty) {
            self.0.pop();
        }
        if self.0.is_empty() {
            self.0.push(String::new());
        }
    }
}

impl Repetition {
    pub fn from_components<S: AsRef<str>>(parts: &[S]) -> Repetition {
        Repetition(parts.iter().map(|p| Component::text(p.as_ref())).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(Component::is_empty)
    }

    /// Text of 1-based component `n`, or "" when absent.
    pub fn component(&self, n: usize) -> &str {
        n.checked_sub(1)
            .and_then(|i| self.0.get(i))
            .map(Component::value)
            .unwrap_or("")
    }

    fn canonicalize(&mut self) {
        for c in &mut self.0 {
            c.canonicalize();
        }
        while self.0.len() > 1 && self.0.last().is_some_and(Component::is_empty) {
            self.0.pop();
        }
        if self.0.is_empty() {
            self.0.push(Component::text(""));
        }
    }
}

impl Field {
    pub fn empty() -> Field {
        Field::text("")
    }

    pub fn text(s: impl Into<String>) -> Field {
        Field(vec![Repetition(vec![Component::text(s)])])
    }

    pub fn from_components<S: AsRef<str>>(parts: &[S]) -> Field {
        let mut f = Field(vec![Repetition::from_components(parts)]);
        f.canonicalize();
        f
    }

    pub fn from_repetitions(reps: Vec<Repetition>) -> Field {
        let mut f = Field(reps);
        f.canonicalize();
        f
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(Repetition::is_empty)
    }

    pub fn repetitions(&self) -> &[Repetition] {
        &self.0
    }

    /// Text of component `n` of the first repetition.
    pub fn component(&self, n: usize) -> &str {
        self.0.first().map(|r| r.component(n)).unwrap_or("")
    }

    pub fn value(&self) -> &str {
        self.component(1)
    }

    pub(crate) fn canonicalize(&mut self) {
        for r in &mut self.0 {
            r.canonicalize();
        }
        while self.0.len() > 1 && self.0.last().is_some_and(Repetition::is_empty) {
            self.0.pop();
        }
        if self.0.is_empty() {
            self.0.push(Repetition(vec![Component::text("")]));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub id: String,
    /// `fields[0]` is field 1. For MSH, fields 1 and 2 hold the raw separators.
    pub fields: Vec<Field>,
}

pub(crate) fn valid_segment_id(id: &str) -> bool {
    let b = id.as_bytes();
    b.len() == 3
        && b[0].is_ascii_uppercase()
        && b[1..].iter().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit())
}

impl Segment {
    pub fn new(id: &str, fields: Vec<Field>) -> Segment {
        let mut s = Segment {
            id: id.to_string(),
            fields,
        };
        s.canonicalize();
        s
    }

    pub fn msh(delimiters: &Delimiters, from_field_3: Vec<Field>) -> Segment {
        let mut fields = vec![
            Field::text(delimiters.field.to_string()),
            Field::text(delimiters.encoding_chars()),
        ];
        fields.extend(from_field_3);
        Segment::new("MSH", fields)
    }

    /// 1-based field access.
    pub fn field(&self, n: usize) -> Option<&Field> {
        n.checked_sub(1).and_then(|i| self.fields.get(i))
    }

    /// Text of component `comp` in the first repetition of field `n`.
    pub fn get(&self, n: usize, comp: usize) -> &str {
        self.field(n).map(|f| f.component(comp)).unwrap_or("")
    }

    /// Sets field `n`, padding with empty fields.
    pub fn set(&mut self, n: usize, field: Field) {
        assert!(n >= 1);
        while self.fields.len() < n {
            self.fields.push(Field::empty());
        }
        self.fields[n - 1] = field;
        self.canonicalize();
    }

    pub(crate) fn canonicalize(&mut self) {
        for f in &mut self.fields {
            f.canonicalize();
        }
        let floor = if self.id == "MSH" { 2 } else { 0 };
        while self.fields.len() > floor && self.fields.last().is_some_and(Field::is_empty) {
            self.fields.pop();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MessageKind {
    AdtA04,
    AdtA08,
    AdtA40,
    QbpQ22,
    RspK22,
    Ack,
}

impl MessageKind {
    /// MSH-9 components for this kind.
    pub fn msh9(&self) -> (&'static str, &'static str) {
        match self {
            MessageKind::AdtA04 => ("ADT", "A04"),
            MessageKind::AdtA08 => ("ADT", "A08"),
            MessageKind::AdtA40 => ("ADT", "A40"),
            MessageKind::QbpQ22 => ("QBP", "Q22"),
            MessageKind::RspK22 => ("RSP", "K22"),
            MessageKind::Ack => ("ACK", ""),
        }
    }

    pub fn from_msh9(code: &str, trigger: &str) -> Option<MessageKind> {
        match (code, trigger) {
            ("ADT", "A04") => Some(MessageKind::AdtA04),
            ("ADT", "A08") => Some(MessageKind::AdtA08),
            ("ADT", "A40") => Some(MessageKind::AdtA40),
            ("QBP", "Q22") => Some(MessageKind::QbpQ22),
            ("RSP", "K22") => Some(MessageKind::RspK22),
            ("ACK", _) => Some(MessageKind::Ack),
            _ => None,
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (code, trigger) = self.msh9();
        if trigger.is_empty() {
            f.write_str(code)
        } else {
            write!(f, "{code}^{trigger}")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub delimiters: Delimiters,
    pub segments: Vec<Segment>,
}

impl Message {
    /// Builds a message; the first segment must be an MSH built from the same
    /// delimiters.
    pub fn new(delimiters: Delimiters, segments: Vec<Segment>) -> Result<Message, Hl7Error> {
        match segments.first() {
            Some(s) if s.id == "MSH" => {}
            _ => return Err(Hl7Error::NoMshHeader),
        }
        let mut m = Message { delimiters, segments };
        m.canonicalize();
        Ok(m)
    }

    pub(crate) fn canonicalize(&mut self) {
        for s in &mut self.segments {
            s.canonicalize();
        }
        if let Some(msh) = self.segments.first_mut() {
            if msh.fields.len() < 2 {
                msh.fields.resize(2, Field::empty());
            }
            msh.fields[0] = Field::text(self.delimiters.field.to_string());
            msh.fields[1] = Field::text(self.delimiters.encoding_chars());
        }
    }

    pub fn msh(&self) -> &Segment {
        &self.segments[0]
    }

    pub fn segment(&self, id: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.id == id)
    }

    pub fn segments_named<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Segment> + 'a {
        self.segments.iter().filter(move |s| s.id == id)
    }

    /// MSH-10.
    pub fn control_id(&self) -> &str {
        self.msh().get(10, 1)
    }

    pub fn sending_application(&self) -> &str {
        self.msh().get(3, 1)
    }

    pub fn sending_facility(&self) -> &str {
        self.msh().get(4, 1)
    }

    /// MSH-9 as (message code, trigger event).
    pub fn message_type(&self) -> (&str, &str) {
        (self.msh().get(9, 1), self.msh().get(9, 2))
    }

    pub fn kind(&self) -> Result<MessageKind, Hl7Error> {
        let (code, trigger) = self.message_type();
        MessageKind::from_msh9(code, trigger)
            .ok_or_else(|| Hl7Error::UnsupportedMessageType(format!("{code}^{trigger}")))
    }
}

/// Characters no leaf may hold: C0 controls other than TAB, CR and LF, and
/// the two non-characters XML 1.0 excludes. Both encodings reject them.
pub(crate) fn is_forbidden_char(c: char) -> bool {
    matches!(c, '\u{0}'..='\u{8}' | '\u{B}' | '\u{C}' | '\u{E}'..='\u{1F}' | '\u{FFFE}' | '\u{FFFF}')
}

pub(crate) fn check_leaf(leaf: &str) -> Result<(), Hl7Error> {
    match leaf.chars().find(|c| is_forbidden_char(*c)) {
        Some(c) => Err(Hl7Error::ForbiddenCharacter(c as u32)),
        None => Ok(()),
    }
}
