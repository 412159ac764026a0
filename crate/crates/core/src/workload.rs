//! Workload scripts: the user side of a run, one step per line.
//!
//! ```text
//! # comment
//! event inc click {"clientX":10,"clientY":20}
//! timer-advance 250
//! create list
//! set name value "hello"
//! select text 3 5
//! promote
//! ```
//!
//! See `workloads.md` for the full grammar.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use thiserror::Error;

use crate::pages::demo;
use crate::protocol::Payload;

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    /// A user event dispatched on an element; handlers bubble to the root.
    Event { element_id: String, event_type: String, payload: Payload },
    /// Let virtual time pass, firing due timers on the leader.
    TimerAdvance(u64),
    /// Ask the page to create an element under `parent`.
    Create { parent: String },
    /// User edit of a stateful element.
    Set { element_id: String, field: String, value: Value },
    /// User text selection.
    Select { element_id: String, start: u64, span: u64 },
    /// Press the promote button.
    Promote,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Event { element_id, event_type, payload } => {
                let doc = serde_json::to_string(payload).map_err(|_| fmt::Error)?;
                write!(f, "event {element_id} {event_type} {doc}")
            }
            Step::TimerAdvance(ms) => write!(f, "timer-advance {ms}"),
            Step::Create { parent } => write!(f, "create {parent}"),
            Step::Set { element_id, field, value } => write!(f, "set {element_id} {field} {value}"),
            Step::Select { element_id, start, span } => write!(f, "select {element_id} {start} {span}"),
            Step::Promote => f.write_str("promote"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Workload {
    pub steps: Vec<Step>,
}

impl Workload {
    pub fn new(steps: Vec<Step>) -> Self {
        Workload { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn parse(text: &str) -> Result<Workload, ParseError> {
        let mut steps = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            steps.push(parse_step(line).map_err(|reason| ParseError { line: i + 1, reason })?);
        }
        Ok(Workload { steps })
    }

    /// Index of the first `promote` step, if any.
    pub fn promote_index(&self) -> Option<usize> {
        self.steps.iter().position(|s| *s == Step::Promote)
    }

    /// Virtual time covered by the `timer-advance` steps.
    pub fn duration_ms(&self) -> u64 {
        self.steps
            .iter()
            .map(|s| match s {
                Step::TimerAdvance(ms) => *ms,
                _ => 0,
            })
            .sum()
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for step in &self.steps {
            writeln!(f, "{step}")?;
        }
        Ok(())
    }
}

fn parse_step(line: &str) -> Result<Step, String> {
    let (verb, rest) = split_word(line);
    match verb {
        "event" => {
            let (element_id, rest) = word(rest, "element id")?;
            let (event_type, rest) = word(rest, "event type")?;
            let payload = if rest.is_empty() {
                Payload::new()
            } else {
                match serde_json::from_str::<Value>(rest) {
                    Ok(Value::Object(map)) => map,
                    Ok(_) => return Err("event payload must be a JSON object".into()),
                    Err(e) => return Err(format!("bad event payload: {e}")),
                }
            };
            Ok(Step::Event { element_id: element_id.into(), event_type: event_type.into(), payload })
        }
        "timer-advance" => {
            let (ms, rest) = word(rest, "milliseconds")?;
            no_more(rest)?;
            Ok(Step::TimerAdvance(number(ms, "milliseconds")?))
        }
        "create" => {
            let (parent, rest) = word(rest, "parent id")?;
            no_more(rest)?;
            Ok(Step::Create { parent: parent.into() })
        }
        "set" => {
            let (element_id, rest) = word(rest, "element id")?;
            let (field, rest) = word(rest, "field")?;
            if rest.is_empty() {
                return Err("missing value".into());
            }
            let value = serde_json::from_str(rest).map_err(|e| format!("bad value: {e}"))?;
            Ok(Step::Set { element_id: element_id.into(), field: field.into(), value })
        }
        "select" => {
            let (element_id, rest) = word(rest, "element id")?;
            let (start, rest) = word(rest, "start")?;
            let (span, rest) = word(rest, "span")?;
            no_more(rest)?;
            Ok(Step::Select {
                element_id: element_id.into(),
                start: number(start, "start")?,
                span: number(span, "span")?,
            })
        }
        "promote" => {
            no_more(rest)?;
            Ok(Step::Promote)
        }
        "clear-timer" | "clearTimeout" | "clearInterval" => Err("clearing timers is not supported".into()),
        other => Err(format!("unknown step {other:?}")),
    }
}

fn split_word(s: &str) -> (&str, &str) {
    match s.find(char::is_whitespace) {
        Some(i) => (&s[..i], s[i..].trim_start()),
        None => (s, ""),
    }
}

fn word<'a>(s: &'a str, what: &str) -> Result<(&'a str, &'a str), String> {
    let (w, rest) = split_word(s);
    if w.is_empty() {
        Err(format!("missing {what}"))
    } else {
        Ok((w, rest))
    }
}

fn no_more(rest: &str) -> Result<(), String> {
    if rest.is_empty() {
        Ok(())
    } else {
        Err(format!("unexpected trailing text {rest:?}"))
    }
}

fn number(s: &str, what: &str) -> Result<u64, String> {
    s.parse().map_err(|_| format!("{what} must be a non-negative integer, got {s:?}"))
}

/// Knobs for [`generate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub steps: usize,
    /// Insert a `promote` step at the midpoint.
    pub promote_midway: bool,
    /// Upper bound on elements created through `create` steps.
    pub max_created: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { steps: 600, promote_midway: false, max_created: 24 }
    }
}

/// A random workload for the demo page, reproducible from `seed`.
///
/// The step mix is stationary, so record count, log bytes and virtual
/// duration all grow linearly with `steps`.
pub fn generate(seed: u64, config: GeneratorConfig) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(config.steps + 1);
    let mut created: Vec<String> = Vec::new();
    let mut next_sid = demo::FIRST_DYNAMIC_SID;
    let mut checked = [false; 3];
    for i in 0..config.steps {
        if config.promote_midway && i == config.steps / 2 {
            steps.push(Step::Promote);
        }
        let roll = rng.random_range(0..100u32);
        let step = match roll {
            0..=29 => {
                let target = demo::BUTTONS[rng.random_range(0..demo::BUTTONS.len())];
                click(target, &mut rng)
            }
            30..=34 => click(demo::PANEL, &mut rng),
            35..=41 if !created.is_empty() => {
                let target = created[rng.random_range(0..created.len())].clone();
                click(&target, &mut rng)
            }
            35..=44 if created.len() < config.max_created => {
                created.push(format!("sid-{next_sid}"));
                next_sid += 1;
                let parent = if rng.random_bool(0.5) { demo::LIST } else { demo::PANEL };
                Step::Create { parent: parent.into() }
            }
            45..=54 => {
                let len = rng.random_range(0..12);
                let text: String = (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
                Step::Set { element_id: demo::NAME.into(), field: "value".into(), value: Value::String(text) }
            }
            55..=62 => {
                let which = rng.random_range(0..3);
                let (id, value) = match which {
                    0 => (demo::AGREE, !checked[0]),
                    1 => (demo::RADIO_A, true),
                    _ => (demo::RADIO_B, true),
                };
                checked[which] = value;
                Step::Set { element_id: id.into(), field: "checked".into(), value: Value::Bool(value) }
            }
            63..=69 => {
                let start = rng.random_range(0..40);
                Step::Select { element_id: demo::TEXT.into(), start, span: rng.random_range(0..20) }
            }
            70..=74 => Step::Event {
                element_id: demo::NAME.into(),
                event_type: "keyup".into(),
                payload: key_payload(&mut rng),
            },
            _ => Step::TimerAdvance(rng.random_range(20..=300)),
        };
        steps.push(step);
    }
    Workload { steps }
}

fn click(target: &str, rng: &mut ChaCha8Rng) -> Step {
    let mut payload = Payload::new();
    payload.insert("clientX".into(), Value::from(rng.random_range(0..1280u32)));
    payload.insert("clientY".into(), Value::from(rng.random_range(0..800u32)));
    payload.insert("button".into(), Value::from(0));
    Step::Event { element_id: target.into(), event_type: "click".into(), payload }
}

fn key_payload(rng: &mut ChaCha8Rng) -> Payload {
    let mut payload = Payload::new();
    let key = rng.random_range(b'a'..=b'z') as char;
    payload.insert("key".into(), Value::String(key.to_string()));
    payload.insert("shiftKey".into(), Value::Bool(rng.random_bool(0.1)));
    payload
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_step_kind() {
        let text = "\
# demo
event inc click {\"clientX\":10,\"clientY\":20}
event roll click
timer-advance 250

create list
set name value \"hello world\"
set agree checked true
select text 3 5
promote
";
        let w = Workload::parse(text).unwrap();
        assert_eq!(w.len(), 8);
        assert_eq!(w.steps[2], Step::TimerAdvance(250));
        assert_eq!(
            w.steps[4],
            Step::Set { element_id: "name".into(), field: "value".into(), value: Value::String("hello world".into()) }
        );
        assert_eq!(w.promote_index(), Some(7));
        assert_eq!(w.duration_ms(), 250);
    }

    #[test]
    fn errors_name_the_line() {
        let err = Workload::parse("timer-advance 5\nfrobnicate x\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(Workload::parse("timer-advance -3").is_err());
        assert!(Workload::parse("event a click [1]").is_err());
        assert!(Workload::parse("promote now").is_err());
        assert!(Workload::parse("set name value").is_err());
        assert!(Workload::parse("clearTimeout abc").is_err());
    }

    #[test]
    fn format_then_parse_is_identity() {
        let w = generate(11, GeneratorConfig { steps: 300, promote_midway: true, ..Default::default() });
        assert_eq!(Workload::parse(&w.to_string()).unwrap(), w);
    }

    #[test]
    fn generator_is_seeded() {
        let c = GeneratorConfig::default();
        assert_eq!(generate(5, c), generate(5, c));
        assert_ne!(generate(5, c), generate(6, c));
        let w = generate(5, GeneratorConfig { promote_midway: true, ..c });
        assert_eq!(w.promote_index(), Some(c.steps / 2));
    }
}
