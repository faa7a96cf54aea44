use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{lint, parse_manifest, Command, Flag, Kind, LintRule, Verb};

#[derive(Clone, Debug, Error, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseError {
    #[error("pipe detected")]
    PipeDetected,
    #[error("compound command detected: {0}")]
    CompoundDetected(String),
    #[error("command substitution detected")]
    SubstitutionDetected,
    #[error("flow control detected: {0}")]
    FlowControlDetected(String),
    #[error("function definition detected")]
    FunctionDetected,
    #[error("stdin redirection detected")]
    StdinDetected,
    #[error("malformed command: {0}")]
    Malformed(String),
}

impl ParseError {
    /// Confinement rule and catalog argument for this rejection.
    pub fn rule(&self) -> (LintRule, Option<&str>) {
        match self {
            ParseError::PipeDetected => (LintRule::Pipe, None),
            ParseError::CompoundDetected(op) => (LintRule::Compound, Some(op)),
            ParseError::SubstitutionDetected => (LintRule::Substitution, None),
            ParseError::FlowControlDetected(kw) => (LintRule::FlowControl, Some(kw)),
            ParseError::FunctionDetected => (LintRule::Function, None),
            ParseError::StdinDetected => (LintRule::StdinRedirect, None),
            ParseError::Malformed(detail) => (LintRule::Malformed, Some(detail)),
        }
    }

    /// Catalogued rejection message.
    pub fn reason(&self) -> String {
        let (rule, arg) = self.rule();
        lint::message(rule, arg)
    }
}

const FLOW_KEYWORDS: &[&str] = &["if", "for", "while", "until", "case", "select"];

/// Flags that consume the following token as their value when written
/// without `=`.
const VALUED_FLAGS: &[&str] = &[
    "-n",
    "--namespace",
    "-f",
    "--filename",
    "-p",
    "--patch",
    "--type",
    "--replicas",
    "-o",
    "--output",
    "-l",
    "--selector",
    "-c",
    "--container",
    "--image",
    "--port",
    "--tail",
    "--grace-period",
    "--timeout",
];

#[derive(Debug, Default)]
struct Scan {
    words: Vec<String>,
    /// Index into `words` where each shell segment starts.
    segment_starts: Vec<usize>,
    pipe: bool,
    compound: Option<String>,
    substitution: bool,
    stdin: bool,
    heredoc: Option<String>,
    other: Option<String>,
}

/// Quote-aware scan of one line: splits words and records shell operators
/// that appear outside quotes.
fn scan(line: &str) -> Result<Scan, ParseError> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Scan { segment_starts: vec![0], ..Default::default() };
    let mut word = String::new();
    let mut in_word = false;
    let mut i = 0;

    let flush = |out: &mut Scan, word: &mut String, in_word: &mut bool| {
        if *in_word {
            out.words.push(std::mem::take(word));
            *in_word = false;
        }
    };

    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        match c {
            '\'' => {
                in_word = true;
                i += 1;
                while i < chars.len() && chars[i] != '\'' {
                    word.push(chars[i]);
                    i += 1;
                }
                if i == chars.len() {
                    return Err(ParseError::Malformed("unterminated quote".into()));
                }
            }
            '"' => {
                in_word = true;
                i += 1;
                while i < chars.len() && chars[i] != '"' {
                    if chars[i] == '\\' && i + 1 < chars.len() {
                        i += 1;
                    } else if chars[i] == '`' || (chars[i] == '$' && chars.get(i + 1) == Some(&'(')) {
                        out.substitution = true;
                    }
                    word.push(chars[i]);
                    i += 1;
                }
                if i == chars.len() {
                    return Err(ParseError::Malformed("unterminated quote".into()));
                }
            }
            '\\' if next.is_some() => {
                in_word = true;
                word.push(next.unwrap());
                i += 1;
            }
            '`' => out.substitution = true,
            '$' if next == Some('(') => out.substitution = true,
            c if c.is_whitespace() => flush(&mut out, &mut word, &mut in_word),
            '&' | '|' | ';' => {
                flush(&mut out, &mut word, &mut in_word);
                let op = match (c, next) {
                    ('&', Some('&')) => "&&",
                    ('|', Some('|')) => "||",
                    ('&', _) => "&",
                    ('|', _) => "|",
                    _ => ";",
                };
                if op == "|" {
                    out.pipe = true;
                } else {
                    out.compound.get_or_insert_with(|| op.to_owned());
                }
                i += op.len() - 1;
                out.segment_starts.push(out.words.len());
            }
            '<' if next == Some('<') => {
                flush(&mut out, &mut word, &mut in_word);
                let rest: String = chars[i + 2..].iter().collect();
                let marker = rest.trim().trim_start_matches('-').trim_matches(|c| c == '\'' || c == '"');
                if marker.is_empty() || marker.contains(char::is_whitespace) {
                    return Err(ParseError::Malformed("heredoc marker must end the first line".into()));
                }
                out.heredoc = Some(marker.to_owned());
                break;
            }
            '<' => out.stdin = true,
            '>' => {
                out.other.get_or_insert_with(|| "output redirection is not supported".into());
            }
            '(' | ')' => {
                out.other.get_or_insert_with(|| "subshells are not supported".into());
                flush(&mut out, &mut word, &mut in_word);
                out.words.push(c.to_string());
            }
            _ => {
                in_word = true;
                word.push(c);
            }
        }
        i += 1;
    }
    flush(&mut out, &mut word, &mut in_word);
    Ok(out)
}

fn is_function_definition(line: &str) -> bool {
    let t = line.trim_start();
    if let Some(rest) = t.strip_prefix("function") {
        return rest.starts_with(char::is_whitespace);
    }
    let ident_end = t.find(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-')).unwrap_or(t.len());
    ident_end > 0 && t[ident_end..].trim_start().starts_with("()")
}

/// Parses a single kubectl command.
///
/// Shell composition (pipes, `&&`/`||`/`;`, substitution, flow control,
/// function definitions, stdin redirection) is rejected before the verb is
/// looked at. A trailing `<<EOF` heredoc is read as an inline manifest.
pub fn parse(text: &str) -> Result<Command, ParseError> {
    let mut lines = text.trim_start().lines();
    let first = lines.next().unwrap_or("");
    let rest: Vec<&str> = lines.collect();

    if is_function_definition(first) {
        return Err(ParseError::FunctionDetected);
    }
    let s = scan(first)?;

    for &start in &s.segment_starts {
        if let Some(word) = s.words.get(start) {
            if FLOW_KEYWORDS.contains(&word.as_str()) {
                return Err(ParseError::FlowControlDetected(word.clone()));
            }
        }
    }
    if s.substitution {
        return Err(ParseError::SubstitutionDetected);
    }
    if let Some(op) = s.compound {
        return Err(ParseError::CompoundDetected(op));
    }
    if s.pipe {
        return Err(ParseError::PipeDetected);
    }
    if s.stdin {
        return Err(ParseError::StdinDetected);
    }
    if let Some(detail) = s.other {
        return Err(ParseError::Malformed(detail));
    }

    let body = match &s.heredoc {
        Some(marker) => {
            let end = rest
                .iter()
                .position(|l| l.trim() == marker)
                .ok_or_else(|| ParseError::Malformed(format!("heredoc is not terminated by {marker}")))?;
            if rest[end + 1..].iter().any(|l| !l.trim().is_empty()) {
                return Err(ParseError::CompoundDetected("newline".into()));
            }
            Some(rest[..end].join("\n") + "\n")
        }
        None => {
            if rest.iter().any(|l| !l.trim().is_empty()) {
                return Err(ParseError::CompoundDetected("newline".into()));
            }
            None
        }
    };

    let mut cmd = build(&s.words)?;
    if let Some(body) = body {
        if !matches!(cmd.verb, Verb::Apply | Verb::Create) {
            return Err(ParseError::Malformed("a heredoc manifest is only accepted by apply".into()));
        }
        let resource = parse_manifest(&body, cmd.namespace.as_deref())
            .map_err(|e| ParseError::Malformed(format!("invalid manifest: {e}")))?;
        cmd.kind = Some(resource.kind());
        cmd.name = Some(resource.name().to_owned());
        if cmd.namespace.is_none() {
            cmd.namespace = resource.namespace().filter(|ns| !ns.is_empty()).map(str::to_owned);
        }
        cmd.manifest = Some(resource);
    } else if cmd.verb == Verb::Apply && cmd.flag(&["-f", "--filename"]).is_none() {
        return Err(ParseError::Malformed("error: must specify one of -f and -k".into()));
    }
    cmd.source = text.trim().to_owned();
    Ok(cmd)
}

fn build(words: &[String]) -> Result<Command, ParseError> {
    match words.first().map(String::as_str) {
        Some("kubectl") => {}
        Some(other) => return Err(ParseError::Malformed(format!("only kubectl commands are supported, got {other:?}"))),
        None => return Err(ParseError::Malformed("empty command".into())),
    }
    let verb_word = words.get(1).ok_or_else(|| ParseError::Malformed("missing kubectl subcommand".into()))?;
    let (verb, mut i) = if verb_word == "rollout" {
        match words.get(2).map(String::as_str) {
            Some("restart") => (Verb::RolloutRestart, 3),
            other => return Err(ParseError::Malformed(format!("unsupported rollout subcommand {:?}", other.unwrap_or("")))),
        }
    } else {
        let verb = Verb::from_word(verb_word)
            .ok_or_else(|| ParseError::Malformed(format!("unknown command {verb_word:?} for \"kubectl\"")))?;
        (verb, 2)
    };

    let mut flags = Vec::new();
    let mut positionals = Vec::new();
    let mut args = Vec::new();
    let mut namespace = None;
    while i < words.len() {
        let w = &words[i];
        if w == "--" {
            args.extend(words[i + 1..].iter().cloned());
            break;
        }
        if w.starts_with('-') && w.len() > 1 {
            let (name, mut value) = match w.split_once('=') {
                Some((n, v)) => (n.to_owned(), Some(v.to_owned())),
                None => (w.clone(), None),
            };
            if value.is_none() && VALUED_FLAGS.contains(&name.as_str()) {
                i += 1;
                value =
                    Some(words.get(i).cloned().ok_or_else(|| ParseError::Malformed(format!("flag needs an argument: {name}")))?);
            }
            if name == "-n" || name == "--namespace" {
                namespace = value;
            } else {
                flags.push(Flag { name, value });
            }
        } else {
            positionals.push(w.clone());
        }
        i += 1;
    }

    let mut cmd = Command {
        verb,
        kind: None,
        kind_text: None,
        name: None,
        namespace,
        flags,
        args: Vec::new(),
        manifest: None,
        source: String::new(),
    };

    let mut pos = positionals.into_iter();
    match verb {
        Verb::Cordon | Verb::Uncordon => {
            cmd.kind = Some(Kind::Node);
            if let Some(p) = pos.next() {
                let name = p.strip_prefix("node/").unwrap_or(&p).to_owned();
                cmd.name = Some(name);
            }
        }
        Verb::Logs | Verb::Exec | Verb::Attach | Verb::Debug => {
            if let Some(p) = pos.next() {
                match p.split_once('/') {
                    Some((k, n)) => {
                        cmd.kind = Some(Kind::from_word(k));
                        cmd.kind_text = Some(k.to_owned());
                        cmd.name = Some(n.to_owned());
                    }
                    None => {
                        cmd.kind = Some(Kind::Pod);
                        cmd.name = Some(p);
                    }
                }
            }
        }
        _ => {
            if let Some(p) = pos.next() {
                match p.split_once('/') {
                    Some((k, n)) => {
                        cmd.kind = Some(Kind::from_word(k));
                        cmd.kind_text = Some(k.to_owned());
                        cmd.name = Some(n.to_owned());
                    }
                    None => {
                        cmd.kind = Some(Kind::from_word(&p));
                        cmd.kind_text = Some(p);
                        cmd.name = pos.next();
                    }
                }
            }
        }
    }
    cmd.args = pos.chain(args).collect();
    Ok(cmd)
}
