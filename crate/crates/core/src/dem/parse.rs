use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;

use super::{DetectorErrorModel, ErrorMechanism};
use crate::error::{Error, Result};

/// Non-fatal findings reported while loading a model.
#[derive(Clone, Debug, PartialEq)]
pub enum ParseWarning {
    ZeroProbability { line: usize },
    EmptyMechanism { line: usize },
    DetectorGap { detector: usize },
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseWarning::ZeroProbability { line } => {
                write!(f, "line {line}: zero-probability mechanism dropped")
            }
            ParseWarning::EmptyMechanism { line } => {
                write!(f, "line {line}: mechanism touches no detector or observable; dropped")
            }
            ParseWarning::DetectorGap { detector } => {
                write!(f, "detector D{detector} is never declared or referenced")
            }
        }
    }
}

#[derive(Debug)]
enum Target {
    Detector(usize),
    Logical,
}

#[derive(Debug)]
enum Instr {
    Error {
        line: usize,
        prob: f64,
        targets: Vec<Target>,
    },
    Detector {
        coords: Vec<f64>,
        targets: Vec<Target>,
    },
    Shift {
        coords: Vec<f64>,
        amount: usize,
    },
    Logical,
    Repeat {
        count: usize,
        body: Vec<Instr>,
    },
}

fn syntax(line: usize, msg: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        msg: msg.into(),
    }
}

/// Splits `name(args) rest` into its parts; tags in square brackets are ignored.
fn split_head(line_no: usize, text: &str) -> Result<(String, Vec<f64>, Vec<String>)> {
    let name_end = text
        .find(|c: char| c == '(' || c == '[' || c.is_whitespace())
        .unwrap_or(text.len());
    let name = text[..name_end].to_ascii_lowercase();
    let mut rest = &text[name_end..];
    if rest.starts_with('[') {
        let close = rest
            .find(']')
            .ok_or_else(|| syntax(line_no, "unterminated tag"))?;
        rest = &rest[close + 1..];
    }
    let mut args = Vec::new();
    if rest.starts_with('(') {
        let close = rest
            .find(')')
            .ok_or_else(|| syntax(line_no, "unterminated argument list"))?;
        for a in rest[1..close].split(',') {
            let a = a.trim();
            if a.is_empty() {
                continue;
            }
            let v: f64 = a
                .parse()
                .map_err(|_| syntax(line_no, format!("bad numeric argument '{a}'")))?;
            args.push(v);
        }
        rest = &rest[close + 1..];
    }
    let tokens = rest.split_whitespace().map(str::to_string).collect();
    Ok((name, args, tokens))
}

fn parse_targets(line_no: usize, tokens: &[String]) -> Result<Vec<Target>> {
    let mut out = Vec::with_capacity(tokens.len());
    for t in tokens {
        if t == "^" {
            continue;
        }
        let (kind, num) = t.split_at(1);
        let k: usize = num
            .parse()
            .map_err(|_| syntax(line_no, format!("bad target '{t}'")))?;
        match kind {
            "D" => out.push(Target::Detector(k)),
            "L" => {
                if k != 0 {
                    return Err(Error::UnsupportedObservable(k));
                }
                out.push(Target::Logical)
            }
            _ => return Err(syntax(line_no, format!("bad target '{t}'"))),
        }
    }
    Ok(out)
}

struct Lexer<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl Lexer<'_> {
    fn block(&mut self, nested: Option<usize>) -> Result<Vec<Instr>> {
        let mut out = Vec::new();
        while self.pos < self.lines.len() {
            let (line_no, text) = self.lines[self.pos];
            self.pos += 1;
            if text == "}" {
                return match nested {
                    Some(_) => Ok(out),
                    None => Err(syntax(line_no, "unmatched '}'")),
                };
            }
            let (name, args, tokens) = split_head(line_no, text)?;
            match name.as_str() {
                "error" => {
                    let [prob] = args[..] else {
                        return Err(syntax(line_no, "error takes exactly one probability"));
                    };
                    out.push(Instr::Error {
                        line: line_no,
                        prob,
                        targets: parse_targets(line_no, &tokens)?,
                    });
                }
                "detector" => out.push(Instr::Detector {
                    coords: args,
                    targets: parse_targets(line_no, &tokens)?,
                }),
                "shift_detectors" => {
                    let amount = match tokens.as_slice() {
                        [] => 0,
                        [k] => k
                            .parse()
                            .map_err(|_| syntax(line_no, format!("bad shift '{k}'")))?,
                        _ => return Err(syntax(line_no, "shift_detectors takes one count")),
                    };
                    out.push(Instr::Shift {
                        coords: args,
                        amount,
                    });
                }
                "logical_observable" => {
                    parse_targets(line_no, &tokens)?;
                    out.push(Instr::Logical);
                }
                "repeat" => {
                    let count = match tokens.as_slice() {
                        [k, brace] if brace == "{" => k
                            .parse()
                            .map_err(|_| syntax(line_no, format!("bad repeat count '{k}'")))?,
                        _ => return Err(syntax(line_no, "expected 'repeat N {'")),
                    };
                    let body = self.block(Some(line_no))?;
                    out.push(Instr::Repeat { count, body });
                }
                other => return Err(syntax(line_no, format!("unknown instruction '{other}'"))),
            }
        }
        match nested {
            Some(open) => Err(syntax(open, "unterminated repeat block")),
            None => Ok(out),
        }
    }
}

#[derive(Default)]
struct Flattener {
    det_offset: usize,
    coord_offset: Vec<f64>,
    mechanisms: Vec<ErrorMechanism>,
    coords: Vec<(usize, Vec<f64>)>,
    seen: BTreeSet<usize>,
    warnings: Vec<ParseWarning>,
}

impl Flattener {
    fn run(&mut self, instrs: &[Instr]) -> Result<()> {
        for ins in instrs {
            match ins {
                Instr::Error {
                    line,
                    prob,
                    targets,
                } => {
                    let p = *prob;
                    if p.is_nan() || !(0.0..1.0).contains(&p) {
                        return Err(Error::ProbabilityOutOfRange {
                            line: *line,
                            prob: p,
                        });
                    }
                    if p == 0.0 {
                        self.warnings
                            .push(ParseWarning::ZeroProbability { line: *line });
                        continue;
                    }
                    let mut dets = Vec::new();
                    let mut logical = false;
                    for t in targets {
                        match *t {
                            Target::Detector(k) => dets.push(k + self.det_offset),
                            Target::Logical => logical = !logical,
                        }
                    }
                    self.seen.extend(dets.iter().copied());
                    let mech = ErrorMechanism::new(p, dets, logical);
                    if mech.detectors.is_empty() && !mech.flips_logical {
                        self.warnings
                            .push(ParseWarning::EmptyMechanism { line: *line });
                        continue;
                    }
                    self.mechanisms.push(mech);
                }
                Instr::Detector { coords, targets } => {
                    let shifted: Vec<f64> = coords
                        .iter()
                        .enumerate()
                        .map(|(k, c)| c + self.coord_offset.get(k).copied().unwrap_or(0.0))
                        .collect();
                    for t in targets {
                        if let Target::Detector(k) = *t {
                            let j = k + self.det_offset;
                            self.seen.insert(j);
                            if !coords.is_empty() {
                                self.coords.push((j, shifted.clone()));
                            }
                        }
                    }
                }
                Instr::Shift { coords, amount } => {
                    if self.coord_offset.len() < coords.len() {
                        self.coord_offset.resize(coords.len(), 0.0);
                    }
                    for (o, c) in self.coord_offset.iter_mut().zip(coords) {
                        *o += c;
                    }
                    self.det_offset += amount;
                }
                Instr::Logical => {}
                Instr::Repeat { count, body } => {
                    for _ in 0..*count {
                        self.run(body)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parses DEM text, returning the canonical model and any warnings.
pub fn parse_dem_with_warnings(text: &str) -> Result<(DetectorErrorModel, Vec<ParseWarning>)> {
    let mut metadata = std::collections::BTreeMap::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = raw.trim();
        if let Some(meta) = trimmed.strip_prefix("#!") {
            if let Some((k, v)) = meta.trim().split_once('=') {
                metadata.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        let code = match trimmed.find('#') {
            Some(k) => trimmed[..k].trim(),
            None => trimmed,
        };
        if code.is_empty() {
            continue;
        }
        // A closing brace may share a line with nothing else only.
        if let Some(head) = code.strip_suffix('}').filter(|h| !h.trim().is_empty()) {
            lines.push((line_no, head.trim()));
            lines.push((line_no, "}"));
        } else {
            lines.push((line_no, code));
        }
    }
    let instrs = Lexer { lines, pos: 0 }.block(None)?;
    let mut flat = Flattener::default();
    flat.run(&instrs)?;

    let n_detectors = flat.seen.iter().next_back().map_or(0, |&j| j + 1);
    let mut warnings = flat.warnings;
    for j in 0..n_detectors {
        if !flat.seen.contains(&j) {
            warnings.push(ParseWarning::DetectorGap { detector: j });
        }
    }
    let mut model = DetectorErrorModel::new(n_detectors, flat.mechanisms)?;
    for (j, c) in flat.coords {
        model.set_detector_coords(j, c);
    }
    model.metadata = metadata;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((model, warnings))
}

pub fn parse_dem(text: &str) -> Result<DetectorErrorModel> {
    parse_dem_with_warnings(text).map(|(m, _)| m)
}

/// Writes the model as flat DEM text. Every detector is declared so that
/// the detector count survives a round trip.
pub fn serialize_dem(model: &DetectorErrorModel) -> String {
    let mut out = String::new();
    for (k, v) in &model.metadata {
        let _ = writeln!(out, "#! {k}={v}");
    }
    for j in 0..model.n_detectors() {
        match model.detector_coords(j) {
            Some(c) => {
                let cs: Vec<String> = c.iter().map(|x| format!("{x}")).collect();
                let _ = writeln!(out, "detector({}) D{j}", cs.join(", "));
            }
            None => {
                let _ = writeln!(out, "detector D{j}");
            }
        }
    }
    for m in model.mechanisms() {
        let _ = write!(out, "error({})", m.prob);
        for d in &m.detectors {
            let _ = write!(out, " D{d}");
        }
        if m.flips_logical {
            out.push_str(" L0");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_line() {
        let m = parse_dem("error(0.1) D0 D1").unwrap();
        assert_eq!(m.n_detectors(), 2);
        assert_eq!(m.n_mechanisms(), 1);
        assert_eq!(m.mechanisms()[0].prob, 0.1);
        assert_eq!(m.mechanisms()[0].detectors, vec![0, 1]);
    }

    #[test]
    fn repeated_detector_cancels_to_logical_only() {
        let m = parse_dem("error(0.1) D0 D0 L0").unwrap();
        assert!(m.mechanisms()[0].detectors.is_empty());
        assert!(m.mechanisms()[0].flips_logical);
    }

    #[test]
    fn duplicate_lines_merge() {
        let m = parse_dem("error(0.1) D0\nerror(0.2) D0\n").unwrap();
        assert_eq!(m.n_mechanisms(), 1);
        // Brute force over the four joint outcomes of two independent flips.
        let mut odd = 0.0;
        for a in [false, true] {
            for b in [false, true] {
                let pa = if a { 0.1 } else { 0.9 };
                let pb = if b { 0.2 } else { 0.8 };
                if a ^ b {
                    odd += pa * pb;
                }
            }
        }
        assert!((m.mechanisms()[0].prob - odd).abs() < 1e-15);
        assert!((odd - 0.26).abs() < 1e-15);
    }

    #[test]
    fn serialize_single() {
        let m = parse_dem("error(0.26) D0").unwrap();
        let text = serialize_dem(&m);
        assert!(text.contains("error(0.26) D0\n"));
    }

    #[test]
    fn empty_model() {
        let m = parse_dem("").unwrap();
        assert_eq!(m.n_detectors(), 0);
        let text = serialize_dem(&m);
        assert_eq!(parse_dem(&text).unwrap().n_detectors(), 0);
    }

    #[test]
    fn repeat_and_shift_are_unrolled() {
        let text = "\
detector(0, 0) D0
repeat 3 {
    error(0.01) D0 D1
    shift_detectors(0, 1) 1
    detector(0, 0) D0
}
";
        let m = parse_dem(text).unwrap();
        assert_eq!(m.n_detectors(), 4);
        assert_eq!(m.n_mechanisms(), 3);
        assert_eq!(m.mechanisms()[2].detectors, vec![2, 3]);
        assert_eq!(m.detector_coords(3), Some(&[0.0, 3.0][..]));
    }

    #[test]
    fn errors_are_reported() {
        assert!(matches!(
            parse_dem("error(1.5) D0"),
            Err(Error::ProbabilityOutOfRange { line: 1, .. })
        ));
        assert!(matches!(
            parse_dem("error(0.1) D0\nfoo D1"),
            Err(Error::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            parse_dem("error(0.1) D0 L1"),
            Err(Error::UnsupportedObservable(1))
        ));
        assert!(matches!(
            parse_dem("repeat 2 {\nerror(0.1) D0\n"),
            Err(Error::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn zero_probability_and_gaps_warn() {
        let (m, w) = parse_dem_with_warnings("error(0) D0\nerror(0.1) D2\n").unwrap();
        assert_eq!(m.n_mechanisms(), 1);
        assert!(w.contains(&ParseWarning::ZeroProbability { line: 1 }));
        assert!(w.contains(&ParseWarning::DetectorGap { detector: 1 }));
    }

    #[test]
    fn clamps_tiny_probability() {
        let m = parse_dem("error(1e-15) D0").unwrap();
        assert_eq!(m.mechanisms()[0].prob, super::super::PROB_FLOOR);
    }

    #[test]
    fn metadata_round_trips() {
        let m = parse_dem("#! code=repetition\n#! d=3\nerror(0.1) D0 L0\n").unwrap();
        assert_eq!(m.metadata_usize("d"), Some(3));
        assert_eq!(parse_dem(&serialize_dem(&m)).unwrap(), m);
    }

    fn arb_model() -> impl Strategy<Value = DetectorErrorModel> {
        (1usize..10).prop_flat_map(|m| {
            let mech = (
                1e-6f64..0.5,
                proptest::collection::vec(0..m, 0..4),
                any::<bool>(),
            );
            (
                Just(m),
                proptest::collection::vec(mech, 1..20),
                proptest::collection::vec(-5.0f64..5.0, m),
            )
                .prop_map(|(m, mechs, coords)| {
                    let ms = mechs
                        .into_iter()
                        .map(|(p, d, l)| ErrorMechanism::new(p, d, l))
                        .collect();
                    let mut model = DetectorErrorModel::new(m, ms).unwrap();
                    for (j, c) in coords.into_iter().enumerate() {
                        if j % 3 != 1 {
                            model.set_detector_coords(j, vec![c, j as f64]);
                        }
                    }
                    model
                })
        })
    }

    proptest! {
        #[test]
        fn parse_serialize_fixed_point(model in arb_model()) {
            let text = serialize_dem(&model);
            let back = parse_dem(&text).unwrap();
            prop_assert_eq!(&back, &model);
            prop_assert_eq!(serialize_dem(&back), text);
        }
    }
}
