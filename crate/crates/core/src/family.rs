//! Hypothesis family model: ids, gate structure, parsing and validation.
//!
//! A family is a set of null hypotheses indexed 1..n. Each hypothesis may
//! declare a gate set: the hypotheses whose rejection must precede its own.
//! A multi-member gate set is a parallel gate (any one member suffices);
//! serial chains are expressed by singleton gate sets linked in sequence.
//! Gate sets are modeling declarations — the engine enforces them logically,
//! it never sees a rejection region as a geometric object.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CoveringError, Result};

/// 1-based index of a hypothesis within its family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HypothesisId(u32);

impl HypothesisId {
    pub fn new(id: u32) -> Self {
        HypothesisId(id)
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// Zero-based position for indexing per-hypothesis arrays.
    pub fn index(self) -> usize {
        (self.0 - 1) as usize
    }
}

impl fmt::Display for HypothesisId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Sorted id set; the canonical representation of a (sub-)family.
pub type IdSet = BTreeSet<HypothesisId>;

/// Renders a set as `{1,2,3}`.
pub fn format_id_set(set: &IdSet) -> String {
    let inner: Vec<String> = set.iter().map(|id| id.to_string()).collect();
    format!("{{{}}}", inner.join(","))
}

/// A family of n hypotheses with per-hypothesis gate sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    /// Number of hypotheses; ids are 1..=n.
    pub n: u32,
    /// Optional display label per hypothesis (index 0 = hypothesis 1).
    pub labels: Vec<Option<String>>,
    /// Gate set per hypothesis (index 0 = hypothesis 1). Empty = ungated.
    pub gates: Vec<IdSet>,
    /// Default significance level declared in the spec document, if any.
    pub alpha_default: Option<f64>,
}

/// One invariant violation found by [`FamilySpec::validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    /// n must be at least 1.
    EmptyFamily,
    /// A hypothesis gates on itself.
    SelfGate { id: HypothesisId },
    /// A gate refers to an id outside 1..=n.
    UnknownGateId { id: HypothesisId, gate: u32 },
    /// The gate graph has a directed cycle.
    GateCycle { members: Vec<HypothesisId> },
    /// Declared default alpha outside (0,1).
    AlphaOutOfRange { alpha: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyFamily => write!(f, "family must contain at least one hypothesis"),
            Violation::SelfGate { id } => write!(f, "self-gate at {id}"),
            Violation::UnknownGateId { id, gate } => {
                write!(f, "unknown id {gate} in gate set of hypothesis {id}")
            }
            Violation::GateCycle { members } => {
                let ids: Vec<String> = members.iter().map(|m| m.to_string()).collect();
                write!(f, "cycle in gate graph through {{{}}}", ids.join(","))
            }
            Violation::AlphaOutOfRange { alpha } => {
                write!(f, "alpha {alpha} outside (0,1)")
            }
        }
    }
}

/// Outcome of validating a family spec; violations are data, not failures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl FamilySpec {
    /// Builds a spec from gate sets alone, without labels or a default alpha.
    pub fn from_gates(gates: Vec<Vec<u32>>) -> Self {
        let n = gates.len() as u32;
        let gates = gates
            .into_iter()
            .map(|g| g.into_iter().map(HypothesisId::new).collect())
            .collect();
        FamilySpec {
            n,
            labels: vec![None; n as usize],
            gates,
            alpha_default: None,
        }
    }

    /// All hypothesis ids, ascending.
    pub fn all_ids(&self) -> IdSet {
        (1..=self.n).map(HypothesisId::new).collect()
    }

    pub fn contains(&self, id: HypothesisId) -> bool {
        id.get() >= 1 && id.get() <= self.n
    }

    /// Gate set of `id`. Panics if `id` is out of range.
    pub fn gates_of(&self, id: HypothesisId) -> &IdSet {
        &self.gates[id.index()]
    }

    pub fn label_of(&self, id: HypothesisId) -> Option<&str> {
        self.labels[id.index()].as_deref()
    }

    /// Checks every structural invariant and reports all violations found.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.n == 0 {
            violations.push(Violation::EmptyFamily);
        }
        if let Some(alpha) = self.alpha_default {
            if !(alpha > 0.0 && alpha < 1.0) {
                violations.push(Violation::AlphaOutOfRange { alpha });
            }
        }
        for (idx, gate_set) in self.gates.iter().enumerate() {
            let id = HypothesisId::new(idx as u32 + 1);
            for &g in gate_set {
                if g == id {
                    violations.push(Violation::SelfGate { id });
                } else if !self.contains(g) {
                    violations.push(Violation::UnknownGateId { id, gate: g.get() });
                }
            }
        }
        // Cycle check only over well-formed edges, so a bad id cannot panic it.
        if let Some(cycle) = self.find_cycle() {
            violations.push(Violation::GateCycle { members: cycle });
        }
        ValidationReport { violations }
    }

    /// Validates and converts violations into an error.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_ok() {
            Ok(())
        } else {
            let text: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
            Err(CoveringError::InvalidFamily(text.join("; ")))
        }
    }

    /// Finds a directed cycle in the gate graph (edges gate -> gated), if any.
    /// Members are reported in ascending id order.
    fn find_cycle(&self) -> Option<Vec<HypothesisId>> {
        // Kahn's algorithm on in-degrees; leftovers are exactly the nodes on
        // or downstream-within cycles, so report the ones with unresolved
        // gate predecessors.
        let n = self.n as usize;
        let mut indegree = vec![0usize; n];
        for (idx, gate_set) in self.gates.iter().enumerate() {
            let valid = gate_set
                .iter()
                .filter(|g| self.contains(**g) && g.index() != idx)
                .count();
            indegree[idx] = valid;
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut seen = 0usize;
        while let Some(i) = queue.pop() {
            seen += 1;
            let id = HypothesisId::new(i as u32 + 1);
            for (jdx, gate_set) in self.gates.iter().enumerate() {
                if jdx != i && gate_set.contains(&id) {
                    indegree[jdx] -= 1;
                    if indegree[jdx] == 0 {
                        queue.push(jdx);
                    }
                }
            }
        }
        if seen == n {
            None
        } else {
            let members: Vec<HypothesisId> = (0..n)
                .filter(|&i| indegree[i] > 0)
                .map(|i| HypothesisId::new(i as u32 + 1))
                .collect();
            Some(members)
        }
    }

    /// Hypotheses in topological gate order: every gate precedes what it gates.
    /// Requires an acyclic spec.
    pub fn topological_order(&self) -> Result<Vec<HypothesisId>> {
        let n = self.n as usize;
        let mut indegree: Vec<usize> = self.gates.iter().map(|g| g.len()).collect();
        // Min-heap behavior via sorted frontier keeps the order deterministic.
        let mut frontier: BTreeSet<HypothesisId> = (0..n)
            .filter(|&i| indegree[i] == 0)
            .map(|i| HypothesisId::new(i as u32 + 1))
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&id) = frontier.iter().next() {
            frontier.remove(&id);
            order.push(id);
            for (jdx, gate_set) in self.gates.iter().enumerate() {
                if gate_set.contains(&id) {
                    indegree[jdx] -= 1;
                    if indegree[jdx] == 0 {
                        frontier.insert(HypothesisId::new(jdx as u32 + 1));
                    }
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err(CoveringError::GateCycle(
                (0..n)
                    .filter(|&i| indegree[i] > 0)
                    .map(|i| i as u32 + 1)
                    .collect(),
            ))
        }
    }

    /// Transitive closure of gate membership reachable from `seed`.
    ///
    /// Follows gate edges upward: the result contains every hypothesis whose
    /// rejection can be demanded, directly or through intermediaries, before
    /// some member of `seed`. Seed members are excluded unless reachable.
    pub fn gate_ancestors(&self, seed: &IdSet) -> IdSet {
        debug_assert!(seed.iter().all(|id| self.contains(*id)));
        let mut result = IdSet::new();
        let mut frontier: Vec<HypothesisId> = seed
            .iter()
            .flat_map(|id| self.gates_of(*id).iter().copied())
            .collect();
        while let Some(g) = frontier.pop() {
            if result.insert(g) {
                frontier.extend(self.gates_of(g).iter().copied());
            }
        }
        result
    }

    /// Canonical textual form in the family-spec grammar; parses back to an
    /// identical spec.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(alpha) = self.alpha_default {
            out.push_str(&format!("alpha = {alpha}\n"));
        }
        for idx in 0..self.n as usize {
            out.push_str(&format!("hypothesis {}", idx + 1));
            if let Some(label) = &self.labels[idx] {
                out.push_str(&format!(" label=\"{}\"", escape_label(label)));
            }
            if !self.gates[idx].is_empty() {
                let ids: Vec<String> = self.gates[idx].iter().map(|g| g.to_string()).collect();
                out.push_str(&format!(" gates=[{}]", ids.join(",")));
            }
            out.push('\n');
        }
        out
    }
}

fn escape_label(label: &str) -> String {
    label.replace('\\', "\\\\").replace('"', "\\\"")
}

// ---------------------------------------------------------------------------
// Parser for the family-spec grammar
// ---------------------------------------------------------------------------
//
//   file      := (line NEWLINE)* ;
//   line      := alpha-decl | hyp-decl | blank ;
//   alpha-decl:= "alpha" "=" FLOAT ;
//   hyp-decl  := "hypothesis" INT [ "label=" QUOTED ] [ "gates=[" INT ("," INT)* "]" ] ;
//
// '#' starts a comment running to end of line; whitespace between tokens is
// ignored; declaration order is irrelevant but ids must form 1..n.

/// Parses and fully validates a family-spec document.
pub fn parse_family_spec(text: &str) -> Result<FamilySpec> {
    let mut alpha_default: Option<f64> = None;
    let mut decls: Vec<(u32, Option<String>, Vec<u32>, usize)> = Vec::new();

    for (line_idx, raw_line) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        let mut cursor = LineCursor::new(raw_line, line_no);
        cursor.skip_ws();
        if cursor.at_end() {
            continue;
        }
        let keyword = cursor.ident()?;
        match keyword.as_str() {
            "alpha" => {
                cursor.expect_char('=')?;
                let value = cursor.float()?;
                if alpha_default.is_some() {
                    return Err(cursor.err("duplicate alpha declaration"));
                }
                if !(value > 0.0 && value < 1.0) {
                    return Err(CoveringError::AlphaOutOfRange {
                        value,
                        range: "(0,1)",
                    });
                }
                alpha_default = Some(value);
            }
            "hypothesis" => {
                let id = cursor.int()?;
                if id == 0 {
                    return Err(cursor.err("hypothesis ids are 1-based; 0 is not allowed"));
                }
                let mut label = None;
                let mut gates = Vec::new();
                loop {
                    cursor.skip_ws();
                    if cursor.at_end() {
                        break;
                    }
                    let key = cursor.ident()?;
                    cursor.expect_char('=')?;
                    match key.as_str() {
                        "label" => {
                            if label.is_some() {
                                return Err(cursor.err("duplicate label attribute"));
                            }
                            label = Some(cursor.quoted()?);
                        }
                        "gates" => {
                            if !gates.is_empty() {
                                return Err(cursor.err("duplicate gates attribute"));
                            }
                            cursor.expect_char('[')?;
                            loop {
                                gates.push(cursor.int()?);
                                cursor.skip_ws();
                                if cursor.try_char(',') {
                                    continue;
                                }
                                cursor.expect_char(']')?;
                                break;
                            }
                        }
                        other => {
                            return Err(cursor.err(&format!(
                                "unknown attribute `{other}` (expected label or gates)"
                            )));
                        }
                    }
                }
                decls.push((id, label, gates, line_no));
            }
            other => {
                return Err(cursor.err(&format!(
                    "unknown declaration `{other}` (expected alpha or hypothesis)"
                )));
            }
        }
        cursor.skip_ws();
        if !cursor.at_end() {
            return Err(cursor.err("trailing characters after declaration"));
        }
    }

    if decls.is_empty() {
        return Err(CoveringError::InvalidFamily(
            "family must contain at least one hypothesis".into(),
        ));
    }

    // Ids must be unique and dense 1..n regardless of declaration order.
    let n = decls.len() as u32;
    let mut labels = vec![None; n as usize];
    let mut gates = vec![IdSet::new(); n as usize];
    let mut seen = vec![false; n as usize + 1];
    for (id, label, gate_ids, _line) in &decls {
        if *id > n {
            // Some id in 1..n must then be missing.
            let missing = (1..=n).find(|k| !seen[*k as usize]).unwrap_or(*id);
            if seen.get(*id as usize).copied().unwrap_or(false) {
                return Err(CoveringError::DuplicateId { id: *id });
            }
            return Err(CoveringError::NonDenseIds { missing });
        }
        if seen[*id as usize] {
            return Err(CoveringError::DuplicateId { id: *id });
        }
        seen[*id as usize] = true;
        let idx = (*id - 1) as usize;
        labels[idx] = label.clone();
        gates[idx] = gate_ids.iter().map(|g| HypothesisId::new(*g)).collect();
    }

    let spec = FamilySpec {
        n,
        labels,
        gates,
        alpha_default,
    };

    // Gate references and acyclicity are parse errors, not just violations.
    let report = spec.validate();
    if let Some(violation) = report.violations.first() {
        match violation {
            Violation::UnknownGateId { id, gate } => {
                return Err(CoveringError::UnknownId {
                    id: *gate,
                    context: format!("gate set of hypothesis {id}"),
                });
            }
            Violation::SelfGate { id } => {
                return Err(CoveringError::InvalidFamily(format!("self-gate at {id}")));
            }
            Violation::GateCycle { members } => {
                return Err(CoveringError::GateCycle(
                    members.iter().map(|m| m.get()).collect(),
                ));
            }
            Violation::AlphaOutOfRange { alpha } => {
                return Err(CoveringError::AlphaOutOfRange {
                    value: *alpha,
                    range: "(0,1)",
                });
            }
            Violation::EmptyFamily => {
                return Err(CoveringError::InvalidFamily(violation.to_string()));
            }
        }
    }
    Ok(spec)
}

/// Character-level cursor over one line, tracking the column for errors.
struct LineCursor {
    chars: Vec<char>,
    pos: usize,
    line: usize,
}

impl LineCursor {
    fn new(text: &str, line: usize) -> Self {
        // Strip the comment; '#' inside a quoted label does not count.
        let mut chars = Vec::new();
        let mut in_quote = false;
        let mut escaped = false;
        for c in text.chars() {
            if !in_quote && c == '#' {
                break;
            }
            if in_quote && !escaped && c == '\\' {
                escaped = true;
                chars.push(c);
                continue;
            }
            if c == '"' && !escaped {
                in_quote = !in_quote;
            }
            escaped = false;
            chars.push(c);
        }
        LineCursor {
            chars,
            pos: 0,
            line,
        }
    }

    fn err(&self, message: &str) -> CoveringError {
        CoveringError::Syntax {
            line: self.line,
            column: self.pos + 1,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.chars.len()
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn ident(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphabetic() || c == '_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return Err(self.err("expected an identifier"));
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    fn int(&mut self) -> Result<u32> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return Err(self.err("expected an integer"));
        }
        let digits: String = self.chars[start..self.pos].iter().collect();
        digits
            .parse::<u32>()
            .map_err(|_| self.err("integer out of range"))
    }

    fn float(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return Err(self.err("expected a number"));
        }
        let digits: String = self.chars[start..self.pos].iter().collect();
        digits
            .parse::<f64>()
            .map_err(|_| self.err("malformed number"))
    }

    fn quoted(&mut self) -> Result<String> {
        self.skip_ws();
        if self.peek() != Some('"') {
            return Err(self.err("expected a quoted string"));
        }
        self.pos += 1;
        let mut out = String::new();
        loop {
            match self.peek() {
                None => return Err(self.err("unterminated quoted string")),
                Some('"') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some('\\') => {
                    self.pos += 1;
                    match self.peek() {
                        Some('"') => out.push('"'),
                        Some('\\') => out.push('\\'),
                        _ => return Err(self.err("unsupported escape sequence")),
                    }
                    self.pos += 1;
                }
                Some(c) => {
                    out.push(c);
                    self.pos += 1;
                }
            }
        }
    }

    fn expect_char(&mut self, expected: char) -> Result<()> {
        self.skip_ws();
        if self.peek() == Some(expected) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected `{expected}`")))
        }
    }

    fn try_char(&mut self, expected: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(expected) {
            self.pos += 1;
            true
        } else {
            false
        }
    }
}

/// Convenience constructor for id sets in tests and fixtures.
pub fn id_set(ids: &[u32]) -> IdSet {
    ids.iter().map(|&i| HypothesisId::new(i)).collect()
}
