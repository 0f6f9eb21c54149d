//! Structural Verilog frontend: a post-synthesis netlist subset.
//!
//! Supported grammar, roughly:
//!
//! ```text
//! module    := 'module' ident '(' [ident {',' ident}] ')' ';' {item} 'endmodule'
//! item      := decl | instance | assign
//! decl      := ('input'|'output'|'wire') ['[' int ':' int ']'] ident {',' ident} ';'
//! instance  := ident ident '(' [conn {',' conn}] ')' ';'
//! conn      := '.' ident '(' net ')'
//! assign    := 'assign' net '=' (net | literal) ';'
//! net       := ident | ident '[' int ']'
//! literal   := '1'b0' | '1'b1'
//! ```
//!
//! Vectors are bit-blasted at parse time to `name[i]` nets. Cell
//! instantiation uses named port connections only; positional connections are
//! rejected to avoid silent miswiring. `assign` handles plain aliasing and
//! constant ties. Comments (`//`, `/* */`) are skipped; there is no
//! preprocessor. Behavioral constructs (`always`, `reg`, expressions in
//! assigns, parameters) are rejected with an "unsupported construct" error.
//!
//! Clock ports carry no annotation in Verilog, so [`parse_verilog`] infers
//! them: a port is clock-kind if it reaches the clock-role pin of a
//! sequential cell through buffers/inverters only, or if it feeds the clock
//! side of a 2-input AND clock gate whose output clocks a sequential cell
//! (the other side then being driven by an instance, not a port). The
//! canonical JSON format remains the lossless carrier of port kinds.
//!
//! Errors are reported as `file:line:col: message`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::library::CellLibrary;
use crate::netlist::{Driver, Index, Instance, Netlist, PortDir, PortKind};

/// A position in the parsed source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSpan {
    pub file: String,
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.line, self.column)
    }
}

#[derive(Debug, Error)]
#[error("{span}: {message}")]
pub struct ParseError {
    pub span: SourceSpan,
    pub message: String,
}

const BEHAVIORAL_KEYWORDS: &[&str] = &[
    "always", "initial", "reg", "parameter", "localparam", "defparam", "generate", "endgenerate",
    "function", "endfunction", "task", "endtask", "if", "else", "case", "casex", "casez", "begin",
    "end", "specify", "primitive", "integer", "real", "genvar", "posedge", "negedge",
];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Keyword(&'static str),
    Number(i64),
    ConstBit(bool),
    Punct(char),
    Eof,
}

struct Lexer<'a> {
    text: &'a str,
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    file: String,
    line: usize,
    column: usize,
}

struct SpannedTok {
    tok: Tok,
    line: usize,
    column: usize,
}

impl<'a> Lexer<'a> {
    fn new(file: &str, text: &'a str) -> Lexer<'a> {
        Lexer {
            text,
            chars: text.char_indices().peekable(),
            file: file.to_string(),
            line: 1,
            column: 1,
        }
    }

    fn span(&self, line: usize, column: usize) -> SourceSpan {
        SourceSpan {
            file: self.file.clone(),
            line,
            column,
        }
    }

    fn bump(&mut self) -> Option<(usize, char)> {
        let next = self.chars.next();
        if let Some((_, c)) = next {
            if c == '\n' {
                self.line += 1;
                self.column = 1;
            } else {
                self.column += 1;
            }
        }
        next
    }

    fn error(&self, line: usize, column: usize, message: impl Into<String>) -> ParseError {
        ParseError {
            span: self.span(line, column),
            message: message.into(),
        }
    }

    fn next_token(&mut self) -> Result<SpannedTok, ParseError> {
        loop {
            // Skip whitespace.
            while matches!(self.chars.peek(), Some(&(_, c)) if c.is_whitespace()) {
                self.bump();
            }
            // Skip comments.
            let mut iter = self.chars.clone();
            if let (Some((_, '/')), Some((_, second))) = (iter.next(), iter.next()) {
                if second == '/' {
                    while let Some(&(_, c)) = self.chars.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                    continue;
                }
                if second == '*' {
                    let (line, column) = (self.line, self.column);
                    self.bump();
                    self.bump();
                    let mut closed = false;
                    while let Some((_, c)) = self.bump() {
                        if c == '*' && matches!(self.chars.peek(), Some(&(_, '/'))) {
                            self.bump();
                            closed = true;
                            break;
                        }
                    }
                    if !closed {
                        return Err(self.error(line, column, "unterminated block comment"));
                    }
                    continue;
                }
            }
            break;
        }

        let (line, column) = (self.line, self.column);
        let Some(&(start, c)) = self.chars.peek() else {
            return Ok(SpannedTok {
                tok: Tok::Eof,
                line,
                column,
            });
        };

        // Escaped identifier: backslash up to whitespace.
        if c == '\\' {
            self.bump();
            let mut name = String::new();
            while let Some(&(_, c)) = self.chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                name.push(c);
                self.bump();
            }
            if name.is_empty() {
                return Err(self.error(line, column, "empty escaped identifier"));
            }
            return Ok(SpannedTok {
                tok: Tok::Ident(name),
                line,
                column,
            });
        }

        if c.is_ascii_digit() {
            let mut end = start;
            while let Some(&(i, d)) = self.chars.peek() {
                if d.is_ascii_digit() {
                    end = i + d.len_utf8();
                    self.bump();
                } else {
                    break;
                }
            }
            let digits = &self.text[start..end];
            // Based literal?
            if matches!(self.chars.peek(), Some(&(_, '\''))) {
                self.bump();
                let base = self.bump().map(|(_, c)| c.to_ascii_lowercase());
                let mut value = String::new();
                while let Some(&(_, d)) = self.chars.peek() {
                    if d.is_alphanumeric() {
                        value.push(d);
                        self.bump();
                    } else {
                        break;
                    }
                }
                let bit = match (digits, base, value.as_str()) {
                    ("1", Some('b' | 'd' | 'h'), "0") => false,
                    ("1", Some('b' | 'd' | 'h'), "1") => true,
                    _ => {
                        return Err(self.error(
                            line,
                            column,
                            format!(
                                "unsupported literal `{digits}'{}{value}`; only 1'b0 and 1'b1 are supported",
                                base.unwrap_or('?')
                            ),
                        ))
                    }
                };
                return Ok(SpannedTok {
                    tok: Tok::ConstBit(bit),
                    line,
                    column,
                });
            }
            let number: i64 = digits
                .parse()
                .map_err(|_| self.error(line, column, "number out of range"))?;
            return Ok(SpannedTok {
                tok: Tok::Number(number),
                line,
                column,
            });
        }

        if c.is_alphabetic() || c == '_' || c == '$' {
            let mut end = start;
            while let Some(&(i, d)) = self.chars.peek() {
                if d.is_alphanumeric() || d == '_' || d == '$' {
                    end = i + d.len_utf8();
                    self.bump();
                } else {
                    break;
                }
            }
            let word = &self.text[start..end];
            let tok = match word {
                "module" => Tok::Keyword("module"),
                "endmodule" => Tok::Keyword("endmodule"),
                "input" => Tok::Keyword("input"),
                "output" => Tok::Keyword("output"),
                "wire" => Tok::Keyword("wire"),
                "assign" => Tok::Keyword("assign"),
                w if BEHAVIORAL_KEYWORDS.contains(&w) => {
                    return Err(self.error(
                        line,
                        column,
                        format!("unsupported construct: behavioral keyword `{w}`"),
                    ))
                }
                _ => Tok::Ident(word.to_string()),
            };
            return Ok(SpannedTok { tok, line, column });
        }

        if "()[];,.=:".contains(c) {
            self.bump();
            return Ok(SpannedTok {
                tok: Tok::Punct(c),
                line,
                column,
            });
        }

        Err(self.error(line, column, format!("unexpected character `{c}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum DeclKind {
    Input,
    Output,
    Wire,
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    lookahead: Option<SpannedTok>,
}

impl<'a> Parser<'a> {
    fn peek(&mut self) -> Result<&SpannedTok, ParseError> {
        if self.lookahead.is_none() {
            self.lookahead = Some(self.lexer.next_token()?);
        }
        Ok(self.lookahead.as_ref().unwrap())
    }

    fn next(&mut self) -> Result<SpannedTok, ParseError> {
        match self.lookahead.take() {
            Some(tok) => Ok(tok),
            None => self.lexer.next_token(),
        }
    }

    fn err_at(&self, tok: &SpannedTok, message: impl Into<String>) -> ParseError {
        ParseError {
            span: self.lexer.span(tok.line, tok.column),
            message: message.into(),
        }
    }

    fn expect_punct(&mut self, c: char) -> Result<(), ParseError> {
        let tok = self.next()?;
        if tok.tok == Tok::Punct(c) {
            Ok(())
        } else {
            Err(self.err_at(&tok, format!("expected `{c}`, found {}", show(&tok.tok))))
        }
    }

    fn expect_ident(&mut self) -> Result<(String, SpannedTok), ParseError> {
        let tok = self.next()?;
        match &tok.tok {
            Tok::Ident(name) => {
                let name = name.clone();
                Ok((name, tok))
            }
            other => Err(self.err_at(&tok, format!("expected identifier, found {}", show(other)))),
        }
    }
}

fn show(tok: &Tok) -> String {
    match tok {
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Keyword(k) => format!("keyword `{k}`"),
        Tok::Number(n) => format!("number `{n}`"),
        Tok::ConstBit(b) => format!("literal `1'b{}`", *b as u8),
        Tok::Punct(c) => format!("`{c}`"),
        Tok::Eof => "end of input".into(),
    }
}

/// A parsed net reference before alias resolution.
#[derive(Debug, Clone, PartialEq)]
enum NetRef {
    Name(String),
    Const(bool),
}

/// Parses a structural-Verilog module into a [`Netlist`], using `file` in
/// error spans.
pub fn parse_verilog_named(
    file: &str,
    text: &str,
    lib: &CellLibrary,
) -> Result<Netlist, ParseError> {
    let mut parser = Parser {
        lexer: Lexer::new(file, text),
        lookahead: None,
    };

    let tok = parser.next()?;
    if tok.tok != Tok::Keyword("module") {
        return Err(parser.err_at(&tok, format!("expected `module`, found {}", show(&tok.tok))));
    }
    let (module_name, _) = parser.expect_ident()?;
    parser.expect_punct('(')?;
    let mut header: Vec<String> = Vec::new();
    if parser.peek()?.tok != Tok::Punct(')') {
        loop {
            let (name, _) = parser.expect_ident()?;
            header.push(name);
            let tok = parser.next()?;
            match tok.tok {
                Tok::Punct(',') => continue,
                Tok::Punct(')') => break,
                ref other => {
                    return Err(
                        parser.err_at(&tok, format!("expected `,` or `)`, found {}", show(other)))
                    )
                }
            }
        }
    } else {
        parser.next()?;
    }
    parser.expect_punct(';')?;

    struct Decl {
        kind: DeclKind,
        range: Option<(i64, i64)>,
    }
    type Conn = (String, NetRef, SpannedTok);
    let mut decls: BTreeMap<String, Decl> = BTreeMap::new();
    let mut decl_order: Vec<String> = Vec::new();
    let mut instances: Vec<(String, String, Vec<Conn>, SpannedTok)> = Vec::new();
    let mut assigns: Vec<Conn> = Vec::new();

    loop {
        let tok = parser.next()?;
        match &tok.tok {
            Tok::Keyword("endmodule") => break,
            Tok::Keyword(k @ ("input" | "output" | "wire")) => {
                let kind = match *k {
                    "input" => DeclKind::Input,
                    "output" => DeclKind::Output,
                    _ => DeclKind::Wire,
                };
                let mut range = None;
                if parser.peek()?.tok == Tok::Punct('[') {
                    parser.next()?;
                    let msb_tok = parser.next()?;
                    let Tok::Number(msb) = msb_tok.tok else {
                        return Err(parser.err_at(&msb_tok, "expected number in range"));
                    };
                    parser.expect_punct(':')?;
                    let lsb_tok = parser.next()?;
                    let Tok::Number(lsb) = lsb_tok.tok else {
                        return Err(parser.err_at(&lsb_tok, "expected number in range"));
                    };
                    parser.expect_punct(']')?;
                    range = Some((msb, lsb));
                }
                loop {
                    let (name, name_tok) = parser.expect_ident()?;
                    if decls.contains_key(&name) {
                        return Err(parser.err_at(&name_tok, format!("`{name}` declared twice")));
                    }
                    decl_order.push(name.clone());
                    decls.insert(name, Decl { kind, range });
                    let tok = parser.next()?;
                    match tok.tok {
                        Tok::Punct(',') => continue,
                        Tok::Punct(';') => break,
                        ref other => {
                            return Err(parser.err_at(
                                &tok,
                                format!("expected `,` or `;`, found {}", show(other)),
                            ))
                        }
                    }
                }
            }
            Tok::Keyword("assign") => {
                let (lhs, lhs_tok) = parse_net_ref(&mut parser)?;
                let NetRef::Name(lhs) = lhs else {
                    return Err(parser.err_at(&lhs_tok, "assign target cannot be a literal"));
                };
                parser.expect_punct('=')?;
                let (rhs, rhs_tok) = parse_net_ref(&mut parser)?;
                // Reject expressions: next token must be `;`.
                let tok = parser.next()?;
                if tok.tok != Tok::Punct(';') {
                    return Err(parser.err_at(
                        &tok,
                        "unsupported construct: expression in assign (only plain aliases)",
                    ));
                }
                assigns.push((lhs, rhs, rhs_tok));
            }
            Tok::Ident(kind_name) => {
                let kind_name = kind_name.clone();
                let (inst_name, inst_tok) = parser.expect_ident()?;
                parser.expect_punct('(')?;
                let mut conns = Vec::new();
                if parser.peek()?.tok == Tok::Punct(')') {
                    parser.next()?;
                } else {
                    loop {
                        let dot = parser.next()?;
                        if dot.tok != Tok::Punct('.') {
                            return Err(parser.err_at(
                                &dot,
                                "positional port connections are not supported; use .pin(net)",
                            ));
                        }
                        let (pin, _) = parser.expect_ident()?;
                        parser.expect_punct('(')?;
                        if parser.peek()?.tok == Tok::Punct(')') {
                            let tok = parser.next()?;
                            return Err(
                                parser.err_at(&tok, format!("pin `{pin}` left unconnected"))
                            );
                        }
                        let (net, net_tok) = parse_net_ref(&mut parser)?;
                        parser.expect_punct(')')?;
                        conns.push((pin, net, net_tok));
                        let tok = parser.next()?;
                        match tok.tok {
                            Tok::Punct(',') => continue,
                            Tok::Punct(')') => break,
                            ref other => {
                                return Err(parser.err_at(
                                    &tok,
                                    format!("expected `,` or `)`, found {}", show(other)),
                                ))
                            }
                        }
                    }
                }
                parser.expect_punct(';')?;
                instances.push((inst_name, kind_name, conns, inst_tok));
            }
            Tok::Eof => {
                return Err(parser.err_at(&tok, "unexpected end of input, missing `endmodule`"))
            }
            other => {
                return Err(parser.err_at(&tok, format!("unexpected {}", show(other))));
            }
        }
    }

    // Expand declarations to bit-blasted nets.
    let expand = |name: &str, decl: &Decl| -> Vec<String> {
        match decl.range {
            None => vec![name.to_string()],
            Some((msb, lsb)) => {
                let step: i64 = if msb >= lsb { -1 } else { 1 };
                let mut bits = Vec::new();
                let mut i = msb;
                loop {
                    bits.push(format!("{name}[{i}]"));
                    if i == lsb {
                        break;
                    }
                    i += step;
                }
                bits
            }
        }
    };

    let mut netlist = Netlist::new(module_name);
    for port_name in &header {
        let Some(decl) = decls.get(port_name) else {
            return Err(ParseError {
                span: SourceSpan {
                    file: file.to_string(),
                    line: 1,
                    column: 1,
                },
                message: format!("port `{port_name}` has no input/output declaration"),
            });
        };
        let dir = match decl.kind {
            DeclKind::Input => PortDir::Input,
            DeclKind::Output => PortDir::Output,
            DeclKind::Wire => {
                return Err(ParseError {
                    span: SourceSpan {
                        file: file.to_string(),
                        line: 1,
                        column: 1,
                    },
                    message: format!("port `{port_name}` declared as wire"),
                })
            }
        };
        for bit in expand(port_name, decls.get(port_name).unwrap()) {
            netlist.add_port(bit, dir, PortKind::Data);
        }
    }
    for name in &decl_order {
        let decl = &decls[name];
        if decl.kind != DeclKind::Wire {
            if !header.contains(name) {
                return Err(ParseError {
                    span: SourceSpan {
                        file: file.to_string(),
                        line: 1,
                        column: 1,
                    },
                    message: format!("`{name}` declared input/output but not listed in the port header"),
                });
            }
            continue;
        }
        for bit in expand(name, decl) {
            netlist.add_net(bit);
        }
    }

    let resolve = |netlist: &Netlist, r: &NetRef, tok: &SpannedTok| -> Result<String, ParseError> {
        match r {
            NetRef::Const(false) => Ok(netlist.constants.zero.clone()),
            NetRef::Const(true) => Ok(netlist.constants.one.clone()),
            NetRef::Name(name) => {
                if netlist.nets.contains(name) {
                    Ok(name.clone())
                } else {
                    Err(ParseError {
                        span: SourceSpan {
                            file: file.to_string(),
                            line: tok.line,
                            column: tok.column,
                        },
                        message: format!("undeclared net `{name}`"),
                    })
                }
            }
        }
    };

    // Alias resolution: union nets connected by assigns, rewrite references
    // to a canonical member (constants beat ports beat wires), and keep
    // aliased ports alive with a BUF.
    let mut alias_of: HashMap<String, String> = HashMap::new();
    fn root(map: &HashMap<String, String>, name: &str) -> String {
        let mut current = name.to_string();
        while let Some(next) = map.get(&current) {
            current = next.clone();
        }
        current
    }
    let is_port = |netlist: &Netlist, n: &str| netlist.port(n).is_some();
    let mut pending_buf: Vec<(String, String)> = Vec::new();
    for (lhs, rhs, rhs_tok) in &assigns {
        let lhs = resolve(&netlist, &NetRef::Name(lhs.clone()), rhs_tok)?;
        let rhs = resolve(&netlist, rhs, rhs_tok)?;
        let lhs_root = root(&alias_of, &lhs);
        let rhs_root = root(&alias_of, &rhs);
        if lhs_root == rhs_root {
            continue;
        }
        let lhs_is_fixed = is_port(&netlist, &lhs_root) || netlist.is_const(&lhs_root).is_some();
        let rhs_is_fixed = is_port(&netlist, &rhs_root) || netlist.is_const(&rhs_root).is_some();
        if lhs_is_fixed && rhs_is_fixed {
            // Both names must survive: drive the target port from the source.
            pending_buf.push((lhs_root, rhs_root));
        } else if lhs_is_fixed {
            alias_of.insert(rhs_root, lhs_root);
        } else {
            alias_of.insert(lhs_root, rhs_root);
        }
    }

    for (inst_name, kind_name, conns, inst_tok) in instances {
        let Some(kind) = lib.kind(&kind_name) else {
            return Err(ParseError {
                span: SourceSpan {
                    file: file.to_string(),
                    line: inst_tok.line,
                    column: inst_tok.column,
                },
                message: format!("unknown cell kind `{kind_name}`"),
            });
        };
        let mut instance = Instance::new(inst_name.clone(), kind_name.clone());
        for (pin, net_ref, net_tok) in conns {
            if kind.pin(&pin).is_none() {
                return Err(ParseError {
                    span: SourceSpan {
                        file: file.to_string(),
                        line: net_tok.line,
                        column: net_tok.column,
                    },
                    message: format!("kind `{kind_name}` has no pin `{pin}`"),
                });
            }
            let net = resolve(&netlist, &net_ref, &net_tok)?;
            let net = root(&alias_of, &net);
            instance.pins.insert(pin, net);
        }
        netlist.add_instance(instance);
    }

    for (port_net, source) in pending_buf {
        if lib.kind("BUF").is_none() {
            return Err(ParseError {
                span: SourceSpan {
                    file: file.to_string(),
                    line: 1,
                    column: 1,
                },
                message: "port-to-port assign requires a BUF cell in the library".into(),
            });
        }
        let name = netlist.fresh_instance_name(&format!("{port_net}__alias"));
        let source = root(&alias_of, &source);
        netlist.add_instance(Instance::new(name, "BUF").pin("A", source).pin("Y", port_net));
    }

    // Drop fully aliased-away wire nets.
    let aliased: Vec<String> = alias_of.keys().cloned().collect();
    for name in aliased {
        netlist.nets.remove(&name);
    }

    infer_clock_ports(&mut netlist, lib);
    Ok(netlist)
}

/// Parses structural Verilog with `<verilog>` as the span file name.
pub fn parse_verilog(text: &str, lib: &CellLibrary) -> Result<Netlist, ParseError> {
    parse_verilog_named("<verilog>", text, lib)
}

fn parse_net_ref(parser: &mut Parser<'_>) -> Result<(NetRef, SpannedTok), ParseError> {
    let tok = parser.next()?;
    match &tok.tok {
        Tok::ConstBit(b) => {
            let b = *b;
            Ok((NetRef::Const(b), tok))
        }
        Tok::Ident(name) => {
            let mut name = name.clone();
            if parser.peek()?.tok == Tok::Punct('[') {
                parser.next()?;
                let idx_tok = parser.next()?;
                let Tok::Number(idx) = idx_tok.tok else {
                    return Err(parser.err_at(&idx_tok, "expected bit index"));
                };
                parser.expect_punct(']')?;
                name = format!("{name}[{idx}]");
            }
            Ok((NetRef::Name(name), tok))
        }
        other => Err(parser.err_at(&tok, format!("expected net, found {}", show(other)))),
    }
}

/// Walks backward from `net` through single-input buffer/inverter chains to
/// the root driver. Returns the root net.
fn buf_chain_root(netlist: &Netlist, lib: &CellLibrary, index: &Index, net: &str) -> String {
    let mut current = net.to_string();
    let mut guard = 0;
    loop {
        guard += 1;
        if guard > netlist.instances.len() + 2 {
            return current;
        }
        match index.driver_of.get(&current) {
            Some(Driver::Pin(i, _)) => {
                let inst = &netlist.instances[*i];
                let Some(kind) = lib.kind(&inst.kind) else {
                    return current;
                };
                let is_buf_like = kind.is_comb() && kind.input_pins().count() == 1;
                if !is_buf_like {
                    return current;
                }
                let input_pin = kind.input_pins().next().unwrap();
                match inst.pins.get(&input_pin.name) {
                    Some(n) => current = n.clone(),
                    None => return current,
                }
            }
            _ => return current,
        }
    }
}

fn is_and2(kind: &crate::library::CellKind) -> bool {
    kind.is_and2_like()
}

/// Marks clock-kind ports by structure, as described in the module docs.
fn infer_clock_ports(netlist: &mut Netlist, lib: &CellLibrary) {
    let index = Index::build(netlist, lib);
    let mut clock_ports: HashSet<String> = HashSet::new();

    // Rule 1: sequential clock pins reached through buffers/inverters.
    let mut gate_outputs: Vec<usize> = Vec::new();
    for inst in &netlist.instances {
        let Some(kind) = lib.kind(&inst.kind) else {
            continue;
        };
        if !kind.is_sequential() {
            continue;
        }
        let Some(clock_pin) = kind.clock_pin() else {
            continue;
        };
        let Some(net) = inst.pins.get(&clock_pin.name) else {
            continue;
        };
        let rootn = buf_chain_root(netlist, lib, &index, net);
        match index.driver_of.get(&rootn) {
            Some(Driver::InputPort(_)) => {
                clock_ports.insert(rootn);
            }
            Some(Driver::Pin(i, _)) => {
                let inst = &netlist.instances[*i];
                if lib.kind(&inst.kind).is_some_and(is_and2) {
                    gate_outputs.push(*i);
                }
            }
            _ => {}
        }
    }

    // Rule 2: clock gates. The side of the AND driven by a port (with the
    // other side driven by an instance) is the clock side.
    for i in gate_outputs {
        let inst = &netlist.instances[i];
        let kind = lib.kind(&inst.kind).unwrap();
        let mut port_sides: Vec<String> = Vec::new();
        let mut nonport_sides = 0usize;
        for pin in kind.input_pins() {
            let Some(net) = inst.pins.get(&pin.name) else {
                continue;
            };
            let rootn = buf_chain_root(netlist, lib, &index, net);
            match index.driver_of.get(&rootn) {
                Some(Driver::InputPort(_)) => port_sides.push(rootn),
                _ => nonport_sides += 1,
            }
        }
        let already = port_sides.iter().any(|p| clock_ports.contains(p));
        if !already && port_sides.len() == 1 && nonport_sides >= 1 {
            clock_ports.insert(port_sides.pop().unwrap());
        }
    }

    for port in &mut netlist.ports {
        if clock_ports.contains(&port.name) {
            port.kind = PortKind::Clock;
        }
    }
}

fn needs_escape(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return true,
    }
    !name
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$')
}

fn emit_ident(name: &str) -> String {
    if needs_escape(name) {
        format!("\\{name} ")
    } else {
        name.to_string()
    }
}

/// Emits a netlist as structural Verilog. Deterministic: ports in declaration
/// order, wires and instances sorted by name, pins sorted within each
/// instance. Constant nets appear as 1'b0 / 1'b1 literals.
pub fn emit_verilog(netlist: &Netlist) -> String {
    let mut out = String::new();
    let header: Vec<String> = netlist.ports.iter().map(|p| emit_ident(&p.name)).collect();
    out.push_str(&format!(
        "module {} ({});\n",
        emit_ident(&netlist.name),
        header.join(", ")
    ));
    for port in &netlist.ports {
        let dir = match port.dir {
            PortDir::Input => "input",
            PortDir::Output => "output",
        };
        out.push_str(&format!("  {dir} {};\n", emit_ident(&port.name)));
    }
    let port_names: HashSet<&str> = netlist.ports.iter().map(|p| p.name.as_str()).collect();
    for net in &netlist.nets {
        if port_names.contains(net.as_str()) || netlist.is_const(net).is_some() {
            continue;
        }
        out.push_str(&format!("  wire {};\n", emit_ident(net)));
    }
    out.push('\n');
    let mut instances: Vec<&Instance> = netlist.instances.iter().collect();
    instances.sort_by(|a, b| a.name.cmp(&b.name));
    for inst in instances {
        let conns: Vec<String> = inst
            .pins
            .iter()
            .map(|(pin, net)| {
                let net_text = match netlist.is_const(net) {
                    Some(false) => "1'b0".to_string(),
                    Some(true) => "1'b1".to_string(),
                    None => emit_ident(net),
                };
                format!(".{}({})", emit_ident(pin), net_text)
            })
            .collect();
        out.push_str(&format!(
            "  {} {} ({});\n",
            emit_ident(&inst.kind),
            emit_ident(&inst.name),
            conns.join(", ")
        ));
    }
    out.push_str("endmodule\n");
    out
}
