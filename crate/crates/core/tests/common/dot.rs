//! Minimal DOT reader: enough of the grammar for `digraph { ... }` bodies
//! made of node and edge statements with attribute lists.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Id(String),
    Arrow,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Eq,
    Comma,
    Semi,
}

fn lex(src: &str) -> Result<Vec<Tok>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    let mut out = Vec::new();
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '{' => {
                out.push(Tok::LBrace);
                i += 1
            }
            '}' => {
                out.push(Tok::RBrace);
                i += 1
            }
            '[' => {
                out.push(Tok::LBracket);
                i += 1
            }
            ']' => {
                out.push(Tok::RBracket);
                i += 1
            }
            '=' => {
                out.push(Tok::Eq);
                i += 1
            }
            ',' => {
                out.push(Tok::Comma);
                i += 1
            }
            ';' => {
                out.push(Tok::Semi);
                i += 1
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                out.push(Tok::Arrow);
                i += 2
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err("unterminated string".into()),
                        Some('\\') => {
                            s.push(*chars.get(i + 1).ok_or("dangling escape")?);
                            i += 2;
                        }
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                out.push(Tok::Id(s));
            }
            c if c.is_alphanumeric() || c == '_' || c == '.' || c == '-' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                    i += 1;
                }
                if i == start {
                    return Err(format!("unexpected '{c}'"));
                }
                out.push(Tok::Id(chars[start..i].iter().collect()));
            }
            other => return Err(format!("unexpected '{other}'")),
        }
    }
    Ok(out)
}

#[derive(Debug, Default)]
pub struct DotGraph {
    pub nodes: BTreeMap<String, BTreeMap<String, String>>,
    pub edges: Vec<(String, String)>,
}

impl DotGraph {
    pub fn is_acyclic(&self) -> bool {
        let mut indeg: BTreeMap<&str, usize> = self.nodes.keys().map(|k| (k.as_str(), 0)).collect();
        for (a, b) in &self.edges {
            indeg.entry(a).or_insert(0);
            *indeg.entry(b).or_insert(0) += 1;
        }
        let mut ready: Vec<&str> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&k, _)| k).collect();
        let mut seen = 0;
        while let Some(n) = ready.pop() {
            seen += 1;
            for (a, b) in &self.edges {
                if a == n {
                    let d = indeg.get_mut(b.as_str()).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        ready.push(b);
                    }
                }
            }
        }
        seen == indeg.len()
    }

    pub fn attr(&self, node: &str, key: &str) -> Option<&str> {
        self.nodes.get(node)?.get(key).map(String::as_str)
    }
}

pub fn parse(src: &str) -> Result<DotGraph, String> {
    let toks = lex(src)?;
    let mut p = 0;
    let expect = |p: &mut usize, t: Tok| -> Result<(), String> {
        if toks.get(*p) == Some(&t) {
            *p += 1;
            Ok(())
        } else {
            Err(format!("expected {t:?} at token {p}, found {:?}", toks.get(*p)))
        }
    };
    match toks.get(p) {
        Some(Tok::Id(k)) if k == "digraph" => p += 1,
        other => return Err(format!("expected digraph, found {other:?}")),
    }
    if let Some(Tok::Id(_)) = toks.get(p) {
        p += 1;
    }
    expect(&mut p, Tok::LBrace)?;
    let mut g = DotGraph::default();
    loop {
        match toks.get(p) {
            Some(Tok::RBrace) => {
                p += 1;
                break;
            }
            Some(Tok::Semi) => p += 1,
            Some(Tok::Id(first)) => {
                let mut chain = vec![first.clone()];
                p += 1;
                while toks.get(p) == Some(&Tok::Arrow) {
                    p += 1;
                    match toks.get(p) {
                        Some(Tok::Id(next)) => chain.push(next.clone()),
                        other => return Err(format!("edge target expected, found {other:?}")),
                    }
                    p += 1;
                }
                let mut attrs = BTreeMap::new();
                if toks.get(p) == Some(&Tok::LBracket) {
                    p += 1;
                    loop {
                        match toks.get(p) {
                            Some(Tok::RBracket) => {
                                p += 1;
                                break;
                            }
                            Some(Tok::Comma) | Some(Tok::Semi) => p += 1,
                            Some(Tok::Id(k)) => {
                                let key = k.clone();
                                p += 1;
                                expect(&mut p, Tok::Eq)?;
                                match toks.get(p) {
                                    Some(Tok::Id(v)) => {
                                        attrs.insert(key, v.clone());
                                        p += 1;
                                    }
                                    other => return Err(format!("attribute value expected, found {other:?}")),
                                }
                            }
                            other => return Err(format!("bad attribute list at {other:?}")),
                        }
                    }
                }
                if chain.len() == 1 {
                    g.nodes.entry(chain.pop().unwrap()).or_default().extend(attrs);
                } else {
                    for w in chain.windows(2) {
                        g.nodes.entry(w[0].clone()).or_default();
                        g.nodes.entry(w[1].clone()).or_default();
                        g.edges.push((w[0].clone(), w[1].clone()));
                    }
                }
            }
            other => return Err(format!("unexpected {other:?}")),
        }
    }
    if p != toks.len() {
        return Err("trailing tokens after graph".into());
    }
    Ok(g)
}
