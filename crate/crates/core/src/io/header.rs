//! Whitespace-separated ASCII headers shared by the Netpbm-style formats.

use crate::error::{Error, Result};

pub(crate) struct Header<'a> {
    bytes: &'a [u8],
    pub pos: usize,
    /// `#` comment lines seen so far, without the marker.
    pub comments: Vec<String>,
}

impl<'a> Header<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self {
            bytes,
            pos: 0,
            comments: Vec::new(),
        }
    }

    pub fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_space(&mut self, comments: bool) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if comments && b == b'#' {
                let start = self.pos + 1;
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                let text = String::from_utf8_lossy(&self.bytes[start..self.pos]);
                self.comments.push(text.trim().to_string());
            } else {
                break;
            }
        }
    }

    /// Next token; `comments` enables `#` line comments before it.
    pub fn token(&mut self, comments: bool) -> Result<&'a str> {
        self.skip_space(comments);
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("unexpected end of header");
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).or_else(|_| {
            self.pos = start;
            self.err("header token is not ASCII")
        })
    }

    pub fn number<T: std::str::FromStr>(&mut self, comments: bool, what: &str) -> Result<T> {
        self.skip_space(comments);
        let start = self.pos;
        let tok = self.token(false)?;
        tok.parse().or_else(|_| {
            self.pos = start;
            self.err(format!("invalid {what} '{tok}'"))
        })
    }

    /// Consumes the single whitespace byte that ends the header.
    pub fn end(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => self.err("header must end with one whitespace byte"),
        }
    }
}
