//! Minimal pickle reader for RHD-style annotation archives: protocol ≤ 4
//! structural opcodes plus the handful of reduce hooks numpy uses to embed
//! arrays (`_reconstruct`/`dtype`/`scalar`, and the `_codecs.encode` detour
//! Python 3 takes for byte strings at protocol 2).
//!
//! This is a data decoder, not a pickle VM: any callable outside that
//! allowlist is an error, so untrusted files cannot smuggle surprises in.

use anyhow::{anyhow, bail, ensure, Context, Result};
use byteorder::{BigEndian, ByteOrder, LittleEndian};
use ndarray::{ArrayD, ShapeBuilder};
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Bytes(Vec<u8>),
    Str(String),
    List(Vec<Value>),
    Tuple(Vec<Value>),
    /// Insertion-ordered key/value pairs; RHD keys are sample indices.
    Dict(Vec<(Value, Value)>),
    /// An imported module attribute, resolved only when reduced.
    Global(String, String),
    /// numpy dtype descriptor.
    Dtype(DtypeInfo),
    /// `_reconstruct` output before its BUILD fills in the contents.
    ArrayStub,
    Array(PickleArray),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtypeInfo {
    /// Kind + item size, e.g. "f8", "i4", "u1".
    pub descr: String,
    pub little_endian: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PickleArray {
    pub shape: Vec<usize>,
    pub dtype: DtypeInfo,
    pub fortran: bool,
    pub data: Vec<u8>,
}

impl PickleArray {
    pub fn item_size(&self) -> Result<usize> {
        self.dtype.descr[1..]
            .parse::<usize>()
            .with_context(|| format!("dtype {:?} has no item size", self.dtype.descr))
    }

    /// Decodes into an f64 array in standard (C) layout.
    pub fn to_f64(&self) -> Result<ArrayD<f64>> {
        let item = self.item_size()?;
        let count: usize = self.shape.iter().product();
        ensure!(
            self.data.len() == count * item,
            "array data holds {} bytes, shape {:?} at {item}-byte items needs {}",
            self.data.len(),
            self.shape,
            count * item
        );
        let kind = self.dtype.descr.as_bytes()[0];
        let le = self.dtype.little_endian;
        let mut flat = Vec::with_capacity(count);
        for chunk in self.data.chunks_exact(item.max(1)) {
            flat.push(decode_item(kind, item, le, chunk)?);
        }
        let array = if self.fortran {
            ArrayD::from_shape_vec(self.shape.clone().f(), flat)?
                .as_standard_layout()
                .to_owned()
        } else {
            ArrayD::from_shape_vec(self.shape.clone(), flat)?
        };
        Ok(array)
    }
}

fn decode_item(kind: u8, item: usize, le: bool, chunk: &[u8]) -> Result<f64> {
    let value = match (kind, item) {
        (b'f', 8) => {
            if le { LittleEndian::read_f64(chunk) } else { BigEndian::read_f64(chunk) }
        }
        (b'f', 4) => {
            f64::from(if le { LittleEndian::read_f32(chunk) } else { BigEndian::read_f32(chunk) })
        }
        (b'i', 8) => {
            (if le { LittleEndian::read_i64(chunk) } else { BigEndian::read_i64(chunk) }) as f64
        }
        (b'i', 4) => {
            f64::from(if le { LittleEndian::read_i32(chunk) } else { BigEndian::read_i32(chunk) })
        }
        (b'i', 2) => {
            f64::from(if le { LittleEndian::read_i16(chunk) } else { BigEndian::read_i16(chunk) })
        }
        (b'u', 1) | (b'b', 1) => f64::from(chunk[0]),
        _ => bail!("unsupported dtype kind {}{item}", kind as char),
    };
    Ok(value)
}

impl Value {
    pub fn dict(&self) -> Result<&[(Value, Value)]> {
        match self {
            Value::Dict(pairs) => Ok(pairs),
            other => Err(anyhow!("expected dict, found {}", other.kind())),
        }
    }

    pub fn get_int_key(&self, key: i64) -> Option<&Value> {
        self.dict().ok()?.iter().find_map(|(k, v)| match k {
            Value::Int(i) if *i == key => Some(v),
            _ => None,
        })
    }

    pub fn get_str_key(&self, key: &str) -> Option<&Value> {
        self.dict().ok()?.iter().find_map(|(k, v)| match k {
            Value::Str(s) if s == key => Some(v),
            Value::Bytes(b) if b.as_slice() == key.as_bytes() => Some(v),
            _ => None,
        })
    }

    pub fn array(&self) -> Result<&PickleArray> {
        match self {
            Value::Array(a) => Ok(a),
            other => Err(anyhow!("expected numpy array, found {}", other.kind())),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Value::None => "none",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Bytes(_) => "bytes",
            Value::Str(_) => "str",
            Value::List(_) => "list",
            Value::Tuple(_) => "tuple",
            Value::Dict(_) => "dict",
            Value::Global(_, _) => "global",
            Value::Dtype(_) => "dtype",
            Value::ArrayStub => "array stub",
            Value::Array(_) => "array",
        }
    }
}

pub fn loads(bytes: &[u8]) -> Result<Value> {
    Machine::new(bytes).run()
}

struct Machine<'a> {
    input: &'a [u8],
    pos: usize,
    stack: Vec<Value>,
    marks: Vec<usize>,
    memo: HashMap<u32, Value>,
    /// Memo keys whose value still awaits its BUILD. CPython memoizes a
    /// reference and BUILD mutates it in place; with owned values the memo
    /// copy must be patched when BUILD runs, or a shared array (or dtype)
    /// fetched later via BINGET would come back as an unfilled stub.
    /// BUILDs nest (an array's dtype is built inside the array's own
    /// memoize→build window), hence a stack.
    pending_build: Vec<u32>,
}

impl<'a> Machine<'a> {
    fn new(input: &'a [u8]) -> Self {
        Machine {
            input,
            pos: 0,
            stack: Vec::new(),
            marks: Vec::new(),
            memo: HashMap::new(),
            pending_build: Vec::new(),
        }
    }

    fn memoize(&mut self, n: u32) -> Result<()> {
        let top = self.top()?.clone();
        if matches!(top, Value::ArrayStub | Value::Dtype(_)) {
            self.pending_build.push(n);
        }
        self.memo.insert(n, top);
        Ok(())
    }

    fn run(mut self) -> Result<Value> {
        loop {
            let at = self.pos;
            let op = self.u8().context("unexpected end of pickle stream")?;
            match op {
                0x80 => {
                    let proto = self.u8()?;
                    ensure!(proto <= 5, "pickle protocol {proto} not supported");
                }
                0x95 => {
                    self.take(8)?; // FRAME length: framing is advisory
                }
                b'(' => self.marks.push(self.stack.len()),
                b'.' => {
                    let value = self.pop()?;
                    ensure!(self.stack.is_empty(), "STOP left values on the stack");
                    return Ok(value);
                }
                b'0' => {
                    self.pop()?;
                }
                b'N' => self.stack.push(Value::None),
                0x88 => self.stack.push(Value::Bool(true)),
                0x89 => self.stack.push(Value::Bool(false)),
                b'J' => {
                    let raw = self.take(4)?;
                    self.stack.push(Value::Int(i64::from(LittleEndian::read_i32(raw))));
                }
                b'K' => {
                    let v = self.u8()?;
                    self.stack.push(Value::Int(i64::from(v)));
                }
                b'M' => {
                    let raw = self.take(2)?;
                    self.stack.push(Value::Int(i64::from(LittleEndian::read_u16(raw))));
                }
                0x8a => {
                    let n = self.u8()? as usize;
                    let raw = self.take(n)?.to_vec();
                    self.stack.push(Value::Int(long1_to_i64(&raw)?));
                }
                b'G' => {
                    let raw = self.take(8)?;
                    self.stack.push(Value::Float(BigEndian::read_f64(raw)));
                }
                b'U' => {
                    let n = self.u8()? as usize;
                    let raw = self.take(n)?.to_vec();
                    self.stack.push(Value::Bytes(raw));
                }
                b'T' => {
                    let n = LittleEndian::read_i32(self.take(4)?);
                    ensure!(n >= 0, "negative BINSTRING length");
                    let raw = self.take(n as usize)?.to_vec();
                    self.stack.push(Value::Bytes(raw));
                }
                b'C' => {
                    let n = self.u8()? as usize;
                    let raw = self.take(n)?.to_vec();
                    self.stack.push(Value::Bytes(raw));
                }
                b'B' => {
                    let n = LittleEndian::read_u32(self.take(4)?) as usize;
                    let raw = self.take(n)?.to_vec();
                    self.stack.push(Value::Bytes(raw));
                }
                0x8e => {
                    let n = LittleEndian::read_u64(self.take(8)?) as usize;
                    let raw = self.take(n)?.to_vec();
                    self.stack.push(Value::Bytes(raw));
                }
                b'X' => {
                    let n = LittleEndian::read_u32(self.take(4)?) as usize;
                    let raw = self.take(n)?;
                    self.stack.push(Value::Str(std::str::from_utf8(raw)?.to_string()));
                }
                0x8c => {
                    let n = self.u8()? as usize;
                    let raw = self.take(n)?;
                    self.stack.push(Value::Str(std::str::from_utf8(raw)?.to_string()));
                }
                b']' => self.stack.push(Value::List(Vec::new())),
                b')' => self.stack.push(Value::Tuple(Vec::new())),
                b'}' => self.stack.push(Value::Dict(Vec::new())),
                b't' => {
                    let items = self.pop_to_mark()?;
                    self.stack.push(Value::Tuple(items));
                }
                0x85 => {
                    let a = self.pop()?;
                    self.stack.push(Value::Tuple(vec![a]));
                }
                0x86 => {
                    let b = self.pop()?;
                    let a = self.pop()?;
                    self.stack.push(Value::Tuple(vec![a, b]));
                }
                0x87 => {
                    let c = self.pop()?;
                    let b = self.pop()?;
                    let a = self.pop()?;
                    self.stack.push(Value::Tuple(vec![a, b, c]));
                }
                b'l' => {
                    let items = self.pop_to_mark()?;
                    self.stack.push(Value::List(items));
                }
                b'a' => {
                    let item = self.pop()?;
                    match self.top_mut()? {
                        Value::List(items) => items.push(item),
                        other => bail!("APPEND onto {}", other.kind()),
                    }
                }
                b'e' => {
                    let items = self.pop_to_mark()?;
                    match self.top_mut()? {
                        Value::List(list) => list.extend(items),
                        other => bail!("APPENDS onto {}", other.kind()),
                    }
                }
                b'd' => {
                    let items = self.pop_to_mark()?;
                    ensure!(items.len() % 2 == 0, "DICT needs key/value pairs");
                    let mut pairs = Vec::with_capacity(items.len() / 2);
                    let mut it = items.into_iter();
                    while let (Some(k), Some(v)) = (it.next(), it.next()) {
                        pairs.push((k, v));
                    }
                    self.stack.push(Value::Dict(pairs));
                }
                b's' => {
                    let v = self.pop()?;
                    let k = self.pop()?;
                    match self.top_mut()? {
                        Value::Dict(pairs) => pairs.push((k, v)),
                        other => bail!("SETITEM onto {}", other.kind()),
                    }
                }
                b'u' => {
                    let items = self.pop_to_mark()?;
                    ensure!(items.len() % 2 == 0, "SETITEMS needs key/value pairs");
                    match self.top_mut()? {
                        Value::Dict(pairs) => {
                            let mut it = items.into_iter();
                            while let (Some(k), Some(v)) = (it.next(), it.next()) {
                                pairs.push((k, v));
                            }
                        }
                        other => bail!("SETITEMS onto {}", other.kind()),
                    }
                }
                b'q' => {
                    let n = u32::from(self.u8()?);
                    self.memoize(n)?;
                }
                b'r' => {
                    let n = LittleEndian::read_u32(self.take(4)?);
                    self.memoize(n)?;
                }
                0x94 => {
                    let n = self.memo.len() as u32;
                    self.memoize(n)?;
                }
                b'h' => {
                    let n = u32::from(self.u8()?);
                    self.push_memo(n)?;
                }
                b'j' => {
                    let n = LittleEndian::read_u32(self.take(4)?);
                    self.push_memo(n)?;
                }
                b'c' => {
                    let module = self.line()?;
                    let name = self.line()?;
                    self.stack.push(Value::Global(module, name));
                }
                0x93 => {
                    let name = self.pop()?;
                    let module = self.pop()?;
                    match (module, name) {
                        (Value::Str(m), Value::Str(n)) => self.stack.push(Value::Global(m, n)),
                        _ => bail!("STACK_GLOBAL expects two strings"),
                    }
                }
                b'R' => {
                    let args = self.pop()?;
                    let callable = self.pop()?;
                    let value = reduce(callable, args)
                        .with_context(|| format!("REDUCE at offset {at}"))?;
                    self.stack.push(value);
                }
                b'b' => {
                    let state = self.pop()?;
                    let obj = self.pop()?;
                    let value = build(obj.clone(), state)
                        .with_context(|| format!("BUILD at offset {at}"))?;
                    if let Some(key) = self.pending_build.pop() {
                        if self.memo.get(&key) == Some(&obj) {
                            self.memo.insert(key, value.clone());
                        }
                    }
                    self.stack.push(value);
                }
                other => bail!("unsupported pickle opcode 0x{other:02x} at offset {at}"),
            }
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(self.pos + n <= self.input.len(), "pickle stream truncated");
        let slice = &self.input[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn line(&mut self) -> Result<String> {
        let start = self.pos;
        while self.pos < self.input.len() && self.input[self.pos] != b'\n' {
            self.pos += 1;
        }
        ensure!(self.pos < self.input.len(), "unterminated text line in pickle");
        let text = std::str::from_utf8(&self.input[start..self.pos])?.to_string();
        self.pos += 1;
        Ok(text)
    }

    fn pop(&mut self) -> Result<Value> {
        if let Some(limit) = self.marks.last() {
            ensure!(self.stack.len() > *limit, "pop crossed a MARK");
        }
        self.stack.pop().ok_or_else(|| anyhow!("pickle stack underflow"))
    }

    fn top(&self) -> Result<&Value> {
        self.stack.last().ok_or_else(|| anyhow!("pickle stack underflow"))
    }

    fn top_mut(&mut self) -> Result<&mut Value> {
        self.stack.last_mut().ok_or_else(|| anyhow!("pickle stack underflow"))
    }

    fn pop_to_mark(&mut self) -> Result<Vec<Value>> {
        let mark = self.marks.pop().ok_or_else(|| anyhow!("no MARK on stack"))?;
        Ok(self.stack.split_off(mark))
    }

    fn push_memo(&mut self, n: u32) -> Result<()> {
        let value =
            self.memo.get(&n).ok_or_else(|| anyhow!("memo slot {n} never written"))?.clone();
        self.stack.push(value);
        Ok(())
    }
}

fn long1_to_i64(raw: &[u8]) -> Result<i64> {
    ensure!(raw.len() <= 8, "LONG1 with {} bytes exceeds i64", raw.len());
    if raw.is_empty() {
        return Ok(0);
    }
    let negative = raw[raw.len() - 1] & 0x80 != 0;
    let fill = if negative { 0xffu8 } else { 0 };
    let mut bytes = [fill; 8];
    bytes[..raw.len()].copy_from_slice(raw);
    Ok(i64::from_le_bytes(bytes))
}

fn is_multiarray(module: &str) -> bool {
    module == "numpy.core.multiarray" || module == "numpy._core.multiarray"
}

fn reduce(callable: Value, args: Value) -> Result<Value> {
    let Value::Global(module, name) = &callable else {
        bail!("REDUCE of non-global {}", callable.kind());
    };
    let Value::Tuple(args) = args else {
        bail!("REDUCE args must be a tuple");
    };
    match (module.as_str(), name.as_str()) {
        ("_codecs", "encode") => {
            let [Value::Str(text), Value::Str(codec)] = args.as_slice() else {
                bail!("_codecs.encode expects (str, str)");
            };
            ensure!(codec == "latin1" || codec == "latin-1", "unsupported codec {codec}");
            let mut bytes = Vec::with_capacity(text.len());
            for ch in text.chars() {
                let code = ch as u32;
                ensure!(code <= 0xff, "latin-1 byte out of range: {code}");
                bytes.push(code as u8);
            }
            Ok(Value::Bytes(bytes))
        }
        (m, "_reconstruct") if is_multiarray(m) => Ok(Value::ArrayStub),
        ("numpy", "dtype") => {
            // Python 3 writes the descriptor as unicode, Python 2 as a str
            // that decodes to raw bytes; accept both spellings.
            let descr = match args.first() {
                Some(Value::Str(s)) => s.clone(),
                Some(Value::Bytes(b)) => std::str::from_utf8(b)?.to_string(),
                _ => bail!("numpy.dtype expects a descriptor string"),
            };
            let (little_endian, descr) = match descr.as_bytes().first() {
                Some(b'<') | Some(b'=') | Some(b'|') => (true, descr[1..].to_string()),
                Some(b'>') => (false, descr[1..].to_string()),
                _ => (true, descr),
            };
            Ok(Value::Dtype(DtypeInfo { descr, little_endian }))
        }
        (m, "scalar") if is_multiarray(m) => {
            let [Value::Dtype(dtype), Value::Bytes(data)] = args.as_slice() else {
                bail!("numpy scalar expects (dtype, bytes)");
            };
            let kind = dtype.descr.as_bytes()[0];
            let item = dtype.descr[1..].parse::<usize>()?;
            ensure!(data.len() == item, "scalar data length mismatch");
            Ok(Value::Float(decode_item(kind, item, dtype.little_endian, data)?))
        }
        _ => bail!("pickle calls unsupported global {module}.{name}"),
    }
}

fn build(obj: Value, state: Value) -> Result<Value> {
    match obj {
        Value::Dtype(mut info) => {
            // State tuple: (version, byteorder, subdescr, names, fields,
            // elsize, alignment, flags); only the byte order matters here.
            if let Value::Tuple(items) = &state {
                if let Some(Value::Str(order)) = items.get(1) {
                    match order.as_str() {
                        ">" => info.little_endian = false,
                        "<" | "=" | "|" => info.little_endian = true,
                        other => bail!("unknown dtype byte order {other:?}"),
                    }
                }
            }
            Ok(Value::Dtype(info))
        }
        Value::ArrayStub => {
            let Value::Tuple(items) = state else {
                bail!("ndarray BUILD state must be a tuple");
            };
            ensure!(items.len() == 5, "ndarray BUILD state needs 5 fields");
            let Value::Tuple(shape_items) = &items[1] else {
                bail!("ndarray shape must be a tuple");
            };
            let mut shape = Vec::with_capacity(shape_items.len());
            for item in shape_items {
                match item {
                    Value::Int(n) if *n >= 0 => shape.push(*n as usize),
                    other => bail!("bad shape entry {}", other.kind()),
                }
            }
            let Value::Dtype(dtype) = &items[2] else {
                bail!("ndarray BUILD state missing dtype");
            };
            let fortran = matches!(items[3], Value::Bool(true));
            let Value::Bytes(data) = &items[4] else {
                bail!("ndarray data must be bytes, found {}", items[4].kind());
            };
            Ok(Value::Array(PickleArray {
                shape,
                dtype: dtype.clone(),
                fortran,
                data: data.clone(),
            }))
        }
        other => bail!("BUILD of unsupported object {}", other.kind()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Byte-stream builder so the opcode tests read as a script.
    struct P(Vec<u8>);

    impl P {
        fn new() -> Self {
            P(vec![0x80, 2])
        }
        fn op(mut self, byte: u8) -> Self {
            self.0.push(byte);
            self
        }
        fn raw(mut self, bytes: &[u8]) -> Self {
            self.0.extend_from_slice(bytes);
            self
        }
        fn int(self, v: u8) -> Self {
            self.op(b'K').op(v)
        }
        fn float(self, v: f64) -> Self {
            let mut p = self.op(b'G');
            p.0.extend_from_slice(&v.to_be_bytes());
            p
        }
        fn short_str(self, s: &str) -> Self {
            self.op(b'U').op(s.len() as u8).raw(s.as_bytes())
        }
        fn global(self, module: &str, name: &str) -> Self {
            self.op(b'c').raw(module.as_bytes()).op(b'\n').raw(name.as_bytes()).op(b'\n')
        }
        fn done(self) -> Vec<u8> {
            let mut bytes = self.0;
            bytes.push(b'.');
            bytes
        }
    }

    #[test]
    fn decodes_a_flat_dict() {
        // {1: 2.5, 2: True} built with SETITEM.
        let stream = P::new()
            .op(b'}')
            .raw(&[b'q', 0])
            .int(1)
            .float(2.5)
            .op(b's')
            .int(2)
            .op(0x88)
            .op(b's')
            .done();
        let value = loads(&stream).unwrap();
        assert_eq!(value.get_int_key(1), Some(&Value::Float(2.5)));
        assert_eq!(value.get_int_key(2), Some(&Value::Bool(true)));
    }

    #[test]
    fn decodes_marked_collections_and_memo() {
        // [10, (1, 2), <memo copy of the list>] via MARK/APPENDS and BINGET.
        let stream = P::new()
            .raw(&[b']', b'q', 0])
            .op(b'(')
            .int(10)
            .int(1)
            .int(2)
            .op(0x86)
            .raw(&[b'q', 1])
            .raw(&[b'h', 0])
            .op(b'e')
            .done();
        let value = loads(&stream).unwrap();
        let Value::List(items) = &value else { panic!("expected list") };
        assert_eq!(items.len(), 3);
        assert_eq!(items[0], Value::Int(10));
        assert_eq!(items[1], Value::Tuple(vec![Value::Int(1), Value::Int(2)]));
        // BINGET copied the list while it was still empty.
        assert_eq!(items[2], Value::List(vec![]));
    }

    #[test]
    fn decodes_an_ndarray_via_reconstruct_and_build() {
        // _reconstruct(ndarray, (0,), b'b') then BUILD with state
        // (1, (2, 2), dtype('<f8'), False, data) — the layout numpy emits.
        let data: Vec<u8> =
            [1.0f64, 2.0, 3.0, 4.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        let mut p = P::new()
            .global("numpy.core.multiarray", "_reconstruct")
            .global("numpy", "ndarray")
            .int(0)
            .op(0x85)
            .short_str("b")
            .op(0x87)
            .op(b'R')
            .op(b'(')
            .int(1)
            .int(2)
            .int(2)
            .op(0x86)
            .global("numpy", "dtype")
            .short_str("<f8")
            .op(0x89)
            .op(0x89)
            .op(0x87)
            .op(b'R')
            .op(0x89)
            .op(b'T');
        p = p.raw(&(data.len() as i32).to_le_bytes()).raw(&data);
        let stream = p.op(b't').op(b'b').done();
        let value = loads(&stream).unwrap();
        let array = value.array().unwrap().to_f64().unwrap();
        assert_eq!(array.shape(), &[2, 2]);
        assert_eq!(array[[0, 0]], 1.0);
        assert_eq!(array[[0, 1]], 2.0);
        assert_eq!(array[[1, 1]], 4.0);
    }

    #[test]
    fn fortran_order_is_transposed_to_standard() {
        let array = PickleArray {
            shape: vec![2, 3],
            dtype: DtypeInfo { descr: "f8".into(), little_endian: true },
            fortran: true,
            data: [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect(),
        };
        let decoded = array.to_f64().unwrap();
        // Column-major [1..6] over (2,3) reads back as [[1,3,5],[2,4,6]].
        assert_eq!(decoded[[0, 0]], 1.0);
        assert_eq!(decoded[[0, 1]], 3.0);
        assert_eq!(decoded[[1, 0]], 2.0);
        assert_eq!(decoded[[1, 2]], 6.0);
    }

    #[test]
    fn latin1_encode_detour_yields_bytes() {
        // _codecs.encode('\x00\xff', 'latin1') via STACK_GLOBAL, the shape
        // Python 3 writes for protocol-2 byte strings.
        let text = "\u{0}\u{ff}";
        let mut s = vec![0x80u8, 4];
        s.extend_from_slice(&[0x8c, 7]);
        s.extend_from_slice(b"_codecs");
        s.extend_from_slice(&[0x8c, 6]);
        s.extend_from_slice(b"encode");
        s.push(0x93);
        s.extend_from_slice(&[0x8c, text.len() as u8]);
        s.extend_from_slice(text.as_bytes());
        s.extend_from_slice(&[0x8c, 6]);
        s.extend_from_slice(b"latin1");
        s.push(0x86);
        s.push(b'R');
        s.push(b'.');
        let value = loads(&s).unwrap();
        assert_eq!(value, Value::Bytes(vec![0x00, 0xff]));
    }

    #[test]
    fn long1_covers_negative_and_wide_integers() {
        let stream = P::new().raw(&[0x8a, 2, 0x18, 0xfc]).done(); // -1000
        assert_eq!(loads(&stream).unwrap(), Value::Int(-1000));
        let stream = P::new().raw(&[0x8a, 0]).done();
        assert_eq!(loads(&stream).unwrap(), Value::Int(0));
    }

    #[test]
    fn unknown_globals_and_opcodes_are_refused() {
        let stream = P::new()
            .global("os", "system")
            .short_str("ls")
            .op(0x85)
            .op(b'R')
            .done();
        let err = loads(&stream).unwrap_err();
        assert!(format!("{err:#}").contains("os.system"), "{err:#}");

        assert!(loads(&[0x80, 2, 0x7f, b'.']).is_err());
        assert!(loads(&[0x80, 2]).is_err());
    }
}
