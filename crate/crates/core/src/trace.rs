//! Execution-trace data model, parser, serializer and validator.
//!
//! The on-disk format is documented in `docs/FORMATS.md`. Parsing is a pure
//! function of the input bytes; the resulting [`ExecutionTrace`] is immutable
//! and can be shared freely across threads.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Major schema version accepted by [`parse_trace`].
pub const SUPPORTED_SCHEMA_MAJOR: u64 = 1;

/// Opaque tensor identity. Two tensors denote the same storage iff their ids
/// are equal; the individual elements carry no meaning here.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TensorId(pub Vec<i64>);

impl TensorId {
    pub const ARITY: usize = 6;

    pub fn is_well_formed(&self) -> bool {
        self.0.len() == Self::ARITY
    }
}

impl From<[i64; 6]> for TensorId {
    fn from(v: [i64; 6]) -> Self {
        TensorId(v.to_vec())
    }
}

impl fmt::Display for TensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
    F16,
    Bf16,
    I64,
    I32,
    I8,
    U8,
    Bool,
    Unknown,
}

impl DType {
    pub const ALL: [DType; 10] = [
        DType::F32,
        DType::F64,
        DType::F16,
        DType::Bf16,
        DType::I64,
        DType::I32,
        DType::I8,
        DType::U8,
        DType::Bool,
        DType::Unknown,
    ];

    /// Maps a framework element-type name to a tag. Unrecognized names map to
    /// [`DType::Unknown`] so that traces from newer producers still load.
    pub fn from_name(name: &str) -> DType {
        match name.trim() {
            "float" | "f32" | "float32" | "Float" => DType::F32,
            "double" | "f64" | "float64" | "Double" => DType::F64,
            "c10::Half" | "half" | "f16" | "float16" | "Half" => DType::F16,
            "c10::BFloat16" | "bfloat16" | "bf16" | "BFloat16" => DType::Bf16,
            "long int" | "long" | "int64" | "i64" | "Long" => DType::I64,
            "int" | "int32" | "i32" | "Int" => DType::I32,
            "signed char" | "int8" | "i8" | "Char" => DType::I8,
            "unsigned char" | "uint8" | "u8" | "Byte" => DType::U8,
            "bool" | "Bool" => DType::Bool,
            _ => DType::Unknown,
        }
    }

    /// Element-type name as the trace producer writes it inside `Tensor(...)`.
    pub fn trace_name(self) -> &'static str {
        match self {
            DType::F32 => "float",
            DType::F64 => "double",
            DType::F16 => "c10::Half",
            DType::Bf16 => "c10::BFloat16",
            DType::I64 => "long int",
            DType::I32 => "int",
            DType::I8 => "signed char",
            DType::U8 => "unsigned char",
            DType::Bool => "bool",
            DType::Unknown => "unknown",
        }
    }

    /// Element size in bytes. Unknown element types are costed as 4 bytes.
    pub fn size_bytes(self) -> u64 {
        match self {
            DType::F64 | DType::I64 => 8,
            DType::F32 | DType::I32 | DType::Unknown => 4,
            DType::F16 | DType::Bf16 => 2,
            DType::I8 | DType::U8 | DType::Bool => 1,
        }
    }

    pub fn is_integer(self) -> bool {
        matches!(self, DType::I64 | DType::I32 | DType::I8 | DType::U8)
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
            DType::F16 => "f16",
            DType::Bf16 => "bf16",
            DType::I64 => "i64",
            DType::I32 => "i32",
            DType::I8 => "i8",
            DType::U8 => "u8",
            DType::Bool => "bool",
            DType::Unknown => "unknown",
        };
        f.write_str(s)
    }
}

/// Recorded shape slot of one argument. Tensor arguments carry `Dims`; tensor
/// lists carry one nested shape per element; other arguments carry `Dims([])`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Dims(Vec<u64>),
    Nested(Vec<Shape>),
}

impl Shape {
    pub fn empty() -> Shape {
        Shape::Dims(Vec::new())
    }

    fn to_json(&self) -> Value {
        match self {
            Shape::Dims(d) => Value::Array(d.iter().map(|&x| Value::from(x)).collect()),
            Shape::Nested(v) => Value::Array(v.iter().map(Shape::to_json).collect()),
        }
    }

    fn from_json(v: &Value) -> Result<Shape, String> {
        let arr = v.as_array().ok_or_else(|| format!("shape must be an array, got {v}"))?;
        if arr.iter().all(Value::is_number) {
            let dims = arr
                .iter()
                .map(|x| x.as_u64().ok_or_else(|| format!("bad extent {x}")))
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(Shape::Dims(dims));
        }
        if arr.iter().all(Value::is_array) {
            return arr.iter().map(Shape::from_json).collect::<Result<_, _>>().map(Shape::Nested);
        }
        Err(format!("shape mixes extents and nested shapes: {v}"))
    }
}

impl Serialize for Shape {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Shape {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Shape::from_json(&v).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorRef {
    pub id: TensorId,
    pub shape: Vec<u64>,
    pub dtype: DType,
}

impl TensorRef {
    pub fn numel(&self) -> u64 {
        self.shape.iter().product()
    }

    pub fn size_bytes(&self) -> u64 {
        self.numel() * self.dtype.size_bytes()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl Scalar {
    fn to_json(&self) -> Value {
        match self {
            Scalar::Int(i) => Value::from(*i),
            Scalar::Float(x) => Value::from(*x),
            Scalar::Bool(b) => Value::from(*b),
            Scalar::Text(s) => Value::from(s.as_str()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ArgValue {
    Scalar(Scalar),
    Tensor(TensorRef),
    List(Vec<ArgValue>),
    None,
}

impl ArgValue {
    /// Appends every tensor reachable from this argument, depth first.
    pub fn collect_tensors<'a>(&'a self, out: &mut Vec<&'a TensorRef>) {
        match self {
            ArgValue::Tensor(t) => out.push(t),
            ArgValue::List(items) => items.iter().for_each(|a| a.collect_tensors(out)),
            ArgValue::Scalar(_) | ArgValue::None => {}
        }
    }

    fn to_json(&self) -> Value {
        match self {
            ArgValue::Scalar(s) => s.to_json(),
            ArgValue::Tensor(t) => Value::Array(t.id.0.iter().map(|&x| Value::from(x)).collect()),
            ArgValue::List(items) => Value::Array(items.iter().map(ArgValue::to_json).collect()),
            ArgValue::None => Value::Null,
        }
    }
}

/// Returns the element type when `tag` names a tensor (`Tensor` or `Tensor(<elem>)`).
pub fn tensor_tag_dtype(tag: &str) -> Option<DType> {
    let tag = tag.trim();
    if tag == "Tensor" {
        return Some(DType::Unknown);
    }
    tag.strip_prefix("Tensor(").and_then(|rest| rest.strip_suffix(')')).map(DType::from_name)
}

/// Element tags of a `GenericList[a,b,...]` tag, split at top-level commas.
fn list_element_tags(tag: &str) -> Option<Vec<String>> {
    let inner = tag.trim().strip_prefix("GenericList[")?.strip_suffix(']')?;
    if inner.is_empty() {
        return Some(Vec::new());
    }
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in inner.chars() {
        match c {
            '[' | '(' => depth += 1,
            ']' | ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    out.push(cur.trim().to_string());
    Some(out)
}

fn decode_arg(value: &Value, shape: &Shape, tag: &str) -> Result<ArgValue, String> {
    if let Some(dtype) = tensor_tag_dtype(tag) {
        let ids = value.as_array().ok_or_else(|| format!("tensor argument must be an integer array, got {value}"))?;
        let id = ids
            .iter()
            .map(|x| x.as_i64().ok_or_else(|| format!("tensor id element {x} is not an integer")))
            .collect::<Result<Vec<_>, _>>()?;
        let dims = match shape {
            Shape::Dims(d) => d.clone(),
            Shape::Nested(_) => return Err("tensor argument has a nested shape".into()),
        };
        return Ok(ArgValue::Tensor(TensorRef { id: TensorId(id), shape: dims, dtype }));
    }
    Ok(match value {
        Value::Null => ArgValue::None,
        Value::Bool(b) => ArgValue::Scalar(Scalar::Bool(*b)),
        Value::Number(n) => match n.as_i64() {
            Some(i) => ArgValue::Scalar(Scalar::Int(i)),
            None => ArgValue::Scalar(Scalar::Float(n.as_f64().unwrap_or(f64::NAN))),
        },
        Value::String(s) => ArgValue::Scalar(Scalar::Text(s.clone())),
        Value::Array(items) => {
            let tags = list_element_tags(tag).filter(|t| t.len() == items.len());
            let shapes = match shape {
                Shape::Nested(v) if v.len() == items.len() => Some(v),
                _ => None,
            };
            let empty = Shape::empty();
            let mut out = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                let t = tags.as_ref().map(|t| t[i].as_str()).unwrap_or("");
                let s = shapes.map(|s| &s[i]).unwrap_or(&empty);
                out.push(decode_arg(item, s, t)?);
            }
            ArgValue::List(out)
        }
        Value::Object(_) => return Err(format!("object arguments are not supported: {value}")),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ETNode {
    pub id: u64,
    pub name: String,
    pub parent: Option<u64>,
    pub op_schema: String,
    pub inputs: Vec<ArgValue>,
    pub input_shapes: Vec<Shape>,
    pub input_types: Vec<String>,
    pub outputs: Vec<ArgValue>,
    pub output_shapes: Vec<Shape>,
    pub output_types: Vec<String>,
    /// CPU-thread label. Not part of the recorded node table; defaults to 0.
    pub tid: u32,
    pub label: Option<String>,
}

impl ETNode {
    /// A node with no arguments; handy for building traces in code.
    pub fn bare(id: u64, name: impl Into<String>, parent: Option<u64>) -> ETNode {
        ETNode {
            id,
            name: name.into(),
            parent,
            op_schema: String::new(),
            inputs: Vec::new(),
            input_shapes: Vec::new(),
            input_types: Vec::new(),
            outputs: Vec::new(),
            output_shapes: Vec::new(),
            output_types: Vec::new(),
            tid: 0,
            label: None,
        }
    }

    pub fn push_input(&mut self, arg: ArgValue) {
        let (shape, tag) = slot_for(&arg);
        self.inputs.push(arg);
        self.input_shapes.push(shape);
        self.input_types.push(tag);
    }

    pub fn push_output(&mut self, arg: ArgValue) {
        let (shape, tag) = slot_for(&arg);
        self.outputs.push(arg);
        self.output_shapes.push(shape);
        self.output_types.push(tag);
    }

    pub fn input_tensors(&self) -> Vec<&TensorRef> {
        let mut out = Vec::new();
        self.inputs.iter().for_each(|a| a.collect_tensors(&mut out));
        out
    }

    pub fn output_tensors(&self) -> Vec<&TensorRef> {
        let mut out = Vec::new();
        self.outputs.iter().for_each(|a| a.collect_tensors(&mut out));
        out
    }
}

/// Shape slot and type tag the trace producer would record for `arg`.
pub fn slot_for(arg: &ArgValue) -> (Shape, String) {
    match arg {
        ArgValue::Tensor(t) => (Shape::Dims(t.shape.clone()), format!("Tensor({})", t.dtype.trace_name())),
        ArgValue::List(items) => {
            let slots: Vec<_> = items.iter().map(slot_for).collect();
            let any_tensor = items.iter().any(|a| matches!(a, ArgValue::Tensor(_) | ArgValue::List(_)));
            let shape =
                if any_tensor { Shape::Nested(slots.iter().map(|(s, _)| s.clone()).collect()) } else { Shape::empty() };
            let tags: Vec<_> = slots.into_iter().map(|(_, t)| t).collect();
            (shape, format!("GenericList[{}]", tags.join(",")))
        }
        ArgValue::Scalar(Scalar::Int(_)) => (Shape::empty(), "Int".into()),
        ArgValue::Scalar(Scalar::Float(_)) => (Shape::empty(), "Double".into()),
        ArgValue::Scalar(Scalar::Bool(_)) => (Shape::empty(), "Bool".into()),
        ArgValue::Scalar(Scalar::Text(_)) => (Shape::empty(), "String".into()),
        ArgValue::None => (Shape::empty(), "None".into()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExecutionTrace {
    pub rank: u32,
    pub schema_version: String,
    /// Extension: number of ranks that produced sibling traces (default 1).
    pub world_size: u32,
    /// Extension: process-group id to member ranks. Group 0 defaults to all ranks.
    pub process_groups: BTreeMap<u32, Vec<u32>>,
    pub nodes: Vec<ETNode>,
}

impl ExecutionTrace {
    pub fn new(nodes: Vec<ETNode>) -> ExecutionTrace {
        ExecutionTrace {
            rank: 0,
            schema_version: "1.0.1".into(),
            world_size: 1,
            process_groups: BTreeMap::new(),
            nodes,
        }
    }

    pub fn index(&self) -> TraceIndex<'_> {
        TraceIndex::new(self)
    }

    /// Declared process groups with the implicit world group filled in.
    pub fn effective_process_groups(&self) -> BTreeMap<u32, Vec<u32>> {
        let mut groups = self.process_groups.clone();
        groups.entry(0).or_insert_with(|| (0..self.world_size.max(1)).collect());
        groups
    }
}

/// Id lookup and child lists over a trace.
pub struct TraceIndex<'a> {
    trace: &'a ExecutionTrace,
    pos: HashMap<u64, usize>,
    children: HashMap<u64, Vec<u64>>,
}

impl<'a> TraceIndex<'a> {
    fn new(trace: &'a ExecutionTrace) -> Self {
        let mut pos = HashMap::with_capacity(trace.nodes.len());
        let mut children: HashMap<u64, Vec<u64>> = HashMap::new();
        for (i, n) in trace.nodes.iter().enumerate() {
            pos.entry(n.id).or_insert(i);
            if let Some(p) = n.parent {
                children.entry(p).or_default().push(n.id);
            }
        }
        children.values_mut().for_each(|c| c.sort_unstable());
        TraceIndex { trace, pos, children }
    }

    pub fn node(&self, id: u64) -> Option<&'a ETNode> {
        self.pos.get(&id).map(|&i| &self.trace.nodes[i])
    }

    pub fn children(&self, id: u64) -> &[u64] {
        self.children.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All proper descendants of `id`, in ascending id order.
    pub fn descendants(&self, id: u64) -> Vec<u64> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            for &c in self.children(n) {
                out.push(c);
                stack.push(c);
            }
        }
        out.sort_unstable();
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rule {
    DuplicateNodeId,
    NonPositiveId,
    DanglingParent { parent: u64 },
    ParentOrderViolation { parent: u64 },
    ArityMismatch { side: &'static str },
    BadTensorId { arity: usize },
    MultipleRoots,
    MissingRoot,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub node: Option<u64>,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(n) => write!(f, "node {n}: ")?,
            None => write!(f, "trace: ")?,
        }
        match &self.rule {
            Rule::DuplicateNodeId => write!(f, "DuplicateNodeId"),
            Rule::NonPositiveId => write!(f, "NonPositiveId"),
            Rule::DanglingParent { parent } => write!(f, "DanglingParent (parent {parent} not present)"),
            Rule::ParentOrderViolation { parent } => {
                write!(f, "ParentOrderViolation (parent {parent} does not precede node)")
            }
            Rule::ArityMismatch { side } => write!(f, "ArityMismatch ({side} vs shapes/types)"),
            Rule::BadTensorId { arity } => write!(f, "BadTensorId (tuple of length {arity})"),
            Rule::MultipleRoots => write!(f, "MultipleRoots"),
            Rule::MissingRoot => write!(f, "MissingRoot"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("malformed trace document: {0}")]
    MalformedDocument(String),
    #[error("unsupported trace schema version {0:?} (major {SUPPORTED_SCHEMA_MAJOR} expected)")]
    UnsupportedSchema(String),
    #[error("duplicate node id {0}")]
    DuplicateNodeId(u64),
    #[error("node ids must be positive")]
    NonPositiveId,
    #[error("node {node} references missing parent {parent}")]
    DanglingParent { node: u64, parent: u64 },
    #[error("node {node} has parent {parent} which does not precede it")]
    ParentOrderViolation { node: u64, parent: u64 },
    #[error("node {node}: {side} arity does not match recorded shapes/types")]
    ArityMismatch { node: u64, side: &'static str },
    #[error("node {node}: tensor id has {arity} elements, expected 6")]
    BadTensorId { node: u64, arity: usize },
    #[error("trace has more than one root")]
    MultipleRoots,
    #[error("trace has no root node")]
    MissingRoot,
}

impl From<&Violation> for TraceError {
    fn from(v: &Violation) -> Self {
        let node = v.node.unwrap_or(0);
        match v.rule {
            Rule::DuplicateNodeId => TraceError::DuplicateNodeId(node),
            Rule::NonPositiveId => TraceError::NonPositiveId,
            Rule::DanglingParent { parent } => TraceError::DanglingParent { node, parent },
            Rule::ParentOrderViolation { parent } => TraceError::ParentOrderViolation { node, parent },
            Rule::ArityMismatch { side } => TraceError::ArityMismatch { node, side },
            Rule::BadTensorId { arity } => TraceError::BadTensorId { node, arity },
            Rule::MultipleRoots => TraceError::MultipleRoots,
            Rule::MissingRoot => TraceError::MissingRoot,
        }
    }
}

fn check_args(args: &[ArgValue], node: u64, out: &mut Vec<Violation>) {
    let mut tensors = Vec::new();
    args.iter().for_each(|a| a.collect_tensors(&mut tensors));
    for t in tensors {
        if !t.id.is_well_formed() {
            out.push(Violation { node: Some(node), rule: Rule::BadTensorId { arity: t.id.0.len() } });
        }
    }
}

/// Checks every trace invariant. Violations are data: an empty result means
/// the trace is valid.
pub fn validate(trace: &ExecutionTrace) -> Vec<Violation> {
    let mut out = Vec::new();
    let ids: HashSet<u64> = trace.nodes.iter().map(|n| n.id).collect();
    let mut seen = HashSet::new();
    let mut roots = Vec::new();
    for n in &trace.nodes {
        let node = Some(n.id);
        if !seen.insert(n.id) {
            out.push(Violation { node, rule: Rule::DuplicateNodeId });
        }
        if n.id == 0 {
            out.push(Violation { node, rule: Rule::NonPositiveId });
        }
        match n.parent {
            None => roots.push(n.id),
            Some(p) if !ids.contains(&p) => out.push(Violation { node, rule: Rule::DanglingParent { parent: p } }),
            Some(p) if p >= n.id => out.push(Violation { node, rule: Rule::ParentOrderViolation { parent: p } }),
            Some(_) => {}
        }
        if n.inputs.len() != n.input_shapes.len() || n.inputs.len() != n.input_types.len() {
            out.push(Violation { node, rule: Rule::ArityMismatch { side: "inputs" } });
        }
        if n.outputs.len() != n.output_shapes.len() || n.outputs.len() != n.output_types.len() {
            out.push(Violation { node, rule: Rule::ArityMismatch { side: "outputs" } });
        }
        check_args(&n.inputs, n.id, &mut out);
        check_args(&n.outputs, n.id, &mut out);
    }
    match roots.len() {
        0 => out.push(Violation { node: None, rule: Rule::MissingRoot }),
        1 => {}
        _ => out.push(Violation { node: Some(roots[1]), rule: Rule::MultipleRoots }),
    }
    out
}

/// Canonical replay order: ascending node id.
pub fn execution_order(trace: &ExecutionTrace) -> Vec<u64> {
    let mut ids: Vec<u64> = trace.nodes.iter().map(|n| n.id).collect();
    ids.sort_unstable();
    ids
}

#[derive(Deserialize)]
struct RawTrace {
    schema: String,
    #[serde(default)]
    rank: u32,
    #[serde(default)]
    world_size: Option<u32>,
    #[serde(default)]
    process_groups: BTreeMap<String, Vec<u32>>,
    nodes: Vec<RawNode>,
}

#[derive(Deserialize)]
struct RawNode {
    name: String,
    id: i64,
    #[serde(default)]
    parent: Option<i64>,
    #[serde(default)]
    op_schema: String,
    #[serde(default)]
    inputs: Vec<Value>,
    #[serde(default)]
    input_shapes: Vec<Value>,
    #[serde(default)]
    input_types: Vec<String>,
    #[serde(default)]
    outputs: Vec<Value>,
    #[serde(default)]
    output_shapes: Vec<Value>,
    #[serde(default)]
    output_types: Vec<String>,
    #[serde(default)]
    tid: u32,
    #[serde(default)]
    label: Option<String>,
}

fn schema_major(version: &str) -> Option<u64> {
    let digits: String = version.chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

fn decode_side(
    node: u64,
    side: &'static str,
    values: &[Value],
    shapes: &[Value],
    types: &[String],
) -> Result<(Vec<ArgValue>, Vec<Shape>), TraceError> {
    if values.len() != shapes.len() || values.len() != types.len() {
        return Err(TraceError::ArityMismatch { node, side });
    }
    let shapes = shapes
        .iter()
        .map(Shape::from_json)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| TraceError::MalformedDocument(format!("node {node}: {e}")))?;
    let args = values
        .iter()
        .zip(&shapes)
        .zip(types)
        .map(|((v, s), t)| decode_arg(v, s, t))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| TraceError::MalformedDocument(format!("node {node}: {e}")))?;
    Ok((args, shapes))
}

/// Decodes a trace document without checking structural invariants, so
/// callers can report every violation. Nodes are sorted by id.
pub fn decode_trace(bytes: &[u8]) -> Result<ExecutionTrace, TraceError> {
    let raw: RawTrace = serde_json::from_slice(bytes).map_err(|e| TraceError::MalformedDocument(e.to_string()))?;
    match schema_major(&raw.schema) {
        Some(SUPPORTED_SCHEMA_MAJOR) => {}
        _ => return Err(TraceError::UnsupportedSchema(raw.schema)),
    }
    let mut process_groups = BTreeMap::new();
    for (k, members) in raw.process_groups {
        let id: u32 = k
            .parse()
            .map_err(|_| TraceError::MalformedDocument(format!("process group key {k:?} is not an integer")))?;
        process_groups.insert(id, members);
    }
    let mut nodes = Vec::with_capacity(raw.nodes.len());
    for rn in raw.nodes {
        let id = u64::try_from(rn.id).map_err(|_| TraceError::NonPositiveId)?;
        let parent = match rn.parent {
            None | Some(0) => None,
            Some(p) => Some(
                u64::try_from(p)
                    .map_err(|_| TraceError::MalformedDocument(format!("node {id}: negative parent {p}")))?,
            ),
        };
        let (inputs, input_shapes) = decode_side(id, "inputs", &rn.inputs, &rn.input_shapes, &rn.input_types)?;
        let (outputs, output_shapes) = decode_side(id, "outputs", &rn.outputs, &rn.output_shapes, &rn.output_types)?;
        nodes.push(ETNode {
            id,
            name: rn.name,
            parent,
            op_schema: rn.op_schema,
            inputs,
            input_shapes,
            input_types: rn.input_types,
            outputs,
            output_shapes,
            output_types: rn.output_types,
            tid: rn.tid,
            label: rn.label,
        });
    }
    nodes.sort_by_key(|n| n.id);
    let trace = ExecutionTrace {
        rank: raw.rank,
        schema_version: raw.schema,
        world_size: raw.world_size.unwrap_or(1),
        process_groups,
        nodes,
    };
    Ok(trace)
}

/// Parses an execution-trace document. The returned nodes are sorted by id
/// and satisfy every invariant checked by [`validate`].
pub fn parse_trace(bytes: &[u8]) -> Result<ExecutionTrace, TraceError> {
    let trace = decode_trace(bytes)?;
    if let Some(v) = validate(&trace).first() {
        return Err(v.into());
    }
    Ok(trace)
}

fn node_to_json(n: &ETNode) -> Value {
    let mut m = Map::new();
    m.insert("name".into(), Value::from(n.name.as_str()));
    m.insert("id".into(), Value::from(n.id));
    m.insert("parent".into(), Value::from(n.parent.unwrap_or(0)));
    m.insert("op_schema".into(), Value::from(n.op_schema.as_str()));
    m.insert("inputs".into(), Value::Array(n.inputs.iter().map(ArgValue::to_json).collect()));
    m.insert("input_shapes".into(), Value::Array(n.input_shapes.iter().map(Shape::to_json).collect()));
    m.insert("input_types".into(), Value::from(n.input_types.clone()));
    m.insert("outputs".into(), Value::Array(n.outputs.iter().map(ArgValue::to_json).collect()));
    m.insert("output_shapes".into(), Value::Array(n.output_shapes.iter().map(Shape::to_json).collect()));
    m.insert("output_types".into(), Value::from(n.output_types.clone()));
    if n.tid != 0 {
        m.insert("tid".into(), Value::from(n.tid));
    }
    if let Some(l) = &n.label {
        m.insert("label".into(), Value::from(l.as_str()));
    }
    Value::Object(m)
}

pub fn trace_to_json(trace: &ExecutionTrace) -> Value {
    let mut m = Map::new();
    m.insert("schema".into(), Value::from(trace.schema_version.as_str()));
    if trace.rank != 0 {
        m.insert("rank".into(), Value::from(trace.rank));
    }
    if trace.world_size != 1 {
        m.insert("world_size".into(), Value::from(trace.world_size));
    }
    if !trace.process_groups.is_empty() {
        let groups: Map<String, Value> =
            trace.process_groups.iter().map(|(k, v)| (k.to_string(), Value::from(v.clone()))).collect();
        m.insert("process_groups".into(), Value::Object(groups));
    }
    m.insert("nodes".into(), Value::Array(trace.nodes.iter().map(node_to_json).collect()));
    Value::Object(m)
}

/// Serializes a trace to its canonical document form (sorted keys, pretty).
pub fn serialize_trace(trace: &ExecutionTrace) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&trace_to_json(trace)).expect("trace JSON is always serializable");
    out.push(b'\n');
    out
}
