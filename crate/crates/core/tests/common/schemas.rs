//! Random operator schemas for round-trip checks.

use etreplay::schema::{OpSchema, Param};
use rand::seq::SliceRandom;
use rand::Rng;

const TYPES: [&str; 14] = [
    "Tensor",
    "Tensor?",
    "Tensor(a)",
    "Tensor(a!)",
    "Tensor[]",
    "int",
    "int[]",
    "SymInt[2]",
    "float",
    "bool",
    "Scalar",
    "ScalarType?",
    "str",
    "Tensor(a -> *)",
];
const DEFAULTS: [&str; 9] = ["None", "0", "-1", "1e-05", "True", "[]", "'none'", "contiguous_format", "\"a, b\""];

pub const CORPUS: &str = include_str!("../data/aten_schemas.txt");

fn ident(r: &mut impl Rng) -> String {
    let head = *b"abcdefghijklmnopqrstuvwxyz_".choose(r).unwrap() as char;
    let tail: String =
        (0..r.gen_range(0..8)).map(|_| *b"abcdefghijklmnopqrstuvwxyz_0123456789".choose(r).unwrap() as char).collect();
    format!("{head}{tail}")
}

pub fn random_schema(r: &mut impl Rng) -> OpSchema {
    let n = r.gen_range(0..7);
    let kw_from = if r.gen_bool(0.4) { r.gen_range(0..=n) } else { n };
    let params = (0..n)
        .map(|i| Param {
            name: format!("{}{i}", ident(r)),
            type_expr: TYPES.choose(r).unwrap().to_string(),
            default: r.gen_bool(0.3).then(|| DEFAULTS.choose(r).unwrap().to_string()),
            kwarg_only: i >= kw_from,
        })
        .collect();
    let returns = (0..r.gen_range(0..4)).map(|_| TYPES.choose(r).unwrap().to_string()).collect();
    OpSchema {
        namespace: ["aten", "fbgemm", "c10d", "quantized"].choose(r).unwrap().to_string(),
        base_name: ident(r),
        overload: r.gen_bool(0.5).then(|| ident(r)),
        params,
        returns,
    }
}

pub fn add_tensor_expected() -> OpSchema {
    let p = |name: &str, ty: &str, default: Option<&str>, kwarg_only| Param {
        name: name.into(),
        type_expr: ty.into(),
        default: default.map(Into::into),
        kwarg_only,
    };
    OpSchema {
        namespace: "aten".into(),
        base_name: "add".into(),
        overload: Some("Tensor".into()),
        params: vec![
            p("self", "Tensor", None, false),
            p("other", "Tensor", None, false),
            p("alpha", "Scalar", Some("1"), true),
        ],
        returns: vec!["Tensor".into()],
    }
}

pub const ADD_TENSOR: &str = "aten::add.Tensor(Tensor self, Tensor other, *, Scalar alpha=1) -> Tensor";
