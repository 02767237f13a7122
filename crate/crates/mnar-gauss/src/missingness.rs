//! Known missingness mechanisms: per-coordinate interval unions
//! (self-censoring) and halfspace rules (linear thresholding), plus
//! censored-observation generation.
//!
//! Model files are JSON with `"inf"` / `"-inf"` sentinels for unbounded
//! endpoints; numbers are written with 17 significant digits so a write/read
//! round trip is bit-exact.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;

/// Closed interval; endpoints may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::InvalidParameter {
                name: "interval".into(),
                reason: format!("invalid endpoints [{lo}, {hi}]"),
            });
        }
        Ok(Interval { lo, hi })
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }
}

/// Union of disjoint closed intervals, kept sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalUnion {
    intervals: Vec<Interval>,
}

impl IntervalUnion {
    /// Normalizes: sorts by lower endpoint and merges overlaps.
    pub fn new(mut intervals: Vec<Interval>) -> Self {
        intervals.sort_by(|a, b| a.lo.partial_cmp(&b.lo).unwrap());
        let mut merged: Vec<Interval> = Vec::with_capacity(intervals.len());
        for iv in intervals {
            match merged.last_mut() {
                Some(last) if iv.lo <= last.hi => last.hi = last.hi.max(iv.hi),
                _ => merged.push(iv),
            }
        }
        IntervalUnion { intervals: merged }
    }

    pub fn all_reals() -> Self {
        IntervalUnion { intervals: vec![Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY }] }
    }

    pub fn single(lo: f64, hi: f64) -> Result<Self> {
        Ok(IntervalUnion { intervals: vec![Interval::new(lo, hi)?] })
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn contains(&self, y: f64) -> bool {
        self.intervals.iter().any(|iv| iv.contains(y))
    }
}

/// Self-censoring mechanism: coordinate `i` is seen iff `y_i` lies in `sets[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfCensoringModel {
    pub sets: Vec<IntervalUnion>,
}

impl SelfCensoringModel {
    pub fn new(sets: Vec<IntervalUnion>) -> Self {
        SelfCensoringModel { sets }
    }

    pub fn uncensored(d: usize) -> Self {
        SelfCensoringModel { sets: vec![IntervalUnion::all_reals(); d] }
    }

    pub fn dim(&self) -> usize {
        self.sets.len()
    }
}

/// Linear thresholding mechanism: coordinate `i` is seen iff `v_i' y <= b_i`;
/// ties count as seen.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearThresholdModel {
    /// Rows are the threshold directions `v_i`.
    pub v: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LinearThresholdModel {
    /// A zero row `v_i` with `b_i >= 0` makes coordinate `i` unconditionally
    /// seen; that degenerate-but-useful case is allowed for anchor rows.
    pub fn new(v: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if v.nrows() != v.ncols() || v.nrows() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "v is {}x{}, b has length {}",
                v.nrows(),
                v.ncols(),
                b.len()
            )));
        }
        for i in 0..v.nrows() {
            if v.row(i).iter().all(|x| *x == 0.0) && b[i] < 0.0 {
                return Err(Error::InvalidParameter {
                    name: format!("v[{i}]"),
                    reason: "zero row with negative offset hides the coordinate always".into(),
                });
            }
        }
        Ok(LinearThresholdModel { v, b })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn sees(&self, i: usize, y: &DVector<f64>) -> bool {
        self.v.row(i).transpose().dot(y) <= self.b[i]
    }
}

/// The known censoring mechanism.
#[derive(Debug, Clone, PartialEq)]
pub enum MissingnessModel {
    SelfCensoring(SelfCensoringModel),
    LinearThreshold(LinearThresholdModel),
}

impl MissingnessModel {
    pub fn dim(&self) -> usize {
        match self {
            MissingnessModel::SelfCensoring(m) => m.dim(),
            MissingnessModel::LinearThreshold(m) => m.dim(),
        }
    }

    /// The seen set `S(y)`.
    pub fn seen_set(&self, y: &DVector<f64>) -> Vec<usize> {
        match self {
            MissingnessModel::SelfCensoring(m) => (0..m.dim())
                .filter(|&i| m.sets[i].contains(y[i]))
                .collect(),
            MissingnessModel::LinearThreshold(m) => {
                (0..m.dim()).filter(|&i| m.sees(i, y)).collect()
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            MissingnessModel::SelfCensoring(_) => "self_censoring",
            MissingnessModel::LinearThreshold(_) => "linear_threshold",
        }
    }
}

/// One censored sample: the sorted seen set `A` and the values on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub seen: Vec<usize>,
    pub values: Vec<f64>,
}

impl Observation {
    pub fn new(seen: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if seen.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} seen vs {} values",
                seen.len(),
                values.len()
            )));
        }
        if seen.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter {
                name: "seen".into(),
                reason: "must be strictly increasing".into(),
            });
        }
        Ok(Observation { seen, values })
    }

    pub fn is_fully_observed(&self, d: usize) -> bool {
        self.seen.len() == d
    }

    /// Value of coordinate `i`, if seen.
    pub fn value_of(&self, i: usize) -> Option<f64> {
        self.seen.binary_search(&i).ok().map(|k| self.values[k])
    }
}

/// `(S(y), y_{S(y)})` — a pure function of `y`.
pub fn apply_missingness(model: &MissingnessModel, y: &DVector<f64>) -> Observation {
    let seen = model.seen_set(y);
    let values = seen.iter().map(|&i| y[i]).collect();
    Observation { seen, values }
}

/// `n` i.i.d. censored observations from `N(mu, cov)` under `model`.
pub fn generate_observations(
    params: &GaussianParams,
    model: &MissingnessModel,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Observation>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let y = params.sample_one(rng)?;
        out.push(apply_missingness(model, &y));
    }
    Ok(out)
}

/// Like [`generate_observations`] but retains the underlying samples, for
/// simulation-mode ground truth and warm starts.
pub fn generate_with_truth(
    params: &GaussianParams,
    model: &MissingnessModel,
    n: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<DVector<f64>>, Vec<Observation>)> {
    let mut ys = Vec::with_capacity(n);
    let mut obs = Vec::with_capacity(n);
    for _ in 0..n {
        let y = params.sample_one(rng)?;
        obs.push(apply_missingness(model, &y));
        ys.push(y);
    }
    Ok((ys, obs))
}

// --- serialization -----------------------------------------------------

/// 17 significant digits: enough to reproduce any f64 exactly on parse.
pub fn fmt_f64(x: f64) -> String {
    if x == f64::INFINITY {
        "\"inf\"".to_string()
    } else if x == f64::NEG_INFINITY {
        "\"-inf\"".to_string()
    } else {
        format!("{x:.16e}")
    }
}

fn parse_endpoint(v: &Value, path: &str) -> Result<f64> {
    match v {
        Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| Error::schema(path, "endpoint is not representable as f64")),
        Value::String(s) if s == "inf" => Ok(f64::INFINITY),
        Value::String(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
        other => Err(Error::schema(path, format!("expected number or \"inf\"/\"-inf\", got {other}"))),
    }
}

fn parse_f64(v: &Value, path: &str) -> Result<f64> {
    match v {
        Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| Error::schema(path, "not representable as f64")),
        other => Err(Error::schema(path, format!("expected number, got {other}"))),
    }
}

impl MissingnessModel {
    /// Compact single-document JSON; see the module docs for the schema.
    pub fn to_json_string(&self) -> String {
        match self {
            MissingnessModel::SelfCensoring(m) => {
                let sets: Vec<String> = m
                    .sets
                    .iter()
                    .map(|u| {
                        let ivs: Vec<String> = u
                            .intervals()
                            .iter()
                            .map(|iv| format!("[{},{}]", fmt_f64(iv.lo), fmt_f64(iv.hi)))
                            .collect();
                        format!("[{}]", ivs.join(","))
                    })
                    .collect();
                format!("{{\"kind\":\"self_censoring\",\"sets\":[{}]}}", sets.join(","))
            }
            MissingnessModel::LinearThreshold(m) => {
                let rows: Vec<String> = (0..m.dim())
                    .map(|i| {
                        let vals: Vec<String> =
                            m.v.row(i).iter().map(|x| fmt_f64(*x)).collect();
                        format!("[{}]", vals.join(","))
                    })
                    .collect();
                let b: Vec<String> = m.b.iter().map(|x| fmt_f64(*x)).collect();
                format!(
                    "{{\"kind\":\"linear_threshold\",\"v\":[{}],\"b\":[{}]}}",
                    rows.join(","),
                    b.join(",")
                )
            }
        }
    }

    pub fn from_json_value(v: &Value, path: &str) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::schema(path, "model must be a JSON object"))?;
        let kind = obj
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::schema(format!("{path}.kind"), "missing or non-string"))?;
        match kind {
            "self_censoring" => {
                let sets = obj
                    .get("sets")
                    .and_then(Value::as_array)
                    .ok_or_else(|| Error::schema(format!("{path}.sets"), "missing array"))?;
                let mut unions = Vec::with_capacity(sets.len());
                for (i, set) in sets.iter().enumerate() {
                    let ivs = set.as_array().ok_or_else(|| {
                        Error::schema(format!("{path}.sets[{i}]"), "expected array of intervals")
                    })?;
                    let mut parsed = Vec::with_capacity(ivs.len());
                    for (k, iv) in ivs.iter().enumerate() {
                        let p = format!("{path}.sets[{i}][{k}]");
                        let pair = iv
                            .as_array()
                            .filter(|a| a.len() == 2)
                            .ok_or_else(|| Error::schema(&p, "expected [lo, hi]"))?;
                        let lo = parse_endpoint(&pair[0], &p)?;
                        let hi = parse_endpoint(&pair[1], &p)?;
                        parsed.push(Interval::new(lo, hi).map_err(|e| Error::schema(&p, e.to_string()))?);
                    }
                    unions.push(IntervalUnion::new(parsed));
                }
                Ok(MissingnessModel::SelfCensoring(SelfCensoringModel::new(unions)))
            }
            "linear_threshold" => {
                let rows = obj
                    .get("v")
                    .and_then(Value::as_array)
                    .ok_or_else(|| Error::schema(format!("{path}.v"), "missing array"))?;
                let d = rows.len();
                let mut v = DMatrix::zeros(d, d);
                for (i, row) in rows.iter().enumerate() {
                    let row = row
                        .as_array()
                        .filter(|r| r.len() == d)
                        .ok_or_else(|| {
                            Error::schema(format!("{path}.v[{i}]"), format!("expected {d} entries"))
                        })?;
                    for (j, x) in row.iter().enumerate() {
                        v[(i, j)] = parse_f64(x, &format!("{path}.v[{i}][{j}]"))?;
                    }
                }
                let b_arr = obj
                    .get("b")
                    .and_then(Value::as_array)
                    .filter(|a| a.len() == d)
                    .ok_or_else(|| Error::schema(format!("{path}.b"), format!("expected {d} entries")))?;
                let mut b = DVector::zeros(d);
                for (i, x) in b_arr.iter().enumerate() {
                    b[i] = parse_f64(x, &format!("{path}.b[{i}]"))?;
                }
                Ok(MissingnessModel::LinearThreshold(LinearThresholdModel::new(v, b)?))
            }
            other => Err(Error::schema(
                format!("{path}.kind"),
                format!("unknown kind {other:?}; expected self_censoring or linear_threshold"),
            )),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s)
            .map_err(|e| Error::schema("model", format!("invalid JSON: {e}")))?;
        Self::from_json_value(&v, "model")
    }
}

/// One observation as a newline-delimited JSON record.
pub fn observation_to_json(obs: &Observation) -> String {
    let seen: Vec<String> = obs.seen.iter().map(|i| i.to_string()).collect();
    let values: Vec<String> = obs.values.iter().map(|x| format!("{x:.16e}")).collect();
    format!("{{\"seen\":[{}],\"values\":[{}]}}", seen.join(","), values.join(","))
}

pub fn observation_from_json(line: &str, lineno: usize) -> Result<Observation> {
    let v: Value = serde_json::from_str(line)
        .map_err(|e| Error::schema(format!("observations line {lineno}"), format!("{e}")))?;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::schema(format!("observations line {lineno}"), "expected object"))?;
    let seen = obj
        .get("seen")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::schema(format!("line {lineno}.seen"), "missing array"))?
        .iter()
        .map(|x| {
            x.as_u64()
                .map(|u| u as usize)
                .ok_or_else(|| Error::schema(format!("line {lineno}.seen"), "expected index"))
        })
        .collect::<Result<Vec<usize>>>()?;
    let values = obj
        .get("values")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::schema(format!("line {lineno}.values"), "missing array"))?
        .iter()
        .enumerate()
        .map(|(k, x)| parse_f64(x, &format!("line {lineno}.values[{k}]")))
        .collect::<Result<Vec<f64>>>()?;
    Observation::new(seen, values)
        .map_err(|e| Error::schema(format!("observations line {lineno}"), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    fn max_observation_2d() -> MissingnessModel {
        // observe the max of a pair: coord 0 seen iff y1 - y0 <= 0,
        // coord 1 seen iff y0 - y1 <= 0
        let v = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        let b = DVector::zeros(2);
        MissingnessModel::LinearThreshold(LinearThresholdModel::new(v, b).unwrap())
    }

    #[test]
    fn nothing_censored_sees_everything() {
        let m = MissingnessModel::SelfCensoring(SelfCensoringModel::uncensored(3));
        let y = DVector::from_vec(vec![-10.0, 0.0, 42.0]);
        let obs = apply_missingness(&m, &y);
        assert_eq!(obs.seen, vec![0, 1, 2]);
        assert_eq!(obs.values, vec![-10.0, 0.0, 42.0]);
    }

    #[test]
    fn self_censoring_membership() {
        let m = MissingnessModel::SelfCensoring(SelfCensoringModel::new(vec![
            IntervalUnion::single(0.0, 1.0).unwrap(),
            IntervalUnion::single(0.0, 1.0).unwrap(),
        ]));
        let obs = apply_missingness(&m, &DVector::from_vec(vec![0.5, 2.0]));
        assert_eq!(obs.seen, vec![0]);
        assert_eq!(obs.values, vec![0.5]);
    }

    #[test]
    fn max_observation_example() {
        // y = (3, 1): y1 - y0 = -2 <= 0 observes coord 0; y0 - y1 = 2 > 0 hides coord 1
        let m = max_observation_2d();
        let obs = apply_missingness(&m, &DVector::from_vec(vec![3.0, 1.0]));
        assert_eq!(obs.seen, vec![0]);
        assert_eq!(obs.values, vec![3.0]);
    }

    #[test]
    fn ties_count_as_seen() {
        let m = max_observation_2d();
        let obs = apply_missingness(&m, &DVector::from_vec(vec![2.0, 2.0]));
        assert_eq!(obs.seen, vec![0, 1]);
    }

    #[test]
    fn generation_halfspace_fraction() {
        // d=1, S_0 = [0, inf): seen fraction should be Phi(0) = 0.5
        let p = GaussianParams::standard(1);
        let m = MissingnessModel::SelfCensoring(SelfCensoringModel::new(vec![
            IntervalUnion::single(0.0, f64::INFINITY).unwrap(),
        ]));
        let obs = generate_observations(&p, &m, 100_000, &mut stream_rng(0, 0)).unwrap();
        let frac = obs.iter().filter(|o| !o.seen.is_empty()).count() as f64 / 1e5;
        assert!((frac - 0.5).abs() < 0.01, "fraction {frac}");
    }

    #[test]
    fn generation_is_deterministic() {
        let p = GaussianParams::standard(2);
        let m = max_observation_2d();
        let a = generate_observations(&p, &m, 100, &mut stream_rng(4, 9)).unwrap();
        let b = generate_observations(&p, &m, 100, &mut stream_rng(4, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generation_no_censoring_all_full() {
        let p = GaussianParams::standard(2);
        let m = MissingnessModel::SelfCensoring(SelfCensoringModel::uncensored(2));
        let obs = generate_observations(&p, &m, 200, &mut stream_rng(1, 1)).unwrap();
        assert!(obs.iter().all(|o| o.seen == vec![0, 1]));
    }

    #[test]
    fn linear_threshold_consistency_on_generated() {
        let p = GaussianParams::standard(2);
        let m = max_observation_2d();
        let (ys, obs) = generate_with_truth(&p, &m, 1000, &mut stream_rng(8, 0)).unwrap();
        let lt = match &m {
            MissingnessModel::LinearThreshold(lt) => lt,
            _ => unreachable!(),
        };
        for (y, o) in ys.iter().zip(&obs) {
            for &i in &o.seen {
                assert!(lt.v.row(i).transpose().dot(y) <= lt.b[i]);
            }
        }
    }

    #[test]
    fn interval_union_normalizes() {
        let u = IntervalUnion::new(vec![
            Interval::new(2.0, 3.0).unwrap(),
            Interval::new(0.0, 2.5).unwrap(),
        ]);
        assert_eq!(u.intervals().len(), 1);
        assert!(u.contains(2.75) && !u.contains(3.5));
    }

    #[test]
    fn model_json_roundtrip_linear() {
        let v = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0 / 3.0, 0.1 + 0.2, -1.0]);
        let b = DVector::from_vec(vec![0.0, 1e-300]);
        let m = MissingnessModel::LinearThreshold(LinearThresholdModel::new(v, b).unwrap());
        let s = m.to_json_string();
        let back = MissingnessModel::from_json_str(&s).unwrap();
        match (&m, &back) {
            (MissingnessModel::LinearThreshold(a), MissingnessModel::LinearThreshold(c)) => {
                for (x, y) in a.v.iter().zip(c.v.iter()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
                for (x, y) in a.b.iter().zip(c.b.iter()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
            _ => panic!("kind changed"),
        }
    }

    #[test]
    fn model_json_roundtrip_self_censoring_with_inf() {
        let m = MissingnessModel::SelfCensoring(SelfCensoringModel::new(vec![
            IntervalUnion::single(-1.5, f64::INFINITY).unwrap(),
            IntervalUnion::new(vec![
                Interval::new(f64::NEG_INFINITY, -0.1).unwrap(),
                Interval::new(0.7, 1.3).unwrap(),
            ]),
        ]));
        let s = m.to_json_string();
        assert!(s.contains("\"inf\"") && s.contains("\"-inf\""));
        let back = MissingnessModel::from_json_str(&s).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn observation_json_roundtrip_is_bit_exact() {
        let obs = Observation::new(vec![0, 2], vec![0.1 + 0.2, -1.0e-17]).unwrap();
        let line = observation_to_json(&obs);
        let back = observation_from_json(&line, 1).unwrap();
        assert_eq!(obs.seen, back.seen);
        for (a, b) in obs.values.iter().zip(&back.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    proptest! {
        // purity: same y gives same observation
        #[test]
        fn apply_is_pure(seed in 0u64..1u64 << 40) {
            let mut rng = stream_rng(seed, 2);
            let p = GaussianParams::standard(3);
            let y = p.sample_one(&mut rng).unwrap();
            let m = MissingnessModel::SelfCensoring(SelfCensoringModel::new(vec![
                IntervalUnion::single(-0.5, f64::INFINITY).unwrap(),
                IntervalUnion::single(f64::NEG_INFINITY, 0.5).unwrap(),
                IntervalUnion::single(-1.0, 1.0).unwrap(),
            ]));
            prop_assert_eq!(apply_missingness(&m, &y), apply_missingness(&m, &y));
        }

        // self-censoring decomposability: membership of i depends only on y_i
        #[test]
        fn self_censoring_is_coordinatewise(seed in 0u64..1u64 << 40, flip in 0usize..3) {
            let mut rng = stream_rng(seed, 3);
            let p = GaussianParams::standard(3);
            let y = p.sample_one(&mut rng).unwrap();
            let m = MissingnessModel::SelfCensoring(SelfCensoringModel::new(vec![
                IntervalUnion::single(-0.5, f64::INFINITY).unwrap(),
                IntervalUnion::single(f64::NEG_INFINITY, 0.5).unwrap(),
                IntervalUnion::single(-1.0, 1.0).unwrap(),
            ]));
            let before = m.seen_set(&y);
            let mut y2 = y.clone();
            y2[flip] += 10.0;
            let after = m.seen_set(&y2);
            for i in 0..3 {
                if i != flip {
                    prop_assert_eq!(before.contains(&i), after.contains(&i));
                }
            }
        }

        // f64 text round trip used by the writers
        #[test]
        fn seventeen_digit_roundtrip(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let s = format!("{x:.16e}");
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
