//! Sample clouds: CSV persistence (one serialized point per row) with a JSON sidecar.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::unitary::{c, CMat};
use super::{key_of, CompactGroupSpec, GroupPoint};
use crate::error::{Error, Result};
use crate::padic::PAdicMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpecDescriptor {
    SpecialUnitary { n: usize },
    PAdicSpecialLinear { n: usize, p: u64, k: u32 },
    Finite { name: String, order: usize },
    Circle,
    Product { left: Box<SpecDescriptor>, right: Box<SpecDescriptor> },
}

impl From<&CompactGroupSpec> for SpecDescriptor {
    fn from(s: &CompactGroupSpec) -> Self {
        match s {
            CompactGroupSpec::SpecialUnitary(n) => SpecDescriptor::SpecialUnitary { n: *n },
            CompactGroupSpec::PAdicSpecialLinear { n, p, k } => SpecDescriptor::PAdicSpecialLinear { n: *n, p: *p, k: *k },
            CompactGroupSpec::FiniteGroup(g) => SpecDescriptor::Finite { name: g.name().to_string(), order: g.order() },
            CompactGroupSpec::Circle => SpecDescriptor::Circle,
            CompactGroupSpec::Product(a, b) => SpecDescriptor::Product {
                left: Box::new(a.as_ref().into()),
                right: Box::new(b.as_ref().into()),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleCloud {
    pub points: Vec<GroupPoint>,
    pub weights: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    spec: SpecDescriptor,
    seed: Option<u64>,
    count: usize,
    weighted: bool,
}

impl SampleCloud {
    pub fn new(points: Vec<GroupPoint>, weights: Option<Vec<f64>>, seed: Option<u64>) -> Result<Self> {
        if let Some(w) = &weights {
            if w.len() != points.len() {
                return Err(Error::Dimension("one weight per point".into()));
            }
            if w.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::InvalidParameter("weights must be nonnegative".into()));
            }
            if (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter("weights must sum to 1".into()));
            }
        }
        Ok(Self { points, weights, seed })
    }

    pub fn haar<R: Rng + ?Sized>(spec: &CompactGroupSpec, n: usize, rng: &mut R, seed: Option<u64>) -> Self {
        Self { points: (0..n).map(|_| spec.haar_sample(rng)).collect(), weights: None, seed }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn sidecar_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    pub fn write(&self, spec: &CompactGroupSpec, csv_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(csv_path)?;
        match &self.weights {
            Some(ws) => {
                w.write_record(["point", "weight"])?;
                for (p, x) in self.points.iter().zip(ws) {
                    w.write_record([key_of(p), x.to_string()])?;
                }
            }
            None => {
                w.write_record(["point"])?;
                for p in &self.points {
                    w.write_record([key_of(p)])?;
                }
            }
        }
        w.flush()?;
        let side = Sidecar { spec: spec.into(), seed: self.seed, count: self.len(), weighted: self.weights.is_some() };
        std::fs::write(Self::sidecar_path(csv_path), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    pub fn read(spec: &CompactGroupSpec, csv_path: &Path) -> Result<Self> {
        let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(Self::sidecar_path(csv_path))?)?;
        if side.spec != SpecDescriptor::from(spec) {
            return Err(Error::SpecMismatch);
        }
        let mut r = csv::Reader::from_path(csv_path)?;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            points.push(spec.parse_point(rec.get(0).ok_or(Error::Empty)?)?);
            if side.weighted {
                let w: f64 = rec.get(1).ok_or(Error::Empty)?.parse().map_err(|e| Error::Io(format!("{e}")))?;
                weights.push(w);
            }
        }
        if points.len() != side.count {
            return Err(Error::Io(format!("sidecar count {} but {} rows", side.count, points.len())));
        }
        Self::new(points, side.weighted.then_some(weights), side.seed)
    }
}

fn bad(s: &str) -> Error {
    Error::Io(format!("cannot parse point {s:?}"))
}

fn split_pair(s: &str) -> Option<(&str, &str)> {
    let inner = s.strip_prefix('(')?.strip_suffix(')')?;
    let mut depth = 0i32;
    for (i, ch) in inner.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ';' if depth == 0 => return Some((&inner[..i], &inner[i + 1..])),
            _ => {}
        }
    }
    None
}

pub(crate) fn parse_point(spec: &CompactGroupSpec, s: &str) -> Result<GroupPoint> {
    match spec {
        CompactGroupSpec::SpecialUnitary(n) => {
            let body = s.strip_prefix(&format!("U{n}:")).ok_or_else(|| bad(s))?;
            let vals: Vec<f64> = body
                .split(',')
                .flat_map(|e| e.split(' '))
                .map(|x| x.parse::<f64>().map_err(|_| bad(s)))
                .collect::<Result<_>>()?;
            if vals.len() != 2 * n * n {
                return Err(bad(s));
            }
            Ok(GroupPoint::Unitary(CMat::from_fn(*n, *n, |i, j| c(vals[2 * (i * n + j)], vals[2 * (i * n + j) + 1]))))
        }
        CompactGroupSpec::PAdicSpecialLinear { n, p, k } => {
            let body = s.strip_prefix(&format!("P{n}:")).ok_or_else(|| bad(s))?;
            let vals: Vec<u64> = body.split(',').map(|x| x.parse::<u64>().map_err(|_| bad(s))).collect::<Result<_>>()?;
            if vals.len() != n * n {
                return Err(bad(s));
            }
            let ring = crate::padic::Zpk::new(*p, *k)?;
            Ok(GroupPoint::PAdic(PAdicMatrix::from_fn(ring, *n, *n, |i, j| vals[i * n + j])))
        }
        CompactGroupSpec::FiniteGroup(_) => {
            let i = s.strip_prefix("F:").and_then(|x| x.parse().ok()).ok_or_else(|| bad(s))?;
            Ok(GroupPoint::Finite(i))
        }
        CompactGroupSpec::Circle => {
            let x = s.strip_prefix("C:").and_then(|x| x.parse().ok()).ok_or_else(|| bad(s))?;
            Ok(GroupPoint::Circle(x))
        }
        CompactGroupSpec::Product(a, b) => {
            let (x, y) = split_pair(s).ok_or_else(|| bad(s))?;
            Ok(GroupPoint::pair(parse_point(a, x)?, parse_point(b, y)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::FiniteGroup;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn csv_round_trip_all_kinds() {
        let dir = std::env::temp_dir().join(format!("slab-cloud-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let specs = vec![
            CompactGroupSpec::su(2),
            CompactGroupSpec::padic_sl(2, 5, 3).unwrap(),
            CompactGroupSpec::product(CompactGroupSpec::Circle, CompactGroupSpec::finite(FiniteGroup::cyclic(6).unwrap())),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (i, spec) in specs.iter().enumerate() {
            let cloud = SampleCloud::haar(spec, 25, &mut rng, Some(9));
            let path = dir.join(format!("c{i}.csv"));
            cloud.write(spec, &path).unwrap();
            let back = SampleCloud::read(spec, &path).unwrap();
            assert_eq!(back, cloud);
        }
        let spec = CompactGroupSpec::Circle;
        let pts = vec![GroupPoint::Circle(0.25), GroupPoint::Circle(0.5)];
        let cloud = SampleCloud::new(pts, Some(vec![0.5, 0.5]), None).unwrap();
        let path = dir.join("w.csv");
        cloud.write(&spec, &path).unwrap();
        assert_eq!(SampleCloud::read(&spec, &path).unwrap(), cloud);
        assert!(SampleCloud::read(&CompactGroupSpec::su(2), &path).is_err());
    }

    #[test]
    fn weights_are_validated() {
        let pts = vec![GroupPoint::Circle(0.1)];
        assert!(SampleCloud::new(pts.clone(), Some(vec![0.5]), None).is_err());
        assert!(SampleCloud::new(pts, Some(vec![-1.0]), None).is_err());
    }
}
