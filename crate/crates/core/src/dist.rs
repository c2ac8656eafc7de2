//! Finite distributions, witness functions, couplings, generator families and
//! the seeded random source shared by every stochastic routine.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Atoms closer than this (Euclidean) are the same atom.
pub const MERGE_TOL: f64 = 1e-9;
/// Tolerance on the total mass of a distribution built from explicit weights.
pub const MASS_TOL: f64 = 1e-9;
/// Tolerance on the total mass of a distribution read from a file.
pub const FILE_MASS_TOL: f64 = 1e-6;
/// Tolerance on coupling marginals.
pub const MARGINAL_TOL: f64 = 1e-10;

/// A point of R^k.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportPoint(pub Vec<f64>);

impl SupportPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        SupportPoint(coords)
    }

    pub fn scalar(x: f64) -> Self {
        SupportPoint(vec![x])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dist(&self, other: &SupportPoint) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn dist_sq(&self, other: &SupportPoint) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn coincides(&self, other: &SupportPoint) -> bool {
        self.dim() == other.dim() && self.dist(other) <= MERGE_TOL
    }
}

impl From<f64> for SupportPoint {
    fn from(x: f64) -> Self {
        SupportPoint::scalar(x)
    }
}

impl From<Vec<f64>> for SupportPoint {
    fn from(v: Vec<f64>) -> Self {
        SupportPoint(v)
    }
}

/// An ordered list of pairwise distinct points of a common dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Support(Vec<SupportPoint>);

impl Support {
    /// Builds a support, merging coincident points (first occurrence wins).
    pub fn new(points: Vec<SupportPoint>) -> Result<Self> {
        let mut s = Support(Vec::with_capacity(points.len()));
        for p in points {
            s.insert(p)?;
        }
        Ok(s)
    }

    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        Support::new(xs.iter().map(|&x| SupportPoint::scalar(x)).collect())
    }

    /// Adds `p` unless an equal point is present; returns its index.
    pub fn insert(&mut self, p: SupportPoint) -> Result<usize> {
        if p.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite coordinate".into()));
        }
        if let Some(first) = self.0.first() {
            if first.dim() != p.dim() {
                return Err(Error::Domain(format!(
                    "dimension mismatch: {} vs {}",
                    first.dim(),
                    p.dim()
                )));
            }
        }
        if let Some(i) = self.index_of(&p) {
            return Ok(i);
        }
        self.0.push(p);
        Ok(self.0.len() - 1)
    }

    pub fn index_of(&self, p: &SupportPoint) -> Option<usize> {
        self.0.iter().position(|q| q.coincides(p))
    }

    pub fn points(&self) -> &[SupportPoint] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.0.first().map_or(0, |p| p.dim())
    }

    /// Union of supports, in order of first appearance.
    pub fn union(parts: &[&Support]) -> Result<Support> {
        let mut s = Support::default();
        for part in parts {
            for p in part.points() {
                s.insert(p.clone())?;
            }
        }
        Ok(s)
    }

    pub fn contains_all(&self, other: &Support) -> bool {
        other.points().iter().all(|p| self.index_of(p).is_some())
    }

    /// Largest norm of a point.
    pub fn radius(&self) -> f64 {
        self.0.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for Support {
    type Output = SupportPoint;
    fn index(&self, i: usize) -> &SupportPoint {
        &self.0[i]
    }
}

/// A probability distribution with finitely many atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDistribution {
    support: Support,
    weights: Vec<f64>,
    radius: f64,
}

impl FiniteDistribution {
    /// Weights must be non-negative and sum to one within [`MASS_TOL`].
    /// Coincident atoms are merged and zero-weight atoms dropped.
    pub fn new(points: Vec<SupportPoint>, weights: Vec<f64>) -> Result<Self> {
        let total = check_weights(&points, &weights)?;
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::Invariant(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Self::build(points, weights, total)
    }

    /// Like [`FiniteDistribution::new`] but rescales any positive total mass to one.
    pub fn normalized(points: Vec<SupportPoint>, weights: Vec<f64>) -> Result<Self> {
        let total = check_weights(&points, &weights)?;
        if total <= 0.0 {
            return Err(Error::Invariant("total mass is zero".into()));
        }
        Self::build(points, weights, total)
    }

    fn build(points: Vec<SupportPoint>, weights: Vec<f64>, total: f64) -> Result<Self> {
        let mut support = Support::default();
        let mut merged: Vec<f64> = Vec::new();
        for (p, w) in points.into_iter().zip(weights) {
            let i = support.insert(p)?;
            if i == merged.len() {
                merged.push(0.0);
            }
            merged[i] += w / total;
        }
        let keep: Vec<bool> = merged.iter().map(|&w| w > 0.0).collect();
        let pts: Vec<SupportPoint> = support
            .0
            .into_iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(p, _)| p)
            .collect();
        let mut ws: Vec<f64> = merged.into_iter().filter(|&w| w > 0.0).collect();
        // Renormalise once more so the stored mass is one to rounding.
        let s: f64 = ws.iter().sum();
        ws.iter_mut().for_each(|w| *w /= s);
        let support = Support(pts);
        let radius = support.radius();
        Ok(FiniteDistribution {
            support,
            weights: ws,
            radius,
        })
    }

    pub fn dirac(p: impl Into<SupportPoint>) -> Self {
        let p = p.into();
        let radius = p.norm();
        FiniteDistribution {
            support: Support(vec![p]),
            weights: vec![1.0],
            radius,
        }
    }

    pub fn uniform(points: Vec<SupportPoint>) -> Result<Self> {
        let n = points.len();
        Self::normalized(points, vec![1.0; n])
    }

    /// One-dimensional convenience constructor.
    pub fn from_scalars(xs: &[f64], ws: &[f64]) -> Result<Self> {
        Self::new(
            xs.iter().map(|&x| SupportPoint::scalar(x)).collect(),
            ws.to_vec(),
        )
    }

    /// Weights of this distribution on `support`, zero where absent.
    /// Fails if an atom of `self` is missing from `support`.
    pub fn weights_on(&self, support: &Support) -> Result<Vec<f64>> {
        let mut out = vec![0.0; support.len()];
        for (p, &w) in self.support.points().iter().zip(&self.weights) {
            let i = support
                .index_of(p)
                .ok_or_else(|| Error::Domain(format!("atom {:?} not in support", p.0)))?;
            out[i] += w;
        }
        Ok(out)
    }

    /// Declares a radius bound; it must dominate every atom norm.
    pub fn with_radius(mut self, r: f64) -> Result<Self> {
        if r + MERGE_TOL < self.support.radius() {
            return Err(Error::Invariant(format!(
                "radius {r} below largest atom norm {}",
                self.support.radius()
            )));
        }
        self.radius = r;
        Ok(self)
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn points(&self) -> &[SupportPoint] {
        self.support.points()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn weight_of(&self, p: &SupportPoint) -> f64 {
        self.support.index_of(p).map_or(0.0, |i| self.weights[i])
    }

    /// Mean vector.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (p, &w) in self.points().iter().zip(&self.weights) {
            for (mi, xi) in m.iter_mut().zip(&p.0) {
                *mi += w * xi;
            }
        }
        m
    }

    /// Draws an atom index.
    pub fn sample_index(&self, rng: &mut RandomSource) -> usize {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }
}

fn check_weights(points: &[SupportPoint], weights: &[f64]) -> Result<f64> {
    if points.len() != weights.len() {
        return Err(Error::Invariant(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    if points.is_empty() {
        return Err(Error::Invariant("empty distribution".into()));
    }
    for &w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::Invariant(format!("invalid weight {w}")));
        }
    }
    Ok(weights.iter().sum())
}

/// A real function on a support.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    support: Arc<Support>,
    values: Vec<f64>,
}

impl Witness {
    pub fn new(support: Arc<Support>, values: Vec<f64>) -> Result<Self> {
        if support.len() != values.len() {
            return Err(Error::Invariant(format!(
                "{} support points but {} values",
                support.len(),
                values.len()
            )));
        }
        Ok(Witness { support, values })
    }

    pub fn from_fn(support: Arc<Support>, f: impl Fn(&SupportPoint) -> f64) -> Self {
        let values = support.points().iter().map(f).collect();
        Witness { support, values }
    }

    pub fn constant(support: Arc<Support>, c: f64) -> Self {
        let n = support.len();
        Witness {
            support,
            values: vec![c; n],
        }
    }

    pub fn support(&self) -> &Arc<Support> {
        &self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, p: &SupportPoint) -> Option<f64> {
        self.support.index_of(p).map(|i| self.values[i])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Witness {
        Witness {
            support: self.support.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `a * self + b * other`; both must live on the same support.
    pub fn combine(&self, a: f64, other: &Witness, b: f64) -> Result<Witness> {
        if self.support.points() != other.support.points() {
            return Err(Error::Domain("witnesses live on different supports".into()));
        }
        Ok(Witness {
            support: self.support.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `E_P[D]`. Every atom of `p` must carry a witness value.
pub fn expectation(p: &FiniteDistribution, d: &Witness) -> Result<f64> {
    let mut acc = 0.0;
    for (x, &w) in p.points().iter().zip(p.weights()) {
        let v = d
            .value_at(x)
            .ok_or_else(|| Error::Domain(format!("witness undefined at {:?}", x.0)))?;
        acc += w * v;
    }
    Ok(acc)
}

/// Joint mass on `rows x cols`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    rows: Support,
    cols: Support,
    mass: Vec<f64>,
}

impl Coupling {
    pub fn new(rows: Support, cols: Support, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != rows.len() * cols.len() {
            return Err(Error::Invariant(format!(
                "coupling has {} entries, expected {}x{}",
                mass.len(),
                rows.len(),
                cols.len()
            )));
        }
        Ok(Coupling { rows, cols, mass })
    }

    /// Product coupling `P x Q`.
    pub fn independent(p: &FiniteDistribution, q: &FiniteDistribution) -> Self {
        let mass = p
            .weights()
            .iter()
            .flat_map(|&a| q.weights().iter().map(move |&b| a * b))
            .collect();
        Coupling {
            rows: p.support().clone(),
            cols: q.support().clone(),
            mass,
        }
    }

    pub fn rows(&self) -> &Support {
        &self.rows
    }

    pub fn cols(&self) -> &Support {
        &self.cols
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mass[i * self.cols.len() + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let m = self.cols.len();
        self.mass.chunks(m).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let m = self.cols.len();
        let mut out = vec![0.0; m];
        for row in self.mass.chunks(m) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// Checks that the marginals are `p` and `q` within [`MARGINAL_TOL`].
    pub fn check_marginals(&self, p: &FiniteDistribution, q: &FiniteDistribution) -> Result<()> {
        let (mp, mq) = coupling_marginals(self)?;
        for (a, b, side) in [(&mp, p, "row"), (&mq, q, "column")] {
            let s = Support::union(&[a.support(), b.support()])?;
            let wa = a.weights_on(&s)?;
            let wb = b.weights_on(&s)?;
            let err = wa
                .iter()
                .zip(&wb)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            if err > MARGINAL_TOL {
                return Err(Error::Invariant(format!("{side} marginal off by {err}")));
            }
        }
        Ok(())
    }

    /// `E_M[c]` for a cost evaluated on (row, column) points.
    pub fn cost(&self, c: impl Fn(&SupportPoint, &SupportPoint) -> f64) -> f64 {
        let m = self.cols.len();
        let mut acc = 0.0;
        for (i, x) in self.rows.points().iter().enumerate() {
            for (j, y) in self.cols.points().iter().enumerate() {
                let w = self.mass[i * m + j];
                if w != 0.0 {
                    acc += w * c(x, y);
                }
            }
        }
        acc
    }
}

/// Row and column marginals; zero-mass atoms are dropped.
pub fn coupling_marginals(m: &Coupling) -> Result<(FiniteDistribution, FiniteDistribution)> {
    if let Some(v) = m.mass.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Invariant(format!("coupling has mass {v}")));
    }
    let rows = FiniteDistribution::new(m.rows.points().to_vec(), m.row_sums())?;
    let cols = FiniteDistribution::new(m.cols.points().to_vec(), m.col_sums())?;
    Ok((rows, cols))
}

/// Map `(theta, z) -> G_theta(z)`.
pub type GeneratorMap = Arc<dyn Fn(&[f64], &SupportPoint) -> SupportPoint + Send + Sync>;

/// A parametric family of maps pushed through a fixed finite noise law.
#[derive(Clone)]
pub struct GeneratorFamily {
    pub name: String,
    pub noise: FiniteDistribution,
    /// Inclusive bounds for each parameter coordinate.
    pub theta_box: Vec<(f64, f64)>,
    pub map: GeneratorMap,
    /// Declared Lipschitz constant of `theta -> G_theta(z)`, uniform in `z`.
    pub lipschitz: f64,
}

impl std::fmt::Debug for GeneratorFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeneratorFamily")
            .field("name", &self.name)
            .field("theta_box", &self.theta_box)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl GeneratorFamily {
    /// `G_theta(z) = z + theta`.
    pub fn shift(noise: FiniteDistribution, bound: f64) -> Self {
        let k = noise.dim();
        GeneratorFamily {
            name: "shift".into(),
            noise,
            theta_box: vec![(-bound, bound); k],
            map: Arc::new(|t, z| SupportPoint(z.0.iter().zip(t).map(|(a, b)| a + b).collect())),
            lipschitz: 1.0,
        }
    }

    /// `G_theta(z) = theta * z` for scalar theta.
    pub fn scale(noise: FiniteDistribution, bound: f64) -> Self {
        let l = noise.support().radius();
        GeneratorFamily {
            name: "scale".into(),
            noise,
            theta_box: vec![(-bound, bound)],
            map: Arc::new(|t, z| SupportPoint(z.0.iter().map(|a| a * t[0]).collect())),
            lipschitz: l,
        }
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta_box.len() {
            return Err(Error::Domain(format!(
                "theta has {} coordinates, family expects {}",
                theta.len(),
                self.theta_box.len()
            )));
        }
        for (t, (lo, hi)) in theta.iter().zip(&self.theta_box) {
            if !(t.is_finite() && *t >= *lo && *t <= *hi) {
                return Err(Error::Domain(format!("theta {t} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn apply(&self, theta: &[f64], z: &SupportPoint) -> SupportPoint {
        (self.map)(theta, z)
    }
}

/// Law of `G_theta(Z)`; coincident images are merged.
pub fn pushforward(family: &GeneratorFamily, theta: &[f64]) -> Result<FiniteDistribution> {
    family.check_theta(theta)?;
    let pts: Vec<SupportPoint> = family
        .noise
        .points()
        .iter()
        .map(|z| family.apply(theta, z))
        .collect();
    FiniteDistribution::new(pts, family.noise.weights().to_vec())
}

/// Seeded counter-based generator; streams are independent for distinct ids.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A generator keyed by `(seed, stream)`; draws do not depend on any other stream.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RandomSource { seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform on `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        use rand_distr::Distribution;
        rand_distr::StandardNormal.sample(&mut self.rng)
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Reads a distribution from CSV with header `w,x1,...,xk`.
/// Lines starting with `#` are comments. Mass within [`FILE_MASS_TOL`] of one is
/// renormalised; anything further off is rejected.
pub fn read_distribution_csv(reader: impl Read) -> Result<FiniteDistribution> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let k = headers.len().saturating_sub(1);
    if k == 0 || &headers[0] != "w" {
        return Err(Error::Parse("header must be w,x1,...,xk".into()));
    }
    for (i, h) in headers.iter().skip(1).enumerate() {
        if h != format!("x{}", i + 1) {
            return Err(Error::Parse(format!("unexpected column {h}")));
        }
    }
    let mut pts = Vec::new();
    let mut ws = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| Error::Parse(format!("row {}: {e}", line + 1)))?;
        if vals.len() != k + 1 {
            return Err(Error::Parse(format!(
                "row {} has {} fields",
                line + 1,
                vals.len()
            )));
        }
        ws.push(vals[0]);
        pts.push(SupportPoint(vals[1..].to_vec()));
    }
    let total = check_weights(&pts, &ws)?;
    if (total - 1.0).abs() > FILE_MASS_TOL {
        return Err(Error::Invariant(format!("weights sum to {total}")));
    }
    FiniteDistribution::normalized(pts, ws)
}

/// Reads bare points from CSV with header `x1,...,xk`; `#` lines are comments.
pub fn read_points_csv(reader: impl Read) -> Result<Support> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    for (i, h) in headers.iter().enumerate() {
        if h != format!("x{}", i + 1) {
            return Err(Error::Parse(format!("unexpected column {h}")));
        }
    }
    let mut pts = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| Error::Parse(format!("row {}: {e}", line + 1)))?;
        if vals.len() != headers.len() || vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse(format!("row {} is malformed", line + 1)));
        }
        pts.push(SupportPoint(vals));
    }
    Support::new(pts)
}

/// Writes a distribution in the format read by [`read_distribution_csv`].
pub fn write_distribution_csv(d: &FiniteDistribution, mut out: impl Write) -> Result<()> {
    let k = d.dim();
    let header: Vec<String> = std::iter::once("w".to_string())
        .chain((1..=k).map(|i| format!("x{i}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for (p, w) in d.points().iter().zip(d.weights()) {
        let row: Vec<String> = std::iter::once(format!("{w:?}"))
            .chain(p.0.iter().map(|x| format!("{x:?}")))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_csv_round_trip() {
        let s = read_points_csv("# grid\nx1,x2\n0,1\n2.5,-1\n".as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].coords(), &[2.5, -1.0]);
        assert!(read_points_csv("w,x1\n1,0\n".as_bytes()).is_err());
        assert!(read_points_csv("x1\nabc\n".as_bytes()).is_err());
    }

    #[test]
    fn merges_coincident_atoms() {
        let d = FiniteDistribution::from_scalars(&[0.0, 1e-12, 1.0], &[0.25, 0.25, 0.5]).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn drops_zero_weights() {
        let d = FiniteDistribution::from_scalars(&[0.0, 1.0, 2.0], &[0.5, 0.0, 0.5]).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.points()[1].0, vec![2.0]);
    }

    #[test]
    fn rejects_bad_mass() {
        assert!(FiniteDistribution::from_scalars(&[0.0, 1.0], &[0.5, 0.6]).is_err());
        assert!(FiniteDistribution::from_scalars(&[0.0, 1.0], &[1.5, -0.5]).is_err());
    }

    #[test]
    fn radius_is_largest_norm() {
        let d = FiniteDistribution::new(
            vec![SupportPoint(vec![3.0, 4.0]), SupportPoint(vec![0.0, 1.0])],
            vec![0.5, 0.5],
        )
        .unwrap();
        assert_eq!(d.radius(), 5.0);
        assert!(d.clone().with_radius(4.0).is_err());
        assert_eq!(d.with_radius(7.0).unwrap().radius(), 7.0);
    }

    #[test]
    fn pushforward_merges_images() {
        let noise = FiniteDistribution::from_scalars(&[-1.0, 1.0], &[0.5, 0.5]).unwrap();
        let fam = GeneratorFamily::scale(noise, 2.0);
        let p = pushforward(&fam, &[0.0]).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.weights(), &[1.0]);
        assert!(pushforward(&fam, &[3.0]).is_err());
    }

    #[test]
    fn independent_coupling_marginals() {
        let p = FiniteDistribution::from_scalars(&[0.0, 1.0], &[0.3, 0.7]).unwrap();
        let q = FiniteDistribution::from_scalars(&[5.0, 6.0, 7.0], &[0.2, 0.2, 0.6]).unwrap();
        let m = Coupling::independent(&p, &q);
        m.check_marginals(&p, &q).unwrap();
        let bad = Coupling::new(p.support().clone(), q.support().clone(), vec![-0.1; 6]).unwrap();
        assert!(coupling_marginals(&bad).is_err());
    }

    #[test]
    fn expectation_requires_values() {
        let s = Arc::new(Support::from_scalars(&[0.0, 1.0]).unwrap());
        let d = Witness::new(s, vec![2.0, 4.0]).unwrap();
        let p = FiniteDistribution::from_scalars(&[0.0, 1.0], &[0.5, 0.5]).unwrap();
        assert_eq!(expectation(&p, &d).unwrap(), 3.0);
        let q = FiniteDistribution::from_scalars(&[2.0], &[1.0]).unwrap();
        assert!(expectation(&q, &d).is_err());
    }

    #[test]
    fn csv_round_trip_and_renormalisation() {
        let text = "# comment\nw,x1,x2\n0.5,0,1\n0.5000001,2,3\n";
        let d = read_distribution_csv(text.as_bytes()).unwrap();
        assert!((d.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut buf = Vec::new();
        write_distribution_csv(&d, &mut buf).unwrap();
        let back = read_distribution_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);
        assert!(read_distribution_csv("w,x1\n0.5,0\n0.4,1\n".as_bytes()).is_err());
        assert!(read_distribution_csv("p,x1\n1,0\n".as_bytes()).is_err());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draw = |stream| {
            let mut r = RandomSource::stream(7, stream);
            (0..4).map(|_| r.next_u64()).collect::<Vec<_>>()
        };
        let (a, b, c) = (draw(1), draw(1), draw(2));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
