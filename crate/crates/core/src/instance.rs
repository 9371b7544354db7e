//! Problem instances, profile generators, and the JSON-lines instance format.
//!
//! Node indexing is shared by every module in the crate: node `0` is the
//! depot and nodes `1..=n` are the clients. The profile matrix is stored per
//! vehicle, `profiles[k][i - 1]` being the profile value of client `i` for
//! vehicle `k`.

use std::f64::consts::{PI, SQRT_2};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A point of the unit square.
pub type Point = [f64; 2];

/// Upper bound on re-draws of a zone's availability row before giving up.
pub const ZONE_REPAIR_RETRIES: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum InstanceError {
    #[error("invalid instance {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("zone feasibility repair failed after {retries} retries")]
    RepairExhausted { retries: usize },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    Validation {
        line: usize,
        #[source]
        source: Box<InstanceError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which objective/feasibility semantics the profile matrix carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Profiles are preference scores in `[0, 1]` traded against duration.
    Preferences,
    /// Profiles are binary permissions; forbidden pairs are hard constraints.
    ZoneConstraints,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Preferences => "preferences",
            Variant::ZoneConstraints => "zone-constraints",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "preferences" => Ok(Variant::Preferences),
            "zone-constraints" | "zone" => Ok(Variant::ZoneConstraints),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

/// Profile distribution used to generate the profile matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistKind {
    Random,
    Angle,
    Cluster,
    Zone,
}

impl DistKind {
    pub const ALL: [DistKind; 4] = [
        DistKind::Random,
        DistKind::Angle,
        DistKind::Cluster,
        DistKind::Zone,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DistKind::Random => "random",
            DistKind::Angle => "angle",
            DistKind::Cluster => "cluster",
            DistKind::Zone => "zone",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether this distribution may be paired with `variant`.
    pub fn supports(self, variant: Variant) -> bool {
        match (self, variant) {
            (DistKind::Zone, Variant::Preferences) => false,
            (DistKind::Random | DistKind::Cluster, Variant::ZoneConstraints) => false,
            _ => true,
        }
    }
}

impl std::str::FromStr for DistKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(DistKind::Random),
            "angle" => Ok(DistKind::Angle),
            "cluster" => Ok(DistKind::Cluster),
            "zone" => Ok(DistKind::Zone),
            other => Err(format!("unknown distribution `{other}`")),
        }
    }
}

/// A profiled vehicle routing instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub n: usize,
    pub m: usize,
    #[serde(with = "real17::point")]
    pub depot: Point,
    #[serde(with = "real17::points")]
    pub clients: Vec<Point>,
    #[serde(with = "real17::vec")]
    pub demands: Vec<f64>,
    #[serde(with = "real17::vec")]
    pub capacities: Vec<f64>,
    #[serde(with = "real17::vec")]
    pub speeds: Vec<f64>,
    #[serde(with = "real17::matrix")]
    pub profiles: Vec<Vec<f64>>,
    pub variant: Variant,
    #[serde(with = "real17::scalar")]
    pub alpha: f64,
    pub dist_kind: DistKind,
    pub seed: u64,
}

impl Instance {
    /// Coordinates of node `i` (0 = depot).
    #[inline]
    pub fn coord(&self, node: usize) -> Point {
        if node == 0 {
            self.depot
        } else {
            self.clients[node - 1]
        }
    }

    /// Demand of node `i`; the depot has none.
    #[inline]
    pub fn demand(&self, node: usize) -> f64 {
        if node == 0 {
            0.0
        } else {
            self.demands[node - 1]
        }
    }

    /// Profile of `node` for vehicle `k`, with the depot convention: 0 under
    /// preferences, 1 (always allowed) under zone constraints.
    #[inline]
    pub fn profile(&self, k: usize, node: usize) -> f64 {
        if node == 0 {
            match self.variant {
                Variant::Preferences => 0.0,
                Variant::ZoneConstraints => 1.0,
            }
        } else {
            self.profiles[k][node - 1]
        }
    }

    /// Whether vehicle `k` may serve `node` at all (zone permission).
    #[inline]
    pub fn allowed(&self, k: usize, node: usize) -> bool {
        self.variant != Variant::ZoneConstraints || self.profile(k, node) == 1.0
    }

    /// Euclidean distance between two nodes.
    #[inline]
    pub fn dist(&self, a: usize, b: usize) -> f64 {
        let p = self.coord(a);
        let q = self.coord(b);
        (p[0] - q[0]).hypot(p[1] - q[1])
    }

    pub fn max_capacity(&self) -> f64 {
        self.capacities.iter().cloned().fold(f64::MIN, f64::max)
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        let fail = |reason: String| {
            Err(InstanceError::Invalid {
                id: self.id.clone(),
                reason,
            })
        };
        if self.m == 0 {
            return fail("at least one vehicle is required".into());
        }
        if self.clients.len() != self.n || self.demands.len() != self.n {
            return fail(format!(
                "expected {} clients and demands, got {} and {}",
                self.n,
                self.clients.len(),
                self.demands.len()
            ));
        }
        if self.capacities.len() != self.m || self.speeds.len() != self.m {
            return fail("capacities and speeds must have one entry per vehicle".into());
        }
        if self.profiles.len() != self.m || self.profiles.iter().any(|row| row.len() != self.n) {
            return fail("profile matrix must be m x n".into());
        }
        let in_unit = |p: &Point| p.iter().all(|c| (0.0..=1.0).contains(c));
        if !in_unit(&self.depot) || !self.clients.iter().all(in_unit) {
            return fail("coordinates must lie in the unit square".into());
        }
        if !self.capacities.iter().all(|&q| q > 0.0 && q.is_finite()) {
            return fail("capacities must be positive".into());
        }
        if !self.speeds.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return fail("speeds must be positive".into());
        }
        if !self.demands.iter().all(|&d| d > 0.0 && d.is_finite()) {
            return fail("demands must be positive".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail("alpha must be nonnegative".into());
        }
        if !self.dist_kind.supports(self.variant) {
            return fail(format!(
                "distribution {} cannot be used with variant {}",
                self.dist_kind.as_str(),
                self.variant.as_str()
            ));
        }
        let qmax = self.max_capacity();
        for (i, &d) in self.demands.iter().enumerate() {
            if d > qmax {
                return fail(format!("client {} demand {d} exceeds every capacity", i + 1));
            }
        }
        match self.variant {
            Variant::Preferences => {
                for row in &self.profiles {
                    if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                        return fail(format!("preference {p} outside [0, 1]"));
                    }
                }
            }
            Variant::ZoneConstraints => {
                for row in &self.profiles {
                    if let Some(p) = row.iter().find(|p| **p != 0.0 && **p != 1.0) {
                        return fail(format!("zone permission {p} is not 0 or 1"));
                    }
                }
                for i in 0..self.n {
                    let servable = (0..self.m)
                        .any(|k| self.profiles[k][i] == 1.0 && self.demands[i] <= self.capacities[k]);
                    if !servable {
                        return fail(format!("client {} has no permitted vehicle that can carry it", i + 1));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntRange {
    pub lo: u32,
    pub hi: u32,
}

/// Inclusive real range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealRange {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    pub m: usize,
    pub dist_kind: DistKind,
    pub variant: Variant,
    pub alpha: f64,
    pub demand_range: IntRange,
    /// Capacities are drawn as integers inside this interval.
    pub capacity_range: RealRange,
    pub speed_range: RealRange,
    pub seed: u64,
}

impl GenConfig {
    /// Defaults: demands in `[1, 9]`, capacities in `[20, 40]`, speeds in `[0.5, 1.0]`.
    pub fn new(n: usize, m: usize, dist_kind: DistKind, seed: u64) -> Self {
        let variant = if dist_kind == DistKind::Zone {
            Variant::ZoneConstraints
        } else {
            Variant::Preferences
        };
        GenConfig {
            n,
            m,
            dist_kind,
            variant,
            alpha: 0.1,
            demand_range: IntRange { lo: 1, hi: 9 },
            capacity_range: RealRange { lo: 20.0, hi: 40.0 },
            speed_range: RealRange { lo: 0.5, hi: 1.0 },
            seed,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        let err = |s: &str| Err(InstanceError::Config(s.to_string()));
        if self.n == 0 {
            return err("n must be at least 1");
        }
        if self.m == 0 {
            return err("m must be at least 1");
        }
        if self.demand_range.lo == 0 || self.demand_range.lo > self.demand_range.hi {
            return err("demand range must be a nonempty range of positive integers");
        }
        let cap = self.capacity_range;
        if !(cap.lo > 0.0 && cap.lo.ceil() <= cap.hi.floor()) {
            return err("capacity range must contain a positive integer");
        }
        let sp = self.speed_range;
        if !(sp.lo > 0.0 && sp.lo <= sp.hi && sp.hi.is_finite()) {
            return err("speed range must be a nonempty positive interval");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return err("alpha must be nonnegative");
        }
        if !self.dist_kind.supports(self.variant) {
            return Err(InstanceError::Config(format!(
                "distribution {} cannot be used with variant {}",
                self.dist_kind.as_str(),
                self.variant.as_str()
            )));
        }
        Ok(())
    }
}

/// Generates an instance; a pure function of `config`.
pub fn generate(config: &GenConfig) -> Result<Instance, InstanceError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (n, m) = (config.n, config.m);

    let depot = [rng.gen::<f64>(), rng.gen::<f64>()];
    let clients: Vec<Point> = (0..n).map(|_| [rng.gen(), rng.gen()]).collect();
    let demands: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(config.demand_range.lo..=config.demand_range.hi) as f64)
        .collect();
    let (qlo, qhi) = (
        config.capacity_range.lo.ceil() as u64,
        config.capacity_range.hi.floor() as u64,
    );
    let capacities: Vec<f64> = (0..m).map(|_| rng.gen_range(qlo..=qhi) as f64).collect();
    let sp = config.speed_range;
    let speeds: Vec<f64> = (0..m)
        .map(|_| {
            if sp.lo == sp.hi {
                sp.lo
            } else {
                rng.gen_range(sp.lo..=sp.hi)
            }
        })
        .collect();

    let profiles = match config.dist_kind {
        DistKind::Random => profile_random(n, m, &mut rng),
        DistKind::Angle => profile_angle(depot, &clients, m, &mut rng),
        DistKind::Cluster => profile_cluster(&clients, m, &mut rng),
        DistKind::Zone => profile_zone_with_capacity(&clients, m, &demands, &capacities, &mut rng)?.matrix(),
    };

    let instance = Instance {
        id: format!("{}-n{}-m{}-s{}", config.dist_kind.as_str(), n, m, config.seed),
        n,
        m,
        depot,
        clients,
        demands,
        capacities,
        speeds,
        profiles,
        variant: config.variant,
        alpha: config.alpha,
        dist_kind: config.dist_kind,
        seed: config.seed,
    };
    instance.validate()?;
    Ok(instance)
}

/// Independent uniform preference scores.
pub fn profile_random<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..m).map(|_| (0..n).map(|_| rng.gen::<f64>()).collect()).collect()
}

/// Equal angular sectors around the depot, randomly rotated, one per vehicle.
pub fn profile_angle<R: Rng + ?Sized>(depot: Point, clients: &[Point], m: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let offset = rng.gen_range(0.0..2.0 * PI);
    let mut sectors: Vec<usize> = (0..m).collect();
    sectors.shuffle(rng);
    angle_profile_with(depot, clients, offset, &sectors)
}

/// Sector membership with an explicit rotation `offset` and vehicle-to-sector
/// assignment `sector_of[k]`. Sectors are half-open `[lo, hi)` in angle.
pub fn angle_profile_with(depot: Point, clients: &[Point], offset: f64, sector_of: &[usize]) -> Vec<Vec<f64>> {
    let m = sector_of.len();
    let width = 2.0 * PI / m as f64;
    let client_sector: Vec<usize> = clients
        .iter()
        .map(|c| {
            let theta = (c[1] - depot[1]).atan2(c[0] - depot[0]);
            let rel = (theta - offset).rem_euclid(2.0 * PI);
            ((rel / width).floor() as usize).min(m - 1)
        })
        .collect();
    sector_of
        .iter()
        .map(|&s| client_sector.iter().map(|&cs| if cs == s { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// One uniformly placed center per vehicle; score `1 - dist / sqrt(2)`.
pub fn profile_cluster<R: Rng + ?Sized>(clients: &[Point], m: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let centers: Vec<Point> = (0..m).map(|_| [rng.gen(), rng.gen()]).collect();
    cluster_profile_with(clients, &centers)
}

pub fn cluster_profile_with(clients: &[Point], centers: &[Point]) -> Vec<Vec<f64>> {
    centers
        .iter()
        .map(|c| {
            clients
                .iter()
                .map(|p| {
                    let d = (p[0] - c[0]).hypot(p[1] - c[1]);
                    (1.0 - d / SQRT_2).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect()
}

/// The zone layout behind a zone-constraint profile matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneLayout {
    pub centers: Vec<Point>,
    /// Zone index of each client.
    pub membership: Vec<usize>,
    /// `available[k][z]`: vehicle `k` may enter zone `z`.
    pub available: Vec<Vec<bool>>,
}

impl ZoneLayout {
    pub fn zone_count(&self) -> usize {
        self.centers.len()
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.available
            .iter()
            .map(|row| self.membership.iter().map(|&z| if row[z] { 1.0 } else { 0.0 }).collect())
            .collect()
    }
}

/// Zone permissions: between `m` and `3m` zones, Bernoulli(1/2) availability per
/// (vehicle, zone), repaired so that every client has a permitted vehicle.
pub fn profile_zone<R: Rng + ?Sized>(clients: &[Point], m: usize, rng: &mut R) -> Result<Vec<Vec<f64>>, InstanceError> {
    zone_layout(clients, m, rng, |_, _| true).map(|z| z.matrix())
}

fn profile_zone_with_capacity<R: Rng + ?Sized>(
    clients: &[Point],
    m: usize,
    demands: &[f64],
    capacities: &[f64],
    rng: &mut R,
) -> Result<ZoneLayout, InstanceError> {
    zone_layout_inner(clients, m, rng, &|k, max_demand| capacities[k] >= max_demand, Some(demands))
}

/// Draws a zone layout. `can_carry(k, max_demand_in_zone)` decides whether a
/// vehicle counts toward a zone's coverage during repair.
pub fn zone_layout<R, F>(clients: &[Point], m: usize, rng: &mut R, can_carry: F) -> Result<ZoneLayout, InstanceError>
where
    R: Rng + ?Sized,
    F: Fn(usize, f64) -> bool,
{
    zone_layout_inner(clients, m, rng, &can_carry, None)
}

fn zone_layout_inner<R, F>(
    clients: &[Point],
    m: usize,
    rng: &mut R,
    can_carry: &F,
    demands: Option<&[f64]>,
) -> Result<ZoneLayout, InstanceError>
where
    R: Rng + ?Sized,
    F: Fn(usize, f64) -> bool,
{
    let zones = rng.gen_range(m..=3 * m);
    let centers: Vec<Point> = (0..zones).map(|_| [rng.gen(), rng.gen()]).collect();
    let membership: Vec<usize> = clients
        .iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (z, c) in centers.iter().enumerate() {
                let d = (p[0] - c[0]).hypot(p[1] - c[1]);
                if d < best_d {
                    best_d = d;
                    best = z;
                }
            }
            best
        })
        .collect();
    let mut available: Vec<Vec<bool>> = (0..m).map(|_| (0..zones).map(|_| rng.gen_bool(0.5)).collect()).collect();

    for z in 0..zones {
        let members: Vec<usize> = (0..clients.len()).filter(|&i| membership[i] == z).collect();
        if members.is_empty() {
            continue;
        }
        let max_demand = demands
            .map(|d| members.iter().map(|&i| d[i]).fold(0.0, f64::max))
            .unwrap_or(0.0);
        let covered = |av: &Vec<Vec<bool>>| (0..m).any(|k| av[k][z] && can_carry(k, max_demand));
        let mut tries = 0;
        while !covered(&available) {
            if tries == ZONE_REPAIR_RETRIES {
                return Err(InstanceError::RepairExhausted { retries: tries });
            }
            for row in available.iter_mut() {
                row[z] = rng.gen_bool(0.5);
            }
            tries += 1;
        }
    }
    Ok(ZoneLayout {
        centers,
        membership,
        available,
    })
}

/// Writes instances as JSON lines.
pub fn write_instances<P: AsRef<Path>>(path: P, instances: &[Instance]) -> Result<(), InstanceError> {
    let mut out = BufWriter::new(File::create(path)?);
    for inst in instances {
        serde_json::to_writer(&mut out, inst).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads and validates a JSON-lines instance file. Blank lines are skipped.
pub fn read_instances<P: AsRef<Path>>(path: P) -> Result<Vec<Instance>, InstanceError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: Instance = serde_json::from_str(&line).map_err(|source| InstanceError::Parse { line: idx + 1, source })?;
        inst.validate().map_err(|e| InstanceError::Validation {
            line: idx + 1,
            source: Box::new(e),
        })?;
        out.push(inst);
    }
    Ok(out)
}

/// Reals as decimal strings with 17 significant digits.
pub(crate) mod real17 {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn fmt(x: f64) -> String {
        format!("{x:.16e}")
    }

    pub fn parse<E: serde::de::Error>(s: &str) -> Result<f64, E> {
        s.parse::<f64>()
            .map_err(|_| E::custom(format!("invalid real `{s}`")))
    }

    pub mod scalar {
        use super::*;

        pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
            s.serialize_str(&fmt(*x))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            let s = String::deserialize(d)?;
            parse(&s)
        }
    }

    pub mod vec {
        use super::*;
        use serde::ser::SerializeSeq;

        pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(xs.len()))?;
            for x in xs {
                seq.serialize_element(&fmt(*x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<String>::deserialize(d)?.iter().map(|s| parse(s)).collect()
        }
    }

    pub mod point {
        use super::*;

        pub fn serialize<S: Serializer>(p: &[f64; 2], s: S) -> Result<S::Ok, S::Error> {
            super::vec::serialize(&p[..], s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; 2], D::Error> {
            let v = super::vec::deserialize(d)?;
            <[f64; 2]>::try_from(v.as_slice()).map_err(|_| D::Error::custom("a point has two coordinates"))
        }
    }

    pub mod points {
        use super::*;
        use serde::ser::SerializeSeq;

        pub fn serialize<S: Serializer>(ps: &[[f64; 2]], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(ps.len()))?;
            for p in ps {
                seq.serialize_element(&[fmt(p[0]), fmt(p[1])])?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<[f64; 2]>, D::Error> {
            Vec::<[String; 2]>::deserialize(d)?
                .iter()
                .map(|[x, y]| Ok([parse(x)?, parse(y)?]))
                .collect()
        }
    }

    pub mod matrix {
        use super::*;
        use serde::ser::SerializeSeq;

        pub fn serialize<S: Serializer>(rows: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(rows.len()))?;
            for row in rows {
                let r: Vec<String> = row.iter().map(|x| fmt(*x)).collect();
                seq.serialize_element(&r)?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
            Vec::<Vec<String>>::deserialize(d)?
                .iter()
                .map(|row| row.iter().map(|s| parse(s)).collect())
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn random_profiles_in_unit_interval() {
        let inst = generate(&GenConfig::new(3, 2, DistKind::Random, 7)).unwrap();
        assert_eq!(inst.profiles.len(), 2);
        assert!(inst.profiles.iter().all(|r| r.len() == 3));
        assert!(inst.profiles.iter().flatten().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn angle_columns_are_one_hot() {
        let inst = generate(&GenConfig::new(60, 3, DistKind::Angle, 11)).unwrap();
        for i in 0..60 {
            let col: Vec<f64> = (0..3).map(|k| inst.profiles[k][i]).collect();
            assert_eq!(col.iter().filter(|&&p| p == 1.0).count(), 1);
            assert_eq!(col.iter().filter(|&&p| p == 0.0).count(), 2);
            assert_eq!(col.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn angle_single_vehicle_covers_everything() {
        let clients: Vec<Point> = (0..20).map(|i| [i as f64 / 20.0, 1.0 - i as f64 / 40.0]).collect();
        let p = profile_angle([0.5, 0.5], &clients, 1, &mut rng(3));
        assert!(p[0].iter().all(|&x| x == 1.0));
    }

    #[test]
    fn angle_boundary_is_half_open() {
        // offset 0, m = 4: sectors [0, 90), [90, 180), ...
        let depot = [0.5, 0.5];
        let on_boundary = [0.5, 0.9]; // exactly 90 degrees
        let p = angle_profile_with(depot, &[on_boundary], 0.0, &[0, 1, 2, 3]);
        assert_eq!(p[1][0], 1.0);
        assert_eq!(p[0][0], 0.0);
    }

    #[test]
    fn angle_ten_degrees_goes_to_first_sector() {
        let depot = [0.5, 0.5];
        let t = 10f64.to_radians();
        let c = [0.5 + 0.3 * t.cos(), 0.5 + 0.3 * t.sin()];
        let p = angle_profile_with(depot, &[c], 0.0, &[0, 1, 2, 3]);
        let col: Vec<f64> = p.iter().map(|r| r[0]).collect();
        assert_eq!(col, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn cluster_scores() {
        let p = cluster_profile_with(&[[0.3, 0.3], [1.0, 1.0], [0.5, 0.9]], &[[0.3, 0.3], [0.0, 0.0], [0.5, 0.5]]);
        assert_eq!(p[0][0], 1.0);
        assert!(p[1][1].abs() < 1e-15);
        let expected = 1.0 - 0.4 / SQRT_2;
        assert!((p[2][2] - expected).abs() < 1e-12);
        assert!((p[2][2] - 0.7172).abs() < 1e-4);
    }

    #[test]
    fn zone_count_within_bounds() {
        let clients: Vec<Point> = (0..10).map(|i| [i as f64 / 10.0, 0.5]).collect();
        for seed in 0..200 {
            let z = zone_layout(&clients, 2, &mut rng(seed), |_, _| true).unwrap();
            assert!((2..=6).contains(&z.zone_count()));
        }
    }

    #[test]
    fn zone_single_vehicle_gets_everything() {
        let clients: Vec<Point> = (0..10).map(|i| [i as f64 / 10.0, 0.2]).collect();
        for seed in 0..50 {
            let p = profile_zone(&clients, 1, &mut rng(seed)).unwrap();
            assert!(p[0].iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn zone_columns_feasible_and_deterministic() {
        let clients = [[0.1, 0.2], [0.8, 0.3], [0.5, 0.5], [0.9, 0.9]];
        let a = profile_zone(&clients, 2, &mut rng(42)).unwrap();
        let b = profile_zone(&clients, 2, &mut rng(42)).unwrap();
        assert_eq!(a, b);
        for i in 0..4 {
            assert!(a.iter().any(|row| row[i] == 1.0));
        }
    }

    #[test]
    fn repair_failure_is_reported() {
        let clients = [[0.1, 0.2]];
        let err = zone_layout(&clients, 2, &mut rng(1), |_, _| false).unwrap_err();
        assert!(matches!(err, InstanceError::RepairExhausted { .. }));
    }

    #[test]
    fn zone_requires_zone_variant() {
        let mut cfg = GenConfig::new(5, 2, DistKind::Zone, 1);
        cfg.variant = Variant::Preferences;
        assert!(matches!(generate(&cfg), Err(InstanceError::Config(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in DistKind::ALL {
            let cfg = GenConfig::new(12, 3, kind, 99);
            let a = generate(&cfg).unwrap();
            let b = generate(&cfg).unwrap();
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        }
    }

    #[test]
    fn rejects_out_of_range_preference() {
        let mut inst = generate(&GenConfig::new(3, 2, DistKind::Random, 5)).unwrap();
        inst.profiles[0][1] = 1.5;
        assert!(inst.validate().is_err());
    }

    #[test]
    fn reals_use_seventeen_digits() {
        assert_eq!(real17::fmt(0.1), "1.0000000000000001e-1");
        assert_eq!(real17::fmt(5.0), "5.0000000000000000e0");
    }
}
