//! Household load generation: an occupant wandering between four rooms
//! (a Markov chain) switches on the appliances present in the current room
//! with per-interval probabilities. Non-schedulable requests must be served
//! immediately, schedulable ones may be deferred by the scheduler.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROOMS: usize = 4;
const STOCHASTIC_TOL: f64 = 1e-12;

/// Room index in `1..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Room(u8);

impl Room {
    pub fn new(index: u8) -> Result<Self> {
        if (1..=ROOMS as u8).contains(&index) {
            Ok(Room(index))
        } else {
            Err(Error::Domain(format!("room index {index} outside 1..=4")))
        }
    }

    pub fn index(self) -> u8 {
        self.0
    }

    fn slot(self) -> usize {
        self.0 as usize - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    /// HVAC equipment is present in every room.
    AllRooms,
    Room(Room),
}

impl Location {
    pub fn contains(self, room: Room) -> bool {
        match self {
            Location::AllRooms => true,
            Location::Room(r) => r == room,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Hvac,
    Entertainment,
    Kitchen,
    Other,
}

impl Category {
    /// Synthetic per-interval activation probabilities.
    pub fn default_usage_prob(self) -> f64 {
        match self {
            Category::Hvac => 0.15,
            Category::Entertainment => 0.10,
            Category::Kitchen => 0.05,
            Category::Other => 0.03,
        }
    }

    fn from_name(name: &str) -> Self {
        let n = name.to_ascii_lowercase();
        let any = |keys: &[&str]| keys.iter().any(|k| n.contains(k));
        if any(&["conditioner", "fan", "heater", "hvac"]) {
            Category::Hvac
        } else if any(&["tv", "audio", "computer"]) {
            Category::Entertainment
        } else if any(&["microwave", "rice", "oven", "cooker"]) {
            Category::Kitchen
        } else {
            Category::Other
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Appliance {
    pub name: String,
    pub power_kw: f64,
    pub location: Location,
    pub schedulable: bool,
}

impl Appliance {
    pub fn new(name: &str, power_kw: f64, location: Location, schedulable: bool) -> Result<Self> {
        if !(power_kw > 0.0) || !power_kw.is_finite() {
            return Err(Error::Config(format!("appliance {name}: power must be > 0 kW")));
        }
        Ok(Appliance {
            name: name.to_string(),
            power_kw,
            location,
            schedulable,
        })
    }

    pub fn category(&self) -> Category {
        Category::from_name(&self.name)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ApplianceRecord {
    name: String,
    power_kw: f64,
    room: String,
    schedulable: bool,
}

/// The twelve-appliance household inventory.
pub fn default_catalog() -> Vec<Appliance> {
    read_catalog(include_str!("../data/appliances.csv").as_bytes())
        .expect("bundled appliance catalog is valid")
}

/// Reads `name,power_kw,room,schedulable`; `room` is `1`..`4` or `all`.
pub fn read_catalog<R: Read>(reader: R) -> Result<Vec<Appliance>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize::<ApplianceRecord>() {
        let rec = rec?;
        let location = if rec.room.eq_ignore_ascii_case("all") {
            Location::AllRooms
        } else {
            let idx: u8 = rec
                .room
                .parse()
                .map_err(|_| Error::Config(format!("appliance {}: bad room `{}`", rec.name, rec.room)))?;
            Location::Room(Room::new(idx).map_err(|e| Error::Config(e.to_string()))?)
        };
        out.push(Appliance::new(&rec.name, rec.power_kw, location, rec.schedulable)?);
    }
    if out.is_empty() {
        return Err(Error::Config("appliance catalog is empty".into()));
    }
    Ok(out)
}

pub fn load_catalog(path: &Path) -> Result<Vec<Appliance>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_catalog(file)
}

pub fn write_catalog<W: std::io::Write>(appliances: &[Appliance], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for a in appliances {
        wtr.serialize(ApplianceRecord {
            name: a.name.clone(),
            power_kw: a.power_kw,
            room: match a.location {
                Location::AllRooms => "all".into(),
                Location::Room(r) => r.index().to_string(),
            },
            schedulable: a.schedulable,
        })?;
    }
    wtr.flush().map_err(|e| Error::io("<catalog csv>", e))?;
    Ok(())
}

/// Occupant movement chain and appliance activation probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupantChain {
    transition: [[f64; ROOMS]; ROOMS],
    usage_prob: Vec<f64>,
}

impl OccupantChain {
    pub fn new(transition: [[f64; ROOMS]; ROOMS], usage_prob: Vec<f64>) -> Result<Self> {
        for (i, row) in transition.iter().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::Config(format!("transition row {i} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Config(format!(
                    "transition row {i} sums to {sum}, expected 1"
                )));
            }
        }
        if let Some(p) = usage_prob.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("usage probability {p} outside [0, 1]")));
        }
        Ok(OccupantChain {
            transition,
            usage_prob,
        })
    }

    /// Stay with probability `stay`, otherwise move uniformly to another room.
    pub fn uniform_moves(stay: f64, usage_prob: Vec<f64>) -> Result<Self> {
        let move_p = (1.0 - stay) / (ROOMS - 1) as f64;
        let mut t = [[move_p; ROOMS]; ROOMS];
        for (i, row) in t.iter_mut().enumerate() {
            row[i] = stay;
        }
        Self::new(t, usage_prob)
    }

    /// 0.7 stay probability and category-based usage probabilities.
    pub fn default_for(appliances: &[Appliance]) -> Self {
        let probs = appliances
            .iter()
            .map(|a| a.category().default_usage_prob())
            .collect();
        Self::uniform_moves(0.7, probs).expect("default chain is stochastic")
    }

    pub fn transition(&self) -> &[[f64; ROOMS]; ROOMS] {
        &self.transition
    }

    pub fn usage_prob(&self) -> &[f64] {
        &self.usage_prob
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadRequest {
    /// Index into the appliance catalog.
    pub appliance: usize,
    pub power_kw: f64,
    pub interval: usize,
    pub duration: usize,
    pub schedulable: bool,
}

/// Samples the next room from the current room's row.
pub fn step_occupant<R: Rng + ?Sized>(room: Room, chain: &OccupantChain, rng: &mut R) -> Room {
    let row = &chain.transition[room.slot()];
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return Room(j as u8 + 1);
        }
    }
    // Rounding left `u` above the accumulated mass: take the last reachable room.
    let last = row.iter().rposition(|&p| p > 0.0).unwrap_or(room.slot());
    Room(last as u8 + 1)
}

pub const MIN_DURATION: usize = 1;
pub const MAX_DURATION: usize = 6;

/// Draws activation requests for appliances located in the occupant's room.
/// Durations are uniform in `1..=6` intervals.
pub fn draw_load_requests<R: Rng + ?Sized>(
    room: Room,
    chain: &OccupantChain,
    appliances: &[Appliance],
    n: usize,
    rng: &mut R,
) -> Vec<LoadRequest> {
    let mut out = Vec::new();
    for (idx, (appliance, &p)) in appliances.iter().zip(&chain.usage_prob).enumerate() {
        if !appliance.location.contains(room) || p <= 0.0 {
            continue;
        }
        if rng.gen::<f64>() < p {
            out.push(LoadRequest {
                appliance: idx,
                power_kw: appliance.power_kw,
                interval: n,
                duration: rng.gen_range(MIN_DURATION..=MAX_DURATION),
                schedulable: appliance.schedulable,
            });
        }
    }
    out
}

/// Total cluster demand from its nanogrid loads (appliances plus EV charging).
pub fn cluster_demand(nanogrid_loads: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for &l in nanogrid_loads {
        if !(l >= 0.0) || !l.is_finite() {
            return Err(Error::Domain(format!("nanogrid load {l} kW must be >= 0")));
        }
        total += l;
    }
    Ok(total)
}

/// One household day: walk the chain and collect requests, skipping
/// appliances that are still running from an earlier request.
pub fn simulate_household<R: Rng + ?Sized>(
    start_room: Room,
    chain: &OccupantChain,
    appliances: &[Appliance],
    horizon: usize,
    rng: &mut R,
) -> Vec<LoadRequest> {
    let mut busy_until = vec![0usize; appliances.len()];
    let mut room = start_room;
    let mut out = Vec::new();
    for n in 0..horizon {
        room = step_occupant(room, chain, rng);
        for req in draw_load_requests(room, chain, appliances, n, rng) {
            if busy_until[req.appliance] <= n {
                busy_until[req.appliance] = n + req.duration;
                out.push(req);
            }
        }
    }
    out
}

/// Adds each request's power over `[start, start + duration)`, clipped to the horizon.
pub fn accumulate_profile(profile: &mut [f64], power_kw: f64, start: usize, duration: usize) {
    let end = (start + duration).min(profile.len());
    for p in profile.iter_mut().take(end).skip(start) {
        *p += power_kw;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn idx(cat: &[Appliance], name: &str) -> usize {
        cat.iter().position(|a| a.name == name).unwrap()
    }

    #[test]
    fn catalog_matches_household_inventory() {
        let cat = default_catalog();
        assert_eq!(cat.len(), 12);
        let tv = &cat[idx(&cat, "tv")];
        assert_eq!(tv.power_kw, 0.130);
        assert_eq!(tv.location, Location::Room(Room(2)));
        assert!(!tv.schedulable);
        let ac = &cat[idx(&cat, "air_conditioner")];
        assert_eq!(ac.location, Location::AllRooms);
        assert_eq!(cat.iter().filter(|a| a.schedulable).count(), 7);
        assert_eq!(ac.category(), Category::Hvac);
        assert_eq!(cat[idx(&cat, "rice_cooker")].category(), Category::Kitchen);
        assert_eq!(cat[idx(&cat, "hair_dryer")].category(), Category::Other);
    }

    #[test]
    fn catalog_csv_roundtrip_and_errors() {
        let cat = default_catalog();
        let mut buf = Vec::new();
        write_catalog(&cat, &mut buf).unwrap();
        assert_eq!(read_catalog(&buf[..]).unwrap(), cat);
        let bad = "name,power_kw,room,schedulable\nx,1.0,7,true\n";
        assert!(matches!(read_catalog(bad.as_bytes()), Err(Error::Config(_))));
        let neg = "name,power_kw,room,schedulable\nx,-1.0,1,true\n";
        assert!(read_catalog(neg.as_bytes()).is_err());
    }

    #[test]
    fn chain_validation() {
        let mut t = [[0.25; 4]; 4];
        t[0][0] = 0.3;
        assert!(matches!(OccupantChain::new(t, vec![]), Err(Error::Config(_))));
        let mut t = [[0.25; 4]; 4];
        t[1] = [1.5, -0.5, 0.0, 0.0];
        assert!(OccupantChain::new(t, vec![]).is_err());
        assert!(OccupantChain::new([[0.25; 4]; 4], vec![1.2]).is_err());
    }

    #[test]
    fn absorbing_and_degenerate_rows() {
        let mut identity = [[0.0; 4]; 4];
        for (i, row) in identity.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let chain = OccupantChain::new(identity, vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(step_occupant(Room(2), &chain, &mut rng), Room(2));
        }
        let chain = OccupantChain::new([[1.0, 0.0, 0.0, 0.0]; 4], vec![]).unwrap();
        for r in 1..=4 {
            assert_eq!(step_occupant(Room(r), &chain, &mut rng), Room(1));
        }
    }

    #[test]
    fn fixed_seed_replays_trajectory() {
        let chain = OccupantChain::uniform_moves(0.7, vec![]).unwrap();
        let walk = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut room = Room(1);
            (0..1000)
                .map(|_| {
                    room = step_occupant(room, &chain, &mut rng);
                    room
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(walk(42), walk(42));
        assert_ne!(walk(42), walk(43));
    }

    #[test]
    fn lumped_stationary_frequency() {
        let t = [
            [0.6, 0.2, 0.1, 0.1],
            [0.3, 0.5, 0.1, 0.1],
            [0.1, 0.1, 0.7, 0.1],
            [0.2, 0.2, 0.2, 0.4],
        ];
        let chain = OccupantChain::new(t, vec![]).unwrap();
        // Analytic stationary vector by power iteration.
        let mut pi = [0.25; 4];
        for _ in 0..10_000 {
            let mut next = [0.0; 4];
            for i in 0..4 {
                for j in 0..4 {
                    next[j] += pi[i] * t[i][j];
                }
            }
            pi = next;
        }
        let analytic = pi[0] + pi[1];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut room = Room(1);
        let steps = 100_000;
        let mut in_first_pair = 0usize;
        for _ in 0..steps {
            room = step_occupant(room, &chain, &mut rng);
            if room.index() <= 2 {
                in_first_pair += 1;
            }
        }
        let empirical = in_first_pair as f64 / steps as f64;
        assert!(
            (empirical - analytic).abs() / analytic < 0.02,
            "empirical {empirical} analytic {analytic}"
        );
    }

    #[test]
    fn request_room_gating() {
        let cat = default_catalog();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zero = OccupantChain::uniform_moves(0.7, vec![0.0; cat.len()]).unwrap();
        assert!(draw_load_requests(Room(2), &zero, &cat, 5, &mut rng).is_empty());

        let mut probs = vec![0.0; cat.len()];
        probs[idx(&cat, "tv")] = 1.0;
        probs[idx(&cat, "vacuum_cleaner")] = 1.0;
        let chain = OccupantChain::uniform_moves(0.7, probs).unwrap();
        let reqs = draw_load_requests(Room(2), &chain, &cat, 9, &mut rng);
        let tv = reqs.iter().find(|r| r.appliance == idx(&cat, "tv")).unwrap();
        assert_eq!(tv.interval, 9);
        assert_eq!(tv.power_kw, 0.130);
        assert!(!tv.schedulable);
        assert!((MIN_DURATION..=MAX_DURATION).contains(&tv.duration));
        let reqs = draw_load_requests(Room(1), &chain, &cat, 9, &mut rng);
        assert!(reqs.is_empty());
    }

    #[test]
    fn cluster_demand_sums() {
        assert!((cluster_demand(&[1.21, 0.13, 0.0]).unwrap() - 1.34).abs() < 1e-12);
        assert_eq!(cluster_demand(&[]).unwrap(), 0.0);
        assert!((cluster_demand(&[1.21 + 1.16]).unwrap() - 2.37).abs() < 1e-12);
        assert!(matches!(cluster_demand(&[1.0, -0.1]), Err(Error::Domain(_))));
    }

    #[test]
    fn household_day_is_deterministic_and_bounded() {
        let cat = default_catalog();
        let chain = OccupantChain::default_for(&cat);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            simulate_household(Room(1), &chain, &cat, 144, &mut rng)
        };
        let a = run(11);
        assert_eq!(a, run(11));
        let mut profile = vec![0.0; 144];
        for r in &a {
            accumulate_profile(&mut profile, r.power_kw, r.interval, r.duration);
        }
        let rated: f64 = cat.iter().map(|a| a.power_kw).sum();
        assert!(profile.iter().all(|&p| (0.0..=rated + 1e-12).contains(&p)));
    }
}
