//! Continuous-time kinetic Monte Carlo for `n² L^S + a_n L^V` on large tori.
//!
//! Two event samplers are available. The sum-tree sampler keeps one slot
//! per bond (exclusion) and one per site (voter) in a binary partial-sum
//! tree. When all exclusion rates are the same constant `c`, the
//! discordant-bond sampler is used instead: every event involves a bond
//! with `η_x ≠ η_y`, swaps happen at rate `n²c` per such bond and each
//! endpoint flips at rate `a_n` per such bond, so a uniform discordant bond
//! plus one coin decides the event.
//!
//! Exclusion bonds whose ends agree either stay in the table at their full
//! rate and fire as null events ([`EventMode::Null`], the default) or are
//! removed ([`EventMode::Effective`]). Both produce the same law for the
//! configuration process.

mod observe;
mod tree;

pub use observe::{LocalField, OccupationClock};
pub use tree::SumTree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cylinder::{CylinderFunction, LocalFunction, RateFamily};
use crate::error::{Error, Result};
use crate::lattice::{Configuration, Snapshot, Torus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventMode {
    #[default]
    Null,
    Effective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerChoice {
    /// Discordant-bond sampler when the rates are one constant, tree otherwise.
    #[default]
    Auto,
    Tree,
    Discordant,
}

/// `√(log n)`, but at least 1.
pub fn default_a_n(n: usize) -> f64 {
    (n as f64).ln().sqrt().max(1.0)
}

/// Events between full rebuilds of the incremental tables.
pub const DEFAULT_RESYNC_EVERY: u64 = 1 << 20;

#[derive(Debug, Clone)]
pub struct SimParams {
    pub torus: Torus,
    /// Reference density of the fluctuation field.
    pub rho: f64,
    pub a_n: f64,
    pub rates: RateFamily,
    pub event_mode: EventMode,
    pub sampler: SamplerChoice,
    pub resync_every: u64,
}

impl SimParams {
    pub fn new(torus: Torus, rho: f64, a_n: f64, rates: RateFamily) -> Result<Self> {
        let p = Self {
            torus,
            rho,
            a_n,
            rates,
            event_mode: EventMode::default(),
            sampler: SamplerChoice::default(),
            resync_every: DEFAULT_RESYNC_EVERY,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidDensity(self.rho));
        }
        if !(self.a_n >= 0.0) || !self.a_n.is_finite() {
            return Err(Error::InvalidParameter(format!("a_n = {}", self.a_n)));
        }
        if self.rates.dim() != self.torus.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.torus.dim(),
                got: self.rates.dim(),
            });
        }
        for c in self.rates.rates() {
            c.check_fits(&self.torus)?;
        }
        Ok(())
    }

    /// The common exclusion rate, when every `c_j` is the same constant.
    fn uniform_rate(&self) -> Option<f64> {
        let first = self.rates.rate(0).coefficient(&[]);
        let all = self
            .rates
            .rates()
            .iter()
            .all(|c| c.num_terms() <= 1 && c.degree() == 0 && c.coefficient(&[]) == first);
        all.then_some(first)
    }
}

/// Law of the initial configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialLaw {
    /// Product Bernoulli with the given density.
    Bernoulli { rho: f64 },
    /// A bit string, tiled over the sites in index order.
    Pattern { bits: String },
    /// A JSON snapshot file `{"d":..,"n":..,"occupancy":".."}`.
    File { path: String },
}

impl InitialLaw {
    pub fn sample<R: Rng + ?Sized>(&self, torus: &Torus, rng: &mut R) -> Result<Configuration> {
        match self {
            InitialLaw::Bernoulli { rho } => {
                if !(*rho > 0.0 && *rho < 1.0) {
                    return Err(Error::InvalidDensity(*rho));
                }
                let occ = (0..torus.size())
                    .map(|_| (rng.gen::<f64>() < *rho) as u8)
                    .collect();
                Configuration::from_occupancy(*torus, occ)
            }
            InitialLaw::Pattern { bits } => {
                if bits.is_empty() {
                    return Err(Error::Parse("empty pattern".into()));
                }
                let cycle: Vec<u8> = bits
                    .chars()
                    .map(|c| match c {
                        '0' => Ok(0),
                        '1' => Ok(1),
                        other => Err(Error::Parse(format!("invalid pattern character {other:?}"))),
                    })
                    .collect::<Result<_>>()?;
                let occ = (0..torus.size()).map(|i| cycle[i % cycle.len()]).collect();
                Configuration::from_occupancy(*torus, occ)
            }
            InitialLaw::File { path } => {
                let text = std::fs::read_to_string(path)?;
                let snap: Snapshot = serde_json::from_str(&text)?;
                if snap.d != torus.dim() || snap.n != torus.side() {
                    return Err(Error::InvalidParameter(format!(
                        "snapshot torus d={} n={} does not match d={} n={}",
                        snap.d,
                        snap.n,
                        torus.dim(),
                        torus.side()
                    )));
                }
                Configuration::from_bits(*torus, &snap.occupancy)
            }
        }
    }
}

/// One transition of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Swap {
        x: usize,
        y: usize,
    },
    Flip {
        x: usize,
    },
    /// An exclusion clock rang on a bond whose ends agree.
    Null {
        x: usize,
        y: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub exclusion: u64,
    pub voter: u64,
    pub null: u64,
    /// `(t, occupancy bits)` recorded on request.
    pub snapshots: Vec<(f64, String)>,
}

impl EventLog {
    pub fn total(&self) -> u64 {
        self.exclusion + self.voter + self.null
    }
}

#[derive(Debug, Clone)]
struct Geometry {
    d: usize,
    /// Bond `b = x·d + j` joins `bond_ends[2b]` and `bond_ends[2b+1] = x + e_j`.
    bond_ends: Vec<u32>,
    /// The `2d` bonds touching each site, flat.
    site_bonds: Vec<u32>,
    /// The `2d` neighbours of each site, flat.
    neighbours: Vec<u32>,
}

impl Geometry {
    fn new(torus: &Torus) -> Self {
        let (n, d) = (torus.size(), torus.dim());
        let mut bond_ends = Vec::with_capacity(2 * n * d);
        let mut site_bonds = Vec::with_capacity(2 * n * d);
        let mut neighbours = Vec::with_capacity(2 * n * d);
        for x in 0..n {
            for j in 0..d {
                bond_ends.push(x as u32);
                bond_ends.push(torus.step(x, j, true) as u32);
            }
        }
        for x in 0..n {
            for j in 0..d {
                site_bonds.push((x * d + j) as u32);
                let back = torus.step(x, j, false);
                site_bonds.push((back * d + j) as u32);
                neighbours.push(torus.step(x, j, true) as u32);
                neighbours.push(back as u32);
            }
        }
        Self {
            d,
            bond_ends,
            site_bonds,
            neighbours,
        }
    }

    #[inline]
    fn ends(&self, b: usize) -> (usize, usize) {
        (
            self.bond_ends[2 * b] as usize,
            self.bond_ends[2 * b + 1] as usize,
        )
    }

    #[inline]
    fn bonds_of(&self, x: usize) -> &[u32] {
        &self.site_bonds[2 * self.d * x..2 * self.d * (x + 1)]
    }

    #[inline]
    fn neighbours_of(&self, x: usize) -> &[u32] {
        &self.neighbours[2 * self.d * x..2 * self.d * (x + 1)]
    }

    fn bonds(&self) -> usize {
        self.bond_ends.len() / 2
    }
}

/// Indexable set of bonds with O(1) insert, remove and uniform pick.
#[derive(Debug, Clone)]
struct BondSet {
    /// Members occupy `list[..len]`.
    list: Vec<u32>,
    len: usize,
    pos: Vec<u32>,
}

const ABSENT: u32 = u32::MAX;

impl BondSet {
    fn new(bonds: usize) -> Self {
        Self {
            list: vec![0; bonds],
            len: 0,
            pos: vec![ABSENT; bonds],
        }
    }

    #[inline]
    fn set(&mut self, b: usize, member: bool) {
        let p = self.pos[b];
        if member && p == ABSENT {
            self.pos[b] = self.len as u32;
            self.list[self.len] = b as u32;
            self.len += 1;
        } else if !member && p != ABSENT {
            self.len -= 1;
            let last = self.list[self.len];
            self.list[p as usize] = last;
            self.pos[last as usize] = p;
            self.pos[b] = ABSENT;
        }
    }

    #[inline]
    fn get(&self, k: usize) -> usize {
        self.list[k] as usize
    }

    fn len(&self) -> usize {
        self.len
    }
}

#[derive(Debug, Clone)]
struct TreeSampler {
    tree: SumTree,
    rates: Vec<LocalFunction>,
    /// `inverse[j]` lists, per offset `z` read by exclusion slot `(·, j)`,
    /// the table `s ↦ s − z`.
    inverse: Vec<Vec<Vec<u32>>>,
}

#[derive(Debug, Clone)]
enum Sampler {
    Discordant { swap_rate: f64, set: BondSet },
    Tree(TreeSampler),
}

/// State of one replica.
#[derive(Debug, Clone)]
pub struct SimState {
    params: SimParams,
    geometry: Geometry,
    eta: Configuration,
    clock: f64,
    pending: f64,
    rng: ChaCha8Rng,
    sampler: Sampler,
    n2: f64,
    log: EventLog,
    occupation: Option<OccupationClock>,
    fields: Vec<LocalField>,
    since_resync: u64,
    particles: usize,
}

/// Handle of a registered [`LocalField`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldId(usize);

/// Builds the state, seeding the replica stream with `seed ^ replica`.
pub fn init(params: SimParams, law: &InitialLaw, seed: u64, replica: u64) -> Result<SimState> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ replica);
    let eta = law.sample(&params.torus, &mut rng)?;
    SimState::from_configuration(params, eta, rng)
}

impl SimState {
    pub fn from_configuration(
        params: SimParams,
        eta: Configuration,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        params.validate()?;
        if eta.torus() != &params.torus {
            return Err(Error::InvalidParameter(
                "configuration lives on another torus".into(),
            ));
        }
        let torus = params.torus;
        let geometry = Geometry::new(&torus);
        let n2 = (torus.side() * torus.side()) as f64;
        let uniform = params.uniform_rate();
        let sampler = match (params.sampler, uniform) {
            (SamplerChoice::Discordant, None) => {
                return Err(Error::InvalidParameter(
                    "the discordant-bond sampler needs one constant exclusion rate".into(),
                ))
            }
            (SamplerChoice::Discordant | SamplerChoice::Auto, Some(c)) => Sampler::Discordant {
                swap_rate: n2 * c,
                set: BondSet::new(geometry.bonds()),
            },
            _ => {
                let rates = params
                    .rates
                    .rates()
                    .iter()
                    .map(|c| c.compile(&torus))
                    .collect::<Result<Vec<_>>>()?;
                let inverse = (0..torus.dim())
                    .map(|j| {
                        let mut offs = params.rates.rate(j).support();
                        offs.push(vec![0; torus.dim()]);
                        offs.push(torus.unit(j));
                        offs.sort();
                        offs.dedup();
                        offs.iter()
                            .map(|z| torus.shift_table(&z.iter().map(|v| -v).collect::<Vec<_>>()))
                            .collect()
                    })
                    .collect();
                Sampler::Tree(TreeSampler {
                    tree: SumTree::new(&[]),
                    rates,
                    inverse,
                })
            }
        };
        let mut state = Self {
            params,
            geometry,
            eta,
            clock: 0.0,
            pending: f64::INFINITY,
            rng,
            sampler,
            n2,
            log: EventLog::default(),
            occupation: None,
            fields: Vec::new(),
            since_resync: 0,
            particles: 0,
        };
        state.particles = state.eta.particle_count();
        state.rebuild_sampler();
        state.schedule();
        Ok(state)
    }

    #[inline]
    fn discordant(&self, b: usize) -> bool {
        let (x, y) = self.geometry.ends(b);
        let occ = self.eta.occupancy();
        occ[x] != occ[y]
    }

    fn exclusion_slot_rate(&self, ts: &TreeSampler, b: usize) -> f64 {
        let (x, y) = self.geometry.ends(b);
        let occ = self.eta.occupancy();
        if self.params.event_mode == EventMode::Effective && occ[x] == occ[y] {
            return 0.0;
        }
        self.n2 * ts.rates[b % self.geometry.d].eval(occ, x)
    }

    fn voter_slot_rate(&self, x: usize) -> f64 {
        let occ = self.eta.occupancy();
        let disagree = self
            .geometry
            .neighbours_of(x)
            .iter()
            .filter(|&&y| occ[y as usize] != occ[x])
            .count();
        self.params.a_n * disagree as f64
    }

    fn rebuild_sampler(&mut self) {
        let bonds = self.geometry.bonds();
        match &self.sampler {
            Sampler::Discordant { swap_rate, .. } => {
                let mut set = BondSet::new(bonds);
                for b in 0..bonds {
                    if self.discordant(b) {
                        set.set(b, true);
                    }
                }
                self.sampler = Sampler::Discordant {
                    swap_rate: *swap_rate,
                    set,
                };
            }
            Sampler::Tree(ts) => {
                let mut values = Vec::with_capacity(bonds + self.params.torus.size());
                for b in 0..bonds {
                    values.push(self.exclusion_slot_rate(ts, b));
                }
                for x in 0..self.params.torus.size() {
                    values.push(self.voter_slot_rate(x));
                }
                let mut ts = ts.clone();
                ts.tree = SumTree::new(&values);
                self.sampler = Sampler::Tree(ts);
            }
        }
    }

    /// Total event rate of the current configuration.
    pub fn total_rate(&self) -> f64 {
        match &self.sampler {
            Sampler::Discordant { swap_rate, set } => {
                let swaps = match self.params.event_mode {
                    EventMode::Null => self.geometry.bonds() as f64,
                    EventMode::Effective => set.len() as f64,
                };
                swap_rate * swaps + 2.0 * self.params.a_n * set.len() as f64
            }
            Sampler::Tree(ts) => ts.tree.total(),
        }
    }

    /// Relative gap between the incremental total rate and one recomputed
    /// from scratch.
    pub fn rate_table_defect(&self) -> f64 {
        let mut fresh = self.clone();
        fresh.rebuild_sampler();
        let (a, b) = (self.total_rate(), fresh.total_rate());
        if a == b {
            0.0
        } else {
            (a - b).abs() / a.abs().max(b.abs())
        }
    }

    fn schedule(&mut self) {
        let total = self.total_rate();
        let k = self.particles;
        let consensus = k == 0 || k == self.params.torus.size();
        self.pending = if total > 0.0 && !consensus {
            let u: f64 = self.rng.gen();
            self.clock - (1.0 - u).ln() / total
        } else {
            f64::INFINITY
        };
    }

    fn choose(&mut self) -> Event {
        let total = self.total_rate();
        let u = self.rng.gen::<f64>() * total;
        match &self.sampler {
            Sampler::Discordant { swap_rate, set } => {
                let d = set.len();
                let swaps = match self.params.event_mode {
                    EventMode::Null => self.geometry.bonds(),
                    EventMode::Effective => d,
                };
                let swap_total = swap_rate * swaps as f64;
                if u < swap_total {
                    let k = ((u / swap_rate) as usize).min(swaps - 1);
                    let b = match self.params.event_mode {
                        EventMode::Null => k,
                        EventMode::Effective => set.get(k),
                    };
                    let (x, y) = self.geometry.ends(b);
                    if self.eta.get(x) == self.eta.get(y) {
                        Event::Null { x, y }
                    } else {
                        Event::Swap { x, y }
                    }
                } else {
                    let k = (((u - swap_total) / self.params.a_n) as usize).min(2 * d - 1);
                    let (x, y) = self.geometry.ends(set.get(k / 2));
                    Event::Flip {
                        x: if k.is_multiple_of(2) { x } else { y },
                    }
                }
            }
            Sampler::Tree(ts) => {
                let slot = ts.tree.find(u);
                let bonds = self.geometry.bonds();
                if slot < bonds {
                    let (x, y) = self.geometry.ends(slot);
                    if self.eta.get(x) == self.eta.get(y) {
                        Event::Null { x, y }
                    } else {
                        Event::Swap { x, y }
                    }
                } else {
                    Event::Flip { x: slot - bonds }
                }
            }
        }
    }

    fn touch(&mut self, x: usize, t: f64) {
        let Some(clock) = self.occupation.as_mut() else {
            return;
        };
        let occ = self.eta.occupancy();
        let v = occ[x];
        clock.touch_site(x, v, t);
        let bonds = self.geometry.bonds_of(x);
        let nbs = self.geometry.neighbours_of(x);
        for (&b, &z) in bonds.iter().zip(nbs) {
            clock.touch_bond(b as usize, v != occ[z as usize], t);
        }
    }

    fn refresh_after(&mut self, x: usize) {
        let occ = self.eta.occupancy();
        for f in self.fields.iter_mut() {
            f.refresh_site(x, occ);
        }
        if let Sampler::Discordant { set, .. } = &mut self.sampler {
            let v = occ[x];
            let deg = 2 * self.geometry.d;
            let bonds = &self.geometry.site_bonds[deg * x..deg * (x + 1)];
            let nbs = &self.geometry.neighbours[deg * x..deg * (x + 1)];
            for k in 0..deg {
                set.set(bonds[k] as usize, v != occ[nbs[k] as usize]);
            }
            return;
        }
        let placeholder = Sampler::Discordant {
            swap_rate: 0.0,
            set: BondSet::new(0),
        };
        let Sampler::Tree(mut ts) = std::mem::replace(&mut self.sampler, placeholder) else {
            unreachable!()
        };
        let d = self.geometry.d;
        for j in 0..d {
            for k in 0..ts.inverse[j].len() {
                let b = ts.inverse[j][k][x] as usize * d + j;
                let r = self.exclusion_slot_rate(&ts, b);
                ts.tree.set(b, r);
            }
        }
        let bonds = self.geometry.bonds();
        let r = self.voter_slot_rate(x);
        ts.tree.set(bonds + x, r);
        for k in 0..2 * d {
            let y = self.geometry.neighbours[2 * d * x + k] as usize;
            let r = self.voter_slot_rate(y);
            ts.tree.set(bonds + y, r);
        }
        self.sampler = Sampler::Tree(ts);
    }

    fn apply(&mut self, ev: Event, t: f64) {
        for f in self.fields.iter_mut() {
            f.advance(t);
        }
        match ev {
            Event::Swap { x, y } => {
                self.touch(x, t);
                self.touch(y, t);
                self.eta.swap_in_place(x, y);
                self.refresh_after(x);
                self.refresh_after(y);
                self.log.exclusion += 1;
            }
            Event::Flip { x } => {
                self.touch(x, t);
                self.eta.flip_in_place(x);
                if self.eta.get(x) == 1 {
                    self.particles += 1;
                } else {
                    self.particles -= 1;
                }
                self.refresh_after(x);
                self.log.voter += 1;
            }
            Event::Null { .. } => self.log.null += 1,
        }
    }

    /// Performs the next event and returns it with the elapsed time.
    ///
    /// Consensus states are absorbing in both event modes; null exclusion
    /// events there change nothing, so they signal [`Error::Absorbed`].
    pub fn step(&mut self) -> Result<(Event, f64)> {
        if !self.pending.is_finite() {
            return Err(Error::Absorbed);
        }
        let t = self.pending;
        let dt = t - self.clock;
        let ev = self.choose();
        self.apply(ev, t);
        self.clock = t;
        self.since_resync += 1;
        if self.since_resync >= self.params.resync_every {
            self.resync();
        }
        self.schedule();
        Ok((ev, dt))
    }

    /// Rebuilds the rate table and every registered field from scratch.
    pub fn resync(&mut self) {
        self.rebuild_sampler();
        let occ = self.eta.occupancy();
        for f in self.fields.iter_mut() {
            f.rebuild(occ);
        }
        self.since_resync = 0;
    }

    /// Advances to time `t_end`, calling `observer(state, s)` at each sample
    /// time `s ≤ t_end` with the configuration holding at `s`.
    pub fn run_until<O>(&mut self, t_end: f64, sample_times: &[f64], mut observer: O) -> Result<()>
    where
        O: FnMut(&SimState, f64) -> Result<()>,
    {
        if !(t_end >= self.clock) {
            return Err(Error::InvalidParameter(format!(
                "cannot run back to {t_end} from {}",
                self.clock
            )));
        }
        let mut prev = self.clock;
        for &s in sample_times.iter().filter(|&&s| s <= t_end) {
            if s < prev {
                return Err(Error::InvalidParameter(
                    "sample times must be nondecreasing".into(),
                ));
            }
            while self.pending <= s {
                self.step()?;
            }
            observer(self, s)?;
            prev = s;
        }
        while self.pending <= t_end {
            self.step()?;
        }
        self.clock = t_end;
        Ok(())
    }

    /// Records the configuration in the event log.
    pub fn snapshot(&mut self, t: f64) {
        let bits = self.eta.to_bits();
        self.log.snapshots.push((t, bits));
    }

    /// Registers `S = Σ_x w_x (τ_x f)(η)` for incremental tracking.
    pub fn add_field(&mut self, f: &CylinderFunction, weights: Vec<f64>) -> Result<FieldId> {
        let field = LocalField::new(
            f,
            weights,
            &self.params.torus,
            self.eta.occupancy(),
            self.clock,
        )?;
        self.fields.push(field);
        Ok(FieldId(self.fields.len() - 1))
    }

    pub fn field(&self, id: FieldId) -> &LocalField {
        &self.fields[id.0]
    }

    /// Starts recording occupation and discordance times. Must be called
    /// before the first event.
    pub fn track_occupation(&mut self) -> Result<()> {
        if self.log.total() > 0 || self.clock > 0.0 {
            return Err(Error::InvalidParameter(
                "occupation tracking must start at time 0".into(),
            ));
        }
        self.occupation = Some(OccupationClock::new(
            self.params.torus.size(),
            self.geometry.bonds(),
        ));
        Ok(())
    }

    /// `∫₀ᵗ η_x(s) ds` for `t` at or after the last event, if tracked.
    pub fn occupation_time(&self, x: usize, t: f64) -> Option<f64> {
        let c = self.occupation.as_ref()?;
        Some(c.site_at(x, self.eta.get(x), t))
    }

    /// `∫₀ᵗ 1{η_x ≠ η_{x+e_j}} ds` for bond `b = x·d + j`, if tracked.
    pub fn discordance_time(&self, b: usize, t: f64) -> Option<f64> {
        let c = self.occupation.as_ref()?;
        Some(c.bond_at(b, self.discordant(b), t))
    }

    /// Ends `(x, x+e_j)` of bond `b = x·d + j`.
    pub fn bond_ends(&self, b: usize) -> (usize, usize) {
        self.geometry.ends(b)
    }

    pub fn bond_count(&self) -> usize {
        self.geometry.bonds()
    }

    pub fn configuration(&self) -> &Configuration {
        &self.eta
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn uses_discordant_sampler(&self) -> bool {
        matches!(self.sampler, Sampler::Discordant { .. })
    }
}

#[cfg(test)]
mod tests;
