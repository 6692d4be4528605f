//! Vacancy configurations: sampling, restriction to quarters, exhaustive
//! enumeration and a dedup store for repeated outcomes.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lattice::{check_label, PartitionMap, Supercell};

/// Default cap on the number of removable units for exhaustive enumeration.
pub const DEFAULT_ENUMERATION_CAP: usize = 24;

/// Which removable units of a supercell are vacant.
///
/// The bitmask over units in canonical (site) order doubles as the key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DefectConfiguration {
    n: usize,
    units: usize,
    bits: Vec<u64>,
}

impl DefectConfiguration {
    pub fn empty(supercell: &Supercell) -> Self {
        Self::with_units(supercell.n(), supercell.unit_count())
    }

    fn with_units(n: usize, units: usize) -> Self {
        DefectConfiguration { n, units, bits: vec![0; units.div_ceil(64)] }
    }

    pub fn full(supercell: &Supercell) -> Self {
        let mut c = Self::empty(supercell);
        for u in 0..c.units {
            c.set(u);
        }
        c
    }

    pub fn from_vacant(supercell: &Supercell, vacant: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut c = Self::empty(supercell);
        for u in vacant {
            if u >= c.units {
                return Err(Error::InvalidArgument(format!(
                    "unit {u} out of range for {} removable units",
                    c.units
                )));
            }
            c.set(u);
        }
        Ok(c)
    }

    /// Configuration whose vacant set is the low `units` bits of `mask`.
    pub fn from_mask(supercell: &Supercell, mask: u64) -> Result<Self> {
        let units = supercell.unit_count();
        if units < 64 && mask >> units != 0 {
            return Err(Error::InvalidArgument("mask has bits beyond the unit count".into()));
        }
        let mut c = Self::empty(supercell);
        if units > 0 {
            c.bits[0] = mask;
        }
        Ok(c)
    }

    fn set(&mut self, u: usize) {
        self.bits[u / 64] |= 1 << (u % 64);
    }

    pub fn is_vacant(&self, unit: usize) -> bool {
        self.bits[unit / 64] >> (unit % 64) & 1 == 1
    }

    pub fn vacant_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn vacant_units(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.units).filter(|&u| self.is_vacant(u))
    }

    pub fn unit_count(&self) -> usize {
        self.units
    }

    pub fn supercell_factor(&self) -> usize {
        self.n
    }

    pub fn key(&self) -> &[u64] {
        &self.bits
    }

    /// Whether this configuration was built for `supercell`.
    pub fn fits(&self, supercell: &Supercell) -> bool {
        self.n == supercell.n() && self.units == supercell.unit_count()
    }

    pub fn is_site_vacant(&self, supercell: &Supercell, site: usize) -> bool {
        supercell.unit_of_site(site).is_some_and(|u| self.is_vacant(u))
    }
}

/// Identifies one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub level: u32,
    pub replicate: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, level: u32, replicate: u64) -> Self {
        SeedSpec { master_seed, level, replicate }
    }

    /// ChaCha8 keyed by the master seed, on a stream selected by
    /// (level, replicate). Replicates must stay below 2^40.
    pub fn rng(&self) -> ChaCha8Rng {
        debug_assert!(self.replicate < 1 << 40);
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream((u64::from(self.level) << 40) | self.replicate);
        rng
    }
}

fn check_probability(p_vac: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p_vac) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("vacancy probability {p_vac} outside [0, 1]")))
    }
}

/// Each removable unit is vacant independently with probability `p_vac`;
/// one uniform draw per unit in canonical order.
pub fn sample_defects(supercell: &Supercell, p_vac: f64, seed: SeedSpec) -> Result<DefectConfiguration> {
    check_probability(p_vac)?;
    let mut rng = seed.rng();
    let mut c = DefectConfiguration::empty(supercell);
    for u in 0..c.units {
        if rng.random::<f64>() < p_vac {
            c.set(u);
        }
    }
    Ok(c)
}

/// The part of `config` lying in quarter `r`, re-indexed onto that subcell.
pub fn restrict(config: &DefectConfiguration, partition: &PartitionMap, r: u8) -> Result<DefectConfiguration> {
    check_label(r)?;
    if !config.fits(partition.parent()) {
        return Err(Error::InvalidArgument("configuration does not belong to the partitioned supercell".into()));
    }
    let mut out = DefectConfiguration::empty(partition.subcell(r)?);
    for (u, &(label, local)) in partition.unit_map().iter().enumerate() {
        if label == r && config.is_vacant(u) {
            out.set(local);
        }
    }
    Ok(out)
}

/// Probability of a configuration with `vacant` of `units` removed.
pub fn config_weight(p_vac: f64, units: usize, vacant: usize) -> f64 {
    p_vac.powi(vacant as i32) * (1.0 - p_vac).powi((units - vacant) as i32)
}

/// Every configuration of the supercell with its probability weight.
pub fn enumerate_configs(
    supercell: &Supercell,
    p_vac: f64,
    cap: usize,
) -> Result<impl Iterator<Item = (DefectConfiguration, f64)> + '_> {
    check_probability(p_vac)?;
    let units = supercell.unit_count();
    if units > cap.min(63) {
        return Err(Error::EnumerationTooLarge { units, cap: cap.min(63) });
    }
    Ok((0..1u64 << units).map(move |mask| {
        let c = DefectConfiguration::from_mask(supercell, mask).expect("mask within range");
        let w = config_weight(p_vac, units, mask.count_ones() as usize);
        (c, w)
    }))
}

/// Smallest bitmask among all lattice translations of `config`.
///
/// Translating every vacancy by a primitive lattice vector leaves the
/// spectrum of the periodic system unchanged.
pub fn canonical_translation(config: &DefectConfiguration, supercell: &Supercell) -> DefectConfiguration {
    let n = supercell.n();
    let mut best = config.clone();
    for ti in 0..n {
        for tj in 0..n {
            if ti == 0 && tj == 0 {
                continue;
            }
            let mut moved = DefectConfiguration::empty(supercell);
            for u in config.vacant_units() {
                let site = supercell.sites()[supercell.units()[u]];
                let target = supercell.site_index((site.cell[0] + ti) % n, (site.cell[1] + tj) % n, site.basis);
                moved.set(supercell.unit_of_site(target).expect("translation preserves removability"));
            }
            if moved.bits.iter().rev().lt(best.bits.iter().rev()) {
                best = moved;
            }
        }
    }
    best
}

/// A configuration class with the total probability of its members.
#[derive(Debug, Clone)]
pub struct WeightedClass {
    pub representative: DefectConfiguration,
    pub weight: f64,
    pub members: usize,
}

/// Enumeration grouped by translation class. Classes are ordered by the
/// first member encountered in mask order.
pub fn enumerate_translation_classes(supercell: &Supercell, p_vac: f64, cap: usize) -> Result<Vec<WeightedClass>> {
    let mut index: HashMap<DefectConfiguration, usize> = HashMap::new();
    let mut classes: Vec<WeightedClass> = Vec::new();
    for (config, w) in enumerate_configs(supercell, p_vac, cap)? {
        let canon = canonical_translation(&config, supercell);
        match index.get(&canon) {
            Some(&i) => {
                classes[i].weight += w;
                classes[i].members += 1;
            }
            None => {
                index.insert(canon.clone(), classes.len());
                classes.push(WeightedClass { representative: canon, weight: w, members: 1 });
            }
        }
    }
    Ok(classes)
}

/// Store key: supercell factor, k-resolution and the configuration bitmask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub n: usize,
    pub q: usize,
    pub bits: Vec<u64>,
}

impl CacheKey {
    pub fn new(q: usize, config: &DefectConfiguration) -> Self {
        CacheKey { n: config.n, q, bits: config.bits.clone() }
    }
}

/// Thread-safe memo of per-sample quantities keyed by configuration.
///
/// Values are deterministic functions of the key, so a race that computes
/// the same key twice stores equal values.
#[derive(Debug)]
pub struct DedupCache<V> {
    map: Mutex<HashMap<CacheKey, Arc<V>>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<V> Default for DedupCache<V> {
    fn default() -> Self {
        DedupCache { map: Mutex::new(HashMap::new()), hits: AtomicUsize::new(0), misses: AtomicUsize::new(0) }
    }
}

impl<V> DedupCache<V> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lookup(&self, key: &CacheKey) -> Option<Arc<V>> {
        self.map.lock().expect("cache lock poisoned").get(key).cloned()
    }

    /// Returns the cached value and `true` on a hit, otherwise computes,
    /// inserts and returns `false`.
    pub fn get_or_compute(&self, key: CacheKey, compute: impl FnOnce() -> Result<V>) -> Result<(Arc<V>, bool)> {
        if let Some(v) = self.lookup(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok((v, true));
        }
        let value = Arc::new(compute()?);
        self.misses.fetch_add(1, Ordering::Relaxed);
        let mut map = self.map.lock().expect("cache lock poisoned");
        let stored = map.entry(key).or_insert(value).clone();
        Ok((stored, false))
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn dedup_cache_lookup<V>(key: &CacheKey, store: &DedupCache<V>) -> Option<Arc<V>> {
    store.lookup(key)
}
