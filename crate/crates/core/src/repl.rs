//! Replacement policies: LRU, SRRIP, and the three prefetch-aware RRIP
//! variants (PIP, NPIP, BIP), plus the TIPRP two-counter selector that picks
//! one of the latter per access from leader-set feedback.

use serde::{Deserialize, Serialize};

use crate::cache::CacheLine;
use crate::error::{Error, Result};

pub const RRPV_MAX: u8 = 3;
/// SRRIP insertion value ("long" re-reference interval).
pub const RRPV_INSERT: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Policy {
    Lru,
    Srrip,
    /// Protect lines filled by L1I prefetches at eviction time.
    Pip,
    /// Insert lines filled by L1I prefetches at RRPV 3.
    Npip,
    /// Never install lines filled by L1I prefetches.
    Bip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillVerdict {
    Insert { rrpv: u8 },
    Bypass,
}

impl Policy {
    pub fn on_fill(self, pb: bool) -> FillVerdict {
        match self {
            Policy::Lru => FillVerdict::Insert { rrpv: 0 },
            Policy::Srrip | Policy::Pip => FillVerdict::Insert { rrpv: RRPV_INSERT },
            Policy::Npip if pb => FillVerdict::Insert { rrpv: RRPV_MAX },
            Policy::Bip if pb => FillVerdict::Bypass,
            Policy::Npip | Policy::Bip => FillVerdict::Insert { rrpv: RRPV_INSERT },
        }
    }

    /// Promotion on hit. pb is left untouched by every policy.
    pub fn on_hit(self, line: &mut CacheLine, stamp: u64) {
        line.lru_stamp = stamp;
        if self != Policy::Lru {
            line.rrpv = 0;
        }
    }

    /// Picks the way to evict from a full set, aging RRPVs as a side effect.
    pub fn victim(self, set: &mut [CacheLine]) -> usize {
        debug_assert!(!set.is_empty() && set.iter().all(|l| l.valid));
        match self {
            Policy::Lru => lru_victim(set),
            Policy::Srrip | Policy::Npip | Policy::Bip => srrip_victim(set),
            Policy::Pip => pip_victim(set),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "lru" => Policy::Lru,
            "srrip" => Policy::Srrip,
            "pip" => Policy::Pip,
            "npip" => Policy::Npip,
            "bip" => Policy::Bip,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Policy::Lru => "lru",
            Policy::Srrip => "srrip",
            Policy::Pip => "pip",
            Policy::Npip => "npip",
            Policy::Bip => "bip",
        }
    }
}

fn lru_victim(set: &[CacheLine]) -> usize {
    set.iter()
        .enumerate()
        .min_by_key(|(i, l)| (l.lru_stamp, *i))
        .map(|(i, _)| i)
        .unwrap()
}

/// Ages the candidate ways until one reaches RRPV 3 and returns the lowest
/// such way. Aging all candidates by the distance of the oldest one to 3 is
/// the same as repeating single-step passes.
fn age_and_pick(set: &mut [CacheLine], candidate: impl Fn(&CacheLine) -> bool) -> Option<usize> {
    let oldest = set.iter().filter(|l| candidate(l)).map(|l| l.rrpv).max()?;
    let delta = RRPV_MAX - oldest;
    for line in set.iter_mut().filter(|l| candidate(l)) {
        line.rrpv += delta;
    }
    set.iter().position(|l| candidate(l) && l.rrpv == RRPV_MAX)
}

fn srrip_victim(set: &mut [CacheLine]) -> usize {
    age_and_pick(set, |_| true).unwrap()
}

fn pip_victim(set: &mut [CacheLine]) -> usize {
    age_and_pick(set, |l| !l.pb).unwrap_or_else(|| srrip_victim(set))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SetRole {
    PipLeader,
    NpipLeader,
    BipLeader,
    Follower,
}

impl SetRole {
    pub fn leader_policy(self) -> Option<Policy> {
        match self {
            SetRole::PipLeader => Some(Policy::Pip),
            SetRole::NpipLeader => Some(Policy::Npip),
            SetRole::BipLeader => Some(Policy::Bip),
            SetRole::Follower => None,
        }
    }
}

/// Assigns leader sets by stride: PIP leaders at `k * num_sets / pip`, and
/// alternately an NPIP leader one set above or a BIP leader two sets above.
/// Collisions (only possible for small caches) probe forward to the next
/// unassigned set.
pub fn assign_leader_sets(num_sets: usize, counts: [usize; 3]) -> Result<Vec<SetRole>> {
    let [pip, npip, bip] = counts;
    let total = pip + npip + bip;
    if total > num_sets {
        return Err(Error::config(format!(
            "{total} leader sets do not fit in {num_sets} sets"
        )));
    }
    let mut roles = vec![SetRole::Follower; num_sets];
    let mut place = |start: usize, role: SetRole| {
        let mut i = start % num_sets;
        while roles[i] != SetRole::Follower {
            i = (i + 1) % num_sets;
        }
        roles[i] = role;
    };
    let anchors = pip.max(1);
    let base = |k: usize| (k % anchors) * num_sets / anchors;
    for k in 0..pip {
        place(base(k), SetRole::PipLeader);
    }
    let (mut npip_left, mut bip_left) = (npip, bip);
    let mut k = 0;
    while npip_left + bip_left > 0 {
        let want_npip = if npip_left == 0 {
            false
        } else if bip_left == 0 {
            true
        } else {
            k % 2 == 0
        };
        if want_npip {
            place(base(k) + 1, SetRole::NpipLeader);
            npip_left -= 1;
        } else {
            place(base(k) + 2, SetRole::BipLeader);
            bip_left -= 1;
        }
        k += 1;
    }
    Ok(roles)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainingMode {
    /// Leaders train only on the pb value that is informative for them.
    Asymmetric,
    /// Leaders train on every hit and eviction regardless of pb.
    AllEvents,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BipTraining {
    /// Hits favour BIP (psel2 down), evictions retreat towards NPIP.
    Mirror,
    /// BIP leaders update exactly like NPIP leaders.
    SameAsNpip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainEvent {
    Hit,
    Eviction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiprpConfig {
    pub t1: u32,
    pub t2: u32,
    pub psel_bits: u32,
    pub leaders: [usize; 3],
    pub training: TrainingMode,
    pub bip_training: BipTraining,
}

impl Default for TiprpConfig {
    fn default() -> Self {
        Self {
            t1: 512,
            t2: 512,
            psel_bits: 10,
            leaders: [32, 16, 16],
            training: TrainingMode::Asymmetric,
            bip_training: BipTraining::Mirror,
        }
    }
}

impl TiprpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=31).contains(&self.psel_bits) {
            return Err(Error::config("tiprp.psel_bits must be in 1..=31"));
        }
        let max = (1u32 << self.psel_bits) - 1;
        if self.t1 > max || self.t2 > max {
            return Err(Error::config("tiprp thresholds exceed the counter range"));
        }
        Ok(())
    }
}

/// Saturating counter pair plus the static leader map.
#[derive(Debug, Clone, PartialEq)]
pub struct TiprpState {
    pub psel1: u32,
    pub psel2: u32,
    max: u32,
    t1: u32,
    t2: u32,
    training: TrainingMode,
    bip_training: BipTraining,
    roles: Vec<SetRole>,
    /// Leader events seen, by leader (PIP, NPIP, BIP) and kind (hit pb=0,
    /// hit pb=1, eviction pb=0, eviction pb=1), trained or not.
    pub leader_events: [[u64; 4]; 3],
}

impl TiprpState {
    pub fn new(cfg: &TiprpConfig, num_sets: usize) -> Result<Self> {
        cfg.validate()?;
        let mid = 1 << (cfg.psel_bits - 1);
        Ok(Self {
            psel1: mid,
            psel2: mid,
            max: (1 << cfg.psel_bits) - 1,
            t1: cfg.t1,
            t2: cfg.t2,
            training: cfg.training,
            bip_training: cfg.bip_training,
            roles: assign_leader_sets(num_sets, cfg.leaders)?,
            leader_events: [[0; 4]; 3],
        })
    }

    pub fn role(&self, set: usize) -> SetRole {
        self.roles[set]
    }

    pub fn roles(&self) -> &[SetRole] {
        &self.roles
    }

    pub fn counter_max(&self) -> u32 {
        self.max
    }

    /// Policy driving `set` for the current access. Pure.
    pub fn select(&self, set: usize) -> Policy {
        self.roles[set]
            .leader_policy()
            .unwrap_or_else(|| self.follower_policy())
    }

    pub fn follower_policy(&self) -> Policy {
        if self.psel1 > self.t1 {
            Policy::Pip
        } else if self.psel2 < self.t2 {
            Policy::Bip
        } else {
            Policy::Npip
        }
    }

    /// Applies one hit or eviction observed in `set`. Followers never train.
    pub fn train(&mut self, set: usize, event: TrainEvent, pb: bool) {
        let leader = match self.roles[set] {
            SetRole::PipLeader => Some(0),
            SetRole::NpipLeader => Some(1),
            SetRole::BipLeader => Some(2),
            SetRole::Follower => None,
        };
        if let Some(i) = leader {
            let kind = 2 * usize::from(event == TrainEvent::Eviction) + usize::from(pb);
            self.leader_events[i][kind] += 1;
        }
        let Some((d1, d2)) = self.deltas(self.roles[set], event, pb) else {
            return;
        };
        self.psel1 = step(self.psel1, d1, self.max);
        self.psel2 = step(self.psel2, d2, self.max);
    }

    /// Counter deltas `(psel1, psel2)` for an event, or `None` if it is ignored.
    pub fn deltas(&self, role: SetRole, event: TrainEvent, pb: bool) -> Option<(i8, i8)> {
        use TrainEvent::*;
        let all = self.training == TrainingMode::AllEvents;
        let npip_like = |event| match event {
            Hit => (-1, 1),
            Eviction => (1, -1),
        };
        match role {
            SetRole::Follower => None,
            SetRole::PipLeader if pb || all => Some(match event {
                Hit => (1, -1),
                Eviction => (-1, -1),
            }),
            SetRole::NpipLeader if !pb || all => Some(npip_like(event)),
            SetRole::BipLeader if !pb || all => Some(match self.bip_training {
                BipTraining::Mirror => match event {
                    Hit => (-1, -1),
                    Eviction => (1, 1),
                },
                BipTraining::SameAsNpip => npip_like(event),
            }),
            _ => None,
        }
    }
}

fn step(value: u32, delta: i8, max: u32) -> u32 {
    match delta {
        1 => (value + 1).min(max),
        -1 => value.saturating_sub(1),
        _ => value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(pb: bool, rrpv: u8) -> CacheLine {
        CacheLine {
            tag: 0,
            valid: true,
            pb,
            rrpv,
            lru_stamp: 0,
            ..CacheLine::default()
        }
    }

    fn rrpvs(set: &[CacheLine]) -> Vec<u8> {
        set.iter().map(|l| l.rrpv).collect()
    }

    #[test]
    fn srrip_insert_hit_evict() {
        assert_eq!(Policy::Srrip.on_fill(false), FillVerdict::Insert { rrpv: 2 });
        let mut l = line(false, 2);
        Policy::Srrip.on_hit(&mut l, 1);
        assert_eq!(l.rrpv, 0);
        let mut set: Vec<_> = [2, 2, 1, 0].iter().map(|&r| line(false, r)).collect();
        assert_eq!(Policy::Srrip.victim(&mut set), 0);
        assert_eq!(rrpvs(&set), vec![3, 3, 2, 1]);
    }

    #[test]
    fn pip_evicts_unprotected_line() {
        let mut set = vec![line(true, 3), line(false, 1)];
        assert_eq!(Policy::Pip.victim(&mut set), 1);
        assert_eq!(rrpvs(&set), vec![3, 3]);
    }

    #[test]
    fn pip_falls_back_to_srrip() {
        let mut set: Vec<_> = [3, 2, 2, 2].iter().map(|&r| line(true, r)).collect();
        assert_eq!(Policy::Pip.victim(&mut set), 0);
        let mut l = line(true, 3);
        Policy::Pip.on_hit(&mut l, 5);
        assert_eq!((l.rrpv, l.pb), (0, true));
    }

    #[test]
    fn npip_and_bip_insertion() {
        assert_eq!(Policy::Npip.on_fill(true), FillVerdict::Insert { rrpv: 3 });
        assert_eq!(Policy::Npip.on_fill(false), FillVerdict::Insert { rrpv: 2 });
        assert_eq!(Policy::Bip.on_fill(true), FillVerdict::Bypass);
        assert_eq!(Policy::Bip.on_fill(false), FillVerdict::Insert { rrpv: 2 });
        let mut set = vec![line(false, 2), line(true, 3), line(false, 0)];
        assert_eq!(Policy::Npip.victim(&mut set), 1);
    }

    #[test]
    fn lru_victim_is_oldest_stamp() {
        let mut set: Vec<_> = (0..4)
            .map(|i| CacheLine {
                lru_stamp: i,
                ..line(false, 0)
            })
            .collect();
        assert_eq!(Policy::Lru.victim(&mut set), 0);
        set[0].lru_stamp = 10;
        assert_eq!(Policy::Lru.victim(&mut set), 1);
    }

    #[test]
    fn leader_map_default_counts() {
        let roles = assign_leader_sets(1024, [32, 16, 16]).unwrap();
        let count = |r| roles.iter().filter(|&&x| x == r).count();
        assert_eq!(count(SetRole::PipLeader), 32);
        assert_eq!(count(SetRole::NpipLeader), 16);
        assert_eq!(count(SetRole::BipLeader), 16);
        assert_eq!(count(SetRole::Follower), 960);
        assert_eq!(roles[0], SetRole::PipLeader);
        assert_eq!(roles[1], SetRole::NpipLeader);
        assert_eq!(roles[34], SetRole::BipLeader);
        assert_eq!(roles, assign_leader_sets(1024, [32, 16, 16]).unwrap());
    }

    #[test]
    fn leader_map_small_caches() {
        assert!(assign_leader_sets(32, [32, 16, 16]).is_err());
        let roles = assign_leader_sets(64, [32, 16, 16]).unwrap();
        assert!(roles.iter().all(|&r| r != SetRole::Follower));
        let roles = assign_leader_sets(128, [32, 16, 16]).unwrap();
        assert_eq!(roles.iter().filter(|&&r| r == SetRole::Follower).count(), 64);
    }

    fn state() -> TiprpState {
        TiprpState::new(&TiprpConfig::default(), 1024).unwrap()
    }

    fn set_with(s: &TiprpState, role: SetRole) -> usize {
        s.roles().iter().position(|&r| r == role).unwrap()
    }

    #[test]
    fn selection_tree() {
        let mut s = state();
        let pip = set_with(&s, SetRole::PipLeader);
        let follower = set_with(&s, SetRole::Follower);
        s.psel1 = 0;
        s.psel2 = 0;
        assert_eq!(s.select(pip), Policy::Pip);
        assert_eq!(s.select(follower), Policy::Bip);
        s.psel2 = 512;
        assert_eq!(s.select(follower), Policy::Npip);
        s.psel1 = 1023;
        assert_eq!(s.select(follower), Policy::Pip);
    }

    #[test]
    fn training_table() {
        let mut s = state();
        let pip = set_with(&s, SetRole::PipLeader);
        let npip = set_with(&s, SetRole::NpipLeader);
        let bip = set_with(&s, SetRole::BipLeader);
        let follower = set_with(&s, SetRole::Follower);

        s.train(pip, TrainEvent::Hit, true);
        assert_eq!((s.psel1, s.psel2), (513, 511));
        s.train(pip, TrainEvent::Hit, false);
        assert_eq!((s.psel1, s.psel2), (513, 511));
        s.train(pip, TrainEvent::Eviction, true);
        assert_eq!((s.psel1, s.psel2), (512, 510));

        s.train(npip, TrainEvent::Hit, true);
        assert_eq!((s.psel1, s.psel2), (512, 510));
        s.train(npip, TrainEvent::Hit, false);
        assert_eq!((s.psel1, s.psel2), (511, 511));
        s.train(npip, TrainEvent::Eviction, false);
        assert_eq!((s.psel1, s.psel2), (512, 510));

        s.train(bip, TrainEvent::Hit, false);
        assert_eq!((s.psel1, s.psel2), (511, 509));
        s.train(bip, TrainEvent::Eviction, false);
        assert_eq!((s.psel1, s.psel2), (512, 510));
        s.train(bip, TrainEvent::Eviction, true);
        assert_eq!((s.psel1, s.psel2), (512, 510));

        s.train(follower, TrainEvent::Hit, true);
        s.train(follower, TrainEvent::Eviction, false);
        assert_eq!((s.psel1, s.psel2), (512, 510));
    }

    #[test]
    fn counters_saturate() {
        let mut s = state();
        let pip = set_with(&s, SetRole::PipLeader);
        s.psel1 = 1023;
        s.train(pip, TrainEvent::Hit, true);
        assert_eq!(s.psel1, 1023);
        s.psel2 = 0;
        s.train(pip, TrainEvent::Hit, true);
        assert_eq!(s.psel2, 0);
    }

    #[test]
    fn all_events_mode_ignores_pb() {
        let cfg = TiprpConfig {
            training: TrainingMode::AllEvents,
            ..TiprpConfig::default()
        };
        let mut s = TiprpState::new(&cfg, 1024).unwrap();
        let npip = set_with(&s, SetRole::NpipLeader);
        s.train(npip, TrainEvent::Hit, true);
        assert_eq!((s.psel1, s.psel2), (511, 513));
    }

    #[test]
    fn bip_same_as_npip_toggle() {
        let cfg = TiprpConfig {
            bip_training: BipTraining::SameAsNpip,
            ..TiprpConfig::default()
        };
        let mut s = TiprpState::new(&cfg, 1024).unwrap();
        let bip = set_with(&s, SetRole::BipLeader);
        s.train(bip, TrainEvent::Hit, false);
        assert_eq!((s.psel1, s.psel2), (511, 513));
    }
}
