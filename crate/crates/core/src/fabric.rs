//! Partitioned PL fabric: slot capacities, fit tests and smallest-fit placement.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::ResourceVector;
use crate::JobId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlotId(pub u32);

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An exclusive reconfigurable partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slot {
    pub id: SlotId,
    pub capacity: ResourceVector,
    /// Cosmetic clock-region label such as `"X0Y1"`.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub region_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FabricConfig {
    pub name: String,
    pub slots: Vec<Slot>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FabricError {
    #[error("fabric '{0}' has no slots")]
    Empty(String),
    #[error("fabric '{fabric}': slot ids must be >= 1, found {id}")]
    ZeroId { fabric: String, id: SlotId },
    #[error("fabric '{fabric}': duplicate slot id {id}")]
    DuplicateId { fabric: String, id: SlotId },
    #[error("slot {0} does not exist")]
    UnknownSlot(SlotId),
    #[error("slot {slot} is already occupied by job {occupant}")]
    SlotBusy { slot: SlotId, occupant: JobId },
    #[error("job {job} already occupies slot {slot}")]
    JobAlreadyPlaced { job: JobId, slot: SlotId },
}

impl FabricConfig {
    pub fn validate(&self) -> Result<(), FabricError> {
        if self.slots.is_empty() {
            return Err(FabricError::Empty(self.name.clone()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for slot in &self.slots {
            if slot.id.0 == 0 {
                return Err(FabricError::ZeroId { fabric: self.name.clone(), id: slot.id });
            }
            if !ids.insert(slot.id) {
                return Err(FabricError::DuplicateId { fabric: self.name.clone(), id: slot.id });
            }
        }
        Ok(())
    }

    pub fn slot(&self, id: SlotId) -> Option<&Slot> {
        self.slots.iter().find(|s| s.id == id)
    }
}

fn slot(id: u32, capacity: (u32, u32, u32, u32), label: &str) -> Slot {
    let (luts, ffs, brams, dsps) = capacity;
    Slot { id: SlotId(id), capacity: ResourceVector::new(luts, ffs, brams, dsps), region_label: label.into() }
}

/// The one-, two- and three-slot partitions of the Zynq-7020 PL.
pub fn builtin_fabrics() -> Vec<FabricConfig> {
    vec![
        FabricConfig { name: "1-slot".into(), slots: vec![slot(1, (11200, 22400, 80, 60), "X0Y0+X1Y0")] },
        FabricConfig {
            name: "2-slot".into(),
            slots: vec![slot(1, (11200, 22400, 80, 60), "X0Y1"), slot(2, (200, 400, 0, 0), "X1Y1")],
        },
        FabricConfig {
            name: "3-slot".into(),
            slots: vec![
                slot(1, (800, 1600, 10, 10), ""),
                slot(2, (1600, 3200, 20, 20), ""),
                slot(3, (10000, 20000, 80, 60), ""),
            ],
        },
    ]
}

/// Looks up a builtin fabric by name (`"1-slot"`, `"2-slot"`, `"3-slot"`).
pub fn builtin_fabric(name: &str) -> Option<FabricConfig> {
    builtin_fabrics().into_iter().find(|f| f.name == name)
}

/// True iff `demand` fits `capacity` in every component.
pub fn fits(demand: &ResourceVector, capacity: &ResourceVector) -> bool {
    demand.le_componentwise(capacity)
}

/// Slot -> occupant map for one simulation run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occupancy {
    slots: BTreeMap<SlotId, Option<JobId>>,
}

impl Occupancy {
    pub fn new(fabric: &FabricConfig) -> Self {
        Self { slots: fabric.slots.iter().map(|s| (s.id, None)).collect() }
    }

    pub fn occupant(&self, slot: SlotId) -> Option<JobId> {
        self.slots.get(&slot).copied().flatten()
    }

    pub fn is_free(&self, slot: SlotId) -> bool {
        matches!(self.slots.get(&slot), Some(None))
    }

    pub fn slot_of(&self, job: JobId) -> Option<SlotId> {
        self.slots.iter().find(|(_, occ)| **occ == Some(job)).map(|(id, _)| *id)
    }

    pub fn assign(&mut self, slot: SlotId, job: JobId) -> Result<(), FabricError> {
        if let Some(existing) = self.slot_of(job) {
            return Err(FabricError::JobAlreadyPlaced { job, slot: existing });
        }
        match self.slots.get_mut(&slot) {
            None => Err(FabricError::UnknownSlot(slot)),
            Some(Some(occupant)) => Err(FabricError::SlotBusy { slot, occupant: *occupant }),
            Some(entry) => {
                *entry = Some(job);
                Ok(())
            }
        }
    }

    pub fn release(&mut self, slot: SlotId) -> Option<JobId> {
        self.slots.get_mut(&slot).and_then(Option::take)
    }

    pub fn free_slots(&self) -> impl Iterator<Item = SlotId> + '_ {
        self.slots.iter().filter(|(_, occ)| occ.is_none()).map(|(id, _)| *id)
    }
}

/// Slot-size ordering: lexicographic on capacity, then lowest id.
fn size_key(slot: &Slot) -> ((u32, u32, u32, u32), SlotId) {
    (slot.capacity.as_tuple(), slot.id)
}

/// Picks the smallest free slot that can host `demand`.
pub fn smallest_fit(demand: &ResourceVector, fabric: &FabricConfig, occupancy: &Occupancy) -> Option<SlotId> {
    fabric
        .slots
        .iter()
        .filter(|s| occupancy.is_free(s.id) && fits(demand, &s.capacity))
        .min_by_key(|s| size_key(s))
        .map(|s| s.id)
}

/// Orders slot ids by the placement ordering used in [`smallest_fit`].
pub(crate) fn slot_rank(fabric: &FabricConfig, id: SlotId) -> ((u32, u32, u32, u32), SlotId) {
    fabric.slot(id).map(size_key).unwrap_or(((u32::MAX, u32::MAX, u32::MAX, u32::MAX), id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ML_KEM: ResourceVector = ResourceVector::new(7016, 2985, 3, 2);
    const VITERBI: ResourceVector = ResourceVector::new(39, 11, 0, 0);
    const MATMUL: ResourceVector = ResourceVector::new(557, 141, 108, 2);

    fn three_slot() -> FabricConfig {
        builtin_fabric("3-slot").unwrap()
    }

    #[test]
    fn builtin_capacities() {
        let fabrics = builtin_fabrics();
        assert_eq!(fabrics.len(), 3);
        assert_eq!(builtin_fabric("1-slot").unwrap().slots.len(), 1);
        let two = builtin_fabric("2-slot").unwrap();
        assert_eq!(two.slot(SlotId(2)).unwrap().capacity, ResourceVector::new(200, 400, 0, 0));
        assert_eq!(three_slot().slot(SlotId(3)).unwrap().capacity, ResourceVector::new(10000, 20000, 80, 60));
        for f in &fabrics {
            f.validate().unwrap();
        }
    }

    #[test]
    fn fit_examples() {
        assert!(fits(&ML_KEM, &ResourceVector::new(10000, 20000, 80, 60)));
        assert!(!fits(&ML_KEM, &ResourceVector::new(800, 1600, 10, 10)));
        assert!(fits(&ResourceVector::ZERO, &ResourceVector::ZERO));
    }

    #[test]
    fn smallest_fit_examples() {
        let fabric = three_slot();
        let occ = Occupancy::new(&fabric);
        assert_eq!(smallest_fit(&VITERBI, &fabric, &occ), Some(SlotId(1)));
        assert_eq!(smallest_fit(&ML_KEM, &fabric, &occ), Some(SlotId(3)));
        for f in builtin_fabrics() {
            assert_eq!(smallest_fit(&MATMUL, &f, &Occupancy::new(&f)), None);
        }
    }

    #[test]
    fn occupied_slots_are_skipped() {
        let fabric = three_slot();
        let mut occ = Occupancy::new(&fabric);
        occ.assign(SlotId(1), JobId(7)).unwrap();
        assert_eq!(smallest_fit(&VITERBI, &fabric, &occ), Some(SlotId(2)));
        assert_eq!(occ.assign(SlotId(2), JobId(7)), Err(FabricError::JobAlreadyPlaced { job: JobId(7), slot: SlotId(1) }));
        assert_eq!(occ.assign(SlotId(1), JobId(8)), Err(FabricError::SlotBusy { slot: SlotId(1), occupant: JobId(7) }));
        assert_eq!(occ.release(SlotId(1)), Some(JobId(7)));
        assert!(occ.is_free(SlotId(1)));
    }

    #[test]
    fn invalid_fabrics() {
        let empty = FabricConfig { name: "e".into(), slots: vec![] };
        assert!(matches!(empty.validate(), Err(FabricError::Empty(_))));
        let dup = FabricConfig { name: "d".into(), slots: vec![slot(1, (1, 1, 1, 1), ""), slot(1, (2, 2, 2, 2), "")] };
        assert!(matches!(dup.validate(), Err(FabricError::DuplicateId { .. })));
        let zero = FabricConfig { name: "z".into(), slots: vec![slot(0, (1, 1, 1, 1), "")] };
        assert!(matches!(zero.validate(), Err(FabricError::ZeroId { .. })));
    }

    fn arb_vector(max: u32) -> impl Strategy<Value = ResourceVector> {
        (0..=max, 0..=max, 0..=max / 10, 0..=max / 10).prop_map(|(l, f, b, d)| ResourceVector::new(l, f, b, d))
    }

    fn arb_fabric() -> impl Strategy<Value = (FabricConfig, Vec<bool>)> {
        prop::collection::vec((arb_vector(2000), any::<bool>()), 1..6).prop_map(|slots| {
            let busy = slots.iter().map(|(_, b)| *b).collect();
            let slots = slots
                .into_iter()
                .enumerate()
                .map(|(i, (capacity, _))| Slot { id: SlotId(i as u32 + 1), capacity, region_label: String::new() })
                .collect();
            (FabricConfig { name: "gen".into(), slots }, busy)
        })
    }

    fn occupancy(fabric: &FabricConfig, busy: &[bool]) -> Occupancy {
        let mut occ = Occupancy::new(fabric);
        for (i, (slot, b)) in fabric.slots.iter().zip(busy).enumerate() {
            if *b {
                occ.assign(slot.id, JobId(i as u32)).unwrap();
            }
        }
        occ
    }

    proptest! {
        #[test]
        fn chosen_slot_is_free_and_fits((fabric, busy) in arb_fabric(), demand in arb_vector(2000)) {
            let occ = occupancy(&fabric, &busy);
            if let Some(id) = smallest_fit(&demand, &fabric, &occ) {
                prop_assert!(occ.is_free(id));
                prop_assert!(fits(&demand, &fabric.slot(id).unwrap().capacity));
            } else {
                prop_assert!(fabric.slots.iter().all(|s| !occ.is_free(s.id) || !fits(&demand, &s.capacity)));
            }
        }

        #[test]
        fn smaller_demand_never_lands_in_larger_slot(
            (fabric, busy) in arb_fabric(),
            demand in arb_vector(2000),
            shrink in (0u32..=100, 0u32..=100, 0u32..=100, 0u32..=100),
        ) {
            let occ = occupancy(&fabric, &busy);
            let smaller = ResourceVector::new(
                demand.luts * shrink.0 / 100,
                demand.ffs * shrink.1 / 100,
                demand.brams * shrink.2 / 100,
                demand.dsps * shrink.3 / 100,
            );
            if let Some(big) = smallest_fit(&demand, &fabric, &occ) {
                let small = smallest_fit(&smaller, &fabric, &occ);
                prop_assert!(small.is_some());
                prop_assert!(slot_rank(&fabric, small.unwrap()) <= slot_rank(&fabric, big));
            }
        }

        #[test]
        fn result_independent_of_slot_order((fabric, busy) in arb_fabric(), demand in arb_vector(2000)) {
            let occ = occupancy(&fabric, &busy);
            let mut reversed = fabric.clone();
            reversed.slots.reverse();
            prop_assert_eq!(smallest_fit(&demand, &fabric, &occ), smallest_fit(&demand, &reversed, &occ));
        }
    }
}
