//! Spatially hashed TSDF volume.
//!
//! The map is a hash table of fixed-size voxel blocks. Only blocks that have
//! been touched by integration are allocated. Voxel addressing uses floor
//! division everywhere so that negative coordinates are continuous with
//! positive ones.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Semantic class identifier (wall, floor, chair, ...).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u16);

/// Object instance identifier. Map-wide IDs start at 1 and are never reused.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Stuff,
    Thing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassInfo {
    pub id: ClassId,
    pub name: String,
    pub kind: ClassKind,
}

/// Partition of the class set into stuff and thing classes.
///
/// Every class belongs to exactly one of the two sets; this is enforced by
/// construction since each class carries a single [`ClassKind`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct LabelSchema {
    classes: BTreeMap<ClassId, ClassInfo>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    classes: Vec<ClassInfo>,
}

impl TryFrom<SchemaFile> for LabelSchema {
    type Error = Error;

    fn try_from(file: SchemaFile) -> Result<Self> {
        LabelSchema::new(file.classes)
    }
}

impl From<LabelSchema> for SchemaFile {
    fn from(schema: LabelSchema) -> Self {
        SchemaFile {
            classes: schema.classes.into_values().collect(),
        }
    }
}

impl LabelSchema {
    pub fn new(classes: impl IntoIterator<Item = ClassInfo>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for class in classes {
            if class.id.0 == 0 {
                return Err(Error::Config("class id 0 is reserved for 'no class'".into()));
            }
            let id = class.id;
            if map.insert(id, class).is_some() {
                return Err(Error::Config(format!("class {id} declared twice")));
            }
        }
        Ok(LabelSchema { classes: map })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn kind(&self, class: ClassId) -> Option<ClassKind> {
        self.classes.get(&class).map(|c| c.kind)
    }

    pub fn is_stuff(&self, class: ClassId) -> bool {
        self.kind(class) == Some(ClassKind::Stuff)
    }

    pub fn is_thing(&self, class: ClassId) -> bool {
        self.kind(class) == Some(ClassKind::Thing)
    }

    pub fn contains(&self, class: ClassId) -> bool {
        self.classes.contains_key(&class)
    }

    pub fn name(&self, class: ClassId) -> Option<&str> {
        self.classes.get(&class).map(|c| c.name.as_str())
    }

    pub fn classes(&self) -> impl Iterator<Item = &ClassInfo> {
        self.classes.values()
    }

    /// Stuff classes in ascending ID order.
    pub fn stuff_classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.classes
            .values()
            .filter(|c| c.kind == ClassKind::Stuff)
            .map(|c| c.id)
    }

    /// Thing classes in ascending ID order.
    pub fn thing_classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.classes
            .values()
            .filter(|c| c.kind == ClassKind::Thing)
            .map(|c| c.id)
    }
}

/// Label stored per pixel and per voxel: a stuff class, an object instance,
/// or unknown.
///
/// The derived ordering (`Unknown < Stuff(_) < Instance(_)`) is used wherever
/// a deterministic label order is needed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PanopticLabel {
    #[default]
    Unknown,
    Stuff(ClassId),
    Instance(InstanceId),
}

impl PanopticLabel {
    pub fn instance(self) -> Option<InstanceId> {
        match self {
            PanopticLabel::Instance(id) => Some(id),
            _ => None,
        }
    }

    pub fn is_unknown(self) -> bool {
        self == PanopticLabel::Unknown
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    /// Voxel edge length in meters.
    pub voxel_size: f64,
    /// TSDF truncation distance in meters.
    pub truncation: f64,
    /// Voxels per block side.
    pub block_side: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            voxel_size: 0.024,
            truncation: 4.0 * 0.024,
            block_side: 16,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::Config(format!("voxel_size must be positive, got {}", self.voxel_size)));
        }
        if !(self.truncation > self.voxel_size && self.truncation.is_finite()) {
            return Err(Error::Config(format!(
                "truncation ({}) must exceed voxel_size ({})",
                self.truncation, self.voxel_size
            )));
        }
        if self.block_side == 0 || self.block_side > 256 {
            return Err(Error::Config(format!("block_side must be in 1..=256, got {}", self.block_side)));
        }
        Ok(())
    }

    pub fn block_size(&self) -> f64 {
        self.voxel_size * self.block_side as f64
    }

    pub fn world_to_global(&self, p: &Point3<f64>) -> GlobalIndex {
        let inv = 1.0 / self.voxel_size;
        GlobalIndex([
            (p.x * inv).floor() as i64,
            (p.y * inv).floor() as i64,
            (p.z * inv).floor() as i64,
        ])
    }

    pub fn split_global(&self, g: GlobalIndex) -> (BlockIndex, [usize; 3]) {
        let s = self.block_side as i64;
        let b = g.0.map(|c| c.div_euclid(s) as i32);
        let l = g.0.map(|c| c.rem_euclid(s) as usize);
        (BlockIndex(b), l)
    }

    /// World position of a voxel center.
    pub fn global_center(&self, g: GlobalIndex) -> Point3<f64> {
        let vs = self.voxel_size;
        Point3::new(
            (g.0[0] as f64 + 0.5) * vs,
            (g.0[1] as f64 + 0.5) * vs,
            (g.0[2] as f64 + 0.5) * vs,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Voxel {
    /// Truncated signed distance, positive in front of the surface.
    pub tsdf: f32,
    pub weight: f32,
    pub color: [f32; 3],
    pub label: PanopticLabel,
    pub label_weight: f32,
}

impl Voxel {
    pub fn unobserved(truncation: f32) -> Self {
        Voxel {
            tsdf: truncation,
            weight: 0.0,
            color: [0.0; 3],
            label: PanopticLabel::Unknown,
            label_weight: 0.0,
        }
    }

    pub fn is_observed(&self) -> bool {
        self.weight > 0.0
    }

    pub fn color_u8(&self) -> [u8; 3] {
        self.color.map(|c| c.round().clamp(0.0, 255.0) as u8)
    }
}

/// Integer index of a block in the hash table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockIndex(pub [i32; 3]);

/// Integer index of a voxel in the infinite global grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GlobalIndex(pub [i64; 3]);

impl GlobalIndex {
    pub fn offset(self, d: [i64; 3]) -> GlobalIndex {
        GlobalIndex([self.0[0] + d[0], self.0[1] + d[1], self.0[2] + d[2]])
    }
}

/// A dense cube of `side³` voxels.
///
/// Storage is x-fastest: voxel `(x, y, z)` lives at `x + side * (y + side * z)`.
#[derive(Clone, Debug)]
pub struct VoxelBlock {
    index: BlockIndex,
    side: usize,
    voxels: Vec<Voxel>,
}

impl VoxelBlock {
    fn try_new(index: BlockIndex, side: usize, truncation: f32) -> Result<Self> {
        let n = side * side * side;
        let mut voxels = Vec::new();
        voxels.try_reserve_exact(n).map_err(|_| Error::Allocation)?;
        voxels.resize(n, Voxel::unobserved(truncation));
        Ok(VoxelBlock { index, side, voxels })
    }

    pub fn index(&self) -> BlockIndex {
        self.index
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn linear(&self, local: [usize; 3]) -> usize {
        local[0] + self.side * (local[1] + self.side * local[2])
    }

    pub fn local(&self, linear: usize) -> [usize; 3] {
        let s = self.side;
        [linear % s, (linear / s) % s, linear / (s * s)]
    }

    pub fn voxel(&self, local: [usize; 3]) -> &Voxel {
        &self.voxels[self.linear(local)]
    }

    pub fn voxel_mut(&mut self, local: [usize; 3]) -> &mut Voxel {
        let i = self.linear(local);
        &mut self.voxels[i]
    }

    pub fn voxels(&self) -> &[Voxel] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [Voxel] {
        &mut self.voxels
    }

    pub fn is_observed(&self) -> bool {
        self.voxels.iter().any(Voxel::is_observed)
    }

    /// Global index of the voxel stored at `linear`.
    pub fn global(&self, linear: usize) -> GlobalIndex {
        let l = self.local(linear);
        let s = self.side as i64;
        GlobalIndex([
            self.index.0[0] as i64 * s + l[0] as i64,
            self.index.0[1] as i64 * s + l[1] as i64,
            self.index.0[2] as i64 * s + l[2] as i64,
        ])
    }
}

#[derive(Clone, Debug)]
pub struct VolumetricMap {
    config: MapConfig,
    blocks: HashMap<BlockIndex, VoxelBlock>,
    next_instance_id: u32,
}

impl VolumetricMap {
    pub fn new(config: MapConfig) -> Result<Self> {
        config.validate()?;
        Ok(VolumetricMap {
            config,
            blocks: HashMap::new(),
            next_instance_id: 1,
        })
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn voxel_size(&self) -> f64 {
        self.config.voxel_size
    }

    pub fn truncation(&self) -> f64 {
        self.config.truncation
    }

    pub fn block_side(&self) -> usize {
        self.config.block_side
    }

    pub fn world_to_global(&self, p: &Point3<f64>) -> GlobalIndex {
        self.config.world_to_global(p)
    }

    pub fn split_global(&self, g: GlobalIndex) -> (BlockIndex, [usize; 3]) {
        self.config.split_global(g)
    }

    /// Block and intra-block voxel containing the world point `p`.
    pub fn world_to_voxel(&self, p: &Point3<f64>) -> (BlockIndex, [usize; 3]) {
        self.split_global(self.world_to_global(p))
    }

    /// World position of a voxel center.
    pub fn voxel_to_world(&self, block: BlockIndex, local: [usize; 3]) -> Point3<f64> {
        let s = self.config.block_side as i64;
        let g = GlobalIndex([
            block.0[0] as i64 * s + local[0] as i64,
            block.0[1] as i64 * s + local[1] as i64,
            block.0[2] as i64 * s + local[2] as i64,
        ]);
        self.global_center(g)
    }

    pub fn global_center(&self, g: GlobalIndex) -> Point3<f64> {
        self.config.global_center(g)
    }

    pub fn get_or_allocate_block(&mut self, index: BlockIndex) -> Result<&mut VoxelBlock> {
        if !self.blocks.contains_key(&index) {
            self.blocks.try_reserve(1).map_err(|_| Error::Allocation)?;
            let block = VoxelBlock::try_new(index, self.config.block_side, self.config.truncation as f32)?;
            self.blocks.insert(index, block);
        }
        Ok(self.blocks.get_mut(&index).expect("block was just inserted"))
    }

    pub fn block(&self, index: BlockIndex) -> Option<&VoxelBlock> {
        self.blocks.get(&index)
    }

    pub fn block_mut(&mut self, index: BlockIndex) -> Option<&mut VoxelBlock> {
        self.blocks.get_mut(&index)
    }

    pub fn voxel(&self, g: GlobalIndex) -> Option<&Voxel> {
        let (b, l) = self.split_global(g);
        self.blocks.get(&b).map(|block| block.voxel(l))
    }

    pub fn voxel_mut(&mut self, g: GlobalIndex) -> Option<&mut Voxel> {
        let (b, l) = self.split_global(g);
        self.blocks.get_mut(&b).map(|block| block.voxel_mut(l))
    }

    /// Label at the voxel containing `p`, or `Unknown` if that space was never allocated.
    pub fn label_at(&self, p: &Point3<f64>) -> PanopticLabel {
        self.voxel(self.world_to_global(p))
            .map(|v| v.label)
            .unwrap_or(PanopticLabel::Unknown)
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Bytes held by voxel storage.
    pub fn memory_bytes(&self) -> usize {
        self.blocks.len() * self.config.block_side.pow(3) * std::mem::size_of::<Voxel>()
    }

    /// Block indices in ascending lexicographic order.
    pub fn sorted_block_indices(&self) -> Vec<BlockIndex> {
        let mut keys: Vec<_> = self.blocks.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    pub fn blocks(&self) -> impl Iterator<Item = &VoxelBlock> {
        self.blocks.values()
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut VoxelBlock> {
        self.blocks.values_mut()
    }

    pub fn allocate_instance_id(&mut self) -> InstanceId {
        let id = InstanceId(self.next_instance_id);
        self.next_instance_id = self
            .next_instance_id
            .checked_add(1)
            .expect("instance id space exhausted");
        id
    }

    /// The ID the next call to [`allocate_instance_id`](Self::allocate_instance_id) will return.
    pub fn peek_next_instance_id(&self) -> InstanceId {
        InstanceId(self.next_instance_id)
    }
}
