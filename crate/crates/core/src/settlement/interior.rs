use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Building;
use crate::geom::{Rect, Tile};

pub const FURNITURE_CATALOG_VERSION: u32 = 1;
pub const MAX_SPLITS: usize = 3;
const WALL: u8 = u8::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FurnitureItem {
    pub furniture_tag: String,
    pub width: i32,
    pub height: i32,
    pub wall_required: bool,
    pub function_tags: Vec<String>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FurnitureCatalog {
    pub version: u32,
    pub items: Vec<FurnitureItem>,
}

impl FurnitureCatalog {
    pub fn default_catalog() -> Self {
        Self::from_json(include_str!("../../data/furniture.json")).expect("bundled furniture catalog is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let c: FurnitureCatalog = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if c.version != FURNITURE_CATALOG_VERSION {
            return Err(format!("unsupported furniture catalog version {}", c.version));
        }
        if let Some(i) = c.items.iter().find(|i| i.width < 1 || i.height < 1) {
            return Err(format!("furniture `{}` has an empty footprint", i.furniture_tag));
        }
        Ok(c)
    }

    pub fn for_function<'a>(&'a self, function_tag: &'a str) -> impl Iterator<Item = &'a FurnitureItem> + 'a {
        self.items
            .iter()
            .filter(move |i| i.function_tags.iter().any(|t| t == function_tag || t == "any"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedFurniture {
    /// World-unique object id, `<building>/<n>`.
    pub id: String,
    pub furniture_tag: String,
    pub generic: String,
    pub description: String,
    pub asset_ref: Option<String>,
    /// Top-left tile in building-local coordinates.
    pub tile: Tile,
    pub width: i32,
    pub height: i32,
    pub free_standing: bool,
}

impl PlacedFurniture {
    pub fn rect(&self) -> Rect {
        Rect::new(self.tile.x, self.tile.y, self.width, self.height)
    }
}

/// Room layout of one building in local coordinates. `room_ids` holds a
/// room number per tile, or 255 on wall tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interior {
    pub building_id: String,
    pub width: i32,
    pub height: i32,
    pub room_ids: Vec<u8>,
    pub room_count: u8,
    pub furniture: Vec<PlacedFurniture>,
    /// Bottom-row tile under which the entrance lies.
    pub door: Tile,
}

impl Interior {
    fn idx(&self, t: Tile) -> usize {
        (t.y * self.width + t.x) as usize
    }

    fn inside(&self, t: Tile) -> bool {
        t.x >= 0 && t.y >= 0 && t.x < self.width && t.y < self.height
    }

    pub fn is_wall(&self, t: Tile) -> bool {
        self.room_ids[self.idx(t)] == WALL
    }

    fn occupied(&self) -> Vec<bool> {
        let mut occ = vec![false; self.room_ids.len()];
        for f in &self.furniture {
            for t in f.rect().tiles() {
                occ[self.idx(t)] = true;
            }
        }
        occ
    }

    /// Walkable tiles reachable from the door without crossing walls or furniture.
    pub fn reachable(&self) -> Vec<bool> {
        let occ = self.occupied();
        let mut seen = vec![false; self.room_ids.len()];
        let free = |t: Tile| self.inside(t) && !self.is_wall(t) && !occ[self.idx(t)];
        if !free(self.door) {
            return seen;
        }
        let mut queue = VecDeque::from([self.door]);
        seen[self.idx(self.door)] = true;
        while let Some(t) = queue.pop_front() {
            for n in t.neighbors4() {
                if free(n) && !seen[self.idx(n)] {
                    seen[self.idx(n)] = true;
                    queue.push_back(n);
                }
            }
        }
        seen
    }

    /// Wall-adjacent means touching an inner wall or the outer boundary.
    fn touches_wall(&self, r: &Rect) -> bool {
        r.tiles()
            .flat_map(|t| t.neighbors4())
            .any(|n| !self.inside(n) || self.is_wall(n))
    }

    /// Structural checks: room count, disjoint furniture on walkable tiles,
    /// wall adjacency and reachability of every free tile from the door.
    pub fn validate(&self) -> Result<(), String> {
        if !(1..=4).contains(&self.room_count) {
            return Err(format!("{} has {} rooms", self.building_id, self.room_count));
        }
        if self.room_ids.len() != (self.width * self.height) as usize {
            return Err(format!("{} room grid has the wrong size", self.building_id));
        }
        if !self.inside(self.door) || self.door.y != self.height - 1 || self.is_wall(self.door) {
            return Err(format!("{} door is not on the facade", self.building_id));
        }
        let mut occ = vec![false; self.room_ids.len()];
        for f in &self.furniture {
            for t in f.rect().tiles() {
                if !self.inside(t) || self.is_wall(t) || t == self.door {
                    return Err(format!("{} is not on walkable floor", f.id));
                }
                if std::mem::replace(&mut occ[self.idx(t)], true) {
                    return Err(format!("{} overlaps other furniture", f.id));
                }
            }
            if !f.free_standing && !self.touches_wall(&f.rect()) {
                return Err(format!("{} must stand against a wall", f.id));
            }
        }
        let seen = self.reachable();
        for (i, id) in self.room_ids.iter().enumerate() {
            if *id != WALL && !occ[i] && !seen[i] {
                return Err(format!("{} has floor unreachable from the door", self.building_id));
            }
        }
        for f in &self.furniture {
            let reachable = f
                .rect()
                .tiles()
                .flat_map(|t| t.neighbors4())
                .any(|n| self.inside(n) && seen[self.idx(n)]);
            if !reachable {
                return Err(format!("{} cannot be reached", f.id));
            }
        }
        Ok(())
    }
}

fn split_room<R: Rng + ?Sized>(room: Rect, vertical: bool, grid: &[u8], width: i32, gaps: &[Tile], rng: &mut R) -> Option<(Rect, Rect, Vec<Tile>, Tile)> {
    let (lo, hi) = if vertical { (room.x + 2, room.right() - 3) } else { (room.y + 2, room.bottom() - 3) };
    if lo > hi {
        return None;
    }
    let mut positions: Vec<i32> = (lo..=hi).collect();
    positions.shuffle(rng);
    for p in positions {
        let wall: Vec<Tile> = if vertical {
            (room.y..room.bottom()).map(|y| Tile::new(p, y)).collect()
        } else {
            (room.x..room.right()).map(|x| Tile::new(x, p)).collect()
        };
        let near_gap = wall
            .iter()
            .any(|w| gaps.iter().any(|g| g.manhattan(*w) <= 1));
        if near_gap || wall.iter().any(|t| grid[(t.y * width + t.x) as usize] == WALL) {
            continue;
        }
        let gap = wall[rng.random_range(0..wall.len())];
        let (a, b) = if vertical {
            (Rect::new(room.x, room.y, p - room.x, room.h), Rect::new(p + 1, room.y, room.right() - p - 1, room.h))
        } else {
            (Rect::new(room.x, room.y, room.w, p - room.y), Rect::new(room.x, p + 1, room.w, room.bottom() - p - 1))
        };
        let wall = wall.into_iter().filter(|t| *t != gap).collect();
        return Some((a, b, wall, gap));
    }
    None
}

/// Splits the footprint into up to four rooms and furnishes it.
///
/// Rooms come from at most three straight walls, each with one opening, and
/// are at least 2×2 tiles. Furniture matching the building's function is
/// placed wall-first; a placement is rejected if it would cut any floor tile
/// off from the door.
pub fn layout_interior<R: Rng + ?Sized>(building: &Building, catalog: &FurnitureCatalog, rng: &mut R) -> Interior {
    let (w, h) = (building.spec.width, building.spec.height);
    let door = Tile::new(w / 2, h - 1);
    let mut grid = vec![0u8; (w * h) as usize];
    let mut rooms = vec![Rect::new(0, 0, w, h)];
    let mut gaps = vec![door];
    for _ in 0..MAX_SPLITS {
        let mut order: Vec<usize> = (0..rooms.len()).collect();
        order.sort_by_key(|&i| (std::cmp::Reverse(rooms[i].area()), i));
        let mut done = false;
        for i in order {
            let room = rooms[i];
            let prefer_vertical = room.w >= room.h;
            for vertical in [prefer_vertical, !prefer_vertical] {
                if let Some((a, b, wall, gap)) = split_room(room, vertical, &grid, w, &gaps, rng) {
                    for t in wall {
                        grid[(t.y * w + t.x) as usize] = WALL;
                    }
                    gaps.push(gap);
                    rooms[i] = a;
                    rooms.push(b);
                    done = true;
                    break;
                }
            }
            if done {
                break;
            }
        }
        if !done {
            break;
        }
    }
    for (id, room) in rooms.iter().enumerate() {
        for t in room.tiles() {
            grid[(t.y * w + t.x) as usize] = id as u8;
        }
    }
    let mut interior = Interior {
        building_id: building.id.clone(),
        width: w,
        height: h,
        room_ids: grid,
        room_count: rooms.len() as u8,
        furniture: vec![],
        door,
    };

    let mut items: Vec<&FurnitureItem> = catalog.for_function(&building.spec.function_tag).collect();
    items.shuffle(rng);
    items.sort_by_key(|i| !i.wall_required);
    let floor = interior.room_ids.iter().filter(|r| **r != WALL).count();
    let target = (floor / 8).max(1).min(items.len());
    for item in items {
        if interior.furniture.len() >= target {
            break;
        }
        let mut spots: Vec<Tile> = (0..=h - item.height)
            .flat_map(|y| (0..=w - item.width).map(move |x| Tile::new(x, y)))
            .collect();
        spots.shuffle(rng);
        let occ = interior.occupied();
        for spot in spots {
            let r = Rect::new(spot.x, spot.y, item.width, item.height);
            let clear = r
                .tiles()
                .all(|t| !interior.is_wall(t) && !occ[interior.idx(t)] && t != door && t.manhattan(door) > 1);
            if !clear || (item.wall_required && !interior.touches_wall(&r)) {
                continue;
            }
            interior.furniture.push(PlacedFurniture {
                id: format!("{}/{}", building.id, interior.furniture.len()),
                furniture_tag: item.furniture_tag.clone(),
                generic: item.description.clone(),
                description: item.description.clone(),
                asset_ref: None,
                tile: spot,
                width: item.width,
                height: item.height,
                free_standing: !item.wall_required,
            });
            if interior.validate().is_ok() {
                break;
            }
            interior.furniture.pop();
        }
    }
    interior
}
