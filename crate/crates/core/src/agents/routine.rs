use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Tile;
use crate::oracle::{slots, OracleClient, ResponseSchema};

/// Default waking hours, in minutes of a 1440-minute day.
pub const DEFAULT_WAKE: u32 = 360;
pub const DEFAULT_SLEEP: u32 = 1320;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Building(String),
    Tile(Tile),
}

impl Location {
    pub fn label(&self) -> String {
        match self {
            Location::Building(b) => b.clone(),
            Location::Tile(t) => format!("({}, {})", t.x, t.y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntrySource {
    Generated,
    Plan(String),
    /// Temporary entry pushed by a reaction to an observation.
    Deviation,
    /// Entry placed by a player command.
    Command(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutineEntry {
    pub start: u32,
    pub end: u32,
    pub location: Location,
    pub object: Option<String>,
    pub activity: String,
    pub source: EntrySource,
}

impl RoutineEntry {
    pub fn new(start: u32, end: u32, location: Location, activity: &str, source: EntrySource) -> Self {
        Self {
            start,
            end,
            location,
            object: None,
            activity: activity.to_string(),
            source,
        }
    }

    pub fn overlaps(&self, start: u32, end: u32) -> bool {
        self.start < end && start < self.end
    }

    pub fn is_plan(&self) -> bool {
        matches!(self.source, EntrySource::Plan(_))
    }

    pub fn duration(&self) -> u32 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Routine {
    pub npc_id: String,
    pub day: u32,
    pub wake: u32,
    pub sleep: u32,
    pub entries: Vec<RoutineEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutineError {
    #[error("slot {start}..{end} is outside waking hours")]
    OutsideDay { start: u32, end: u32 },
    #[error("slot {start}..{end} overlaps plan entry `{plan_id}`")]
    PlanConflict { start: u32, end: u32, plan_id: String },
    #[error("empty slot")]
    EmptySlot,
}

impl Routine {
    pub fn entry_at(&self, minute: u32) -> Option<&RoutineEntry> {
        self.entries.iter().find(|e| e.start <= minute && minute < e.end)
    }

    pub fn plan_entries<'a>(&'a self, plan_id: &'a str) -> impl Iterator<Item = &'a RoutineEntry> + 'a {
        self.entries
            .iter()
            .filter(move |e| matches!(&e.source, EntrySource::Plan(p) if p == plan_id))
    }

    /// First plan entry overlapping `[start, end)`, if any.
    pub fn plan_conflict(&self, start: u32, end: u32) -> Option<&RoutineEntry> {
        self.entries.iter().find(|e| e.is_plan() && e.overlaps(start, end))
    }

    /// Inserts `entry`, truncating or splitting whatever non-plan entries it
    /// overlaps. Entries sourced from plans are never overwritten.
    pub fn insert_block(&mut self, entry: RoutineEntry) -> Result<(), RoutineError> {
        let (start, end) = (entry.start, entry.end);
        if start >= end {
            return Err(RoutineError::EmptySlot);
        }
        if start < self.wake || end > self.sleep {
            return Err(RoutineError::OutsideDay { start, end });
        }
        if let Some(p) = self.plan_conflict(start, end) {
            let EntrySource::Plan(plan_id) = &p.source else { unreachable!() };
            return Err(RoutineError::PlanConflict {
                start,
                end,
                plan_id: plan_id.clone(),
            });
        }
        let mut out = Vec::with_capacity(self.entries.len() + 2);
        for e in self.entries.drain(..) {
            if !e.overlaps(start, end) {
                out.push(e);
                continue;
            }
            if e.start < start {
                out.push(RoutineEntry { end: start, ..e.clone() });
            }
            if e.end > end {
                out.push(RoutineEntry { start: end, ..e });
            }
        }
        out.push(entry);
        out.sort_by_key(|e| e.start);
        self.entries = out;
        Ok(())
    }

    /// Replaces every entry of `plan_id` by idling at `home`. Returns how
    /// many entries were replaced.
    pub fn remove_plan_entry(&mut self, plan_id: &str, home: &str) -> usize {
        let mut n = 0;
        for e in &mut self.entries {
            if matches!(&e.source, EntrySource::Plan(p) if p == plan_id) {
                *e = idle_at_home(e.start, e.end, home);
                n += 1;
            }
        }
        n
    }

    /// Ordered, non-overlapping and gap-free over `[wake, sleep)`.
    pub fn check_contiguity(&self) -> Result<(), String> {
        if self.wake >= self.sleep {
            return Err(format!("routine of {} day {} has wake {} >= sleep {}", self.npc_id, self.day, self.wake, self.sleep));
        }
        let Some(first) = self.entries.first() else {
            return Err(format!("routine of {} day {} is empty", self.npc_id, self.day));
        };
        let last = self.entries.last().unwrap_or(first);
        if first.start != self.wake || last.end != self.sleep {
            return Err(format!("routine of {} day {} does not span waking hours", self.npc_id, self.day));
        }
        for e in &self.entries {
            if e.start >= e.end {
                return Err(format!("routine of {} day {} has an empty entry at {}", self.npc_id, self.day, e.start));
            }
        }
        for w in self.entries.windows(2) {
            if w[0].end != w[1].start {
                return Err(format!(
                    "routine of {} day {} breaks between {} and {}",
                    self.npc_id, self.day, w[0].end, w[1].start
                ));
            }
        }
        Ok(())
    }
}

pub fn idle_at_home(start: u32, end: u32, home: &str) -> RoutineEntry {
    RoutineEntry::new(start, end, Location::Building(home.to_string()), "idle at home", EntrySource::Generated)
}

/// Waking hours scaled to a day of `day_length` minutes.
pub fn waking_hours(day_length: u32) -> (u32, u32) {
    let scale = |m: u32| (u64::from(m) * u64::from(day_length) / 1440) as u32;
    (scale(DEFAULT_WAKE), scale(DEFAULT_SLEEP).max(scale(DEFAULT_WAKE) + 1))
}

/// What an NPC may use while generating a routine.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutineContext {
    pub npc_id: String,
    pub name: String,
    pub traits: String,
    pub lore: String,
    pub home: String,
    pub workplace: Option<String>,
    /// Object id to the building it stands in; only home and workplace.
    pub objects: BTreeMap<String, String>,
    /// Object id to a short description, for the prompt.
    pub object_descriptions: BTreeMap<String, String>,
    pub wake: u32,
    pub sleep: u32,
}

/// Sleep, meals, work and leisure in fixed proportions of the waking span.
pub fn default_template(ctx: &RoutineContext, day: u32) -> Routine {
    let home = Location::Building(ctx.home.clone());
    let parts: Vec<(u32, Location, &str)> = match &ctx.workplace {
        Some(w) => {
            let work = Location::Building(w.clone());
            vec![
                (1, home.clone(), "breakfast"),
                (6, work.clone(), "work"),
                (1, work.clone(), "lunch"),
                (4, work, "work"),
                (1, home.clone(), "dinner"),
                (3, home, "leisure"),
            ]
        }
        None => vec![
            (1, home.clone(), "breakfast"),
            (5, home.clone(), "study"),
            (1, home.clone(), "lunch"),
            (5, home.clone(), "play"),
            (1, home.clone(), "dinner"),
            (3, home, "leisure"),
        ],
    };
    let total: u32 = parts.iter().map(|p| p.0).sum();
    let span = u64::from(ctx.sleep - ctx.wake);
    let mut acc = 0;
    let mut entries = Vec::new();
    for (weight, location, activity) in parts {
        let start = ctx.wake + (span * u64::from(acc) / u64::from(total)) as u32;
        acc += weight;
        let end = ctx.wake + (span * u64::from(acc) / u64::from(total)) as u32;
        if end > start {
            entries.push(RoutineEntry::new(start, end, location, activity, EntrySource::Generated));
        }
    }
    Routine {
        npc_id: ctx.npc_id.clone(),
        day,
        wake: ctx.wake,
        sleep: ctx.sleep,
        entries,
    }
}

fn parse_minute(v: &serde_json::Value) -> Option<u32> {
    if let Some(n) = v.as_u64() {
        return u32::try_from(n).ok();
    }
    parse_clock(v.as_str()?)
}

/// "HH:MM" to minutes.
pub fn parse_clock(s: &str) -> Option<u32> {
    let (h, m) = s.trim().split_once(':')?;
    let (h, m): (u32, u32) = (h.parse().ok()?, m.parse().ok()?);
    (h <= 24 && m < 60).then_some(h * 60 + m)
}

/// Asks for a routine and validates it against what the NPC can reach.
///
/// Entries naming an object or place outside home and workplace become
/// "idle at home"; overlaps are cut, gaps filled with idling, and the span
/// clamped to waking hours. A routine that keeps a worker away from work,
/// or any oracle failure, yields the default template instead.
pub fn generate_routine(ctx: &RoutineContext, day: u32, oracle: &mut OracleClient) -> Routine {
    let objects: Vec<String> = ctx
        .object_descriptions
        .iter()
        .map(|(id, d)| format!("{id}: {d}"))
        .collect();
    let fmt = |m: u32| format!("{:02}:{:02}", m / 60, m % 60);
    let request = slots([
        ("name", ctx.name.clone()),
        ("traits", ctx.traits.clone()),
        ("home", ctx.home.clone()),
        ("workplace", ctx.workplace.clone().unwrap_or_else(|| "none".into())),
        ("lore", ctx.lore.clone()),
        ("objects", objects.join("; ")),
        ("day", day.to_string()),
        ("wake", fmt(ctx.wake)),
        ("sleep", fmt(ctx.sleep)),
    ]);
    let Ok(resp) = oracle.ask("daily_routine", request, ResponseSchema::JsonObject) else {
        return default_template(ctx, day);
    };
    let Some(raw) = resp.as_json().and_then(|m| m.get("entries")).and_then(|v| v.as_array()) else {
        return default_template(ctx, day);
    };

    let mut entries = Vec::new();
    for item in raw {
        let Some(obj) = item.as_object() else { continue };
        let (Some(start), Some(end)) = (obj.get("start").and_then(parse_minute), obj.get("end").and_then(parse_minute)) else {
            continue;
        };
        let (start, end) = (start.max(ctx.wake), end.min(ctx.sleep));
        if start >= end {
            continue;
        }
        let activity = obj.get("activity").and_then(|v| v.as_str()).map(str::trim).unwrap_or("");
        let place = obj.get("location").and_then(|v| v.as_str()).map(str::trim).unwrap_or("home");
        let building = match place {
            "home" => Some(ctx.home.clone()),
            "work" | "workplace" => ctx.workplace.clone(),
            b if b == ctx.home || Some(b) == ctx.workplace.as_deref() => Some(b.to_string()),
            _ => None,
        };
        let object = obj.get("object").and_then(|v| v.as_str()).map(String::from);
        let object_ok = match (&object, &building) {
            (None, _) => true,
            (Some(o), Some(b)) => ctx.objects.get(o) == Some(b),
            (Some(_), None) => false,
        };
        match building {
            Some(b) if object_ok && !activity.is_empty() => entries.push(RoutineEntry {
                start,
                end,
                location: Location::Building(b),
                object,
                activity: activity.to_string(),
                source: EntrySource::Generated,
            }),
            _ => entries.push(idle_at_home(start, end, &ctx.home)),
        }
    }
    if entries.is_empty() {
        return default_template(ctx, day);
    }
    entries.sort_by_key(|e| e.start);

    let mut repaired: Vec<RoutineEntry> = Vec::new();
    let mut cursor = ctx.wake;
    for mut e in entries {
        e.start = e.start.max(cursor);
        if e.start >= e.end {
            continue;
        }
        if e.start > cursor {
            repaired.push(idle_at_home(cursor, e.start, &ctx.home));
        }
        cursor = e.end;
        repaired.push(e);
    }
    if cursor < ctx.sleep {
        repaired.push(idle_at_home(cursor, ctx.sleep, &ctx.home));
    }
    if let Some(w) = &ctx.workplace {
        let at_work = Location::Building(w.clone());
        if !repaired.iter().any(|e| e.location == at_work) {
            return default_template(ctx, day);
        }
    }
    Routine {
        npc_id: ctx.npc_id.clone(),
        day,
        wake: ctx.wake,
        sleep: ctx.sleep,
        entries: repaired,
    }
}
