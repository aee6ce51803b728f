use std::collections::BTreeMap;

use super::{OracleError, SlotValues};

/// A prompt with `{slot}` placeholders.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub template_id: String,
    pub slots: Vec<String>,
    text: String,
}

impl PromptTemplate {
    pub fn new(template_id: &str, text: &str) -> Self {
        let mut slots = Vec::new();
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) => {
                    let name = &after[..close];
                    if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && !slots.iter().any(|s| s == name) {
                        slots.push(name.to_string());
                    }
                    rest = &after[close + 1..];
                }
                None => break,
            }
        }
        Self {
            template_id: template_id.to_string(),
            slots,
            text: text.to_string(),
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Substitutes every declared slot. Fails if any slot has no value.
    pub fn render(&self, values: &SlotValues) -> Result<String, OracleError> {
        let mut out = self.text.clone();
        for slot in &self.slots {
            let value = values.get(slot).ok_or_else(|| OracleError::MissingSlot {
                template_id: self.template_id.clone(),
                slot: slot.clone(),
            })?;
            out = out.replace(&format!("{{{slot}}}"), value);
        }
        Ok(out)
    }
}

/// Prompt templates keyed by id.
#[derive(Debug, Clone, Default)]
pub struct TemplateCatalog {
    templates: BTreeMap<String, PromptTemplate>,
}

const BUILTIN: &[(&str, &str)] = &[
    ("analogize_biome", "The world is described as: {world}. Name the region of this world that plays the role of a generic {biome}. Answer with a short name only."),
    ("analogize_asset", "The world is described as: {world}. Describe the object in this world that serves the same purpose as a generic \"{item}\". Answer with one short noun phrase."),
    ("building_description", "The world is described as: {world}. Describe, in one short phrase with a large roof, the building that serves as a {function}."),
    ("estimate_size", "Estimate the footprint of \"{description}\" (a {function_tag}) in 1-metre tiles. Answer with a single number."),
    ("workplace_roles", "The world is described as: {world}. List the jobs its villagers hold. Answer as JSON {\"roles\": [..]}."),
    ("family_lore", "The world is described as: {world}. Invent family number {family_index} with {size} members whose roles are {roles}. Answer as JSON {\"surname\", \"background\", \"members\": [{\"name\", \"lore\", \"traits\": [..]}]}."),
    ("seed_memory", "{npc} and {other} are connected through {context} ({relation}). Write one sentence {npc} remembers about {other}, mentioning {context}."),
    ("daily_routine", "{name} ({traits}) lives at {home} and works at {workplace}. Lore: {lore}. Accessible objects: {objects}. Plan day {day} from minute {wake} to minute {sleep} as JSON {\"entries\": [{\"start\", \"end\", \"location\", \"object\", \"activity\"}]}."),
    ("react_decision", "{name} ({traits}) is busy with \"{activity}\" and notices: {observation}. Should they continue, deviate or converse?"),
    ("deviation_action", "{name} decided to respond to: {observation}. In a few words, what do they do?"),
    ("conversation_outline", "Participants: {participants}. Context: {context}. What they remember: {memories}. Recent lines: {transcript}. Outline where this conversation goes next."),
    ("conversation_utterance", "{speaker} ({traits}) is talking with {participants}. Outline: {outline}. {speaker} remembers: {memories}. They notice: {observations}. Recent lines: {transcript}. Write {speaker}'s next line."),
    ("detect_proposal", "Does this line propose a joint plan? \"{speaker}: {utterance}\" Answer yes or no."),
    ("extract_plan", "\"{speaker}: {utterance}\" proposes a plan to {participants}. Known locations: {locations}. Answer as JSON {\"activity\", \"location\", \"start\", \"end\"}."),
    ("plan_decision", "{npc} ({traits}) remembers: {memories}. {proposer} proposes: {proposal}. Does {npc} accept or reject?"),
    ("conversation_continue", "Conversation so far ({turn_count} turns): {transcript}. Should it continue or end?"),
    ("conversation_summary", "{npc} ({traits}) talked with {others} about {context}: {transcript}. Summarise it in one sentence from {npc}'s point of view."),
    ("reflection_insight", "{name} ({traits}) looks back on day {day}: {day_log}. Write one high-level insight in the first person."),
    ("rate_importance", "On a scale from 0 to 10, how significant is this to {name}: \"{text}\"? Answer with a number."),
    ("trait_evolution", "{name} has traits {traits} and the insight \"{insight}\". Answer as JSON {\"add\": trait or null, \"remove\": trait or null}, changing at most one trait."),
    ("reconsider_plan", "{name} ({traits}) has the insight \"{insight}\" and plans to {plan}. Attend or withdraw?"),
    ("parse_command", "Acting as the subconscious of {target}, break this instruction into steps: \"{text}\". Known people: {npcs}. Known places: {locations}. Answer as JSON {\"steps\": [..]}."),
    ("command_consistency", "{target} ({traits}). Lore: {lore}. Would this instruction contradict who they are: \"{text}\"? Answer consistent or contradicts."),
    ("interview_answer", "You are {name} ({traits}). {lore} You remember: {memories}. Conversation so far: {transcript}. Answer the question: {question}"),
];

impl TemplateCatalog {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut catalog = Self::default();
        for (id, text) in BUILTIN {
            catalog.register(PromptTemplate::new(id, text));
        }
        catalog
    }

    /// Adds or replaces a template.
    pub fn register(&mut self, template: PromptTemplate) {
        self.templates.insert(template.template_id.clone(), template);
    }

    pub fn get(&self, template_id: &str) -> Option<&PromptTemplate> {
        self.templates.get(template_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::slots;

    #[test]
    fn slots_parsed_in_order_without_json_braces() {
        let t = TemplateCatalog::builtin();
        let lore = t.get("family_lore").unwrap();
        assert_eq!(lore.slots, vec!["world", "family_index", "size", "roles"]);
    }

    #[test]
    fn render_is_deterministic_and_complete() {
        let t = PromptTemplate::new("greet", "Hello {name}, welcome to {place}.");
        let values = slots([("name", "Ann"), ("place", "the mill")]);
        assert_eq!(t.render(&values).unwrap(), "Hello Ann, welcome to the mill.");
        assert_eq!(t.render(&values).unwrap(), t.render(&values).unwrap());
        assert!(matches!(
            t.render(&slots([("name", "Ann")])),
            Err(OracleError::MissingSlot { .. })
        ));
    }

    #[test]
    fn builtin_ids_unique() {
        let catalog = TemplateCatalog::builtin();
        assert_eq!(catalog.len(), BUILTIN.len());
    }
}
