//! Phrase vocabulary shared by the world generator and the default
//! extractor lexicon.

use crate::data::LandmarkCategory;
use crate::extract::Lexicon;

/// Head nouns with their category and plurality. Multiword heads are fine;
/// the extractor matches them longest-first.
pub const HEAD_NOUNS: &[(&str, LandmarkCategory, bool)] = &[
    ("traffic light", LandmarkCategory::TrafficLight, false),
    ("stoplight", LandmarkCategory::TrafficLight, false),
    ("pedestrian signal", LandmarkCategory::TrafficLight, false),
    ("crossing beacon", LandmarkCategory::TrafficLight, false),
    ("signpost", LandmarkCategory::Signpost, false),
    ("street sign", LandmarkCategory::Signpost, false),
    ("billboard", LandmarkCategory::Signpost, false),
    ("parking sign", LandmarkCategory::Signpost, false),
    ("wayfinding panel", LandmarkCategory::Signpost, false),
    ("mailbox", LandmarkCategory::Mailbox, false),
    ("letterbox", LandmarkCategory::Mailbox, false),
    ("parcel locker", LandmarkCategory::Mailbox, false),
    ("bus stop", LandmarkCategory::BusStop, false),
    ("bus shelter", LandmarkCategory::BusStop, false),
    ("tram platform", LandmarkCategory::BusStop, false),
    ("taxi stand", LandmarkCategory::BusStop, false),
    ("storefront", LandmarkCategory::Building, false),
    ("brownstone", LandmarkCategory::Building, false),
    ("warehouse", LandmarkCategory::Building, false),
    ("chapel", LandmarkCategory::Building, false),
    ("bakery", LandmarkCategory::Building, false),
    ("bodega", LandmarkCategory::Building, false),
    ("firehouse", LandmarkCategory::Building, false),
    ("rowhouse", LandmarkCategory::Building, false),
    ("fountain", LandmarkCategory::Other, false),
    ("bench", LandmarkCategory::Other, false),
    ("statue", LandmarkCategory::Other, false),
    ("fire hydrant", LandmarkCategory::Other, false),
    ("phone booth", LandmarkCategory::Other, false),
    ("newsstand", LandmarkCategory::Other, false),
    ("bike rack", LandmarkCategory::Other, false),
    ("flower cart", LandmarkCategory::Other, false),
    ("lamppost", LandmarkCategory::Other, false),
    ("planter", LandmarkCategory::Other, false),
    ("kiosk", LandmarkCategory::Other, false),
    ("awning", LandmarkCategory::Other, false),
    ("garbage cans", LandmarkCategory::Other, true),
    ("bicycles", LandmarkCategory::Other, true),
    ("traffic cones", LandmarkCategory::Other, true),
    ("flags", LandmarkCategory::Other, true),
    ("parked scooters", LandmarkCategory::Other, true),
    ("potted trees", LandmarkCategory::Other, true),
];

pub const ADJECTIVES: &[&str] = &[
    "green", "red", "blue", "yellow", "white", "black", "orange", "purple", "rusty", "shiny",
    "faded", "weathered", "broken", "crooked", "tall", "squat", "narrow", "wide", "ornate",
    "plain", "striped", "dotted", "wooden", "metal", "brick", "stone", "glass", "painted",
    "dusty", "gleaming", "tilted", "boarded", "mossy", "chipped", "polished", "graffitied",
    "pale", "dark", "bright", "ancient",
];

/// Determiners for singular heads and count words for plural heads.
pub const SINGULAR_DETERMINERS: &[&str] = &["the", "a"];
pub const PLURAL_COUNTS: &[&str] = &["two", "three", "four", "several"];

/// The default extractor lexicon: every head noun above.
pub fn standard_lexicon() -> Lexicon {
    Lexicon::new(HEAD_NOUNS.iter().map(|(noun, _, _)| *noun))
}

/// Category of a phrase, looked up by its head-noun suffix.
pub fn category_of_phrase(phrase: &str) -> LandmarkCategory {
    let lowered = phrase.to_lowercase();
    for (noun, category, _) in HEAD_NOUNS {
        if lowered.ends_with(noun) {
            return *category;
        }
    }
    LandmarkCategory::Other
}
