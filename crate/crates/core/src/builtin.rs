//! The default transaction model, ontology, template library and the
//! restaurant-to-hotel adaptation mapping, compiled into the library.

use crate::adapt::{load_mapping, DomainMapping};
use crate::grammar::{parse_templates, Grammar, TemplateSource};
use crate::model::{load_model, DialogueModel};
use crate::ontology::{load_ontology, Ontology};

pub const MODEL_JSON: &str = include_str!("../data/transaction_model.json");
pub const ONTOLOGY_JSON: &str = include_str!("../data/ontology.json");
pub const RESTAURANT_TO_HOTEL_JSON: &str = include_str!("../data/restaurant_to_hotel.json");

const TEMPLATES: [(&str, &str); 3] = [
    ("common.tmpl", include_str!("../data/templates/common.tmpl")),
    ("hotel.tmpl", include_str!("../data/templates/hotel.tmpl")),
    ("restaurant.tmpl", include_str!("../data/templates/restaurant.tmpl")),
];

pub fn model() -> DialogueModel {
    load_model(MODEL_JSON).expect("builtin model is valid")
}

pub fn ontology() -> Ontology {
    load_ontology(ONTOLOGY_JSON).expect("builtin ontology is valid")
}

/// Template files in load order (sorted by name, as a directory load would be).
pub fn template_sources() -> Vec<TemplateSource> {
    TEMPLATES.iter().map(|(n, t)| TemplateSource::new(*n, *t)).collect()
}

pub fn grammar() -> Grammar {
    parse_templates(&template_sources()).expect("builtin templates are valid")
}

pub fn restaurant_to_hotel() -> DomainMapping {
    load_mapping(RESTAURANT_TO_HOTEL_JSON).expect("builtin mapping is valid")
}
