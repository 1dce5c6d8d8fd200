//! Bundled sample data: a small geolocation database, an adjacency table and
//! a 3950x2100 base map with a 30° graticule.
//!
//! The prefix table covers the countries used by the examples and tests. It
//! is illustrative, not an authoritative allocation registry.

use crate::geodb::GeoDb;
use crate::pathmap::Adjacency;
use crate::render::BaseMap;

pub const PREFIXES_CSV: &str = include_str!("../data/geo_prefixes.csv");
pub const POINTS_CSV: &str = include_str!("../data/geo_points.csv");
pub const ADJACENCY_CSV: &str = include_str!("../data/adjacency.csv");
pub const WORLD_MAP_PNG: &[u8] = include_bytes!("../data/world_map.png");

pub fn geodb() -> GeoDb {
    GeoDb::from_tables(PREFIXES_CSV, POINTS_CSV).expect("bundled tables are valid")
}

pub fn adjacency() -> Adjacency {
    Adjacency::parse(ADJACENCY_CSV).expect("bundled adjacency is valid")
}

pub fn base_map() -> BaseMap {
    BaseMap::from_png(WORLD_MAP_PNG.to_vec()).expect("bundled map is a valid PNG")
}
