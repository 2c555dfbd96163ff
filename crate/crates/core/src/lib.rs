//! Mobility-of-care analytics over transit smart-card origin/destination data.
//!
//! The crate is organised as a batch pipeline:
//!
//! * [`ingest`] parses GTFS, POI, stage and registration files into immutable snapshots.
//! * [`gender`] normalizes first names and infers a binary gender label with a confidence cutoff.
//! * [`netgeo`] builds route-direction stop patterns and matches POIs to their nearest serving stops.
//! * [`cohort`] filters active cards and draws the gender-balanced sample.
//! * [`mocgeo`] tags trip-chaining / alighting stages at POI stops and computes parity series.
//! * [`accompany`] detects recurring accompaniment of student, senior and disabled fare products.
//! * [`stats`] holds the chi-square, Welch and random-intercept mixed model routines.
//! * [`config`] reads flat `key = value` configuration files.
//! * [`synth`] generates a synthetic city together with a ground-truth manifest.
//! * [`pipeline`] wires the stages together and writes the CSV reports.

pub mod accompany;
pub mod cohort;
pub mod config;
pub mod gender;
pub mod ingest;
pub mod mocgeo;
pub mod netgeo;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub(crate) mod csvutil;
