//! A small synthetic rule file and driving corpus for demos and tests.
//!
//! Frames are flat-shaded PNGs whose scene facts (road type, time, weather,
//! ego telemetry) travel in PNG text tags, which the mock backends read.

use std::path::Path;

use automt_core::scene::Telemetry;

use crate::fsutil::write_atomic;
use crate::image::Image;
use crate::scene::{frame_name, TELEMETRY_FILE};

pub const FRAME_WIDTH: u32 = 64;
pub const FRAME_HEIGHT: u32 = 48;
pub const FRAMES_PER_CASE: usize = 10;

/// German-style traffic rules, one per line.
pub const RULES_DE: [&str; 38] = [
    "At a red light, stop before the stop line at the intersection.",
    "Yield to pedestrians who are crossing at a crosswalk.",
    "Where a stop sign is posted, come to a complete stop and yield.",
    "Slow down when a school zone sign announces children nearby.",
    "Reduce speed in rain so the braking distance stays short enough.",
    "In fog, drive slowly and keep a larger distance.",
    "On a snowy road surface, reduce speed.",
    "At night, adapt the speed to the visible distance and slow down.",
    "When the light turns green, proceed through the intersection.",
    "At a roundabout, yield to every vehicle already circulating.",
    "Before a railway crossing, stop when a tram approaches.",
    "On the motorway, maintain speed when a vehicle travels in the next lane.",
    "In a residential street, slow down for a cyclist riding ahead.",
    "In a pedestrian zone, move at walking speed and give way to pedestrians.",
    "In a tunnel, keep a steady speed behind the vehicle ahead.",
    "In a construction zone, slow down where a traffic cone narrows the lane.",
    "Where a road barrier closes the lane, slow down and change lanes with care.",
    "Follow the right turn arrow sign and turn right at the intersection.",
    "Follow the left turn arrow sign and turn left at the intersection.",
    "A no entry sign forbids driving straight on, so turn right at the junction.",
    "A yellow light at the intersection means prepare to stop.",
    "Make way for an emergency vehicle with flashing lights by slowing down.",
    "Stop behind a school bus that shows flashing lights.",
    "After a collision ahead, slow down and pass with caution.",
    "When an animal crosses the field path, brake and slow down.",
    "In a dust storm, reduce speed and switch on the headlights.",
    "In heavy snow, drive slowly and increase the following distance.",
    "On a field path covered in mud, reduce speed.",
    "A speed limit sign sets the maximum speed; slow down to the posted limit.",
    "Vehicles on a road marked by a priority road sign may proceed through the intersection.",
    "At crosswalk markings, let people cross first.",
    "A pedestrian crossing sign warns of people crossing; be careful.",
    "Cyclists on a residential street may pass; maintain a safe lateral gap.",
    "A guardrail along the motorway needs no reaction; continue driving.",
    "When the green light shows at the crosswalk, go ahead.",
    "At the intersection, give way to an approaching tram.",
    "At the stop line of a roundabout, wait until crossing traffic has passed.",
    "On a roundabout in the rain, keep a safe distance and brake early.",
];

pub fn rules_text() -> String {
    let mut s = String::new();
    for r in RULES_DE {
        s.push_str(r);
        s.push('\n');
    }
    s
}

pub fn write_rules(path: &Path) -> std::io::Result<()> {
    write_atomic(path, rules_text().as_bytes())
}

struct CaseSpec {
    road: &'static str,
    time: &'static str,
    weather: &'static str,
    objects: &'static str,
    speed: f64,
    steering: f64,
}

const SPECS: [CaseSpec; 12] = [
    CaseSpec { road: "intersection", time: "Afternoon", weather: "Clear", objects: "Cars, buildings, pedestrians, bicycles, trees", speed: 2.958, steering: -0.02 },
    CaseSpec { road: "crosswalk", time: "Morning", weather: "Cloudy", objects: "Pedestrians, parked cars", speed: 6.5, steering: 0.0 },
    CaseSpec { road: "field path", time: "Evening", weather: "Clear", objects: "Trees, fields", speed: 8.2, steering: 0.05 },
    CaseSpec { road: "roundabout", time: "Afternoon", weather: "Rain", objects: "Cars, signs", speed: 5.1, steering: 0.12 },
    CaseSpec { road: "intersection", time: "Night", weather: "Clear", objects: "Traffic lights, cars", speed: 0.0, steering: 0.0 },
    CaseSpec { road: "motorway", time: "Morning", weather: "Clear", objects: "Trucks, cars, guardrails", speed: 27.0, steering: 0.0 },
    CaseSpec { road: "residential street", time: "Afternoon", weather: "Cloudy", objects: "Parked cars, cyclists, houses", speed: 8.3, steering: -0.04 },
    CaseSpec { road: "tunnel", time: "Afternoon", weather: "Clear", objects: "Cars, tunnel lights", speed: 16.7, steering: 0.01 },
    CaseSpec { road: "construction zone", time: "Morning", weather: "Fog", objects: "Traffic cones, workers", speed: 7.0, steering: 0.02 },
    CaseSpec { road: "railway crossing", time: "Evening", weather: "Clear", objects: "Barriers, signals", speed: 0.5, steering: 0.0 },
    CaseSpec { road: "crosswalk", time: "Afternoon", weather: "Clear", objects: "Pedestrians, buses", speed: 4.4, steering: -0.01 },
    CaseSpec { road: "intersection", time: "Evening", weather: "Rain", objects: "Cars, cyclists, buildings", speed: 9.6, steering: 0.08 },
];

pub fn case_id(i: usize) -> String {
    format!("case-{i:03}")
}

fn road_color(road: &str) -> [u8; 3] {
    let h = automt_core::hashing::fnv1a64(road.as_bytes());
    [80 + (h & 0x3f) as u8, 80 + ((h >> 8) & 0x3f) as u8, 80 + ((h >> 16) & 0x3f) as u8]
}

fn sky_color(time: &str, weather: &str) -> [u8; 3] {
    let base = match time {
        "Morning" => [150, 190, 230],
        "Afternoon" => [120, 170, 240],
        "Evening" => [200, 140, 90],
        _ => [20, 20, 50],
    };
    match weather {
        "Clear" => base,
        _ => [base[0] / 2 + 60, base[1] / 2 + 60, base[2] / 2 + 60],
    }
}

/// Frames and telemetry of synthetic case `i`. Cases cycle through twelve
/// scene templates; telemetry varies a little per frame and per cycle.
pub fn synth_case(i: usize) -> (String, Vec<Image>, Telemetry) {
    let spec = &SPECS[i % SPECS.len()];
    let id = case_id(i);
    let cycle = (i / SPECS.len()) as f64;
    let mut frames = Vec::with_capacity(FRAMES_PER_CASE);
    let mut speed_mps = Vec::with_capacity(FRAMES_PER_CASE);
    let mut steering_rad = Vec::with_capacity(FRAMES_PER_CASE);
    for f in 0..FRAMES_PER_CASE {
        let wobble = if spec.speed == 0.0 { 0.0 } else { 0.01 * ((f % 3) as f64 - 1.0) + 0.1 * cycle };
        let speed = spec.speed + wobble;
        let steering = spec.steering;
        let mut img = Image::filled(FRAME_WIDTH, FRAME_HEIGHT, sky_color(spec.time, spec.weather));
        img.fill_rect(0, FRAME_HEIGHT / 2, FRAME_WIDTH, FRAME_HEIGHT / 2, road_color(spec.road));
        // A lead vehicle that drifts across frames so frames differ.
        img.fill_rect(8 + (f as u32 * 2) % 24, FRAME_HEIGHT / 2 + 4, 10, 6, [30 + (i % 7) as u8 * 20, 30, 30]);
        let img = img
            .with_tag("case", id.clone())
            .with_tag("road_type", spec.road)
            .with_tag("time", spec.time)
            .with_tag("weather", spec.weather)
            .with_tag("objects", spec.objects)
            .with_tag("speed", format!("{speed:?}"))
            .with_tag("steering", format!("{steering:?}"));
        frames.push(img);
        speed_mps.push(speed);
        steering_rad.push(steering);
    }
    (id, frames, Telemetry { speed_mps, steering_rad })
}

/// Writes `n` cases under `root`, one directory each.
pub fn write_corpus(root: &Path, n: usize) -> std::io::Result<Vec<String>> {
    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        let (id, frames, telemetry) = synth_case(i);
        let dir = root.join(&id);
        for (f, img) in frames.iter().enumerate() {
            img.save(&dir.join(frame_name(f))).map_err(std::io::Error::other)?;
        }
        let json = serde_json::to_string_pretty(&telemetry).map_err(std::io::Error::other)?;
        write_atomic(&dir.join(TELEMETRY_FILE), format!("{json}\n").as_bytes())?;
        ids.push(id);
    }
    Ok(ids)
}
