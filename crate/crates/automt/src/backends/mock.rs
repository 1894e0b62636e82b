//! In-process mock backends.
//!
//! A scenario answers every `/v1/*` request as a pure function of its seed,
//! its script and the request body. Scripted rules are tried first; without
//! a match the mock synthesizes a plausible answer from the prompt, the
//! image tags, or a seeded hash. A strict scenario refuses unmatched chat
//! prompts with [`REFUSAL`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use automt_core::canon::{canonicalize, indefinite_article};
use automt_core::hashing::{fnv1a64, mix64, normalize, unit_vector, Fnv64, Stream};
use automt_core::prompts::{
    quoted_after, quoted_block_after, MANIPULATION_HEADER, MANIPULATION_LINE, MATCH_HEADER, MR_LINE,
    ONTOLOGY_ADDS, ONTOLOGY_BEHAVIORS, ONTOLOGY_REPLACES, ONTOLOGY_ROAD_TYPES, RULE_LINE, RULE_PARSER_HEADER,
    SCENARIO_ALIGNMENT_HEADER, SCENE_HEADER, VALIDATION_HEADER,
};

use super::wire::*;
use crate::image::Image;

/// Reply of a strict mock to a prompt no rule matches.
pub const REFUSAL: &str = "[[MOCK:REFUSED]]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMode {
    /// One hash-seeded unit vector per text.
    #[default]
    Hash,
    /// Normalized sum of per-word hash vectors, so shared words raise cosine.
    Tokens,
}

/// Ordered pattern -> response script entry. The pattern is a substring of
/// the chat prompt, the embedded text, the edit instruction, or the keyframe
/// `edit` tag (video).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    pub pattern: String,
    pub response: String,
}

/// How a mock ADS reacts to an edited scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictMode {
    /// Predicts as on the unedited scene.
    Ignore,
    /// Multiplies speed.
    Scale(f64),
    /// Adds to steering, radians.
    Steer(f64),
}

impl PredictMode {
    /// `ignore`, `slow:<factor>`, `scale:<factor>`, `steer:<delta>` or `stop`.
    pub fn parse(s: &str) -> Option<PredictMode> {
        let s = s.trim();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a.trim())),
            None => (s, None),
        };
        let num = || arg.and_then(|a| a.parse::<f64>().ok()).filter(|v| v.is_finite());
        match (head, arg) {
            ("ignore", None) => Some(PredictMode::Ignore),
            ("stop", None) => Some(PredictMode::Scale(0.0)),
            ("slow" | "scale", Some(_)) => num().map(PredictMode::Scale),
            ("steer", Some(_)) => num().map(PredictMode::Steer),
            _ => None,
        }
    }

    fn apply(self, speed: f64, steering: f64) -> (f64, f64) {
        match self {
            PredictMode::Ignore => (speed, steering),
            PredictMode::Scale(f) => (speed * f, steering),
            PredictMode::Steer(d) => (speed, steering + d),
        }
    }
}

/// Script entry for predictors: cases whose id contains `case` react with `mode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRule {
    pub case: String,
    pub mode: String,
}

/// Tunable behavior of a scenario. Rates are probabilities in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockParams {
    /// Parser replies that are prose or use an off-ontology behavior.
    pub parser_noise: f64,
    /// Parser replies with a wildcard road type or an arbitrary manipulation.
    pub parser_drift: f64,
    /// Judge answers flipped to "no".
    pub judge_noise: f64,
    /// Edits that barely change the image.
    pub edit_miss_rate: f64,
    /// Videos whose road type drifts away from the keyframe.
    pub video_drift_rate: f64,
    /// Match replies naming an index outside the candidates.
    pub match_miss_rate: f64,
    pub embed_dim: usize,
    pub embed_mode: EmbedMode,
    /// Largest relative speed bias of a mock ADS.
    pub ads_bias: f64,
    /// Chance that an unscripted mock ADS reacts to an edit.
    pub comply_rate: f64,
    /// Amplitude of per-frame prediction noise, m/s.
    pub frame_noise: f64,
}

impl Default for MockParams {
    fn default() -> Self {
        MockParams {
            parser_noise: 0.0,
            parser_drift: 0.0,
            judge_noise: 0.0,
            edit_miss_rate: 0.0,
            video_drift_rate: 0.0,
            match_miss_rate: 0.0,
            embed_dim: 64,
            embed_mode: EmbedMode::Hash,
            ads_bias: 0.1,
            comply_rate: 0.8,
            frame_noise: 0.0,
        }
    }
}

/// Scenario as written in a config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSpec {
    /// Overrides the seed derived from the run seed and the scenario id.
    pub seed: Option<u64>,
    pub strict: bool,
    pub rules: Vec<MockRule>,
    pub predict: Vec<PredictRule>,
    #[serde(flatten)]
    pub params: MockParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockScenario {
    pub id: String,
    pub seed: u64,
    pub strict: bool,
    pub rules: Vec<MockRule>,
    pub predict: Vec<(String, PredictMode)>,
    pub params: MockParams,
}

/// Seed of scenario `id` under run seed `run_seed`.
pub fn scenario_seed(run_seed: u64, id: &str) -> u64 {
    mix64(run_seed ^ fnv1a64(id.as_bytes()))
}

impl MockScenario {
    pub fn new(id: &str, seed: u64) -> MockScenario {
        MockScenario {
            id: id.to_string(),
            seed,
            strict: false,
            rules: Vec::new(),
            predict: Vec::new(),
            params: MockParams::default(),
        }
    }

    pub fn from_spec(id: &str, run_seed: u64, spec: &MockSpec) -> Result<MockScenario, String> {
        let mut predict = Vec::with_capacity(spec.predict.len());
        for rule in &spec.predict {
            let mode = PredictMode::parse(&rule.mode)
                .ok_or_else(|| format!("mock {id}: bad predict mode {:?}", rule.mode))?;
            predict.push((rule.case.clone(), mode));
        }
        let p = &spec.params;
        for (name, rate) in [
            ("parser_noise", p.parser_noise),
            ("parser_drift", p.parser_drift),
            ("judge_noise", p.judge_noise),
            ("edit_miss_rate", p.edit_miss_rate),
            ("video_drift_rate", p.video_drift_rate),
            ("match_miss_rate", p.match_miss_rate),
            ("comply_rate", p.comply_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(format!("mock {id}: {name} = {rate} is outside [0, 1]"));
            }
        }
        if p.embed_dim == 0 {
            return Err(format!("mock {id}: embed_dim must be positive"));
        }
        Ok(MockScenario {
            id: id.to_string(),
            seed: spec.seed.unwrap_or_else(|| scenario_seed(run_seed, id)),
            strict: spec.strict,
            rules: spec.rules.clone(),
            predict,
            params: spec.params.clone(),
        })
    }

    fn scripted(&self, haystack: &str) -> Option<&str> {
        self.rules.iter().find(|r| haystack.contains(&r.pattern)).map(|r| r.response.as_str())
    }

    fn draw(&self, tag: &str, key: &[u8]) -> f64 {
        keyed_draw(self.seed, tag, key)
    }

    /// Answers one request. The body is the JSON request; the result is the
    /// JSON response or a protocol error.
    pub fn handle(&self, path: &str, body: &[u8]) -> Result<Vec<u8>, ErrorBody> {
        fn parse<'a, T: Deserialize<'a>>(body: &'a [u8]) -> Result<T, ErrorBody> {
            serde_json::from_slice(body).map_err(|e| ErrorBody::new(codes::BAD_REQUEST, e.to_string()))
        }
        fn out<T: Serialize>(value: &T) -> Result<Vec<u8>, ErrorBody> {
            Ok(serde_json::to_vec(value).expect("response serializes"))
        }
        match path {
            PATH_CHAT => out(&self.chat(&parse(body)?)?),
            PATH_EMBED => out(&self.embed(&parse(body)?)?),
            PATH_EDIT => out(&self.edit(&parse(body)?)?),
            PATH_VIDEO => out(&self.video(&parse(body)?)?),
            PATH_PREDICT => out(&self.predict(&parse(body)?)?),
            other => Err(ErrorBody::new(codes::NOT_FOUND, format!("no route {other}"))),
        }
    }

    pub fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ErrorBody> {
        if let Some(text) = self.scripted(&req.prompt) {
            return Ok(ChatResponse { text: text.to_string() });
        }
        if self.strict {
            return Ok(ChatResponse { text: REFUSAL.to_string() });
        }
        let images = decode_all(req.images.as_deref().unwrap_or(&[]))?;
        let p = req.prompt.as_str();
        let text = if p.starts_with(RULE_PARSER_HEADER) {
            self.parse_rule(p)
        } else if p.starts_with(VALIDATION_HEADER) {
            self.judge_mr(p)
        } else if p.starts_with(SCENE_HEADER) {
            self.describe_scene(&images)
        } else if p.starts_with(MATCH_HEADER) {
            self.pick_match(p)
        } else if p.starts_with(SCENARIO_ALIGNMENT_HEADER) {
            self.judge_scenario(p, &images)?
        } else if p.starts_with(MANIPULATION_HEADER) {
            self.judge_manipulation(p, &images)?
        } else {
            REFUSAL.to_string()
        };
        Ok(ChatResponse { text })
    }

    // ---- rule parser -------------------------------------------------------

    fn parse_rule(&self, prompt: &str) -> String {
        let rule = quoted_after(prompt, RULE_LINE).unwrap_or_default();
        let lower = canonicalize(rule);
        let roads = ontology_list(prompt, ONTOLOGY_ROAD_TYPES);
        let adds = ontology_list(prompt, ONTOLOGY_ADDS);
        let replaces = ontology_list(prompt, ONTOLOGY_REPLACES);
        let behaviors = ontology_list(prompt, ONTOLOGY_BEHAVIORS);
        let system = prompt
            .lines()
            .find_map(|l| l.strip_prefix("When ").and_then(|r| r.split_whitespace().next()))
            .filter(|s| !s.starts_with('<'))
            .unwrap_or(automt_core::DEFAULT_SYSTEM_NAME);
        let key = rule.as_bytes();

        let noise = self.draw("parser-noise", key);
        if noise < self.params.parser_noise / 2.0 {
            return format!("The rule \"{rule}\" mostly concerns driver attention, so no single relation fits it.");
        }

        let mut road = longest_mention(&lower, roads.iter().filter(|r| r.as_str() != ANY_ROADS))
            .unwrap_or_else(|| ANY_ROADS.to_string());
        if self.draw("parser-drift-road", key) < self.params.parser_drift {
            road = ANY_ROADS.to_string();
        }

        let all_targets: Vec<&String> = adds.iter().chain(&replaces).collect();
        let mut target = mention_with_synonyms(&lower, &all_targets);
        if (target.is_none() || self.draw("parser-drift-target", key) < self.params.parser_drift)
            && !all_targets.is_empty()
        {
            let mut stream = Stream::new(self.seed, fnv1a64(key) ^ 0x7461_7267);
            target = Some(all_targets[stream.next_index(all_targets.len())].clone());
        }
        let target = target.unwrap_or_else(|| "pedestrian".to_string());
        let adds_verb = !replaces.contains(&target);

        let mut behavior = infer_behavior(&lower)
            .filter(|b| behaviors.is_empty() || behaviors.iter().any(|x| x == b))
            .map(str::to_string)
            .unwrap_or_else(|| {
                let pool: Vec<&str> = if behaviors.is_empty() {
                    automt_core::ontology::DEFAULT_BEHAVIORS.to_vec()
                } else {
                    behaviors.iter().map(String::as_str).collect()
                };
                let mut stream = Stream::new(self.seed, fnv1a64(key) ^ 0x6265_6876);
                pool[stream.next_index(pool.len())].to_string()
            });
        if noise < self.params.parser_noise {
            behavior = "accelerate".to_string();
        }

        let road_phrase =
            if road == ANY_ROADS { road.clone() } else { format!("{} {road}", indefinite_article(&road)) };
        let manipulation = if adds_verb {
            format!("adds {} {target} {}", indefinite_article(&target), placement_suffix(&target))
        } else {
            format!("replaces {}", replace_phrase(&target))
        };
        format!(
            "Step 1: the road type is {road}.\nStep 2: the manipulation concerns {target}.\nStep 3: the verb is {verb}.\nStep 4: the expected behavior is {behavior}.\nGiven the ego-vehicle approaches to {road_phrase}\nWhen {system} {manipulation}\nThen ego-vehicle should {behavior}",
            verb = if adds_verb { "adds" } else { "replaces" },
        )
    }

    // ---- self-check judge --------------------------------------------------

    fn judge_mr(&self, prompt: &str) -> String {
        let rule = canonicalize(quoted_after(prompt, RULE_LINE).unwrap_or_default());
        let mr = quoted_block_after(prompt, MR_LINE).unwrap_or_default();
        let (road, phrase, behavior) = loose_mr_fields(mr);
        let stated = infer_behavior(&rule);
        let road_ok = road == ANY_ROADS || rule.contains(&road);
        let manipulation_ok = content_words(&phrase).any(|w| rule.contains(w) || synonym_hit(&rule, w));
        let behavior_ok = stated.is_none_or(|b| b == behavior);
        let consistent = !contradicts(&phrase, &behavior) && !behavior.is_empty() && !phrase.is_empty();
        let mut answers = [road_ok && manipulation_ok && behavior_ok, behavior_ok, consistent];
        for (i, a) in answers.iter_mut().enumerate() {
            if self.draw(&format!("judge-{i}"), prompt.as_bytes()) < self.params.judge_noise {
                *a = false;
            }
        }
        let words: Vec<&str> = answers.iter().map(|&a| if a { "\"yes\"" } else { "\"no\"" }).collect();
        format!("[{}]", words.join(", "))
    }

    // ---- vision ------------------------------------------------------------

    fn describe_scene(&self, images: &[Image]) -> String {
        let key: Vec<u8> = images.iter().flat_map(|i| i.pixels.iter().copied().take(256)).collect();
        let mut stream = Stream::new(self.seed, fnv1a64(&key));
        let mut pick = |tag: &str, pool: &[&str]| -> String {
            let fallback = pool[stream.next_index(pool.len())].to_string();
            images.get(images.len() / 2).and_then(|i| i.tag(tag)).map(str::to_string).unwrap_or(fallback)
        };
        let time = pick("time", &["Morning", "Afternoon", "Evening", "Night"]);
        let weather = pick("weather", &["Clear", "Cloudy", "Rain", "Fog"]);
        let road = pick("road_type", &["intersection", "crosswalk", "field path"]);
        let objects = pick("objects", &["cars, trees", "pedestrians, buildings", "cyclists, parked cars"]);
        format!("time: {time}, weather: {weather}, road type: {road}, objects: {objects}")
    }

    fn pick_match(&self, prompt: &str) -> String {
        if self.draw("match-miss", prompt.as_bytes()) < self.params.match_miss_rate {
            return "Index: 999999".to_string();
        }
        let road = prompt
            .lines()
            .flat_map(|l| l.split("; "))
            .find_map(|part| part.trim().strip_prefix("User: ").unwrap_or(part.trim()).strip_prefix("Road type: "))
            .map(canonicalize)
            .unwrap_or_default();
        let mut best: Option<(bool, u64, u32)> = None;
        for line in prompt.lines().filter(|l| l.starts_with("Index: ")) {
            let fields: BTreeMap<&str, &str> =
                line.split(" | ").filter_map(|f| f.split_once(": ")).map(|(k, v)| (k.trim(), v.trim())).collect();
            let (Some(index), Some(count)) = (
                fields.get("Index").and_then(|v| v.parse::<u32>().ok()),
                fields.get("Execution Count").and_then(|v| v.parse::<u64>().ok()),
            ) else {
                continue;
            };
            let mr_road = fields.get("Road Type").map(|r| canonicalize(r)).unwrap_or_default();
            let specific = mr_road == road;
            let cand = (!specific, count, index);
            let better = match best {
                None => true,
                Some((s, c, _)) => (cand.0, cand.1) < (s, c),
            };
            if better {
                best = Some(cand);
            }
        }
        match best {
            Some((_, _, index)) => format!("Index: {index}"),
            None => "No retrieved MR fits this test case.".to_string(),
        }
    }

    fn judge_scenario(&self, prompt: &str, images: &[Image]) -> Result<String, ErrorBody> {
        let [a, b] = images else {
            return Err(ErrorBody::new(codes::BAD_REQUEST, "scenario alignment needs exactly two images"));
        };
        let same = match (a.tag("road_type"), b.tag("road_type")) {
            (Some(x), Some(y)) => canonicalize(x) == canonicalize(y),
            _ => bottom_half_equal(a, b),
        };
        let flipped = self.draw("judge-scenario", prompt.as_bytes()) < self.params.judge_noise;
        Ok(yes_no(same && !flipped))
    }

    fn judge_manipulation(&self, prompt: &str, images: &[Image]) -> Result<String, ErrorBody> {
        let [original, edited] = images else {
            return Err(ErrorBody::new(codes::BAD_REQUEST, "manipulation verification needs exactly two images"));
        };
        let e = quoted_after(prompt, MANIPULATION_LINE).unwrap_or_default();
        let adds = prompt.lines().any(|l| l.trim() == "Verb: adds");
        let aligned = if adds {
            [StampPlacement::OnRoad, StampPlacement::Roadside]
                .iter()
                .any(|&p| stamp_present(original, edited, e, p))
        } else {
            tint_matches(original, edited, e)
        };
        let flipped = self.draw("judge-manipulation", prompt.as_bytes()) < self.params.judge_noise;
        Ok(yes_no(aligned && !flipped))
    }

    // ---- embed ---------------------------------------------------------------

    pub fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, ErrorBody> {
        if req.texts.is_empty() {
            return Err(ErrorBody::new(codes::BAD_REQUEST, "texts must be non-empty"));
        }
        let dim = self.params.embed_dim;
        let mut vectors = Vec::with_capacity(req.texts.len());
        for text in &req.texts {
            if let Some(script) = self.scripted(text) {
                let v: Result<Vec<f32>, _> = script.split(',').map(|x| x.trim().parse::<f32>()).collect();
                vectors.push(v.map_err(|e| ErrorBody::new(codes::BAD_REQUEST, format!("scripted vector: {e}")))?);
                continue;
            }
            vectors.push(match self.params.embed_mode {
                EmbedMode::Hash => unit_vector(self.seed, text.as_bytes(), dim),
                EmbedMode::Tokens => {
                    let mut sum = vec![0.0f64; dim];
                    for word in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
                        let w = word.to_lowercase();
                        for (s, x) in sum.iter_mut().zip(unit_vector(self.seed, w.as_bytes(), dim)) {
                            *s += f64::from(x);
                        }
                    }
                    normalize(&sum)
                }
            });
        }
        Ok(EmbedResponse { vectors })
    }

    // ---- edit ----------------------------------------------------------------

    pub fn edit(&self, req: &EditRequest) -> Result<EditResponse, ErrorBody> {
        let image = Image::from_base64(&req.image_b64)
            .map_err(|e| ErrorBody::new(codes::EDIT_REJECTED, format!("image does not decode: {e}")))?;
        if req.mode == EditMode::Add && req.mask_classes.as_ref().is_none_or(|m| m.is_empty()) {
            return Err(ErrorBody::new(codes::EDIT_REJECTED, "add mode requires mask_classes"));
        }
        if let Some(script) = self.scripted(&req.instruction) {
            if script == "reject" {
                return Err(ErrorBody::new(codes::EDIT_REJECTED, format!("scripted rejection of {:?}", req.instruction)));
            }
        }
        let mut key = image.pixels.clone();
        key.extend_from_slice(req.instruction.as_bytes());
        let missed = self.draw("edit-miss", &key) < self.params.edit_miss_rate;
        let mut edited = match req.mode {
            EditMode::Add => {
                let placement = StampPlacement::from_wire(req.placement.as_deref());
                if missed {
                    blend_rect(&image, stamp_rect(image.width, image.height, placement), stamp_color(&req.instruction))
                } else {
                    apply_stamp(&image, &req.instruction, placement)
                }
            }
            EditMode::Replace => {
                if missed {
                    let mut faint = image.clone();
                    if let Some(first) = faint.pixels.first_mut() {
                        *first ^= 1;
                    }
                    faint
                } else {
                    apply_tint(&image, &req.instruction)
                }
            }
        };
        edited.tags.insert("edit".into(), req.instruction.clone());
        edited.tags.insert("edit_mode".into(), if req.mode == EditMode::Add { "add" } else { "replace" }.into());
        Ok(EditResponse { image_b64: to_b64(&edited)? })
    }

    // ---- video ---------------------------------------------------------------

    pub fn video(&self, req: &VideoRequest) -> Result<VideoResponse, ErrorBody> {
        if req.frame_count == 0 {
            return Err(ErrorBody::new(codes::VIDEO_REJECTED, "frame_count must be at least 1"));
        }
        if req.speed_mps.len() != req.frame_count || req.steering_rad.len() != req.frame_count {
            return Err(ErrorBody::new(
                codes::VIDEO_REJECTED,
                format!(
                    "series lengths {} and {} differ from frame_count {}",
                    req.speed_mps.len(),
                    req.steering_rad.len(),
                    req.frame_count
                ),
            ));
        }
        let keyframe = Image::from_base64(&req.image_b64)
            .map_err(|e| ErrorBody::new(codes::VIDEO_REJECTED, format!("keyframe does not decode: {e}")))?;
        let mut count = req.frame_count;
        if let Some(script) = keyframe.tag("edit").and_then(|e| self.scripted(e)) {
            match script {
                "reject" => return Err(ErrorBody::new(codes::VIDEO_REJECTED, "scripted rejection")),
                "short" => count -= 1,
                _ => {}
            }
        }
        let mut base = keyframe.clone();
        if self.draw("video-drift", &keyframe.pixels) < self.params.video_drift_rate {
            let h = base.height;
            base.fill_rect(0, h - h / 4, base.width, h / 4, [128, 128, 128]);
            base.tags.insert("road_type".into(), "highway".into());
        }
        let mut frames = Vec::with_capacity(count);
        for i in 0..count {
            let mut frame = base.clone();
            watermark(&mut frame, i as u32);
            frame.tags.insert("frame".into(), i.to_string());
            frame.tags.insert("speed".into(), fmt_f64(req.speed_mps[i]));
            frame.tags.insert("steering".into(), fmt_f64(req.steering_rad[i]));
            frames.push(to_b64(&frame)?);
        }
        Ok(VideoResponse { frames })
    }

    // ---- predict -------------------------------------------------------------

    pub fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, ErrorBody> {
        if req.frames.is_empty() {
            return Err(ErrorBody::new(codes::BAD_REQUEST, "frames must be non-empty"));
        }
        let frames = decode_all(&req.frames)?;
        let bias = (2.0 * self.draw("ads-bias", b"") - 1.0) * self.params.ads_bias;
        let mut speed_mps = Vec::with_capacity(frames.len());
        let mut steering_rad = Vec::with_capacity(frames.len());
        for frame in &frames {
            let key = fnv1a64(&frame.pixels);
            let mut stream = Stream::new(self.seed, key);
            let base_speed = tag_f64(frame, "speed").unwrap_or_else(|| 5.0 + 10.0 * stream.next_f64());
            let base_steer = tag_f64(frame, "steering").unwrap_or_else(|| 0.1 * (stream.next_f64() - 0.5));
            let noise = (2.0 * stream.next_f64() - 1.0) * self.params.frame_noise;
            let mut speed = base_speed * (1.0 + bias) + noise;
            let mut steering = base_steer + 0.02 * bias;
            if let Some(edit) = frame.tag("edit") {
                (speed, steering) = self.reaction(frame.tag("case").unwrap_or(""), edit).apply(speed, steering);
            }
            speed_mps.push(speed);
            steering_rad.push(steering);
        }
        Ok(PredictResponse { speed_mps, steering_rad })
    }

    fn reaction(&self, case: &str, edit: &str) -> PredictMode {
        if let Some((_, mode)) = self.predict.iter().find(|(pattern, _)| case.contains(pattern.as_str())) {
            return *mode;
        }
        let mut key = case.as_bytes().to_vec();
        key.push(0);
        key.extend_from_slice(edit.as_bytes());
        if self.draw("comply", &key) < self.params.comply_rate {
            infer_reaction(edit)
        } else {
            PredictMode::Ignore
        }
    }
}

const ANY_ROADS: &str = automt_core::ontology::ANY_ROADS;

// ---- shared pixel contract of the edit mock and its verifier ---------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StampPlacement {
    OnRoad,
    Roadside,
}

impl StampPlacement {
    fn from_wire(placement: Option<&str>) -> StampPlacement {
        match placement {
            Some("roadside") => StampPlacement::Roadside,
            _ => StampPlacement::OnRoad,
        }
    }
}

/// `(x, y, width, height)` of the add-mode stamp.
pub fn stamp_rect(width: u32, height: u32, placement: StampPlacement) -> (u32, u32, u32, u32) {
    match placement {
        StampPlacement::OnRoad => (width * 3 / 8, height * 5 / 8, (width / 4).max(1), (height / 4).max(1)),
        StampPlacement::Roadside => (width * 3 / 4, height / 2, (width / 6).max(1), (height / 3).max(1)),
    }
}

/// Label color of an instruction: saturated, never gray.
pub fn stamp_color(instruction: &str) -> [u8; 3] {
    let h = mix64(fnv1a64(canonicalize(instruction).as_bytes()));
    let bytes = h.to_le_bytes();
    let mut c = [64 + bytes[0] % 192, 64 + bytes[1] % 192, 64 + bytes[2] % 192];
    c[(bytes[3] % 3) as usize] = 255;
    c[((bytes[3] % 3 + 1) % 3) as usize] = bytes[4] % 48;
    c
}

fn tint_color(instruction: &str) -> [u8; 3] {
    let bytes = mix64(fnv1a64(canonicalize(instruction).as_bytes()) ^ 0x7469_6e74).to_le_bytes();
    [bytes[0], bytes[1], bytes[2]]
}

/// Stamps the instruction's label rectangle: a solid block in the label
/// color with a one-pixel dark frame.
pub fn apply_stamp(image: &Image, instruction: &str, placement: StampPlacement) -> Image {
    let mut out = image.clone();
    let (x, y, w, h) = stamp_rect(image.width, image.height, placement);
    out.fill_rect(x, y, w, h, [8, 8, 8]);
    out.fill_rect(x + 1, y + 1, w.saturating_sub(2), h.saturating_sub(2), stamp_color(instruction));
    out
}

fn blend_rect(image: &Image, (x0, y0, w, h): (u32, u32, u32, u32), rgb: [u8; 3]) -> Image {
    let mut out = image.clone();
    for y in y0..(y0 + h).min(image.height) {
        for x in x0..(x0 + w).min(image.width) {
            let p = image.get(x, y);
            let mix = |a: u8, b: u8| ((u16::from(a) * 7 + u16::from(b)) / 8) as u8;
            out.set(x, y, [mix(p[0], rgb[0]), mix(p[1], rgb[1]), mix(p[2], rgb[2])]);
        }
    }
    out
}

/// Global half-strength tint keyed to the instruction.
pub fn apply_tint(image: &Image, instruction: &str) -> Image {
    let tint = tint_color(instruction);
    let mut out = image.clone();
    for px in out.pixels.chunks_mut(3) {
        for (c, t) in px.iter_mut().zip(tint) {
            *c = ((u16::from(*c) + u16::from(t)) / 2) as u8;
        }
    }
    out
}

fn stamp_present(original: &Image, edited: &Image, instruction: &str, placement: StampPlacement) -> bool {
    if original.width != edited.width || original.height != edited.height || instruction.is_empty() {
        return false;
    }
    let (x0, y0, w, h) = stamp_rect(edited.width, edited.height, placement);
    let color = stamp_color(instruction);
    let (mut inside, mut hits, mut changed) = (0u32, 0u32, 0u32);
    for y in y0 + 1..(y0 + h.saturating_sub(1)).min(edited.height) {
        for x in x0 + 1..(x0 + w.saturating_sub(1)).min(edited.width) {
            inside += 1;
            hits += u32::from(edited.get(x, y) == color);
            changed += u32::from(original.get(x, y) != edited.get(x, y));
        }
    }
    inside > 0 && hits * 10 >= inside * 9 && changed > 0
}

fn tint_matches(original: &Image, edited: &Image, instruction: &str) -> bool {
    if original.width != edited.width || original.height != edited.height || instruction.is_empty() {
        return false;
    }
    if original.same_pixels(edited) {
        return false;
    }
    let expected = apply_tint(original, instruction);
    let close = expected
        .pixels
        .chunks(3)
        .zip(edited.pixels.chunks(3))
        .filter(|(a, b)| a.iter().zip(b.iter()).all(|(x, y)| x.abs_diff(*y) <= 2))
        .count();
    close * 10 >= (expected.pixels.len() / 3) * 9
}

/// Width of the frame-index watermark strip, pixels.
pub const WATERMARK_BITS: u32 = 16;

/// Writes the frame index as black/white bits along the top-left row.
pub fn watermark(image: &mut Image, index: u32) {
    if image.height == 0 {
        return;
    }
    for bit in 0..WATERMARK_BITS.min(image.width) {
        let on = (index >> bit) & 1 == 1;
        image.set(bit, 0, if on { [255, 255, 255] } else { [0, 0, 0] });
    }
}

/// Reads back a watermark written by [`watermark`].
pub fn read_watermark(image: &Image) -> Option<u32> {
    let mut index = 0;
    for bit in 0..WATERMARK_BITS.min(image.width) {
        match image.get(bit, 0) {
            [255, 255, 255] => index |= 1 << bit,
            [0, 0, 0] => {}
            _ => return None,
        }
    }
    Some(index)
}

fn bottom_half_equal(a: &Image, b: &Image) -> bool {
    if a.width != b.width || a.height != b.height {
        return false;
    }
    let start = (a.height / 2) as usize * a.width as usize * 3;
    a.pixels[start..] == b.pixels[start..]
}

// ---- text heuristics ---------------------------------------------------------

fn ontology_list(prompt: &str, prefix: &str) -> Vec<String> {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(prefix))
        .map(|rest| rest.split(';').map(canonicalize).filter(|s| !s.is_empty()).collect())
        .unwrap_or_default()
}

fn longest_mention<'a>(text: &str, options: impl Iterator<Item = &'a String>) -> Option<String> {
    options.filter(|o| contains_words(text, o)).max_by_key(|o| o.len()).cloned()
}

/// Whole-word containment, tolerating a plural `s`.
fn contains_words(text: &str, needle: &str) -> bool {
    let mut from = 0;
    while let Some(at) = text[from..].find(needle) {
        let start = from + at;
        let end = start + needle.len();
        let before_ok = start == 0 || !text.as_bytes()[start - 1].is_ascii_alphanumeric();
        let rest = &text.as_bytes()[end..];
        let after_ok = match rest {
            [] => true,
            [b's', tail @ ..] => tail.first().is_none_or(|c| !c.is_ascii_alphanumeric()),
            [c, ..] => !c.is_ascii_alphanumeric(),
        };
        if before_ok && after_ok {
            return true;
        }
        from = start + 1;
    }
    false
}

const SYNONYMS: [(&str, &str); 12] = [
    ("bicycle", "cyclist"),
    ("bike", "cyclist"),
    ("car", "vehicle"),
    ("truck", "vehicle"),
    ("traffic light", "red light"),
    ("signal", "red light"),
    ("rainy", "rain"),
    ("snow", "snowy"),
    ("foggy", "fog"),
    ("darkness", "night"),
    ("children", "pedestrian"),
    ("people", "pedestrian"),
];

fn mention_with_synonyms(text: &str, targets: &[&String]) -> Option<String> {
    if let Some(direct) = longest_mention(text, targets.iter().copied()) {
        return Some(direct);
    }
    SYNONYMS
        .iter()
        .filter(|(word, _)| contains_words(text, word))
        .find_map(|(_, target)| targets.iter().find(|t| t.as_str() == *target).map(|t| t.to_string()))
}

fn synonym_hit(text: &str, target_word: &str) -> bool {
    SYNONYMS.iter().any(|(word, target)| target.split(' ').any(|t| t == target_word) && contains_words(text, word))
}

/// Expected behavior a rule states outright, if any.
fn infer_behavior(rule: &str) -> Option<&'static str> {
    const LEFT: [&str; 3] = ["turn left", "left turn", "turning left"];
    const RIGHT: [&str; 3] = ["turn right", "right turn", "turning right"];
    const SLOW: [&str; 14] = [
        "stop", "slow", "yield", "reduce", "caution", "careful", "brake", "red", "pedestrian", "school", "children",
        "give way", "wait", "danger",
    ];
    const KEEP: [&str; 7] = ["proceed", "green", "maintain", "continue", "keep", "go ahead", "may pass"];
    if LEFT.iter().any(|k| rule.contains(k)) {
        Some("turn left")
    } else if RIGHT.iter().any(|k| rule.contains(k)) {
        Some("turn right")
    } else if SLOW.iter().any(|k| rule.contains(k)) {
        Some("slow down")
    } else if KEEP.iter().any(|k| rule.contains(k)) {
        Some("keep current")
    } else {
        None
    }
}

fn contradicts(phrase: &str, behavior: &str) -> bool {
    match behavior {
        "keep current" => ["red", "stop", "pedestrian", "collision"].iter().any(|w| phrase.contains(w)),
        "slow down" => phrase.contains("green"),
        _ => false,
    }
}

const STOPWORDS: [&str; 8] = ["with", "the", "road", "roadside", "weather", "lighting", "surface", "adds"];

fn content_words(phrase: &str) -> impl Iterator<Item = &str> {
    phrase.split(' ').filter(|w| w.len() >= 3 && !STOPWORDS.contains(w))
}

/// Road type, manipulation phrase and behavior from a Gherkin MR, leniently.
fn loose_mr_fields(mr: &str) -> (String, String, String) {
    let mut road = String::new();
    let mut phrase = String::new();
    let mut behavior = String::new();
    for line in mr.lines().map(canonicalize) {
        if let Some(rest) = line.strip_prefix("given the ego-vehicle approaches to ") {
            road = automt_core::canon::strip_article(rest).to_string();
        } else if let Some(rest) = line.strip_prefix("when ") {
            let mut words = rest.splitn(3, ' ');
            let _system = words.next();
            let _verb = words.next();
            phrase = words.next().unwrap_or_default().to_string();
        } else if let Some(rest) = line.strip_prefix("then ego-vehicle should ") {
            behavior = rest.to_string();
        }
    }
    (road, phrase, behavior)
}

fn placement_suffix(target: &str) -> &'static str {
    if ["sign", "light", "guardrail", "barrier", "cross"].iter().any(|w| target.contains(w)) {
        automt_core::mr::SUFFIX_ROADSIDE
    } else {
        automt_core::mr::SUFFIX_ON_ROAD
    }
}

fn replace_phrase(target: &str) -> String {
    let aspect = match target {
        "night" | "dusk" | "dawn" => "lighting",
        "mud" => "road surface",
        _ => "weather",
    };
    let article = if target.ends_with("storm") { "a " } else { "" };
    format!("the {aspect} with {article}{target}")
}

/// How an unscripted mock ADS reacts to an edit instruction.
fn infer_reaction(edit: &str) -> PredictMode {
    let e = canonicalize(edit);
    if e.contains("green") {
        PredictMode::Ignore
    } else if e.contains("left") {
        PredictMode::Steer(0.3)
    } else if e.contains("right") {
        PredictMode::Steer(-0.3)
    } else {
        PredictMode::Scale(0.5)
    }
}

// ---- plumbing ------------------------------------------------------------------

fn yes_no(b: bool) -> String {
    if b { "yes" } else { "no" }.to_string()
}

fn decode_all(images: &[String]) -> Result<Vec<Image>, ErrorBody> {
    images
        .iter()
        .map(|b| Image::from_base64(b).map_err(|e| ErrorBody::new(codes::BAD_REQUEST, format!("image: {e}"))))
        .collect()
}

fn to_b64(image: &Image) -> Result<String, ErrorBody> {
    image.to_base64().map_err(|e| ErrorBody::new(codes::UNAVAILABLE, e.to_string()))
}

fn tag_f64(image: &Image, key: &str) -> Option<f64> {
    image.tag(key).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite())
}

/// Shortest round-trip decimal form, so tags reproduce telemetry exactly.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Uniform draw in [0, 1) behind every probabilistic mock decision.
pub fn keyed_draw(seed: u64, tag: &str, key: &[u8]) -> f64 {
    let mut h = Fnv64::new();
    h.field(tag.as_bytes()).field(key);
    Stream::new(seed, h.finish()).next_f64()
}
