//! All prompt text and free-text parsing: baseline prompts, detection
//! message, self-assessment prompt, toolkit-preparation prompt, Yes/No
//! parsing, score extraction and refusal classification.
//!
//! Every render function is pure and byte-deterministic.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ektools::EKTool;
use crate::lvlm::schema::{SchemaField, StructuredSchema, VERDICT_FIELD};

/// System message for every detection call.
pub const DETECT_SYSTEM: &str =
    "You are an AI video analyzer. Determine if the video is AI-generated or not?";

pub const FRAMES_LINE: &str = "These 8 images are consecutive frames of a video.";

pub const YES_NO_INSTRUCTION: &str =
    "Must return with 1) Yes or No only; 2) if Yes, explain the reason.";

/// The three zero-shot baseline prompts, byte-exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselinePrompt {
    P1,
    P2,
    P3,
}

impl BaselinePrompt {
    pub fn text(&self) -> &'static str {
        match self {
            BaselinePrompt::P1 => "Do you think this video is generated by AI or not?",
            BaselinePrompt::P2 => "Tell me if there are synthetic artifacts in the video or not?",
            BaselinePrompt::P3 => "Do you think this video was created with the help of AI?",
        }
    }

    /// Full baseline user message: frame description, the question, and the
    /// Yes/No output contract.
    pub fn render(&self, frame_count: usize) -> String {
        format!("{} {} {}", frames_line(frame_count), self.text(), YES_NO_INSTRUCTION)
    }
}

fn frames_line(n: usize) -> String {
    if n == 8 {
        FRAMES_LINE.to_string()
    } else {
        format!("These {n} images are consecutive frames of a video.")
    }
}

/// One-line capability descriptions of each EK tool, as shipped in prompts.
pub fn ek_description(tool_name: &str) -> &'static str {
    match tool_name {
        "saturation" => "AI-generated videos may exhibit anomalies in color rendering. Saturation estimation detects color unevenness, oversaturation, or undersaturation to identify artificial elements.",
        "denoise" => "Denoising isolates unnatural noise patterns present in AI-generated videos. Residual artifacts after denoising can signal synthesized or forged content.",
        "sharpen" => "Sharpening frames emphasizes edges, making it easier to spot unnatural boundaries or blending artifacts, which may indicate forgery.",
        "enhance" => "Image enhancement boosts details and contrast, revealing synthetic artifacts like unnatural textures or color inconsistencies.",
        "segmentation" => "Segmentation maps identify mismatched regions in synthesized content, such as areas where the object segmentation boundaries do not align with real-world logic.",
        "optical_flow" => "AI-generated videos may have abnormal motion patterns, such as discontinuous movements or unnatural trajectories. Optical flow estimation detects whether object motion in the video is smooth and adheres to physical laws.",
        "landmark" => "In AI-generated videos, facial or body key point localization may show anomalies, such as misalignment or unnatural movement. Landmark estimation detects these anomalies to identify potential forgery.",
        "depth" => "Depth information is consistent in real scenes but may exhibit anomalies in AI-generated videos. Depth estimation detects issues like depth dislocation and discontinuity, helping identify forged content.",
        "edge" => "Synthetic videos often feature unnatural edge details, such as blurred, jagged, or discontinuous object boundaries. Edge detection identifies such abnormalities to pinpoint fake or synthetic elements.",
        _ => "Raw video frames.",
    }
}

/// Display name used in self-assessment prompts; `rgb` renders as `"RGB"`.
pub fn tool_display_name(tool_name: &str) -> &str {
    if tool_name == "rgb" {
        "RGB"
    } else {
        tool_name
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    NonStructured,
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Initial,
    Rewritten,
}

/// A structured-response template; the object evolved by online adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub schema: StructuredSchema,
    pub version: u32,
    pub provenance: Provenance,
}

impl PromptTemplate {
    /// Seed template for a tool: verdict, raw-frame analysis, per-tool
    /// analysis, explanation.
    pub fn initial(tool_name: &str) -> PromptTemplate {
        let schema = StructuredSchema::new(vec![
            SchemaField::bool_field(VERDICT_FIELD),
            SchemaField::str_field("raw_frame_analysis"),
            SchemaField::str_field(&format!("{tool_name}_analysis")),
            SchemaField::str_field("explanation"),
        ])
        .expect("initial template is structurally valid");
        PromptTemplate { schema, version: 0, provenance: Provenance::Initial }
    }

    pub fn rewritten(schema: StructuredSchema, version: u32) -> PromptTemplate {
        PromptTemplate { schema, version, provenance: Provenance::Rewritten }
    }
}

#[derive(Debug, Clone)]
pub struct DetectionPrompt {
    pub system_text: String,
    pub user_text: String,
    pub schema: Option<StructuredSchema>,
}

/// Render the detection message for one tool.
///
/// Raw frames always accompany the request; for tools other than `rgb` the
/// derived EK frames follow, introduced by the tool's one-line description.
/// Structured mode attaches the template schema; non-structured mode ends
/// with the Yes/No output contract.
pub fn render_detection_prompt(
    tool: &EKTool,
    mode: PromptMode,
    template: Option<&PromptTemplate>,
    raw_frames: usize,
    ek_frames: usize,
) -> DetectionPrompt {
    let mut user = frames_line(raw_frames);
    if tool.name != "rgb" {
        user.push_str(&format!(
            " The {ek_frames} images that follow are {} frames derived from the same video. {}",
            tool.name,
            ek_description(tool.name)
        ));
    }
    match mode {
        PromptMode::Structured => {
            let template = template.expect("structured mode requires a template");
            DetectionPrompt {
                system_text: DETECT_SYSTEM.to_string(),
                user_text: user,
                schema: Some(template.schema.clone()),
            }
        }
        PromptMode::NonStructured => {
            user.push(' ');
            user.push_str(YES_NO_INSTRUCTION);
            DetectionPrompt {
                system_text: DETECT_SYSTEM.to_string(),
                user_text: user,
                schema: None,
            }
        }
    }
}

/// Self-assessment prompt asking the model to score a tool from 0 to 10.
pub fn render_smp_prompt(tool_name: &str, fewshot_results: &str) -> String {
    format!(
        "You are given an AI-generated video detection task. Assess the the additional feature: \
{name} that could support your determination.\n\
- Analysis History: {fewshot_results}\n\n\
Evaluate your own analysis considering these factors:\n\
* Alignment with knowledge base\n\
* Interpretability and transparency\n\
* Robustness across scenarios\n\n\
- Scoring: Provide a score from 0 to 10 based on your self-assessment. Higher score indicates an effective feature.",
        name = tool_display_name(tool_name),
    )
}

/// Toolkit-preparation prompt asking the model to list candidate tools.
pub fn render_preparation_prompt() -> &'static str {
    "This is an AI-generated video detection task based on large vision-language models (LVLMs). \
Besides using raw frames from the video, are there any external tools that could help extract \
additional video information? These tools will used to facilitate LVLMs-based detection. \
Specifically, I'm looking for methods or tools that can generate features from the video like \
optical flow and sharpening. Please summarize the tool list for me."
}

/// Inference-time prompt asking the model to pick a per-video tool subset.
pub fn render_pick_tools_prompt(toolkit: &[&EKTool], frame_count: usize) -> String {
    let mut out = format!(
        "{} Based on these frames, choose which of the following analysis tools would be most \
useful to decide whether this video is AI-generated.\n\nAvailable tools:\n",
        frames_line(frame_count)
    );
    for tool in toolkit {
        out.push_str(&format!("- {}: {}\n", tool.name, ek_description(tool.name)));
    }
    out.push_str(
        "\nReply with a comma-separated list of tool names from the list above; nothing else.",
    );
    out
}

/// Outcome of free-text Yes/No parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct YesNoOutcome {
    /// `Some(true)` means AI-generated.
    pub verdict: Option<bool>,
    pub refused: bool,
}

/// Parse a free-form reply: leading "Yes"/"No" token (case-insensitive,
/// punctuation and markdown stripped). Replies with neither token are
/// classified against the refusal lexicon; remaining misses count as a
/// parse miss (`verdict: None, refused: false`).
pub fn parse_yes_no(raw_text: &str, refusals: &RefusalLexicon) -> YesNoOutcome {
    let trimmed = raw_text
        .trim_start_matches(|c: char| !c.is_ascii_alphanumeric())
        .trim();
    let token: String = trimmed
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_lowercase();
    let verdict = match token.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    };
    if verdict.is_some() {
        return YesNoOutcome { verdict, refused: false };
    }
    YesNoOutcome { verdict: None, refused: refusals.is_refusal(raw_text) }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("no score found in response")]
pub struct ScoreMissing;

/// Extract the first number from a reply and clamp it to [0, 10].
pub fn parse_smp_score(raw_text: &str) -> Result<f64, ScoreMissing> {
    let bytes = raw_text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit()
            {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let token = &raw_text[start..i];
            if let Ok(v) = token.parse::<f64>() {
                return Ok(v.clamp(0.0, 10.0));
            }
        }
        i += 1;
    }
    Err(ScoreMissing)
}

/// Substring patterns (case-insensitive) that classify a reply as a refusal.
#[derive(Debug, Clone)]
pub struct RefusalLexicon {
    patterns: Vec<String>,
}

const DEFAULT_REFUSAL_PATTERNS: &[&str] = &[
    "i'm sorry",
    "i am sorry",
    "i apologize",
    "i cannot",
    "i can't",
    "i can not",
    "cannot assist",
    "can't assist",
    "cannot help",
    "can't help",
    "unable to assist",
    "unable to help",
    "unable to determine",
    "unable to provide",
    "not able to determine",
    "cannot determine",
    "can't determine",
    "cannot provide",
    "can't provide",
    "as an ai",
    "i'm not able to",
    "i am not able to",
    "appropriate for me",
    "decline to answer",
    "won't be able to",
];

impl Default for RefusalLexicon {
    fn default() -> Self {
        RefusalLexicon {
            patterns: DEFAULT_REFUSAL_PATTERNS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl RefusalLexicon {
    /// Load patterns from a plain-text file, one per line; blank lines and
    /// `#` comments are skipped.
    pub fn from_file(path: &Path) -> std::io::Result<RefusalLexicon> {
        let text = std::fs::read_to_string(path)?;
        let patterns: Vec<String> = text
            .lines()
            .map(|l| l.trim().to_ascii_lowercase())
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Ok(RefusalLexicon { patterns })
    }

    pub fn is_refusal(&self, text: &str) -> bool {
        let lower = text.to_ascii_lowercase();
        self.patterns.iter().any(|p| lower.contains(p.as_str()))
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    /// A canned refusal reply drawn deterministically from the lexicon; the
    /// mock backend uses this so its refusals classify as refusals.
    pub fn canned_refusal(&self, pick: u64) -> String {
        let stems = ["I'm sorry, but I can't help with that.",
            "I am sorry, I cannot determine that from the provided material.",
            "I apologize, but I am not able to assist with this request.",
            "As an AI, I cannot provide a reliable judgment here."];
        stems[(pick % stems.len() as u64) as usize].to_string()
    }
}

impl fmt::Display for YesNoOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.verdict, self.refused) {
            (Some(true), _) => write!(f, "yes"),
            (Some(false), _) => write!(f, "no"),
            (None, true) => write!(f, "refused"),
            (None, false) => write!(f, "parse-miss"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ektools::lookup;

    #[test]
    fn baseline_texts_are_fixed() {
        assert_eq!(BaselinePrompt::P1.text(), "Do you think this video is generated by AI or not?");
        assert_eq!(
            BaselinePrompt::P2.text(),
            "Tell me if there are synthetic artifacts in the video or not?"
        );
        assert_eq!(
            BaselinePrompt::P3.text(),
            "Do you think this video was created with the help of AI?"
        );
        assert!(BaselinePrompt::P1.render(8).starts_with(FRAMES_LINE));
        assert!(BaselinePrompt::P1.render(8).ends_with(YES_NO_INSTRUCTION));
    }

    #[test]
    fn detection_prompt_rgb_nonstructured_is_baseline_style() {
        let p = render_detection_prompt(lookup("rgb").unwrap(), PromptMode::NonStructured, None, 8, 0);
        assert_eq!(p.system_text, DETECT_SYSTEM);
        assert_eq!(p.user_text, format!("{FRAMES_LINE} {YES_NO_INSTRUCTION}"));
        assert!(p.schema.is_none());
    }

    #[test]
    fn detection_prompt_structured_attaches_initial_schema() {
        let template = PromptTemplate::initial("edge");
        let p = render_detection_prompt(
            lookup("edge").unwrap(),
            PromptMode::Structured,
            Some(&template),
            8,
            8,
        );
        let schema = p.schema.unwrap();
        assert_eq!(
            schema.field_names(),
            ["is_ai_generated", "raw_frame_analysis", "edge_analysis", "explanation"]
        );
        assert!(p.user_text.contains("edge frames derived from the same video"));
        assert!(p.user_text.contains(ek_description("edge")));
    }

    #[test]
    fn detection_prompt_is_pure() {
        let t = PromptTemplate::initial("depth");
        let a = render_detection_prompt(lookup("depth").unwrap(), PromptMode::Structured, Some(&t), 8, 8);
        let b = render_detection_prompt(lookup("depth").unwrap(), PromptMode::Structured, Some(&t), 8, 8);
        assert_eq!(a.user_text, b.user_text);
        assert_eq!(a.system_text, b.system_text);
    }

    #[test]
    fn smp_prompt_substitutes_tool_and_history() {
        let p = render_smp_prompt("optical_flow", "correct: 18, incorrect: 2");
        assert!(p.contains("optical_flow"));
        assert!(p.contains("Provide a score from 0 to 10"));
        assert!(p.contains("* Alignment with knowledge base"));
        assert!(p.contains("* Interpretability and transparency"));
        assert!(p.contains("* Robustness across scenarios"));
        assert!(p.contains("correct: 18, incorrect: 2"));

        let rgb = render_smp_prompt("rgb", "");
        assert!(rgb.contains("RGB"));
        assert!(!rgb.contains("rgb "));

        // Empty history still renders.
        assert!(render_smp_prompt("edge", "").contains("- Analysis History: \n"));
    }

    #[test]
    fn preparation_prompt_is_stable_and_substantial() {
        let a = render_preparation_prompt();
        let b = render_preparation_prompt();
        assert_eq!(a, b);
        assert!(a.contains("optical flow and sharpening"));
        assert!(a.len() > 200);
    }

    #[test]
    fn yes_no_parsing() {
        let lex = RefusalLexicon::default();
        let cases = [
            ("Yes, the lighting is inconsistent across frames.", Some(true), false),
            ("No.", Some(false), false),
            ("**Yes** - there are warping artifacts.", Some(true), false),
            ("no, this looks like natural footage", Some(false), false),
            ("  \"Yes\"", Some(true), false),
            ("Nothing seems wrong here.", None, false),
            ("I'm sorry, but I can't determine that.", None, true),
        ];
        for (text, verdict, refused) in cases {
            let out = parse_yes_no(text, &lex);
            assert_eq!(out.verdict, verdict, "{text:?}");
            assert_eq!(out.refused, refused, "{text:?}");
        }
    }

    #[test]
    fn refusal_corpus_classifies_as_refusals() {
        let lex = RefusalLexicon::default();
        // Assembled refusal phrasings; every one must classify refused=true.
        let corpus = [
            "I'm sorry, but I can't help with that.",
            "I am sorry, I cannot assist with this request.",
            "I apologize, but I won't be able to answer.",
            "I cannot determine whether this video is AI-generated.",
            "I can't determine the origin of this footage.",
            "Unfortunately I am unable to determine this.",
            "I'm unable to assist with analyzing this content.",
            "As an AI, I cannot make that judgment.",
            "I'm not able to evaluate this material.",
            "I am not able to verify the authenticity of the video.",
            "I must decline to answer this question.",
            "Sorry, I cannot provide an assessment of these frames.",
            "I can't provide that analysis.",
            "It would not be appropriate for me to speculate here.",
            "I apologize, I cannot help with identifying this.",
            "I'm sorry - I can not assist with that task.",
            "Regrettably, I am unable to help with this.",
            "I cannot assist with that.",
            "I can't help with requests of this kind.",
            "As an AI language model, I cannot view videos.",
            "I won't be able to provide a verdict on this one.",
            "I'm sorry, but I cannot determine that.",
        ];
        assert!(corpus.len() >= 20);
        for text in corpus {
            assert!(parse_yes_no(text, &lex).refused, "{text:?}");
        }
    }

    #[test]
    fn smp_score_extraction() {
        assert_eq!(parse_smp_score("Score: 7. The feature is interpretable."), Ok(7.0));
        assert_eq!(parse_smp_score("I'd rate this 8.5/10"), Ok(8.5));
        assert_eq!(parse_smp_score("no score"), Err(ScoreMissing));
        // Fixture set of phrasings for the extraction rule.
        let fixtures = [
            ("I would give it a 9 out of 10.", 9.0),
            ("Rating: 6.25", 6.25),
            ("0 - this feature is useless", 0.0),
            ("A perfect 10!", 10.0),
            ("Maybe 3, maybe 4.", 3.0),
            ("Score=2.5 given weak robustness", 2.5),
            ("I'd say 15 on a 0-10 scale", 10.0), // clamped
            ("score: 0.5", 0.5),
            ("7/10 overall", 7.0),
            ("The score is 4.0 because transparency is limited", 4.0),
        ];
        for (text, expect) in fixtures {
            assert_eq!(parse_smp_score(text), Ok(expect), "{text:?}");
        }
    }

    #[test]
    fn refusal_lexicon_loads_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("refusals.txt");
        std::fs::write(&path, "# comment\nno comment\n\nCUSTOM PHRASE\n").unwrap();
        let lex = RefusalLexicon::from_file(&path).unwrap();
        assert_eq!(lex.patterns().len(), 2);
        assert!(lex.is_refusal("this contains a Custom Phrase inside"));
        assert!(!lex.is_refusal("i'm sorry")); // default list replaced
    }
}
