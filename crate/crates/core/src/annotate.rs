//! Caption-set assembly and caption text analysis.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{CaptionSet, CoarseCaption, MediaKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnnotateError {
    #[error("video caption set is missing the {0} slot")]
    MissingMidFrame(&'static str),
    #[error("image caption set must not carry the {0} slot")]
    ImageWithMidFrame(&'static str),
    #[error("coarse caption text is empty")]
    EmptyCoarse,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CameraMotion {
    pub pattern: String,
    pub sentence_index: usize,
}

const CAMERA: &str = "Camera ";

/// Sentences (split at `.`, `!`, `?`) that start with the literal
/// `"Camera "`; the rest of each such sentence is the motion pattern.
pub fn extract_camera_motion(fine_caption: &str) -> Vec<CameraMotion> {
    fine_caption
        .split(['.', '!', '?'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .enumerate()
        .filter_map(|(sentence_index, s)| {
            let pattern = s.strip_prefix(CAMERA)?.trim();
            (!pattern.is_empty()).then(|| CameraMotion { pattern: pattern.to_string(), sentence_index })
        })
        .collect()
}

/// Instruction handed to the fine captioner, with the coarse caption as
/// context.
pub fn build_fine_instruction(coarse: &CoarseCaption, kind: MediaKind) -> String {
    let noun = match kind {
        MediaKind::Image => "image",
        MediaKind::Video => "video",
    };
    let tags = if coarse.tags.is_empty() { "none".to_string() } else { coarse.tags.join(", ") };
    let mut s = format!(
        "Describe this {noun} in detail. A short caption of it reads: \"{}\". Tags: {tags}. \
         Cover the main subjects and how they interact, the background and environment, \
         the visual style and atmosphere, and the camera angle and camera motion.",
        coarse.text
    );
    if kind == MediaKind::Video {
        s.push_str(
            " Describe how the subjects and the scene change over time. \
             State the camera motion in its own sentence beginning with \"Camera\", for example \"Camera pans left.\"",
        );
    }
    s
}

/// Builds the caption set for one item. Videos carry mid-frame captions
/// (mandatory when `require_mid_frame` is set); images never do.
pub fn assemble_caption_set(
    kind: MediaKind,
    coarse: CoarseCaption,
    fine: String,
    mid_frame_coarse: Option<CoarseCaption>,
    mid_frame_fine: Option<String>,
    require_mid_frame: bool,
) -> Result<CaptionSet, AnnotateError> {
    if coarse.text.trim().is_empty() {
        return Err(AnnotateError::EmptyCoarse);
    }
    match kind {
        MediaKind::Image => {
            if mid_frame_coarse.is_some() {
                return Err(AnnotateError::ImageWithMidFrame("mid_frame_coarse"));
            }
            if mid_frame_fine.is_some() {
                return Err(AnnotateError::ImageWithMidFrame("mid_frame_fine"));
            }
        }
        MediaKind::Video if require_mid_frame => {
            if mid_frame_coarse.is_none() {
                return Err(AnnotateError::MissingMidFrame("mid_frame_coarse"));
            }
            if mid_frame_fine.is_none() {
                return Err(AnnotateError::MissingMidFrame("mid_frame_fine"));
            }
        }
        MediaKind::Video => {}
    }
    let camera_motions = extract_camera_motion(&fine).into_iter().map(|m| m.pattern).collect();
    Ok(CaptionSet { coarse, fine, mid_frame_coarse, mid_frame_fine, camera_motions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn coarse(text: &str) -> CoarseCaption {
        CoarseCaption { tags: vec!["person".into(), "food".into()], text: text.into() }
    }

    #[test]
    fn camera_sentences() {
        assert_eq!(
            extract_camera_motion("Camera pans left. A dog runs."),
            vec![CameraMotion { pattern: "pans left".into(), sentence_index: 0 }]
        );
        assert!(extract_camera_motion("A dog runs.").is_empty());
        let two = extract_camera_motion("Camera zooms in. Camera tilts up.");
        assert_eq!(two.iter().map(|m| m.pattern.as_str()).collect::<Vec<_>>(), ["zooms in", "tilts up"]);
        assert_eq!(two[1].sentence_index, 1);
        // case-sensitive, and the word must stand alone
        assert!(extract_camera_motion("camera pans. Cameraman waves! Camera.").is_empty());
        assert_eq!(extract_camera_motion("A cat sits? Camera dollies out!")[0].sentence_index, 1);
    }

    #[test]
    fn instruction_contents() {
        let c = coarse("a man cooking");
        let v = build_fine_instruction(&c, MediaKind::Video);
        let i = build_fine_instruction(&c, MediaKind::Image);
        assert_eq!(v, build_fine_instruction(&c, MediaKind::Video));
        assert!(v.contains("a man cooking") && i.contains("a man cooking"));
        assert!(v.contains("person, food"));
        assert!(v.contains("change over time"));
        assert!(!i.contains("change over time"));
        for needle in ["subjects", "interact", "background", "environment", "style", "atmosphere", "camera angle"] {
            assert!(i.contains(needle), "{needle}");
        }
    }

    #[test]
    fn caption_set_slots() {
        let set = assemble_caption_set(MediaKind::Image, coarse("a"), "A bowl of soup.".into(), None, None, true).unwrap();
        assert!(set.camera_motions.is_empty());
        let set = assemble_caption_set(
            MediaKind::Video,
            coarse("a"),
            "A man stirs. Camera pans right.".into(),
            Some(coarse("b")),
            Some("c".into()),
            true,
        )
        .unwrap();
        assert_eq!(set.camera_motions, vec!["pans right"]);
        assert_eq!(
            assemble_caption_set(MediaKind::Image, coarse("a"), "f".into(), None, Some("m".into()), false),
            Err(AnnotateError::ImageWithMidFrame("mid_frame_fine"))
        );
        assert_eq!(
            assemble_caption_set(MediaKind::Video, coarse("a"), "f".into(), Some(coarse("b")), None, true),
            Err(AnnotateError::MissingMidFrame("mid_frame_fine"))
        );
        assert!(assemble_caption_set(MediaKind::Video, coarse("a"), "f".into(), None, None, false).is_ok());
    }

    proptest! {
        #[test]
        fn matched_sentences_reconstruct(parts in prop::collection::vec(("[A-Za-z ]{0,12}", any::<bool>()), 0..8)) {
            let caption: String = parts
                .iter()
                .map(|(s, cam)| if *cam { format!("Camera {s}. ") } else { format!("{s}. ") })
                .collect();
            let found = extract_camera_motion(&caption);
            let sentences: Vec<&str> = caption.split(['.', '!', '?']).map(str::trim).filter(|s| !s.is_empty()).collect();
            let mut last = None;
            for m in &found {
                let sentence = sentences[m.sentence_index];
                prop_assert!(sentence.starts_with("Camera "));
                prop_assert_eq!(sentence["Camera ".len()..].trim(), m.pattern.as_str());
                prop_assert!(last.map_or(true, |l| m.sentence_index > l));
                last = Some(m.sentence_index);
            }
        }
    }
}
