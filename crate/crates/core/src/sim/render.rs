//! SVG rendering of scene graphs. The scene itself rides along as JSON in a
//! `<metadata>` element so a simulated critic can read it back exactly.

use std::fmt::Write as _;

use super::scene::{SceneGraph, CANVAS};

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(ch),
        }
    }
    out
}

fn unescape(text: &str) -> String {
    text.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&amp;", "&")
}

pub fn render_scene(scene: &SceneGraph) -> Vec<u8> {
    let json = serde_json::to_string(scene).expect("scene graphs serialize");
    let size = CANVAS as u32;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
    );
    let _ = writeln!(svg, "<metadata>{}</metadata>", escape(&json));
    let _ = writeln!(svg, "<rect x=\"0\" y=\"0\" width=\"{size}\" height=\"{size}\" fill=\"#eeeeee\"/>");
    for o in &scene.objects {
        let b = o.bbox;
        let _ = writeln!(
            svg,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"#333333\" data-confidence=\"{}\"/>",
            b.x, b.y, b.w, b.h, o.color, o.confidence
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"20\">{}</text>",
            b.x + 4.0,
            b.y + 22.0,
            o.category
        );
    }
    svg.push_str("</svg>\n");
    svg.into_bytes()
}

/// Reads back the scene embedded by [`render_scene`].
pub fn scene_from_svg(bytes: &[u8]) -> Option<SceneGraph> {
    let text = std::str::from_utf8(bytes).ok()?;
    let start = text.find("<metadata>")? + "<metadata>".len();
    let end = start + text[start..].find("</metadata>")?;
    serde_json::from_str(&unescape(&text[start..end])).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MediaType;
    use crate::constraints::{Category, Color};
    use crate::sim::scene::{BBox, SceneObject};

    #[test]
    fn round_trip() {
        let scene = SceneGraph {
            objects: vec![SceneObject {
                category: Category::Zebra,
                color: Color::Purple,
                bbox: BBox::new(10.0, 20.0, 100.0, 80.0),
                confidence: 0.931,
            }],
            provenance_seed: 42,
        };
        let bytes = render_scene(&scene);
        assert_eq!(MediaType::sniff(&bytes), Some(MediaType::Svg));
        assert!(String::from_utf8_lossy(&bytes).contains("fill=\"purple\""));
        assert_eq!(scene_from_svg(&bytes), Some(scene));
    }

    #[test]
    fn rejects_foreign_images() {
        assert_eq!(scene_from_svg(b"\x89PNG...."), None);
        assert_eq!(scene_from_svg(b"<svg></svg>"), None);
    }
}
