use std::fmt::Write;

use crate::metrics::first_crossing;

/// One probability timeline.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub title: String,
    pub probs: Vec<f64>,
    pub fps: f64,
    /// 1-based accident frame, if any.
    pub accident_frame: Option<usize>,
    pub threshold: f64,
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 260.0;
const LEFT: f64 = 50.0;
const RIGHT: f64 = 15.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render_panel(out: &mut String, panel: &Panel, x0: f64) {
    let duration = panel.probs.len() as f64 / panel.fps;
    let plot_w = PANEL_W - LEFT - RIGHT;
    let plot_h = PANEL_H - TOP - BOTTOM;
    let sx = |secs: f64| x0 + LEFT + if duration > 0.0 { secs / duration * plot_w } else { 0.0 };
    let sy = |p: f64| TOP + (1.0 - p) * plot_h;

    let _ = writeln!(
        out,
        r#"<g class="panel" data-x-min="0" data-x-max="{duration}" data-y-min="0" data-y-max="1">"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="18" font-size="13" text-anchor="middle">{}</text>"#,
        x0 + LEFT + plot_w / 2.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        out,
        r##"<rect class="axes" x="{:.2}" y="{TOP}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="#333"/>"##,
        x0 + LEFT
    );
    for (label, secs) in [("0", 0.0), (&*format!("{duration}"), duration)] {
        let _ = writeln!(
            out,
            r#"<text class="x-tick" x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{label}</text>"#,
            sx(secs),
            TOP + plot_h + 14.0
        );
    }
    for (label, p) in [("0", 0.0), ("1", 1.0)] {
        let _ = writeln!(
            out,
            r#"<text class="y-tick" x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{label}</text>"#,
            x0 + LEFT - 6.0,
            sy(p) + 3.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">time (s)</text>"#,
        x0 + LEFT + plot_w / 2.0,
        PANEL_H - 8.0
    );
    let _ = writeln!(
        out,
        r##"<line class="threshold" x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
        sx(0.0),
        sx(duration),
        y = sy(panel.threshold)
    );
    if let Some(tau) = panel.accident_frame {
        let x = sx(tau as f64 / panel.fps);
        let _ = writeln!(
            out,
            r##"<line class="accident" x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#c0392b"/>"##,
            TOP + plot_h
        );
    }
    let points: Vec<String> = panel
        .probs
        .iter()
        .enumerate()
        .map(|(t, &p)| format!("{:.2},{:.2}", sx(t as f64 / panel.fps), sy(p)))
        .collect();
    let _ = writeln!(
        out,
        r##"<polyline class="probability" fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/>"##,
        points.join(" ")
    );
    if let Some(t) = first_crossing(&panel.probs, panel.threshold) {
        let _ = writeln!(
            out,
            r##"<circle class="alarm" cx="{:.2}" cy="{:.2}" r="4" fill="#e67e22"/>"##,
            sx(t as f64 / panel.fps),
            sy(panel.probs[t])
        );
    }
    out.push_str("</g>\n");
}

/// Renders the panels left to right as a standalone SVG document.
pub fn render_svg(panels: &[Panel]) -> String {
    let width = PANEL_W * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" viewBox="0 0 {width} {PANEL_H}">"#
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (i, panel) in panels.iter().enumerate() {
        render_panel(&mut out, panel, i as f64 * PANEL_W);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(probs: Vec<f64>, tau: Option<usize>) -> Panel {
        Panel {
            title: "w=10".into(),
            probs,
            fps: 20.0,
            accident_frame: tau,
            threshold: 0.5,
        }
    }

    #[test]
    fn constant_zero_trace_has_no_alarm() {
        let svg = render_svg(&[panel(vec![0.0; 100], Some(80))]);
        assert!(!svg.contains("class=\"alarm\""));
        assert!(svg.contains("class=\"threshold\""));
        assert!(svg.contains("class=\"accident\""));
    }

    #[test]
    fn axes_span_duration_and_unit_interval() {
        let svg = render_svg(&[panel(vec![0.7; 50], None), panel(vec![0.2; 50], None)]);
        assert_eq!(svg.matches("data-x-max=\"2.5\"").count(), 2);
        assert!(svg.contains("data-y-min=\"0\" data-y-max=\"1\""));
        assert_eq!(svg.matches("class=\"alarm\"").count(), 1);
        assert!(!svg.contains("class=\"accident\""));
    }
}
