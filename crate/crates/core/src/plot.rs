//! Self-contained SVG rendering of recorded traces: stacked panels, one per
//! signal, optionally overlaying an attack-free twin, with a dashed marker
//! at the attack onset. Output is deterministic text, friendly to diffing.

use crate::datagen::TraceRecord;
use crate::plant::SignalId;

const PANEL_WIDTH: f64 = 840.0;
const PANEL_HEIGHT: f64 = 180.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const PANEL_GAP: f64 = 28.0;

pub struct TraceOverlay<'a> {
    /// Primary trace (drawn in red when a baseline is present).
    pub trace: &'a TraceRecord,
    /// Attack-free twin drawn underneath, when available.
    pub baseline: Option<&'a TraceRecord>,
    /// Vertical dashed marker, e.g. the attack onset (s).
    pub onset_s: Option<f64>,
    pub title: &'a str,
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn polyline(points: &[(f64, f64)], color: &str, width: f64) -> String {
    let coords: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{},{}", fmt(*x), fmt(*y)))
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\" points=\"{}\"/>\n",
        coords.join(" ")
    )
}

/// Renders the overlay as a complete SVG document.
pub fn render_trace_svg(overlay: &TraceOverlay) -> String {
    let signals = [SignalId::DeltaF1, SignalId::DeltaF2, SignalId::DeltaPTie];
    let total_height = MARGIN_TOP + 3.0 * (PANEL_HEIGHT + PANEL_GAP) + 20.0;
    let t = &overlay.trace.t_s;
    let t_min = t.first().copied().unwrap_or(0.0);
    let t_max = t.last().copied().unwrap_or(1.0).max(t_min + 1e-9);

    let mut svg = String::with_capacity(64 * 1024);
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PANEL_WIDTH}\" height=\"{}\" \
         font-family=\"monospace\" font-size=\"12\">\n",
        fmt(total_height)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"18\" font-size=\"14\">{}</text>\n",
        fmt(MARGIN_LEFT),
        xml_escape(overlay.title)
    ));
    if overlay.baseline.is_some() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"18\" fill=\"#4682b4\">normal</text>\n",
            fmt(PANEL_WIDTH - 180.0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"18\" fill=\"#dc143c\">attack</text>\n",
            fmt(PANEL_WIDTH - 110.0)
        ));
    }

    for (panel, signal) in signals.into_iter().enumerate() {
        let top = MARGIN_TOP + panel as f64 * (PANEL_HEIGHT + PANEL_GAP);
        let bottom = top + PANEL_HEIGHT;
        let plot_left = MARGIN_LEFT;
        let plot_right = PANEL_WIDTH - MARGIN_RIGHT;

        let series = overlay.trace.signal(signal);
        let mut v_min = series.iter().copied().fold(f64::INFINITY, f64::min);
        let mut v_max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if let Some(base) = overlay.baseline {
            for v in base.signal(signal) {
                v_min = v_min.min(*v);
                v_max = v_max.max(*v);
            }
        }
        if !(v_max - v_min).is_finite() || v_max - v_min < 1e-12 {
            let mid = if v_min.is_finite() { v_min } else { 0.0 };
            v_min = mid - 1.0;
            v_max = mid + 1.0;
        }
        let pad = 0.05 * (v_max - v_min);
        let (v_min, v_max) = (v_min - pad, v_max + pad);

        let x_of =
            |time: f64| plot_left + (time - t_min) / (t_max - t_min) * (plot_right - plot_left);
        let y_of = |v: f64| bottom - (v - v_min) / (v_max - v_min) * PANEL_HEIGHT;

        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#606060\"/>\n",
            fmt(plot_left),
            fmt(top),
            fmt(plot_right - plot_left),
            fmt(PANEL_HEIGHT)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{} (pu)</text>\n",
            fmt(plot_left),
            fmt(top - 6.0),
            signal.name()
        ));
        svg.push_str(&format!(
            "<text x=\"4\" y=\"{}\">{:+.4}</text>\n",
            fmt(top + 12.0),
            v_max
        ));
        svg.push_str(&format!(
            "<text x=\"4\" y=\"{}\">{:+.4}</text>\n",
            fmt(bottom),
            v_min
        ));

        if let Some(base) = overlay.baseline {
            let pts: Vec<(f64, f64)> = t
                .iter()
                .zip(base.signal(signal))
                .map(|(time, v)| (x_of(*time), y_of(*v)))
                .collect();
            svg.push_str(&polyline(&pts, "#4682b4", 1.4));
        }
        let pts: Vec<(f64, f64)> = t
            .iter()
            .zip(series)
            .map(|(time, v)| (x_of(*time), y_of(*v)))
            .collect();
        let color = if overlay.baseline.is_some() {
            "#dc143c"
        } else {
            "#4682b4"
        };
        svg.push_str(&polyline(&pts, color, 1.4));

        if let Some(onset) = overlay.onset_s {
            if onset >= t_min && onset <= t_max {
                let x = x_of(onset);
                svg.push_str(&format!(
                    "<line x1=\"{x}\" y1=\"{top}\" x2=\"{x}\" y2=\"{bottom}\" \
                     stroke=\"#202020\" stroke-dasharray=\"5,4\"/>\n",
                    x = fmt(x),
                    top = fmt(top),
                    bottom = fmt(bottom)
                ));
                if panel == 0 {
                    svg.push_str(&format!(
                        "<text x=\"{}\" y=\"{}\">onset {onset} s</text>\n",
                        fmt(x_of(onset) + 4.0),
                        fmt(top + 14.0)
                    ));
                }
            }
        }

        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">t = {t_min} s</text>\n",
            fmt(plot_left),
            fmt(bottom + 14.0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">t = {t_max} s</text>\n",
            fmt(plot_right),
            fmt(bottom + 14.0)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// The plotted series as CSV for external tooling: one row per record
/// instant, baseline columns included when present.
pub fn trace_csv(trace: &TraceRecord, baseline: Option<&TraceRecord>) -> String {
    let mut out = String::new();
    match baseline {
        Some(_) => out.push_str(
            "t_s,delta_f1_pu,delta_f2_pu,delta_p_tie_pu,baseline_delta_f1_pu,baseline_delta_f2_pu,baseline_delta_p_tie_pu\n",
        ),
        None => out.push_str("t_s,delta_f1_pu,delta_f2_pu,delta_p_tie_pu\n"),
    }
    for k in 0..trace.len() {
        match baseline {
            Some(base) => out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                trace.t_s[k],
                trace.delta_f1[k],
                trace.delta_f2[k],
                trace.delta_p_tie[k],
                base.delta_f1[k],
                base.delta_f2[k],
                base.delta_p_tie[k]
            )),
            None => out.push_str(&format!(
                "{},{},{},{},\n",
                trace.t_s[k], trace.delta_f1[k], trace.delta_f2[k], trace.delta_p_tie[k]
            )),
        }
    }
    out
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
