//! Scatter plots of volume-delay observations with fitted curves overlaid,
//! rendered as plain SVG text. Text output keeps plots diffable and needs
//! no rendering dependency.

use crate::types::PairedObservation;

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 620.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 160.0;
const MARGIN_TOP: f64 = 50.0;
const MARGIN_BOTTOM: f64 = 60.0;

const CURVE_COLORS: [&str; 3] = ["#d62728", "#1f77b4", "#2ca02c"];

struct Axis {
    min: f64,
    max: f64,
    span_px: f64,
    offset_px: f64,
}

impl Axis {
    fn project(&self, value: f64) -> f64 {
        let unit = if self.max > self.min {
            (value - self.min) / (self.max - self.min)
        } else {
            0.5
        };
        self.offset_px + unit * self.span_px
    }

    fn ticks(&self) -> Vec<f64> {
        (0..=5)
            .map(|i| self.min + (self.max - self.min) * i as f64 / 5.0)
            .collect()
    }
}

/// Renders one site: observation markers plus one polyline per labeled
/// curve, with axes in vehicles/hour and seconds.
pub fn scatter_svg(
    title: &str,
    observations: &[PairedObservation],
    curves: &[(String, Vec<(f64, f64)>)],
) -> String {
    let mut max_volume: f64 = 1.0;
    let mut max_time: f64 = 1.0;
    for o in observations {
        max_volume = max_volume.max(o.volume as f64);
        max_time = max_time.max(o.travel_time_s);
    }
    for (_, points) in curves {
        for (v, t) in points {
            max_volume = max_volume.max(*v);
            max_time = max_time.max(*t);
        }
    }
    let x = Axis {
        min: 0.0,
        max: max_volume * 1.05,
        span_px: WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
        offset_px: MARGIN_LEFT,
    };
    // SVG y grows downward; project then flip.
    let y = Axis {
        min: 0.0,
        max: max_time * 1.05,
        span_px: HEIGHT - MARGIN_TOP - MARGIN_BOTTOM,
        offset_px: MARGIN_BOTTOM,
    };
    let flip = |py: f64| HEIGHT - py;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"28\" font-family=\"sans-serif\" font-size=\"18\">{}</text>\n",
        MARGIN_LEFT,
        xml_escape(title)
    ));

    // Axes.
    let x0 = x.project(x.min);
    let x1 = x.project(x.max);
    let y0 = flip(y.project(y.min));
    let y1 = flip(y.project(y.max));
    svg.push_str(&format!(
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x1:.1}\" y2=\"{y0:.1}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x0:.1}\" y2=\"{y1:.1}\" stroke=\"black\"/>\n"
    ));
    for tick in x.ticks() {
        let px = x.project(tick);
        svg.push_str(&format!(
            "<line x1=\"{px:.1}\" y1=\"{y0:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            y0 + 6.0
        ));
        svg.push_str(&format!(
            "<text x=\"{px:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"middle\">{tick:.0}</text>\n",
            y0 + 22.0
        ));
    }
    for tick in y.ticks() {
        let py = flip(y.project(tick));
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{x0:.1}\" y2=\"{py:.1}\" stroke=\"black\"/>\n",
            x0 - 6.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"end\">{tick:.0}</text>\n",
            x0 - 10.0,
            py + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\">hourly volume (veh/h)</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">travel time (s)</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    ));

    // Observations.
    for o in observations {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"#555555\" fill-opacity=\"0.5\"/>\n",
            x.project(o.volume as f64),
            flip(y.project(o.travel_time_s))
        ));
    }

    // Fitted curves and legend.
    for (index, (label, points)) in curves.iter().enumerate() {
        let color = CURVE_COLORS[index % CURVE_COLORS.len()];
        let path: Vec<String> = points
            .iter()
            .map(|(v, t)| format!("{:.2},{:.2}", x.project(*v), flip(y.project(*t))))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            path.join(" ")
        ));
        let legend_y = MARGIN_TOP + 20.0 * index as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{legend_y:.1}\" x2=\"{:.1}\" y2=\"{legend_y:.1}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>\n",
            WIDTH - MARGIN_RIGHT + 16.0,
            WIDTH - MARGIN_RIGHT + 44.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
            WIDTH - MARGIN_RIGHT + 50.0,
            legend_y + 4.0,
            xml_escape(label)
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
