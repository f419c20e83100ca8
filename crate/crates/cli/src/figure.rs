//! Static SVG rendering of scan results: one panel per lag, effect
//! estimates against the threshold with 95% interval whiskers and a zero
//! reference line. Pure function of the scan rows, so figures can be
//! regenerated offline from the emitted CSV.

use bymscan::scan::ScanCellResult;

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 48.0;

struct Panel {
    lag: usize,
    points: Vec<(f64, f64, f64, f64)>, // (c, mean, low, high)
}

/// Renders the beta-vs-threshold figure for cells of one outcome.
/// Skipped cells are omitted from their panel.
pub fn scan_beta_svg(cells: &[&ScanCellResult], outcome_label: &str) -> String {
    let mut lags: Vec<usize> = cells.iter().map(|c| c.lag).collect();
    lags.sort_unstable();
    lags.dedup();

    let panels: Vec<Panel> = lags
        .iter()
        .map(|&lag| Panel {
            lag,
            points: cells
                .iter()
                .filter(|c| c.lag == lag)
                .filter_map(|c| {
                    c.report
                        .as_ref()
                        .map(|r| (c.threshold_c, r.beta.mean, r.beta.low, r.beta.high))
                })
                .collect(),
        })
        .collect();

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min: f64 = 0.0;
    let mut y_max: f64 = 0.0;
    for cell in cells {
        x_min = x_min.min(cell.threshold_c);
        x_max = x_max.max(cell.threshold_c);
        if let Some(r) = &cell.report {
            y_min = y_min.min(r.beta.low);
            y_max = y_max.max(r.beta.high);
        }
    }
    if !x_min.is_finite() {
        x_min = 0.0;
        x_max = 1.0;
    }
    if x_min == x_max {
        x_min -= 1.0;
        x_max += 1.0;
    }
    let y_pad = (y_max - y_min).max(1e-9) * 0.08;
    y_min -= y_pad;
    y_max += y_pad;

    let total_w = MARGIN_L + panels.len() as f64 * PANEL_W + MARGIN_R;
    let total_h = MARGIN_T + PANEL_H + MARGIN_B;
    let plot_h = PANEL_H;
    let sx = |panel_idx: usize, c: f64| -> f64 {
        let inner = PANEL_W - 24.0;
        MARGIN_L + panel_idx as f64 * PANEL_W + 12.0 + (c - x_min) / (x_max - x_min) * inner
    };
    let sy = |v: f64| -> f64 { MARGIN_T + (y_max - v) / (y_max - y_min) * plot_h };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total_w:.0}\" height=\"{total_h:.0}\" \
         viewBox=\"0 0 {total_w:.0} {total_h:.0}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"18\" font-size=\"14\">effect of exceeding the threshold ({outcome_label})</text>\n",
        MARGIN_L
    ));

    // Shared y axis with ticks.
    let n_ticks = 5;
    for t in 0..=n_ticks {
        let v = y_min + (y_max - y_min) * t as f64 / n_ticks as f64;
        let y = sy(v);
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{y:.1}\" text-anchor=\"end\" dominant-baseline=\"middle\">{v:.2}</text>\n",
            MARGIN_L - 8.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{:.1}\" transform=\"rotate(-90 14 {:.1})\" text-anchor=\"middle\">beta (95% interval)</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    ));

    for (pi, panel) in panels.iter().enumerate() {
        let x0 = MARGIN_L + pi as f64 * PANEL_W;
        svg.push_str(&format!(
            "<g class=\"panel\" data-lag=\"{}\">\n",
            panel.lag
        ));
        svg.push_str(&format!(
            "<rect x=\"{x0:.1}\" y=\"{MARGIN_T:.1}\" width=\"{PANEL_W:.1}\" height=\"{plot_h:.1}\" \
             fill=\"none\" stroke=\"#888\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">lag = {} days</text>\n",
            x0 + PANEL_W / 2.0,
            MARGIN_T - 8.0,
            panel.lag
        ));
        // Zero reference line.
        let zy = sy(0.0);
        if zy >= MARGIN_T && zy <= MARGIN_T + plot_h {
            svg.push_str(&format!(
                "<line x1=\"{x0:.1}\" y1=\"{zy:.1}\" x2=\"{:.1}\" y2=\"{zy:.1}\" \
                 stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n",
                x0 + PANEL_W
            ));
        }
        for &(c, mean, low, high) in &panel.points {
            let x = sx(pi, c);
            svg.push_str(&format!(
                "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#1f4e8c\" stroke-width=\"1.5\"/>\n",
                sy(low),
                sy(high)
            ));
            for v in [low, high] {
                svg.push_str(&format!(
                    "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#1f4e8c\" stroke-width=\"1.5\"/>\n",
                    x - 4.0,
                    sy(v),
                    x + 4.0,
                    sy(v)
                ));
            }
            svg.push_str(&format!(
                "<circle cx=\"{x:.1}\" cy=\"{:.1}\" r=\"3.2\" fill=\"#1f4e8c\"/>\n",
                sy(mean)
            ));
            // X tick labels under each threshold.
            svg.push_str(&format!(
                "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{c}</text>\n",
                MARGIN_T + plot_h + 16.0
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">threshold c (%)</text>\n",
            x0 + PANEL_W / 2.0,
            MARGIN_T + plot_h + 34.0
        ));
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    svg
}
