//! Self-contained HTML report with inline SVG precision-recall plots.

use std::fmt::Write;

use crate::eval::{EvalResults, MatchMode, PrCurve};

const PLOT: f64 = 240.0;
const PAD: f64 = 32.0;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn pct(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

/// Step plot of the precision envelope over recall.
fn pr_svg(title: &str, pr: &PrCurve) -> String {
    let side = PLOT + 2.0 * PAD;
    let px = |r: f64| PAD + r * PLOT;
    let py = |p: f64| PAD + (1.0 - p) * PLOT;
    let mut s = String::new();
    let _ = write!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{side}" viewBox="0 0 {side} {side}" role="img" aria-label="{t}">"##,
        t = escape(title)
    );
    let _ = write!(
        s,
        r##"<rect x="{PAD}" y="{PAD}" width="{PLOT}" height="{PLOT}" fill="none" stroke="#999"/>"##
    );
    for tick in [0.0, 0.5, 1.0] {
        let _ = write!(
            s,
            r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{tick}</text><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{tick}</text>"##,
            px(tick),
            side - PAD / 2.0,
            PAD - 4.0,
            py(tick) + 3.0
        );
    }
    let _ = write!(
        s,
        r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">recall</text><text x="10" y="{:.1}" font-size="10" transform="rotate(-90 10 {:.1})" text-anchor="middle">precision</text>"##,
        side / 2.0,
        side - 2.0,
        side / 2.0,
        side / 2.0
    );
    let env = pr.envelope();
    if !env.is_empty() {
        let mut d = format!("M{:.2},{:.2}", px(0.0), py(env[0]));
        let mut prev_r = 0.0;
        for (r, p) in pr.recall.iter().zip(&env) {
            if *r > prev_r {
                let _ = write!(d, " H{:.2} V{:.2}", px(*r), py(*p));
                prev_r = *r;
            } else {
                let _ = write!(d, " V{:.2}", py(*p));
            }
        }
        let _ = write!(s, r##"<path d="{d}" fill="none" stroke="#1f6feb" stroke-width="2"/>"##);
    }
    s.push_str("</svg>");
    s
}

/// Render evaluation results. The output depends only on `results`.
pub fn render_html(title: &str, results: &EvalResults) -> String {
    let mut h = String::new();
    let t = escape(title);
    let _ = write!(
        h,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{t}</title>\n<style>\n\
body{{font-family:sans-serif;margin:2em;color:#222}}\n\
table{{border-collapse:collapse;margin:1em 0}}\n\
td,th{{border:1px solid #ccc;padding:4px 10px;text-align:right}}\n\
th:first-child,td:first-child{{text-align:left}}\n\
.plots{{display:flex;flex-wrap:wrap;gap:1em}}\n\
figure{{margin:0}}\n\
</style>\n</head>\n<body>\n<h1>{t}</h1>\n"
    );
    let criterion = match results.criterion.mode {
        MatchMode::Point { tau } => format!("center distance &le; {tau} px"),
        MatchMode::Box { iou_min } => format!("IoU &ge; {iou_min}"),
    };
    let rule = if results.criterion.cell_center_rule {
        ", owning cell only"
    } else {
        ""
    };
    let _ = write!(
        h,
        "<table class=\"summary\">\n<tr><th>mAP</th><td>{}</td></tr>\n<tr><th>mean column-wise RMSE</th><td>{:.4}</td></tr>\n\
<tr><th>images</th><td>{}</td></tr>\n<tr><th>match rule</th><td>{criterion}{rule}</td></tr>\n\
<tr><th>count threshold</th><td>{}</td></tr>\n</table>\n",
        pct(results.map),
        results.mean_rmse,
        results.num_images,
        results.count_threshold
    );
    h.push_str("<h2>Per class</h2>\n<table class=\"classes\">\n<tr><th>class</th><th>AP</th><th>ground truth</th><th>detections</th><th>true positives</th><th>count RMSE</th></tr>\n");
    for c in &results.classes {
        let _ = writeln!(
            h,
            "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{:.4}</td></tr>",
            escape(&c.name),
            pct(c.ap),
            c.n_gt,
            c.n_det,
            c.true_positives,
            c.rmse
        );
    }
    h.push_str("</table>\n<h2>Precision-recall</h2>\n<div class=\"plots\">\n");
    for c in &results.classes {
        let label = format!("{} (AP {})", c.name, pct(c.ap));
        let _ = writeln!(
            h,
            "<figure>{}<figcaption>{}</figcaption></figure>",
            pr_svg(&label, &c.pr),
            escape(&label)
        );
    }
    h.push_str("</div>\n");
    if results.unknown_images.is_empty() && results.ignored_detections == 0 {
        h.push_str("<p>All detections matched known images and classes.</p>\n");
    } else {
        let _ = writeln!(
            h,
            "<h2>Excluded</h2>\n<p>{} detections had out-of-range class ids.</p>\n<p>Unknown image ids:</p>\n<ul>",
            results.ignored_detections
        );
        for id in &results.unknown_images {
            let _ = writeln!(h, "<li>{}</li>", escape(id));
        }
        h.push_str("</ul>\n");
    }
    h.push_str("</body>\n</html>\n");
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{Detection, ObjectAnnotation};
    use crate::eval::{evaluate, EvalConfig, MatchCriterion};
    use crate::labels::LabelSet;

    fn results(score_fp: Option<f64>) -> EvalResults {
        let mut labels = LabelSet::new();
        labels.insert("a".into(), vec![ObjectAnnotation::point(0, 10.0, 10.0)]);
        let mut dets = vec![Detection {
            image_id: "a".into(),
            class_id: 0,
            score: 0.8,
            x: 10.0,
            y: 10.0,
            w: None,
            h: None,
            cell: None,
        }];
        if let Some(s) = score_fp {
            let mut fp = dets[0].clone();
            fp.score = s;
            fp.x = 100.0;
            dets.push(fp);
        }
        let cfg = EvalConfig {
            class_names: vec!["<crab>".into()],
            criterion: MatchCriterion::point(16.0),
            grid: None,
            count_threshold: 0.5,
        };
        evaluate(&dets, &labels, &cfg).unwrap()
    }

    #[test]
    fn shows_ap_and_escapes() {
        let html = render_html("run", &results(Some(0.9)));
        assert!(html.contains("50.0%"));
        assert!(html.contains("&lt;crab&gt;"));
        assert!(!html.contains("<crab>"));
        assert!(html.contains("<svg"));
        assert_eq!(html.matches("<svg").count(), html.matches("</svg>").count());
        assert!(
            !html.contains("http://") || html.matches("http://").count() == html.matches("xmlns=\"http://").count()
        );
    }

    #[test]
    fn deterministic() {
        assert_eq!(render_html("x", &results(None)), render_html("x", &results(None)));
        assert!(render_html("x", &results(None)).contains("100.0%"));
    }
}
