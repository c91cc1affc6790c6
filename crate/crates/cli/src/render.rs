//! Plain-text tables for a run report.

use std::fmt::Write;

use advsig::experiment::{DetectionRow, Report};

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn opt(v: Option<f64>, f: fn(f64) -> String) -> String {
    v.map_or_else(|| "-".to_string(), f)
}

fn detection_table(out: &mut String, rows: &[DetectionRow]) {
    writeln!(out, "{:<12} {:>7} {:>8} {:>8} {:>10} {:>10}", "attack", "n", "AUC", "FS AUC", "med legit", "med adv").unwrap();
    for r in rows {
        writeln!(
            out,
            "{:<12} {:>7} {:>8.4} {:>8.4} {:>10.4} {:>10.4}",
            r.attack, r.samples, r.auc, r.fs_auc, r.median_legitimate, r.median_adversarial
        )
        .unwrap();
    }
}

pub fn tables(report: &Report) -> String {
    let mut out = String::new();

    writeln!(out, "Models").unwrap();
    writeln!(out, "{:<12} {:>10} {:>10} {:>12}", "model", "train %", "test %", "confidence %").unwrap();
    for m in &report.models {
        writeln!(
            out,
            "{:<12} {:>10} {:>10} {:>12}",
            m.name,
            pct(m.train_accuracy),
            pct(m.test_accuracy),
            pct(m.test_confidence)
        )
        .unwrap();
    }

    writeln!(out, "\nAttack sets").unwrap();
    writeln!(
        out,
        "{:<10} {:<12} {:>9} {:>9} {:>10} {:>12} {:>10} {:>8}",
        "target", "attack", "attempted", "retained", "accuracy %", "confidence %", "crafting %", "mean L2"
    )
    .unwrap();
    for s in &report.attack_sets {
        writeln!(
            out,
            "{:<10} {:<12} {:>9} {:>9} {:>10} {:>12} {:>10} {:>8}",
            s.target,
            s.attack,
            s.attempted,
            s.retained,
            pct(s.accuracy),
            opt(s.confidence, pct),
            opt(s.crafting_accuracy, pct),
            opt(s.mean_l2, |v| format!("{v:.3}"))
        )
        .unwrap();
    }

    writeln!(out, "\nWhite-box detection").unwrap();
    detection_table(&mut out, &report.white_box);

    if let Some(r) = &report.adversarial_training {
        writeln!(out, "\nAdversarial training (FGSM epsilon {})", r.epsilon).unwrap();
        writeln!(out, "{:<10} {:>10} {:>10}", "", "clean %", "FGSM %").unwrap();
        writeln!(out, "{:<10} {:>10} {:>10}", "before", pct(r.clean_accuracy_before), pct(r.fgsm_accuracy_before)).unwrap();
        writeln!(out, "{:<10} {:>10} {:>10}", "after", pct(r.clean_accuracy_after), pct(r.fgsm_accuracy_after)).unwrap();
    }

    if !report.hardened_white_box.is_empty() {
        writeln!(out, "\nWhite-box detection against the hardened model").unwrap();
        detection_table(&mut out, &report.hardened_white_box);
    }

    if !report.ablation.is_empty() {
        writeln!(out, "\nDistortion ablation (AUC / FS AUC)").unwrap();
        for a in &report.ablation {
            writeln!(out, "{:<30} {:<12} {:>8.4} {:>8.4}", a.distortions, a.attack, a.auc, a.fs_auc).unwrap();
        }
    }

    if let Some(b) = &report.black_box {
        writeln!(
            out,
            "\nBlack-box detection at {}% FPR ({} calibration, {} held-out samples)",
            pct(b.target_fpr),
            b.calibration_samples,
            b.held_out_samples
        )
        .unwrap();
        for (method, row) in [("ours", &b.ours), ("FS", &b.fs)] {
            write!(
                out,
                "{:<6} threshold {:.4}  legit pass {}%",
                method,
                row.threshold,
                pct(1.0 - row.held_out_rejection)
            )
            .unwrap();
            for d in &row.detection {
                write!(out, "  {} {}% (n={})", d.attack, opt(d.rate, pct), d.samples).unwrap();
            }
            writeln!(out).unwrap();
        }
    }
    out
}
