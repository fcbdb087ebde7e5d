use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;

use crate::bundle::ReportBundle;
use crate::manifest::write_file;
use crate::CliError;

fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

fn joined(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

pub fn topk_table(b: &ReportBundle) -> String {
    table(
        &["k", "subsets", "best", "mean", "median", "best_members"],
        b.report.top_k.iter().map(|r| {
            vec![
                r.k.to_string(),
                r.subsets.to_string(),
                r.best.to_string(),
                r.mean.to_string(),
                r.median.to_string(),
                joined(&r.best_members),
            ]
        }),
    )
}

/// One flat table per metric, keyed by file name.
pub fn tables(b: &ReportBundle) -> Vec<(&'static str, String)> {
    let r = &b.report;
    let members = table(
        &[
            "member",
            "source",
            "stage",
            "lambda0",
            "lambda1",
            "lambda2",
            "lambda3",
            "final_loss",
            "accuracy",
        ],
        b.checkpoints
            .iter()
            .zip(&r.members)
            .enumerate()
            .map(|(i, (c, m))| {
                let mut row = vec![i.to_string(), c.source.clone(), c.stage.to_string()];
                row.extend(c.lambda.iter().map(f64::to_string));
                row.extend([c.final_loss.to_string(), m.accuracy.to_string()]);
                row
            }),
    );
    let pairs = table(
        &["a", "b", "agreement", "two_guess"],
        r.pairs.iter().map(|p| {
            vec![
                p.a.to_string(),
                p.b.to_string(),
                p.agreement.to_string(),
                p.two_guess.to_string(),
            ]
        }),
    );
    let mut vote_rows = vec![vec![
        "majority".to_string(),
        r.majority_vote.accuracy.to_string(),
        r.majority_vote.ties.to_string(),
        joined(&r.majority_vote.delegates),
    ]];
    if let Some(t) = &r.tiered_vote {
        vote_rows.push(vec![
            "tiered".into(),
            t.accuracy.to_string(),
            t.ties.to_string(),
            joined(&t.delegates),
        ]);
    }
    let votes = table(&["method", "accuracy", "ties", "voters"], vote_rows);
    let filter = table(
        &["quorum", "confident", "confused", "confident_accuracy"],
        [vec![
            r.filter.quorum.to_string(),
            r.filter.confident.to_string(),
            r.filter.confused.to_string(),
            r.filter
                .confident_accuracy
                .map(|a| a.to_string())
                .unwrap_or_default(),
        ]],
    );
    let confusion = table(
        &["member", "true_label", "predicted_label", "count"],
        r.members.iter().enumerate().flat_map(|(i, m)| {
            m.confusion
                .counts
                .iter()
                .enumerate()
                .flat_map(move |(t, row)| {
                    row.iter().enumerate().map(move |(p, c)| {
                        vec![i.to_string(), t.to_string(), p.to_string(), c.to_string()]
                    })
                })
        }),
    );
    let prototypes = table(
        &[
            "member",
            "cluster",
            "mapped_label",
            "rank",
            "sample",
            "confidence",
            "super_label",
            "sub_label",
            "partial",
        ],
        r.prototypes.iter().enumerate().flat_map(|(i, rep)| {
            rep.clusters.iter().flat_map(move |c| {
                c.prototypes.iter().enumerate().map(move |(rank, p)| {
                    vec![
                        i.to_string(),
                        c.cluster.to_string(),
                        c.mapped_label.map(|l| l.to_string()).unwrap_or_default(),
                        rank.to_string(),
                        p.index.to_string(),
                        p.confidence.to_string(),
                        p.super_label.to_string(),
                        p.sub_label.to_string(),
                        c.partial.to_string(),
                    ]
                })
            })
        }),
    );
    let span = table(
        &["label", "distinct_subclasses", "subclasses"],
        r.prototype_span.iter().map(|s| {
            vec![
                s.label.to_string(),
                s.subclasses.len().to_string(),
                joined(&s.subclasses),
            ]
        }),
    );
    let states = table(
        &[
            "member",
            "step",
            "consistency",
            "mean_entropy",
            "pointwise_cross",
            "mean_cross",
            "total",
        ],
        b.trajectories.iter().enumerate().flat_map(|(i, t)| {
            t.records.iter().map(move |rec| {
                let mut row = vec![i.to_string(), rec.step.to_string()];
                row.extend(rec.terms.to_array().iter().map(f64::to_string));
                row
            })
        }),
    );
    let agreement = table(
        &["a", "b", "agreement"],
        r.agreement.iter().enumerate().flat_map(|(a, row)| {
            row.iter()
                .enumerate()
                .map(move |(bi, v)| vec![a.to_string(), bi.to_string(), v.to_string()])
        }),
    );
    vec![
        ("members.csv", members),
        ("topk.csv", topk_table(b)),
        ("agreement.csv", agreement),
        ("pairs.csv", pairs),
        ("votes.csv", votes),
        ("filter.csv", filter),
        ("confusion.csv", confusion),
        ("prototypes.csv", prototypes),
        ("prototype_span.csv", span),
        ("entropy_states.csv", states),
    ]
}

pub fn summary(b: &ReportBundle) -> String {
    let r = &b.report;
    let mut s = String::new();
    let _ = writeln!(s, "members: {}", r.members.len());
    let _ = writeln!(
        s,
        "samples: {} scored against {} {} labels",
        r.n_samples, r.n_labels, r.label_space
    );
    for (c, m) in b.checkpoints.iter().zip(&r.members) {
        let l = c.lambda;
        let _ = writeln!(
            s,
            "  {} lambda=({}, {}, {}, {}) accuracy={:.4}",
            c.source, l[0], l[1], l[2], l[3], m.accuracy
        );
    }
    let _ = writeln!(s, "best single accuracy: {:.4}", r.best_single());
    for row in &r.top_k {
        let _ = writeln!(
            s,
            "{}-guess: best={:.4} mean={:.4} median={:.4}",
            row.k, row.best, row.mean, row.median
        );
    }
    let _ = writeln!(s, "majority vote accuracy: {:.4}", r.majority_vote.accuracy);
    if let Some(t) = &r.tiered_vote {
        let _ = writeln!(s, "tiered vote accuracy: {:.4}", t.accuracy);
    }
    let _ = writeln!(
        s,
        "quorum {}: {} confident, {} confused",
        r.filter.quorum, r.filter.confident, r.filter.confused
    );
    s
}

/// Reads `report.json` from `bundle` and writes the flat tables plus
/// `summary.txt` into `out` (default `bundle/tables`).
pub fn cmd_report(bundle: &Path, out: Option<&Path>) -> Result<String, CliError> {
    if bundle.as_os_str().is_empty() {
        return Err(CliError::Usage("bundle path is empty".into()));
    }
    let path = bundle.join("report.json");
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "no report bundle at {}",
            bundle.display()
        )));
    }
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let b: ReportBundle =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| bundle.join("tables"));
    for (name, body) in tables(&b) {
        write_file(&dir, name, body.as_bytes())?;
    }
    let text = summary(&b);
    write_file(&dir, "summary.txt", text.as_bytes())?;
    Ok(text)
}
