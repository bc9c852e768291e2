//! Saliency report CSV: `dim,S_val,S_act,S_dom,mu,rank,kept`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::mask::ranking;
use super::{Result, SaliencyError, SaliencyScores, SelectionMask};

pub const REPORT_HEADER: &str = "dim,S_val,S_act,S_dom,mu,rank,kept";

/// One parsed report row.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub dim: usize,
    pub per_label: [f64; 3],
    pub mu: f64,
    pub rank: usize,
    pub kept: bool,
}

/// Scores are printed with 9 significant digits; rank 1 is the most salient.
pub fn saliency_report_csv(scores: &SaliencyScores, mask: &SelectionMask) -> Result<String> {
    let dims = scores.dims();
    if mask.source_dims != dims {
        return Err(SaliencyError::DimensionMismatch {
            expected: dims,
            found: mask.source_dims,
        });
    }
    let mut rank = vec![0; dims];
    for (pos, k) in ranking(&scores.aggregated).into_iter().enumerate() {
        rank[k] = pos + 1;
    }
    let mut kept = vec![false; dims];
    for &k in &mask.kept {
        kept[k] = true;
    }
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for k in 0..dims {
        let s = scores.per_label[k];
        writeln!(
            out,
            "{k},{:.8e},{:.8e},{:.8e},{:.8e},{},{}",
            s[0],
            s[1],
            s[2],
            scores.aggregated[k],
            rank[k],
            u8::from(kept[k])
        )
        .unwrap();
    }
    Ok(out)
}

pub fn write_saliency_report(
    scores: &SaliencyScores,
    mask: &SelectionMask,
    dest: impl AsRef<Path>,
) -> Result<()> {
    let dest = dest.as_ref();
    fs::write(dest, saliency_report_csv(scores, mask)?).map_err(|source| SaliencyError::Io {
        path: dest.to_path_buf(),
        source,
    })
}

pub fn parse_saliency_report(text: &str) -> Result<Vec<ReportRow>> {
    let err = |reason: String| SaliencyError::Parse {
        what: "saliency report",
        reason,
    };
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(err("missing or unexpected header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(err(format!("row {}: expected 7 fields", i + 1)));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("row {}: {e}", i + 1)));
            let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("row {}: {e}", i + 1)));
            Ok(ReportRow {
                dim: int(f[0])?,
                per_label: [num(f[1])?, num(f[2])?, num(f[3])?],
                mu: num(f[4])?,
                rank: int(f[5])?,
                kept: match f[6] {
                    "1" => true,
                    "0" => false,
                    other => return Err(err(format!("row {}: kept '{other}'", i + 1))),
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saliency::{rank_and_select, Method};

    fn scores(agg: &[f64]) -> SaliencyScores {
        let rows: Vec<[f64; 3]> = agg.iter().map(|a| [*a, a * 0.5, a * 1.5]).collect();
        SaliencyScores {
            method: Method::Ccs,
            per_label: rows.clone(),
            aggregated: agg.to_vec(),
            base_term: rows,
            gamma_term: vec![[0.0; 3]; agg.len()],
        }
    }

    #[test]
    fn two_dims_three_lines() {
        let s = scores(&[0.2, 0.7]);
        let m = rank_and_select(&s, 0.5).unwrap();
        let csv = saliency_report_csv(&s, &m).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], REPORT_HEADER);
        assert!(lines[1].ends_with(",2,0"));
        assert!(lines[2].ends_with(",1,1"));
    }

    #[test]
    fn ranks_form_permutation_and_scores_round_trip() {
        let agg: Vec<f64> = (0..17).map(|i| ((i * 7919) % 23) as f64 / 23.0 + 1e-3 * i as f64).collect();
        let s = scores(&agg);
        let m = rank_and_select(&s, 0.4).unwrap();
        let rows = parse_saliency_report(&saliency_report_csv(&s, &m).unwrap()).unwrap();
        let mut ranks: Vec<usize> = rows.iter().map(|r| r.rank).collect();
        ranks.sort_unstable();
        assert_eq!(ranks, (1..=17).collect::<Vec<_>>());
        for r in &rows {
            assert!((r.mu - agg[r.dim]).abs() <= 1e-8 * agg[r.dim].abs().max(1e-300));
            assert_eq!(r.kept, m.kept.contains(&r.dim));
        }
    }
}
