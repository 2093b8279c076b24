//! Multi-seed metric reports, paired t-tests and the results table.

use std::fs;
use std::path::Path;

use sare_core::eval::{CompensatedSum, MetricSummary};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub hr: f64,
    pub map: f64,
    pub ndcg: f64,
}

impl From<MetricSummary> for Metrics {
    fn from(s: MetricSummary) -> Self {
        Self {
            hr: s.hr,
            map: s.map,
            ndcg: s.ndcg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub hr: f64,
    pub map: f64,
    pub ndcg: f64,
}

/// Per-list metrics, kept only when list-level pairing is requested.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ListMetrics {
    pub seed: u64,
    pub list_id: u64,
    pub hr: f64,
    pub ap: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

impl TTest {
    pub fn stars(&self) -> &'static str {
        if self.p < 0.01 {
            "**"
        } else if self.p < 0.05 {
            "*"
        } else {
            ""
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    #[default]
    Seed,
    List,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub baseline_variant: String,
    pub pairing: Pairing,
    pub hr: TTest,
    pub map: TTest,
    pub ndcg: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub variant: String,
    pub k: usize,
    pub seeds: Vec<SeedMetrics>,
    pub mean: Metrics,
    /// Sample standard deviation across seeds; zero for a single seed.
    pub std: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lists: Vec<ListMetrics>,
}

fn mean(xs: &[f64]) -> f64 {
    let mut s = CompensatedSum::default();
    xs.iter().for_each(|&x| s.add(x));
    s.total() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let mut s = CompensatedSum::default();
    xs.iter().for_each(|&x| s.add((x - m) * (x - m)));
    (s.total() / (xs.len() - 1) as f64).sqrt()
}

/// Two-sided paired t-test on `x − y`. A constant nonzero difference gives
/// `t = ±f64::MAX` (JSON has no infinity) and `p = 0`.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<TTest> {
    if x.len() != y.len() {
        return Err(Error::Config(format!(
            "paired samples differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Config("paired t-test needs at least two pairs".into()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let m = mean(&d);
    let sd = sample_std(&d);
    let df = n - 1;
    if sd == 0.0 {
        return Ok(if m == 0.0 {
            TTest { t: 0.0, p: 1.0, df }
        } else {
            TTest {
                t: f64::MAX.copysign(m),
                p: 0.0,
                df,
            }
        });
    }
    let t = m / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df is positive");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, p, df })
}

impl MetricsReport {
    pub fn new(model: &str, variant: &str, k: usize, seeds: Vec<SeedMetrics>) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::Config("report needs at least one seed".into()));
        }
        let col = |f: fn(&SeedMetrics) -> f64| seeds.iter().map(f).collect::<Vec<f64>>();
        let (hr, map, ndcg) = (col(|s| s.hr), col(|s| s.map), col(|s| s.ndcg));
        Ok(Self {
            model: model.to_string(),
            variant: variant.to_string(),
            k,
            mean: Metrics {
                hr: mean(&hr),
                map: mean(&map),
                ndcg: mean(&ndcg),
            },
            std: Metrics {
                hr: sample_std(&hr),
                map: sample_std(&map),
                ndcg: sample_std(&ndcg),
            },
            seeds,
            comparison: None,
            lists: Vec::new(),
        })
    }

    pub fn seed_ids(&self) -> Vec<u64> {
        self.seeds.iter().map(|s| s.seed).collect()
    }

    /// Paired tests of this report against `baseline`, stored in `comparison`.
    pub fn compare(&mut self, baseline: &MetricsReport, pairing: Pairing) -> Result<()> {
        if self.seed_ids() != baseline.seed_ids() {
            return Err(Error::Config(format!(
                "seed mismatch: report has {:?}, baseline `{}` has {:?}",
                self.seed_ids(),
                baseline.model,
                baseline.seed_ids()
            )));
        }
        if self.k != baseline.k {
            return Err(Error::Config(format!(
                "cutoff mismatch: k={} vs baseline k={}",
                self.k, baseline.k
            )));
        }
        let (hr, map, ndcg) = match pairing {
            Pairing::Seed => {
                let col = |r: &MetricsReport, f: fn(&SeedMetrics) -> f64| r.seeds.iter().map(f).collect::<Vec<_>>();
                (
                    paired_t_test(&col(self, |s| s.hr), &col(baseline, |s| s.hr))?,
                    paired_t_test(&col(self, |s| s.map), &col(baseline, |s| s.map))?,
                    paired_t_test(&col(self, |s| s.ndcg), &col(baseline, |s| s.ndcg))?,
                )
            }
            Pairing::List => {
                let key = |l: &ListMetrics| (l.seed, l.list_id);
                let mine: Vec<_> = self.lists.iter().map(key).collect();
                let theirs: Vec<_> = baseline.lists.iter().map(key).collect();
                if mine.is_empty() || mine != theirs {
                    return Err(Error::Config(
                        "list pairing needs both reports to carry the same per-list metrics".into(),
                    ));
                }
                let col = |r: &MetricsReport, f: fn(&ListMetrics) -> f64| r.lists.iter().map(f).collect::<Vec<_>>();
                (
                    paired_t_test(&col(self, |l| l.hr), &col(baseline, |l| l.hr))?,
                    paired_t_test(&col(self, |l| l.ap), &col(baseline, |l| l.ap))?,
                    paired_t_test(&col(self, |l| l.ndcg), &col(baseline, |l| l.ndcg))?,
                )
            }
        };
        self.comparison = Some(Comparison {
            baseline: baseline.model.clone(),
            baseline_variant: baseline.variant.clone(),
            pairing,
            hr,
            map,
            ndcg,
        });
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        fs::write(path, self.to_json()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

/// Aligned table with one row per report. Stars mark significance against
/// each report's baseline: `*` p < 0.05, `**` p < 0.01.
pub fn render_table(reports: &[&MetricsReport]) -> String {
    let k = reports.first().map_or(0, |r| r.k);
    let header = [
        "model".to_string(),
        "variant".to_string(),
        format!("HR@{k}"),
        format!("MAP@{k}"),
        format!("NDCG@{k}"),
    ];
    let mut rows = vec![header];
    for r in reports {
        let cell = |m: f64, s: f64, test: Option<TTest>| {
            let stars = test.map_or("", |t| t.stars());
            if r.seeds.len() > 1 {
                format!("{m:.4}±{s:.4}{stars}")
            } else {
                format!("{m:.4}{stars}")
            }
        };
        let c = r.comparison.as_ref();
        rows.push([
            r.model.clone(),
            r.variant.clone(),
            cell(r.mean.hr, r.std.hr, c.map(|c| c.hr)),
            cell(r.mean.map, r.std.map, c.map(|c| c.map)),
            cell(r.mean.ndcg, r.std.ndcg, c.map(|c| c.ndcg)),
        ]);
    }
    let widths: Vec<usize> = (0..5)
        .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (n, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                let pad = w - c.chars().count();
                if i < 2 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if n == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}
