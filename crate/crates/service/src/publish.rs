//! Loads stage outputs into the store as flags and chart-ready plot data.

use std::collections::BTreeMap;

use gaswatch_core::clustering::GroupResult;
use gaswatch_core::ingestion::AccountMeta;
use gaswatch_core::pipeline::AnalysisOutput;
use gaswatch_core::preprocess::MonthlySeries;
use gaswatch_core::proportions::FiscalYearVector;
use serde::Serialize;
use serde_json::{json, Value};

use crate::store::{FlagRecord, Result, Store, StoreError};

pub const KIND_SERIES: &str = "series";
pub const KIND_BAND: &str = "band";
pub const KIND_BOXPLOT: &str = "boxplot";
pub const KIND_ABLR: &str = "ablr";
pub const KIND_GROUPS: &str = "groups";
pub const KIND_CLUSTERS: &str = "clusters";
pub const ALL_KEY: &str = "all";

pub fn group_year_key(group_id: &str, fiscal_year: i32) -> String {
    format!("{group_id}/{fiscal_year}")
}

fn value(v: &impl Serialize) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| StoreError::Corrupt(e.to_string()))
}

/// Stores an analysis run's flags, account metadata and plot data.
pub fn publish_analysis(
    store: &Store,
    run_id: &str,
    analysis: &AnalysisOutput,
    accounts: &[AccountMeta],
    series: &[MonthlySeries],
    vectors: &[FiscalYearVector],
) -> Result<Vec<FlagRecord>> {
    store.upsert_accounts(accounts)?;
    let stored = store.store_flags(run_id, &analysis.flags)?;
    let fy = analysis.fiscal_year;

    let mut members: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (account, group) in &analysis.groups {
        members.entry(group.as_str()).or_default().push(account.as_str());
    }
    let groups: Vec<Value> = members
        .iter()
        .map(|(group_id, ids)| {
            let ablr = analysis.ablr.iter().find(|a| a.group_id == *group_id);
            json!({
                "group_id": group_id,
                "fiscal_year": fy,
                "members": ids,
                "decision": ablr.and_then(|a| a.result.as_ref()).map(|r| r.decision),
                "flagged_account": ablr.and_then(|a| a.result.as_ref()).and_then(|r| r.flagged_account.clone()),
            })
        })
        .collect();
    store.put_plot_data(run_id, KIND_GROUPS, ALL_KEY, &Value::Array(groups))?;

    for band in &analysis.bands {
        store.put_plot_data(run_id, KIND_BAND, &group_year_key(&band.group_id, band.fiscal_year), &value(band)?)?;
    }
    for b in &analysis.boxplots {
        let logits: BTreeMap<&str, [f64; 12]> = vectors
            .iter()
            .filter(|v| v.fiscal_year == b.fiscal_year && analysis.groups.get(&v.account_id) == Some(&b.group_id))
            .filter_map(|v| v.shape.as_ref().map(|s| (v.account_id.as_str(), s.y)))
            .collect();
        let payload = json!({
            "group_id": b.group_id,
            "fiscal_year": b.fiscal_year,
            "months": b.months,
            "logits": logits,
        });
        store.put_plot_data(run_id, KIND_BOXPLOT, &group_year_key(&b.group_id, b.fiscal_year), &payload)?;
    }
    for a in &analysis.ablr {
        store.put_plot_data(run_id, KIND_ABLR, &a.group_id, &value(a)?)?;
    }
    for s in series {
        let group_id = analysis.groups.get(&s.account_id);
        let years: Vec<&FiscalYearVector> = vectors.iter().filter(|v| v.account_id == s.account_id).collect();
        let c_ratio = group_id
            .and_then(|g| analysis.ablr.iter().find(|a| &a.group_id == g))
            .and_then(|a| a.c_ratios.get(&s.account_id));
        let payload = json!({
            "account_id": s.account_id,
            "group_id": group_id,
            "fiscal_year": fy,
            "series": s,
            "fiscal_years": years,
            "c_ratio": c_ratio,
            "c_ratio_alert": gaswatch_core::ablr::C_RATIO_ALERT,
        });
        store.put_plot_data(run_id, KIND_SERIES, &s.account_id, &payload)?;
    }
    Ok(stored)
}

pub fn publish_clusters(store: &Store, run_id: &str, accounts: &[AccountMeta], result: &GroupResult) -> Result<()> {
    store.upsert_accounts(accounts)?;
    store.put_plot_data(run_id, KIND_CLUSTERS, ALL_KEY, &value(result)?)
}
