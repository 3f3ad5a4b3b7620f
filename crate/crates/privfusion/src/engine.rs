//! Site-side transformation engine: applies a plan to a local table.
//!
//! Missing preconditions skip the action rather than fail, so re-applying a
//! stale plan is harmless and the protocol tolerates one site lagging a round.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregator::{MergeStrategy, TransformAction, TransformationPlan, UnmatchedPolicy};
use crate::table::{
    parse_instant, render_instant, ColumnData, DatasetTable, PrimitiveType, DATETIME_PATTERN,
    DATE_PATTERNS,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("plan for dataset '{plan}' applied to table '{table}'")]
    DatasetMismatch { plan: String, table: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedAction {
    /// Index of the action within the plan.
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellWarning {
    pub feature: String,
    pub row: usize,
    pub detail: String,
}

pub struct ApplyOutcome {
    pub table: DatasetTable,
    pub applied: usize,
    pub skipped: Vec<SkippedAction>,
    /// Per-cell soft failures (e.g. unparseable dates kept verbatim).
    pub cell_warnings: Vec<CellWarning>,
}

fn known_pattern(pattern: &str) -> bool {
    pattern == DATETIME_PATTERN || DATE_PATTERNS.contains(&pattern)
}

/// Render a float the way re-inference expects: always with a decimal part.
fn render_float(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

struct Working {
    columns: Vec<ColumnData>,
    row_count: usize,
}

impl Working {
    fn idx(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// Why an action would be skipped against the current schema, or None if it
/// applies. Shared by the executor and the pre-flight validator so both
/// routes agree by construction on precondition logic, while the validator
/// exercises it over an independently simulated schema.
fn precondition(
    action: &TransformAction,
    names: &[String],
    cells_of: &dyn Fn(&str) -> Vec<Option<String>>,
) -> Option<String> {
    let has = |n: &str| names.iter().any(|x| x == n);
    match action {
        TransformAction::Rename { from, to } => {
            if !has(from) {
                Some(format!("feature '{from}' not present"))
            } else if has(to) {
                Some(format!("target name '{to}' already present"))
            } else {
                None
            }
        }
        TransformAction::ReformatDate {
            feature,
            source_pattern,
            target_pattern,
        } => {
            if !has(feature) {
                Some(format!("feature '{feature}' not present"))
            } else if !known_pattern(source_pattern) {
                Some(format!("unknown source pattern '{source_pattern}'"))
            } else if !known_pattern(target_pattern) {
                Some(format!("unknown target pattern '{target_pattern}'"))
            } else {
                None
            }
        }
        TransformAction::CastType {
            feature,
            target_type,
        } => {
            if !has(feature) {
                return Some(format!("feature '{feature}' not present"));
            }
            let cells = cells_of(feature);
            let ok = match target_type {
                PrimitiveType::Integer => cells
                    .iter()
                    .flatten()
                    .all(|c| crate::table::is_integer_text(c)),
                PrimitiveType::Float => cells
                    .iter()
                    .flatten()
                    .all(|c| crate::table::is_integer_text(c) || crate::table::is_float_text(c)),
                PrimitiveType::Boolean => cells
                    .iter()
                    .flatten()
                    .all(|c| matches!(c.to_ascii_lowercase().as_str(), "true" | "false")),
                PrimitiveType::Date => {
                    let (t, _) = crate::table::infer_column_type(&cells);
                    t == PrimitiveType::Date
                }
                PrimitiveType::DateTime => {
                    let (t, _) = crate::table::infer_column_type(&cells);
                    t == PrimitiveType::DateTime
                }
                // Any column reads as text.
                PrimitiveType::String | PrimitiveType::Categorical => true,
            };
            if ok {
                None
            } else {
                Some(format!("cells do not all parse as {target_type:?}"))
            }
        }
        TransformAction::MapValues { feature, .. }
        | TransformAction::DropFeature { feature }
        | TransformAction::ScaleNumeric { feature, .. } => {
            if has(feature) {
                None
            } else {
                Some(format!("feature '{feature}' not present"))
            }
        }
        TransformAction::MergeFeatures {
            sources, target, ..
        } => {
            let mut seen = std::collections::BTreeSet::new();
            if let Some(missing) = sources.iter().find(|s| !has(s)) {
                Some(format!("source feature '{missing}' not present"))
            } else if let Some(dup) = sources.iter().find(|s| !seen.insert(s.as_str())) {
                Some(format!("duplicate source feature '{dup}'"))
            } else if has(target) && !sources.iter().any(|s| s == target) {
                Some(format!("target name '{target}' already present"))
            } else {
                None
            }
        }
        TransformAction::AddConstantFeature { name, .. } => {
            if has(name) {
                Some(format!("feature name '{name}' already present"))
            } else {
                None
            }
        }
    }
}

fn apply_action(action: &TransformAction, work: &mut Working, warnings: &mut Vec<CellWarning>) {
    match action {
        TransformAction::Rename { from, to } => {
            let i = work.idx(from).unwrap();
            work.columns[i].name = to.clone();
        }
        TransformAction::ReformatDate {
            feature,
            source_pattern,
            target_pattern,
        } => {
            let i = work.idx(feature).unwrap();
            for (row, cell) in work.columns[i].cells.iter_mut().enumerate() {
                let Some(text) = cell.as_deref() else { continue };
                match parse_instant(source_pattern, text)
                    .and_then(|inst| render_instant(target_pattern, inst))
                {
                    Some(rendered) => *cell = Some(rendered),
                    None => warnings.push(CellWarning {
                        feature: feature.clone(),
                        row,
                        detail: format!("'{text}' does not match {source_pattern}; kept as-is"),
                    }),
                }
            }
            work.columns[i].reinfer();
        }
        TransformAction::CastType {
            feature,
            target_type,
        } => {
            let i = work.idx(feature).unwrap();
            let col = &mut work.columns[i];
            match target_type {
                PrimitiveType::Integer => {
                    for cell in col.cells.iter_mut().flatten() {
                        *cell = cell.trim().parse::<i64>().unwrap().to_string();
                    }
                }
                PrimitiveType::Float => {
                    for cell in col.cells.iter_mut().flatten() {
                        *cell = render_float(cell.trim().parse::<f64>().unwrap());
                    }
                }
                PrimitiveType::Boolean => {
                    for cell in col.cells.iter_mut().flatten() {
                        *cell = cell.to_ascii_lowercase();
                    }
                }
                // Text and already-conforming temporal casts leave cells
                // untouched; the type is whatever re-inference reads back.
                _ => {}
            }
            col.reinfer();
        }
        TransformAction::MapValues {
            feature,
            mapping,
            unmatched_policy,
        } => {
            let i = work.idx(feature).unwrap();
            let mut drop_rows = vec![false; work.row_count];
            for (row, cell) in work.columns[i].cells.iter_mut().enumerate() {
                let Some(text) = cell.as_deref() else { continue };
                if let Some(replacement) = mapping.get(text) {
                    *cell = Some(replacement.clone());
                } else {
                    match unmatched_policy {
                        UnmatchedPolicy::Keep => {}
                        UnmatchedPolicy::ToMissing => *cell = None,
                        UnmatchedPolicy::DropRow => drop_rows[row] = true,
                    }
                }
            }
            if drop_rows.iter().any(|&d| d) {
                for col in &mut work.columns {
                    let mut keep = drop_rows.iter().map(|d| !d);
                    col.cells.retain(|_| keep.next().unwrap());
                }
                work.row_count = work.columns[0].cells.len();
            }
            for col in &mut work.columns {
                col.reinfer();
            }
        }
        TransformAction::MergeFeatures {
            sources,
            target,
            strategy,
        } => {
            let src_idx: Vec<usize> = sources.iter().map(|s| work.idx(s).unwrap()).collect();
            let mut merged: Vec<Option<String>> = Vec::with_capacity(work.row_count);
            for row in 0..work.row_count {
                let value = match strategy {
                    MergeStrategy::CoalesceFirst => src_idx
                        .iter()
                        .find_map(|&i| work.columns[i].cells[row].clone()),
                    MergeStrategy::Concat { separator } => {
                        let parts: Vec<&str> = src_idx
                            .iter()
                            .filter_map(|&i| work.columns[i].cells[row].as_deref())
                            .collect();
                        if parts.is_empty() {
                            None
                        } else {
                            Some(parts.join(separator))
                        }
                    }
                };
                merged.push(value);
            }
            let insert_at = *src_idx.iter().min().unwrap();
            let mut remove: Vec<usize> = src_idx.clone();
            remove.sort_unstable_by(|a, b| b.cmp(a));
            for i in remove {
                work.columns.remove(i);
            }
            work.columns
                .insert(insert_at, ColumnData::new(target.clone(), merged));
        }
        TransformAction::DropFeature { feature } => {
            let i = work.idx(feature).unwrap();
            work.columns.remove(i);
        }
        TransformAction::ScaleNumeric {
            feature,
            factor,
            offset,
        } => {
            let i = work.idx(feature).unwrap();
            for (row, cell) in work.columns[i].cells.iter_mut().enumerate() {
                let Some(text) = cell.as_deref() else { continue };
                match text.trim().parse::<f64>() {
                    Ok(v) if v.is_finite() => {
                        let scaled = v * factor + offset;
                        *cell = Some(if crate::table::is_integer_text(text)
                            && scaled.fract() == 0.0
                            && factor.fract() == 0.0
                            && offset.fract() == 0.0
                        {
                            format!("{}", scaled as i64)
                        } else {
                            render_float(scaled)
                        });
                    }
                    _ => warnings.push(CellWarning {
                        feature: feature.clone(),
                        row,
                        detail: format!("'{text}' is not numeric; kept as-is"),
                    }),
                }
            }
            work.columns[i].reinfer();
        }
        TransformAction::AddConstantFeature { name, value } => {
            let cell = if value.is_empty() {
                None
            } else {
                Some(value.clone())
            };
            let cells = vec![cell; work.row_count];
            work.columns.push(ColumnData::new(name.clone(), cells));
        }
    }
}

/// Apply every applicable action of a plan, in order, to a copy of the table.
pub fn apply_plan(table: &DatasetTable, plan: &TransformationPlan) -> Result<ApplyOutcome, EngineError> {
    if table.dataset_id != plan.dataset_id {
        return Err(EngineError::DatasetMismatch {
            plan: plan.dataset_id.clone(),
            table: table.dataset_id.clone(),
        });
    }
    let mut work = Working {
        columns: table.columns.clone(),
        row_count: table.row_count,
    };
    let mut applied = 0;
    let mut skipped = Vec::new();
    let mut cell_warnings = Vec::new();

    for (index, action) in plan.actions.iter().enumerate() {
        let names: Vec<String> = work.columns.iter().map(|c| c.name.clone()).collect();
        let cells_of = |name: &str| {
            work.columns
                .iter()
                .find(|c| c.name == name)
                .map(|c| c.cells.clone())
                .unwrap_or_default()
        };
        if let Some(reason) = precondition(action, &names, &cells_of) {
            skipped.push(SkippedAction { index, reason });
            continue;
        }
        apply_action(action, &mut work, &mut cell_warnings);
        applied += 1;
    }

    let table = DatasetTable::new(table.dataset_id.clone(), work.columns)
        .expect("engine preserves table invariants");
    Ok(ApplyOutcome {
        table,
        applied,
        skipped,
        cell_warnings,
    })
}

/// Dry-run a plan and report which actions would be skipped, without touching
/// the table. Simulates the schema and cell evolution independently of
/// `apply_plan`'s executor, so the two routes can be cross-checked.
pub fn validate_plan(table: &DatasetTable, plan: &TransformationPlan) -> Result<Vec<SkippedAction>, EngineError> {
    if table.dataset_id != plan.dataset_id {
        return Err(EngineError::DatasetMismatch {
            plan: plan.dataset_id.clone(),
            table: table.dataset_id.clone(),
        });
    }
    // Shadow model: (name, cells) pairs evolved per action.
    let mut model: Vec<(String, Vec<Option<String>>)> = table
        .columns
        .iter()
        .map(|c| (c.name.clone(), c.cells.clone()))
        .collect();
    let mut skipped = Vec::new();

    for (index, action) in plan.actions.iter().enumerate() {
        let names: Vec<String> = model.iter().map(|(n, _)| n.clone()).collect();
        let cells_of = |name: &str| {
            model
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, c)| c.clone())
                .unwrap_or_default()
        };
        if let Some(reason) = precondition(action, &names, &cells_of) {
            skipped.push(SkippedAction { index, reason });
            continue;
        }
        simulate(action, &mut model);
    }
    Ok(skipped)
}

/// Minimal re-implementation of each action's effect on (name, cells) pairs.
fn simulate(action: &TransformAction, model: &mut Vec<(String, Vec<Option<String>>)>) {
    let pos = |model: &Vec<(String, Vec<Option<String>>)>, n: &str| {
        model.iter().position(|(name, _)| name == n)
    };
    match action {
        TransformAction::Rename { from, to } => {
            let i = pos(model, from).unwrap();
            model[i].0 = to.clone();
        }
        TransformAction::ReformatDate {
            feature,
            source_pattern,
            target_pattern,
        } => {
            let i = pos(model, feature).unwrap();
            for cell in model[i].1.iter_mut() {
                if let Some(text) = cell.as_deref() {
                    if let Some(out) = parse_instant(source_pattern, text)
                        .and_then(|inst| render_instant(target_pattern, inst))
                    {
                        *cell = Some(out);
                    }
                }
            }
        }
        TransformAction::CastType {
            feature,
            target_type,
        } => {
            let i = pos(model, feature).unwrap();
            for cell in model[i].1.iter_mut().flatten() {
                match target_type {
                    PrimitiveType::Integer => *cell = cell.trim().parse::<i64>().unwrap().to_string(),
                    PrimitiveType::Float => *cell = render_float(cell.trim().parse::<f64>().unwrap()),
                    PrimitiveType::Boolean => *cell = cell.to_ascii_lowercase(),
                    _ => {}
                }
            }
        }
        TransformAction::MapValues {
            feature,
            mapping,
            unmatched_policy,
        } => {
            let i = pos(model, feature).unwrap();
            let n = model[i].1.len();
            let mut drop = vec![false; n];
            for (row, cell) in model[i].1.iter_mut().enumerate() {
                let Some(text) = cell.as_deref() else { continue };
                if let Some(r) = mapping.get(text) {
                    *cell = Some(r.clone());
                } else {
                    match unmatched_policy {
                        UnmatchedPolicy::Keep => {}
                        UnmatchedPolicy::ToMissing => *cell = None,
                        UnmatchedPolicy::DropRow => drop[row] = true,
                    }
                }
            }
            if drop.iter().any(|&d| d) {
                for (_, cells) in model.iter_mut() {
                    let mut keep = drop.iter().map(|d| !d);
                    cells.retain(|_| keep.next().unwrap());
                }
            }
        }
        TransformAction::MergeFeatures {
            sources,
            target,
            strategy,
        } => {
            let idxs: Vec<usize> = sources.iter().map(|s| pos(model, s).unwrap()).collect();
            let rows = model[idxs[0]].1.len();
            let mut merged = Vec::with_capacity(rows);
            for row in 0..rows {
                merged.push(match strategy {
                    MergeStrategy::CoalesceFirst => {
                        idxs.iter().find_map(|&i| model[i].1[row].clone())
                    }
                    MergeStrategy::Concat { separator } => {
                        let parts: Vec<&str> =
                            idxs.iter().filter_map(|&i| model[i].1[row].as_deref()).collect();
                        if parts.is_empty() {
                            None
                        } else {
                            Some(parts.join(separator))
                        }
                    }
                });
            }
            let insert_at = *idxs.iter().min().unwrap();
            let mut remove = idxs;
            remove.sort_unstable_by(|a, b| b.cmp(a));
            for i in remove {
                model.remove(i);
            }
            model.insert(insert_at, (target.clone(), merged));
        }
        TransformAction::DropFeature { feature } => {
            let i = pos(model, feature).unwrap();
            model.remove(i);
        }
        TransformAction::ScaleNumeric {
            feature,
            factor,
            offset,
        } => {
            let i = pos(model, feature).unwrap();
            for cell in model[i].1.iter_mut() {
                let Some(text) = cell.as_deref() else { continue };
                if let Ok(v) = text.trim().parse::<f64>() {
                    if v.is_finite() {
                        let scaled = v * factor + offset;
                        *cell = Some(if crate::table::is_integer_text(text)
                            && scaled.fract() == 0.0
                            && factor.fract() == 0.0
                            && offset.fract() == 0.0
                        {
                            format!("{}", scaled as i64)
                        } else {
                            render_float(scaled)
                        });
                    }
                }
            }
        }
        TransformAction::AddConstantFeature { name, value } => {
            let rows = model.first().map(|(_, c)| c.len()).unwrap_or(0);
            let cell = if value.is_empty() { None } else { Some(value.clone()) };
            model.push((name.clone(), vec![cell; rows]));
        }
    }
}
