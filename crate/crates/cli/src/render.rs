//! The forecast document shared by `yardcast forecast` and the HTTP service.

use serde_json::{json, Value};
use yardcast::artifact::ModelArtifact;
use yardcast::forecast::business_day_horizon;
use yardcast::series::format_ts;
use yardcast::{predict, CalendarSpec, ForecastResult, Result};

/// Longest horizon served, in business days.
pub const MAX_DAYS: usize = 60;

/// Hourly forecast covering the next `days` business days after the
/// artifact's origin.
pub fn forecast(artifact: &ModelArtifact, days: usize, cal: &CalendarSpec) -> Result<ForecastResult> {
    let horizon = business_day_horizon(artifact.fit.origin, days, cal);
    Ok(predict(&artifact.fit, horizon)?.with_calendar(cal))
}

pub fn document(artifact: &ModelArtifact, result: &ForecastResult, days: usize) -> Value {
    let mut doc = result.to_json();
    let obj = doc.as_object_mut().expect("forecast JSON is an object");
    obj.insert("days".into(), json!(days));
    obj.insert("business_hours".into(), json!(result.points.iter().filter(|p| p.business_day).count()));
    obj.insert(
        "artifact".into(),
        json!({
            "family": artifact.family.as_str(),
            "created_at": format_ts(artifact.created_at),
            "fingerprint": artifact.fingerprint,
        }),
    );
    doc
}

pub fn forecast_document(artifact: &ModelArtifact, days: usize, cal: &CalendarSpec) -> Result<Value> {
    let result = forecast(artifact, days, cal)?;
    Ok(document(artifact, &result, days))
}
