//! Instruction templates, one per task, with `{name}` placeholders.

use std::fmt;

use cmts_core::plant::PLANT_VARIABLES;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SCENARIO: &str = "photovoltaic plant with battery storage";

const IMPUTATION: &str = include_str!("../templates/imputation.txt");
const FORECAST: &str = include_str!("../templates/forecast.txt");
const SUPERRES: &str = include_str!("../templates/superres.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Imputation,
    Forecast,
    Superres,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Imputation, TaskKind::Forecast, TaskKind::Superres];

    pub fn template(self) -> &'static str {
        match self {
            TaskKind::Imputation => IMPUTATION,
            TaskKind::Forecast => FORECAST,
            TaskKind::Superres => SUPERRES,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Imputation => "imputation",
            TaskKind::Forecast => "forecast",
            TaskKind::Superres => "superres",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "imputation" => Ok(TaskKind::Imputation),
            "forecast" => Ok(TaskKind::Forecast),
            "superres" => Ok(TaskKind::Superres),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

/// Values substituted into a template.
#[derive(Debug, Clone, Default)]
pub struct PromptContext {
    pub scenario: String,
    pub variables: Vec<String>,
    pub resolution_minutes: u32,
    pub length: usize,
    pub mu: f64,
    pub horizon: usize,
    pub factor: usize,
}

pub fn render(task: TaskKind, ctx: &PromptContext) -> String {
    let scenario = if ctx.scenario.is_empty() {
        DEFAULT_SCENARIO
    } else {
        &ctx.scenario
    };
    task.template()
        .replace("{scenario}", scenario)
        .replace("{variables}", &ctx.variables.join(", "))
        .replace("{resolution}", &ctx.resolution_minutes.to_string())
        .replace("{length}", &ctx.length.to_string())
        .replace("{mu}", &format!("{}", ctx.mu.round() as i64))
        .replace("{horizon}", &ctx.horizon.to_string())
        .replace("{factor}", &ctx.factor.to_string())
        .trim()
        .to_string()
}

/// Text the frozen vocabulary is built from.
pub fn template_corpus() -> String {
    let mut s = String::new();
    for t in TaskKind::ALL {
        s.push_str(t.template());
        s.push('\n');
    }
    s.push_str(DEFAULT_SCENARIO);
    s.push('\n');
    s.push_str(&PLANT_VARIABLES.join(" "));
    s.push_str("\n0 1 2 3 4 5 6 7 8 9 , . - _ : ( ) { }");
    s
}
