//! Append-only record of every model exchange and what it cost.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AgentLabel, ModelTier, ModelsConfig, TierKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeSummary {
    pub agent_label: AgentLabel,
    pub tier: TierKind,
    pub model_name: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub image_count: usize,
    pub cost_usd: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    entries: Vec<ExchangeSummary>,
    totals_by_agent: BTreeMap<AgentLabel, f64>,
}

/// USD for a token count at per-million-token prices.
pub fn token_cost(tier: &ModelTier, input_tokens: u64, output_tokens: u64) -> f64 {
    input_tokens as f64 * tier.input_price_per_mtok / 1e6
        + output_tokens as f64 * tier.output_price_per_mtok / 1e6
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, entry: ExchangeSummary) {
        *self.totals_by_agent.entry(entry.agent_label).or_insert(0.0) += entry.cost_usd;
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[ExchangeSummary] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_for(&self, agent: AgentLabel) -> f64 {
        self.totals_by_agent.get(&agent).copied().unwrap_or(0.0)
    }

    pub fn totals_by_agent(&self) -> &BTreeMap<AgentLabel, f64> {
        &self.totals_by_agent
    }

    pub fn grand_total(&self) -> f64 {
        self.entries.iter().map(|e| e.cost_usd).sum()
    }

    /// Cost of entries appended after the first `since` entries.
    pub fn total_since(&self, since: usize) -> f64 {
        self.entries.iter().skip(since).map(|e| e.cost_usd).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub component: String,
    pub model_name: String,
    pub agents: Vec<AgentLabel>,
    pub cost_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub rows: Vec<CostRow>,
    pub total_usd: f64,
}

/// Row layout of the per-animation cost report.
const ROWS: &[(&str, &[AgentLabel])] = &[
    ("Agent 1 + 1A", &[AgentLabel::Agent1, AgentLabel::Agent1A]),
    ("Agent 2", &[AgentLabel::Agent2]),
    ("Agent 3 (Context & Criteria)", &[AgentLabel::Agent3Context]),
    ("Agent 3 (Diagnosis & Routing)", &[AgentLabel::Agent3Diagnosis]),
    ("Agent 3 (Perceptual Validation)", &[AgentLabel::Agent3Perception]),
];

/// Per-component cost table in the fixed report order.
pub fn summarize_costs(ledger: &CostLedger, models: &ModelsConfig) -> CostTable {
    let rows: Vec<CostRow> = ROWS
        .iter()
        .map(|(component, agents)| CostRow {
            component: (*component).to_string(),
            model_name: models.tier(agents[0].tier()).model_name.clone(),
            agents: agents.to_vec(),
            cost_usd: agents.iter().map(|a| ledger.total_for(*a)).sum(),
        })
        .collect();
    let total_usd = rows.iter().map(|r| r.cost_usd).sum();
    CostTable { rows, total_usd }
}

impl CostTable {
    /// Fixed-width text rendering for terminals.
    pub fn render(&self) -> String {
        let mut out = format!("{:<34} {:<22} {:>10}\n", "Component", "Model", "Cost (USD)");
        for row in &self.rows {
            out.push_str(&format!("{:<34} {:<22} {:>10.4}\n", row.component, row.model_name, row.cost_usd));
        }
        out.push_str(&format!("{:<34} {:<22} {:>10.4}\n", "Total", "", self.total_usd));
        out
    }
}
