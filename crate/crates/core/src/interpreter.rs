//! Agent 1: request → animation description.

use thiserror::Error;
use tracing::warn;

use crate::gateway::{AgentLabel, Gateway, GatewayError};
use crate::model::{AnimationDescription, UserRequest};
use crate::prompts::{RenderedPrompt, AGENT1_INTERPRET, AGENT1_REFORMAT};
use crate::structured::{embed_literal, first_json_block};

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("interpreter reply unusable after reformat retry: {reason}")]
    Unparseable { reason: String, raw: String },
}

/// Deterministic prompt for `request`: the request text is embedded as an
/// escaped JSON string literal, nothing time- or randomness-dependent.
pub fn build_interpret_prompt(request: &UserRequest) -> RenderedPrompt {
    AGENT1_INTERPRET.render(&[("request", &embed_literal(&request.text))])
}

pub struct Interpreter<'a> {
    gateway: &'a Gateway,
}

impl<'a> Interpreter<'a> {
    pub fn new(gateway: &'a Gateway) -> Self {
        Self { gateway }
    }

    pub fn interpret(&self, request: &UserRequest) -> Result<AnimationDescription, InterpretError> {
        let agent = AgentLabel::Agent1;
        let reply = self.gateway.complete(agent, agent.tier(), &build_interpret_prompt(request))?;
        match parse_description(&reply.text) {
            Ok(description) => return Ok(description),
            Err(reason) => warn!(%reason, "interpreter reply unusable, asking for reformat"),
        }
        let retry = AGENT1_REFORMAT.render(&[("reply", &reply.text)]);
        let reply = self.gateway.complete(agent, agent.tier(), &retry)?;
        parse_description(&reply.text).map_err(|reason| InterpretError::Unparseable { reason, raw: reply.text })
    }
}

fn parse_description(text: &str) -> Result<AnimationDescription, String> {
    let description: AnimationDescription =
        first_json_block(text).ok_or_else(|| "no well-formed description block".to_string())?;
    description.validate().map_err(|e| e.to_string())?;
    Ok(description)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{GatewayConfig, ModelResponse, StubTransport};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn request(text: &str) -> UserRequest {
        UserRequest::new(text).unwrap()
    }

    fn scripted(replies: Vec<&'static str>) -> (Gateway, Arc<StubTransport>) {
        let replies = std::sync::Mutex::new(replies.into_iter());
        let stub = Arc::new(StubTransport::new(move |_| {
            let text = replies.lock().unwrap().next().expect("unexpected extra call");
            Ok(ModelResponse { text: text.into(), input_tokens: 10, output_tokens: 10 })
        }));
        (Gateway::new(stub.clone(), GatewayConfig::default()), stub)
    }

    const WAVE: &str = "Here you go:\n```json\n{\"narrative\": \"A sinusoidal electromagnetic wave travels left to right.\", \"physics_concepts\": [\"wave propagation\", \"electromagnetic induction\"], \"motion_specs\": \"E and B fields oscillate in phase\", \"visualization_guidance\": \"two perpendicular traces\"}\n```\n";

    #[test]
    fn prompt_is_deterministic_and_embeds_request() {
        let a = request("show me electromagnetic wave propagation");
        let mut b = a.clone();
        b.request_id = "different".into();
        b.created_at = chrono::Utc::now();
        assert_eq!(build_interpret_prompt(&a), build_interpret_prompt(&b));
        assert!(build_interpret_prompt(&a).text.contains("\"show me electromagnetic wave propagation\""));
        assert_eq!(build_interpret_prompt(&a).template, "agent1/interpret@v1");
    }

    #[test]
    fn parses_description_from_fenced_block() {
        let (gw, stub) = scripted(vec![WAVE]);
        let d = Interpreter::new(&gw).interpret(&request("show me electromagnetic wave propagation")).unwrap();
        assert!(d.physics_concepts.iter().any(|c| c.contains("wave propagation")));
        assert_eq!(stub.call_count(), 1);
    }

    #[test]
    fn retries_once_with_reformat_prompt() {
        let (gw, stub) = scripted(vec!["I think it's about waves.", WAVE]);
        let d = Interpreter::new(&gw).interpret(&request("waves")).unwrap();
        assert_eq!(d.physics_concepts.len(), 2);
        let calls = stub.calls();
        assert_eq!(calls.len(), 2);
        assert!(calls[1].prompt.contains("only\nreformat it"));
    }

    #[test]
    fn malformed_twice_is_an_error_with_raw_text() {
        let (gw, _) = scripted(vec!["nope", "still nope"]);
        match Interpreter::new(&gw).interpret(&request("waves")) {
            Err(InterpretError::Unparseable { raw, .. }) => assert_eq!(raw, "still nope"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_concepts_rejected() {
        let empty = "```json\n{\"narrative\": \"n\", \"physics_concepts\": [], \"motion_specs\": \"m\", \"visualization_guidance\": \"v\"}\n```";
        let (gw, _) = scripted(vec![empty, empty]);
        assert!(matches!(
            Interpreter::new(&gw).interpret(&request("waves")),
            Err(InterpretError::Unparseable { .. })
        ));
    }

    proptest! {
        #[test]
        fn adversarial_requests_cannot_inject_fences(text in "[a-z `{}\"\\\\\n]{1,80}") {
            prop_assume!(!text.trim().is_empty());
            let prompt = build_interpret_prompt(&request(&text)).text;
            let template_fences = AGENT1_INTERPRET.body.matches("```").count();
            prop_assert_eq!(prompt.matches("```").count(), template_fences);
            let line = prompt
                .lines()
                .skip_while(|l| !l.starts_with("User request"))
                .nth(1)
                .unwrap();
            let recovered: String = serde_json::from_str(line).unwrap();
            prop_assert_eq!(recovered, text);
        }
    }
}
