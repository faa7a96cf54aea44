use serde::{Deserialize, Serialize};

use crate::cluster::Trace;

/// A service and the downstream operation it was invoking when requests
/// failed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suspect {
    pub service: String,
    pub operation: String,
    pub count: usize,
}

/// Ranks the last service each failing request reached, with the call it
/// was making, by failure count. Ties keep first-appearance order.
pub fn bootstrap_localize(traces: &[Trace]) -> Vec<Suspect> {
    let mut ranking: Vec<Suspect> = Vec::new();
    for span in traces.iter().filter_map(Trace::first_error) {
        match ranking.iter_mut().find(|s| s.service == span.service && s.operation == span.operation) {
            Some(s) => s.count += 1,
            None => ranking.push(Suspect { service: span.service.clone(), operation: span.operation.clone(), count: 1 }),
        }
    }
    // Stable sort keeps first appearance among equal counts.
    ranking.sort_by_key(|s| std::cmp::Reverse(s.count));
    ranking
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::Span;

    fn trace(id: usize, hops: &[(&str, &str, bool)]) -> Trace {
        Trace {
            request_id: format!("req-{id}"),
            request: "r".into(),
            spans: hops.iter().map(|(s, o, e)| Span { service: s.to_string(), operation: o.to_string(), error: *e }).collect(),
        }
    }

    #[test]
    fn two_failing_edges() {
        let traces = vec![
            trace(0, &[("frontend", "search", false), ("search", "geo", true)]),
            trace(1, &[("frontend", "recommendation", true)]),
            trace(2, &[("frontend", "search", false), ("search", "geo", true)]),
        ];
        let ranking = bootstrap_localize(&traces);
        let out: Vec<(&str, &str)> = ranking.iter().map(|s| (s.service.as_str(), s.operation.as_str())).collect();
        assert_eq!(out, vec![("search", "geo"), ("frontend", "recommendation")]);
    }

    #[test]
    fn successful_traces_give_no_suspects() {
        let traces = vec![trace(0, &[("frontend", "respond", false)])];
        assert!(bootstrap_localize(&traces).is_empty());
    }

    #[test]
    fn repeated_edge_counts_failures() {
        let traces: Vec<Trace> = (0..7).map(|i| trace(i, &[("search", "geo", true)])).collect();
        let out = bootstrap_localize(&traces);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].count, 7);
    }

    #[test]
    fn ties_keep_first_appearance() {
        let traces = vec![trace(0, &[("b", "x", true)]), trace(1, &[("a", "y", true)])];
        let out = bootstrap_localize(&traces);
        assert_eq!(out[0].service, "b");
        assert_eq!(out[1].service, "a");
    }
}
