//! Structured text network files.
//!
//! Format: `key = value` header lines (`base_mva`, `v_min_pu`,
//! `v_max_pu`), then sections. `#` starts a comment.
//!
//! ```text
//! base_mva = 10
//! v_min_pu = 0.97
//! v_max_pu = 1.03
//!
//! [buses]      # id, nominal_kv
//! GSP, 33
//! M1, 11
//!
//! [slack]      # bus id
//! GSP
//!
//! [lines]      # from, to, r_pu, x_pu, b_pu
//! M1, L01, 0.005, 0.0056, 0.0007
//!
//! [trafos]     # from, to, r_pu, x_pu, tap
//! GSP, M1, 0.002, 0.035, 1.0
//! ```

use super::{Bus, BusKind, Line, NetworkModel, PowerFlowError, Transformer};
use std::path::Path;

enum Section {
    None,
    Buses,
    Slack,
    Lines,
    Trafos,
}

/// Parse and validate a network file.
pub fn load_network_file(path: &Path) -> Result<NetworkModel, PowerFlowError> {
    let content = std::fs::read_to_string(path).map_err(|e| PowerFlowError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_network(&content)
}

/// Parse a network from its text form.
pub fn parse_network(content: &str) -> Result<NetworkModel, PowerFlowError> {
    let mut section = Section::None;
    let mut base_mva = None;
    let mut v_min = 0.97;
    let mut v_max = 1.03;
    let mut buses: Vec<Bus> = Vec::new();
    let mut slack_ids: Vec<String> = Vec::new();
    let mut lines = Vec::new();
    let mut trafos = Vec::new();

    for (lineno, raw) in content.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| PowerFlowError::Parse { line: lineno, reason };
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = match name.trim() {
                "buses" => Section::Buses,
                "slack" => Section::Slack,
                "lines" => Section::Lines,
                "trafos" => Section::Trafos,
                other => return Err(err(format!("unknown section `[{other}]`"))),
            };
            continue;
        }
        if let Some((key, value)) = line.split_once('=') {
            if matches!(section, Section::None) {
                let value = value.trim();
                let parse = |v: &str| {
                    v.parse::<f64>().map_err(|_| err(format!("bad number `{v}`")))
                };
                match key.trim() {
                    "base_mva" => base_mva = Some(parse(value)?),
                    "v_min_pu" => v_min = parse(value)?,
                    "v_max_pu" => v_max = parse(value)?,
                    other => return Err(err(format!("unknown header key `{other}`"))),
                }
                continue;
            }
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse_f = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`")));
        match section {
            Section::None => return Err(err(format!("data before any section: `{line}`"))),
            Section::Buses => {
                if fields.len() != 2 {
                    return Err(err("expected `id, nominal_kv`".into()));
                }
                buses.push(Bus {
                    id: fields[0].to_string(),
                    nominal_kv: parse_f(fields[1])?,
                    kind: BusKind::Pq,
                });
            }
            Section::Slack => {
                if fields.len() != 1 {
                    return Err(err("expected a single bus id".into()));
                }
                slack_ids.push(fields[0].to_string());
            }
            Section::Lines => {
                if fields.len() != 5 {
                    return Err(err("expected `from, to, r_pu, x_pu, b_pu`".into()));
                }
                lines.push(Line {
                    from: fields[0].to_string(),
                    to: fields[1].to_string(),
                    r_pu: parse_f(fields[2])?,
                    x_pu: parse_f(fields[3])?,
                    b_pu: parse_f(fields[4])?,
                });
            }
            Section::Trafos => {
                if fields.len() != 5 {
                    return Err(err("expected `from, to, r_pu, x_pu, tap`".into()));
                }
                trafos.push(Transformer {
                    from: fields[0].to_string(),
                    to: fields[1].to_string(),
                    r_pu: parse_f(fields[2])?,
                    x_pu: parse_f(fields[3])?,
                    tap: parse_f(fields[4])?,
                });
            }
        }
    }

    if slack_ids.len() != 1 {
        return Err(PowerFlowError::InvalidNetwork(format!(
            "expected exactly one slack bus, found {}",
            slack_ids.len()
        )));
    }
    let slack_id = &slack_ids[0];
    let mut found = false;
    for b in &mut buses {
        if &b.id == slack_id {
            b.kind = BusKind::Slack;
            found = true;
        }
    }
    if !found {
        return Err(PowerFlowError::UnknownBus(slack_id.clone()));
    }

    let model = NetworkModel {
        buses,
        lines,
        transformers: trafos,
        base_mva: base_mva
            .ok_or_else(|| PowerFlowError::InvalidNetwork("missing base_mva header".into()))?,
        v_limits: (v_min, v_max),
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "\
base_mva = 10
v_min_pu = 0.97
v_max_pu = 1.03

[buses]
GSP, 33
M1, 11
L01, 11

[slack]
GSP

[trafos]
GSP, M1, 0.002, 0.035, 1.0

[lines]
M1, L01, 0.005, 0.006, 0.0007
";

    #[test]
    fn small_network_round_trip() {
        let net = parse_network(SMALL).unwrap();
        assert_eq!(net.buses.len(), 3);
        assert_eq!(net.base_mva, 10.0);
        assert_eq!(net.v_limits, (0.97, 1.03));
        assert_eq!(net.buses[net.slack_index()].id, "GSP");
        assert_eq!(net.buses[net.slack_index()].nominal_kv, 33.0);
        assert_eq!(net.pq_indices().len(), 2);
        assert_eq!(net.transformers.len(), 1);
        assert_eq!(net.lines[0].b_pu, 0.0007);
    }

    #[test]
    fn two_slacks_rejected() {
        let text = SMALL.replace("[slack]\nGSP", "[slack]\nGSP\nM1");
        match parse_network(&text) {
            Err(PowerFlowError::InvalidNetwork(msg)) => {
                assert!(msg.contains("slack"), "{msg}");
            }
            other => panic!("expected slack error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_bus_and_bad_numbers_are_line_reported() {
        let text = SMALL.replace("M1, L01", "M1, NOPE");
        assert!(matches!(parse_network(&text), Err(PowerFlowError::UnknownBus(_))));
        let text = SMALL.replace("0.035", "banana");
        assert!(matches!(parse_network(&text), Err(PowerFlowError::Parse { .. })));
    }

    #[test]
    fn missing_base_is_an_error() {
        let text = SMALL.replace("base_mva = 10\n", "");
        assert!(matches!(parse_network(&text), Err(PowerFlowError::InvalidNetwork(_))));
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = format!("# header comment\n\n{SMALL}\n# trailing\n");
        assert!(parse_network(&text).is_ok());
    }
}
