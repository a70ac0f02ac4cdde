use crate::corpus::{DialogueAct, Speaker, Turn};
use crate::error::{Error, Result};

pub const WELCOME_LABEL: &str = "welcomemsg";

/// Canonical label of a system turn: rendered acts, sorted, joined by `+`.
pub fn build_label(turn: &Turn) -> Result<String> {
    if turn.speaker != Speaker::System {
        return Err(Error::contract(format!(
            "turn {} is a user turn; labels come from system turns",
            turn.index
        )));
    }
    if turn.acts.is_empty() {
        return Err(Error::validation(format!("system turn {} has no acts", turn.index)));
    }
    let mut parts: Vec<String> = turn.acts.iter().map(DialogueAct::to_string).collect();
    parts.sort();
    Ok(parts.join("+"))
}

/// Splits a canonical label back into slot-level acts (values are not kept).
pub fn parse_label(label: &str) -> Result<Vec<DialogueAct>> {
    label
        .split('+')
        .map(|part| {
            let bad = || Error::validation(format!("malformed act {part:?} in label {label:?}"));
            match part.split_once('(') {
                None if !part.is_empty() && !part.contains(')') => Ok(DialogueAct::new(part, None)),
                None => Err(bad()),
                Some((t, rest)) => {
                    let slot = rest.strip_suffix(')').ok_or_else(bad)?;
                    if t.is_empty() || slot.is_empty() || slot.contains(['(', ')']) {
                        return Err(bad());
                    }
                    Ok(DialogueAct::new(t, Some(slot)))
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::{act, turn};
    use proptest::prelude::*;

    fn system(acts: &[&str]) -> Turn {
        turn(4, Speaker::System, "", acts.iter().map(|a| act(a)).collect())
    }

    #[test]
    fn canonical_sort() {
        assert_eq!(
            build_label(&system(&["offer(name)", "inform(food)"])).unwrap(),
            "inform(food)+offer(name)"
        );
        assert_eq!(build_label(&system(&["welcomemsg"])).unwrap(), "welcomemsg");
        assert_eq!(
            build_label(&system(&["inform(food)", "inform(area)", "offer(name)"])).unwrap(),
            "inform(area)+inform(food)+offer(name)"
        );
    }

    #[test]
    fn values_are_dropped() {
        let mut t = system(&[]);
        t.acts
            .push(DialogueAct::new("inform", Some("food")).with_value("italian"));
        assert_eq!(build_label(&t).unwrap(), "inform(food)");
    }

    #[test]
    fn errors() {
        assert!(matches!(build_label(&system(&[])), Err(Error::Validation(_))));
        let user = turn(1, Speaker::User, "", vec![act("request(food)")]);
        assert!(matches!(build_label(&user), Err(Error::Contract(_))));
        assert!(parse_label("inform(food").is_err());
        assert!(parse_label("").is_err());
        assert!(parse_label("a+").is_err());
    }

    #[test]
    fn parse_inverts_build() {
        let l = "canthelp+inform(area)+offer(name)";
        let acts = parse_label(l).unwrap();
        assert_eq!(acts.len(), 3);
        let t = turn(0, Speaker::System, "", acts);
        assert_eq!(build_label(&t).unwrap(), l);
    }

    fn act_lists() -> impl Strategy<Value = (Vec<DialogueAct>, Vec<DialogueAct>)> {
        prop::collection::vec(("[a-z]{1,6}", prop::option::of("[a-z]{1,5}")), 1..6)
            .prop_map(|v| {
                v.into_iter()
                    .map(|(t, s)| DialogueAct::new(t, s.as_deref()))
                    .collect::<Vec<_>>()
            })
            .prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle()))
    }

    proptest! {
        #[test]
        fn label_is_order_invariant((acts, shuffled) in act_lists()) {
            let a = build_label(&turn(0, Speaker::System, "", acts)).unwrap();
            let b = build_label(&turn(0, Speaker::System, "", shuffled)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
