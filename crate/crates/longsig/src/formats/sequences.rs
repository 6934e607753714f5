//! Token sequences, one token per line:
//! `subject_id<TAB>slot<TAB>modality<TAB>day<TAB>padding<TAB>payload`.
//! Labels travel separately.

use std::fmt::Write as _;
use std::path::Path;

use longsig_core::tem::{Modality, Token, TokenSequence};

use super::{join_reals, rows};
use crate::error::Result;

pub fn write_sequences<'a>(seqs: impl IntoIterator<Item = &'a TokenSequence>) -> String {
    let mut out = String::from("# subject_id\tslot\tmodality\tday\tpadding\tpayload\n");
    for seq in seqs {
        for (slot, t) in seq.items.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{slot}\t{}\t{}\t{}\t{}",
                seq.subject_id,
                t.modality.as_str(),
                t.day,
                u8::from(t.padding),
                join_reals(&t.payload)
            );
        }
    }
    out
}

/// Sequences in file order; slots must run `0, 1, …` within a subject.
pub fn read_sequences(path: &Path, text: &str) -> Result<Vec<TokenSequence>> {
    let mut out: Vec<TokenSequence> = Vec::new();
    for row in rows(path, text, 6) {
        let row = row?;
        let slot: usize = row.get(1, "slot")?;
        let token = Token {
            modality: Modality::parse(row.str(2)).ok_or_else(|| row.error(format!("unknown modality `{}`", row.str(2))))?,
            day: row.get(3, "day")?,
            padding: row.flag(4, "padding")?,
            payload: row.reals(5, "payload")?,
        };
        if slot == 0 {
            out.push(TokenSequence {
                subject_id: row.str(0).to_string(),
                items: vec![token],
                label: None,
            });
            continue;
        }
        match out.last_mut() {
            Some(seq) if seq.subject_id == row.str(0) && seq.items.len() == slot => seq.items.push(token),
            _ => return Err(row.error(format!("slot {slot} of `{}` is out of order", row.str(0)))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequences_round_trip() {
        let a = TokenSequence::from_observations(
            "a",
            3,
            vec![(10, vec![0.5, -1.0]), (400, vec![0.25, 2.0])],
            vec![(10, vec![1.0, 2.0, 3.0]), (400, vec![4.0, 5.0, 6.0])],
            Some(true),
        )
        .unwrap();
        let b = TokenSequence::from_observations("b", 3, vec![], vec![(7, vec![0.0, 0.1, 0.2])], None).unwrap();
        let text = write_sequences([&a, &b]);
        let back = read_sequences(Path::new("s.tsv"), &text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].items, a.items);
        assert_eq!(back[1], b);
        back[0].validate(3, 2, 3).unwrap();
    }

    #[test]
    fn out_of_order_slots_are_rejected() {
        let text = "a\t0\tcls\t5\t0\t\na\t2\timage\t5\t0\t1\n";
        assert!(read_sequences(Path::new("s.tsv"), text).is_err());
        assert!(read_sequences(Path::new("s.tsv"), "a\t0\tcls\t5\t2\t\n").is_err());
    }
}
