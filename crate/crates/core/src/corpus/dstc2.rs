//! Mapping from the DSTC2 distribution to the corpus format.
//!
//! There is no automated download or conversion; this module records how
//! the original files map onto [`Dialogue`](super::Dialogue) records so a
//! converter script can produce `corpus.jsonl`.
//!
//! Each DSTC2 call directory holds `log.json` (system side and live ASR
//! hypotheses) and `label.json` (user side annotations and audio file
//! names). A call becomes one dialogue:
//!
//! | corpus field                | DSTC2 source                                                  |
//! |-----------------------------|---------------------------------------------------------------|
//! | `id`                        | `log.json` `session-id`                                       |
//! | `split`                     | flist membership: `dstc2_train` → train, `dstc2_dev` → dev, `dstc2_test` → test |
//! | system turn `transcript`    | `log.json` `turns[i].output.transcript`                       |
//! | system turn `acts`          | `log.json` `turns[i].output.dialog-acts[*]` (`act`, `slots[0]`) |
//! | user turn `transcript`      | `label.json` `turns[i].transcription`                         |
//! | user turn `asr_transcript`  | external recognizer output (kept as an input field)          |
//! | user turn `acts`            | `label.json` `turns[i].semantics.json[*]`                     |
//! | user turn `speech_ref`      | `label.json` `turns[i].audio-file`, prefixed with the call id |
//! | `index`                     | system turn i → `2i`, user turn i → `2i+1`                    |
//!
//! Slot handling: for `request` acts DSTC2 stores `["slot", <name>]`; the slot
//! is the second element. For `inform`/`confirm`/`deny` etc. the first
//! element of the pair is the slot and the second the value. Acts without
//! slots (`reqmore`, `bye`, `welcomemsg`, ...) have an empty `slots` list.
//!
//! System markers are not present in DSTC2 and are added from the system
//! acts: an `offer` act yields `DB_result` preceded by `API_call` on the
//! first offer of a constraint set; a `canthelp` act yields `DB_no_result`.
//!
//! After conversion, [`validate_corpus_stats`](super::validate_corpus_stats)
//! against [`ExpectedStats::dstc2`](super::ExpectedStats::dstc2) should
//! report no mismatches, and the train vocabulary should hold
//! [`DSTC2_LABEL_COUNT`](super::DSTC2_LABEL_COUNT) labels.
