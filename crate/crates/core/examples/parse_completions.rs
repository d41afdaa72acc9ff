//! Parses raw model completions into answers, simulation judgments and
//! counterfactual inputs.

use cfsim::parse::{parse_answer, parse_counterfactual, parse_simulation};
use cfsim::TaskKind;

fn main() {
    let cot = "Casablanca is in Morocco. Most Moroccans are Muslim and avoid pork. So the answer is yes.";
    match parse_answer(cot, TaskKind::YesNoQa) {
        Ok((explanation, label)) => println!("answer {label}\n  explanation: {explanation}"),
        Err(e) => println!("unparsed: {e}"),
    }

    for raw in [
        "Robot thinks pork is rare in Rabat. So the robot will likely answer yes.",
        "I cannot guess the robot's answer to the follow-up question.",
        "Hmm.",
    ] {
        match parse_simulation(raw, TaskKind::YesNoQa) {
            Ok(j) => println!("{raw:?} -> {j:?}"),
            Err(e) => println!("{raw:?} -> error: {e}"),
        }
    }

    match parse_counterfactual("Follow-up Question: Is bacon easy to find in Rabat?", TaskKind::YesNoQa) {
        Ok(input) => println!("counterfactual: {input:?}"),
        Err(e) => println!("counterfactual unparsed: {e}"),
    }
}
