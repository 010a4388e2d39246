#![no_main]

use decmdp::io::{comm_policy_to_json, parse_comm_policy};
use decmdp::scenarios::{gen_meeting, MeetingSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let f = gen_meeting(&MeetingSpec {
        width: 1,
        height: 2,
        p_success: 0.8,
        meeting_sites: vec![1],
        start1: 0,
        start2: 0,
        step_cost: -1.0,
        joint_reward: vec![10.0],
        horizon: 2,
    })
    .expect("fixed model");
    if let Ok(p) = parse_comm_policy(text, &f) {
        let again = parse_comm_policy(&comm_policy_to_json(&p), &f).expect("emitted policies parse");
        assert_eq!(again, p);
    }
});
