#![no_main]

use decmdp::io::{parse_policy, parse_policy_pair, policy_to_json};
use decmdp::scenarios::{gen_meeting, MeetingSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(p) = parse_policy(text, 3, 2, 4) {
        let again = parse_policy(&policy_to_json(&p), 3, 2, 4).expect("emitted policies parse");
        assert_eq!(again, p);
    }
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
    let _ = parse_policy_pair(text, &f);
});
