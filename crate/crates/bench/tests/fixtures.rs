use qni_bench::pulsed_state;

#[test]
fn fixture_has_a_bright_pump_and_dark_signals() {
    let st = pulsed_state(256, 1e4);
    let n = st.photon_numbers();
    assert!(n.pump > 1e4);
    assert_eq!(n.signal, 0.0);
    assert_eq!(n.idler, 0.0);
}
