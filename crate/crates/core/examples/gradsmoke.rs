fn main() {
    let results = parallax_core::gradcheck::suite::run_all(None);
    let mut fails = 0;
    for (name, r) in &results {
        match r {
            Ok(rep) => {
                let ok = rep.passes(parallax_core::gradcheck::suite::DEFAULT_TOL);
                if !ok { fails += 1; }
                println!("{:<28} rel {:9.2e} abs {:9.2e} probes {:3} {}", name, rep.max_rel_error, rep.max_abs_error, rep.probe_count, if ok {"PASS"} else {"FAIL"});
            }
            Err(e) => { fails += 1; println!("{:<28} ERROR: {}", name, e); }
        }
    }
    std::process::exit(if fails > 0 { 1 } else { 0 });
}
