mod common;

use common::{body_lines, corpus, execute, interpret, loop_entries, random_state};
use permutev_core::cpu::count_loop_body_instructions;
use permutev_core::transform::{
    check_legality, lower, parse_kernel, Criterion, IndexMap, LigAssignment, LowerError, Mode,
};

#[test]
fn corpus_covers_four_styles_and_is_legal() {
    let kernels = corpus();
    assert_eq!(kernels.len(), 20);
    for style in ["s1_", "s2_", "s3_", "s4_"] {
        assert!(kernels.iter().filter(|(n, _)| n.starts_with(style)).count() >= 4, "{style}");
    }
    for (name, src) in &kernels {
        let ir = parse_kernel(src).unwrap_or_else(|e| panic!("{name}: {e}"));
        let v = check_legality(&ir);
        assert!(v.is_legal(), "{name}: {v}");
    }
}

#[test]
fn modes_match_reference_on_sample_inputs() {
    for (name, src) in corpus() {
        let ir = parse_kernel(&src).unwrap();
        let base = lower(&ir, Mode::Baseline, LigAssignment::default()).unwrap();
        let perm = lower(&ir, Mode::Permuted, LigAssignment::default()).unwrap();
        for input_seed in 0..3 {
            let input = random_state(&ir, input_seed);
            let expect = interpret(&ir, &input);
            let (b, _) = execute(&base, &input, 1, 4);
            assert_eq!(b, expect, "{name} baseline");
            for lig_seed in [5, 0xfeed] {
                for block in [4, 8] {
                    let (p, _) = execute(&perm, &input, lig_seed, block);
                    assert_eq!(p, expect, "{name} permuted seed {lig_seed} B={block}");
                }
            }
        }
    }
}

#[test]
fn body_counts_match_and_overhead_is_bounded() {
    for (name, src) in corpus() {
        let ir = parse_kernel(&src).unwrap();
        let base = lower(&ir, Mode::Baseline, LigAssignment::default()).unwrap();
        let perm = lower(&ir, Mode::Permuted, LigAssignment::default()).unwrap();
        let input = random_state(&ir, 42);
        let (_, eb) = execute(&base, &input, 1, 4);
        let (_, ep) = execute(&perm, &input, 9, 4);
        for (k, l) in base.loops.iter().enumerate() {
            assert_eq!(base.static_body_count(k), perm.static_body_count(k), "{name} loop {k}");
            let db = count_loop_body_instructions(&eb, &base.program.symbols, &l.top, &l.end).unwrap();
            let dp = count_loop_body_instructions(&ep, &perm.program.symbols, &l.top, &l.end).unwrap();
            assert_eq!(db, dp, "{name} loop {k}");
        }
        let entries: u64 = loop_entries(&ir, &input).iter().sum();
        let overhead = ep.len() as i64 - eb.len() as i64;
        assert!(overhead <= 2 * entries as i64, "{name}: overhead {overhead} over {entries} entries");
    }
}

#[test]
fn style_patterns_appear() {
    let get = |name: &str| {
        let src = corpus().into_iter().find(|(n, _)| n == name).unwrap().1;
        lower(&parse_kernel(&src).unwrap(), Mode::Permuted, LigAssignment::default()).unwrap().asm
    };
    assert!(get("s1_dot").contains("pv.add L1.2,"));
    assert!(get("s2_stride3").contains("pv.mul L1.0,"));
    assert!(get("s2_pairs").contains("pv.slli L1.0,"));
    assert!(get("s3_square").contains("pv.add L1.0,"));
    assert!(get("s2_long").contains("pv.init L1,"));
    let mm = get("s4_matmul");
    for needle in ["pv.initi L1, 4", "pv.initi L2, 4", "pv.initi L3, 4", "pv.bne L3.0"] {
        assert!(mm.contains(needle), "{needle}");
    }
    // the inner init sits inside the outer body
    let low = lower(&parse_kernel(&corpus().into_iter().find(|(n, _)| n == "s4_matvec").unwrap().1).unwrap(), Mode::Permuted, LigAssignment::default()).unwrap();
    let outer = body_lines(&low.asm, &low.loops[0].top, &low.loops[0].end);
    assert!(outer.iter().any(|l| l == "pv.initi L2, 8"));
}

#[test]
fn custom_slot_assignment() {
    let src = &corpus().into_iter().find(|(n, _)| n == "s4_matvec").unwrap().1;
    let ir = parse_kernel(src).unwrap();
    let low = lower(&ir, Mode::Permuted, LigAssignment([3, 1, 2])).unwrap();
    assert!(low.asm.contains("pv.initi L3, 8") && low.asm.contains("pv.bne L1.0"));
    let input = random_state(&ir, 3);
    assert_eq!(execute(&low, &input, 77, 4).0, interpret(&ir, &input));
}

#[test]
fn nonlinear_body_differs_only_in_index_source() {
    let ir = parse_kernel("array x[32]\nscalar s\nfor i in 0..32 { s reduce+ = x[(i * i) % 32] }").unwrap();
    let base = lower(&ir, Mode::Baseline, LigAssignment::default()).unwrap();
    let perm = lower(&ir, Mode::Permuted, LigAssignment::default()).unwrap();
    let b = body_lines(&base.asm, "loop0_top", "loop0_end");
    let p = body_lines(&perm.asm, "loop0_top", "loop0_end");
    let n = b.len();
    let ri = b[n - 2].strip_prefix("addi ").unwrap().split(',').next().unwrap().to_string();
    assert_eq!(b[n - 2], format!("addi {ri}, {ri}, 1"));
    assert!(b[n - 1].starts_with(&format!("bne {ri}, ")));
    let mut expect = vec![format!("pv.add L1.0, {ri}, zero, zero")];
    expect.extend(b[..n - 2].iter().cloned());
    let rn = b[n - 1].split(", ").nth(1).unwrap();
    expect.push(format!("pv.bne L1.0, {rn}, loop0_top"));
    assert_eq!(p, expect);
}

#[test]
fn documented_parse_and_legality_examples() {
    let ir = parse_kernel("const N = 16\narray a[64]\narray b[64]\nscalar c\nfor i in 0..N { b[i*3+1] = a[i*3+1]+c }").unwrap();
    let sums = ir.loop_summaries();
    for (_, m, _) in &sums[0].accesses {
        let IndexMap::Affine { constant, .. } = m else { panic!("{m:?}") };
        assert_eq!((m.coef("i"), *constant), (3, 1));
    }
    let ir = parse_kernel("const N = 16\narray a[N]\nfor i in 0..N { if a[i] > 0 { i = i + 2 } }").unwrap();
    let v = check_legality(&ir);
    assert!(v.has(Criterion::IndexMap), "{v}");
    match lower(&ir, Mode::Permuted, LigAssignment::default()) {
        Err(LowerError::Illegal(verdict)) => assert_eq!(verdict, v),
        other => panic!("{other:?}"),
    }
    let ir = parse_kernel("const N = 16\narray a[N]\narray b[N]\nfor i in 1..N { b[i] = b[i-1] + a[i] }");
    assert!(ir.is_err(), "loops start at zero");
    let ir = parse_kernel("const N = 16\narray a[N]\narray b[N]\nfor i in 0..15 { b[i+1] = b[i] + a[i+1] }").unwrap();
    assert!(check_legality(&ir).has(Criterion::DataDependency));
}

#[test]
fn register_budget_is_enforced() {
    let mut src = String::from("const N = 4\n");
    for k in 0..16 {
        src += &format!("array a{k}[N]\n");
    }
    src += "array y[N]\nfor i in 0..N {\n y[i] = ";
    src += &(0..16).map(|k| format!("a{k}[i]")).collect::<Vec<_>>().join(" + ");
    src += "\n}\n";
    let ir = parse_kernel(&src).unwrap();
    assert!(matches!(lower(&ir, Mode::Baseline, LigAssignment::default()), Err(LowerError::Registers(_))));
}

