use shape_macros::lang::print_program;
use shape_macros_toolkit::corpus::{generate_corpus, planted_lines, CorpusSpec, Template, TemplateCount};

#[test]
fn families_generate_without_warnings() {
    let c = generate_corpus(&CorpusSpec::families(30, 1)).unwrap();
    assert_eq!(c.programs.len(), 30);
    for p in &c.programs {
        let g = shape_macros::exec::execute::<f64>(&p.program).unwrap();
        assert!(g.warnings.is_empty(), "{}", print_program(&p.program));
    }
}

#[test]
fn one_template_gives_identical_structures() {
    let spec = CorpusSpec {
        templates: vec![TemplateCount { template: Template::Table, count: 50 }],
        ..CorpusSpec::families(0, 3)
    };
    let c = generate_corpus(&spec).unwrap();
    assert_eq!(c.programs.len(), 50);
    let d = c.dataset(8).unwrap();
    let sig = &d.entries()[0].views()[0].signature;
    assert!(d.entries().iter().all(|e| &e.views()[0].signature == sig));
}

#[test]
fn planted_fraction_is_exact() {
    let c = generate_corpus(&CorpusSpec::planted(100, 0.4, 7)).unwrap();
    assert_eq!(c.planted().count(), 40);
    for (_, p) in c.planted() {
        assert_eq!(p.planted_blocks.len(), 2);
        let ident: Vec<usize> = (0..p.program.blocks().len()).collect();
        assert_eq!(planted_lines(p, &ident).len(), 6);
    }
}

#[test]
fn seed_changes_values_not_structure() {
    let a = generate_corpus(&CorpusSpec::families(12, 1)).unwrap();
    let b = generate_corpus(&CorpusSpec::families(12, 2)).unwrap();
    let a2 = generate_corpus(&CorpusSpec::families(12, 1)).unwrap();
    assert_eq!(a, a2);
    assert_ne!(a, b);
    for (x, y) in a.programs.iter().zip(&b.programs) {
        let cx: Vec<_> = x.program.lines().iter().map(|l| l.command).collect();
        let cy: Vec<_> = y.program.lines().iter().map(|l| l.command).collect();
        assert_eq!(cx, cy);
    }
}

#[test]
fn manifest_round_trips() {
    use shape_macros_toolkit::corpus::{Corpus, Manifest};
    let c = generate_corpus(&CorpusSpec::planted(30, 0.4, 5)).unwrap();
    let text = serde_json::to_string(&c.to_manifest()).unwrap();
    let m: Manifest = serde_json::from_str(&text).unwrap();
    assert_eq!(Corpus::from_manifest(&m).unwrap(), c);
}
