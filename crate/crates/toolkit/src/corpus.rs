//! Synthetic corpora: structural families with sampled continuous parameters
//! and optional planted macros.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use shape_macros::dataset::Dataset;
use shape_macros::error::{LangError, OrderError};
use shape_macros::lang::{print_program, Axis, Command, CuboidId, Domain, ParamValue, Program, Symbol};
use shape_macros::library::{ExpandContext, Formal, Macro, MacroLine, ParamSpec};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("template {template:?} produced an invalid program: {source}")]
    Template { template: Template, source: LangError },
    #[error("template {0:?} produced geometry with warnings: {1:?}")]
    Warnings(Template, Vec<String>),
    #[error("planted macro {0}: {1}")]
    Planted(String, String),
    #[error(transparent)]
    Order(#[from] OrderError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    /// Slab top on two mirrored leg pairs.
    Table,
    /// Two side panels, a back and a translated stack of shelves.
    Shelf,
    /// Seat, top rail, squeezed back slats and two mirrored leg pairs.
    Chair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateCount {
    pub template: Template,
    pub count: usize,
}

/// A macro instantiated into a fraction of the programs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedMacro {
    pub function: Macro,
    /// Exactly `round(fraction · n)` programs receive it.
    pub fraction: f64,
    /// Sampling range of each formal.
    pub ranges: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub templates: Vec<TemplateCount>,
    #[serde(default)]
    pub planted: Vec<PlantedMacro>,
    /// Half-width of the uniform noise added to constants of planted bodies.
    pub jitter: f64,
    /// Scales the width of every continuous sampling range.
    pub spread: f64,
    pub seed: u64,
}

impl CorpusSpec {
    /// `n` programs split evenly across the families.
    pub fn families(n: usize, seed: u64) -> CorpusSpec {
        let all = [Template::Table, Template::Shelf, Template::Chair];
        CorpusSpec {
            templates: all
                .iter()
                .enumerate()
                .map(|(i, &t)| TemplateCount {
                    template: t,
                    count: n / 3 + usize::from(i < n % 3),
                })
                .collect(),
            planted: Vec::new(),
            jitter: 0.02,
            spread: 1.0,
            seed,
        }
    }

    /// Families plus the ladder macro planted at `fraction` usage.
    pub fn planted(n: usize, fraction: f64, seed: u64) -> CorpusSpec {
        CorpusSpec {
            planted: vec![PlantedMacro {
                function: ladder_macro(),
                fraction,
                ranges: vec![(0.3, 0.6), (0.3, 0.7)],
            }],
            ..CorpusSpec::families(n, seed)
        }
    }

    pub fn len(&self) -> usize {
        self.templates.iter().map(|t| t.count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn c(x: f64) -> ParamSpec {
    ParamSpec::Const(ParamValue::Float(x))
}

/// A mirrored side panel with a translated run of rungs: six lines over two
/// blocks.
pub fn ladder_macro() -> Macro {
    Macro {
        name: "ladder".into(),
        formals: vec![Formal::new(Domain::Dim), Formal::new(Domain::Unit)],
        body: vec![
            MacroLine {
                command: Command::Cuboid,
                slots: vec![c(0.05), ParamSpec::Formal(0), c(0.2), ParamSpec::Const(ParamValue::Bool(true))],
            },
            MacroLine {
                command: Command::Attach,
                slots: vec![
                    ParamSpec::Const(ParamValue::Cid(CuboidId::BBOX)),
                    c(0.5),
                    c(0.0),
                    c(0.5),
                    c(0.1),
                    c(0.0),
                    ParamSpec::Formal(1),
                ],
            },
            MacroLine {
                command: Command::Reflect,
                slots: vec![ParamSpec::Const(ParamValue::Discrete(Symbol::Axis(Axis::X)))],
            },
            MacroLine {
                command: Command::Cuboid,
                slots: vec![c(0.3), c(0.03), c(0.05), ParamSpec::Const(ParamValue::Bool(true))],
            },
            MacroLine {
                command: Command::Attach,
                slots: vec![ParamSpec::LocalCuboid(0), c(0.0), c(0.5), c(0.5), c(1.0), c(0.2), c(0.5)],
            },
            MacroLine {
                command: Command::Translate,
                slots: vec![
                    ParamSpec::Const(ParamValue::Discrete(Symbol::Axis(Axis::Y))),
                    ParamSpec::Const(ParamValue::Discrete(Symbol::Count(2))),
                    c(0.3),
                ],
            },
        ],
        provenance: vec![],
    }
}

/// One generated program.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusProgram {
    pub name: String,
    pub family: Template,
    pub program: Program,
    /// Block indices holding each planted macro instance.
    pub planted_blocks: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub seed: u64,
    pub programs: Vec<CorpusProgram>,
}

/// On-disk form of a corpus: programs as text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub programs: Vec<ManifestProgram>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestProgram {
    pub name: String,
    pub family: Template,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub planted_blocks: Vec<usize>,
}

impl Corpus {
    pub fn to_manifest(&self) -> Manifest {
        Manifest {
            seed: self.seed,
            programs: self
                .programs
                .iter()
                .map(|p| ManifestProgram {
                    name: p.name.clone(),
                    family: p.family,
                    text: print_program(&p.program),
                    planted_blocks: p.planted_blocks.clone(),
                })
                .collect(),
        }
    }

    pub fn from_manifest(m: &Manifest) -> Result<Corpus, LangError> {
        let programs = m
            .programs
            .iter()
            .map(|p| {
                Ok(CorpusProgram {
                    name: p.name.clone(),
                    family: p.family,
                    program: Program::parse(&p.text)?,
                    planted_blocks: p.planted_blocks.clone(),
                })
            })
            .collect::<Result<_, LangError>>()?;
        Ok(Corpus { seed: m.seed, programs })
    }

    pub fn families(&self) -> Vec<String> {
        self.programs.iter().map(|p| family_name(p.family).to_string()).collect()
    }

    pub fn dataset(&self, max_orders: usize) -> Result<Dataset, OrderError> {
        Dataset::from_programs(self.programs.iter().map(|p| (p.name.clone(), p.program.clone())), max_orders)
    }

    /// Programs that received a planted macro.
    pub fn planted(&self) -> impl Iterator<Item = (usize, &CorpusProgram)> {
        self.programs.iter().enumerate().filter(|(_, p)| !p.planted_blocks.is_empty())
    }
}

struct Sampler<'a> {
    rng: &'a mut ChaCha8Rng,
    spread: f64,
}

impl Sampler<'_> {
    fn u(&mut self, lo: f64, hi: f64) -> f64 {
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo) * self.spread;
        round4(self.rng.random_range(mid - half..=mid + half))
    }

    fn pick<T: Copy>(&mut self, xs: &[T]) -> T {
        *xs.choose(self.rng).expect("nonempty choice")
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn template_text(t: Template, s: &mut Sampler) -> String {
    match t {
        Template::Table => {
            let (w, h, d) = (s.u(0.8, 1.4), s.u(0.6, 1.0), s.u(0.6, 1.0));
            let top = s.u(0.03, 0.08);
            let lw = s.u(0.04, 0.1);
            let (x, z) = (s.u(0.05, 0.15), s.u(0.05, 0.15));
            let mut out = format!("bbox = Cuboid({w},{h},{d},True)\nc1 = Cuboid({w},{top},{d},True)\nattach(bbox,0.5,1,0.5,0.5,1,0.5)\n");
            for (i, zz) in [z, round4(1.0 - z)].iter().enumerate() {
                out += &format!(
                    "c{} = Cuboid({lw},0.5,{lw},True)\nattach(bbox,0.5,0,0.5,{x},0,{zz})\nattach(c1,0.5,1,0.5,{x},0,{zz})\nreflect(X)\n",
                    i + 2
                );
            }
            out
        }
        Template::Shelf => {
            let (w, h, d) = (s.u(0.6, 1.0), s.u(1.0, 1.8), s.u(0.3, 0.5));
            let side = s.u(0.02, 0.05);
            let board = s.u(0.02, 0.04);
            let f = s.u(0.05, 0.15);
            let n = s.pick(&[2u32, 3, 4]);
            let dist = s.u(0.6, 0.8);
            format!(
                "bbox = Cuboid({w},{h},{d},True)\n\
                 c1 = Cuboid({side},{h},{d},True)\nattach(bbox,0,0.5,0.5,0,0.5,0.5)\nreflect(X)\n\
                 c2 = Cuboid({w},{h},0.02,True)\nattach(bbox,0.5,0.5,0,0.5,0.5,0)\n\
                 c3 = Cuboid({},{board},{d},True)\nattach(c1,0,0,0.5,1,{f},0.5)\ntranslate(Y,{n},{dist})\n",
                round4(w - 2.0 * side)
            )
        }
        Template::Chair => {
            let (w, h, d) = (s.u(0.5, 0.7), s.u(0.9, 1.2), s.u(0.5, 0.7));
            let seat = s.u(0.04, 0.08);
            let sy = s.u(0.4, 0.5);
            let rail = s.u(0.05, 0.1);
            let back = s.u(0.03, 0.06);
            let slat = s.u(0.03, 0.06);
            let su = s.u(0.15, 0.3);
            let lw = s.u(0.04, 0.07);
            let (x, z) = (s.u(0.05, 0.15), s.u(0.05, 0.15));
            let mut out = format!(
                "bbox = Cuboid({w},{h},{d},True)\n\
                 c1 = Cuboid({w},{seat},{d},True)\nattach(bbox,0.5,0,0.5,0.5,{sy},0.5)\n\
                 c2 = Cuboid({w},{rail},{back},True)\nattach(bbox,0.5,1,0,0.5,1,0)\n\
                 c3 = Cuboid({slat},0.3,{back},True)\nsqueeze(c1,c2,top,{su},0.5)\nreflect(X)\n"
            );
            for (i, zz) in [z, round4(1.0 - z)].iter().enumerate() {
                out += &format!(
                    "c{} = Cuboid({lw},0.4,{lw},True)\nattach(bbox,0.5,0,0.5,{x},0,{zz})\nattach(c1,0.5,1,0.5,{x},0,{zz})\nreflect(X)\n",
                    i + 4
                );
            }
            out
        }
    }
}

fn plant(p: &Program, m: &PlantedMacro, jitter: f64, rng: &mut ChaCha8Rng) -> Result<(Program, Vec<usize>), String> {
    let f = &m.function;
    if m.ranges.len() != f.formals.len() {
        return Err(format!("{} ranges for {} formals", m.ranges.len(), f.formals.len()));
    }
    let args: Vec<ParamValue> = f
        .formals
        .iter()
        .zip(&m.ranges)
        .map(|(fm, &(lo, hi))| ParamValue::Float(fm.domain.clamp(round4(rng.random_range(lo..=hi)))))
        .collect();
    let mut jittered = f.clone();
    for line in &mut jittered.body {
        let sig = line.command.signature();
        for (spec, dom) in line.slots.iter_mut().zip(sig.iter().copied()) {
            match spec {
                ParamSpec::Const(ParamValue::Float(x)) => {
                    *x = dom.clamp(round4(*x + rng.random_range(-jitter..=jitter)));
                }
                ParamSpec::Lin(e) => {
                    e.constant = round4(e.constant + rng.random_range(-jitter..=jitter));
                }
                _ => {}
            }
        }
    }
    let ctx = ExpandContext {
        bbox: p.bbox_dims(),
        next_cuboid: p.blocks().len() + 1,
    };
    let body = jittered.expand(&args, ctx).map_err(|e| e.to_string())?;
    let first = p.blocks().len();
    let mut lines = p.lines();
    lines.extend(body);
    let q = Program::from_lines(&lines).map_err(|e| e.to_string())?;
    let planted = (first..q.blocks().len()).collect();
    Ok((q, planted))
}

/// Instantiates the spec. Deterministic given `spec.seed`.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut programs = Vec::with_capacity(spec.len());
    for tc in &spec.templates {
        for _ in 0..tc.count {
            let text = template_text(tc.template, &mut Sampler { rng: &mut rng, spread: spec.spread });
            let program = Program::parse(&text).map_err(|source| CorpusError::Template {
                template: tc.template,
                source,
            })?;
            programs.push(CorpusProgram {
                name: format!("{}_{:03}", family_name(tc.template), programs.len()),
                family: tc.template,
                program,
                planted_blocks: Vec::new(),
            });
        }
    }
    let n = programs.len();
    for m in &spec.planted {
        let k = ((m.fraction * n as f64).round() as usize).min(n);
        let all: Vec<usize> = (0..n).collect();
        let mut chosen: Vec<usize> = all.choose_multiple(&mut rng, k).copied().collect();
        chosen.sort_unstable();
        for i in chosen {
            let (q, blocks) =
                plant(&programs[i].program, m, spec.jitter, &mut rng).map_err(|e| CorpusError::Planted(m.function.name.clone(), e))?;
            programs[i].program = q;
            programs[i].planted_blocks.extend(blocks);
        }
    }
    for p in &mut programs {
        p.program = Program::parse(&print_program(&p.program)).map_err(|source| CorpusError::Template {
            template: p.family,
            source,
        })?;
        let g = shape_macros::exec::execute::<f64>(&p.program).map_err(|e| CorpusError::Planted(p.name.clone(), e.to_string()))?;
        if !g.warnings.is_empty() {
            return Err(CorpusError::Warnings(p.family, g.warnings));
        }
    }
    Ok(Corpus {
        seed: spec.seed,
        programs,
    })
}

pub fn family_name(t: Template) -> &'static str {
    match t {
        Template::Table => "table",
        Template::Shelf => "shelf",
        Template::Chair => "chair",
    }
}

/// Lines of each planted instance under a block order, as positions in
/// the reordered program.
pub fn planted_lines(p: &CorpusProgram, order: &[usize]) -> Vec<usize> {
    let Ok(q) = p.program.reorder(order) else {
        return Vec::new();
    };
    q.line_blocks()
        .iter()
        .enumerate()
        .filter(|(_, b)| b.is_some_and(|k| p.planted_blocks.contains(&order[k])))
        .map(|(i, _)| i)
        .collect()
}
