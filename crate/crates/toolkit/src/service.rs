//! HTTP+JSON backend for goal-directed editing of refactored programs.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use shape_macros::dataset::Dataset;
use shape_macros::exec::execute;
use shape_macros::geometry::{corner_distance, ExportedCuboid, ShapeGeometry};
use shape_macros::lang::{format_line, print_program, ParamKind, ParamValue};
use shape_macros::library::{Library, RefactoredProgram};
use shape_macros::search::{best_programs, SearchConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Base,
    #[default]
    Macro,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub call: usize,
    pub arg: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecuteRequest {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub overrides: Vec<Override>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRequest {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub overrides: Vec<Override>,
    pub target: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotDiagnostic {
    pub call: usize,
    pub arg: usize,
    pub message: String,
}

/// A continuous slot the editor can expose as a slider.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slider {
    pub call: usize,
    pub arg: usize,
    pub function: String,
    pub domain: shape_macros::lang::Domain,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditTask {
    pub id: usize,
    pub family: String,
    pub source: usize,
    pub target: usize,
    pub mode: Mode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgramSummary {
    pub id: usize,
    pub name: String,
    pub family: String,
    pub lines: usize,
    pub calls: usize,
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    BadRequest { error: String, diagnostics: Vec<SlotDiagnostic> },
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self {
            ApiError::NotFound(what) => (StatusCode::NOT_FOUND, Json(json!({ "error": what }))).into_response(),
            ApiError::BadRequest { error, diagnostics } => (
                StatusCode::BAD_REQUEST,
                Json(json!({ "error": error, "diagnostics": diagnostics })),
            )
                .into_response(),
            ApiError::Internal(e) => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": e }))).into_response(),
        }
    }
}

pub struct EditorService {
    names: Vec<String>,
    families: Vec<String>,
    library: Library,
    base: Library,
    base_programs: Vec<RefactoredProgram>,
    macro_programs: Vec<RefactoredProgram>,
    tasks: Vec<EditTask>,
    log: Mutex<File>,
    log_path: PathBuf,
}

impl EditorService {
    /// Refactors `d` under both libraries and draws `num_tasks` editing tasks.
    pub fn new(
        d: &Dataset,
        families: Vec<String>,
        library: Library,
        search: &SearchConfig,
        num_tasks: usize,
        seed: u64,
        log_path: &Path,
    ) -> anyhow::Result<EditorService> {
        anyhow::ensure!(families.len() == d.len(), "{} families for {} programs", families.len(), d.len());
        let base = Library::base();
        let base_programs = best_programs(d, &base, search)?;
        let macro_programs = best_programs(d, &library, search)?;
        let log = OpenOptions::new().create(true).append(true).open(log_path)?;
        let mut svc = EditorService {
            names: d.entries().iter().map(|e| e.name.clone()).collect(),
            families,
            library,
            base,
            base_programs,
            macro_programs,
            tasks: Vec::new(),
            log: Mutex::new(log),
            log_path: log_path.to_path_buf(),
        };
        svc.tasks = svc.generate_tasks(num_tasks, seed);
        Ok(svc)
    }

    pub fn tasks(&self) -> &[EditTask] {
        &self.tasks
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    fn programs(&self, mode: Mode) -> (&Library, &[RefactoredProgram]) {
        match mode {
            Mode::Base => (&self.base, &self.base_programs),
            Mode::Macro => (&self.library, &self.macro_programs),
        }
    }

    fn program(&self, id: usize, mode: Mode) -> Result<(&Library, &RefactoredProgram), ApiError> {
        let (lib, ps) = self.programs(mode);
        ps.get(id)
            .map(|rp| (lib, rp))
            .ok_or_else(|| ApiError::NotFound(format!("program {id}")))
    }

    /// Two programs can form a task when they call the same functions with
    /// the same non-continuous arguments.
    fn compatible(&self, a: usize, b: usize, mode: Mode) -> bool {
        let (lib, ps) = self.programs(mode);
        let (x, y) = (&ps[a], &ps[b]);
        x.calls.len() == y.calls.len()
            && x.calls.iter().zip(&y.calls).all(|(p, q)| {
                p.function == q.function
                    && lib.functions()[p.function]
                        .formals
                        .iter()
                        .zip(p.args.iter().zip(&q.args))
                        .all(|(f, (u, v))| f.kind == ParamKind::Float || u == v)
            })
            && self.geometry(b, mode, &[]).ok() != self.geometry(a, mode, &[]).ok()
    }

    fn generate_tasks(&self, n: usize, seed: u64) -> Vec<EditTask> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fams: Vec<&String> = self.families.iter().collect();
        fams.sort();
        fams.dedup();
        let mut tasks = Vec::new();
        let mode = Mode::Macro;
        for _ in 0..n.saturating_mul(50) {
            if tasks.len() >= n {
                break;
            }
            let Some(&fam) = fams.choose(&mut rng) else { break };
            let members: Vec<usize> = (0..self.families.len()).filter(|&i| &self.families[i] == fam).collect();
            if members.len() < 2 {
                continue;
            }
            let pair: Vec<usize> = members.choose_multiple(&mut rng, 2).copied().collect();
            if self.compatible(pair[0], pair[1], mode) {
                tasks.push(EditTask {
                    id: tasks.len(),
                    family: fam.clone(),
                    source: pair[0],
                    target: pair[1],
                    mode,
                });
            }
        }
        tasks
    }

    pub fn sliders(&self, id: usize, mode: Mode) -> Result<Vec<Slider>, ApiError> {
        let (lib, rp) = self.program(id, mode)?;
        let mut out = Vec::new();
        for (i, c) in rp.calls.iter().enumerate() {
            let f = &lib.functions()[c.function];
            for (j, (formal, v)) in f.formals.iter().zip(&c.args).enumerate() {
                if let (ParamKind::Float, ParamValue::Float(x)) = (formal.kind, v) {
                    out.push(Slider {
                        call: i,
                        arg: j,
                        function: f.name.clone(),
                        domain: formal.domain,
                        value: *x,
                    });
                }
            }
        }
        Ok(out)
    }

    fn apply(&self, id: usize, mode: Mode, overrides: &[Override]) -> Result<(&Library, RefactoredProgram), ApiError> {
        let (lib, rp) = self.program(id, mode)?;
        let mut out = rp.clone();
        let mut diagnostics = Vec::new();
        for o in overrides {
            let diag = |m: &str| SlotDiagnostic {
                call: o.call,
                arg: o.arg,
                message: m.to_string(),
            };
            let Some(call) = out.calls.get_mut(o.call) else {
                diagnostics.push(diag(&format!("program has {} calls", rp.calls.len())));
                continue;
            };
            let f = &lib.functions()[call.function];
            let Some(formal) = f.formals.get(o.arg) else {
                diagnostics.push(diag(&format!("{} takes {} arguments", f.name, f.formals.len())));
                continue;
            };
            if formal.kind != ParamKind::Float {
                diagnostics.push(diag(&format!("argument is {:?}, not continuous", formal.domain)));
            } else if !o.value.is_finite() || formal.domain.clamp(o.value) != o.value {
                diagnostics.push(diag(&format!("{} is outside the {:?} domain", o.value, formal.domain)));
            } else {
                call.args[o.arg] = ParamValue::Float(o.value);
            }
        }
        if diagnostics.is_empty() {
            Ok((lib, out))
        } else {
            Err(ApiError::BadRequest {
                error: "malformed override".into(),
                diagnostics,
            })
        }
    }

    pub fn geometry(&self, id: usize, mode: Mode, overrides: &[Override]) -> Result<ShapeGeometry<f64>, ApiError> {
        let (lib, rp) = self.apply(id, mode, overrides)?;
        let p = rp.to_program(lib).map_err(|e| ApiError::Internal(e.to_string()))?;
        execute::<f64>(&p).map_err(|e| ApiError::BadRequest {
            error: format!("execution failed: {e}"),
            diagnostics: Vec::new(),
        })
    }

    pub fn distance(&self, id: usize, req: &DistanceRequest) -> Result<f64, ApiError> {
        let cur = self.geometry(id, req.mode, &req.overrides)?;
        let target = self.geometry(req.target, req.mode, &[])?;
        Ok(corner_distance(&cur, &target))
    }

    fn macro_text(&self, id: usize) -> Result<String, ApiError> {
        let (lib, rp) = self.program(id, Mode::Macro)?;
        let mut out = String::new();
        for c in &rp.calls {
            let f = &lib.functions()[c.function];
            if Library::is_base(c.function) {
                let line = shape_macros::lang::Line::new(f.body[0].command, c.args.clone())
                    .map_err(|e| ApiError::Internal(e.to_string()))?;
                out += &format_line(&line, None);
            } else {
                let args: Vec<String> = c.args.iter().map(format_value).collect();
                out += &format!("{}({})", f.name, args.join(", "));
            }
            out.push('\n');
        }
        Ok(out)
    }

    fn base_text(&self, id: usize) -> Result<String, ApiError> {
        let (lib, rp) = self.program(id, Mode::Base)?;
        let p = rp.to_program(lib).map_err(|e| ApiError::Internal(e.to_string()))?;
        Ok(print_program(&p))
    }

    pub fn log_event(&self, event: Value) -> Result<Value, ApiError> {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let record = json!({ "ts": ts, "event": event });
        let mut line = serde_json::to_string(&record).map_err(|e| ApiError::Internal(e.to_string()))?;
        line.push('\n');
        let mut f = self.log.lock().map_err(|_| ApiError::Internal("edit log poisoned".into()))?;
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        Ok(record)
    }
}

fn format_value(v: &ParamValue) -> String {
    match v {
        ParamValue::Float(x) => format!("{x}"),
        ParamValue::Discrete(s) => s.to_string(),
        ParamValue::Bool(b) => if *b { "True" } else { "False" }.to_string(),
        ParamValue::Cid(c) if c.0 == 0 => "bbox".to_string(),
        ParamValue::Cid(c) => format!("c{}", c.0),
    }
}

type Shared = Arc<EditorService>;

async fn list_programs(State(s): State<Shared>) -> Json<Vec<ProgramSummary>> {
    Json(
        (0..s.names.len())
            .map(|i| ProgramSummary {
                id: i,
                name: s.names[i].clone(),
                family: s.families[i].clone(),
                lines: s.base_programs[i].calls.len(),
                calls: s.macro_programs[i].calls.len(),
            })
            .collect(),
    )
}

async fn get_program(State(s): State<Shared>, UrlPath(id): UrlPath<usize>) -> Result<Json<Value>, ApiError> {
    Ok(Json(json!({
        "id": id,
        "name": s.names.get(id).ok_or_else(|| ApiError::NotFound(format!("program {id}")))?,
        "family": s.families[id],
        "base_text": s.base_text(id)?,
        "macro_text": s.macro_text(id)?,
        "sliders": { "base": s.sliders(id, Mode::Base)?, "macro": s.sliders(id, Mode::Macro)? },
    })))
}

async fn execute_program(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<usize>,
    Json(req): Json<ExecuteRequest>,
) -> Result<Json<Vec<ExportedCuboid>>, ApiError> {
    Ok(Json(s.geometry(id, req.mode, &req.overrides)?.export()))
}

async fn distance(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<usize>,
    Json(req): Json<DistanceRequest>,
) -> Result<Json<Value>, ApiError> {
    Ok(Json(json!({ "distance": s.distance(id, &req)? })))
}

async fn list_tasks(State(s): State<Shared>) -> Json<Vec<EditTask>> {
    Json(s.tasks.clone())
}

async fn get_task(State(s): State<Shared>, UrlPath(id): UrlPath<usize>) -> Result<Json<Value>, ApiError> {
    let t = s.tasks.get(id).ok_or_else(|| ApiError::NotFound(format!("task {id}")))?;
    Ok(Json(json!({
        "task": t,
        "sliders": s.sliders(t.source, t.mode)?,
        "target_geometry": s.geometry(t.target, t.mode, &[])?.export(),
        "distance": s.distance(t.source, &DistanceRequest { mode: t.mode, overrides: Vec::new(), target: t.target })?,
    })))
}

async fn log_event(State(s): State<Shared>, Json(event): Json<Value>) -> Result<Json<Value>, ApiError> {
    s.log_event(event).map(Json)
}

pub fn router(service: Arc<EditorService>) -> Router {
    Router::new()
        .route("/programs", get(list_programs))
        .route("/programs/{id}", get(get_program))
        .route("/programs/{id}/execute", post(execute_program))
        .route("/programs/{id}/distance", post(distance))
        .route("/tasks", get(list_tasks))
        .route("/tasks/{id}", get(get_task))
        .route("/log", post(log_event))
        .with_state(service)
}

pub async fn serve(service: EditorService, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(service))).await?;
    Ok(())
}
