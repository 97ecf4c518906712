//! Scenario configuration: one JSON document per run, every default
//! explicit via `--print-defaults`, unknown keys rejected.

use std::path::PathBuf;
use std::sync::Arc;

use fieldglue::{
    build_domain, Domain, Grid, OperatorKind, OperatorSpec, Preconditioner, Shape, SolveConfig,
    WeightConfig,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Free-form scenario label used in artifact names and the summary.
    pub scenario: String,
    pub operator: OperatorKind,
    pub dimension: usize,
    pub grid: GridConfig,
    pub shape: ShapeConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub solver: SolverSection,
    /// Source field for `solve`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<FieldSpec>,
    /// Inner solution for `glue`, `truncate` and `flux-match`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_field: Option<FieldSpec>,
    /// Outer solution for `glue`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_field: Option<FieldSpec>,
    /// Candidate outer solutions for `flux-match`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Vec<FieldSpec>>,
    /// Cutoff transition interval in the gluing coordinate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<[f64; 2]>,
    /// Boundary collar width for `api-estimate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collar_width: Option<f64>,
    /// Sample count for `api-estimate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<usize>,
    /// Candidate count for `kernel-dim`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_count: Option<usize>,
    /// Output directory (overridden by --out).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub cells: Vec<usize>,
    pub extents: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeConfig {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Annulus {
        center: Vec<f64>,
        r_in: f64,
        r_out: f64,
    },
    BallDifference {
        center: Vec<f64>,
        radius: f64,
        hole_center: Vec<f64>,
        hole_radius: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    /// Weight exponent a; default is ceil(n/2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<u32>,
    /// Decay rate s > 0.
    pub s: f64,
    pub underflow_floor: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig {
            a: None,
            s: 1.0,
            underflow_floor: 1e-300,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub rel_tolerance: f64,
    /// 0 selects 10x the unknown count.
    pub max_iterations: usize,
    pub preconditioner: Preconditioner,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            rel_tolerance: 1e-8,
            max_iterations: 0,
            preconditioner: Preconditioner::Diagonal,
        }
    }
}

/// Constructible fields and sources.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// The zero field.
    Zero,
    /// Exact point-charge field (one-form), singular at the center.
    Coulomb { center: Vec<f64>, charge: f64 },
    /// Point charge mollified over `smoothing_radius`; exactly Coulomb
    /// outside it.
    SmoothedCoulomb {
        center: Vec<f64>,
        charge: f64,
        smoothing_radius: f64,
    },
    /// Superposition of smoothed charges.
    CoulombSum { charges: Vec<ChargeSpec> },
    /// 1D source f = b' for a compactly supported bump b (scalar).
    BumpDerivative { center: f64, halfwidth: f64 },
    /// 2D zero-mean radial source whose exact solution is an interior
    /// radial bump one-form (scalar source).
    RadialBump {
        center: Vec<f64>,
        support_radius: f64,
    },
    /// 2D zero-mean radial source whose exact solution carries the weight
    /// envelope decay toward the boundary (scalar source).
    BoundaryEnvelope {
        center: Vec<f64>,
        shape_radius: f64,
        r_mod: f64,
    },
    /// Divergence of a seeded random trace-free tensor supported in a ball:
    /// a compatible source for the conformal Killing operator.
    TtSeedDivergence {
        center: Vec<f64>,
        support_radius: f64,
        seed: u64,
    },
    /// A trace-free divergence-free tensor manufactured by solving
    /// P U = -P W0 for a seeded random seed W0 and returning W0 + U.
    ManufacturedTt {
        center: Vec<f64>,
        support_radius: f64,
        seed: u64,
    },
    /// Load a previously written field dump.
    FieldDump { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargeSpec {
    pub center: Vec<f64>,
    pub charge: f64,
    pub smoothing_radius: f64,
}

/// A config whose every field is populated with its default or an example
/// value; printed by --print-defaults.
pub fn default_config() -> ScenarioConfig {
    ScenarioConfig {
        scenario: "coulomb-glue".into(),
        operator: OperatorKind::Grad,
        dimension: 3,
        grid: GridConfig {
            cells: vec![48, 48, 48],
            extents: vec![[-2.5, 2.5], [-2.5, 2.5], [-2.5, 2.5]],
        },
        shape: ShapeConfig::Annulus {
            center: vec![0.0, 0.0, 0.0],
            r_in: 1.0,
            r_out: 2.0,
        },
        weights: WeightsConfig {
            a: Some(2),
            s: 1.0,
            underflow_floor: 1e-300,
        },
        solver: SolverSection::default(),
        source: None,
        inner_field: Some(FieldSpec::CoulombSum {
            charges: vec![
                ChargeSpec {
                    center: vec![0.15, 0.0, 0.0],
                    charge: 0.5,
                    smoothing_radius: 0.25,
                },
                ChargeSpec {
                    center: vec![-0.15, 0.0, 0.0],
                    charge: 0.5,
                    smoothing_radius: 0.25,
                },
            ],
        }),
        outer_field: Some(FieldSpec::Coulomb {
            center: vec![0.0, 0.0, 0.0],
            charge: 1.0,
        }),
        family: None,
        transition: Some([1.2, 1.8]),
        collar_width: Some(0.2),
        sample_count: Some(20),
        candidate_count: None,
        output_dir: Some(PathBuf::from("out")),
    }
}

/// Validation failure with a config-level explanation (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn center3(v: &[f64], n: usize, what: &str) -> Result<[f64; 3], ConfigError> {
    if v.len() != n {
        return Err(ConfigError(format!(
            "{what}: expected {n} coordinates, got {}",
            v.len()
        )));
    }
    let mut c = [0.0; 3];
    c[..n].copy_from_slice(v);
    Ok(c)
}

pub struct BuiltScenario {
    pub config: ScenarioConfig,
    pub op: OperatorSpec,
    pub domain: Domain,
    pub wc: WeightConfig,
    pub solve: SolveConfig,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<ScenarioConfig, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError(format!("{e}")))
    }

    /// Validates the static parts and builds the operator, domain and
    /// weight configuration.
    pub fn build(self) -> Result<BuiltScenario, ConfigError> {
        let n = self.dimension;
        if !(1..=3).contains(&n) {
            return Err(ConfigError(format!(
                "dimension {n} is not supported (must be 1, 2 or 3)"
            )));
        }
        if self.operator == OperatorKind::ConfKilling && n < 3 {
            return Err(ConfigError(format!(
                "operator conf_killing with dimension {n}: the conformal Killing operator is \
                 determined elliptic in dimension 2 and is only supported for dimension 3"
            )));
        }
        let op = OperatorSpec::new(self.operator, n)
            .map_err(|e| ConfigError(format!("operator: {e}")))?;
        if self.grid.cells.len() != n || self.grid.extents.len() != n {
            return Err(ConfigError(format!(
                "grid: cells and extents need exactly {n} entries"
            )));
        }
        let extents: Vec<(f64, f64)> = self.grid.extents.iter().map(|e| (e[0], e[1])).collect();
        let grid = Grid::new(n, &extents, &self.grid.cells)
            .map_err(|e| ConfigError(format!("grid: {e}")))?;
        let shape = match &self.shape {
            ShapeConfig::Ball { center, radius } => Shape::Ball {
                center: center3(center, n, "shape.center")?,
                radius: *radius,
            },
            ShapeConfig::Annulus {
                center,
                r_in,
                r_out,
            } => Shape::Annulus {
                center: center3(center, n, "shape.center")?,
                r_in: *r_in,
                r_out: *r_out,
            },
            ShapeConfig::BallDifference {
                center,
                radius,
                hole_center,
                hole_radius,
            } => Shape::BallDifference {
                center: center3(center, n, "shape.center")?,
                radius: *radius,
                hole_center: center3(hole_center, n, "shape.hole_center")?,
                hole_radius: *hole_radius,
            },
        };
        let domain = build_domain(shape, grid).map_err(|e| ConfigError(format!("shape: {e}")))?;
        let a = self.weights.a.unwrap_or(n.div_ceil(2) as u32);
        let mut wc =
            WeightConfig::new(a, self.weights.s).map_err(|e| ConfigError(format!("weights: {e}")))?;
        wc.underflow_floor = self.weights.underflow_floor;
        wc.validate().map_err(|e| ConfigError(format!("weights: {e}")))?;
        if !(0.0 < self.solver.rel_tolerance && self.solver.rel_tolerance < 1.0) {
            return Err(ConfigError(
                "solver.rel_tolerance must lie in (0, 1)".into(),
            ));
        }
        let solve = SolveConfig {
            rel_tolerance: self.solver.rel_tolerance,
            max_iterations: self.solver.max_iterations,
            preconditioner: self.solver.preconditioner,
            record_energy: false,
        };
        Ok(BuiltScenario {
            config: self,
            op,
            domain,
            wc,
            solve,
        })
    }
}

impl FieldSpec {
    /// Realizes a field spec on the grid in the operator's field bundle
    /// (solutions of P U = 0 and gluing inputs).
    pub fn build_field(
        &self,
        built: &BuiltScenario,
        grid: Arc<Grid>,
    ) -> Result<fieldglue::TensorField, ConfigError> {
        use fieldglue::synth;
        let n = built.op.n;
        match self {
            FieldSpec::Zero => Ok(fieldglue::TensorField::zeros(
                grid,
                built.op.field_bundle(),
            )),
            FieldSpec::Coulomb { center, charge } => {
                expect_one_form(built, "coulomb")?;
                Ok(synth::coulomb_field(
                    grid,
                    center3(center, n, "coulomb.center")?,
                    *charge,
                ))
            }
            FieldSpec::SmoothedCoulomb {
                center,
                charge,
                smoothing_radius,
            } => {
                expect_one_form(built, "smoothed_coulomb")?;
                Ok(synth::smoothed_coulomb_field(
                    grid,
                    center3(center, n, "smoothed_coulomb.center")?,
                    *charge,
                    *smoothing_radius,
                ))
            }
            FieldSpec::CoulombSum { charges } => {
                expect_one_form(built, "coulomb_sum")?;
                let mut total = fieldglue::TensorField::zeros(grid.clone(), built.op.field_bundle());
                for ch in charges {
                    let f = synth::smoothed_coulomb_field(
                        grid.clone(),
                        center3(&ch.center, n, "coulomb_sum.center")?,
                        ch.charge,
                        ch.smoothing_radius,
                    );
                    total.axpy(1.0, &f);
                }
                Ok(total)
            }
            FieldSpec::ManufacturedTt {
                center,
                support_radius,
                seed,
            } => {
                if built.op.kind != OperatorKind::ConfKilling {
                    return Err(ConfigError(
                        "manufactured_tt requires operator conf_killing".into(),
                    ));
                }
                let c = center3(center, n, "manufactured_tt.center")?;
                let w0 = synth::random_ball_supported_field(
                    grid,
                    built.op.field_bundle(),
                    *seed,
                    c,
                    *support_radius,
                );
                // stencil divergence: compatibility holds exactly by the
                // discrete adjointness (the seed is interior-supported)
                let mut f = fieldglue::apply_forward(built.op, &w0)
                    .map_err(|e| ConfigError(format!("manufactured_tt: {e}")))?;
                f.scale(-1.0);
                let sol = fieldglue::solve_compact_support(
                    built.op,
                    &built.domain,
                    &built.wc,
                    &f,
                    &built.solve,
                )
                .map_err(|e| ConfigError(format!("manufactured_tt solve: {e}")))?;
                let mut v = w0;
                v.axpy(1.0, &sol.field);
                Ok(v)
            }
            FieldSpec::FieldDump { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ConfigError(format!("field_dump {path:?}: {e}")))?;
                fieldglue::io::read_field_dump(&text, grid)
                    .map_err(|e| ConfigError(format!("field_dump {path:?}: {e}")))
            }
            other => Err(ConfigError(format!(
                "{other:?} is a scalar source, not a field in the operator's image bundle"
            ))),
        }
    }

    /// Realizes a field spec as a source f for `solve` (potential bundle).
    pub fn build_source(
        &self,
        built: &BuiltScenario,
        grid: Arc<Grid>,
    ) -> Result<fieldglue::TensorField, ConfigError> {
        use fieldglue::synth;
        let n = built.op.n;
        match self {
            FieldSpec::Zero => Ok(fieldglue::TensorField::zeros(
                grid,
                built.op.potential_bundle(),
            )),
            FieldSpec::BumpDerivative { center, halfwidth } => {
                if n != 1 || built.op.kind != OperatorKind::Grad {
                    return Err(ConfigError(
                        "bump_derivative is the 1D grad source".into(),
                    ));
                }
                Ok(synth::bump_source_1d(grid, *center, *halfwidth).0)
            }
            FieldSpec::RadialBump {
                center,
                support_radius,
            } => {
                if n != 2 || built.op.kind != OperatorKind::Grad {
                    return Err(ConfigError("radial_bump is the 2D grad source".into()));
                }
                let c = center3(center, n, "radial_bump.center")?;
                let _ = grid;
                Ok(synth::radial_bump_oracle_2d(&built.domain, c, *support_radius).f)
            }
            FieldSpec::BoundaryEnvelope {
                center,
                shape_radius,
                r_mod,
            } => {
                if n != 2 || built.op.kind != OperatorKind::Grad {
                    return Err(ConfigError(
                        "boundary_envelope is the 2D grad source".into(),
                    ));
                }
                let c = center3(center, n, "boundary_envelope.center")?;
                let _ = grid;
                Ok(synth::envelope_decay_oracle_2d(&built.domain, c, *shape_radius, &built.wc, *r_mod).f)
            }
            FieldSpec::TtSeedDivergence {
                center,
                support_radius,
                seed,
            } => {
                if built.op.kind != OperatorKind::ConfKilling {
                    return Err(ConfigError(
                        "tt_seed_divergence requires operator conf_killing".into(),
                    ));
                }
                let c = center3(center, n, "tt_seed_divergence.center")?;
                let w0 = synth::random_ball_supported_field(
                    grid,
                    built.op.field_bundle(),
                    *seed,
                    c,
                    *support_radius,
                );
                let mut f = fieldglue::apply_forward(built.op, &w0)
                    .map_err(|e| ConfigError(format!("tt_seed_divergence: {e}")))?;
                f.scale(-1.0);
                Ok(f)
            }
            other => Err(ConfigError(format!(
                "{other:?} is not usable as a solve source"
            ))),
        }
    }
}

fn expect_one_form(built: &BuiltScenario, what: &str) -> Result<(), ConfigError> {
    if built.op.field_bundle().kind != fieldglue::BundleKind::OneForm {
        return Err(ConfigError(format!(
            "{what} builds a one-form; operator {:?} expects {:?}",
            built.op.kind,
            built.op.field_bundle().kind
        )));
    }
    Ok(())
}
