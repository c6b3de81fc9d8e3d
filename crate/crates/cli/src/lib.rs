//! Command-line front end for the geometry kernel.
//!
//! Exit codes: 0 on success, 2 for rejected arguments, 1 for numeric
//! failures and I/O errors.

use std::ffi::OsString;
use std::fmt;
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use serde::Serialize;
use serde_json::Value;
use thurston::geodesics::{
    angle, distance, nil, nil_sphere_cross_section, sample_geodesic, GeodesicParams, NilProjection,
};
use thurston::model_core::origin;
use thurston::packing::{
    density, fibre_lattice, optimize_kernel, s2xr_group_4q_I_2, trace_csv, triangle_corners_4q, KernelRegion,
    OptimizeOptions, PackingResult, ProductPoint, SpaceGroupSpec, DEFAULT_SAMPLES,
};
use thurston::ratios::{
    ceva_product, menelaus_product, nil_menelaus_counterexample, projected_arc_ratio_nil,
    projected_ceva_product_nil, simple_ratio_detail, LineStations, RatioKind,
};
use thurston::surfaces::{
    apollonius_mesh, nil_ball_convexity_check, sphere_mesh, ApolloniusSpec, IsoBox, TriMesh,
};
use thurston::triangles::{circumsphere, interior_angles, GeodesicTriangle, TriangleKind};
use thurston::{GeomError, HPoint, SpaceId};

#[derive(Debug, Parser)]
#[command(
    name = "thurston",
    version,
    about = "Geodesics, spheres, triangles, ratios and ball packings in S2xR, H2xR, Nil, SL2R and Sol"
)]
pub struct Cli {
    /// Worker threads; all cores when unset.
    #[arg(long, global = true, env = "THURSTON_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Samples a geodesic from a start point.
    Geodesic(GeodesicCmd),
    /// Distance between two points and the initial direction from the first.
    Distance(DistanceCmd),
    /// Angle between two tangent vectors at a point.
    Angle(AngleCmd),
    /// Interior angles and angle sum of a geodesic triangle.
    Triangle(TriangleCmd),
    /// Geodesic sphere through four points.
    Circumsphere(CircumsphereCmd),
    /// Mesh of a geodesic sphere.
    SphereMesh(SphereMeshCmd),
    /// Mesh of an Apollonius surface in a product space.
    ApolloniusMesh(ApolloniusCmd),
    /// Signed simple ratio of three collinear points.
    Ratio(RatioCmd),
    /// Ceva product of a triangle and three cevian feet.
    Ceva(CevaCmd),
    /// Menelaus product of a triangle and three transversal points.
    Menelaus(MenelausCmd),
    /// Ball packing density of a space group orbit.
    Packing(PackingCmd),
    /// Nil fibre projections, sphere cross-sections and ball convexity.
    NilTools {
        #[command(subcommand)]
        tool: NilTool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Obj,
    Csv,
    Json,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Obj => "obj",
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Args)]
struct Output {
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format; taken from the extension of --out when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Args)]
struct GeodesicCmd {
    #[arg(long, value_parser = parse_space)]
    space: SpaceId,
    /// Azimuth of the initial direction.
    #[arg(long, allow_hyphen_values = true)]
    u: f64,
    /// Elevation of the initial direction.
    #[arg(long, allow_hyphen_values = true)]
    v: f64,
    /// Arc length.
    #[arg(long)]
    s: f64,
    /// Number of sample points, endpoints included.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Start point `x,y,z`; the space's origin when omitted.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    from: Option<HPoint>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct DistanceCmd {
    #[arg(long, value_parser = parse_space)]
    space: SpaceId,
    /// First point `x,y,z`; the origin when omitted.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    p: Option<HPoint>,
    /// Second point `x,y,z`.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    q: HPoint,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct AngleCmd {
    #[arg(long, value_parser = parse_space)]
    space: SpaceId,
    /// Base point `x,y,z`; the origin when omitted.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    at: Option<HPoint>,
    /// First tangent vector in model coordinates.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    tu: Vector3<f64>,
    /// Second tangent vector in model coordinates.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    tv: Vector3<f64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct TriangleCmd {
    #[arg(long, value_parser = parse_space)]
    space: SpaceId,
    /// Three vertices `x,y,z;x,y,z;x,y,z`.
    #[arg(long, value_parser = parse_point, value_delimiter = ';', allow_hyphen_values = true, required = true)]
    vertices: Vec<HPoint>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct CircumsphereCmd {
    #[arg(long, value_parser = parse_space)]
    space: SpaceId,
    /// Four vertices separated by `;`.
    #[arg(long, value_parser = parse_point, value_delimiter = ';', allow_hyphen_values = true, required = true)]
    vertices: Vec<HPoint>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct SphereMeshCmd {
    #[arg(long, value_parser = parse_space)]
    space: SpaceId,
    /// Centre `x,y,z`; the origin when omitted.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    center: Option<HPoint>,
    #[arg(long)]
    radius: f64,
    /// Directions per azimuth and elevation.
    #[arg(long, default_value_t = 32)]
    n_dirs: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct ApolloniusCmd {
    #[arg(long, value_parser = parse_space)]
    space: SpaceId,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    p1: HPoint,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    p2: HPoint,
    /// Distance ratio d(x, p1) / d(x, p2).
    #[arg(long)]
    lambda: f64,
    /// Lower corner of the sampling box.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    lo: Vector3<f64>,
    /// Upper corner of the sampling box.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    hi: Vector3<f64>,
    /// Grid cells per axis.
    #[arg(long, default_value_t = 48)]
    resolution: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Base,
    General,
    Fibre,
    Nil,
    /// Nil arcs measured after fibre projection.
    Projected,
}

impl KindArg {
    fn ratio_kind(self) -> Option<RatioKind> {
        match self {
            KindArg::Base => Some(RatioKind::Base),
            KindArg::General => Some(RatioKind::General),
            KindArg::Fibre => Some(RatioKind::Fibre),
            KindArg::Nil => Some(RatioKind::Nil),
            KindArg::Projected => None,
        }
    }
}

#[derive(Debug, Args)]
struct RatioCmd {
    #[arg(long, value_parser = parse_space)]
    space: SpaceId,
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    a: HPoint,
    /// Dividing point.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    p: HPoint,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    b: HPoint,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct CevaCmd {
    #[arg(long, value_parser = parse_space)]
    space: SpaceId,
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Triangle vertices separated by `;`.
    #[arg(long, value_parser = parse_point, value_delimiter = ';', allow_hyphen_values = true, required = true)]
    vertices: Vec<HPoint>,
    /// Feet on the sides A0A1, A1A2 and A2A0.
    #[arg(long, value_parser = parse_point, value_delimiter = ';', allow_hyphen_values = true, required = true)]
    feet: Vec<HPoint>,
    /// Common point of the cevians, checked when given.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    cevian: Option<HPoint>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct MenelausCmd {
    #[arg(long, value_parser = parse_space, required_unless_present = "nil_counterexample")]
    space: Option<SpaceId>,
    #[arg(long, value_enum, required_unless_present = "nil_counterexample")]
    kind: Option<KindArg>,
    /// Triangle vertices separated by `;`.
    #[arg(long, value_parser = parse_point, value_delimiter = ';', allow_hyphen_values = true,
          required_unless_present = "nil_counterexample")]
    vertices: Vec<HPoint>,
    /// Transversal points on the sides A0A1, A1A2 and A2A0.
    #[arg(long, value_parser = parse_point, value_delimiter = ';', allow_hyphen_values = true,
          required_unless_present = "nil_counterexample")]
    points: Vec<HPoint>,
    /// Reports the archived Nil configuration whose product differs from -1.
    #[arg(long, conflicts_with_all = ["space", "kind", "vertices", "points"])]
    nil_counterexample: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GroupArg {
    /// Space group 4q.I.2 of S2xR.
    #[value(name = "4q.I.2")]
    FourQ,
    /// Pure fibre translations of S2xR.
    Fibre,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CornerArg {
    A1,
    A2,
    A3,
}

#[derive(Debug, Args)]
struct PackingCmd {
    #[arg(long, value_enum)]
    group: GroupArg,
    /// Rotation order parameter of 4q.I.2.
    #[arg(long, default_value_t = 2)]
    q: u32,
    /// Lattice period of the fibre translations; required unless optimizing.
    #[arg(long)]
    period: Option<f64>,
    /// Kernel base direction `x,y,z`.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true, conflicts_with = "corner")]
    kernel: Option<Vector3<f64>>,
    /// Kernel at a corner of the fundamental triangle.
    #[arg(long, value_enum)]
    corner: Option<CornerArg>,
    /// Fibre coordinate of the kernel.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    fibre: f64,
    /// Searches kernels over the fundamental triangle and the lattice period.
    #[arg(long, conflicts_with_all = ["kernel", "corner"])]
    optimize: bool,
    /// Lattice period search interval `min,max` for --optimize.
    #[arg(long, value_parser = parse_pair)]
    period_range: Option<(f64, f64)>,
    /// Monte Carlo samples for the cell volume.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV file for the optimizer trace of the winning stratum.
    #[arg(long, requires = "optimize")]
    trace: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Subcommand)]
enum NilTool {
    /// Fibre projection of the geodesic from the origin with direction (alpha, theta).
    Projection {
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long, allow_hyphen_values = true)]
        theta: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Profile of the sphere of a given radius in the plane y = 0.
    CrossSection {
        #[arg(long)]
        radius: f64,
        /// Elevations sampled over [-π/2, π/2].
        #[arg(long, default_value_t = 181)]
        samples: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Affine convexity of the ball of a given radius.
    Convexity {
        #[arg(long)]
        radius: f64,
        #[arg(long, default_value_t = 400)]
        samples: usize,
        #[command(flatten)]
        output: Output,
    },
}

fn parse_space(s: &str) -> Result<SpaceId, String> {
    s.parse().map_err(|_| format!("unknown space `{s}` (expected s2xr, h2xr, nil, sl2r or sol)"))
}

fn parse_numbers(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| format!("`{t}` is not a finite number"))
        })
        .collect()
}

fn parse_vector(s: &str) -> Result<Vector3<f64>, String> {
    match parse_numbers(s)?[..] {
        [x, y, z] => Ok(Vector3::new(x, y, z)),
        _ => Err(format!("expected three comma-separated numbers, got `{s}`")),
    }
}

/// `x,y,z` affine or `x0,x1,x2,x3` homogeneous coordinates.
fn parse_point(s: &str) -> Result<HPoint, String> {
    match parse_numbers(s)?[..] {
        [x, y, z] => Ok(HPoint::affine(x, y, z)),
        [x0, x1, x2, x3] => Ok(HPoint::new(x0, x1, x2, x3)),
        _ => Err(format!("expected a point `x,y,z` or `x0,x1,x2,x3`, got `{s}`")),
    }
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    match parse_numbers(s)?[..] {
        [a, b] if a < b => Ok((a, b)),
        _ => Err(format!("expected `min,max` with min < max, got `{s}`")),
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Geom(GeomError),
    Io(PathBuf, std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Geom(e) if !e.is_numeric() => 2,
            CliError::Geom(_) | CliError::Io(..) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Geom(e) if e.is_numeric() => write!(f, "numeric failure: {e}"),
            CliError::Geom(e) => write!(f, "invalid input: {e}"),
            CliError::Io(p, e) => write!(f, "cannot write {}: {e}", p.display()),
        }
    }
}

impl From<GeomError> for CliError {
    fn from(e: GeomError) -> Self {
        CliError::Geom(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        Some(n) => pool = pool.num_threads(n),
        None => {}
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Geodesic(c) => geodesic_cmd(c),
        Command::Distance(c) => distance_cmd(c),
        Command::Angle(c) => angle_cmd(c),
        Command::Triangle(c) => triangle_cmd(c),
        Command::Circumsphere(c) => circumsphere_cmd(c),
        Command::SphereMesh(c) => sphere_mesh_cmd(c),
        Command::ApolloniusMesh(c) => apollonius_cmd(c),
        Command::Ratio(c) => ratio_cmd(c),
        Command::Ceva(c) => ceva_cmd(c),
        Command::Menelaus(c) => menelaus_cmd(c),
        Command::Packing(c) => packing_cmd(c),
        Command::NilTools { tool } => nil_tool_cmd(tool),
    }
}

impl Output {
    /// Chosen format, checked against what the subcommand can write.
    fn format(&self, allowed: &[Format]) -> CliResult<Format> {
        let from_ext = || {
            let ext = self.out.as_deref()?.extension()?.to_str()?.to_ascii_lowercase();
            allowed.iter().copied().find(|f| f.name() == ext)
        };
        let f = self.format.or_else(from_ext).unwrap_or(allowed[0]);
        if allowed.contains(&f) {
            Ok(f)
        } else {
            let names: Vec<_> = allowed.iter().map(|f| f.name()).collect();
            Err(usage(format!("format {} is not available here (use {})", f.name(), names.join(" or "))))
        }
    }

    fn write(&self, text: &str) -> CliResult<()> {
        match &self.out {
            Some(path) => write_file(path, text),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }

    fn json<T: Serialize>(&self, value: &T) -> CliResult<()> {
        self.format(&[Format::Json])?;
        self.write(&to_json(value))
    }

    fn mesh(&self, mesh: &TriMesh) -> CliResult<()> {
        match self.format(&[Format::Obj, Format::Csv])? {
            Format::Csv => self.write(&mesh.vertices_csv()),
            _ => self.write(&mesh.to_obj()),
        }
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Io(path.to_owned(), e))
}

/// Rounds to 12 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn round_numbers(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().and_then(|x| serde_json::Number::from_f64(round_sig(x))) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_numbers),
        Value::Object(map) => map.values_mut().for_each(round_numbers),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to 12 significant digits.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("output types serialize to JSON");
    round_numbers(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("JSON values serialize");
    s.push('\n');
    s
}

fn affine(p: &HPoint) -> [f64; 3] {
    p.to_affine().map_or([f64::NAN; 3], |v| [v.x, v.y, v.z])
}

fn exactly<const N: usize>(points: Vec<HPoint>, what: &str) -> CliResult<[HPoint; N]> {
    let n = points.len();
    points
        .try_into()
        .map_err(|_| usage(format!("{what} needs exactly {N} points, got {n}")))
}

#[derive(Serialize)]
struct Sample {
    s: f64,
    x: f64,
    y: f64,
    z: f64,
}

#[derive(Serialize)]
struct GeodesicOut {
    space: SpaceId,
    start: [f64; 3],
    params: GeodesicParams,
    samples: Vec<Sample>,
}

fn geodesic_cmd(c: GeodesicCmd) -> CliResult<()> {
    let format = c.output.format(&[Format::Csv, Format::Json])?;
    if c.samples < 2 {
        return Err(usage("--samples must be at least 2"));
    }
    let params = GeodesicParams::new(c.space, c.u, c.v, c.s);
    params.validate()?;
    let start = c.from.unwrap_or_else(|| origin(c.space));
    let arc = sample_geodesic(&start, &params, c.samples - 1)?;
    if format == Format::Csv {
        return c.output.write(&arc.to_csv());
    }
    let samples = arc
        .samples
        .iter()
        .map(|(s, p)| {
            let [x, y, z] = affine(p);
            Sample { s: *s, x, y, z }
        })
        .collect();
    c.output.json(&GeodesicOut {
        space: c.space,
        start: affine(&start),
        params,
        samples,
    })
}

#[derive(Serialize)]
struct DistanceOut {
    space: SpaceId,
    p: [f64; 3],
    q: [f64; 3],
    distance: f64,
    /// Direction of the minimizing geodesic at `p`.
    azimuth: f64,
    elevation: f64,
}

fn distance_cmd(c: DistanceCmd) -> CliResult<()> {
    let p = c.p.unwrap_or_else(|| origin(c.space));
    let (d, params) = distance(c.space, &p, &c.q)?;
    c.output.json(&DistanceOut {
        space: c.space,
        p: affine(&p),
        q: affine(&c.q),
        distance: d,
        azimuth: params.dir1,
        elevation: params.dir2,
    })
}

#[derive(Serialize)]
struct AngleOut {
    space: SpaceId,
    at: [f64; 3],
    angle: f64,
}

fn angle_cmd(c: AngleCmd) -> CliResult<()> {
    let at = c.at.unwrap_or_else(|| origin(c.space));
    let a = angle(c.space, &at, &c.tu, &c.tv)?;
    c.output.json(&AngleOut {
        space: c.space,
        at: affine(&at),
        angle: a,
    })
}

#[derive(Serialize)]
struct TriangleOut {
    space: SpaceId,
    kind: TriangleKind,
    vertices: [[f64; 3]; 3],
    omegas: [f64; 3],
    sum: f64,
    defect: f64,
}

fn triangle_cmd(c: TriangleCmd) -> CliResult<()> {
    let v = exactly::<3>(c.vertices, "a triangle")?;
    let t = GeodesicTriangle::new(c.space, v)?;
    let r = interior_angles(&t)?;
    c.output.json(&TriangleOut {
        space: c.space,
        kind: t.kind,
        vertices: v.map(|p| affine(&p)),
        omegas: r.omegas,
        sum: r.sum,
        defect: r.defect,
    })
}

#[derive(Serialize)]
struct CircumsphereOut {
    space: SpaceId,
    vertices: [[f64; 3]; 4],
    center: [f64; 3],
    radius: f64,
    residuals: [f64; 4],
}

fn circumsphere_cmd(c: CircumsphereCmd) -> CliResult<()> {
    let v = exactly::<4>(c.vertices, "a circumsphere")?;
    let cs = circumsphere(c.space, &v)?;
    c.output.json(&CircumsphereOut {
        space: c.space,
        vertices: v.map(|p| affine(&p)),
        center: affine(&cs.center),
        radius: cs.radius,
        residuals: cs.residuals,
    })
}

fn sphere_mesh_cmd(c: SphereMeshCmd) -> CliResult<()> {
    c.output.format(&[Format::Obj, Format::Csv])?;
    let center = c.center.unwrap_or_else(|| origin(c.space));
    let mesh = sphere_mesh(c.space, &center, c.radius, c.n_dirs)?;
    c.output.mesh(&mesh)
}

fn apollonius_cmd(c: ApolloniusCmd) -> CliResult<()> {
    c.output.format(&[Format::Obj, Format::Csv])?;
    let spec = ApolloniusSpec::new(c.space, c.p1, c.p2, c.lambda)?;
    let bounds = IsoBox::new(c.lo, c.hi)?;
    let iso = apollonius_mesh(&spec, &bounds, c.resolution)?;
    if let Some(notice) = &iso.notice {
        eprintln!("note: {notice}");
    }
    c.output.mesh(&iso.mesh)
}

#[derive(Serialize)]
struct RatioOut {
    space: SpaceId,
    kind: &'static str,
    ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    stations: Option<LineStations>,
    #[serde(skip_serializing_if = "Option::is_none")]
    arcs: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    projection: Option<NilProjection>,
}

fn require_nil(space: SpaceId) -> CliResult<()> {
    if space == SpaceId::Nil {
        Ok(())
    } else {
        Err(usage(format!("--kind projected needs --space nil, got {}", space.tag())))
    }
}

fn kind_name(kind: KindArg) -> &'static str {
    match kind {
        KindArg::Base => "base",
        KindArg::General => "general",
        KindArg::Fibre => "fibre",
        KindArg::Nil => "nil",
        KindArg::Projected => "projected",
    }
}

fn ratio_cmd(c: RatioCmd) -> CliResult<()> {
    let out = match c.kind.ratio_kind() {
        Some(kind) => {
            let (ratio, st) = simple_ratio_detail(kind, c.space, &c.a, &c.p, &c.b)?;
            RatioOut {
                space: c.space,
                kind: kind_name(c.kind),
                ratio,
                stations: Some(st),
                arcs: None,
                projection: None,
            }
        }
        None => {
            require_nil(c.space)?;
            let r = projected_arc_ratio_nil(&c.a, &c.p, &c.b)?;
            RatioOut {
                space: c.space,
                kind: kind_name(c.kind),
                ratio: r.ratio,
                stations: None,
                arcs: Some(r.arcs),
                projection: Some(r.projection),
            }
        }
    };
    c.output.json(&out)
}

#[derive(Serialize)]
struct ProjectedCevaOut {
    space: SpaceId,
    kind: &'static str,
    vertices: [[f64; 3]; 3],
    side_points: [[f64; 3]; 3],
    product: f64,
}

fn ceva_cmd(c: CevaCmd) -> CliResult<()> {
    let tri = exactly::<3>(c.vertices, "a triangle")?;
    let feet = exactly::<3>(c.feet, "--feet")?;
    match c.kind.ratio_kind() {
        Some(kind) => {
            let report = ceva_product(kind, c.space, &tri, c.cevian.as_ref(), &feet)?;
            c.output.json(&report)
        }
        None => {
            require_nil(c.space)?;
            let product = projected_ceva_product_nil(&tri, &feet)?;
            c.output.json(&ProjectedCevaOut {
                space: c.space,
                kind: kind_name(c.kind),
                vertices: tri.map(|p| affine(&p)),
                side_points: feet.map(|p| affine(&p)),
                product,
            })
        }
    }
}

fn menelaus_cmd(c: MenelausCmd) -> CliResult<()> {
    let (space, kind, tri, points) = if c.nil_counterexample {
        let (tri, points) = nil_menelaus_counterexample()?;
        (SpaceId::Nil, RatioKind::Nil, tri, points)
    } else {
        let (Some(space), Some(kind)) = (c.space, c.kind) else {
            return Err(usage("--space and --kind are required"));
        };
        let kind = kind
            .ratio_kind()
            .ok_or_else(|| usage("--kind projected is only available for ceva and ratio"))?;
        (space, kind, exactly::<3>(c.vertices, "a triangle")?, exactly::<3>(c.points, "--points")?)
    };
    let report = menelaus_product(kind, space, &tri, &points)?;
    c.output.json(&report)
}

#[derive(Serialize)]
struct StratumOut {
    corners: String,
    weights: Vec<f64>,
    lattice_period: f64,
    rho: f64,
    density: f64,
    density_exact: f64,
}

#[derive(Serialize)]
struct OptimizeOut {
    /// Corners spanning the winning stratum of the fundamental triangle.
    corners: String,
    weights: Vec<f64>,
    best: PackingResult,
    strata: Vec<StratumOut>,
}

const CORNER_NAMES: [&str; 3] = ["A1", "A2", "A3"];

fn packing_group(group: GroupArg, q: u32, period: f64) -> CliResult<SpaceGroupSpec> {
    if !(period > 0.0) || !period.is_finite() {
        return Err(usage(format!("--period must be positive, got {period}")));
    }
    Ok(match group {
        GroupArg::FourQ => s2xr_group_4q_I_2(q, period)?,
        GroupArg::Fibre => fibre_lattice(period)?,
    })
}

fn packing_cmd(c: PackingCmd) -> CliResult<()> {
    c.output.format(&[Format::Json])?;
    if c.samples == 0 {
        return Err(usage("--samples must be positive"));
    }
    if c.optimize {
        return packing_optimize(c);
    }
    let period = c.period.ok_or_else(|| usage("--period is required unless --optimize is given"))?;
    let spec = packing_group(c.group, c.q, period)?;
    let base = match (c.kernel, c.corner, c.group) {
        (Some(k), _, _) => k,
        (None, corner, GroupArg::FourQ) => {
            let corners = triangle_corners_4q(c.q);
            corners[corner.unwrap_or(CornerArg::A3) as usize]
        }
        (None, Some(_), GroupArg::Fibre) => {
            return Err(usage("--corner needs --group 4q.I.2"));
        }
        (None, None, GroupArg::Fibre) => Vector3::new(1.0, 0.0, 0.0),
    };
    let kernel = ProductPoint::new(base, c.fibre)?.to_hpoint();
    let result = density(&spec, &kernel, c.samples, c.seed)?;
    c.output.json(&result)
}

fn packing_optimize(c: PackingCmd) -> CliResult<()> {
    if c.group != GroupArg::FourQ {
        return Err(usage("--optimize needs --group 4q.I.2"));
    }
    let mut opts = OptimizeOptions {
        samples: c.samples,
        seed: c.seed,
        ..OptimizeOptions::default()
    };
    if let Some(range) = c.period_range {
        opts.period_range = Some(range);
    }
    let start = c.period.unwrap_or(opts.period_range.map_or(PI, |(lo, hi)| 0.5 * (lo + hi)));
    let spec = packing_group(c.group, c.q, start)?;
    let corners = triangle_corners_4q(c.q)
        .into_iter()
        .map(|b| ProductPoint::new(b, c.fibre))
        .collect::<Result<Vec<_>, _>>()?;

    // Every face of the triangle is searched on its own, since kernels with
    // larger stabilizers are skipped inside a bigger region.
    let mut strata = Vec::new();
    let mut best: Option<(usize, String, thurston::packing::Optimized)> = None;
    for mask in 1..8usize {
        let picked: Vec<usize> = (0..3).filter(|i| mask & (1 << i) != 0).collect();
        let name: String = picked.iter().map(|&i| CORNER_NAMES[i]).collect::<Vec<_>>().join("");
        let region = KernelRegion::new(picked.iter().map(|&i| corners[i]).collect())?;
        let found = optimize_kernel(&spec, &region, &opts)?;
        strata.push(StratumOut {
            corners: name.clone(),
            weights: found.weights.clone(),
            lattice_period: found.best.lattice_period,
            rho: found.best.rho,
            density: found.best.density,
            density_exact: found.best.density_exact,
        });
        let better = best
            .as_ref()
            .is_none_or(|(_, _, b)| found.best.density_exact > b.best.density_exact + 1e-12);
        if better {
            best = Some((mask, name, found));
        }
    }
    let (_, corners_name, found) = best.expect("seven strata were searched");
    if let Some(path) = &c.trace {
        write_file(path, &trace_csv(&found.trace))?;
    }
    c.output.json(&OptimizeOut {
        corners: corners_name,
        weights: found.weights,
        best: found.best,
        strata,
    })
}

#[derive(Serialize)]
struct ProjectionOut {
    alpha: f64,
    theta: f64,
    projection: NilProjection,
}

#[derive(Serialize)]
struct SectionRow {
    theta: f64,
    x: f64,
    z: f64,
}

fn nil_tool_cmd(tool: NilTool) -> CliResult<()> {
    match tool {
        NilTool::Projection { alpha, theta, output } => {
            GeodesicParams::new(SpaceId::Nil, alpha, theta, 0.0).validate()?;
            output.json(&ProjectionOut {
                alpha,
                theta,
                projection: nil::projection(alpha, theta),
            })
        }
        NilTool::CrossSection { radius, samples, output } => {
            let format = output.format(&[Format::Csv, Format::Json])?;
            if samples < 2 {
                return Err(usage("--samples must be at least 2"));
            }
            let rows = (0..samples)
                .map(|i| {
                    let theta = -FRAC_PI_2 + PI * i as f64 / (samples - 1) as f64;
                    nil_sphere_cross_section(radius, theta).map(|(x, z)| SectionRow { theta, x, z })
                })
                .collect::<Result<Vec<_>, _>>()?;
            if format == Format::Json {
                return output.json(&rows);
            }
            let mut text = String::from("theta,x,z\n");
            for r in &rows {
                text.push_str(&format!("{:.11e},{:.11e},{:.11e}\n", r.theta, r.x, r.z));
            }
            output.write(&text)
        }
        NilTool::Convexity { radius, samples, output } => {
            let report = nil_ball_convexity_check(radius, samples)?;
            output.json(&report)
        }
    }
}
