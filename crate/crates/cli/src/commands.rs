use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ascertain_core::fixtures::{self, NVDRS_LISTS};
use ascertain_core::loglinear::{complete_tables, select_model};
use ascertain_core::report::{self, num, Report};
use ascertain_core::simstudy::{self, ShiftTarget, SimConfig, Study};
use ascertain_core::tables::{read_input, write_aggregated};
use ascertain_core::threesided::{bootstrap_null, decide, BootstrapSpec, Regime};
use ascertain_core::{fit, rasch, Error, FitSpec, RaschParams, TablePair, Variant};
use sha2::{Digest, Sha256};

use crate::{Command, FitArgs, Fixture, InputArgs, LoglinearArgs, Preset, ProbsArgs, SimulateArgs, TestArgs};

#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Io(PathBuf, std::io::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Io(path, e) => write!(f, "{}: {e}", path.display()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Failure::Io(path.to_path_buf(), e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Failure::Io(path.to_path_buf(), e))
}

fn emit(out: Option<&Path>, report: &Report) -> Result<()> {
    let text = report.render();
    match out {
        Some(path) => write(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Loaded {
    tables: TablePair,
    source: String,
    digest: String,
}

fn load(args: &InputArgs) -> Result<Loaded> {
    let (bytes, source, default_names) = match (&args.input, args.fixture) {
        (Some(path), _) => (read(path)?, path.display().to_string(), None),
        (None, Some(Fixture::Nvdrs)) => (fixtures::NVDRS_CSV.as_bytes().to_vec(), "fixture:nvdrs".into(), Some(NVDRS_LISTS)),
        (None, Some(Fixture::NvdrsCompleted)) => (
            fixtures::NVDRS_COMPLETED_CSV.as_bytes().to_vec(),
            "fixture:nvdrs-completed".into(),
            Some(NVDRS_LISTS),
        ),
        (None, None) => return Err(Error::Invalid("either --input or --fixture is required".into()).into()),
    };
    let parsed = read_input(&bytes)?;
    let names = args
        .lists
        .clone()
        .or(parsed.list_names)
        .or_else(|| default_names.map(|n| n.map(String::from).to_vec()));
    let tables = TablePair::from_groups(&parsed.groups, &args.exposed, &args.unexposed, names)?;
    Ok(Loaded {
        tables,
        source,
        digest: sha256_hex(&bytes),
    })
}

fn config_entries(command: &str, loaded: Option<&Loaded>) -> Vec<(String, String)> {
    let mut entries = vec![
        ("command".to_string(), command.to_string()),
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ];
    if let Some(l) = loaded {
        entries.push(("input".into(), l.source.clone()));
        entries.push(("input_sha256".into(), l.digest.clone()));
        entries.push(("lists".into(), l.tables.list_names.join(",")));
        entries.push(("exposed".into(), l.tables.exposed.label().to_string()));
        entries.push(("unexposed".into(), l.tables.unexposed.label().to_string()));
    }
    entries
}

fn add_observed(report: &mut Report, tables: &TablePair) {
    let (e, u) = (tables.exposed.observed_total(), tables.unexposed.observed_total());
    report.add_pairs(
        "observed",
        [
            ("exposed", e.to_string()),
            ("unexposed", u.to_string()),
            ("ratio", num(e as f64 / u as f64)),
            ("complete", tables.is_complete().to_string()),
        ],
    );
}

fn default_variant(tables: &TablePair) -> Variant {
    if tables.is_complete() {
        Variant::CompleteFreeTheta
    } else {
        Variant::IncompleteFreeTheta
    }
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Fit(a) => cmd_fit(a),
        Command::Test(a) => cmd_test(a),
        Command::Loglinear(a) => cmd_loglinear(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Probs(a) => cmd_probs(a),
    }
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    if args.multistart == 0 {
        return Err(Error::Invalid("--multistart must be at least 1".into()).into());
    }
    let loaded = load(&args.input)?;
    let variant = args.variant.unwrap_or_else(|| default_variant(&loaded.tables));
    let spec = FitSpec::new(variant, args.model).with_seed(args.seed).with_multistart(args.multistart);
    let result = fit(&loaded.tables, &spec)?;

    let mut r = Report::new();
    let mut config = config_entries("fit", Some(&loaded));
    config.extend([
        ("variant".to_string(), variant.to_string()),
        ("model".to_string(), args.model.to_string()),
        ("seed".to_string(), args.seed.to_string()),
        ("multistart".to_string(), args.multistart.to_string()),
    ]);
    r.add_pairs("config", config);
    add_observed(&mut r, &loaded.tables);
    report::add_fit(&mut r, &result, &loaded.tables.list_names);
    emit(args.out.out.as_deref(), &r)
}

fn draws_path(args: &TestArgs) -> Option<PathBuf> {
    args.draws.clone().or_else(|| {
        args.out.out.as_ref().map(|p| {
            let mut s = p.as_os_str().to_owned();
            s.push(".draws.csv");
            PathBuf::from(s)
        })
    })
}

fn cmd_test(args: &TestArgs) -> Result<()> {
    if !(args.alpha > 0.0 && args.alpha < 0.5) {
        return Err(Error::Invalid(format!("--alpha must lie in (0, 0.5), got {}", args.alpha)).into());
    }
    if let Some(d) = args.delta.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
        return Err(Error::Invalid(format!("--delta must be finite and non-negative, got {d}")).into());
    }
    let loaded = load(&args.input)?;
    let regime = Regime::of(&loaded.tables);
    let free = fit(&loaded.tables, &FitSpec::new(default_variant(&loaded.tables), args.model).with_seed(args.seed))?;
    let spec = BootstrapSpec {
        model: args.model,
        ..BootstrapSpec::new(args.bootstrap, args.seed)
    };
    let dist = bootstrap_null(&loaded.tables, regime, &spec)?;
    let outcomes = args
        .delta
        .iter()
        .map(|&d| decide(free.params.theta(), &dist, args.alpha, d))
        .collect::<ascertain_core::Result<Vec<_>>>()?;

    let mut r = Report::new();
    let mut config = config_entries("test", Some(&loaded));
    config.extend([
        ("regime".to_string(), regime.to_string()),
        ("model".to_string(), args.model.to_string()),
        ("bootstrap".to_string(), args.bootstrap.to_string()),
        ("alpha".to_string(), num(args.alpha)),
        ("delta".to_string(), args.delta.iter().map(|d| num(*d)).collect::<Vec<_>>().join(",")),
        ("seed".to_string(), args.seed.to_string()),
    ]);
    r.add_pairs("config", config);
    add_observed(&mut r, &loaded.tables);
    report::add_fit(&mut r, &free, &loaded.tables.list_names);
    report::add_null_distribution(&mut r, &dist);
    report::add_outcomes(&mut r, &outcomes);
    if let Some(path) = draws_path(args) {
        let mut csv = String::from("draw,theta_hat\n");
        for (i, d) in dist.draws.iter().enumerate() {
            csv.push_str(&format!("{},{}\n", i + 1, num(*d)));
        }
        write(&path, &csv)?;
    }
    emit(args.out.out.as_deref(), &r)
}

fn cmd_loglinear(args: &LoglinearArgs) -> Result<()> {
    let loaded = load(&args.input)?;
    let t = &loaded.tables;
    if t.is_complete() {
        return Err(Error::Invalid("log-linear estimation needs tables without the all-zero cell".into()).into());
    }
    let selection = select_model(&[&t.exposed, &t.unexposed], args.lower_p, args.exclude_saturated)?;
    let completion = complete_tables(t, [selection.missing[0], selection.missing[1]])?;

    let mut r = Report::new();
    let mut config = config_entries("loglinear", Some(&loaded));
    config.extend([
        ("lower_p".to_string(), num(args.lower_p)),
        ("exclude_saturated".to_string(), args.exclude_saturated.to_string()),
    ]);
    r.add_pairs("config", config);
    add_observed(&mut r, t);
    report::add_selection(&mut r, &selection, &t.list_names, &[t.exposed.label(), t.unexposed.label()]);
    report::add_completion(&mut r, &completion);
    if let Some(path) = &args.completed {
        let mut buf = Vec::new();
        write_aggregated(&mut buf, [&completion.tables.exposed, &completion.tables.unexposed])?;
        write(path, &String::from_utf8(buf).expect("csv output is utf-8"))?;
    }
    emit(args.out.out.as_deref(), &r)
}

fn csv_rows(csv: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or_default().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let (text, source) = match (&args.config, args.preset) {
        (Some(path), _) => {
            let bytes = read(path)?;
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::Invalid(format!("{} is not UTF-8", path.display())))?;
            (text, path.display().to_string())
        }
        (None, Some(Preset::Bias)) => (fixtures::BIAS_STUDY_TOML.to_string(), "preset:bias".into()),
        (None, Some(Preset::Estimators)) => (fixtures::ESTIMATOR_STUDY_TOML.to_string(), "preset:estimators".into()),
        (None, None) => return Err(Error::Invalid("either --config or --preset is required".into()).into()),
    };
    let mut cfg = SimConfig::from_toml(&text)?;
    if let Some(n) = args.replicates {
        cfg.replicates = n;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(target) = args.theta_applies_to {
        cfg.theta_applies_to = target;
    }
    cfg.validate()?;
    let study = args
        .study
        .or(cfg.study)
        .ok_or_else(|| Error::Invalid("no study given: pass --study or set `study` in the configuration".into()))?;

    let csv = match study {
        Study::Bias => simstudy::bias_csv(&simstudy::bias_study(&cfg)?),
        Study::Estimators => simstudy::estimator_csv(&simstudy::estimator_study(&cfg)?),
        Study::Or => simstudy::or_csv(&simstudy::or_bias(&cfg)?),
    };

    let mut r = Report::new();
    let mut config = config_entries("simulate", None);
    config.extend([
        ("config".to_string(), source),
        ("config_sha256".to_string(), sha256_hex(text.as_bytes())),
        ("study".to_string(), study.to_string()),
        ("gamma_exposed".to_string(), num(cfg.gamma_exposed)),
        ("gamma_unexposed".to_string(), num(cfg.gamma_unexposed)),
        ("alpha".to_string(), num(cfg.alpha)),
        ("alpha2".to_string(), num(cfg.alpha2)),
        ("model".to_string(), cfg.model.to_string()),
        ("lists".to_string(), cfg.lists.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(",")),
        ("thetas".to_string(), cfg.thetas.iter().map(|t| num(*t)).collect::<Vec<_>>().join(",")),
        ("replicates".to_string(), cfg.replicates.to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
        ("theta_applies_to".to_string(), cfg.theta_applies_to.to_string()),
        ("multistart".to_string(), cfg.multistart.to_string()),
    ]);
    if let (Some(te), Some(tu)) = (cfg.t_exposed, cfg.t_unexposed) {
        config.push(("t_exposed".into(), num(te)));
        config.push(("t_unexposed".into(), num(tu)));
    }
    r.add_pairs("config", config);
    if cfg.theta_applies_to == ShiftTarget::Unexposed {
        r.add_pairs(
            "note",
            [("shift", "theta is applied to the unexposed group; the exposed group has shift 0")],
        );
    }
    let (header, rows) = csv_rows(&csv);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    r.add_table("results", &header, rows);
    if let Some(path) = &args.csv {
        write(path, &csv)?;
    }
    emit(args.out.out.as_deref(), &r)
}

fn cmd_probs(args: &ProbsArgs) -> Result<()> {
    if !(args.delta >= 0.0 && args.delta.is_finite()) {
        return Err(Error::Invalid(format!("--delta must be finite and non-negative, got {}", args.delta)).into());
    }
    let mut config = config_entries("probs", None);
    let (params, names) = match &args.from_report {
        Some(path) => {
            let bytes = read(path)?;
            config.push(("from_report".into(), path.display().to_string()));
            config.push(("report_sha256".into(), sha256_hex(&bytes)));
            let text = String::from_utf8(bytes).map_err(|_| Error::Invalid(format!("{} is not UTF-8", path.display())))?;
            let (p, names) = report::params_from_report(&Report::parse(&text)?)?;
            (p, args.lists.clone().unwrap_or(names))
        }
        None => {
            let strengths = args.strengths.clone().unwrap_or_default();
            let n = strengths.len();
            let interactions = match (args.model, &args.interactions) {
                (_, Some(v)) => v.clone(),
                (ascertain_core::CaptureModel::Independent, None) => vec![0.0; rasch::n_pairs(n)],
                (ascertain_core::CaptureModel::Dynamic, None) => {
                    return Err(Error::Invalid("--interactions is required for the dynamic model".into()).into())
                }
            };
            let theta = args.theta.ok_or_else(|| Error::Invalid("--theta is required without --from-report".into()))?;
            let p = RaschParams::new(strengths, interactions, theta, args.model)?;
            (p, report::list_names(args.lists.as_deref(), n))
        }
    };
    if names.len() != params.n_lists() {
        return Err(Error::Invalid(format!("{} list names for {} lists", names.len(), params.n_lists())).into());
    }
    config.extend([
        ("model".to_string(), params.model().to_string()),
        ("lists".to_string(), names.join(",")),
        ("delta".to_string(), num(args.delta)),
    ]);
    let mut r = Report::new();
    r.add_pairs("config", config);
    report::add_probabilities(&mut r, &params, args.delta);
    emit(args.out.out.as_deref(), &r)
}
