//! Task execution behind the `subkam` binary.
//!
//! Every run writes `manifest.json` and `config.txt` into the output
//! directory, plus CSV files for the tasks it performed. Numerical output
//! depends only on the configuration (and seed); wall times live in the
//! manifest alone.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde_json::{json, Map, Value};

use crate::config::{RunConfig, Task};
use crate::error::{KamError, Result};
use crate::grid::GridFunction;
use crate::hjsolver::{critical_solution, CriticalSolution};
use crate::instances::{build, Instance};
use crate::lagrangian::check_l1_l2_l3;
use crate::weakkam::{
    aubry_detect, calibrated_curve, critical_abel, critical_lp, critical_time_average, domination_check, peierls_barrier,
    select_critical_value, superdifferential_equation_check, AubryReport, CriticalEstimate,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FLAGGED: i32 = 2;

#[derive(Clone, Debug)]
pub struct Outcome {
    pub exit_code: i32,
    pub manifest: Value,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    inst: Instance,
    out: &'a Path,
    results: Map<String, Value>,
    times: Map<String, Value>,
    flags: Vec<String>,
    c: Option<(f64, &'static str)>,
    chi: Option<CriticalSolution>,
    aubry: Option<AubryReport>,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn write_rows<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn coord_names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).collect()
}

impl Ctx<'_> {
    fn timed<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let r = f(self);
        self.times.insert(name.to_string(), json!(start.elapsed().as_secs_f64()));
        r
    }

    fn flag(&mut self, why: String) {
        self.flags.push(why);
    }

    fn check_assumptions(&mut self) -> Result<()> {
        let k = &self.cfg.checks;
        let fields = self.inst.system.check_f1_f2(k.field_radius, k.samples, self.cfg.seed);
        let lag = check_l1_l2_l3(&self.inst.lagrangian, &self.inst.system, k.samples, self.cfg.seed, k.state_radius, k.control_radius);
        for (bad, what) in [
            (fields.growth_violation, "F1 growth"),
            (fields.rank_violation, "F2 rank"),
            (lag.l1_violation, "L1"),
            (lag.l2_violation, "L2"),
            (lag.l3_violation, "L3"),
        ] {
            if bad {
                self.flag(format!("assumption {what} violated on samples"));
            }
        }
        let report = json!({ "fields": fields, "lagrangian": lag });
        fs::write(self.out.join("assumptions.json"), serde_json::to_string_pretty(&report)?)?;
        self.results.insert("check_assumptions".into(), report);
        Ok(())
    }

    fn critical(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let k = &cfg.critical;
        let (l, sys) = (&self.inst.lagrangian, &self.inst.system);
        let scheme = k.scheme(&cfg.scheme)?;
        let opt = cfg.optimizer_settings();
        let cross = (k.cross_check_max_t > 0.0).then_some((&opt, k.cross_check_max_t));
        let ta = critical_time_average(l, sys, &k.point, &k.t_ladder, &scheme, cross)?;
        let abel = critical_abel(l, sys, &k.point, &k.lambda_ladder, &scheme)?;
        let (lp, lps) = critical_lp(l, sys, &k.lp_ladder())?;

        write_rows(&self.out.join("time_average.csv"), &names(&["t", "estimate"]), ta.diagnostics.iter().map(|p| vec![p.0, p.1]))?;
        write_rows(&self.out.join("cross_check.csv"), &names(&["t", "estimate"]), ta.cross_check.iter().map(|p| vec![p.0, p.1]))?;
        write_rows(&self.out.join("abel.csv"), &names(&["lambda", "estimate"]), abel.diagnostics.iter().map(|p| vec![p.0, p.1]))?;
        write_rows(
            &self.out.join("lp.csv"),
            &names(&["n_x", "n_u", "degree", "value", "residual", "boundary_mass", "iterations"]),
            k.lp_ladder.iter().zip(&lps).map(|(lvl, r)| {
                vec![lvl[0] as f64, lvl[1] as f64, lvl[2] as f64, r.value, r.residual, r.boundary_mass, r.iterations as f64]
            }),
        )?;
        if let Some(finest) = lps.last() {
            finest.measure.write_csv(BufWriter::new(File::create(self.out.join("mu_star.csv"))?))?;
            fs::write(self.out.join("lp_report.json"), serde_json::to_string_pretty(&finest.report_json())?)?;
            if finest.radius_warning {
                self.flag("LP measure has mass near the support boundary; enlarge lp_radius".into());
            }
        }
        let estimates = vec![ta, abel, lp];
        for e in estimates.iter().filter(|e| e.flagged) {
            self.flag(format!("{:?} ladder is not monotone", e.method));
        }
        let (c, source) = select_critical_value(self.inst.oracle_c, &estimates)?;
        let spread = estimates.iter().map(|e| e.value).fold(f64::NEG_INFINITY, f64::max)
            - estimates.iter().map(|e| e.value).fold(f64::INFINITY, f64::min);
        let mut all: Vec<&CriticalEstimate> = estimates.iter().collect();
        let oracle = self.inst.oracle_c.map(CriticalEstimate::oracle);
        all.extend(oracle.as_ref());
        self.results.insert(
            "critical".into(),
            json!({ "estimates": all, "selected": c, "source": source, "estimator_spread": spread }),
        );
        self.c = Some((c, source));
        Ok(())
    }

    fn critical_value(&mut self) -> Result<f64> {
        if let Some((c, _)) = self.c {
            return Ok(c);
        }
        match self.inst.oracle_c {
            Some(c) => {
                self.c = Some((c, "oracle"));
                Ok(c)
            }
            None => {
                self.timed("critical", Self::critical)?;
                Ok(self.c.expect("set by critical").0)
            }
        }
    }

    fn barrier(&mut self) -> Result<()> {
        let c = self.critical_value()?;
        let b = &self.cfg.barrier;
        let v = peierls_barrier(&self.inst.lagrangian, &self.inst.system, &b.x, &b.y, c, &b.window(), &self.cfg.optimizer_settings())?;
        write_rows(&self.out.join("barrier.csv"), &names(&["t", "value"]), v.horizons.iter().zip(&v.values).map(|(t, y)| vec![*t, *y]))?;
        self.results.insert("barrier".into(), serde_json::to_value(&v)?);
        Ok(())
    }

    fn aubry(&mut self) -> Result<()> {
        let c = self.critical_value()?;
        let a = &self.cfg.aubry;
        let rep = aubry_detect(
            &self.inst.lagrangian,
            &self.inst.system,
            c,
            &a.probes,
            a.eps_a,
            &self.cfg.barrier.window(),
            &self.cfg.optimizer_settings(),
        )?;
        let mut header = coord_names(self.inst.state_dim());
        header.extend(names(&["h", "member"]));
        write_rows(
            &self.out.join("aubry.csv"),
            &header,
            rep.probes.iter().enumerate().map(|(i, p)| {
                let mut row = p.clone();
                row.push(rep.h_values[i]);
                row.push(if rep.member_probes.contains(&i) { 1.0 } else { 0.0 });
                row
            }),
        )?;
        self.results.insert("aubry".into(), serde_json::to_value(&rep)?);
        self.aubry = Some(rep);
        Ok(())
    }

    fn solve(&mut self) -> Result<()> {
        let c = self.critical_value()?;
        let settings = self.cfg.scheme.settings()?;
        if !settings.cfl_ok(&self.inst.system) {
            self.flag("scheme time step exceeds the CFL bound".into());
        }
        let init = GridFunction::zeros(settings.grid.clone());
        let sol = critical_solution(&self.inst.lagrangian, &self.inst.system, c, &settings, &init)?;
        sol.chi.write_csv(BufWriter::new(File::create(self.out.join("chi.csv"))?))?;
        let summary = json!({
            "grid": sol.chi.header_json(),
            "c": sol.c,
            "initial_condition": "zero",
            "normalization_point": sol.normalization_point,
            "iterations": sol.iterations,
            "change": sol.change,
            "drift": sol.drift,
            "converged": sol.converged,
        });
        fs::write(self.out.join("chi.json"), serde_json::to_string_pretty(&summary)?)?;
        if !sol.converged {
            self.flag(format!("critical solution did not converge (change {:.3e}, drift {:.3e})", sol.change, sol.drift));
        }
        self.results.insert("solve".into(), summary);
        self.chi = Some(sol);
        Ok(())
    }

    fn calibrate(&mut self) -> Result<()> {
        let c = self.critical_value()?;
        if self.chi.is_none() {
            self.timed("solve", Self::solve)?;
        }
        let points = if !self.cfg.calibrate.points.is_empty() {
            self.cfg.calibrate.points.clone()
        } else if let Some(a) = &self.aubry {
            a.members.clone()
        } else {
            vec![self.inst.x_star().to_vec()]
        };
        let chi = &self.chi.as_ref().expect("solved above").chi;
        let (l, sys) = (&self.inst.lagrangian, &self.inst.system);
        let k = &self.cfg.calibrate;
        let mut curves = Vec::new();
        let mut truncated = Vec::new();
        for (i, p) in points.iter().enumerate() {
            let rep = calibrated_curve(chi, l, sys, c, p, k.horizon, k.dt)?;
            rep.pair.write_csv(BufWriter::new(File::create(self.out.join(format!("calibrated_{i}.csv")))?))?;
            let dom = domination_check(chi, l, c, &rep.pair);
            if rep.truncated {
                truncated.push(i);
            }
            curves.push(json!({
                "start": p,
                "duration": rep.pair.duration(),
                "defect": rep.defect,
                "defect_per_time": rep.defect_per_time,
                "gradient_identity_residual": rep.gradient_identity_residual,
                "max_consistency": rep.max_consistency,
                "truncated": rep.truncated,
                "domination_violation": dom.max_violation,
            }));
        }
        let sup = superdifferential_equation_check(chi, l, sys, c, &points)?;
        for i in truncated {
            self.flag(format!("calibrated curve {i} left the grid and was truncated"));
        }
        self.results.insert("calibrate".into(), json!({ "curves": curves, "superdifferential": sup }));
        Ok(())
    }

    fn dispatch(&mut self, task: Task) -> Result<()> {
        match task {
            Task::CheckAssumptions => self.timed("check_assumptions", Self::check_assumptions),
            Task::Critical => self.timed("critical", Self::critical),
            Task::Barrier => self.timed("barrier", Self::barrier),
            Task::Aubry => self.timed("aubry", Self::aubry),
            Task::Solve => self.timed("solve", Self::solve),
            Task::Calibrate => self.timed("calibrate", Self::calibrate),
            Task::FullPipeline => {
                for t in [Task::CheckAssumptions, Task::Critical, Task::Barrier, Task::Aubry, Task::Solve, Task::Calibrate] {
                    self.dispatch(t)?;
                }
                Ok(())
            }
        }
    }
}

/// Runs the configured task, writing results under `cfg.out_dir`.
pub fn execute(cfg: &RunConfig) -> Outcome {
    let mut manifest = json!({
        "instance": cfg.instance,
        "task": cfg.task,
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
    });
    let fail = |mut manifest: Value, e: &KamError| {
        manifest["status"] = json!("error");
        manifest["error"] = json!(e.to_string());
        manifest["exit_code"] = json!(EXIT_ERROR);
        Outcome { exit_code: EXIT_ERROR, manifest }
    };
    if let Err(e) = fs::create_dir_all(&cfg.out_dir).and_then(|_| fs::write(cfg.out_dir.join("config.txt"), cfg.echo())) {
        return fail(manifest, &KamError::Io(e));
    }
    let inst = match build(&cfg.instance, &cfg.params, cfg.system.as_ref()) {
        Ok(i) => i,
        Err(e) => {
            let out = fail(manifest, &e);
            let _ = write_manifest(&cfg.out_dir, &out.manifest);
            return out;
        }
    };
    let mut ctx = Ctx {
        cfg,
        inst,
        out: &cfg.out_dir,
        results: Map::new(),
        times: Map::new(),
        flags: Vec::new(),
        c: None,
        chi: None,
        aubry: None,
    };
    let result = ctx.dispatch(cfg.task);
    manifest["results"] = Value::Object(std::mem::take(&mut ctx.results));
    manifest["wall_time_seconds"] = Value::Object(std::mem::take(&mut ctx.times));
    manifest["flags"] = json!(ctx.flags);
    if let Some((c, source)) = ctx.c {
        manifest["critical_value"] = json!({ "value": c, "source": source });
    }
    let out = match result {
        Err(e) => fail(manifest, &e),
        Ok(()) => {
            let exit_code = if ctx.flags.is_empty() { EXIT_OK } else { EXIT_FLAGGED };
            manifest["status"] = json!(if exit_code == EXIT_OK { "ok" } else { "flagged" });
            manifest["exit_code"] = json!(exit_code);
            Outcome { exit_code, manifest }
        }
    };
    if let Err(e) = write_manifest(&cfg.out_dir, &out.manifest) {
        return fail(out.manifest, &e);
    }
    out
}

fn write_manifest(dir: &Path, manifest: &Value) -> Result<()> {
    let mut f = BufWriter::new(File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut f, manifest)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn quick(task: &str, dir: &Path) -> RunConfig {
        let text = format!(
            "instance = euclidean-1d\ntask = {task}\nout_dir = {}\n[scheme]\nresolution = [81]\ndt = 0.02\ncontrol_samples = 21\n\
             [critical]\nresolution = [81]\nt_ladder = [5, 10, 20]\nlambda_ladder = [0.5, 0.25, 0.1]\ncross_check_max_t = 0\n\
             lp_ladder = [[11, 11, 2]]\ndual_samples = 21\ndual_evaluations = 10\n\
             [barrier]\nt_min = 2\nt_max = 6\nn_horizons = 3\n[aubry]\nprobes = [[0.0], [1.0]]\n[checks]\nsamples = 50\n",
            dir.display()
        );
        parse_config(&text).unwrap()
    }

    #[test]
    fn solve_writes_manifest_and_grid() {
        let dir = tempfile::tempdir().unwrap();
        let out = execute(&quick("solve", dir.path()));
        assert_eq!(out.exit_code, EXIT_OK, "{}", out.manifest);
        assert!(dir.path().join("chi.csv").exists());
        let m: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["status"], "ok");
        assert_eq!(m["critical_value"]["source"], "oracle");
    }

    #[test]
    fn critical_task_writes_estimator_tables() {
        let dir = tempfile::tempdir().unwrap();
        let out = execute(&quick("critical", dir.path()));
        assert_ne!(out.exit_code, EXIT_ERROR, "{}", out.manifest);
        for f in ["time_average.csv", "abel.csv", "lp.csv", "mu_star.csv", "lp_report.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn unwritable_output_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let out = execute(&quick("solve", &blocker.join("sub")));
        assert_eq!(out.exit_code, EXIT_ERROR);
        assert_eq!(out.manifest["status"], "error");
    }
}
