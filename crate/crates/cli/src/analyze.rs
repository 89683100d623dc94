use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;

use repex_core::analysis::{acceptance_stats, free_energy_histogram, round_trips, BinAxis};
use repex_core::config::{parse_config, SimulationConfig};
use repex_core::io::{
    parse_exchanges, parse_key_values, parse_samples, parse_timings, write_key_values, CONFIG_FILE,
    EXCHANGES_FILE, SAMPLES_FILE, SUMMARY_FILE, TIMINGS_FILE,
};
use repex_core::metrics::{strong_efficiency, utilization, weak_efficiency, CycleTiming};
use repex_core::pilot::TimingRow;

pub const ANALYSIS_DIR: &str = "analysis";

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).with_context(|| format!("missing run artifact {}", path.display()))
}

struct RunSummary {
    config: SimulationConfig,
    timings: Vec<TimingRow>,
    summary: BTreeMap<String, String>,
}

impl RunSummary {
    fn load(dir: &Path) -> Result<Self> {
        let config = parse_config(&read(dir, CONFIG_FILE)?).context("resolved configuration")?;
        let timings = parse_timings(&read(dir, TIMINGS_FILE)?).context("timings")?;
        let summary = parse_key_values(&read(dir, SUMMARY_FILE)?)?.into_iter().collect();
        Ok(RunSummary { config, timings, summary })
    }

    fn number(&self, key: &str) -> Result<f64> {
        self.summary
            .get(key)
            .with_context(|| format!("{SUMMARY_FILE} lacks {key}"))?
            .parse()
            .with_context(|| format!("{SUMMARY_FILE}: {key} is not a number"))
    }

    fn mean_cycle_time(&self) -> Result<f64> {
        if self.timings.is_empty() {
            bail!("no data: run has no completed cycles");
        }
        Ok(self.timings.iter().map(|r| r.t_c).sum::<f64>() / self.timings.len() as f64)
    }
}

fn mean_timing(rows: &[&TimingRow]) -> (CycleTiming, f64) {
    let n = rows.len().max(1) as f64;
    let mut t = CycleTiming::default();
    let mut t_c = 0.0;
    for r in rows {
        t.t_md += r.timing.t_md / n;
        t.t_ex += r.timing.t_ex / n;
        t.t_data += r.timing.t_data / n;
        t.t_framework_over += r.timing.t_framework_over / n;
        t.t_launch_over += r.timing.t_launch_over / n;
        t_c += r.t_c / n;
    }
    (t, t_c)
}

fn cycle_time_table(rows: &[TimingRow]) -> String {
    let mut out = String::from("dim,rows,t_md,t_ex,t_data,t_framework_over,t_launch_over,t_c\n");
    let dims: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.dim).collect();
    let mut line = |label: String, sel: Vec<&TimingRow>| {
        let (t, t_c) = mean_timing(&sel);
        out.push_str(&format!(
            "{label},{},{},{},{},{},{},{t_c}\n",
            sel.len(),
            t.t_md,
            t.t_ex,
            t.t_data,
            t.t_framework_over,
            t.t_launch_over
        ));
    };
    for d in dims {
        line(d.to_string(), rows.iter().filter(|r| r.dim == d).collect());
    }
    line("all".into(), rows.iter().collect());
    out
}

fn surface_axes(config: &SimulationConfig) -> Result<Vec<BinAxis>> {
    let system = config.system();
    Ok(if system.is_periodic() {
        vec![BinAxis::new(0.0, 360.0, 36)?, BinAxis::new(0.0, 360.0, 36)?]
    } else {
        vec![BinAxis::new(-3.0, 3.0, 50)?]
    })
}

pub fn cmd_analyze(dir: &Path, baseline: Option<&Path>) -> Result<bool> {
    let run = RunSummary::load(dir)?;
    let t_n = run.mean_cycle_time()?;
    let out_dir = dir.join(ANALYSIS_DIR);
    fs::create_dir_all(&out_dir)?;

    fs::write(out_dir.join("cycle_times.csv"), cycle_time_table(&run.timings))?;

    let mut metrics: Vec<(String, String)> = vec![("mean_cycle_time".into(), t_n.to_string())];
    let u = utilization(run.number("md_core_seconds")?, run.number("total_cores")? as u32, run.number("span")?)?;
    metrics.push(("utilization_percent".into(), u.to_string()));
    if let Some(base_dir) = baseline {
        let base = RunSummary::load(base_dir).with_context(|| format!("baseline {}", base_dir.display()))?;
        let t_1 = base.mean_cycle_time()?;
        let scale = run.number("total_cores")? / base.number("total_cores")?;
        metrics.push(("baseline_mean_cycle_time".into(), t_1.to_string()));
        metrics.push(("core_scale".into(), scale.to_string()));
        metrics.push(("weak_efficiency_percent".into(), weak_efficiency(t_1, t_n)?.to_string()));
        metrics.push(("strong_efficiency_percent".into(), strong_efficiency(t_1, t_n, scale)?.to_string()));
    }

    let records = parse_exchanges(&read(dir, EXCHANGES_FILE)?).context("exchanges")?;
    let initial = run.config.build_grid()?;
    let mut acceptance = String::from("dim,pair,lower,upper,attempted,accepted,ratio\n");
    if !records.is_empty() {
        for (d, spec) in initial.dimensions().iter().enumerate() {
            let stats = acceptance_stats(&records, &initial, d)?;
            let ratio = |r: Option<f64>| r.map(|v| v.to_string()).unwrap_or_default();
            for (k, t) in stats.per_pair.iter().enumerate() {
                acceptance.push_str(&format!(
                    "{d},{k},{},{},{},{},{}\n",
                    spec.value(k),
                    spec.value(k + 1),
                    t.attempted,
                    t.accepted,
                    ratio(t.ratio())
                ));
            }
            metrics.push((format!("acceptance_dim{d}"), ratio(stats.overall.ratio())));
            let trips = round_trips(&records, &initial, d)?;
            metrics.push((format!("round_trips_dim{d}"), trips.iter().sum::<u32>().to_string()));
        }
    }
    fs::write(out_dir.join("acceptance.csv"), acceptance)?;

    let mut surfaces = 0;
    if let Ok(text) = read(dir, SAMPLES_FILE) {
        let samples = parse_samples(&text).context("samples")?;
        let mut by_temperature: BTreeMap<u64, Vec<Vec<f64>>> = BTreeMap::new();
        for batch in samples.into_iter().filter(|b| !b.restrained && b.lambda == 1.0) {
            by_temperature.entry(batch.temperature.to_bits()).or_default().extend(batch.frames);
        }
        let axes = surface_axes(&run.config)?;
        for (bits, frames) in by_temperature {
            let t = f64::from_bits(bits);
            let surface = free_energy_histogram(&frames, &axes, t)?;
            fs::write(out_dir.join(format!("free_energy_{t:.2}K.csv")), surface.to_csv())?;
            surfaces += 1;
        }
    }
    metrics.push(("free_energy_surfaces".into(), surfaces.to_string()));
    write_key_values(fs::File::create(out_dir.join("metrics.csv"))?, &metrics)?;

    for (k, v) in &metrics {
        println!("{k},{v}");
    }
    info!("analysis written to {}", out_dir.display());
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(dim: usize, t_md: f64) -> TimingRow {
        let timing = CycleTiming { t_md, t_ex: 1.0, t_data: 0.0, t_framework_over: 0.5, t_launch_over: 0.5 };
        TimingRow { cycle: 0, dim, timing, t_c: t_md + 2.0, wall_clock_s: 0.0 }
    }

    #[test]
    fn cycle_table_means_per_dimension() {
        let table = cycle_time_table(&[row(0, 10.0), row(1, 20.0), row(0, 30.0)]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[1], "0,2,20,1,0,0.5,0.5,22");
        assert_eq!(lines[2], "1,1,20,1,0,0.5,0.5,22");
        assert_eq!(lines[3], "all,3,20,1,0,0.5,0.5,22");
    }
}
