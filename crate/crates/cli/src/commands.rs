use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use pairsim::axis::UniformAxis;
use pairsim::biphoton::{
    compute_jsa, default_time_axis, jsa_to_jta, jta_time_domain, jti, JointGrid, JsaOptions, LorentzianMode,
    PumpPulse, TemporalOptions,
};
use pairsim::coincidence::{
    brightness, build_histogram_streaming, g2_with_bootstrap, heralding_efficiency, mean_pairs_per_pulse,
    select_region, Estimate, HistogramSpec, RegionLabel, RegionTaxonomy,
};
use pairsim::device::{DeviceParams, ResonanceSpec, Role};
use pairsim::schmidt::{purity_upper_bound_from_jti, schmidt_decompose, statistical_error, PurityError};
use pairsim::stats::{fit_power_scaling, g2_two_thermal, read_power_csv, ClickModel};
use pairsim::tags::{write_run_with_metadata, Channel, SourceModel, TagReader};
use pairsim::units::{omega_from_wavelength, rad_to_hz, wavelength_from_omega};
use serde_json::{json, Map, Value};

use crate::config::{self, Method, SourceConfig};
use crate::error::CliError;
use crate::manifest::{digest, Run};
use crate::{Command, GlobalArgs, ModelArg, RegionArg};

pub fn dispatch(g: &GlobalArgs, command: Command) -> Result<(), CliError> {
    match command {
        Command::SimulateSpectrum {
            center_nm,
            span_ghz,
            points,
        } => simulate_spectrum(g, center_nm, span_ghz, points),
        Command::SimulateJta { config, out } => simulate_jta(g, config, out),
        Command::AnalyzeJta {
            input,
            bootstrap,
            counts,
            report,
        } => analyze_jta(g, &input, bootstrap, counts, report),
        Command::GenerateTags { pulses, out } => generate_tags(g, pulses, out),
        Command::AnalyzeTags {
            input,
            bin_ps,
            origin_ps,
            region,
            lifetime_ps,
            eta_d,
            t_i,
            bootstrap,
            report,
        } => analyze_tags(
            g,
            TagAnalysis {
                input,
                bin_ps,
                origin_ps,
                region,
                lifetime_ps,
                eta_d,
                t_i,
                bootstrap,
                report,
            },
        ),
        Command::FitPower {
            input,
            eta_s,
            eta_i,
            model,
            reference_power,
            mode_purity,
            report,
        } => fit_power(g, &input, eta_s, eta_i, model, reference_power, mode_purity, report),
        Command::Report { inputs, out } => report(g, &inputs, out),
    }
}

fn estimate(e: &Estimate, unit: &str) -> Value {
    json!({ "value": e.value, "std_error": e.std_error, "unit": unit })
}

fn provenance(run: &Run) -> Result<Value, CliError> {
    Ok(json!({ "command": run.command, "inputs": run.input_digests()? }))
}

fn device_for(g: &GlobalArgs, run: &mut Run) -> Result<DeviceParams, CliError> {
    if let Some(p) = &g.device {
        run.input(p)?;
    }
    config::load_device(g.device.as_deref())
}

fn resonance_json(r: &ResonanceSpec) -> Value {
    json!({
        "wavelength_nm": wavelength_from_omega(r.center_omega) * 1e9,
        "loaded_q": r.loaded_q,
        "intrinsic_q": r.intrinsic_q,
        "linewidth_mhz": rad_to_hz(r.linewidth()) * 1e-6,
        "lifetime_ps": r.lifetime() * 1e12,
        "escape_efficiency": r.escape_efficiency(),
    })
}

fn simulate_spectrum(g: &GlobalArgs, center_nm: f64, span_ghz: f64, points: usize) -> Result<(), CliError> {
    let mut run = Run::new("simulate-spectrum", g.out_dir.clone())?;
    let device = device_for(g, &mut run)?;
    let center = omega_from_wavelength(center_nm * 1e-9);
    let axis = UniformAxis::centered(center, 2.0 * PI * span_ghz * 1e9, points);
    let trace = device.transmission_spectrum(&axis)?;
    let (csv, mut w) = run.create("spectrum.csv", None)?;
    trace.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::from_io(&csv, e))?;

    let pump = device.resonance_near(center, Role::Pump)?;
    let summary = json!({
        "kind": "spectrum",
        "provenance": provenance(&run)?,
        "main_fsr_ghz": device.main_fsr_hz() * 1e-9,
        "aux_fsr_ghz": device.aux_fsr_hz() * 1e-9,
        "aux_dip_extinction_db": device.aux_dip_extinction_db(center)?,
        "pump_resonance": resonance_json(&pump),
        "effective_coupling_at_pump": device.effective_coupling(pump.center_omega),
        "points": points,
        "span_ghz": span_ghz,
    });
    run.config = json!({ "device": device, "center_nm": center_nm, "span_ghz": span_ghz, "points": points });
    run.write_json("spectrum.json", None, &summary)?;
    run.finish()?;
    Ok(())
}

struct Simulated {
    cfg: SourceConfig,
    resonances: [ResonanceSpec; 3],
    pulse: PumpPulse,
    jta: JointGrid,
}

fn source_path(g: &GlobalArgs, alias: Option<PathBuf>) -> Result<PathBuf, CliError> {
    alias
        .or_else(|| g.source.clone())
        .ok_or_else(|| CliError::Usage("a source configuration is required (--source)".into()))
}

fn simulate_source(g: &GlobalArgs, run: &mut Run, path: &Path) -> Result<Simulated, CliError> {
    run.input(path)?;
    let cfg = config::load_source(path)?;
    let device = device_for(g, run)?;
    let preset = cfg.preset(&device, path)?;
    let resonances = preset.resonances()?;
    let pulse = cfg.pulse(&preset);
    let jta = match cfg.method {
        Method::Time => {
            let opts = TemporalOptions {
                points: cfg.grid_points,
                ..TemporalOptions::default()
            };
            let axis = default_time_axis(&resonances, &pulse, cfg.grid_points);
            jta_time_domain(&resonances, &pulse, &axis, &axis, &opts)?
        }
        Method::Frequency => {
            let [p, s, i] = resonances.map(|r| LorentzianMode::from_resonance(&r));
            let opts = JsaOptions {
                points: cfg.grid_points,
                ..JsaOptions::default()
            };
            jsa_to_jta(&compute_jsa(&p, &s, &i, &pulse, &opts)?)?
        }
    };
    run.config = json!({ "source": cfg, "device": device, "resolved_q": preset.q,
        "pump_detuning_per_tau": preset.pump_detuning, "mismatch_per_tau": preset.mismatch });
    Ok(Simulated {
        cfg,
        resonances,
        pulse,
        jta,
    })
}

fn jta_summary(s: &Simulated) -> Result<Value, CliError> {
    let schmidt = schmidt_decompose(&s.jta)?;
    let bound = purity_upper_bound_from_jti(&jti(&s.jta)?)?;
    let [p, si, i] = &s.resonances;
    Ok(json!({
        "method": s.cfg.method,
        "grid_points": s.jta.axis_s.len,
        "time_step_ps": s.jta.axis_s.step * 1e12,
        "pulse_duration_ps": s.pulse.duration * 1e12,
        "resonances": { "pump": resonance_json(p), "signal": resonance_json(si), "idler": resonance_json(i) },
        "purity": schmidt.purity,
        "schmidt_number": schmidt.schmidt_number,
        "purity_sqrt_jti": bound.purity,
        "schmidt_number_sqrt_jti": bound.schmidt_number,
    }))
}

fn simulate_jta(g: &GlobalArgs, alias: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut run = Run::new("simulate-jta", g.out_dir.clone())?;
    let path = source_path(g, alias)?;
    let sim = simulate_source(g, &mut run, &path)?;
    let (grid_path, w) = run.create("jta.jgrd", out.as_deref())?;
    sim.jta.write_to(w)?;
    let (csv, mut w) = run.create("jti.csv", None)?;
    sim.jta
        .write_intensity_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::from_io(&csv, e))?;
    let mut summary = jta_summary(&sim)?;
    summary["kind"] = json!("jta-simulation");
    summary["provenance"] = provenance(&run)?;
    summary["grid_file"] = json!(grid_path.display().to_string());
    run.write_json("jta.json", None, &summary)?;
    run.finish()?;
    Ok(())
}

fn purity_error_json(e: &PurityError) -> Value {
    json!({
        "estimate": e.estimate,
        "std_error": e.std_error,
        "bias": e.bias,
        "corrected": e.corrected,
        "replicas": e.replicas,
    })
}

fn analyze_jta(g: &GlobalArgs, input: &Path, bootstrap: usize, counts: u64, report: Option<PathBuf>) -> Result<(), CliError> {
    let mut run = Run::new("analyze-jta", g.out_dir.clone())?;
    run.input(input)?;
    let f = File::open(input).map_err(|e| CliError::from_io(input, e))?;
    let grid = JointGrid::read_from(BufReader::new(f))?;
    let schmidt = schmidt_decompose(&grid)?;
    let intensity = grid.intensity();
    let bound = purity_upper_bound_from_jti(&intensity)?;
    let error = if bootstrap > 0 {
        let total = intensity.sum();
        let expected = intensity.map(|v| (v / total * counts as f64).round() as u64);
        run.seeds.push(g.seed);
        Some(purity_error_json(&statistical_error(&expected, bootstrap, g.seed)?))
    } else {
        None
    };
    let summary = json!({
        "kind": "jta-analysis",
        "provenance": provenance(&run)?,
        "domain": grid.domain,
        "coefficients": schmidt.coefficients.iter().take(20).collect::<Vec<_>>(),
        "mode_count_retained": schmidt.mode_count_retained,
        "purity": schmidt.purity,
        "schmidt_number": schmidt.schmidt_number,
        "purity_sqrt_jti": bound.purity,
        "schmidt_number_sqrt_jti": bound.schmidt_number,
        "purity_sqrt_jti_error": error,
    });
    run.config = json!({ "bootstrap": bootstrap, "counts": counts });
    run.write_json("schmidt.json", report.as_deref(), &summary)?;
    run.finish()?;
    Ok(())
}

fn generate_tags(g: &GlobalArgs, pulses: u64, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut run = Run::new("generate-tags", g.out_dir.clone())?;
    let path = source_path(g, None)?;
    let sim = simulate_source(g, &mut run, &path)?;
    if let Some(p) = &g.chain {
        run.input(p)?;
    }
    let chain_cfg = config::load_chain(g.chain.as_deref())?;
    let chain = chain_cfg.chain();
    let cfg = &sim.cfg;

    let mut src = SourceModel::new(&sim.jta, sim.pulse)?;
    src.resonator_mean_pairs = cfg.resonator_mean_pairs;
    src.waveguide_pair_rate = cfg.waveguide_pairs_per_pulse;
    src.noise_mean_photons = [cfg.noise_mean_photons_signal, cfg.noise_mean_photons_idler];
    src.statistics = cfg.statistics();
    src.schmidt_k = match cfg.schmidt_number {
        Some(k) => k,
        None => schmidt_decompose(&sim.jta)?.schmidt_number,
    };
    let [_, rs, ri] = &sim.resonances;
    src.escape_efficiency = [
        cfg.escape_efficiency_signal.unwrap_or(rs.escape_efficiency()),
        cfg.escape_efficiency_idler.unwrap_or(ri.escape_efficiency()),
    ];
    if let Some(target) = cfg.target_heralding_efficiency {
        src.calibrate_escape_for_heralding(target)?;
    }

    let lifetime = rs.lifetime().max(ri.lifetime());
    let mut extra = Map::new();
    extra.insert("lifetime_s".into(), json!(lifetime));
    extra.insert("pulse_shape".into(), json!(sim.pulse.shape));
    extra.insert("statistics".into(), json!(src.statistics));
    extra.insert("expected_heralding_efficiency".into(), json!(src.expected_heralding_efficiency()?));

    let (tags_path, w) = run.create("tags.ttag", out.as_deref())?;
    let records = write_run_with_metadata(&src, &chain, pulses, g.seed, &extra, w)?;
    run.seeds.push(g.seed);

    let summary = json!({
        "kind": "tag-generation",
        "provenance": provenance(&run)?,
        "tag_file": tags_path.display().to_string(),
        "pulses": pulses,
        "records": records,
        "seed": g.seed,
        "schmidt_number": src.schmidt_k,
        "escape_efficiency": src.escape_efficiency,
        "expected_heralding_efficiency": src.expected_heralding_efficiency()?,
        "lifetime_ps": lifetime * 1e12,
    });
    let mut config = run.config.take();
    config["chain"] = json!(chain_cfg);
    config["pulses"] = json!(pulses);
    run.config = config;
    run.write_json("generation.json", None, &summary)?;
    run.finish()?;
    Ok(())
}

struct TagAnalysis {
    input: PathBuf,
    bin_ps: f64,
    origin_ps: f64,
    region: RegionArg,
    lifetime_ps: Option<f64>,
    eta_d: Option<f64>,
    t_i: Option<f64>,
    bootstrap: usize,
    report: Option<PathBuf>,
}

fn meta_f64(meta: &Value, key: &str) -> Option<f64> {
    meta.get(key).and_then(Value::as_f64)
}

fn meta_pair(meta: &Value, key: &str) -> Option<[f64; 2]> {
    let v = meta.get(key)?.as_array()?;
    Some([v.first()?.as_f64()?, v.get(1)?.as_f64()?])
}

fn missing(key: &str, flag: &str) -> CliError {
    CliError::Usage(format!("tag file metadata lacks `{key}`; pass {flag}"))
}

fn analyze_tags(g: &GlobalArgs, a: TagAnalysis) -> Result<(), CliError> {
    let mut run = Run::new("analyze-tags", g.out_dir.clone())?;
    run.input(&a.input)?;
    let reader = TagReader::open(&a.input).map_err(|e| match e {
        pairsim::Error::Io(io) => CliError::from_io(&a.input, io),
        e => e.into(),
    })?;
    let header = reader.header().clone();
    let meta = &header.metadata;
    let window = meta_f64(meta, "window_s").unwrap_or(20e-9);
    let spec = HistogramSpec::covering(a.origin_ps * 1e-12, a.bin_ps * 1e-12, window);
    let hist = build_histogram_streaming(reader, spec)?;

    let duration = meta_f64(meta, "pulse_duration_s").ok_or_else(|| missing("pulse_duration_s", "a tag file from generate-tags"))?;
    let lifetime = match a.lifetime_ps {
        Some(t) => t * 1e-12,
        None => meta_f64(meta, "lifetime_s").ok_or_else(|| missing("lifetime_s", "--lifetime-ps"))?,
    };
    let jitter = meta_f64(meta, "jitter_sigma_s").unwrap_or(0.0);
    let tax = RegionTaxonomy::from_pulse(duration, lifetime, RegionTaxonomy::jitter_margin(jitter));
    let eta_d = match a.eta_d {
        Some(v) => v,
        None => meta_f64(meta, "detector_efficiency").ok_or_else(|| missing("detector_efficiency", "--eta-d"))?,
    };
    let transmittivity = meta_pair(meta, "transmittivity").unwrap_or([1.0, 1.0]);
    let t_i = a.t_i.unwrap_or(transmittivity[1]);
    let rep = header.repetition_rate;
    let rates = hist.rates(rep);

    let regions: Map<String, Value> = tax
        .regions()
        .iter()
        .map(|r| (format!("{:?}", r.label), json!(hist.region_total(r))))
        .collect();
    let region = match a.region {
        RegionArg::All => None,
        RegionArg::A => Some(tax.get(RegionLabel::A)),
        RegionArg::B => Some(tax.get(RegionLabel::B)),
        RegionArg::C => Some(tax.get(RegionLabel::C)),
        RegionArg::D => Some(tax.get(RegionLabel::D)),
    };
    let selected = match &region {
        Some(r) => select_region(&hist, r)?,
        None => hist.clone(),
    };
    run.seeds.push(g.seed);
    let purity = match statistical_error(&selected.cropped(), a.bootstrap.max(100), g.seed) {
        Ok(e) => purity_error_json(&e),
        Err(pairsim::Error::Domain(m)) => json!({ "unavailable": m }),
        Err(e) => return Err(e.into()),
    };
    let g2 = |ch: Channel| match g2_with_bootstrap(&hist.multiplicity_distribution(ch), a.bootstrap.max(2), g.seed) {
        Ok(e) => estimate(&e, "dimensionless"),
        Err(e) => json!({ "unavailable": e.to_string() }),
    };
    let herald = match heralding_efficiency(&rates, eta_d, t_i) {
        Ok(e) => estimate(&e, "dimensionless"),
        Err(e) => json!({ "unavailable": e.to_string() }),
    };
    let eta = [eta_d * transmittivity[0], eta_d * t_i];
    let (pairs, bright) = match mean_pairs_per_pulse(&rates, rep, eta[0], eta[1]) {
        Ok(n) => {
            let b = meta_f64(meta, "pulse_energy_j").map(|e| brightness(n.value, e * 1e12)).transpose()?;
            (estimate(&n, "pairs per pulse"), json!(b))
        }
        Err(e) => (json!({ "unavailable": e.to_string() }), Value::Null),
    };

    let (csv, mut w) = run.create("histogram.csv", None)?;
    selected.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::from_io(&csv, e))?;

    let total = hist.total_coincidences();
    let summary = json!({
        "kind": "tag-analysis",
        "provenance": provenance(&run)?,
        "pulses": hist.total_pulses,
        "repetition_rate_hz": rep,
        "bin_ps": a.bin_ps,
        "origin_ps": a.origin_ps,
        "singles": { "signal": hist.singles[0], "idler": hist.singles[1] },
        "rates_hz": { "signal": rates.r_s, "idler": rates.r_i, "coincidence": rates.r_si, "accidental": rates.accidental },
        "coincidences_total": total,
        "coincidences_overflow": hist.overflow,
        "region_totals": regions,
        "region": region.map(|r| json!({
            "label": format!("{:?}", r.label),
            "ts_ps": [r.ts.0 * 1e12, r.ts.1 * 1e12],
            "ti_ps": [r.ti.0 * 1e12, r.ti.1 * 1e12],
            "coincidences": selected.total_coincidences(),
            "fraction_of_total": if total > 0 { selected.total_coincidences() as f64 / total as f64 } else { 0.0 },
        })),
        "purity_sqrt_jti": purity,
        "g2_signal": g2(Channel::Signal),
        "g2_idler": g2(Channel::Idler),
        "heralding_efficiency": herald,
        "heralding_inputs": { "detector_efficiency": eta_d, "idler_transmittivity": t_i },
        "mean_pairs_per_pulse": pairs,
        "brightness_pairs_per_pj2": bright,
    });
    run.config = json!({
        "bin_ps": a.bin_ps, "origin_ps": a.origin_ps, "region": format!("{:?}", a.region),
        "lifetime_s": lifetime, "eta_d": eta_d, "t_i": t_i, "bootstrap": a.bootstrap,
    });
    run.write_json("tag-report.json", a.report.as_deref(), &summary)?;
    run.finish()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fit_power(
    g: &GlobalArgs,
    input: &Path,
    eta_s: f64,
    eta_i: f64,
    model: ModelArg,
    reference_power: Option<f64>,
    mode_purity: f64,
    report: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut run = Run::new("fit-power", g.out_dir.clone())?;
    run.input(input)?;
    let f = File::open(input).map_err(|e| CliError::from_io(input, e))?;
    let data = read_power_csv(BufReader::new(f))?;
    let model = match model {
        ModelArg::Threshold => ClickModel::Threshold,
        ModelArg::Literal => ClickModel::Literal,
    };
    let fit = fit_power_scaling(&data, eta_s, eta_i, model)?;
    let at_reference = match reference_power {
        None => Value::Null,
        Some(p) => {
            let [(n1, e1), (ns, es), (ni, ei)] = fit.means_at(p);
            json!({
                "power": p,
                "n1": { "value": n1, "std_error": e1 },
                "n2_signal": { "value": ns, "std_error": es },
                "n2_idler": { "value": ni, "std_error": ei },
                "g2_signal": g2_two_thermal(n1, ns, mode_purity)?,
                "g2_idler": g2_two_thermal(n1, ni, mode_purity)?,
                "mode_purity": mode_purity,
            })
        }
    };
    let summary = json!({
        "kind": "power-fit",
        "provenance": provenance(&run)?,
        "model": model,
        "eta_signal": eta_s,
        "eta_idler": eta_i,
        "a_per_power": { "value": fit.params.a, "std_error": fit.std_errors.a },
        "b_signal_per_power": { "value": fit.params.b_s, "std_error": fit.std_errors.b_s },
        "b_idler_per_power": { "value": fit.params.b_i, "std_error": fit.std_errors.b_i },
        "relative_residuals": fit.residuals,
        "cost": fit.cost,
        "iterations": fit.iterations,
        "reference": at_reference,
    });
    run.config = json!({ "eta_s": eta_s, "eta_i": eta_i, "model": model, "reference_power": reference_power, "mode_purity": mode_purity });
    run.write_json("power-fit.json", report.as_deref(), &summary)?;
    run.finish()?;
    Ok(())
}

fn report(g: &GlobalArgs, inputs: &[PathBuf], out: Option<PathBuf>) -> Result<(), CliError> {
    let mut run = Run::new("report", g.out_dir.clone())?;
    let mut metrics = Map::new();
    let mut sources = Vec::new();
    if let Some(path) = g.source.clone() {
        let sim = simulate_source(g, &mut run, &path)?;
        let s = jta_summary(&sim)?;
        for key in ["purity", "schmidt_number", "purity_sqrt_jti", "schmidt_number_sqrt_jti"] {
            metrics.insert(key.into(), s[key].clone());
        }
        metrics.insert("resonances".into(), s["resonances"].clone());
        sources.push(digest(&path)?);
    }
    for p in inputs {
        run.input(p)?;
        let text = std::fs::read_to_string(p).map_err(|e| CliError::from_io(p, e))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Config {
            path: p.display().to_string(),
            message: e.to_string(),
        })?;
        let keys: &[&str] = match v.get("kind").and_then(Value::as_str) {
            Some("jta-simulation") | Some("jta-analysis") => {
                &["purity", "schmidt_number", "purity_sqrt_jti", "schmidt_number_sqrt_jti"]
            }
            Some("tag-analysis") => &[
                "g2_signal",
                "g2_idler",
                "heralding_efficiency",
                "mean_pairs_per_pulse",
                "brightness_pairs_per_pj2",
                "region",
            ],
            Some("power-fit") => &["a_per_power", "b_signal_per_power", "b_idler_per_power", "reference"],
            Some("spectrum") => &["main_fsr_ghz", "aux_fsr_ghz", "aux_dip_extinction_db", "pump_resonance"],
            _ => {
                return Err(CliError::Config {
                    path: p.display().to_string(),
                    message: "not a pairsim report".into(),
                })
            }
        };
        let mut entry = Map::new();
        for k in keys {
            if let Some(x) = v.get(*k) {
                entry.insert((*k).to_string(), x.clone());
                if !matches!(*k, "region" | "reference") {
                    metrics.insert((*k).to_string(), x.clone());
                }
            }
        }
        if v["kind"] == "tag-analysis" {
            if let Some(p) = v.get("purity_sqrt_jti") {
                metrics.insert("purity_sqrt_jti_measured".into(), p.clone());
            }
        }
        if v["kind"] == "power-fit" && !v["reference"].is_null() {
            metrics.insert("noise_fit_reference".into(), v["reference"].clone());
        }
    }
    if metrics.is_empty() {
        return Err(CliError::Usage("report needs --source or --inputs".into()));
    }
    let doc = json!({
        "kind": "report",
        "provenance": provenance(&run)?,
        "metrics": metrics,
    });
    run.write_json("report.json", out.as_deref(), &doc)?;
    run.finish()?;
    Ok(())
}
