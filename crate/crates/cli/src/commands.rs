use crate::output::OutputDir;
use crate::{Cli, Command, Failure};
use anyhow::{anyhow, Context};
use difflink::bench::{bench_propagation, write_bench_csv, Scaling};
use difflink::channel::{noise_vector, sigma2_for_snr, ChannelSampler};
use difflink::config::ExperimentConfig;
use difflink::diffraction::DEFAULT_PADDING;
use difflink::evaluation::{measure_ser, median, run_resumable, write_ser_csv, SweepSpec};
use difflink::training::{read_checkpoint, train, write_checkpoint, Checkpoint};
use difflink::transceiver::{dump_fields, write_magnitude_csv, write_pgm, Transceiver};
use difflink::{Error, Stream};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

type Outcome = std::result::Result<(), Failure>;

pub fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Train => cmd_train(cli),
        Command::Eval {
            checkpoint,
            snr,
            trials,
        } => cmd_eval(
            cli,
            checkpoint.as_deref(),
            snr.as_ref().map(|g| g.0.as_slice()),
            *trials,
        ),
        Command::Visualize {
            checkpoint,
            symbol,
            snr_db,
        } => cmd_visualize(cli, checkpoint.as_deref(), *symbol, *snr_db),
        Command::Sweep { spec } => cmd_sweep(cli, spec),
        Command::Bench { sizes, reps } => cmd_bench(cli, sizes, *reps),
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Config)
}

fn apply_overrides(cli: &Cli, config: &mut ExperimentConfig) -> Result<(), Failure> {
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(engine) = cli.engine {
        config.propagation.engine = engine;
    }
    if let Some(padding) = cli.padding {
        config.propagation.padding = padding;
    }
    config.validate()?;
    Ok(())
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::parse(&read_text(path)?)?,
        None => ExperimentConfig::reference(),
    };
    apply_overrides(cli, &mut config)?;
    Ok(config)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_checkpoint(std::io::BufReader::new(file))?)
}

fn checkpoint_path(config: &ExperimentConfig, given: Option<&Path>) -> PathBuf {
    given.map_or_else(
        || config.output_dir.join("checkpoint.bin"),
        Path::to_path_buf,
    )
}

/// Config transceiver with the checkpoint phases installed.
fn restore(config: &ExperimentConfig, checkpoint: &Checkpoint) -> Result<Transceiver, Failure> {
    let mut t = config.transceiver()?;
    checkpoint.apply_to(&mut t)?;
    Ok(t)
}

fn save_checkpoint(
    out: &OutputDir,
    name: &str,
    t: &Transceiver,
    reference_power: f64,
) -> anyhow::Result<()> {
    let mut w = out.create(name)?;
    write_checkpoint(&Checkpoint::from_transceiver(t, reference_power), &mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_train(cli: &Cli) -> Outcome {
    let config = load_config(cli)?;
    let out = OutputDir::claim(&config.output_dir)?;
    out.write_manifest("train", &config)?;
    let mut transceiver = config.transceiver()?;
    let report = match train(&config.train_config(), &mut transceiver, config.rng_seed()) {
        Ok(r) => r,
        Err(e @ Error::Diverged { .. }) => {
            let mut w = out.create("diverged.txt")?;
            writeln!(w, "{e}")?;
            writeln!(w, "config_hash = {}", config.hash())?;
            writeln!(w, "last finite phases: diverged.ckpt")?;
            w.flush()?;
            save_checkpoint(&out, "diverged.ckpt", &transceiver, 0.0)?;
            return Err(Failure::Runtime(anyhow!(e).context(format!(
                "diagnostics written to {}",
                out.file("diverged.txt").display()
            ))));
        }
        Err(e) => return Err(e.into()),
    };
    save_checkpoint(&out, "checkpoint.bin", &transceiver, report.reference_power)?;
    let mut w = out.create("loss.csv")?;
    report.write_csv(&mut w)?;
    w.flush()?;
    println!(
        "trained {} epochs, final loss {:.4}, reference power {:.4e}; outputs in {}",
        report.history.len(),
        report.final_loss(),
        report.reference_power,
        config.output_dir.display()
    );
    Ok(())
}

fn cmd_eval(
    cli: &Cli,
    checkpoint: Option<&Path>,
    snr: Option<&[f64]>,
    trials: Option<usize>,
) -> Outcome {
    let mut config = load_config(cli)?;
    if let Some(grid) = snr {
        config.evaluation.snr_db = grid.to_vec();
    }
    if let Some(trials) = trials {
        config.evaluation.trials = trials;
    }
    config.validate()?;
    let ckpt = load_checkpoint(&checkpoint_path(&config, checkpoint))?;
    let model = restore(&config, &ckpt)?;
    let sampler = ChannelSampler::new(
        model.geometry(),
        config.channel_model(),
        config.channel.policy,
        config.rng_seed(),
    )?;
    let curve = measure_ser(
        &model,
        &config.evaluation.snr_db,
        config.evaluation.trials,
        &sampler,
        ckpt.reference_power,
        config.rng_seed(),
    )?;
    let out = OutputDir::claim(&config.output_dir)?;
    let mut w = out.create("ser.csv")?;
    write_ser_csv(&curve, &config.hash(), &mut w)?;
    w.flush()?;
    for p in &curve.points {
        println!(
            "{:>7.1} dB  SER {:.3e} +- {:.1e} ({} trials)",
            p.snr_db, p.ser, p.ci_halfwidth, p.trials
        );
    }
    Ok(())
}

fn plane_names(model: &Transceiver) -> Vec<String> {
    let g = model.geometry();
    let mut names = vec!["modulator".to_string()];
    names.extend((0..g.l_tx).map(|k| format!("tx{k}")));
    names.extend((0..g.l_rx).rev().map(|k| format!("rx{k}_in")));
    names.push("detector".into());
    names
}

fn cmd_visualize(
    cli: &Cli,
    checkpoint: Option<&Path>,
    symbol: usize,
    snr_db: Option<f64>,
) -> Outcome {
    let config = load_config(cli)?;
    let ckpt = load_checkpoint(&checkpoint_path(&config, checkpoint))?;
    let model = restore(&config, &ckpt)?;
    model.scheme().check_symbol(symbol)?;
    let seed = config.rng_seed();
    let sampler = ChannelSampler::new(
        model.geometry(),
        config.channel_model(),
        config.channel.policy,
        seed,
    )?;
    let h = sampler.evaluation(0)?;
    let noise = match snr_db {
        Some(snr) => {
            let sigma2 = sigma2_for_snr(snr, ckpt.reference_power)?;
            Some(noise_vector(
                model.geometry().len(),
                sigma2,
                &mut seed.rng(Stream::Noise, 0),
            ))
        }
        None => None,
    };
    let forward = model.forward_with(symbol, &h, noise.as_deref(), true)?;
    let planes = dump_fields(&forward)?;
    let (n_x, n_z) = (model.geometry().n_x, model.geometry().n_z);
    let out = OutputDir::claim(&config.output_dir)?;
    for (i, (mags, name)) in planes.iter().zip(plane_names(&model)).enumerate() {
        let stem = format!("plane_{i:02}_{name}");
        let mut w = out.create(&format!("{stem}.pgm"))?;
        write_pgm(mags, n_x, n_z, &mut w)?;
        w.flush()?;
        let mut w = out.create(&format!("{stem}.csv"))?;
        write_magnitude_csv(mags, n_x, &mut w)?;
        w.flush()?;
    }
    println!(
        "symbol {symbol}: decided {}, {} planes written to {}",
        forward.detection.decision,
        planes.len(),
        config.output_dir.display()
    );
    Ok(())
}

fn cmd_sweep(cli: &Cli, spec_path: &Path) -> Outcome {
    let text = read_text(spec_path)?;
    let spec = SweepSpec::parse(&text)?;
    let mut base = match &cli.config {
        Some(path) => ExperimentConfig::parse(&read_text(path)?)?,
        None => spec.base_config(Some(spec_path))?,
    };
    apply_overrides(cli, &mut base)?;
    let cells = spec.cells(&base)?;
    let out = OutputDir::claim(&base.output_dir)?;
    out.write_manifest("sweep", &base)?;
    std::fs::write(out.file("sweep.toml"), &text)?;
    let results = run_resumable(
        &cells,
        &spec.test_snr_db,
        spec.trials,
        &out.file("sweep.csv"),
    )?;
    let mut by_label: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &results {
        by_label.entry(&r.label).or_default().push(r.final_loss);
    }
    for (label, losses) in by_label {
        println!(
            "{label}: median final loss {:.4} over {} seeds",
            median(&losses),
            losses.len()
        );
    }
    Ok(())
}

fn cmd_bench(cli: &Cli, sizes: &[usize], reps: usize) -> Outcome {
    let padding = cli.padding.unwrap_or(DEFAULT_PADDING);
    let records = bench_propagation(sizes, padding, reps)?;
    let dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs/bench"));
    let out = OutputDir::claim(&dir)?;
    let mut w = out.create("bench.csv")?;
    write_bench_csv(&records, &mut w)?;
    w.flush()?;
    for r in &records {
        println!(
            "{:>4}x{:<4} {:?}  median {:>12.0} ns  iqr {:>10.0} ns  setup {:>12.0} ns",
            r.n, r.n, r.engine, r.median_ns, r.iqr_ns, r.setup_ns
        );
    }
    if let Some(s) = Scaling::from_records(&records) {
        println!(
            "slopes vs element count: rsf {:.2}, asm {:.2}; speedup at largest size {:.1}x",
            s.rsf_slope, s.asm_slope, s.speedup_at_largest
        );
        s.warn_if_off();
    }
    Ok(())
}
