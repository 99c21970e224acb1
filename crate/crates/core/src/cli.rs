//! The `cid` command line: simulate, reconstruct, evaluate and inspect cubes.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::cube::{GuidanceCube, IntensityMap, RgbImage, SpectralCube};
use crate::decompose::{
    decompose, expand_rgb_guidance, recompose_with_guidance, spectral_correlation, DEFAULT_EPSILON,
};
use crate::error::{Error, Result};
use crate::io::scene::{generate_scene, SceneSpec};
use crate::io::{read_cube, read_mask, write_atomic, write_cube, write_mask_pgm};
use crate::metrics::{evaluate_cube_with_range, DEFAULT_DATA_RANGE};
use crate::sensing::{add_noise, build_operator, Axis, CodedMask, Measurement, NoiseModel};
use crate::solver::{
    run_hqs, DenoiserKind, NoiseEstimatorKind, SolveTrace, SolverConfig, DEFAULT_GRAM_FLOOR,
};

#[derive(Debug, Parser)]
#[command(
    name = "cid",
    version,
    about = "Chromaticity-intensity decomposition for dual-camera CASSI"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AxisArg {
    #[value(alias = "horizontal")]
    H,
    #[value(alias = "vertical")]
    V,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::H => Axis::Horizontal,
            AxisArg::V => Axis::Vertical,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverArg {
    /// HQS with a TV prior
    CidTv,
    /// HQS with the identity denoiser
    CidId,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Fixed,
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Roi {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

fn parse_roi(s: &str) -> std::result::Result<Roi, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err("expected x,y,w,h".into());
    }
    let mut v = [0usize; 4];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p
            .parse()
            .map_err(|_| format!("not a non-negative integer: {p:?}"))?;
    }
    if v[2] == 0 || v[3] == 0 {
        return Err("roi width and height must be positive".into());
    }
    Ok(Roi {
        x: v[0],
        y: v[1],
        w: v[2],
        h: v[3],
    })
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a scene, capture a coded snapshot and the side-camera image
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, value_enum, default_value = "h")]
        axis: AxisArg,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_meas: PathBuf,
        #[arg(long)]
        out_pan: Option<PathBuf>,
        #[arg(long)]
        out_truth: Option<PathBuf>,
        /// Three-band side image from contiguous band groups
        #[arg(long)]
        out_rgb: Option<PathBuf>,
        /// Gaussian noise level added to the PAN image
        #[arg(long, default_value_t = 0.0)]
        pan_noise: f64,
    },
    /// Recover chromaticity and recompose it with the side-camera image
    Reconstruct {
        #[arg(long)]
        meas: PathBuf,
        #[arg(long, conflicts_with = "rgb")]
        pan: Option<PathBuf>,
        #[arg(long)]
        rgb: Option<PathBuf>,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, value_enum, default_value = "h")]
        axis: AxisArg,
        /// Band count; inferred from the measurement width when d > 0
        #[arg(long)]
        bands: Option<usize>,
        #[arg(long, value_enum, default_value = "cid-tv")]
        solver: SolverArg,
        #[arg(long, default_value_t = 30)]
        stages: usize,
        #[arg(long, default_value_t = 0.05)]
        tau: f64,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long, value_enum, default_value = "fixed")]
        estimator: EstimatorArg,
        /// Noise level for the fixed estimator
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        /// Box size for the residual estimator
        #[arg(long, default_value_t = 5)]
        window: usize,
        /// Variance floor for the residual estimator
        #[arg(long, default_value_t = 1e-6)]
        floor: f64,
        #[arg(long, default_value_t = 20)]
        tv_iters: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        out_chroma: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Per-band PSNR and SSIM
    Evaluate {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        rec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DATA_RANGE)]
        data_range: f64,
    },
    /// Split a cube into intensity and chromaticity
    Decompose {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        out_intensity: PathBuf,
        #[arg(long)]
        out_chroma: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
    },
    /// Mean and standard deviation per band over a region
    Spectra {
        #[arg(long)]
        cube: PathBuf,
        /// Column, row, width, height
        #[arg(long, value_parser = parse_roi)]
        roi: Roi,
        #[arg(long)]
        out: PathBuf,
    },
    /// Band-by-band Pearson correlation matrix
    Corr {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random binary coded aperture (PGM for `.pgm` paths, cube file otherwise)
    Mask {
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        density: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            scene,
            mask,
            d,
            axis,
            sigma,
            seed,
            out_meas,
            out_pan,
            out_truth,
            out_rgb,
            pan_noise,
        } => {
            let text = std::fs::read_to_string(&scene).map_err(|e| Error::io(&scene, e))?;
            let spec = SceneSpec::from_json(&text)?;
            let truth = generate_scene(&spec)?;
            let mask = read_mask(&mask)?;
            let (h, w, b) = truth.dims();
            let op = build_operator(mask, GuidanceCube::uniform(h, w), d, axis.into(), (h, w, b))?;
            let clean = op.apply_forward(&truth)?;
            let (mh, mw) = clean.dims();
            let y = add_noise(&clean, &NoiseModel::uniform(mh, mw, sigma, 1.0)?, seed)?;
            write_cube(&y.to_cube(), &out_meas)?;
            if let Some(path) = out_pan {
                let (pan, _) = decompose(&truth, DEFAULT_EPSILON)?;
                let pan = if pan_noise > 0.0 {
                    degrade_pan(&pan, pan_noise, seed.wrapping_add(1))?
                } else {
                    pan
                };
                write_cube(&pan.to_cube(), &path)?;
            }
            if let Some(path) = out_rgb {
                write_cube(&rgb_from_cube(&truth)?, &path)?;
            }
            if let Some(path) = out_truth {
                write_cube(&truth, &path)?;
            }
            Ok(())
        }
        Command::Reconstruct {
            meas,
            pan,
            rgb,
            mask,
            d,
            axis,
            bands,
            solver,
            stages,
            tau,
            mu,
            estimator,
            sigma,
            window,
            floor,
            tv_iters,
            out,
            out_chroma,
            trace,
        } => {
            let y = Measurement::from_cube(&read_cube(&meas)?)?;
            let mask = read_mask(&mask)?;
            let (h, w) = (mask.height(), mask.width());
            let axis: Axis = axis.into();
            let b = infer_bands(y.dims(), (h, w), d, axis, bands)?;
            let guidance = match (pan, rgb) {
                (Some(p), _) => GuidanceCube::Pan(IntensityMap::from_cube(&read_cube(&p)?)?),
                (None, Some(p)) => {
                    let img = RgbImage::from_cube(&read_cube(&p)?)?;
                    let centers: Vec<f64> = (0..b).map(|k| k as f64).collect();
                    expand_rgb_guidance(&img, &centers, rgb_anchor_centers(b)?)?
                }
                (None, None) => GuidanceCube::uniform(h, w),
            };
            let op = build_operator(mask, guidance, d, axis, (h, w, b))?;
            let config = SolverConfig {
                stages,
                mu,
                tau,
                denoiser: match solver {
                    SolverArg::CidTv => DenoiserKind::Tv {
                        inner_iters: tv_iters,
                    },
                    SolverArg::CidId => DenoiserKind::Identity,
                },
                noise_estimator: match estimator {
                    EstimatorArg::Fixed => NoiseEstimatorKind::Fixed,
                    EstimatorArg::Residual => NoiseEstimatorKind::Residual { window, floor },
                },
                fixed_sigma: sigma,
                gram_floor: DEFAULT_GRAM_FLOOR,
                record_trace: trace.is_some(),
            };
            let (chroma, log) = run_hqs(&y, &op, &config, None)?;
            let recon = recompose_with_guidance(&chroma, op.guidance())?;
            write_cube(&recon, &out)?;
            if let Some(path) = out_chroma {
                write_cube(&chroma, &path)?;
            }
            if let Some(path) = trace {
                write_text(&path, &trace_csv(&log))?;
            }
            Ok(())
        }
        Command::Evaluate {
            reference,
            rec,
            out,
            data_range,
        } => {
            let report =
                evaluate_cube_with_range(&read_cube(&reference)?, &read_cube(&rec)?, data_range)?;
            write_text(&out, &report.to_csv())?;
            println!(
                "mean_psnr_db={} mean_ssim={}",
                report.mean_psnr, report.mean_ssim
            );
            Ok(())
        }
        Command::Decompose {
            cube,
            out_intensity,
            out_chroma,
            epsilon,
        } => {
            let (intensity, chroma) = decompose(&read_cube(&cube)?, epsilon)?;
            write_cube(&intensity.to_cube(), &out_intensity)?;
            write_cube(&chroma, &out_chroma)
        }
        Command::Spectra { cube, roi, out } => {
            let cube = read_cube(&cube)?;
            write_text(&out, &spectra_csv(&cube, roi)?)
        }
        Command::Corr { cube, out } => {
            let corr = spectral_correlation(&read_cube(&cube)?)?;
            let n = corr.nrows();
            let mut csv = String::from("band");
            for j in 0..n {
                write!(csv, ",{j}").unwrap();
            }
            csv.push('\n');
            for i in 0..n {
                write!(csv, "{i}").unwrap();
                for j in 0..n {
                    write!(csv, ",{}", corr[(i, j)]).unwrap();
                }
                csv.push('\n');
            }
            write_text(&out, &csv)
        }
        Command::Mask {
            height,
            width,
            seed,
            density,
            out,
        } => {
            if height == 0 || width == 0 {
                return Err(Error::Config("mask dims must be positive".into()));
            }
            if !(0.0..=1.0).contains(&density) {
                return Err(Error::Config(format!(
                    "density must be in [0, 1], got {density}"
                )));
            }
            let mask = CodedMask::random_binary(height, width, density, seed);
            if out
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
            {
                write_mask_pgm(&mask, &out)
            } else {
                write_cube(
                    &SpectralCube::new(height, width, 1, mask.values().to_vec())?,
                    &out,
                )
            }
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn infer_bands(
    meas: (usize, usize),
    scene: (usize, usize),
    d: usize,
    axis: Axis,
    bands: Option<usize>,
) -> Result<usize> {
    let (along_m, along_s, across_m, across_s) = match axis {
        Axis::Horizontal => (meas.1, scene.1, meas.0, scene.0),
        Axis::Vertical => (meas.0, scene.0, meas.1, scene.1),
    };
    if across_m != across_s || along_m < along_s {
        return Err(Error::Shape(format!(
            "measurement {meas:?} does not fit scene {scene:?}"
        )));
    }
    let extra = along_m - along_s;
    let b = match (bands, d) {
        (Some(b), _) => b,
        (None, 0) => return Err(Error::Config("--bands is required when d = 0".into())),
        (None, d) if extra % d == 0 => extra / d + 1,
        (None, d) => {
            return Err(Error::Shape(format!(
                "measurement extent {along_m} is not scene extent {along_s} plus a multiple of {d}"
            )))
        }
    };
    if b == 0 || along_m != along_s + d * (b - 1) {
        return Err(Error::Shape(format!(
            "measurement {meas:?} inconsistent with {b} bands at step {d}"
        )));
    }
    Ok(b)
}

/// Contiguous thirds of the band axis, as used for the simulated RGB camera.
fn rgb_group(band: usize, bands: usize) -> usize {
    band * 3 / bands
}

fn rgb_anchor_centers(bands: usize) -> Result<[f64; 3]> {
    if bands < 3 {
        return Err(Error::Config(format!(
            "RGB guidance needs at least 3 bands, got {bands}"
        )));
    }
    let mut sum = [0.0; 3];
    let mut count = [0.0; 3];
    for b in 0..bands {
        let g = rgb_group(b, bands);
        sum[g] += b as f64;
        count[g] += 1.0;
    }
    Ok([sum[0] / count[0], sum[1] / count[1], sum[2] / count[2]])
}

fn rgb_from_cube(x: &SpectralCube) -> Result<SpectralCube> {
    let (h, w, b) = x.dims();
    if b < 3 {
        return Err(Error::Config(format!(
            "RGB output needs at least 3 bands, got {b}"
        )));
    }
    let mut out = SpectralCube::zeros(h, w, 3);
    let mut count = [0.0; 3];
    for k in 0..b {
        let g = rgb_group(k, b);
        count[g] += 1.0;
        for (o, v) in out.band_mut(g).iter_mut().zip(x.band(k)) {
            *o += v;
        }
    }
    for (g, n) in count.iter().enumerate() {
        out.band_mut(g).iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

fn degrade_pan(pan: &IntensityMap, sigma: f64, seed: u64) -> Result<IntensityMap> {
    let (h, w) = (pan.height(), pan.width());
    let y = Measurement::new(h, w, pan.values().to_vec())?;
    let noisy = add_noise(&y, &NoiseModel::uniform(h, w, sigma, 1.0)?, seed)?;
    IntensityMap::new(h, w, noisy.values().iter().map(|v| v.max(0.0)).collect())
}

fn trace_csv(trace: &SolveTrace) -> String {
    let mut csv = String::from("stage,residual_norm,consistency_norm,mean_sigma,omega\n");
    for k in 0..trace.len() {
        writeln!(
            csv,
            "{},{},{},{},{}",
            k + 1,
            trace.residual_norm[k],
            trace.consistency_norm[k],
            trace.mean_sigma[k],
            trace.omega[k]
        )
        .unwrap();
    }
    csv
}

fn spectra_csv(cube: &SpectralCube, roi: Roi) -> Result<String> {
    let (h, w, b) = cube.dims();
    if roi.x + roi.w > w || roi.y + roi.h > h {
        return Err(Error::Shape(format!(
            "roi {},{},{},{} exceeds {w}x{h} image",
            roi.x, roi.y, roi.w, roi.h
        )));
    }
    let n = (roi.w * roi.h) as f64;
    let mut csv = String::from("band,mean,std\n");
    for k in 0..b {
        let band = cube.band(k);
        let values =
            (roi.y..roi.y + roi.h).flat_map(|r| band[r * w + roi.x..r * w + roi.x + roi.w].iter());
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        writeln!(csv, "{k},{mean},{}", var.sqrt()).unwrap();
    }
    Ok(csv)
}
