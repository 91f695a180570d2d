//! Timings for each stage of the spectrum and coherence pipeline, using the
//! built-in preset and default grids.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use sideband_core::coherence::{temporal_coherence, CoherenceOptions};
use sideband_core::interferometry::{extract_visibility, interferogram_from_model, ExtractOptions, ScanPlan, TwoComponentModel};
use sideband_core::phonon::{susceptibility, PhononBath};
use sideband_core::spectra::{absorption_spectrum, SimulationSettings};
use sideband_core::units::HBAR_MEV_PS;
use sideband_core::presets;

fn pipeline(c: &mut Criterion) {
    let preset = presets::reference();
    let settings = SimulationSettings::default();
    let grid = settings.time_grid().unwrap();
    let energies = settings.energy_grid(preset.emitter.omega0).unwrap();
    let bath = PhononBath::new(preset.phonon).unwrap();
    let opts = Default::default();

    c.bench_function("phonon_integral", |b| b.iter(|| bath.phonon_integral(black_box(7.3), &opts).unwrap()));

    let mut slow = c.benchmark_group("slow");
    slow.sample_size(10);
    slow.bench_function("susceptibility", |b| b.iter(|| susceptibility(&grid, &preset.emitter, &preset.phonon).unwrap()));
    slow.finish();

    let chi = susceptibility(&grid, &preset.emitter, &preset.phonon).unwrap();
    c.bench_function("absorption_spectrum", |b| b.iter(|| absorption_spectrum(black_box(&chi), &energies).unwrap()));

    let spectrum = absorption_spectrum(&chi, &energies).unwrap();
    let co = CoherenceOptions::default();
    c.bench_function("temporal_coherence", |b| {
        b.iter(|| temporal_coherence(black_box(&spectrum), preset.emitter.omega0, &co).unwrap())
    });

    let w1 = preset.emitter.omega0 / HBAR_MEV_PS;
    let m = TwoComponentModel { i0: 1.0, a1: 0.8 * 11.8, tau1: 11.8, omega1: w1, a2: 0.12, tau2: 0.8, omega2: w1 - 3.0 };
    let plan = ScanPlan { centers: ScanPlan::range(-40.0, 40.0, 2.5), fringes_per_scan: 20.0, points_per_fringe: 8 };
    let ig = interferogram_from_model(&m, &plan.delays(preset.emitter.omega0).unwrap());
    let eo = ExtractOptions::default();
    c.bench_function("extract_visibility", |b| {
        b.iter(|| extract_visibility(black_box(&ig), preset.emitter.omega0, &eo).unwrap())
    });
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
