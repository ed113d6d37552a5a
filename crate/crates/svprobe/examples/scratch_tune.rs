// Scratch experiment driver used while tuning defaults; not part of the
// final example set.

use svprobe::geometry::cosine;
use svprobe::inverse::{round_trip_report, train_inverse, TrainConfig};
use svprobe::metrics::{eer, min_dcf, ScoreSample};
use svprobe::nes::{audio_nes, latent_nes, NesConfig};
use svprobe::oracle::{enroll, VerificationOracle};
use svprobe::seed::substream;
use svprobe::synthworld::{
    analytic_inverse, make_correlated_extractor, make_extractor, make_population,
    CorrelationSpec, Nonlinearity,
};

fn calibrate(
    ex: &svprobe::synthworld::FeatureExtractor,
    pop: &svprobe::synthworld::Population,
) -> (f64, f64, f64) {
    let feats: Vec<_> = pop
        .waveforms()
        .iter()
        .map(|w| ex.extract(w).unwrap())
        .collect();
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for i in 0..feats.len() {
        for j in (i + 1)..feats.len() {
            let c = cosine(&feats[i], &feats[j]).unwrap().value();
            if pop.identity_labels()[i] == pop.identity_labels()[j] {
                genuine.push(c);
            } else if impostor.len() < 20000 {
                impostor.push(c);
            }
        }
    }
    let sample = ScoreSample::new(genuine, impostor).unwrap();
    let (e, op) = eer(&sample);
    let (_, opm) = min_dcf(&sample, 0.01, 1.0, 1.0).unwrap();
    (e, op.tau, opm.tau)
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "nes".into());
    let n = 256;
    let d = 32;
    let local = make_extractor(1001, n, d, Nonlinearity::Linear).unwrap();
    let pop = make_population(1002, 50, 10, 0.1, n).unwrap();

    match which.as_str() {
        "calib" => {
            let (e, tau_e, tau_m) = calibrate(&local, &pop);
            println!("local: EER {e:.4} tau_E {tau_e:.4} tau_M {tau_m:.4}");
            for rho in [0.5, 0.75, 0.9, 1.0] {
                let t = make_correlated_extractor(&local, CorrelationSpec { rho, seed: 1003 })
                    .unwrap();
                let (e, tau_e, tau_m) = calibrate(&t, &pop);
                println!("rho {rho}: EER {e:.4} tau_E {tau_e:.4} tau_M {tau_m:.4}");
            }
        }
        "nes" => {
            let rho = 0.9;
            let target =
                make_correlated_extractor(&local, CorrelationSpec { rho, seed: 1003 }).unwrap();
            let (e, tau_e, _) = calibrate(&target, &pop);
            println!("rho {rho}: EER {e:.4} tau_E {tau_e:.4}");
            let inv = analytic_inverse(&local).unwrap();

            let audio_anti: bool = std::env::args()
                .nth(2)
                .map(|s| s == "anti")
                .unwrap_or(false);
            let sigma_audio: f64 = std::env::args()
                .nth(3)
                .and_then(|s| s.parse().ok())
                .unwrap_or(1e-3);
            let audio_cfg = NesConfig {
                antithetic: audio_anti,
                noise_scale: sigma_audio,
                max_iter: 4500,
                ..NesConfig::audio_defaults()
            };
            let latent_cfg = NesConfig {
                max_iter: 4500,
                ..NesConfig::latent_defaults()
            };
            let mut audio_q = Vec::new();
            let mut latent_q = Vec::new();
            let trials = 8;
            let t0 = std::time::Instant::now();
            for victim in 0..trials {
                let enrollment = pop.utterance(victim, 10).unwrap();
                let template = enroll(&target, &enrollment, victim as u64).unwrap();
                let oracle =
                    VerificationOracle::new(target.clone(), template.clone(), Some(50_000))
                        .unwrap();
                let mut rng = substream(2000, "audio-trial", victim as u64);
                let tr = audio_nes(&oracle, tau_e, &audio_cfg, &mut rng).unwrap();
                audio_q.push((tr.success, tr.queries_at_success.unwrap_or(tr.total_queries)));

                let oracle2 =
                    VerificationOracle::new(target.clone(), template, Some(50_000)).unwrap();
                let mut rng2 = substream(2000, "latent-trial", victim as u64);
                let tr2 = latent_nes(&oracle2, &inv, tau_e, &latent_cfg, &mut rng2).unwrap();
                latent_q.push((tr2.success, tr2.queries_at_success.unwrap_or(tr2.total_queries)));
            }
            println!("elapsed {:?}", t0.elapsed());
            println!("audio:  {audio_q:?}");
            println!("latent: {latent_q:?}");
        }
        "train" => {
            let sat = make_extractor(1001, n, d, Nonlinearity::Saturating).unwrap();
            let (train_pool, held_out) = pop.split_by_identity(0.8, 42).unwrap();
            for (lr0, lrf, steps) in [(0.5, 0.02, 600), (1.0, 0.05, 800), (2.0, 0.05, 800)] {
                let config = TrainConfig {
                    lr_initial: lr0,
                    lr_final: lrf,
                    steps,
                    seed: 7,
                    ..TrainConfig::default()
                };
                let t0 = std::time::Instant::now();
                let (model, history) = train_inverse(&sat, &train_pool, &config).unwrap();
                let report = round_trip_report(&sat, &sat, &model, &held_out).unwrap();
                println!(
                    "lr {lr0}->{lrf} steps {steps}: init {:.4} final {:.4} heldout sL {:.4} ({:?})",
                    history[0],
                    history.last().unwrap(),
                    report.local_stats().mean,
                    t0.elapsed()
                );
            }
        }
        "ablation" => {
            let sat = make_extractor(1001, n, d, Nonlinearity::Saturating).unwrap();
            let target =
                make_correlated_extractor(&sat, CorrelationSpec { rho: 0.75, seed: 1003 })
                    .unwrap();
            let (train_pool, held_out) = pop.split_by_identity(0.8, 42).unwrap();
            let mut wins = 0;
            for seed in 0..5u64 {
                let base_cfg = TrainConfig {
                    steps: 600,
                    seed,
                    ..TrainConfig::default()
                };
                let with_sc = TrainConfig {
                    lambda_sc: 1.0,
                    ..base_cfg
                };
                let without_sc = TrainConfig {
                    lambda_sc: 0.0,
                    ..base_cfg
                };
                let (m1, _) = train_inverse(&sat, &train_pool, &with_sc).unwrap();
                let (m0, _) = train_inverse(&sat, &train_pool, &without_sc).unwrap();
                let r1 = round_trip_report(&target, &sat, &m1, &held_out).unwrap();
                let r0 = round_trip_report(&target, &sat, &m0, &held_out).unwrap();
                let (s1, s0) = (r1.transfer_stats().mean, r0.transfer_stats().mean);
                println!("seed {seed}: sT with SC {s1:.4} without {s0:.4}");
                if s1 > s0 {
                    wins += 1;
                }
            }
            println!("wins {wins}/5");
        }
        other => eprintln!("unknown mode {other}"),
    }
}
