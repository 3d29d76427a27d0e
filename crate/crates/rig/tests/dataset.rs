// oracles index explicitly to mirror the formulas
#![allow(clippy::needless_range_loop)]

use htgnn_core::hetgraph::RigLayout;
use htgnn_core::WindowSample;
use htgnn_rig::conditions::{generate_condition_grid, GridSpec, OperatingCondition};
use htgnn_rig::dataset::{read_windows_csv, simulate_all, write_windows_csv, CaseRole, Dataset};
use htgnn_rig::{preprocess_case, window_slice, PreprocessConfig, SimConstants, Simulator};

fn simulator() -> Simulator {
    Simulator::new(&RigLayout::default_two_bearing(), SimConstants::default()).unwrap()
}

#[test]
fn dataset_round_trips_through_csv() {
    let sim = simulator();
    let conds = [
        OperatingCondition { fx: 1000.0, fy: 100.0, speed: 10.0 },
        OperatingCondition { fx: 7000.0, fy: 400.0, speed: 20.0 },
    ];
    let cases = simulate_all(&sim, &conds, 600, 11).unwrap();
    let ds = Dataset::new(RigLayout::default_two_bearing(), cases, &[1]);
    assert_eq!(ds.manifest[1].split, CaseRole::Unseen);
    let dir = tempfile::tempdir().unwrap();
    let written = ds.save(dir.path()).unwrap();
    assert_eq!(written.len(), 4);
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.unseen_ids(), vec![1]);
}

#[test]
fn corrupted_case_file_is_reported() {
    let sim = simulator();
    let conds = [OperatingCondition { fx: 1000.0, fy: 100.0, speed: 10.0 }];
    let ds = Dataset::new(RigLayout::default_two_bearing(), simulate_all(&sim, &conds, 600, 1).unwrap(), &[]);
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    let path = dir.path().join("case_000.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let truncated: Vec<&str> = text.lines().take(100).collect();
    std::fs::write(&path, truncated.join("\n")).unwrap();
    assert!(Dataset::load(dir.path()).is_err());
}

#[test]
fn windows_round_trip_through_csv() {
    let sim = simulator();
    let rec = sim
        .simulate_case(&OperatingCondition { fx: 3000.0, fy: 250.0, speed: 20.0 }, 700, 2, 0)
        .unwrap();
    let processed = preprocess_case(&rec, &PreprocessConfig::default()).unwrap();
    let windows = window_slice(&processed, 30, 50, 7, false).unwrap();
    let layout = RigLayout::default_two_bearing();
    let mut buf = Vec::new();
    write_windows_csv(&mut buf, &windows, &layout, 30).unwrap();
    let (window, back) = read_windows_csv(buf.as_slice(), &layout).unwrap();
    assert_eq!(window, 30);
    assert_eq!(back, windows);
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

fn means(s: &WindowSample) -> Vec<f64> {
    let mut f: Vec<f64> = Vec::new();
    for t in [&s.x_t, &s.x_v] {
        let (r, c) = t.dims2("probe").unwrap();
        f.extend((0..r).map(|i| t.row(i).iter().sum::<f64>() / c as f64));
    }
    f.push(s.w.data().iter().sum::<f64>() / s.w.len() as f64);
    f
}

#[test]
fn linear_probe_on_window_means_finds_the_loads() {
    let sim = simulator();
    let conds = generate_condition_grid(&GridSpec::default()).unwrap();
    let cfg = PreprocessConfig { stride: 5, ..PreprocessConfig::default() };
    let mut windows = Vec::new();
    for (i, rec) in simulate_all(&sim, &conds, 600, 3).unwrap().iter().enumerate() {
        windows.extend(window_slice(&preprocess_case(rec, &cfg).unwrap(), cfg.window, cfg.stride, i, true).unwrap());
    }
    let feats: Vec<Vec<f64>> = windows.iter().map(means).collect();
    let d = feats[0].len();
    let (n, nf) = (feats.len(), feats.len() as f64);
    let mu: Vec<f64> = (0..d).map(|j| feats.iter().map(|f| f[j]).sum::<f64>() / nf).collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| (feats.iter().map(|f| (f[j] - mu[j]).powi(2)).sum::<f64>() / nf).sqrt().max(1e-12))
        .collect();
    let x: Vec<Vec<f64>> = feats
        .iter()
        .map(|f| {
            let mut z: Vec<f64> = (0..d).map(|j| (f[j] - mu[j]) / sd[j]).collect();
            z.push(1.0);
            z
        })
        .collect();
    for target in 0..2 {
        let mut ata = vec![vec![0.0; d + 1]; d + 1];
        let mut aty = vec![0.0; d + 1];
        for (row, s) in x.iter().zip(&windows) {
            for i in 0..=d {
                aty[i] += row[i] * s.y[target];
                for j in 0..=d {
                    ata[i][j] += row[i] * row[j];
                }
            }
        }
        for (i, r) in ata.iter_mut().enumerate() {
            r[i] += 1e-6;
        }
        let w = solve(ata, aty);
        let mape = x
            .iter()
            .zip(&windows)
            .map(|(row, s)| {
                let p: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
                ((p - s.y[target]) / s.y[target]).abs()
            })
            .sum::<f64>()
            / n as f64
            * 100.0;
        println!("linear probe target {target}: MAPE {mape:.1}%");
        assert!(mape < 50.0);
    }
}
