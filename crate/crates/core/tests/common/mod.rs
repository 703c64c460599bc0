#![allow(dead_code)]

use idid::rng::{stream, StreamRng};
use idid::{Dataset, Observation};
use rand::Rng;

pub fn d8() -> Dataset {
    let rows = [
        (0, 0, 0, 2.0),
        (0, 0, 1, 2.0),
        (0, 1, 0, 1.0),
        (0, 1, 1, 3.0),
        (1, 0, 0, 3.0),
        (1, 0, 1, 3.0),
        (1, 1, 1, 4.0),
        (1, 1, 1, 6.0),
    ]
    .into_iter()
    .map(|(t, z, d, y)| Observation::new(t, z, d, y, vec![]))
    .collect();
    Dataset::new(rows, vec![]).unwrap()
}

/// Random dataset with `n / 4` rows per cell, `p` standard-normal
/// covariates and a clearly nonzero exposure double difference.
pub fn random_dataset(seed: u64, n: usize, p: usize) -> Dataset {
    let mut rng: StreamRng = stream(seed, 0);
    loop {
        let rows: Vec<Observation> = (0..n)
            .map(|i| {
                let (t, z) = (((i / 2) % 2) as u8, (i % 2) as u8);
                let x: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
                let pd = 0.3 + 0.4 * (t * z) as f64;
                let d = (rng.random::<f64>() < pd) as u8;
                let y = 1.0 + 2.0 * d as f64 + t as f64 - z as f64 + x.iter().sum::<f64>() + rng.random::<f64>();
                Observation::new(t, z, d, y, x)
            })
            .collect();
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        let data = Dataset::new(rows, names).unwrap();
        let ct = idid::cell_table(&data).unwrap();
        let varies = ct.cells().iter().all(|c| c.var_d > 0.0);
        if ct.delta_d().abs() > 0.1 && varies {
            return data;
        }
    }
}

pub fn map_rows(data: &Dataset, f: impl Fn(&Observation) -> Observation) -> Dataset {
    data.with_rows(data.rows().iter().map(f).collect())
}

pub fn flip_z(data: &Dataset) -> Dataset {
    map_rows(data, |r| Observation { z: 1 - r.z, ..r.clone() })
}

pub fn flip_t(data: &Dataset) -> Dataset {
    map_rows(data, |r| Observation { t: 1 - r.t, ..r.clone() })
}

pub fn affine_y(data: &Dataset, a: f64, b: f64) -> Dataset {
    map_rows(data, |r| Observation { y: a * r.y + b, ..r.clone() })
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
