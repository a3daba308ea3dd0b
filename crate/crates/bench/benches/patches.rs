use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use parkspot_bench::{lot_image, spot_quad};
use parkspot_core::geometry::solve_homography;
use parkspot_core::imaging::extract_patch;
use parkspot_core::{BoundingBox, FixedSquare, Point, QuadPolygon, SpotGeometry};

fn homography(c: &mut Criterion) {
    let src = spot_quad();
    let dst = QuadPolygon::from_coords([(0.0, 0.0), (64.0, 0.0), (64.0, 96.0), (0.0, 96.0)]).unwrap();
    c.bench_function("solve homography", |b| b.iter(|| solve_homography(black_box(&src), &dst).unwrap()));
}

fn extraction(c: &mut Criterion) {
    let img = lot_image();
    let quad = spot_quad();
    let kinds = [
        ("polygon", SpotGeometry::Polygon(quad)),
        ("bbox", SpotGeometry::BBox(BoundingBox::new(Point::new(596.0, 300.0), Point::new(672.0, 402.0)).unwrap())),
        ("fixed", SpotGeometry::Fixed(FixedSquare::new(Point::new(634.0, 352.0), 32).unwrap())),
    ];
    let mut group = c.benchmark_group("extract patch 32x32");
    for (name, geometry) in &kinds {
        group.bench_function(*name, |b| b.iter(|| extract_patch(&img, black_box(geometry), 32).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, homography, extraction);
criterion_main!(benches);
