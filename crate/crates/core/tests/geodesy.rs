use lazynav_core::geodesy::{central_meridian, to_utm, to_utm_in_zone, GeodeticPoint, Hemisphere};
use proptest::prelude::*;

fn p(lat: f64, lon: f64) -> GeodeticPoint {
    GeodeticPoint::new(lat, lon).unwrap()
}

/// Reference projections from PROJ (`+proj=utm +ellps=WGS84`).
const ORACLE: [(f64, f64, u8, f64, f64); 6] = [
    (43.782, -79.466, 17, 623437.1584462079, 4848803.996838923),
    (43.7, -80.2, 17, 564461.6838502333, 4838864.306181456),
    (45.0, -78.5, 17, 697038.3281571239, 4985991.017361618),
    (10.0, -83.9, 17, 182044.57230579603, 1106810.6571218483),
    (-33.8688, 151.2093, 56, 334368.633648097, 6250948.345385009),
    (78.2, 14.5, 33, 488585.82040648896, 8680738.602635877),
];

#[test]
fn matches_reference_projection() {
    for (lat, lon, zone, e, n) in ORACLE {
        let c = to_utm_in_zone(&p(lat, lon), zone).unwrap();
        assert!((c.easting - e).abs() < 0.01, "({lat}, {lon}) easting {} vs {e}", c.easting);
        assert!((c.northing - n).abs() < 0.01, "({lat}, {lon}) northing {} vs {n}", c.northing);
    }
}

#[test]
fn own_zone_matches_reference() {
    let c = to_utm(&p(-33.8688, 151.2093)).unwrap();
    assert_eq!((c.zone, c.hemisphere), (56, Hemisphere::South));
    assert_eq!(to_utm(&p(78.2, 14.5)).unwrap().zone, 33);
    assert_eq!(to_utm(&p(43.782, -79.466)).unwrap().zone, 17);
}

#[test]
fn equator_on_central_meridian() {
    let c = to_utm(&p(0.0, central_meridian(17))).unwrap();
    assert!((c.easting - 500_000.0).abs() < 1e-3);
    assert!(c.northing.abs() < 1e-3);
}

/// Vincenty inverse on WGS84, used as the geodesic-distance oracle.
fn geodesic_distance(a: &GeodeticPoint, b: &GeodeticPoint) -> f64 {
    let (aa, f) = (6_378_137.0f64, 1.0 / 298.257_223_563);
    let bb = aa * (1.0 - f);
    let l = (b.longitude - a.longitude).to_radians();
    let u1 = ((1.0 - f) * a.latitude.to_radians().tan()).atan();
    let u2 = ((1.0 - f) * b.latitude.to_radians().tan()).atan();
    let (s1, c1, s2, c2) = (u1.sin(), u1.cos(), u2.sin(), u2.cos());
    let mut lam = l;
    for _ in 0..200 {
        let (sl, cl) = (lam.sin(), lam.cos());
        let ss = ((c2 * sl).powi(2) + (c1 * s2 - s1 * c2 * cl).powi(2)).sqrt();
        let cs = s1 * s2 + c1 * c2 * cl;
        let sigma = ss.atan2(cs);
        let sa = c1 * c2 * sl / ss;
        let ca2 = 1.0 - sa * sa;
        let c2sm = if ca2 == 0.0 { 0.0 } else { cs - 2.0 * s1 * s2 / ca2 };
        let c = f / 16.0 * ca2 * (4.0 + f * (4.0 - 3.0 * ca2));
        let prev = lam;
        lam = l + (1.0 - c) * f * sa * (sigma + c * ss * (c2sm + c * cs * (-1.0 + 2.0 * c2sm * c2sm)));
        if (lam - prev).abs() < 1e-13 {
            let u2b = ca2 * (aa * aa - bb * bb) / (bb * bb);
            let ka = 1.0 + u2b / 16384.0 * (4096.0 + u2b * (-768.0 + u2b * (320.0 - 175.0 * u2b)));
            let kb = u2b / 1024.0 * (256.0 + u2b * (-128.0 + u2b * (74.0 - 47.0 * u2b)));
            let ds = kb
                * ss
                * (c2sm
                    + kb / 4.0
                        * (cs * (-1.0 + 2.0 * c2sm * c2sm)
                            - kb / 6.0 * c2sm * (-3.0 + 4.0 * ss * ss) * (-3.0 + 4.0 * c2sm * c2sm)));
            return bb * ka * (sigma - ds);
        }
    }
    panic!("geodesic did not converge");
}

fn projected_distance(a: &GeodeticPoint, b: &GeodeticPoint, zone: u8) -> f64 {
    let (ua, ub) = (to_utm_in_zone(a, zone).unwrap(), to_utm_in_zone(b, zone).unwrap());
    (ua.easting - ub.easting).hypot(ua.northing - ub.northing)
}

#[test]
fn hundred_metres_east_west_at_45() {
    // Longitude step that puts the two points 100 m apart on the ellipsoid.
    let a = p(45.0, -81.0);
    let mut dlon = 100.0 / 78_846.0;
    for _ in 0..20 {
        dlon *= 100.0 / geodesic_distance(&a, &p(45.0, -81.0 + dlon));
    }
    let b = p(45.0, -81.0 + dlon);
    assert!((geodesic_distance(&a, &b) - 100.0).abs() < 1e-6);
    assert!((projected_distance(&a, &b, 17) - 100.0).abs() < 0.05);
}

proptest! {
    #[test]
    fn easting_increases_with_longitude(lat in -79.0..83.0f64, zone in 1u8..=60, a in -2.9..2.9f64, d in 1e-6..0.1f64) {
        let lon = central_meridian(zone) + a;
        let lon2 = (lon + d).min(central_meridian(zone) + 3.0);
        prop_assume!(lon2 > lon && lon >= -180.0 && lon2 < 180.0);
        let e1 = to_utm_in_zone(&p(lat, lon), zone).unwrap().easting;
        let e2 = to_utm_in_zone(&p(lat, lon2), zone).unwrap().easting;
        prop_assert!(e2 > e1);
    }

    #[test]
    fn locally_isometric(lat in -75.0..80.0f64, a in -2.5..2.5f64, dn in -0.005..0.005f64, de in -0.005..0.005f64) {
        let zone = 17;
        let lon = central_meridian(zone) + a;
        let (pa, pb) = (p(lat, lon), p(lat + dn, lon + de));
        let g = geodesic_distance(&pa, &pb);
        prop_assume!(g > 1.0 && g < 1000.0);
        // Grid scale is 0.9996 on the central meridian and grows off it.
        let k = projected_distance(&pa, &pb, zone) / g;
        let x = (to_utm_in_zone(&pa, zone).unwrap().easting - 500_000.0) / 6_371_000.0;
        let k_expected = 0.9996 * (1.0 + x * x / 2.0);
        prop_assert!((k - 1.0).abs() < 1e-3, "scale {k}");
        prop_assert!((k / k_expected - 1.0).abs() < 1e-4, "scale {k} vs {k_expected}");
    }
}
